//! Command-line front end. Data goes to stdout, diagnostics to stderr.
//! Exit codes: 0 success, 1 usage or data error, 2 internal failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::embedding::{train_skipgram, EmbeddingTable, SkipGramConfig};
use crate::evalkit::{compare_systems, MetricsAccumulator, RankSurvey};
use crate::segmenter::verify::{run_check, CHECKS};
use crate::segmenter::{train_model, InferenceConfig, ModelConfig, SegmenterModel, TrainConfig};
use crate::server::{export_feedback, serve, ServerConfig};
use crate::textcore::{build_vocabulary, despace, load_corpus, BoundaryLabels, CharSequence};

#[derive(Debug, Parser)]
#[command(name = "segrt", version, about = "Character-level word segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train character embeddings with subword skip-gram.
    TrainEmbeddings(TrainEmbeddingsArgs),
    /// Train a segmentation model on a space-segmented corpus.
    Train(TrainArgs),
    /// Insert spaces into each input line.
    Segment(SegmentArgs),
    /// Boundary metrics of predicted against gold segmentations.
    Eval(EvalArgs),
    /// System rank scores from a ranking survey.
    Rank(RankArgs),
    /// Compare analytic and numeric gradients of every layer kind.
    Gradcheck(GradcheckArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Turn a feedback log into a training corpus.
    ExportFeedback(ExportArgs),
}

#[derive(Debug, Args)]
pub struct TrainEmbeddingsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, default_value_t = 5)]
    pub negatives: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub subsample: f64,
    #[arg(long, default_value_t = 1)]
    pub min_count: u64,
    #[arg(long, default_value_t = 50_000)]
    pub buckets: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.0005)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Held-out corpus scored after every epoch.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Stop early once held-out F1 reaches this value.
    #[arg(long)]
    pub target_f1: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub l_max: usize,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Input file; stdin when absent.
    pub input: Option<PathBuf>,
    #[arg(long, env = "SEGRT_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "SEGRT_EMBEDDINGS")]
    pub embeddings: PathBuf,
    #[arg(long, env = "SEGRT_THRESHOLD", default_value_t = 0.5)]
    pub threshold: f32,
    #[arg(long, default_value_t = 30)]
    pub overlap: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// CSV with header `item,system,rank`.
    #[arg(long)]
    pub survey: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seeds to check; 0, 1 and 2 when absent.
    #[arg(long)]
    pub seed: Vec<u64>,
    /// Scale analytic gradients by this factor (checker self-test).
    #[arg(long, hide = true)]
    pub corrupt: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "SEGRT_MODEL")]
    pub model: Option<PathBuf>,
    #[arg(long, env = "SEGRT_EMBEDDINGS")]
    pub embeddings: Option<PathBuf>,
    #[arg(long, env = "SEGRT_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "SEGRT_THRESHOLD", default_value_t = 0.5)]
    pub threshold: f32,
    #[arg(long, env = "SEGRT_OVERLAP", default_value_t = 30)]
    pub overlap: usize,
    #[arg(long, env = "SEGRT_FEEDBACK_LOG", default_value = "feedback.jsonl")]
    pub feedback_log: PathBuf,
    #[arg(long, env = "SEGRT_MAX_CHARS", default_value_t = 10_000)]
    pub max_chars: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Output corpus; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_corpus(path: &Path) -> Result<Vec<(CharSequence, BoundaryLabels)>, CliError> {
    load_corpus(path, None)
        .map_err(data)?
        .collect::<Result<_, _>>()
        .map_err(data)
}

fn load_model(model: &Path, embeddings: &Path) -> Result<SegmenterModel, CliError> {
    let table = EmbeddingTable::load(embeddings, None).map_err(data)?;
    SegmenterModel::load(model, Arc::new(table)).map_err(data)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{rendered}");
                1
            } else {
                let _ = write!(stdout, "{rendered}");
                0
            };
        }
    };
    match execute(cli.command, stdin, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cmd: Command, stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let io = |e: std::io::Error| CliError::Data(format!("write failed: {e}"));
    match cmd {
        Command::TrainEmbeddings(a) => {
            let corpus: Vec<CharSequence> = read_corpus(&a.corpus)?.into_iter().map(|(c, _)| c).collect();
            let vocab = build_vocabulary(corpus.iter().map(|c| c.to_string()), a.min_count).map_err(data)?;
            let cfg = SkipGramConfig {
                dim: a.dim,
                window: a.window,
                negatives: a.negatives,
                epochs: a.epochs,
                learning_rate: a.lr,
                subsample: a.subsample,
                min_count: a.min_count,
                buckets: a.buckets,
                seed: a.seed,
                ..SkipGramConfig::default()
            };
            let (table, report) = train_skipgram(&corpus, &vocab, &cfg).map_err(data)?;
            for (i, loss) in report.epoch_losses.iter().enumerate() {
                writeln!(out, "epoch={} loss={loss:.6}", i + 1).map_err(io)?;
            }
            table.save(&a.out).map_err(data)?;
            writeln!(
                out,
                "chars={} tokens={} initial_objective={:.6} final_objective={:.6}",
                table.len(),
                report.tokens_seen,
                report.initial_objective,
                report.final_objective
            )
            .map_err(io)?;
        }
        Command::Train(a) => {
            if a.epochs == 0 {
                return Err(CliError::Data("--epochs must be at least 1".into()));
            }
            let table = EmbeddingTable::load(&a.embeddings, None).map_err(data)?;
            let config = ModelConfig {
                l_max: a.l_max,
                embed_dim: table.dim(),
                conv1_kernel: (3, table.dim()),
                ..ModelConfig::default()
            };
            let mut model = SegmenterModel::new(config, Arc::new(table), a.seed).map_err(data)?;
            let corpus = read_corpus(&a.corpus)?;
            let heldout = match &a.heldout {
                Some(p) => read_corpus(p)?,
                None => Vec::new(),
            };
            let tc = TrainConfig {
                batch_size: a.batch,
                learning_rate: a.lr,
                epochs: a.epochs,
                seed: a.seed,
                target_f1: a.target_f1,
            };
            let mut write_err = None;
            let report = train_model(&mut model, corpus, &heldout, &tc, |e| {
                let mut line = format!("epoch={} loss={:.6}", e.epoch, e.loss);
                if let Some(m) = &e.heldout {
                    line += &format!(" f1={:.4} precision={:.4} recall={:.4}", m.f1, m.precision, m.recall);
                }
                line += &format!(" seconds={:.1}", e.seconds);
                if let Err(e) = writeln!(out, "{line}") {
                    write_err.get_or_insert(e);
                }
            })
            .map_err(data)?;
            if let Some(e) = write_err {
                return Err(io(e));
            }
            model.save(&a.out).map_err(data)?;
            let hash = hex::encode(Sha256::digest(model.to_bytes()));
            writeln!(
                out,
                "examples={} skipped_long={} skipped_short={} model_sha256={hash}",
                report.examples, report.skipped_long, report.skipped_short
            )
            .map_err(io)?;
        }
        Command::Segment(a) => {
            let model = load_model(&a.model, &a.embeddings)?;
            let l_max = model.config().l_max;
            let cfg = InferenceConfig {
                threshold: a.threshold,
                overlap: a.overlap,
                l_max,
            };
            cfg.validate().map_err(data)?;
            let mut file;
            let input: &mut dyn BufRead = match &a.input {
                Some(p) => {
                    file = open(p)?;
                    &mut file
                }
                None => stdin,
            };
            let mut buf = Vec::new();
            let mut line_no = 0;
            loop {
                buf.clear();
                if input.read_until(b'\n', &mut buf).map_err(data)? == 0 {
                    break;
                }
                line_no += 1;
                let text = std::str::from_utf8(&buf)
                    .map_err(|e| CliError::Data(format!("line {line_no}: invalid UTF-8: {e}")))?;
                let segmented = model.segment(text, &cfg).map_err(data)?;
                writeln!(out, "{segmented}").map_err(io)?;
            }
        }
        Command::Eval(a) => {
            let pred = open(&a.pred)?.lines();
            let mut gold = open(&a.gold)?.lines();
            let mut acc = MetricsAccumulator::default();
            let mut line_no = 0;
            for p in pred {
                line_no += 1;
                let p = p.map_err(|e| CliError::Data(format!("{} line {line_no}: {e}", a.pred.display())))?;
                let g = gold
                    .next()
                    .ok_or_else(|| CliError::Data(format!("gold file ends before line {line_no}")))?
                    .map_err(|e| CliError::Data(format!("{} line {line_no}: {e}", a.gold.display())))?;
                let (pc, pl) = despace(&p);
                let (gc, gl) = despace(&g);
                if pc != gc {
                    return Err(CliError::Data(format!(
                        "line {line_no}: prediction and gold differ in characters"
                    )));
                }
                acc.add(&pl, &gl)
                    .map_err(|e| CliError::Data(format!("line {line_no}: {e}")))?;
            }
            if gold.next().is_some() {
                return Err(CliError::Data(format!("gold file has more than {line_no} lines")));
            }
            let m = acc.finish();
            writeln!(
                out,
                "sentences={line_no} tp={} fp={} fn={} precision={:.6} recall={:.6} f1={:.6} word_accuracy={:.6} exact_match={:.6}",
                m.true_positives, m.false_positives, m.false_negatives, m.precision, m.recall, m.f1, m.word_accuracy, m.exact_match
            )
            .map_err(io)?;
        }
        Command::Rank(a) => {
            let survey = RankSurvey::from_csv(open(&a.survey)?).map_err(data)?;
            let report = compare_systems(&survey).map_err(data)?;
            write!(out, "{}", report.to_key_value()).map_err(io)?;
        }
        Command::Gradcheck(a) => {
            let seeds = if a.seed.is_empty() { vec![0, 1, 2] } else { a.seed };
            let mut failed = 0;
            for seed in seeds {
                for &(name, tol) in &CHECKS {
                    let r = run_check(name, tol, seed, a.corrupt);
                    writeln!(
                        out,
                        "layer={name} seed={seed} max_rel_error={:.3e} tolerance={tol:.0e} checked={} skipped_kinks={} result={}",
                        r.report.max_rel_error,
                        r.report.checked,
                        r.report.skipped_kinks,
                        if r.passed() { "pass" } else { "fail" }
                    )
                    .map_err(io)?;
                    failed += usize::from(!r.passed());
                }
            }
            if failed > 0 {
                return Err(CliError::Internal(format!("{failed} gradient checks failed")));
            }
        }
        Command::Serve(a) => {
            let config = ServerConfig {
                model: a.model,
                embeddings: a.embeddings,
                port: a.port,
                threshold: a.threshold,
                overlap: a.overlap,
                feedback_log: a.feedback_log,
                max_chars: a.max_chars,
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
            runtime.block_on(serve(config)).map_err(data)?;
        }
        Command::ExportFeedback(a) => {
            let report = match &a.out {
                Some(p) => {
                    let mut f = create(p)?;
                    let r = export_feedback(&a.log, &mut f).map_err(data)?;
                    f.sync_all().map_err(io)?;
                    r
                }
                None => export_feedback(&a.log, out).map_err(data)?,
            };
            writeln!(
                err,
                "exported={} corrupt={} empty={}",
                report.exported, report.corrupt, report.empty
            )
            .map_err(io)?;
        }
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str], stdin: &str) -> (i32, String, String) {
        let mut input = stdin.as_bytes();
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            std::iter::once("segrt").chain(args.iter().copied()),
            &mut input,
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_capture(&[], "").0, 1);
        assert_eq!(run_capture(&["bogus"], "").0, 1);
        assert_eq!(run_capture(&["eval", "--pred", "x"], "").0, 1);
    }

    #[test]
    fn help_goes_to_stdout() {
        let (code, out, _) = run_capture(&["--help"], "");
        assert_eq!(code, 0);
        for cmd in [
            "train-embeddings",
            "train",
            "segment",
            "eval",
            "rank",
            "gradcheck",
            "serve",
            "export-feedback",
        ] {
            assert!(out.contains(cmd), "{cmd} missing from help");
        }
    }

    #[test]
    fn eval_reports_and_checks_lines() {
        let dir = tempfile::tempdir().unwrap();
        let gold = dir.path().join("gold.txt");
        let pred = dir.path().join("pred.txt");
        std::fs::write(&gold, "ab cd\nx y z\n").unwrap();
        std::fs::write(&pred, "ab cd\nx y z\n").unwrap();
        let (code, out, _) = run_capture(
            &[
                "eval",
                "--pred",
                pred.to_str().unwrap(),
                "--gold",
                gold.to_str().unwrap(),
            ],
            "",
        );
        assert_eq!(code, 0);
        assert!(out.contains("f1=1.000000"), "{out}");

        std::fs::write(&pred, "ab cd\nx y q\n").unwrap();
        let (code, _, err) = run_capture(
            &[
                "eval",
                "--pred",
                pred.to_str().unwrap(),
                "--gold",
                gold.to_str().unwrap(),
            ],
            "",
        );
        assert_eq!(code, 1);
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn rank_empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let survey = dir.path().join("s.csv");
        std::fs::write(&survey, "").unwrap();
        let (code, _, err) = run_capture(&["rank", "--survey", survey.to_str().unwrap()], "");
        assert_eq!(code, 1, "{err}");
    }

    #[test]
    fn train_rejects_zero_epochs() {
        let (code, _, err) = run_capture(
            &[
                "train",
                "--corpus",
                "c",
                "--embeddings",
                "e",
                "--out",
                "o",
                "--epochs",
                "0",
            ],
            "",
        );
        assert_eq!(code, 1);
        assert!(err.contains("epochs"), "{err}");
    }
}
