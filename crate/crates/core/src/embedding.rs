//! Character embeddings trained with skip-gram and negative sampling, with
//! hashed Jamo n-gram buckets so that unseen Hangul syllables still get a
//! vector composed from their parts.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::textcore::{decompose_jamo, CharSequence, Vocabulary};

pub const DEFAULT_DIM: usize = 100;
const BUCKET_MAGIC: &[u8; 6] = b"SGEMB\x01";

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("invalid skip-gram configuration: {0}")]
    Config(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("vector became non-finite during epoch {0}")]
    NonFinite(usize),
    #[error("{path}: line {line}: {reason}")]
    Format { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {reason}")]
    Companion { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Skip-gram training parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Frequent-token subsampling threshold; 0 disables subsampling.
    pub subsample: f64,
    pub min_count: u64,
    pub buckets: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            subsample: 1e-4,
            min_count: 1,
            buckets: 50_000,
            ngram_min: 2,
            ngram_max: 3,
            seed: 0,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let fail = |m: &str| Err(EmbeddingError::Config(m.to_string()));
        if self.window < 1 {
            return fail("window must be >= 1");
        }
        if self.negatives < 1 {
            return fail("negatives must be >= 1");
        }
        if self.epochs < 1 {
            return fail("epochs must be >= 1");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return fail("learning rate must be > 0");
        }
        if self.dim == 0 || self.min_count == 0 {
            return fail("dim and min_count must be positive");
        }
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return fail("n-gram range must satisfy 1 <= min <= max");
        }
        Ok(())
    }
}

/// Subword keys of a character. Hangul syllables yield the Jamo n-grams of
/// `< lead vowel [trail] >` for n in `[n_min, n_max]`; anything else yields
/// the character itself.
pub fn char_keys(c: char, n_min: usize, n_max: usize) -> Vec<String> {
    let Some(jamo) = decompose_jamo(c) else {
        return vec![c.to_string()];
    };
    let (lead, vowel, trail) = jamo.conjoining();
    let mut symbols = vec!['<', lead, vowel];
    symbols.extend(trail);
    symbols.push('>');
    let mut keys = Vec::new();
    for n in n_min..=n_max.min(symbols.len()) {
        for window in symbols.windows(n) {
            keys.push(window.iter().collect());
        }
    }
    keys
}

/// Seeded 64-bit FNV-1a of `key`, reduced modulo `buckets`.
pub fn bucket_of(key: &str, seed: u64, buckets: usize) -> usize {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().into_iter().chain(key.bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    (h % buckets as u64) as usize
}

/// Character vectors plus a dense table of subword bucket vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    chars: Vec<char>,
    index: HashMap<char, usize>,
    char_vectors: Vec<f32>,
    bucket_vectors: Vec<f32>,
    buckets: usize,
    ngram_min: usize,
    ngram_max: usize,
    seed: u64,
}

impl EmbeddingTable {
    /// Table with the given characters, all vectors zero.
    pub fn zeros(dim: usize, chars: Vec<char>, buckets: usize, ngram_min: usize, ngram_max: usize, seed: u64) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Self {
            dim,
            char_vectors: vec![0.0; chars.len() * dim],
            chars,
            index,
            bucket_vectors: vec![0.0; buckets * dim],
            buckets,
            ngram_min,
            ngram_max,
            seed,
        }
    }

    /// Table with uniformly random vectors in `±bound`; handy for tests and
    /// untrained models.
    pub fn random(dim: usize, chars: Vec<char>, buckets: usize, bound: f32, seed: u64) -> Self {
        let mut t = Self::zeros(dim, chars, buckets, 2, 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in t.char_vectors.iter_mut().chain(t.bucket_vectors.iter_mut()) {
            *v = rng.random_range(-bound..=bound);
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ngram_range(&self) -> (usize, usize) {
        (self.ngram_min, self.ngram_max)
    }

    pub fn char_vector(&self, c: char) -> Option<&[f32]> {
        self.index
            .get(&c)
            .map(|&i| &self.char_vectors[i * self.dim..(i + 1) * self.dim])
    }

    pub fn bucket_vector(&self, bucket: usize) -> &[f32] {
        &self.bucket_vectors[bucket * self.dim..(bucket + 1) * self.dim]
    }

    /// Bucket ids of `c`'s subword keys.
    pub fn buckets_of(&self, c: char) -> Vec<usize> {
        if self.buckets == 0 {
            return Vec::new();
        }
        char_keys(c, self.ngram_min, self.ngram_max)
            .iter()
            .map(|k| bucket_of(k, self.seed, self.buckets))
            .collect()
    }

    /// Mean of the character vector (when known) and all of its subword
    /// bucket vectors; zero when neither exists.
    pub fn lookup(&self, c: char) -> Vec<f32> {
        let mut out = vec![0.0; self.dim];
        self.lookup_into(c, &mut out);
        out
    }

    pub fn lookup_into(&self, c: char, out: &mut [f32]) {
        assert_eq!(out.len(), self.dim, "lookup buffer has wrong width");
        out.fill(0.0);
        let mut parts = 0usize;
        if let Some(v) = self.char_vector(c) {
            out.copy_from_slice(v);
            parts += 1;
        }
        for b in self.buckets_of(c) {
            for (o, &x) in out.iter_mut().zip(self.bucket_vector(b)) {
                *o += x;
            }
            parts += 1;
        }
        if parts > 1 {
            let inv = 1.0 / parts as f32;
            out.iter_mut().for_each(|x| *x *= inv);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.char_vectors
            .iter()
            .chain(&self.bucket_vectors)
            .all(|x| x.is_finite())
    }

    /// Companion file holding buckets and hash parameters: `<path>.sgemb`.
    pub fn companion_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".sgemb");
        PathBuf::from(p)
    }

    /// Writes the character vectors as text and the bucket table to the
    /// companion binary file.
    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        let io_err = |p: &Path| {
            let p = p.to_path_buf();
            move |source| EmbeddingError::Io { path: p, source }
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
        writeln!(w, "{} {}", self.chars.len(), self.dim).map_err(io_err(path))?;
        for (i, c) in self.chars.iter().enumerate() {
            write!(w, "{c}").map_err(io_err(path))?;
            for x in &self.char_vectors[i * self.dim..(i + 1) * self.dim] {
                write!(w, " {x}").map_err(io_err(path))?;
            }
            writeln!(w).map_err(io_err(path))?;
        }
        w.flush().map_err(io_err(path))?;

        let cpath = Self::companion_path(path);
        let mut w = BufWriter::new(File::create(&cpath).map_err(io_err(&cpath))?);
        let mut header = Vec::with_capacity(32);
        header.extend_from_slice(BUCKET_MAGIC);
        for v in [self.dim, self.buckets, self.ngram_min, self.ngram_max] {
            header.extend_from_slice(&(v as u32).to_le_bytes());
        }
        header.extend_from_slice(&self.seed.to_le_bytes());
        w.write_all(&header).map_err(io_err(&cpath))?;
        for x in &self.bucket_vectors {
            w.write_all(&x.to_le_bytes()).map_err(io_err(&cpath))?;
        }
        w.flush().map_err(io_err(&cpath))
    }

    /// Loads a table written by [`EmbeddingTable::save`]. When
    /// `expected_dim` is given, a different stored dimension is an error.
    pub fn load(path: &Path, expected_dim: Option<usize>) -> Result<Self, EmbeddingError> {
        let bad = |line: usize, reason: String| EmbeddingError::Format {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let file = File::open(path).map_err(|source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| bad(1, e.to_string()))?
            .ok_or_else(|| bad(1, "missing header".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [count, dim] = fields[..] else {
            return Err(bad(1, format!("header {header:?} is not \"<count> <dim>\"")));
        };
        let count: usize = count.parse().map_err(|_| bad(1, format!("bad count {count:?}")))?;
        let dim: usize = dim.parse().map_err(|_| bad(1, format!("bad dimension {dim:?}")))?;
        if let Some(expected) = expected_dim {
            if dim != expected {
                return Err(bad(1, format!("dimension {dim} does not match expected {expected}")));
            }
        }
        let mut chars = Vec::with_capacity(count);
        let mut char_vectors = Vec::with_capacity(count * dim);
        for row in 0..count {
            let lineno = row + 2;
            let line = lines
                .next()
                .transpose()
                .map_err(|e| bad(lineno, e.to_string()))?
                .ok_or_else(|| bad(lineno, format!("row {} missing (header promised {count})", row + 1)))?;
            let mut it = line.chars();
            let c = it
                .next()
                .ok_or_else(|| bad(lineno, format!("row {} is empty", row + 1)))?;
            let values: Vec<&str> = it.as_str().split(' ').skip(1).collect();
            if !it.as_str().starts_with(' ') || values.len() != dim {
                return Err(bad(
                    lineno,
                    format!("row {} ({c:?}) has {} values, expected {dim}", row + 1, values.len()),
                ));
            }
            for v in values {
                let x: f32 = v
                    .parse()
                    .map_err(|_| bad(lineno, format!("row {} has malformed value {v:?}", row + 1)))?;
                char_vectors.push(x);
            }
            chars.push(c);
        }
        if let Some(extra) = lines.next() {
            if extra.is_ok_and(|l| !l.trim().is_empty()) {
                return Err(bad(count + 2, format!("more rows than the header's {count}")));
            }
        }

        let cpath = Self::companion_path(path);
        let companion_err = |reason: String| EmbeddingError::Companion {
            path: cpath.clone(),
            reason,
        };
        let mut bytes = Vec::new();
        File::open(&cpath)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| EmbeddingError::Io {
                path: cpath.clone(),
                source,
            })?;
        if bytes.len() < 30 || &bytes[..6] != BUCKET_MAGIC {
            return Err(companion_err("missing SGEMB magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        let (bdim, buckets, ngram_min, ngram_max) = (u32_at(6), u32_at(10), u32_at(14), u32_at(18));
        let seed = u64::from_le_bytes(bytes[22..30].try_into().expect("8 bytes"));
        if bdim != dim {
            return Err(companion_err(format!(
                "bucket dimension {bdim} differs from vector dimension {dim}"
            )));
        }
        let body = &bytes[30..];
        if body.len() != buckets * dim * 4 {
            return Err(companion_err(format!(
                "expected {} bucket bytes, found {}",
                buckets * dim * 4,
                body.len()
            )));
        }
        let bucket_vectors = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Ok(Self {
            dim,
            chars,
            index,
            char_vectors,
            bucket_vectors,
            buckets,
            ngram_min,
            ngram_max,
            seed,
        })
    }
}

/// Loss statistics from a skip-gram run.
pub const STEP_TRACE_LIMIT: usize = 10_000;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SkipGramReport {
    /// Negative-sampling loss of the first [`STEP_TRACE_LIMIT`] updates,
    /// measured before each update.
    pub step_losses: Vec<f64>,
    /// Mean update loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub updates: u64,
    /// Objective over (a sample of) the corpus before and after training,
    /// scored against a fixed set of negatives.
    pub initial_objective: f64,
    pub final_objective: f64,
    pub tokens_seen: u64,
}

struct Trainer<'a> {
    cfg: &'a SkipGramConfig,
    table: EmbeddingTable,
    output: Vec<f32>,
    /// input components (char row or bucket row) per vocabulary index
    inputs: Vec<Vec<usize>>,
    cumulative: Vec<f64>,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl Trainer<'_> {
    fn hidden(&self, center: usize, h: &mut [f32]) {
        let dim = self.table.dim;
        h.fill(0.0);
        let parts = &self.inputs[center];
        for &p in parts {
            let row = if p < self.table.chars.len() {
                &self.table.char_vectors[p * dim..(p + 1) * dim]
            } else {
                let b = p - self.table.chars.len();
                &self.table.bucket_vectors[b * dim..(b + 1) * dim]
            };
            h.iter_mut().zip(row).for_each(|(a, &x)| *a += x);
        }
        let inv = 1.0 / parts.len() as f32;
        h.iter_mut().for_each(|x| *x *= inv);
    }

    fn sample_negative(&self, rng: &mut ChaCha8Rng, target: usize) -> Option<usize> {
        if self.cumulative.len() < 2 {
            return None;
        }
        let total = *self.cumulative.last().expect("non-empty");
        loop {
            let u = rng.random::<f64>() * total;
            let idx = self
                .cumulative
                .partition_point(|&c| c <= u)
                .min(self.cumulative.len() - 1);
            if idx != target {
                return Some(idx);
            }
        }
    }

    fn pair_loss(&self, h: &[f32], target: usize, negatives: &[usize]) -> f64 {
        let dim = self.table.dim;
        let score = |t: usize| {
            let row = &self.output[t * dim..(t + 1) * dim];
            h.iter().zip(row).map(|(a, b)| a * b).sum::<f32>()
        };
        let mut loss = -(f64::from(sigmoid(score(target))).max(1e-12)).ln();
        for &n in negatives {
            loss -= f64::from(sigmoid(-score(n))).max(1e-12).ln();
        }
        loss
    }

    /// One positive pair plus sampled negatives. Returns the pre-update loss.
    fn update(
        &mut self,
        center: usize,
        target: usize,
        lr: f32,
        rng: &mut ChaCha8Rng,
        h: &mut [f32],
        grad: &mut [f32],
    ) -> f64 {
        let dim = self.table.dim;
        self.hidden(center, h);
        let negatives: Vec<usize> = (0..self.cfg.negatives)
            .filter_map(|_| self.sample_negative(rng, target))
            .collect();
        let loss = self.pair_loss(h, target, &negatives);
        grad.fill(0.0);
        for (t, label) in std::iter::once((target, 1.0f32)).chain(negatives.iter().map(|&n| (n, 0.0))) {
            let row = &mut self.output[t * dim..(t + 1) * dim];
            let s: f32 = h.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
            let g = lr * (label - sigmoid(s));
            for k in 0..dim {
                grad[k] += g * row[k];
                row[k] += g * h[k];
            }
        }
        let parts = &self.inputs[center];
        let share = 1.0 / parts.len() as f32;
        let n_chars = self.table.chars.len();
        for &p in parts {
            let row = if p < n_chars {
                &mut self.table.char_vectors[p * dim..(p + 1) * dim]
            } else {
                let b = p - n_chars;
                &mut self.table.bucket_vectors[b * dim..(b + 1) * dim]
            };
            row.iter_mut().zip(grad.iter()).for_each(|(x, &g)| *x += g * share);
        }
        loss
    }

    fn objective(&self, sentences: &[Vec<usize>], seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = vec![0.0; self.table.dim];
        let (mut total, mut pairs) = (0.0, 0usize);
        for s in sentences.iter().take(1000) {
            for (i, &center) in s.iter().enumerate() {
                let lo = i.saturating_sub(self.cfg.window);
                let hi = (i + self.cfg.window + 1).min(s.len());
                for (j, &ctx) in s.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    self.hidden(center, &mut h);
                    let negatives: Vec<usize> = (0..self.cfg.negatives)
                        .filter_map(|_| self.sample_negative(&mut rng, ctx))
                        .collect();
                    total += self.pair_loss(&h, ctx, &negatives);
                    pairs += 1;
                }
            }
        }
        if pairs == 0 {
            0.0
        } else {
            total / pairs as f64
        }
    }
}

/// Trains character embeddings over de-spaced sentences. Characters missing
/// from `vocab` are skipped; the output is fully determined by the
/// configuration seed.
pub fn train_skipgram<'a, I>(
    corpus: I,
    vocab: &Vocabulary,
    cfg: &SkipGramConfig,
) -> Result<(EmbeddingTable, SkipGramReport), EmbeddingError>
where
    I: IntoIterator<Item = &'a CharSequence>,
{
    cfg.validate()?;
    let chars: Vec<char> = vocab.entries().map(|(c, _, _)| c).collect();
    let local: HashMap<char, usize> = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let sentences: Vec<Vec<usize>> = corpus
        .into_iter()
        .map(|s| {
            s.chars()
                .iter()
                .filter_map(|c| local.get(c).copied())
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect();
    if sentences.is_empty() || chars.is_empty() {
        return Err(EmbeddingError::EmptyCorpus);
    }

    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut table = EmbeddingTable::zeros(dim, chars.clone(), cfg.buckets, cfg.ngram_min, cfg.ngram_max, cfg.seed);
    let bound = 1.0 / dim as f32;
    for v in table.char_vectors.iter_mut().chain(table.bucket_vectors.iter_mut()) {
        *v = rng.random_range(-bound..=bound);
    }
    let inputs = chars
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            std::iter::once(i)
                .chain(table.buckets_of(c).into_iter().map(|b| chars.len() + b))
                .collect()
        })
        .collect();
    let counts: Vec<u64> = chars.iter().map(|&c| vocab.count(c)).collect();
    let total_count: u64 = counts.iter().sum();
    let mut acc = 0.0;
    let cumulative = counts
        .iter()
        .map(|&n| {
            acc += (n as f64).powf(0.75);
            acc
        })
        .collect();
    let keep_prob: Vec<f64> = counts
        .iter()
        .map(|&n| {
            if cfg.subsample <= 0.0 {
                return 1.0;
            }
            let f = n as f64 / total_count as f64;
            ((cfg.subsample / f).sqrt() + cfg.subsample / f).min(1.0)
        })
        .collect();

    let mut trainer = Trainer {
        cfg,
        table,
        output: vec![0.0; chars.len() * dim],
        inputs,
        cumulative,
    };
    let objective_seed = cfg.seed ^ 0x5eed_0b1e;
    let mut report = SkipGramReport {
        initial_objective: trainer.objective(&sentences, objective_seed),
        ..SkipGramReport::default()
    };

    let corpus_tokens: u64 = sentences.iter().map(|s| s.len() as u64).sum();
    let planned = (corpus_tokens * cfg.epochs as u64) as f64;
    let mut processed = 0u64;
    let mut h = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut kept = Vec::new();
    for epoch in 0..cfg.epochs {
        let (mut epoch_loss, mut epoch_updates) = (0.0, 0u64);
        for s in &sentences {
            kept.clear();
            kept.extend(s.iter().copied().filter(|&t| rng.random::<f64>() < keep_prob[t]));
            for i in 0..kept.len() {
                let lr = (cfg.learning_rate * (1.0 - processed as f64 / planned)).max(0.0) as f32;
                let b = rng.random_range(1..=cfg.window);
                let lo = i.saturating_sub(b);
                let hi = (i + b + 1).min(kept.len());
                for j in lo..hi {
                    if j != i {
                        let loss = trainer.update(kept[i], kept[j], lr, &mut rng, &mut h, &mut grad);
                        if report.step_losses.len() < STEP_TRACE_LIMIT {
                            report.step_losses.push(loss);
                        }
                        epoch_loss += loss;
                        epoch_updates += 1;
                    }
                }
            }
            processed += s.len() as u64;
        }
        if !trainer.table.all_finite() || !trainer.output.iter().all(|x| x.is_finite()) {
            return Err(EmbeddingError::NonFinite(epoch + 1));
        }
        report.updates += epoch_updates;
        report.epoch_losses.push(epoch_loss / epoch_updates.max(1) as f64);
    }
    report.tokens_seen = processed;
    report.final_objective = trainer.objective(&sentences, objective_seed);
    Ok((trainer.table, report))
}

pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textcore::build_vocabulary;

    /// Independent enumeration: every contiguous run of length n over the
    /// boundary-marked symbol list, written out by hand for '값'.
    #[test]
    fn hangul_keys_enumerate_jamo_ngrams() {
        // 값 = ㄱ (lead 0) + ㅏ (vowel 0) + ㅄ (trail 18)
        let (l, v, t) = ('\u{1100}', '\u{1161}', '\u{11B9}');
        let expected: Vec<String> = vec![
            ['<', l].iter().collect(),
            [l, v].iter().collect(),
            [v, t].iter().collect(),
            [t, '>'].iter().collect(),
            ['<', l, v].iter().collect(),
            [l, v, t].iter().collect(),
            [v, t, '>'].iter().collect(),
        ];
        assert_eq!(char_keys('값', 2, 3), expected);
        // No trailing consonant: 4 symbols -> 3 bigrams + 2 trigrams.
        assert_eq!(char_keys('가', 2, 3).len(), 5);
    }

    #[test]
    fn non_hangul_keys() {
        assert_eq!(char_keys('a', 2, 3), vec!["a".to_string()]);
        assert_eq!(char_keys('ㄱ', 2, 3), vec!["ㄱ".to_string()]);
    }

    #[test]
    fn bucket_ids_are_deterministic() {
        let t1 = EmbeddingTable::zeros(4, vec![], 1000, 2, 3, 42);
        let t2 = EmbeddingTable::zeros(4, vec![], 1000, 2, 3, 42);
        assert_eq!(t1.buckets_of('값'), t2.buckets_of('값'));
        assert!(t1.buckets_of('값').iter().all(|&b| b < 1000));
        let t3 = EmbeddingTable::zeros(4, vec![], 1000, 2, 3, 43);
        assert_ne!(t1.buckets_of('값'), t3.buckets_of('값'));
    }

    #[test]
    fn lookup_is_mean_of_parts() {
        let table = EmbeddingTable::random(8, vec!['값', 'a'], 64, 1.0, 3);
        let buckets = table.buckets_of('값');
        let mut expected = table.char_vector('값').unwrap().to_vec();
        for &b in &buckets {
            expected
                .iter_mut()
                .zip(table.bucket_vector(b))
                .for_each(|(e, x)| *e += x);
        }
        let k = buckets.len() as f32 + 1.0;
        let got = table.lookup('값');
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e / k).abs() < 1e-6);
        }
        // OOV Hangul: buckets only.
        let oov = table.lookup('힣');
        assert!(oov.iter().any(|&x| x != 0.0));
        // OOV non-Hangul: exactly its single bucket vector.
        let z = table.lookup('z');
        assert_eq!(z, table.bucket_vector(table.buckets_of('z')[0]));
        // No buckets, not in vocabulary: zero.
        let empty = EmbeddingTable::zeros(8, vec![], 0, 2, 3, 0);
        assert_eq!(empty.lookup('z'), vec![0.0; 8]);
    }

    fn small_cfg(seed: u64) -> SkipGramConfig {
        SkipGramConfig {
            dim: 16,
            window: 2,
            negatives: 3,
            epochs: 3,
            subsample: 0.0,
            buckets: 200,
            seed,
            ..SkipGramConfig::default()
        }
    }

    fn seqs(lines: &[&str]) -> Vec<CharSequence> {
        lines.iter().map(|l| crate::textcore::despace(l).0).collect()
    }

    #[test]
    fn single_sentence_objective_decreases() {
        let corpus = seqs(&["ab"]);
        let vocab = build_vocabulary(["ab"], 1).unwrap();
        let cfg = SkipGramConfig {
            window: 1,
            epochs: 1,
            subsample: 0.0,
            learning_rate: 0.5,
            ..small_cfg(1)
        };
        let (_, report) = train_skipgram(&corpus, &vocab, &cfg).unwrap();
        assert_eq!(report.step_losses.len(), 2);
        assert_eq!((report.updates, report.epoch_losses.len()), (2, 1));
        assert!(report.final_objective < report.initial_objective, "{report:?}");
    }

    #[test]
    fn rejects_bad_config_and_empty_corpus() {
        let vocab = build_vocabulary(["ab"], 1).unwrap();
        let corpus = seqs(&["ab"]);
        let zero_epochs = SkipGramConfig {
            epochs: 0,
            ..small_cfg(0)
        };
        assert!(matches!(
            train_skipgram(&corpus, &vocab, &zero_epochs),
            Err(EmbeddingError::Config(_))
        ));
        assert!(matches!(
            train_skipgram(&Vec::<CharSequence>::new(), &vocab, &small_cfg(0)),
            Err(EmbeddingError::EmptyCorpus)
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let lines = ["가나 다라", "마바 사", "가나 사 다라"];
        let corpus = seqs(&lines);
        let vocab = build_vocabulary(lines, 1).unwrap();
        let (a, ra) = train_skipgram(&corpus, &vocab, &small_cfg(9)).unwrap();
        let (b, rb) = train_skipgram(&corpus, &vocab, &small_cfg(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(a.all_finite());
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chars.vec");
        let lines = ["아버지 친구분", "당선 되셨어요", "ab c"];
        let corpus = seqs(&lines);
        let vocab = build_vocabulary(lines, 1).unwrap();
        let (table, _) = train_skipgram(&corpus, &vocab, &small_cfg(5)).unwrap();
        table.save(&path).unwrap();
        let loaded = EmbeddingTable::load(&path, Some(16)).unwrap();
        assert_eq!(loaded, table);
        for c in table.chars().iter().copied().chain(['힣', 'q']) {
            let (x, y) = (table.lookup(c), loaded.lookup(c));
            assert!(x.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert!(matches!(
            EmbeddingTable::load(&path, Some(100)),
            Err(EmbeddingError::Format { line: 1, .. })
        ));
    }

    #[test]
    fn empty_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.vec");
        let table = EmbeddingTable::zeros(100, vec![], 0, 2, 3, 0);
        table.save(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "0 100\n");
        assert_eq!(EmbeddingTable::load(&path, Some(100)).unwrap(), table);
    }

    #[test]
    fn short_row_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.vec");
        let table = EmbeddingTable::random(100, vec!['a', 'b', 'c'], 0, 0.5, 1);
        table.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let row: Vec<&str> = lines[2].rsplitn(2, ' ').collect();
        lines[2] = row[1].to_string();
        std::fs::write(&path, lines.join("\n")).unwrap();
        match EmbeddingTable::load(&path, None) {
            Err(EmbeddingError::Format { line, reason, .. }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("row 2") && reason.contains("99 values"), "{reason}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn companion_magic_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vec");
        EmbeddingTable::random(4, vec!['a'], 3, 0.5, 1).save(&path).unwrap();
        let cpath = EmbeddingTable::companion_path(&path);
        let bytes = std::fs::read(&cpath).unwrap();
        assert_eq!(&bytes[..6], b"SGEMB\x01");
        assert_eq!(bytes.len(), 30 + 3 * 4 * 4);
        std::fs::write(&cpath, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(
            EmbeddingTable::load(&path, None),
            Err(EmbeddingError::Companion { .. })
        ));
    }
}
