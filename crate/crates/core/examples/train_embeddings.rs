//! Skip-gram character embeddings with Jamo n-gram buckets, trained on a
//! segmented corpus (one sentence per line) or on the synthetic language.
//!
//!     cargo run --release --example train_embeddings -- [corpus.txt] [out.sgemb]

use std::path::PathBuf;

use segrt::embedding::{cosine, train_skipgram, EmbeddingTable, SkipGramConfig};
use segrt::synthetic::SyntheticData;
use segrt::textcore::{build_vocabulary, load_corpus, CharSequence};

fn main() {
    let mut args = std::env::args().skip(1);
    let corpus: Vec<CharSequence> = match args.next() {
        Some(path) => load_corpus(path.as_ref(), None)
            .expect("readable corpus")
            .map(|row| row.expect("valid line").0)
            .collect(),
        None => {
            let data = SyntheticData::generate(Default::default(), 3000, 0, 1);
            SyntheticData::labelled(&data.train)
                .into_iter()
                .map(|(c, _)| c)
                .collect()
        }
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "embeddings.sgemb".into()));

    let vocab = build_vocabulary(corpus.iter().map(|c| c.to_string()), 1).expect("non-empty corpus");
    let cfg = SkipGramConfig {
        subsample: 0.0,
        ..SkipGramConfig::default()
    };
    let (table, report) = train_skipgram(&corpus, &vocab, &cfg).expect("training");
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch={} loss={loss:.5}", i + 1);
    }
    println!(
        "objective {:.4} -> {:.4} over {} tokens",
        report.initial_objective, report.final_objective, report.tokens_seen
    );

    let probe = table.chars()[0];
    let v = table.lookup(probe);
    let mut near: Vec<(f32, char)> = table
        .chars()
        .iter()
        .filter(|&&c| c != probe)
        .map(|&c| (cosine(&v, &table.lookup(c)), c))
        .collect();
    near.sort_by(|a, b| b.0.total_cmp(&a.0));
    println!("nearest to {probe}: {:?}", &near[..near.len().min(5)]);

    table.save(&out).expect("writable output");
    let back = EmbeddingTable::load(&out, Some(table.dim())).expect("reload");
    assert_eq!(back, table);
    println!(
        "saved {} chars x {} dims to {}",
        table.len(),
        table.dim(),
        out.display()
    );
}
