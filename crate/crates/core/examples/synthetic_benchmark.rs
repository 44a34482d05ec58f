//! End-to-end run on the synthetic language: skip-gram embeddings, then the
//! segmenter with the default architecture, reporting held-out F1 per epoch.
//!
//!     cargo run --release --example synthetic_benchmark -- [seed] [epochs]

use std::sync::Arc;

use segrt::embedding::{train_skipgram, SkipGramConfig};
use segrt::segmenter::{train_model, ModelConfig, SegmenterModel, TrainConfig};
use segrt::synthetic::SyntheticData;
use segrt::textcore::build_vocabulary;

fn main() {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<u64>().expect("numeric argument"));
    let seed = args.next().unwrap_or(0);
    let epochs = args.next().unwrap_or(10) as usize;

    let data = SyntheticData::standard(seed);
    let train = SyntheticData::labelled(&data.train);
    let test = SyntheticData::labelled(&data.test);

    let started = std::time::Instant::now();
    let vocab = build_vocabulary(train.iter().map(|(c, _)| c.to_string()), 1).expect("non-empty corpus");
    // Every letter of a 30-symbol alphabet is far above any subsampling
    // threshold; subsampling would discard almost the whole corpus.
    let sg = SkipGramConfig {
        subsample: 0.0,
        seed,
        ..SkipGramConfig::default()
    };
    let (table, _) = train_skipgram(train.iter().map(|(c, _)| c), &vocab, &sg).expect("embedding training");
    println!("embeddings_seconds={:.1}", started.elapsed().as_secs_f64());

    let mut model = SegmenterModel::new(ModelConfig::default(), Arc::new(table), seed).expect("valid config");
    let tc = TrainConfig {
        epochs,
        seed,
        target_f1: None,
        ..TrainConfig::default()
    };
    let report = train_model(&mut model, train, &test, &tc, |e| {
        let m = e.heldout.expect("held-out set given");
        println!(
            "epoch={} loss={:.5} f1={:.4} precision={:.4} recall={:.4} seconds={:.1}",
            e.epoch, e.loss, m.f1, m.precision, m.recall, e.seconds
        );
    })
    .expect("training");
    println!(
        "examples={} total_seconds={:.1}",
        report.examples,
        started.elapsed().as_secs_f64()
    );
}
