//! Trains a reduced segmenter on the synthetic language and saves it with
//! its embeddings. Pass `--full` for the default architecture.
//!
//!     cargo run --release --example train_segmenter -- [out_dir] [--full]

use std::path::PathBuf;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use segrt::embedding::{train_skipgram, SkipGramConfig};
use segrt::segmenter::{train_model, ModelConfig, SegmenterModel, TrainConfig};
use segrt::synthetic::SyntheticData;
use segrt::textcore::build_vocabulary;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let full = args.iter().any(|a| a == "--full");
    let dir = PathBuf::from(
        args.iter()
            .find(|a| !a.starts_with("--"))
            .map_or("toy-model", String::as_str),
    );
    std::fs::create_dir_all(&dir).expect("output directory");

    let data = SyntheticData::generate(Default::default(), if full { 20_000 } else { 4_000 }, 400, 3);
    let train = SyntheticData::labelled(&data.train);
    let test = SyntheticData::labelled(&data.test);
    let vocab = build_vocabulary(train.iter().map(|(c, _)| c.to_string()), 1).expect("non-empty");
    let dim = if full { 100 } else { 32 };
    let sg = SkipGramConfig {
        dim,
        subsample: 0.0,
        ..SkipGramConfig::default()
    };
    let (table, _) = train_skipgram(train.iter().map(|(c, _)| c), &vocab, &sg).expect("embeddings");

    let config = if full {
        ModelConfig::default()
    } else {
        ModelConfig {
            l_max: 40,
            embed_dim: dim,
            conv_filters: 16,
            conv1_kernel: (3, dim),
            lstm_hidden: 16,
            mlp_hidden: 64,
            ..ModelConfig::default()
        }
    };
    let mut model = SegmenterModel::new(config, Arc::new(table), 3).expect("valid config");
    println!("parameters={}", model.parameter_count());
    let tc = TrainConfig {
        epochs: if full { 10 } else { 40 },
        learning_rate: if full { 0.0005 } else { 0.003 },
        seed: 3,
        target_f1: Some(0.95),
        ..TrainConfig::default()
    };
    let report = train_model(&mut model, train, &test, &tc, |e| {
        let f1 = e.heldout.map_or(0.0, |m| m.f1);
        println!(
            "epoch={} loss={:.5} f1={f1:.4} seconds={:.1}",
            e.epoch, e.loss, e.seconds
        );
    })
    .expect("training");
    println!("examples={} skipped_long={}", report.examples, report.skipped_long);

    model.save(&dir.join("model.segm")).expect("save model");
    model
        .embeddings()
        .save(&dir.join("model.sgemb"))
        .expect("save embeddings");
    println!("model_sha256={}", hex::encode(Sha256::digest(model.to_bytes())));
    println!("wrote {}/model.segm and model.sgemb", dir.display());
}
