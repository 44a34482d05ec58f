//! Segments lines from stdin with a saved model, windowing inputs longer
//! than the model's width. Shows per-gap scores with `--scores`.
//!
//!     cargo run --release --example train_segmenter -- toy-model
//!     echo "..." | cargo run --release --example segment_text -- toy-model/model.segm toy-model/model.sgemb

use std::io::BufRead;
use std::sync::Arc;

use segrt::embedding::EmbeddingTable;
use segrt::segmenter::{InferenceConfig, SegmenterModel};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let show_scores = args.iter().any(|a| a == "--scores");
    let paths: Vec<&String> = args.iter().filter(|a| !a.starts_with("--")).collect();
    let [model_path, emb_path] = paths[..] else {
        eprintln!("usage: segment_text MODEL EMBEDDINGS [--scores] < input");
        std::process::exit(1);
    };
    let table = EmbeddingTable::load(emb_path.as_ref(), None).expect("embeddings");
    let model = SegmenterModel::load(model_path.as_ref(), Arc::new(table)).expect("model");
    let l_max = model.config().l_max;
    let cfg = InferenceConfig {
        overlap: (l_max / 3).max(1),
        l_max,
        ..InferenceConfig::default()
    };

    for line in std::io::stdin().lock().lines() {
        let line = line.expect("UTF-8 input");
        let seg = model.analyze(&line, &cfg).expect("segmentation");
        println!("{}", seg.text);
        if show_scores {
            let scores: Vec<String> = seg.scores.iter().map(|s| format!("{s:.2}")).collect();
            println!("  scores={}", scores.join(","));
        }
    }
}
