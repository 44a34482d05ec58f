//! Boundary precision, recall and F1 of a prediction file against gold,
//! line by line.
//!
//!     cargo run --example evaluate -- pred.txt gold.txt

use segrt::evalkit::{boundary_metrics, MetricsAccumulator};
use segrt::textcore::despace;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (pred, gold) = match &args[..] {
        [p, g] => (
            std::fs::read_to_string(p).expect("prediction file"),
            std::fs::read_to_string(g).expect("gold file"),
        ),
        _ => (
            "아버지가 방에 들어가신다\n나는 밥을먹었다\n".to_string(),
            "아버지가 방에 들어가신다\n나는 밥을 먹었다\n".to_string(),
        ),
    };

    let mut acc = MetricsAccumulator::default();
    for (i, (p, g)) in pred.lines().zip(gold.lines()).enumerate() {
        let (pc, pl) = despace(p);
        let (gc, gl) = despace(g);
        assert_eq!(pc, gc, "line {}: characters differ", i + 1);
        let m = boundary_metrics(&pl, &gl).expect("same length");
        println!("line={} f1={:.4}", i + 1, m.f1);
        acc.add(&pl, &gl).expect("same length");
    }
    let m = acc.finish();
    println!(
        "precision={:.4} recall={:.4} f1={:.4} word_accuracy={:.4} exact_match={:.4}",
        m.precision, m.recall, m.f1, m.word_accuracy, m.exact_match
    );
}
