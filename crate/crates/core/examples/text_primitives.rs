//! Boundary labels, whitespace normalization and the Jamo keys that feed the
//! subword embeddings.
//!
//!     cargo run --example text_primitives -- "아버지가 방에 들어가신다"

use segrt::embedding::char_keys;
use segrt::textcore::{apply_labels, decompose_jamo, despace, normalize_whitespace};

fn main() {
    let text = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "아버지가  방에\t들어가신다".into());
    let normalized = normalize_whitespace(&text);
    let (chars, labels) = despace(&normalized);
    println!("input={normalized:?}");
    println!("chars={chars} gaps={} labels={:?}", chars.gap_count(), labels.to_bits());
    println!("rebuilt={:?}", apply_labels(&chars, &labels).expect("labels fit"));

    for &c in chars.chars().iter().take(3) {
        match decompose_jamo(c) {
            Some(j) => {
                let (l, v, t) = j.conjoining();
                println!(
                    "{c}: jamo={l}{v}{} keys={:?}",
                    t.map(String::from).unwrap_or_default(),
                    char_keys(c, 2, 3)
                );
            }
            None => println!("{c}: not a precomposed syllable"),
        }
    }
}
