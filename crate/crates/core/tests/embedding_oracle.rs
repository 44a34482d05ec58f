//! Characters that always appear next to each other end up closer than a
//! character that never shares their company.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segrt::embedding::{cosine, train_skipgram, SkipGramConfig};
use segrt::textcore::{build_vocabulary, CharSequence};

fn corpus(seed: u64) -> Vec<CharSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let near: Vec<char> = "abcdefgh".chars().collect();
    let far: Vec<char> = "pqrstuvw".chars().collect();
    let filler = |pool: &[char], rng: &mut ChaCha8Rng| -> String {
        (0..rng.random_range(2..6))
            .map(|_| *pool.choose(rng).unwrap())
            .collect()
    };
    (0..400)
        .map(|i| {
            let s = if i % 2 == 0 {
                format!("{}xy{}", filler(&near, &mut rng), filler(&near, &mut rng))
            } else {
                format!("{}z{}", filler(&far, &mut rng), filler(&far, &mut rng))
            };
            CharSequence::new(&s).unwrap()
        })
        .collect()
}

#[test]
fn adjacent_characters_are_closer() {
    let mut wins = 0;
    for seed in 0..20 {
        let sentences = corpus(seed);
        let vocab = build_vocabulary(sentences.iter().map(|s| s.to_string()), 1).unwrap();
        let cfg = SkipGramConfig {
            dim: 24,
            epochs: 5,
            subsample: 0.0,
            buckets: 256,
            seed,
            ..SkipGramConfig::default()
        };
        let (table, _) = train_skipgram(&sentences, &vocab, &cfg).unwrap();
        let (x, y, z) = (table.lookup('x'), table.lookup('y'), table.lookup('z'));
        if cosine(&x, &y) > cosine(&x, &z) {
            wins += 1;
        }
    }
    assert!(wins >= 18, "only {wins}/20 seeds placed x nearer y than z");
}
