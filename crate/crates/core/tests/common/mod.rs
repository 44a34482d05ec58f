#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segrt::embedding::EmbeddingTable;
use segrt::segmenter::{InferenceConfig, ModelConfig, SegmenterModel};

/// A reduced architecture that keeps every layer kind but runs fast.
pub fn small_config(l_max: usize) -> ModelConfig {
    ModelConfig {
        l_max,
        embed_dim: 8,
        conv_filters: 4,
        conv1_kernel: (3, 8),
        lstm_hidden: 4,
        mlp_hidden: 16,
        ..ModelConfig::default()
    }
}

/// Random weights whose output biases straddle the threshold, so some gaps
/// score above it and some below.
pub fn small_model(l_max: usize, seed: u64) -> SegmenterModel {
    let chars: Vec<char> = "abcdefgh가나다라마바사아".chars().collect();
    let table = EmbeddingTable::random(8, chars, 64, 0.8, seed);
    let mut model = SegmenterModel::new(small_config(l_max), Arc::new(table), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in model.network_mut().parameters_mut().pop().unwrap().value.data_mut() {
        *b = rng.random_range(0.0..1.0);
    }
    model
}

pub fn small_inference(l_max: usize, overlap: usize) -> InferenceConfig {
    InferenceConfig {
        threshold: 0.5,
        overlap,
        l_max,
    }
}

/// Random text mixing Hangul, Latin, CJK, symbols, decomposed Jamo and
/// assorted whitespace.
pub fn random_text<R: Rng>(rng: &mut R, max_len: usize) -> String {
    let len = rng.random_range(0..=max_len);
    (0..len)
        .map(|_| match rng.random_range(0..12) {
            0..=3 => char::from_u32(rng.random_range(0xAC00..=0xD7A3)).unwrap(),
            4 => ['가', '나', '다', '라'][rng.random_range(0..4)],
            5 => rng.random_range('a'..='h'),
            6 => rng.random_range('!'..='~'),
            7 => char::from_u32(rng.random_range(0x4E00..0x9FFF)).unwrap(),
            8 => [' ', ' ', '\t', '\u{3000}', '\n'][rng.random_range(0..5)],
            9 => char::from_u32(rng.random_range(0x1100..0x1113)).unwrap(),
            10 => char::from_u32(rng.random_range(0x1161..0x1176)).unwrap(),
            _ => ['😀', 'é', 'ß', 'Ω', '\u{301}'][rng.random_range(0..5)],
        })
        .collect()
}
