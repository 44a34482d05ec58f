//! A toy language with a known segmentation, for end-to-end benchmarks.
//!
//! The lexicon is prefix-free, so every despaced sentence has exactly one
//! segmentation and a perfect segmenter exists.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::textcore::{despace, BoundaryLabels, CharSequence};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub words: usize,
    pub alphabet: usize,
    pub word_len: (usize, usize),
    pub sentence_words: (usize, usize),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            words: 50,
            alphabet: 30,
            word_len: (1, 4),
            sentence_words: (3, 10),
        }
    }
}

/// The first `size` open Hangul syllables taken every third vowel: 가, 걔, 게, …
pub fn alphabet(size: usize) -> Vec<char> {
    (0..size as u32)
        .map(|i| char::from_u32(0xAC00 + i * 28 * 3 % 11172).expect("Hangul block"))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticLanguage {
    lexicon: Vec<String>,
    spec: SyntheticSpec,
}

impl SyntheticLanguage {
    pub fn new(spec: SyntheticSpec, seed: u64) -> Self {
        let letters = alphabet(spec.alphabet);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lexicon: Vec<String> = Vec::with_capacity(spec.words);
        let mut attempts = 0;
        while lexicon.len() < spec.words {
            attempts += 1;
            assert!(attempts < 1_000_000, "lexicon spec is unsatisfiable");
            let len = rng.random_range(spec.word_len.0..=spec.word_len.1);
            let word: String = (0..len)
                .map(|_| *letters.choose(&mut rng).expect("non-empty"))
                .collect();
            if lexicon
                .iter()
                .all(|w| !w.starts_with(&word) && !word.starts_with(w.as_str()))
            {
                lexicon.push(word);
            }
        }
        Self { lexicon, spec }
    }

    pub fn lexicon(&self) -> &[String] {
        &self.lexicon
    }

    pub fn sentence<R: Rng>(&self, rng: &mut R) -> String {
        let n = rng.random_range(self.spec.sentence_words.0..=self.spec.sentence_words.1);
        let words: Vec<&str> = (0..n)
            .map(|_| self.lexicon.choose(rng).expect("non-empty").as_str())
            .collect();
        words.join(" ")
    }

    pub fn sentences(&self, count: usize, seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.sentence(&mut rng)).collect()
    }

    /// Recovers the unique segmentation of a despaced string, or `None` if
    /// it is not in the language.
    pub fn parse(&self, despaced: &str) -> Option<String> {
        let mut rest = despaced;
        let mut words = Vec::new();
        while !rest.is_empty() {
            let w = self.lexicon.iter().find(|w| rest.starts_with(w.as_str()))?;
            words.push(w.as_str());
            rest = &rest[w.len()..];
        }
        Some(words.join(" "))
    }
}

/// Training and test pairs for the standard benchmark.
pub struct SyntheticData {
    pub language: SyntheticLanguage,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SyntheticData {
    pub fn generate(spec: SyntheticSpec, train: usize, test: usize, seed: u64) -> Self {
        let language = SyntheticLanguage::new(spec, seed);
        let train = language.sentences(train, seed.wrapping_add(1));
        let test = language.sentences(test, seed.wrapping_add(2));
        Self { language, train, test }
    }

    pub fn standard(seed: u64) -> Self {
        Self::generate(SyntheticSpec::default(), 20_000, 2_000, seed)
    }

    pub fn labelled(lines: &[String]) -> Vec<(CharSequence, BoundaryLabels)> {
        lines.iter().map(|l| despace(l)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_shape() {
        let lang = SyntheticLanguage::new(SyntheticSpec::default(), 3);
        let lex = lang.lexicon();
        assert_eq!(lex.len(), 50);
        let letters = alphabet(30);
        let distinct: std::collections::HashSet<_> = letters.iter().collect();
        assert_eq!(distinct.len(), 30);
        for w in lex {
            let n = w.chars().count();
            assert!((1..=4).contains(&n), "{w}");
            assert!(w.chars().all(|c| letters.contains(&c)));
        }
        for (i, a) in lex.iter().enumerate() {
            for (j, b) in lex.iter().enumerate() {
                assert!(i == j || !b.starts_with(a.as_str()), "{a} prefixes {b}");
            }
        }
    }

    #[test]
    fn sentences_parse_back() {
        let data = SyntheticData::generate(SyntheticSpec::default(), 300, 10, 5);
        for s in &data.train {
            let words = s.split(' ').count();
            assert!((3..=10).contains(&words));
            let despaced: String = s.split(' ').collect();
            assert_eq!(data.language.parse(&despaced).as_deref(), Some(s.as_str()));
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = SyntheticData::generate(SyntheticSpec::default(), 20, 5, 11);
        let b = SyntheticData::generate(SyntheticSpec::default(), 20, 5, 11);
        assert_eq!((a.train, a.test), (b.train, b.test));
    }
}
