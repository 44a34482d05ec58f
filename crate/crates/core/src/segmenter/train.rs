use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::evalkit::{BoundaryMetrics, MetricsAccumulator};
use crate::neuralnet::{masked_mse, Adam, Mode};
use crate::textcore::{BoundaryLabels, CharSequence};

use super::{threshold, InferenceConfig, SegmenterError, SegmenterModel};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Seeds the epoch shuffle and the dropout masks.
    pub seed: u64,
    /// Stop once held-out boundary F1 reaches this value.
    pub target_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 0.0005,
            epochs: 10,
            seed: 0,
            target_f1: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SegmenterError> {
        if self.batch_size == 0 {
            return Err(SegmenterError::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SegmenterError::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sentence masked MSE over the epoch.
    pub loss: f64,
    pub heldout: Option<BoundaryMetrics>,
    /// Fraction of held-out gaps the model marks as spaces.
    pub heldout_space_rate: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub examples: usize,
    /// Sentences longer than the model window.
    pub skipped_long: usize,
    /// Sentences with fewer than two characters (no gaps to learn).
    pub skipped_short: usize,
}

impl SegmenterModel {
    /// Accumulates the gradient of the batch's mean masked MSE into the
    /// network (gradients are not zeroed first) and returns that loss.
    pub fn accumulate_batch<R: Rng>(
        &mut self,
        batch: &[(CharSequence, BoundaryLabels)],
        mode: Mode,
        rng: &mut R,
    ) -> Result<f64, SegmenterError> {
        let out = self.config().output_size();
        let scale = 1.0 / batch.len() as f32;
        let mut total = 0.0f64;
        for (chars, labels) in batch {
            let gaps = chars.gap_count();
            if labels.len() != gaps || gaps == 0 || gaps > out {
                return Err(SegmenterError::Config(format!(
                    "example with {} characters and {} labels cannot be trained",
                    chars.len(),
                    labels.len()
                )));
            }
            let input = self.input_matrix(chars.chars())?;
            let trace = self.network().forward(&input, mode, rng)?;
            let mut target = vec![0.0f32; out];
            let mut mask = vec![false; out];
            for (i, &b) in labels.as_slice().iter().enumerate() {
                target[i] = if b { 1.0 } else { 0.0 };
                mask[i] = true;
            }
            let (loss, mut grad) = masked_mse(&trace.output, &target, &mask)?;
            grad.iter_mut().for_each(|g| *g *= scale);
            self.network_mut().backward(&trace, &grad)?;
            total += loss as f64;
        }
        Ok(total / batch.len() as f64)
    }

    /// Boundary metrics and predicted space rate over labelled sentences.
    pub fn evaluate(
        &self,
        data: &[(CharSequence, BoundaryLabels)],
        cfg: &InferenceConfig,
    ) -> Result<(BoundaryMetrics, f64), SegmenterError> {
        let mut acc = MetricsAccumulator::default();
        let (mut spaces, mut gaps) = (0usize, 0usize);
        for (chars, gold) in data {
            let pred = threshold(&self.long_scores(chars, cfg)?, cfg.threshold);
            spaces += pred.count_ones();
            gaps += pred.len();
            acc.add(&pred, gold)
                .map_err(|e| SegmenterError::Config(format!("held-out example: {e}")))?;
        }
        Ok((acc.finish(), if gaps == 0 { 0.0 } else { spaces as f64 / gaps as f64 }))
    }
}

/// Window settings for held-out evaluation of a model with window `l_max`.
pub(crate) fn eval_config(l_max: usize) -> InferenceConfig {
    InferenceConfig {
        l_max,
        overlap: 30.min(l_max / 3).max(1),
        ..InferenceConfig::default()
    }
}

/// Trains the network with Adam on mean masked MSE; embeddings stay frozen.
/// `on_epoch` sees each epoch's statistics as soon as they are computed.
pub fn train_model<I>(
    model: &mut SegmenterModel,
    corpus: I,
    heldout: &[(CharSequence, BoundaryLabels)],
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport, SegmenterError>
where
    I: IntoIterator<Item = (CharSequence, BoundaryLabels)>,
{
    tc.validate()?;
    let l_max = model.config().l_max;
    let (mut skipped_long, mut skipped_short) = (0, 0);
    let mut data = Vec::new();
    for (chars, labels) in corpus {
        if chars.len() > l_max {
            skipped_long += 1;
        } else if chars.len() < 2 {
            skipped_short += 1;
        } else {
            data.push((chars, labels));
        }
    }
    if data.is_empty() {
        return Err(SegmenterError::EmptyCorpus);
    }
    let adam = Adam::new(tc.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let eval_cfg = eval_config(l_max);
    let mut epochs = Vec::new();
    model.network_mut().zero_grad();
    for epoch in 1..=tc.epochs {
        let started = Instant::now();
        data.shuffle(&mut rng);
        let mut weighted = 0.0;
        for batch in data.chunks(tc.batch_size) {
            let loss = model.accumulate_batch(batch, Mode::Train, &mut rng)?;
            adam.step(model.network_mut().parameters_mut());
            weighted += loss * batch.len() as f64;
        }
        let (heldout_metrics, rate) = if heldout.is_empty() {
            (None, None)
        } else {
            let (m, r) = model.evaluate(heldout, &eval_cfg)?;
            (Some(m), Some(r))
        };
        let stats = EpochStats {
            epoch,
            loss: weighted / data.len() as f64,
            heldout: heldout_metrics,
            heldout_space_rate: rate,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch} loss {:.6}", stats.loss);
        on_epoch(&stats);
        let done = matches!((tc.target_f1, &stats.heldout), (Some(t), Some(m)) if m.f1 >= t);
        epochs.push(stats);
        if done {
            break;
        }
    }
    Ok(TrainReport {
        epochs,
        examples: data.len(),
        skipped_long,
        skipped_short,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::embedding::EmbeddingTable;
    use crate::segmenter::ModelConfig;
    use crate::textcore::despace;

    fn model(seed: u64) -> SegmenterModel {
        let config = ModelConfig {
            l_max: 12,
            embed_dim: 5,
            conv_filters: 3,
            conv1_kernel: (3, 5),
            lstm_hidden: 3,
            mlp_hidden: 6,
            ..ModelConfig::default()
        };
        let table = EmbeddingTable::random(5, "abcd".chars().collect(), 8, 0.5, seed);
        SegmenterModel::new(config, Arc::new(table), seed).unwrap()
    }

    fn grads(m: &mut SegmenterModel) -> Vec<f32> {
        m.network_mut()
            .parameters_mut()
            .iter()
            .flat_map(|p| p.grad.data().to_vec())
            .collect()
    }

    #[test]
    fn identical_batch_matches_single_example() {
        let ex = despace("ab cda bc");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut one = model(1);
        let l1 = one
            .accumulate_batch(std::slice::from_ref(&ex), Mode::Infer, &mut rng)
            .unwrap();
        let mut many = model(1);
        let l4 = many.accumulate_batch(&vec![ex; 4], Mode::Infer, &mut rng).unwrap();
        assert!((l1 - l4).abs() < 1e-7);
        for (a, b) in grads(&mut one).iter().zip(grads(&mut many)) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-3), "{a} {b}");
        }
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let mut m = model(0);
        let long = despace(&"ab".repeat(10));
        let short = despace("a");
        let err = train_model(&mut m, vec![long, short], &[], &TrainConfig::default(), |_| {}).unwrap_err();
        assert!(matches!(err, SegmenterError::EmptyCorpus));
    }

    #[test]
    fn counts_skipped_and_reports_epochs() {
        let mut m = model(0);
        let mut corpus = vec![despace(&"ab".repeat(10)), despace("a")];
        corpus.extend((0..20).map(|i| despace(if i % 2 == 0 { "ab cd a" } else { "dc ba bb" })));
        let tc = TrainConfig {
            batch_size: 4,
            epochs: 3,
            ..TrainConfig::default()
        };
        let mut seen = 0;
        let heldout = vec![despace("ab cd")];
        let r = train_model(&mut m, corpus, &heldout, &tc, |_| seen += 1).unwrap();
        assert_eq!((r.skipped_long, r.skipped_short, r.examples), (1, 1, 20));
        assert_eq!(r.epochs.len(), 3);
        assert_eq!(seen, 3);
        assert!(r.epochs.iter().all(|e| e.loss.is_finite() && e.heldout.is_some()));
    }

    #[test]
    fn same_seed_same_model() {
        let corpus: Vec<_> = (0..12).map(|i| despace(["ab c", "d ab", "cc da b"][i % 3])).collect();
        let tc = TrainConfig {
            batch_size: 5,
            epochs: 2,
            seed: 7,
            ..TrainConfig::default()
        };
        let mut a = model(3);
        let mut b = model(3);
        train_model(&mut a, corpus.clone(), &[], &tc, |_| {}).unwrap();
        train_model(&mut b, corpus, &[], &tc, |_| {}).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn rejects_bad_config() {
        assert!(TrainConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
