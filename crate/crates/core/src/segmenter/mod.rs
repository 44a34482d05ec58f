//! Character-level boundary classifier: model assembly, inference with
//! overlap-hopping, training, and model files.

mod io;
mod network;
mod train;
pub mod verify;

use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::EmbeddingTable;
use crate::neuralnet::{Mode, NnError, Tensor};
use crate::textcore::{apply_labels, despace, BoundaryLabels, CharSequence, TextError};

pub use network::{ForwardTrace, SegmenterNetwork};
pub use train::{train_model, EpochStats, TrainConfig, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum SegmenterError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("input has {len} characters, window holds at most {max}")]
    InputTooLong { len: usize, max: usize },
    #[error("training corpus has no usable sentences")]
    EmptyCorpus,
    #[error("model file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Architecture hyperparameters. Kernel and pool shapes are (rows, cols)
/// over the `[L_max, dim]` input matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub l_max: usize,
    pub embed_dim: usize,
    pub conv_filters: usize,
    pub conv1_kernel: (usize, usize),
    /// Kernel of every conv layer after the first.
    pub conv_kernel: (usize, usize),
    pub pool: (usize, usize),
    pub conv_layers: usize,
    pub lstm_hidden: usize,
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            l_max: 100,
            embed_dim: 100,
            conv_filters: 32,
            conv1_kernel: (3, 100),
            conv_kernel: (3, 1),
            pool: (2, 1),
            conv_layers: 2,
            lstm_hidden: 32,
            mlp_hidden: 128,
            mlp_layers: 2,
            dropout: 0.3,
        }
    }
}

impl ModelConfig {
    pub fn output_size(&self) -> usize {
        self.l_max.saturating_sub(1)
    }

    pub(crate) fn conv_kernel(&self, layer: usize) -> (usize, usize) {
        if layer == 0 {
            self.conv1_kernel
        } else {
            self.conv_kernel
        }
    }

    /// `[H, W, C]` after each conv+ReLU+pool stage, or the first stage that
    /// cannot be applied.
    fn cnn_shapes(&self) -> Result<Vec<[usize; 3]>, String> {
        let mut shape = [self.l_max, self.embed_dim, 1];
        let mut out = Vec::new();
        for k in 0..self.conv_layers {
            let (kh, kw) = self.conv_kernel(k);
            if kh > shape[0] || kw > shape[1] {
                return Err(format!(
                    "conv{} kernel ({kh},{kw}) exceeds input {:?}",
                    k + 1,
                    &shape[..2]
                ));
            }
            let conv = [shape[0] - kh + 1, shape[1] - kw + 1];
            let pooled = [conv[0] / self.pool.0, conv[1] / self.pool.1];
            if pooled[0] == 0 || pooled[1] == 0 {
                return Err(format!(
                    "pool {:?} empties the conv{} output {conv:?}",
                    self.pool,
                    k + 1
                ));
            }
            shape = [pooled[0], pooled[1], self.conv_filters];
            out.push(shape);
        }
        Ok(out)
    }

    pub fn cnn_output_len(&self) -> usize {
        self.cnn_shapes()
            .ok()
            .and_then(|s| s.last().map(|s| s.iter().product()))
            .unwrap_or(self.l_max * self.embed_dim)
    }

    /// Length of the concatenated CNN + BiLSTM encoding.
    pub fn encoding_len(&self) -> usize {
        self.cnn_output_len() + self.l_max * 2 * self.lstm_hidden
    }

    pub fn validate(&self) -> Result<(), SegmenterError> {
        let err = |m: String| Err(SegmenterError::Config(m));
        let sizes = [
            ("l_max", self.l_max),
            ("embed_dim", self.embed_dim),
            ("conv_filters", self.conv_filters),
            ("conv1_kernel", self.conv1_kernel.0.min(self.conv1_kernel.1)),
            ("conv_kernel", self.conv_kernel.0.min(self.conv_kernel.1)),
            ("pool", self.pool.0.min(self.pool.1)),
            ("conv_layers", self.conv_layers),
            ("lstm_hidden", self.lstm_hidden),
            ("mlp_hidden", self.mlp_hidden),
            ("mlp_layers", self.mlp_layers),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if self.l_max < 2 {
            return err("l_max must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        self.cnn_shapes().map_err(SegmenterError::Config)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceConfig {
    pub threshold: f32,
    pub overlap: usize,
    /// Window width; at most the model's `l_max`.
    pub l_max: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            overlap: 30,
            l_max: 100,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<(), SegmenterError> {
        if self.threshold.is_nan() || self.threshold <= 0.0 {
            return Err(SegmenterError::Config(format!(
                "threshold {} must be positive",
                self.threshold
            )));
        }
        if self.l_max < 2 {
            return Err(SegmenterError::Config("window must hold at least 2 characters".into()));
        }
        if self.overlap == 0 || self.overlap >= self.l_max {
            return Err(SegmenterError::Config(format!(
                "overlap {} must lie in 1..{}",
                self.overlap, self.l_max
            )));
        }
        Ok(())
    }
}

/// Window starts for a sequence of `len` characters: `0, hop, 2·hop, …`
/// with `hop = width − overlap`, then a final window ending exactly at
/// `len`.
pub fn window_starts(len: usize, width: usize, overlap: usize) -> Vec<usize> {
    assert!(overlap < width, "overlap must be smaller than the window");
    if len <= width {
        return vec![0];
    }
    let hop = width - overlap;
    let mut starts = Vec::new();
    let mut s = 0;
    while s + width < len {
        starts.push(s);
        s += hop;
    }
    starts.push(len - width);
    starts
}

/// Full result of segmenting one text.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub chars: CharSequence,
    /// Final boundaries: user spaces OR model decisions.
    pub boundaries: BoundaryLabels,
    pub model_boundaries: BoundaryLabels,
    pub scores: Vec<f32>,
    pub text: String,
}

/// Trained network plus the frozen embedding table it reads.
#[derive(Clone, Debug)]
pub struct SegmenterModel {
    network: SegmenterNetwork<f32>,
    embeddings: Arc<EmbeddingTable>,
}

impl SegmenterModel {
    pub fn new(config: ModelConfig, embeddings: Arc<EmbeddingTable>, seed: u64) -> Result<Self, SegmenterError> {
        Self::from_network(SegmenterNetwork::new(config, seed)?, embeddings)
    }

    pub fn from_network(
        network: SegmenterNetwork<f32>,
        embeddings: Arc<EmbeddingTable>,
    ) -> Result<Self, SegmenterError> {
        if embeddings.dim() != network.config().embed_dim {
            return Err(SegmenterError::Config(format!(
                "embedding dim {} does not match model input width {}",
                embeddings.dim(),
                network.config().embed_dim
            )));
        }
        Ok(Self { network, embeddings })
    }

    pub fn config(&self) -> &ModelConfig {
        self.network.config()
    }

    pub fn network(&self) -> &SegmenterNetwork<f32> {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut SegmenterNetwork<f32> {
        &mut self.network
    }

    pub fn embeddings(&self) -> &Arc<EmbeddingTable> {
        &self.embeddings
    }

    pub fn parameter_count(&self) -> usize {
        self.network.parameter_count()
    }

    /// Zero-padded `[L_max, dim]` embedding matrix.
    pub fn input_matrix(&self, chars: &[char]) -> Result<Tensor<f32>, SegmenterError> {
        let c = self.config();
        if chars.len() > c.l_max {
            return Err(SegmenterError::InputTooLong {
                len: chars.len(),
                max: c.l_max,
            });
        }
        let mut m = Tensor::zeros(&[c.l_max, c.embed_dim]);
        for (row, &ch) in m.data_mut().chunks_exact_mut(c.embed_dim).zip(chars) {
            self.embeddings.lookup_into(ch, row);
        }
        Ok(m)
    }

    fn run(&self, chars: &[char]) -> Result<ForwardTrace<f32>, SegmenterError> {
        let input = self.input_matrix(chars)?;
        // Inference never draws from the RNG.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.network.forward(&input, Mode::Infer, &mut rng)
    }

    pub fn encode(&self, chars: &CharSequence) -> Result<Vec<f32>, SegmenterError> {
        Ok(self.run(chars.chars())?.encoding().to_vec())
    }

    /// Raw scores for the `L − 1` gaps of one window.
    pub fn gap_scores(&self, chars: &[char]) -> Result<Vec<f32>, SegmenterError> {
        let mut out = self.run(chars)?.output;
        out.truncate(chars.len().saturating_sub(1));
        Ok(out)
    }

    pub fn infer_boundaries(
        &self,
        chars: &CharSequence,
        cfg: &InferenceConfig,
    ) -> Result<(Vec<f32>, BoundaryLabels), SegmenterError> {
        let scores = self.gap_scores(chars.chars())?;
        let labels = threshold(&scores, cfg.threshold);
        Ok((scores, labels))
    }

    /// Gap scores over a sequence of any length, windowed with
    /// overlap-hopping; later windows override earlier ones.
    pub fn long_scores(&self, chars: &CharSequence, cfg: &InferenceConfig) -> Result<Vec<f32>, SegmenterError> {
        cfg.validate()?;
        let width = cfg.l_max.min(self.config().l_max);
        if cfg.overlap >= width {
            return Err(SegmenterError::Config(format!(
                "overlap {} must be below window {width}",
                cfg.overlap
            )));
        }
        let len = chars.len();
        let mut scores = vec![0.0; len.saturating_sub(1)];
        if len < 2 {
            return Ok(scores);
        }
        for start in window_starts(len, width, cfg.overlap) {
            let end = (start + width).min(len);
            let w = self.gap_scores(&chars.chars()[start..end])?;
            scores[start..start + w.len()].copy_from_slice(&w);
        }
        Ok(scores)
    }

    pub fn analyze(&self, text: &str, cfg: &InferenceConfig) -> Result<Segmentation, SegmenterError> {
        let (chars, user) = despace(text);
        let scores = self.long_scores(&chars, cfg)?;
        let model_boundaries = threshold(&scores, cfg.threshold);
        let boundaries = user.union(&model_boundaries);
        let text = apply_labels(&chars, &boundaries)?;
        Ok(Segmentation {
            chars,
            boundaries,
            model_boundaries,
            scores,
            text,
        })
    }

    /// Inserts spaces into `text`. User spaces are kept; the characters
    /// are never altered.
    pub fn segment(&self, text: &str, cfg: &InferenceConfig) -> Result<String, SegmenterError> {
        Ok(self.analyze(text, cfg)?.text)
    }

    /// Same as [`segment`](Self::segment); windows are applied whenever the
    /// input exceeds the window width.
    pub fn segment_long(&self, text: &str, cfg: &InferenceConfig) -> Result<String, SegmenterError> {
        self.segment(text, cfg)
    }
}

pub fn threshold(scores: &[f32], threshold: f32) -> BoundaryLabels {
    BoundaryLabels::new(scores.iter().map(|&s| s > threshold).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            l_max: 12,
            embed_dim: 6,
            conv_filters: 4,
            conv1_kernel: (3, 6),
            conv_kernel: (3, 1),
            pool: (2, 1),
            conv_layers: 2,
            lstm_hidden: 3,
            mlp_hidden: 8,
            mlp_layers: 2,
            dropout: 0.3,
        }
    }

    fn small_model(seed: u64) -> SegmenterModel {
        let chars: Vec<char> = "abcdefghij".chars().collect();
        let table = EmbeddingTable::random(6, chars, 16, 0.5, seed);
        SegmenterModel::new(small_config(), Arc::new(table), seed).unwrap()
    }

    #[test]
    fn default_config_matches_table() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.output_size(), 99);
        assert_eq!(c.cnn_output_len(), 736);
        assert_eq!(c.encoding_len(), 7136);
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        c.conv_filters = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.conv_kernel = (3, 100);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn inference_config_validation() {
        assert!(InferenceConfig::default().validate().is_ok());
        for (t, o) in [(0.0, 30), (0.5, 0), (0.5, 100)] {
            let cfg = InferenceConfig {
                threshold: t,
                overlap: o,
                l_max: 100,
            };
            assert!(cfg.validate().is_err(), "{t} {o}");
        }
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(window_starts(10, 5, 1), [0, 4, 5]);
        assert_eq!(window_starts(170, 100, 30), [0, 70]);
        assert_eq!(window_starts(100, 100, 30), [0]);
        assert_eq!(window_starts(0, 100, 30), [0]);
        assert_eq!(window_starts(101, 100, 30), [0, 1]);
    }

    #[test]
    fn single_char_and_empty() {
        let m = small_model(0);
        let cfg = InferenceConfig {
            l_max: 12,
            overlap: 4,
            ..Default::default()
        };
        let (s, l) = m.infer_boundaries(&CharSequence::new("a").unwrap(), &cfg).unwrap();
        assert!(s.is_empty() && l.is_empty());
        assert_eq!(m.segment("", &cfg).unwrap(), "");
    }

    #[test]
    fn zero_output_layer_inserts_nothing() {
        let mut m = small_model(1);
        m.network_mut().output.weight.value.fill(0.0);
        m.network_mut().output.bias.value.fill(0.0);
        let cfg = InferenceConfig {
            l_max: 12,
            overlap: 4,
            ..Default::default()
        };
        assert_eq!(m.segment("abcdefghijabcdefghij", &cfg).unwrap(), "abcdefghijabcdefghij");
    }

    #[test]
    fn user_spaces_survive() {
        let mut m = small_model(2);
        m.network_mut().output.bias.value.fill(0.0);
        m.network_mut().output.weight.value.fill(0.0);
        let cfg = InferenceConfig {
            l_max: 12,
            overlap: 4,
            ..Default::default()
        };
        assert_eq!(m.segment("a b", &cfg).unwrap(), "a b");
    }

    #[test]
    fn empty_input_encodes_to_a_constant() {
        let m = small_model(3);
        let e = CharSequence::new("").unwrap();
        let a = m.encode(&e).unwrap();
        assert_eq!(a.len(), small_config().encoding_len());
        assert_eq!(a, m.encode(&e).unwrap());
    }

    #[test]
    fn too_long_window_is_rejected() {
        let m = small_model(4);
        let long = CharSequence::new(&"a".repeat(13)).unwrap();
        assert!(matches!(
            m.encode(&long),
            Err(SegmenterError::InputTooLong { len: 13, max: 12 })
        ));
    }

    #[test]
    fn embedding_dim_must_match() {
        let table = EmbeddingTable::random(5, vec!['a'], 4, 0.5, 0);
        assert!(SegmenterModel::new(small_config(), Arc::new(table), 0).is_err());
    }
}
