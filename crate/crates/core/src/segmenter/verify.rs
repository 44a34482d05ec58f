//! Gradient verification of every layer kind plus the assembled network,
//! in 64-bit precision.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::neuralnet::gradcheck::{nearby_targets, BiLstmFragment, ConvPoolFragment, Corrupted, DenseFragment};
use crate::neuralnet::{
    gradient_check, masked_mse, GradCheckConfig, GradCheckReport, GradCheckable, Mode, Parameter, Tensor,
};

use super::{ModelConfig, SegmenterNetwork};

/// The whole segmenter network (dropout active, with masks fixed by a seed)
/// on a padded random input, scored by masked MSE over the first `L − 1`
/// positions.
pub struct FullStackFragment {
    pub network: SegmenterNetwork<f64>,
    input: Tensor<f64>,
    target: Vec<f64>,
    mask: Vec<bool>,
    dropout_seed: u64,
}

impl FullStackFragment {
    /// `len` characters of random embedding rows, zero-padded to `l_max`.
    pub fn new(config: ModelConfig, len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut network = SegmenterNetwork::<f64>::new(config.clone(), seed).expect("valid config");
        // Positive biases keep most ReLUs in their active piece so that the
        // sampled coordinates carry nonzero gradients.
        let hidden_biases = network.hidden.iter_mut().map(|d| &mut d.bias);
        for b in hidden_biases.chain(std::iter::once(&mut network.output.bias)) {
            let n = b.len();
            b.value = Tensor::uniform(&[n], 0.2, &mut rng);
            b.value.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.2);
        }
        let len = len.clamp(2, config.l_max);
        let mut input = Tensor::zeros(&[config.l_max, config.embed_dim]);
        let filled = Tensor::<f64>::uniform(&[len, config.embed_dim], 1.0, &mut rng);
        input.data_mut()[..filled.len()].copy_from_slice(filled.data());
        let mut fragment = Self {
            network,
            input,
            target: Vec::new(),
            mask: Vec::new(),
            dropout_seed: seed,
        };
        let prediction = fragment.forward().output;
        let (target, mut mask) = nearby_targets(&prediction, &mut rng);
        mask.iter_mut().skip(len - 1).for_each(|m| *m = false);
        fragment.target = target;
        fragment.mask = mask;
        fragment
    }

    fn forward(&self) -> super::ForwardTrace<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        self.network
            .forward(&self.input, Mode::Train, &mut rng)
            .expect("shapes fixed at construction")
    }
}

impl GradCheckable for FullStackFragment {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        self.network.parameters_mut()
    }

    fn loss(&mut self) -> (f64, Vec<usize>) {
        let trace = self.forward();
        let (loss, _) = masked_mse(&trace.output, &self.target, &self.mask).expect("active mask");
        (loss, trace.kink_signature())
    }

    fn loss_and_gradients(&mut self) -> f64 {
        self.network.zero_grad();
        let trace = self.forward();
        let (loss, grad) = masked_mse(&trace.output, &self.target, &self.mask).expect("active mask");
        self.network
            .backward(&trace, &grad)
            .expect("shapes fixed at construction");
        loss
    }
}

/// One line of the verification table.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub seed: u64,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.checked > 0 && self.report.max_rel_error <= self.tolerance
    }
}

/// Fragment names with their tolerances, in table order.
pub const CHECKS: [(&str, f64); 5] = [
    ("dense", 1e-6),
    ("conv2d(3,W)+maxpool", 1e-6),
    ("conv2d(3,1)+maxpool", 1e-6),
    ("bilstm", 1e-5),
    ("full-stack", 1e-4),
];

fn fragment(name: &str, seed: u64) -> Box<dyn GradCheckable> {
    match name {
        "dense" => Box::new(DenseFragment::new(12, 9, 7, seed)),
        "conv2d(3,W)+maxpool" => Box::new(ConvPoolFragment::new([10, 6, 1], (3, 6), 4, (2, 1), seed)),
        "conv2d(3,1)+maxpool" => Box::new(ConvPoolFragment::new([11, 1, 3], (3, 1), 4, (2, 1), seed)),
        "bilstm" => Box::new(BiLstmFragment::new(4, 5, 3, seed)),
        "full-stack" => Box::new(FullStackFragment::new(ModelConfig::default(), 37, seed)),
        other => panic!("unknown fragment {other}"),
    }
}

/// Runs one named check. `corrupt` scales the analytic gradients to prove
/// the checker notices a broken backward pass.
pub fn run_check(name: &'static str, tolerance: f64, seed: u64, corrupt: Option<f64>) -> CheckResult {
    let cfg = GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    };
    let mut f = fragment(name, seed);
    let report = match corrupt {
        Some(factor) => gradient_check(&mut Corrupted { inner: f, factor }, &cfg),
        None => gradient_check(f.as_mut(), &cfg),
    };
    CheckResult {
        name,
        seed,
        tolerance,
        report,
    }
}

/// Every check for every seed.
pub fn run_suite(seeds: &[u64]) -> Vec<CheckResult> {
    seeds
        .iter()
        .flat_map(|&seed| CHECKS.iter().map(move |&(name, tol)| run_check(name, tol, seed, None)))
        .collect()
}

impl<F: GradCheckable + ?Sized> GradCheckable for Box<F> {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        (**self).parameters_mut()
    }

    fn loss(&mut self) -> (f64, Vec<usize>) {
        (**self).loss()
    }

    fn loss_and_gradients(&mut self) -> f64 {
        (**self).loss_and_gradients()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_full_stack_passes() {
        let config = ModelConfig {
            l_max: 14,
            embed_dim: 6,
            conv_filters: 4,
            conv1_kernel: (3, 6),
            lstm_hidden: 3,
            mlp_hidden: 10,
            ..ModelConfig::default()
        };
        for seed in 0..3 {
            let mut f = FullStackFragment::new(config.clone(), 9, seed);
            let r = gradient_check(
                &mut f,
                &GradCheckConfig {
                    seed,
                    ..Default::default()
                },
            );
            assert!(r.checked > 100, "{r:?}");
            assert!(r.max_rel_error <= 1e-4, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn corruption_is_detected() {
        for &(name, tol) in &CHECKS[..4] {
            let r = run_check(name, tol, 0, Some(1.01));
            assert!(!r.passed(), "{name}: {:?}", r.report);
        }
    }
}
