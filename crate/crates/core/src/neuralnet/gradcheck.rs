//! Central finite-difference verification of analytic gradients.
//!
//! A [`GradCheckable`] fragment exposes its parameters, a loss, and a
//! "kink signature" identifying the active linear piece of any
//! piecewise-linear operation (ReLU masks, max-pool argmax). Coordinates
//! whose ±h perturbation changes the signature are excluded from the check.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{relu, relu_backward, Conv2d, Dense, MaxPool2d};
use super::loss::masked_mse;
use super::lstm::BiLstm;
use super::tensor::{Parameter, Tensor};

pub trait GradCheckable {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>>;

    /// Loss at the current parameters plus the kink signature.
    fn loss(&mut self) -> (f64, Vec<usize>);

    /// Zeroes gradients, then runs forward and backward, leaving analytic
    /// gradients in every parameter. Returns the loss.
    fn loss_and_gradients(&mut self) -> f64;
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub h: f64,
    /// Coordinates sampled per parameter tensor; smaller tensors are checked
    /// exhaustively.
    pub samples_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            samples_per_param: 40,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn gradient_check<F: GradCheckable + ?Sized>(fragment: &mut F, cfg: &GradCheckConfig) -> GradCheckReport {
    fragment.loss_and_gradients();
    let analytic: Vec<Vec<f64>> = fragment
        .parameters_mut()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();
    let (_, base_signature) = fragment.loss();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    for (pi, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        let coords: Vec<usize> = if n <= cfg.samples_per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, cfg.samples_per_param).into_vec()
        };
        for c in coords {
            let original = fragment.parameters_mut()[pi].value.data()[c];
            let eval = |v: f64, f: &mut F| {
                f.parameters_mut()[pi].value.data_mut()[c] = v;
                f.loss()
            };
            let (plus, sig_plus) = eval(original + cfg.h, fragment);
            let (minus, sig_minus) = eval(original - cfg.h, fragment);
            fragment.parameters_mut()[pi].value.data_mut()[c] = original;
            if sig_plus != base_signature || sig_minus != base_signature {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.h);
            report.max_rel_error = report.max_rel_error.max(relative_error(grads[c], numeric));
            report.checked += 1;
        }
    }
    report
}

/// Fault injection: scales every analytic gradient of the wrapped fragment.
pub struct Corrupted<F> {
    pub inner: F,
    pub factor: f64,
}

impl<F: GradCheckable> GradCheckable for Corrupted<F> {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        self.inner.parameters_mut()
    }

    fn loss(&mut self) -> (f64, Vec<usize>) {
        self.inner.loss()
    }

    fn loss_and_gradients(&mut self) -> f64 {
        let loss = self.inner.loss_and_gradients();
        for p in self.inner.parameters_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= self.factor);
        }
        loss
    }
}

/// Targets within ±0.1 of the current prediction. Small residuals keep the
/// loss's rounding noise well below the smallest gradients being checked.
pub(crate) fn nearby_targets(prediction: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let target = prediction.iter().map(|&y| y + rng.random_range(-0.1..0.1)).collect();
    let mut mask: Vec<bool> = prediction.iter().map(|_| rng.random_bool(0.8)).collect();
    mask[0] = true;
    (target, mask)
}

fn relu_signature(v: &[f64]) -> impl Iterator<Item = usize> + '_ {
    v.iter().map(|&x| usize::from(x > 0.0))
}

/// input → dense → ReLU → dense → masked MSE.
pub struct DenseFragment {
    pub input: Parameter<f64>,
    pub hidden: Dense<f64>,
    pub output: Dense<f64>,
    target: Vec<f64>,
    mask: Vec<bool>,
}

impl DenseFragment {
    pub fn new(inputs: usize, hidden: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Parameter::new(Tensor::uniform(&[inputs], 1.0, &mut rng));
        let mut hidden_layer = Dense::new(inputs, hidden, &mut rng);
        hidden_layer.bias.value = Tensor::uniform(&[hidden], 0.5, &mut rng);
        let output = Dense::new(hidden, outputs, &mut rng);
        let mut fragment = Self {
            input,
            hidden: hidden_layer,
            output,
            target: Vec::new(),
            mask: Vec::new(),
        };
        (fragment.target, fragment.mask) = nearby_targets(&fragment.forward().1, &mut rng);
        fragment
    }

    fn forward(&self) -> (Vec<f64>, Vec<f64>) {
        let a = relu(
            &self
                .hidden
                .forward(self.input.value.data())
                .expect("shapes fixed at construction"),
        );
        let y = self.output.forward(&a).expect("shapes fixed at construction");
        (a, y)
    }
}

impl GradCheckable for DenseFragment {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        vec![
            &mut self.input,
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }

    fn loss(&mut self) -> (f64, Vec<usize>) {
        let (a, y) = self.forward();
        let (loss, _) = masked_mse(&y, &self.target, &self.mask).expect("mask has an active position");
        (loss, relu_signature(&a).collect())
    }

    fn loss_and_gradients(&mut self) -> f64 {
        self.parameters_mut().into_iter().for_each(Parameter::zero_grad);
        let (a, y) = self.forward();
        let (loss, dy) = masked_mse(&y, &self.target, &self.mask).expect("mask has an active position");
        let da = self.output.backward(&a, &dy, true).expect("input grad requested");
        let dz = relu_backward(&a, &da);
        let dx = self
            .hidden
            .backward(self.input.value.data(), &dz, true)
            .expect("input grad requested");
        self.input.grad.data_mut().copy_from_slice(&dx);
        loss
    }
}

/// input → conv2d → max pool → masked MSE.
pub struct ConvPoolFragment {
    pub input: Parameter<f64>,
    pub conv: Conv2d<f64>,
    pub pool: MaxPool2d,
    target: Vec<f64>,
    mask: Vec<bool>,
}

impl ConvPoolFragment {
    pub fn new(
        input_shape: [usize; 3],
        kernel: (usize, usize),
        filters: usize,
        pool: (usize, usize),
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Parameter::new(Tensor::uniform(&input_shape, 1.0, &mut rng));
        let mut conv = Conv2d::new(kernel.0, kernel.1, input_shape[2], filters, &mut rng);
        conv.bias.value = Tensor::uniform(&[filters], 0.5, &mut rng);
        let pool = MaxPool2d::new(pool.0, pool.1);
        let y = pool
            .forward(&conv.forward(&input.value).expect("kernel fits input"))
            .expect("pool fits");
        let (target, mask) = nearby_targets(y.output.data(), &mut rng);
        Self {
            input,
            conv,
            pool,
            target,
            mask,
        }
    }
}

impl GradCheckable for ConvPoolFragment {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        vec![&mut self.input, &mut self.conv.weight, &mut self.conv.bias]
    }

    fn loss(&mut self) -> (f64, Vec<usize>) {
        let c = self.conv.forward(&self.input.value).expect("shapes fixed");
        let p = self.pool.forward(&c).expect("shapes fixed");
        let (loss, _) = masked_mse(p.output.data(), &self.target, &self.mask).expect("active mask");
        (loss, p.argmax)
    }

    fn loss_and_gradients(&mut self) -> f64 {
        self.parameters_mut().into_iter().for_each(Parameter::zero_grad);
        let c = self.conv.forward(&self.input.value).expect("shapes fixed");
        let p = self.pool.forward(&c).expect("shapes fixed");
        let (loss, dy) = masked_mse(p.output.data(), &self.target, &self.mask).expect("active mask");
        let dy = Tensor::new(p.output.shape(), dy).expect("same shape");
        let dc = self.pool.backward(c.shape(), &p.argmax, &dy).expect("same shape");
        let dx = self
            .conv
            .backward(&self.input.value, &dc, true)
            .expect("shapes fixed")
            .expect("input grad requested");
        self.input.grad = dx;
        loss
    }
}

/// input → BiLSTM → masked MSE over the full output sequence.
pub struct BiLstmFragment {
    pub input: Parameter<f64>,
    pub bilstm: BiLstm<f64>,
    target: Vec<f64>,
    mask: Vec<bool>,
}

impl BiLstmFragment {
    pub fn new(steps: usize, input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Parameter::new(Tensor::uniform(&[steps, input_dim], 1.0, &mut rng));
        let mut bilstm = BiLstm::new(input_dim, hidden, &mut rng);
        for lstm in [&mut bilstm.forward, &mut bilstm.backward] {
            let b = lstm.bias.value.data_mut();
            b.iter_mut().for_each(|x| *x += rng.random_range(-0.3..0.3));
        }
        let (y, _) = bilstm.forward(&input.value).expect("shapes fixed");
        let (target, mask) = nearby_targets(y.data(), &mut rng);
        Self {
            input,
            bilstm,
            target,
            mask,
        }
    }
}

impl GradCheckable for BiLstmFragment {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        vec![
            &mut self.input,
            &mut self.bilstm.forward.w_input,
            &mut self.bilstm.forward.w_hidden,
            &mut self.bilstm.forward.bias,
            &mut self.bilstm.backward.w_input,
            &mut self.bilstm.backward.w_hidden,
            &mut self.bilstm.backward.bias,
        ]
    }

    fn loss(&mut self) -> (f64, Vec<usize>) {
        let (y, _) = self.bilstm.forward(&self.input.value).expect("shapes fixed");
        let (loss, _) = masked_mse(y.data(), &self.target, &self.mask).expect("active mask");
        (loss, Vec::new())
    }

    fn loss_and_gradients(&mut self) -> f64 {
        self.parameters_mut().into_iter().for_each(Parameter::zero_grad);
        let (y, cache) = self.bilstm.forward(&self.input.value).expect("shapes fixed");
        let (loss, dy) = masked_mse(y.data(), &self.target, &self.mask).expect("active mask");
        let dx = self
            .bilstm
            .backward(&self.input.value, &cache, &dy, true)
            .expect("shapes fixed")
            .expect("input grad requested");
        self.input.grad = dx;
        loss
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64) -> GradCheckConfig {
        GradCheckConfig {
            seed,
            ..GradCheckConfig::default()
        }
    }

    #[test]
    fn dense_relu_mse() {
        for seed in 0..3 {
            let r = gradient_check(&mut DenseFragment::new(12, 9, 5, seed), &cfg(seed));
            assert!(r.checked > 50);
            assert!(r.max_rel_error <= 1e-6, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn conv_pool_both_kernel_shapes() {
        for seed in 0..3 {
            // (3, W) kernel over the full width, then (3, 1) along length only.
            let r = gradient_check(
                &mut ConvPoolFragment::new([9, 6, 1], (3, 6), 4, (2, 1), seed),
                &cfg(seed),
            );
            assert!(r.max_rel_error <= 1e-6, "seed {seed}: {r:?}");
            let r = gradient_check(
                &mut ConvPoolFragment::new([9, 1, 3], (3, 1), 4, (2, 1), seed),
                &cfg(seed),
            );
            assert!(r.max_rel_error <= 1e-6, "seed {seed}: {r:?}");
            assert!(r.checked > 20);
        }
    }

    #[test]
    fn bilstm_four_steps() {
        for seed in 0..3 {
            let r = gradient_check(&mut BiLstmFragment::new(4, 5, 3, seed), &cfg(seed));
            assert!(r.checked > 100);
            assert!(r.max_rel_error <= 1e-5, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut bad = Corrupted {
            inner: DenseFragment::new(6, 4, 3, 7),
            factor: 1.01,
        };
        let r = gradient_check(&mut bad, &cfg(7));
        assert!(r.max_rel_error > 1e-3, "{r:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-12);
    }
}
