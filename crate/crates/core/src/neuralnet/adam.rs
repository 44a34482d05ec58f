use super::tensor::{Parameter, Scalar};

/// Adam with bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update to every parameter and zeroes its gradient.
    pub fn step<'a, T: Scalar>(&self, params: impl IntoIterator<Item = &'a mut Parameter<T>>) {
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one, eps, lr) = (T::one(), T::lit(self.eps), T::lit(self.lr));
        for p in params {
            p.step += 1;
            let t = p.step as i32;
            let c1 = T::lit(1.0 - self.beta1.powi(t));
            let c2 = T::lit(1.0 - self.beta2.powi(t));
            let value = p.value.data_mut();
            let grad = p.grad.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                p.m[i] = b1 * p.m[i] + (one - b1) * g;
                p.v[i] = b2 * p.v[i] + (one - b2) * g * g;
                let m_hat = p.m[i] / c1;
                let v_hat = p.v[i] / c2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                grad[i] = T::zero();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::Tensor;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Parameter::new(Tensor::new(&[3], vec![1.0f64, -2.0, 0.5]).unwrap());
        Adam::new(0.0005).step([&mut p]);
        assert_eq!(p.value.data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        for g in [1e-3, 0.7, 250.0] {
            let mut p = Parameter::new(Tensor::new(&[2], vec![0.0f64, 0.0]).unwrap());
            p.grad = Tensor::new(&[2], vec![g, -g]).unwrap();
            Adam::new(0.0005).step([&mut p]);
            // |Δ| = lr·g/(|g|+ε), which is lr up to ε/|g|.
            let expected = 0.0005 * g / (g + 1e-8);
            let v = p.value.data();
            assert!((v[0] + expected).abs() < 1e-15, "g={g}: {v:?}");
            assert!((v[1] - expected).abs() < 1e-15);
            assert!((expected - 0.0005).abs() <= 0.0005 * 1e-5);
            assert!(p.grad.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn identical_runs_match() {
        let run = || {
            let mut p = Parameter::new(Tensor::new(&[2], vec![0.3f32, -0.1]).unwrap());
            for k in 0..20 {
                let v = p.value.data().to_vec();
                p.grad = Tensor::new(&[2], vec![v[0] * 2.0 + k as f32 * 0.01, v[1] - 1.0]).unwrap();
                Adam::new(0.01).step([&mut p]);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
