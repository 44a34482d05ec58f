use rand::Rng;

use super::tensor::{axpy, dot, Parameter, Scalar, Tensor};
use super::NnError;

/// Valid (unpadded) 2-D cross-correlation over `[H, W, C_in]` inputs with
/// filters laid out `[kh, kw, C_in, C_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Scalar> Conv2d<T> {
    /// Weights uniform in `±1/sqrt(kh·kw·C_in)`, zero bias.
    pub fn new<R: Rng>(kh: usize, kw: usize, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((kh * kw * c_in) as f64).sqrt();
        Self {
            weight: Parameter::new(Tensor::uniform(&[kh, kw, c_in, c_out], bound, rng)),
            bias: Parameter::new(Tensor::zeros(&[c_out])),
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self, NnError> {
        if weight.shape().len() != 4 || bias.shape() != [weight.shape()[3]] {
            return Err(NnError::Shape(format!(
                "conv weight {:?} / bias {:?} mismatch",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Parameter::new(weight),
            bias: Parameter::new(bias),
        })
    }

    fn dims(&self) -> [usize; 4] {
        let s = self.weight.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 3], NnError> {
        let [kh, kw, c_in, c_out] = self.dims();
        match *input {
            [h, w, c] if c == c_in && kh <= h && kw <= w => Ok([h - kh + 1, w - kw + 1, c_out]),
            _ => Err(NnError::Shape(format!(
                "conv kernel ({kh},{kw}) x {c_in} channels cannot apply to input {input:?}"
            ))),
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let [oh, ow, c_out] = self.output_shape(input.shape())?;
        let [kh, kw, c_in, _] = self.dims();
        let (w_in, x) = (input.shape()[1], input.data());
        let (wt, b) = (self.weight.value.data(), self.bias.value.data());
        let mut out = vec![T::zero(); oh * ow * c_out];
        for (pos, o) in out.chunks_exact_mut(c_out).enumerate() {
            let (i, j) = (pos / ow, pos % ow);
            o.copy_from_slice(b);
            for a in 0..kh {
                for bb in 0..kw {
                    let xrow = ((i + a) * w_in + j + bb) * c_in;
                    for c in 0..c_in {
                        let xv = x[xrow + c];
                        if xv != T::zero() {
                            let k = ((a * kw + bb) * c_in + c) * c_out;
                            axpy(o, xv, &wt[k..k + c_out]);
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[oh, ow, c_out], out)?;
        out.check_finite("conv2d");
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the input gradient when
    /// `input_grad` is set.
    pub fn backward(
        &mut self,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
        input_grad: bool,
    ) -> Result<Option<Tensor<T>>, NnError> {
        let [oh, ow, c_out] = self.output_shape(input.shape())?;
        if grad_out.shape() != [oh, ow, c_out] {
            return Err(NnError::Shape(format!(
                "conv grad {:?} does not match output {:?}",
                grad_out.shape(),
                [oh, ow, c_out]
            )));
        }
        let [kh, kw, c_in, _] = self.dims();
        let w_in = input.shape()[1];
        let x = input.data();
        let mut dx = input_grad.then(|| vec![T::zero(); x.len()]);
        let wt = self.weight.value.data();
        let dw = self.weight.grad.data_mut();
        let db = self.bias.grad.data_mut();
        for (pos, g) in grad_out.data().chunks_exact(c_out).enumerate() {
            let (i, j) = (pos / ow, pos % ow);
            axpy(db, T::one(), g);
            for a in 0..kh {
                for bb in 0..kw {
                    let xrow = ((i + a) * w_in + j + bb) * c_in;
                    for c in 0..c_in {
                        let k = ((a * kw + bb) * c_in + c) * c_out;
                        let xv = x[xrow + c];
                        if xv != T::zero() {
                            axpy(&mut dw[k..k + c_out], xv, g);
                        }
                        if let Some(dx) = dx.as_mut() {
                            dx[xrow + c] += dot(&wt[k..k + c_out], g);
                        }
                    }
                }
            }
        }
        dx.map(|d| Tensor::new(input.shape(), d)).transpose()
    }
}

/// Non-overlapping max pooling (stride == window); trailing rows and
/// columns that do not fill a window are dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool2d {
    pub ph: usize,
    pub pw: usize,
}

/// Pooled output plus the flat input index chosen for every output cell.
#[derive(Clone, Debug)]
pub struct PoolOutput<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

impl MaxPool2d {
    pub fn new(ph: usize, pw: usize) -> Self {
        assert!(ph > 0 && pw > 0, "pool window must be positive");
        Self { ph, pw }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 3], NnError> {
        match *input {
            [h, w, c] if self.ph <= h && self.pw <= w => Ok([h / self.ph, w / self.pw, c]),
            _ => Err(NnError::Shape(format!(
                "pool window ({},{}) cannot apply to input {input:?}",
                self.ph, self.pw
            ))),
        }
    }

    pub fn forward<T: Scalar>(&self, input: &Tensor<T>) -> Result<PoolOutput<T>, NnError> {
        let [oh, ow, c] = self.output_shape(input.shape())?;
        let w_in = input.shape()[1];
        let x = input.data();
        let mut out = Vec::with_capacity(oh * ow * c);
        let mut argmax = Vec::with_capacity(oh * ow * c);
        for i in 0..oh {
            for j in 0..ow {
                for ch in 0..c {
                    let mut best = (i * self.ph * w_in + j * self.pw) * c + ch;
                    for a in 0..self.ph {
                        for b in 0..self.pw {
                            let idx = ((i * self.ph + a) * w_in + j * self.pw + b) * c + ch;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(PoolOutput {
            output: Tensor::new(&[oh, ow, c], out)?,
            argmax,
        })
    }

    pub fn backward<T: Scalar>(
        &self,
        input_shape: &[usize],
        argmax: &[usize],
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>, NnError> {
        if grad_out.len() != argmax.len() {
            return Err(NnError::Shape("pool gradient/argmax length mismatch".into()));
        }
        let mut dx = Tensor::zeros(input_shape);
        let d = dx.data_mut();
        for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
            d[idx] += g;
        }
        Ok(dx)
    }
}

/// Fully connected layer `y = W x + b`, weights stored `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: Parameter::new(Tensor::uniform(&[inputs, outputs], bound, rng)),
            bias: Parameter::new(Tensor::zeros(&[outputs])),
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self, NnError> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(NnError::Shape(format!(
                "dense weight {:?} / bias {:?} mismatch",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Parameter::new(weight),
            bias: Parameter::new(bias),
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, NnError> {
        if x.len() != self.inputs() {
            return Err(NnError::Shape(format!(
                "dense expects {} inputs, got {}",
                self.inputs(),
                x.len()
            )));
        }
        let n = self.outputs();
        let w = self.weight.value.data();
        let mut y = self.bias.value.data().to_vec();
        for (i, &xi) in x.iter().enumerate() {
            if xi != T::zero() {
                axpy(&mut y, xi, &w[i * n..(i + 1) * n]);
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, x: &[T], grad_out: &[T], input_grad: bool) -> Option<Vec<T>> {
        let n = self.outputs();
        axpy(self.bias.grad.data_mut(), T::one(), grad_out);
        let dw = self.weight.grad.data_mut();
        for (i, &xi) in x.iter().enumerate() {
            if xi != T::zero() {
                axpy(&mut dw[i * n..(i + 1) * n], xi, grad_out);
            }
        }
        input_grad.then(|| {
            let w = self.weight.value.data();
            (0..x.len()).map(|i| dot(&w[i * n..(i + 1) * n], grad_out)).collect()
        })
    }
}

pub fn relu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

/// Passes the gradient where the forward *output* was positive.
pub fn relu_backward<T: Scalar>(output: &[T], grad_out: &[T]) -> Vec<T> {
    output
        .iter()
        .zip(grad_out)
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect()
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` in training,
/// identity at inference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Applies dropout in place and returns the per-unit scale (0 or
    /// `1/(1-rate)`) for the backward pass. `None` means identity.
    pub fn forward<T: Scalar, R: Rng>(&self, x: &mut [T], mode: Mode, rng: &mut R) -> Option<Vec<T>> {
        if mode == Mode::Infer || self.rate == 0.0 {
            return None;
        }
        let keep = T::lit(1.0 / (1.0 - self.rate));
        let scale: Vec<T> = x
            .iter()
            .map(|_| {
                if rng.random::<f64>() < self.rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        x.iter_mut().zip(&scale).for_each(|(v, &s)| *v *= s);
        Some(scale)
    }

    pub fn backward<T: Scalar>(scale: Option<&[T]>, grad: &mut [T]) {
        if let Some(scale) = scale {
            grad.iter_mut().zip(scale).for_each(|(g, &s)| *g *= s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_table_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::<f32>::new(3, 100, 1, 32, &mut rng);
        let x = Tensor::uniform(&[100, 100, 1], 1.0, &mut rng);
        assert_eq!(conv.forward(&x).unwrap().shape(), &[98, 1, 32]);
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::<f64>::new(2, 2, 3, 4, &mut rng);
        conv.bias.value = Tensor::new(&[4], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let y = conv.forward(&Tensor::zeros(&[5, 4, 3])).unwrap();
        assert_eq!(y.shape(), &[4, 3, 4]);
        for cell in y.data().chunks(4) {
            assert_eq!(cell, &[0.5, -1.0, 2.0, 0.0]);
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let conv = Conv2d::from_parts(Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap(), Tensor::zeros(&[1])).unwrap();
        let x = Tensor::new(&[2, 3, 1], vec![1.0, -2.0, 3.0, 0.0, 5.5, -6.0]).unwrap();
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn conv_kernel_larger_than_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::<f32>::new(3, 100, 1, 32, &mut rng);
        assert!(matches!(
            conv.forward(&Tensor::zeros(&[2, 100, 1])),
            Err(NnError::Shape(_))
        ));
        assert!(conv.forward(&Tensor::zeros(&[10, 99, 1])).is_err());
    }

    #[test]
    fn pool_shapes_and_values() {
        let pool = MaxPool2d::new(2, 1);
        let x = Tensor::<f32>::zeros(&[98, 1, 32]);
        assert_eq!(pool.output_shape(x.shape()).unwrap(), [49, 1, 32]);
        let x = Tensor::new(&[2, 2, 1], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let out = pool.forward(&x).unwrap();
        assert_eq!(out.output.shape(), &[1, 2, 1]);
        assert_eq!(out.output.data(), &[3.0, 4.0]);
        assert_eq!(out.argmax, vec![2, 3]);
        let odd = Tensor::new(&[5, 1, 1], vec![1.0f32, 2.0, 3.0, 4.0, 9.0]).unwrap();
        let out = pool.forward(&odd).unwrap();
        assert_eq!(out.output.data(), &[2.0, 4.0]);
    }

    #[test]
    fn pool_backward_routes_to_argmax() {
        let pool = MaxPool2d::new(2, 1);
        let x = Tensor::new(&[4, 1, 1], vec![1.0f64, 5.0, 7.0, 2.0]).unwrap();
        let out = pool.forward(&x).unwrap();
        let g = Tensor::new(&[2, 1, 1], vec![10.0, 20.0]).unwrap();
        let dx = pool.backward(x.shape(), &out.argmax, &g).unwrap();
        assert_eq!(dx.data(), &[0.0, 10.0, 20.0, 0.0]);
    }

    #[test]
    fn dense_identity() {
        let mut eye = vec![0.0f64; 9];
        (0..3).for_each(|i| eye[i * 3 + i] = 1.0);
        let d = Dense::from_parts(Tensor::new(&[3, 3], eye).unwrap(), Tensor::zeros(&[3])).unwrap();
        assert_eq!(d.forward(&[1.5, -2.0, 0.0]).unwrap(), vec![1.5, -2.0, 0.0]);
        assert!(d.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn relu_values() {
        assert_eq!(relu(&[-1.0f32, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(
            relu_backward(&[0.0f32, 0.0, 2.0], &[1.0, 1.0, 3.0]),
            vec![0.0, 0.0, 3.0]
        );
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Dropout::new(0.3).unwrap();
        let mut x = vec![1.0f32; 1000];
        assert!(d.forward(&mut x, Mode::Infer, &mut rng).is_none());
        assert!(x.iter().all(|&v| v == 1.0));
        let scale = d.forward(&mut x, Mode::Train, &mut rng).unwrap();
        let kept = x.iter().filter(|&&v| v != 0.0).count();
        assert!((600..800).contains(&kept), "kept {kept}");
        assert!(x.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-6));
        let mut g = vec![1.0f32; 1000];
        Dropout::backward(Some(&scale), &mut g);
        assert_eq!(g, x);
        assert!(Dropout::new(1.0).is_err());
        assert!(Dropout::new(-0.1).is_err());
    }
}
