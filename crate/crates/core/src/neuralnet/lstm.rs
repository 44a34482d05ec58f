use rand::Rng;

use super::tensor::{axpy, dot, sigmoid, Parameter, Scalar, Tensor};
use super::NnError;

/// Single-direction LSTM. Gate blocks in the pre-activation vector are
/// ordered input, forget, cell candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm<T> {
    /// `[input_dim, 4h]`
    pub w_input: Parameter<T>,
    /// `[h, 4h]`
    pub w_hidden: Parameter<T>,
    /// `[4h]`
    pub bias: Parameter<T>,
}

/// Per-step activations kept for backpropagation through time, indexed by
/// sequence position.
#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    steps: usize,
    reverse: bool,
    /// post-activation gates, `steps * 4h`
    gates: Vec<T>,
    cells: Vec<T>,
    tanh_cells: Vec<T>,
    hidden: Vec<T>,
}

impl<T: Scalar> Lstm<T> {
    /// Weights uniform in `±1/sqrt(fan_in)` (`fan_in = input_dim + h`),
    /// forget-gate bias 1, other biases 0.
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((input_dim + hidden) as f64).sqrt();
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(T::one());
        Self {
            w_input: Parameter::new(Tensor::uniform(&[input_dim, 4 * hidden], bound, rng)),
            w_hidden: Parameter::new(Tensor::uniform(&[hidden, 4 * hidden], bound, rng)),
            bias: Parameter::new(bias),
        }
    }

    pub fn from_parts(w_input: Tensor<T>, w_hidden: Tensor<T>, bias: Tensor<T>) -> Result<Self, NnError> {
        let ok = match (w_input.shape(), w_hidden.shape(), bias.shape()) {
            ([_, g1], [h, g2], [g3]) => *g1 == 4 * h && g2 == g1 && g3 == g1,
            _ => false,
        };
        if !ok {
            return Err(NnError::Shape(format!(
                "lstm shapes {:?} {:?} {:?} are inconsistent",
                w_input.shape(),
                w_hidden.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            w_input: Parameter::new(w_input),
            w_hidden: Parameter::new(w_hidden),
            bias: Parameter::new(bias),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.shape()[0]
    }

    fn order(steps: usize, reverse: bool) -> Vec<usize> {
        if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        }
    }

    /// Runs over `input` (`[steps, input_dim]`, row-major) from zero initial
    /// state. With `reverse` the sequence is consumed last-to-first. Returns
    /// hidden states `[steps, h]` indexed by sequence position.
    pub fn forward(&self, input: &[T], steps: usize, reverse: bool) -> Result<(Vec<T>, LstmCache<T>), NnError> {
        let (d, h) = (self.input_dim(), self.hidden());
        if steps == 0 || input.len() != steps * d {
            return Err(NnError::Shape(format!(
                "lstm expects {steps} x {d} inputs (steps >= 1), got {}",
                input.len()
            )));
        }
        let g4 = 4 * h;
        let wx = self.w_input.value.data();
        let wh = self.w_hidden.value.data();
        let mut cache = LstmCache {
            steps,
            reverse,
            gates: vec![T::zero(); steps * g4],
            cells: vec![T::zero(); steps * h],
            tanh_cells: vec![T::zero(); steps * h],
            hidden: vec![T::zero(); steps * h],
        };
        let mut z = vec![T::zero(); g4];
        let mut prev: Option<usize> = None;
        for t in Self::order(steps, reverse) {
            z.copy_from_slice(self.bias.value.data());
            for (k, &xv) in input[t * d..(t + 1) * d].iter().enumerate() {
                if xv != T::zero() {
                    axpy(&mut z, xv, &wx[k * g4..(k + 1) * g4]);
                }
            }
            if let Some(p) = prev {
                for k in 0..h {
                    let hv = cache.hidden[p * h + k];
                    if hv != T::zero() {
                        axpy(&mut z, hv, &wh[k * g4..(k + 1) * g4]);
                    }
                }
            }
            let gates = &mut cache.gates[t * g4..(t + 1) * g4];
            for j in 0..h {
                let i_g = sigmoid(z[j]);
                let f_g = sigmoid(z[h + j]);
                let c_g = z[2 * h + j].tanh();
                let o_g = sigmoid(z[3 * h + j]);
                gates[j] = i_g;
                gates[h + j] = f_g;
                gates[2 * h + j] = c_g;
                gates[3 * h + j] = o_g;
                let c_prev = prev.map_or(T::zero(), |p| cache.cells[p * h + j]);
                let c = f_g * c_prev + i_g * c_g;
                let tc = c.tanh();
                cache.cells[t * h + j] = c;
                cache.tanh_cells[t * h + j] = tc;
                cache.hidden[t * h + j] = o_g * tc;
            }
            prev = Some(t);
        }
        Ok((cache.hidden.clone(), cache))
    }

    /// Backpropagation through time. `grad_out` is `[steps, h]` by sequence
    /// position. Accumulates parameter gradients; returns the input gradient
    /// when requested.
    pub fn backward(
        &mut self,
        input: &[T],
        cache: &LstmCache<T>,
        grad_out: &[T],
        input_grad: bool,
    ) -> Result<Option<Vec<T>>, NnError> {
        let (d, h, steps) = (self.input_dim(), self.hidden(), cache.steps);
        if grad_out.len() != steps * h || input.len() != steps * d {
            return Err(NnError::Shape("lstm backward shape mismatch".into()));
        }
        let g4 = 4 * h;
        let order = Self::order(steps, cache.reverse);
        let mut dx = input_grad.then(|| vec![T::zero(); steps * d]);
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        let mut dz = vec![T::zero(); g4];
        let one = T::one();
        for k in (0..steps).rev() {
            let t = order[k];
            let prev = k.checked_sub(1).map(|k| order[k]);
            let gates = &cache.gates[t * g4..(t + 1) * g4];
            for j in 0..h {
                let (i_g, f_g, c_g, o_g) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let tc = cache.tanh_cells[t * h + j];
                let dh = grad_out[t * h + j] + dh_next[j];
                let d_o = dh * tc;
                let dc = dh * o_g * (one - tc * tc) + dc_next[j];
                let c_prev = prev.map_or(T::zero(), |p| cache.cells[p * h + j]);
                dz[j] = dc * c_g * i_g * (one - i_g);
                dz[h + j] = dc * c_prev * f_g * (one - f_g);
                dz[2 * h + j] = dc * i_g * (one - c_g * c_g);
                dz[3 * h + j] = d_o * o_g * (one - o_g);
                dc_next[j] = dc * f_g;
            }
            axpy(self.bias.grad.data_mut(), one, &dz);
            let dwx = self.w_input.grad.data_mut();
            for (kk, &xv) in input[t * d..(t + 1) * d].iter().enumerate() {
                if xv != T::zero() {
                    axpy(&mut dwx[kk * g4..(kk + 1) * g4], xv, &dz);
                }
            }
            if let Some(dx) = dx.as_mut() {
                let wx = self.w_input.value.data();
                for kk in 0..d {
                    dx[t * d + kk] = dot(&wx[kk * g4..(kk + 1) * g4], &dz);
                }
            }
            let wh = self.w_hidden.value.data();
            match prev {
                Some(p) => {
                    let dwh = self.w_hidden.grad.data_mut();
                    for kk in 0..h {
                        let hv = cache.hidden[p * h + kk];
                        if hv != T::zero() {
                            axpy(&mut dwh[kk * g4..(kk + 1) * g4], hv, &dz);
                        }
                        dh_next[kk] = dot(&wh[kk * g4..(kk + 1) * g4], &dz);
                    }
                }
                None => dh_next.fill(T::zero()),
            }
        }
        Ok(dx)
    }
}

/// Forward and backward LSTMs whose per-step outputs are concatenated as
/// `[forward_t ; backward_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstm<T> {
    pub forward: Lstm<T>,
    pub backward: Lstm<T>,
}

#[derive(Clone, Debug)]
pub struct BiLstmCache<T> {
    forward: LstmCache<T>,
    backward: LstmCache<T>,
}

impl<T: Scalar> BiLstm<T> {
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let forward = Lstm::new(input_dim, hidden, rng);
        let backward = Lstm::new(input_dim, hidden, rng);
        Self { forward, backward }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    /// `input` is `[T, D]`; output is `[T, 2h]`.
    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, BiLstmCache<T>), NnError> {
        let [steps, _] = *input.shape() else {
            return Err(NnError::Shape(format!(
                "bilstm expects [T, D], got {:?}",
                input.shape()
            )));
        };
        let h = self.hidden();
        let (fw, fw_cache) = self.forward.forward(input.data(), steps, false)?;
        let (bw, bw_cache) = self.backward.forward(input.data(), steps, true)?;
        let mut out = Vec::with_capacity(steps * 2 * h);
        for t in 0..steps {
            out.extend_from_slice(&fw[t * h..(t + 1) * h]);
            out.extend_from_slice(&bw[t * h..(t + 1) * h]);
        }
        let out = Tensor::new(&[steps, 2 * h], out)?;
        out.check_finite("bilstm");
        Ok((
            out,
            BiLstmCache {
                forward: fw_cache,
                backward: bw_cache,
            },
        ))
    }

    pub fn backward(
        &mut self,
        input: &Tensor<T>,
        cache: &BiLstmCache<T>,
        grad_out: &[T],
        input_grad: bool,
    ) -> Result<Option<Tensor<T>>, NnError> {
        let steps = input.shape()[0];
        let h = self.hidden();
        if grad_out.len() != steps * 2 * h {
            return Err(NnError::Shape("bilstm gradient length mismatch".into()));
        }
        let mut g_fw = Vec::with_capacity(steps * h);
        let mut g_bw = Vec::with_capacity(steps * h);
        for row in grad_out.chunks_exact(2 * h) {
            g_fw.extend_from_slice(&row[..h]);
            g_bw.extend_from_slice(&row[h..]);
        }
        let dx_f = self.forward.backward(input.data(), &cache.forward, &g_fw, input_grad)?;
        let dx_b = self
            .backward
            .backward(input.data(), &cache.backward, &g_bw, input_grad)?;
        match (dx_f, dx_b) {
            (Some(mut a), Some(b)) => {
                axpy(&mut a, T::one(), &b);
                Ok(Some(Tensor::new(input.shape(), a)?))
            }
            _ => Ok(None),
        }
    }
}
