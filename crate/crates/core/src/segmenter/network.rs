use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::neuralnet::{
    relu_backward, relu_inplace, BiLstm, BiLstmCache, Conv2d, Dense, Dropout, LayerSpec, MaxPool2d, Mode, NnError,
    Parameter, PoolOutput, Scalar, Tensor,
};

use super::{ModelConfig, SegmenterError};

/// Learnable part of the segmenter: a CNN branch and a BiLSTM branch over
/// the `[L_max, dim]` character matrix, concatenated and decoded by an MLP
/// into `L_max − 1` ReLU scores.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmenterNetwork<T> {
    config: ModelConfig,
    pub(crate) convs: Vec<Conv2d<T>>,
    pool: MaxPool2d,
    pub(crate) bilstm: BiLstm<T>,
    pub(crate) hidden: Vec<Dense<T>>,
    pub(crate) output: Dense<T>,
    dropout: Dropout,
}

/// Activations from one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    conv_inputs: Vec<Tensor<T>>,
    conv_acts: Vec<Tensor<T>>,
    pools: Vec<PoolOutput<T>>,
    lstm_input: Tensor<T>,
    lstm_cache: BiLstmCache<T>,
    mlp_inputs: Vec<Vec<T>>,
    mlp_acts: Vec<Vec<T>>,
    dropout_scales: Vec<Option<Vec<T>>>,
    output_input: Vec<T>,
    encoding_len: usize,
    /// Final ReLU scores, one per gap slot.
    pub output: Vec<T>,
}

impl<T> ForwardTrace<T> {
    /// Concatenated CNN + BiLSTM encoding fed to the MLP.
    pub fn encoding(&self) -> &[T] {
        &self.mlp_inputs[0]
    }

    /// Identifies the active piece of every piecewise-linear op (ReLU masks
    /// and pooling argmax).
    pub fn kink_signature(&self) -> Vec<usize>
    where
        T: Scalar,
    {
        let on = |v: &[T]| v.iter().map(|&x| usize::from(x > T::zero())).collect::<Vec<_>>();
        let mut sig = Vec::new();
        for (act, pool) in self.conv_acts.iter().zip(&self.pools) {
            sig.extend(on(act.data()));
            sig.extend(&pool.argmax);
        }
        for act in &self.mlp_acts {
            sig.extend(on(act));
        }
        sig.extend(on(&self.output));
        sig
    }
}

impl<T: Scalar> SegmenterNetwork<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, SegmenterError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(config.conv_layers);
        let mut channels = 1;
        for k in 0..config.conv_layers {
            let (kh, kw) = config.conv_kernel(k);
            convs.push(Conv2d::new(kh, kw, channels, config.conv_filters, &mut rng));
            channels = config.conv_filters;
        }
        let bilstm = BiLstm::new(config.embed_dim, config.lstm_hidden, &mut rng);
        let mut hidden = Vec::with_capacity(config.mlp_layers);
        let mut width = config.encoding_len();
        for _ in 0..config.mlp_layers {
            hidden.push(Dense::new(width, config.mlp_hidden, &mut rng));
            width = config.mlp_hidden;
        }
        let output = Dense::new(width, config.output_size(), &mut rng);
        Ok(Self {
            pool: MaxPool2d::new(config.pool.0, config.pool.1),
            dropout: Dropout::new(config.dropout).map_err(SegmenterError::Nn)?,
            config,
            convs,
            bilstm,
            hidden,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Architecture as a flat layer list.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let c = &self.config;
        let mut specs = Vec::new();
        for k in 0..c.conv_layers {
            specs.push(LayerSpec::Conv2d {
                filters: c.conv_filters,
                kernel: c.conv_kernel(k),
            });
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::MaxPool2d { window: c.pool });
        }
        specs.push(LayerSpec::BiLstm { hidden: c.lstm_hidden });
        for _ in 0..c.mlp_layers {
            specs.push(LayerSpec::Dense { units: c.mlp_hidden });
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::Dropout { rate: c.dropout });
        }
        specs.push(LayerSpec::Dense { units: c.output_size() });
        specs.push(LayerSpec::Relu);
        specs
    }

    /// Parameters in declaration order (the serialization order).
    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut ps: Vec<&mut Parameter<T>> = Vec::new();
        for conv in &mut self.convs {
            ps.push(&mut conv.weight);
            ps.push(&mut conv.bias);
        }
        for lstm in [&mut self.bilstm.forward, &mut self.bilstm.backward] {
            ps.push(&mut lstm.w_input);
            ps.push(&mut lstm.w_hidden);
            ps.push(&mut lstm.bias);
        }
        for d in self.hidden.iter_mut().chain(std::iter::once(&mut self.output)) {
            ps.push(&mut d.weight);
            ps.push(&mut d.bias);
        }
        ps
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut ps: Vec<&Parameter<T>> = Vec::new();
        for conv in &self.convs {
            ps.extend([&conv.weight, &conv.bias]);
        }
        for lstm in [&self.bilstm.forward, &self.bilstm.backward] {
            ps.extend([&lstm.w_input, &lstm.w_hidden, &lstm.bias]);
        }
        for d in self.hidden.iter().chain(std::iter::once(&self.output)) {
            ps.extend([&d.weight, &d.bias]);
        }
        ps
    }

    /// Names matching [`SegmenterNetwork::parameters`].
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for k in 0..self.convs.len() {
            names.push(format!("conv{}.weight", k + 1));
            names.push(format!("conv{}.bias", k + 1));
        }
        for dir in ["forward", "backward"] {
            for p in ["w_input", "w_hidden", "bias"] {
                names.push(format!("bilstm.{dir}.{p}"));
            }
        }
        for k in 0..self.hidden.len() {
            names.push(format!("mlp{}.weight", k + 1));
            names.push(format!("mlp{}.bias", k + 1));
        }
        names.push("output.weight".into());
        names.push("output.bias".into());
        names
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.parameters_mut().into_iter().for_each(Parameter::zero_grad);
    }

    pub fn cast<U: Scalar>(&self) -> SegmenterNetwork<U> {
        let conv = |c: &Conv2d<T>| Conv2d {
            weight: c.weight.cast(),
            bias: c.bias.cast(),
        };
        let dense = |d: &Dense<T>| Dense {
            weight: d.weight.cast(),
            bias: d.bias.cast(),
        };
        let lstm = |l: &crate::neuralnet::Lstm<T>| crate::neuralnet::Lstm {
            w_input: l.w_input.cast(),
            w_hidden: l.w_hidden.cast(),
            bias: l.bias.cast(),
        };
        SegmenterNetwork {
            config: self.config.clone(),
            convs: self.convs.iter().map(conv).collect(),
            pool: self.pool,
            bilstm: BiLstm {
                forward: lstm(&self.bilstm.forward),
                backward: lstm(&self.bilstm.backward),
            },
            hidden: self.hidden.iter().map(dense).collect(),
            output: dense(&self.output),
            dropout: self.dropout,
        }
    }

    /// Replaces parameter values in declaration order, checking shapes.
    pub(crate) fn set_parameters(&mut self, values: Vec<Tensor<T>>) -> Result<(), SegmenterError> {
        let names = self.parameter_names();
        let params = self.parameters_mut();
        if params.len() != values.len() {
            return Err(SegmenterError::Format(format!(
                "expected {} parameter tensors, found {}",
                params.len(),
                values.len()
            )));
        }
        for ((p, v), name) in params.into_iter().zip(values).zip(names) {
            if p.shape() != v.shape() {
                return Err(SegmenterError::Format(format!(
                    "tensor {name} has shape {:?}, config implies {:?}",
                    v.shape(),
                    p.shape()
                )));
            }
            *p = Parameter::new(v);
        }
        Ok(())
    }

    /// Runs the network on a `[L_max, dim]` character matrix. `rng` drives
    /// dropout masks in training mode.
    pub fn forward<R: Rng>(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardTrace<T>, SegmenterError> {
        let c = &self.config;
        if input.shape() != [c.l_max, c.embed_dim] {
            return Err(SegmenterError::Nn(NnError::Shape(format!(
                "network input must be [{}, {}], got {:?}",
                c.l_max,
                c.embed_dim,
                input.shape()
            ))));
        }
        let mut conv_inputs = Vec::with_capacity(self.convs.len());
        let mut conv_acts = Vec::with_capacity(self.convs.len());
        let mut pools = Vec::with_capacity(self.convs.len());
        let mut x = input.clone().reshape(&[c.l_max, c.embed_dim, 1])?;
        for conv in &self.convs {
            let mut act = conv.forward(&x)?;
            relu_inplace(act.data_mut());
            let pooled = self.pool.forward(&act)?;
            conv_inputs.push(std::mem::replace(&mut x, pooled.output.clone()));
            conv_acts.push(act);
            pools.push(pooled);
        }
        let (lstm_out, lstm_cache) = self.bilstm.forward(input)?;

        let mut encoding = x.into_data();
        encoding.extend_from_slice(lstm_out.data());
        let encoding_len = encoding.len();

        let mut mlp_inputs = Vec::with_capacity(self.hidden.len());
        let mut mlp_acts = Vec::with_capacity(self.hidden.len());
        let mut dropout_scales = Vec::with_capacity(self.hidden.len());
        let mut h = encoding;
        for dense in &self.hidden {
            let mut a = dense.forward(&h)?;
            relu_inplace(&mut a);
            let mut dropped = a.clone();
            let scale = self.dropout.forward(&mut dropped, mode, rng);
            mlp_inputs.push(std::mem::replace(&mut h, dropped));
            mlp_acts.push(a);
            dropout_scales.push(scale);
        }
        let mut output = self.output.forward(&h)?;
        relu_inplace(&mut output);
        let trace = ForwardTrace {
            conv_inputs,
            conv_acts,
            pools,
            lstm_input: input.clone(),
            lstm_cache,
            mlp_inputs,
            mlp_acts,
            dropout_scales,
            output_input: h,
            encoding_len,
            output,
        };
        if crate::neuralnet::finite_checks_enabled() && !trace.output.iter().all(|v| v.is_finite()) {
            panic!("non-finite segmenter output");
        }
        Ok(trace)
    }

    /// Accumulates parameter gradients for `d_output` (gradient of the loss
    /// with respect to the final scores). Inputs are frozen embeddings, so no
    /// input gradient is produced.
    pub fn backward(&mut self, trace: &ForwardTrace<T>, d_output: &[T]) -> Result<(), SegmenterError> {
        let d_pre = relu_backward(&trace.output, d_output);
        let mut d_h = self
            .output
            .backward(&trace.output_input, &d_pre, true)
            .expect("input gradient requested");
        for k in (0..self.hidden.len()).rev() {
            Dropout::backward(trace.dropout_scales[k].as_deref(), &mut d_h);
            let d_pre = relu_backward(&trace.mlp_acts[k], &d_h);
            d_h = self.hidden[k]
                .backward(&trace.mlp_inputs[k], &d_pre, true)
                .expect("input gradient requested");
        }
        debug_assert_eq!(d_h.len(), trace.encoding_len);
        let cnn_len = self.config.cnn_output_len();
        let d_lstm = d_h.split_off(cnn_len);
        self.bilstm
            .backward(&trace.lstm_input, &trace.lstm_cache, &d_lstm, false)?;

        let last_shape = trace.pools.last().map(|p| p.output.shape().to_vec());
        let mut g = match last_shape {
            Some(shape) => Some(Tensor::new(&shape, d_h)?),
            None => None,
        };
        for k in (0..self.convs.len()).rev() {
            let grad = g.take().expect("gradient flows from the layer above");
            let d_act = self
                .pool
                .backward(trace.conv_acts[k].shape(), &trace.pools[k].argmax, &grad)?;
            let d_pre = Tensor::new(d_act.shape(), relu_backward(trace.conv_acts[k].data(), d_act.data()))?;
            g = self.convs[k].backward(&trace.conv_inputs[k], &d_pre, k > 0)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shapes() {
        let net = SegmenterNetwork::<f32>::new(ModelConfig::default(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::uniform(&[100, 100], 0.5, &mut rng);
        let trace = net.forward(&x, Mode::Infer, &mut rng).unwrap();
        assert_eq!(trace.encoding().len(), 7136);
        assert_eq!(trace.output.len(), 99);
        assert_eq!(trace.conv_acts[0].shape(), &[98, 1, 32]);
        assert_eq!(trace.pools[0].output.shape(), &[49, 1, 32]);
        assert_eq!(trace.conv_acts[1].shape(), &[47, 1, 32]);
        assert_eq!(trace.pools[1].output.shape(), &[23, 1, 32]);
    }

    #[test]
    fn parameter_count_is_stable() {
        let net = SegmenterNetwork::<f32>::new(ModelConfig::default(), 0).unwrap();
        let conv = (3 * 100 * 32 + 32) + (3 * 32 * 32 + 32);
        let lstm = 2 * (100 * 128 + 32 * 128 + 128);
        let mlp = (7136 * 128 + 128) + (128 * 128 + 128) + (128 * 99 + 99);
        assert_eq!(net.parameter_count(), conv + lstm + mlp);
        assert_eq!(net.parameter_names().len(), net.parameters().len());
    }

    #[test]
    fn layer_specs_describe_the_stack() {
        let net = SegmenterNetwork::<f32>::new(ModelConfig::default(), 0).unwrap();
        let kinds: Vec<&str> = net.layer_specs().iter().map(LayerSpec::kind).collect();
        assert_eq!(
            kinds,
            [
                "conv2d",
                "relu",
                "maxpool2d",
                "conv2d",
                "relu",
                "maxpool2d",
                "bilstm",
                "dense",
                "relu",
                "dropout",
                "dense",
                "relu",
                "dropout",
                "dense",
                "relu"
            ]
        );
        assert!(net.layer_specs().iter().all(|s| s.validate().is_ok()));
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let net = SegmenterNetwork::<f32>::new(ModelConfig::default(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(net.forward(&Tensor::zeros(&[99, 100]), Mode::Infer, &mut rng).is_err());
    }
}
