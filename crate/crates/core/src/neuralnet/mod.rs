//! A small dense-tensor neural engine: convolution, max pooling, LSTMs,
//! dense layers, ReLU, dropout, masked MSE, Adam and a finite-difference
//! gradient checker. Layers are generic over [`Scalar`] so the same code
//! trains in `f32` and verifies in `f64`.

mod adam;
pub mod gradcheck;
mod layers;
mod loss;
mod lstm;
mod tensor;

pub use adam::Adam;
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport, GradCheckable};
pub use layers::{relu, relu_backward, relu_inplace, Conv2d, Dense, Dropout, MaxPool2d, Mode, PoolOutput};
pub use loss::masked_mse;
pub use lstm::{BiLstm, BiLstmCache, Lstm, LstmCache};
pub use tensor::{finite_checks_enabled, Parameter, Scalar, Tensor};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error("loss mask has no active position")]
    EmptyMask,
}

/// Declarative description of one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Conv2d { filters: usize, kernel: (usize, usize) },
    MaxPool2d { window: (usize, usize) },
    BiLstm { hidden: usize },
    Dense { units: usize },
    Relu,
    Dropout { rate: f64 },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        let positive = |ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(NnError::Config(format!("{self:?}: dimensions must be positive")))
            }
        };
        match *self {
            LayerSpec::Conv2d { filters, kernel } => positive(filters > 0 && kernel.0 > 0 && kernel.1 > 0),
            LayerSpec::MaxPool2d { window } => positive(window.0 > 0 && window.1 > 0),
            LayerSpec::BiLstm { hidden } => positive(hidden > 0),
            LayerSpec::Dense { units } => positive(units > 0),
            LayerSpec::Relu => Ok(()),
            LayerSpec::Dropout { rate } => Dropout::new(rate).map(|_| ()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::BiLstm { .. } => "bilstm",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Dropout { .. } => "dropout",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_spec_validation() {
        assert!(LayerSpec::Conv2d {
            filters: 32,
            kernel: (3, 100)
        }
        .validate()
        .is_ok());
        assert!(LayerSpec::Conv2d {
            filters: 0,
            kernel: (3, 100)
        }
        .validate()
        .is_err());
        assert!(LayerSpec::MaxPool2d { window: (2, 0) }.validate().is_err());
        assert!(LayerSpec::Dropout { rate: 0.3 }.validate().is_ok());
        assert!(LayerSpec::Dropout { rate: 1.0 }.validate().is_err());
        assert_eq!(LayerSpec::BiLstm { hidden: 32 }.kind(), "bilstm");
    }
}
