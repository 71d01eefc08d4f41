//! The shared decoder head: a small fully-connected network mapping
//! interpolated field features (plus, optionally, the view direction) to raw
//! density and color.

use crate::nn::{Activation, MlpSpec};
use crate::{Error, Result};

/// Architecture of the decoder: `in_channels` feature inputs, two hidden
/// layers of `hidden` units, four raw outputs. The default sizing lands
/// around 17k learnable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderSpec {
    pub in_channels: usize,
    pub hidden: usize,
    /// Concatenate the unit view direction to the feature inputs.
    pub use_direction: bool,
}

pub const DECODER_MIN_PARAMS: usize = 10_000;
pub const DECODER_MAX_PARAMS: usize = 25_000;

impl DecoderSpec {
    pub fn new(in_channels: usize) -> Self {
        DecoderSpec {
            in_channels,
            hidden: 128,
            use_direction: false,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_direction(mut self, use_direction: bool) -> Self {
        self.use_direction = use_direction;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.in_channels + if self.use_direction { 3 } else { 0 }
    }

    pub fn mlp_spec(&self) -> MlpSpec {
        MlpSpec::new(
            vec![self.input_dim(), self.hidden, self.hidden, 4],
            Activation::Tanh,
        )
    }

    pub fn parameter_count(&self) -> usize {
        self.mlp_spec().param_count()
    }
}

/// Learnable parameters of the rendering functional's decoder network.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderHead {
    pub spec: DecoderSpec,
    pub params: Vec<f64>,
}

impl DecoderHead {
    /// Seeded random initialization; rejects sizings outside the 10k..25k
    /// parameter budget.
    pub fn new(spec: DecoderSpec, seed: u64) -> Result<Self> {
        let count = spec.parameter_count();
        if !(DECODER_MIN_PARAMS..=DECODER_MAX_PARAMS).contains(&count) {
            return Err(Error::Config(format!(
                "decoder parameter count {count} outside [{DECODER_MIN_PARAMS}, {DECODER_MAX_PARAMS}]"
            )));
        }
        Ok(DecoderHead {
            spec,
            params: spec.mlp_spec().init_params(seed),
        })
    }

    pub fn from_params(spec: DecoderSpec, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.parameter_count() {
            return Err(Error::Contract(format!(
                "decoder parameter vector length {} does not match spec ({})",
                params.len(),
                spec.parameter_count()
            )));
        }
        Ok(DecoderHead { spec, params })
    }

    pub fn mlp_spec(&self) -> MlpSpec {
        self.spec.mlp_spec()
    }

    /// Builds the n x input_dim decoder input matrix from features and
    /// (optionally) view directions.
    pub(crate) fn assemble_inputs(&self, features: &[f64], view_dirs: &[[f64; 3]]) -> Vec<f64> {
        let c = self.spec.in_channels;
        if !self.spec.use_direction {
            return features.to_vec();
        }
        let n = view_dirs.len();
        let dim = self.spec.input_dim();
        let mut out = vec![0.0; n * dim];
        for i in 0..n {
            out[i * dim..i * dim + c].copy_from_slice(&features[i * c..(i + 1) * c]);
            out[i * dim + c..i * dim + c + 3].copy_from_slice(&view_dirs[i]);
        }
        out
    }
}
