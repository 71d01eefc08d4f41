//! Radiance-field parameterizations g(c, d; zeta) and their query VJPs.
//!
//! Three kinds share one flat-parameter interface: feature voxel grids,
//! triplanes (channelwise sum of three bilinear plane samples), and a
//! coordinate MLP. Grid kinds decode interpolated features through a shared
//! [`DecoderHead`]; the MLP kind emits raw (sigma, rgb) directly and bypasses
//! the decoder.
//!
//! Raw outputs are pre-activation: the renderer applies softplus (with its
//! density bias) and sigmoid. Out-of-bounds queries return the empty-space
//! value: `sigma_raw = -inf` (post-activation density exactly 0) and zero
//! color.

mod decoder;
mod interp;
mod mlp_field;

pub use decoder::{DecoderHead, DecoderSpec};

use crate::nn::{Activation, MlpCache, MlpSpec};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Axis-aligned box the field lives in; queries outside are empty space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            min: [-1.0; 3],
            max: [1.0; 3],
        }
    }
}

impl Bounds {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn is_default(&self) -> bool {
        *self == Bounds::default()
    }
}

/// Number of frequency octaves in the MLP field's positional encoding.
pub const MLP_POS_OCTAVES: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldKind {
    /// Cubic feature grid, `resolution`^3 cells of `channels` features each.
    Voxel { resolution: usize, channels: usize },
    /// Three axis-aligned `resolution`^2 planes of `channels` features each.
    Triplane { resolution: usize, channels: usize },
    /// Coordinate network from encoded position + direction to raw outputs.
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub kind: FieldKind,
    pub bounds: Bounds,
}

impl FieldSpec {
    pub fn voxel(resolution: usize, channels: usize) -> Self {
        FieldSpec {
            kind: FieldKind::Voxel {
                resolution,
                channels,
            },
            bounds: Bounds::default(),
        }
    }

    pub fn triplane(resolution: usize, channels: usize) -> Self {
        FieldSpec {
            kind: FieldKind::Triplane {
                resolution,
                channels,
            },
            bounds: Bounds::default(),
        }
    }

    pub fn mlp(hidden: Vec<usize>, activation: Activation) -> Self {
        FieldSpec {
            kind: FieldKind::Mlp { hidden, activation },
            bounds: Bounds::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            FieldKind::Voxel {
                resolution,
                channels,
            }
            | FieldKind::Triplane {
                resolution,
                channels,
            } => {
                if *resolution < 2 {
                    return Err(Error::Config(format!(
                        "grid resolution must be at least 2, got {resolution}"
                    )));
                }
                if *channels < 1 {
                    return Err(Error::Config("channels must be at least 1".into()));
                }
            }
            FieldKind::Mlp { hidden, .. } => {
                if hidden.is_empty() {
                    return Err(Error::Config("mlp field needs at least one hidden layer".into()));
                }
            }
        }
        for a in 0..3 {
            if !(self.bounds.min[a] < self.bounds.max[a]) {
                return Err(Error::Config("bounds must have positive extent".into()));
            }
        }
        Ok(())
    }

    /// Feature channels a decoder must accept; `None` for the MLP kind.
    pub fn feature_channels(&self) -> Option<usize> {
        match self.kind {
            FieldKind::Voxel { channels, .. } | FieldKind::Triplane { channels, .. } => {
                Some(channels)
            }
            FieldKind::Mlp { .. } => None,
        }
    }

    pub(crate) fn mlp_spec(&self) -> Option<MlpSpec> {
        match &self.kind {
            FieldKind::Mlp { hidden, activation } => {
                let mut dims = Vec::with_capacity(hidden.len() + 2);
                dims.push(mlp_field::input_dim());
                dims.extend_from_slice(hidden);
                dims.push(4);
                Some(MlpSpec::new(dims, *activation))
            }
            _ => None,
        }
    }

    pub fn parameter_count(&self) -> usize {
        match &self.kind {
            FieldKind::Voxel {
                resolution,
                channels,
            } => resolution * resolution * resolution * channels,
            FieldKind::Triplane {
                resolution,
                channels,
            } => 3 * resolution * resolution * channels,
            FieldKind::Mlp { .. } => self.mlp_spec().unwrap().param_count(),
        }
    }
}

/// Flat parameter vector of a field plus the spec describing its layout.
/// This is the common currency of the pipeline: encoder outputs, diffusion
/// states, and denoiser predictions all share this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    pub spec: FieldSpec,
    pub data: Vec<f64>,
}

impl FieldParams {
    pub fn new(spec: FieldSpec, data: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if data.len() != spec.parameter_count() {
            return Err(Error::Contract(format!(
                "parameter vector length {} does not match spec ({})",
                data.len(),
                spec.parameter_count()
            )));
        }
        Ok(FieldParams { spec, data })
    }

    pub fn zeros_like(&self) -> FieldParams {
        FieldParams {
            spec: self.spec.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// The origin zeta_0 the encoding gradient is taken at: all-zero features for
/// grid kinds, a small seeded random init for MLPs (symmetry breaking).
pub fn zero_origin(spec: &FieldSpec, seed: u64) -> Result<FieldParams> {
    spec.validate()?;
    let n = spec.parameter_count();
    let data = match spec.kind {
        FieldKind::Voxel { .. } | FieldKind::Triplane { .. } => vec![0.0; n],
        FieldKind::Mlp { .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.gen_range(-0.05..0.05)).collect()
        }
    };
    FieldParams::new(spec.clone(), data)
}

/// Raw per-point field outputs; `sigma_raw = -inf` marks empty space.
#[derive(Debug, Clone)]
pub struct QueryOutput {
    pub sigma_raw: Vec<f64>,
    pub rgb_raw: Vec<[f64; 3]>,
}

/// Cached intermediates from [`eval_inside`], consumed by [`eval_vjp_inside`].
/// The decoder inputs live in the MLP cache's first activation layer.
pub(crate) enum EvalCache {
    Grid { mlp: MlpCache },
    Mlp { mlp: MlpCache },
}

/// Raw outputs for positions that are all inside the field bounds.
/// Returns (sigma_raw, rgb_raw flattened n x 3, cache).
pub(crate) fn eval_inside(
    params: &FieldParams,
    decoder: &DecoderHead,
    positions: &[[f64; 3]],
    view_dirs: &[[f64; 3]],
) -> Result<(Vec<f64>, Vec<f64>, EvalCache)> {
    let n = positions.len();
    match &params.spec.kind {
        FieldKind::Voxel { .. } | FieldKind::Triplane { .. } => {
            let channels = params.spec.feature_channels().unwrap();
            if decoder.spec.in_channels != channels {
                return Err(Error::Config(format!(
                    "decoder expects {} channels but field provides {}",
                    decoder.spec.in_channels, channels
                )));
            }
            let features = interp::interpolate(params, positions);
            let decoder_inputs = decoder.assemble_inputs(&features, view_dirs);
            let mut mlp = MlpCache::default();
            decoder
                .mlp_spec()
                .forward_batch(&decoder.params, &decoder_inputs, n, &mut mlp);
            let (sigma, rgb) = split_raw(mlp.output(), n);
            Ok((sigma, rgb, EvalCache::Grid { mlp }))
        }
        FieldKind::Mlp { .. } => {
            let spec = params.spec.mlp_spec().unwrap();
            let inputs = mlp_field::encode_inputs(positions, view_dirs);
            let mut mlp = MlpCache::default();
            spec.forward_batch(&params.data, &inputs, n, &mut mlp);
            let (sigma, rgb) = split_raw(mlp.output(), n);
            Ok((sigma, rgb, EvalCache::Mlp { mlp }))
        }
    }
}

/// Reverse pass of [`eval_inside`]: accumulates d(sum upstream . outputs)
/// w.r.t. field params and decoder params.
pub(crate) fn eval_vjp_inside(
    params: &FieldParams,
    decoder: &DecoderHead,
    positions: &[[f64; 3]],
    cache: &EvalCache,
    upstream_sigma: &[f64],
    upstream_rgb: &[f64],
    grad_params: &mut [f64],
    grad_decoder: &mut [f64],
) {
    let n = positions.len();
    let upstream = join_raw(upstream_sigma, upstream_rgb, n);
    match (&params.spec.kind, cache) {
        (FieldKind::Voxel { .. } | FieldKind::Triplane { .. }, EvalCache::Grid { mlp }) => {
            let in_dim = decoder.mlp_spec().input_dim();
            let mut grad_inputs = vec![0.0; n * in_dim];
            decoder.mlp_spec().vjp_batch(
                &decoder.params,
                mlp,
                &upstream,
                grad_decoder,
                &mut grad_inputs,
            );
            let channels = decoder.spec.in_channels;
            // Feature gradients are the first `channels` entries of each row.
            interp::scatter(params, positions, &grad_inputs, in_dim, channels, grad_params);
        }
        (FieldKind::Mlp { .. }, EvalCache::Mlp { mlp }) => {
            let spec = params.spec.mlp_spec().unwrap();
            let mut grad_inputs = vec![0.0; n * spec.input_dim()];
            spec.vjp_batch(&params.data, mlp, &upstream, grad_params, &mut grad_inputs);
        }
        _ => unreachable!("cache kind mismatch"),
    }
}

fn split_raw(out: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sigma = Vec::with_capacity(n);
    let mut rgb = Vec::with_capacity(n * 3);
    for row in out.chunks_exact(4) {
        sigma.push(row[0]);
        rgb.extend_from_slice(&row[1..4]);
    }
    (sigma, rgb)
}

fn join_raw(sigma: &[f64], rgb: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * 4);
    for i in 0..n {
        out.push(sigma[i]);
        out.extend_from_slice(&rgb[i * 3..i * 3 + 3]);
    }
    out
}

/// Evaluates the field at arbitrary points; out-of-bounds points report
/// empty space (`sigma_raw = -inf`, zero color).
pub fn query(
    params: &FieldParams,
    decoder: &DecoderHead,
    positions: &[[f64; 3]],
    view_dirs: &[[f64; 3]],
) -> Result<QueryOutput> {
    if positions.len() != view_dirs.len() {
        return Err(Error::Contract(
            "positions and view_dirs must have equal length".into(),
        ));
    }
    let n = positions.len();
    let inside: Vec<usize> = (0..n)
        .filter(|&i| params.spec.bounds.contains(positions[i]))
        .collect();
    let in_pos: Vec<[f64; 3]> = inside.iter().map(|&i| positions[i]).collect();
    let in_dir: Vec<[f64; 3]> = inside.iter().map(|&i| view_dirs[i]).collect();

    let mut sigma_raw = vec![f64::NEG_INFINITY; n];
    let mut rgb_raw = vec![[0.0; 3]; n];
    if !inside.is_empty() {
        let (s, rgb, _) = eval_inside(params, decoder, &in_pos, &in_dir)?;
        for (k, &i) in inside.iter().enumerate() {
            sigma_raw[i] = s[k];
            rgb_raw[i] = [rgb[k * 3], rgb[k * 3 + 1], rgb[k * 3 + 2]];
        }
    }
    Ok(QueryOutput { sigma_raw, rgb_raw })
}

/// Exact reverse-mode gradient of `sum(upstream . query outputs)` w.r.t.
/// field and decoder parameters. Out-of-bounds points contribute nothing.
pub fn query_vjp(
    params: &FieldParams,
    decoder: &DecoderHead,
    positions: &[[f64; 3]],
    view_dirs: &[[f64; 3]],
    upstream: &[[f64; 4]],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if positions.len() != view_dirs.len() || positions.len() != upstream.len() {
        return Err(Error::Contract(
            "positions, view_dirs, and upstream must have equal length".into(),
        ));
    }
    let n = positions.len();
    let inside: Vec<usize> = (0..n)
        .filter(|&i| params.spec.bounds.contains(positions[i]))
        .collect();
    let in_pos: Vec<[f64; 3]> = inside.iter().map(|&i| positions[i]).collect();
    let in_dir: Vec<[f64; 3]> = inside.iter().map(|&i| view_dirs[i]).collect();
    let up_sigma: Vec<f64> = inside.iter().map(|&i| upstream[i][0]).collect();
    let mut up_rgb = Vec::with_capacity(inside.len() * 3);
    for &i in &inside {
        up_rgb.extend_from_slice(&upstream[i][1..4]);
    }

    let mut grad_params = vec![0.0; params.len()];
    let mut grad_decoder = vec![0.0; decoder.params.len()];
    if !inside.is_empty() {
        let (_, _, cache) = eval_inside(params, decoder, &in_pos, &in_dir)?;
        eval_vjp_inside(
            params,
            decoder,
            &in_pos,
            &cache,
            &up_sigma,
            &up_rgb,
            &mut grad_params,
            &mut grad_decoder,
        );
    }
    Ok((grad_params, grad_decoder))
}

/// Pre-decoder interpolated features for grid kinds (n x C, row-major).
pub fn interpolate_features(params: &FieldParams, positions: &[[f64; 3]]) -> Result<Vec<f64>> {
    match params.spec.kind {
        FieldKind::Voxel { .. } | FieldKind::Triplane { .. } => {
            if let Some(p) = positions.iter().find(|p| !params.spec.bounds.contains(**p)) {
                return Err(Error::Contract(format!("position {p:?} outside bounds")));
            }
            Ok(interp::interpolate(params, positions))
        }
        FieldKind::Mlp { .. } => Err(Error::Config(
            "the MLP field kind has no pre-decoder features".into(),
        )),
    }
}
