//! Desk-scale token networks over flat field parameters.
//!
//! A parameter vector is split into contiguous fixed-size tokens and one
//! shared MLP is applied per token. The denoiser variant takes a noisy token,
//! a conditioning token (or a learned null embedding), and sinusoidal
//! timestep/position embeddings; the backbone variant is an unconditional
//! residual refiner that is exactly the identity at initialization.

use crate::diffusion::Denoiser;
use crate::fields::{FieldParams, FieldSpec};
use crate::nn::{sinusoidal_embedding, Activation, MlpCache, MlpSpec};
use crate::{Error, Result};

fn token_count(spec: &FieldSpec, token_dim: usize) -> Result<usize> {
    let n = spec.parameter_count();
    if token_dim == 0 || n % token_dim != 0 {
        return Err(Error::Config(format!(
            "token dim {token_dim} must divide the parameter count {n}"
        )));
    }
    Ok(n / token_dim)
}

/// x_start denoiser: (zeta_t, t, cond) -> zeta_0 estimate, token by token.
#[derive(Debug, Clone)]
pub struct TokenDenoiser {
    pub field_spec: FieldSpec,
    pub token_dim: usize,
    pub embed_dim: usize,
    n_tokens: usize,
    mlp: MlpSpec,
    /// MLP parameters followed by the learned null-conditioning token.
    pub params: Vec<f64>,
}

/// Forward state needed by [`TokenDenoiser::vjp`].
pub struct DenoiserCache {
    mlp: MlpCache,
    cond_was_null: bool,
}

impl TokenDenoiser {
    pub fn new(
        field_spec: FieldSpec,
        token_dim: usize,
        hidden: usize,
        embed_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        field_spec.validate()?;
        let n_tokens = token_count(&field_spec, token_dim)?;
        let in_dim = 2 * token_dim + 2 * embed_dim;
        let mlp = MlpSpec::new(vec![in_dim, hidden, hidden, token_dim], Activation::Tanh);
        let mut params = mlp.init_params(seed);
        params.extend(std::iter::repeat(0.0).take(token_dim)); // null embedding
        Ok(TokenDenoiser {
            field_spec,
            token_dim,
            embed_dim,
            n_tokens,
            mlp,
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count() + self.token_dim
    }

    pub fn hidden(&self) -> usize {
        self.mlp.dims[1]
    }

    fn null_offset(&self) -> usize {
        self.mlp.param_count()
    }

    fn check_state(&self, state: &FieldParams) -> Result<()> {
        if state.spec != self.field_spec {
            return Err(Error::Contract(
                "denoiser input spec does not match its field spec".into(),
            ));
        }
        Ok(())
    }

    fn build_inputs(&self, state: &[f64], cond: Option<&[f64]>, t: usize) -> Vec<f64> {
        let d = self.token_dim;
        let e = self.embed_dim;
        let in_dim = self.mlp.input_dim();
        let null = &self.params[self.null_offset()..self.null_offset() + d];
        let mut time_embed = vec![0.0; e];
        sinusoidal_embedding(t as f64, e, &mut time_embed);

        let mut inputs = vec![0.0; self.n_tokens * in_dim];
        let mut pos_embed = vec![0.0; e];
        for i in 0..self.n_tokens {
            let row = &mut inputs[i * in_dim..(i + 1) * in_dim];
            row[..d].copy_from_slice(&state[i * d..(i + 1) * d]);
            match cond {
                Some(c) => row[d..2 * d].copy_from_slice(&c[i * d..(i + 1) * d]),
                None => row[d..2 * d].copy_from_slice(null),
            }
            row[2 * d..2 * d + e].copy_from_slice(&time_embed);
            sinusoidal_embedding(i as f64, e, &mut pos_embed);
            row[2 * d + e..].copy_from_slice(&pos_embed);
        }
        inputs
    }

    /// Forward pass keeping the cache required for [`Self::vjp`].
    pub fn forward_cached(
        &self,
        zeta_t: &FieldParams,
        t: usize,
        cond: Option<&FieldParams>,
    ) -> Result<(FieldParams, DenoiserCache)> {
        self.check_state(zeta_t)?;
        if let Some(c) = cond {
            self.check_state(c)?;
        }
        let inputs = self.build_inputs(&zeta_t.data, cond.map(|c| c.data.as_slice()), t);
        let mut mlp = MlpCache::default();
        self.mlp.forward_batch(
            &self.params[..self.mlp.param_count()],
            &inputs,
            self.n_tokens,
            &mut mlp,
        );
        let out = FieldParams::new(self.field_spec.clone(), mlp.output().to_vec())?;
        Ok((
            out,
            DenoiserCache {
                mlp,
                cond_was_null: cond.is_none(),
            },
        ))
    }

    /// Accumulates d(sum upstream . output)/d(params) into `grad_params`.
    /// Gradients w.r.t. the state and (non-null) conditioning inputs are
    /// dropped: the state enters through a stop-gradient bootstrap and the
    /// conditioning embedding is treated as constant. The learned null token
    /// does receive gradient when it was active.
    pub fn vjp(&self, cache: &DenoiserCache, upstream: &FieldParams, grad_params: &mut [f64]) {
        debug_assert_eq!(grad_params.len(), self.param_count());
        let in_dim = self.mlp.input_dim();
        let mut grad_inputs = vec![0.0; self.n_tokens * in_dim];
        self.mlp.vjp_batch(
            &self.params[..self.mlp.param_count()],
            &cache.mlp,
            &upstream.data,
            &mut grad_params[..self.mlp.param_count()],
            &mut grad_inputs,
        );
        if cache.cond_was_null {
            let d = self.token_dim;
            let off = self.null_offset();
            for i in 0..self.n_tokens {
                let row = &grad_inputs[i * in_dim + d..i * in_dim + 2 * d];
                for (g, r) in grad_params[off..off + d].iter_mut().zip(row) {
                    *g += r;
                }
            }
        }
    }
}

impl Denoiser for TokenDenoiser {
    fn field_spec(&self) -> &FieldSpec {
        &self.field_spec
    }

    fn denoise(&self, zeta_t: &FieldParams, t: usize, cond: Option<&FieldParams>) -> Result<FieldParams> {
        Ok(self.forward_cached(zeta_t, t, cond)?.0)
    }
}

/// Residual per-token refiner mapping field params to field params; exactly
/// the identity at initialization (zeroed final layer).
#[derive(Debug, Clone)]
pub struct TokenBackbone {
    pub field_spec: FieldSpec,
    pub token_dim: usize,
    pub embed_dim: usize,
    n_tokens: usize,
    mlp: MlpSpec,
    pub params: Vec<f64>,
}

pub struct BackboneCache {
    mlp: MlpCache,
}

impl TokenBackbone {
    pub fn new(
        field_spec: FieldSpec,
        token_dim: usize,
        hidden: usize,
        embed_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        field_spec.validate()?;
        let n_tokens = token_count(&field_spec, token_dim)?;
        let in_dim = token_dim + embed_dim;
        let mlp = MlpSpec::new(vec![in_dim, hidden, hidden, token_dim], Activation::Tanh);
        let mut params = mlp.init_params(seed);
        mlp.zero_last_layer(&mut params);
        Ok(TokenBackbone {
            field_spec,
            token_dim,
            embed_dim,
            n_tokens,
            mlp,
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    pub fn hidden(&self) -> usize {
        self.mlp.dims[1]
    }

    fn build_inputs(&self, state: &[f64]) -> Vec<f64> {
        let d = self.token_dim;
        let e = self.embed_dim;
        let in_dim = self.mlp.input_dim();
        let mut inputs = vec![0.0; self.n_tokens * in_dim];
        let mut pos_embed = vec![0.0; e];
        for i in 0..self.n_tokens {
            let row = &mut inputs[i * in_dim..(i + 1) * in_dim];
            row[..d].copy_from_slice(&state[i * d..(i + 1) * d]);
            sinusoidal_embedding(i as f64, e, &mut pos_embed);
            row[d..].copy_from_slice(&pos_embed);
        }
        inputs
    }

    pub fn forward_cached(&self, input: &FieldParams) -> Result<(FieldParams, BackboneCache)> {
        if input.spec != self.field_spec {
            return Err(Error::Contract(
                "backbone input spec does not match its field spec".into(),
            ));
        }
        let inputs = self.build_inputs(&input.data);
        let mut mlp = MlpCache::default();
        self.mlp
            .forward_batch(&self.params, &inputs, self.n_tokens, &mut mlp);
        let mut data = input.data.clone();
        for (x, dx) in data.iter_mut().zip(mlp.output()) {
            *x += dx;
        }
        let out = FieldParams::new(self.field_spec.clone(), data)?;
        Ok((out, BackboneCache { mlp }))
    }

    pub fn forward(&self, input: &FieldParams) -> Result<FieldParams> {
        Ok(self.forward_cached(input)?.0)
    }

    /// Parameter gradients of `sum(upstream . output)`; the residual path's
    /// input gradient is dropped (inputs are stop-gradient embeddings).
    pub fn vjp(&self, cache: &BackboneCache, upstream: &FieldParams, grad_params: &mut [f64]) {
        debug_assert_eq!(grad_params.len(), self.param_count());
        let mut grad_inputs = vec![0.0; self.n_tokens * self.mlp.input_dim()];
        self.mlp.vjp_batch(
            &self.params,
            &cache.mlp,
            &upstream.data,
            grad_params,
            &mut grad_inputs,
        );
    }
}
