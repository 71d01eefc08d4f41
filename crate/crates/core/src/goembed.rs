//! Gradient-origin encoding: posed 2-D views become a field-parameter-shaped
//! embedding by taking the negated gradient of the render MSE at a fixed
//! origin parameter set. The encoder has no learnable parameters of its own;
//! all learning lives in the shared decoder head.

use crate::fields::{zero_origin, DecoderHead, FieldParams, FieldSpec};
use crate::geometry::{generate_rays, CameraView};
use crate::renderer::{render_mse_rays_vjp, views_mse_vjp, RenderConfig};
use crate::{Error, Result};

/// Post-scaling applied to the raw encoding gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleMode {
    /// Identity: the embedding is the exact negated gradient.
    None,
    /// Divide by the standard deviation of the entries (unit-std output).
    PerTensorStd,
    /// Multiply by a fixed positive gain.
    FixedGain(f64),
}

/// How per-view gradients combine. Sum is the exact gradient of the summed
/// per-view loss; mean trades exactness for scale stability with many views.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
pub struct GOEmbedConfig {
    pub scale_mode: ScaleMode,
    pub aggregate: Aggregate,
    pub render: RenderConfig,
}

impl Default for GOEmbedConfig {
    fn default() -> Self {
        GOEmbedConfig {
            scale_mode: ScaleMode::None,
            aggregate: Aggregate::Sum,
            render: RenderConfig::default(),
        }
    }
}

impl GOEmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if let ScaleMode::FixedGain(g) = self.scale_mode {
            if !(g > 0.0) {
                return Err(Error::Config(format!("fixed gain must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

fn check_context(context: &[&CameraView]) -> Result<()> {
    if context.is_empty() {
        return Err(Error::Contract("encoding needs at least one context view".into()));
    }
    let (w, h) = (context[0].image.width, context[0].image.height);
    for view in context {
        if view.image.width != w || view.image.height != h {
            return Err(Error::Contract(format!(
                "context view resolution mismatch: {}x{} vs {}x{}",
                view.image.width, view.image.height, w, h
            )));
        }
    }
    Ok(())
}

/// Encodes context views into field parameters: the negated gradient of the
/// summed per-view render MSE, evaluated at the zero origin, then passed
/// through [`scale_embedding`].
pub fn goembed_encode(
    spec: &FieldSpec,
    decoder: &DecoderHead,
    context: &[&CameraView],
    cfg: &GOEmbedConfig,
    seed: u64,
) -> Result<FieldParams> {
    cfg.validate()?;
    check_context(context)?;

    let origin = zero_origin(spec, seed)?;
    let mut grad = vec![0.0; origin.len()];
    for camera in context {
        let (w, h) = (camera.image.width, camera.image.height);
        let rays = generate_rays(camera, w, h)?;
        let targets: Vec<[f64; 3]> = (0..rays.len())
            .map(|i| {
                [
                    camera.image.data[i * 3],
                    camera.image.data[i * 3 + 1],
                    camera.image.data[i * 3 + 2],
                ]
            })
            .collect();
        let scale = 1.0 / (rays.len() * 3) as f64;
        let (_, gp, _) = render_mse_rays_vjp(
            &origin,
            decoder,
            &rays,
            camera.near,
            camera.far,
            &cfg.render,
            &targets,
            scale,
        )?;
        for (a, b) in grad.iter_mut().zip(&gp) {
            *a += b;
        }
    }
    if cfg.aggregate == Aggregate::Mean {
        let inv = 1.0 / context.len() as f64;
        for g in &mut grad {
            *g *= inv;
        }
    }
    for g in &mut grad {
        *g = -*g;
    }
    let embedding = FieldParams::new(spec.clone(), grad)?;
    Ok(scale_embedding(&embedding, cfg.scale_mode))
}

/// Applies the configured post-scaling to an embedding.
pub fn scale_embedding(embedding: &FieldParams, mode: ScaleMode) -> FieldParams {
    match mode {
        ScaleMode::None => embedding.clone(),
        ScaleMode::PerTensorStd => {
            let n = embedding.len() as f64;
            let mean: f64 = embedding.data.iter().sum::<f64>() / n;
            let var: f64 =
                embedding.data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if std < 1e-12 {
                return embedding.clone();
            }
            let mut out = embedding.clone();
            for x in &mut out.data {
                *x /= std;
            }
            out
        }
        ScaleMode::FixedGain(g) => {
            let mut out = embedding.clone();
            for x in &mut out.data {
                *x *= g;
            }
            out
        }
    }
}

/// The encoding objective: encode from context, render the embedding from
/// both context and target cameras, and sum the two MSE terms (each a mean
/// over its view set).
pub fn goembed_loss(
    decoder: &DecoderHead,
    spec: &FieldSpec,
    context: &[&CameraView],
    targets: &[&CameraView],
    cfg: &GOEmbedConfig,
    seed: u64,
) -> Result<f64> {
    let (loss, _) = goembed_loss_grad(decoder, spec, context, targets, cfg, seed, 0, 0)?;
    Ok(loss)
}

/// [`goembed_loss`] plus its gradient w.r.t. the decoder parameters.
///
/// The embedding is treated as a constant when differentiating (first-order
/// treatment: no backpropagation through the encoding gradient itself), so
/// the decoder gradient comes only from the renders of the embedding.
/// `rays_per_view > 0` subsamples rays of the loss renders for minibatching.
#[allow(clippy::too_many_arguments)]
pub fn goembed_loss_grad(
    decoder: &DecoderHead,
    spec: &FieldSpec,
    context: &[&CameraView],
    targets: &[&CameraView],
    cfg: &GOEmbedConfig,
    seed: u64,
    rays_per_view: usize,
    ray_seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if targets.is_empty() {
        return Err(Error::Contract("goembed_loss needs at least one target view".into()));
    }
    let embedding = goembed_encode(spec, decoder, context, cfg, seed)?;

    let mut grad_decoder = vec![0.0; decoder.params.len()];
    let mut loss = 0.0;
    for (set_idx, set) in [context, targets].into_iter().enumerate() {
        let (l, _, gd) = views_mse_vjp(
            &embedding,
            decoder,
            set,
            &cfg.render,
            rays_per_view,
            crate::rng::indexed_seed(ray_seed, "goembed_loss_set", set_idx as u64),
        )?;
        loss += l;
        for (a, b) in grad_decoder.iter_mut().zip(&gd) {
            *a += b;
        }
    }
    Ok((loss, grad_decoder))
}

/// Render-MSE of a parameter vector against a set of views (mean over the
/// set); the scalar the encoding gradient descends on.
pub fn eq1_loss(
    params: &FieldParams,
    decoder: &DecoderHead,
    views: &[&CameraView],
    render: &RenderConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for camera in views {
        let out = crate::renderer::render(params, decoder, camera, render)?;
        total += out.image.mse(&camera.image)?;
    }
    Ok(total / views.len() as f64)
}
