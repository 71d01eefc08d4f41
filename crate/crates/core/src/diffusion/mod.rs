//! Diffusion over field parameters: schedules, forward corruption, the
//! fused training pass (encode, bootstrap denoise, corrupt, denoise, render),
//! classifier-free guidance, and ancestral sampling in parameter space under
//! the x_start parameterization.

mod schedule;

pub use schedule::{forward_corrupt, make_schedule, NoiseSchedule, ScheduleKind};

use rand::Rng;

use crate::fields::{DecoderHead, FieldParams, FieldSpec};
use crate::geometry::CameraView;
use crate::goembed::{self, Aggregate, GOEmbedConfig, ScaleMode};
use crate::renderer::{views_mse_vjp, RenderConfig};
use crate::rng::{indexed_seed, standard_normal, stream_rng};
use crate::tokens::TokenDenoiser;
use crate::training::AdamState;
use crate::{Error, Result};

/// Contract for x_start denoisers: map a noisy state, a timestep, and an
/// optional conditioning embedding to an estimate of the clean state, with
/// the same parameter layout. Implementations must be deterministic.
pub trait Denoiser {
    fn field_spec(&self) -> &FieldSpec;
    fn denoise(
        &self,
        zeta_t: &FieldParams,
        t: usize,
        cond: Option<&FieldParams>,
    ) -> Result<FieldParams>;
}

/// Unit Gaussian noise shaped like `spec`.
pub fn noise_like<R: Rng>(spec: &FieldSpec, rng: &mut R) -> FieldParams {
    let data = (0..spec.parameter_count())
        .map(|_| standard_normal(rng))
        .collect();
    FieldParams {
        spec: spec.clone(),
        data,
    }
}

#[derive(Debug, Clone)]
pub struct FusionConfig {
    /// Probability of replacing the conditioning by the learned null token.
    pub dropout_p: f64,
    pub aggregate: Aggregate,
    pub render: RenderConfig,
    /// Scaling of the embedding the pipeline works with. Raw encoding
    /// gradients have data-dependent magnitude, so the same scaled value
    /// conditions the denoiser and enters the encoding loss term.
    pub cond_scale: ScaleMode,
    /// Ray minibatch size for the render losses in training steps (0 = full
    /// frames). The encoding itself always uses full frames.
    pub rays_per_loss_view: usize,
    /// Seed of the encoding origin (relevant for MLP fields).
    pub origin_seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            dropout_p: 0.5,
            aggregate: Aggregate::Sum,
            render: RenderConfig::default(),
            cond_scale: ScaleMode::PerTensorStd,
            rays_per_loss_view: 0,
            origin_seed: 0,
        }
    }
}

impl FusionConfig {
    fn goembed_config(&self) -> GOEmbedConfig {
        GOEmbedConfig {
            scale_mode: self.cond_scale,
            aggregate: self.aggregate,
            render: self.render,
        }
    }
}

/// Losses and diagnostics of one pass through the pipeline.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct FusionLosses {
    pub fusion: f64,
    pub pse_det: f64,
    pub goembed: f64,
    pub total: f64,
    pub t: usize,
    pub cond_dropped: bool,
}

struct PassDraws {
    cond_dropped: bool,
    zeta_big_t: FieldParams,
    t: usize,
    eps: FieldParams,
}

/// All stochastic choices of one pass come from named streams of `seed`, so
/// the eval and training paths draw identically and parallel rendering never
/// reorders them.
fn draw_pass(spec: &FieldSpec, sched: &NoiseSchedule, dropout_p: f64, seed: u64) -> PassDraws {
    let cond_dropped = stream_rng(seed, "dropout").gen::<f64>() < dropout_p;
    let zeta_big_t = noise_like(spec, &mut stream_rng(seed, "zeta_T"));
    let t = stream_rng(seed, "timestep").gen_range(1..=sched.t_max);
    let eps = noise_like(spec, &mut stream_rng(seed, "eps"));
    PassDraws {
        cond_dropped,
        zeta_big_t,
        t,
        eps,
    }
}

fn check_views(context: &[&CameraView], targets: &[&CameraView]) -> Result<()> {
    if context.is_empty() || targets.is_empty() {
        return Err(Error::Contract(
            "fusion pass needs at least one context and one target view".into(),
        ));
    }
    Ok(())
}

fn mean_mse(
    params: &FieldParams,
    decoder: &DecoderHead,
    views: &[&CameraView],
    render: &RenderConfig,
) -> Result<f64> {
    goembed::eq1_loss(params, decoder, views, render)
}

/// One full forward pass: encode context, pseudo-deterministic denoise from
/// pure noise, bootstrap-corrupt, denoise again, render target views, and
/// report all loss terms (full-frame).
#[allow(clippy::too_many_arguments)]
pub fn fusion_forward_pass<D: Denoiser>(
    context: &[&CameraView],
    targets: &[&CameraView],
    denoiser: &D,
    decoder: &DecoderHead,
    spec: &FieldSpec,
    sched: &NoiseSchedule,
    cfg: &FusionConfig,
    seed: u64,
) -> Result<FusionLosses> {
    check_views(context, targets)?;
    let embedding = goembed::goembed_encode(
        spec,
        decoder,
        context,
        &cfg.goembed_config(),
        cfg.origin_seed,
    )?;
    let draws = draw_pass(spec, sched, cfg.dropout_p, seed);
    let cond = if draws.cond_dropped {
        None
    } else {
        Some(&embedding)
    };

    let zeta0_hat = denoiser.denoise(&draws.zeta_big_t, sched.t_max, cond)?;
    let zeta_t_hat = forward_corrupt(&zeta0_hat, draws.t, &draws.eps, sched)?;
    let zeta_hat = denoiser.denoise(&zeta_t_hat, draws.t, cond)?;

    let fusion = mean_mse(&zeta_hat, decoder, targets, &cfg.render)?;
    let pse_det = mean_mse(&zeta0_hat, decoder, targets, &cfg.render)?;
    let goembed_term = mean_mse(&embedding, decoder, context, &cfg.render)?
        + mean_mse(&embedding, decoder, targets, &cfg.render)?;
    let total = fusion + pse_det + goembed_term;
    if !total.is_finite() {
        return Err(Error::Training(format!(
            "non-finite fusion loss (fusion={fusion}, pse_det={pse_det}, goembed={goembed_term})"
        )));
    }
    Ok(FusionLosses {
        fusion,
        pse_det,
        goembed: goembed_term,
        total,
        t: draws.t,
        cond_dropped: draws.cond_dropped,
    })
}

/// One training step: same draws as [`fusion_forward_pass`], plus gradients
/// through the two denoiser calls and the decoder, and Adam updates.
///
/// The bootstrap corruption input is stop-gradient: the second denoiser call
/// does not backpropagate into the first through `zeta_t`. The embedding is
/// stop-gradient everywhere. Loss values are over the sampled rays when
/// `rays_per_loss_view > 0`.
#[allow(clippy::too_many_arguments)]
pub fn fusion_train_step(
    context: &[&CameraView],
    targets: &[&CameraView],
    denoiser: &mut TokenDenoiser,
    decoder: &mut DecoderHead,
    opt_denoiser: &mut AdamState,
    opt_decoder: &mut AdamState,
    sched: &NoiseSchedule,
    cfg: &FusionConfig,
    seed: u64,
) -> Result<FusionLosses> {
    check_views(context, targets)?;
    let spec = denoiser.field_spec().clone();
    let embedding = goembed::goembed_encode(
        &spec,
        decoder,
        context,
        &cfg.goembed_config(),
        cfg.origin_seed,
    )?;
    let draws = draw_pass(&spec, sched, cfg.dropout_p, seed);
    let cond = if draws.cond_dropped {
        None
    } else {
        Some(&embedding)
    };

    let (zeta0_hat, cache0) = denoiser.forward_cached(&draws.zeta_big_t, sched.t_max, cond)?;
    let zeta_t_hat = forward_corrupt(&zeta0_hat, draws.t, &draws.eps, sched)?;
    let (zeta_hat, cache_t) = denoiser.forward_cached(&zeta_t_hat, draws.t, cond)?;

    let mut grad_denoiser = vec![0.0; denoiser.param_count()];
    let mut grad_decoder = vec![0.0; decoder.params.len()];
    let rays = cfg.rays_per_loss_view;

    // L^fusion: through render into the second denoiser call.
    let (fusion, gp, gd) = views_mse_vjp(
        &zeta_hat,
        decoder,
        targets,
        &cfg.render,
        rays,
        indexed_seed(seed, "loss_rays", 0),
    )?;
    denoiser.vjp(
        &cache_t,
        &FieldParams::new(spec.clone(), gp)?,
        &mut grad_denoiser,
    );
    accumulate(&mut grad_decoder, &gd);

    // L^pse-det: through render into the first denoiser call.
    let (pse_det, gp, gd) = views_mse_vjp(
        &zeta0_hat,
        decoder,
        targets,
        &cfg.render,
        rays,
        indexed_seed(seed, "loss_rays", 1),
    )?;
    denoiser.vjp(
        &cache0,
        &FieldParams::new(spec.clone(), gp)?,
        &mut grad_denoiser,
    );
    accumulate(&mut grad_decoder, &gd);

    // L^goembed: decoder-only (the embedding is stop-gradient).
    let (go_ctxt, _, gd) = views_mse_vjp(
        &embedding,
        decoder,
        context,
        &cfg.render,
        rays,
        indexed_seed(seed, "loss_rays", 2),
    )?;
    accumulate(&mut grad_decoder, &gd);
    let (go_trgt, _, gd) = views_mse_vjp(
        &embedding,
        decoder,
        targets,
        &cfg.render,
        rays,
        indexed_seed(seed, "loss_rays", 3),
    )?;
    accumulate(&mut grad_decoder, &gd);
    let goembed_term = go_ctxt + go_trgt;

    let total = fusion + pse_det + goembed_term;
    if !total.is_finite() {
        return Err(Error::Training(format!(
            "non-finite fusion loss (fusion={fusion}, pse_det={pse_det}, goembed={goembed_term})"
        )));
    }

    opt_denoiser.step(&mut denoiser.params, &grad_denoiser)?;
    opt_decoder.step(&mut decoder.params, &grad_decoder)?;

    Ok(FusionLosses {
        fusion,
        pse_det,
        goembed: goembed_term,
        total,
        t: draws.t,
        cond_dropped: draws.cond_dropped,
    })
}

fn accumulate(acc: &mut [f64], grad: &[f64]) {
    for (a, g) in acc.iter_mut().zip(grad) {
        *a += g;
    }
}

/// DDPM ancestral sampling in parameter space under the x_start
/// parameterization with classifier-free guidance
/// `x_hat = x_u + s (x_c - x_u)`. `s = 0` degenerates to the unconditional
/// trajectory and `s = 1` to the purely conditional one, exactly.
pub fn sample<D: Denoiser>(
    denoiser: &D,
    sched: &NoiseSchedule,
    guidance_scale: f64,
    cond: Option<&FieldParams>,
    seed: u64,
) -> Result<FieldParams> {
    if !(guidance_scale >= 0.0) {
        return Err(Error::Contract(format!(
            "guidance scale must be >= 0, got {guidance_scale}"
        )));
    }
    let spec = denoiser.field_spec().clone();
    let mut x = noise_like(&spec, &mut stream_rng(seed, "zeta_T"));
    let mut step_noise = stream_rng(seed, "eps");

    for t in (1..=sched.t_max).rev() {
        let x_hat = match cond {
            None => denoiser.denoise(&x, t, None)?,
            Some(c) => {
                if guidance_scale == 0.0 {
                    denoiser.denoise(&x, t, None)?
                } else if guidance_scale == 1.0 {
                    denoiser.denoise(&x, t, Some(c))?
                } else {
                    let xc = denoiser.denoise(&x, t, Some(c))?;
                    let xu = denoiser.denoise(&x, t, None)?;
                    let data = xu
                        .data
                        .iter()
                        .zip(&xc.data)
                        .map(|(u, c)| u + guidance_scale * (c - u))
                        .collect();
                    FieldParams::new(spec.clone(), data)?
                }
            }
        };
        if t == 1 {
            return Ok(x_hat);
        }
        // DDPM posterior q(x_{t-1} | x_t, x_hat).
        let ab_t = sched.alpha_bar(t);
        let ab_prev = sched.alpha_bar(t - 1);
        let beta = sched.beta(t);
        let coeff_x0 = ab_prev.sqrt() * beta / (1.0 - ab_t);
        let coeff_xt = sched.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
        let var = (1.0 - ab_prev) / (1.0 - ab_t) * beta;
        let std = var.max(0.0).sqrt();
        for i in 0..x.data.len() {
            x.data[i] =
                coeff_x0 * x_hat.data[i] + coeff_xt * x.data[i] + std * standard_normal(&mut step_noise);
        }
    }
    unreachable!("loop returns at t = 1");
}

/// Single-shot reconstruction: one denoiser call at t = T on seeded noise,
/// conditioned on the embedding.
pub fn pseudo_deterministic_recon<D: Denoiser>(
    denoiser: &D,
    cond: &FieldParams,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<FieldParams> {
    let zeta_big_t = noise_like(denoiser.field_spec(), &mut stream_rng(seed, "zeta_T"));
    denoiser.denoise(&zeta_big_t, sched.t_max, Some(cond))
}
