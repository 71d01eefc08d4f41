//! Differentiable emission-absorption raymarching.
//!
//! Forward: generate rays, sample points, query the field, apply activations
//! (density `softplus(x + bias)`, color `sigmoid`), composite front-to-back.
//! Backward: an explicit VJP through compositing, activations, decoder, and
//! interpolation — no tape. The backward recomputes the forward per chunk
//! with the same seed, so it consumes the identical sample set.
//!
//! Rays are processed in fixed-size chunks. Chunks run in parallel and their
//! gradient buffers are reduced in chunk order, so results are bitwise
//! independent of the worker count.

use rayon::prelude::*;

use crate::fields::{self, DecoderHead, FieldParams};
use crate::geometry::{generate_rays, sample_along_rays, CameraView, RayBundle, SampleStrategy};
use crate::image_buf::Image;
use crate::{Error, Result};

/// Rays per parallel work unit. Fixed so that summation order (and thus the
/// result) does not depend on the thread count.
const RAY_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy)]
pub struct RenderConfig {
    pub n_samples: usize,
    pub strategy: SampleStrategy,
    pub background: [f64; 3],
    /// Bias added to raw density before softplus. The default -2 leaves a
    /// faint positive density at the zero origin so compositing weights (and
    /// therefore color gradients) never vanish identically.
    pub density_bias: f64,
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            n_samples: 32,
            strategy: SampleStrategy::Midpoint,
            background: [1.0, 1.0, 1.0],
            density_bias: -2.0,
            seed: 0,
        }
    }
}

/// Forward render of a full camera frame with the per-ray compositing data.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    /// n_rays x n_samples compositing weights, row-major in ray order.
    pub weights: Vec<f64>,
    pub final_transmittance: Vec<f64>,
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Front-to-back alpha compositing of one ray.
///
/// `alpha_i = 1 - exp(-sigma_i * delta_i)`, `w_i = T_i * alpha_i` with
/// `T_1 = 1`, `T_{i+1} = T_i (1 - alpha_i)`; the pixel is the weighted color
/// sum plus `T_final * background`. Densities must be post-activation.
pub fn composite(
    sigma: &[f64],
    colors: &[[f64; 3]],
    deltas: &[f64],
    background: [f64; 3],
) -> Result<([f64; 3], Vec<f64>, f64)> {
    if sigma.len() != colors.len() || sigma.len() != deltas.len() {
        return Err(Error::Contract("composite inputs must have equal length".into()));
    }
    for (&s, &d) in sigma.iter().zip(deltas) {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::Contract(format!("density {s} must be finite and >= 0")));
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Contract(format!("step size {d} must be finite and > 0")));
        }
    }

    let mut weights = vec![0.0; sigma.len()];
    let mut pixel = [0.0; 3];
    let mut transmittance = 1.0;
    for i in 0..sigma.len() {
        let alpha = -(-sigma[i] * deltas[i]).exp_m1();
        let w = transmittance * alpha;
        weights[i] = w;
        for c in 0..3 {
            pixel[c] += w * colors[i][c];
        }
        transmittance *= 1.0 - alpha;
    }
    for c in 0..3 {
        pixel[c] += transmittance * background[c];
    }
    Ok((pixel, weights, transmittance))
}

/// Per-chunk forward state kept for the backward sweep.
struct ChunkForward {
    /// Ray index (chunk-local) of each packed in-bounds sample.
    sample_ray: Vec<u32>,
    /// Sample slot within its ray.
    sample_slot: Vec<u32>,
    positions: Vec<[f64; 3]>,
    sigma_raw: Vec<f64>,
    /// Post-activation color and opacity per packed sample.
    color: Vec<[f64; 3]>,
    alpha: Vec<f64>,
    cache: Option<fields::EvalCache>,
    /// Per-ray outputs.
    pixels: Vec<[f64; 3]>,
    weights: Vec<f64>,
    t_final: Vec<f64>,
}

fn forward_chunk(
    params: &FieldParams,
    decoder: &DecoderHead,
    rays: &RayBundle,
    t_values: &[f64],
    deltas: &[f64],
    ray_range: std::ops::Range<usize>,
    n_samples: usize,
    cfg: &RenderConfig,
    keep_cache: bool,
) -> Result<ChunkForward> {
    let n_rays = ray_range.len();
    let bounds = params.spec.bounds;

    let mut sample_ray = Vec::new();
    let mut sample_slot = Vec::new();
    let mut positions = Vec::new();
    let mut dirs = Vec::new();
    for (local, ray) in ray_range.clone().enumerate() {
        let o = rays.origins[ray];
        let d = rays.directions[ray];
        let base = ray * n_samples;
        for s in 0..n_samples {
            let t = t_values[base + s];
            let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
            if bounds.contains(p) {
                sample_ray.push(local as u32);
                sample_slot.push(s as u32);
                positions.push(p);
                dirs.push(d);
            }
        }
    }

    let (sigma_raw, rgb_raw, cache) = if positions.is_empty() {
        (Vec::new(), Vec::new(), None)
    } else {
        let (s, rgb, cache) = fields::eval_inside(params, decoder, &positions, &dirs)?;
        (s, rgb, Some(cache))
    };

    let n_packed = positions.len();
    let mut sigma = Vec::with_capacity(n_packed);
    let mut color = Vec::with_capacity(n_packed);
    for i in 0..n_packed {
        sigma.push(softplus(sigma_raw[i] + cfg.density_bias));
        color.push([
            sigmoid(rgb_raw[i * 3]),
            sigmoid(rgb_raw[i * 3 + 1]),
            sigmoid(rgb_raw[i * 3 + 2]),
        ]);
    }

    // Composite. Packed samples are in (ray, slot) order, so one sequential
    // sweep suffices.
    let mut alpha = vec![0.0; n_packed];
    let mut pixels = vec![[0.0; 3]; n_rays];
    let mut weights = vec![0.0; n_rays * n_samples];
    let mut t_final = vec![1.0; n_rays];
    let mut i = 0;
    for local in 0..n_rays {
        let ray = ray_range.start + local;
        let mut transmittance = 1.0;
        let mut pixel = [0.0; 3];
        while i < n_packed && sample_ray[i] as usize == local {
            let slot = sample_slot[i] as usize;
            let delta = deltas[ray * n_samples + slot];
            let a = -(-sigma[i] * delta).exp_m1();
            alpha[i] = a;
            let w = transmittance * a;
            weights[local * n_samples + slot] = w;
            for c in 0..3 {
                pixel[c] += w * color[i][c];
            }
            transmittance *= 1.0 - a;
            i += 1;
        }
        for c in 0..3 {
            pixel[c] += transmittance * cfg.background[c];
        }
        pixels[local] = pixel;
        t_final[local] = transmittance;
    }

    Ok(ChunkForward {
        sample_ray,
        sample_slot,
        positions,
        sigma_raw,
        color,
        alpha,
        cache: if keep_cache { cache } else { None },
        pixels,
        weights,
        t_final,
    })
}

/// Forward render over an arbitrary ray bundle.
///
/// Returns per-ray colors plus compositing weights (n_rays x n_samples) and
/// final transmittances, in bundle order.
pub fn render_rays(
    params: &FieldParams,
    decoder: &DecoderHead,
    rays: &RayBundle,
    near: f64,
    far: f64,
    cfg: &RenderConfig,
) -> Result<(Vec<[f64; 3]>, Vec<f64>, Vec<f64>)> {
    let samples = sample_along_rays(rays, near, far, cfg.n_samples, cfg.strategy, cfg.seed)?;
    let n_rays = rays.len();
    let n_samples = cfg.n_samples;

    let chunk_ranges: Vec<std::ops::Range<usize>> = (0..n_rays)
        .step_by(RAY_CHUNK)
        .map(|start| start..(start + RAY_CHUNK).min(n_rays))
        .collect();

    let chunks: Result<Vec<ChunkForward>> = chunk_ranges
        .into_par_iter()
        .map(|range| {
            forward_chunk(
                params,
                decoder,
                rays,
                &samples.t_values,
                &samples.deltas,
                range,
                n_samples,
                cfg,
                false,
            )
        })
        .collect();
    let chunks = chunks?;

    let mut colors = Vec::with_capacity(n_rays);
    let mut weights = Vec::with_capacity(n_rays * n_samples);
    let mut t_final = Vec::with_capacity(n_rays);
    for chunk in chunks {
        colors.extend_from_slice(&chunk.pixels);
        weights.extend_from_slice(&chunk.weights);
        t_final.extend_from_slice(&chunk.t_final);
    }
    Ok((colors, weights, t_final))
}

/// Renders a full frame at the camera's image resolution.
pub fn render(
    params: &FieldParams,
    decoder: &DecoderHead,
    camera: &CameraView,
    cfg: &RenderConfig,
) -> Result<RenderOutput> {
    let (w, h) = (camera.image.width, camera.image.height);
    let rays = generate_rays(camera, w, h)?;
    let (colors, weights, t_final) = render_rays(params, decoder, &rays, camera.near, camera.far, cfg)?;
    let mut image = Image::new(w, h);
    for (i, c) in colors.iter().enumerate() {
        image.data[i * 3..i * 3 + 3].copy_from_slice(c);
    }
    Ok(RenderOutput {
        image,
        weights,
        final_transmittance: t_final,
    })
}

/// Chunked fused forward+backward. `make_residual` maps each ray's rendered
/// pixel to the cotangent fed into the backward pass and a scalar loss
/// contribution; both are reduced over chunks in fixed order.
fn vjp_chunked<F>(
    params: &FieldParams,
    decoder: &DecoderHead,
    rays: &RayBundle,
    near: f64,
    far: f64,
    cfg: &RenderConfig,
    make_residual: F,
) -> Result<(f64, Vec<f64>, Vec<f64>)>
where
    F: Fn(usize, [f64; 3]) -> ([f64; 3], f64) + Sync,
{
    let samples = sample_along_rays(rays, near, far, cfg.n_samples, cfg.strategy, cfg.seed)?;
    let n_samples = cfg.n_samples;

    let chunk_ranges: Vec<std::ops::Range<usize>> = (0..rays.len())
        .step_by(RAY_CHUNK)
        .map(|start| start..(start + RAY_CHUNK).min(rays.len()))
        .collect();

    let partials: Result<Vec<(f64, Vec<f64>, Vec<f64>)>> = chunk_ranges
        .into_par_iter()
        .map(|range| {
            let fwd = forward_chunk(
                params,
                decoder,
                rays,
                &samples.t_values,
                &samples.deltas,
                range.clone(),
                n_samples,
                cfg,
                true,
            )?;
            let mut residuals = vec![[0.0; 3]; range.len()];
            let mut loss = 0.0;
            for local in 0..range.len() {
                let (r, l) = make_residual(range.start + local, fwd.pixels[local]);
                residuals[local] = r;
                loss += l;
            }
            let (gp, gd) =
                backward_chunk(params, decoder, &fwd, &samples.deltas, range, n_samples, cfg, &residuals);
            Ok((loss, gp, gd))
        })
        .collect();

    // Fixed-order reduction over chunks.
    let mut loss = 0.0;
    let mut grad_params = vec![0.0; params.len()];
    let mut grad_decoder = vec![0.0; decoder.params.len()];
    for (l, gp, gd) in partials? {
        loss += l;
        for (a, b) in grad_params.iter_mut().zip(&gp) {
            *a += b;
        }
        for (a, b) in grad_decoder.iter_mut().zip(&gd) {
            *a += b;
        }
    }
    Ok((loss, grad_params, grad_decoder))
}

/// Backward over an arbitrary bundle: gradient of
/// `sum_rays residual_ray . pixel_ray` w.r.t. field and decoder parameters.
pub fn render_rays_vjp(
    params: &FieldParams,
    decoder: &DecoderHead,
    rays: &RayBundle,
    near: f64,
    far: f64,
    cfg: &RenderConfig,
    residuals: &[[f64; 3]],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if residuals.len() != rays.len() {
        return Err(Error::Contract(format!(
            "residual count {} does not match ray count {}",
            residuals.len(),
            rays.len()
        )));
    }
    let (_, gp, gd) = vjp_chunked(params, decoder, rays, near, far, cfg, |ray, _pixel| {
        (residuals[ray], 0.0)
    })?;
    Ok((gp, gd))
}

/// Fused render-MSE loss and gradient over a ray bundle.
///
/// Returns `scale * sum_rays |pixel - target|^2` and its exact gradients.
/// With `scale = 1 / (n_rays * 3)` this is the mean squared error over the
/// bundle's pixels and channels.
pub fn render_mse_rays_vjp(
    params: &FieldParams,
    decoder: &DecoderHead,
    rays: &RayBundle,
    near: f64,
    far: f64,
    cfg: &RenderConfig,
    targets: &[[f64; 3]],
    scale: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if targets.len() != rays.len() {
        return Err(Error::Contract(format!(
            "target count {} does not match ray count {}",
            targets.len(),
            rays.len()
        )));
    }
    vjp_chunked(params, decoder, rays, near, far, cfg, |ray, pixel| {
        let mut residual = [0.0; 3];
        let mut loss = 0.0;
        for c in 0..3 {
            let d = pixel[c] - targets[ray][c];
            residual[c] = 2.0 * scale * d;
            loss += scale * d * d;
        }
        (residual, loss)
    })
}

#[allow(clippy::too_many_arguments)]
fn backward_chunk(
    params: &FieldParams,
    decoder: &DecoderHead,
    fwd: &ChunkForward,
    deltas: &[f64],
    ray_range: std::ops::Range<usize>,
    n_samples: usize,
    cfg: &RenderConfig,
    residuals: &[[f64; 3]],
) -> (Vec<f64>, Vec<f64>) {
    let mut grad_params = vec![0.0; params.len()];
    let mut grad_decoder = vec![0.0; decoder.params.len()];
    let n_packed = fwd.positions.len();
    if n_packed == 0 {
        return (grad_params, grad_decoder);
    }

    let mut up_sigma = vec![0.0; n_packed];
    let mut up_rgb = vec![0.0; n_packed * 3];

    // Per ray: suffix radiance suf[i] = composite of samples i.. onto the
    // background with unit transmittance. Then
    //   d(pixel)/d(alpha_i) = T_i (color_i - suf_{i+1})
    //   d(pixel)/d(color_i) = w_i
    // which avoids any division by (1 - alpha).
    let mut start = 0;
    while start < n_packed {
        let local = fwd.sample_ray[start] as usize;
        let mut end = start;
        while end < n_packed && fwd.sample_ray[end] as usize == local {
            end += 1;
        }
        let ray = ray_range.start + local;
        let res = residuals[local];

        // Suffix sweep (background-seeded).
        let count = end - start;
        let mut suffix = vec![[0.0; 3]; count + 1];
        suffix[count] = cfg.background;
        for k in (0..count).rev() {
            let i = start + k;
            let a = fwd.alpha[i];
            for c in 0..3 {
                suffix[k][c] = a * fwd.color[i][c] + (1.0 - a) * suffix[k + 1][c];
            }
        }

        let mut transmittance = 1.0;
        for k in 0..count {
            let i = start + k;
            let slot = fwd.sample_slot[i] as usize;
            let delta = deltas[ray * n_samples + slot];
            let a = fwd.alpha[i];
            let w = transmittance * a;

            let mut grad_alpha = 0.0;
            for c in 0..3 {
                grad_alpha += transmittance * (fwd.color[i][c] - suffix[k + 1][c]) * res[c];
            }
            // d(alpha)/d(sigma) = delta * exp(-sigma delta) = delta (1 - alpha)
            let grad_sigma = grad_alpha * delta * (1.0 - a);
            up_sigma[i] = grad_sigma * sigmoid(fwd.sigma_raw[i] + cfg.density_bias);
            for c in 0..3 {
                let col = fwd.color[i][c];
                up_rgb[i * 3 + c] = w * res[c] * col * (1.0 - col);
            }
            transmittance *= 1.0 - a;
        }
        start = end;
    }

    fields::eval_vjp_inside(
        params,
        decoder,
        &fwd.positions,
        fwd.cache.as_ref().expect("cache kept for backward"),
        &up_sigma,
        &up_rgb,
        &mut grad_params,
        &mut grad_decoder,
    );
    (grad_params, grad_decoder)
}

/// Full-frame backward: gradient of `sum_pixels residual . rendered_pixel`
/// w.r.t. field and decoder parameters, using the same sample set as
/// [`render`] under the same config.
pub fn render_vjp(
    params: &FieldParams,
    decoder: &DecoderHead,
    camera: &CameraView,
    cfg: &RenderConfig,
    residual: &Image,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (w, h) = (camera.image.width, camera.image.height);
    if residual.width != w || residual.height != h {
        return Err(Error::Contract(format!(
            "residual resolution {}x{} does not match camera {}x{}",
            residual.width, residual.height, w, h
        )));
    }
    let rays = generate_rays(camera, w, h)?;
    let residuals: Vec<[f64; 3]> = (0..rays.len())
        .map(|i| {
            [
                residual.data[i * 3],
                residual.data[i * 3 + 1],
                residual.data[i * 3 + 2],
            ]
        })
        .collect();
    render_rays_vjp(params, decoder, &rays, camera.near, camera.far, cfg, &residuals)
}

/// Mean over views of the per-view render MSE against each view's own image,
/// with exact gradients w.r.t. field and decoder parameters.
///
/// `rays_per_view > 0` subsamples that many rays per view (with replacement,
/// seeded by `ray_seed` and the view index) for minibatch training; 0 renders
/// full frames.
pub fn views_mse_vjp(
    params: &FieldParams,
    decoder: &DecoderHead,
    views: &[&CameraView],
    cfg: &RenderConfig,
    rays_per_view: usize,
    ray_seed: u64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    use rand::Rng;

    if views.is_empty() {
        return Err(Error::Contract("views_mse_vjp needs at least one view".into()));
    }
    let mut loss = 0.0;
    let mut grad_params = vec![0.0; params.len()];
    let mut grad_decoder = vec![0.0; decoder.params.len()];
    for (view_idx, camera) in views.iter().enumerate() {
        let (w, h) = (camera.image.width, camera.image.height);
        let full = generate_rays(camera, w, h)?;
        let (bundle, targets) = if rays_per_view == 0 || rays_per_view >= full.len() {
            let targets: Vec<[f64; 3]> = (0..full.len())
                .map(|i| {
                    [
                        camera.image.data[i * 3],
                        camera.image.data[i * 3 + 1],
                        camera.image.data[i * 3 + 2],
                    ]
                })
                .collect();
            (full, targets)
        } else {
            let mut rng = crate::rng::indexed_rng(ray_seed, "view_rays", view_idx as u64);
            let indices: Vec<usize> =
                (0..rays_per_view).map(|_| rng.gen_range(0..full.len())).collect();
            let targets: Vec<[f64; 3]> = indices
                .iter()
                .map(|&i| {
                    [
                        camera.image.data[i * 3],
                        camera.image.data[i * 3 + 1],
                        camera.image.data[i * 3 + 2],
                    ]
                })
                .collect();
            (full.select(&indices), targets)
        };
        let scale = 1.0 / (views.len() * bundle.len() * 3) as f64;
        let (l, gp, gd) = render_mse_rays_vjp(
            params,
            decoder,
            &bundle,
            camera.near,
            camera.far,
            cfg,
            &targets,
            scale,
        )?;
        loss += l;
        for (a, b) in grad_params.iter_mut().zip(&gp) {
            *a += b;
        }
        for (a, b) in grad_decoder.iter_mut().zip(&gd) {
            *a += b;
        }
    }
    Ok((loss, grad_params, grad_decoder))
}
