//! Trilinear (voxel) and bilinear (triplane) interpolation plus the
//! transposed scatter used by the query VJP.
//!
//! Layouts: voxel entry (ix, iy, iz, c) lives at ((ix*R + iy)*R + iz)*C + c;
//! triplane entry (plane, iu, iv, c) at ((plane*P + iu)*P + iv)*C + c with
//! planes 0=xy, 1=xz, 2=yz.

use super::{FieldKind, FieldParams};

/// Continuous grid coordinate of `x` on an axis with `res` nodes spanning
/// [lo, hi], plus the lower node index and fraction.
#[inline]
fn grid_coord(x: f64, lo: f64, hi: f64, res: usize) -> (usize, f64) {
    let u = (x - lo) / (hi - lo) * (res - 1) as f64;
    let mut i = u.floor() as isize;
    if i < 0 {
        i = 0;
    }
    if i > res as isize - 2 {
        i = res as isize - 2;
    }
    (i as usize, u - i as f64)
}

/// Corner indices and weights of the trilinear stencil at `p`.
/// Weights are non-negative and sum to one for in-bounds points.
pub(super) fn trilinear_stencil(
    p: [f64; 3],
    lo: [f64; 3],
    hi: [f64; 3],
    res: usize,
) -> ([usize; 8], [f64; 8]) {
    let (ix, fx) = grid_coord(p[0], lo[0], hi[0], res);
    let (iy, fy) = grid_coord(p[1], lo[1], hi[1], res);
    let (iz, fz) = grid_coord(p[2], lo[2], hi[2], res);
    let mut cells = [0usize; 8];
    let mut weights = [0f64; 8];
    for corner in 0..8 {
        let (dx, dy, dz) = (corner >> 2 & 1, corner >> 1 & 1, corner & 1);
        cells[corner] = ((ix + dx) * res + (iy + dy)) * res + (iz + dz);
        weights[corner] = (if dx == 1 { fx } else { 1.0 - fx })
            * (if dy == 1 { fy } else { 1.0 - fy })
            * (if dz == 1 { fz } else { 1.0 - fz });
    }
    (cells, weights)
}

/// Corner indices and weights of one plane's bilinear stencil.
pub(super) fn bilinear_stencil(
    u: f64,
    v: f64,
    lo: [f64; 2],
    hi: [f64; 2],
    res: usize,
) -> ([usize; 4], [f64; 4]) {
    let (iu, fu) = grid_coord(u, lo[0], hi[0], res);
    let (iv, fv) = grid_coord(v, lo[1], hi[1], res);
    let mut cells = [0usize; 4];
    let mut weights = [0f64; 4];
    for corner in 0..4 {
        let (du, dv) = (corner >> 1 & 1, corner & 1);
        cells[corner] = (iu + du) * res + (iv + dv);
        weights[corner] = (if du == 1 { fu } else { 1.0 - fu })
            * (if dv == 1 { fv } else { 1.0 - fv });
    }
    (cells, weights)
}

/// Axis pairs sampled by each plane: xy, xz, yz.
const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Interpolated features for in-bounds positions, n x C row-major.
pub(super) fn interpolate(params: &FieldParams, positions: &[[f64; 3]]) -> Vec<f64> {
    let bounds = params.spec.bounds;
    match params.spec.kind {
        FieldKind::Voxel {
            resolution,
            channels,
        } => {
            let mut out = vec![0.0; positions.len() * channels];
            for (row, &p) in positions.iter().enumerate() {
                let (cells, weights) = trilinear_stencil(p, bounds.min, bounds.max, resolution);
                let dst = &mut out[row * channels..(row + 1) * channels];
                for corner in 0..8 {
                    let w = weights[corner];
                    if w == 0.0 {
                        continue;
                    }
                    let src = &params.data[cells[corner] * channels..(cells[corner] + 1) * channels];
                    for c in 0..channels {
                        dst[c] += w * src[c];
                    }
                }
            }
            out
        }
        FieldKind::Triplane {
            resolution,
            channels,
        } => {
            let plane_stride = resolution * resolution;
            let mut out = vec![0.0; positions.len() * channels];
            for (row, &p) in positions.iter().enumerate() {
                let dst = &mut out[row * channels..(row + 1) * channels];
                for (plane, &(au, av)) in PLANE_AXES.iter().enumerate() {
                    let (cells, weights) = bilinear_stencil(
                        p[au],
                        p[av],
                        [bounds.min[au], bounds.min[av]],
                        [bounds.max[au], bounds.max[av]],
                        resolution,
                    );
                    for corner in 0..4 {
                        let w = weights[corner];
                        if w == 0.0 {
                            continue;
                        }
                        let cell = plane * plane_stride + cells[corner];
                        let src = &params.data[cell * channels..(cell + 1) * channels];
                        for c in 0..channels {
                            dst[c] += w * src[c];
                        }
                    }
                }
            }
            out
        }
        FieldKind::Mlp { .. } => unreachable!("MLP fields are not interpolated"),
    }
}

/// Transpose of [`interpolate`]: routes per-sample feature gradients back to
/// the grid entries with the same stencil weights.
///
/// `grad_rows` is n x `row_stride`; the feature gradient occupies the first
/// `channels` entries of each row (the remainder belongs to e.g. direction
/// inputs of the decoder and is ignored here).
pub(super) fn scatter(
    params: &FieldParams,
    positions: &[[f64; 3]],
    grad_rows: &[f64],
    row_stride: usize,
    channels: usize,
    grad_params: &mut [f64],
) {
    let bounds = params.spec.bounds;
    match params.spec.kind {
        FieldKind::Voxel { resolution, .. } => {
            for (row, &p) in positions.iter().enumerate() {
                let (cells, weights) = trilinear_stencil(p, bounds.min, bounds.max, resolution);
                let g = &grad_rows[row * row_stride..row * row_stride + channels];
                for corner in 0..8 {
                    let w = weights[corner];
                    if w == 0.0 {
                        continue;
                    }
                    let dst =
                        &mut grad_params[cells[corner] * channels..(cells[corner] + 1) * channels];
                    for c in 0..channels {
                        dst[c] += w * g[c];
                    }
                }
            }
        }
        FieldKind::Triplane { resolution, .. } => {
            let plane_stride = resolution * resolution;
            for (row, &p) in positions.iter().enumerate() {
                let g = &grad_rows[row * row_stride..row * row_stride + channels];
                for (plane, &(au, av)) in PLANE_AXES.iter().enumerate() {
                    let (cells, weights) = bilinear_stencil(
                        p[au],
                        p[av],
                        [bounds.min[au], bounds.min[av]],
                        [bounds.max[au], bounds.max[av]],
                        resolution,
                    );
                    for corner in 0..4 {
                        let w = weights[corner];
                        if w == 0.0 {
                            continue;
                        }
                        let cell = plane * plane_stride + cells[corner];
                        let dst = &mut grad_params[cell * channels..(cell + 1) * channels];
                        for c in 0..channels {
                            dst[c] += w * g[c];
                        }
                    }
                }
            }
        }
        FieldKind::Mlp { .. } => unreachable!("MLP fields are not interpolated"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn trilinear_weights_partition_unity(
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0, res in 2usize..9
        ) {
            let (_, w) = trilinear_stencil([x, y, z], [-1.0; 3], [1.0; 3], res);
            prop_assert!(w.iter().all(|&wi| wi >= 0.0));
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn bilinear_weights_partition_unity(
            u in -1.0f64..1.0, v in -1.0f64..1.0, res in 2usize..17
        ) {
            let (_, w) = bilinear_stencil(u, v, [-1.0; 2], [1.0; 2], res);
            prop_assert!(w.iter().all(|&wi| wi >= 0.0));
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_points_stay_in_range() {
        // Exactly on the upper bound the stencil must still index valid cells.
        let (cells, w) = trilinear_stencil([1.0, 1.0, 1.0], [-1.0; 3], [1.0; 3], 4);
        assert!(cells.iter().all(|&c| c < 64));
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn voxel_index_round_trip() {
        // The flat layout is a bijection between (ix, iy, iz, c) and indices.
        let (r, c) = (4usize, 3usize);
        let mut seen = vec![false; r * r * r * c];
        for ix in 0..r {
            for iy in 0..r {
                for iz in 0..r {
                    for ch in 0..c {
                        let idx = ((ix * r + iy) * r + iz) * c + ch;
                        assert!(!seen[idx]);
                        seen[idx] = true;
                        // Invert.
                        let ch2 = idx % c;
                        let cell = idx / c;
                        let iz2 = cell % r;
                        let iy2 = (cell / r) % r;
                        let ix2 = cell / (r * r);
                        assert_eq!((ix2, iy2, iz2, ch2), (ix, iy, iz, ch));
                    }
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}
