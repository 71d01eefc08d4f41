//! Small fully-connected networks with hand-written batched VJPs.
//!
//! Everything downstream (decoder heads, the MLP field kind, token denoisers
//! and backbones) is built from this one primitive, so the whole backward
//! pass of the pipeline stays an explicit VJP composition with no tape.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Layer widths `[input, hidden..., output]` plus the hidden activation.
/// The output layer is always linear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
    pub activation: Activation,
}

/// Per-layer post-activations cached by the forward pass; reused buffers so
/// hot loops do not reallocate.
#[derive(Debug, Default, Clone)]
pub struct MlpCache {
    /// `activations[l]` holds n x dims[l] values; index 0 is the input batch.
    activations: Vec<Vec<f64>>,
    n: usize,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("forward_batch not called")
    }
}

impl MlpSpec {
    pub fn new(dims: Vec<usize>, activation: Activation) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        MlpSpec { dims, activation }
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers())
            .map(|l| self.dims[l + 1] * self.dims[l] + self.dims[l + 1])
            .sum()
    }

    /// Xavier-uniform weights and zero biases, fully determined by the seed.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(self.param_count());
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_out * fan_in {
                params.push(rng.gen_range(-a..a));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        params
    }

    /// Offset of layer `l`'s weight block in the flat parameter vector.
    fn layer_offset(&self, layer: usize) -> usize {
        (0..layer)
            .map(|l| self.dims[l + 1] * self.dims[l] + self.dims[l + 1])
            .sum()
    }

    /// Zeroes the final layer's weights and biases; used for identity-at-init
    /// residual blocks.
    pub fn zero_last_layer(&self, params: &mut [f64]) {
        let last = self.n_layers() - 1;
        let off = self.layer_offset(last);
        let size = self.dims[last + 1] * self.dims[last] + self.dims[last + 1];
        for p in &mut params[off..off + size] {
            *p = 0.0;
        }
    }

    /// Forward pass over a batch of `n` rows, caching per-layer activations.
    pub fn forward_batch(&self, params: &[f64], inputs: &[f64], n: usize, cache: &mut MlpCache) {
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(inputs.len(), n * self.input_dim());

        cache.n = n;
        cache.activations.resize(self.dims.len(), Vec::new());
        cache.activations[0].clear();
        cache.activations[0].extend_from_slice(inputs);

        let mut offset = 0;
        for l in 0..self.n_layers() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let w = &params[offset..offset + dout * din];
            let b = &params[offset + dout * din..offset + dout * din + dout];
            offset += dout * din + dout;

            let (prev, rest) = cache.activations.split_at_mut(l + 1);
            let x = &prev[l];
            let out = &mut rest[0];
            out.clear();
            out.resize(n * dout, 0.0);

            let is_last = l + 1 == self.n_layers();
            for row in 0..n {
                let xr = &x[row * din..(row + 1) * din];
                let yr = &mut out[row * dout..(row + 1) * dout];
                for o in 0..dout {
                    let wr = &w[o * din..(o + 1) * din];
                    let mut acc = b[o];
                    for i in 0..din {
                        acc += wr[i] * xr[i];
                    }
                    yr[o] = if is_last { acc } else { self.activation.apply(acc) };
                }
            }
        }
    }

    /// Convenience single-row forward.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        let mut cache = MlpCache::default();
        self.forward_batch(params, input, 1, &mut cache);
        cache.output().to_vec()
    }

    /// Reverse pass: accumulates parameter gradients into `grad_params` and
    /// returns d(sum upstream . output)/d(inputs) via `grad_inputs`.
    ///
    /// `upstream` is n x output_dim; `grad_inputs` must hold n x input_dim.
    pub fn vjp_batch(
        &self,
        params: &[f64],
        cache: &MlpCache,
        upstream: &[f64],
        grad_params: &mut [f64],
        grad_inputs: &mut [f64],
    ) {
        let n = cache.n;
        debug_assert_eq!(upstream.len(), n * self.output_dim());
        debug_assert_eq!(grad_params.len(), self.param_count());
        debug_assert_eq!(grad_inputs.len(), n * self.input_dim());

        let mut delta = upstream.to_vec();
        let mut next_delta: Vec<f64> = Vec::new();

        for l in (0..self.n_layers()).rev() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let off = self.layer_offset(l);
            let w = &params[off..off + dout * din];
            let x = &cache.activations[l];

            next_delta.clear();
            next_delta.resize(n * din, 0.0);

            {
                let (gw, gb) = grad_params[off..off + dout * din + dout].split_at_mut(dout * din);
                for row in 0..n {
                    let dr = &delta[row * dout..(row + 1) * dout];
                    let xr = &x[row * din..(row + 1) * din];
                    let gxr = &mut next_delta[row * din..(row + 1) * din];
                    for o in 0..dout {
                        let d = dr[o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        let wr = &w[o * din..(o + 1) * din];
                        let gwr = &mut gw[o * din..(o + 1) * din];
                        for i in 0..din {
                            gwr[i] += d * xr[i];
                            gxr[i] += d * wr[i];
                        }
                    }
                }
            }

            if l > 0 {
                // Chain through the hidden activation of layer l-1's output.
                for (g, y) in next_delta.iter_mut().zip(x.iter()) {
                    *g *= self.activation.derivative_from_output(*y);
                }
                std::mem::swap(&mut delta, &mut next_delta);
            } else {
                grad_inputs.copy_from_slice(&next_delta);
            }
        }
    }
}

/// Sinusoidal embedding of a scalar (timestep or token index) into `dim`
/// values, alternating sin/cos over a geometric frequency ladder.
pub fn sinusoidal_embedding(value: f64, dim: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), dim);
    let half = dim / 2;
    for k in 0..half {
        let freq = (10_000f64).powf(-(k as f64) / half.max(1) as f64);
        out[2 * k] = (value * freq).sin();
        out[2 * k + 1] = (value * freq).cos();
    }
    if dim % 2 == 1 {
        out[dim - 1] = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_loss(spec: &MlpSpec, params: &[f64], inputs: &[f64], n: usize, cot: &[f64]) -> f64 {
        let mut cache = MlpCache::default();
        spec.forward_batch(params, inputs, n, &mut cache);
        cache.output().iter().zip(cot).map(|(y, c)| y * c).sum()
    }

    #[test]
    fn param_count_matches_layout() {
        let spec = MlpSpec::new(vec![3, 5, 4, 2], Activation::Tanh);
        assert_eq!(spec.param_count(), 3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(spec.init_params(1).len(), spec.param_count());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let spec = MlpSpec::new(vec![4, 8, 2], Activation::Relu);
        assert_eq!(spec.init_params(3), spec.init_params(3));
        assert_ne!(spec.init_params(3), spec.init_params(4));
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let spec = MlpSpec::new(vec![3, 6, 5, 2], Activation::Tanh);
        let params = spec.init_params(11);
        let n = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cot: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut cache = MlpCache::default();
        spec.forward_batch(&params, &inputs, n, &mut cache);
        let mut grad_p = vec![0.0; spec.param_count()];
        let mut grad_x = vec![0.0; inputs.len()];
        spec.vjp_batch(&params, &cache, &cot, &mut grad_p, &mut grad_x);

        let h = 1e-6;
        for idx in (0..params.len()).step_by(7) {
            let mut p = params.clone();
            p[idx] += h;
            let up = scalar_loss(&spec, &p, &inputs, n, &cot);
            p[idx] -= 2.0 * h;
            let dn = scalar_loss(&spec, &p, &inputs, n, &cot);
            let fd = (up - dn) / (2.0 * h);
            assert_relative_eq!(grad_p[idx], fd, max_relative = 1e-5, epsilon = 1e-9);
        }
        for idx in 0..inputs.len() {
            let mut x = inputs.clone();
            x[idx] += h;
            let up = scalar_loss(&spec, &params, &x, n, &cot);
            x[idx] -= 2.0 * h;
            let dn = scalar_loss(&spec, &params, &x, n, &cot);
            let fd = (up - dn) / (2.0 * h);
            assert_relative_eq!(grad_x[idx], fd, max_relative = 1e-5, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_last_layer_gives_zero_output() {
        let spec = MlpSpec::new(vec![3, 6, 3], Activation::Tanh);
        let mut params = spec.init_params(2);
        spec.zero_last_layer(&mut params);
        let y = spec.forward(&params, &[0.3, -0.2, 0.9]);
        assert_eq!(y, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn sinusoidal_embedding_layout() {
        let mut out = vec![0.0; 8];
        sinusoidal_embedding(0.0, 8, &mut out);
        for k in 0..4 {
            assert_eq!(out[2 * k], 0.0);
            assert_eq!(out[2 * k + 1], 1.0);
        }
    }
}
