//! Named, seeded RNG streams.
//!
//! Every stochastic choice in the pipeline draws from a stream derived from a
//! master seed and a purpose label ("dropout", "eps", ...). Streams are
//! independent ChaCha8 generators, so parallel code can open the stream it
//! needs without any draw-order coupling to other streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for the stream `name` under `master`.
pub fn stream_seed(master: u64, name: &str) -> u64 {
    mix(master ^ fnv1a(name.as_bytes()))
}

/// Seed for the `index`-th element of the stream `name` (per-ray, per-view...).
pub fn indexed_seed(master: u64, name: &str, index: u64) -> u64 {
    mix(stream_seed(master, name) ^ mix(index))
}

pub fn stream_rng(master: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, name))
}

pub fn indexed_rng(master: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(indexed_seed(master, name, index))
}

/// Standard normal draw via Box-Muller; deterministic given the rng state.
pub fn standard_normal<R: rand::Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Seeded choice of one index in `0..n`.
pub fn pick_index(master: u64, name: &str, index: u64, n: usize) -> usize {
    use rand::Rng;
    indexed_rng(master, name, index).gen_range(0..n)
}
