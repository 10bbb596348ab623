//! Seed derivation for reproducible per-entity random streams.
//!
//! Every stochastic stage derives an independent ChaCha8 stream from a
//! master seed plus a key path (stage tag, scenario id, agent id, ...).
//! Same key -> same stream, on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Builder for a derived stream key. Parts are hashed with FNV-1a; a type
/// tag and terminator byte per part keep ("ab","c") distinct from ("a","bc").
#[derive(Clone, Copy, Debug)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(master_seed: u64) -> Self {
        let mut k = StreamKey(FNV_OFFSET);
        k.absorb(&master_seed.to_le_bytes());
        k
    }

    fn absorb(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn with_str(mut self, s: &str) -> Self {
        self.absorb(&[0x01]);
        self.absorb(s.as_bytes());
        self.absorb(&[0xff]);
        self
    }

    pub fn with_u64(mut self, v: u64) -> Self {
        self.absorb(&[0x02]);
        self.absorb(&v.to_le_bytes());
        self
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Standard normal via Box-Muller. Consumes two uniforms per sample.
pub fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    // 1 - u keeps the argument of ln strictly positive.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Poisson draw by Knuth's product method; fine for the small rates used here.
pub fn sample_poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u32 {
    use rand::Rng;
    if lambda <= 0.0 {
        return 0;
    }
    let limit = (-lambda).exp();
    let mut k = 0u32;
    let mut p = 1.0;
    loop {
        p *= rng.random::<f64>();
        if p <= limit || k > 10_000 {
            return k;
        }
        k += 1;
    }
}

/// Geometric draw with the given mean, support >= 1.
pub fn sample_geometric(rng: &mut ChaCha8Rng, mean: f64) -> u32 {
    use rand::Rng;
    if mean <= 1.0 {
        return 1;
    }
    let p = 1.0 / mean;
    let u: f64 = 1.0 - rng.random::<f64>();
    let len = (u.ln() / (1.0 - p).ln()).floor() + 1.0;
    len.clamp(1.0, 1_000_000.0) as u32
}
