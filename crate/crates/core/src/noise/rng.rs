//! Counter-based, splittable 64-bit generator used for all perturbation noise.
//!
//! The generator is SplitMix64 viewed as a counter-based function:
//!
//! ```text
//! name_hash = FNV-1a-64(utf8(tensor_name))
//! key       = mix64(seed ^ mix64(name_hash))
//! draw(c)   = mix64(key + (c + 1) * 0x9E3779B97F4A7C15)      (wrapping, c = 0, 1, 2, ...)
//! mix64(z)  : z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!             z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31
//! uniform   = (draw >> 11) * 2^-53                               in [0, 1)
//! ```
//!
//! Each tensor gets its own stream keyed by `(seed, name)`, so the noise a
//! tensor receives never depends on which other tensors exist or in what
//! order they are visited. This definition is frozen: golden tests replay it.

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// One tensor's noise stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseStream {
    key: u64,
    counter: u64,
}

impl NoiseStream {
    pub fn from_key(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Value at an arbitrary counter position, without advancing.
    #[inline]
    pub fn at(&self, counter: u64) -> u64 {
        mix64(self.key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.at(self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Derives the stream for one tensor from the global seed and its name.
pub fn derive_substream(seed: u64, tensor_name: &str) -> NoiseStream {
    NoiseStream::from_key(mix64(seed ^ mix64(fnv1a64(tensor_name.as_bytes()))))
}

/// Mixes two seeds into one; used to derive per-run seeds.
pub fn combine_seeds(a: u64, b: u64) -> u64 {
    mix64(a ^ mix64(b.wrapping_add(GOLDEN_GAMMA)))
}
