//! Deterministic pseudo-random streams.
//!
//! A SplitMix64 generator owned by the toolkit: seeded runs stay
//! bit-for-bit reproducible across dependency and toolchain updates, which
//! the checkpoint and panorama determinism contracts rely on.

use crate::scalar::Scalar;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct DeterministicRng {
    state: u64,
}

impl DeterministicRng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent substream keyed by `label`; does not advance `self`.
    pub fn fork(&self, label: u64) -> Self {
        Self::new(mix(self.state ^ label.wrapping_mul(GOLDEN).rotate_left(17)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform<T: Scalar>(&mut self, lo: T, hi: T) -> T {
        let u = T::from(self.next_f64()).unwrap();
        lo + (hi - lo) * u
    }

    /// Standard normal via Box-Muller.
    pub fn normal<T: Scalar>(&mut self) -> T {
        let u1 = 1.0 - self.next_f64(); // (0, 1], keeps the log finite
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        T::from(r * (2.0 * std::f64::consts::PI * u2).cos()).unwrap()
    }

    /// Uniform index in `0..n`. Modulo bias is irrelevant at desk scale.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be nonempty");
        (self.next_u64() % n as u64) as usize
    }
}
