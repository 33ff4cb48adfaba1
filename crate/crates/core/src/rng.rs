//! Counter-based splittable random number generator.
//!
//! Every random draw in the crate is keyed by logical coordinates
//! (seed, purpose, index, ...) instead of a shared sequential state, so a
//! layer's initialization or a step's batch is independent of iteration
//! order, thread count, and resume point. The word function is the SplitMix64
//! finalizer applied twice, which is plenty for the statistical tests here
//! (moment checks at a few standard errors, not cryptography).

use crate::scalar::Scalar;

const GOLDEN: u64 = 0x9e3779b97f4a7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[inline]
fn mix2(key: u64, word: u64) -> u64 {
    mix(mix(key ^ word.wrapping_mul(GOLDEN)).wrapping_add(word))
}

/// A derived key in the split tree. Children are addressed by integer tags or
/// by name; equal paths always yield equal keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngKey {
    key: u64,
}

impl RngKey {
    pub fn from_seed(seed: u64) -> Self {
        Self { key: mix(seed.wrapping_add(GOLDEN)) }
    }

    pub fn child(&self, tag: u64) -> Self {
        Self { key: mix2(self.key, tag) }
    }

    /// Named split, for streams addressed by role ("init", "batch", ...).
    pub fn child_named(&self, name: &str) -> Self {
        let mut h = 0xcbf29ce484222325u64; // FNV-1a
        for b in name.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        self.child(h)
    }

    pub fn stream(&self) -> CounterRng {
        CounterRng { key: self.key, counter: 0, cached_gauss: None }
    }
}

/// Iterates the counter under a fixed key.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
    cached_gauss: Option<f64>,
}

impl CounterRng {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let w = mix2(self.key, self.counter);
        self.counter += 1;
        w
    }

    /// Uniform in `[0, 1)` with 53 bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `(0, 1]`, safe as a log argument.
    #[inline]
    fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64
    }

    /// Uniform integer in `[0, bound)` by rejection-free scaling; `bound`
    /// must be nonzero. Bias is < 2^-32 for the bounds used here.
    #[inline]
    pub fn next_below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }

    /// Standard Gaussian via Box-Muller. Consumes two counter words per
    /// pair; the second value is cached, so consumption stays deterministic.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.cached_gauss.take() {
            return z;
        }
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_gauss = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn next_gaussian_scalar<F: Scalar>(&mut self) -> F {
        F::of(self.next_gaussian())
    }

    /// Fisher-Yates permutation of `0..m`.
    pub fn permutation(&mut self, m: usize) -> Vec<usize> {
        let mut v: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            let j = self.next_below(i + 1);
            v.swap(i, j);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_path_same_stream() {
        let a = RngKey::from_seed(7).child_named("init").child(3);
        let b = RngKey::from_seed(7).child_named("init").child(3);
        let (mut sa, mut sb) = (a.stream(), b.stream());
        for _ in 0..16 {
            assert_eq!(sa.next_u64(), sb.next_u64());
        }
    }

    #[test]
    fn sibling_streams_differ() {
        let root = RngKey::from_seed(7);
        let a = root.child(0).stream().next_u64();
        let b = root.child(1).stream().next_u64();
        assert_ne!(a, b);
    }

    #[test]
    fn unit_uniform_bounds() {
        let mut s = RngKey::from_seed(1).stream();
        for _ in 0..1000 {
            let x = s.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn gaussian_moments_rough() {
        let mut s = RngKey::from_seed(11).stream();
        let n = 200_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            let z = s.next_gaussian();
            m1 += z;
            m2 += z * z;
        }
        m1 /= n as f64;
        m2 /= n as f64;
        assert!(m1.abs() < 0.01, "mean {m1}");
        assert!((m2 - 1.0).abs() < 0.02, "var {m2}");
    }

    #[test]
    fn permutation_is_bijection() {
        let mut s = RngKey::from_seed(3).stream();
        let p = s.permutation(100);
        let mut seen = vec![false; 100];
        for &i in &p {
            assert!(!seen[i]);
            seen[i] = true;
        }
    }
}
