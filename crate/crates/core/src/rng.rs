//! Counter-based random numbers.
//!
//! Every scalar drawn by the samplers is a pure function of
//! `(seed, stream, index)`, so the result does not depend on the order in
//! which entities are visited or on how work is split across threads.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Identifies an independent family of draws under one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stream {
    key: u64,
}

impl Stream {
    pub fn new(seed: u64, tag: u64) -> Self {
        let key = mix64(mix64(seed ^ GOLDEN).wrapping_add(tag.wrapping_mul(GOLDEN)));
        Stream { key }
    }

    /// Derives a sub-stream, e.g. one per layer.
    pub fn child(&self, sub: u64) -> Self {
        Stream {
            key: mix64(self.key ^ mix64(sub.wrapping_add(GOLDEN))),
        }
    }

    #[inline]
    pub fn bits(&self, index: u64) -> u64 {
        mix64(self.key.wrapping_add(mix64(index.wrapping_mul(GOLDEN) ^ 0x5851_f42d_4c95_7f2d)))
    }

    /// Uniform on (0, 1], 53 bits of resolution.
    #[inline]
    pub fn uniform(&self, index: u64) -> f64 {
        ((self.bits(index) >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Bernoulli(prob).
    #[inline]
    pub fn bernoulli(&self, index: u64, prob: f64) -> bool {
        self.uniform(index) <= prob
    }

    /// Uniform sign.
    #[inline]
    pub fn sign(&self, index: u64) -> f64 {
        if self.bits(index) >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Standard normal by Box-Muller on two keyed uniforms.
    #[inline]
    pub fn normal(&self, index: u64) -> f64 {
        let u1 = self.uniform(index.wrapping_mul(2));
        let u2 = self.uniform(index.wrapping_mul(2).wrapping_add(1));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_value() {
        let a = Stream::new(7, 3);
        let b = Stream::new(7, 3);
        for i in 0..100 {
            assert_eq!(a.bits(i), b.bits(i));
        }
        assert_ne!(Stream::new(7, 3).bits(0), Stream::new(8, 3).bits(0));
        assert_ne!(Stream::new(7, 3).bits(0), Stream::new(7, 4).bits(0));
        assert_ne!(a.child(1).bits(0), a.child(2).bits(0));
    }

    #[test]
    fn uniform_in_range_and_centered() {
        let s = Stream::new(1, 1);
        let n = 100_000;
        let mut sum = 0.0;
        for i in 0..n {
            let u = s.uniform(i);
            assert!(u > 0.0 && u <= 1.0);
            sum += u;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 3.0 * (1.0f64 / 12.0 / n as f64).sqrt() * 1.5);
    }

    #[test]
    fn normal_moments() {
        let s = Stream::new(2, 9);
        let n = 200_000u64;
        let (mut m1, mut m2) = (0.0, 0.0);
        for i in 0..n {
            let z = s.normal(i);
            m1 += z;
            m2 += z * z;
        }
        let nf = n as f64;
        assert!((m1 / nf).abs() < 4.0 / nf.sqrt());
        assert!((m2 / nf - 1.0).abs() < 4.0 * (2.0 / nf).sqrt());
    }
}
