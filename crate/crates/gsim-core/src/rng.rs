//! Deterministic, hierarchically derivable random streams.
//!
//! Every source of randomness in the crate is an [`RngStream`] derived from
//! a master seed and a path of 32-bit indices. Identical `(seed, path)`
//! pairs always produce identical draw sequences, so population members,
//! Monte-Carlo repeats, trajectories, steps, and rules each get their own
//! independent, reproducible stream. Streams are single-owner: parallel
//! code derives children, it never shares a stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};

use crate::error::RngError;

/// splitmix64 finalizer; used to fold path elements into the key.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn fold(key: [u64; 2], elem: u64) -> [u64; 2] {
    let a = mix(key[0] ^ mix(elem.wrapping_add(0xa076_1d64_78bd_642f)));
    let b = mix(key[1].wrapping_add(mix(elem ^ 0xe703_7ed1_a0b4_28db)));
    [a ^ b.rotate_left(17), b ^ a.rotate_left(31)]
}

fn key_to_seed(key: [u64; 2]) -> [u8; 32] {
    let mut seed = [0u8; 32];
    let words = [
        mix(key[0]),
        mix(key[1]),
        mix(key[0] ^ 0x2545_f491_4f6c_dd1d),
        mix(key[1] ^ 0x9e6c_63d0_876a_90bd),
    ];
    for (i, w) in words.iter().enumerate() {
        seed[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
    }
    seed
}

/// A seedable counter-based random stream with hierarchical derivation.
#[derive(Debug, Clone)]
pub struct RngStream {
    key: [u64; 2],
    rng: ChaCha8Rng,
}

/// Builds the stream determined by `(master_seed, path)`.
pub fn derive_stream(master_seed: u64, path: &[u32]) -> RngStream {
    let mut key = [
        mix(master_seed ^ 0x853c_49e6_u64.rotate_left(32)),
        mix(master_seed.wrapping_mul(0xd1b5_4a32_d192_ed03) ^ 0x1405),
    ];
    for &p in path {
        key = fold(key, u64::from(p));
    }
    RngStream::from_key(key)
}

impl RngStream {
    fn from_key(key: [u64; 2]) -> RngStream {
        RngStream {
            key,
            rng: ChaCha8Rng::from_seed(key_to_seed(key)),
        }
    }

    /// Derives the child stream at `idx`; equivalent to appending `idx`
    /// to this stream's path. Independent of draws already consumed.
    pub fn child(&self, idx: u32) -> RngStream {
        RngStream::from_key(fold(self.key, u64::from(idx)))
    }

    /// Derives a bare 64-bit seed, for APIs that take a seed rather than
    /// a stream.
    pub fn derive_seed(&self, idx: u32) -> u64 {
        let k = fold(self.key, u64::from(idx));
        mix(k[0] ^ k[1].rotate_left(29))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform01(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform integer in `[lo, hi]` (inclusive).
    pub fn uniform_int(&mut self, lo: i64, hi: i64) -> i64 {
        if hi <= lo {
            return lo;
        }
        let span = (hi - lo + 1) as f64;
        let v = lo + (self.uniform01() * span) as i64;
        v.min(hi)
    }

    /// Binomial draw. Degenerate inputs (`n == 0`, `p == 0`, `p == 1`)
    /// return without consuming randomness so that callers which skip the
    /// draw entirely stay stream-compatible.
    pub fn binomial(&mut self, n: i64, p: f64) -> Result<u64, RngError> {
        if n < 0 {
            return Err(RngError::NegativeTrials(n));
        }
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(RngError::BadProbability(p));
        }
        let n = n as u64;
        if n == 0 || p == 0.0 {
            return Ok(0);
        }
        if p == 1.0 {
            return Ok(n);
        }
        let d = rand_distr::Binomial::new(n, p).expect("checked binomial args");
        Ok(d.sample(&mut self.rng))
    }

    /// Poisson draw; `rate == 0` returns 0 without consuming randomness.
    pub fn poisson(&mut self, rate: f64) -> Result<u64, RngError> {
        if !rate.is_finite() || rate < 0.0 {
            return Err(RngError::BadRate(rate));
        }
        if rate == 0.0 {
            return Ok(0);
        }
        let d = Poisson::new(rate).expect("checked poisson rate");
        let v: f64 = d.sample(&mut self.rng);
        Ok(v.max(0.0) as u64)
    }

    /// Normal draw; `stdev == 0` returns the mean without consuming
    /// randomness.
    pub fn normal(&mut self, mean: f64, stdev: f64) -> Result<f64, RngError> {
        if !stdev.is_finite() || stdev < 0.0 {
            return Err(RngError::BadStdev(stdev));
        }
        if !mean.is_finite() {
            return Err(RngError::BadRate(mean));
        }
        if stdev == 0.0 {
            return Ok(mean);
        }
        let d = Normal::new(mean, stdev).expect("checked normal args");
        Ok(d.sample(&mut self.rng))
    }

    /// Negative binomial with a mean/dispersion parameterization, drawn as
    /// a gamma-Poisson mixture: `lambda ~ Gamma(shape = k, scale = mean/k)`
    /// then `Poisson(lambda)`. Variance is `mean + mean^2 / k`.
    pub fn negative_binomial(&mut self, mean: f64, dispersion: f64) -> Result<u64, RngError> {
        if !mean.is_finite() || mean < 0.0 {
            return Err(RngError::BadRate(mean));
        }
        if !dispersion.is_finite() || dispersion <= 0.0 {
            return Err(RngError::BadDispersion(dispersion));
        }
        if mean == 0.0 {
            return Ok(0);
        }
        let gamma = Gamma::new(dispersion, mean / dispersion).expect("checked gamma args");
        let lambda: f64 = gamma.sample(&mut self.rng);
        self.poisson(lambda.max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seed_and_path_replay_exactly() {
        let mut a = derive_stream(7, &[1]);
        let mut b = derive_stream(7, &[1]);
        for _ in 0..100 {
            assert_eq!(a.uniform01().to_bits(), b.uniform01().to_bits());
        }
    }

    #[test]
    fn sibling_paths_diverge() {
        let mut a = derive_stream(7, &[1]);
        let mut b = derive_stream(7, &[2]);
        let differing = (0..100)
            .filter(|_| a.uniform01() != b.uniform01())
            .count();
        assert!(differing >= 95, "only {differing} of 100 draws differ");
    }

    #[test]
    fn child_matches_explicit_path() {
        let parent = derive_stream(99, &[3]);
        let mut via_child = parent.child(5).child(0);
        let mut via_path = derive_stream(99, &[3, 5, 0]);
        for _ in 0..20 {
            assert_eq!(via_child.uniform01(), via_path.uniform01());
        }
    }

    #[test]
    fn child_derivation_ignores_consumed_draws() {
        let mut a = derive_stream(1, &[]);
        let before = a.child(4).uniform01();
        for _ in 0..17 {
            a.uniform01();
        }
        assert_eq!(a.child(4).uniform01(), before);
    }

    #[test]
    fn binomial_degenerate_cases() {
        let mut s = derive_stream(0, &[]);
        assert_eq!(s.binomial(10, 1.0).unwrap(), 10);
        assert_eq!(s.binomial(10, 0.0).unwrap(), 0);
        assert_eq!(s.binomial(0, 0.5).unwrap(), 0);
        assert!(s.binomial(-1, 0.5).is_err());
        assert!(s.binomial(5, 1.5).is_err());
        assert!(s.binomial(5, f64::NAN).is_err());
    }

    #[test]
    fn poisson_zero_rate_consumes_nothing() {
        let mut a = derive_stream(3, &[]);
        let mut b = derive_stream(3, &[]);
        assert_eq!(a.poisson(0.0).unwrap(), 0);
        assert_eq!(a.uniform01(), b.uniform01());
        assert!(a.poisson(-1.0).is_err());
    }

    #[test]
    fn normal_zero_stdev_is_mean() {
        let mut s = derive_stream(4, &[]);
        assert_eq!(s.normal(2.5, 0.0).unwrap(), 2.5);
        assert!(s.normal(0.0, -1.0).is_err());
    }

    #[test]
    fn negative_binomial_mean_is_close() {
        let mut s = derive_stream(11, &[]);
        let n = 20_000;
        let mean = 6.0;
        let total: u64 = (0..n)
            .map(|_| s.negative_binomial(mean, 2.0).unwrap())
            .sum();
        let observed = total as f64 / n as f64;
        // var = mean + mean^2/k = 24, stderr ~ sqrt(24/20000) ~ 0.035
        assert!((observed - mean).abs() < 0.2, "observed mean {observed}");
        assert!(s.negative_binomial(1.0, 0.0).is_err());
    }

    #[test]
    fn uniform_int_covers_range() {
        let mut s = derive_stream(5, &[]);
        let mut seen = [false; 5];
        for _ in 0..200 {
            let v = s.uniform_int(10, 14);
            assert!((10..=14).contains(&v));
            seen[(v - 10) as usize] = true;
        }
        assert!(seen.iter().all(|&x| x));
    }
}
