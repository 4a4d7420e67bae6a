//! Seed-deterministic random streams.
//!
//! All randomness flows from one root seed through named derivation
//! (`component:index`), and every sampler here is implemented explicitly on
//! top of the ChaCha8 stream so sequences are identical across platforms
//! and library versions. Poisson sampling uses CDF inversion below
//! lambda = 30 and PTRS transformed rejection above.

use rand_core::{RngCore, SeedableRng};

/// Stable hash for named substreams: `derive_seed(root, "thin", 3)` always
/// yields the same child seed.
pub fn derive_seed(root: u64, name: &str, index: u64) -> u64 {
    // FNV-1a over the name, then a splitmix64 finalizer.
    let mut h = root ^ 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^= index.wrapping_mul(0x9E3779B97F4A7C15);
    let mut z = h.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

pub struct RngStream {
    rng: rand_chacha::ChaCha8Rng,
    normal_cache: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
            normal_cache: None,
        }
    }

    pub fn derived(root: u64, name: &str, index: u64) -> Self {
        Self::new(derive_seed(root, name, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1), 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; safe as a log argument.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller (pairs cached).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.normal_cache.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.normal_cache = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Poisson(lambda): inversion (product of uniforms) for lambda < 30,
    /// PTRS transformed rejection otherwise.
    pub fn poisson(&mut self, lambda: f64) -> u64 {
        assert!(lambda >= 0.0 && lambda.is_finite());
        if lambda == 0.0 {
            return 0;
        }
        if lambda < 30.0 {
            let limit = (-lambda).exp();
            let mut count = 0u64;
            let mut product = self.uniform_open();
            while product > limit {
                count += 1;
                product *= self.uniform_open();
            }
            count
        } else {
            self.poisson_ptrs(lambda)
        }
    }

    // Hormann's PTRS rejection sampler; valid for lambda >= 10.
    fn poisson_ptrs(&mut self, lambda: f64) -> u64 {
        let slam = lambda.sqrt();
        let loglam = lambda.ln();
        let b = 0.931 + 2.53 * slam;
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let v_r = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.uniform() - 0.5;
            let v = self.uniform_open();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
            if us >= 0.07 && v <= v_r {
                return k as u64;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            if (v * inv_alpha / (a / (us * us) + b)).ln()
                <= -lambda + k * loglam - ln_factorial(k as u64)
            {
                return k as u64;
            }
        }
    }

    /// Binomial(n, p) by summed Bernoulli trials for small n and the
    /// geometric waiting-time method otherwise (O(n*p) expected work).
    pub fn binomial(&mut self, n: u64, p: f64) -> u64 {
        assert!((0.0..=1.0).contains(&p));
        if n == 0 || p == 0.0 {
            return 0;
        }
        if p == 1.0 {
            return n;
        }
        if p > 0.5 {
            return n - self.binomial(n, 1.0 - p);
        }
        if n <= 64 {
            let mut count = 0;
            for _ in 0..n {
                if self.uniform() < p {
                    count += 1;
                }
            }
            count
        } else {
            let log_q = (1.0 - p).ln();
            let mut successes = 0u64;
            let mut trials = 0u64;
            loop {
                let gap = (self.uniform_open().ln() / log_q).floor() as u64 + 1;
                trials = trials.saturating_add(gap);
                if trials > n {
                    return successes;
                }
                successes += 1;
            }
        }
    }
}

/// ln(k!) via Lanczos ln-gamma; exact table below 16.
pub fn ln_factorial(k: u64) -> f64 {
    const TABLE: [f64; 16] = [
        1.0,
        1.0,
        2.0,
        6.0,
        24.0,
        120.0,
        720.0,
        5040.0,
        40320.0,
        362880.0,
        3628800.0,
        39916800.0,
        479001600.0,
        6227020800.0,
        87178291200.0,
        1307674368000.0,
    ];
    if (k as usize) < TABLE.len() {
        TABLE[k as usize].ln()
    } else {
        ln_gamma(k as f64 + 1.0)
    }
}

/// Lanczos approximation (g = 7, 9 coefficients), |rel err| < 1e-10 for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derived_seeds_differ_by_name_and_index() {
        let s0 = derive_seed(7, "poisson", 0);
        assert_ne!(s0, derive_seed(7, "poisson", 1));
        assert_ne!(s0, derive_seed(7, "thin", 0));
        assert_ne!(s0, derive_seed(8, "poisson", 0));
        assert_eq!(s0, derive_seed(7, "poisson", 0));
    }

    #[test]
    fn ln_factorial_matches_direct_products() {
        let mut direct = 0.0f64;
        for k in 1..=40u64 {
            direct += (k as f64).ln();
            assert!((ln_factorial(k) - direct).abs() <= 1e-9 * direct.max(1.0));
        }
    }

    #[test]
    fn poisson_small_lambda_moments() {
        // lambda = 5 repeated 1e5 times: mean and variance within 5 sigma.
        let lambda = 5.0;
        let n = 100_000usize;
        let mut rng = RngStream::new(1234);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let k = rng.poisson(lambda) as f64;
            sum += k;
            sum_sq += k * k;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let mean_se = (lambda / n as f64).sqrt();
        assert!((mean - lambda).abs() <= 5.0 * mean_se, "mean {mean}");
        // Var(S^2) ~ (mu4 - sigma^4)/n with mu4 = lambda(1 + 3 lambda).
        let mu4 = lambda * (1.0 + 3.0 * lambda);
        let var_se = ((mu4 - lambda * lambda) / n as f64).sqrt();
        assert!((var - lambda).abs() <= 5.0 * var_se, "var {var}");
    }

    #[test]
    fn poisson_ptrs_moments() {
        let lambda = 250.0;
        let n = 40_000usize;
        let mut rng = RngStream::new(99);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let k = rng.poisson(lambda) as f64;
            sum += k;
            sum_sq += k * k;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let mean_se = (lambda / n as f64).sqrt();
        assert!((mean - lambda).abs() <= 5.0 * mean_se, "mean {mean}");
        let mu4 = lambda * (1.0 + 3.0 * lambda);
        let var_se = ((mu4 - lambda * lambda) / n as f64).sqrt();
        assert!((var - lambda).abs() <= 5.0 * var_se, "var {var}");
    }

    #[test]
    fn binomial_trivial_cases() {
        let mut rng = RngStream::new(5);
        assert_eq!(rng.binomial(10, 0.0), 0);
        assert_eq!(rng.binomial(10, 1.0), 10);
        assert_eq!(rng.binomial(0, 0.3), 0);
    }

    #[test]
    fn binomial_moments_small_and_large_n() {
        for (n_trials, p, reps, seed) in [(40u64, 0.125, 40_000usize, 11u64), (800_000, 0.125, 400, 12)] {
            let mut rng = RngStream::new(seed);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..reps {
                let k = rng.binomial(n_trials, p) as f64;
                sum += k;
                sum_sq += k * k;
            }
            let mean = sum / reps as f64;
            let expect = n_trials as f64 * p;
            let var_true = n_trials as f64 * p * (1.0 - p);
            let mean_se = (var_true / reps as f64).sqrt();
            assert!(
                (mean - expect).abs() <= 5.0 * mean_se,
                "n={n_trials}: mean {mean} vs {expect}"
            );
            let var = sum_sq / reps as f64 - mean * mean;
            // Loose factor-of-two check on the variance.
            assert!(var > 0.5 * var_true && var < 2.0 * var_true, "var {var} vs {var_true}");
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = RngStream::new(3);
        let n = 100_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let z = rng.normal();
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() <= 5.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() <= 5.0 * (2.0f64 / n as f64).sqrt());
    }
}
