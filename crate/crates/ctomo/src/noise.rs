//! Counter-based random number generation for Poisson photon noise.
//!
//! Every detector pixel gets its own RNG stream derived purely from
//! `(seed, view, row, col)`, so the sample a pixel receives does not depend
//! on evaluation order or worker count. The construction is frozen as part
//! of the file-format contract: a given crate version must reproduce
//! identical noisy stacks for identical seeds.
//!
//! Stream construction: the four key components are absorbed one at a time
//! through the splitmix64 finalizer (`mix64` below, a bijection), starting
//! from `seed XOR` a domain tag. Draws then follow the splitmix64 sequence
//! from that state. Uniforms take the top 53 bits shifted into (0, 1], so
//! `ln(u)` is always finite.
//!
//! Poisson sampling uses exact CDF inversion for mean < 10 and Hörmann's
//! PTRS transformed-rejection method for mean ≥ 10. Both consume a variable
//! number of uniforms, which is fine: the stream is private to the pixel.

/// Domain separation tag for photon-noise streams ("poisson!" in ASCII).
const TAG_POISSON: u64 = 0x706f_6973_736f_6e21;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// splitmix64 finalizer; bijective on u64.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-pixel RNG stream, schedule-independent by construction.
#[derive(Debug, Clone)]
pub struct PixelRng {
    state: u64,
}

impl PixelRng {
    pub fn new(seed: u64, view: u64, row: u64, col: u64) -> Self {
        let mut h = mix64(seed ^ TAG_POISSON);
        h = mix64(h ^ view);
        h = mix64(h ^ row);
        h = mix64(h ^ col);
        Self { state: h }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform draw in (0, 1], 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
    }

    /// One Poisson(mean) sample.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        assert!(mean >= 0.0 && mean.is_finite(), "Poisson mean must be finite and >= 0");
        if mean == 0.0 {
            0
        } else if mean < 10.0 {
            self.poisson_inversion(mean)
        } else {
            self.poisson_ptrs(mean)
        }
    }

    /// Sequential CDF search. The cap bounds the loop when a draw lands in
    /// the last representable sliver of the CDF (probability ~2⁻⁵³).
    fn poisson_inversion(&mut self, mean: f64) -> u64 {
        let u = self.uniform();
        let mut k = 0u64;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u > cdf && k < 1024 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
        }
        k
    }

    /// Hörmann's PTRS transformed rejection (mean ≥ 10).
    fn poisson_ptrs(&mut self, mean: f64) -> u64 {
        let log_mean = mean.ln();
        let b = 0.931 + 2.53 * mean.sqrt();
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let v_r = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.uniform() - 0.5;
            let v = self.uniform();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
            if us >= 0.07 && v <= v_r {
                return k as u64;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
                <= k * log_mean - mean - ln_factorial(k as u64)
            {
                return k as u64;
            }
        }
    }
}

/// Exact ln(k!) for k ≤ 9.
const LN_FACTORIAL_SMALL: [f64; 10] = [
    0.0,
    0.0,
    0.6931471805599453,
    1.791759469228055,
    3.1780538303479456,
    4.787491742782046,
    6.579251212010101,
    8.525161361065415,
    10.60460290274525,
    12.80182748008147,
];

/// ln(k!): table below 10, Stirling series above (absolute error < 1e-10
/// for k ≥ 10, ample for the rejection comparison).
pub fn ln_factorial(k: u64) -> f64 {
    if k < 10 {
        return LN_FACTORIAL_SMALL[k as usize];
    }
    let x = k as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 0.918938... = ln(2π)/2
    (x + 0.5) * x.ln() - x
        + 0.9189385332046727
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_factorial_matches_reference() {
        // Frozen from a high-precision log-gamma evaluation.
        let cases = [
            (10u64, 15.104412573075515),
            (12, 19.987214495661886),
            (15, 27.899271383840892),
            (20, 42.335616460753485),
            (50, 148.47776695177303),
            (100, 363.7393755555635),
            (170, 706.5730622457873),
            (1000, 5912.128178488163),
        ];
        for (k, want) in cases {
            let got = ln_factorial(k);
            assert!(
                (got - want).abs() <= 1e-9 * want.max(1.0),
                "ln({k}!): {got} vs {want}"
            );
        }
        assert_eq!(ln_factorial(0), 0.0);
        assert!((ln_factorial(5) - 4.787491742782046).abs() < 1e-15);
    }

    #[test]
    fn streams_are_keyed_and_reproducible() {
        let mut a = PixelRng::new(7, 3, 120, 45);
        let mut b = PixelRng::new(7, 3, 120, 45);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        // Any key component change moves the stream.
        let first = PixelRng::new(7, 3, 120, 45).next_u64();
        assert_ne!(PixelRng::new(8, 3, 120, 45).next_u64(), first);
        assert_ne!(PixelRng::new(7, 4, 120, 45).next_u64(), first);
        assert_ne!(PixelRng::new(7, 3, 121, 45).next_u64(), first);
        assert_ne!(PixelRng::new(7, 3, 120, 46).next_u64(), first);
    }

    #[test]
    fn uniform_stays_in_half_open_unit_interval() {
        let mut rng = PixelRng::new(1, 2, 3, 4);
        let mut min = 1.0f64;
        let mut max = 0.0f64;
        for _ in 0..100_000 {
            let u = rng.uniform();
            assert!(u > 0.0 && u <= 1.0);
            min = min.min(u);
            max = max.max(u);
        }
        // 1e5 draws cover the interval well.
        assert!(min < 1e-4);
        assert!(max > 1.0 - 1e-4);
    }

    #[test]
    fn poisson_zero_mean_is_zero() {
        let mut rng = PixelRng::new(0, 0, 0, 0);
        for _ in 0..10 {
            assert_eq!(rng.poisson(0.0), 0);
        }
    }

    #[test]
    fn poisson_small_mean_matches_pmf() {
        // Empirical frequencies at mean 3 against the exact pmf, 200k draws.
        // Bound per bin: 5 sigma of the binomial count plus a small floor.
        let pmf = [
            0.04978706836786394,
            0.14936120510359183,
            0.22404180765538775,
            0.22404180765538775,
            0.1680313557415408,
            0.10081881344492448,
            0.05040940672246224,
            0.021604031452483818,
            0.008101511794681432,
            0.0027005039315604773,
            0.0008101511794681432,
            0.00022095032167312996,
        ];
        let n = 200_000u64;
        let mut counts = [0u64; 13];
        for i in 0..n {
            let mut rng = PixelRng::new(42, 0, (i >> 16) as u64, (i & 0xffff) as u64);
            let k = rng.poisson(3.0) as usize;
            counts[k.min(12)] += 1;
        }
        for (k, &p) in pmf.iter().enumerate() {
            let expect = p * n as f64;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            let got = counts[k] as f64;
            assert!(
                (got - expect).abs() <= 5.0 * sigma + 3.0,
                "pmf bin {k}: counted {got}, expected {expect} ± {sigma}"
            );
        }
    }

    #[test]
    fn poisson_large_mean_moments() {
        // PTRS branch: mean and variance at lambda = 1e5 over 4096 pixels.
        let lambda = 1e5;
        let n = 4096usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..n {
            let mut rng = PixelRng::new(9, 1, (i / 64) as u64, (i % 64) as u64);
            let k = rng.poisson(lambda) as f64;
            sum += k;
            sumsq += k * k;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        // 4 sigma on the sample mean; variance within 20% (chi-square spread).
        let sigma_mean = (lambda / n as f64).sqrt();
        assert!((mean - lambda).abs() <= 4.0 * sigma_mean, "mean {mean}");
        assert!((var - lambda).abs() <= 0.2 * lambda, "variance {var}");
    }

    #[test]
    fn poisson_branch_boundary_is_sane() {
        // Means straddling the inversion/PTRS switch give comparable stats.
        for lambda in [9.5, 10.5] {
            let n = 20_000usize;
            let mut sum = 0.0;
            for i in 0..n {
                let mut rng = PixelRng::new(5, 2, (i / 256) as u64, (i % 256) as u64);
                sum += rng.poisson(lambda) as f64;
            }
            let mean = sum / n as f64;
            let sigma = (lambda / n as f64).sqrt();
            assert!((mean - lambda).abs() <= 5.0 * sigma, "lambda {lambda}: mean {mean}");
        }
    }
}
