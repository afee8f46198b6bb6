//! Alpha-stable laws for daily price changes: characteristic function,
//! Chambers-Mallows-Stuck sampling and McCulloch's quantile estimator.
//!
//! Parameters follow the S1 convention: for `alpha != 1`
//! `phi(u) = exp(i mu u - |sigma u|^alpha (1 - i beta sign(u) tan(pi alpha / 2)))`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Exp1, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl StableParams {
    pub fn new(alpha: f64, beta: f64, mu: f64, sigma: f64) -> Result<Self> {
        let p = Self { alpha, beta, mu, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::InvalidConfig(format!("alpha must lie in (0, 2], got {}", self.alpha)));
        }
        if !(-1.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!("beta must lie in [-1, 1], got {}", self.beta)));
        }
        if !(self.sigma >= 0.0) || !self.mu.is_finite() || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig("sigma must be finite and non-negative, mu finite".into()));
        }
        Ok(())
    }
}

/// `P[t+1] - P[t]`.
pub fn price_diff_series(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: prices.len(),
        });
    }
    Ok(prices.windows(2).map(|w| w[1] - w[0]).collect())
}

pub fn stable_char_fn(p: &StableParams, u: f64) -> Complex64 {
    if u == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let su = (p.sigma * u).abs();
    let sign = u.signum();
    let exponent = if p.alpha == 1.0 {
        Complex64::new(-su, -su * p.beta * (2.0 / PI) * sign * u.abs().ln() + p.mu * u)
    } else {
        let sa = su.powf(p.alpha);
        Complex64::new(-sa, sa * p.beta * sign * (PI * p.alpha / 2.0).tan() + p.mu * u)
    };
    exponent.exp()
}

/// Chambers-Mallows-Stuck draws.
pub fn stable_sample<R: Rng + ?Sized>(p: &StableParams, n: usize, rng: &mut R) -> Vec<f64> {
    let angle = Uniform::new(-FRAC_PI_2, FRAC_PI_2).expect("valid uniform bounds");
    (0..n)
        .map(|_| {
            let v: f64 = rng.sample(angle);
            let w: f64 = rng.sample(Exp1);
            p.sigma * standard_cms(p.alpha, p.beta, v, w) + location_shift(p)
        })
        .collect()
}

fn location_shift(p: &StableParams) -> f64 {
    if p.alpha == 1.0 && p.sigma > 0.0 {
        p.mu + 2.0 / PI * p.beta * p.sigma * p.sigma.ln()
    } else {
        p.mu
    }
}

/// Unit-scale, zero-location S1 variate from `v ~ U(-pi/2, pi/2)`, `w ~ Exp(1)`.
fn standard_cms(alpha: f64, beta: f64, v: f64, w: f64) -> f64 {
    if alpha == 1.0 {
        let a = FRAC_PI_2 + beta * v;
        return 2.0 / PI * (a * v.tan() - beta * (FRAC_PI_2 * w * v.cos() / a).ln());
    }
    let t = beta * (PI * alpha / 2.0).tan();
    let b = t.atan() / alpha;
    let s = (1.0 + t * t).powf(1.0 / (2.0 * alpha));
    s * (alpha * (v + b)).sin() / v.cos().powf(1.0 / alpha) * ((v - alpha * (v + b)).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Linear-interpolation percentile (`q` in `[0, 100]`) of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

const NU_ALPHA: [f64; 15] = [2.439, 2.5, 2.6, 2.7, 2.8, 3.0, 3.2, 3.5, 4.0, 5.0, 6.0, 8.0, 10.0, 15.0, 25.0];
const NU_BETA: [f64; 7] = [0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0];

/// alpha = psi_1(nu_alpha, nu_beta); rows follow `NU_ALPHA`, columns `NU_BETA`.
const ALPHA_TABLE: [[f64; 7]; 15] = [
    [2.000, 2.000, 2.000, 2.000, 2.000, 2.000, 2.000],
    [1.916, 1.924, 1.924, 1.924, 1.924, 1.924, 1.924],
    [1.808, 1.813, 1.829, 1.829, 1.829, 1.829, 1.829],
    [1.729, 1.730, 1.737, 1.745, 1.745, 1.745, 1.745],
    [1.664, 1.663, 1.663, 1.668, 1.676, 1.676, 1.676],
    [1.563, 1.560, 1.553, 1.548, 1.547, 1.547, 1.547],
    [1.484, 1.480, 1.471, 1.460, 1.448, 1.438, 1.438],
    [1.391, 1.386, 1.378, 1.364, 1.337, 1.318, 1.318],
    [1.279, 1.273, 1.266, 1.250, 1.210, 1.184, 1.150],
    [1.128, 1.121, 1.114, 1.101, 1.067, 1.027, 0.973],
    [1.029, 1.021, 1.014, 1.004, 0.974, 0.935, 0.874],
    [0.896, 0.892, 0.884, 0.883, 0.855, 0.823, 0.769],
    [0.818, 0.812, 0.806, 0.801, 0.780, 0.756, 0.691],
    [0.698, 0.695, 0.692, 0.689, 0.676, 0.656, 0.597],
    [0.593, 0.590, 0.588, 0.586, 0.579, 0.563, 0.513],
];

/// beta = psi_2(nu_alpha, nu_beta).
const BETA_TABLE: [[f64; 7]; 15] = [
    [0.0, 2.160, 1.000, 1.000, 1.000, 1.000, 1.000],
    [0.0, 1.592, 3.390, 1.000, 1.000, 1.000, 1.000],
    [0.0, 0.759, 1.800, 1.000, 1.000, 1.000, 1.000],
    [0.0, 0.482, 1.048, 1.694, 1.000, 1.000, 1.000],
    [0.0, 0.360, 0.760, 1.232, 2.229, 1.000, 1.000],
    [0.0, 0.253, 0.518, 0.823, 1.575, 1.000, 1.000],
    [0.0, 0.203, 0.410, 0.632, 1.244, 1.906, 1.000],
    [0.0, 0.165, 0.332, 0.499, 0.943, 1.560, 1.000],
    [0.0, 0.136, 0.271, 0.404, 0.689, 1.230, 2.195],
    [0.0, 0.109, 0.216, 0.323, 0.539, 0.827, 1.917],
    [0.0, 0.096, 0.190, 0.284, 0.472, 0.693, 1.759],
    [0.0, 0.082, 0.163, 0.243, 0.412, 0.601, 1.596],
    [0.0, 0.074, 0.147, 0.220, 0.377, 0.546, 1.482],
    [0.0, 0.064, 0.128, 0.191, 0.330, 0.478, 1.362],
    [0.0, 0.056, 0.112, 0.167, 0.285, 0.428, 1.274],
];

const ALPHA_GRID: [f64; 16] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0];
const BETA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// nu_c = psi_3(alpha, beta); rows follow `ALPHA_GRID`.
const NU_C_TABLE: [[f64; 5]; 16] = [
    [2.588, 3.073, 4.534, 6.636, 9.144],
    [2.337, 2.634, 3.542, 4.808, 6.247],
    [2.189, 2.392, 3.004, 3.844, 4.775],
    [2.098, 2.244, 2.676, 3.265, 3.912],
    [2.040, 2.149, 2.461, 2.886, 3.356],
    [2.000, 2.085, 2.311, 2.624, 2.973],
    [1.980, 2.040, 2.205, 2.435, 2.696],
    [1.965, 2.007, 2.125, 2.294, 2.491],
    [1.955, 1.984, 2.067, 2.188, 2.333],
    [1.946, 1.967, 2.022, 2.106, 2.211],
    [1.939, 1.952, 1.988, 2.045, 2.116],
    [1.933, 1.940, 1.962, 1.997, 2.043],
    [1.927, 1.930, 1.943, 1.961, 1.987],
    [1.921, 1.922, 1.927, 1.936, 1.947],
    [1.914, 1.915, 1.916, 1.918, 1.921],
    [1.908, 1.908, 1.908, 1.908, 1.908],
];

/// nu_zeta = psi_5(alpha, beta).
const NU_ZETA_TABLE: [[f64; 5]; 16] = [
    [0.0, -0.061, -0.279, -0.659, -1.198],
    [0.0, -0.078, -0.272, -0.581, -0.997],
    [0.0, -0.089, -0.262, -0.520, -0.853],
    [0.0, -0.096, -0.250, -0.469, -0.742],
    [0.0, -0.099, -0.237, -0.424, -0.652],
    [0.0, -0.098, -0.223, -0.380, -0.576],
    [0.0, -0.095, -0.208, -0.346, -0.508],
    [0.0, -0.090, -0.192, -0.310, -0.447],
    [0.0, -0.084, -0.173, -0.276, -0.390],
    [0.0, -0.075, -0.154, -0.241, -0.335],
    [0.0, -0.066, -0.134, -0.206, -0.283],
    [0.0, -0.056, -0.111, -0.170, -0.232],
    [0.0, -0.043, -0.088, -0.132, -0.179],
    [0.0, -0.030, -0.061, -0.092, -0.123],
    [0.0, -0.017, -0.032, -0.049, -0.064],
    [0.0, 0.000, 0.000, 0.000, 0.000],
];

/// Bracketing index and weight of `x` on an ascending grid, clamped to its ends.
fn locate(grid: &[f64], x: f64) -> (usize, f64) {
    let last = grid.len() - 1;
    if x <= grid[0] {
        return (0, 0.0);
    }
    if x >= grid[last] {
        return (last - 1, 1.0);
    }
    let i = grid.partition_point(|&g| g <= x) - 1;
    (i, (x - grid[i]) / (grid[i + 1] - grid[i]))
}

fn bilinear<const C: usize>(table: &[[f64; C]], rows: &[f64], cols: &[f64], r: f64, c: f64) -> f64 {
    let (i, wr) = locate(rows, r);
    let (j, wc) = locate(cols, c);
    let top = table[i][j] * (1.0 - wc) + table[i][j + 1] * wc;
    let bottom = table[i + 1][j] * (1.0 - wc) + table[i + 1][j + 1] * wc;
    top * (1.0 - wr) + bottom * wr
}

pub const MIN_FIT_SAMPLES: usize = 100;

/// McCulloch's quantile estimator. `alpha` is clipped to `[0.5, 2]`.
pub fn fit_stable(samples: &[f64]) -> Result<StableParams> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_FIT_SAMPLES,
            got: samples.len(),
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("stable fit input".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p| percentile(&sorted, p);
    let (p05, p25, p50, p75, p95) = (q(5.0), q(25.0), q(50.0), q(75.0), q(95.0));
    if p75 - p25 <= 0.0 || p95 - p05 <= 0.0 {
        return Err(Error::Degenerate("samples have zero interquartile range".into()));
    }
    let nu_alpha = (p95 - p05) / (p75 - p25);
    let nu_beta = (p95 + p05 - 2.0 * p50) / (p95 - p05);

    let (alpha, beta) = if nu_alpha >= NU_ALPHA[0] {
        let a = bilinear(&ALPHA_TABLE, &NU_ALPHA, &NU_BETA, nu_alpha, nu_beta.abs());
        let b = bilinear(&BETA_TABLE, &NU_ALPHA, &NU_BETA, nu_alpha, nu_beta.abs());
        (a.clamp(0.5, 2.0), (b * nu_beta.signum()).clamp(-1.0, 1.0))
    } else {
        (2.0, 0.0)
    };
    let nu_c = bilinear(&NU_C_TABLE, &ALPHA_GRID, &BETA_GRID, alpha, beta.abs());
    let nu_zeta = bilinear(&NU_ZETA_TABLE, &ALPHA_GRID, &BETA_GRID, alpha, beta.abs()) * beta.signum();
    let sigma = (p75 - p25) / nu_c;
    let zeta = p50 + sigma * nu_zeta;
    let mu = if alpha == 1.0 {
        zeta
    } else {
        zeta - beta * sigma * (PI * alpha / 2.0).tan()
    };
    Ok(StableParams { alpha, beta, mu, sigma })
}

/// Equal-width histogram: `(lower edge, upper edge, count, density)` per bin.
pub fn histogram(data: &[f64], bins: usize) -> Result<Vec<(f64, f64, usize, f64)>> {
    if data.is_empty() {
        return Err(Error::Empty("histogram data"));
    }
    if bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &x in data {
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = data.len() as f64;
    Ok(counts
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let a = lo + k as f64 * width;
            (a, a + width, c, c as f64 / (n * width))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn differences() {
        assert_eq!(price_diff_series(&[10.0, 11.0, 9.0]).unwrap(), vec![1.0, -2.0]);
        assert_eq!(price_diff_series(&[5.0; 4]).unwrap(), vec![0.0; 3]);
        assert!(price_diff_series(&[1.0]).is_err());
    }

    #[test]
    fn char_fn_closed_forms() {
        let g = stable_char_fn(&StableParams::new(2.0, 0.0, 0.0, 1.0).unwrap(), 1.0);
        assert!((g.re - (-1.0f64).exp()).abs() < 1e-12 && g.im.abs() < 1e-12);
        let c = stable_char_fn(&StableParams::new(1.0, 0.0, 0.0, 2.0).unwrap(), 1.0);
        assert!((c.re - (-2.0f64).exp()).abs() < 1e-12 && c.im.abs() < 1e-12);
        let p = StableParams::new(1.3, -0.4, 0.7, 1.5).unwrap();
        assert_eq!(stable_char_fn(&p, 0.0), Complex64::new(1.0, 0.0));
        for u in [-3.0, -0.2, 0.4, 5.0] {
            assert!(stable_char_fn(&p, u).norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn gaussian_reduction_variance() {
        let p = StableParams::new(2.0, 0.0, 1.0, 1.5).unwrap();
        let x = stable_sample(&p, 1_000_000, &mut rng(1));
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        assert!((v / (2.0 * 1.5 * 1.5) - 1.0).abs() < 0.02, "variance {v}");
    }

    #[test]
    fn symmetric_median_near_location() {
        let p = StableParams::new(1.5, 0.0, 2.0, 1.0).unwrap();
        let mut x = stable_sample(&p, 20_000, &mut rng(2));
        x.sort_by(f64::total_cmp);
        let med = percentile(&x, 50.0);
        // Standard error of the median: 1 / (2 f(mu) sqrt(n)), with f(mu) > 0.25 here.
        assert!((med - 2.0).abs() < 3.0 / (2.0 * 0.25 * (20_000f64).sqrt()));
    }

    #[test]
    fn fit_recovers_spec_example() {
        let p = StableParams::new(1.6, 0.0, 0.0, 0.5).unwrap();
        let f = fit_stable(&stable_sample(&p, 50_000, &mut rng(3))).unwrap();
        assert!((1.5..=1.7).contains(&f.alpha), "{f:?}");
        assert!(f.beta.abs() <= 0.15 && f.mu.abs() <= 0.05 && (0.45..=0.55).contains(&f.sigma), "{f:?}");
    }

    #[test]
    fn fit_gaussian() {
        let p = StableParams::new(2.0, 0.0, 0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
        let f = fit_stable(&stable_sample(&p, 50_000, &mut rng(4))).unwrap();
        assert!(f.alpha >= 1.9);
        assert!((f.sigma - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.05);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit_stable(&[1.0; 50]), Err(Error::TooFewSamples { .. })));
        assert!(matches!(fit_stable(&[1.0; 500]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn scipy_start_values() {
        // Quantiles chosen so both table lookups land on grid nodes:
        // nu_alpha = 3.0, nu_beta = 0 -> alpha 1.563, beta 0.
        let mut x: Vec<f64> = Vec::new();
        for i in 0..=1000 {
            let q = i as f64 / 1000.0;
            let v = if q <= 0.25 {
                -0.5 - (0.25 - q) / 0.20 * 1.0
            } else if q >= 0.75 {
                0.5 + (q - 0.75) / 0.20 * 1.0
            } else {
                (q - 0.5) * 2.0
            };
            x.push(v);
        }
        let f = fit_stable(&x).unwrap();
        assert!((f.alpha - 1.563).abs() < 1e-9, "{f:?}");
        assert!(f.beta.abs() < 1e-12);
        // c = IQR / psi_3(1.563, 0), interpolated between alpha 1.5 and 1.6.
        let nu_c = 1.939 + (1.933 - 1.939) * 0.63;
        assert!((f.sigma - 1.0 / nu_c).abs() < 1e-9);
    }

    #[test]
    fn histogram_counts() {
        let h = histogram(&[0.0, 0.1, 0.9, 1.0], 2).unwrap();
        assert_eq!(h.iter().map(|b| b.2).collect::<Vec<_>>(), vec![2, 2]);
        let area: f64 = h.iter().map(|b| b.3 * (b.1 - b.0)).sum();
        assert!((area - 1.0).abs() < 1e-12);
    }
}
