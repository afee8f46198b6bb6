//! Pattern causality between price series by sign-signature voting.
//!
//! Both series are delay-embedded. For each time `t` the `k` nearest
//! neighbours of `M_X(t)` (at least `h` steps away from `t`) are cross-mapped
//! to `Y`, and the sign signature of their distance-weighted average is
//! compared with the signature of `M_X(t)`: identical is a positive vote,
//! exactly mirrored a negative one, anything else dark.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::PriceTable;

const WEIGHT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcConfig {
    pub embedding: usize,
    pub lag: usize,
    pub neighbors: usize,
    pub horizon: usize,
}

impl Default for PcConfig {
    fn default() -> Self {
        Self {
            embedding: 3,
            lag: 1,
            neighbors: 3,
            horizon: 1,
        }
    }
}

impl PcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding < 2 || self.lag == 0 || self.neighbors == 0 || self.horizon == 0 {
            return Err(Error::InvalidConfig(
                "pattern causality needs E >= 2 and positive lag, neighbours and horizon".into(),
            ));
        }
        Ok(())
    }

    pub fn min_length(&self) -> usize {
        (self.embedding - 1) * self.lag + self.horizon + self.neighbors + 1
    }
}

/// Vote fractions over all embedded time points; points whose own pattern is flat are not classified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Causality {
    pub positive: f64,
    pub negative: f64,
    pub dark: f64,
}

fn embed(x: &[f64], cfg: &PcConfig) -> Vec<Vec<f64>> {
    let span = (cfg.embedding - 1) * cfg.lag;
    (span..x.len())
        .map(|t| (0..cfg.embedding).map(|j| x[t - span + j * cfg.lag]).collect())
        .collect()
}

fn signature(v: &[f64]) -> Vec<i8> {
    v.windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            if d > 0.0 {
                1
            } else if d < 0.0 {
                -1
            } else {
                0
            }
        })
        .collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Strength of the influence of `x` on `y`.
pub fn pattern_causality(x: &[f64], y: &[f64], cfg: &PcConfig) -> Result<Causality> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < cfg.min_length() {
        return Err(Error::TooFewSamples {
            needed: cfg.min_length(),
            got: x.len(),
        });
    }
    for s in [x, y] {
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("causality input".into()));
        }
        if s.iter().all(|v| *v == s[0]) {
            return Err(Error::Degenerate("constant series has no patterns".into()));
        }
    }
    let mx = embed(x, cfg);
    let my = embed(y, cfg);
    let n = mx.len();
    let (mut pos, mut neg, mut dark) = (0usize, 0usize, 0usize);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for t in 0..n {
        let sx = signature(&mx[t]);
        if sx.iter().all(|&s| s == 0) {
            continue;
        }
        cand.clear();
        cand.extend((0..n).filter(|&u| u.abs_diff(t) >= cfg.horizon).map(|u| (dist2(&mx[t], &mx[u]), u)));
        let k = cfg.neighbors.min(cand.len());
        cand.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut pred = vec![0.0; cfg.embedding];
        let mut wsum = 0.0;
        for &(d2, u) in &cand[..k] {
            let w = 1.0 / (d2.sqrt() + WEIGHT_EPS);
            wsum += w;
            for (p, v) in pred.iter_mut().zip(&my[u]) {
                *p += w * v;
            }
        }
        for p in &mut pred {
            *p /= wsum;
        }
        let sy = signature(&pred);
        if sy == sx {
            pos += 1;
        } else if sy.iter().zip(&sx).all(|(a, b)| *a == -*b) {
            neg += 1;
        } else {
            dark += 1;
        }
    }
    let total = n as f64;
    Ok(Causality {
        positive: pos as f64 / total,
        negative: neg as f64 / total,
        dark: dark as f64 / total,
    })
}

/// `[i][j]` holds the influence of ticker `i` on ticker `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalityMatrix {
    pub tickers: Vec<String>,
    pub positive: Vec<Vec<f64>>,
    pub negative: Vec<Vec<f64>>,
    pub dark: Vec<Vec<f64>>,
}

/// Pattern causality on every ordered pair of first-differenced close series.
pub fn causality_matrix(prices: &PriceTable, cfg: &PcConfig) -> Result<CausalityMatrix> {
    let d = prices.n_tickers();
    if d < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: d });
    }
    let diffs: Vec<Vec<f64>> = prices.close.iter().map(|c| c.windows(2).map(|w| w[1] - w[0]).collect()).collect();
    let mut m = CausalityMatrix {
        tickers: prices.tickers.clone(),
        positive: vec![vec![0.0; d]; d],
        negative: vec![vec![0.0; d]; d],
        dark: vec![vec![0.0; d]; d],
    };
    for i in 0..d {
        for j in 0..d {
            let c = pattern_causality(&diffs[i], &diffs[j], cfg)?;
            m.positive[i][j] = c.positive;
            m.negative[i][j] = c.negative;
            m.dark[i][j] = c.dark;
        }
    }
    Ok(m)
}

/// Directed edges `i -> j` with `matrix[i][j] > theta`, `i != j`.
pub fn threshold_graph(matrix: &[Vec<f64>], theta: f64) -> Vec<Vec<bool>> {
    matrix
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().map(|(j, &v)| i != j && v > theta).collect())
        .collect()
}

/// `(from, to, weight)` for every edge of [`threshold_graph`].
pub fn edge_list(matrix: &[Vec<f64>], theta: f64) -> Vec<(usize, usize, f64)> {
    let adj = threshold_graph(matrix, theta);
    let mut out = Vec::new();
    for (i, row) in adj.iter().enumerate() {
        for (j, &e) in row.iter().enumerate() {
            if e {
                out.push((i, j, matrix[i][j]));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.sample(StandardNormal)).collect()
    }

    #[test]
    fn identity_is_positive() {
        let x = noise(1000, 1);
        let c = pattern_causality(&x, &x, &PcConfig::default()).unwrap();
        assert!(c.positive >= 0.9, "{c:?}");
        assert!(c.negative < 0.05);
    }

    #[test]
    fn mirror_is_negative() {
        let x = noise(1000, 2);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        let c = pattern_causality(&x, &y, &PcConfig::default()).unwrap();
        assert!(c.negative >= 0.9, "{c:?}");
        assert!(c.positive < 0.05);
    }

    #[test]
    fn fractions_bounded() {
        let c = pattern_causality(&noise(300, 3), &noise(300, 4), &PcConfig::default()).unwrap();
        for v in [c.positive, c.negative, c.dark] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(c.positive + c.negative + c.dark <= 1.0 + 1e-12);
    }

    #[test]
    fn input_errors() {
        let cfg = PcConfig::default();
        assert!(matches!(pattern_causality(&[1.0; 50], &noise(50, 0), &cfg), Err(Error::Degenerate(_))));
        assert!(matches!(pattern_causality(&noise(5, 0), &noise(5, 1), &cfg), Err(Error::TooFewSamples { .. })));
        assert!(pattern_causality(&noise(50, 0), &noise(40, 1), &cfg).is_err());
    }

    #[test]
    fn threshold_rules() {
        let m = vec![vec![0.9, 0.5], vec![0.2, 0.9]];
        assert_eq!(threshold_graph(&m, 1.0), vec![vec![false; 2]; 2]);
        assert_eq!(threshold_graph(&m, 0.0), vec![vec![false, true], vec![true, false]]);
        assert_eq!(threshold_graph(&m, 0.5), vec![vec![false, false], vec![false, false]]);
        assert_eq!(edge_list(&m, 0.3), vec![(0, 1, 0.5)]);
    }
}
