//! Performance statistics of a daily equity curve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRADING_DAYS: f64 = 252.0;

/// Ratios with a zero denominator, and stability on fewer than three
/// returns, are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub annualized_return: f64,
    pub cumulative_return: f64,
    pub annualized_volatility: f64,
    pub sharpe: Option<f64>,
    pub calmar: Option<f64>,
    pub stability: Option<f64>,
    pub max_drawdown: f64,
}

/// Column names in report order.
pub const METRIC_NAMES: [&str; 7] = [
    "annualized_return",
    "cumulative_return",
    "annualized_volatility",
    "sharpe",
    "calmar",
    "stability",
    "max_drawdown",
];

impl MetricsReport {
    pub fn values(&self) -> [Option<f64>; 7] {
        [
            Some(self.annualized_return),
            Some(self.cumulative_return),
            Some(self.annualized_volatility),
            self.sharpe,
            self.calmar,
            self.stability,
            Some(self.max_drawdown),
        ]
    }
}

pub fn daily_returns(curve: &[f64]) -> Vec<f64> {
    curve.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

pub fn max_drawdown(curve: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &v in curve {
        peak = peak.max(v);
        worst = worst.min(v / peak - 1.0);
    }
    worst
}

/// R^2 of an OLS line through `(t, ln(A_t / A_0))`.
fn stability(curve: &[f64]) -> Option<f64> {
    if curve.len() < 4 {
        return None;
    }
    let y: Vec<f64> = curve.iter().map(|v| (v / curve[0]).ln()).collect();
    let n = y.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (t, v) in y.iter().enumerate() {
        let dt = t as f64 - t_mean;
        let dy = v - y_mean;
        sxy += dt * dy;
        sxx += dt * dt;
        syy += dy * dy;
    }
    if syy == 0.0 {
        return None;
    }
    Some((sxy * sxy / (sxx * syy)).clamp(0.0, 1.0))
}

pub fn compute_metrics(curve: &[f64]) -> Result<MetricsReport> {
    if curve.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: curve.len(),
        });
    }
    if let Some(&v) = curve.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Parse(format!("equity values must be positive, found {v}")));
    }
    let returns = daily_returns(curve);
    let t = returns.len() as f64;
    let cumulative_return = (curve[curve.len() - 1] - curve[0]) / curve[0];
    let annualized_return = (1.0 + cumulative_return).powf(TRADING_DAYS / t) - 1.0;
    let annualized_volatility = if returns.len() > 1 {
        let mean = returns.iter().sum::<f64>() / t;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (t - 1.0);
        var.sqrt() * TRADING_DAYS.sqrt()
    } else {
        0.0
    };
    let mdd = max_drawdown(curve);
    Ok(MetricsReport {
        annualized_return,
        cumulative_return,
        annualized_volatility,
        sharpe: (annualized_volatility > 0.0).then(|| annualized_return / annualized_volatility),
        calmar: (mdd < 0.0).then(|| annualized_return / mdd.abs()),
        stability: stability(curve),
        max_drawdown: mdd,
    })
}
