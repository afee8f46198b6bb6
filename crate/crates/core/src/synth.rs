//! Seeded synthetic markets: each price reverts toward a linear trend line
//! with alpha-stable shocks.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::PriceTable;
use crate::stable::{stable_sample, StableParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_stocks: usize,
    pub n_days: usize,
    pub start_price: f64,
    /// Daily increment of the trend line, per stock.
    pub drift: f64,
    /// Fraction of the gap to the trend closed each day.
    pub reversion: f64,
    pub noise: StableParams,
    /// Shocks are clipped to this many scale units.
    pub clip: f64,
    pub start_date: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stocks: 3,
            n_days: 600,
            start_price: 100.0,
            drift: 0.1,
            reversion: 0.1,
            noise: StableParams {
                alpha: 1.7,
                beta: 0.0,
                mu: 0.0,
                sigma: 1.0,
            },
            clip: 20.0,
            start_date: NaiveDate::from_ymd_opt(2015, 1, 2).unwrap(),
        }
    }
}

/// `n` consecutive weekdays starting at (or after) `start`.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut day = start;
    while out.len() < n {
        if !matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(day);
        }
        day = day + Days::new(1);
    }
    out
}

/// `P_t = L_t + X_t` with trend `L_t = P_0 (1 + 0.1 k) + drift t` and
/// `X_{t+1} = (1 - reversion) X_t + shock`; prices are floored at 1.
pub fn synthetic_market(cfg: &SynthConfig, seed: u64) -> Result<PriceTable> {
    cfg.noise.validate()?;
    if cfg.n_stocks == 0 || cfg.n_days < 2 {
        return Err(Error::InvalidConfig("synthetic market needs a stock and two days".into()));
    }
    if !(0.0..=1.0).contains(&cfg.reversion) {
        return Err(Error::InvalidConfig("reversion must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = cfg.clip * cfg.noise.sigma;
    let close = (0..cfg.n_stocks)
        .map(|k| {
            let base = cfg.start_price * (1.0 + 0.1 * k as f64);
            let shocks = stable_sample(&cfg.noise, cfg.n_days, &mut rng);
            let mut x = 0.0;
            (0..cfg.n_days)
                .map(|t| {
                    if t > 0 {
                        x = (1.0 - cfg.reversion) * x + shocks[t].clamp(-bound, bound);
                    }
                    (base + cfg.drift * t as f64 + x).max(1.0)
                })
                .collect()
        })
        .collect();
    let tickers = (0..cfg.n_stocks).map(|k| format!("SYN{}", k + 1)).collect();
    PriceTable::from_closes(tickers, business_days(cfg.start_date, cfg.n_days), close)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_shaped() {
        let cfg = SynthConfig::default();
        let a = synthetic_market(&cfg, 4).unwrap();
        let b = synthetic_market(&cfg, 4).unwrap();
        assert_eq!(a.close, b.close);
        assert_eq!((a.n_tickers(), a.n_days()), (3, 600));
        assert!(a.close.iter().flatten().all(|&p| p >= 1.0));
        assert_ne!(a.close, synthetic_market(&cfg, 5).unwrap().close);
    }

    #[test]
    fn weekends_skipped() {
        let days = business_days(NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), 3);
        assert_eq!(days[1], NaiveDate::from_ymd_opt(2024, 1, 8).unwrap());
    }

    #[test]
    fn trend_dominates_over_long_runs() {
        let cfg = SynthConfig {
            n_days: 2000,
            ..SynthConfig::default()
        };
        let m = synthetic_market(&cfg, 1).unwrap();
        for s in &m.close {
            assert!(s[1999] > s[0] + 100.0);
        }
    }
}
