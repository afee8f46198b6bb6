//! The trading MDP: integer share actions, sell-then-buy execution with
//! proportional transaction costs, and the change-in-net-asset reward.

use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{compute_indicators, IndicatorTable, PriceTable, N_INDICATORS};

pub const DEFAULT_INITIAL_BALANCE: f64 = 1e6;
pub const DEFAULT_H_MAX: i64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub initial_balance: f64,
    pub h_max: i64,
    pub cost_percentage: f64,
    /// Include the 7-per-stock indicator block in observations.
    pub use_indicators: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            initial_balance: DEFAULT_INITIAL_BALANCE,
            h_max: DEFAULT_H_MAX,
            cost_percentage: 0.001,
            use_indicators: true,
        }
    }
}

/// Observation length for `d` stocks: balance, prices, holdings and (optionally) 7 indicators each.
pub fn observation_dim(d: usize, with_indicators: bool) -> usize {
    1 + 2 * d + if with_indicators { N_INDICATORS * d } else { 0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub balance: f64,
    pub prices: Vec<f64>,
    pub holdings: Vec<i64>,
    /// Ticker-major, 7 values per stock.
    pub indicators: Vec<f64>,
    pub t: usize,
}

impl EnvState {
    pub fn n_stocks(&self) -> usize {
        self.prices.len()
    }

    /// Net asset value `B + P . W`.
    pub fn asset(&self) -> f64 {
        self.balance + self.prices.iter().zip(&self.holdings).map(|(p, &w)| p * w as f64).sum::<f64>()
    }

    pub fn observation(&self, with_indicators: bool) -> Vec<f64> {
        let mut obs = Vec::with_capacity(observation_dim(self.n_stocks(), with_indicators));
        obs.push(self.balance);
        obs.extend_from_slice(&self.prices);
        obs.extend(self.holdings.iter().map(|&w| w as f64));
        if with_indicators {
            obs.extend_from_slice(&self.indicators);
        }
        obs
    }

    /// Inverse of [`EnvState::observation`]. Without indicators the block is left empty.
    pub fn from_observation(obs: &[f64], d: usize, with_indicators: bool, t: usize) -> Result<Self> {
        let expected = observation_dim(d, with_indicators);
        if obs.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: obs.len(),
            });
        }
        Ok(Self {
            balance: obs[0],
            prices: obs[1..1 + d].to_vec(),
            holdings: obs[1 + d..1 + 2 * d].iter().map(|&w| w.round() as i64).collect(),
            indicators: if with_indicators { obs[1 + 2 * d..].to_vec() } else { Vec::new() },
            t,
        })
    }
}

/// Integer share orders; positive buys, negative sells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action(pub Vec<i64>);

/// Maps a policy output in `[-1, 1]^d` to share counts, truncating toward zero.
pub fn action_scale(raw: &[f64], h_max: i64) -> Action {
    Action(
        raw.iter()
            .map(|&r| {
                let r = if r.is_nan() { 0.0 } else { r.clamp(-1.0, 1.0) };
                (r * h_max as f64).trunc() as i64
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub executed: Vec<i64>,
    pub cost: f64,
}

/// Executes `action` at the current prices and marks the result to `next_prices`.
///
/// Sells are clamped to holdings and processed first; buys are then filled in
/// ascending stock order, each limited to what the remaining cash covers
/// including its own cost. The cost is charged on executed shares and paid from
/// cash, so the reward `Asset_{t+1} - Asset_t` is already net of it.
pub fn step(
    state: &EnvState,
    action: &Action,
    next_prices: &[f64],
    next_indicators: &[f64],
    cost_percentage: f64,
) -> StepResult {
    let d = state.n_stocks();
    debug_assert_eq!(action.0.len(), d);
    debug_assert_eq!(next_prices.len(), d);
    let mut cash = state.balance;
    let mut holdings = state.holdings.clone();
    let mut executed = vec![0i64; d];
    let mut cost = 0.0;

    for i in 0..d {
        let a = action.0[i];
        if a < 0 {
            let sell = (-a).min(holdings[i]);
            if sell > 0 {
                let value = state.prices[i] * sell as f64;
                let fee = value * cost_percentage;
                cash += value - fee;
                cost += fee;
                holdings[i] -= sell;
                executed[i] = -sell;
            }
        }
    }
    for i in 0..d {
        let a = action.0[i];
        if a > 0 {
            let unit = state.prices[i] * (1.0 + cost_percentage);
            let affordable = if unit > 0.0 { (cash / unit).floor().max(0.0) as i64 } else { 0 };
            let buy = a.min(affordable);
            if buy > 0 {
                let value = state.prices[i] * buy as f64;
                let fee = value * cost_percentage;
                cash = (cash - value - fee).max(0.0);
                cost += fee;
                holdings[i] += buy;
                executed[i] = buy;
            }
        }
    }

    let next_state = EnvState {
        balance: cash,
        prices: next_prices.to_vec(),
        holdings,
        indicators: next_indicators.to_vec(),
        t: state.t + 1,
    };
    let reward = next_state.asset() - state.asset();
    StepResult {
        next_state,
        reward,
        executed,
        cost,
    }
}

/// Anything that maps an observation to a raw action in `[-1, 1]^d`.
pub trait Policy {
    fn act(&self, obs: &[f64], rng: &mut dyn RngCore, deterministic: bool) -> Vec<f64>;
}

/// Uniform raw actions on `[-1, 1]^d`.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    pub n_stocks: usize,
}

impl Policy for RandomPolicy {
    fn act(&self, _obs: &[f64], rng: &mut dyn RngCore, _deterministic: bool) -> Vec<f64> {
        (0..self.n_stocks).map(|_| rng.random_range(-1.0..=1.0)).collect()
    }
}

/// Always returns the same raw action.
#[derive(Debug, Clone)]
pub struct ConstantPolicy(pub Vec<f64>);

impl Policy for ConstantPolicy {
    fn act(&self, _obs: &[f64], _rng: &mut dyn RngCore, _deterministic: bool) -> Vec<f64> {
        self.0.clone()
    }
}

/// Prices plus their indicators, addressed by day.
#[derive(Debug, Clone)]
pub struct Market {
    pub prices: PriceTable,
    pub indicators: IndicatorTable,
}

impl Market {
    pub fn new(prices: PriceTable) -> Self {
        let indicators = compute_indicators(&prices);
        Self { prices, indicators }
    }

    pub fn n_days(&self) -> usize {
        self.prices.n_days()
    }

    pub fn n_stocks(&self) -> usize {
        self.prices.n_tickers()
    }

    pub fn close_row(&self, day: usize) -> Vec<f64> {
        self.prices.close_row(day)
    }

    pub fn indicator_row(&self, day: usize) -> Vec<f64> {
        self.indicators.row(day)
    }

    /// Initial state at day `t0`; the day must have a successor.
    pub fn reset(&self, t0: usize, initial_balance: f64) -> Result<EnvState> {
        if t0 + 1 >= self.n_days() {
            return Err(Error::IndexOutOfRange {
                index: t0,
                len: self.n_days().saturating_sub(1),
            });
        }
        Ok(EnvState {
            balance: initial_balance,
            prices: self.close_row(t0),
            holdings: vec![0; self.n_stocks()],
            indicators: self.indicator_row(t0),
            t: t0,
        })
    }

    /// Steps `state` (at day `state.t`) into day `state.t + 1`.
    pub fn step(&self, state: &EnvState, action: &Action, cost_percentage: f64) -> Result<StepResult> {
        let next = state.t + 1;
        if next >= self.n_days() {
            return Err(Error::IndexOutOfRange {
                index: next,
                len: self.n_days(),
            });
        }
        Ok(step(
            state,
            action,
            &self.close_row(next),
            &self.indicator_row(next),
            cost_percentage,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub balance: f64,
    pub asset: f64,
    pub reward: f64,
    pub action: Vec<i64>,
}

/// Writes `t,B,asset,reward,action_1..action_d`.
pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = rows.first().map_or(0, |r| r.action.len());
    let mut header = vec!["t".to_string(), "B".into(), "asset".into(), "reward".into()];
    header.extend((1..=d).map(|i| format!("action_{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.t.to_string(), r.balance.to_string(), r.asset.to_string(), r.reward.to_string()];
        rec.extend(r.action.iter().map(i64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn one_stock(balance: f64, price: f64, holdings: i64) -> EnvState {
        EnvState {
            balance,
            prices: vec![price],
            holdings: vec![holdings],
            indicators: vec![0.0; 7],
            t: 0,
        }
    }

    #[test]
    fn buy_at_unchanged_price() {
        let r = step(&one_stock(1000.0, 10.0, 0), &Action(vec![5]), &[10.0], &[0.0; 7], 0.0);
        assert_eq!(r.next_state.balance, 950.0);
        assert_eq!(r.next_state.holdings, vec![5]);
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn buy_then_price_rises() {
        let r = step(&one_stock(1000.0, 10.0, 0), &Action(vec![5]), &[12.0], &[0.0; 7], 0.0);
        assert_eq!(r.next_state.asset(), 1010.0);
        assert_eq!(r.reward, 10.0);
    }

    #[test]
    fn sell_clamped_to_holdings_with_cost() {
        // Asset_t = 1030; 3 shares sold, cost 10 * 3 * 0.001 = 0.03
        let r = step(&one_stock(1000.0, 10.0, 3), &Action(vec![-5]), &[10.0], &[0.0; 7], 0.001);
        assert_eq!(r.executed, vec![-3]);
        assert!((r.cost - 0.03).abs() < 1e-12);
        assert!((r.next_state.balance - 1029.97).abs() < 1e-9);
        assert!((r.reward + 0.03).abs() < 1e-9);
    }

    #[test]
    fn buys_limited_by_cash() {
        let r = step(&one_stock(30.0, 10.0, 0), &Action(vec![5]), &[10.0], &[0.0; 7], 0.0);
        assert_eq!(r.executed, vec![3]);
        assert_eq!(r.next_state.holdings, vec![3]);
        assert!(r.next_state.balance >= 0.0);
    }

    #[test]
    fn greedy_buys_in_index_order() {
        let s = EnvState {
            balance: 100.0,
            prices: vec![10.0, 10.0],
            holdings: vec![0, 0],
            indicators: vec![],
            t: 0,
        };
        let r = step(&s, &Action(vec![8, 8]), &[10.0, 10.0], &[], 0.0);
        assert_eq!(r.executed, vec![8, 2]);
    }

    #[test]
    fn sells_fund_buys_in_same_step() {
        let s = EnvState {
            balance: 0.0,
            prices: vec![10.0, 5.0],
            holdings: vec![0, 10],
            indicators: vec![],
            t: 0,
        };
        let r = step(&s, &Action(vec![4, -10]), &[10.0, 5.0], &[], 0.0);
        assert_eq!(r.executed, vec![4, -10]);
        assert_eq!(r.next_state.balance, 10.0);
    }

    #[test]
    fn noop_is_neutral() {
        let r = step(&one_stock(500.0, 7.0, 4), &Action(vec![0]), &[7.0], &[0.0; 7], 0.01);
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.cost, 0.0);
    }

    #[test]
    fn scaling_truncates_toward_zero() {
        assert_eq!(action_scale(&[0.0], 100).0, vec![0]);
        assert_eq!(action_scale(&[1.0], 100).0, vec![100]);
        assert_eq!(action_scale(&[-0.349], 100).0, vec![-34]);
        assert_eq!(action_scale(&[3.0, -7.0], 100).0, vec![100, -100]);
    }

    fn market(days: usize, d: usize) -> Market {
        let start = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
        let dates = (0..days).map(|i| start + chrono::Days::new(i as u64)).collect();
        let closes = (0..d).map(|k| (0..days).map(|t| 10.0 + (k + t) as f64).collect()).collect();
        let tickers = (0..d).map(|k| format!("S{k}")).collect();
        Market::new(PriceTable::from_closes(tickers, dates, closes).unwrap())
    }

    #[test]
    fn reset_shape_and_bounds() {
        let m = market(5, 10);
        let s = m.reset(0, DEFAULT_INITIAL_BALANCE).unwrap();
        assert_eq!(s.observation(true).len(), 91);
        assert_eq!(observation_dim(10, false), 21);
        assert_eq!(s, m.reset(0, DEFAULT_INITIAL_BALANCE).unwrap());
        assert!(matches!(m.reset(4, 1e6), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn observation_round_trip() {
        let m = market(5, 3);
        let s = m.reset(2, 1234.5).unwrap();
        let back = EnvState::from_observation(&s.observation(true), 3, true, 2).unwrap();
        assert_eq!(back, s);
    }
}
