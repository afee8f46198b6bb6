//! OHLCV ingestion, the seven technical indicators, turnover ranking and
//! train/validation/test splitting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_INDICATORS: usize = 7;

/// Column names of the indicator block, in storage order.
pub const INDICATOR_NAMES: [&str; N_INDICATORS] =
    ["macd", "sma30", "sma60", "boll", "rsi", "cci", "adx"];

const CSV_COLUMNS: [&str; 7] = ["date", "ticker", "open", "high", "low", "close", "volume"];

/// Aligned daily prices. Every per-ticker vector is indexed by day.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub open: Vec<Vec<f64>>,
    pub high: Vec<Vec<f64>>,
    pub low: Vec<Vec<f64>>,
    pub close: Vec<Vec<f64>>,
    pub volume: Vec<Vec<f64>>,
    pub shares_outstanding: Vec<Option<f64>>,
}

impl PriceTable {
    /// A close-only table (open = high = low = close, zero volume).
    pub fn from_closes(tickers: Vec<String>, dates: Vec<NaiveDate>, close: Vec<Vec<f64>>) -> Result<Self> {
        let n = tickers.len();
        let table = Self {
            open: close.clone(),
            high: close.clone(),
            low: close.clone(),
            volume: close.iter().map(|c| vec![0.0; c.len()]).collect(),
            shares_outstanding: vec![None; n],
            tickers,
            dates,
            close,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn close_row(&self, day: usize) -> Vec<f64> {
        self.close.iter().map(|c| c[day]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n_days = self.dates.len();
        if self.dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parse("dates must be strictly increasing".into()));
        }
        for series in [&self.open, &self.high, &self.low, &self.close, &self.volume] {
            if series.len() != self.tickers.len() || series.iter().any(|s| s.len() != n_days) {
                return Err(Error::Parse("price arrays do not match tickers x dates".into()));
            }
        }
        if self.shares_outstanding.len() != self.tickers.len() {
            return Err(Error::Parse("shares_outstanding length differs from tickers".into()));
        }
        for (k, series) in self.close.iter().enumerate() {
            if let Some((t, &v)) = series.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
                return Err(Error::NonPositiveClose {
                    ticker: self.tickers[k].clone(),
                    date: self.dates[t].to_string(),
                    value: v,
                });
            }
        }
        Ok(())
    }

    /// Rows `range` of every series.
    pub fn slice(&self, range: Range<usize>) -> PriceTable {
        let cut = |v: &Vec<Vec<f64>>| v.iter().map(|s| s[range.clone()].to_vec()).collect();
        PriceTable {
            tickers: self.tickers.clone(),
            dates: self.dates[range.clone()].to_vec(),
            open: cut(&self.open),
            high: cut(&self.high),
            low: cut(&self.low),
            close: cut(&self.close),
            volume: cut(&self.volume),
            shares_outstanding: self.shares_outstanding.clone(),
        }
    }

    /// Keeps only the listed tickers, in the listed order.
    pub fn select(&self, tickers: &[String]) -> Result<PriceTable> {
        let idx: Vec<usize> = tickers
            .iter()
            .map(|t| {
                self.tickers
                    .iter()
                    .position(|x| x == t)
                    .ok_or_else(|| Error::UnknownTicker(t.clone()))
            })
            .collect::<Result<_>>()?;
        let pick = |v: &Vec<Vec<f64>>| idx.iter().map(|&i| v[i].clone()).collect();
        Ok(PriceTable {
            tickers: tickers.to_vec(),
            dates: self.dates.clone(),
            open: pick(&self.open),
            high: pick(&self.high),
            low: pick(&self.low),
            close: pick(&self.close),
            volume: pick(&self.volume),
            shares_outstanding: idx.iter().map(|&i| self.shares_outstanding[i]).collect(),
        })
    }
}

#[derive(Debug, Deserialize)]
struct OhlcvRecord {
    date: String,
    ticker: String,
    open: f64,
    high: f64,
    low: f64,
    close: Option<f64>,
    volume: f64,
    #[serde(default)]
    shares_outstanding: Option<f64>,
}

struct DayRow {
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    volume: f64,
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| Error::Parse(format!("date {s:?}: {e}")))
}

/// Reads `date,ticker,open,high,low,close,volume[,shares_outstanding]`.
///
/// An empty `tickers` list selects every ticker in the file (in order of first
/// appearance). Dates missing for any selected ticker are dropped.
pub fn load_ohlcv(
    path: &Path,
    tickers: &[String],
    date_range: Option<(NaiveDate, NaiveDate)>,
) -> Result<PriceTable> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let schema_ok = names.len() >= CSV_COLUMNS.len()
        && names[..CSV_COLUMNS.len()] == CSV_COLUMNS
        && (names.len() == CSV_COLUMNS.len()
            || (names.len() == CSV_COLUMNS.len() + 1 && names[7] == "shares_outstanding"));
    if !schema_ok {
        return Err(Error::Parse(format!(
            "unexpected header {names:?}; expected date,ticker,open,high,low,close,volume[,shares_outstanding]"
        )));
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, BTreeMap<NaiveDate, DayRow>> = HashMap::new();
    let mut shares: HashMap<String, f64> = HashMap::new();
    let mut missing_close: Vec<(String, NaiveDate)> = Vec::new();
    for rec in reader.deserialize::<OhlcvRecord>() {
        let rec = rec?;
        let date = parse_date(&rec.date)?;
        if let Some((lo, hi)) = date_range {
            if date < lo || date > hi {
                continue;
            }
        }
        if !rows.contains_key(&rec.ticker) {
            order.push(rec.ticker.clone());
        }
        let series = rows.entry(rec.ticker.clone()).or_default();
        if let Some(s) = rec.shares_outstanding {
            shares.insert(rec.ticker.clone(), s);
        }
        match rec.close {
            Some(close) => {
                series.insert(
                    date,
                    DayRow {
                        open: rec.open,
                        high: rec.high,
                        low: rec.low,
                        close,
                        volume: rec.volume,
                    },
                );
            }
            None => missing_close.push((rec.ticker, date)),
        }
    }

    let selected: Vec<String> = if tickers.is_empty() {
        order
    } else {
        for t in tickers {
            if !rows.contains_key(t) {
                return Err(Error::UnknownTicker(t.clone()));
            }
        }
        tickers.to_vec()
    };
    if let Some((t, d)) = missing_close.iter().find(|(t, _)| selected.contains(t)) {
        return Err(Error::MissingClose {
            ticker: t.clone(),
            date: d.to_string(),
        });
    }

    let mut common: Option<BTreeSet<NaiveDate>> = None;
    for t in &selected {
        let dates: BTreeSet<NaiveDate> = rows[t].keys().copied().collect();
        common = Some(match common {
            None => dates,
            Some(c) => c.intersection(&dates).copied().collect(),
        });
    }
    let dates: Vec<NaiveDate> = common.unwrap_or_default().into_iter().collect();
    if dates.is_empty() {
        return Err(Error::EmptyAlignment);
    }

    let mut table = PriceTable {
        tickers: selected.clone(),
        dates: dates.clone(),
        open: Vec::new(),
        high: Vec::new(),
        low: Vec::new(),
        close: Vec::new(),
        volume: Vec::new(),
        shares_outstanding: selected.iter().map(|t| shares.get(t).copied()).collect(),
    };
    for t in &selected {
        let series = &rows[t];
        let day = |d: &NaiveDate| &series[d];
        table.open.push(dates.iter().map(|d| day(d).open).collect());
        table.high.push(dates.iter().map(|d| day(d).high).collect());
        table.low.push(dates.iter().map(|d| day(d).low).collect());
        table.close.push(dates.iter().map(|d| day(d).close).collect());
        table.volume.push(dates.iter().map(|d| day(d).volume).collect());
    }
    table.validate()?;
    Ok(table)
}

/// Writes a table in the ingestion CSV schema.
pub fn write_ohlcv(path: &Path, prices: &PriceTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let with_shares = prices.shares_outstanding.iter().all(Option::is_some);
    let mut header: Vec<&str> = CSV_COLUMNS.to_vec();
    if with_shares {
        header.push("shares_outstanding");
    }
    w.write_record(&header)?;
    for t in 0..prices.n_days() {
        for k in 0..prices.n_tickers() {
            let mut rec = vec![
                prices.dates[t].to_string(),
                prices.tickers[k].clone(),
                prices.open[k][t].to_string(),
                prices.high[k][t].to_string(),
                prices.low[k][t].to_string(),
                prices.close[k][t].to_string(),
                prices.volume[k][t].to_string(),
            ];
            if with_shares {
                rec.push(prices.shares_outstanding[k].unwrap().to_string());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-ticker, per-day indicator vectors in [`INDICATOR_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorTable {
    pub tickers: Vec<String>,
    pub values: Vec<Vec<[f64; N_INDICATORS]>>,
}

impl IndicatorTable {
    pub fn n_days(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Ticker-major flattening of day `t`: `[t0 ind0..6, t1 ind0..6, ...]`.
    pub fn row(&self, day: usize) -> Vec<f64> {
        self.values.iter().flat_map(|v| v[day]).collect()
    }

    pub fn column(&self, ticker: usize, indicator: usize) -> Vec<f64> {
        self.values[ticker].iter().map(|v| v[indicator]).collect()
    }
}

pub fn write_indicators(path: &Path, prices: &PriceTable, ind: &IndicatorTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["date", "ticker"];
    header.extend(INDICATOR_NAMES);
    w.write_record(&header)?;
    for t in 0..prices.n_days() {
        for k in 0..prices.n_tickers() {
            let mut rec = vec![prices.dates[t].to_string(), prices.tickers[k].clone()];
            rec.extend(ind.values[k][t].iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// MACD(12, 26), SMA30, SMA60, normalized Bollinger position, Wilder RSI(14),
/// CCI(20) and Wilder ADX(14) for every ticker. Rows before an indicator's
/// window fills take its first defined value.
pub fn compute_indicators(prices: &PriceTable) -> IndicatorTable {
    let values = (0..prices.n_tickers())
        .map(|k| indicator_rows(&prices.high[k], &prices.low[k], &prices.close[k]))
        .collect();
    IndicatorTable {
        tickers: prices.tickers.clone(),
        values,
    }
}

/// Indicator vectors for one ticker's high/low/close series.
pub fn indicator_rows(high: &[f64], low: &[f64], close: &[f64]) -> Vec<[f64; N_INDICATORS]> {
    let n = close.len();
    let ema12 = ema(close, 12);
    let ema26 = ema(close, 26);
    let macd: Vec<f64> = ema12.iter().zip(&ema26).map(|(a, b)| a - b).collect();
    let mean_all = close.iter().sum::<f64>() / n.max(1) as f64;
    let sma30 = backfill(sma(close, 30), mean_all);
    let sma60 = backfill(sma(close, 60), mean_all);
    let boll = backfill(bollinger_position(close, 20), 0.0);
    let rsi = backfill(wilder_rsi(close, 14), 50.0);
    let cci = backfill(commodity_channel_index(high, low, close, 20), 0.0);
    let adx = backfill(wilder_adx(high, low, close, 14), 0.0);
    (0..n)
        .map(|t| [macd[t], sma30[t], sma60[t], boll[t], rsi[t], cci[t], adx[t]])
        .collect()
}

/// EMA with smoothing `2 / (n + 1)`, seeded with the first observation.
pub fn ema(x: &[f64], n: usize) -> Vec<f64> {
    let a = 2.0 / (n as f64 + 1.0);
    let mut out = Vec::with_capacity(x.len());
    let mut prev = match x.first() {
        Some(&v) => v,
        None => return out,
    };
    for &v in x {
        prev = a * v + (1.0 - a) * prev;
        out.push(prev);
    }
    out
}

pub fn sma(x: &[f64], n: usize) -> Vec<Option<f64>> {
    (0..x.len())
        .map(|t| (t + 1 >= n).then(|| x[t + 1 - n..=t].iter().sum::<f64>() / n as f64))
        .collect()
}

/// `(close - SMA_n) / (2 * sd_n)` with the sample standard deviation; 0 when sd is 0.
pub fn bollinger_position(close: &[f64], n: usize) -> Vec<Option<f64>> {
    (0..close.len())
        .map(|t| {
            (t + 1 >= n).then(|| {
                let w = &close[t + 1 - n..=t];
                let mean = w.iter().sum::<f64>() / n as f64;
                let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
                let sd = var.sqrt();
                if sd > 0.0 {
                    (close[t] - mean) / (2.0 * sd)
                } else {
                    0.0
                }
            })
        })
        .collect()
}

pub fn wilder_rsi(close: &[f64], n: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; close.len()];
    if close.len() <= n {
        return out;
    }
    let change = |t: usize| close[t] - close[t - 1];
    let (mut gain, mut loss) = (0.0, 0.0);
    for t in 1..=n {
        let c = change(t);
        gain += c.max(0.0);
        loss += (-c).max(0.0);
    }
    gain /= n as f64;
    loss /= n as f64;
    out[n] = Some(rsi_value(gain, loss));
    for t in n + 1..close.len() {
        let c = change(t);
        gain = (gain * (n as f64 - 1.0) + c.max(0.0)) / n as f64;
        loss = (loss * (n as f64 - 1.0) + (-c).max(0.0)) / n as f64;
        out[t] = Some(rsi_value(gain, loss));
    }
    out
}

fn rsi_value(gain: f64, loss: f64) -> f64 {
    if gain == 0.0 && loss == 0.0 {
        50.0
    } else if loss == 0.0 {
        100.0
    } else {
        100.0 - 100.0 / (1.0 + gain / loss)
    }
}

/// `(TP - SMA_n(TP)) / (0.015 * mean deviation)`; 0 when the mean deviation is 0.
pub fn commodity_channel_index(high: &[f64], low: &[f64], close: &[f64], n: usize) -> Vec<Option<f64>> {
    let tp: Vec<f64> = (0..close.len()).map(|t| (high[t] + low[t] + close[t]) / 3.0).collect();
    (0..tp.len())
        .map(|t| {
            (t + 1 >= n).then(|| {
                let w = &tp[t + 1 - n..=t];
                let mean = w.iter().sum::<f64>() / n as f64;
                let md = w.iter().map(|v| (v - mean).abs()).sum::<f64>() / n as f64;
                if md > 0.0 {
                    (tp[t] - mean) / (0.015 * md)
                } else {
                    0.0
                }
            })
        })
        .collect()
}

pub fn wilder_adx(high: &[f64], low: &[f64], close: &[f64], n: usize) -> Vec<Option<f64>> {
    let len = close.len();
    let mut out = vec![None; len];
    if len < 2 * n {
        return out;
    }
    let mut tr = vec![0.0; len];
    let mut pdm = vec![0.0; len];
    let mut mdm = vec![0.0; len];
    for t in 1..len {
        tr[t] = (high[t] - low[t])
            .max((high[t] - close[t - 1]).abs())
            .max((low[t] - close[t - 1]).abs());
        let up = high[t] - high[t - 1];
        let down = low[t - 1] - low[t];
        pdm[t] = if up > down && up > 0.0 { up } else { 0.0 };
        mdm[t] = if down > up && down > 0.0 { down } else { 0.0 };
    }
    let mut s_tr: f64 = tr[1..=n].iter().sum();
    let mut s_p: f64 = pdm[1..=n].iter().sum();
    let mut s_m: f64 = mdm[1..=n].iter().sum();
    let dx = |s_tr: f64, s_p: f64, s_m: f64| {
        if s_tr <= 0.0 {
            return 0.0;
        }
        let (pdi, mdi) = (100.0 * s_p / s_tr, 100.0 * s_m / s_tr);
        if pdi + mdi > 0.0 {
            100.0 * (pdi - mdi).abs() / (pdi + mdi)
        } else {
            0.0
        }
    };
    let mut dxs = vec![dx(s_tr, s_p, s_m)];
    let k = n as f64;
    for t in n + 1..len {
        s_tr = s_tr - s_tr / k + tr[t];
        s_p = s_p - s_p / k + pdm[t];
        s_m = s_m - s_m / k + mdm[t];
        let d = dx(s_tr, s_p, s_m);
        if dxs.len() < n {
            dxs.push(d);
            if dxs.len() == n {
                out[t] = Some(dxs.iter().sum::<f64>() / k);
            }
        } else {
            let prev = out[t - 1].unwrap();
            out[t] = Some((prev * (k - 1.0) + d) / k);
        }
    }
    out
}

/// Fills leading `None`s with the first defined value (or `fallback` if none is).
fn backfill(v: Vec<Option<f64>>, fallback: f64) -> Vec<f64> {
    let first = v.iter().flatten().next().copied().unwrap_or(fallback);
    let mut last = first;
    v.into_iter()
        .map(|x| {
            if let Some(x) = x {
                last = x;
            }
            last
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnoverScore {
    pub ticker: String,
    pub turnover: f64,
}

/// Mean of `volume / shares_outstanding` over the last `window_days` rows,
/// sorted ascending. When any ticker lacks a share count, every ticker uses
/// `volume / max volume in the window (over all tickers)` instead.
pub fn rank_by_turnover(prices: &PriceTable, window_days: usize) -> Result<Vec<TurnoverScore>> {
    let n = prices.n_days();
    if window_days == 0 || window_days > n {
        return Err(Error::WindowTooLong {
            window: window_days,
            available: n,
        });
    }
    let start = n - window_days;
    let denominators: Vec<f64> = if prices.shares_outstanding.iter().all(Option::is_some) {
        prices.shares_outstanding.iter().map(|s| s.unwrap()).collect()
    } else {
        let max = prices
            .volume
            .iter()
            .flat_map(|v| v[start..].iter().copied())
            .fold(0.0, f64::max);
        vec![if max > 0.0 { max } else { 1.0 }; prices.n_tickers()]
    };
    let mut scores: Vec<TurnoverScore> = prices
        .tickers
        .iter()
        .enumerate()
        .map(|(k, t)| TurnoverScore {
            ticker: t.clone(),
            turnover: prices.volume[k][start..].iter().map(|v| v / denominators[k]).sum::<f64>()
                / window_days as f64,
        })
        .collect();
    scores.sort_by(|a, b| a.turnover.total_cmp(&b.turnover).then_with(|| a.ticker.cmp(&b.ticker)));
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Train is every date `<= train_end`, validation `(train_end, val_end]`, test the rest.
pub fn split_dataset(prices: &PriceTable, train_end: NaiveDate, val_end: NaiveDate) -> Result<DatasetSplit> {
    let dates = &prices.dates;
    let (first, last) = match (dates.first(), dates.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::Empty("price table")),
    };
    if train_end >= val_end {
        return Err(Error::SplitOrder(format!("train_end {train_end} >= val_end {val_end}")));
    }
    if val_end >= last {
        return Err(Error::SplitOrder(format!("val_end {val_end} leaves no test rows (last date {last})")));
    }
    if train_end < first {
        return Err(Error::SplitOrder(format!("train_end {train_end} precedes first date {first}")));
    }
    let n_train = dates.partition_point(|d| *d <= train_end);
    let n_val_end = dates.partition_point(|d| *d <= val_end);
    if n_val_end == n_train {
        return Err(Error::SplitOrder("validation range holds no trading days".into()));
    }
    Ok(DatasetSplit {
        train: 0..n_train,
        val: n_train..n_val_end,
        test: n_val_end..dates.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn dates(n: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        (0..n).map(|i| start + chrono::Days::new(i as u64)).collect()
    }

    fn table(closes: Vec<Vec<f64>>) -> PriceTable {
        let tickers = (0..closes.len()).map(|i| format!("T{i}")).collect();
        PriceTable::from_closes(tickers, dates(closes[0].len()), closes).unwrap()
    }

    fn write_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_two_rows() {
        let f = write_csv(
            "date,ticker,open,high,low,close,volume\n\
             2020-01-02,X,10,10,10,10.0,100\n\
             2020-01-01,X,10,10,10,11.0,100\n",
        );
        let t = load_ohlcv(f.path(), &[], None).unwrap();
        // rows come back sorted by date
        assert_eq!(t.n_days(), 2);
        assert_eq!(t.close[0], vec![11.0, 10.0]);
        let f = write_csv(
            "date,ticker,open,high,low,close,volume\n\
             2020-01-01,X,10,10,10,10.0,100\n\
             2020-01-02,X,10,10,10,11.0,100\n",
        );
        let t = load_ohlcv(f.path(), &["X".to_string()], None).unwrap();
        assert_eq!(t.close[0], vec![10.0, 11.0]);
    }

    #[test]
    fn load_errors() {
        let f = write_csv("date,ticker,open,high,low,close,volume\n2020-01-01,X,1,1,1,1,1\n");
        assert!(matches!(
            load_ohlcv(f.path(), &["Y".into()], None),
            Err(Error::UnknownTicker(t)) if t == "Y"
        ));
        let f = write_csv("date,ticker,open,high,low,close,volume\n2020-01-01,X,1,1,1,-1.0,1\n");
        assert!(matches!(load_ohlcv(f.path(), &[], None), Err(Error::NonPositiveClose { .. })));
        let f = write_csv("date,ticker,open,high,low,close,volume\n2020-01-01,X,1,1,1,,1\n");
        assert!(matches!(load_ohlcv(f.path(), &[], None), Err(Error::MissingClose { .. })));
        assert!(matches!(
            load_ohlcv(Path::new("/nonexistent/prices.csv"), &[], None),
            Err(Error::MissingFile(_))
        ));
        let f = write_csv("day,ticker,close\n2020-01-01,X,1\n");
        assert!(matches!(load_ohlcv(f.path(), &[], None), Err(Error::Parse(_))));
    }

    #[test]
    fn inner_join_and_date_range() {
        let f = write_csv(
            "date,ticker,open,high,low,close,volume,shares_outstanding\n\
             2020-01-01,A,1,1,1,1,5,100\n\
             2020-01-01,B,2,2,2,2,5,200\n\
             2020-01-02,A,1,1,1,1.5,5,100\n\
             2020-01-03,A,1,1,1,1.6,5,100\n\
             2020-01-03,B,2,2,2,2.5,5,200\n",
        );
        let t = load_ohlcv(f.path(), &[], None).unwrap();
        assert_eq!(t.dates, vec![dates(3)[0], dates(3)[2]]);
        assert_eq!(t.shares_outstanding, vec![Some(100.0), Some(200.0)]);
        let lo = parse_date("2020-01-02").unwrap();
        let hi = parse_date("2020-01-03").unwrap();
        let t = load_ohlcv(f.path(), &["A".into()], Some((lo, hi))).unwrap();
        assert_eq!(t.close[0], vec![1.5, 1.6]);
    }

    #[test]
    fn constant_series_degenerate_indicators() {
        let t = table(vec![vec![42.0; 100]]);
        let ind = compute_indicators(&t);
        for row in &ind.values[0][60..] {
            assert_eq!(*row, [0.0, 42.0, 42.0, 0.0, 50.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn increasing_series_has_rsi_100() {
        let t = table(vec![(1..=100).map(f64::from).collect()]);
        let ind = compute_indicators(&t);
        assert!(ind.values[0][14..].iter().all(|r| r[4] == 100.0));
    }

    #[test]
    fn sma30_of_ramp() {
        let t = table(vec![(1..=100).map(f64::from).collect()]);
        let ind = compute_indicators(&t);
        assert!((ind.values[0][99][1] - 85.5).abs() < 1e-12);
        // warm-up rows carry the first full-window value
        assert!((ind.values[0][0][1] - 15.5).abs() < 1e-12);
    }

    #[test]
    fn turnover_with_share_counts() {
        let mut t = table(vec![vec![10.0; 5], vec![10.0; 5]]);
        t.volume = vec![vec![1000.0; 5], vec![3000.0; 5]];
        t.shares_outstanding = vec![Some(10_000.0), Some(10_000.0)];
        let r = rank_by_turnover(&t, 5).unwrap();
        assert_eq!(r[0].ticker, "T0");
        assert!((r[0].turnover - 0.1).abs() < 1e-15);
        assert!((r[1].turnover - 0.3).abs() < 1e-15);
        assert!(matches!(rank_by_turnover(&t, 6), Err(Error::WindowTooLong { .. })));
    }

    #[test]
    fn turnover_proxy_matches_direct_loop() {
        let mut t = table(vec![vec![10.0; 8], vec![10.0; 8], vec![10.0; 8]]);
        t.volume = vec![
            vec![5.0, 9.0, 1.0, 4.0, 7.0, 2.0, 8.0, 3.0],
            vec![1.0, 1.0, 2.0, 1.0, 1.0, 3.0, 1.0, 1.0],
            vec![20.0, 1.0, 1.0, 6.0, 2.0, 5.0, 4.0, 9.0],
        ];
        let window = 6;
        let ranked = rank_by_turnover(&t, window).unwrap();
        let mut max = 0.0f64;
        for k in 0..3 {
            for d in 2..8 {
                max = max.max(t.volume[k][d]);
            }
        }
        let mut expected = Vec::new();
        for k in 0..3 {
            let mut s = 0.0;
            for d in 2..8 {
                s += t.volume[k][d] / max;
            }
            expected.push((format!("T{k}"), s / window as f64));
        }
        expected.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        for (got, (name, v)) in ranked.iter().zip(&expected) {
            assert_eq!(&got.ticker, name);
            assert!((got.turnover - v).abs() < 1e-15);
        }
    }

    #[test]
    fn split_counts() {
        let t = table(vec![vec![1.0; 10]]);
        let s = split_dataset(&t, t.dates[5], t.dates[7]).unwrap();
        assert_eq!(s.sizes(), (6, 2, 2));
        assert!(matches!(split_dataset(&t, t.dates[7], t.dates[5]), Err(Error::SplitOrder(_))));
        assert!(matches!(split_dataset(&t, t.dates[7], t.dates[7]), Err(Error::SplitOrder(_))));
        assert!(matches!(split_dataset(&t, t.dates[3], t.dates[9]), Err(Error::SplitOrder(_))));
    }
}
