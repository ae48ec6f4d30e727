//! Tick quotation ingestion, the mid-price transform and synthetic test series.
//!
//! Input files hold one record per line, `timestamp,bid,ask` by default. The
//! timestamp is carried through parsing but never interpreted; the simulation
//! clock is the record ordinal. A first line whose bid field is not numeric
//! is treated as a header.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Price;

#[derive(Debug, thiserror::Error)]
pub enum TickDataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: cannot parse {field} value {value:?}")]
    Parse {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: expected at least {needed} columns, found {found}")]
    MissingColumn { line: usize, needed: usize, found: usize },
    #[error("line {line}: bid and ask must be positive")]
    NonPositive { line: usize },
    #[error("no valid quotes in input")]
    Empty,
    #[error("invalid column mapping {0:?}: expected a permutation of ts,bid,ask")]
    Columns(String),
    #[error("synthetic series: {0}")]
    Synthetic(String),
}

/// One bid/ask quotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickQuote<P> {
    pub tick_index: usize,
    pub bid: P,
    pub ask: P,
}

/// Positions of the timestamp, bid and ask fields within a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnMap {
    pub ts: usize,
    pub bid: usize,
    pub ask: usize,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap { ts: 0, bid: 1, ask: 2 }
    }
}

impl ColumnMap {
    fn width(&self) -> usize {
        self.ts.max(self.bid).max(self.ask) + 1
    }
}

impl FromStr for ColumnMap {
    type Err = TickDataError;

    /// Parses an ordering such as `bid,ask,ts`: the i-th name is the field
    /// found in column i.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let names: Vec<&str> = s.split(',').map(str::trim).collect();
        let find = |name: &str| names.iter().position(|n| *n == name);
        match (names.len(), find("ts"), find("bid"), find("ask")) {
            (3, Some(ts), Some(bid), Some(ask)) => Ok(ColumnMap { ts, bid, ask }),
            _ => Err(TickDataError::Columns(s.to_string())),
        }
    }
}

impl fmt::Display for ColumnMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names = ["", "", ""];
        names[self.ts] = "ts";
        names[self.bid] = "bid";
        names[self.ask] = "ask";
        write!(f, "{}", names.join(","))
    }
}

/// Reads a tick file from disk.
pub fn load_ticks<P: Price>(path: impl AsRef<Path>, columns: ColumnMap) -> Result<Vec<TickQuote<P>>, TickDataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| TickDataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_ticks(BufReader::new(file), columns).map_err(|e| match e {
        TickDataError::Io { source, .. } => TickDataError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Parses tick records from any buffered reader. Line numbers in errors are
/// 1-based.
pub fn parse_ticks<P: Price, R: BufRead>(reader: R, columns: ColumnMap) -> Result<Vec<TickQuote<P>>, TickDataError> {
    let mut quotes = Vec::new();
    let mut seen_record = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| TickDataError::Io {
            path: PathBuf::new(),
            source,
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < columns.width() {
            return Err(TickDataError::MissingColumn {
                line: line_no,
                needed: columns.width(),
                found: fields.len(),
            });
        }
        let bid_raw = fields[columns.bid];
        let ask_raw = fields[columns.ask];
        let first = !seen_record;
        seen_record = true;
        let bid = match P::parse_decimal(bid_raw) {
            Some(v) => v,
            None if first => continue,
            None => {
                return Err(TickDataError::Parse {
                    line: line_no,
                    field: "bid",
                    value: bid_raw.to_string(),
                })
            }
        };
        let ask = P::parse_decimal(ask_raw).ok_or_else(|| TickDataError::Parse {
            line: line_no,
            field: "ask",
            value: ask_raw.to_string(),
        })?;
        if bid <= P::zero() || ask <= P::zero() {
            return Err(TickDataError::NonPositive { line: line_no });
        }
        if ask < bid {
            log::warn!("line {line_no}: crossed quote (bid {bid} > ask {ask})");
        }
        quotes.push(TickQuote {
            tick_index: quotes.len(),
            bid,
            ask,
        });
    }
    if quotes.is_empty() {
        return Err(TickDataError::Empty);
    }
    Ok(quotes)
}

/// The price series the agents observe, indexed by tick ordinal.
#[derive(Debug, Clone, PartialEq)]
pub struct MidSeries<P> {
    prices: Vec<P>,
}

impl<P: Price> MidSeries<P> {
    /// Wraps an existing price vector. Every price must be positive.
    pub fn new(prices: Vec<P>) -> Result<Self, TickDataError> {
        if prices.is_empty() {
            return Err(TickDataError::Empty);
        }
        if let Some(pos) = prices.iter().position(|p| !(*p > P::zero())) {
            return Err(TickDataError::NonPositive { line: pos + 1 });
        }
        Ok(MidSeries { prices })
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn prices(&self) -> &[P] {
        &self.prices
    }

    pub fn into_prices(self) -> Vec<P> {
        self.prices
    }
}

/// Element-wise `(ask + bid) / 2`.
pub fn mid_price<P: Price>(quotes: &[TickQuote<P>]) -> Result<MidSeries<P>, TickDataError> {
    if quotes.is_empty() {
        return Err(TickDataError::Empty);
    }
    let two = P::one() + P::one();
    let prices = quotes.iter().map(|q| (q.ask + q.bid) / two).collect();
    Ok(MidSeries { prices })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthModel {
    /// `p(t+1) = p(t) ± step`, each sign with probability 1/2.
    CoinWalk,
    /// `p(t+1) = p(t) + step·ε`, ε standard normal quantized to 1/1000.
    GaussianWalk,
}

impl FromStr for SynthModel {
    type Err = TickDataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coin" | "iid-coin-walk" => Ok(SynthModel::CoinWalk),
            "gauss" | "gaussian" | "gaussian-walk" => Ok(SynthModel::GaussianWalk),
            other => Err(TickDataError::Synthetic(format!("unknown model {other:?}"))),
        }
    }
}

impl fmt::Display for SynthModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthModel::CoinWalk => "coin",
            SynthModel::GaussianWalk => "gauss",
        })
    }
}

const GAUSS_GRID: i64 = 1000;

/// Generates a synthetic mid-price series.
///
/// The walk is accumulated in integer units (steps, or thousandths of a step
/// for the Gaussian model) and mapped to prices afterwards, so equal walk
/// positions give bit-identical prices. If the walk would dip to zero or
/// below, `p0` is raised until the minimum sits one step above zero.
pub fn synth_series<P: Price>(
    length: usize,
    model: SynthModel,
    step: P,
    p0: P,
    seed: u64,
) -> Result<MidSeries<P>, TickDataError> {
    if length == 0 {
        return Err(TickDataError::Empty);
    }
    if !(step > P::zero()) || !(p0 > P::zero()) {
        return Err(TickDataError::Synthetic("step and p0 must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (unit, grid) = match model {
        SynthModel::CoinWalk => (step, 1i64),
        SynthModel::GaussianWalk => {
            let grid =
                P::from_i64(GAUSS_GRID).ok_or_else(|| TickDataError::Synthetic("grid not representable".into()))?;
            (step / grid, GAUSS_GRID)
        }
    };
    let mut position = 0i64;
    let mut min_position = 0i64;
    let mut positions = Vec::with_capacity(length);
    positions.push(0i64);
    for _ in 1..length {
        position += match model {
            SynthModel::CoinWalk => {
                if rng.random::<bool>() {
                    1
                } else {
                    -1
                }
            }
            SynthModel::GaussianWalk => {
                let eps: f64 = rng.sample(StandardNormal);
                (eps * GAUSS_GRID as f64).round() as i64
            }
        };
        min_position = min_position.min(position);
        positions.push(position);
    }
    let to_price = |k: i64| P::from_i64(k).ok_or_else(|| TickDataError::Synthetic(format!("offset {k} overflows")));
    let floor = to_price(grid - min_position)? * unit;
    let base = if p0 < floor { floor } else { p0 };
    let prices = positions
        .into_iter()
        .map(|k| Ok(base + to_price(k)? * unit))
        .collect::<Result<Vec<P>, TickDataError>>()?;
    MidSeries::new(prices)
}
