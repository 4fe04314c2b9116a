//! Real price data ingestion and calendar alignment.
//!
//! Input is one CSV per ticker in the common `Date,Open,High,Low,Close`
//! layout (a trailing `Volume` column is tolerated), daily rows, ISO
//! dates. Different tickers rarely share an identical calendar, so the
//! series are aligned before a [`Market`] is built:
//!
//! * the calendar is the union of observation dates inside the
//!   intersection of all tickers' date ranges;
//! * a date missing from one ticker is filled by carrying its last prior
//!   close forward (never inventing a price before a ticker's first
//!   observation — dates outside the common range are dropped instead);
//! * dates are mapped to years with a configurable trading-day count,
//!   252 per year by default.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::market::{Market, PricePath};

/// Trading days per year used to map calendar dates to year fractions.
pub const DEFAULT_TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// Which price column to keep from an OHLC file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PriceColumn {
    Open,
    High,
    Low,
    Close,
}

impl PriceColumn {
    fn header_name(&self) -> &'static str {
        match self {
            PriceColumn::Open => "Open",
            PriceColumn::High => "High",
            PriceColumn::Low => "Low",
            PriceColumn::Close => "Close",
        }
    }
}

impl Default for PriceColumn {
    fn default() -> Self {
        PriceColumn::Close
    }
}

impl std::str::FromStr for PriceColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "open" => Ok(PriceColumn::Open),
            "high" => Ok(PriceColumn::High),
            "low" => Ok(PriceColumn::Low),
            "close" => Ok(PriceColumn::Close),
            other => Err(Error::Config(format!("unknown price column '{other}'"))),
        }
    }
}

/// Raw daily observations for one ticker: strictly increasing dates,
/// strictly positive prices.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPriceSeries {
    pub ticker: String,
    pub observations: Vec<(NaiveDate, f64)>,
}

impl RawPriceSeries {
    pub fn first_date(&self) -> NaiveDate {
        self.observations[0].0
    }

    pub fn last_date(&self) -> NaiveDate {
        self.observations[self.observations.len() - 1].0
    }
}

/// What the alignment did to each ticker.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    /// First date of the common range (this is `t = 0`).
    pub range_start: NaiveDate,
    /// Last date of the common range.
    pub range_end: NaiveDate,
    /// Forward-fills performed per ticker, in market asset order.
    pub fills: Vec<(String, usize)>,
    /// Dates observed by some ticker but outside the common range.
    pub dropped_dates: Vec<NaiveDate>,
}

impl AlignmentReport {
    pub fn total_fills(&self) -> usize {
        self.fills.iter().map(|(_, n)| n).sum()
    }
}

/// Parse one ticker's OHLC CSV, keeping `(date, price)` for the chosen
/// column. Rejects non-positive prices and out-of-order dates, naming the
/// offending line.
pub fn parse_price_csv<R: Read>(
    input: R,
    ticker: &str,
    source_name: &str,
    column: PriceColumn,
) -> Result<RawPriceSeries> {
    let parse_err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);

    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, format!("unreadable header: {e}")))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| parse_err(1, format!("missing column '{name}'")))
    };
    let date_idx = find("Date")?;
    let price_idx = find(column.header_name())?;

    let mut observations: Vec<(NaiveDate, f64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, format!("malformed row: {e}"))
        })?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(observations.len() + 2);
        let date_field = record
            .get(date_idx)
            .ok_or_else(|| parse_err(line, "missing date field".into()))?;
        let date: NaiveDate = date_field
            .parse()
            .map_err(|e| parse_err(line, format!("bad date '{date_field}': {e}")))?;
        let price_field = record
            .get(price_idx)
            .ok_or_else(|| parse_err(line, "missing price field".into()))?;
        let price: f64 = price_field
            .parse()
            .map_err(|e| parse_err(line, format!("bad price '{price_field}': {e}")))?;
        if !price.is_finite() || price <= 0.0 {
            return Err(parse_err(line, format!("non-positive price {price}")));
        }
        if let Some((last_date, _)) = observations.last() {
            if date <= *last_date {
                return Err(parse_err(
                    line,
                    format!("dates must be strictly increasing; {date} follows {last_date}"),
                ));
            }
        }
        observations.push((date, price));
    }
    if observations.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    Ok(RawPriceSeries {
        ticker: ticker.to_string(),
        observations,
    })
}

/// Load every `*.csv` in a directory, one ticker per file (ticker = file
/// stem). Files are visited in name order so the market layout is
/// deterministic.
pub fn load_price_dir(dir: &Path, column: PriceColumn) -> Result<Vec<RawPriceSeries>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|entry| entry.path())
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("csv"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!(
            "no CSV files found in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|path| {
            let ticker = path
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_default();
            let file = std::fs::File::open(path)?;
            parse_price_csv(file, &ticker, &path.display().to_string(), column)
        })
        .collect()
}

/// Align ticker calendars and build a market on a year-denominated grid.
pub fn align_calendars(
    series: &[RawPriceSeries],
    trading_days_per_year: f64,
) -> Result<(Market, AlignmentReport)> {
    if series.is_empty() {
        return Err(Error::Config("no price series to align".into()));
    }
    if !(trading_days_per_year > 0.0) {
        return Err(Error::Config(format!(
            "trading days per year must be positive, got {trading_days_per_year}"
        )));
    }
    let range_start = series.iter().map(|s| s.first_date()).max().unwrap();
    let range_end = series.iter().map(|s| s.last_date()).min().unwrap();
    if range_start > range_end {
        let ranges: Vec<String> = series
            .iter()
            .map(|s| format!("{}: {}..{}", s.ticker, s.first_date(), s.last_date()))
            .collect();
        return Err(Error::Config(format!(
            "ticker date ranges do not overlap: {}",
            ranges.join(", ")
        )));
    }

    let mut calendar: BTreeSet<NaiveDate> = BTreeSet::new();
    let mut dropped: BTreeSet<NaiveDate> = BTreeSet::new();
    for s in series {
        for (date, _) in &s.observations {
            if (range_start..=range_end).contains(date) {
                calendar.insert(*date);
            } else {
                dropped.insert(*date);
            }
        }
    }
    let calendar: Vec<NaiveDate> = calendar.into_iter().collect();
    if calendar.len() < 2 {
        return Err(Error::Config(
            "the common date range holds fewer than two trading days".into(),
        ));
    }

    let steps = calendar.len() - 1;
    let dt = 1.0 / trading_days_per_year;
    let grid = TimeGrid::new(steps as f64 * dt, dt)?;

    let mut paths = Vec::with_capacity(series.len());
    let mut fills = Vec::with_capacity(series.len());
    for s in series {
        let mut prices = Vec::with_capacity(calendar.len());
        let mut filled = 0usize;
        let mut cursor = s.observations.iter().peekable();
        let mut last_price: Option<f64> = None;
        for date in &calendar {
            while let Some((obs_date, price)) = cursor.peek() {
                if obs_date <= date {
                    last_price = Some(*price);
                    cursor.next();
                } else {
                    break;
                }
            }
            match last_price {
                Some(price) => {
                    if s.observations.binary_search_by_key(date, |(d, _)| *d).is_err() {
                        filled += 1;
                    }
                    prices.push(price);
                }
                // range_start >= every first observation, so this cannot
                // happen; keep the guard for safety.
                None => {
                    return Err(Error::Config(format!(
                        "ticker {} has no observation at or before {date}",
                        s.ticker
                    )))
                }
            }
        }
        paths.push(PricePath::new(grid, prices)?);
        fills.push((s.ticker.clone(), filled));
    }

    let market = Market::new(paths, series.iter().map(|s| s.ticker.clone()).collect())?;
    let report = AlignmentReport {
        range_start,
        range_end,
        fills,
        dropped_dates: dropped.into_iter().collect(),
    };
    Ok((market, report))
}
