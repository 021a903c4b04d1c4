//! Price ingestion, weekday calendar synchronisation and percent log returns.
//!
//! Input is either a directory holding one CSV per asset (`<ticker>.csv`, a
//! leading `^` may be dropped from the file name) or a single wide CSV with a
//! `Date` column and one close column per ticker. Per-asset files need `Date`
//! and `Close` columns (case-insensitive). Empty, `null` and `NaN` cells are
//! treated as missing observations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Close prices on a weekday calendar. `prices[asset][row]` is `None` for a
/// hole that has not been filled yet.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    pub dates: Vec<NaiveDate>,
    pub asset_ids: Vec<String>,
    pub prices: Vec<Vec<Option<f64>>>,
}

/// Percent log returns, one row per date (the later date of each adjacent
/// price pair).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub asset_ids: Vec<String>,
    /// Row-major `len × n_assets`.
    pub returns: Vec<Vec<f64>>,
}

pub fn is_weekend(d: NaiveDate) -> bool {
    matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
}

impl PriceTable {
    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn is_filled(&self) -> bool {
        self.prices.iter().all(|c| c.iter().all(Option::is_some))
    }

    /// Builds a table on the sorted union of the per-asset calendars, weekends
    /// removed. A date listed with `None` joins the calendar as a hole.
    pub fn from_series(series: Vec<(String, BTreeMap<NaiveDate, Option<f64>>)>) -> Self {
        let calendar: BTreeSet<NaiveDate> = series
            .iter()
            .flat_map(|(_, s)| s.keys().copied())
            .filter(|d| !is_weekend(*d))
            .collect();
        let dates: Vec<NaiveDate> = calendar.into_iter().collect();
        let asset_ids = series.iter().map(|(id, _)| id.clone()).collect();
        let prices = series
            .iter()
            .map(|(_, s)| dates.iter().map(|d| s.get(d).copied().flatten()).collect())
            .collect();
        PriceTable {
            dates,
            asset_ids,
            prices,
        }
    }
}

impl ReturnPanel {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn column(&self, asset: usize) -> Vec<f64> {
        self.returns.iter().map(|r| r[asset]).collect()
    }

    /// Rows `range` as a new panel.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ReturnPanel {
        ReturnPanel {
            dates: self.dates[range.clone()].to_vec(),
            asset_ids: self.asset_ids.clone(),
            returns: self.returns[range].to_vec(),
        }
    }
}

fn find_column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
}

fn parse_date(raw: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    NaiveDate::parse_from_str(raw, "%Y-%m-%d").ok().or_else(|| {
        raw.get(..10)
            .and_then(|p| NaiveDate::parse_from_str(p, "%Y-%m-%d").ok())
    })
}

fn parse_cell(raw: &str) -> std::result::Result<Option<f64>, String> {
    let raw = raw.trim();
    if raw.is_empty() || raw.eq_ignore_ascii_case("null") || raw.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    raw.parse::<f64>()
        .map(Some)
        .map_err(|e| format!("cannot parse `{raw}` as a price: {e}"))
}

/// Reads the requested value columns of a CSV keyed by its `Date` column.
fn read_columns(
    path: &Path,
    asset_for_errors: &str,
    columns: &[&str],
) -> Result<Vec<BTreeMap<NaiveDate, Option<f64>>>> {
    let file = File::open(path).map_err(|source| Error::MissingFile {
        asset: asset_for_errors.to_string(),
        path: path.to_path_buf(),
        source,
    })?;
    let display = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = rdr.headers()?.clone();
    let date_col = find_column(&headers, "date").ok_or_else(|| Error::MissingColumn {
        file: display.clone(),
        column: "Date".into(),
    })?;
    let value_cols = columns
        .iter()
        .map(|c| {
            find_column(&headers, c).ok_or_else(|| Error::MissingColumn {
                file: display.clone(),
                column: (*c).to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = vec![BTreeMap::new(); columns.len()];
    let mut seen = BTreeSet::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let parse_err = |msg: String| Error::Parse {
            file: display.clone(),
            line,
            msg,
        };
        let raw_date = record.get(date_col).unwrap_or("");
        let date = parse_date(raw_date)
            .ok_or_else(|| parse_err(format!("cannot parse `{raw_date}` as an ISO-8601 date")))?;
        if !seen.insert(date) {
            warn!("{display}:{line}: duplicate date {date}, keeping the later row");
        }
        for (slot, &col) in out.iter_mut().zip(&value_cols) {
            let cell = parse_cell(record.get(col).unwrap_or("")).map_err(&parse_err)?;
            slot.insert(date, cell);
        }
    }
    Ok(out)
}

fn per_asset_file(dir: &Path, ticker: &str) -> PathBuf {
    let direct = dir.join(format!("{ticker}.csv"));
    if direct.exists() {
        return direct;
    }
    let stripped = dir.join(format!("{}.csv", ticker.trim_start_matches('^')));
    if stripped.exists() {
        stripped
    } else {
        direct
    }
}

/// Loads close prices for `asset_ids` from a directory of per-asset CSVs or a
/// single wide CSV, restricted to `range` (inclusive) with weekend rows
/// dropped. The result sits on the union calendar and may still have holes.
pub fn load_prices(
    source: &Path,
    asset_ids: &[String],
    range: Option<(NaiveDate, NaiveDate)>,
) -> Result<PriceTable> {
    if asset_ids.is_empty() {
        return Err(Error::Domain("no assets requested".into()));
    }
    let mut series = Vec::with_capacity(asset_ids.len());
    if source.is_dir() {
        for id in asset_ids {
            let path = per_asset_file(source, id);
            let header_has_close = has_close_column(&path, id)?;
            let col = if header_has_close {
                "close"
            } else {
                id.as_str()
            };
            let mut cols = read_columns(&path, id, &[col])?;
            series.push((id.clone(), cols.remove(0)));
        }
    } else {
        let names: Vec<&str> = asset_ids.iter().map(String::as_str).collect();
        let cols = read_columns(source, &asset_ids[0], &names)?;
        series.extend(asset_ids.iter().cloned().zip(cols));
    }

    if let Some((start, end)) = range {
        for (_, s) in series.iter_mut() {
            s.retain(|d, _| *d >= start && *d <= end);
        }
    }
    let table = PriceTable::from_series(series);
    if table.is_empty() {
        return Err(Error::EmptyRange);
    }
    Ok(table)
}

fn has_close_column(path: &Path, asset: &str) -> Result<bool> {
    let file = File::open(path).map_err(|source| Error::MissingFile {
        asset: asset.to_string(),
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = rdr.headers()?;
    if find_column(headers, "close").is_some() {
        Ok(true)
    } else if find_column(headers, asset).is_some() {
        Ok(false)
    } else {
        Err(Error::MissingColumn {
            file: path.display().to_string(),
            column: "Close".into(),
        })
    }
}

/// Re-synchronises onto the union weekday calendar, forward-fills holes from
/// the last prior observation and back-fills leading holes from the first one.
pub fn synchronize_and_fill(table: &PriceTable) -> Result<PriceTable> {
    if table.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            available: table.len(),
        });
    }
    let series = table
        .asset_ids
        .iter()
        .zip(&table.prices)
        .map(|(id, col)| {
            let s: BTreeMap<NaiveDate, Option<f64>> = table
                .dates
                .iter()
                .copied()
                .zip(col.iter().copied())
                .collect();
            (id.clone(), s)
        })
        .collect();
    let mut out = PriceTable::from_series(series);

    for (id, col) in out.asset_ids.iter().zip(out.prices.iter_mut()) {
        let first = col
            .iter()
            .flatten()
            .next()
            .copied()
            .ok_or_else(|| Error::EmptyAsset(id.clone()))?;
        let mut last = first;
        for cell in col.iter_mut() {
            match cell {
                Some(v) => last = *v,
                None => *cell = Some(last),
            }
        }
    }
    Ok(out)
}

/// `r_t = ln(P_t / P_{t-1}) * 100` for every adjacent pair of a filled table.
pub fn to_log_returns(table: &PriceTable) -> Result<ReturnPanel> {
    if table.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            available: table.len(),
        });
    }
    let mut columns = Vec::with_capacity(table.n_assets());
    for (id, col) in table.asset_ids.iter().zip(&table.prices) {
        let mut prices = Vec::with_capacity(col.len());
        for (date, p) in table.dates.iter().zip(col) {
            let p =
                p.ok_or_else(|| Error::Domain(format!("{id} has an unfilled hole on {date}")))?;
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::NonPositivePrice {
                    asset: id.clone(),
                    date: *date,
                    price: p,
                });
            }
            prices.push(p);
        }
        columns.push(
            prices
                .windows(2)
                .map(|w| (w[1] / w[0]).ln() * 100.0)
                .collect::<Vec<_>>(),
        );
    }
    let returns = (0..table.len() - 1)
        .map(|t| columns.iter().map(|c| c[t]).collect())
        .collect();
    Ok(ReturnPanel {
        dates: table.dates[1..].to_vec(),
        asset_ids: table.asset_ids.clone(),
        returns,
    })
}

/// Loads, fills and differences in one go.
pub fn load_return_panel(
    source: &Path,
    asset_ids: &[String],
    range: Option<(NaiveDate, NaiveDate)>,
) -> Result<ReturnPanel> {
    let raw = load_prices(source, asset_ids, range)?;
    let filled = synchronize_and_fill(&raw)?;
    to_log_returns(&filled)
}
