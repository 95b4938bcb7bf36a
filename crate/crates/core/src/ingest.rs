//! Raw-series parsing, calendar alignment, and gap filling.
//!
//! Raw inputs are character-separated tabular files with a header row and
//! ISO-8601 dates. Series are aligned onto an externally supplied trading
//! calendar; interior gaps are filled by linear interpolation over day
//! ordinals and edge gaps are handled by an explicit policy.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("row {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("row {line}: unparseable date '{value}'")]
    BadDate { line: u64, value: String },
    #[error("column '{0}' not found in header")]
    MissingColumn(String),
    #[error("series '{0}': fewer than two present values")]
    TooFewValues(String),
    #[error("series '{0}': all values missing")]
    AllMissing(String),
    #[error("calendar must be non-empty and strictly ascending")]
    BadCalendar,
    #[error("no series supplied")]
    EmptySeriesList,
    #[error("series '{0}' does not overlap the calendar")]
    NoOverlap(String),
    #[error("sequence too short: need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("frame shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Strictly increasing sequence of trading days.
///
/// The calendar is always supplied externally (typically the dates present in
/// the target series); it is never inferred from weekday arithmetic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradingCalendar {
    days: Vec<NaiveDate>,
}

impl TradingCalendar {
    pub fn new(days: Vec<NaiveDate>) -> Result<Self, IngestError> {
        if days.is_empty() || days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IngestError::BadCalendar);
        }
        Ok(Self { days })
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// Restrict to days within `[start, end]`.
    pub fn clamp(&self, start: NaiveDate, end: NaiveDate) -> Result<Self, IngestError> {
        Self::new(
            self.days
                .iter()
                .copied()
                .filter(|d| *d >= start && *d <= end)
                .collect(),
        )
    }
}

/// One named series of dated, possibly missing observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSeries {
    pub name: String,
    /// Strictly ascending by date. `None` marks a missing observation.
    pub points: Vec<(NaiveDate, Option<f64>)>,
}

impl RawSeries {
    pub fn present(&self) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        self.points.iter().filter_map(|(d, v)| v.map(|v| (*d, v)))
    }
}

/// How to fill days before the first / after the last present observation,
/// which linear interpolation cannot bracket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgePolicy {
    /// Extend the nearest present value outward.
    #[default]
    HoldNearest,
    /// Trim the calendar to the span covered by every series.
    TrimCalendar,
}

impl fmt::Display for EdgePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgePolicy::HoldNearest => write!(f, "hold-nearest"),
            EdgePolicy::TrimCalendar => write!(f, "trim-calendar"),
        }
    }
}

/// Dense matrix of named daily features over a trading calendar, gap-free
/// after interpolation. Values are stored row-major: `values[feature][day]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedFrame {
    pub calendar: TradingCalendar,
    pub features: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Alignment events worth surfacing (trimming, held edges).
    #[serde(default)]
    pub notes: Vec<String>,
}

impl AlignedFrame {
    pub fn new(
        calendar: TradingCalendar,
        features: Vec<String>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self, IngestError> {
        if features.len() != values.len() {
            return Err(IngestError::ShapeMismatch(format!(
                "{} names vs {} rows",
                features.len(),
                values.len()
            )));
        }
        for (name, row) in features.iter().zip(&values) {
            if row.len() != calendar.len() {
                return Err(IngestError::ShapeMismatch(format!(
                    "row '{}' has {} values for {} days",
                    name,
                    row.len(),
                    calendar.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(IngestError::ShapeMismatch(format!(
                    "row '{name}' contains non-finite values"
                )));
            }
        }
        Ok(Self {
            calendar,
            features,
            values,
            notes: Vec::new(),
        })
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn row_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f == name)
    }

    pub fn row(&self, name: &str) -> Option<&[f64]> {
        self.row_index(name).map(|i| self.values[i].as_slice())
    }

    /// Append a feature row, which must match the calendar length.
    pub fn push_row(&mut self, name: impl Into<String>, row: Vec<f64>) -> Result<(), IngestError> {
        let name = name.into();
        if row.len() != self.calendar.len() {
            return Err(IngestError::ShapeMismatch(format!(
                "row '{}' has {} values for {} days",
                name,
                row.len(),
                self.calendar.len()
            )));
        }
        self.features.push(name);
        self.values.push(row);
        Ok(())
    }

    /// New frame keeping only the named rows, in the given order.
    pub fn select(&self, names: &[String]) -> Result<AlignedFrame, IngestError> {
        let mut features = Vec::with_capacity(names.len());
        let mut values = Vec::with_capacity(names.len());
        for name in names {
            let idx = self
                .row_index(name)
                .ok_or_else(|| IngestError::ShapeMismatch(format!("no row named '{name}'")))?;
            features.push(name.clone());
            values.push(self.values[idx].clone());
        }
        Ok(AlignedFrame {
            calendar: self.calendar.clone(),
            features,
            values,
            notes: Vec::new(),
        })
    }

    /// Write as a tabular file: first column `date`, one column per feature.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), IngestError> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["date".to_string()];
        header.extend(self.features.iter().cloned());
        wtr.write_record(&header)?;
        for (d, day) in self.calendar.days().iter().enumerate() {
            let mut rec = vec![day.format("%Y-%m-%d").to_string()];
            for row in &self.values {
                rec.push(format!("{}", row[d]));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<AlignedFrame, IngestError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rdr.headers()?.clone();
        if header.is_empty() || header.get(0) != Some("date") {
            return Err(IngestError::ShapeMismatch(
                "first column must be 'date'".into(),
            ));
        }
        let features: Vec<String> = header.iter().skip(1).map(|s| s.to_string()).collect();
        let mut days = Vec::new();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); features.len()];
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let date = parse_date(rec.get(0).unwrap_or(""), line)?;
            days.push(date);
            for (i, cell) in rec.iter().skip(1).enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| IngestError::MalformedRow {
                    line,
                    reason: format!("unparseable value '{cell}'"),
                })?;
                values[i].push(v);
            }
        }
        AlignedFrame::new(TradingCalendar::new(days)?, features, values)
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<(), IngestError> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv_path(path: &Path) -> Result<AlignedFrame, IngestError> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

fn parse_date(s: &str, line: u64) -> Result<NaiveDate, IngestError> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|_| IngestError::BadDate {
        line,
        value: s.to_string(),
    })
}

/// Parse one series from character-separated tabular content with a header
/// row. Empty value cells become missing points; the series takes the value
/// column's name.
pub fn parse_series<R: Read>(
    reader: R,
    date_column: &str,
    value_column: &str,
    delimiter: u8,
) -> Result<RawSeries, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .delimiter(delimiter)
        .flexible(false)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let date_idx = header
        .iter()
        .position(|h| h == date_column)
        .ok_or_else(|| IngestError::MissingColumn(date_column.to_string()))?;
    let value_idx = header
        .iter()
        .position(|h| h == value_column)
        .ok_or_else(|| IngestError::MissingColumn(value_column.to_string()))?;

    let mut points: Vec<(NaiveDate, Option<f64>)> = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| match e.position() {
            Some(p) => IngestError::MalformedRow {
                line: p.line(),
                reason: e.to_string(),
            },
            None => IngestError::Csv(e),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let date = parse_date(rec.get(date_idx).unwrap_or(""), line)?;
        if !seen.insert(date) {
            return Err(IngestError::DuplicateDate(date));
        }
        let raw = rec.get(value_idx).unwrap_or("").trim();
        let value = if raw.is_empty() {
            None
        } else {
            Some(raw.parse::<f64>().map_err(|_| IngestError::MalformedRow {
                line,
                reason: format!("unparseable value '{raw}'"),
            })?)
        };
        points.push((date, value));
    }
    points.sort_by_key(|(d, _)| *d);
    Ok(RawSeries {
        name: value_column.to_string(),
        points,
    })
}

pub fn parse_series_path(
    path: &Path,
    date_column: &str,
    value_column: &str,
    delimiter: u8,
) -> Result<RawSeries, IngestError> {
    let f = std::fs::File::open(path)?;
    parse_series(
        std::io::BufReader::new(f),
        date_column,
        value_column,
        delimiter,
    )
}

fn ordinal(d: NaiveDate) -> i64 {
    d.num_days_from_ce() as i64
}

/// Fill the series onto the calendar. Interior gaps are linearly interpolated
/// between the bracketing present values, with time measured in day ordinals;
/// days outside the observed span hold the nearest present value.
pub fn interpolate_linear(
    series: &RawSeries,
    calendar: &TradingCalendar,
) -> Result<Vec<f64>, IngestError> {
    let known: Vec<(NaiveDate, f64)> = series.present().collect();
    if known.is_empty() {
        return Err(IngestError::AllMissing(series.name.clone()));
    }
    if known.len() < 2 {
        return Err(IngestError::TooFewValues(series.name.clone()));
    }

    let mut out = Vec::with_capacity(calendar.len());
    for &day in calendar.days() {
        let v = match known.binary_search_by_key(&day, |(d, _)| *d) {
            Ok(i) => known[i].1,
            Err(0) => known[0].1,
            Err(i) if i == known.len() => known[known.len() - 1].1,
            Err(i) => {
                let (ta, va) = known[i - 1];
                let (tb, vb) = known[i];
                let (ta, tb, ti) = (ordinal(ta) as f64, ordinal(tb) as f64, ordinal(day) as f64);
                va + (vb - va) * (ti - ta) / (tb - ta)
            }
        };
        out.push(v);
    }
    Ok(out)
}

/// Align all series onto the calendar into a gap-free frame.
pub fn align(
    series: &[RawSeries],
    calendar: &TradingCalendar,
    edge_policy: EdgePolicy,
) -> Result<AlignedFrame, IngestError> {
    if series.is_empty() {
        return Err(IngestError::EmptySeriesList);
    }
    let mut notes = Vec::new();
    let mut calendar = calendar.clone();

    // Every series must overlap the calendar at all.
    for s in series {
        let known: Vec<NaiveDate> = s.present().map(|(d, _)| d).collect();
        match (known.first(), known.last()) {
            (Some(&first), Some(&last))
                if first <= *calendar.days().last().unwrap()
                    && last >= calendar.days()[0] => {}
            _ => return Err(IngestError::NoOverlap(s.name.clone())),
        }
    }

    if edge_policy == EdgePolicy::TrimCalendar {
        let start = series
            .iter()
            .filter_map(|s| s.present().next().map(|(d, _)| d))
            .max()
            .unwrap();
        let end = series
            .iter()
            .filter_map(|s| s.present().last().map(|(d, _)| d))
            .min()
            .unwrap();
        let trimmed = calendar
            .clamp(start, end)
            .map_err(|_| IngestError::NoOverlap("common span is empty".into()))?;
        if trimmed.len() != calendar.len() {
            notes.push(format!(
                "calendar trimmed from {} to {} days (common span {start} .. {end})",
                calendar.len(),
                trimmed.len()
            ));
        }
        calendar = trimmed;
    }

    let mut features = Vec::with_capacity(series.len());
    let mut values = Vec::with_capacity(series.len());
    for s in series {
        features.push(s.name.clone());
        values.push(interpolate_linear(s, &calendar)?);
    }
    let mut frame = AlignedFrame::new(calendar, features, values)?;
    frame.notes = notes;
    Ok(frame)
}

/// Next-day movement labels: 0 where the series decreases on the following
/// day, 1 otherwise. Output is one shorter than the input.
pub fn label_movement(target: &[f64]) -> Result<Vec<u8>, IngestError> {
    if target.len() < 2 {
        return Err(IngestError::TooShort {
            need: 2,
            got: target.len(),
        });
    }
    Ok(target
        .windows(2)
        .map(|w| if w[1] < w[0] { 0 } else { 1 })
        .collect())
}
