//! Monthly demand series: loading, validation, temporal splits, sliding
//! windows and the series-balanced training sampler.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from;

/// Calendar month, `month` in `1..=12`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::config("month", format!("{month} is not in 1..=12")));
        }
        Ok(Self { year, month })
    }

    /// Months since year 0.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        Self {
            year: ordinal.div_euclid(12) as i32,
            month: ordinal.rem_euclid(12) as u32 + 1,
        }
    }

    pub fn plus(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// One country's monthly demand history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub id: String,
    pub start: YearMonth,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(id: impl Into<String>, start: YearMonth, values: Vec<f64>) -> Result<Self> {
        let series = Self {
            id: id.into(),
            start,
            values,
        };
        series.validate_values()?;
        Ok(series)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn month_at(&self, index: usize) -> YearMonth {
        self.start.plus(index as i64)
    }

    /// Index of `month` within the series, if covered.
    pub fn index_of(&self, month: YearMonth) -> Option<usize> {
        let offset = month.ordinal() - self.start.ordinal();
        (offset >= 0 && (offset as usize) < self.len()).then_some(offset as usize)
    }

    pub fn end(&self) -> YearMonth {
        self.month_at(self.len().saturating_sub(1))
    }

    pub fn validate_values(&self) -> Result<()> {
        for (i, &v) in self.values.iter().enumerate() {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidSeries {
                    series: self.id.clone(),
                    position: self.month_at(i).to_string(),
                    rule: format!("value {v} must be finite and strictly positive"),
                });
            }
        }
        Ok(())
    }

    /// Minimum length check, `w + 2H` for the default split.
    pub fn validate_length(&self, required: usize) -> Result<()> {
        if self.len() < required {
            return Err(Error::SeriesTooShort {
                series: self.id.clone(),
                len: self.len(),
                required,
            });
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            id: self.id.clone(),
            start: self.start,
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }
}

/// Half-open index range `[start, end)` into a series.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub start: usize,
    pub end: usize,
}

impl Region {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub test_months: usize,
    pub val_months: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_months: 12,
            val_months: 12,
        }
    }
}

impl SplitSpec {
    /// Train and validation merged, as used to fit the final model.
    pub fn merged(&self) -> Self {
        Self {
            test_months: self.test_months,
            val_months: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Region,
    pub val: Region,
    pub test: Region,
}

/// Partition a series into train / validation / test blocks.
///
/// The series must leave room for at least one full training window once
/// training and validation are merged, i.e. `len >= lookback + horizon + test`.
pub fn split(series: &TimeSeries, spec: &SplitSpec, lookback: usize, horizon: usize) -> Result<Split> {
    let t = series.len();
    let required = (lookback + horizon + spec.test_months).max(spec.test_months + spec.val_months + 1);
    if t < required {
        return Err(Error::SeriesTooShort {
            series: series.id.clone(),
            len: t,
            required,
        });
    }
    let test_start = t - spec.test_months;
    let val_start = test_start - spec.val_months;
    Ok(Split {
        train: Region { start: 0, end: val_start },
        val: Region { start: val_start, end: test_start },
        test: Region { start: test_start, end: t },
    })
}

/// An (x, y) pair. `anchor` is the index of the last lookback month.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub series_id: String,
    pub anchor: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Window {
    /// Window whose lookback ends at `anchor` and whose target is the next
    /// `horizon` months, read from `series`.
    pub fn at(series: &TimeSeries, anchor: usize, lookback: usize, horizon: usize) -> Result<Self> {
        if anchor + 1 < lookback || anchor + horizon >= series.len() {
            return Err(Error::config(
                "anchor",
                format!(
                    "anchor {anchor} does not leave {lookback} months of history and {horizon} of target in series '{}'",
                    series.id
                ),
            ));
        }
        Ok(Self {
            series_id: series.id.clone(),
            anchor,
            x: series.values[anchor + 1 - lookback..=anchor].to_vec(),
            y: series.values[anchor + 1..anchor + 1 + horizon].to_vec(),
        })
    }

    /// Lookback only; used for forecasting past the end of the data.
    pub fn lookback_only(series: &TimeSeries, anchor: usize, lookback: usize) -> Result<Self> {
        if anchor + 1 < lookback || anchor >= series.len() {
            return Err(Error::config(
                "anchor",
                format!(
                    "anchor {} leaves fewer than {lookback} months of history in series '{}'",
                    series.month_at(anchor),
                    series.id
                ),
            ));
        }
        Ok(Self {
            series_id: series.id.clone(),
            anchor,
            x: series.values[anchor + 1 - lookback..=anchor].to_vec(),
            y: Vec::new(),
        })
    }
}

/// All stride-1 windows whose lookback and target both lie inside `region`.
/// A region shorter than `lookback + horizon` yields no windows.
pub fn make_windows(series: &TimeSeries, region: Region, lookback: usize, horizon: usize) -> Vec<Window> {
    if region.len() < lookback + horizon {
        return Vec::new();
    }
    let first = region.start + lookback - 1;
    let last = region.end - horizon - 1;
    (first..=last)
        .map(|anchor| Window {
            series_id: series.id.clone(),
            anchor,
            x: series.values[anchor + 1 - lookback..=anchor].to_vec(),
            y: series.values[anchor + 1..=anchor + horizon].to_vec(),
        })
        .collect()
}

/// Draws windows by first picking a series uniformly among those that have
/// any windows, then a window uniformly inside it. Short and long series
/// therefore contribute equally often.
pub struct StratifiedSampler<'a> {
    groups: Vec<&'a [Window]>,
    rng: ChaCha8Rng,
}

impl<'a> StratifiedSampler<'a> {
    pub fn new(datasets: &'a [Vec<Window>], seed: u64) -> Result<Self> {
        let groups: Vec<&[Window]> = datasets
            .iter()
            .filter(|g| !g.is_empty())
            .map(|g| g.as_slice())
            .collect();
        if groups.is_empty() {
            return Err(Error::NoWindows);
        }
        Ok(Self {
            groups,
            rng: rng_from(seed),
        })
    }

    /// (group index among nonempty groups, window)
    pub fn draw(&mut self) -> (usize, &'a Window) {
        let g = self.rng.random_range(0..self.groups.len());
        let group = self.groups[g];
        let i = self.rng.random_range(0..group.len());
        (g, &group[i])
    }

    pub fn batch(&mut self, size: usize) -> Vec<&'a Window> {
        (0..size).map(|_| self.draw().1).collect()
    }
}

impl<'a> Iterator for StratifiedSampler<'a> {
    type Item = &'a Window;

    fn next(&mut self) -> Option<&'a Window> {
        Some(self.draw().1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    /// Long form `series_id,year,month,value`.
    Csv,
    /// `{"series": [{"id", "start": {"year", "month"}, "values": [...]}]}`.
    Json,
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => DatasetFormat::Json,
            _ => DatasetFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Minimum series length; `None` skips the check.
    pub min_length: Option<usize>,
    /// Drop (with a warning) series shorter than `min_length` instead of failing.
    pub drop_short: bool,
}

#[derive(Serialize, Deserialize)]
struct JsonDataset {
    series: Vec<TimeSeries>,
}

pub fn load_dataset(path: &Path, format: DatasetFormat, options: LoadOptions) -> Result<Vec<TimeSeries>> {
    let series = match format {
        DatasetFormat::Csv => read_csv(path)?,
        DatasetFormat::Json => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let parsed: JsonDataset = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.line() as u64,
                message: e.to_string(),
            })?;
            for s in &parsed.series {
                if !(1..=12).contains(&s.start.month) {
                    return Err(Error::InvalidSeries {
                        series: s.id.clone(),
                        position: "start".into(),
                        rule: format!("month {} is not in 1..=12", s.start.month),
                    });
                }
                s.validate_values()?;
            }
            parsed.series
        }
    };
    apply_length_policy(series, options)
}

fn apply_length_policy(series: Vec<TimeSeries>, options: LoadOptions) -> Result<Vec<TimeSeries>> {
    let Some(required) = options.min_length else {
        return Ok(series);
    };
    let mut kept = Vec::with_capacity(series.len());
    for s in series {
        match s.validate_length(required) {
            Ok(()) => kept.push(s),
            Err(e) if options.drop_short => log::warn!("dropping series: {e}"),
            Err(e) => return Err(e),
        }
    }
    Ok(kept)
}

fn read_csv(path: &Path) -> Result<Vec<TimeSeries>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let headers = reader.headers()?.clone();
    let expected = ["series_id", "year", "month", "value"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(parse_err(1, format!("header must be '{}'", expected.join(","))));
    }

    let mut rows: BTreeMap<String, Vec<(YearMonth, f64, u64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let year: i32 = field(1)
            .parse()
            .map_err(|_| parse_err(line, format!("invalid year '{}'", field(1))))?;
        let month: u32 = field(2)
            .parse()
            .map_err(|_| parse_err(line, format!("invalid month '{}'", field(2))))?;
        if !(1..=12).contains(&month) {
            return Err(parse_err(line, format!("month {month} is not in 1..=12")));
        }
        let value: f64 = field(3)
            .parse()
            .map_err(|_| parse_err(line, format!("invalid value '{}'", field(3))))?;
        if !value.is_finite() || value <= 0.0 {
            return Err(parse_err(line, format!("value {value} must be finite and strictly positive")));
        }
        let id = field(0);
        if id.is_empty() {
            return Err(parse_err(line, "empty series_id".into()));
        }
        rows.entry(id.to_string())
            .or_default()
            .push((YearMonth { year, month }, value, line));
    }

    let mut out = Vec::with_capacity(rows.len());
    for (id, mut obs) in rows {
        obs.sort_by_key(|(m, _, _)| *m);
        for pair in obs.windows(2) {
            let (prev, next) = (pair[0].0, pair[1].0);
            if next == prev {
                return Err(parse_err(pair[1].2, format!("duplicate month {next} for series '{id}'")));
            }
            if next.ordinal() != prev.ordinal() + 1 {
                return Err(Error::InvalidSeries {
                    series: id,
                    position: next.to_string(),
                    rule: format!("gap in month sequence after {prev}"),
                });
            }
        }
        let start = obs[0].0;
        out.push(TimeSeries {
            id,
            start,
            values: obs.into_iter().map(|(_, v, _)| v).collect(),
        });
    }
    Ok(out)
}

pub fn write_csv(series: &[TimeSeries], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["series_id", "year", "month", "value"])?;
    for s in series {
        for (i, v) in s.values.iter().enumerate() {
            let m = s.month_at(i);
            writer.write_record([s.id.clone(), m.year.to_string(), m.month.to_string(), v.to_string()])?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_json(series: &[TimeSeries], path: &Path) -> Result<()> {
    let doc = JsonDataset {
        series: series.to_vec(),
    };
    let text = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
