//! Survey data model: unit records, stratum aggregation, population
//! margins and post-stratification weights.
//!
//! Strata are dense integer indices `1..=H`. The CSV loaders map
//! arbitrary stratum labels onto that range through a recorded,
//! numerically-aware sorted dictionary so that downstream design
//! matrices can be indexed densely. Cells of a two-way (stratum x time)
//! layout are stored time-major: cell `(h, t)` lives at
//! `(t - 1) * H + (h - 1)`.

use std::fmt;
use std::path::Path;

use crate::error::Error;
use crate::Result;

/// One survey response: stratum index, binary outcome, optional time index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SurveyRecord {
    pub stratum: usize,
    pub y: u8,
    pub t: Option<usize>,
}

/// Unit-level survey sample. Either every record carries a time index or
/// none does.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurveySample {
    records: Vec<SurveyRecord>,
}

/// Dictionary mapping original stratum labels to dense indices `1..=H`.
///
/// `labels[i]` is the label of stratum `i + 1`. Labels that all parse as
/// integers are ordered numerically, otherwise lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratumLabels {
    pub labels: Vec<String>,
}

impl StratumLabels {
    fn from_sorted(mut labels: Vec<String>) -> Self {
        sort_labels(&mut labels);
        StratumLabels { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label).map(|i| i + 1)
    }
}

fn sort_labels(labels: &mut [String]) {
    if labels.iter().all(|l| l.parse::<i64>().is_ok()) {
        labels.sort_by_key(|l| l.parse::<i64>().unwrap());
    } else {
        labels.sort();
    }
}

impl SurveySample {
    /// Build a sample from validated records.
    pub fn from_records(records: Vec<SurveyRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyFile);
        }
        let timed = records[0].t.is_some();
        for (i, r) in records.iter().enumerate() {
            if r.stratum == 0 {
                return Err(Error::BadValue {
                    row: i + 1,
                    reason: "stratum index must be >= 1".into(),
                });
            }
            if r.y > 1 {
                return Err(Error::BadValue {
                    row: i + 1,
                    reason: format!("y must be 0 or 1, got {}", r.y),
                });
            }
            if r.t.is_some() != timed {
                return Err(Error::BadValue {
                    row: i + 1,
                    reason: "time index present on some records but not all".into(),
                });
            }
            if r.t == Some(0) {
                return Err(Error::BadValue {
                    row: i + 1,
                    reason: "time index must be >= 1".into(),
                });
            }
        }
        Ok(SurveySample { records })
    }

    pub fn records(&self) -> &[SurveyRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_time(&self) -> bool {
        self.records[0].t.is_some()
    }

    /// Largest stratum index present.
    pub fn max_stratum(&self) -> usize {
        self.records.iter().map(|r| r.stratum).max().unwrap_or(0)
    }

    /// Largest time index present (1 when the sample is untimed).
    pub fn max_time(&self) -> usize {
        self.records.iter().filter_map(|r| r.t).max().unwrap_or(1)
    }

    /// Pool a timed sample over its time points (each response keeps
    /// contributing one unit to its stratum).
    pub fn without_time(&self) -> SurveySample {
        SurveySample {
            records: self
                .records
                .iter()
                .map(|r| SurveyRecord { t: None, ..*r })
                .collect(),
        }
    }
}

/// Per-stratum (and per-time) sample counts and observed positives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratumSummary {
    h: usize,
    t: usize,
    counts: Vec<u64>,
    positives: Vec<u64>,
}

impl StratumSummary {
    /// Build a summary directly from per-cell counts (time-major layout).
    pub fn from_cells(h: usize, t: usize, counts: Vec<u64>, positives: Vec<u64>) -> Result<Self> {
        if counts.len() != h * t || positives.len() != h * t {
            return Err(Error::DimensionMismatch(format!(
                "expected {} cells, got {} counts / {} positives",
                h * t,
                counts.len(),
                positives.len()
            )));
        }
        for (i, (&n, &k)) in counts.iter().zip(&positives).enumerate() {
            if k > n {
                return Err(Error::DimensionMismatch(format!(
                    "cell {} has {} positives out of {} units",
                    i, k, n
                )));
            }
        }
        let s = StratumSummary {
            h,
            t,
            counts,
            positives,
        };
        for stratum in 1..=h {
            if s.pooled_count(stratum) == 0 {
                return Err(Error::EmptyStratum(stratum));
            }
        }
        Ok(s)
    }

    pub fn strata(&self) -> usize {
        self.h
    }

    pub fn time_points(&self) -> usize {
        self.t
    }

    #[inline]
    pub fn cell_index(&self, h: usize, t: usize) -> usize {
        debug_assert!(h >= 1 && h <= self.h && t >= 1 && t <= self.t);
        (t - 1) * self.h + (h - 1)
    }

    pub fn count(&self, h: usize, t: usize) -> u64 {
        self.counts[self.cell_index(h, t)]
    }

    pub fn positives(&self, h: usize, t: usize) -> u64 {
        self.positives[self.cell_index(h, t)]
    }

    /// Sample mean within a cell; `None` for an empty cell.
    pub fn ybar(&self, h: usize, t: usize) -> Option<f64> {
        let n = self.count(h, t);
        (n > 0).then(|| self.positives(h, t) as f64 / n as f64)
    }

    pub fn cell_counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn cell_positives(&self) -> &[u64] {
        &self.positives
    }

    /// Total sample size at one time point.
    pub fn total_at(&self, t: usize) -> u64 {
        (1..=self.h).map(|h| self.count(h, t)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn pooled_count(&self, h: usize) -> u64 {
        (1..=self.t).map(|t| self.count(h, t)).sum()
    }

    /// View of a single time point.
    pub fn at(&self, t: usize) -> StratumSlice<'_> {
        let lo = (t - 1) * self.h;
        StratumSlice {
            counts: &self.counts[lo..lo + self.h],
            positives: &self.positives[lo..lo + self.h],
        }
    }
}

/// One time point's per-stratum counts.
#[derive(Debug, Clone, Copy)]
pub struct StratumSlice<'a> {
    pub counts: &'a [u64],
    pub positives: &'a [u64],
}

impl StratumSlice<'_> {
    pub fn strata(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn ybar(&self, h: usize) -> Option<f64> {
        let n = self.counts[h - 1];
        (n > 0).then(|| self.positives[h - 1] as f64 / n as f64)
    }
}

/// Known population sizes per stratum (and per time point).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopulationMargins {
    h: usize,
    t: usize,
    counts: Vec<u64>,
}

impl PopulationMargins {
    pub fn from_cells(h: usize, t: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != h * t {
            return Err(Error::DimensionMismatch(format!(
                "expected {} margin cells, got {}",
                h * t,
                counts.len()
            )));
        }
        if let Some(i) = counts.iter().position(|&n| n == 0) {
            return Err(Error::BadValue {
                row: i + 1,
                reason: "population margin N must be positive".into(),
            });
        }
        Ok(PopulationMargins { h, t, counts })
    }

    /// Margins constant over time.
    pub fn constant_over_time(per_stratum: Vec<u64>, t: usize) -> Result<Self> {
        let h = per_stratum.len();
        let mut counts = Vec::with_capacity(h * t);
        for _ in 0..t {
            counts.extend_from_slice(&per_stratum);
        }
        Self::from_cells(h, t, counts)
    }

    pub fn strata(&self) -> usize {
        self.h
    }

    pub fn time_points(&self) -> usize {
        self.t
    }

    pub fn count(&self, h: usize, t: usize) -> u64 {
        self.counts[(t - 1) * self.h + (h - 1)]
    }

    pub fn cell_counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_at(&self, t: usize) -> u64 {
        (1..=self.h).map(|h| self.count(h, t)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn at(&self, t: usize) -> MarginSlice<'_> {
        let lo = (t - 1) * self.h;
        MarginSlice {
            counts: &self.counts[lo..lo + self.h],
        }
    }
}

/// One time point's population margins.
#[derive(Debug, Clone, Copy)]
pub struct MarginSlice<'a> {
    pub counts: &'a [u64],
}

impl MarginSlice<'_> {
    pub fn strata(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Population share of stratum `h`.
    pub fn share(&self, h: usize) -> f64 {
        self.counts[h - 1] as f64 / self.total() as f64
    }
}

/// Post-stratification weights `w_h = (N_h/N) / (n_h/n)` per cell.
///
/// Cells without sampled units carry weight 0 as a sentinel; real cells
/// always have `w_h > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumWeights {
    h: usize,
    t: usize,
    w: Vec<f64>,
}

impl StratumWeights {
    pub fn strata(&self) -> usize {
        self.h
    }

    pub fn time_points(&self) -> usize {
        self.t
    }

    pub fn weight(&self, h: usize, t: usize) -> f64 {
        self.w[(t - 1) * self.h + (h - 1)]
    }

    pub fn at(&self, t: usize) -> &[f64] {
        let lo = (t - 1) * self.h;
        &self.w[lo..lo + self.h]
    }
}

impl fmt::Display for StratumWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.w.iter().map(|w| format!("{w:.4}")).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// Tabulate a unit-level sample into per-cell counts.
///
/// Every stratum must contain at least one unit pooled over time; the
/// estimators assume `n_h > 0`. Individual `(h, t)` cells may be empty
/// when `t > 1` (the trend model predicts straight through them).
pub fn aggregate(sample: &SurveySample, h: usize, t: Option<usize>) -> Result<StratumSummary> {
    if h < 1 {
        return Err(Error::InvalidSpec("H must be >= 1".into()));
    }
    let timed = sample.has_time();
    let t = match (timed, t) {
        (true, Some(t)) => t,
        (true, None) => sample.max_time(),
        (false, Some(t)) if t > 1 => {
            return Err(Error::DimensionMismatch(
                "T > 1 requested but the sample has no time index".into(),
            ))
        }
        (false, _) => 1,
    };
    let mut counts = vec![0u64; h * t];
    let mut positives = vec![0u64; h * t];
    for (i, r) in sample.records().iter().enumerate() {
        if r.stratum > h {
            return Err(Error::BadValue {
                row: i + 1,
                reason: format!("stratum {} exceeds H = {}", r.stratum, h),
            });
        }
        let rt = r.t.unwrap_or(1);
        if rt > t {
            return Err(Error::BadValue {
                row: i + 1,
                reason: format!("time {} exceeds T = {}", rt, t),
            });
        }
        let idx = (rt - 1) * h + (r.stratum - 1);
        counts[idx] += 1;
        positives[idx] += u64::from(r.y);
    }
    StratumSummary::from_cells(h, t, counts, positives)
}

/// Regenerate a unit list from a summary (positives first within each
/// cell). Inverse of [`aggregate`] up to within-cell ordering.
pub fn disaggregate(summary: &StratumSummary) -> SurveySample {
    let timed = summary.time_points() > 1;
    let mut records = Vec::with_capacity(summary.total() as usize);
    for t in 1..=summary.time_points() {
        for h in 1..=summary.strata() {
            let n = summary.count(h, t);
            let k = summary.positives(h, t);
            for i in 0..n {
                records.push(SurveyRecord {
                    stratum: h,
                    y: u8::from(i < k),
                    t: timed.then_some(t),
                });
            }
        }
    }
    SurveySample { records }
}

/// Post-stratification weights from sample and population margins.
///
/// Within each time point, `w_{h,t} = (N_{h,t}/N_t) / (n_{h,t}/n_t)`, so
/// the unit-expanded weights sum to `n_t`.
pub fn compute_weights(
    summary: &StratumSummary,
    margins: &PopulationMargins,
) -> Result<StratumWeights> {
    check_dims(summary, margins)?;
    let h = summary.strata();
    let t = summary.time_points();
    let mut w = vec![0.0; h * t];
    for ti in 1..=t {
        let n_t = summary.total_at(ti) as f64;
        let cap_t = margins.total_at(ti) as f64;
        for hi in 1..=h {
            let n_ht = summary.count(hi, ti) as f64;
            if n_ht > 0.0 {
                let share_pop = margins.count(hi, ti) as f64 / cap_t;
                let share_smp = n_ht / n_t;
                w[(ti - 1) * h + (hi - 1)] = share_pop / share_smp;
            }
        }
    }
    Ok(StratumWeights { h, t, w })
}

pub(crate) fn check_dims(summary: &StratumSummary, margins: &PopulationMargins) -> Result<()> {
    if summary.strata() != margins.strata() || summary.time_points() != margins.time_points() {
        return Err(Error::DimensionMismatch(format!(
            "summary is {}x{} but margins are {}x{}",
            summary.strata(),
            summary.time_points(),
            margins.strata(),
            margins.time_points()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

fn find_column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers
        .iter()
        .position(|f| f.trim().eq_ignore_ascii_case(name))
}

struct RawRows {
    rows: Vec<(String, String, Option<String>)>,
    lines: Vec<usize>,
}

fn read_rows(path: &Path, schema: &CsvSchema) -> Result<(RawRows, bool)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let stratum_col = find_column(&headers, &schema.stratum)
        .ok_or_else(|| Error::MissingColumn(schema.stratum.clone()))?;
    let val_col = find_column(&headers, &schema.value)
        .ok_or_else(|| Error::MissingColumn(schema.value.clone()))?;
    let t_col = find_column(&headers, &schema.time);

    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let stratum = record.get(stratum_col).unwrap_or("").to_string();
        let value = record.get(val_col).unwrap_or("").to_string();
        let t = t_col.and_then(|c| record.get(c)).map(str::to_string);
        let t = match t {
            Some(s) if s.is_empty() => None,
            other => other,
        };
        rows.push((stratum, value, t));
        lines.push(line);
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile);
    }
    let timed = t_col.is_some();
    Ok((RawRows { rows, lines }, timed))
}

fn map_times(raw: &RawRows, timed: bool) -> Result<Vec<Option<usize>>> {
    if !timed {
        return Ok(vec![None; raw.rows.len()]);
    }
    let mut values = Vec::new();
    for (i, (_, _, t)) in raw.rows.iter().enumerate() {
        match t {
            Some(s) => {
                let v: i64 = s.parse().map_err(|_| Error::BadValue {
                    row: raw.lines[i],
                    reason: format!("time index `{s}` is not an integer"),
                })?;
                values.push(Some(v));
            }
            None => {
                return Err(Error::BadValue {
                    row: raw.lines[i],
                    reason: "time index present on some rows but not all".into(),
                })
            }
        }
    }
    let mut distinct: Vec<i64> = values.iter().flatten().copied().collect();
    distinct.sort_unstable();
    distinct.dedup();
    Ok(values
        .into_iter()
        .map(|v| v.map(|v| distinct.binary_search(&v).unwrap() + 1))
        .collect())
}

/// Column names of a sample or margins file.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub stratum: String,
    pub value: String,
    pub time: String,
}

impl CsvSchema {
    /// The default sample schema `stratum,y[,t]`.
    pub fn sample() -> Self {
        CsvSchema {
            stratum: "stratum".into(),
            value: "y".into(),
            time: "t".into(),
        }
    }

    /// The default margins schema `stratum,N[,t]`.
    pub fn margins() -> Self {
        CsvSchema {
            stratum: "stratum".into(),
            value: "N".into(),
            time: "t".into(),
        }
    }
}

/// Load a unit-level sample from a CSV file with columns `stratum,y[,t]`.
///
/// Returns the sample together with the stratum label dictionary; use
/// [`align_sample_to_margins`] to re-index against a margins file.
pub fn load_sample(path: impl AsRef<Path>) -> Result<(SurveySample, StratumLabels)> {
    load_sample_with(path, &CsvSchema::sample())
}

/// [`load_sample`] with caller-supplied column names.
pub fn load_sample_with(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
) -> Result<(SurveySample, StratumLabels)> {
    let (raw, timed) = read_rows(path.as_ref(), schema)?;
    let mut labels: Vec<String> = raw.rows.iter().map(|(s, _, _)| s.clone()).collect();
    labels.sort();
    labels.dedup();
    let labels = StratumLabels::from_sorted(labels);

    let times = map_times(&raw, timed)?;
    let mut records = Vec::with_capacity(raw.rows.len());
    for (i, (stratum, y, _)) in raw.rows.iter().enumerate() {
        let line = raw.lines[i];
        let y: i64 = y.parse().map_err(|_| Error::BadValue {
            row: line,
            reason: format!("y value `{y}` is not an integer"),
        })?;
        if y != 0 && y != 1 {
            return Err(Error::BadValue {
                row: line,
                reason: format!("y must be 0 or 1, got {y}"),
            });
        }
        records.push(SurveyRecord {
            stratum: labels.index_of(stratum).unwrap(),
            y: y as u8,
            t: times[i],
        });
    }
    Ok((SurveySample::from_records(records)?, labels))
}

/// Load population margins from a CSV file with columns `stratum,N[,t]`.
///
/// When the file has no `t` column the margins are treated as constant
/// over time by [`align_sample_to_margins`].
pub fn load_margins(path: impl AsRef<Path>) -> Result<(PopulationMargins, StratumLabels)> {
    load_margins_with(path, &CsvSchema::margins())
}

/// [`load_margins`] with caller-supplied column names.
pub fn load_margins_with(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
) -> Result<(PopulationMargins, StratumLabels)> {
    let (raw, timed) = read_rows(path.as_ref(), schema)?;
    let mut labels: Vec<String> = raw.rows.iter().map(|(s, _, _)| s.clone()).collect();
    labels.sort();
    labels.dedup();
    let labels = StratumLabels::from_sorted(labels);
    let times = map_times(&raw, timed)?;
    let h = labels.len();
    let t = times.iter().flatten().copied().max().unwrap_or(1);

    let mut counts = vec![0u64; h * t];
    let mut seen = vec![false; h * t];
    for (i, (stratum, n, _)) in raw.rows.iter().enumerate() {
        let line = raw.lines[i];
        let n: u64 = n.parse().map_err(|_| Error::BadValue {
            row: line,
            reason: format!("N value `{n}` is not a nonnegative integer"),
        })?;
        let hi = labels.index_of(stratum).unwrap();
        let ti = times[i].unwrap_or(1);
        let idx = (ti - 1) * h + (hi - 1);
        if seen[idx] {
            return Err(Error::BadValue {
                row: line,
                reason: format!("duplicate margin for stratum `{stratum}`"),
            });
        }
        seen[idx] = true;
        counts[idx] = n;
    }
    if let Some(idx) = seen.iter().position(|&s| !s) {
        return Err(Error::BadValue {
            row: 0,
            reason: format!(
                "margins missing for stratum `{}` at time {}",
                labels.labels[idx % h],
                idx / h + 1
            ),
        });
    }
    Ok((PopulationMargins::from_cells(h, t, counts)?, labels))
}

/// Re-index a sample so its stratum indices follow the margins' label
/// dictionary, and expand time-constant margins to the sample's T.
///
/// Every sample label must appear in the margins; margins may cover
/// strata the sample missed only if the caller tolerates the resulting
/// [`Error::EmptyStratum`] at aggregation.
pub fn align_sample_to_margins(
    sample: &SurveySample,
    sample_labels: &StratumLabels,
    margins: &PopulationMargins,
    margin_labels: &StratumLabels,
) -> Result<(SurveySample, PopulationMargins)> {
    let mut remap = Vec::with_capacity(sample_labels.len());
    for label in &sample_labels.labels {
        let idx = margin_labels.index_of(label).ok_or_else(|| {
            Error::DimensionMismatch(format!("sample stratum `{label}` has no margin"))
        })?;
        remap.push(idx);
    }
    let records = sample
        .records()
        .iter()
        .map(|r| SurveyRecord {
            stratum: remap[r.stratum - 1],
            ..*r
        })
        .collect();
    let sample = SurveySample::from_records(records)?;
    let t = sample.max_time();
    let margins = if sample.has_time() && margins.time_points() == 1 && t > 1 {
        PopulationMargins::constant_over_time(margins.cell_counts().to_vec(), t)?
    } else {
        margins.clone()
    };
    Ok((sample, margins))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_three_row_sample() {
        // default schema does not recognize an `h` column
        let f = write_tmp("h,y\n1,0\n1,1\n2,1\n");
        assert!(matches!(
            load_sample(f.path()),
            Err(Error::MissingColumn(_))
        ));

        // ... but a caller-supplied schema does
        let schema = CsvSchema {
            stratum: "h".into(),
            ..CsvSchema::sample()
        };
        let (sample, labels) = load_sample_with(f.path(), &schema).unwrap();
        assert_eq!(sample.len(), 3);
        assert_eq!(labels.len(), 2);

        let f = write_tmp("stratum,y\n1,0\n1,1\n2,1\n");
        let (sample, labels) = load_sample(f.path()).unwrap();
        assert_eq!(sample.len(), 3);
        assert_eq!(labels.len(), 2);
        assert!(!sample.has_time());
    }

    #[test]
    fn bad_y_reports_line_number() {
        let f = write_tmp("stratum,y\n1,0\n1,1\n2,2\n");
        match load_sample(f.path()) {
            Err(Error::BadValue { row, .. }) => assert_eq!(row, 4),
            other => panic!("expected BadValue, got {other:?}"),
        }
    }

    #[test]
    fn partial_time_column_rejected() {
        let f = write_tmp("stratum,y,t\n1,0,1\n1,1,\n");
        assert!(matches!(load_sample(f.path()), Err(Error::BadValue { .. })));
    }

    #[test]
    fn empty_file_rejected() {
        let f = write_tmp("stratum,y\n");
        assert!(matches!(load_sample(f.path()), Err(Error::EmptyFile)));
    }

    #[test]
    fn labels_sort_numerically() {
        let f = write_tmp("stratum,y\n10,0\n2,1\n1,1\n");
        let (_, labels) = load_sample(f.path()).unwrap();
        assert_eq!(labels.labels, vec!["1", "2", "10"]);
    }

    #[test]
    fn aggregate_counts_and_means() {
        let sample = SurveySample::from_records(vec![
            SurveyRecord {
                stratum: 1,
                y: 0,
                t: None,
            },
            SurveyRecord {
                stratum: 1,
                y: 1,
                t: None,
            },
            SurveyRecord {
                stratum: 2,
                y: 1,
                t: None,
            },
        ])
        .unwrap();
        let s = aggregate(&sample, 2, None).unwrap();
        assert_eq!(s.count(1, 1), 2);
        assert_eq!(s.count(2, 1), 1);
        assert_relative_eq!(s.ybar(1, 1).unwrap(), 0.5);
        assert_relative_eq!(s.ybar(2, 1).unwrap(), 1.0);
    }

    #[test]
    fn aggregate_rejects_empty_stratum() {
        let sample = SurveySample::from_records(vec![
            SurveyRecord {
                stratum: 1,
                y: 0,
                t: None,
            },
            SurveyRecord {
                stratum: 2,
                y: 1,
                t: None,
            },
        ])
        .unwrap();
        match aggregate(&sample, 3, None) {
            Err(Error::EmptyStratum(3)) => {}
            other => panic!("expected EmptyStratum(3), got {other:?}"),
        }
    }

    #[test]
    fn aggregate_gis_shaped_grid() {
        // 18 strata observed over 27 weeks
        let mut records = Vec::new();
        for t in 1..=27 {
            for h in 1..=18 {
                records.push(SurveyRecord {
                    stratum: h,
                    y: u8::from(h % 2 == 0),
                    t: Some(t),
                });
                records.push(SurveyRecord {
                    stratum: h,
                    y: 0,
                    t: Some(t),
                });
            }
        }
        let sample = SurveySample::from_records(records).unwrap();
        let s = aggregate(&sample, 18, Some(27)).unwrap();
        assert_eq!(s.strata(), 18);
        assert_eq!(s.time_points(), 27);
        assert_eq!(s.count(5, 13), 2);
        assert_relative_eq!(s.ybar(4, 27).unwrap(), 0.5);
    }

    #[test]
    fn weights_identity_when_proportions_match() {
        let s = StratumSummary::from_cells(2, 1, vec![10, 90], vec![5, 40]).unwrap();
        let m = PopulationMargins::from_cells(2, 1, vec![100, 900]).unwrap();
        let w = compute_weights(&s, &m).unwrap();
        assert_relative_eq!(w.weight(1, 1), 1.0, epsilon = 1e-12);
        assert_relative_eq!(w.weight(2, 1), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn weights_hand_example() {
        let s = StratumSummary::from_cells(2, 1, vec![50, 50], vec![10, 20]).unwrap();
        let m = PopulationMargins::from_cells(2, 1, vec![100, 900]).unwrap();
        let w = compute_weights(&s, &m).unwrap();
        assert_relative_eq!(w.weight(1, 1), 0.2, epsilon = 1e-12);
        assert_relative_eq!(w.weight(2, 1), 1.8, epsilon = 1e-12);
    }

    #[test]
    fn weights_dimension_mismatch() {
        let s = StratumSummary::from_cells(2, 1, vec![50, 50], vec![10, 20]).unwrap();
        let m = PopulationMargins::from_cells(3, 1, vec![100, 900, 10]).unwrap();
        assert!(matches!(
            compute_weights(&s, &m),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn disaggregate_roundtrip() {
        let s = StratumSummary::from_cells(3, 2, vec![4, 2, 1, 3, 2, 2], vec![2, 0, 1, 3, 1, 0])
            .unwrap();
        let sample = disaggregate(&s);
        let back = aggregate(&sample, 3, Some(2)).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        /// Unit-expanded weights sum to n within each time point.
        #[test]
        fn weight_sum_invariant(
            cells in proptest::collection::vec((1u64..200, 1u64..100_000), 2..12)
        ) {
            let h = cells.len();
            let counts: Vec<u64> = cells.iter().map(|c| c.0).collect();
            let margins: Vec<u64> = cells.iter().map(|c| c.1).collect();
            let positives = vec![0u64; h];
            let s = StratumSummary::from_cells(h, 1, counts.clone(), positives).unwrap();
            let m = PopulationMargins::from_cells(h, 1, margins).unwrap();
            let w = compute_weights(&s, &m).unwrap();
            let n: f64 = s.total() as f64;
            let total: f64 = (1..=h).map(|i| counts[i - 1] as f64 * w.weight(i, 1)).sum();
            prop_assert!((total - n).abs() <= 1e-12 * n);
            for i in 1..=h {
                prop_assert!(w.weight(i, 1) > 0.0);
            }
        }
    }
}
