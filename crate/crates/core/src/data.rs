//! CSV loading, per-feature min-max scaling, windowing and batching.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A multivariate series `[L, M]` in temporal order.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub values: Tensor,
    pub feature_names: Vec<String>,
    pub source_path: String,
    /// Rows discarded at load time because a selected field was missing or
    /// not numeric.
    pub dropped_rows: usize,
}

impl RawSeries {
    pub fn new(values: Tensor, feature_names: Vec<String>, source_path: impl Into<String>) -> Self {
        assert_eq!(values.ndim(), 2);
        assert_eq!(values.dim(1), feature_names.len());
        RawSeries {
            values,
            feature_names,
            source_path: source_path.into(),
            dropped_rows: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> usize {
        self.values.dim(1)
    }
}

/// Column-wise extrema of the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn features(&self) -> usize {
        self.min.len()
    }

    /// Constant features normalize to 0.5 and denormalize to `min`.
    pub fn is_constant(&self, j: usize) -> bool {
        self.min[j] == self.max[j]
    }

    fn check(&self, m: usize) -> Result<()> {
        if m != self.features() {
            return Err(Error::FeatureCountMismatch {
                expected: self.features(),
                found: m,
            });
        }
        Ok(())
    }

    fn scale(&self, j: usize, x: f64) -> f64 {
        if self.is_constant(j) {
            0.5
        } else {
            ((x - self.min[j]) / (self.max[j] - self.min[j])).clamp(0.0, 1.0)
        }
    }

    fn unscale(&self, j: usize, y: f64) -> f64 {
        if self.is_constant(j) {
            self.min[j]
        } else {
            y * (self.max[j] - self.min[j]) + self.min[j]
        }
    }
}

/// A `[T, M]` slice of a normalized series with every entry in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesWindow {
    pub values: Tensor,
    pub origin_index: usize,
}

impl TimeSeriesWindow {
    pub fn len(&self) -> usize {
        self.values.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> usize {
        self.values.dim(1)
    }
}

/// Column selection for [`load_csv`].
#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Use exactly these columns, in this order.
    pub columns: Option<Vec<String>>,
    /// Columns to ignore (e.g. a timestamp column).
    pub skip_columns: Vec<String>,
    /// Minimum number of usable rows.
    pub min_rows: usize,
}

/// Reads a headed CSV, one timestep per row.
///
/// Without an explicit selection every column that parses as a number in
/// at least one row is a feature. Rows with a missing or non-numeric value
/// in any feature column are dropped and counted.
pub fn load_csv(path: impl AsRef<Path>, options: &LoadOptions) -> Result<RawSeries> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let records: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    let parse = |rec: &csv::StringRecord, c: usize| -> Option<f64> {
        rec.get(c)
            .filter(|s| !s.is_empty())
            .and_then(|s| s.parse::<f64>().ok())
            .filter(|v| v.is_finite())
    };

    let selected: Vec<usize> = match &options.columns {
        Some(names) => names
            .iter()
            .map(|n| {
                headers
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| Error::Format(format!("column `{n}` not in {}", path.display())))
            })
            .collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&c| !options.skip_columns.contains(&headers[c]))
            .filter(|&c| records.iter().any(|r| parse(r, c).is_some()))
            .collect(),
    };
    if selected.is_empty() {
        return Err(Error::NoNumericColumns(path.display().to_string()));
    }

    let mut data = Vec::with_capacity(records.len() * selected.len());
    let mut dropped = 0;
    for rec in &records {
        let row: Option<Vec<f64>> = selected.iter().map(|&c| parse(rec, c)).collect();
        match row {
            Some(r) => data.extend(r),
            None => dropped += 1,
        }
    }
    let rows = data.len() / selected.len();
    if rows == 0 || rows < options.min_rows {
        return Err(Error::EmptyAfterCleaning {
            rows,
            required: options.min_rows.max(1),
        });
    }
    Ok(RawSeries {
        values: Tensor::new(&[rows, selected.len()], data),
        feature_names: selected.iter().map(|&c| headers[c].clone()).collect(),
        source_path: path.display().to_string(),
        dropped_rows: dropped,
    })
}

/// Exact per-column minimum and maximum.
pub fn fit_normalizer(raw: &RawSeries) -> NormStats {
    let m = raw.features();
    let mut min = vec![f64::INFINITY; m];
    let mut max = vec![f64::NEG_INFINITY; m];
    for row in raw.values.data().chunks(m) {
        for (j, &x) in row.iter().enumerate() {
            min[j] = min[j].min(x);
            max[j] = max[j].max(x);
        }
    }
    NormStats { min, max }
}

/// `(x − min) / (max − min)` per feature, clamped to `[0, 1]`.
pub fn normalize(raw: &RawSeries, stats: &NormStats) -> Result<RawSeries> {
    let m = raw.features();
    stats.check(m)?;
    let data = raw
        .values
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| stats.scale(i % m, x))
        .collect();
    Ok(RawSeries {
        values: Tensor::new(raw.values.shape(), data),
        ..raw.clone()
    })
}

/// Maps `[.., M]` matrices back to original units.
pub fn denormalize(windows: &[Tensor], stats: &NormStats) -> Result<Vec<Tensor>> {
    windows
        .iter()
        .map(|w| {
            let m = w.last_dim();
            stats.check(m)?;
            Ok(Tensor::new(
                w.shape(),
                w.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| stats.unscale(i % m, y))
                    .collect(),
            ))
        })
        .collect()
}

/// Number of windows [`make_windows`] yields.
pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / stride + 1
    }
}

/// Windows of length `window` starting at `0, stride, 2·stride, …`.
pub fn make_windows(raw: &RawSeries, window: usize, stride: usize) -> Result<Vec<TimeSeriesWindow>> {
    assert!(window >= 2 && stride >= 1, "window >= 2 and stride >= 1 required");
    let (len, m) = (raw.len(), raw.features());
    if len < window {
        return Err(Error::SeriesTooShort { len, window });
    }
    Ok((0..window_count(len, window, stride))
        .map(|k| {
            let origin = k * stride;
            let slice = raw.values.data()[origin * m..(origin + window) * m].to_vec();
            TimeSeriesWindow {
                values: Tensor::new(&[window, m], slice),
                origin_index: origin,
            }
        })
        .collect())
}

/// Fits the normalizer on `raw`, scales it and cuts it into windows.
pub fn prepare(raw: &RawSeries, window: usize, stride: usize) -> Result<(NormStats, Vec<TimeSeriesWindow>)> {
    let stats = fit_normalizer(raw);
    let windows = make_windows(&normalize(raw, &stats)?, window, stride)?;
    Ok((stats, windows))
}

/// Stacks windows into a `[B, T, M]` batch.
pub fn stack_windows<'a>(windows: impl IntoIterator<Item = &'a TimeSeriesWindow>) -> Tensor {
    let mut data = Vec::new();
    let mut shape = None;
    let mut count = 0;
    for w in windows {
        let s = shape.get_or_insert_with(|| w.values.shape().to_vec());
        assert_eq!(&s[..], w.values.shape(), "windows differ in shape");
        data.extend_from_slice(w.values.data());
        count += 1;
    }
    let s = shape.expect("no windows to stack");
    Tensor::new(&[count, s[0], s[1]], data)
}

/// Splits a `[B, T, M]` tensor into per-window matrices.
pub fn unstack(batch: &Tensor) -> Vec<Tensor> {
    let (t, m) = (batch.dim(1), batch.dim(2));
    batch
        .data()
        .chunks(t * m)
        .map(|c| Tensor::new(&[t, m], c.to_vec()))
        .collect()
}

/// Writes `[T, M]` windows as CSV: a `window_id` column followed by one
/// column per feature, one row per time step.
pub fn write_windows_csv(path: impl AsRef<Path>, feature_names: &[String], windows: &[Tensor]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["window_id".to_string()];
    header.extend(feature_names.iter().cloned());
    w.write_record(&header)?;
    for (id, win) in windows.iter().enumerate() {
        if win.ndim() != 2 || win.dim(1) != feature_names.len() {
            return Err(Error::FeatureCountMismatch {
                expected: feature_names.len(),
                found: win.last_dim(),
            });
        }
        for row in win.data().chunks(win.dim(1)) {
            let mut rec = vec![id.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a file produced by [`write_windows_csv`]; returns the feature
/// names and the windows in id order.
pub fn read_windows_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Tensor>)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if headers.first().map(String::as_str) != Some("window_id") || headers.len() < 2 {
        return Err(Error::Format(format!(
            "{}: expected a `window_id` column followed by features",
            path.display()
        )));
    }
    let m = headers.len() - 1;
    let bad = |line: usize| Error::Format(format!("{}: malformed row {line}", path.display()));
    let mut groups: Vec<(usize, Vec<f64>)> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let id: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad(line))?;
        let values: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| bad(line))?;
        if values.len() != m {
            return Err(bad(line));
        }
        match groups.last_mut() {
            Some((last, data)) if *last == id => data.extend(values),
            _ => groups.push((id, values)),
        }
    }
    let t = groups.first().map_or(0, |(_, d)| d.len() / m);
    let mut windows = Vec::with_capacity(groups.len());
    for (id, data) in groups {
        if data.len() != t * m {
            return Err(Error::Format(format!("window {id} has a different length")));
        }
        windows.push(Tensor::new(&[t, m], data));
    }
    Ok((headers[1..].to_vec(), windows))
}

/// Shuffled mini-batch index lists covering `0..n` once; the last batch may
/// be short.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Shuffles once and splits off the leading `train_fraction`.
pub fn train_eval_split<T: Clone>(
    items: &[T],
    train_fraction: f64,
    rng: &mut impl Rng,
) -> (Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(rng);
    let cut = ((items.len() as f64) * train_fraction).round() as usize;
    let train = idx[..cut].iter().map(|&i| items[i].clone()).collect();
    let eval = idx[cut..].iter().map(|&i| items[i].clone()).collect();
    (train, eval)
}
