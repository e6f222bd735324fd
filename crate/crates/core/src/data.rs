//! Multivariate series ingestion, chronological splitting, z-score
//! normalization and sliding-window extraction.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::Rng;

/// An `N x C` real matrix in chronological order, one column per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Array2<f64>,
    channel_names: Vec<String>,
}

impl TimeSeries {
    pub fn new(values: Array2<f64>, channel_names: Vec<String>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::EmptySeries);
        }
        if values.ncols() == 0 {
            return Err(Error::ShapeMismatch("series has no channels".into()));
        }
        if channel_names.len() != values.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "{} channel names for {} columns",
                channel_names.len(),
                values.ncols()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos / values.ncols(), pos % values.ncols());
            return Err(Error::NonNumericCell(r + 1, c + 1));
        }
        Ok(Self { values, channel_names })
    }

    /// Build a series with generated channel names `ch0, ch1, ...`.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let names = (0..values.ncols()).map(|c| format!("ch{c}")).collect();
        Self::new(values, names)
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.column(c).to_vec()
    }

    /// Rows `start..end` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            values: self.values.slice(s![start..end, ..]).to_owned(),
            channel_names: self.channel_names.clone(),
        }
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct IngestOptions {
    /// Skip the first column (a timestamp) instead of parsing it.
    #[serde(default)]
    pub timestamp_column: bool,
}

/// Read a headed, comma-separated numeric file.
///
/// Cell positions in [`Error::NonNumericCell`] are 1-based: data row (header
/// excluded) and file column (timestamp column included).
pub fn load_csv(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<TimeSeries> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let skip = usize::from(opts.timestamp_column);
    let headers = reader.headers()?.clone();
    if headers.len() <= skip {
        return Err(Error::EmptySeries);
    }
    let names: Vec<String> = headers.iter().skip(skip).map(|h| h.trim().to_string()).collect();
    let width = names.len();

    let mut flat = Vec::new();
    let mut rows = 0usize;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        for (c, cell) in record.iter().enumerate().skip(skip) {
            let v: f64 = cell
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or(Error::NonNumericCell(r + 1, c + 1))?;
            flat.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptySeries);
    }
    let values = Array2::from_shape_vec((rows, width), flat)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    TimeSeries::new(values, names)
}

/// Write a series in the ingestion format (header row, no timestamp column).
/// Values use the shortest representation that parses back exactly.
pub fn write_csv(ts: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "{}", ts.channel_names.join(","))?;
    for row in ts.values.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Chronological train/val/test proportions, held as exact integer weights
/// so boundary arithmetic never suffers from binary rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    train: u64,
    val: u64,
    test: u64,
}

impl SplitSpec {
    pub fn from_parts(train: u64, val: u64, test: u64) -> Result<Self> {
        if train == 0 || val == 0 || test == 0 {
            return Err(Error::InvalidConfig("every split ratio must be positive".into()));
        }
        Ok(Self { train, val, test })
    }

    /// Ratios in (0, 1) summing to one, e.g. `0.6, 0.2, 0.2`. Each ratio is
    /// resolved to a multiple of 1e-6.
    pub fn from_ratios(train: f64, val: f64, test: f64) -> Result<Self> {
        let parts = [train, val, test];
        if parts.iter().any(|r| !(r.is_finite() && *r > 0.0 && *r < 1.0)) {
            return Err(Error::InvalidConfig(format!("split ratios must lie in (0,1): {parts:?}")));
        }
        let scaled: Vec<u64> = parts.iter().map(|r| (r * 1e6).round() as u64).collect();
        if scaled.iter().sum::<u64>() != 1_000_000 {
            return Err(Error::InvalidConfig(format!("split ratios must sum to 1: {parts:?}")));
        }
        Self::from_parts(scaled[0], scaled[1], scaled[2])
    }

    pub fn ett() -> Self {
        Self { train: 6, val: 2, test: 2 }
    }

    fn total(&self) -> u64 {
        self.train + self.val + self.test
    }

    /// Cut points `(floor(N*train), floor(N*(train+val)))`.
    pub fn boundaries(&self, n: usize) -> (usize, usize) {
        let n = n as u128;
        let total = self.total() as u128;
        let a = n * self.train as u128 / total;
        let b = n * (self.train + self.val) as u128 / total;
        (a as usize, b as usize)
    }

    pub fn ratios(&self) -> [f64; 3] {
        let t = self.total() as f64;
        [self.train as f64 / t, self.val as f64 / t, self.test as f64 / t]
    }
}

pub fn split(ts: &TimeSeries, spec: &SplitSpec) -> Result<(TimeSeries, TimeSeries, TimeSeries)> {
    let n = ts.len();
    let (a, b) = spec.boundaries(n);
    if a == 0 || b == a || b == n {
        return Err(Error::SeriesTooShort { n, l: 0, t: 0 });
    }
    Ok((ts.slice(0, a), ts.slice(a, b), ts.slice(b, n)))
}

/// Per-channel z-score parameters (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn fit_norm(ts: &TimeSeries) -> Result<NormStats> {
    let n = ts.len() as f64;
    let mut mean = Vec::with_capacity(ts.channels());
    let mut std = Vec::with_capacity(ts.channels());
    for (c, col) in ts.values.axis_iter(Axis(1)).enumerate() {
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        if var <= 0.0 {
            return Err(Error::DegenerateChannel(c));
        }
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok(NormStats { mean, std })
}

fn check_stats(ts: &TimeSeries, stats: &NormStats) -> Result<()> {
    if stats.mean.len() != ts.channels() || stats.std.len() != ts.channels() {
        return Err(Error::ShapeMismatch(format!(
            "stats for {} channels applied to {}",
            stats.mean.len(),
            ts.channels()
        )));
    }
    Ok(())
}

pub fn apply_norm(ts: &TimeSeries, stats: &NormStats) -> Result<TimeSeries> {
    check_stats(ts, stats)?;
    let mean = Array1::from(stats.mean.clone());
    let std = Array1::from(stats.std.clone());
    let values = (&ts.values - &mean) / &std;
    TimeSeries::new(values, ts.channel_names.clone())
}

pub fn invert_norm(ts: &TimeSeries, stats: &NormStats) -> Result<TimeSeries> {
    check_stats(ts, stats)?;
    let mean = Array1::from(stats.mean.clone());
    let std = Array1::from(stats.std.clone());
    let values = &ts.values * &std + &mean;
    TimeSeries::new(values, ts.channel_names.clone())
}

/// A lookback/horizon pair cut from a contiguous stretch of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub start_index: usize,
}

/// Number of stride-1 windows of total length `l + t` in a series of length `n`.
pub fn window_count(n: usize, l: usize, t: usize) -> Result<usize> {
    if l == 0 || t == 0 || n < l + t {
        return Err(Error::SeriesTooShort { n, l, t });
    }
    Ok(n - (l + t) + 1)
}

pub fn make_windows(ts: &TimeSeries, l: usize, t: usize) -> Result<Vec<WindowPair>> {
    let count = window_count(ts.len(), l, t)?;
    Ok((0..count)
        .map(|s| WindowPair {
            x: ts.values.slice(s![s..s + l, ..]).to_owned(),
            y: ts.values.slice(s![s + l..s + l + t, ..]).to_owned(),
            start_index: s,
        })
        .collect())
}

/// A uniformly placed contiguous slice of length `m`. Returns the slice and
/// its start row.
pub fn sample_subsequence(ts: &TimeSeries, m: usize, rng: &mut Rng) -> Result<(TimeSeries, usize)> {
    let n = ts.len();
    if m == 0 || n < m {
        return Err(Error::SeriesTooShort { n, l: m, t: 0 });
    }
    let start = rng.random_range(0..=n - m);
    Ok((ts.slice(start, start + m), start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::seeded;
    use ndarray::array;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_small_csv() {
        let f = write_tmp("a,b\n1,2\n3,4\n5,6\n7,8\n");
        let ts = load_csv(f.path(), &IngestOptions::default()).unwrap();
        assert_eq!((ts.len(), ts.channels()), (4, 2));
        assert_eq!(ts.values()[[3, 1]], 8.0);
        assert_eq!(ts.channel_names(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn load_skips_timestamp() {
        let f = write_tmp("date,a\n2016-07-01 00:00:00,1.5\n2016-07-01 01:00:00,2.5\n");
        let opts = IngestOptions { timestamp_column: true };
        let ts = load_csv(f.path(), &opts).unwrap();
        assert_eq!((ts.len(), ts.channels()), (2, 1));
        assert_eq!(ts.channel(0), vec![1.5, 2.5]);
    }

    #[test]
    fn load_rejects_non_numeric() {
        let f = write_tmp("a,b\n1,2\n3,4\n5,x\n");
        let err = load_csv(f.path(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonNumericCell(3, 2)), "{err:?}");
        let f = write_tmp("a,b\n1,2\n3,\n");
        assert!(matches!(
            load_csv(f.path(), &IngestOptions::default()),
            Err(Error::NonNumericCell(2, 2))
        ));
        let f = write_tmp("a\nNaN\n");
        assert!(matches!(
            load_csv(f.path(), &IngestOptions::default()),
            Err(Error::NonNumericCell(1, 1))
        ));
    }

    #[test]
    fn load_missing_and_empty() {
        assert!(matches!(
            load_csv("/nonexistent/file.csv", &IngestOptions::default()),
            Err(Error::MissingFile(_))
        ));
        let f = write_tmp("a,b\n");
        assert!(matches!(load_csv(f.path(), &IngestOptions::default()), Err(Error::EmptySeries)));
    }

    #[test]
    fn csv_write_read_back() {
        let ts = TimeSeries::from_values(array![[0.1, -2.5e-7], [1.0 / 3.0, 4.0]]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ts, f.path()).unwrap();
        let back = load_csv(f.path(), &IngestOptions::default()).unwrap();
        assert_eq!(back, ts);
    }

    fn ramp(n: usize) -> TimeSeries {
        TimeSeries::from_values(Array2::from_shape_fn((n, 1), |(i, _)| i as f64)).unwrap()
    }

    #[test]
    fn split_lengths() {
        let cases = [
            (100, SplitSpec::ett(), (60, 20, 20)),
            (17420, SplitSpec::from_ratios(0.6, 0.2, 0.2).unwrap(), (10452, 3484, 3484)),
            (10, SplitSpec::from_ratios(0.7, 0.1, 0.2).unwrap(), (7, 1, 2)),
        ];
        for (n, spec, want) in cases {
            let (a, b, c) = split(&ramp(n), &spec).unwrap();
            assert_eq!((a.len(), b.len(), c.len()), want, "n={n}");
        }
    }

    #[test]
    fn split_is_a_partition() {
        let spec = SplitSpec::from_parts(7, 1, 2).unwrap();
        for n in 3..200 {
            let (x, y) = spec.boundaries(n);
            match split(&ramp(n), &spec) {
                Ok((a, b, c)) => {
                    assert_eq!((a.len(), b.len(), c.len()), (x, y - x, n - y));
                    let joined = [a.channel(0), b.channel(0), c.channel(0)].concat();
                    assert_eq!(joined, ramp(n).channel(0));
                }
                Err(_) => assert!(x == 0 || x == y || y == n, "n={n}"),
            }
        }
    }

    #[test]
    fn split_ratio_validation() {
        assert!(SplitSpec::from_ratios(0.6, 0.2, 0.1).is_err());
        assert!(SplitSpec::from_ratios(1.0, 0.0, 0.0).is_err());
        assert_eq!(SplitSpec::from_ratios(0.6, 0.2, 0.2).unwrap().boundaries(100), (60, 80));
    }

    #[test]
    fn norm_two_point() {
        let ts = TimeSeries::from_values(array![[0.0], [2.0]]).unwrap();
        let st = fit_norm(&ts).unwrap();
        assert_eq!((st.mean[0], st.std[0]), (1.0, 1.0));
        assert_eq!(apply_norm(&ts, &st).unwrap().channel(0), vec![-1.0, 1.0]);
    }

    #[test]
    fn norm_rejects_constant_channel() {
        let ts = TimeSeries::from_values(array![[1.0, 0.0], [1.0, 3.0]]).unwrap();
        assert!(matches!(fit_norm(&ts), Err(Error::DegenerateChannel(0))));
    }

    #[test]
    fn norm_roundtrip_and_moments() {
        use rand::Rng as _;
        let mut rng = seeded(11);
        let vals = Array2::from_shape_fn((100, 3), |_| rng.random_range(-50.0..80.0));
        let ts = TimeSeries::from_values(vals).unwrap();
        let st = fit_norm(&ts).unwrap();
        let z = apply_norm(&ts, &st).unwrap();
        for c in 0..3 {
            let col = z.channel(c);
            let m = col.iter().sum::<f64>() / 100.0;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 100.0;
            assert!(m.abs() < 1e-10 && (v.sqrt() - 1.0).abs() < 1e-10);
        }
        let back = invert_norm(&z, &st).unwrap();
        let err = (&back.values - &ts.values).iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(err < 1e-12, "roundtrip error {err}");
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&ramp(192), 96, 96).unwrap().len(), 1);
        assert_eq!(make_windows(&ramp(384), 96, 96).unwrap().len(), 193);
        assert!(matches!(
            make_windows(&ramp(191), 96, 96),
            Err(Error::SeriesTooShort { n: 191, l: 96, t: 96 })
        ));
    }

    #[test]
    fn window_count_exhaustive() {
        for n in 1..=64 {
            for l in 1..=n {
                for t in 1..=n {
                    let ts = ramp(n);
                    match make_windows(&ts, l, t) {
                        Ok(w) => {
                            assert_eq!(w.len(), n - (l + t) + 1);
                            for (i, p) in w.iter().enumerate() {
                                assert_eq!(p.start_index, i);
                                assert_eq!(p.x[[0, 0]], i as f64);
                                assert_eq!(p.y[[0, 0]], (i + l) as f64);
                                assert_eq!(p.y[[t - 1, 0]], (i + l + t - 1) as f64);
                            }
                        }
                        Err(_) => assert!(n < l + t),
                    }
                }
            }
        }
    }

    #[test]
    fn subsequence_sampling() {
        let ts = ramp(50);
        let (whole, start) = sample_subsequence(&ts, 50, &mut seeded(1)).unwrap();
        assert_eq!((whole.len(), start), (50, 0));
        let (a, sa) = sample_subsequence(&ts, 10, &mut seeded(5)).unwrap();
        let (b, sb) = sample_subsequence(&ts, 10, &mut seeded(5)).unwrap();
        assert_eq!((a, sa), (b, sb));
        assert!(sample_subsequence(&ts, 51, &mut seeded(5)).is_err());
    }

    #[test]
    fn subsequence_start_is_uniform() {
        // two possible starts; 10000 draws => binomial sd 0.005, band is +-6 sd
        let ts = ramp(11);
        let mut rng = seeded(2024);
        let zeros = (0..10_000)
            .filter(|_| sample_subsequence(&ts, 10, &mut rng).unwrap().1 == 0)
            .count();
        let freq = zeros as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&freq), "start-0 frequency {freq}");
    }
}
