//! Judging synthetic series by the forecasters they train, comparing
//! methods, and measuring how amplitude errors turn into autocorrelation
//! errors.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::data::TimeSeries;
use crate::distill::{baseline_random, baseline_window_gm, distill, init_rng, DistillConfig};
use crate::error::{Error, Result};
use crate::forecaster::{train_to_convergence, EarlyStopping, Forecaster, ModelKind, WindowBatch};
use crate::random::{derive_seed, seeded};
use crate::spectral::{self, Spectrum};

/// Round to six significant digits.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Six significant digits in the shortest form that reads back exactly.
pub fn fmt_sig6(x: f64) -> String {
    round_sig6(x).to_string()
}

fn ser_sig6<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round_sig6(*x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    WindowGm,
    Hdt,
    FullData,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Random, Method::WindowGm, Method::Hdt, Method::FullData];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::WindowGm => "window_gm",
            Method::Hdt => "hdt",
            Method::FullData => "full_data",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub method: String,
    pub dataset: String,
    pub eval_model: String,
    #[serde(serialize_with = "ser_sig6")]
    pub mse_mean: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub mse_std: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub runtime_s: f64,
}

impl EvalEntry {
    fn rounded(&self) -> Self {
        Self {
            mse_mean: round_sig6(self.mse_mean),
            mse_std: round_sig6(self.mse_std),
            runtime_s: round_sig6(self.runtime_s),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    /// Settings that produced the rows, echoed verbatim.
    pub config: serde_json::Value,
    pub entries: Vec<EvalEntry>,
}

impl EvalReport {
    /// The report as it reads back from disk.
    pub fn rounded(&self) -> Self {
        Self { config: self.config.clone(), entries: self.entries.iter().map(EvalEntry::rounded).collect() }
    }

    pub fn find(&self, method: &str, eval_model: &str) -> Option<&EvalEntry> {
        self.entries.iter().find(|e| e.method == method && e.eval_model == eval_model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

pub const CSV_COLUMNS: [&str; 6] = ["method", "dataset", "eval_model", "mse_mean", "mse_std", "runtime_s"];

pub fn emit_report(report: &EvalReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(report)?;
            text.push('\n');
            std::fs::write(path, text)?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(CSV_COLUMNS)?;
            for e in &report.entries {
                w.write_record([
                    e.method.clone(),
                    e.dataset.clone(),
                    e.eval_model.clone(),
                    fmt_sig6(e.mse_mean),
                    fmt_sig6(e.mse_std),
                    fmt_sig6(e.runtime_s),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Read a report back. CSV files carry no config, so it comes back null.
pub fn read_report(format: ReportFormat, path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    match format {
        ReportFormat::Json => Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?),
        ReportFormat::Csv => {
            let mut r = csv::Reader::from_path(path)?;
            let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
            if header != CSV_COLUMNS {
                return Err(Error::InvalidConfig(format!("unexpected report header {header:?}")));
            }
            let mut entries = Vec::new();
            for (i, rec) in r.records().enumerate() {
                let rec = rec?;
                let num = |col: usize| -> Result<f64> {
                    rec[col].parse().map_err(|_| Error::NonNumericCell(i + 1, col + 1))
                };
                entries.push(EvalEntry {
                    method: rec[0].to_string(),
                    dataset: rec[1].to_string(),
                    eval_model: rec[2].to_string(),
                    mse_mean: num(3)?,
                    mse_std: num(4)?,
                    runtime_s: num(5)?,
                });
            }
            Ok(EvalReport { config: serde_json::Value::Null, entries })
        }
    }
}

/// `{dataset}_{method}_M{m}_seed{seed}.{ext}` with path-hostile characters
/// replaced.
pub fn report_file_name(dataset: &str, method: &str, m: usize, seed: u64, format: ReportFormat) -> String {
    let clean = |s: &str| -> String {
        s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
    };
    format!("{}_{}_M{m}_seed{seed}.{}", clean(dataset), clean(method), format.extension())
}

/// How a forecaster is trained to judge a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub lookback: usize,
    pub horizon: usize,
    pub schedule: EarlyStopping,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { lookback: 96, horizon: 96, schedule: EarlyStopping::default(), repeats: 3, seed: 0 }
    }
}

impl EvalSettings {
    /// `seed, seed + 1, ...`, one per repeat.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|r| self.seed.wrapping_add(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub mses: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation (0 for a single repeat).
    pub std: f64,
}

impl EvalOutcome {
    pub fn from_mses(mses: Vec<f64>) -> Self {
        let n = mses.len() as f64;
        let mean = mses.iter().sum::<f64>() / n;
        let std = (mses.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self { mses, mean, std }
    }
}

/// Train one fresh forecaster per seed on the windows of `synthetic`
/// (early-stopped on `val`) and score each on `test`.
pub fn evaluate_distilled(
    synthetic: &TimeSeries,
    val: &WindowBatch,
    test: &WindowBatch,
    model: ModelKind,
    settings: &EvalSettings,
    seeds: &[u64],
) -> Result<EvalOutcome> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one evaluation repeat is needed".into()));
    }
    let train = WindowBatch::from_series(synthetic, settings.lookback, settings.horizon)?;
    let mses = seeds
        .iter()
        .map(|&seed| {
            let init = Forecaster::init_uniform(model, settings.lookback, settings.horizon, &mut seeded(seed))?;
            let out = train_to_convergence(&init, &train, val, &settings.schedule, seed)?;
            out.model.batch_mse(test)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalOutcome::from_mses(mses))
}

/// Settings of a method comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    pub dataset: String,
    pub methods: Vec<Method>,
    pub eval_models: Vec<ModelKind>,
    pub distill: DistillConfig,
    pub eval: EvalSettings,
    /// Fill `runtime_s` with wall-clock seconds; left at 0 otherwise so that
    /// reports are byte-reproducible.
    pub record_runtime: bool,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            dataset: "dataset".into(),
            methods: Method::ALL.to_vec(),
            eval_models: vec![ModelKind::Linear],
            distill: DistillConfig::default(),
            eval: EvalSettings::default(),
            record_runtime: false,
        }
    }
}

/// One row per (method, eval model), in the order given.
pub fn run_comparison(
    train: &TimeSeries,
    val: &TimeSeries,
    test: &TimeSeries,
    cfg: &ComparisonConfig,
) -> Result<EvalReport> {
    let (l, t) = (cfg.eval.lookback, cfg.eval.horizon);
    let val_b = WindowBatch::from_series(val, l, t)?;
    let test_b = WindowBatch::from_series(test, l, t)?;
    let mut methods: Vec<Method> = Vec::new();
    for m in &cfg.methods {
        if !methods.contains(m) {
            methods.push(*m);
        }
    }
    let seeds = cfg.eval.seeds();
    let produced = methods
        .par_iter()
        .map(|method| {
            let start = Instant::now();
            let series = match method {
                Method::Random => baseline_random(train, cfg.distill.length, &mut init_rng(cfg.distill.seed))?,
                Method::WindowGm => baseline_window_gm(train, val, &cfg.distill)?.synthetic,
                Method::Hdt => distill(train, val, &cfg.distill)?.synthetic,
                Method::FullData => train.clone(),
            };
            Ok((*method, series, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, ModelKind)> =
        (0..produced.len()).flat_map(|i| cfg.eval_models.iter().map(move |m| (i, *m))).collect();
    let entries = jobs
        .par_iter()
        .map(|&(i, model)| {
            let (method, series, build_time) = &produced[i];
            let start = Instant::now();
            let out = evaluate_distilled(series, &val_b, &test_b, model, &cfg.eval, &seeds)?;
            let runtime = if cfg.record_runtime { build_time + start.elapsed().as_secs_f64() } else { 0.0 };
            Ok(EvalEntry {
                method: method.name().to_string(),
                dataset: cfg.dataset.clone(),
                eval_model: model.to_string(),
                mse_mean: out.mean,
                mse_std: out.std,
                runtime_s: runtime,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { config: serde_json::to_value(cfg)?, entries })
}

/// Outcome of the amplitude-perturbation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub epsilons: Vec<f64>,
    /// Worst `max_{0<=k<=K} |r_perturbed(k) - r_base(k)|` over trials, per epsilon.
    pub gaps: Vec<f64>,
    /// Least-squares slope of gap on epsilon through the origin.
    pub slope: f64,
    /// Rank correlation of epsilon and gap; absent for fewer than two points.
    pub spearman: Option<f64>,
    pub max_lag: usize,
    pub trials: usize,
}

impl TheoremReport {
    /// Largest `gap / (slope * eps)` over the sweep.
    pub fn worst_bound_ratio(&self) -> f64 {
        self.epsilons
            .iter()
            .zip(&self.gaps)
            .filter(|(e, _)| **e > 0.0)
            .map(|(e, g)| g / (self.slope * e))
            .fold(0.0, f64::max)
    }
}

/// Change each one-sided amplitude of `base` by `deltas[j]` (clamped at
/// zero) while keeping every phase.
pub fn perturb_amplitudes(base: &[f64], deltas: &[f64]) -> Result<Vec<f64>> {
    let spec = spectral::rfft(base)?;
    if deltas.len() != spec.bins() {
        return Err(Error::LengthMismatch(deltas.len(), spec.bins()));
    }
    // skip the transform round trip so a null perturbation is exact
    if deltas.iter().all(|d| *d == 0.0) {
        return Ok(base.to_vec());
    }
    let coeffs: Vec<Complex64> = spec
        .coeffs()
        .iter()
        .zip(deltas)
        .map(|(z, d)| {
            let amp = (z.norm() + d).max(0.0);
            // a zero coefficient has no phase; treat it as phase 0
            let phase = if z.norm() > 0.0 { z.arg() } else { 0.0 };
            Complex64::from_polar(amp, phase)
        })
        .collect();
    let mut out = Spectrum::from_coeffs(coeffs, base.len())?;
    // phases of self-conjugate bins are 0 or pi, so polar round-off is the only imaginary part
    out.project_hermitian();
    spectral::irfft(&out)
}

/// Largest absolute difference between circular autocorrelations at lags 0..=K.
pub fn acf_gap(a: &[f64], b: &[f64], max_lag: usize) -> Result<f64> {
    let ra = spectral::acf_circular(a, max_lag)?.values;
    let rb = spectral::acf_circular(b, max_lag)?.values;
    Ok(ra.iter().zip(&rb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Average ranks (ties share the mean of their positions), 1-based.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` when either side has no spread.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Sweep amplitude perturbations of size `epsilons` over `trials` random
/// sign patterns and record the worst autocorrelation gap per size.
///
/// Trial `i` uses the same sign pattern at every epsilon.
pub fn verify_theorem1(base: &[f64], epsilons: &[f64], max_lag: usize, trials: usize, seed: u64) -> Result<TheoremReport> {
    if epsilons.is_empty() {
        return Err(Error::InvalidConfig("epsilon list is empty".into()));
    }
    if epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
        return Err(Error::InvalidConfig("epsilons must be finite and >= 0".into()));
    }
    if epsilons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("epsilons must be strictly increasing".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    if max_lag >= base.len() {
        return Err(Error::LagOutOfRange { lag: max_lag, len: base.len() });
    }
    let mean = base.iter().sum::<f64>() / base.len() as f64;
    let base: Vec<f64> = base.iter().map(|x| x - mean).collect();
    let bins = spectral::bin_count(base.len());
    let signs: Vec<Vec<f64>> = (0..trials)
        .map(|t| {
            let mut rng = seeded(derive_seed(seed, t as u64));
            (0..bins).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect()
        })
        .collect();
    let mut gaps = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut worst = 0.0f64;
        for s in &signs {
            let deltas: Vec<f64> = s.iter().map(|v| v * eps).collect();
            let perturbed = perturb_amplitudes(&base, &deltas)?;
            worst = worst.max(acf_gap(&base, &perturbed, max_lag)?);
        }
        gaps.push(worst);
    }
    let den: f64 = epsilons.iter().map(|e| e * e).sum();
    let slope = if den > 0.0 { epsilons.iter().zip(&gaps).map(|(e, g)| e * g).sum::<f64>() / den } else { 0.0 };
    let spearman = if epsilons.len() >= 2 { spearman(epsilons, &gaps) } else { None };
    Ok(TheoremReport { epsilons: epsilons.to_vec(), gaps, slope, spearman, max_lag, trials })
}
