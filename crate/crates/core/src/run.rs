//! Reproducible runs: a TOML run configuration, command entry points that
//! write artifacts plus a manifest, and exit-code mapping for the binary.
//!
//! Settings resolve in the order: command-line flag, `TSDISTILL_*` environment
//! variable, config file, built-in default. The binary handles the first two
//! through [`Overrides`]; [`load_config`] handles the rest.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{grad_check_with_fault, Fault};
use crate::data::{apply_norm, fit_norm, load_csv, split, write_csv, IngestOptions, SplitSpec, TimeSeries};
use crate::distill::{distill, write_history, DistillConfig, StepPlan, SyntheticSpectrum};
use crate::error::{Error, Result};
use crate::eval::{emit_report, report_file_name, run_comparison, verify_theorem1, ComparisonConfig, EvalReport, EvalSettings, Method, ReportFormat, TheoremReport};
use crate::forecaster::{Forecaster, ModelKind};
use crate::random::{derive_seed, seeded};
use crate::synth::{generate, sine_mix_fixture, NoiseKind, SineMixSpec};

pub const ENV_PREFIX: &str = "TSDISTILL_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// CSV input. Without one, the series comes from `gen`.
    pub dataset: Option<PathBuf>,
    /// Label used in file names and reports; defaults to the file stem.
    pub dataset_name: Option<String>,
    pub ingest: IngestOptions,
    pub split: SplitSpec,
    /// z-score every split with training statistics.
    pub normalize: bool,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub distill: DistillConfig,
    pub eval: EvalSettings,
    pub methods: Vec<Method>,
    pub eval_models: Vec<ModelKind>,
    pub record_runtime: bool,
    pub report_format: ReportFormat,
    pub gen: SineMixSpec,
    pub theorem: TheoremConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            dataset_name: None,
            ingest: IngestOptions::default(),
            split: SplitSpec::ett(),
            normalize: true,
            out: PathBuf::from("out"),
            threads: None,
            distill: DistillConfig::default(),
            eval: EvalSettings::default(),
            methods: Method::ALL.to_vec(),
            eval_models: vec![ModelKind::Linear],
            record_runtime: false,
            report_format: ReportFormat::Csv,
            gen: sine_mix_fixture(),
            theorem: TheoremConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremConfig {
    /// Base series; only its first channel is used.
    pub base: SineMixSpec,
    pub epsilons: Vec<f64>,
    pub max_lag: usize,
    pub trials: usize,
    pub seed: u64,
    /// Fail when the rank correlation does not exceed this.
    pub min_spearman: f64,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        Self {
            base: SineMixSpec { length: 512, noise: NoiseKind::Ar1, noise_scale: 1.0, ar_phi: 0.8, ..Default::default() },
            epsilons: vec![1e-3, 3e-3, 1e-2, 3e-2, 1e-1],
            max_lag: 32,
            trials: 20,
            seed: 0,
            min_spearman: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub length: usize,
    pub channels: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub steps: usize,
    pub harmonics: usize,
    pub lambda: f64,
    pub p: u8,
    pub model: ModelKind,
    pub eps: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Corrupt one backward rule; the check is then expected to fail.
    pub fault: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            length: 16,
            channels: 2,
            lookback: 4,
            horizon: 4,
            steps: 2,
            harmonics: 4,
            lambda: 0.1,
            p: 1,
            model: ModelKind::Linear,
            eps: 1e-5,
            tolerance: 1e-4,
            seed: 0,
            fault: None,
        }
    }
}

pub fn parse_fault(name: &str) -> Result<Fault> {
    match name {
        "matmul" => Ok(Fault::MatMul),
        "square" => Ok(Fault::Square),
        "magnitude" => Ok(Fault::ComplexMagnitude),
        other => Err(Error::InvalidConfig(format!("unknown fault '{other}' (matmul|square|magnitude)"))),
    }
}

/// Values set on the command line or through the environment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub length: Option<usize>,
    pub harmonics: Option<usize>,
    pub lambda: Option<f64>,
    pub eta: Option<f64>,
    pub p: Option<u8>,
    pub inner_steps: Option<usize>,
    pub outer_iters: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.distill.seed = s;
            cfg.eval.seed = s;
            cfg.gen.seed = s;
            cfg.theorem.seed = s;
            cfg.gradcheck.seed = s;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if let Some(m) = self.length {
            cfg.distill.length = m;
        }
        if self.harmonics.is_some() {
            cfg.distill.harmonics = self.harmonics;
        }
        if let Some(v) = self.lambda {
            cfg.distill.lambda = v;
        }
        if let Some(v) = self.eta {
            cfg.distill.eta = v;
        }
        if let Some(v) = self.p {
            cfg.distill.p = v;
        }
        if let Some(v) = self.inner_steps {
            cfg.distill.expert_steps = v;
            cfg.distill.student_steps = v;
        }
        if let Some(v) = self.outer_iters {
            cfg.distill.outer_max_iters = v;
        }
    }
}

/// Read a config file (or start from defaults) and apply overrides.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            if !p.is_file() {
                return Err(Error::MissingFile(p.to_path_buf()));
            }
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {}", p.display(), e.message())))?
        }
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    Ok(cfg)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetInfo {
    pub name: String,
    /// File path, or "generated".
    pub source: String,
    /// Of the file bytes, or of the little-endian values for generated data.
    pub sha256: String,
    pub length: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputFile {
    pub name: String,
    pub sha256: String,
}

/// Written next to every command's outputs. Carries no timestamps, so it is
/// reproducible byte for byte.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub dataset: Option<DatasetInfo>,
    pub config: RunConfig,
    pub warnings: Vec<String>,
    pub outputs: Vec<OutputFile>,
}

/// Files a command wrote, manifest last.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    /// Set when a verification command ran to completion but its check failed.
    pub failure: Option<String>,
}

impl RunOutput {
    pub fn manifest(&self) -> &Path {
        self.files.last().expect("manifest is always written")
    }

    /// Exit status for the binary: 0, or the numeric-failure code.
    pub fn exit_code(&self) -> i32 {
        if self.failure.is_some() {
            Error::CheckFailed(String::new()).exit_code()
        } else {
            0
        }
    }
}

struct Dataset {
    info: DatasetInfo,
    series: TimeSeries,
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.dataset {
        Some(path) => {
            if !path.is_file() {
                return Err(Error::MissingFile(path.clone()));
            }
            let bytes = std::fs::read(path)?;
            let series = load_csv(path, &cfg.ingest)?;
            let name = cfg.dataset_name.clone().unwrap_or_else(|| {
                path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into())
            });
            Ok(Dataset {
                info: DatasetInfo {
                    name,
                    source: path.display().to_string(),
                    sha256: sha256_hex(&bytes),
                    length: series.len(),
                    channels: series.channels(),
                },
                series,
            })
        }
        None => {
            let series = generate(&cfg.gen)?;
            let bytes: Vec<u8> = series.values().iter().flat_map(|v| v.to_le_bytes()).collect();
            Ok(Dataset {
                info: DatasetInfo {
                    name: cfg.dataset_name.clone().unwrap_or_else(|| "sine_mix".into()),
                    source: "generated".into(),
                    sha256: sha256_hex(&bytes),
                    length: series.len(),
                    channels: series.channels(),
                },
                series,
            })
        }
    }
}

/// Chronological split, z-scored with training statistics when enabled.
pub fn prepare_splits(series: &TimeSeries, cfg: &RunConfig) -> Result<(TimeSeries, TimeSeries, TimeSeries)> {
    let [a, b, c] = cfg.split.ratios();
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(Error::InvalidConfig("every split ratio must be positive".into()));
    }
    let (train, val, test) = split(series, &cfg.split)?;
    if !cfg.normalize {
        return Ok((train, val, test));
    }
    let stats = fit_norm(&train)?;
    Ok((apply_norm(&train, &stats)?, apply_norm(&val, &stats)?, apply_norm(&test, &stats)?))
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(self.path(name), text)?;
        Ok(())
    }

    fn finish(
        mut self,
        stem: &str,
        command: &str,
        dataset: Option<DatasetInfo>,
        cfg: &RunConfig,
        warnings: Vec<String>,
    ) -> Result<RunOutput> {
        let mut outputs = Vec::new();
        for f in &self.files {
            outputs.push(OutputFile {
                name: f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                sha256: sha256_hex(&std::fs::read(f)?),
            });
        }
        let manifest = Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            dataset,
            config: cfg.clone(),
            warnings: warnings.clone(),
            outputs,
        };
        self.write_json(&format!("{stem}_manifest.json"), &manifest)?;
        Ok(RunOutput { files: self.files, warnings, failure: None })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct DistillSummary {
    best_val_mse: f64,
    snapshot_iteration: usize,
    iterations_run: usize,
    evaluations: Vec<(usize, f64)>,
    degenerate_denominator: usize,
}

/// Distill the training split and write the synthetic series (in normalized
/// units), the loss history, a summary and the manifest.
pub fn cmd_distill(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.distill.validate()?;
    let data = load_dataset(cfg)?;
    let (train, val, _) = prepare_splits(&data.series, cfg)?;
    let result = distill(&train, &val, &cfg.distill)?;
    let stem = format!("{}_hdt_M{}_seed{}", data.info.name, cfg.distill.length, cfg.distill.seed);
    let mut art = Artifacts::new(&cfg.out)?;
    write_csv(&result.synthetic, art.path(&format!("{stem}_synthetic.csv")))?;
    write_history(&result.history, art.path(&format!("{stem}_history.csv")))?;
    art.write_json(
        &format!("{stem}_result.json"),
        &DistillSummary {
            best_val_mse: result.best_val_mse,
            snapshot_iteration: result.snapshot_iteration,
            iterations_run: result.iterations_run,
            evaluations: result.evaluations.clone(),
            degenerate_denominator: result.warnings.degenerate_denominator,
        },
    )?;
    let mut warnings = Vec::new();
    if result.warnings.degenerate_denominator > 0 {
        warnings.push(format!(
            "trajectory denominator hit the guard in {} iterations",
            result.warnings.degenerate_denominator
        ));
    }
    art.finish(&stem, "distill", Some(data.info), cfg, warnings)
}

/// Build every configured method's series, judge it with every evaluation
/// model, and write the report.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(RunOutput, EvalReport)> {
    cfg.distill.validate()?;
    if cfg.methods.is_empty() || cfg.eval_models.is_empty() {
        return Err(Error::InvalidConfig("methods and eval_models must be non-empty".into()));
    }
    for m in &cfg.eval_models {
        m.validate()?;
    }
    let data = load_dataset(cfg)?;
    let (train, val, test) = prepare_splits(&data.series, cfg)?;
    let comparison = ComparisonConfig {
        dataset: data.info.name.clone(),
        methods: cfg.methods.clone(),
        eval_models: cfg.eval_models.clone(),
        distill: cfg.distill.clone(),
        eval: cfg.eval.clone(),
        record_runtime: cfg.record_runtime,
    };
    let report = run_comparison(&train, &val, &test, &comparison)?;
    let methods: Vec<&str> = cfg.methods.iter().map(|m| m.name()).collect();
    let name = report_file_name(&data.info.name, &methods.join("-"), cfg.distill.length, cfg.eval.seed, cfg.report_format);
    let stem = name.trim_end_matches(&format!(".{}", cfg.report_format.extension())).to_string();
    let mut art = Artifacts::new(&cfg.out)?;
    emit_report(&report, cfg.report_format, art.path(&name))?;
    let mut warnings = Vec::new();
    if cfg.record_runtime {
        warnings.push("runtime_s holds wall-clock time; reports will differ between runs".into());
    }
    Ok((art.finish(&stem, "eval", Some(data.info), cfg, warnings)?, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremOutput {
    #[serde(flatten)]
    pub report: TheoremReport,
    pub worst_bound_ratio: f64,
    pub passed: bool,
}

/// Amplitude-perturbation sweep on the configured base series.
pub fn cmd_verify_theorem(cfg: &RunConfig) -> Result<(RunOutput, TheoremOutput)> {
    let t = &cfg.theorem;
    let base = generate(&t.base)?.channel(0);
    let report = verify_theorem1(&base, &t.epsilons, t.max_lag, t.trials, t.seed)?;
    let passed = report.spearman.is_none_or(|s| s > t.min_spearman);
    let out = TheoremOutput { worst_bound_ratio: report.worst_bound_ratio(), passed, report };
    let stem = format!("theorem_M{}_seed{}", base.len(), t.seed);
    let mut art = Artifacts::new(&cfg.out)?;
    art.write_json(&format!("{stem}.json"), &out)?;
    let mut warnings = Vec::new();
    if out.report.spearman.is_none() {
        warnings.push("rank correlation undefined for this sweep".into());
    }
    let mut run = art.finish(&stem, "verify-theorem", None, cfg, warnings)?;
    if !passed {
        run.failure = Some(format!("rank correlation {:?} not above {}", out.report.spearman, t.min_spearman));
    }
    Ok((run, out))
}

/// Write a generated series as CSV.
pub fn cmd_gen(cfg: &RunConfig) -> Result<RunOutput> {
    let series = generate(&cfg.gen)?;
    let stem = format!("sine_mix_N{}_C{}_seed{}", cfg.gen.length, cfg.gen.channels, cfg.gen.seed);
    let mut art = Artifacts::new(&cfg.out)?;
    write_csv(&series, art.path(&format!("{stem}.csv")))?;
    art.finish(&stem, "gen", None, cfg, Vec::new())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckOutput {
    pub max_rel_err: f64,
    pub per_instance: Vec<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Finite-difference check of the full distillation objective on small
/// random instances.
pub fn gradcheck_objective(g: &GradcheckConfig) -> Result<Vec<f64>> {
    let fault = g.fault.as_deref().map(parse_fault).transpose()?;
    if g.instances == 0 {
        return Err(Error::InvalidConfig("instances must be >= 1".into()));
    }
    if !(g.eps > 0.0 && g.eps.is_finite()) {
        return Err(Error::InvalidConfig(format!("eps {} must be positive", g.eps)));
    }
    let cfg = DistillConfig {
        length: g.length,
        harmonics: Some(g.harmonics),
        lookback: g.lookback,
        horizon: g.horizon,
        expert_steps: g.steps,
        student_steps: g.steps,
        inner_lr: 0.1,
        lambda: g.lambda,
        p: g.p,
        model: g.model,
        ..Default::default()
    };
    cfg.validate()?;
    (0..g.instances as u64)
        .map(|i| {
            let mut rng = seeded(derive_seed(g.seed, i));
            let noise = |rng: &mut crate::random::Rng| {
                TimeSeries::from_values(Array2::from_shape_fn((g.length, g.channels), |_| rng.random_range(-1.0..1.0)))
            };
            let real = noise(&mut rng)?;
            let synthetic = noise(&mut rng)?;
            let theta0 = Forecaster::init_gaussian(g.model, g.lookback, g.horizon, 0.1, &mut rng)?;
            let plan = StepPlan::prepare(&real, theta0, &cfg)?;
            let fs = SyntheticSpectrum::from_series(&synthetic)?.to_matrix();
            let check = grad_check_with_fault(|tape, v| Ok(plan.record(tape, v)?.total), &fs, g.eps, fault)?;
            Ok(check.max_rel_err)
        })
        .collect()
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<(RunOutput, GradcheckOutput)> {
    let g = &cfg.gradcheck;
    let per_instance = gradcheck_objective(g)?;
    let max_rel_err = per_instance.iter().cloned().fold(0.0, f64::max);
    let out = GradcheckOutput { max_rel_err, per_instance, tolerance: g.tolerance, passed: max_rel_err < g.tolerance };
    let mut warnings = Vec::new();
    if g.eps >= 1e-2 {
        warnings.push(format!("eps {} is large; truncation error will dominate", g.eps));
    }
    if g.fault.is_some() {
        warnings.push("a backward rule was deliberately corrupted".into());
    }
    let stem = format!("gradcheck_seed{}", g.seed);
    let mut art = Artifacts::new(&cfg.out)?;
    art.write_json(&format!("{stem}.json"), &out)?;
    let mut run = art.finish(&stem, "gradcheck", None, cfg, warnings)?;
    if !out.passed {
        run.failure = Some(format!("max relative error {max_rel_err:.3e} >= {}", g.tolerance));
    }
    Ok((run, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> RunConfig {
        RunConfig {
            out: dir.to_path_buf(),
            gen: SineMixSpec {
                length: 400,
                channels: 2,
                components: vec![crate::synth::Component::at_bin(25, 1.0, 0.0)],
                noise: NoiseKind::White,
                noise_scale: 0.3,
                ..Default::default()
            },
            distill: DistillConfig {
                length: 48,
                harmonics: Some(6),
                lookback: 8,
                horizon: 4,
                expert_steps: 2,
                student_steps: 2,
                outer_max_iters: 4,
                eval_every: 2,
                eta: 100.0,
                scoring: crate::forecaster::EarlyStopping { max_epochs: 5, ..Default::default() },
                ..Default::default()
            },
            eval: EvalSettings {
                lookback: 8,
                horizon: 4,
                repeats: 2,
                schedule: crate::forecaster::EarlyStopping { max_epochs: 10, ..Default::default() },
                seed: 0,
            },
            ..Default::default()
        }
    }

    #[test]
    fn overrides_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[distill]\nlength = 200\nlambda = 0.5\n[eval]\nrepeats = 4\n").unwrap();
        let cfg = load_config(Some(&p), &Overrides::default()).unwrap();
        assert_eq!((cfg.distill.length, cfg.distill.lambda, cfg.eval.repeats), (200, 0.5, 4));
        assert_eq!(cfg.distill.p, DistillConfig::default().p);
        let o = Overrides { length: Some(96), seed: Some(7), inner_steps: Some(3), ..Default::default() };
        let cfg = load_config(Some(&p), &o).unwrap();
        assert_eq!((cfg.distill.length, cfg.distill.lambda), (96, 0.5));
        assert_eq!((cfg.distill.seed, cfg.eval.seed, cfg.gen.seed), (7, 7, 7));
        assert_eq!((cfg.distill.expert_steps, cfg.distill.student_steps), (3, 3));
    }

    #[test]
    fn config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = load_config(Some(&dir.path().join("nope.toml")), &Overrides::default()).unwrap_err();
        assert_eq!(missing.exit_code(), 2);
        let p = dir.path().join("bad.toml");
        std::fs::write(&p, "[distill]\nlenght = 3\n").unwrap();
        assert_eq!(load_config(Some(&p), &Overrides::default()).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
        for name in ["sine_mix.toml", "etth1.toml"] {
            let cfg = load_config(Some(&dir.join(name)), &Overrides::default()).unwrap();
            cfg.distill.validate().unwrap();
        }
    }

    #[test]
    fn default_config_roundtrips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn distill_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let out = cmd_distill(&cfg).unwrap();
        assert_eq!(out.files.len(), 4);
        assert!(out.files.iter().all(|f| f.is_file()));
        let history = crate::distill::read_history(&out.files[1]).unwrap();
        assert!(history.len() <= cfg.distill.outer_max_iters);
        let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.manifest()).unwrap()).unwrap();
        assert_eq!(manifest["config"]["distill"]["length"], 48);
        assert_eq!(manifest["dataset"]["source"], "generated");
    }

    #[test]
    fn zero_outer_iterations_keep_the_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.distill.outer_max_iters = 0;
        let out = cmd_distill(&cfg).unwrap();
        let synth = load_csv(&out.files[0], &IngestOptions::default()).unwrap();
        let data = generate(&cfg.gen).unwrap();
        let (train, _, _) = prepare_splits(&data, &cfg).unwrap();
        let init = SyntheticSpectrum::from_series(&crate::distill::baseline_random(&train, 48, &mut crate::distill::init_rng(0)).unwrap())
            .unwrap()
            .to_series()
            .unwrap();
        for (a, b) in synth.values().iter().zip(init.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_dataset_is_io() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.dataset = Some(dir.path().join("absent.csv"));
        assert_eq!(cmd_distill(&cfg).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn eval_full_data_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.methods = vec![Method::FullData];
        let (out, report) = cmd_eval(&cfg).unwrap();
        assert_eq!(report.entries.len(), 1);
        let back = crate::eval::read_report(ReportFormat::Csv, &out.files[0]).unwrap();
        assert_eq!(back.entries, report.rounded().entries);
        assert!(out.files[0].file_name().unwrap().to_string_lossy().contains("full_data_M48_seed0"));
    }

    #[test]
    fn gen_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let a = cmd_gen(&cfg).unwrap();
        let first = std::fs::read(&a.files[0]).unwrap();
        let b = cmd_gen(&cfg).unwrap();
        assert_eq!(first, std::fs::read(&b.files[0]).unwrap());
        let loaded = load_csv(&a.files[0], &IngestOptions::default()).unwrap();
        assert_eq!(loaded.len(), 400);
        let short = RunConfig { gen: SineMixSpec { length: 1, ..cfg.gen.clone() }, ..cfg };
        assert_eq!(cmd_gen(&short).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn theorem_sweeps() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.theorem.trials = 5;
        let (_, out) = cmd_verify_theorem(&cfg).unwrap();
        assert!(out.passed && out.report.spearman.unwrap() > 0.9);
        cfg.theorem.min_spearman = 1.0;
        assert_eq!(cmd_verify_theorem(&cfg).unwrap().0.exit_code(), 3);
        cfg.theorem.epsilons = vec![0.02];
        let (_, one) = cmd_verify_theorem(&cfg).unwrap();
        assert!((one.report.slope - one.report.gaps[0] / 0.02).abs() <= 1e-12 * one.report.slope);
        cfg.theorem.epsilons = vec![0.1, 0.01];
        assert_eq!(cmd_verify_theorem(&cfg).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn gradcheck_passes_and_catches_faults() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.gradcheck.instances = 3;
        let (_, ok) = cmd_gradcheck(&cfg).unwrap();
        assert!(ok.max_rel_err < 1e-4);
        cfg.gradcheck.eps = 1e-1;
        let (run, coarse) = cmd_gradcheck(&cfg).unwrap();
        assert!(coarse.max_rel_err.is_finite() && !run.warnings.is_empty());
        cfg.gradcheck.eps = 1e-5;
        cfg.gradcheck.fault = Some("matmul".into());
        let (run, broken) = cmd_gradcheck(&cfg).unwrap();
        assert!(!broken.passed && broken.max_rel_err > 1e-2);
        assert_eq!(run.exit_code(), 3);
        cfg.gradcheck.fault = Some("bogus".into());
        assert_eq!(cmd_gradcheck(&cfg).unwrap_err().exit_code(), 1);
    }
}
