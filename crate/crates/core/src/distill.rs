//! Harmonic-domain distillation of a multichannel series into a short
//! synthetic one, plus the two reference methods it is compared against.
//!
//! The synthetic series is held as one-sided spectra. Each outer iteration
//! samples a real subsequence, keeps its `k` strongest bins, and moves only
//! those synthetic coefficients along the gradient of
//! `trajectory_gap + lambda * amplitude_gap`, where the trajectory gap
//! compares a few unrolled SGD steps of a forecaster trained on the
//! harmonic reconstructions of the real and synthetic series.

use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, MAGNITUDE_GUARD};
use crate::data::{sample_subsequence, window_count, TimeSeries};
use crate::error::{Error, Result};
use crate::forecaster::{
    record_sgd, sgd_train, train_to_convergence, window_indices, window_indices_at, EarlyStopping,
    Forecaster, ModelKind, TapedModel, TrainConfig, WindowBatch,
};
use crate::random::{derive_seed, seeded, Rng};
use crate::spectral::{self, bin_count, HarmonicSet, Spectrum};

/// Guard added to a vanishing expert displacement.
pub const DENOMINATOR_GUARD: f64 = 1e-12;

const INIT_STREAM: u64 = 1;
const LOOP_STREAM: u64 = 2;
const SCORE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Synthetic length `M`.
    pub length: usize,
    /// Harmonics kept per channel; `None` means `M / 4`.
    pub harmonics: Option<usize>,
    pub lambda: f64,
    /// Order of the amplitude-gap norm, 1 or 2.
    pub p: u8,
    /// Outer step size on the synthetic spectrum.
    pub eta: f64,
    /// Update rule applied with `eta` (and `window_eta`).
    pub optimizer: OuterOptimizer,
    pub expert_steps: usize,
    pub student_steps: usize,
    pub inner_lr: f64,
    pub outer_max_iters: usize,
    pub eval_every: usize,
    /// Failed validation checks tolerated before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
    pub exclude_dc: bool,
    pub penalize_offharmonics: bool,
    pub lookback: usize,
    pub horizon: usize,
    /// Backbone unrolled inside the trajectory gap.
    pub model: ModelKind,
    /// Std of the fresh Gaussian parameters drawn each outer iteration.
    pub init_std: f64,
    /// Backbone and schedule used to score snapshots on validation data.
    pub scoring_model: ModelKind,
    pub scoring: EarlyStopping,
    /// Windows per mini-batch for the time-domain window matcher.
    pub window_batch: usize,
    /// Step size of the time-domain window matcher.
    pub window_eta: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            length: 384,
            harmonics: None,
            lambda: 1e-2,
            p: 1,
            eta: 0.01,
            optimizer: OuterOptimizer::Sgd,
            expert_steps: 20,
            student_steps: 20,
            inner_lr: 0.01,
            outer_max_iters: 1000,
            eval_every: 50,
            patience: 10,
            seed: 0,
            exclude_dc: false,
            penalize_offharmonics: false,
            lookback: 96,
            horizon: 96,
            model: ModelKind::Linear,
            init_std: 0.01,
            scoring_model: ModelKind::Linear,
            scoring: EarlyStopping::default(),
            window_batch: 32,
            window_eta: 0.01,
        }
    }
}

impl DistillConfig {
    pub fn k(&self) -> usize {
        self.harmonics.unwrap_or(self.length / 4).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let bins = bin_count(self.length);
        if self.lookback == 0 || self.horizon == 0 {
            return bad("lookback and horizon must be positive".into());
        }
        if self.length < self.lookback + self.horizon {
            return bad(format!(
                "synthetic length {} is shorter than lookback + horizon = {}",
                self.length,
                self.lookback + self.horizon
            ));
        }
        if let Some(k) = self.harmonics {
            if k == 0 || k > bins {
                return bad(format!("harmonic count {k} outside 1..={bins}"));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be finite and >= 0", self.lambda));
        }
        if self.p != 1 && self.p != 2 {
            return bad(format!("norm order p = {} must be 1 or 2", self.p));
        }
        for (name, v) in [("eta", self.eta), ("inner_lr", self.inner_lr), ("window_eta", self.window_eta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be finite and >= 0"));
            }
        }
        if self.expert_steps == 0 || self.student_steps == 0 {
            return bad("expert and student steps must be >= 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return bad(format!("init_std {}", self.init_std));
        }
        if self.window_batch == 0 {
            return bad("window_batch must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OuterOptimizer {
    /// `x <- x - eta * g`.
    #[default]
    Sgd,
    /// Adam with default moments, updating only the coordinates a step
    /// touches (moments and step counts of the others are left alone).
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Persistent state of the outer update.
#[derive(Debug, Clone)]
pub struct OuterState {
    kind: OuterOptimizer,
    first: Array2<f64>,
    second: Array2<f64>,
    steps: Array2<i32>,
}

impl OuterState {
    pub fn new(kind: OuterOptimizer, shape: (usize, usize)) -> Self {
        Self { kind, first: Array2::zeros(shape), second: Array2::zeros(shape), steps: Array2::zeros(shape) }
    }

    /// Move `x` against `grad` wherever `active` holds.
    pub fn apply(&mut self, x: &mut Array2<f64>, grad: &Array2<f64>, lr: f64, active: impl Fn((usize, usize)) -> bool) {
        for (idx, v) in x.indexed_iter_mut() {
            if !active(idx) {
                continue;
            }
            let g = grad[idx];
            match self.kind {
                OuterOptimizer::Sgd => *v -= lr * g,
                OuterOptimizer::Adam => {
                    let m = &mut self.first[idx];
                    let s = &mut self.second[idx];
                    let n = &mut self.steps[idx];
                    *n += 1;
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *s = ADAM_BETA2 * *s + (1.0 - ADAM_BETA2) * g * g;
                    let mh = *m / (1.0 - ADAM_BETA1.powi(*n));
                    let sh = *s / (1.0 - ADAM_BETA2.powi(*n));
                    *v -= lr * mh / (sh.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Learnable one-sided spectra, one per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpectrum {
    spectra: Vec<Spectrum>,
    names: Vec<String>,
}

impl SyntheticSpectrum {
    pub fn from_series(ts: &TimeSeries) -> Result<Self> {
        let spectra = (0..ts.channels()).map(|c| spectral::rfft(&ts.channel(c))).collect::<Result<_>>()?;
        Ok(Self { spectra, names: ts.channel_names().to_vec() })
    }

    pub fn length(&self) -> usize {
        self.spectra[0].source_length()
    }

    pub fn channels(&self) -> usize {
        self.spectra.len()
    }

    pub fn spectra(&self) -> &[Spectrum] {
        &self.spectra
    }

    pub fn to_series(&self) -> Result<TimeSeries> {
        let m = self.length();
        let mut values = Array2::zeros((m, self.channels()));
        for (c, s) in self.spectra.iter().enumerate() {
            for (n, v) in spectral::irfft(s)?.into_iter().enumerate() {
                values[[n, c]] = v;
            }
        }
        TimeSeries::new(values, self.names.clone())
    }

    /// `C x 2 * bins` with interleaved `(re, im)` columns.
    pub fn to_matrix(&self) -> Array2<f64> {
        let bins = bin_count(self.length());
        Array2::from_shape_fn((self.channels(), 2 * bins), |(c, col)| {
            let z = self.spectra[c].coeffs()[col / 2];
            if col % 2 == 0 {
                z.re
            } else {
                z.im
            }
        })
    }

    /// Rebuild from interleaved columns, zeroing the imaginary parts that a
    /// real signal cannot carry.
    pub fn set_from_matrix(&mut self, m: &Array2<f64>) -> Result<()> {
        let bins = bin_count(self.length());
        if m.dim() != (self.channels(), 2 * bins) {
            return Err(Error::ShapeMismatch(format!("spectrum matrix {:?}", m.dim())));
        }
        for (c, s) in self.spectra.iter_mut().enumerate() {
            for (j, z) in s.coeffs_mut().iter_mut().enumerate() {
                *z = Complex64::new(m[[c, 2 * j]], m[[c, 2 * j + 1]]);
            }
            s.project_hermitian();
        }
        Ok(())
    }
}

/// Seeded stream shared by every method's starting point, so that all of
/// them begin from the same real subsequence.
pub fn init_rng(seed: u64) -> Rng {
    seeded(derive_seed(seed, INIT_STREAM))
}

pub fn init_synthetic(train: &TimeSeries, m: usize, rng: &mut Rng) -> Result<SyntheticSpectrum> {
    let (sub, _) = sample_subsequence(train, m, rng)?;
    SyntheticSpectrum::from_series(&sub)
}

/// Sum over channels of the `p`-norm between amplitude vectors.
pub fn harmonic_loss(fx: &[Spectrum], fs: &[Spectrum], p: u8) -> Result<f64> {
    if fx.len() != fs.len() {
        return Err(Error::LengthMismatch(fx.len(), fs.len()));
    }
    let mut total = 0.0;
    for (a, b) in fx.iter().zip(fs) {
        if a.source_length() != b.source_length() {
            return Err(Error::LengthMismatch(a.source_length(), b.source_length()));
        }
        let gaps = a.coeffs().iter().zip(b.coeffs()).map(|(x, s)| (x.norm() - s.norm()).abs());
        total += match p {
            1 => gaps.sum::<f64>(),
            2 => gaps.map(|g| g * g).sum::<f64>().sqrt(),
            _ => return Err(Error::InvalidConfig(format!("norm order p = {p}"))),
        };
    }
    Ok(total)
}

/// Step counts and learning rates of the two unrolled trainings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySpec {
    pub expert_steps: usize,
    pub student_steps: usize,
    pub expert_lr: f64,
    pub student_lr: f64,
}

impl TrajectorySpec {
    pub fn from_config(cfg: &DistillConfig) -> Self {
        Self {
            expert_steps: cfg.expert_steps,
            student_steps: cfg.student_steps,
            expert_lr: cfg.inner_lr,
            student_lr: cfg.inner_lr,
        }
    }
}

/// Expert endpoint and the normalizer of the trajectory gap.
#[derive(Debug, Clone)]
pub struct ExpertTarget {
    pub params: Forecaster,
    pub denominator: f64,
    pub degenerate: bool,
}

pub fn expert_target(theta0: &Forecaster, real: &WindowBatch, spec: &TrajectorySpec) -> Result<ExpertTarget> {
    let params = sgd_train(theta0, real, &TrainConfig::full_batch(spec.expert_lr, spec.expert_steps))?;
    let dist = theta0.squared_distance(&params);
    let degenerate = dist < DENOMINATOR_GUARD;
    let denominator = if degenerate { dist + DENOMINATOR_GUARD } else { dist };
    Ok(ExpertTarget { params, denominator, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradMatch {
    pub loss: f64,
    pub degenerate: bool,
}

/// Normalized squared distance between the endpoints of training from
/// `theta0` on synthetic windows and on real windows.
pub fn grad_match_loss(
    theta0: &Forecaster,
    real: &WindowBatch,
    synthetic: &WindowBatch,
    spec: &TrajectorySpec,
) -> Result<GradMatch> {
    let target = expert_target(theta0, real, spec)?;
    let student = sgd_train(theta0, synthetic, &TrainConfig::full_batch(spec.student_lr, spec.student_steps))?;
    Ok(GradMatch { loss: student.squared_distance(&target.params) / target.denominator, degenerate: target.degenerate })
}

/// Record `sum_b ||student_b - target_b||^2 / denominator`.
fn record_trajectory_gap(tape: &mut Tape, student: &TapedModel, target: &ExpertTarget) -> Result<Var> {
    let mut num: Option<Var> = None;
    for (v, p) in student.params.iter().zip(target.params.params()) {
        let c = tape.constant(p.clone());
        let d = tape.sub(*v, c)?;
        let sq = tape.l2_norm_squared(d);
        num = Some(match num {
            Some(acc) => tape.add(acc, sq)?,
            None => sq,
        });
    }
    let num = num.ok_or(Error::DetachedGraph)?;
    Ok(tape.scale(num, 1.0 / target.denominator))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub harmonic: f64,
    pub trajectory: f64,
    pub total: f64,
    pub degenerate: bool,
}

/// Everything one outer iteration needs from the real data, fixed before
/// the synthetic spectrum is touched.
#[derive(Debug, Clone)]
pub struct StepPlan {
    harmonics: Vec<HarmonicSet>,
    real_amplitudes: Array2<f64>,
    mask: Array2<f64>,
    theta0: Forecaster,
    target: ExpertTarget,
    gather_x: Vec<usize>,
    gather_y: Vec<usize>,
    length: usize,
    channels: usize,
    lookback: usize,
    horizon: usize,
    spec: TrajectorySpec,
    lambda: f64,
    p: u8,
    penalize_offharmonics: bool,
}

/// Handles of the recorded objective.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub total: Var,
    pub harmonic: Var,
    pub trajectory: Var,
}

impl StepPlan {
    pub fn prepare(real: &TimeSeries, theta0: Forecaster, cfg: &DistillConfig) -> Result<Self> {
        let m = real.len();
        let c = real.channels();
        let bins = bin_count(m);
        let k = cfg.k().min(bins);
        let mut harmonics = Vec::with_capacity(c);
        let mut filtered = Vec::with_capacity(c);
        for ch in 0..c {
            let fx = spectral::rfft(&real.channel(ch))?;
            let amps = spectral::amplitudes(&fx);
            let h = spectral::select_harmonics_from(&amps, k, cfg.exclude_dc);
            filtered.push(spectral::filter(&fx, &h)?);
            harmonics.push(h);
        }
        let real_amplitudes = Array2::from_shape_fn((c, bins), |(ch, j)| filtered[ch].coeffs()[j].norm());
        let mut mask = Array2::zeros((c, 2 * bins));
        for (ch, h) in harmonics.iter().enumerate() {
            for &j in h.indices() {
                mask[[ch, 2 * j]] = 1.0;
                mask[[ch, 2 * j + 1]] = 1.0;
            }
        }
        let mut xh = Array2::zeros((m, c));
        for (ch, s) in filtered.iter().enumerate() {
            for (n, v) in spectral::irfft(s)?.into_iter().enumerate() {
                xh[[n, ch]] = v;
            }
        }
        let xh = TimeSeries::from_values(xh)?;
        let (l, t) = (cfg.lookback, cfg.horizon);
        let real_batch = WindowBatch::from_series(&xh, l, t)?;
        let spec = TrajectorySpec::from_config(cfg);
        let target = expert_target(&theta0, &real_batch, &spec)?;
        let (gather_x, gather_y) = window_indices(m, c, l, t)?;
        Ok(Self {
            harmonics,
            real_amplitudes,
            mask,
            theta0,
            target,
            gather_x,
            gather_y,
            length: m,
            channels: c,
            lookback: l,
            horizon: t,
            spec,
            lambda: cfg.lambda,
            p: cfg.p,
            penalize_offharmonics: cfg.penalize_offharmonics,
        })
    }

    pub fn harmonics(&self) -> &[HarmonicSet] {
        &self.harmonics
    }

    pub fn target(&self) -> &ExpertTarget {
        &self.target
    }

    /// Entries of the interleaved spectrum matrix this step may move.
    pub fn update_mask(&self) -> &Array2<f64> {
        &self.mask
    }

    pub fn set_student_lr(&mut self, lr: f64) {
        self.spec.student_lr = lr;
    }

    /// Record the combined objective as a function of the interleaved
    /// synthetic spectrum `fs` (`C x 2 * bins`).
    pub fn record(&self, tape: &mut Tape, fs: Var) -> Result<Objective> {
        let bins = bin_count(self.length);
        if tape.value(fs).dim() != (self.channels, 2 * bins) {
            return Err(Error::ShapeMismatch(format!("synthetic spectrum {:?}", tape.value(fs).dim())));
        }
        let mask = tape.constant(self.mask.clone());
        let filtered = tape.mul(fs, mask)?;
        let sh = tape.irfft(filtered, self.length)?;
        let cols = self.gather_x.len() / self.lookback;
        let xs = tape.gather(sh, self.gather_x.clone(), (self.lookback, cols))?;
        let ys = tape.gather(sh, self.gather_y.clone(), (self.horizon, cols))?;
        let start = TapedModel::constants(tape, &self.theta0);
        let end = record_sgd(tape, &start, xs, ys, self.spec.student_lr, self.spec.student_steps)?;
        let trajectory = record_trajectory_gap(tape, &end, &self.target)?;

        let (amps, real) = if self.penalize_offharmonics {
            (tape.complex_magnitude(fs, MAGNITUDE_GUARD)?, self.real_amplitudes.clone())
        } else {
            let k = self.harmonics[0].k();
            let mut idx = Vec::with_capacity(self.channels * 2 * k);
            let mut real = Array2::zeros((self.channels, k));
            for (ch, h) in self.harmonics.iter().enumerate() {
                for (slot, &j) in h.indices().iter().enumerate() {
                    idx.push(ch * 2 * bins + 2 * j);
                    idx.push(ch * 2 * bins + 2 * j + 1);
                    real[[ch, slot]] = self.real_amplitudes[[ch, j]];
                }
            }
            let picked = tape.gather(fs, idx, (self.channels, 2 * k))?;
            (tape.complex_magnitude(picked, MAGNITUDE_GUARD)?, real)
        };
        let real = tape.constant(real);
        let gap = tape.sub(amps, real)?;
        let harmonic = match self.p {
            1 => tape.l1_norm(gap),
            _ => {
                let sq = tape.square(gap);
                let rows = tape.row_sum(sq);
                let norms = tape.sqrt_guarded(rows, MAGNITUDE_GUARD);
                tape.sum(norms)
            }
        };
        let weighted = tape.scale(harmonic, self.lambda);
        let total = tape.add(trajectory, weighted)?;
        Ok(Objective { total, harmonic, trajectory })
    }

    /// Objective values and gradient with respect to the interleaved spectrum.
    pub fn evaluate(&self, fs: &Array2<f64>) -> Result<(StepStats, Array2<f64>)> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(fs.clone());
        let obj = self.record(&mut tape, leaf)?;
        let stats = StepStats {
            harmonic: tape.scalar_value(obj.harmonic),
            trajectory: tape.scalar_value(obj.trajectory),
            total: tape.scalar_value(obj.total),
            degenerate: self.target.degenerate,
        };
        if !stats.total.is_finite() {
            return Err(Error::NonFiniteLoss(0));
        }
        let grad = tape.backward(obj.total)?.wrt(&tape, leaf);
        Ok((stats, grad))
    }
}

/// One outer iteration: fresh parameters, fresh real subsequence, one
/// gradient step on the selected synthetic coefficients.
pub fn hdt_step(fs: &mut SyntheticSpectrum, train: &TimeSeries, cfg: &DistillConfig, rng: &mut Rng) -> Result<StepStats> {
    let mut state = OuterState::new(cfg.optimizer, fs.to_matrix().dim());
    hdt_step_with(fs, &mut state, train, cfg, rng)
}

/// [`hdt_step`] carrying optimizer state across iterations.
pub fn hdt_step_with(
    fs: &mut SyntheticSpectrum,
    state: &mut OuterState,
    train: &TimeSeries,
    cfg: &DistillConfig,
    rng: &mut Rng,
) -> Result<StepStats> {
    let theta0 = Forecaster::init_gaussian(cfg.model, cfg.lookback, cfg.horizon, cfg.init_std, rng)?;
    let (real, _) = sample_subsequence(train, fs.length(), rng)?;
    let plan = StepPlan::prepare(&real, theta0, cfg)?;
    let mut next = fs.to_matrix();
    let (stats, grad) = plan.evaluate(&next)?;
    let all = cfg.penalize_offharmonics;
    state.apply(&mut next, &grad, cfg.eta, |idx| all || plan.mask[idx] != 0.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss(0));
    }
    fs.set_from_matrix(&next)?;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub harmonic: f64,
    pub trajectory: f64,
    pub total: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Warnings {
    pub degenerate_denominator: usize,
}

#[derive(Debug, Clone)]
pub struct DistillResult {
    pub synthetic: TimeSeries,
    pub best_val_mse: f64,
    pub history: Vec<HistoryRow>,
    /// `(iteration, val_mse)` for every scoring, starting at iteration 0.
    pub evaluations: Vec<(usize, f64)>,
    pub snapshot_iteration: usize,
    pub iterations_run: usize,
    pub warnings: Warnings,
}

/// Validation score of a candidate series: a fresh backbone trained to
/// convergence on its windows.
pub fn score_series(series: &TimeSeries, val: &WindowBatch, cfg: &DistillConfig) -> Result<f64> {
    let train = WindowBatch::from_series(series, cfg.lookback, cfg.horizon)?;
    let seed = derive_seed(cfg.seed, SCORE_STREAM);
    let init = Forecaster::init_uniform(cfg.scoring_model, cfg.lookback, cfg.horizon, &mut seeded(seed))?;
    Ok(train_to_convergence(&init, &train, val, &cfg.scoring, seed)?.best_val_mse)
}

trait OuterMethod {
    fn step(&mut self, train: &TimeSeries, cfg: &DistillConfig, rng: &mut Rng) -> Result<StepStats>;
    fn series(&self) -> Result<TimeSeries>;
}

struct Hdt(SyntheticSpectrum, OuterState);

impl OuterMethod for Hdt {
    fn step(&mut self, train: &TimeSeries, cfg: &DistillConfig, rng: &mut Rng) -> Result<StepStats> {
        hdt_step_with(&mut self.0, &mut self.1, train, cfg, rng)
    }

    fn series(&self) -> Result<TimeSeries> {
        self.0.to_series()
    }
}

fn run_outer<M: OuterMethod>(
    method: &mut M,
    train: &TimeSeries,
    val: &TimeSeries,
    cfg: &DistillConfig,
) -> Result<DistillResult> {
    let val_batch = WindowBatch::from_series(val, cfg.lookback, cfg.horizon)?;
    let mut rng = seeded(derive_seed(cfg.seed, LOOP_STREAM));
    let mut best = method.series()?;
    let mut best_val = score_series(&best, &val_batch, cfg)?;
    let mut evaluations = vec![(0, best_val)];
    let mut snapshot_iteration = 0;
    let mut history = Vec::new();
    let mut warnings = Warnings::default();
    let mut failures = 0;
    let mut iterations_run = 0;
    for it in 1..=cfg.outer_max_iters {
        let stats = method.step(train, cfg, &mut rng).map_err(|e| match e {
            Error::NonFiniteLoss(_) => Error::NonFiniteLoss(it),
            other => other,
        })?;
        iterations_run = it;
        if stats.degenerate {
            warnings.degenerate_denominator += 1;
        }
        let mut row = HistoryRow {
            iteration: it,
            harmonic: stats.harmonic,
            trajectory: stats.trajectory,
            total: stats.total,
            val_mse: None,
        };
        if it % cfg.eval_every == 0 {
            let current = method.series()?;
            let v = score_series(&current, &val_batch, cfg)?;
            row.val_mse = Some(v);
            evaluations.push((it, v));
            if v < best_val {
                best_val = v;
                best = current;
                snapshot_iteration = it;
                failures = 0;
            } else {
                failures += 1;
            }
        }
        history.push(row);
        if cfg.patience > 0 && failures >= cfg.patience {
            break;
        }
    }
    Ok(DistillResult {
        synthetic: best,
        best_val_mse: best_val,
        history,
        evaluations,
        snapshot_iteration,
        iterations_run,
        warnings,
    })
}

/// Full harmonic-domain distillation with validation snapshots.
pub fn distill(train: &TimeSeries, val: &TimeSeries, cfg: &DistillConfig) -> Result<DistillResult> {
    cfg.validate()?;
    let fs = init_synthetic(train, cfg.length, &mut init_rng(cfg.seed))?;
    let state = OuterState::new(cfg.optimizer, fs.to_matrix().dim());
    run_outer(&mut Hdt(fs, state), train, val, cfg)
}

/// A random real subsequence of length `m`.
pub fn baseline_random(train: &TimeSeries, m: usize, rng: &mut Rng) -> Result<TimeSeries> {
    Ok(sample_subsequence(train, m, rng)?.0)
}

struct WindowMatcher {
    series: Array2<f64>,
    state: OuterState,
    names: Vec<String>,
    real: WindowBatch,
}

impl WindowMatcher {
    fn step_inner(&mut self, cfg: &DistillConfig, rng: &mut Rng) -> Result<StepStats> {
        let (m, c) = self.series.dim();
        let (l, t) = (cfg.lookback, cfg.horizon);
        let theta0 = Forecaster::init_gaussian(cfg.model, l, t, cfg.init_std, rng)?;
        let pick = |count: usize, rng: &mut Rng| {
            let mut v = sample(rng, count, cfg.window_batch.min(count)).into_vec();
            v.sort_unstable();
            v
        };
        let real = self.real.select(&pick(self.real.windows, rng));
        let starts = pick(window_count(m, l, t)?, rng);
        let spec = TrajectorySpec { expert_steps: 1, student_steps: 1, expert_lr: cfg.inner_lr, student_lr: cfg.inner_lr };
        let target = expert_target(&theta0, &real, &spec)?;

        let mut tape = Tape::new();
        let s = tape.leaf(self.series.clone());
        let (gx, gy) = window_indices_at(&starts, c, l, t);
        let cols = starts.len() * c;
        let xs = tape.gather(s, gx, (l, cols))?;
        let ys = tape.gather(s, gy, (t, cols))?;
        let start = TapedModel::constants(&mut tape, &theta0);
        let end = record_sgd(&mut tape, &start, xs, ys, spec.student_lr, 1)?;
        let loss = record_trajectory_gap(&mut tape, &end, &target)?;
        let value = tape.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(0));
        }
        let grad = tape.backward(loss)?.wrt(&tape, s);
        self.state.apply(&mut self.series, &grad, cfg.window_eta, |_| true);
        if self.series.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss(0));
        }
        Ok(StepStats { harmonic: 0.0, trajectory: value, total: value, degenerate: target.degenerate })
    }
}

impl OuterMethod for WindowMatcher {
    fn step(&mut self, _train: &TimeSeries, cfg: &DistillConfig, rng: &mut Rng) -> Result<StepStats> {
        self.step_inner(cfg, rng)
    }

    fn series(&self) -> Result<TimeSeries> {
        TimeSeries::new(self.series.clone(), self.names.clone())
    }
}

/// Time-domain reference method: single-step gradient matching between
/// random mini-batches of real and synthetic windows, with the same
/// starting point, budget and snapshot rule as [`distill`].
pub fn baseline_window_gm(train: &TimeSeries, val: &TimeSeries, cfg: &DistillConfig) -> Result<DistillResult> {
    cfg.validate()?;
    let init = baseline_random(train, cfg.length, &mut init_rng(cfg.seed))?;
    let mut method = WindowMatcher {
        state: OuterState::new(cfg.optimizer, init.values().dim()),
        names: init.channel_names().to_vec(),
        series: init.into_values(),
        real: WindowBatch::from_series(train, cfg.lookback, cfg.horizon)?,
    };
    run_outer(&mut method, train, val, cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `iteration,L_harm,L_grad,total,val_mse` with an empty cell when a row was
/// not scored.
pub fn write_history(rows: &[HistoryRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "L_harm", "L_grad", "total", "val_mse"])?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.harmonic.to_string(),
            r.trajectory.to_string(),
            r.total.to_string(),
            fmt_opt(r.val_mse),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<HistoryRow>> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |col: usize| -> Result<f64> {
            rec.get(col).unwrap_or("").parse::<f64>().map_err(|_| Error::NonNumericCell(i + 1, col + 1))
        };
        rows.push(HistoryRow {
            iteration: num(0)? as usize,
            harmonic: num(1)?,
            trajectory: num(2)?,
            total: num(3)?,
            val_mse: match rec.get(4).unwrap_or("") {
                "" => None,
                _ => Some(num(4)?),
            },
        });
    }
    Ok(rows)
}
