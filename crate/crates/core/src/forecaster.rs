//! Channel-shared linear forecasting backbones and their SGD training.
//!
//! Both backbones are sums of linear maps over feature blocks of the
//! lookback window: the plain model uses the window itself, the
//! decomposition model splits it into a moving-average trend and the
//! seasonal remainder. Windows of every channel are stacked as columns of a
//! single `l x n` matrix, so one weight set serves all channels.

use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{moving_average, Tape, Var};
use crate::data::{window_count, TimeSeries, WindowPair};
use crate::error::{Error, Result};
use crate::random::{seeded, Rng};

pub const DEFAULT_KERNEL_SIZE: usize = 25;

/// Backbone family. Written as `linear`, `decomp_linear` (kernel 25) or
/// `decomp_linear:K` in configs and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelKind {
    Linear,
    DecompLinear { kernel_size: usize },
}

impl ModelKind {
    pub fn decomp() -> Self {
        ModelKind::DecompLinear { kernel_size: DEFAULT_KERNEL_SIZE }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::DecompLinear { .. } => "decomp_linear",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown model kind '{text}'"));
        let (name, kernel) = match text.split_once(':') {
            Some((n, k)) => (n, Some(k.parse::<usize>().map_err(|_| bad())?)),
            None => (text, None),
        };
        let kind = match (name, kernel) {
            ("linear", None) => ModelKind::Linear,
            ("decomp_linear" | "dlinear", k) => {
                ModelKind::DecompLinear { kernel_size: k.unwrap_or(DEFAULT_KERNEL_SIZE) }
            }
            _ => return Err(bad()),
        };
        kind.validate()?;
        Ok(kind)
    }

    fn blocks(&self) -> usize {
        match self {
            ModelKind::Linear => 1,
            ModelKind::DecompLinear { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ModelKind::DecompLinear { kernel_size } = self {
            if *kernel_size == 0 || kernel_size % 2 == 0 {
                return Err(Error::InvalidConfig(format!("kernel_size {kernel_size} must be odd")));
            }
        }
        Ok(())
    }
}

/// Lookback/horizon matrices with one column per (window, channel) pair,
/// ordered window-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub windows: usize,
    pub channels: usize,
}

impl WindowBatch {
    pub fn from_series(ts: &TimeSeries, l: usize, t: usize) -> Result<Self> {
        let windows = window_count(ts.len(), l, t)?;
        let c = ts.channels();
        let v = ts.values();
        let x = Array2::from_shape_fn((l, windows * c), |(i, col)| v[[col / c + i, col % c]]);
        let y = Array2::from_shape_fn((t, windows * c), |(i, col)| v[[col / c + l + i, col % c]]);
        Ok(Self { x, y, windows, channels: c })
    }

    pub fn from_pairs(pairs: &[WindowPair]) -> Result<Self> {
        let first = pairs.first().ok_or(Error::EmptyDataset)?;
        let (l, c) = first.x.dim();
        let t = first.y.nrows();
        let mut x = Array2::zeros((l, pairs.len() * c));
        let mut y = Array2::zeros((t, pairs.len() * c));
        for (w, p) in pairs.iter().enumerate() {
            if p.x.dim() != (l, c) || p.y.dim() != (t, c) {
                return Err(Error::ShapeMismatch("windows of unequal shape".into()));
            }
            x.slice_mut(s![.., w * c..(w + 1) * c]).assign(&p.x);
            y.slice_mut(s![.., w * c..(w + 1) * c]).assign(&p.y);
        }
        Ok(Self { x, y, windows: pairs.len(), channels: c })
    }

    pub fn lookback(&self) -> usize {
        self.x.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.y.nrows()
    }

    pub fn columns(&self) -> usize {
        self.x.ncols()
    }

    /// Sub-batch with the given windows (all of their channels).
    pub fn select(&self, windows: &[usize]) -> Self {
        let c = self.channels;
        let cols: Vec<usize> = windows.iter().flat_map(|&w| w * c..(w + 1) * c).collect();
        Self {
            x: self.x.select(Axis(1), &cols),
            y: self.y.select(Axis(1), &cols),
            windows: windows.len(),
            channels: c,
        }
    }
}

/// Flat gather indices that cut a `rows x c` row-major series into window
/// columns, matching [`WindowBatch::from_series`].
pub fn window_indices(rows: usize, c: usize, l: usize, t: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let starts: Vec<usize> = (0..window_count(rows, l, t)?).collect();
    Ok(window_indices_at(&starts, c, l, t))
}

/// Gather indices for windows beginning at `starts` (lookback, then horizon).
pub fn window_indices_at(starts: &[usize], c: usize, l: usize, t: usize) -> (Vec<usize>, Vec<usize>) {
    let n = starts.len() * c;
    let pick = |offset: usize, rows: usize| {
        let mut out = Vec::with_capacity(rows * n);
        for i in 0..rows {
            for col in 0..n {
                out.push((starts[col / c] + offset + i) * c + col % c);
            }
        }
        out
    };
    (pick(0, l), pick(l, t))
}

/// A linear forecaster. Parameters are stored as `(W, b)` pairs, one per
/// feature block: `[W, b]` for the plain model and
/// `[W_trend, b_trend, W_seasonal, b_seasonal]` for the decomposition model.
/// `W` is `t x l` and `b` is `t x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    kind: ModelKind,
    lookback: usize,
    horizon: usize,
    params: Vec<Array2<f64>>,
}

impl Forecaster {
    pub fn zeros(kind: ModelKind, lookback: usize, horizon: usize) -> Result<Self> {
        kind.validate()?;
        if lookback == 0 || horizon == 0 {
            return Err(Error::InvalidConfig("lookback and horizon must be positive".into()));
        }
        let params = (0..kind.blocks())
            .flat_map(|_| [Array2::zeros((horizon, lookback)), Array2::zeros((horizon, 1))])
            .collect();
        Ok(Self { kind, lookback, horizon, params })
    }

    /// Weights and biases drawn from `U(-1/sqrt(l), 1/sqrt(l))`.
    pub fn init_uniform(kind: ModelKind, lookback: usize, horizon: usize, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(kind, lookback, horizon)?;
        let bound = 1.0 / (lookback as f64).sqrt();
        for p in &mut m.params {
            p.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        Ok(m)
    }

    /// Weights and biases drawn from `N(0, std^2)`.
    pub fn init_gaussian(kind: ModelKind, lookback: usize, horizon: usize, std: f64, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(kind, lookback, horizon)?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for p in &mut m.params {
            p.mapv_inplace(|_| normal.sample(rng));
        }
        Ok(m)
    }

    pub fn from_params(kind: ModelKind, lookback: usize, horizon: usize, params: Vec<Array2<f64>>) -> Result<Self> {
        let template = Self::zeros(kind, lookback, horizon)?;
        if params.len() != template.params.len()
            || params.iter().zip(&template.params).any(|(a, b)| a.dim() != b.dim())
        {
            return Err(Error::ShapeMismatch("parameter shapes do not match the model".into()));
        }
        Ok(Self { params, ..template })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Row-major `W` then `b` for each block, in storage order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn squared_distance(&self, other: &Forecaster) -> f64 {
        self.params
            .iter()
            .zip(&other.params)
            .map(|(a, b)| (a - b).iter().map(|d| d * d).sum::<f64>())
            .sum()
    }

    fn check_lookback(&self, rows: usize) -> Result<()> {
        if rows != self.lookback {
            return Err(Error::ShapeMismatch(format!(
                "input has {rows} rows, model lookback is {}",
                self.lookback
            )));
        }
        Ok(())
    }

    /// Feature blocks of a lookback matrix (`l x n`).
    pub fn features(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        match self.kind {
            ModelKind::Linear => vec![x.clone()],
            ModelKind::DecompLinear { kernel_size } => {
                let trend = moving_average(x, kernel_size);
                let seasonal = x - &trend;
                vec![trend, seasonal]
            }
        }
    }

    fn predict_features(&self, feats: &[Array2<f64>]) -> Array2<f64> {
        let mut out = self.params[0].dot(&feats[0]);
        out += &self.params[1];
        for (b, f) in feats.iter().enumerate().skip(1) {
            out += &self.params[2 * b].dot(f);
            out += &self.params[2 * b + 1];
        }
        out
    }

    /// Forecast a `l x C` window into a `t x C` horizon (channels share weights).
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_lookback(x.nrows())?;
        Ok(self.predict_features(&self.features(x)))
    }

    /// MSE over every window, horizon step and channel of a batch.
    pub fn batch_mse(&self, batch: &WindowBatch) -> Result<f64> {
        if batch.columns() == 0 {
            return Err(Error::EmptyDataset);
        }
        self.check_lookback(batch.lookback())?;
        let pred = self.predict_features(&self.features(&batch.x));
        Ok((pred - &batch.y).mapv(|e| e * e).mean().unwrap_or(0.0))
    }

    /// One gradient step on precomputed features; returns the loss before the step.
    fn sgd_step(&mut self, feats: &[Array2<f64>], y: &Array2<f64>, lr: f64) -> f64 {
        let err = self.predict_features(feats) - y;
        let loss = err.iter().map(|e| e * e).sum::<f64>() / err.len() as f64;
        let c = 2.0 / err.len() as f64;
        let err_t = err.sum_axis(Axis(1)).insert_axis(Axis(1));
        for (b, f) in feats.iter().enumerate() {
            let gw = err.dot(&f.t()) * c;
            let gb = &err_t * c;
            self.params[2 * b] -= &(gw * lr);
            self.params[2 * b + 1] -= &(gb * lr);
        }
        loss
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let ckpt = Checkpoint::from(self);
        std::fs::write(path, serde_json::to_string_pretty(&ckpt)?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ckpt.into_model()
    }
}

/// On-disk model layout: a shape header plus one flat parameter array.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelKind,
    pub lookback: usize,
    pub horizon: usize,
    pub shapes: Vec<[usize; 2]>,
    pub params: Vec<f64>,
}

impl From<&Forecaster> for Checkpoint {
    fn from(m: &Forecaster) -> Self {
        Self {
            model: m.kind,
            lookback: m.lookback,
            horizon: m.horizon,
            shapes: m.params.iter().map(|p| [p.nrows(), p.ncols()]).collect(),
            params: m.flat_params(),
        }
    }
}

impl Checkpoint {
    pub fn into_model(self) -> Result<Forecaster> {
        let mut offset = 0;
        let mut params = Vec::with_capacity(self.shapes.len());
        for [r, c] in &self.shapes {
            let end = offset + r * c;
            let chunk = self
                .params
                .get(offset..end)
                .ok_or_else(|| Error::ShapeMismatch("checkpoint parameter array too short".into()))?;
            params.push(
                Array2::from_shape_vec((*r, *c), chunk.to_vec())
                    .map_err(|e| Error::ShapeMismatch(e.to_string()))?,
            );
            offset = end;
        }
        if offset != self.params.len() {
            return Err(Error::ShapeMismatch("checkpoint parameter array too long".into()));
        }
        Forecaster::from_params(self.model, self.lookback, self.horizon, params)
    }
}

/// Mean squared error over windows, horizon steps and channels.
pub fn mse_loss(model: &Forecaster, windows: &[WindowPair]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    model.batch_mse(&WindowBatch::from_pairs(windows)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    Full,
    /// Windows per step; each channel of a window rides along.
    Windows(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch: BatchMode,
    pub seed: u64,
}

impl TrainConfig {
    pub fn full_batch(learning_rate: f64, steps: usize) -> Self {
        Self { learning_rate, steps, batch: BatchMode::Full, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("training steps must be >= 1".into()));
        }
        if self.batch == BatchMode::Windows(0) {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Endless shuffled pass over window indices.
struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
    size: usize,
    rng: Rng,
}

impl BatchCursor {
    fn new(windows: usize, size: usize, seed: u64) -> Self {
        let mut c = Self { order: (0..windows).collect(), pos: windows, size, rng: seeded(seed) };
        c.size = c.size.min(windows);
        c
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + self.size].to_vec();
        self.pos += self.size;
        b
    }
}

/// Exactly `cfg.steps` gradient steps from `model`.
pub fn sgd_train(model: &Forecaster, batch: &WindowBatch, cfg: &TrainConfig) -> Result<Forecaster> {
    cfg.validate()?;
    if batch.columns() == 0 {
        return Err(Error::EmptyDataset);
    }
    model.check_lookback(batch.lookback())?;
    let mut m = model.clone();
    match cfg.batch {
        BatchMode::Full => {
            let feats = m.features(&batch.x);
            for step in 0..cfg.steps {
                let loss = m.sgd_step(&feats, &batch.y, cfg.learning_rate);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss(step));
                }
            }
        }
        BatchMode::Windows(size) => {
            let mut cursor = BatchCursor::new(batch.windows, size, cfg.seed);
            for step in 0..cfg.steps {
                let sub = batch.select(&cursor.next_batch());
                let feats = m.features(&sub.x);
                let loss = m.sgd_step(&feats, &sub.y, cfg.learning_rate);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss(step));
                }
            }
        }
    }
    if m.params.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteLoss(cfg.steps));
    }
    Ok(m)
}

/// Early-stopping schedule used when a forecaster is trained to judge a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStopping {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch: BatchMode,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self { learning_rate: 0.005, max_epochs: 200, patience: 10, batch: BatchMode::Windows(1) }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Forecaster,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub epochs_run: usize,
    pub val_history: Vec<f64>,
}

/// Train by epochs, scoring `val` after each, and keep the best checkpoint.
/// Stops after `patience` consecutive epochs without improvement.
pub fn train_to_convergence(
    model: &Forecaster,
    train: &WindowBatch,
    val: &WindowBatch,
    schedule: &EarlyStopping,
    seed: u64,
) -> Result<TrainOutcome> {
    if train.columns() == 0 || val.columns() == 0 {
        return Err(Error::EmptyDataset);
    }
    if schedule.max_epochs == 0 {
        return Err(Error::InvalidConfig("max_epochs must be >= 1".into()));
    }
    let steps_per_epoch = match schedule.batch {
        BatchMode::Full => 1,
        BatchMode::Windows(0) => return Err(Error::InvalidConfig("batch size must be >= 1".into())),
        BatchMode::Windows(size) => train.windows.div_ceil(size.min(train.windows)),
    };
    let cfg = TrainConfig {
        learning_rate: schedule.learning_rate,
        steps: steps_per_epoch,
        batch: schedule.batch,
        seed,
    };
    train_epochs(model, val, schedule, |m, epoch| {
        let cfg = TrainConfig { seed: crate::random::derive_seed(seed, epoch as u64), ..cfg.clone() };
        sgd_train(m, train, &cfg)
    })
}

/// Epoch loop shared by the plain trainer and tests that script the
/// per-epoch update.
pub fn train_epochs<F>(model: &Forecaster, val: &WindowBatch, schedule: &EarlyStopping, mut epoch_fn: F) -> Result<TrainOutcome>
where
    F: FnMut(&Forecaster, usize) -> Result<Forecaster>,
{
    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut epochs_run = 0;
    for epoch in 1..=schedule.max_epochs {
        current = epoch_fn(&current, epoch)?;
        epochs_run = epoch;
        let v = current.batch_mse(val)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
        history.push(v);
        if v < best_val {
            best_val = v;
            best = current.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= schedule.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { model: best, best_epoch, best_val_mse: best_val, epochs_run, val_history: history })
}

/// Parameters of a forecaster recorded on a tape.
#[derive(Debug, Clone)]
pub struct TapedModel {
    pub kind: ModelKind,
    pub params: Vec<Var>,
}

impl TapedModel {
    /// Record `model`'s parameters as constants (the initial point of a
    /// trajectory whose later states depend on the data).
    pub fn constants(tape: &mut Tape, model: &Forecaster) -> Self {
        Self { kind: model.kind, params: model.params.iter().map(|p| tape.constant(p.clone())).collect() }
    }

    /// Record `model`'s parameters as differentiable leaves.
    pub fn leaves(tape: &mut Tape, model: &Forecaster) -> Self {
        Self { kind: model.kind, params: model.params.iter().map(|p| tape.leaf(p.clone())).collect() }
    }

    pub fn values(&self, tape: &Tape, lookback: usize, horizon: usize) -> Result<Forecaster> {
        let params = self.params.iter().map(|v| tape.value(*v).clone()).collect();
        Forecaster::from_params(self.kind, lookback, horizon, params)
    }
}

/// Record the feature blocks of a lookback matrix on the tape.
pub fn record_features(tape: &mut Tape, kind: ModelKind, x: Var) -> Result<Vec<Var>> {
    Ok(match kind {
        ModelKind::Linear => vec![x],
        ModelKind::DecompLinear { kernel_size } => {
            let trend = tape.moving_average(x, kernel_size)?;
            let seasonal = tape.sub(x, trend)?;
            vec![trend, seasonal]
        }
    })
}

fn record_predict(tape: &mut Tape, params: &[Var], feats: &[Var]) -> Result<Var> {
    let mut out = tape.matmul(params[0], feats[0])?;
    out = tape.add_column(out, params[1])?;
    for (b, f) in feats.iter().enumerate().skip(1) {
        let p = tape.matmul(params[2 * b], *f)?;
        out = tape.add(out, p)?;
        out = tape.add_column(out, params[2 * b + 1])?;
    }
    Ok(out)
}

/// Record `steps` full-batch gradient steps with their closed-form
/// gradients, so the final parameters stay differentiable with respect to
/// the data (and the initial parameters).
pub fn record_sgd(
    tape: &mut Tape,
    model: &TapedModel,
    x: Var,
    y: Var,
    lr: f64,
    steps: usize,
) -> Result<TapedModel> {
    let feats = record_features(tape, model.kind, x)?;
    let feats_t: Vec<Var> = feats.iter().map(|f| tape.transpose(*f)).collect();
    let n = tape.value(y).len() as f64;
    let c = 2.0 / n;
    let mut params = model.params.clone();
    for _ in 0..steps {
        let pred = record_predict(tape, &params, &feats)?;
        let err = tape.sub(pred, y)?;
        let err_t = tape.row_sum(err);
        let mut next = Vec::with_capacity(params.len());
        for (b, ft) in feats_t.iter().enumerate() {
            let gw = tape.matmul(err, *ft)?;
            let gw = tape.scale(gw, c);
            let gw = tape.scale(gw, lr);
            next.push(tape.sub(params[2 * b], gw)?);
            let gb = tape.scale(err_t, c);
            let gb = tape.scale(gb, lr);
            next.push(tape.sub(params[2 * b + 1], gb)?);
        }
        params = next;
    }
    Ok(TapedModel { kind: model.kind, params })
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Linear => f.write_str("linear"),
            ModelKind::DecompLinear { kernel_size } if *kernel_size == DEFAULT_KERNEL_SIZE => {
                f.write_str("decomp_linear")
            }
            ModelKind::DecompLinear { kernel_size } => write!(f, "decomp_linear:{kernel_size}"),
        }
    }
}

impl TryFrom<String> for ModelKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        ModelKind::parse(&s)
    }
}

impl From<ModelKind> for String {
    fn from(k: ModelKind) -> String {
        k.to_string()
    }
}
