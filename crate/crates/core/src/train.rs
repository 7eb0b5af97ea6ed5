//! Losses, batch gradients, finite-difference checking, Adam and the training
//! loop.
//!
//! A batch is cut into fixed-size chunks. Each chunk records its own tape
//! (building the neuron banks once) and the chunk gradients are summed in
//! chunk order, so the result does not depend on how many threads ran them.

use std::fmt::Debug;
use std::time::Instant;

use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::network::{BuiltModel, Model};
use crate::neuron::GradientMode;
use crate::params::ParamSet;
use crate::rng::Sampler;
use crate::rotation::random_orthogonal_from;
use crate::scalar::Real;

/// Samples per tape.
pub const CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    Mse,
    CrossEntropy,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("unknown precision `{other}` (expected f32 or f64)")),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate to zero over all epochs.
    Cosine,
}

impl LrSchedule {
    /// Step size for 1-based `epoch` out of `epochs`.
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = (epoch - 1) as f64 / epochs.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    pub loss: Loss,
    pub gradient_mode: GradientMode,
    /// Use only the first `train_size` training records (all when unset).
    pub train_size: Option<usize>,
    /// Evaluate the validation split every this many epochs.
    pub eval_every: usize,
    /// Spread batch chunks over the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lr_schedule: LrSchedule::Constant,
            batch_size: 64,
            epochs: 500,
            seed: 0,
            precision: Precision::F64,
            loss: Loss::Mse,
            gradient_mode: GradientMode::Full,
            train_size: None,
            eval_every: 1,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1");
        }
        if self.train_size == Some(0) {
            return bad("train_size must be >= 1");
        }
        Ok(())
    }
}

/// Loss of one prediction against its target.
pub fn sample_loss<T: Real>(loss: Loss, pred: &[T], target: &[f64]) -> Result<T> {
    match loss {
        Loss::Mse => {
            if pred.len() != target.len() {
                return Err(Error::DimensionMismatch {
                    expected: pred.len(),
                    got: target.len(),
                });
            }
            let mut acc = T::zero();
            for (&p, &t) in pred.iter().zip(target) {
                acc = acc + (p - T::from_f64(t)).square();
            }
            Ok(acc.scale(1.0 / pred.len() as f64))
        }
        Loss::CrossEntropy => {
            let class = target.first().copied().unwrap_or(-1.0);
            if class < 0.0 || class.fract() != 0.0 || class as usize >= pred.len() {
                return Err(Error::InvalidConfig(format!(
                    "class label {class} is not in 0..{}",
                    pred.len()
                )));
            }
            // Shift by the largest logit (as a constant) for stability.
            let shift = pred.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = T::zero();
            for &z in pred {
                sum = sum + (z - T::from_f64(shift)).exp();
            }
            Ok(sum.ln() + T::from_f64(shift) - pred[class as usize])
        }
    }
}

fn lift_points<T: Real>(points: &Mat<f64>) -> Mat<T> {
    points.map(T::from_f64)
}

/// Sum of losses and gradients over `samples`, recorded on one tape.
fn chunk_gradient<F>(
    model: &Model,
    params: &[f64],
    samples: &[&Sample],
    loss: Loss,
    mode: GradientMode,
) -> Result<(f64, Vec<f64>)>
where
    F: Float + Debug,
{
    let tape = Tape::<F>::with_capacity(4096 * samples.len().max(1));
    let vars: Vec<Var<'_, F>> = params
        .iter()
        .map(|&v| tape.var(F::from(v).expect("representable")))
        .collect();
    let built = model.build(&vars, mode)?;
    let mut total = Var::<F>::from_f64(0.0);
    for s in samples {
        let pred = built.predict(&lift_points(&s.points))?;
        total = total + sample_loss(loss, &pred, &s.target)?;
    }
    let grads = tape.gradient(total);
    let g = vars
        .iter()
        .map(|&v| grads.wrt(v).to_f64().unwrap_or(f64::NAN))
        .collect();
    Ok((total.to_f64(), g))
}

/// Options shared by the gradient and evaluation entry points.
#[derive(Clone, Copy, Debug)]
pub struct GradOptions {
    pub loss: Loss,
    pub mode: GradientMode,
    pub precision: Precision,
    pub parallel: bool,
}

impl Default for GradOptions {
    fn default() -> Self {
        GradOptions {
            loss: Loss::Mse,
            mode: GradientMode::Full,
            precision: Precision::F64,
            parallel: false,
        }
    }
}

/// Mean loss over `samples` and its exact gradient with respect to every
/// parameter.
pub fn loss_and_grad(
    model: &Model,
    params: &[f64],
    samples: &[&Sample],
    opts: GradOptions,
) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let run = |chunk: &[&Sample]| match opts.precision {
        Precision::F64 => chunk_gradient::<f64>(model, params, chunk, opts.loss, opts.mode),
        Precision::F32 => chunk_gradient::<f32>(model, params, chunk, opts.loss, opts.mode),
    };
    let parts: Vec<Result<(f64, Vec<f64>)>> = if opts.parallel {
        samples.par_chunks(CHUNK).map(run).collect()
    } else {
        samples.chunks(CHUNK).map(run).collect()
    };
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let inv = 1.0 / samples.len() as f64;
    grad.iter_mut().for_each(|v| *v *= inv);
    Ok((loss * inv, grad))
}

fn mean_loss_with<T: Real>(
    built: &BuiltModel<'_, T>,
    samples: &[&Sample],
    loss: Loss,
    trace: &mut Vec<u32>,
) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let pred = built.predict_traced(&lift_points(&s.points), trace)?;
        total += sample_loss(loss, &pred, &s.target)?.to_f64();
    }
    Ok(total / samples.len() as f64)
}

/// Outcome of a central-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    /// Coordinates whose ±h evaluations took a different branch (a ReLU gate,
    /// sort order or argmax flipped), where central differences are invalid.
    pub skipped: usize,
}

/// Compare `grad` against central differences of the 64-bit mean loss.
pub fn finite_difference_check_against(
    model: &Model,
    params: &[f64],
    samples: &[&Sample],
    opts: GradOptions,
    grad: &[f64],
    h: f64,
    floor: f64,
) -> Result<FdReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let eval = |theta: &[f64]| -> Result<(f64, Vec<u32>)> {
        let built = model.build(theta, opts.mode)?;
        let mut trace = Vec::new();
        let l = mean_loss_with(&built, samples, opts.loss, &mut trace)?;
        Ok((l, trace))
    };
    let (_, base_trace) = eval(params)?;
    let mut theta = params.to_vec();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..params.len() {
        theta[i] = params[i] + h;
        let (up, t_up) = eval(&theta)?;
        theta[i] = params[i] - h;
        let (down, t_down) = eval(&theta)?;
        theta[i] = params[i];
        if t_up != base_trace || t_down != base_trace {
            report.skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let analytic = grad[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        report.checked += 1;
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// Central-difference check of [`loss_and_grad`] in 64-bit.
pub fn finite_difference_check(
    model: &Model,
    params: &[f64],
    samples: &[&Sample],
    mode: GradientMode,
    loss: Loss,
    h: f64,
) -> Result<FdReport> {
    let opts = GradOptions {
        loss,
        mode,
        precision: Precision::F64,
        parallel: false,
    };
    let (_, grad) = loss_and_grad(model, params, samples, opts)?;
    finite_difference_check_against(model, params, samples, opts, &grad, h, FD_FLOOR)
}

/// Denominator floor for relative errors: gradients smaller than this are
/// compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-6;

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn from_config(len: usize, cfg: &TrainConfig) -> Self {
        Self::new(len, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub wall_clock_ms: u128,
}

pub const METRICS_CSV_HEADER: &str = "epoch,split,loss,wall_clock_ms";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!("{},{},{:.10e},{}", self.epoch, self.split, self.loss, self.wall_clock_ms)
    }
}

/// Render a metrics history as CSV, header included.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for m in history {
        out.push_str(&m.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss (the final ones when there
    /// is no validation split).
    pub params: ParamSet,
    pub final_params: ParamSet,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
}

/// Optimize `init` on `train` with Adam. Deterministic in `cfg.seed`; the
/// result does not depend on the thread count.
pub fn train(
    model: &Model,
    init: &ParamSet,
    train: &[&Sample],
    val: &[&Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if init.layout() != model.layout() {
        return Err(Error::ParamMismatch("initial parameters do not fit the model".into()));
    }
    let train: Vec<&Sample> = match cfg.train_size {
        Some(k) => train.iter().take(k).copied().collect(),
        None => train.to_vec(),
    };
    let opts = GradOptions {
        loss: cfg.loss,
        mode: cfg.gradient_mode,
        precision: cfg.precision,
        parallel: cfg.parallel,
    };
    let start = Instant::now();
    let mut params = init.clone();
    let mut best = init.clone();
    let mut history = Vec::new();
    let record = |epoch: usize, split: &str, loss: f64, history: &mut Vec<EpochMetrics>| {
        history.push(EpochMetrics {
            epoch,
            split: split.into(),
            loss,
            wall_clock_ms: start.elapsed().as_millis(),
        });
    };

    let eval_val = |p: &ParamSet| -> Result<Option<f64>> {
        if val.is_empty() {
            return Ok(None);
        }
        Ok(Some(evaluate(model, p, val, opts, None)?.loss))
    };

    let initial_train = evaluate(model, &params, &train, opts, None)?.loss;
    record(0, "train", initial_train, &mut history);
    let mut best_val = eval_val(&params)?;
    if let Some(v) = best_val {
        record(0, "val", v, &mut history);
    }
    let mut best_epoch = 0;

    let mut adam = Adam::from_config(params.len(), cfg);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = Sampler::with_stream(cfg.seed, 0x7a1);
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        adam.set_learning_rate(cfg.lr_schedule.rate(cfg.learning_rate, epoch, cfg.epochs));
        let mut sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| train[i]).collect();
            let (loss, grad) = loss_and_grad(model, params.values(), &batch, opts)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, batch: b });
            }
            adam.step(params.values_mut(), &grad);
            sum += loss;
            batches += 1;
        }
        record(epoch, "train", sum / batches as f64, &mut history);
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            if let Some(v) = eval_val(&params)? {
                if !v.is_finite() {
                    return Err(Error::Diverged { epoch, batch: batches });
                }
                record(epoch, "val", v, &mut history);
                if best_val.map_or(true, |b| v < b) {
                    best_val = Some(v);
                    best = params.clone();
                    best_epoch = epoch;
                }
            }
        }
        log::debug!("epoch {epoch}: train {:.6e}", sum / batches as f64);
    }
    if val.is_empty() {
        best = params.clone();
        best_epoch = cfg.epochs;
    }
    Ok(TrainOutcome {
        params: best,
        final_params: params,
        history,
        best_epoch,
        best_val_loss: best_val,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub loss: f64,
    /// Fraction of correct arg-max predictions (cross-entropy only).
    pub accuracy: Option<f64>,
    pub count: usize,
}

/// Rotate/reflect every point of a sample by `r`.
pub fn transform_points(points: &Mat<f64>, r: &Mat<f64>) -> Result<Mat<f64>> {
    points.matmul(&r.transpose())
}

/// Mean loss over `samples`. With `transform_seed`, every sample is first
/// hit by its own random element of O(n) (either determinant sign).
pub fn evaluate(
    model: &Model,
    params: &ParamSet,
    samples: &[&Sample],
    opts: GradOptions,
    transform_seed: Option<u64>,
) -> Result<EvalMetrics> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = model.spec().input_dim;
    let inputs: Vec<Mat<f64>> = match transform_seed {
        None => samples.iter().map(|s| s.points.clone()).collect(),
        Some(seed) => {
            let mut rng = Sampler::with_stream(seed, 0x0e7a1);
            samples
                .iter()
                .map(|s| {
                    let sign = if rng.uniform() < 0.5 { 1 } else { -1 };
                    let r = random_orthogonal_from(&mut rng, n, sign)?;
                    transform_points(&s.points, &r)
                })
                .collect::<Result<_>>()?
        }
    };
    match opts.precision {
        Precision::F64 => eval_with::<f64>(model, params, samples, &inputs, opts),
        Precision::F32 => eval_with::<f32>(model, params, samples, &inputs, opts),
    }
}

fn eval_with<T: Real + Send + Sync>(
    model: &Model,
    params: &ParamSet,
    samples: &[&Sample],
    inputs: &[Mat<f64>],
    opts: GradOptions,
) -> Result<EvalMetrics> {
    let lifted: Vec<T> = params.values().iter().map(|&v| T::from_f64(v)).collect();
    let built = model.build(&lifted, opts.mode)?;
    let one = |i: usize| -> Result<(f64, bool)> {
        let pred = built.predict(&lift_points(&inputs[i]))?;
        let l = sample_loss(opts.loss, &pred, &samples[i].target)?.to_f64();
        let hit = opts.loss == Loss::CrossEntropy && {
            let best = (0..pred.len())
                .max_by(|&a, &b| pred[a].to_f64().total_cmp(&pred[b].to_f64()))
                .unwrap_or(0);
            best as f64 == samples[i].target[0]
        };
        Ok((l, hit))
    };
    let parts: Vec<Result<(f64, bool)>> = if opts.parallel {
        (0..samples.len()).into_par_iter().map(one).collect()
    } else {
        (0..samples.len()).map(one).collect()
    };
    let mut loss = 0.0;
    let mut hits = 0usize;
    for p in parts {
        let (l, h) = p?;
        loss += l;
        hits += usize::from(h);
    }
    let count = samples.len();
    Ok(EvalMetrics {
        loss: loss / count as f64,
        accuracy: (opts.loss == Loss::CrossEntropy).then(|| hits as f64 / count as f64),
        count,
    })
}
