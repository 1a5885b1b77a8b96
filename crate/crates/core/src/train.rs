//! Optimizers, learning-rate schedules and the training loop.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{derive_seed, seeded_rng};
use crate::nn::{backward, Network, TrainableSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adamw {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn adamw_default() -> Self {
        OptimizerKind::Adamw { beta1: default_beta1(), beta2: default_beta2(), eps: default_eps(), weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    CosineWithWarmup,
}

fn default_window() -> usize {
    10
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    #[serde(default)]
    pub warmup_ratio: f64,
    pub schedule: Schedule,
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trainable")]
    pub trainable: TrainableSet,
    /// Reshuffle the data every epoch (per-epoch seed derived from `seed`);
    /// otherwise batches walk the data in order.
    #[serde(default = "default_true")]
    pub shuffle: bool,
    /// Absolute loss level for `steps_to_threshold`.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default = "default_window")]
    pub smoothing_window: usize,
}

fn default_trainable() -> TrainableSet {
    TrainableSet::AdaptersOnly
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::adamw_default(),
            lr: 1e-3,
            warmup_ratio: 0.03,
            schedule: Schedule::CosineWithWarmup,
            steps: 100,
            batch_size: 32,
            seed: 0,
            trainable: TrainableSet::AdaptersOnly,
            shuffle: true,
            threshold: None,
            smoothing_window: default_window(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::invalid("warmup_ratio must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.smoothing_window == 0 {
            return Err(Error::invalid("smoothing_window must be at least 1"));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.steps as f64).ceil() as usize
    }
}

/// Learning rate at `step`: a linear ramp from 0 over the warmup steps, then
/// `λ·½(1 + cos(π·progress))` with `progress = (step − warmup)/(steps − warmup)`.
pub fn lr_at(cfg: &TrainConfig, step: usize) -> Result<f64> {
    if step >= cfg.steps {
        return Err(Error::invalid(format!("step {step} outside 0..{}", cfg.steps)));
    }
    Ok(match cfg.schedule {
        Schedule::Constant => cfg.lr,
        Schedule::CosineWithWarmup => {
            let warmup = cfg.warmup_steps();
            if step < warmup {
                cfg.lr * step as f64 / warmup as f64
            } else {
                let progress = (step - warmup) as f64 / (cfg.steps - warmup) as f64;
                cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    })
}

fn check_grads(params: &[&mut [f64]], grads: &[&[f64]], step: usize) -> Result<()> {
    if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::invalid("parameter and gradient layouts differ"));
    }
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteGradient { step });
    }
    Ok(())
}

/// `p ← p − λ·g`. `step` only labels errors.
pub fn sgd_step(params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64, step: usize) -> Result<()> {
    check_grads(params, grads, step)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (pi, gi) in p.iter_mut().zip(g.iter()) {
            *pi -= lr * gi;
        }
    }
    Ok(())
}

/// First and second moment buffers, lazily shaped on the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Bias-corrected AdamW with decoupled weight decay
/// (`p ← p − λ_t·(m̂/(√v̂ + ε) + wd·p)`).
pub fn adamw_step(
    state: &mut AdamState,
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    lr: f64,
    (beta1, beta2, eps, weight_decay): (f64, f64, f64, f64),
    step: usize,
) -> Result<()> {
    check_grads(params, grads, step)?;
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != grads.len() || state.m.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
        return Err(Error::invalid("optimizer state does not match parameters"));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * (mhat / (vhat.sqrt() + eps) + weight_decay * p[i]);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Mini-batch loss before the update.
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub records: Vec<StepRecord>,
    pub smoothing_window: usize,
    pub threshold: Option<f64>,
    pub steps_to_threshold: Option<usize>,
    /// Loss on the full training set after the last step.
    pub final_loss: Option<f64>,
    pub final_eval_loss: Option<f64>,
    /// Step at which training stopped because the loss blew up.
    pub diverged_at: Option<usize>,
    pub shuffle: bool,
    /// Per-epoch shuffle seeds, in epoch order.
    pub epoch_seeds: Vec<u64>,
}

impl MetricsLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// `step,loss,lr` with round-trip float formatting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,loss,lr")?;
        for r in &self.records {
            writeln!(w, "{},{:?},{:?}", r.step, r.loss, r.lr)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }
}

/// Trailing moving average; the first `window − 1` entries average over
/// what is available.
pub fn smoothed(losses: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(losses.len());
    let mut sum = 0.0;
    for i in 0..losses.len() {
        sum += losses[i];
        if i >= w {
            sum -= losses[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// First step whose smoothed loss is below `threshold`.
pub fn steps_to_threshold(losses: &[f64], threshold: f64, window: usize) -> Option<usize> {
    smoothed(losses, window).iter().position(|&s| s < threshold)
}

const DIVERGENCE_LIMIT: f64 = 1e6;

/// Trains `net` in place. Returns the log; divergence stops the run and is
/// recorded rather than returned as an error.
pub fn train(net: &mut Network, data: &Dataset, eval: Option<&Dataset>, cfg: &TrainConfig) -> Result<MetricsLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let n = data.len();
    let bs = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut epoch = 0u64;
    let mut epoch_seeds = Vec::new();
    let mut adam = AdamState::default();
    let mut records = Vec::with_capacity(cfg.steps);
    let mut diverged_at = None;

    for step in 0..cfg.steps {
        if cursor + bs > n {
            if cfg.shuffle {
                let s = derive_seed(cfg.seed, epoch);
                order = (0..n).collect();
                order.shuffle(&mut seeded_rng(s));
                epoch_seeds.push(s);
            }
            epoch += 1;
            cursor = 0;
        }
        let batch = &order[cursor..cursor + bs];
        cursor += bs;
        let (x, t) = if bs == n && !cfg.shuffle {
            (data.inputs.clone(), data.targets.clone())
        } else {
            (data.inputs.select_columns(batch), data.targets.select_columns(batch))
        };

        let lr = lr_at(cfg, step)?;
        let trace = match net.forward(&x, &t) {
            Ok(tr) => tr,
            Err(_) => {
                diverged_at = Some(step);
                break;
            }
        };
        let loss = trace.loss;
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            diverged_at = Some(step);
            break;
        }
        records.push(StepRecord { step, loss, lr });
        let grads = backward(trace)?;
        let gs = grads.trainable_grads(cfg.trainable);
        let mut params = net.trainable_params_mut(cfg.trainable);
        match cfg.optimizer {
            OptimizerKind::Sgd => sgd_step(&mut params, &gs, lr, step)?,
            OptimizerKind::Adamw { beta1, beta2, eps, weight_decay } => {
                adamw_step(&mut adam, &mut params, &gs, lr, (beta1, beta2, eps, weight_decay), step)?
            }
        }
    }

    let eval_loss = |ds: &Dataset| net.loss(&ds.inputs, &ds.targets).ok().filter(|l| l.is_finite());
    let (final_loss, final_eval_loss) =
        if diverged_at.is_some() { (None, None) } else { (eval_loss(data), eval.and_then(eval_loss)) };
    let losses: Vec<f64> = records.iter().map(|r| r.loss).collect();
    Ok(MetricsLog {
        steps_to_threshold: cfg.threshold.and_then(|tau| steps_to_threshold(&losses, tau, cfg.smoothing_window)),
        records,
        smoothing_window: cfg.smoothing_window,
        threshold: cfg.threshold,
        final_loss,
        final_eval_loss,
        diverged_at,
        shuffle: cfg.shuffle,
        epoch_seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine_cfg(steps: usize, warmup_ratio: f64) -> TrainConfig {
        TrainConfig { lr: 0.5, steps, warmup_ratio, schedule: Schedule::CosineWithWarmup, ..TrainConfig::default() }
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = [1.0];
        sgd_step(&mut [&mut p[..]], &[&[2.0]], 0.1, 0).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
        let mut q = vec![3.0, -1.0];
        sgd_step(&mut [&mut q[..]], &[&[5.0, 7.0]], 0.0, 0).unwrap();
        assert_eq!(q, vec![3.0, -1.0]);
    }

    #[test]
    fn two_half_steps_equal_one_step() {
        let g = [0.3, -1.7, 2.5];
        let mut a = vec![1.0, 2.0, 3.0];
        let mut b = a.clone();
        sgd_step(&mut [&mut a[..]], &[&g], 0.5, 0).unwrap();
        sgd_step(&mut [&mut b[..]], &[&g], 0.25, 0).unwrap();
        sgd_step(&mut [&mut b[..]], &[&g], 0.25, 1).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_reports_step() {
        let mut p = vec![1.0];
        let err = sgd_step(&mut [&mut p[..]], &[&[f64::NAN]], 0.1, 42).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { step: 42 }));
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn adam_first_step_is_lr_sized_and_zero_grads_stay() {
        let mut st = AdamState::default();
        let mut p = [1.0, 5.0];
        adamw_step(&mut st, &mut [&mut p[..]], &[&[3.0, 0.0]], 0.01, (0.9, 0.999, 1e-8, 0.0), 0).unwrap();
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert_eq!(p[1], 5.0);
    }

    #[test]
    fn adam_minimises_quadratic() {
        // f(p) = ½p₀² + 2p₁², minimum 0 at the origin. β₁ = 0.5 keeps the
        // momentum from orbiting the minimum at a constant step size.
        let f = |p: &[f64]| 0.5 * p[0] * p[0] + 2.0 * p[1] * p[1];
        let mut st = AdamState::default();
        let mut p = vec![1.0, 1.0];
        for s in 0..100 {
            let g = [p[0], 4.0 * p[1]];
            adamw_step(&mut st, &mut [&mut p[..]], &[&g], 0.1, (0.5, 0.999, 1e-8, 0.0), s).unwrap();
        }
        assert!(f(&p) < 1e-6, "{p:?} {}", f(&p));
    }

    #[test]
    fn schedule_shape() {
        let cfg = cosine_cfg(100, 0.03);
        assert_eq!(cfg.warmup_steps(), 3);
        assert_eq!(lr_at(&cfg, 0).unwrap(), 0.0);
        assert!((lr_at(&cfg, 3).unwrap() - 0.5).abs() < 1e-12);
        let decay = 97.0;
        let bound = 0.5 * 0.5 * (1.0 + (std::f64::consts::PI * (1.0 - 1.0 / decay)).cos());
        assert!(lr_at(&cfg, 99).unwrap() <= bound + 1e-15);
        assert!(lr_at(&cfg, 100).is_err());
    }

    #[test]
    fn smoothing_and_threshold() {
        let l = [4.0, 2.0, 0.0, 0.0];
        assert_eq!(smoothed(&l, 2), vec![4.0, 3.0, 1.0, 0.0]);
        assert_eq!(steps_to_threshold(&l, 1.5, 2), Some(2));
        assert_eq!(steps_to_threshold(&l, -1.0, 2), None);
    }
}
