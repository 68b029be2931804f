//! Flow-matching objective, AdamW, teacher pretraining and phase-restricted
//! distillation of the slow/fast adapters.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::{Dataset2D, TrainSet};
use crate::error::{Error, Result, Snapshot};
use crate::lora::{bind_adapted, LoraAdapter, LoraSpec};
use crate::model::{BoundModel, VelocityField};
use crate::rng::{normal_tensor, stream, LabRng, Purpose};
use crate::schedule::PhasePartition;
use crate::tensor::Tensor;

/// Loss weighting `w(τ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weighting {
    Constant(f64),
    /// Values at evenly spaced knots over `[0, 1]`, linearly interpolated.
    Table(Vec<f64>),
}

impl Default for Weighting {
    fn default() -> Self {
        Weighting::Constant(1.0)
    }
}

impl Weighting {
    pub fn weight(&self, tau: f64) -> f64 {
        match self {
            Weighting::Constant(w) => *w,
            Weighting::Table(t) if t.len() == 1 => t[0],
            Weighting::Table(t) => {
                let pos = tau.clamp(0.0, 1.0) * (t.len() - 1) as f64;
                let i = (pos.floor() as usize).min(t.len() - 2);
                let frac = pos - i as f64;
                t[i] * (1.0 - frac) + t[i + 1] * frac
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Weighting::Constant(w) => w.is_finite() && *w >= 0.0,
            Weighting::Table(t) => !t.is_empty() && t.iter().all(|w| w.is_finite() && *w >= 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("w_mode must be non-negative and finite".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub grad_clip: f64,
    pub steps: usize,
    pub batch: usize,
    #[serde(default)]
    pub w_mode: Weighting,
}

impl TrainConfig {
    /// Teacher pretraining recipe.
    pub fn teacher_default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-2,
            eps: 1e-8,
            grad_clip: 1.0,
            steps: 5000,
            batch: 256,
            w_mode: Weighting::default(),
        }
    }

    /// Adapter recipe: lr 3e-4, 60 steps, batch 1, clip 1.0.
    pub fn distill_default() -> Self {
        Self {
            lr: 3e-4,
            steps: 60,
            batch: 1,
            ..Self::teacher_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be non-negative, got {}", self.lr)));
        }
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in (0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.eps > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config(
                "weight_decay >= 0, eps > 0 and grad_clip > 0 required".into(),
            ));
        }
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Config("steps and batch must be at least 1".into()));
        }
        self.w_mode.validate()
    }

    /// Reads a TOML file, or JSON when the extension is `.json`. Unknown keys are errors.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Loss curve as `step,loss` CSV.
pub fn write_loss_csv<W: std::io::Write>(mut w: W, losses: &[f64]) -> Result<()> {
    writeln!(w, "step,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(w, "{i},{l:?}")?;
    }
    Ok(())
}

/// First/second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// `θ ← θ − lr·(m̂/(√v̂ + eps) + wd·θ)` with bias-corrected moments.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "{} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].shape() != g.shape() {
            return Err(Error::dim("adamw", p.shape(), g.shape()));
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((theta, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *theta -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *theta);
        }
    }
    Ok(())
}

/// Rescales so the global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// Anything that can predict velocities on a graph.
pub trait VelocityPredictor {
    fn predict(&self, g: &mut Graph, x_tau: &Tensor, taus: &[f64], cond: Option<&[usize]>) -> Result<Var>;
}

impl VelocityPredictor for BoundModel {
    fn predict(&self, g: &mut Graph, x_tau: &Tensor, taus: &[f64], cond: Option<&[usize]>) -> Result<Var> {
        let x = g.constant(x_tau.clone());
        self.forward(g, x, taus, cond)
    }
}

/// `x_τ = τ·x0 + (1−τ)·ε` row by row.
pub fn interpolate(x0: &Tensor, noise: &Tensor, taus: &[f64]) -> Result<Tensor> {
    if x0.shape() != noise.shape() {
        return Err(Error::dim("interpolate", x0.shape(), noise.shape()));
    }
    if taus.len() != x0.rows() {
        return Err(Error::dim("interpolate", x0.shape(), (taus.len(), 1)));
    }
    let mut out = Vec::with_capacity(x0.len());
    for (r, &t) in taus.iter().enumerate() {
        for (a, e) in x0.row(r).iter().zip(noise.row(r)) {
            out.push(t * a + (1.0 - t) * e);
        }
    }
    Ok(Tensor::from_vec_unchecked(x0.rows(), x0.cols(), out))
}

/// Weighted flow-matching loss `mean_i w(τ_i)·‖v̂(x_τ) − (x0 − ε)‖²`.
#[allow(clippy::too_many_arguments)]
pub fn fm_loss(
    g: &mut Graph,
    predictor: &dyn VelocityPredictor,
    x0: &Tensor,
    noise: &Tensor,
    taus: &[f64],
    cond: Option<&[usize]>,
    weighting: &Weighting,
) -> Result<Var> {
    let weights: Vec<f64> = taus.iter().map(|&t| weighting.weight(t)).collect();
    fm_loss_rows(g, predictor, x0, noise, taus, cond, &weights)
}

fn fm_loss_rows(
    g: &mut Graph,
    predictor: &dyn VelocityPredictor,
    x0: &Tensor,
    noise: &Tensor,
    taus: &[f64],
    cond: Option<&[usize]>,
    row_weights: &[f64],
) -> Result<Var> {
    if x0.rows() == 0 {
        return Err(Error::Contract("flow-matching batch is empty".into()));
    }
    if let Some(&t) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::Domain(format!("training time {t} outside (0, 1)")));
    }
    let x_tau = interpolate(x0, noise, taus)?;
    let target = x0.sub(noise)?;
    let pred = predictor.predict(g, &x_tau, taus, cond)?;
    let per_entry = g.weighted_mse(pred, &target, Some(row_weights))?;
    // entry mean → per-sample squared norm
    Ok(g.scale(per_entry, x0.cols() as f64))
}

fn uniform_taus(rng: &mut LabRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let t = rng.random_range(lo..hi);
            if t > 0.0 {
                break t;
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TeacherRun {
    pub model: VelocityField,
    pub losses: Vec<f64>,
}

/// Plain flow-matching pretraining. Each row of a batch gets its own `τ ~ U(0, 1)`.
pub fn train_teacher(init: VelocityField, data: &Dataset2D, cfg: &TrainConfig, seed: u64) -> Result<TeacherRun> {
    cfg.validate()?;
    let mut model = init;
    let conditional = model.arch().num_classes.is_some();
    let mut batches = data.sampler(Purpose::Data, 1);
    let mut noise_rng = stream(seed, Purpose::TrainNoise, 0);
    let mut time_rng = stream(seed, Purpose::TrainTime, 0);
    let mut state = OptimizerState::new(model.named_params().into_iter().map(|(_, t)| t));
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let (x0, classes) = batches.next_batch(cfg.batch)?;
        let noise = normal_tensor(&mut noise_rng, cfg.batch, x0.cols(), 1.0);
        let taus = uniform_taus(&mut time_rng, cfg.batch, 0.0, 1.0);
        let cond = conditional.then_some(classes.as_slice());

        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let loss = fm_loss(&mut g, &bound, &x0, &noise, &taus, cond, &cfg.w_mode)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NumericalAbort {
                step,
                detail: format!("teacher loss is {value}"),
                snapshot: Some(Box::new(Snapshot::Teacher(model))),
            });
        }
        g.backward(loss)?;
        let mut grads: Vec<Tensor> = bound.param_vars().iter().map(|&v| g.grad(v).clone()).collect();
        clip_grad_norm(&mut grads, cfg.grad_clip);
        adamw_step(&mut model.params_mut(), &grads, &mut state, cfg)?;
        losses.push(value);
    }
    Ok(TeacherRun { model, losses })
}

/// Which part of the trajectory an adapter is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// `[0, τ_s)`, the high-noise start.
    Slow,
    /// `[τ_s, 1)`
    Fast,
    /// `[0, 1)`, for single-adapter baselines.
    Full,
}

impl Phase {
    pub fn interval(self, partition: &PhasePartition) -> (f64, f64) {
        match self {
            Phase::Slow => (0.0, partition.tau_s),
            Phase::Fast => (partition.tau_s, 1.0),
            Phase::Full => (0.0, 1.0),
        }
    }

    pub fn contains(self, partition: &PhasePartition, tau: f64) -> bool {
        let (lo, hi) = self.interval(partition);
        tau >= lo && tau < hi
    }

    fn stream_index(self) -> u32 {
        match self {
            Phase::Slow => 0,
            Phase::Fast => 1,
            Phase::Full => 2,
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slow" => Ok(Phase::Slow),
            "fast" => Ok(Phase::Fast),
            "full" | "single" => Ok(Phase::Full),
            other => Err(Error::Config(format!("unknown phase '{other}'"))),
        }
    }
}

/// Adapter gradients for one batch. Rows whose `τ` falls outside `phase`
/// get zero weight, so they contribute exactly nothing.
#[allow(clippy::too_many_arguments)]
pub fn adapter_grads(
    base: &VelocityField,
    adapter: &LoraAdapter,
    phase: Phase,
    partition: &PhasePartition,
    x0: &Tensor,
    noise: &Tensor,
    taus: &[f64],
    cond: Option<&[usize]>,
    weighting: &Weighting,
) -> Result<(f64, Vec<Tensor>)> {
    let weights: Vec<f64> = taus
        .iter()
        .map(|&t| {
            if phase.contains(partition, t) {
                weighting.weight(t)
            } else {
                0.0
            }
        })
        .collect();
    let mut g = Graph::new();
    let (bound, leaves) = bind_adapted(&mut g, base, adapter)?;
    let loss = fm_loss_rows(&mut g, &bound, x0, noise, taus, cond, &weights)?;
    g.backward(loss)?;
    let value = g.value(loss).item();
    Ok((value, leaves.iter().map(|&v| g.grad(v).clone()).collect()))
}

#[derive(Clone, Debug)]
pub struct DistillRun {
    pub adapter: LoraAdapter,
    pub losses: Vec<f64>,
    /// Every training time drawn, in order.
    pub taus: Vec<f64>,
}

/// Trains one phase expert on a frozen base. Samples are visited in a fresh
/// shuffled order each epoch; noise and `τ` are redrawn every step.
pub fn distill_expert(
    base: &VelocityField,
    phase: Phase,
    partition: &PhasePartition,
    trainset: &TrainSet,
    cfg: &TrainConfig,
    lora: &LoraSpec,
    seed: u64,
) -> Result<DistillRun> {
    cfg.validate()?;
    if trainset.is_empty() {
        return Err(Error::Config("distillation needs at least one sample".into()));
    }
    let (lo, hi) = phase.interval(partition);
    if !(hi > lo) {
        return Err(Error::Config(format!("{phase:?} phase is empty")));
    }
    let idx = phase.stream_index();
    let mut adapter = LoraAdapter::init(base, lora, &mut stream(seed, Purpose::Init, idx))?;
    let mut noise_rng = stream(seed, Purpose::TrainNoise, idx);
    let mut time_rng = stream(seed, Purpose::TrainTime, idx);
    let mut shuffle_rng = stream(seed, Purpose::Shuffle, idx);
    let conditional = base.arch().num_classes.is_some();
    let mut state = OptimizerState::new(adapter.named_params().into_iter().map(|(_, t)| t));
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut seen = Vec::with_capacity(cfg.steps * cfg.batch);

    for step in 0..cfg.steps {
        let mut rows = Vec::with_capacity(cfg.batch);
        while rows.len() < cfg.batch {
            if cursor == order.len() {
                order = (0..trainset.len()).collect();
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            rows.push(order[cursor]);
            cursor += 1;
        }
        let x0 = trainset.samples.gather_rows(&rows)?;
        let classes: Vec<usize> = rows.iter().map(|&r| trainset.classes[r]).collect();
        let noise = normal_tensor(&mut noise_rng, cfg.batch, x0.cols(), 1.0);
        let taus = uniform_taus(&mut time_rng, cfg.batch, lo, hi);
        let cond = conditional.then_some(classes.as_slice());

        let (value, mut grads) =
            adapter_grads(base, &adapter, phase, partition, &x0, &noise, &taus, cond, &cfg.w_mode)?;
        if !value.is_finite() {
            return Err(Error::NumericalAbort {
                step,
                detail: format!("{phase:?} adapter loss is {value}"),
                snapshot: Some(Box::new(Snapshot::Adapter(adapter))),
            });
        }
        clip_grad_norm(&mut grads, cfg.grad_clip);
        adamw_step(&mut adapter.params_mut(), &grads, &mut state, cfg)?;
        losses.push(value);
        seen.extend_from_slice(&taus);
    }
    Ok(DistillRun {
        adapter,
        losses,
        taus: seen,
    })
}
