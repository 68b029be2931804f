//! Low-rank adapters on every linear layer and slow/fast expert routing.
//!
//! A layer with frozen weight `W (d×k)` is adapted to `W + (α/r)·B·A` with
//! `A (r×k)` and `B (d×r)`. Layers narrower than the requested rank use
//! `min(r, d, k)` columns, keeping the shared `α/r` scale.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{Architecture, BoundModel, VelocityField};
use crate::rng::{normal_tensor, LabRng};
use crate::schedule::PhaseSchedule;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoraInit {
    /// `A ~ N(0, σ²)`, `B = 0`: the adapted model starts as the base model.
    #[default]
    GaussianAZeroB,
    /// Both factors Gaussian.
    GaussianBoth,
}

impl std::str::FromStr for LoraInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_a_zero_b" => Ok(Self::GaussianAZeroB),
            "gaussian_both" => Ok(Self::GaussianBoth),
            other => Err(Error::Config(format!("unknown lora_init '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraSpec {
    pub rank: usize,
    pub alpha: f64,
    #[serde(default)]
    pub init: LoraInit,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_init_std() -> f64 {
    0.02
}

impl Default for LoraSpec {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 32.0,
            init: LoraInit::GaussianAZeroB,
            init_std: default_init_std(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoraLayer {
    /// `r × k`
    pub a: Tensor,
    /// `d × r`
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    rank: usize,
    alpha: f64,
    target: Architecture,
    layers: Vec<LoraLayer>,
}

impl LoraAdapter {
    pub fn init(base: &VelocityField, spec: &LoraSpec, rng: &mut LabRng) -> Result<Self> {
        if spec.rank == 0 || !(spec.alpha > 0.0) {
            return Err(Error::Config(format!(
                "rank and alpha must be positive (rank {}, alpha {})",
                spec.rank, spec.alpha
            )));
        }
        let layers = base
            .arch()
            .layer_shapes()
            .into_iter()
            .map(|(d, k)| {
                let r = spec.rank.min(d).min(k);
                let a = normal_tensor(rng, r, k, spec.init_std);
                let b = match spec.init {
                    LoraInit::GaussianAZeroB => Tensor::zeros(d, r),
                    LoraInit::GaussianBoth => normal_tensor(rng, d, r, spec.init_std),
                };
                LoraLayer { a, b }
            })
            .collect();
        Ok(Self {
            rank: spec.rank,
            alpha: spec.alpha,
            target: base.arch().clone(),
            layers,
        })
    }

    pub fn from_parts(rank: usize, alpha: f64, target: Architecture, layers: Vec<LoraLayer>) -> Result<Self> {
        if rank == 0 || !(alpha > 0.0) {
            return Err(Error::Config(format!(
                "rank and alpha must be positive (rank {rank}, alpha {alpha})"
            )));
        }
        let adapter = Self {
            rank,
            alpha,
            target,
            layers,
        };
        adapter.check_shapes()?;
        Ok(adapter)
    }

    fn check_shapes(&self) -> Result<()> {
        let shapes = self.target.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::AdapterCompat(format!(
                "adapter has {} layers, model has {}",
                self.layers.len(),
                shapes.len()
            )));
        }
        for (i, ((d, k), l)) in shapes.iter().zip(&self.layers).enumerate() {
            let r = self.rank.min(*d).min(*k);
            if l.a.shape() != (r, *k) || l.b.shape() != (*d, r) {
                return Err(Error::AdapterCompat(format!(
                    "layer {i}: A {:?} / B {:?} do not fit a {d}x{k} weight at rank {r}",
                    l.a.shape(),
                    l.b.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn target(&self) -> &Architecture {
        &self.target
    }

    pub fn layers(&self) -> &[LoraLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LoraLayer] {
        &mut self.layers
    }

    /// `(α/r)·B·A` for one layer.
    pub fn delta(&self, layer: usize) -> Result<Tensor> {
        let l = &self.layers[layer];
        Ok(l.b.matmul(&l.a)?.scale(self.scale()))
    }

    pub fn check_compatible(&self, base: &VelocityField) -> Result<()> {
        if &self.target != base.arch() {
            return Err(Error::AdapterCompat(format!(
                "adapter targets {:?}, base is {:?}",
                self.target,
                base.arch()
            )));
        }
        self.check_shapes()
    }

    /// Factor order: per layer `A` then `B`.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.A"), &l.a));
            out.push((format!("layers.{i}.B"), &l.b));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.a, &mut l.b]).collect()
    }

    pub fn bit_eq(&self, other: &LoraAdapter) -> bool {
        self.rank == other.rank
            && self.alpha.to_bits() == other.alpha.to_bits()
            && self.target == other.target
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(x, y)| x.a.bit_eq(&y.a) && x.b.bit_eq(&y.b))
    }
}

/// Returns a new model with every weight replaced by `W + (α/r)·B·A`.
/// Biases and the class table are copied unchanged; `base` is untouched.
pub fn effective_weights(base: &VelocityField, adapter: &LoraAdapter) -> Result<VelocityField> {
    adapter.check_compatible(base)?;
    let mut out = base.clone();
    for (i, layer) in base.layers().iter().enumerate() {
        out.replace_weight(i, layer.weight.add(&adapter.delta(i)?)?);
    }
    Ok(out)
}

/// Binds a frozen base plus a trainable adapter on a graph. Returns the
/// adapted model and the adapter leaves in [`LoraAdapter::params_mut`] order.
pub fn bind_adapted(g: &mut Graph, base: &VelocityField, adapter: &LoraAdapter) -> Result<(BoundModel, Vec<Var>)> {
    adapter.check_compatible(base)?;
    let frozen = base.bind(g, false);
    let mut layers = Vec::with_capacity(frozen.layers.len());
    let mut leaves = Vec::with_capacity(2 * adapter.layers.len());
    for (&(w, bias), l) in frozen.layers.iter().zip(&adapter.layers) {
        let a = g.param(l.a.clone());
        let b = g.param(l.b.clone());
        leaves.push(a);
        leaves.push(b);
        let ba = g.matmul(b, a)?;
        let delta = g.scale(ba, adapter.scale());
        layers.push((g.add(w, delta)?, bias));
    }
    Ok((
        BoundModel::from_vars(base.arch().clone(), layers, frozen.cond_table),
        leaves,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoutingMode {
    SlowFast,
    SlowOnly,
    FastOnly,
    Single,
}

/// The two phase experts plus the policy for which one runs where.
#[derive(Clone, Debug)]
pub struct ExpertSet {
    slow: Option<LoraAdapter>,
    fast: Option<LoraAdapter>,
    mode: RoutingMode,
}

impl ExpertSet {
    pub fn slow_fast(slow: LoraAdapter, fast: LoraAdapter) -> Result<Self> {
        if slow.target() != fast.target() {
            return Err(Error::AdapterCompat(
                "slow and fast experts target different models".into(),
            ));
        }
        Ok(Self {
            slow: Some(slow),
            fast: Some(fast),
            mode: RoutingMode::SlowFast,
        })
    }

    /// Slow expert on the slow steps, bare base model on the fast steps.
    pub fn slow_only(slow: LoraAdapter) -> Self {
        Self {
            slow: Some(slow),
            fast: None,
            mode: RoutingMode::SlowOnly,
        }
    }

    pub fn fast_only(fast: LoraAdapter) -> Self {
        Self {
            slow: None,
            fast: Some(fast),
            mode: RoutingMode::FastOnly,
        }
    }

    /// One adapter for every step.
    pub fn single(adapter: LoraAdapter) -> Self {
        Self {
            slow: Some(adapter),
            fast: None,
            mode: RoutingMode::Single,
        }
    }

    pub fn mode(&self) -> RoutingMode {
        self.mode
    }

    pub fn slow(&self) -> Option<&LoraAdapter> {
        self.slow.as_ref()
    }

    pub fn fast(&self) -> Option<&LoraAdapter> {
        self.fast.as_ref()
    }
}

/// Adapter for grid step `step_index`, or `None` when the bare base runs.
pub fn route<'a>(
    experts: &'a ExpertSet,
    step_index: usize,
    schedule: &PhaseSchedule,
) -> Result<Option<&'a LoraAdapter>> {
    let in_slow = schedule.slow.contains(&step_index);
    let in_fast = schedule.fast.contains(&step_index);
    if !in_slow && !in_fast {
        return Err(Error::Contract(format!(
            "step {step_index} is not executed by the schedule"
        )));
    }
    Ok(match experts.mode {
        RoutingMode::Single => experts.slow.as_ref(),
        RoutingMode::SlowFast | RoutingMode::SlowOnly | RoutingMode::FastOnly => {
            if in_slow {
                experts.slow.as_ref()
            } else {
                experts.fast.as_ref()
            }
        }
    })
}
