//! Time grids, SNR, the slow/fast phase boundary and few-step allocation.
//!
//! Time runs from `τ = 0` (pure noise) to `τ = 1` (data), matching the
//! interpolant `x_τ = τ·x0 + (1−τ)·ε`. The slow phase is the high-noise start
//! of the trajectory, `[0, τ_s)`, and always executes before the fast phase.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    /// `n_steps + 1` evenly spaced knots from 0 to 1, endpoints exact.
    pub fn uniform(n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::Config("a time grid needs at least one step".into()));
        }
        let knots = (0..=n_steps).map(|i| i as f64 / n_steps as f64).collect();
        Ok(Self { knots })
    }

    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::Config("grid knots must start at 0 and end at 1".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("grid knots must be strictly increasing".into()));
        }
        Ok(Self { knots })
    }

    pub fn n_steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn knot(&self, i: usize) -> f64 {
        self.knots[i]
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
}

/// `(τ/(1−τ))²`; increases with `τ` towards the data end.
pub fn snr(tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("snr is defined on (0, 1), got {tau}")));
    }
    let r = tau / (1.0 - tau);
    Ok(r * r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// The first `⌈ρ·n⌉` steps are slow.
    IndexFraction(f64),
    /// Steps whose start knot has SNR below the threshold are slow.
    SnrThreshold(f64),
}

impl Default for PartitionMode {
    fn default() -> Self {
        PartitionMode::IndexFraction(0.4)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePartition {
    pub n_steps: usize,
    /// First fast step; steps `0..boundary_index` are slow.
    pub boundary_index: usize,
    /// Knot at `boundary_index`.
    pub tau_s: f64,
}

impl PhasePartition {
    pub fn slow_indices(&self) -> std::ops::Range<usize> {
        0..self.boundary_index
    }

    pub fn fast_indices(&self) -> std::ops::Range<usize> {
        self.boundary_index..self.n_steps
    }
}

pub fn partition(grid: &TimeGrid, mode: PartitionMode) -> Result<PhasePartition> {
    let n = grid.n_steps();
    let boundary = match mode {
        PartitionMode::IndexFraction(rho) => {
            if !(rho > 0.0 && rho < 1.0) {
                return Err(Error::Config(format!("slow fraction must lie in (0, 1), got {rho}")));
            }
            // guard against 0.4*50 landing a hair above 20
            (rho * n as f64 - 1e-9).ceil() as usize
        }
        PartitionMode::SnrThreshold(s) => {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("SNR threshold must be positive, got {s}")));
            }
            // snr(τ) < s  ⇔  τ < √s / (1 + √s), which also covers τ = 0
            let cut = s.sqrt() / (1.0 + s.sqrt());
            (0..n).take_while(|&i| grid.knot(i) < cut).count()
        }
    };
    if boundary == 0 || boundary >= n {
        return Err(Error::Config(format!(
            "partition {mode:?} leaves an empty phase on a {n}-step grid (boundary {boundary})"
        )));
    }
    Ok(PhasePartition {
        n_steps: n,
        boundary_index: boundary,
        tau_s: grid.knot(boundary),
    })
}

/// Executed grid steps, slow ones first. Serialized form is the
/// reproducibility record `{n_steps, boundary_index, slow, fast}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub n_steps: usize,
    pub boundary_index: usize,
    pub slow: Vec<usize>,
    pub fast: Vec<usize>,
}

impl PhaseSchedule {
    pub fn executed(&self) -> Vec<usize> {
        self.slow.iter().chain(&self.fast).copied().collect()
    }

    pub fn nfe(&self) -> usize {
        self.slow.len() + self.fast.len()
    }

    /// Start knots of the executed steps.
    pub fn taus(&self, grid: &TimeGrid) -> Vec<f64> {
        self.executed().into_iter().map(|i| grid.knot(i)).collect()
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if self.n_steps != grid.n_steps() {
            return Err(Error::Config(format!(
                "schedule is for {} steps, grid has {}",
                self.n_steps,
                grid.n_steps()
            )));
        }
        let exec = self.executed();
        if exec.is_empty() {
            return Err(Error::Config("schedule executes no steps".into()));
        }
        if exec.windows(2).any(|w| w[0] >= w[1]) || exec.iter().any(|&i| i >= self.n_steps) {
            return Err(Error::Config(
                "executed steps must be increasing and on the grid".into(),
            ));
        }
        if self.slow.iter().any(|&i| i >= self.boundary_index) || self.fast.iter().any(|&i| i < self.boundary_index) {
            return Err(Error::Config(
                "slow steps must precede the boundary, fast steps follow it".into(),
            ));
        }
        Ok(())
    }
}

fn strided(start: usize, size: usize, k: usize, phase: &str) -> Result<Vec<usize>> {
    if k == 0 || k > size {
        return Err(Error::Config(format!(
            "cannot place {k} {phase} steps in a region of {size}"
        )));
    }
    let stride = size / k;
    Ok((0..k).map(|i| start + i * stride).collect())
}

/// Places `k_slow` steps at stride `⌊S/k_slow⌋` in the slow region and
/// `k_fast` at stride `⌊F/k_fast⌋` in the fast region.
pub fn allocate(grid: &TimeGrid, partition: &PhasePartition, k_slow: usize, k_fast: usize) -> Result<PhaseSchedule> {
    check_partition(grid, partition)?;
    let s = partition.boundary_index;
    let f = partition.n_steps - s;
    Ok(PhaseSchedule {
        n_steps: partition.n_steps,
        boundary_index: s,
        slow: strided(0, s, k_slow, "slow")?,
        fast: strided(s, f, k_fast, "fast")?,
    })
}

/// `k` steps at stride `⌊n/k⌋` over the whole grid, split at the boundary.
pub fn allocate_uniform(grid: &TimeGrid, partition: &PhasePartition, k: usize) -> Result<PhaseSchedule> {
    check_partition(grid, partition)?;
    let all = strided(0, partition.n_steps, k, "uniform")?;
    let (slow, fast) = all.into_iter().partition(|&i| i < partition.boundary_index);
    Ok(PhaseSchedule {
        n_steps: partition.n_steps,
        boundary_index: partition.boundary_index,
        slow,
        fast,
    })
}

/// Every grid step; the teacher's schedule.
pub fn full_schedule(grid: &TimeGrid, partition: &PhasePartition) -> Result<PhaseSchedule> {
    allocate(
        grid,
        partition,
        partition.boundary_index,
        partition.n_steps - partition.boundary_index,
    )
}

fn check_partition(grid: &TimeGrid, p: &PhasePartition) -> Result<()> {
    if p.n_steps != grid.n_steps() || p.boundary_index == 0 || p.boundary_index >= p.n_steps {
        return Err(Error::Config(format!("partition {p:?} does not fit the grid")));
    }
    Ok(())
}

pub fn nfe(schedule: &PhaseSchedule) -> usize {
    schedule.nfe()
}

pub fn speedup(teacher_nfe: usize, student_nfe: usize) -> f64 {
    teacher_nfe as f64 / student_nfe as f64
}

/// NFE as usually reported, e.g. `10×2` when guided sampling doubles the
/// evaluations. Guidance itself is not implemented here.
pub fn nfe_label(nfe: usize, guidance_multiplier: usize) -> String {
    if guidance_multiplier <= 1 {
        nfe.to_string()
    } else {
        format!("{nfe}×{guidance_multiplier}")
    }
}

/// One arm of the slow/fast ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum AblationConfig {
    SlowFast {
        k_slow: usize,
        k_fast: usize,
    },
    SlowPlusBase {
        k_slow: usize,
        k_fast: usize,
    },
    BasePlusFast {
        k_slow: usize,
        k_fast: usize,
    },
    SingleIdentical {
        k_slow: usize,
        k_fast: usize,
    },
    /// One adapter on `k_slow + k_fast` uniformly strided steps.
    SingleUniform {
        k_slow: usize,
        k_fast: usize,
    },
}

impl AblationConfig {
    /// The five arms compared at `k_slow + k_fast` evaluations.
    pub fn standard_arms(k_slow: usize, k_fast: usize) -> Vec<AblationConfig> {
        vec![
            AblationConfig::SlowFast { k_slow, k_fast },
            AblationConfig::SlowPlusBase { k_slow, k_fast },
            AblationConfig::BasePlusFast { k_slow, k_fast },
            AblationConfig::SingleIdentical { k_slow, k_fast },
            AblationConfig::SingleUniform { k_slow, k_fast },
        ]
    }

    pub fn counts(&self) -> (usize, usize) {
        match *self {
            AblationConfig::SlowFast { k_slow, k_fast }
            | AblationConfig::SlowPlusBase { k_slow, k_fast }
            | AblationConfig::BasePlusFast { k_slow, k_fast }
            | AblationConfig::SingleIdentical { k_slow, k_fast }
            | AblationConfig::SingleUniform { k_slow, k_fast } => (k_slow, k_fast),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (s, f) = self.counts();
        if s == 0 || f == 0 {
            return Err(Error::Config(format!("{self:?}: step counts must be at least 1")));
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        let (s, f) = self.counts();
        match self {
            AblationConfig::SlowFast { .. } => format!("slow{s}-fast{f}"),
            AblationConfig::SlowPlusBase { .. } => format!("slow{s}+base{f}"),
            AblationConfig::BasePlusFast { .. } => format!("base{s}+fast{f}"),
            AblationConfig::SingleIdentical { .. } => format!("single-identical{}", s + f),
            AblationConfig::SingleUniform { .. } => format!("single-uniform{}", s + f),
        }
    }

    pub fn schedule(&self, grid: &TimeGrid, partition: &PhasePartition) -> Result<PhaseSchedule> {
        self.validate()?;
        let (s, f) = self.counts();
        match self {
            AblationConfig::SingleUniform { .. } => allocate_uniform(grid, partition, s + f),
            _ => allocate(grid, partition, s, f),
        }
    }
}

/// Parses `slowK-fastM`.
pub fn parse_slow_fast(spec: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("schedule '{spec}' is not of the form slowK-fastM"));
    let (s, f) = spec.split_once('-').ok_or_else(bad)?;
    let k_slow = s.strip_prefix("slow").and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    let k_fast = f.strip_prefix("fast").and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    Ok((k_slow, k_fast))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid50() -> (TimeGrid, PhasePartition) {
        let g = TimeGrid::uniform(50).unwrap();
        let p = partition(&g, PartitionMode::IndexFraction(0.4)).unwrap();
        (g, p)
    }

    #[test]
    fn snr_values() {
        assert_eq!(snr(0.5).unwrap(), 1.0);
        assert!((snr(0.8).unwrap() - 16.0).abs() < 1e-12);
        assert!(snr(0.0).is_err());
        assert!(snr(1.0).is_err());
        let vals: Vec<f64> = (1..1000).map(|i| snr(i as f64 / 1000.0).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn index_fraction_boundaries() {
        let (_, p) = grid50();
        assert_eq!(p.slow_indices(), 0..20);
        assert_eq!(p.tau_s, 0.4);
        let g10 = TimeGrid::uniform(10).unwrap();
        assert_eq!(
            partition(&g10, PartitionMode::IndexFraction(0.5))
                .unwrap()
                .boundary_index,
            5
        );
    }

    #[test]
    fn snr_threshold_boundary() {
        let g = TimeGrid::uniform(10).unwrap();
        let p = partition(&g, PartitionMode::SnrThreshold(1.0)).unwrap();
        assert_eq!(p.tau_s, 0.5);
        assert_eq!(p.boundary_index, 5);
    }

    #[test]
    fn empty_phase_is_rejected() {
        let g = TimeGrid::uniform(10).unwrap();
        assert!(partition(&g, PartitionMode::SnrThreshold(0.0)).is_err());
        assert!(partition(&g, PartitionMode::IndexFraction(0.0)).is_err());
        assert!(partition(&g, PartitionMode::SnrThreshold(1e9)).is_err());
        assert!(partition(&g, PartitionMode::IndexFraction(1.0)).is_err());
    }

    #[test]
    fn five_plus_five_on_fifty() {
        let (g, p) = grid50();
        let s = allocate(&g, &p, 5, 5).unwrap();
        assert_eq!(s.slow, vec![0, 4, 8, 12, 16]);
        assert_eq!(s.fast, vec![20, 26, 32, 38, 44]);
        assert_eq!(s.nfe(), 10);
        assert_eq!(allocate(&g, &p, 3, 5).unwrap().nfe(), 8);
        assert_eq!(allocate(&g, &p, 5, 10).unwrap().nfe(), 15);
    }

    #[test]
    fn too_many_steps_is_config_error() {
        let (g, p) = grid50();
        assert!(matches!(allocate(&g, &p, 21, 5), Err(Error::Config(_))));
        assert!(matches!(allocate(&g, &p, 0, 5), Err(Error::Config(_))));
    }

    #[test]
    fn full_schedule_is_the_grid() {
        let (g, p) = grid50();
        let s = full_schedule(&g, &p).unwrap();
        assert_eq!(s.executed(), (0..50).collect::<Vec<_>>());
        assert_eq!(s.taus(&g), g.knots()[..50].to_vec());
    }

    #[test]
    fn uniform_allocation() {
        let (g, p) = grid50();
        let s = allocate_uniform(&g, &p, 8).unwrap();
        assert_eq!(s.executed(), vec![0, 6, 12, 18, 24, 30, 36, 42]);
        assert_eq!(s.slow, vec![0, 6, 12, 18]);
        s.validate(&g).unwrap();
    }

    #[test]
    fn speedups() {
        assert_eq!(speedup(50, 10), 5.0);
        assert_eq!(speedup(50, 8), 6.25);
        assert_eq!(nfe_label(10, 2), "10×2");
    }

    #[test]
    fn schedule_json_shape() {
        let (g, p) = grid50();
        let s = allocate(&g, &p, 3, 5).unwrap();
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"n_steps": 50, "boundary_index": 20, "slow": [0, 6, 12], "fast": [20, 26, 32, 38, 44]})
        );
    }

    #[test]
    fn slow_fast_parsing() {
        assert_eq!(parse_slow_fast("slow5-fast10").unwrap(), (5, 10));
        assert!(parse_slow_fast("fast5-slow3").is_err());
    }

    #[test]
    fn ablation_ids() {
        let ids: Vec<String> = AblationConfig::standard_arms(3, 5).iter().map(|c| c.id()).collect();
        assert_eq!(
            ids,
            [
                "slow3-fast5",
                "slow3+base5",
                "base3+fast5",
                "single-identical8",
                "single-uniform8"
            ]
        );
    }
}
