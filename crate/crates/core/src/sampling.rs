//! First-order Euler integration over a phase schedule with expert routing.

use std::io::Write;
use std::time::Instant;

use crate::error::{Error, Result, Snapshot};
use crate::lora::{effective_weights, route, ExpertSet, LoraAdapter};
use crate::model::VelocityField;
use crate::schedule::{full_schedule, partition, PartitionMode, PhaseSchedule, TimeGrid};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Executed knots followed by the terminal `τ = 1`.
    pub taus: Vec<f64>,
    /// State at each entry of `taus`; the first is the supplied noise.
    pub states: Vec<Tensor>,
    pub nfe: usize,
    pub wall_time_s: f64,
}

impl Trajectory {
    pub fn terminal(&self) -> &Tensor {
        self.states.last().expect("trajectory has at least the initial state")
    }

    /// Bitwise equality of times and states; wall time is ignored.
    pub fn bit_eq(&self, other: &Trajectory) -> bool {
        self.nfe == other.nfe
            && self.taus.len() == other.taus.len()
            && self
                .taus
                .iter()
                .zip(&other.taus)
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.states.iter().zip(&other.states).all(|(a, b)| a.bit_eq(b))
    }

    /// Long-format CSV: `step,tau,sample,x,y`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,tau,sample,x,y")?;
        for (step, (tau, s)) in self.taus.iter().zip(&self.states).enumerate() {
            for r in 0..s.rows() {
                let row = s.row(r);
                writeln!(w, "{step},{tau:?},{r},{:?},{:?}", row[0], row[1])?;
            }
        }
        Ok(())
    }
}

/// `x + (τ_b − τ_a)·v`.
pub fn euler_step(x: &Tensor, tau_a: f64, tau_b: f64, v: &Tensor) -> Result<Tensor> {
    if !(tau_a < tau_b) {
        return Err(Error::Contract(format!(
            "Euler step needs increasing times, got {tau_a} -> {tau_b}"
        )));
    }
    x.add(&v.scale(tau_b - tau_a))
}

/// Integrates `noise` from `τ = 0` to `τ = 1` over the executed knots of
/// `schedule`, evaluating the routed expert at each knot. With `experts ==
/// None` the bare base model runs everywhere.
pub fn generate(
    base: &VelocityField,
    experts: Option<&ExpertSet>,
    schedule: &PhaseSchedule,
    grid: &TimeGrid,
    noise: &Tensor,
    cond: Option<&[usize]>,
) -> Result<Trajectory> {
    schedule.validate(grid)?;
    if !noise.is_finite() {
        return Err(Error::Domain("initial noise is not finite".into()));
    }
    let start = Instant::now();
    let exec = schedule.executed();
    let mut taus: Vec<f64> = exec.iter().map(|&i| grid.knot(i)).collect();
    if taus[0] != 0.0 {
        taus.insert(0, 0.0);
    }
    taus.push(1.0);

    // effective models are built once per distinct adapter
    let mut cache: Vec<(*const LoraAdapter, VelocityField)> = Vec::new();
    let mut x = noise.clone();
    let mut states = vec![x.clone()];
    let mut nfe = 0;
    let mut t_now = 0.0;

    for (pos, &i) in exec.iter().enumerate() {
        let t_knot = grid.knot(i);
        if t_knot > t_now {
            // first executed knot after τ = 0: carry the noise forward unchanged
            states.push(x.clone());
        }
        let t_next = exec.get(pos + 1).map_or(1.0, |&j| grid.knot(j));
        let v = match experts.map(|e| route(e, i, schedule)).transpose()?.flatten() {
            None => base.forward(&x, t_knot, cond)?,
            Some(adapter) => {
                let key = adapter as *const LoraAdapter;
                let idx = match cache.iter().position(|(k, _)| *k == key) {
                    Some(idx) => idx,
                    None => {
                        cache.push((key, effective_weights(base, adapter)?));
                        cache.len() - 1
                    }
                };
                cache[idx].1.forward(&x, t_knot, cond)?
            }
        };
        nfe += 1;
        x = euler_step(&x, t_knot, t_next, &v)?;
        if !x.is_finite() {
            return Err(Error::NumericalAbort {
                step: i,
                detail: format!("sampler state became non-finite at grid step {i}"),
                snapshot: Some(Box::new(Snapshot::Teacher(base.clone()))),
            });
        }
        t_now = t_next;
        states.push(x.clone());
    }
    Ok(Trajectory {
        taus,
        states,
        nfe,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// The bare base model on every step of a uniform `n_steps` grid.
pub fn teacher_sample(
    base: &VelocityField,
    n_steps: usize,
    noise: &Tensor,
    cond: Option<&[usize]>,
) -> Result<Trajectory> {
    let grid = TimeGrid::uniform(n_steps)?;
    let schedule = if n_steps == 1 {
        PhaseSchedule {
            n_steps: 1,
            boundary_index: 1,
            slow: vec![0],
            fast: vec![],
        }
    } else {
        let part = partition(&grid, PartitionMode::IndexFraction(0.5))?;
        full_schedule(&grid, &part)?
    };
    generate(base, None, &schedule, &grid, noise, cond)
}
