//! The ablation harness: distils experts per seed, samples every arm from
//! shared noise and scores it against the 50-step teacher and fresh data.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset2D, DatasetKind, TrainSet};
use crate::error::{Error, Result};
use crate::lora::{ExpertSet, LoraAdapter, LoraSpec};
use crate::metrics::{endpoint_mse, energy_distance, sliced_w2};
use crate::model::VelocityField;
use crate::rng::{normal_tensor, stream, Purpose};
use crate::sampling::generate;
use crate::schedule::{
    allocate, full_schedule, partition, AblationConfig, PartitionMode, PhasePartition, PhaseSchedule, TimeGrid,
};
use crate::svg;
use crate::tensor::Tensor;
use crate::training::{distill_expert, Phase, TrainConfig};

pub const CSV_HEADER: &str = "config,seed,nfe,endpoint_mse,energy_distance,sliced_w2,wall_time_s";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: String,
    pub seed: u64,
    pub nfe: usize,
    /// Against the shared-noise 50-step teacher.
    pub endpoint_mse: f64,
    /// Against fresh data draws.
    pub energy_distance: f64,
    /// Against fresh data draws.
    pub sliced_w2: f64,
    pub wall_time_s: f64,
}

impl MetricReport {
    /// Equality of every deterministic cell; wall time is excluded.
    pub fn cells_bit_eq(&self, other: &MetricReport) -> bool {
        self.config == other.config
            && self.seed == other.seed
            && self.nfe == other.nfe
            && self.endpoint_mse.to_bits() == other.endpoint_mse.to_bits()
            && self.energy_distance.to_bits() == other.energy_distance.to_bits()
            && self.sliced_w2.to_bits() == other.sliced_w2.to_bits()
    }
}

pub fn write_reports_csv<W: Write>(mut w: W, rows: &[MetricReport]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:?},{:?},{:?},{:?}",
            r.config, r.seed, r.nfe, r.endpoint_mse, r.energy_distance, r.sliced_w2, r.wall_time_s
        )?;
    }
    Ok(())
}

pub fn read_reports_csv(text: &str) -> Result<Vec<MetricReport>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::Config(format!("metric CSV must start with '{CSV_HEADER}'")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let bad = || Error::Config(format!("bad metric row '{line}'"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(MetricReport {
                config: f[0].to_string(),
                seed: f[1].parse().map_err(|_| bad())?,
                nfe: f[2].parse().map_err(|_| bad())?,
                endpoint_mse: num(f[3])?,
                energy_distance: num(f[4])?,
                sliced_w2: num(f[5])?,
                wall_time_s: num(f[6])?,
            })
        })
        .collect()
}

/// What to run. Arms other than the main configs are switched on by
/// non-empty lists or flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationPlan {
    pub seeds: Vec<u64>,
    pub configs: Vec<AblationConfig>,
    /// Target distribution; training subsets and reference draws use each
    /// run seed with this kind.
    pub dataset: DatasetKind,
    pub train: TrainConfig,
    pub lora: LoraSpec,
    pub partition: PartitionMode,
    pub grid_steps: usize,
    pub n_generated: usize,
    pub n_reference: usize,
    pub n_proj: usize,
    /// Training-set size for the main and timestep arms.
    pub train_samples: usize,
    /// `(k_slow, k_fast)` schedules for the timestep arm.
    #[serde(default)]
    pub timestep_arm: Vec<(usize, usize)>,
    /// Larger training-set sizes for the data arm, evaluated on `data_arm_schedule`.
    #[serde(default)]
    pub data_arm: Vec<usize>,
    #[serde(default = "default_data_schedule")]
    pub data_arm_schedule: (usize, usize),
    /// Distil on standard-normal "data" and evaluate on `data_arm_schedule`.
    #[serde(default)]
    pub noise_control: bool,
    /// Also score the bare base on every timestep-arm schedule.
    #[serde(default)]
    pub bare_rows: bool,
}

fn default_data_schedule() -> (usize, usize) {
    (5, 5)
}

impl AblationPlan {
    /// The five Slow3/Fast5 arms only.
    pub fn standard(dataset: DatasetKind, seeds: Vec<u64>) -> Self {
        Self {
            seeds,
            configs: AblationConfig::standard_arms(3, 5),
            dataset,
            train: TrainConfig::distill_default(),
            lora: LoraSpec::default(),
            partition: PartitionMode::default(),
            grid_steps: 50,
            n_generated: 2048,
            n_reference: 4096,
            n_proj: 64,
            train_samples: 1,
            timestep_arm: Vec::new(),
            data_arm: Vec::new(),
            data_arm_schedule: default_data_schedule(),
            noise_control: false,
            bare_rows: false,
        }
    }

    /// Every arm.
    pub fn full(dataset: DatasetKind, seeds: Vec<u64>) -> Self {
        Self {
            timestep_arm: vec![(3, 5), (5, 5), (5, 10)],
            data_arm: vec![10, 100],
            noise_control: true,
            bare_rows: true,
            ..Self::standard(dataset, seeds)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("ablation needs at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("ablation seeds must be distinct".into()));
        }
        if self.n_generated < 2 || self.n_reference < 2 || self.n_proj == 0 || self.train_samples == 0 {
            return Err(Error::Config(
                "n_generated and n_reference need at least 2, n_proj and train_samples at least 1".into(),
            ));
        }
        if self.data_arm.contains(&0) {
            return Err(Error::Config("data-arm sizes must be positive".into()));
        }
        for c in &self.configs {
            c.validate()?;
        }
        self.train.validate()
    }
}

/// Shared-noise evaluation inputs for one seed.
#[derive(Clone, Debug)]
pub struct EvalContext {
    pub seed: u64,
    pub grid: TimeGrid,
    pub partition: PhasePartition,
    pub noise: Tensor,
    pub cond: Option<Vec<usize>>,
    pub teacher_terminal: Tensor,
    pub reference: Tensor,
    pub n_proj: usize,
}

impl EvalContext {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        base: &VelocityField,
        dataset: DatasetKind,
        seed: u64,
        grid_steps: usize,
        partition_mode: PartitionMode,
        n_generated: usize,
        n_reference: usize,
        n_proj: usize,
    ) -> Result<Self> {
        let grid = TimeGrid::uniform(grid_steps)?;
        let part = partition(&grid, partition_mode)?;
        let ds = Dataset2D::new(dataset, seed);
        let (reference, _) = ds.sampler(Purpose::Reference, 0).next_batch(n_reference)?;
        let noise = normal_tensor(
            &mut stream(seed, Purpose::EvalNoise, 0),
            n_generated,
            base.arch().data_dim,
            1.0,
        );
        // labels for conditional models follow the data's class frequencies
        let cond = base.arch().num_classes.map(|_| {
            let (_, labels) = ds
                .sampler(Purpose::Reference, 1)
                .next_batch(n_generated)
                .expect("n_generated > 0");
            labels
        });
        let teacher = generate(
            base,
            None,
            &full_schedule(&grid, &part)?,
            &grid,
            &noise,
            cond.as_deref(),
        )?;
        Ok(Self {
            seed,
            grid,
            partition: part,
            noise,
            cond,
            teacher_terminal: teacher.terminal().clone(),
            reference,
            n_proj,
        })
    }

    /// Samples `experts` (or the bare base) on `schedule` and scores it.
    pub fn evaluate(
        &self,
        config: &str,
        base: &VelocityField,
        experts: Option<&ExpertSet>,
        schedule: &PhaseSchedule,
    ) -> Result<(MetricReport, Tensor)> {
        let traj = generate(base, experts, schedule, &self.grid, &self.noise, self.cond.as_deref())?;
        let out = traj.terminal().clone();
        let report = MetricReport {
            config: config.to_string(),
            seed: self.seed,
            nfe: traj.nfe,
            endpoint_mse: endpoint_mse(&out, &self.teacher_terminal)?,
            energy_distance: energy_distance(&out, &self.reference)?,
            sliced_w2: sliced_w2(&out, &self.reference, self.n_proj, self.seed)?,
            wall_time_s: traj.wall_time_s,
        };
        Ok((report, out))
    }

    /// The 50-step teacher itself, scored against the data.
    pub fn teacher_report(&self) -> Result<MetricReport> {
        Ok(MetricReport {
            config: format!("teacher{}", self.grid.n_steps()),
            seed: self.seed,
            nfe: self.grid.n_steps(),
            endpoint_mse: 0.0,
            energy_distance: energy_distance(&self.teacher_terminal, &self.reference)?,
            sliced_w2: sliced_w2(&self.teacher_terminal, &self.reference, self.n_proj, self.seed)?,
            wall_time_s: 0.0,
        })
    }
}

/// Slow, fast and whole-trajectory adapters distilled from one training set.
#[derive(Clone, Debug)]
pub struct Experts {
    pub slow: LoraAdapter,
    pub fast: LoraAdapter,
    pub full: Option<LoraAdapter>,
}

impl Experts {
    #[allow(clippy::too_many_arguments)]
    pub fn distill(
        base: &VelocityField,
        partition: &PhasePartition,
        trainset: &TrainSet,
        cfg: &TrainConfig,
        lora: &LoraSpec,
        seed: u64,
        with_full: bool,
    ) -> Result<Self> {
        let train = |phase| distill_expert(base, phase, partition, trainset, cfg, lora, seed).map(|r| r.adapter);
        Ok(Self {
            slow: train(Phase::Slow)?,
            fast: train(Phase::Fast)?,
            full: if with_full { Some(train(Phase::Full)?) } else { None },
        })
    }

    pub fn slow_fast(&self) -> Result<ExpertSet> {
        ExpertSet::slow_fast(self.slow.clone(), self.fast.clone())
    }

    /// The expert set an ablation arm routes through.
    pub fn for_config(&self, config: &AblationConfig) -> Result<ExpertSet> {
        let full = || {
            self.full
                .clone()
                .ok_or_else(|| Error::Contract("single-adapter arm needs a whole-trajectory adapter".into()))
        };
        match config {
            AblationConfig::SlowFast { .. } => self.slow_fast(),
            AblationConfig::SlowPlusBase { .. } => Ok(ExpertSet::slow_only(self.slow.clone())),
            AblationConfig::BasePlusFast { .. } => Ok(ExpertSet::fast_only(self.fast.clone())),
            AblationConfig::SingleIdentical { .. } | AblationConfig::SingleUniform { .. } => {
                Ok(ExpertSet::single(full()?))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmFailure {
    pub arm: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct AblationResult {
    /// One row per `(config, seed)`, configs in plan order, seeds ascending.
    pub main: Vec<MetricReport>,
    /// Teacher, timestep, data, bare-base and noise-control rows.
    pub extra: Vec<MetricReport>,
    pub failures: Vec<ArmFailure>,
    /// Terminal samples for the lowest seed, per arm, teacher first.
    pub scatter: Vec<(String, Tensor)>,
}

pub fn slow_fast_id(k_slow: usize, k_fast: usize) -> String {
    format!("slow{k_slow}-fast{k_fast}")
}

pub fn data_arm_id(samples: usize, k_slow: usize, k_fast: usize) -> String {
    format!("data{samples}-{}", slow_fast_id(k_slow, k_fast))
}

pub fn bare_id(k_slow: usize, k_fast: usize) -> String {
    format!("bare-{}", slow_fast_id(k_slow, k_fast))
}

pub fn noise_control_id(k_slow: usize, k_fast: usize) -> String {
    format!("noise-{}", slow_fast_id(k_slow, k_fast))
}

#[derive(Default)]
struct SeedOutput {
    main: Vec<MetricReport>,
    extra: Vec<MetricReport>,
    failures: Vec<ArmFailure>,
    scatter: Vec<(String, Tensor)>,
}

impl SeedOutput {
    fn record<T>(&mut self, arm: &str, seed: u64, r: Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.failures.push(ArmFailure {
                    arm: arm.to_string(),
                    seed,
                    error: e.to_string(),
                });
                None
            }
        }
    }
}

fn run_seed(base: &VelocityField, plan: &AblationPlan, seed: u64, keep_samples: bool) -> SeedOutput {
    let mut out = SeedOutput::default();
    let ctx = EvalContext::new(
        base,
        plan.dataset,
        seed,
        plan.grid_steps,
        plan.partition,
        plan.n_generated,
        plan.n_reference,
        plan.n_proj,
    );
    let Some(ctx) = out.record("setup", seed, ctx) else {
        return out;
    };
    if let Some(r) = out.record("teacher", seed, ctx.teacher_report()) {
        out.extra.push(r);
    }
    if keep_samples {
        out.scatter
            .push((format!("teacher{}", plan.grid_steps), ctx.teacher_terminal.clone()));
    }
    let ds = Dataset2D::new(plan.dataset, seed);
    let need_full = plan.configs.iter().any(|c| {
        matches!(
            c,
            AblationConfig::SingleIdentical { .. } | AblationConfig::SingleUniform { .. }
        )
    });
    let trained = TrainSet::subset(&ds, plan.train_samples)
        .and_then(|ts| Experts::distill(base, &ctx.partition, &ts, &plan.train, &plan.lora, seed, need_full));
    let experts = out.record("distill", seed, trained);

    let eval =
        |out: &mut SeedOutput, id: String, experts: Option<&ExpertSet>, schedule: Result<PhaseSchedule>, main: bool| {
            let r = schedule.and_then(|s| ctx.evaluate(&id, base, experts, &s));
            if let Some((report, samples)) = out.record(&id, seed, r) {
                if keep_samples {
                    out.scatter.push((id, samples));
                }
                if main {
                    out.main.push(report);
                } else {
                    out.extra.push(report);
                }
            }
        };

    if let Some(experts) = &experts {
        for config in &plan.configs {
            match experts.for_config(config) {
                Ok(set) => eval(
                    &mut out,
                    config.id(),
                    Some(&set),
                    config.schedule(&ctx.grid, &ctx.partition),
                    true,
                ),
                Err(e) => {
                    out.record::<()>(&config.id(), seed, Err(e));
                }
            }
        }
        if !plan.timestep_arm.is_empty() {
            match experts.slow_fast() {
                Ok(set) => {
                    for &(s, f) in &plan.timestep_arm {
                        // already scored as a main arm
                        if plan
                            .configs
                            .contains(&AblationConfig::SlowFast { k_slow: s, k_fast: f })
                        {
                            continue;
                        }
                        eval(
                            &mut out,
                            slow_fast_id(s, f),
                            Some(&set),
                            allocate(&ctx.grid, &ctx.partition, s, f),
                            false,
                        );
                    }
                }
                Err(e) => {
                    out.record::<()>("timestep", seed, Err(e));
                }
            }
        }
    }
    if plan.bare_rows {
        for &(s, f) in &plan.timestep_arm {
            eval(
                &mut out,
                bare_id(s, f),
                None,
                allocate(&ctx.grid, &ctx.partition, s, f),
                false,
            );
        }
    }

    let (ds_slow, ds_fast) = plan.data_arm_schedule;
    let scaled = |k: usize| TrainConfig {
        steps: plan.train.steps * k,
        ..plan.train.clone()
    };
    for &k in &plan.data_arm {
        let id = data_arm_id(k, ds_slow, ds_fast);
        let cfg = scaled(k);
        let set = TrainSet::subset(&ds, k)
            .and_then(|ts| Experts::distill(base, &ctx.partition, &ts, &cfg, &plan.lora, seed, false))
            .and_then(|e| e.slow_fast());
        if let Some(set) = out.record(&id, seed, set) {
            eval(
                &mut out,
                id,
                Some(&set),
                allocate(&ctx.grid, &ctx.partition, ds_slow, ds_fast),
                false,
            );
        }
    }
    if plan.noise_control {
        let id = noise_control_id(ds_slow, ds_fast);
        let noise_ds = Dataset2D::new(DatasetKind::noise(), seed);
        let set = TrainSet::subset(&noise_ds, plan.train_samples)
            .and_then(|ts| Experts::distill(base, &ctx.partition, &ts, &plan.train, &plan.lora, seed, false))
            .and_then(|e| e.slow_fast());
        if let Some(set) = out.record(&id, seed, set) {
            eval(
                &mut out,
                id,
                Some(&set),
                allocate(&ctx.grid, &ctx.partition, ds_slow, ds_fast),
                false,
            );
        }
    }
    out
}

/// Runs every arm for every seed in parallel. Row order depends only on the
/// plan, never on scheduling.
pub fn run_ablation(base: &VelocityField, plan: &AblationPlan) -> Result<AblationResult> {
    plan.validate()?;
    let lowest = *plan.seeds.iter().min().expect("validated non-empty");
    let mut per_seed: Vec<(u64, SeedOutput)> = plan
        .seeds
        .par_iter()
        .map(|&seed| (seed, run_seed(base, plan, seed, seed == lowest)))
        .collect();
    per_seed.sort_by_key(|(seed, _)| *seed);

    let mut result = AblationResult::default();
    for (_, out) in per_seed {
        result.main.extend(out.main);
        result.extra.extend(out.extra);
        result.failures.extend(out.failures);
        result.scatter.extend(out.scatter);
    }
    let order: Vec<String> = plan.configs.iter().map(AblationConfig::id).collect();
    let rank = |id: &str| order.iter().position(|o| o == id).unwrap_or(usize::MAX);
    result
        .main
        .sort_by(|a, b| rank(&a.config).cmp(&rank(&b.config)).then(a.seed.cmp(&b.seed)));
    Ok(result)
}

impl AblationResult {
    /// Rows for `config`, in seed order.
    pub fn rows<'a>(&'a self, config: &'a str) -> impl Iterator<Item = &'a MetricReport> + 'a {
        self.main.iter().chain(&self.extra).filter(move |r| r.config == config)
    }

    pub fn cells_bit_eq(&self, other: &AblationResult) -> bool {
        let same = |a: &[MetricReport], b: &[MetricReport]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.cells_bit_eq(y))
        };
        same(&self.main, &other.main) && same(&self.extra, &other.extra)
    }

    /// Mean and sample standard deviation per config, in first-seen order.
    pub fn summary(rows: &[MetricReport]) -> Vec<ConfigSummary> {
        let mut ids: Vec<&str> = Vec::new();
        for r in rows {
            if !ids.contains(&r.config.as_str()) {
                ids.push(&r.config);
            }
        }
        ids.into_iter()
            .map(|id| {
                let group: Vec<&MetricReport> = rows.iter().filter(|r| r.config == id).collect();
                let stat = |f: fn(&MetricReport) -> f64| mean_std(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
                ConfigSummary {
                    config: id.to_string(),
                    nfe: group[0].nfe,
                    seeds: group.len(),
                    endpoint_mse: stat(|r| r.endpoint_mse),
                    energy_distance: stat(|r| r.energy_distance),
                    sliced_w2: stat(|r| r.sliced_w2),
                }
            })
            .collect()
    }

    pub fn markdown_table(rows: &[MetricReport]) -> String {
        let mut s = String::from(
            "| config | NFE | seeds | endpoint MSE | energy distance | sliced W2 |\n|---|---|---|---|---|---|\n",
        );
        for c in Self::summary(rows) {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.5} ± {:.5} | {:.5} ± {:.5} | {:.5} ± {:.5} |",
                c.config,
                c.nfe,
                c.seeds,
                c.endpoint_mse.0,
                c.endpoint_mse.1,
                c.energy_distance.0,
                c.energy_distance.1,
                c.sliced_w2.0,
                c.sliced_w2.1
            );
        }
        s
    }

    pub fn bar_svg(&self) -> String {
        let bars: Vec<(String, f64)> = Self::summary(&self.main)
            .into_iter()
            .map(|c| (c.config, c.endpoint_mse.0))
            .collect();
        svg::bar_chart("endpoint MSE vs 50-step teacher (mean over seeds)", &bars)
    }

    /// One scatter per arm: arm samples over teacher samples.
    pub fn scatter_svgs(&self) -> Vec<(String, String)> {
        let Some((teacher_id, teacher)) = self.scatter.first() else {
            return Vec::new();
        };
        self.scatter[1..]
            .iter()
            .map(|(id, pts)| {
                let title = format!("{id} vs {teacher_id}");
                (
                    id.clone(),
                    svg::scatter(&title, &[(teacher_id.as_str(), teacher), (id.as_str(), pts)]),
                )
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigSummary {
    pub config: String,
    pub nfe: usize,
    pub seeds: usize,
    /// `(mean, std)`
    pub endpoint_mse: (f64, f64),
    pub energy_distance: (f64, f64),
    pub sliced_w2: (f64, f64),
}

/// Mean and sample standard deviation (`n − 1`); the deviation is 0 for a single value.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    fn tiny_plan(seeds: Vec<u64>) -> AblationPlan {
        AblationPlan {
            train: TrainConfig {
                steps: 3,
                ..TrainConfig::distill_default()
            },
            grid_steps: 20,
            n_generated: 16,
            n_reference: 32,
            n_proj: 4,
            timestep_arm: vec![(3, 5)],
            data_arm: vec![2],
            noise_control: true,
            bare_rows: true,
            ..AblationPlan::standard(DatasetKind::EightGaussians, seeds)
        }
    }

    fn tiny_base() -> VelocityField {
        let arch = Architecture {
            hidden: vec![16],
            time_embed_dim: 8,
            ..Architecture::default()
        };
        VelocityField::init(arch, &mut stream(0, Purpose::Init, 0)).unwrap()
    }

    #[test]
    fn table_has_every_config_for_every_seed() {
        let base = tiny_base();
        let res = run_ablation(&base, &tiny_plan(vec![3, 1])).unwrap();
        assert!(res.failures.is_empty(), "{:?}", res.failures);
        assert_eq!(res.main.len(), 10);
        assert_eq!(res.main[0].config, "slow3-fast5");
        assert_eq!((res.main[0].seed, res.main[1].seed), (1, 3));
        assert_eq!(res.main.last().unwrap().config, "single-uniform8");
        assert!(res.main.iter().all(|r| r.nfe == 8));
        // teacher, bare, data and noise per seed; the timestep arm repeats a main arm
        assert_eq!(res.extra.len(), 8);
        assert_eq!(res.rows("slow3-fast5").count(), 2);
        assert!(res.rows("bare-slow3-fast5").count() == 2);
        assert_eq!(res.scatter[0].0, "teacher20");
    }

    #[test]
    fn rerun_is_cell_identical_and_order_free() {
        let base = tiny_base();
        let a = run_ablation(&base, &tiny_plan(vec![2, 5])).unwrap();
        let b = run_ablation(&base, &tiny_plan(vec![5, 2])).unwrap();
        assert!(a.cells_bit_eq(&b));
    }

    #[test]
    fn failing_arm_is_recorded_and_the_rest_runs() {
        let base = tiny_base();
        let mut plan = tiny_plan(vec![1]);
        // 30 fast steps cannot fit the 12-step fast region of a 20-step grid
        plan.timestep_arm = vec![(3, 5), (3, 30)];
        plan.bare_rows = false;
        let res = run_ablation(&base, &plan).unwrap();
        assert_eq!(res.failures.len(), 1);
        assert_eq!(res.failures[0].arm, "slow3-fast30");
        assert_eq!(res.main.len(), 5);
    }

    #[test]
    fn csv_round_trip_and_table() {
        let rows = vec![
            MetricReport {
                config: "a".into(),
                seed: 1,
                nfe: 8,
                endpoint_mse: 0.1,
                energy_distance: 0.2,
                sliced_w2: 0.3,
                wall_time_s: 0.01,
            },
            MetricReport {
                config: "a".into(),
                seed: 2,
                nfe: 8,
                endpoint_mse: 0.3,
                energy_distance: 0.2,
                sliced_w2: 0.3,
                wall_time_s: 0.01,
            },
        ];
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(read_reports_csv(&text).unwrap(), rows);
        let s = AblationResult::summary(&rows);
        assert!((s[0].endpoint_mse.0 - 0.2).abs() < 1e-15);
        assert!((s[0].endpoint_mse.1 - 0.02f64.sqrt()).abs() < 1e-15);
        assert!(AblationResult::markdown_table(&rows).contains("| a | 8 | 2 |"));
    }

    #[test]
    fn plan_validation() {
        let mut plan = tiny_plan(vec![1, 1]);
        assert!(plan.validate().is_err());
        plan.seeds = vec![1];
        assert!(plan.validate().is_ok());
        plan.n_reference = 1;
        assert!(plan.validate().is_err());
    }
}
