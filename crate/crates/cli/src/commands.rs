use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use flowlab::ablation::{
    read_reports_csv, run_ablation, slow_fast_id, write_reports_csv, AblationPlan, AblationResult, EvalContext,
    MetricReport, CSV_HEADER,
};
use flowlab::checkpoint::{load_adapter, load_teacher, save_adapter, save_teacher, write_atomic, SaveInfo};
use flowlab::data::{Dataset2D, DatasetKind, TrainSet};
use flowlab::error::Snapshot;
use flowlab::lora::{ExpertSet, LoraAdapter, LoraSpec};
use flowlab::manifest::{hash_file, BaselineManifest, RunManifest};
use flowlab::model::{Architecture, VelocityField};
use flowlab::rng::{normal_tensor, stream, Purpose};
use flowlab::sampling::generate;
use flowlab::schedule::{
    allocate, allocate_uniform, full_schedule, parse_slow_fast, partition, PartitionMode, PhasePartition,
    PhaseSchedule, TimeGrid,
};
use flowlab::training::{distill_expert, train_teacher, write_loss_csv, Phase, TrainConfig};
use flowlab::{svg, Error};

use crate::{
    AblateArgs, ArmsArg, BaselineArgs, Command, DistillArgs, EvalArgs, ExpertPaths, PhaseArg, RerunArgs, SampleArgs,
    TrainTeacherArgs,
};

const TEACHER_ED_BOUND: f64 = 0.05;
const DISTILL_TIME_BOUND_S: f64 = 10.0;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// Bad flags, unreadable inputs or mismatched input hashes.
    Usage(String),
    /// A rerun produced different artifacts.
    Mismatch(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(s) | CliError::Mismatch(s) => f.write_str(s),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(Error::Config(_) | Error::Load(_) | Error::AdapterCompat(_) | Error::Condition(_)) => 2,
            CliError::Core(Error::NumericalAbort { .. }) => 3,
            CliError::Core(_) | CliError::Mismatch(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn run(command: &Command, argv: Vec<String>) -> CliResult<ExitCode> {
    match command {
        Command::TrainTeacher(a) => guarded(&a.out, || train_teacher_cmd(command, a, argv)),
        Command::Distill(a) => guarded(&a.out, || distill_cmd(command, a, argv)),
        Command::Sample(a) => guarded(&a.out, || sample_cmd(command, a, argv)),
        Command::Eval(a) => guarded(&a.out, || eval_cmd(command, a, argv)),
        Command::Ablate(a) => guarded(&a.out, || ablate_cmd(command, a, argv)),
        Command::BaselineCalibrate(a) => baseline_cmd(a).map(|_| ExitCode::SUCCESS),
        Command::Rerun(a) => rerun_cmd(a, argv),
    }
}

/// Runs `f`; on a numerical abort, saves the carried parameters as
/// `snapshot.ckpt` in `out` and reports the path.
fn guarded(out: &Path, f: impl FnOnce() -> CliResult<()>) -> CliResult<ExitCode> {
    match f() {
        Ok(()) => Ok(ExitCode::SUCCESS),
        Err(CliError::Core(Error::NumericalAbort { step, detail, snapshot })) => {
            if let Some(snap) = &snapshot {
                let path = out.join("snapshot.ckpt");
                let info = SaveInfo::default();
                let saved = match snap.as_ref() {
                    Snapshot::Teacher(m) => save_teacher(&path, m, &info),
                    Snapshot::Adapter(a) => save_adapter(&path, a, &info),
                };
                match saved {
                    Ok(()) => eprintln!("snapshot: {}", path.display()),
                    Err(e) => eprintln!("could not write snapshot {}: {e}", path.display()),
                }
            }
            Err(CliError::Core(Error::NumericalAbort { step, detail, snapshot }))
        }
        Err(e) => Err(e),
    }
}

fn dataset(s: &str) -> CliResult<DatasetKind> {
    s.parse::<DatasetKind>().map_err(CliError::from)
}

fn read_input<T>(path: &Path, load: impl FnOnce(&Path) -> flowlab::Result<T>) -> CliResult<T> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("{}: no such file", path.display())));
    }
    Ok(load(path)?)
}

fn teacher_from(path: &Path) -> CliResult<VelocityField> {
    read_input(path, load_teacher).map(|(m, _)| m)
}

fn adapter_from(path: &Path, base: &VelocityField) -> CliResult<LoraAdapter> {
    let (a, _) = read_input(path, load_adapter)?;
    a.check_compatible(base)?;
    Ok(a)
}

fn train_config(path: Option<&PathBuf>, default: TrainConfig) -> CliResult<TrainConfig> {
    match path {
        Some(p) => read_input(p, TrainConfig::from_file),
        None => Ok(default),
    }
}

fn invocation(command: &Command) -> CliResult<serde_json::Value> {
    serde_json::to_value(command).map_err(|e| CliError::Usage(e.to_string()))
}

/// Records `path` under its name relative to `out`.
fn add_artifact(m: &mut RunManifest, out: &Path, path: &Path) -> CliResult<()> {
    let key = path.strip_prefix(out).unwrap_or(path).display().to_string();
    m.artifacts.insert(key, hash_file(path)?);
    Ok(())
}

fn write_with<F>(path: &Path, f: F) -> CliResult<()>
where
    F: FnOnce(&mut Vec<u8>) -> flowlab::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_atomic(path, &buf)?;
    Ok(())
}

fn train_teacher_cmd(command: &Command, a: &TrainTeacherArgs, argv: Vec<String>) -> CliResult<()> {
    let kind = dataset(&a.dataset)?;
    let mut cfg = train_config(a.config.as_ref(), TrainConfig::teacher_default())?;
    if let Some(steps) = a.steps {
        cfg.steps = steps;
    }
    cfg.validate()?;
    let arch = Architecture {
        num_classes: a.conditional.then(|| kind.num_classes()),
        ..Architecture::default()
    };
    let init = VelocityField::init(arch, &mut stream(a.seed, Purpose::Init, 0))?;
    let run = train_teacher(init, &Dataset2D::new(kind, a.seed), &cfg, a.seed)?;

    fs::create_dir_all(&a.out)?;
    let ckpt = a.out.join("teacher.ckpt");
    let info = SaveInfo {
        seed: a.seed,
        train_config: Some(cfg.clone()),
        phase: None,
    };
    save_teacher(&ckpt, &run.model, &info)?;
    let losses = a.out.join("teacher_loss.csv");
    write_with(&losses, |w| write_loss_csv(w, &run.losses))?;

    let mut m = RunManifest::new("train-teacher", argv, invocation(command)?)?;
    m.seeds.push(a.seed);
    add_artifact(&mut m, &a.out, &ckpt)?;
    add_artifact(&mut m, &a.out, &losses)?;
    let tail = &run.losses[run.losses.len().saturating_sub(100)..];
    m.metrics.insert(
        "final_loss_mean100".into(),
        tail.iter().sum::<f64>() / tail.len() as f64,
    );
    m.metrics.insert("steps".into(), cfg.steps as f64);
    m.write(&a.out.join("manifest.json"))?;
    println!("{}", ckpt.display());
    Ok(())
}

fn grid_partition(grid_steps: usize) -> CliResult<(TimeGrid, PhasePartition)> {
    let grid = TimeGrid::uniform(grid_steps)?;
    let part = partition(&grid, PartitionMode::default())?;
    Ok((grid, part))
}

fn distill_cmd(command: &Command, a: &DistillArgs, argv: Vec<String>) -> CliResult<()> {
    let base = teacher_from(&a.teacher)?;
    let kind = dataset(&a.dataset)?;
    let mut cfg = train_config(a.config.as_ref(), TrainConfig::distill_default())?;
    cfg.steps = match a.steps {
        Some(s) => s,
        None => cfg.steps * a.samples.max(1),
    };
    cfg.validate()?;
    let mut lora = LoraSpec::default();
    if let Some(r) = a.rank {
        lora.rank = r;
    }
    if let Some(al) = a.alpha {
        lora.alpha = al;
    }
    if let Some(init) = &a.lora_init {
        lora.init = init.parse()?;
    }
    let (_, part) = grid_partition(50)?;
    let trainset = TrainSet::subset(&Dataset2D::new(kind, a.seed), a.samples)?;
    let phases: &[Phase] = match a.phase {
        PhaseArg::Slow => &[Phase::Slow],
        PhaseArg::Fast => &[Phase::Fast],
        PhaseArg::Full => &[Phase::Full],
        PhaseArg::Both => &[Phase::Slow, Phase::Fast],
    };

    fs::create_dir_all(&a.out)?;
    let mut m = RunManifest::new("distill", argv, invocation(command)?)?;
    m.seeds.push(a.seed);
    m.add_input(&a.teacher)?;
    let ts_path = a.out.join("trainset.csv");
    write_with(&ts_path, |w| trainset.write_csv(w))?;
    add_artifact(&mut m, &a.out, &ts_path)?;
    for &phase in phases {
        let name = match phase {
            Phase::Slow => "slow",
            Phase::Fast => "fast",
            Phase::Full => "full",
        };
        let start = Instant::now();
        let run = distill_expert(&base, phase, &part, &trainset, &cfg, &lora, a.seed)?;
        let secs = start.elapsed().as_secs_f64();
        let ckpt = a.out.join(format!("{name}.ckpt"));
        let info = SaveInfo {
            seed: a.seed,
            train_config: Some(cfg.clone()),
            phase: Some(phase),
        };
        save_adapter(&ckpt, &run.adapter, &info)?;
        let losses = a.out.join(format!("{name}_loss.csv"));
        write_with(&losses, |w| write_loss_csv(w, &run.losses))?;
        add_artifact(&mut m, &a.out, &ckpt)?;
        add_artifact(&mut m, &a.out, &losses)?;
        m.metrics.insert(format!("{name}_steps"), run.losses.len() as f64);
        m.metrics
            .insert(format!("{name}_final_loss"), *run.losses.last().unwrap_or(&f64::NAN));
        m.metrics.insert(format!("{name}_wall_time_s"), secs);
        println!("{}", ckpt.display());
    }
    m.write(&a.out.join("manifest.json"))?;
    Ok(())
}

/// Parses `slowK-fastM`, `uniformK` or `full`.
fn schedule_from(spec: &str, grid: &TimeGrid, part: &PhasePartition) -> CliResult<PhaseSchedule> {
    if spec == "full" {
        return Ok(full_schedule(grid, part)?);
    }
    if let Some(k) = spec.strip_prefix("uniform") {
        let k = k
            .parse()
            .map_err(|_| CliError::Usage(format!("schedule '{spec}': expected uniformK")))?;
        return Ok(allocate_uniform(grid, part, k)?);
    }
    let (s, f) = parse_slow_fast(spec)?;
    Ok(allocate(grid, part, s, f)?)
}

fn expert_set(p: &ExpertPaths, base: &VelocityField) -> CliResult<Option<ExpertSet>> {
    let load = |path: &Option<PathBuf>| path.as_deref().map(|q| adapter_from(q, base)).transpose();
    let (slow, fast, single) = (load(&p.slow)?, load(&p.fast)?, load(&p.single)?);
    Ok(match (slow, fast, single) {
        (_, _, Some(one)) => Some(ExpertSet::single(one)),
        (Some(s), Some(f), None) => Some(ExpertSet::slow_fast(s, f)?),
        (Some(s), None, None) => Some(ExpertSet::slow_only(s)),
        (None, Some(f), None) => Some(ExpertSet::fast_only(f)),
        (None, None, None) => None,
    })
}

fn add_expert_inputs(m: &mut RunManifest, p: &ExpertPaths) -> CliResult<()> {
    m.add_input(&p.teacher)?;
    for path in [&p.slow, &p.fast, &p.single].into_iter().flatten() {
        m.add_input(path)?;
    }
    Ok(())
}

fn sample_cmd(command: &Command, a: &SampleArgs, argv: Vec<String>) -> CliResult<()> {
    let base = teacher_from(&a.experts.teacher)?;
    let experts = expert_set(&a.experts, &base)?;
    let (grid, part) = grid_partition(a.experts.grid_steps)?;
    let schedule = schedule_from(&a.experts.schedule, &grid, &part)?;
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let noise = normal_tensor(
        &mut stream(a.seed, Purpose::EvalNoise, 0),
        a.n,
        base.arch().data_dim,
        1.0,
    );
    // conditional teachers cycle through their classes
    let cond: Option<Vec<usize>> = base.arch().num_classes.map(|k| (0..a.n).map(|i| i % k).collect());
    let traj = generate(&base, experts.as_ref(), &schedule, &grid, &noise, cond.as_deref())?;

    fs::create_dir_all(&a.out)?;
    let points = a.out.join("samples.csv");
    write_with(&points, |w| {
        use std::io::Write;
        writeln!(w, "x,y")?;
        let t = traj.terminal();
        for r in 0..t.rows() {
            writeln!(w, "{:?},{:?}", t.get(r, 0), t.get(r, 1))?;
        }
        Ok(())
    })?;
    let trajectory = a.out.join("trajectory.csv");
    write_with(&trajectory, |w| traj.write_csv(w))?;
    let plot = a.out.join("samples.svg");
    let title = format!("{} (NFE {})", a.experts.schedule, traj.nfe);
    write_atomic(
        &plot,
        svg::scatter(&title, &[(a.experts.schedule.as_str(), traj.terminal())]).as_bytes(),
    )?;

    let mut m = RunManifest::new("sample", argv, invocation(command)?)?;
    m.seeds.push(a.seed);
    add_expert_inputs(&mut m, &a.experts)?;
    for p in [&points, &trajectory, &plot] {
        add_artifact(&mut m, &a.out, p)?;
    }
    m.nfe = Some(traj.nfe);
    m.schedule = Some(schedule);
    m.metrics.insert("wall_time_s".into(), traj.wall_time_s);
    m.write(&a.out.join("manifest.json"))?;
    println!("NFE {} in {:.4}s -> {}", traj.nfe, traj.wall_time_s, points.display());
    Ok(())
}

fn eval_cmd(command: &Command, a: &EvalArgs, argv: Vec<String>) -> CliResult<()> {
    let base = teacher_from(&a.experts.teacher)?;
    let experts = expert_set(&a.experts, &base)?;
    let kind = dataset(&a.dataset)?;
    let ctx = EvalContext::new(
        &base,
        kind,
        a.seed,
        a.experts.grid_steps,
        PartitionMode::default(),
        a.n,
        a.n_reference,
        a.n_proj,
    )?;
    let schedule = schedule_from(&a.experts.schedule, &ctx.grid, &ctx.partition)?;
    let label = a.label.clone().unwrap_or_else(|| a.experts.schedule.clone());
    let (report, _) = ctx.evaluate(&label, &base, experts.as_ref(), &schedule)?;

    fs::create_dir_all(&a.out)?;
    let csv = a.out.join("metrics.csv");
    write_with(&csv, |w| write_reports_csv(w, std::slice::from_ref(&report)))?;
    let mut m = RunManifest::new("eval", argv, invocation(command)?)?;
    m.seeds.push(a.seed);
    add_expert_inputs(&mut m, &a.experts)?;
    add_artifact(&mut m, &a.out, &csv)?;
    m.nfe = Some(report.nfe);
    m.schedule = Some(schedule);
    m.metrics.insert("endpoint_mse".into(), report.endpoint_mse);
    m.metrics.insert("energy_distance".into(), report.energy_distance);
    m.metrics.insert("sliced_w2".into(), report.sliced_w2);
    m.write(&a.out.join("manifest.json"))?;
    println!(
        "{}: NFE {} endpoint MSE {:.6} energy distance {:.6} sliced W2 {:.6}",
        report.config, report.nfe, report.endpoint_mse, report.energy_distance, report.sliced_w2
    );
    Ok(())
}

fn ablation_plan(a: &AblateArgs) -> CliResult<AblationPlan> {
    let seeds = |n: u64| (1..=n).collect::<Vec<u64>>();
    let mut plan = match &a.plan {
        Some(path) => read_input(path, |p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str::<AblationPlan>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        })?,
        None => {
            let kind = dataset(&a.dataset)?;
            let n = a.seeds.unwrap_or(5);
            match a.arms {
                ArmsArg::Main => AblationPlan::standard(kind, seeds(n)),
                ArmsArg::All => AblationPlan::full(kind, seeds(n)),
            }
        }
    };
    if let (Some(n), Some(_)) = (a.seeds, &a.plan) {
        plan.seeds = seeds(n);
    }
    plan.validate()?;
    Ok(plan)
}

fn ablate_cmd(command: &Command, a: &AblateArgs, argv: Vec<String>) -> CliResult<()> {
    let base = teacher_from(&a.teacher)?;
    let plan = ablation_plan(a)?;
    let result = run_ablation(&base, &plan)?;

    fs::create_dir_all(a.out.join("scatter"))?;
    let mut m = RunManifest::new("ablate", argv, invocation(command)?)?;
    m.seeds = plan.seeds.clone();
    m.add_input(&a.teacher)?;

    let main_csv = a.out.join("main.csv");
    write_with(&main_csv, |w| write_reports_csv(w, &result.main))?;
    let extra_csv = a.out.join("extra.csv");
    write_with(&extra_csv, |w| write_reports_csv(w, &result.extra))?;
    let table = a.out.join("table.md");
    let text = format!(
        "## Configurations\n\n{}\n## Other arms\n\n{}",
        AblationResult::markdown_table(&result.main),
        AblationResult::markdown_table(&result.extra)
    );
    write_atomic(&table, text.as_bytes())?;
    let bars = a.out.join("endpoint_mse.svg");
    write_atomic(&bars, result.bar_svg().as_bytes())?;
    let plan_path = a.out.join("plan.json");
    let plan_text = serde_json::to_string_pretty(&plan).map_err(|e| CliError::Usage(e.to_string()))?;
    write_atomic(&plan_path, plan_text.as_bytes())?;
    let failures = a.out.join("failures.json");
    let fail_text = serde_json::to_string_pretty(&result.failures).map_err(|e| CliError::Usage(e.to_string()))?;
    write_atomic(&failures, fail_text.as_bytes())?;
    for p in [&main_csv, &extra_csv, &table, &bars, &plan_path, &failures] {
        add_artifact(&mut m, &a.out, p)?;
    }
    for (id, doc) in result.scatter_svgs() {
        let safe: String = id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect();
        let p = a.out.join("scatter").join(format!("{safe}.svg"));
        write_atomic(&p, doc.as_bytes())?;
        add_artifact(&mut m, &a.out, &p)?;
    }
    for s in AblationResult::summary(&result.main) {
        m.metrics.insert(format!("{}/endpoint_mse", s.config), s.endpoint_mse.0);
        m.metrics
            .insert(format!("{}/energy_distance", s.config), s.energy_distance.0);
    }
    m.write(&a.out.join("manifest.json"))?;

    print!("{}", AblationResult::markdown_table(&result.main));
    for f in &result.failures {
        eprintln!("arm {} seed {} failed: {}", f.arm, f.seed, f.error);
    }
    Ok(())
}

fn baseline_cmd(a: &BaselineArgs) -> CliResult<()> {
    let base = teacher_from(&a.teacher)?;
    let kind = dataset(&a.dataset)?;
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (1..=a.seeds).collect();
    let arms = [(3, 5), (5, 5), (5, 10)];
    let mut teacher_ed = Vec::new();
    let mut bounds: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for &seed in &seeds {
        let ctx = EvalContext::new(&base, kind, seed, 50, PartitionMode::default(), 2048, 4096, 64)?;
        teacher_ed.push(ctx.teacher_report()?.energy_distance);
        for (s, f) in arms {
            let sched = allocate(&ctx.grid, &ctx.partition, s, f)?;
            let (r, _) = ctx.evaluate("bare", &base, None, &sched)?;
            bounds.entry(slow_fast_id(s, f)).or_default().push(r.endpoint_mse);
        }
    }

    let (grid, part) = grid_partition(50)?;
    let noise = normal_tensor(
        &mut stream(seeds[0], Purpose::EvalNoise, 0),
        2048,
        base.arch().data_dim,
        1.0,
    );
    let mut wall = BTreeMap::new();
    let mut schedules: Vec<PhaseSchedule> = arms
        .iter()
        .map(|&(s, f)| allocate(&grid, &part, s, f))
        .collect::<Result<_, _>>()?;
    schedules.push(full_schedule(&grid, &part)?);
    for sched in &schedules {
        let mut best = f64::INFINITY;
        for _ in 0..5 {
            best = best.min(generate(&base, None, sched, &grid, &noise, None)?.wall_time_s);
        }
        wall.insert(format!("nfe{}", sched.nfe()), best);
    }
    let ratio = wall["nfe10"] / wall["nfe50"];

    let trainset = TrainSet::subset(&Dataset2D::new(kind, seeds[0]), 1)?;
    let start = Instant::now();
    distill_expert(
        &base,
        Phase::Slow,
        &part,
        &trainset,
        &TrainConfig::distill_default(),
        &LoraSpec::default(),
        seeds[0],
    )?;
    let distill_time_s = start.elapsed().as_secs_f64();

    let baseline = BaselineManifest {
        teacher_hash: hash_file(&a.teacher)?,
        dataset: kind,
        seeds,
        teacher_energy_distance: teacher_ed,
        teacher_energy_distance_bound: TEACHER_ED_BOUND,
        endpoint_mse_bounds: bounds,
        wall_time_s: wall,
        wall_time_ratio_10_over_50: ratio,
        distill_time_s,
        distill_time_bound_s: DISTILL_TIME_BOUND_S,
    };
    baseline.write(&a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

impl Command {
    fn out_dir(&self) -> Option<&Path> {
        match self {
            Command::TrainTeacher(a) => Some(&a.out),
            Command::Distill(a) => Some(&a.out),
            Command::Sample(a) => Some(&a.out),
            Command::Eval(a) => Some(&a.out),
            Command::Ablate(a) => Some(&a.out),
            Command::BaselineCalibrate(_) | Command::Rerun(_) => None,
        }
    }

    fn set_out_dir(&mut self, out: PathBuf) {
        match self {
            Command::TrainTeacher(a) => a.out = out,
            Command::Distill(a) => a.out = out,
            Command::Sample(a) => a.out = out,
            Command::Eval(a) => a.out = out,
            Command::Ablate(a) => a.out = out,
            Command::BaselineCalibrate(_) | Command::Rerun(_) => {}
        }
    }
}

/// Same content, where metric CSVs may differ only in wall time.
fn artifacts_match(old: &Path, new: &Path) -> CliResult<bool> {
    let (a, b) = (fs::read(old)?, fs::read(new)?);
    if a == b {
        return Ok(true);
    }
    let is_metrics = |bytes: &[u8]| bytes.starts_with(CSV_HEADER.as_bytes());
    if is_metrics(&a) && is_metrics(&b) {
        let parse = |bytes: Vec<u8>| -> CliResult<Vec<MetricReport>> {
            let text = String::from_utf8(bytes).map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(read_reports_csv(&text)?)
        };
        let (ra, rb) = (parse(a)?, parse(b)?);
        return Ok(ra.len() == rb.len() && ra.iter().zip(&rb).all(|(x, y)| x.cells_bit_eq(y)));
    }
    Ok(false)
}

fn rerun_cmd(a: &RerunArgs, argv: Vec<String>) -> CliResult<ExitCode> {
    let original = read_input(&a.manifest, RunManifest::read)?;
    let mut command: Command = serde_json::from_value(original.invocation.clone())
        .map_err(|e| CliError::Usage(format!("manifest invocation: {e}")))?;
    let old_out = command
        .out_dir()
        .ok_or_else(|| CliError::Usage(format!("'{}' runs cannot be replayed", original.subcommand)))?
        .to_path_buf();
    for (path, hash) in &original.inputs {
        let now = hash_file(Path::new(path)).map_err(|e| CliError::Usage(format!("input {path}: {e}")))?;
        if &now != hash {
            return Err(CliError::Usage(format!("input {path} changed since the original run")));
        }
    }
    let new_out = a
        .out
        .clone()
        .unwrap_or_else(|| a.manifest.parent().unwrap_or(Path::new(".")).join("rerun"));
    command.set_out_dir(new_out.clone());
    run(&command, argv)?;

    let replay = RunManifest::read(&new_out.join("manifest.json"))?;
    let mut differ = Vec::new();
    for rel in original.artifacts.keys() {
        let ok = replay.artifacts.contains_key(rel) && artifacts_match(&old_out.join(rel), &new_out.join(rel))?;
        println!("{rel}: {}", if ok { "identical" } else { "DIFFERENT" });
        if !ok {
            differ.push(rel.clone());
        }
    }
    let summary = BufWriter::new(fs::File::create(new_out.join("rerun.json"))?);
    serde_json::to_writer_pretty(
        summary,
        &serde_json::json!({
            "original": a.manifest.display().to_string(),
            "artifacts": original.artifacts.len(),
            "different": differ,
        }),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    if differ.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(CliError::Mismatch(format!(
            "{} artifact(s) differ: {}",
            differ.len(),
            differ.join(", ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_specs() {
        let (grid, part) = grid_partition(50).unwrap();
        assert_eq!(schedule_from("slow5-fast5", &grid, &part).unwrap().nfe(), 10);
        assert_eq!(schedule_from("uniform7", &grid, &part).unwrap().nfe(), 7);
        assert_eq!(schedule_from("full", &grid, &part).unwrap().nfe(), 50);
        for bad in ["slow5", "uniform", "fast5-slow5", "slow0-fast3"] {
            assert_eq!(schedule_from(bad, &grid, &part).unwrap_err().exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn exit_codes() {
        let abort = Error::NumericalAbort {
            step: 0,
            detail: String::new(),
            snapshot: None,
        };
        assert_eq!(CliError::from(abort).exit_code(), 3);
        assert_eq!(CliError::from(Error::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(Error::Domain("x".into())).exit_code(), 1);
        assert_eq!(CliError::Mismatch("x".into()).exit_code(), 1);
    }

    #[test]
    fn invocation_replays() {
        let cmd = Command::Sample(SampleArgs {
            experts: ExpertPaths {
                teacher: "t.ckpt".into(),
                slow: Some("s.ckpt".into()),
                fast: None,
                single: None,
                schedule: "slow3-fast5".into(),
                grid_steps: 50,
            },
            seed: 9,
            n: 10,
            out: "o".into(),
        });
        let v = invocation(&cmd).unwrap();
        assert_eq!(v["command"], "sample");
        let back: Command = serde_json::from_value(v).unwrap();
        assert_eq!(back.out_dir(), Some(Path::new("o")));
        assert_eq!(invocation(&back).unwrap(), invocation(&cmd).unwrap());
    }
}
