//! `flowlab`: train a teacher, distil slow/fast experts, sample, evaluate and
//! run the ablation tables.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 numerical abort
//! (a snapshot checkpoint is written and its path printed), 1 anything else.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(
    name = "flowlab",
    version,
    about = "Slow/fast low-rank experts for few-step flow sampling on 2-D data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Pretrain the flow-matching teacher.
    TrainTeacher(TrainTeacherArgs),
    /// Distil slow and/or fast experts on a frozen teacher.
    Distill(DistillArgs),
    /// Generate points with a teacher and optional experts.
    Sample(SampleArgs),
    /// Score one configuration against the 50-step teacher and fresh data.
    Eval(EvalArgs),
    /// Run the configuration ablation over several seeds.
    Ablate(AblateArgs),
    /// Measure reference thresholds on a trained teacher.
    BaselineCalibrate(BaselineArgs),
    /// Replay a run manifest and compare its artifacts.
    Rerun(RerunArgs),
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct TrainTeacherArgs {
    /// eight_gaussians, two_moons, checkerboard, noise or gaussian:MX,MY,STD
    #[arg(long, default_value = "eight_gaussians")]
    pub dataset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// TOML or JSON training config; defaults to the teacher recipe.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Learn a per-class conditioning vector.
    #[arg(long)]
    pub conditional: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseArg {
    Slow,
    Fast,
    Full,
    Both,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct DistillArgs {
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub phase: PhaseArg,
    /// Training-set size.
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    #[arg(long, default_value = "eight_gaussians")]
    pub dataset: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// TOML or JSON training config; defaults to the distillation recipe.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults to the config's steps times the training-set size.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// gaussian_a_zero_b or gaussian_both
    #[arg(long)]
    pub lora_init: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ExpertPaths {
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub slow: Option<PathBuf>,
    #[arg(long)]
    pub fast: Option<PathBuf>,
    /// One adapter routed on every step.
    #[arg(long, conflicts_with_all = ["slow", "fast"])]
    pub single: Option<PathBuf>,
    /// slowK-fastM, uniformK or full
    #[arg(long, default_value = "slow5-fast5")]
    pub schedule: String,
    #[arg(long, default_value_t = 50)]
    pub grid_steps: usize,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SampleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub experts: ExpertPaths,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 2048)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub experts: ExpertPaths,
    #[arg(long, default_value = "eight_gaussians")]
    pub dataset: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 2048)]
    pub n: usize,
    #[arg(long, default_value_t = 4096)]
    pub n_reference: usize,
    #[arg(long, default_value_t = 64)]
    pub n_proj: usize,
    /// Row label; defaults to the schedule name.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmsArg {
    /// The five configuration arms only.
    Main,
    /// Also the timestep, data, bare-base and noise-control arms.
    All,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub teacher: PathBuf,
    /// Number of seeds; seeds run 1..=N. Defaults to 5, or the plan's seeds.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long, value_enum, default_value = "all")]
    pub arms: ArmsArg,
    #[arg(long, default_value = "eight_gaussians")]
    pub dataset: String,
    /// JSON ablation plan; replaces --arms and --dataset.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct BaselineArgs {
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value = "eight_gaussians")]
    pub dataset: String,
    /// Output JSON file.
    #[arg(long, default_value = "baseline.json")]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where the replay writes; defaults to a `rerun` directory next to the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    match commands::run(&cli.command, argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
