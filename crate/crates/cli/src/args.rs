use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "hkgdiff", version, about = "Masked diffusion over hyper-relational knowledge graphs")]
pub struct Cli {
    /// Worker threads for query-parallel evaluation and generation; outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a rule-governed synthetic dataset and its validity oracle.
    Synth(SynthArgs),
    /// Train a model, writing checkpoints and a metrics log.
    Train(TrainArgs),
    /// Filtered link-prediction metrics on primary and all positions.
    EvalLp(EvalLpArgs),
    /// Diffusion fact generation in one setting.
    Generate(GenerateArgs),
    /// Re-score a generation report against an oracle.
    EvalGen(EvalGenArgs),
    /// Iterative Prediction or Gibbs Sampling generation.
    Baseline(BaselineArgs),
    /// Finite-difference check of the full training composite.
    Gradcheck(GradcheckArgs),
    /// Re-run a command from its manifest, single-threaded.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::EvalLp(_) => "eval-lp",
            Command::Generate(_) => "generate",
            Command::EvalGen(_) => "eval-gen",
            Command::Baseline(_) => "baseline",
            Command::Gradcheck(_) => "gradcheck",
            Command::Replay(_) => "replay",
        }
    }

    /// Output directory, where the manifest goes.
    pub fn out_dir(&self) -> Option<&PathBuf> {
        match self {
            Command::Synth(a) => Some(&a.out),
            Command::Train(a) => Some(&a.out),
            Command::EvalLp(a) => Some(&a.out),
            Command::Generate(a) => Some(&a.query.out),
            Command::EvalGen(a) => Some(&a.out),
            Command::Baseline(a) => Some(&a.query.out),
            Command::Gradcheck(a) => a.out.as_ref(),
            Command::Replay(_) => None,
        }
    }

    pub fn set_out_dir(&mut self, dir: PathBuf) {
        match self {
            Command::Synth(a) => a.out = dir,
            Command::Train(a) => a.out = dir,
            Command::EvalLp(a) => a.out = dir,
            Command::Generate(a) => a.query.out = dir,
            Command::EvalGen(a) => a.out = dir,
            Command::Baseline(a) => a.query.out = dir,
            Command::Gradcheck(a) => a.out = Some(dir),
            Command::Replay(_) => {}
        }
    }
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Generator config (TOML); the built-in default when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training config (TOML); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a `last.ckpt`; its config is used and only `--epochs` may change.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub p_obs: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub validation_interval: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Enable an ablation by name; repeatable.
    #[arg(long = "ablation")]
    pub ablations: Vec<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Valid,
    Test,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalLpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    /// Unfiltered top candidates kept per ranked slot.
    #[arg(long, default_value_t = 0)]
    pub top_k: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettingName {
    Scratch,
    Targeted,
    Arbitrary,
}

impl From<SettingName> for hkgdiff::inference::Setting {
    fn from(s: SettingName) -> Self {
        use hkgdiff::inference::Setting;
        match s {
            SettingName::Scratch => Setting::Scratch,
            SettingName::Targeted => Setting::Targeted,
            SettingName::Arbitrary => Setting::Arbitrary,
        }
    }
}

/// Query construction and judging shared by diffusion and baselines.
#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SettingName::Scratch)]
    pub setting: SettingName,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    /// Rule oracle (JSON from `synth`); without it a fact is correct when it matches a valid or test fact.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Seed for query construction.
    #[arg(long, default_value_t = 0)]
    pub query_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub query: QueryArgs,
    /// Generation config (TOML); flags below override it.
    #[arg(long)]
    pub gen_config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub schedule_lambda: Option<f64>,
    #[arg(long)]
    pub delta_ent: Option<f64>,
    #[arg(long)]
    pub delta_rel: Option<f64>,
    #[arg(long)]
    pub tau_ent: Option<f64>,
    #[arg(long)]
    pub tau_rel: Option<f64>,
    #[arg(long)]
    pub max_attempts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Recompute distributions at every step.
    #[arg(long)]
    pub no_cache: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineName {
    Iterative,
    Gibbs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderName {
    Canonical,
    Random,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub query: QueryArgs,
    #[arg(long, value_enum)]
    pub kind: BaselineName,
    #[arg(long, default_value_t = 11)]
    pub cycles: usize,
    #[arg(long, default_value_t = 10)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[arg(long, value_enum, default_value_t = OrderName::Canonical)]
    pub order: OrderName,
    #[arg(long, default_value_t = 10)]
    pub max_attempts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalGenArgs {
    /// `generation.jsonl` from `generate` or `baseline`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckArgs {
    /// Gradcheck config (TOML); the desk-scale default when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
