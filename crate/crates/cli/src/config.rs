//! Run configuration: parsed from the command line, echoed as `config.json`
//! next to every run's outputs, and accepted back by `rerun`.

use std::path::PathBuf;

use clap::{Args, Subcommand, ValueEnum};
use coalition_lab::eval::GapMode;
use coalition_lab::instance::DEFAULT_RADII;
use coalition_lab::routing::FleetRule;
use serde::{Deserialize, Serialize};

pub const OUT_ENV: &str = "COALITION_LAB_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fleet {
    IdleAllowed,
    EveryVehicleDelivers,
}

impl From<Fleet> for FleetRule {
    fn from(f: Fleet) -> Self {
        match f {
            Fleet::IdleAllowed => FleetRule::IdleAllowed,
            Fleet::EveryVehicleDelivers => FleetRule::EveryVehicleDelivers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gap {
    PerCapita,
    Raw,
}

impl From<Gap> for GapMode {
    fn from(g: Gap) -> Self {
        match g {
            Gap::PerCapita => GapMode::PerCapita,
            Gap::Raw => GapMode::Raw,
        }
    }
}

/// Where instances come from: a JSONL file, or generated from seeds.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InstanceArgs {
    /// Read instances from this JSONL file instead of generating them.
    #[arg(long)]
    pub instances: Option<PathBuf>,
    /// First instance seed; instance k has seed `seed + k`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RADII.to_vec())]
    pub radii: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub agents: usize,
    #[arg(long, default_value_t = 3)]
    pub customers_per_agent: usize,
    #[arg(long, value_enum, default_value = "idle-allowed")]
    pub fleet_rule: Fleet,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GameArgs {
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    #[arg(long, default_value_t = 10)]
    pub horizon: usize,
    /// Oracle bots accept iff offered share >= threshold * own optimum.
    /// Defaults to gamma.
    #[arg(long)]
    pub oracle_threshold: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RADII.to_vec())]
    pub radii: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub agents: usize,
    #[arg(long, default_value_t = 3)]
    pub customers_per_agent: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CharfnArgs {
    #[command(flatten)]
    pub source: InstanceArgs,
    /// Include the optimal routes of every coalition.
    #[arg(long)]
    pub dump_routes: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PlayArgs {
    #[command(flatten)]
    pub source: InstanceArgs,
    #[command(flatten)]
    pub game: GameArgs,
    /// One bot per seat (or one for all): heuristic | random | oracle | learned:<checkpoint>.
    #[arg(long, value_delimiter = ',', default_value = "heuristic")]
    pub bots: Vec<String>,
    /// Seed of the first episode; episode k uses `episode_seed + k`.
    #[arg(long, default_value_t = 0)]
    pub episode_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: InstanceArgs,
    #[command(flatten)]
    pub game: GameArgs,
    #[arg(long, value_delimiter = ',', default_value = "heuristic")]
    pub bots: Vec<String>,
    #[arg(long, value_enum, default_value = "per-capita")]
    pub gap_mode: Gap,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 512)]
    pub eval_batch: usize,
    #[arg(long, default_value_t = 100)]
    pub eval_period: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub eval_seed: u64,
    /// Entropy anneal span in epochs.
    #[arg(long, default_value_t = 10_000)]
    pub anneal_epochs: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.2)]
    pub clip_epsilon: f64,
    #[arg(long, default_value_t = 0.99)]
    pub gamma: f64,
    #[arg(long, default_value_t = 10)]
    pub horizon: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RADII.to_vec())]
    pub radii: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![64, 64])]
    pub hidden: Vec<usize>,
    #[arg(long, value_enum, default_value = "idle-allowed")]
    pub fleet_rule: Fleet,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OracleCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub customers_per_agent: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RADII.to_vec())]
    pub radii: Vec<f64>,
    #[arg(long, value_enum, default_value = "idle-allowed")]
    pub fleet_rule: Fleet,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate instances as JSONL.
    Gen(GenArgs),
    /// Characteristic function of each instance.
    Charfn(CharfnArgs),
    /// Play full bargaining episodes and write traces.
    Play(PlayArgs),
    /// Score first proposals against the per-capita optimum.
    Eval(EvalArgs),
    /// Train independent PPO agents.
    Train(TrainArgs),
    /// Compare the routing solver with exhaustive search.
    OracleCheck(OracleCheckArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Charfn(_) => "charfn",
            Command::Play(_) => "play",
            Command::Eval(_) => "eval",
            Command::Train(_) => "train",
            Command::OracleCheck(_) => "oracle-check",
        }
    }
}

/// Everything needed to reproduce a run; written as `config.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: String,
    pub out: PathBuf,
    pub workers: usize,
    pub command: Command,
}
