//! Independent PPO agents: one policy and one value baseline per seat,
//! trained on fresh instances every batch.

pub mod adam;
pub mod features;
pub mod network;
pub mod ppo;
pub mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{GenerationConfig, DEFAULT_RADII};
use crate::routing::FleetRule;

pub use trainer::{train, Checkpoint, CurveRow, LearnedAgent, TrainOutput, Trainer};

/// How the entropy floor interacts with the linear anneal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorMode {
    /// `max(beta0 * (1 - e / E), floor)` at every epoch.
    #[default]
    Throughout,
    /// Plain linear anneal until `E`, then `floor`.
    AfterAnneal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntropySchedule {
    pub beta0: f64,
    pub anneal_epochs: usize,
    pub floor: f64,
    pub mode: FloorMode,
}

impl Default for EntropySchedule {
    fn default() -> Self {
        Self {
            beta0: 0.75,
            anneal_epochs: 10_000,
            floor: 0.2,
            mode: FloorMode::Throughout,
        }
    }
}

impl EntropySchedule {
    pub fn coefficient(&self, epoch: usize) -> f64 {
        let linear = self.beta0 * (1.0 - epoch as f64 / self.anneal_epochs as f64);
        match self.mode {
            FloorMode::Throughout => linear.max(self.floor),
            FloorMode::AfterAnneal if epoch < self.anneal_epochs => linear,
            FloorMode::AfterAnneal => self.floor,
        }
    }
}

/// Entropy coefficient at `epoch` under the default schedule.
pub fn entropy_coefficient(epoch: usize) -> f64 {
    EntropySchedule::default().coefficient(epoch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Training episodes per epoch.
    pub batch_size: usize,
    /// Size of the fixed evaluation set.
    pub eval_batch: usize,
    pub eval_period: usize,
    /// First seed of the evaluation set.
    pub eval_seed: u64,
    pub gamma: f64,
    pub horizon: usize,
    pub n_agents: usize,
    pub customers_per_agent: usize,
    pub radii: Vec<f64>,
    pub fleet_rule: FleetRule,
    pub learning_rate: f64,
    pub clip_epsilon: f64,
    pub value_clip: f64,
    pub max_grad_norm: Option<f64>,
    pub entropy: EntropySchedule,
    pub hidden: Vec<usize>,
    pub baseline_hidden: Vec<usize>,
    /// Optimisation passes over each epoch's decisions.
    pub update_passes: usize,
    pub minibatch: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 10_000,
            batch_size: 256,
            eval_batch: 512,
            eval_period: 100,
            eval_seed: 1_000_000,
            gamma: 0.99,
            horizon: 10,
            n_agents: 3,
            customers_per_agent: 3,
            radii: DEFAULT_RADII.to_vec(),
            fleet_rule: FleetRule::default(),
            learning_rate: 3e-4,
            clip_epsilon: 0.2,
            value_clip: 0.2,
            max_grad_norm: Some(0.5),
            entropy: EntropySchedule::default(),
            hidden: vec![64, 64],
            baseline_hidden: vec![64],
            update_passes: 4,
            minibatch: 32,
        }
    }
}

impl TrainerConfig {
    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            n_agents: self.n_agents,
            customers_per_agent: self.customers_per_agent,
            radii: self.radii.clone(),
        }
    }

    pub fn game(&self) -> crate::bargaining::GameConfig {
        crate::bargaining::GameConfig {
            gamma: self.gamma,
            horizon: self.horizon,
            n_agents: self.n_agents,
            egalitarian: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generation().validate()?;
        self.game().validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch == 0 || self.eval_period == 0 {
            return bad("epochs, batch sizes and eval period must be positive");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip epsilon must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0) || !(self.value_clip > 0.0) {
            return bad("learning rate and value clip must be positive");
        }
        let e = &self.entropy;
        if !(e.floor >= 0.0 && e.floor <= e.beta0) || e.anneal_epochs == 0 {
            return bad("entropy schedule needs 0 <= floor <= beta0 and a positive anneal span");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.baseline_hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if self.update_passes == 0 || self.minibatch == 0 {
            return bad("update passes and minibatch must be positive");
        }
        // training seeds carry the top bit; keep evaluation seeds clear of it
        if self.eval_seed.checked_add(self.eval_batch as u64).is_none_or(|end| end > 1 << 63) {
            return bad("evaluation seeds must stay below 2^63");
        }
        Ok(())
    }
}
