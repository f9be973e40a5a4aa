//! Rollouts, independent per-agent updates, periodic evaluation and checkpoints.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::features::{encode_features, feature_len};
use super::network::{masked_softmax, sigmoid, BaselineNet, PolicyNet, PolicyOutput};
use super::ppo::{baseline_loss, log_prob_entropy, normalize_advantages, ppo_loss, Decision, DecisionKind, ValueSample};
use super::TrainerConfig;
use crate::agents::{agent_seed, run_episode, AgentPolicy, ProposeAction};
use crate::bargaining::{encode_observation, BargainingState, Observation, Proposal};
use crate::coalition::{build_characteristic_table, CharacteristicTable, Coalition};
use crate::error::{Error, Result};
use crate::eval::{evaluate, run_matchup, EvalSet, GapMode};
use crate::instance::generate_instance;

pub const SCHEMA_VERSION: u32 = 1;

const INIT_TAG: u64 = 0x1A2B_3C4D_5E6F_7081;
const INSTANCE_TAG: u64 = 0x5EED_0F_1257_A11C;
const EPISODE_TAG: u64 = 0xE915_0DE5_EED5_0001;
const SHUFFLE_TAG: u64 = 0x5A0F_F1E5_0000_0003;

/// Instance seed for training episode `index`. The top bit is always set,
/// so training never draws an instance from the (lower) evaluation range.
pub fn training_instance_seed(seed: u64, index: u64) -> u64 {
    agent_seed(seed ^ INSTANCE_TAG, index as usize) | (1 << 63)
}

fn episode_seed(seed: u64, index: u64) -> u64 {
    agent_seed(seed ^ EPISODE_TAG, index as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shapes {
    pub n_agents: usize,
    pub n_locations: usize,
    pub horizon: usize,
    pub feature_len: usize,
    pub hidden: Vec<usize>,
    pub baseline_hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentWeights {
    pub policy: Vec<f64>,
    pub baseline: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub epochs_trained: usize,
    pub shapes: Shapes,
    pub weights: Vec<AgentWeights>,
}

impl Checkpoint {
    pub fn policy_net(&self) -> PolicyNet {
        PolicyNet::new(self.shapes.feature_len, &self.shapes.hidden, self.shapes.n_agents)
    }

    pub fn baseline_net(&self) -> BaselineNet {
        BaselineNet::new(self.shapes.feature_len, &self.shapes.baseline_hidden)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "checkpoint schema {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let s = &self.shapes;
        if s.feature_len != feature_len(s.n_agents, s.n_locations, s.horizon) {
            return Err(Error::Config("checkpoint feature length disagrees with its shapes".into()));
        }
        if self.weights.len() != s.n_agents {
            return Err(Error::Config(format!(
                "checkpoint has {} weight sets for {} agents",
                self.weights.len(),
                s.n_agents
            )));
        }
        let (p, b) = (self.policy_net().n_params, self.baseline_net().n_params);
        for (i, w) in self.weights.iter().enumerate() {
            if w.policy.len() != p || w.baseline.len() != b {
                return Err(Error::Config(format!("agent {i}: parameter count mismatch")));
            }
            if w.policy.iter().chain(&w.baseline).any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("agent {i}: non-finite weight in checkpoint")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let ckpt: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}

/// Policy weights for every seat behind one network layout.
#[derive(Debug)]
pub struct PolicyModel {
    pub net: PolicyNet,
    pub thetas: Vec<Vec<f64>>,
}

impl PolicyModel {
    fn forward(&self, obs: &Observation) -> Result<(Vec<f64>, PolicyOutput)> {
        let features = encode_features(obs);
        if features.len() != self.net.feature_len || obs.agent >= self.thetas.len() {
            return Err(Error::Config(format!(
                "observation does not fit the model ({} features, agent {})",
                features.len(),
                obs.agent
            )));
        }
        let out = self.net.forward(&self.thetas[obs.agent], &features);
        let finite = out.coalition_logits.iter().chain(&out.proposal_mean).all(|v| v.is_finite())
            && out.response_logit.is_finite();
        if !finite {
            return Err(Error::Numeric(format!("non-finite policy output for agent {}", obs.agent)));
        }
        Ok((features, out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    /// Sample from the policy and record each decision.
    Sample,
    /// Most likely action, nothing recorded.
    Greedy,
}

/// A trained policy seated at the table. Uses the weights of whichever
/// seat it observes from.
#[derive(Debug)]
pub struct LearnedAgent {
    model: Arc<PolicyModel>,
    mode: ActMode,
    rng: ChaCha8Rng,
    decisions: Vec<Decision>,
}

impl LearnedAgent {
    pub fn new(model: Arc<PolicyModel>, mode: ActMode) -> Self {
        Self {
            model,
            mode,
            rng: ChaCha8Rng::seed_from_u64(0),
            decisions: Vec::new(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, mode: ActMode) -> Self {
        let model = PolicyModel {
            net: ckpt.policy_net(),
            thetas: ckpt.weights.iter().map(|w| w.policy.clone()).collect(),
        };
        Self::new(Arc::new(model), mode)
    }

    pub fn load(path: &Path, mode: ActMode) -> Result<Self> {
        Ok(Self::from_checkpoint(&Checkpoint::load(path)?, mode))
    }

    pub fn take_decisions(&mut self) -> Vec<Decision> {
        std::mem::take(&mut self.decisions)
    }

    fn bernoulli(&mut self, logit: f64) -> bool {
        match self.mode {
            ActMode::Greedy => logit > 0.0,
            ActMode::Sample => self.rng.random::<f64>() < sigmoid(logit),
        }
    }

    fn record(&mut self, obs: &Observation, features: Vec<f64>, out: &PolicyOutput, kind: DecisionKind) {
        if self.mode == ActMode::Sample {
            let (lp, _) = log_prob_entropy(out, &kind);
            self.decisions.push(Decision {
                agent: obs.agent,
                round: obs.round,
                features,
                kind,
                old_log_prob: lp,
                reward_to_go: 0.0,
                advantage: 0.0,
            });
        }
    }
}

impl AgentPolicy for LearnedAgent {
    fn name(&self) -> String {
        "learned".into()
    }

    fn propose(&mut self, obs: &Observation, _table: Option<&CharacteristicTable>) -> Result<ProposeAction> {
        let (features, out) = self.model.clone().forward(obs)?;
        let bits: Vec<bool> = (0..obs.n_agents)
            .map(|j| j == obs.agent || self.bernoulli(out.coalition_logits[j]))
            .collect();
        let coalition = Coalition::from_members((0..obs.n_agents).filter(|&j| bits[j]));
        let payoff = masked_softmax(&out.proposal_mean, &bits, true);
        self.record(obs, features, &out, DecisionKind::Propose { self_index: obs.agent, bits });
        Ok(ProposeAction::Offer(Proposal { coalition, payoff }))
    }

    fn respond(&mut self, obs: &Observation, _p: &Proposal, _table: Option<&CharacteristicTable>) -> Result<bool> {
        let (features, out) = self.model.clone().forward(obs)?;
        let accept = self.bernoulli(out.response_logit);
        self.record(obs, features, &out, DecisionKind::Respond { accept });
        Ok(accept)
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub agent: usize,
    pub accuracy: f64,
    pub rel_gap: f64,
    pub abs_gap: f64,
    pub mean_return: f64,
    pub beta: f64,
}

/// One agent's share of one training episode.
#[derive(Debug, Clone)]
pub struct AgentEpisode {
    pub decisions: Vec<Decision>,
    pub initial_features: Vec<f64>,
    /// Discounted return from the first round.
    pub ret: f64,
}

#[derive(Debug, Clone)]
struct AgentState {
    policy: Vec<f64>,
    baseline: Vec<f64>,
    policy_opt: Adam,
    baseline_opt: Adam,
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub curve: Vec<CurveRow>,
}

pub struct Trainer {
    pub config: TrainerConfig,
    policy_net: PolicyNet,
    baseline_net: BaselineNet,
    agents: Vec<AgentState>,
    eval_set: EvalSet,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        let n_locations = config.n_agents * (1 + config.customers_per_agent);
        let flen = feature_len(config.n_agents, n_locations, config.horizon);
        let policy_net = PolicyNet::new(flen, &config.hidden, config.n_agents);
        let baseline_net = BaselineNet::new(flen, &config.baseline_hidden);
        let agents = (0..config.n_agents)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(agent_seed(config.seed ^ INIT_TAG, i));
                let policy = policy_net.init(&mut rng);
                let baseline = baseline_net.init(&mut rng);
                AgentState {
                    policy_opt: Adam::new(policy.len(), config.learning_rate, config.max_grad_norm),
                    baseline_opt: Adam::new(baseline.len(), config.learning_rate, config.max_grad_norm),
                    policy,
                    baseline,
                }
            })
            .collect();
        let eval_set = EvalSet::generate(config.eval_seed, config.eval_batch, &config.generation(), config.fleet_rule)?;
        Ok(Self {
            config,
            policy_net,
            baseline_net,
            agents,
            eval_set,
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn eval_set(&self) -> &EvalSet {
        &self.eval_set
    }

    pub fn model(&self) -> Arc<PolicyModel> {
        Arc::new(PolicyModel {
            net: self.policy_net.clone(),
            thetas: self.agents.iter().map(|a| a.policy.clone()).collect(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let c = &self.config;
        let n_locations = c.n_agents * (1 + c.customers_per_agent);
        Checkpoint {
            schema_version: SCHEMA_VERSION,
            epochs_trained: self.epoch,
            shapes: Shapes {
                n_agents: c.n_agents,
                n_locations,
                horizon: c.horizon,
                feature_len: self.policy_net.feature_len,
                hidden: c.hidden.clone(),
                baseline_hidden: c.baseline_hidden.clone(),
            },
            weights: self
                .agents
                .iter()
                .map(|a| AgentWeights {
                    policy: a.policy.clone(),
                    baseline: a.baseline.clone(),
                })
                .collect(),
        }
    }

    /// Plays `batch_size` fresh episodes with sampling policies.
    /// Returns, per agent, one entry per episode.
    pub fn collect(&self, epoch: usize) -> Result<Vec<Vec<AgentEpisode>>> {
        let c = &self.config;
        let model = self.model();
        let gen = c.generation();
        let game = c.game();
        let episodes = (0..c.batch_size)
            .into_par_iter()
            .map(|k| {
                let index = (epoch * c.batch_size + k) as u64;
                let inst_seed = training_instance_seed(c.seed, index);
                let tag = |e: Error| Error::Numeric(format!("epoch {epoch}, instance seed {inst_seed}: {e}"));
                let inst = generate_instance(inst_seed, &gen)?;
                let table = build_characteristic_table(&inst, c.fleet_rule)?;
                let mut seats: Vec<LearnedAgent> =
                    (0..c.n_agents).map(|_| LearnedAgent::new(model.clone(), ActMode::Sample)).collect();
                let outcome =
                    run_episode(&inst, &table, game, &mut seats, episode_seed(c.seed, index), None).map_err(|e| match e {
                        Error::Numeric(_) => tag(e),
                        other => other,
                    })?;
                let start = BargainingState::reset_with_proposer(game, outcome.first_proposer)?;
                let result = &outcome.result;
                Ok(seats
                    .iter_mut()
                    .enumerate()
                    .map(|(i, seat)| {
                        let reward = result.rewards[i];
                        let mut decisions = seat.take_decisions();
                        let ret = match result.agreement_round {
                            Some(t) => {
                                for d in &mut decisions {
                                    d.reward_to_go = c.gamma.powi((t - d.round) as i32) * reward;
                                }
                                c.gamma.powi(t as i32 - 1) * reward
                            }
                            None => 0.0,
                        };
                        AgentEpisode {
                            decisions,
                            initial_features: encode_features(&encode_observation(&start, &inst, i)),
                            ret,
                        }
                    })
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<Vec<AgentEpisode>>>>()?;

        let mut per_agent: Vec<Vec<AgentEpisode>> = vec![Vec::with_capacity(c.batch_size); c.n_agents];
        for ep in episodes {
            for (i, a) in ep.into_iter().enumerate() {
                per_agent[i].push(a);
            }
        }
        Ok(per_agent)
    }

    /// PPO and baseline updates for agent `i` only.
    pub fn update_agent(&mut self, i: usize, episodes: &[AgentEpisode], beta: f64) -> Result<()> {
        let c = self.config.clone();
        let epoch = self.epoch;
        update_one(
            &self.policy_net,
            &self.baseline_net,
            &mut self.agents[i],
            episodes,
            beta,
            &c,
            agent_seed(c.seed ^ SHUFFLE_TAG ^ epoch as u64, i),
        )
        .map_err(|e| Error::Numeric(format!("epoch {epoch}, agent {i}, seed {}: {e}", c.seed)))
    }

    /// One collection + update step.
    pub fn train_epoch(&mut self) -> Result<f64> {
        let epoch = self.epoch;
        let beta = self.config.entropy.coefficient(epoch);
        let batch = self.collect(epoch)?;
        let c = self.config.clone();
        let (pnet, bnet) = (&self.policy_net, &self.baseline_net);
        self.agents
            .par_iter_mut()
            .zip(batch.par_iter())
            .enumerate()
            .map(|(i, (state, eps))| {
                update_one(pnet, bnet, state, eps, beta, &c, agent_seed(c.seed ^ SHUFFLE_TAG ^ epoch as u64, i))
                    .map_err(|e| Error::Numeric(format!("epoch {epoch}, agent {i}, seed {}: {e}", c.seed)))
            })
            .collect::<Result<Vec<()>>>()?;
        self.epoch += 1;
        Ok(beta)
    }

    /// Greedy evaluation on the fixed set; one row per agent.
    pub fn evaluate(&self, beta: f64) -> Result<Vec<CurveRow>> {
        let model = self.model();
        let game = self.config.game();
        let mut seats: Vec<LearnedAgent> =
            (0..self.config.n_agents).map(|_| LearnedAgent::new(model.clone(), ActMode::Greedy)).collect();
        let (report, _) = evaluate(&mut seats, &self.eval_set, game, GapMode::PerCapita)?;
        let (matchup, _) = run_matchup(&mut seats, &self.eval_set, game, self.config.eval_seed)?;
        Ok(report
            .per_agent
            .iter()
            .enumerate()
            .map(|(agent, s)| CurveRow {
                epoch: self.epoch,
                agent,
                accuracy: s.accuracy,
                rel_gap: s.mean_eta,
                abs_gap: s.mean_phi,
                mean_return: matchup.mean_discounted_return[agent],
                beta,
            })
            .collect())
    }

    /// Trains for the configured number of epochs, calling `on_eval` with
    /// each batch of curve rows as it is produced.
    pub fn run(&mut self, mut on_eval: impl FnMut(&[CurveRow])) -> Result<Vec<CurveRow>> {
        let mut curve = Vec::new();
        while self.epoch < self.config.epochs {
            let beta = self.train_epoch()?;
            if self.epoch % self.config.eval_period == 0 || self.epoch == self.config.epochs {
                let rows = self.evaluate(beta)?;
                on_eval(&rows);
                curve.extend(rows);
            }
        }
        Ok(curve)
    }
}

fn update_one(
    pnet: &PolicyNet,
    bnet: &BaselineNet,
    state: &mut AgentState,
    episodes: &[AgentEpisode],
    beta: f64,
    c: &TrainerConfig,
    shuffle_seed: u64,
) -> Result<()> {
    let mut decisions = Vec::new();
    let mut values = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let v0 = bnet.predict(&state.baseline, &ep.initial_features);
        for d in &ep.decisions {
            let mut d = d.clone();
            d.advantage = d.reward_to_go - v0;
            decisions.push(d);
        }
        values.push(ValueSample {
            features: ep.initial_features.clone(),
            old_value: v0,
            target: ep.ret,
        });
    }
    let mut adv: Vec<f64> = decisions.iter().map(|d| d.advantage).collect();
    normalize_advantages(&mut adv);
    for (d, a) in decisions.iter_mut().zip(adv) {
        d.advantage = a;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    for _ in 0..c.update_passes {
        decisions.shuffle(&mut rng);
        for chunk in decisions.chunks(c.minibatch) {
            let (_, grad) = ppo_loss(pnet, &state.policy, chunk, beta, c.clip_epsilon)?;
            state.policy_opt.step(&mut state.policy, &grad);
        }
        values.shuffle(&mut rng);
        for chunk in values.chunks(c.minibatch) {
            let (_, grad) = baseline_loss(bnet, &state.baseline, chunk, c.value_clip)?;
            state.baseline_opt.step(&mut state.baseline, &grad);
        }
    }
    if state.policy.iter().chain(&state.baseline).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite parameter after update".into()));
    }
    Ok(())
}

/// Trains from scratch and returns the final checkpoint and learning curve.
pub fn train(config: &TrainerConfig) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(config.clone())?;
    let curve = trainer.run(|_| {})?;
    Ok(TrainOutput {
        checkpoint: trainer.checkpoint(),
        curve,
    })
}
