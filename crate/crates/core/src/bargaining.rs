//! Random-proposer alternating-offers coalitional bargaining.
//!
//! Each round a proposer is drawn uniformly. It offers a coalition that
//! contains itself and has positive value, together with a payoff vector.
//! Every other agent then responds; only members of the proposed coalition
//! gate acceptance. Agreement ends the episode with `v(S) * x_i` for each
//! member. If round `T` ends without agreement every agent gets 0.
//!
//! Rewards are emitted undiscounted together with the agreement round;
//! [`discounted_return`] applies `gamma^(t-1)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coalition::{CharacteristicTable, Coalition, VALUE_EPS};
use crate::error::{Error, Result};
use crate::instance::ProblemInstance;

/// Tolerance on `sum(x) == 1` and on the egalitarian shares.
pub const PAYOFF_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub gamma: f64,
    pub horizon: usize,
    pub n_agents: usize,
    /// Require `x_i = 1/|S|` for members.
    pub egalitarian: bool,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            horizon: 10,
            n_agents: 3,
            egalitarian: true,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("discount {} not in (0, 1]", self.gamma)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.n_agents < 2 || self.n_agents > 16 {
            return Err(Error::Config(format!("{} agents not in 2..=16", self.n_agents)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub coalition: Coalition,
    pub payoff: Vec<f64>,
}

impl Proposal {
    pub fn egalitarian(coalition: Coalition, n_agents: usize) -> Result<Self> {
        Ok(Self {
            coalition,
            payoff: egalitarian_payoff(coalition, n_agents)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Propose,
    Respond,
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// Undiscounted reward per agent.
    pub rewards: Vec<f64>,
    /// Round of agreement (1-based); `None` if the horizon expired.
    pub agreement_round: Option<usize>,
    pub coalition: Option<Coalition>,
    /// Number of rounds that were started.
    pub rounds: usize,
}

impl EpisodeResult {
    pub fn agreed(&self) -> bool {
        self.agreement_round.is_some()
    }
}

/// `gamma^(t*-1) * r_i` per agent; all zeros without agreement.
pub fn discounted_return(result: &EpisodeResult, gamma: f64) -> Vec<f64> {
    match result.agreement_round {
        Some(t) => {
            let factor = gamma.powi(t as i32 - 1);
            result.rewards.iter().map(|r| factor * r).collect()
        }
        None => vec![0.0; result.rewards.len()],
    }
}

/// `1/|S|` for members, 0 otherwise.
pub fn egalitarian_payoff(coalition: Coalition, n_agents: usize) -> Result<Vec<f64>> {
    if coalition.is_empty() {
        return Err(Error::Domain("egalitarian split of an empty coalition".into()));
    }
    if coalition.members().any(|i| i >= n_agents) {
        return Err(Error::Domain(format!("{coalition} has members outside {n_agents} agents")));
    }
    let share = 1.0 / coalition.len() as f64;
    Ok((0..n_agents)
        .map(|i| if coalition.contains(i) { share } else { 0.0 })
        .collect())
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Coalitions the current proposer may offer: it is a member and `v(S) > 0`.
pub fn legal_coalitions(proposer: usize, table: &CharacteristicTable) -> Vec<Coalition> {
    table
        .coalitions()
        .filter(|s| s.contains(proposer) && table.value(*s) > VALUE_EPS)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BargainingState {
    pub config: GameConfig,
    /// 1-based round counter.
    pub round: usize,
    pub proposer: usize,
    pub phase: Phase,
    /// Row-major `horizon x 2n`: payoff shares then responses, -1 when unset.
    pub actions_taken: Vec<f64>,
    pub pending: Option<Proposal>,
    pub result: Option<EpisodeResult>,
}

impl BargainingState {
    /// Fresh episode with a uniformly drawn first proposer.
    pub fn reset<R: Rng + ?Sized>(config: GameConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let proposer = rng.random_range(0..config.n_agents);
        Self::reset_with_proposer(config, proposer)
    }

    /// Fresh episode with a fixed first proposer.
    pub fn reset_with_proposer(config: GameConfig, proposer: usize) -> Result<Self> {
        config.validate()?;
        if proposer >= config.n_agents {
            return Err(Error::Domain(format!("proposer {proposer} out of range")));
        }
        Ok(Self {
            config,
            round: 1,
            proposer,
            phase: Phase::Propose,
            actions_taken: vec![-1.0; config.horizon * 2 * config.n_agents],
            pending: None,
            result: None,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    /// Row `round` (1-based) of the history matrix.
    pub fn history_row(&self, round: usize) -> &[f64] {
        let w = 2 * self.config.n_agents;
        &self.actions_taken[(round - 1) * w..round * w]
    }

    fn history_row_mut(&mut self, round: usize) -> &mut [f64] {
        let w = 2 * self.config.n_agents;
        &mut self.actions_taken[(round - 1) * w..round * w]
    }

    pub fn is_terminal(&self) -> bool {
        self.phase == Phase::Terminal
    }

    /// Checks a proposal against the current state without applying it.
    pub fn check_proposal(&self, proposal: &Proposal, table: &CharacteristicTable) -> Result<()> {
        let n = self.config.n_agents;
        let s = proposal.coalition;
        if !s.contains(self.proposer) {
            return Err(Error::RejectedAction(format!(
                "coalition {s} does not contain the proposer {}",
                self.proposer
            )));
        }
        if s.members().any(|i| i >= n) {
            return Err(Error::RejectedAction(format!("coalition {s} names unknown agents")));
        }
        if table.value(s) <= VALUE_EPS {
            return Err(Error::RejectedAction(format!(
                "coalition {s} has non-positive value {}",
                table.value(s)
            )));
        }
        let x = &proposal.payoff;
        if x.len() != n {
            return Err(Error::RejectedAction(format!("payoff has {} entries, expected {n}", x.len())));
        }
        if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::RejectedAction(format!("payoff share {v} outside [0, 1]")));
        }
        if let Some(i) = (0..n).find(|&i| !s.contains(i) && x[i] != 0.0) {
            return Err(Error::RejectedAction(format!("non-member {i} has nonzero share {}", x[i])));
        }
        let total = compensated_sum(x);
        if (total - 1.0).abs() > PAYOFF_EPS {
            return Err(Error::RejectedAction(format!("payoff sums to {total}, not 1")));
        }
        if self.config.egalitarian {
            let share = 1.0 / s.len() as f64;
            if let Some(i) = s.members().find(|&i| (x[i] - share).abs() > PAYOFF_EPS) {
                return Err(Error::RejectedAction(format!(
                    "member {i} share {} is not the egalitarian {share}",
                    x[i]
                )));
            }
        }
        Ok(())
    }

    pub fn step_propose(&mut self, proposal: Proposal, table: &CharacteristicTable) -> Result<()> {
        if self.phase != Phase::Propose {
            return Err(Error::Protocol(format!("propose in phase {:?}", self.phase)));
        }
        self.check_proposal(&proposal, table)?;
        let n = self.config.n_agents;
        let round = self.round;
        self.history_row_mut(round)[..n].copy_from_slice(&proposal.payoff);
        self.pending = Some(proposal);
        self.phase = Phase::Respond;
        Ok(())
    }

    /// The proposer offers nothing this round; payoff cells stay -1.
    pub fn step_pass<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<EpisodeResult>> {
        if self.phase != Phase::Propose {
            return Err(Error::Protocol(format!("pass in phase {:?}", self.phase)));
        }
        Ok(self.advance(rng))
    }

    /// Applies one accept/reject per non-proposer, in agent order.
    pub fn step_respond<R: Rng + ?Sized>(
        &mut self,
        responses: &[bool],
        table: &CharacteristicTable,
        rng: &mut R,
    ) -> Result<Option<EpisodeResult>> {
        if self.phase != Phase::Respond {
            return Err(Error::Protocol(format!("respond in phase {:?}", self.phase)));
        }
        let n = self.config.n_agents;
        if responses.len() != n - 1 {
            return Err(Error::Protocol(format!(
                "{} responses, expected {}",
                responses.len(),
                n - 1
            )));
        }
        let proposal = self.pending.take().expect("respond phase has a pending proposal");
        let proposer = self.proposer;
        let round = self.round;
        let mut accepted_all = true;
        {
            let row = self.history_row_mut(round);
            row[n + proposer] = 1.0;
            for (k, &accept) in responses.iter().enumerate() {
                let agent = if k < proposer { k } else { k + 1 };
                row[n + agent] = if accept { 1.0 } else { 0.0 };
                if proposal.coalition.contains(agent) && !accept {
                    accepted_all = false;
                }
            }
        }

        if accepted_all {
            let value = table.value(proposal.coalition);
            let rewards = (0..n)
                .map(|i| {
                    if proposal.coalition.contains(i) {
                        value * proposal.payoff[i]
                    } else {
                        0.0
                    }
                })
                .collect();
            let result = EpisodeResult {
                rewards,
                agreement_round: Some(round),
                coalition: Some(proposal.coalition),
                rounds: round,
            };
            self.phase = Phase::Terminal;
            self.result = Some(result.clone());
            return Ok(Some(result));
        }
        Ok(self.advance(rng))
    }

    fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<EpisodeResult> {
        if self.round >= self.config.horizon {
            let result = EpisodeResult {
                rewards: vec![0.0; self.config.n_agents],
                agreement_round: None,
                coalition: None,
                rounds: self.round,
            };
            self.phase = Phase::Terminal;
            self.result = Some(result.clone());
            return Some(result);
        }
        self.round += 1;
        self.proposer = rng.random_range(0..self.config.n_agents);
        self.phase = Phase::Propose;
        None
    }
}

/// What one agent sees: every location, the round and the full history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent: usize,
    pub n_agents: usize,
    pub horizon: usize,
    pub round: usize,
    pub locations: Vec<[f64; 4]>,
    pub actions_taken: Vec<f64>,
}

pub fn encode_observation(state: &BargainingState, instance: &ProblemInstance, agent: usize) -> Observation {
    Observation {
        agent,
        n_agents: state.config.n_agents,
        horizon: state.config.horizon,
        round: state.round,
        locations: instance.locations.iter().map(|l| l.as_tuple()).collect(),
        actions_taken: state.actions_taken.clone(),
    }
}

/// One bargaining round as written to an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub seed: u64,
    pub t: usize,
    pub proposer: usize,
    /// `None` when the proposer passed.
    pub coalition_mask: Option<u32>,
    pub payoff: Option<Vec<f64>>,
    /// Per agent; `None` for the proposer and when nobody responded.
    pub responses: Vec<Option<bool>>,
    pub terminal: bool,
    /// Undiscounted rewards, present on the terminal row.
    pub rewards: Option<Vec<f64>>,
}
