//! Bots that play the bargaining game, and the episode loop that drives them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bargaining::{
    encode_observation, legal_coalitions, BargainingState, EpisodeResult, GameConfig, Observation, Proposal,
    TraceRow,
};
use crate::coalition::{optimal_coalition_for, CharacteristicTable, Coalition};
use crate::error::{Error, Result};
use crate::instance::ProblemInstance;

#[derive(Debug, Clone, PartialEq)]
pub enum ProposeAction {
    Offer(Proposal),
    Pass,
}

/// A decision-maker for one seat of the game.
///
/// `table` is the characteristic function of the current instance. Only the
/// oracle bot reads it for decisions; the random bot uses it to stay legal.
pub trait AgentPolicy: Send {
    fn name(&self) -> String;

    fn propose(&mut self, obs: &Observation, table: Option<&CharacteristicTable>) -> Result<ProposeAction>;

    fn respond(&mut self, obs: &Observation, proposal: &Proposal, table: Option<&CharacteristicTable>) -> Result<bool>;

    /// Called before every episode with a seed derived from the episode seed.
    fn reseed(&mut self, _seed: u64) {}
}

impl<T: AgentPolicy + ?Sized> AgentPolicy for Box<T> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn propose(&mut self, obs: &Observation, table: Option<&CharacteristicTable>) -> Result<ProposeAction> {
        (**self).propose(obs, table)
    }

    fn respond(&mut self, obs: &Observation, proposal: &Proposal, table: Option<&CharacteristicTable>) -> Result<bool> {
        (**self).respond(obs, proposal, table)
    }

    fn reseed(&mut self, seed: u64) {
        (**self).reseed(seed)
    }
}

/// Always offers the grand coalition, always accepts.
#[derive(Debug, Clone, Default)]
pub struct HeuristicBot;

impl AgentPolicy for HeuristicBot {
    fn name(&self) -> String {
        "heuristic".into()
    }

    fn propose(&mut self, obs: &Observation, _table: Option<&CharacteristicTable>) -> Result<ProposeAction> {
        Proposal::egalitarian(Coalition::grand(obs.n_agents), obs.n_agents).map(ProposeAction::Offer)
    }

    fn respond(&mut self, _obs: &Observation, _p: &Proposal, _table: Option<&CharacteristicTable>) -> Result<bool> {
        Ok(true)
    }
}

/// Offers a uniformly random coalition of two or more agents containing
/// itself; always accepts. With a table, the draw is restricted to
/// positive-value coalitions whenever there is one.
#[derive(Debug, Clone)]
pub struct RandomBot {
    rng: ChaCha8Rng,
}

impl RandomBot {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn candidates(agent: usize, n_agents: usize, table: Option<&CharacteristicTable>) -> Vec<Coalition> {
        let all: Vec<Coalition> = Coalition::all(n_agents)
            .filter(|s| s.contains(agent) && s.len() >= 2)
            .collect();
        match table {
            Some(t) => {
                let legal = legal_coalitions(agent, t);
                if legal.is_empty() {
                    all
                } else {
                    legal
                }
            }
            None => all,
        }
    }
}

impl AgentPolicy for RandomBot {
    fn name(&self) -> String {
        "random".into()
    }

    fn propose(&mut self, obs: &Observation, table: Option<&CharacteristicTable>) -> Result<ProposeAction> {
        let candidates = Self::candidates(obs.agent, obs.n_agents, table);
        let s = candidates[self.rng.random_range(0..candidates.len())];
        Proposal::egalitarian(s, obs.n_agents).map(ProposeAction::Offer)
    }

    fn respond(&mut self, _obs: &Observation, _p: &Proposal, _table: Option<&CharacteristicTable>) -> Result<bool> {
        Ok(true)
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

/// Reads the characteristic function. Proposes its own per-capita optimum
/// and accepts an offer iff its share of `v(S)` is at least
/// `threshold * (own optimal per-capita value)`.
#[derive(Debug, Clone)]
pub struct OracleBot {
    pub threshold: f64,
}

impl OracleBot {
    pub fn new(threshold: f64) -> Self {
        Self { threshold }
    }
}

impl Default for OracleBot {
    fn default() -> Self {
        Self::new(GameConfig::default().gamma)
    }
}

fn require_table(table: Option<&CharacteristicTable>) -> Result<&CharacteristicTable> {
    table.ok_or_else(|| Error::Config("oracle bot needs the characteristic table".into()))
}

impl AgentPolicy for OracleBot {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn propose(&mut self, obs: &Observation, table: Option<&CharacteristicTable>) -> Result<ProposeAction> {
        let table = require_table(table)?;
        Proposal::egalitarian(optimal_coalition_for(obs.agent, table), obs.n_agents).map(ProposeAction::Offer)
    }

    fn respond(&mut self, obs: &Observation, proposal: &Proposal, table: Option<&CharacteristicTable>) -> Result<bool> {
        let table = require_table(table)?;
        let i = obs.agent;
        let offered = proposal.payoff[i] * table.value(proposal.coalition);
        let best = table.per_capita(optimal_coalition_for(i, table));
        Ok(offered >= self.threshold * best)
    }
}

/// Seed for agent `agent`'s private stream in the episode with `seed`.
pub fn agent_seed(seed: u64, agent: usize) -> u64 {
    // splitmix64 finaliser over (seed, agent)
    let mut z = seed ^ (agent as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub result: EpisodeResult,
    pub trace: Vec<TraceRow>,
    /// Who proposed in round 1 and what they asked for (`None` = pass).
    pub first_proposer: usize,
    pub first_proposal: Option<Coalition>,
}

/// Plays one episode to termination.
///
/// Proposers with no legal coalition pass automatically. An offer that
/// fails the legality check is also converted into a pass; the trace
/// records the attempted coalition with `payoff = None`.
pub fn run_episode<A: AgentPolicy>(
    instance: &ProblemInstance,
    table: &CharacteristicTable,
    config: GameConfig,
    agents: &mut [A],
    seed: u64,
    first_proposer: Option<usize>,
) -> Result<EpisodeOutcome> {
    if agents.len() != config.n_agents {
        return Err(Error::Config(format!(
            "{} agents supplied for a {}-agent game",
            agents.len(),
            config.n_agents
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (i, a) in agents.iter_mut().enumerate() {
        a.reseed(agent_seed(seed, i));
    }
    let mut state = match first_proposer {
        Some(p) => BargainingState::reset_with_proposer(config, p)?,
        None => BargainingState::reset(config, &mut rng)?,
    };
    let first = state.proposer;
    let mut first_proposal = None;
    let mut trace = Vec::new();
    let n = config.n_agents;

    loop {
        let proposer = state.proposer;
        let t = state.round;
        let mut row = TraceRow {
            seed,
            t,
            proposer,
            coalition_mask: None,
            payoff: None,
            responses: vec![None; n],
            terminal: false,
            rewards: None,
        };

        let action = if legal_coalitions(proposer, table).is_empty() {
            ProposeAction::Pass
        } else {
            let obs = encode_observation(&state, instance, proposer);
            agents[proposer].propose(&obs, Some(table))?
        };
        if t == 1 {
            first_proposal = match &action {
                ProposeAction::Offer(p) => Some(p.coalition),
                ProposeAction::Pass => None,
            };
        }

        let done = match action {
            ProposeAction::Offer(p) if state.check_proposal(&p, table).is_ok() => {
                row.coalition_mask = Some(p.coalition.mask());
                row.payoff = Some(p.payoff.clone());
                state.step_propose(p.clone(), table)?;
                let mut responses = Vec::with_capacity(n - 1);
                for j in (0..n).filter(|&j| j != proposer) {
                    let obs = encode_observation(&state, instance, j);
                    let accept = agents[j].respond(&obs, &p, Some(table))?;
                    row.responses[j] = Some(accept);
                    responses.push(accept);
                }
                state.step_respond(&responses, table, &mut rng)?
            }
            ProposeAction::Offer(p) => {
                row.coalition_mask = Some(p.coalition.mask());
                state.step_pass(&mut rng)?
            }
            ProposeAction::Pass => state.step_pass(&mut rng)?,
        };

        if let Some(result) = done {
            row.terminal = true;
            row.rewards = Some(result.rewards.clone());
            trace.push(row);
            return Ok(EpisodeOutcome {
                result,
                trace,
                first_proposer: first,
                first_proposal,
            });
        }
        trace.push(row);
    }
}

/// First-round proposal of `agent` seated as proposer on a fresh state.
pub fn first_proposal<A: AgentPolicy + ?Sized>(
    agent: &mut A,
    seat: usize,
    instance: &ProblemInstance,
    table: &CharacteristicTable,
    config: GameConfig,
    seed: u64,
) -> Result<Option<Coalition>> {
    agent.reseed(agent_seed(seed, seat));
    let state = BargainingState::reset_with_proposer(config, seat)?;
    let obs = encode_observation(&state, instance, seat);
    Ok(match agent.propose(&obs, Some(table))? {
        ProposeAction::Offer(p) => Some(p.coalition),
        ProposeAction::Pass => None,
    })
}
