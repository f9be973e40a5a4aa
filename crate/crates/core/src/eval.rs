//! Coalition-selection metrics and matchup statistics.
//!
//! Every agent is seated as proposer on every instance and its first
//! proposal is compared with its per-capita optimal coalition. Degenerate
//! instances (`v(N) = 0`) are skipped entirely, and an (instance, agent) pair
//! is skipped when the globally optimal coalition does not contain the agent.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{first_proposal, run_episode, AgentPolicy, EpisodeOutcome};
use crate::bargaining::{discounted_return, GameConfig};
use crate::coalition::{
    build_characteristic_table, global_optimal_coalition, is_degenerate, optimal_coalition_for, CharacteristicTable,
    Coalition, VALUE_EPS,
};
use crate::error::Result;
use crate::instance::{generate_instance, GenerationConfig, ProblemInstance};
use crate::routing::FleetRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    /// Gaps between per-capita values (the reward each member receives).
    #[default]
    PerCapita,
    /// Gaps between raw coalition values.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    Degenerate,
    NotInOptimal,
    ZeroOptimum,
}

/// Instances with their characteristic tables.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub instances: Vec<ProblemInstance>,
    pub tables: Vec<CharacteristicTable>,
    pub table_secs: f64,
}

impl EvalSet {
    /// Instances with seeds `seed..seed + n`.
    pub fn generate(seed: u64, n: usize, gen: &GenerationConfig, rule: FleetRule) -> Result<Self> {
        let instances = (0..n as u64)
            .into_par_iter()
            .map(|k| generate_instance(seed.wrapping_add(k), gen))
            .collect::<Result<Vec<_>>>()?;
        Self::from_instances(instances, rule)
    }

    pub fn from_instances(instances: Vec<ProblemInstance>, rule: FleetRule) -> Result<Self> {
        let start = Instant::now();
        let tables = instances
            .par_iter()
            .map(|inst| build_characteristic_table(inst, rule))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            instances,
            tables,
            table_secs: start.elapsed().as_secs_f64(),
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// One (instance, agent) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub seed: u64,
    pub agent: usize,
    /// `None` when the agent passed.
    pub proposed_mask: Option<u32>,
    pub optimal_mask: u32,
    pub phi: Option<f64>,
    pub eta: Option<f64>,
    pub excluded_reason: Option<Exclusion>,
}

impl PairRecord {
    pub fn correct(&self) -> bool {
        self.proposed_mask == Some(self.optimal_mask)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentStats {
    pub included: usize,
    pub excluded_degenerate: usize,
    pub excluded_not_in_optimal: usize,
    pub excluded_zero_optimum: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub mean_phi: f64,
    pub mean_eta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub table_secs_per_instance: f64,
    pub decision_secs_per_instance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_instances: usize,
    pub degenerate_instances: usize,
    pub gap_mode: GapMode,
    pub per_agent: Vec<AgentStats>,
    pub timing: Timing,
}

impl EvalReport {
    pub fn mean_accuracy(&self) -> f64 {
        self.per_agent.iter().map(|a| a.accuracy).sum::<f64>() / self.per_agent.len() as f64
    }
}

/// `(phi, eta)` for proposing `proposed` when `optimal` was best.
pub fn gap(table: &CharacteristicTable, optimal: Coalition, proposed: Coalition, mode: GapMode) -> (f64, f64) {
    let score = |s: Coalition| match mode {
        GapMode::PerCapita => table.per_capita(s),
        GapMode::Raw => table.value(s),
    };
    let best = score(optimal);
    let phi = best - score(proposed);
    (phi, phi / best)
}

/// Classifies one pair, or returns why it is excluded.
pub fn score_pair(
    table: &CharacteristicTable,
    agent: usize,
    proposed: Option<Coalition>,
    mode: GapMode,
) -> PairRecord {
    let optimal = optimal_coalition_for(agent, table);
    let mut record = PairRecord {
        seed: table.seed,
        agent,
        proposed_mask: proposed.map(Coalition::mask),
        optimal_mask: optimal.mask(),
        phi: None,
        eta: None,
        excluded_reason: None,
    };
    if is_degenerate(table) {
        record.excluded_reason = Some(Exclusion::Degenerate);
    } else if !global_optimal_coalition(table).contains(agent) {
        record.excluded_reason = Some(Exclusion::NotInOptimal);
    } else if table.per_capita(optimal) <= VALUE_EPS {
        record.excluded_reason = Some(Exclusion::ZeroOptimum);
    } else {
        let proposed = proposed.unwrap_or(Coalition::singleton(agent));
        let (phi, eta) = gap(table, optimal, proposed, mode);
        record.phi = Some(phi);
        record.eta = Some(eta);
    }
    record
}

/// Seats each policy as proposer on every instance and scores its first offer.
pub fn evaluate<A: AgentPolicy>(
    policies: &mut [A],
    set: &EvalSet,
    config: GameConfig,
    mode: GapMode,
) -> Result<(EvalReport, Vec<PairRecord>)> {
    let n = config.n_agents;
    let start = Instant::now();
    let mut records = Vec::with_capacity(set.len() * n);
    for (inst, table) in set.instances.iter().zip(&set.tables) {
        for (agent, policy) in policies.iter_mut().enumerate() {
            let proposed = first_proposal(policy, agent, inst, table, config, inst.seed)?;
            records.push(score_pair(table, agent, proposed, mode));
        }
    }
    let decision_secs = start.elapsed().as_secs_f64();
    let report = summarize(&records, set, n, mode, decision_secs);
    Ok((report, records))
}

pub fn summarize(records: &[PairRecord], set: &EvalSet, n_agents: usize, mode: GapMode, decision_secs: f64) -> EvalReport {
    let mut per_agent = vec![AgentStats::default(); n_agents];
    let mut phi_sum = vec![0.0; n_agents];
    let mut eta_sum = vec![0.0; n_agents];
    for r in records {
        let stats = &mut per_agent[r.agent];
        match r.excluded_reason {
            Some(Exclusion::Degenerate) => stats.excluded_degenerate += 1,
            Some(Exclusion::NotInOptimal) => stats.excluded_not_in_optimal += 1,
            Some(Exclusion::ZeroOptimum) => stats.excluded_zero_optimum += 1,
            None => {
                stats.included += 1;
                if r.correct() {
                    stats.correct += 1;
                }
                phi_sum[r.agent] += r.phi.unwrap_or(0.0);
                eta_sum[r.agent] += r.eta.unwrap_or(0.0);
            }
        }
    }
    for (i, stats) in per_agent.iter_mut().enumerate() {
        if stats.included > 0 {
            let k = stats.included as f64;
            stats.accuracy = stats.correct as f64 / k;
            stats.mean_phi = phi_sum[i] / k;
            stats.mean_eta = eta_sum[i] / k;
        }
    }
    let n = set.len().max(1) as f64;
    EvalReport {
        n_instances: set.len(),
        degenerate_instances: set.tables.iter().filter(|t| is_degenerate(t)).count(),
        gap_mode: mode,
        per_agent,
        timing: Timing {
            table_secs_per_instance: set.table_secs / n,
            decision_secs_per_instance: decision_secs / n,
        },
    }
}

/// Per-agent accuracy of the first proposal.
pub fn proposal_accuracy<A: AgentPolicy>(policies: &mut [A], set: &EvalSet, config: GameConfig) -> Result<Vec<f64>> {
    let (report, _) = evaluate(policies, set, config, GapMode::PerCapita)?;
    Ok(report.per_agent.iter().map(|a| a.accuracy).collect())
}

/// Per-agent mean `(phi, eta)`.
pub fn optimality_gaps<A: AgentPolicy>(
    policies: &mut [A],
    set: &EvalSet,
    config: GameConfig,
    mode: GapMode,
) -> Result<Vec<(f64, f64)>> {
    let (report, _) = evaluate(policies, set, config, mode)?;
    Ok(report.per_agent.iter().map(|a| (a.mean_phi, a.mean_eta)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchupStats {
    pub episodes: usize,
    pub agreements: usize,
    pub agreement_rate: f64,
    /// Mean over agreed episodes; 0 if none agreed.
    pub mean_agreement_round: f64,
    pub mean_discounted_return: Vec<f64>,
    /// Episodes whose first proposer belongs to the globally optimal coalition.
    pub first_proposer_in_optimal: usize,
    pub secs_per_instance: f64,
}

/// Plays one full episode per instance; episode `k` uses seed `seed + k`.
pub fn run_matchup<A: AgentPolicy>(
    policies: &mut [A],
    set: &EvalSet,
    config: GameConfig,
    seed: u64,
) -> Result<(MatchupStats, Vec<EpisodeOutcome>)> {
    let n = config.n_agents;
    let start = Instant::now();
    let mut outcomes = Vec::with_capacity(set.len());
    for (k, (inst, table)) in set.instances.iter().zip(&set.tables).enumerate() {
        outcomes.push(run_episode(inst, table, config, policies, seed.wrapping_add(k as u64), None)?);
    }
    let elapsed = start.elapsed().as_secs_f64();

    let agreed: Vec<&EpisodeOutcome> = outcomes.iter().filter(|o| o.result.agreed()).collect();
    let mut returns = vec![0.0; n];
    for o in &outcomes {
        for (acc, g) in returns.iter_mut().zip(discounted_return(&o.result, config.gamma)) {
            *acc += g;
        }
    }
    let episodes = outcomes.len();
    let denom = episodes.max(1) as f64;
    let stats = MatchupStats {
        episodes,
        agreements: agreed.len(),
        agreement_rate: agreed.len() as f64 / denom,
        mean_agreement_round: if agreed.is_empty() {
            0.0
        } else {
            agreed.iter().map(|o| o.result.agreement_round.unwrap() as f64).sum::<f64>() / agreed.len() as f64
        },
        mean_discounted_return: returns.into_iter().map(|r| r / denom).collect(),
        first_proposer_in_optimal: outcomes
            .iter()
            .zip(&set.tables)
            .filter(|(o, t)| global_optimal_coalition(t).contains(o.first_proposer))
            .count(),
        secs_per_instance: elapsed / denom,
    };
    Ok((stats, outcomes))
}

/// Fraction of instances with seeds `seed..seed + n` whose grand coalition is worthless.
pub fn degenerate_rate(n: usize, seed: u64, gen: &GenerationConfig, rule: FleetRule) -> Result<f64> {
    let flags = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let inst = generate_instance(seed.wrapping_add(k), gen)?;
            Ok(is_degenerate(&build_characteristic_table(&inst, rule)?))
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(flags.iter().filter(|&&d| d).count() as f64 / n.max(1) as f64)
}
