//! Characteristic function of the collaborative routing game.
//!
//! `v(S)` is the cost saving of coalition `S`: the members' stand-alone tour
//! costs minus the optimal multi-depot cost of serving all their customers
//! together. Singletons and the empty set are 0 by construction.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{distance_matrix, DistanceMatrix, ProblemInstance};
use crate::routing::{solve_mdvrp, solve_single_agent, FleetRule, InstanceRouter, RoutingSolution};

/// Tolerance below which a coalition value counts as zero.
pub const VALUE_EPS: f64 = 1e-9;

/// A subset of agents as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coalition(u32);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);

    pub const fn from_mask(mask: u32) -> Self {
        Self(mask)
    }

    pub const fn mask(self) -> u32 {
        self.0
    }

    pub fn grand(n: usize) -> Self {
        Self(((1u64 << n) - 1) as u32)
    }

    pub fn singleton(i: usize) -> Self {
        Self(1 << i)
    }

    pub fn from_members<I: IntoIterator<Item = usize>>(members: I) -> Self {
        Self(members.into_iter().fold(0, |m, i| m | (1 << i)))
    }

    pub fn contains(self, i: usize) -> bool {
        i < 32 && self.0 & (1 << i) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn with(self, i: usize) -> Self {
        Self(self.0 | (1 << i))
    }

    pub fn union(self, other: Self) -> Self {
        Self(self.0 | other.0)
    }

    pub fn is_disjoint(self, other: Self) -> bool {
        self.0 & other.0 == 0
    }

    pub fn is_subset_of(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&i| self.0 & (1 << i) != 0)
    }

    /// Every subset of an `n`-agent set, in bitmask order.
    pub fn all(n: usize) -> impl Iterator<Item = Coalition> {
        (0..(1u32 << n)).map(Coalition)
    }
}

impl fmt::Debug for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, i) in self.members().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
        }
        f.write_str("}")
    }
}

/// `v(S)` for every coalition of one instance, plus stand-alone costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicTable {
    pub n_agents: usize,
    pub seed: u64,
    /// Indexed by coalition mask.
    pub values: Vec<f64>,
    /// Optimal stand-alone tour cost per agent.
    pub standalone_costs: Vec<f64>,
}

impl CharacteristicTable {
    /// Builds a table directly from values (e.g. hand-worked examples).
    /// Singletons and the empty set are forced to 0.
    pub fn from_values(n_agents: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != 1 << n_agents {
            return Err(Error::Domain(format!(
                "{} values given for {} coalitions",
                values.len(),
                1 << n_agents
            )));
        }
        let mut values = values;
        for (mask, v) in values.iter_mut().enumerate() {
            if mask.count_ones() <= 1 {
                *v = 0.0;
            }
        }
        Ok(Self {
            n_agents,
            seed: 0,
            values,
            standalone_costs: vec![0.0; n_agents],
        })
    }

    pub fn value(&self, s: Coalition) -> f64 {
        self.values[s.mask() as usize]
    }

    pub fn per_capita(&self, s: Coalition) -> f64 {
        if s.is_empty() {
            0.0
        } else {
            self.value(s) / s.len() as f64
        }
    }

    pub fn grand(&self) -> Coalition {
        Coalition::grand(self.n_agents)
    }

    pub fn coalitions(&self) -> impl Iterator<Item = Coalition> {
        Coalition::all(self.n_agents)
    }

    /// Lists every violated table law (0-normalisation, nonnegativity,
    /// superadditivity, grand coalition maximal).
    pub fn law_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for s in self.coalitions() {
            let v = self.value(s);
            if s.len() <= 1 && v != 0.0 {
                out.push(format!("v({s}) = {v} is not exactly 0"));
            }
            if !(v >= 0.0) {
                out.push(format!("v({s}) = {v} is negative"));
            }
            for t in self.coalitions() {
                if s.mask() < t.mask() && s.is_disjoint(t) {
                    let u = self.value(s.union(t));
                    if u < v + self.value(t) - VALUE_EPS {
                        out.push(format!("v({s} u {t}) = {u} < v({s}) + v({t})"));
                    }
                }
            }
            if v > self.value(self.grand()) + VALUE_EPS {
                out.push(format!("v({s}) = {v} exceeds v(N)"));
            }
        }
        out
    }
}

/// Cost savings of `s` given precomputed stand-alone costs and its plan.
fn gain_from(standalone: &[f64], s: Coalition, merged: &RoutingSolution) -> f64 {
    if s.len() <= 1 {
        return 0.0;
    }
    let mut pre = 0.0;
    for i in s.members() {
        pre += standalone[i];
    }
    (pre - merged.total_cost).max(0.0)
}

pub fn collaboration_gain(s: Coalition, instance: &ProblemInstance, rule: FleetRule) -> Result<f64> {
    if s.len() <= 1 {
        return Ok(0.0);
    }
    let dm = distance_matrix(instance);
    let standalone = standalone_costs(instance, &dm)?;
    let merged = solve_mdvrp(s, instance, &dm, rule)?;
    Ok(gain_from(&standalone, s, &merged))
}

fn standalone_costs(instance: &ProblemInstance, dm: &DistanceMatrix) -> Result<Vec<f64>> {
    (0..instance.n_agents)
        .map(|i| solve_single_agent(i, instance, dm).map(|r| r.cost))
        .collect()
}

pub fn build_characteristic_table(instance: &ProblemInstance, rule: FleetRule) -> Result<CharacteristicTable> {
    build_table_with_plans(instance, rule).map(|(table, _)| table)
}

/// Largest instance for which all coalitions share one set of per-agent tours.
const SHARED_TABLE_CUSTOMERS: usize = 16;

/// Same as [`build_characteristic_table`] but also returns the merged plan
/// of every coalition with at least two members (indexed by mask).
pub fn build_table_with_plans(
    instance: &ProblemInstance,
    rule: FleetRule,
) -> Result<(CharacteristicTable, Vec<Option<RoutingSolution>>)> {
    let n = instance.n_agents;
    let dm = distance_matrix(instance);
    let router = if instance.n_customers() <= SHARED_TABLE_CUSTOMERS {
        Some(InstanceRouter::new(instance, &dm)?)
    } else {
        None
    };
    let standalone = match &router {
        Some(r) => (0..n).map(|i| r.single_agent(i).map(|t| t.cost)).collect::<Result<Vec<_>>>()?,
        None => standalone_costs(instance, &dm)?,
    };
    let mut values = vec![0.0; 1 << n];
    let mut plans = vec![None; 1 << n];
    for s in Coalition::all(n).filter(|s| s.len() >= 2) {
        let plan = match &router {
            Some(r) => r.mdvrp(s, rule)?,
            None => solve_mdvrp(s, instance, &dm, rule)?,
        };
        values[s.mask() as usize] = gain_from(&standalone, s, &plan);
        plans[s.mask() as usize] = Some(plan);
    }
    Ok((
        CharacteristicTable {
            n_agents: n,
            seed: instance.seed,
            values,
            standalone_costs: standalone,
        },
        plans,
    ))
}

pub fn per_capita(v: f64, size: usize) -> Result<f64> {
    if size == 0 {
        return Err(Error::Domain("per-capita value of an empty coalition".into()));
    }
    Ok(v / size as f64)
}

/// Orders candidates by per-capita value, then smaller cardinality, then
/// smaller mask. Returns true if `a` beats `b`.
fn better(table: &CharacteristicTable, a: Coalition, b: Coalition) -> bool {
    let (pa, pb) = (table.per_capita(a), table.per_capita(b));
    if pa != pb {
        return pa > pb;
    }
    (a.len(), a.mask()) < (b.len(), b.mask())
}

fn argmax(table: &CharacteristicTable, candidates: impl Iterator<Item = Coalition>) -> Coalition {
    candidates
        .reduce(|best, s| if better(table, s, best) { s } else { best })
        .expect("at least one candidate")
}

/// Coalition containing `agent` that maximises its per-capita reward.
pub fn optimal_coalition_for(agent: usize, table: &CharacteristicTable) -> Coalition {
    argmax(
        table,
        table.coalitions().filter(|s| s.contains(agent) && s.len() >= 2),
    )
}

/// Coalition (of at least two agents) with the highest per-capita value.
pub fn global_optimal_coalition(table: &CharacteristicTable) -> Coalition {
    argmax(table, table.coalitions().filter(|s| s.len() >= 2))
}

pub fn is_degenerate(table: &CharacteristicTable) -> bool {
    table.value(table.grand()) <= VALUE_EPS
}

/// Per-agent revenue, cost and profit before and after collaboration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitReport {
    pub revenue: Vec<f64>,
    pub pre_cost: Vec<f64>,
    pub post_cost: Vec<f64>,
    pub pre_profit: Vec<f64>,
    pub post_profit: Vec<f64>,
    pub pre_welfare: f64,
    pub post_welfare: f64,
}

impl ProfitReport {
    pub fn collaboration_gain(&self) -> f64 {
        self.post_welfare - self.pre_welfare
    }
}

/// Profit accounting for coalition `s`: one unit of revenue per delivery,
/// cost is distance driven. Non-members keep their stand-alone tours.
pub fn profit_report(s: Coalition, instance: &ProblemInstance, rule: FleetRule) -> Result<ProfitReport> {
    let n = instance.n_agents;
    let dm = distance_matrix(instance);
    let revenue: Vec<f64> = (0..n).map(|i| instance.customers_of(i).len() as f64).collect();
    let pre_cost = standalone_costs(instance, &dm)?;
    let mut post_cost = pre_cost.clone();
    if s.len() >= 2 {
        let plan = solve_mdvrp(s, instance, &dm, rule)?;
        for r in &plan.routes {
            post_cost[r.vehicle] = r.cost;
        }
    }
    let pre_profit: Vec<f64> = revenue.iter().zip(&pre_cost).map(|(r, c)| r - c).collect();
    let post_profit: Vec<f64> = revenue.iter().zip(&post_cost).map(|(r, c)| r - c).collect();
    Ok(ProfitReport {
        pre_welfare: pre_profit.iter().sum(),
        post_welfare: post_profit.iter().sum(),
        revenue,
        pre_cost,
        post_cost,
        pre_profit,
        post_profit,
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Worked three-agent table: v(N)=0.88, v({1,2})=0.76, v({1,3})=0.24,
    /// v({2,3})=0.01, with agents 1..3 mapped to indices 0..2.
    pub fn worked_table() -> CharacteristicTable {
        let mut values = vec![0.0; 8];
        values[0b011] = 0.76;
        values[0b101] = 0.24;
        values[0b110] = 0.01;
        values[0b111] = 0.88;
        CharacteristicTable::from_values(3, values).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::worked_table;
    use super::*;
    use crate::instance::{generate_instance, GenerationConfig, Location};

    #[test]
    fn coalition_basics() {
        let s = Coalition::from_members([0, 2]);
        assert_eq!(s.mask(), 0b101);
        assert_eq!(s.len(), 2);
        assert!(s.contains(2) && !s.contains(1));
        assert_eq!(s.to_string(), "{0,2}");
        assert_eq!(Coalition::grand(3).mask(), 7);
        assert_eq!(Coalition::all(3).count(), 8);
        assert!(Coalition::singleton(1).is_disjoint(s));
        assert!(s.is_subset_of(Coalition::grand(3)));
    }

    #[test]
    fn per_capita_values() {
        assert!((per_capita(0.88, 3).unwrap() - 0.293_333_333_333_333_3).abs() < 1e-15);
        assert_eq!(format!("{:.2}", per_capita(0.88, 3).unwrap()), "0.29");
        assert!((per_capita(0.76, 2).unwrap() - 0.38).abs() < 1e-15);
        assert_eq!(per_capita(0.0, 4).unwrap(), 0.0);
        assert!(matches!(per_capita(1.0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn worked_table_is_valid() {
        let t = worked_table();
        assert!(t.law_violations().is_empty(), "{:?}", t.law_violations());
        assert!(!is_degenerate(&t));
        assert_eq!(optimal_coalition_for(0, &t), Coalition::from_members([0, 1]));
        assert_eq!(optimal_coalition_for(1, &t), Coalition::from_members([0, 1]));
        // agent 3 (index 2): 0.88/3 beats 0.24/2 and 0.01/2
        assert_eq!(optimal_coalition_for(2, &t), Coalition::grand(3));
        assert_eq!(global_optimal_coalition(&t), Coalition::from_members([0, 1]));
    }

    #[test]
    fn all_zero_tiebreak() {
        let t = CharacteristicTable::from_values(3, vec![0.0; 8]).unwrap();
        assert!(is_degenerate(&t));
        assert_eq!(optimal_coalition_for(0, &t), Coalition::from_mask(0b011));
        assert_eq!(optimal_coalition_for(1, &t), Coalition::from_mask(0b011));
        assert_eq!(optimal_coalition_for(2, &t), Coalition::from_mask(0b101));
        assert_eq!(global_optimal_coalition(&t), Coalition::from_mask(0b011));
    }

    #[test]
    fn sole_grand_value() {
        let mut v = vec![0.0; 8];
        v[7] = 0.5;
        let t = CharacteristicTable::from_values(3, v).unwrap();
        assert_eq!(global_optimal_coalition(&t), Coalition::grand(3));
    }

    #[test]
    fn singletons_zero() {
        let inst = generate_instance(5, &GenerationConfig::default()).unwrap();
        for i in 0..3 {
            assert_eq!(collaboration_gain(Coalition::singleton(i), &inst, FleetRule::default()).unwrap(), 0.0);
        }
        let t = build_characteristic_table(&inst, FleetRule::default()).unwrap();
        assert_eq!(t.values.len(), 8);
        assert!(t.law_violations().is_empty());
    }

    #[test]
    fn customers_at_depots_degenerate() {
        let mut inst = generate_instance(5, &GenerationConfig::default()).unwrap();
        let depots: Vec<Location> = inst.locations[..3].to_vec();
        for l in inst.locations.iter_mut().filter(|l| !l.is_depot) {
            l.x = depots[l.owner].x;
            l.y = depots[l.owner].y;
        }
        let t = build_characteristic_table(&inst, FleetRule::default()).unwrap();
        assert!(t.values.iter().all(|&v| v == 0.0));
        assert!(is_degenerate(&t));
        assert_eq!(collaboration_gain(Coalition::grand(3), &inst, FleetRule::default()).unwrap(), 0.0);
    }

    #[test]
    fn gain_matches_welfare_difference() {
        for seed in 0..100 {
            let inst = generate_instance(seed, &GenerationConfig::default()).unwrap();
            let gain = collaboration_gain(Coalition::grand(3), &inst, FleetRule::default()).unwrap();
            let report = profit_report(Coalition::grand(3), &inst, FleetRule::default()).unwrap();
            assert!((gain - report.collaboration_gain()).abs() < 1e-9);
            for i in 0..3 {
                assert_eq!(report.pre_profit[i], report.revenue[i] - report.pre_cost[i]);
            }
        }
    }
}
