//! Exact routing solvers.
//!
//! Pre-collaboration cost of an agent is the optimal closed tour from its
//! depot through its own customers. Post-collaboration cost of a coalition is
//! the optimal multi-depot plan: every customer of every member is served
//! exactly once and each vehicle returns to its own depot. Whether a vehicle
//! may stay at its depot is governed by [`FleetRule`]. Capacity never binds.
//!
//! Tours are solved by Held-Karp over bitmask subsets. Multi-depot plans
//! enumerate customer-to-vehicle assignments in lexicographic order and look
//! up per-vehicle subset tour costs from one table per vehicle.
//!
//! All route costs are summed left to right in visit order
//! (depot, c1, ..., ck, depot) and plan totals in vehicle order, so equal
//! plans produce bit-identical costs regardless of which solver found them.

use serde::{Deserialize, Serialize};

use crate::coalition::Coalition;
use crate::error::{Error, Result};
use crate::instance::{DistanceMatrix, ProblemInstance};

/// Largest customer set a single Held-Karp table may cover.
pub const MAX_TOUR_CUSTOMERS: usize = 20;

/// Default cap on `vehicles^customers` for assignment enumeration.
pub const DEFAULT_ASSIGNMENT_BUDGET: u64 = 20_000_000;

/// Largest problem the permutation oracle accepts.
pub const ORACLE_MAX_CUSTOMERS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverId {
    HeldKarp,
    AssignmentHeldKarp,
    BruteForce,
}

/// Whether every member's vehicle must make at least one delivery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FleetRule {
    /// A vehicle may drive the empty depot-to-depot route at zero cost.
    #[default]
    IdleAllowed,
    /// Every vehicle serves at least one customer.
    EveryVehicleDelivers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub vehicle: usize,
    /// Location indices of visited customers, depot excluded.
    pub order: Vec<usize>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingSolution {
    pub routes: Vec<Route>,
    pub total_cost: f64,
    pub solver: SolverId,
}

/// Vehicle capacity and per-customer demand. Kept in the model but fixed so
/// that it never binds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityConfig {
    pub capacity: u64,
    pub demand: u64,
}

impl CapacityConfig {
    pub fn non_binding(n_customers: usize) -> Self {
        Self {
            capacity: n_customers as u64 + 1,
            demand: 1,
        }
    }

    pub fn binds(&self, n_customers: usize) -> bool {
        self.demand * n_customers as u64 > self.capacity
    }
}

/// Cost of the closed tour depot -> order... -> depot, summed in visit order.
pub fn route_cost(dm: &DistanceMatrix, depot: usize, order: &[usize]) -> f64 {
    let mut cost = 0.0;
    let mut prev = depot;
    for &c in order {
        cost += dm.get(prev, c);
        prev = c;
    }
    cost + dm.get(prev, depot)
}

/// Held-Karp table for one depot over a fixed customer list: optimal closed
/// tour cost (and order) for every subset of that list.
pub struct SubsetTours {
    depot: usize,
    customers: Vec<usize>,
    /// `paths[mask * k + j]`: cheapest open path depot -> mask, ending at customer j.
    paths: Vec<f64>,
    pred: Vec<u8>,
    closed: Vec<f64>,
    last: Vec<u8>,
}

const NO_NODE: u8 = u8::MAX;

impl SubsetTours {
    pub fn new(dm: &DistanceMatrix, depot: usize, customers: &[usize]) -> Result<Self> {
        let k = customers.len();
        if k > MAX_TOUR_CUSTOMERS {
            return Err(Error::SizeLimit(format!(
                "{k} customers exceed the Held-Karp limit of {MAX_TOUR_CUSTOMERS}"
            )));
        }
        let n_masks = 1usize << k;
        let mut paths = vec![f64::INFINITY; n_masks * k];
        let mut pred = vec![NO_NODE; n_masks * k];
        for j in 0..k {
            paths[(1 << j) * k + j] = dm.get(depot, customers[j]);
        }
        for mask in 1..n_masks {
            if mask.count_ones() < 2 {
                continue;
            }
            for j in 0..k {
                if mask & (1 << j) == 0 {
                    continue;
                }
                let rest = mask ^ (1 << j);
                let mut best = f64::INFINITY;
                let mut best_p = NO_NODE;
                for p in 0..k {
                    if rest & (1 << p) == 0 {
                        continue;
                    }
                    let c = paths[rest * k + p] + dm.get(customers[p], customers[j]);
                    if c < best {
                        best = c;
                        best_p = p as u8;
                    }
                }
                paths[mask * k + j] = best;
                pred[mask * k + j] = best_p;
            }
        }

        let mut closed = vec![0.0; n_masks];
        let mut last = vec![NO_NODE; n_masks];
        for mask in 1..n_masks {
            let mut best = f64::INFINITY;
            for j in 0..k {
                if mask & (1 << j) == 0 {
                    continue;
                }
                let c = paths[mask * k + j] + dm.get(customers[j], depot);
                if c < best {
                    best = c;
                    last[mask] = j as u8;
                }
            }
            closed[mask] = best;
        }

        Ok(Self {
            depot,
            customers: customers.to_vec(),
            paths,
            pred,
            closed,
            last,
        })
    }

    pub fn depot(&self) -> usize {
        self.depot
    }

    /// Optimal closed-tour cost over the customers selected by `mask`; 0 for
    /// the empty set.
    #[inline]
    pub fn cost(&self, mask: usize) -> f64 {
        self.closed[mask]
    }

    /// Visit order (location indices) realising `cost(mask)`.
    pub fn order(&self, mask: usize) -> Vec<usize> {
        let k = self.customers.len();
        let mut order = Vec::with_capacity(mask.count_ones() as usize);
        if mask == 0 {
            return order;
        }
        let mut j = self.last[mask];
        let mut m = mask;
        while j != NO_NODE {
            order.push(self.customers[j as usize]);
            let p = self.pred[m * k + j as usize];
            m ^= 1 << j;
            j = p;
        }
        debug_assert_eq!(m, 0);
        debug_assert!(self.paths[mask * k + self.last[mask] as usize].is_finite());
        order.reverse();
        order
    }
}

/// Optimal single-vehicle tour for `agent` over its own customers.
pub fn solve_single_agent(agent: usize, instance: &ProblemInstance, dm: &DistanceMatrix) -> Result<Route> {
    if agent >= instance.n_agents {
        return Err(Error::Domain(format!("agent {agent} out of range")));
    }
    let customers = instance.customers_of(agent);
    if customers.is_empty() {
        return Err(Error::Infeasible(format!("agent {agent} has no customers")));
    }
    let tours = SubsetTours::new(dm, instance.depot(agent), &customers)?;
    let full = (1usize << customers.len()) - 1;
    Ok(Route {
        vehicle: agent,
        order: tours.order(full),
        cost: tours.cost(full),
    })
}

fn coalition_customers(
    coalition: Coalition,
    instance: &ProblemInstance,
    rule: FleetRule,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if coalition.is_empty() {
        return Err(Error::Domain("empty coalition".into()));
    }
    let members: Vec<usize> = coalition.members().collect();
    if let Some(&m) = members.iter().find(|&&m| m >= instance.n_agents) {
        return Err(Error::Domain(format!("coalition member {m} out of range")));
    }
    let mut customers = Vec::new();
    for &m in &members {
        let own = instance.customers_of(m);
        if own.is_empty() && rule == FleetRule::EveryVehicleDelivers {
            return Err(Error::Infeasible(format!(
                "agent {m} has no customers, so its vehicle cannot make a delivery"
            )));
        }
        customers.extend(own);
    }
    Ok((members, customers))
}

/// Optimal multi-depot plan for the members of `coalition`. Ties go to the
/// lexicographically smallest assignment vector (customers in location
/// order, vehicles in agent order).
pub fn solve_mdvrp(
    coalition: Coalition,
    instance: &ProblemInstance,
    dm: &DistanceMatrix,
    rule: FleetRule,
) -> Result<RoutingSolution> {
    solve_mdvrp_with_budget(coalition, instance, dm, rule, DEFAULT_ASSIGNMENT_BUDGET)
}

pub fn solve_mdvrp_with_budget(
    coalition: Coalition,
    instance: &ProblemInstance,
    dm: &DistanceMatrix,
    rule: FleetRule,
    budget: u64,
) -> Result<RoutingSolution> {
    let (members, customers) = coalition_customers(coalition, instance, rule)?;
    check_budget(members.len(), customers.len(), budget)?;
    let tables = members
        .iter()
        .map(|&v| SubsetTours::new(dm, instance.depot(v), &customers))
        .collect::<Result<Vec<_>>>()?;
    let table_refs: Vec<&SubsetTours> = tables.iter().collect();
    let bits: Vec<usize> = (0..customers.len()).collect();
    Ok(assign(&members, &table_refs, &bits, rule))
}

fn check_budget(m: usize, c: usize, budget: u64) -> Result<()> {
    let space = (m as u64).checked_pow(c as u32).unwrap_or(u64::MAX);
    if space > budget {
        return Err(Error::SizeLimit(format!(
            "{m} vehicles x {c} customers gives {space} assignments, budget is {budget}"
        )));
    }
    Ok(())
}

fn assign(members: &[usize], tables: &[&SubsetTours], bits: &[usize], rule: FleetRule) -> RoutingSolution {
    let m = members.len();
    let mut search = AssignmentSearch {
        tables,
        bits,
        require_delivery: rule == FleetRule::EveryVehicleDelivers,
        masks: vec![0; m],
        best_cost: f64::INFINITY,
        best_masks: vec![0; m],
    };
    search.descend(0);
    debug_assert!(search.best_cost.is_finite());

    let routes: Vec<Route> = members
        .iter()
        .zip(tables)
        .zip(&search.best_masks)
        .map(|((&vehicle, table), &mask)| Route {
            vehicle,
            order: table.order(mask),
            cost: table.cost(mask),
        })
        .collect();
    RoutingSolution {
        total_cost: search.best_cost,
        routes,
        solver: SolverId::AssignmentHeldKarp,
    }
}

struct AssignmentSearch<'a> {
    tables: &'a [&'a SubsetTours],
    /// Bit position of each coalition customer in the tables' customer list.
    bits: &'a [usize],
    require_delivery: bool,
    masks: Vec<usize>,
    best_cost: f64,
    best_masks: Vec<usize>,
}

impl AssignmentSearch<'_> {
    // Depth-first over customers, vehicle index ascending, which visits
    // assignment vectors in lexicographic order.
    fn descend(&mut self, customer: usize) {
        if self.require_delivery {
            let remaining = self.bits.len() - customer;
            let empty = self.masks.iter().filter(|&&m| m == 0).count();
            if empty > remaining {
                return;
            }
        }
        if customer == self.bits.len() {
            let mut total = 0.0;
            for (table, &mask) in self.tables.iter().zip(&self.masks) {
                total += table.cost(mask);
            }
            if total < self.best_cost {
                self.best_cost = total;
                self.best_masks.copy_from_slice(&self.masks);
            }
            return;
        }
        let bit = 1 << self.bits[customer];
        for v in 0..self.masks.len() {
            self.masks[v] |= bit;
            self.descend(customer + 1);
            self.masks[v] ^= bit;
        }
    }
}

/// Per-agent Held-Karp tables over every customer of an instance, shared by
/// all coalitions of that instance.
pub struct InstanceRouter<'a> {
    instance: &'a ProblemInstance,
    customers: Vec<usize>,
    tables: Vec<SubsetTours>,
    budget: u64,
}

impl<'a> InstanceRouter<'a> {
    pub fn new(instance: &'a ProblemInstance, dm: &DistanceMatrix) -> Result<Self> {
        let customers: Vec<usize> = (0..instance.n_agents).flat_map(|a| instance.customers_of(a)).collect();
        let tables = (0..instance.n_agents)
            .map(|a| SubsetTours::new(dm, instance.depot(a), &customers))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            instance,
            customers,
            tables,
            budget: DEFAULT_ASSIGNMENT_BUDGET,
        })
    }

    fn own_mask(&self, agent: usize) -> usize {
        self.customers
            .iter()
            .enumerate()
            .filter(|(_, &c)| self.instance.locations[c].owner == agent)
            .fold(0, |m, (bit, _)| m | (1 << bit))
    }

    /// Same result as [`solve_single_agent`].
    pub fn single_agent(&self, agent: usize) -> Result<Route> {
        let mask = self.own_mask(agent);
        if mask == 0 {
            return Err(Error::Infeasible(format!("agent {agent} has no customers")));
        }
        let table = &self.tables[agent];
        Ok(Route {
            vehicle: agent,
            order: table.order(mask),
            cost: table.cost(mask),
        })
    }

    /// Same result as [`solve_mdvrp`].
    pub fn mdvrp(&self, coalition: Coalition, rule: FleetRule) -> Result<RoutingSolution> {
        let (members, customers) = coalition_customers(coalition, self.instance, rule)?;
        check_budget(members.len(), customers.len(), self.budget)?;
        let bits: Vec<usize> = customers
            .iter()
            .map(|c| self.customers.iter().position(|x| x == c).expect("instance customer"))
            .collect();
        let tables: Vec<&SubsetTours> = members.iter().map(|&v| &self.tables[v]).collect();
        Ok(assign(&members, &tables, &bits, rule))
    }
}

/// Exhaustive verifier: every assignment of customers to vehicles allowed by
/// `rule`, combined with every visit permutation of every vehicle.
pub fn brute_force_oracle(
    coalition: Coalition,
    instance: &ProblemInstance,
    dm: &DistanceMatrix,
    rule: FleetRule,
) -> Result<RoutingSolution> {
    let (members, customers) = coalition_customers(coalition, instance, rule)?;
    let m = members.len();
    let c = customers.len();
    if c > ORACLE_MAX_CUSTOMERS {
        return Err(Error::SizeLimit(format!(
            "oracle refuses {c} customers (limit {ORACLE_MAX_CUSTOMERS})"
        )));
    }

    let mut best: Option<(f64, Vec<Vec<usize>>)> = None;
    let mut assignment = vec![0usize; c];
    loop {
        let groups: Vec<Vec<usize>> = (0..m)
            .map(|v| {
                (0..c)
                    .filter(|&i| assignment[i] == v)
                    .map(|i| customers[i])
                    .collect()
            })
            .collect();
        if rule == FleetRule::IdleAllowed || groups.iter().all(|g| !g.is_empty()) {
            // All permutations per vehicle, then every combination of them.
            let per_vehicle: Vec<Vec<(f64, Vec<usize>)>> = groups
                .iter()
                .zip(&members)
                .map(|(g, &v)| {
                    permutations(g)
                        .into_iter()
                        .map(|p| (route_cost(dm, instance.depot(v), &p), p))
                        .collect()
                })
                .collect();
            let mut pick = vec![0usize; m];
            loop {
                let mut total = 0.0;
                for v in 0..m {
                    total += per_vehicle[v][pick[v]].0;
                }
                if best.as_ref().is_none_or(|(b, _)| total < *b) {
                    let orders = (0..m).map(|v| per_vehicle[v][pick[v]].1.clone()).collect();
                    best = Some((total, orders));
                }
                if !odometer(&mut pick, |v| per_vehicle[v].len()) {
                    break;
                }
            }
        }
        if !odometer(&mut assignment, |_| m) {
            break;
        }
    }

    let (total_cost, orders) = best.expect("at least one feasible assignment");
    let routes = members
        .iter()
        .zip(orders)
        .map(|(&vehicle, order)| Route {
            vehicle,
            cost: route_cost(dm, instance.depot(vehicle), &order),
            order,
        })
        .collect();
    Ok(RoutingSolution {
        routes,
        total_cost,
        solver: SolverId::BruteForce,
    })
}

/// Advances a mixed-radix counter, most significant digit first. Returns
/// false after wrapping past the last value.
fn odometer(digits: &mut [usize], radix: impl Fn(usize) -> usize) -> bool {
    for i in (0..digits.len()).rev() {
        digits[i] += 1;
        if digits[i] < radix(i) {
            return true;
        }
        digits[i] = 0;
    }
    false
}

/// All permutations of `items`, in lexicographic order of positions.
fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    let mut out = Vec::new();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        // next_permutation
        let Some(i) = (1..idx.len()).rev().find(|&i| idx[i - 1] < idx[i]) else {
            break;
        };
        let j = (i..idx.len()).rev().find(|&j| idx[j] > idx[i - 1]).unwrap();
        idx.swap(i - 1, j);
        idx[i..].reverse();
    }
    out
}

/// Checks coverage and cost bookkeeping of a solution for `coalition`.
pub fn audit_solution(
    solution: &RoutingSolution,
    coalition: Coalition,
    instance: &ProblemInstance,
    dm: &DistanceMatrix,
    rule: FleetRule,
) -> std::result::Result<(), String> {
    let (members, customers) = coalition_customers(coalition, instance, rule).map_err(|e| e.to_string())?;
    let vehicles: Vec<usize> = solution.routes.iter().map(|r| r.vehicle).collect();
    if vehicles != members {
        return Err(format!("vehicles {vehicles:?} != members {members:?}"));
    }
    let mut seen: Vec<usize> = solution.routes.iter().flat_map(|r| r.order.iter().copied()).collect();
    seen.sort_unstable();
    let mut expected = customers;
    expected.sort_unstable();
    if seen != expected {
        return Err(format!("served {seen:?}, expected {expected:?}"));
    }
    let mut total = 0.0;
    for r in &solution.routes {
        if r.order.is_empty() && rule == FleetRule::EveryVehicleDelivers {
            return Err(format!("vehicle {} serves no customer", r.vehicle));
        }
        let c = if r.order.is_empty() {
            0.0
        } else {
            route_cost(dm, instance.depot(r.vehicle), &r.order)
        };
        if (c - r.cost).abs() > 1e-12 {
            return Err(format!("vehicle {} cost {} recomputes to {c}", r.vehicle, r.cost));
        }
        total += r.cost;
    }
    if (total - solution.total_cost).abs() > 1e-12 {
        return Err(format!("total {} != sum of routes {total}", solution.total_cost));
    }
    Ok(())
}
