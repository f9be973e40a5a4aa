//! Flat feature encoding of an [`Observation`].
//!
//! Layout, in order:
//! 1. every location as `<x, y, owner, is_depot>`
//! 2. per agent: customer centroid `(x, y)` and RMS spread around it
//! 3. one-hot of the current round over the horizon
//! 4. the `actions_taken` matrix, row-major
//! 5. one-hot of the observing agent

use crate::bargaining::Observation;

pub fn feature_len(n_agents: usize, n_locations: usize, horizon: usize) -> usize {
    4 * n_locations + 3 * n_agents + horizon + 2 * n_agents * horizon + n_agents
}

/// Centroid and RMS spread of each agent's customers; zeros for agents
/// without customers. Invariant to customer order within an owner.
pub fn owner_aggregates(obs: &Observation) -> Vec<f64> {
    let n = obs.n_agents;
    let mut out = Vec::with_capacity(3 * n);
    for agent in 0..n {
        let pts: Vec<(f64, f64)> = obs
            .locations
            .iter()
            .filter(|l| l[3] == 0.0 && l[2] as usize == agent)
            .map(|l| (l[0], l[1]))
            .collect();
        if pts.is_empty() {
            out.extend([0.0, 0.0, 0.0]);
            continue;
        }
        let k = pts.len() as f64;
        let cx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let cy = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let spread = (pts.iter().map(|p| (p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sum::<f64>() / k).sqrt();
        out.extend([cx, cy, spread]);
    }
    out
}

pub fn encode_features(obs: &Observation) -> Vec<f64> {
    let n = obs.n_agents;
    let mut f = Vec::with_capacity(feature_len(n, obs.locations.len(), obs.horizon));
    for l in &obs.locations {
        f.extend_from_slice(l);
    }
    f.extend(owner_aggregates(obs));
    f.extend((1..=obs.horizon).map(|t| if t == obs.round { 1.0 } else { 0.0 }));
    f.extend_from_slice(&obs.actions_taken);
    f.extend((0..n).map(|i| if i == obs.agent { 1.0 } else { 0.0 }));
    f
}
