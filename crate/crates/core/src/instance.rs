//! Random routing instances and Euclidean geometry.
//!
//! Each agent owns one depot and a fixed number of customers. Customers are
//! drawn area-uniformly from a disk centred on the owner's depot; a single
//! radius per instance is drawn from the configured radius set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Depot coordinates for the three-agent setting.
pub const DEPOTS_3: [(f64, f64); 3] = [(-0.2, 0.173), (0.2, 0.173), (0.0, -0.173)];

pub const DEFAULT_RADII: [f64; 3] = [0.3, 0.4, 0.6];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
    pub owner: usize,
    pub is_depot: bool,
}

impl Location {
    /// The `<x, y, owner, is_depot>` tuple an agent observes.
    pub fn as_tuple(&self) -> [f64; 4] {
        [
            self.x,
            self.y,
            self.owner as f64,
            if self.is_depot { 1.0 } else { 0.0 },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n_agents: usize,
    pub customers_per_agent: usize,
    pub radii: Vec<f64>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n_agents: 3,
            customers_per_agent: 3,
            radii: DEFAULT_RADII.to_vec(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() {
            return Err(Error::Config("radius set is empty".into()));
        }
        if let Some(r) = self.radii.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::Config(format!("radius {r} is not positive")));
        }
        if self.n_agents == 0 || self.n_agents > 16 {
            return Err(Error::Config(format!(
                "agent count {} outside 1..=16",
                self.n_agents
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub seed: u64,
    pub radius: f64,
    pub n_agents: usize,
    /// Depots first (one per agent, in agent order), then customers grouped by owner.
    pub locations: Vec<Location>,
}

impl ProblemInstance {
    pub fn depot(&self, agent: usize) -> usize {
        self.locations
            .iter()
            .position(|l| l.is_depot && l.owner == agent)
            .expect("every agent owns a depot")
    }

    /// Location indices of the customers owned by `agent`, in storage order.
    pub fn customers_of(&self, agent: usize) -> Vec<usize> {
        self.locations
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.is_depot && l.owner == agent)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n_customers(&self) -> usize {
        self.locations.iter().filter(|l| !l.is_depot).count()
    }

    /// Checks structural invariants of a (possibly deserialized) instance.
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::Config("instance has no agents".into()));
        }
        for agent in 0..self.n_agents {
            let depots = self
                .locations
                .iter()
                .filter(|l| l.is_depot && l.owner == agent)
                .count();
            if depots != 1 {
                return Err(Error::Config(format!(
                    "agent {agent} owns {depots} depots, expected exactly one"
                )));
            }
        }
        if let Some(l) = self.locations.iter().find(|l| l.owner >= self.n_agents) {
            return Err(Error::Config(format!("location owner {} out of range", l.owner)));
        }
        if self.locations.iter().any(|l| !(l.x.is_finite() && l.y.is_finite())) {
            return Err(Error::Config("non-finite coordinate".into()));
        }
        Ok(())
    }
}

/// Depot positions for `n` agents. The three-agent layout is fixed; other
/// counts use a regular polygon with side 0.4 centred on the origin.
pub fn depot_positions(n: usize) -> Vec<(f64, f64)> {
    if n == 3 {
        return DEPOTS_3.to_vec();
    }
    if n == 1 {
        return vec![(0.0, 0.0)];
    }
    let circumradius = 0.2 / (std::f64::consts::PI / n as f64).sin();
    (0..n)
        .map(|k| {
            let a = std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            (circumradius * a.cos(), circumradius * a.sin())
        })
        .collect()
}

/// Draws a point uniformly (by area) from the disk of `radius` around `center`.
pub fn sample_in_disk<R: Rng + ?Sized>(rng: &mut R, center: (f64, f64), radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = 2.0 * std::f64::consts::PI * rng.random::<f64>();
    (center.0 + r * theta.cos(), center.1 + r * theta.sin())
}

pub fn generate_instance(seed: u64, config: &GenerationConfig) -> Result<ProblemInstance> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = config.radii[rng.random_range(0..config.radii.len())];
    let depots = depot_positions(config.n_agents);

    let mut locations: Vec<Location> = depots
        .iter()
        .enumerate()
        .map(|(owner, &(x, y))| Location { x, y, owner, is_depot: true })
        .collect();
    for (owner, &center) in depots.iter().enumerate() {
        for _ in 0..config.customers_per_agent {
            let (x, y) = sample_in_disk(&mut rng, center, radius);
            locations.push(Location { x, y, owner, is_depot: false });
        }
    }

    Ok(ProblemInstance {
        seed,
        radius,
        n_agents: config.n_agents,
        locations,
    })
}

pub fn distance(a: &Location, b: &Location) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Dense symmetric matrix of pairwise Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(instance: &ProblemInstance) -> Self {
        let locs = &instance.locations;
        let n = locs.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = distance(&locs[i], &locs[j]);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Self { n, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

pub fn distance_matrix(instance: &ProblemInstance) -> DistanceMatrix {
    DistanceMatrix::new(instance)
}
