//! Traffic matrices and demand what-ifs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{pair_index, pairs};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("traffic intensity must be positive and finite, got {0}")]
    BadIntensity(f64),
    #[error("traffic matrix needs at least two nodes, got {0}")]
    TooFewNodes(usize),
    #[error("matrix of {len} entries is not square")]
    NotSquare { len: usize },
    #[error("diagonal entry {0} is not zero")]
    NonZeroDiagonal(usize),
    #[error("demand entries must be finite and non-negative")]
    BadDemand,
    #[error("node {node} out of range for {n} nodes")]
    BadNode { node: usize, n: usize },
    #[error("scale factor must be positive, got {0}")]
    BadFactor(f64),
}

/// Global demand scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TrafficIntensity(f64);

impl TrafficIntensity {
    pub fn new(ti: f64) -> Result<Self, TrafficError> {
        if ti.is_finite() && ti > 0.0 {
            Ok(TrafficIntensity(ti))
        } else {
            Err(TrafficError::BadIntensity(ti))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TrafficIntensity {
    type Error = TrafficError;
    fn try_from(v: f64) -> Result<Self, TrafficError> {
        Self::new(v)
    }
}

impl From<TrafficIntensity> for f64 {
    fn from(ti: TrafficIntensity) -> f64 {
        ti.0
    }
}

/// `n x n` demand rates in packets per time unit, row-major, zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TrafficMatrix {
    n: usize,
    demand: Vec<f64>,
}

impl TryFrom<Vec<f64>> for TrafficMatrix {
    type Error = TrafficError;
    fn try_from(demand: Vec<f64>) -> Result<Self, TrafficError> {
        let len = demand.len();
        let n = (len as f64).sqrt().round() as usize;
        if n * n != len {
            return Err(TrafficError::NotSquare { len });
        }
        TrafficMatrix::from_row_major(n, demand)
    }
}

impl From<TrafficMatrix> for Vec<f64> {
    fn from(tm: TrafficMatrix) -> Vec<f64> {
        tm.demand
    }
}

impl TrafficMatrix {
    pub fn from_row_major(n: usize, demand: Vec<f64>) -> Result<Self, TrafficError> {
        if n < 2 {
            return Err(TrafficError::TooFewNodes(n));
        }
        if demand.len() != n * n {
            return Err(TrafficError::NotSquare { len: demand.len() });
        }
        if demand.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(TrafficError::BadDemand);
        }
        if let Some(i) = (0..n).find(|&i| demand[i * n + i] != 0.0) {
            return Err(TrafficError::NonZeroDiagonal(i));
        }
        Ok(TrafficMatrix { n, demand })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, src: usize, dst: usize) -> f64 {
        self.demand[src * self.n + dst]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.demand
    }

    /// Off-diagonal demands in lexicographic pair order.
    pub fn pair_demands(&self) -> Vec<f64> {
        pairs(self.n).map(|(s, d)| self.get(s, d)).collect()
    }

    pub fn pair_demand(&self, pair: usize) -> f64 {
        let (s, d) = pair_of(self.n, pair);
        self.get(s, d)
    }

    pub fn total(&self) -> f64 {
        self.demand.iter().sum()
    }

    pub fn max_entry(&self) -> f64 {
        self.demand.iter().copied().fold(0.0, f64::max)
    }
}

/// Inverse of [`pair_index`].
pub fn pair_of(n: usize, pair: usize) -> (usize, usize) {
    let s = pair / (n - 1);
    let r = pair % (n - 1);
    let d = if r < s { r } else { r + 1 };
    debug_assert_eq!(pair_index(n, s, d), pair);
    (s, d)
}

/// Each off-diagonal entry is `U(0.1, 1) * ti / (n - 1)`.
pub fn generate_tm(n: usize, ti: TrafficIntensity, seed: u64) -> Result<TrafficMatrix, TrafficError> {
    if n < 2 {
        return Err(TrafficError::TooFewNodes(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = ti.get() / (n - 1) as f64;
    let mut demand = vec![0.0; n * n];
    for (s, d) in pairs(n) {
        demand[s * n + d] = rng.random_range(0.1..=1.0) * scale;
    }
    Ok(TrafficMatrix { n, demand })
}

/// Multiplies everything sourced at or destined to `node` by `factor`.
pub fn scale_user_demand(tm: &TrafficMatrix, node: usize, factor: f64) -> Result<TrafficMatrix, TrafficError> {
    if node >= tm.n {
        return Err(TrafficError::BadNode { node, n: tm.n });
    }
    if !(factor.is_finite() && factor > 0.0) {
        return Err(TrafficError::BadFactor(factor));
    }
    let n = tm.n;
    let mut demand = tm.demand.clone();
    for j in 0..n {
        demand[node * n + j] *= factor;
        if j != node {
            demand[j * n + node] *= factor;
        }
    }
    Ok(TrafficMatrix { n, demand })
}
