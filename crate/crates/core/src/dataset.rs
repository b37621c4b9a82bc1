//! Labeled samples and their JSON-lines file format.

use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path as FsPath;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{pair_count, RoutingScheme, Topology};
use crate::model::Target;
use crate::netsim::{simulate, SimConfig, SimError};
use crate::seed::derive_seed;
use crate::traffic::{generate_tm, TrafficIntensity, TrafficMatrix};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed sample: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("invalid dataset request: {0}")]
    Request(String),
}

/// Per-pair labels in lexicographic pair order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Labels {
    pub delay: Vec<f64>,
    pub jitter: Vec<f64>,
    pub dropped: Vec<u64>,
}

impl Labels {
    pub fn target(&self, target: Target) -> &[f64] {
        match target {
            Target::Delay => &self.delay,
            Target::Jitter => &self.jitter,
        }
    }
}

/// One simulated instance; also the schema of one dataset line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub topology: Topology,
    pub routing: RoutingScheme,
    pub tm: TrafficMatrix,
    pub labels: Labels,
    pub seed: u64,
    pub sim_digest: String,
}

impl Sample {
    pub fn validate(&self) -> Result<(), String> {
        let n = self.topology.node_count();
        let pairs = pair_count(n);
        self.routing.validate(&self.topology).map_err(|e| e.to_string())?;
        if self.tm.n() != n {
            return Err(format!(
                "traffic matrix is {}x{} for {n} nodes",
                self.tm.n(),
                self.tm.n()
            ));
        }
        let l = &self.labels;
        if l.delay.len() != pairs || l.jitter.len() != pairs || l.dropped.len() != pairs {
            return Err(format!(
                "label lengths {}/{}/{} for {pairs} pairs",
                l.delay.len(),
                l.jitter.len(),
                l.dropped.len()
            ));
        }
        if l.delay.iter().chain(&l.jitter).any(|v| !v.is_finite() || *v < 0.0) {
            return Err("labels must be finite and non-negative".into());
        }
        Ok(())
    }
}

pub fn to_line(sample: &Sample) -> String {
    serde_json::to_string(sample).expect("samples serialize")
}

pub fn parse_line(text: &str, line: usize) -> Result<Sample, DatasetError> {
    let sample: Sample = serde_json::from_str(text).map_err(|e| DatasetError::Parse {
        line,
        message: e.to_string(),
    })?;
    sample
        .validate()
        .map_err(|message| DatasetError::Invalid { line, message })?;
    Ok(sample)
}

pub fn write_dataset(path: &FsPath, samples: &[Sample]) -> Result<(), DatasetError> {
    let mut text = String::new();
    for s in samples {
        text.push_str(&to_line(s));
        text.push('\n');
    }
    crate::fsio::write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Reads every non-empty line; line numbers in errors are 1-based.
pub fn read_dataset(path: &FsPath) -> Result<Vec<Sample>, DatasetError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1)?);
    }
    Ok(out)
}

/// Traffic intensities to sweep: an explicit list, or a fresh uniform draw
/// from `[lo, hi]` for every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiSpec {
    List(Vec<f64>),
    Range(f64, f64),
}

impl TiSpec {
    /// Accepts `16`, `8,12,16` or `8:16`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad traffic intensity {s:?}"))
                .and_then(|v| TrafficIntensity::new(v).map(|t| t.get()).map_err(|e| e.to_string()))
        };
        if let Some((lo, hi)) = text.split_once(':') {
            let (lo, hi) = (num(lo)?, num(hi)?);
            if lo > hi {
                return Err(format!("empty range {text}"));
            }
            return Ok(TiSpec::Range(lo, hi));
        }
        let list = text.split(',').map(num).collect::<Result<Vec<_>, _>>()?;
        Ok(TiSpec::List(list))
    }

    /// Cells per routing: one per listed value, or one for a range.
    fn cells(&self) -> usize {
        match self {
            TiSpec::List(v) => v.len(),
            TiSpec::Range(..) => 1,
        }
    }
}

impl fmt::Display for TiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TiSpec::List(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "{}", parts.join(","))
            }
            TiSpec::Range(lo, hi) => write!(f, "{lo}:{hi}"),
        }
    }
}

/// A topology with the routings to sweep on it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: Topology,
    pub routings: Vec<RoutingScheme>,
}

#[derive(Debug, Clone)]
pub struct GenerationFailure {
    pub index: usize,
    pub seed: u64,
    pub error: SimError,
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub samples: Vec<Sample>,
    pub failures: Vec<GenerationFailure>,
}

/// Sweeps scenarios × routings × TI cells × `samples_per_cell`. Sample `i`
/// uses seed `derive_seed(seed, i)`, from which its traffic matrix, TI draw
/// and simulation seed follow. Simulations run in parallel; output keeps
/// index order.
pub fn generate_dataset(
    scenarios: &[Scenario],
    ti: &TiSpec,
    samples_per_cell: usize,
    config: &SimConfig,
    seed: u64,
) -> Result<GeneratedDataset, DatasetError> {
    config.validate().map_err(|e| DatasetError::Request(e.to_string()))?;
    if scenarios.is_empty() || ti.cells() == 0 || samples_per_cell == 0 {
        return Err(DatasetError::Request("nothing to generate".into()));
    }
    let mut jobs = Vec::new();
    for (si, sc) in scenarios.iter().enumerate() {
        if sc.routings.is_empty() {
            return Err(DatasetError::Request(format!("scenario {si} has no routings")));
        }
        for ri in 0..sc.routings.len() {
            for cell in 0..ti.cells() {
                for _ in 0..samples_per_cell {
                    jobs.push((si, ri, cell));
                }
            }
        }
    }
    let results: Vec<Result<Sample, GenerationFailure>> = jobs
        .par_iter()
        .enumerate()
        .map(|(index, &(si, ri, cell))| {
            let sample_seed = derive_seed(seed, index as u64);
            let sc = &scenarios[si];
            let fail = |error| GenerationFailure {
                index,
                seed: sample_seed,
                error,
            };
            let value = match ti {
                TiSpec::List(v) => v[cell],
                TiSpec::Range(lo, hi) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(sample_seed, 2));
                    if lo == hi {
                        *lo
                    } else {
                        rng.random_range(*lo..=*hi)
                    }
                }
            };
            let intensity = TrafficIntensity::new(value).map_err(|e| fail(SimError::Config(e.to_string())))?;
            let n = sc.topology.node_count();
            let tm = generate_tm(n, intensity, derive_seed(sample_seed, 0))
                .map_err(|e| fail(SimError::Config(e.to_string())))?;
            let stats =
                simulate(&sc.topology, &sc.routings[ri], &tm, config, derive_seed(sample_seed, 1)).map_err(fail)?;
            Ok(Sample {
                topology: sc.topology.clone(),
                routing: sc.routings[ri].clone(),
                tm,
                labels: Labels {
                    delay: stats.mean_delays(),
                    jitter: stats.jitters(),
                    dropped: stats.dropped(),
                },
                seed: sample_seed,
                sim_digest: config.digest(value),
            })
        })
        .collect();
    let mut out = GeneratedDataset {
        samples: Vec::with_capacity(results.len()),
        failures: Vec::new(),
    };
    for r in results {
        match r {
            Ok(s) => out.samples.push(s),
            Err(f) => {
                warn!("sample {} (seed {}) failed: {}", f.index, f.seed, f.error);
                out.failures.push(f);
            }
        }
    }
    Ok(out)
}

/// Splits samples into (train, held-out) so that no routing appears in both.
/// Distinct routings are taken in first-appearance order; the last
/// `holdout_routings` of them go to the held-out side.
pub fn split_by_routing(samples: &[Sample], holdout_routings: usize) -> (Vec<Sample>, Vec<Sample>) {
    let mut distinct: Vec<&RoutingScheme> = Vec::new();
    let ids: Vec<usize> = samples
        .iter()
        .map(|s| match distinct.iter().position(|r| **r == s.routing) {
            Some(i) => i,
            None => {
                distinct.push(&s.routing);
                distinct.len() - 1
            }
        })
        .collect();
    let cut = distinct.len().saturating_sub(holdout_routings);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, id) in samples.iter().zip(ids) {
        if id < cut {
            train.push(s.clone());
        } else {
            test.push(s.clone());
        }
    }
    (train, test)
}
