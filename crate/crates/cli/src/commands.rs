use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use netgnn_core::dataset::{generate_dataset, read_dataset, split_by_routing, write_dataset, Sample, Scenario, TiSpec};
use netgnn_core::fsio::write_atomic;
use netgnn_core::graph::{hop_count_routing, nsfnet, random_routing_variants, random_topology, ring, Topology};
use netgnn_core::model::{Checkpoint, ModelConfig, Target};
use netgnn_core::netsim::{simulate, SimConfig};
use netgnn_core::optimize::{
    candidate_routings, evaluate_candidates, link_failure_sweep, optimize_with_sla, unlinked_pairs, verify_winner,
    whatif_add_link, whatif_add_users, Estimator, Objective, SlaSpec,
};
use netgnn_core::seed::derive_seed;
use netgnn_core::traffic::{generate_tm, TrafficIntensity, TrafficMatrix};
use netgnn_core::train::{curve_csv, evaluate, train, train_from, TrainConfig, TrainOutcome};

use crate::args::*;
use crate::error::{self, CliError};

type Result<T> = std::result::Result<T, CliError>;

pub struct Globals {
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Globals {
    fn out_dir(&self) -> Result<Option<&Path>> {
        match &self.out {
            Some(p) => {
                std::fs::create_dir_all(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                Ok(Some(p))
            }
            None => Ok(None),
        }
    }

    fn require_out_dir(&self) -> Result<&Path> {
        self.out_dir()?
            .ok_or_else(|| CliError::Config("--out is required".into()))
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Data(format!("csv: {e}"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingFile(path.display().to_string())
        } else {
            CliError::Data(format!("{}: {e}", path.display()))
        }
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    read_dataset(path).map_err(|e| error::dataset(e, path))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| error::checkpoint(e, path))
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| CliError::Config(format!("--{flag} is required")))
}

fn build_topology(args: &TopologyArgs, seed: u64) -> Result<Topology> {
    let capacity = args.capacity.unwrap_or(10.0);
    if let Some(path) = &args.topology {
        return read_json(path);
    }
    let nodes = args.nodes.unwrap_or(8);
    Ok(match args.preset {
        Some(Preset::Nsfnet) => nsfnet(capacity),
        Some(Preset::Ring) => ring(nodes, capacity)?,
        None => random_topology(
            nodes,
            args.chords.unwrap_or(nodes / 2),
            capacity,
            args.topology_seed.unwrap_or(seed),
        )?,
    })
}

fn sim_config(args: &SimArgs) -> Result<SimConfig> {
    let mut c = SimConfig::default();
    if let Some(d) = args.duration {
        c.duration = d;
        if args.warmup.is_none() {
            c.warmup = d / 16.0;
        }
    }
    if let Some(w) = args.warmup {
        c.warmup = w;
    }
    if let Some(b) = args.buffer {
        c.buffer_packets = b;
    }
    c.validate()?;
    Ok(c)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| CliError::Config(format!("bad {what} {s:?}")))
        })
        .collect()
}

fn parse_pairs(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(|p| {
            let (a, b) = p
                .split_once('-')
                .ok_or_else(|| CliError::Config(format!("bad node pair {p:?}, expected a-b")))?;
            let n = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Config(format!("bad node {s:?}")))
            };
            Ok((n(a)?, n(b)?))
        })
        .collect()
}

pub fn simulate_cmd(g: &Globals, a: &SimulateArgs) -> Result<()> {
    let out = required(&g.out, "out")?;
    let topo = build_topology(&a.topology, g.seed)?;
    let routings = random_routing_variants(&topo, a.routings.unwrap_or(10), derive_seed(g.seed, 1))?;
    let ti = TiSpec::parse(a.ti.as_deref().unwrap_or("8:16")).map_err(CliError::Config)?;
    let config = sim_config(&a.sim)?;
    let scenario = Scenario {
        topology: topo,
        routings,
    };
    let generated = generate_dataset(
        &[scenario],
        &ti,
        a.samples.unwrap_or(10),
        &config,
        derive_seed(g.seed, 2),
    )
    .map_err(|e| error::dataset(e, out))?;
    if generated.samples.is_empty() {
        return Err(CliError::Numeric("every simulation failed".into()));
    }
    write_dataset(out, &generated.samples).map_err(|e| error::dataset(e, out))?;

    let delays: Vec<f64> = generated
        .samples
        .iter()
        .flat_map(|s| s.labels.delay.iter().copied())
        .collect();
    let jitters: Vec<f64> = generated
        .samples
        .iter()
        .flat_map(|s| s.labels.jitter.iter().copied())
        .collect();
    let dropped: u64 = generated.samples.iter().flat_map(|s| s.labels.dropped.iter()).sum();
    let stat = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        format!("mean {mean:.6} min {min:.6} max {max:.6}")
    };
    println!("samples: {}", generated.samples.len());
    println!("failed simulations: {}", generated.failures.len());
    println!("delay: {}", stat(&delays));
    println!("jitter: {}", stat(&jitters));
    println!("dropped packets: {dropped}");
    Ok(())
}

fn target(t: Option<TargetArg>) -> Target {
    match t {
        Some(TargetArg::Jitter) => Target::Jitter,
        _ => Target::Delay,
    }
}

fn objective(o: Option<ObjectiveArg>) -> Objective {
    match o.unwrap_or(ObjectiveArg::MeanDelay) {
        ObjectiveArg::MeanDelay => Objective::MeanDelay,
        ObjectiveArg::MaxDelay => Objective::MaxDelay,
        ObjectiveArg::MeanJitter => Objective::MeanJitter,
        ObjectiveArg::MaxJitter => Objective::MaxJitter,
    }
}

pub fn train_cmd(g: &Globals, a: &TrainArgs) -> Result<()> {
    let dir = g.require_out_dir()?;
    let data_path = required(&a.data, "data")?;
    let samples = load_dataset(data_path)?;
    let (train_set, mut eval_set) = match a.holdout_routings {
        Some(k) if k > 0 => split_by_routing(&samples, k),
        _ => (samples, Vec::new()),
    };
    if let Some(p) = &a.eval_data {
        eval_set.extend(load_dataset(p)?);
    }
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        batch_size: a.batch.unwrap_or(defaults.batch_size),
        total_steps: a.steps.unwrap_or(defaults.total_steps),
        lr: a.lr.unwrap_or(defaults.lr),
        lr_after: a.lr_after.unwrap_or(defaults.lr_after),
        lr_switch_step: a.lr_switch.unwrap_or(defaults.lr_switch_step),
        l2_lambda: a.l2.unwrap_or(defaults.l2_lambda),
        eval_every: a.eval_every.unwrap_or(defaults.eval_every),
        snapshot_fraction: defaults.snapshot_fraction,
        seed: g.seed,
    };
    let target = target(a.target);
    info!(
        "training {} on {} samples ({} held out) for {} steps",
        target.name(),
        train_set.len(),
        eval_set.len(),
        config.total_steps
    );
    let outcome: TrainOutcome = match &a.init {
        Some(p) => {
            let init = load_checkpoint(p)?;
            let mut params = init.params;
            params.store_mut().reset_optimizer();
            train_from(params, &train_set, &eval_set, target, &config)?
        }
        None => {
            let d = ModelConfig::default();
            let mc = ModelConfig {
                path_dim: a.path_dim.unwrap_or(d.path_dim),
                link_dim: a.link_dim.unwrap_or(d.link_dim),
                iterations: a.iterations.unwrap_or(d.iterations),
                dropout: a.dropout.unwrap_or(d.dropout),
                init_seed: derive_seed(g.seed, 0),
                ..d
            };
            train(&train_set, &eval_set, target, &mc, &config)?
        }
    };
    let model = dir.join("model.bin");
    outcome
        .checkpoint
        .save(&model)
        .map_err(|e| error::checkpoint(e, &model))?;
    if let Some(early) = &outcome.early {
        let p = dir.join("early.bin");
        early.save(&p).map_err(|e| error::checkpoint(e, &p))?;
    }
    write(&dir.join("curve.csv"), &curve_csv(&outcome.curve).map_err(csv_err)?)?;
    let mut evals = String::from("step,mse\n");
    for e in &outcome.evals {
        let _ = writeln!(evals, "{},{}", e.step, e.mse);
    }
    write(&dir.join("evals.csv"), evals.as_bytes())?;
    if let Some(last) = outcome.curve.last() {
        println!("steps: {}", outcome.checkpoint.step);
        println!("final smoothed loss: {:.6}", last.smoothed);
    }
    if let Some(e) = outcome.evals.last() {
        println!("held-out mse (standardized): {:.6}", e.mse);
    }
    println!("checkpoint: {}", model.display());
    Ok(())
}

pub fn eval_cmd(g: &Globals, a: &EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(required(&a.ckpt, "ckpt")?)?;
    let samples = load_dataset(required(&a.data, "data")?)?;
    let report = evaluate(&ckpt, &samples, a.mc.unwrap_or(50), g.seed)?;
    let summary = report.summary();
    print!("{summary}");
    if let Some(dir) = g.out_dir()? {
        write(&dir.join("summary.txt"), summary.as_bytes())?;
        write(&dir.join("residuals.csv"), &report.residuals_csv().map_err(csv_err)?)?;
    }
    Ok(())
}

/// Inputs shared by `optimize` and the what-if commands.
struct Setup {
    topo: Topology,
    tm: TrafficMatrix,
    sim: SimConfig,
    delay: Option<Checkpoint>,
    jitter: Option<Checkpoint>,
    mc: usize,
    simulator: bool,
    objective: Objective,
    candidates: usize,
}

impl Setup {
    fn new(g: &Globals, a: &ScenarioArgs) -> Result<Self> {
        let topo = build_topology(&a.topology, g.seed)?;
        let tm = match &a.tm {
            Some(p) => {
                let demand: Vec<f64> = read_json(p)?;
                let n = (demand.len() as f64).sqrt().round() as usize;
                TrafficMatrix::from_row_major(n, demand)?
            }
            None => generate_tm(
                topo.node_count(),
                TrafficIntensity::new(a.ti.unwrap_or(15.0))?,
                derive_seed(g.seed, 3),
            )?,
        };
        let e = &a.estimator;
        let delay = e.ckpt.as_deref().map(load_checkpoint).transpose()?;
        let jitter = e.jitter_ckpt.as_deref().map(load_checkpoint).transpose()?;
        if !e.simulator && delay.is_none() && jitter.is_none() {
            return Err(CliError::Config("give --ckpt/--jitter-ckpt or --simulator".into()));
        }
        Ok(Setup {
            topo,
            tm,
            sim: sim_config(&a.sim)?,
            delay,
            jitter,
            mc: e.mc.unwrap_or(50),
            simulator: e.simulator,
            objective: objective(a.objective),
            candidates: a.candidates.unwrap_or(100),
        })
    }

    fn estimator(&self) -> Estimator<'_> {
        if self.simulator {
            Estimator::Simulator(self.sim.clone())
        } else {
            Estimator::Model {
                delay: self.delay.as_ref(),
                jitter: self.jitter.as_ref(),
                mc_samples: self.mc,
            }
        }
    }
}

pub fn optimize_cmd(g: &Globals, a: &OptimizeArgs) -> Result<()> {
    let s = Setup::new(g, &a.scenario)?;
    let candidates = candidate_routings(&s.topo, s.candidates, derive_seed(g.seed, 4))?;
    let est = s.estimator();
    let mc_seed = derive_seed(g.seed, 5);
    let mut report = match &a.sla {
        Some(pairs) => {
            let sla = SlaSpec {
                pairs: parse_pairs(pairs)?,
                delay_bound: *required(&a.sla_bound, "sla-bound")?,
            };
            optimize_with_sla(&est, &s.topo, &s.tm, &candidates, &sla, s.objective, mc_seed)?
        }
        None => evaluate_candidates(&est, &s.topo, &s.tm, &candidates, s.objective, mc_seed)?,
    };
    let mut summary = String::new();
    if a.verify {
        let sim_seed = derive_seed(g.seed, 6);
        verify_winner(&mut report, &s.topo, &s.tm, &candidates, &s.sim, sim_seed)?;
        let base = simulate(&s.topo, &hop_count_routing(&s.topo)?, &s.tm, &s.sim, sim_seed)?;
        let values = match s.objective.target() {
            Target::Delay => base.mean_delays(),
            Target::Jitter => base.jitters(),
        };
        let all = vec![true; values.len()];
        let _ = writeln!(
            summary,
            "simulated hop-count baseline: {:.6}",
            s.objective.reduce(&values, &all)
        );
    }
    summary.insert_str(0, &report.summary());
    print!("{summary}");
    if let Some(dir) = g.out_dir()? {
        write(&dir.join("report.csv"), report.to_csv()?.as_bytes())?;
        write(&dir.join("summary.txt"), summary.as_bytes())?;
    }
    Ok(())
}

pub fn add_users_cmd(g: &Globals, a: &AddUsersArgs) -> Result<()> {
    let s = Setup::new(g, &a.scenario)?;
    let candidates = candidate_routings(&s.topo, s.candidates, derive_seed(g.seed, 4))?;
    let order: Vec<usize> = parse_list(required(&a.node_order, "node-order")?, "node")?;
    let report = whatif_add_users(
        &s.estimator(),
        &s.topo,
        &candidates,
        &s.tm,
        &order,
        a.factor.unwrap_or(2.5),
        a.bound.unwrap_or(f64::INFINITY),
        s.objective,
        derive_seed(g.seed, 5),
    )?;
    let mut csv = String::from("users,node,winner,objective,mean_delay,max_delay\n");
    for st in &report.steps {
        let node = st.node.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            st.users, node, st.winner, st.objective, st.mean_delay, st.max_delay
        );
    }
    print!("{csv}");
    match report.first_breaking {
        Some(u) => println!("bound first exceeded with {u} users"),
        None => println!("bound never exceeded"),
    }
    if let Some(dir) = g.out_dir()? {
        write(&dir.join("users.csv"), csv.as_bytes())?;
    }
    Ok(())
}

pub fn add_link_cmd(g: &Globals, a: &AddLinkArgs) -> Result<()> {
    let s = Setup::new(g, &a.scenario)?;
    let pairs = match a.pairs.as_deref().unwrap_or("all") {
        "all" => unlinked_pairs(&s.topo),
        text => parse_pairs(text)?,
    };
    let report = whatif_add_link(
        &s.estimator(),
        &s.topo,
        &s.tm,
        &pairs,
        s.objective,
        s.candidates,
        derive_seed(g.seed, 5),
    )?;
    let mut csv = String::from("a,b,objective\n");
    for p in &report.placements {
        let _ = writeln!(csv, "{},{},{}", p.a, p.b, p.objective);
    }
    let best = &report.placements[report.best];
    println!("before: {:.6}", report.before);
    println!(
        "best placement: ({}, {}) objective {:.6}",
        best.a, best.b, best.objective
    );
    println!("reduction: {:.2}%", 100.0 * report.reduction);
    if let Some(dir) = g.out_dir()? {
        write(&dir.join("placements.csv"), csv.as_bytes())?;
    }
    Ok(())
}

pub fn link_failures_cmd(g: &Globals, a: &LinkFailuresArgs) -> Result<()> {
    let s = Setup::new(g, &a.scenario)?;
    let counts: Vec<usize> = parse_list(a.failures.as_deref().unwrap_or("0,1,2"), "failure count")?;
    let mut csv = String::from("failures,trial,failed_links,winner,objective\n");
    for &n in &counts {
        let sweep = link_failure_sweep(
            &s.estimator(),
            &s.topo,
            &s.tm,
            n,
            a.trials.unwrap_or(10),
            s.candidates,
            s.objective,
            derive_seed(g.seed, 5 + n as u64),
        )?;
        for (t, trial) in sweep.trials.iter().enumerate() {
            let failed: Vec<String> = trial.failed.iter().map(|l| l.to_string()).collect();
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                n,
                t,
                failed.join(" "),
                trial.winner,
                trial.objective
            );
        }
        println!(
            "failures {n}: mean {:.6} max {:.6}",
            sweep.mean_objective, sweep.max_objective
        );
    }
    if let Some(dir) = g.out_dir()? {
        write(&dir.join("failures.csv"), csv.as_bytes())?;
    }
    Ok(())
}
