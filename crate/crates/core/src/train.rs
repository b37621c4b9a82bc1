//! Loss, the training loop, transfer to jitter, and evaluation metrics.

use std::sync::Arc;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{adam_update, AdamConfig, Graph, LrSchedule, Tensor};
use crate::dataset::Sample;
use crate::model::{
    forward_states, predict_deterministic, predict_mc_batch, readout_graph, Checkpoint, InstanceEncoding, LabelNorm,
    MessagePlan, ModelConfig, ModelError, ModelParams, ReadoutMasks, Target,
};
use crate::seed::derive_seed;
use crate::traffic::pair_of;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyData,
    #[error("{0} predictions for {1} targets")]
    Length(usize, usize),
    #[error("non-finite value at step {step} (batch seed {batch_seed}): {detail}")]
    NonFinite { step: u64, batch_seed: u64, detail: String },
    #[error("targets have zero variance; R² is undefined")]
    ZeroVariance,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: u64,
    pub lr: f64,
    pub lr_after: f64,
    pub lr_switch_step: u64,
    pub l2_lambda: f64,
    /// Held-out MSE is measured every this many steps (and at the end).
    pub eval_every: u64,
    /// Fraction of `total_steps` at which an early snapshot is kept.
    pub snapshot_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            total_steps: 20_000,
            lr: 0.001,
            lr_after: 0.0003,
            lr_switch_step: 12_000,
            l2_lambda: 0.1,
            eval_every: 1_000,
            snapshot_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.batch_size == 0 || self.total_steps == 0 || self.eval_every == 0 || self.lr_switch_step == 0 {
            return bad("batch_size, total_steps, eval_every and lr_switch_step must be positive");
        }
        if !(self.lr > 0.0 && self.lr_after > 0.0 && self.lr_after < self.lr) {
            return bad("need 0 < lr_after < lr");
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.snapshot_fraction) {
            return bad("snapshot_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            initial: self.lr,
            after: self.lr_after,
            switch_step: self.lr_switch_step,
        }
    }
}

/// Mean squared error plus `l2_lambda / 2` times the sum of squares of the
/// regularized weights.
pub fn loss(
    predictions: &[f64],
    targets: &[f64],
    params: &ModelParams<f32>,
    l2_lambda: f64,
) -> Result<f64, TrainError> {
    if predictions.len() != targets.len() {
        return Err(TrainError::Length(predictions.len(), targets.len()));
    }
    if targets.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / targets.len() as f64;
    Ok(mse + 0.5 * l2_lambda * params.store().l2_sum())
}

/// An encoded sample with standardized targets.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub encoding: InstanceEncoding,
    pub targets: Vec<f64>,
}

pub fn prepare(
    samples: &[Sample],
    target: Target,
    norm: &LabelNorm,
    feature_scale: f64,
) -> Result<Vec<Prepared>, TrainError> {
    samples
        .iter()
        .map(|s| {
            let encoding = InstanceEncoding::from_routing(&s.topology, &s.routing, &s.tm, feature_scale)?;
            let targets = s.labels.target(target).iter().map(|&v| norm.normalize(v)).collect();
            Ok(Prepared { encoding, targets })
        })
        .collect()
}

/// Largest traffic-matrix entry in the set, the default input scale.
pub fn max_demand(samples: &[Sample]) -> f64 {
    samples.iter().map(|s| s.tm.max_entry()).fold(0.0, f64::max)
}

/// Training loss on one batch, on a tape. Returns the tape, the MSE node and
/// the total loss node (MSE plus the L2 term).
pub fn batch_loss(
    params: &ModelParams<f64>,
    batch: &[&Prepared],
    masks: Option<&ReadoutMasks<f64>>,
    l2_lambda: f64,
) -> Result<(Graph<f64>, crate::autodiff::Var), TrainError> {
    let joined = InstanceEncoding::concat(batch.iter().map(|p| &p.encoding));
    let plan = MessagePlan::new(&joined);
    let mut g = Graph::new();
    let model = params.bind(&mut g);
    let hp = forward_states(&mut g, params, &model, &joined, &plan)?;
    let y = readout_graph(&mut g, &model, hp, masks, params.config().dropout)?;
    let targets: Vec<f64> = batch.iter().flat_map(|p| p.targets.iter().copied()).collect();
    let t = g
        .input(Tensor::matrix(targets.len(), 1, targets).map_err(ModelError::from)?)
        .map_err(ModelError::from)?;
    let diff = g.sub(y, t).map_err(ModelError::from)?;
    let sq = g.mul(diff, diff).map_err(ModelError::from)?;
    let mse = g.mean_all(sq).map_err(ModelError::from)?;
    let mut total = mse;
    if l2_lambda > 0.0 {
        let store = params.store();
        let mut terms = Vec::new();
        for id in store.ids().filter(|&id| store.is_regularized(id)) {
            let w = g.param(store, id);
            let w2 = g.mul(w, w).map_err(ModelError::from)?;
            terms.push(g.sum_all(w2).map_err(ModelError::from)?);
        }
        for term in terms {
            let scaled = g.scale(term, 0.5 * l2_lambda).map_err(ModelError::from)?;
            total = g.add(total, scaled).map_err(ModelError::from)?;
        }
    }
    Ok((g, total))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    /// Batch MSE on standardized labels.
    pub mse: f64,
    /// Exponentially smoothed `mse` (weight 0.95 on the past).
    pub smoothed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    /// Dropout-free MSE on standardized held-out labels.
    pub mse: f64,
}

pub const CURVE_SMOOTHING: f64 = 0.95;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Snapshot taken after `snapshot_fraction` of the steps.
    pub early: Option<Checkpoint>,
    pub curve: Vec<CurvePoint>,
    pub evals: Vec<EvalPoint>,
}

/// Dropout-free MSE over prepared samples, in standardized units.
pub fn eval_mse(params: &ModelParams<f32>, data: &[Prepared]) -> Result<f64, TrainError> {
    let chunks: Vec<&[Prepared]> = data.chunks(64).collect();
    let parts: Vec<Result<(f64, usize), TrainError>> = chunks
        .par_iter()
        .map(|chunk| {
            let joined = InstanceEncoding::concat(chunk.iter().map(|p| &p.encoding));
            let y = predict_deterministic(params, &joined)?;
            let t = chunk.iter().flat_map(|p| p.targets.iter());
            Ok((y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum(), y.len()))
        })
        .collect();
    let (mut sum, mut n) = (0.0, 0);
    for p in parts {
        let (s, c) = p?;
        sum += s;
        n += c;
    }
    if n == 0 {
        return Err(TrainError::EmptyData);
    }
    Ok(sum / n as f64)
}

/// Trains a fresh model. The input scale is the largest demand seen in
/// `train_set`; labels are standardized with its statistics.
pub fn train(
    train_set: &[Sample],
    eval_set: &[Sample],
    target: Target,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let mut mc = model_config.clone();
    mc.feature_scale = max_demand(train_set);
    let params = ModelParams::<f32>::new(mc)?;
    train_from(params, train_set, eval_set, target, config)
}

/// Starts from the weights of an earlier (delay) checkpoint and retrains them
/// on jitter labels, restandardized with the jitter statistics.
pub fn transfer_to_jitter(
    delay: &Checkpoint,
    train_set: &[Sample],
    eval_set: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let mut params = delay.params.clone();
    params.store_mut().reset_optimizer();
    train_from(params, train_set, eval_set, Target::Jitter, config)
}

/// The training loop proper, starting from given weights.
pub fn train_from(
    mut params: ModelParams<f32>,
    train_set: &[Sample],
    eval_set: &[Sample],
    target: Target,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let labels: Vec<f64> = train_set
        .iter()
        .flat_map(|s| s.labels.target(target).iter().copied())
        .collect();
    let norm = LabelNorm::fit(&labels);
    let scale = params.config().feature_scale;
    let data = prepare(train_set, target, &norm, scale)?;
    let held_out = prepare(eval_set, target, &norm, scale)?;
    let widths = params.config().readout_hidden.clone();
    let rate = params.config().dropout;
    let schedule = config.schedule();
    let snapshot_step = (config.total_steps as f64 * config.snapshot_fraction).round() as u64;
    let adam = AdamConfig::default();

    let mut curve = Vec::with_capacity(config.total_steps as usize);
    let mut evals = Vec::new();
    let mut early = None;
    let mut smoothed: Option<f64> = None;
    let checkpoint = |params: &ModelParams<f32>, step| Checkpoint {
        params: params.clone(),
        target,
        label_norm: norm,
        step,
    };
    if !held_out.is_empty() {
        evals.push(EvalPoint {
            step: 0,
            mse: eval_mse(&params, &held_out)?,
        });
    }
    for step in 0..config.total_steps {
        if step == snapshot_step && config.snapshot_fraction > 0.0 {
            early = Some(checkpoint(&params, step));
        }
        let batch_seed = derive_seed(config.seed, step);
        let mut rng = ChaCha8Rng::seed_from_u64(batch_seed);
        let batch: Vec<&Prepared> = (0..config.batch_size)
            .map(|_| &data[rng.random_range(0..data.len())])
            .collect();
        let non_finite = |detail: String| TrainError::NonFinite {
            step,
            batch_seed,
            detail,
        };
        let rows: usize = batch.iter().map(|p| p.encoding.path_count()).sum();
        let masks = ReadoutMasks::<f32>::sample(&mut rng, rows, &widths, rate);
        let (mse, grads) = step_gradients(&params, &batch, &masks).map_err(|e| non_finite(e.to_string()))?;
        let mut grads = grads;
        grads.add_l2(params.store(), config.l2_lambda);
        if !grads.is_finite() || !mse.is_finite() {
            return Err(non_finite("gradient".into()));
        }
        adam_update(params.store_mut(), &grads, schedule.at(step), adam).map_err(ModelError::from)?;
        let s = match smoothed {
            None => mse,
            Some(prev) => CURVE_SMOOTHING * prev + (1.0 - CURVE_SMOOTHING) * mse,
        };
        smoothed = Some(s);
        curve.push(CurvePoint {
            step: step + 1,
            mse,
            smoothed: s,
        });
        let done = step + 1;
        if !held_out.is_empty() && (done % config.eval_every == 0 || done == config.total_steps) {
            let mse = eval_mse(&params, &held_out)?;
            info!("step {done}: train {s:.4} held-out {mse:.4}");
            evals.push(EvalPoint { step: done, mse });
        }
    }
    Ok(TrainOutcome {
        checkpoint: checkpoint(&params, config.total_steps),
        early,
        curve,
        evals,
    })
}

/// One forward/backward pass in single precision; returns the batch MSE and
/// the MSE gradients (the L2 gradient is added by the caller).
fn step_gradients(
    params: &ModelParams<f32>,
    batch: &[&Prepared],
    masks: &ReadoutMasks<f32>,
) -> Result<(f64, crate::autodiff::Gradients<f32>), ModelError> {
    let joined = InstanceEncoding::concat(batch.iter().map(|p| &p.encoding));
    let plan = MessagePlan::new(&joined);
    let mut g = Graph::new();
    let model = params.bind(&mut g);
    let hp = forward_states(&mut g, params, &model, &joined, &plan)?;
    let y = readout_graph(&mut g, &model, hp, Some(masks), params.config().dropout)?;
    let targets: Vec<f32> = batch.iter().flat_map(|p| p.targets.iter().map(|&v| v as f32)).collect();
    let t = g.input(Tensor::matrix(targets.len(), 1, targets)?)?;
    let diff = g.sub(y, t)?;
    let sq = g.mul(diff, diff)?;
    let mse = g.mean_all(sq)?;
    let value = g.value(mse).data()[0] as f64;
    Ok((value, g.backward(mse, params.store())?))
}

/// One path of one evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub sample: usize,
    pub src: usize,
    pub dst: usize,
    pub target: f64,
    pub prediction: f64,
    pub lower: f64,
    pub upper: f64,
    /// `(prediction - target) / target`, absent when the target is zero.
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target: Target,
    pub r_squared: f64,
    pub pearson_rho: f64,
    /// `(quantile level, relative error)` pairs.
    pub relative_error_cdf: Vec<(f64, f64)>,
    pub residuals: Vec<Residual>,
}

pub const CDF_LEVELS: [f64; 9] = [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99];

/// `1 - SS_res / SS_tot`.
pub fn r_squared(predictions: &[f64], targets: &[f64]) -> Result<f64, TrainError> {
    if predictions.len() != targets.len() {
        return Err(TrainError::Length(predictions.len(), targets.len()));
    }
    if targets.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(TrainError::ZeroVariance);
    }
    let ss_res: f64 = predictions.iter().zip(targets).map(|(p, t)| (t - p) * (t - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Pearson correlation with single-pass co-moment updates.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, TrainError> {
    if xs.len() != ys.len() {
        return Err(TrainError::Length(xs.len(), ys.len()));
    }
    if xs.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let n = (i + 1) as f64;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(TrainError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// MC-dropout evaluation. Sample `i` draws its dropout masks from
/// `derive_seed(seed, i)`; samples are processed in fixed chunks so the result
/// does not depend on the thread count.
pub fn evaluate(checkpoint: &Checkpoint, samples: &[Sample], n_mc: usize, seed: u64) -> Result<EvalReport, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let params = Arc::new(checkpoint.params.clone());
    let encodings: Vec<InstanceEncoding> = samples
        .iter()
        .map(|s| checkpoint.encode(&s.topology, &s.routing, &s.tm))
        .collect::<Result<_, _>>()?;
    let indices: Vec<usize> = (0..samples.len()).collect();
    let chunks: Vec<&[usize]> = indices.chunks(32).collect();
    let dists: Vec<Result<Vec<_>, ModelError>> = chunks
        .par_iter()
        .map(|chunk| {
            let refs: Vec<&InstanceEncoding> = chunk.iter().map(|&i| &encodings[i]).collect();
            let seeds: Vec<u64> = chunk.iter().map(|&i| derive_seed(seed, i as u64)).collect();
            predict_mc_batch(&params, &refs, n_mc, &seeds)
        })
        .collect();
    let mut residuals = Vec::new();
    let mut sample_idx = 0;
    for chunk in dists {
        for dist in chunk? {
            let dist = dist.map(|v| checkpoint.label_norm.denormalize(v));
            let s = &samples[sample_idx];
            let n = s.topology.node_count();
            for (p, &y) in s.labels.target(checkpoint.target).iter().enumerate() {
                let (src, dst) = pair_of(n, p);
                let yhat = dist.median[p];
                residuals.push(Residual {
                    sample: sample_idx,
                    src,
                    dst,
                    target: y,
                    prediction: yhat,
                    lower: dist.lower[p],
                    upper: dist.upper[p],
                    relative_error: (y != 0.0).then(|| (yhat - y) / y),
                });
            }
            sample_idx += 1;
        }
    }
    report_from_residuals(checkpoint.target, residuals)
}

pub fn report_from_residuals(target: Target, residuals: Vec<Residual>) -> Result<EvalReport, TrainError> {
    let preds: Vec<f64> = residuals.iter().map(|r| r.prediction).collect();
    let targets: Vec<f64> = residuals.iter().map(|r| r.target).collect();
    let r2 = r_squared(&preds, &targets)?;
    let rho = pearson(&preds, &targets)?;
    let mut rel: Vec<f64> = residuals.iter().filter_map(|r| r.relative_error).collect();
    rel.sort_by(f64::total_cmp);
    let cdf = if rel.is_empty() {
        Vec::new()
    } else {
        CDF_LEVELS
            .iter()
            .map(|&q| (q, crate::model::percentile(&rel, q)))
            .collect()
    };
    Ok(EvalReport {
        target,
        r_squared: r2,
        pearson_rho: rho,
        relative_error_cdf: cdf,
        residuals,
    })
}

impl EvalReport {
    pub fn summary(&self) -> String {
        let mut out = format!(
            "target: {}\npaths: {}\nR2: {:.6}\nrho: {:.6}\nrelative error quantiles:\n",
            self.target.name(),
            self.residuals.len(),
            self.r_squared,
            self.pearson_rho
        );
        for (q, v) in &self.relative_error_cdf {
            out.push_str(&format!("  q{:.2}: {:+.6}\n", q, v));
        }
        out
    }

    pub fn residuals_csv(&self) -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.residuals {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }

    pub fn parse_residuals_csv(bytes: &[u8]) -> Result<Vec<Residual>, csv::Error> {
        csv::Reader::from_reader(bytes).deserialize().collect()
    }
}

pub fn curve_csv(curve: &[CurvePoint]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in curve {
        w.serialize(p)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, Scenario, TiSpec};
    use crate::graph::{random_routing_variants, random_topology};
    use crate::netsim::SimConfig;

    fn two_pass_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for i in 0..x.len() {
            sxy += (x[i] - mx) * (y[i] - my);
            sxx += (x[i] - mx) * (x[i] - mx);
            syy += (y[i] - my) * (y[i] - my);
        }
        sxy / (sxx * syy).sqrt()
    }

    fn two_pass_r2(p: &[f64], t: &[f64]) -> f64 {
        let n = t.len() as f64;
        let m = t.iter().sum::<f64>() / n;
        let mut res = 0.0;
        let mut tot = 0.0;
        for i in 0..t.len() {
            res += (t[i] - p[i]).powi(2);
            tot += (t[i] - m).powi(2);
        }
        1.0 - res / tot
    }

    #[test]
    fn metrics_match_two_pass_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.random_range(3..200);
            let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
            let p: Vec<f64> = t.iter().map(|v| v + rng.random_range(-2.0..2.0)).collect();
            assert!((r_squared(&p, &t).unwrap() - two_pass_r2(&p, &t)).abs() < 1e-10);
            assert!((pearson(&p, &t).unwrap() - two_pass_pearson(&p, &t)).abs() < 1e-10);
        }
    }

    #[test]
    fn metric_edge_cases() {
        let t = [1.0, 2.0, 4.0];
        assert_eq!(r_squared(&t, &t).unwrap(), 1.0);
        assert!((pearson(&t, &t).unwrap() - 1.0).abs() < 1e-15);
        let mean = [7.0 / 3.0; 3];
        assert!(r_squared(&mean, &t).unwrap().abs() < 1e-15);
        assert!(matches!(r_squared(&t, &[1.0, 1.0, 1.0]), Err(TrainError::ZeroVariance)));
        assert!(matches!(r_squared(&t, &[1.0]), Err(TrainError::Length(3, 1))));
    }

    #[test]
    fn loss_values() {
        let mut params = ModelParams::<f32>::new(ModelConfig::default()).unwrap();
        assert_eq!(loss(&[1.0, 2.0], &[0.0, 0.0], &params, 0.0).unwrap(), 2.5);
        for id in params.store().ids().collect::<Vec<_>>() {
            params.store_mut().value_mut(id).data_mut().fill(0.0);
        }
        assert_eq!(loss(&[1.0, 2.0], &[1.0, 2.0], &params, 0.1).unwrap(), 0.0);
        assert!(loss(&[1.0], &[1.0, 2.0], &params, 0.1).is_err());
        let w = params.hidden_layers()[0].weight;
        params.store_mut().value_mut(w).data_mut()[0] = 2.0;
        let b = params.hidden_layers()[0].bias;
        params.store_mut().value_mut(b).data_mut()[0] = 5.0;
        assert!((loss(&[0.0], &[0.0], &params, 0.1).unwrap() - 0.2).abs() < 1e-12);
    }

    fn tiny_data(seed: u64, count: usize) -> Vec<Sample> {
        let topology = random_topology(5, 2, 6.0, 3).unwrap();
        let routings = random_routing_variants(&topology, 3, 4).unwrap();
        let cfg = SimConfig {
            duration: 200.0,
            warmup: 20.0,
            ..SimConfig::default()
        };
        generate_dataset(
            &[Scenario { topology, routings }],
            &TiSpec::Range(2.0, 6.0),
            count,
            &cfg,
            seed,
        )
        .unwrap()
        .samples
    }

    fn tiny_config(steps: u64) -> (ModelConfig, TrainConfig) {
        let mc = ModelConfig {
            path_dim: 8,
            link_dim: 4,
            iterations: 3,
            ..ModelConfig::default()
        };
        let tc = TrainConfig {
            batch_size: 4,
            total_steps: steps,
            lr_switch_step: steps / 2,
            eval_every: 10,
            seed: 5,
            ..TrainConfig::default()
        };
        (mc, tc)
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let data = tiny_data(1, 8);
        let (mc, tc) = tiny_config(60);
        let a = train(&data, &data, Target::Delay, &mc, &tc).unwrap();
        let b = train(&data, &data, Target::Delay, &mc, &tc).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        assert_eq!(a.early.as_ref().unwrap().step, 6);
        let first = a.evals.first().unwrap().mse;
        let last = a.evals.last().unwrap().mse;
        assert!(last < first, "held-out mse {first} -> {last}");
        assert_eq!(a.curve.len(), 60);
    }

    #[test]
    fn transfer_starts_from_delay_weights() {
        let data = tiny_data(2, 6);
        let (mc, tc) = tiny_config(20);
        let delay = train(&data, &[], Target::Delay, &mc, &tc).unwrap();
        let before = evaluate(&delay.checkpoint, &data, 5, 1).unwrap();
        let reloaded = Checkpoint::from_bytes(&delay.checkpoint.to_bytes()).unwrap();
        assert_eq!(evaluate(&reloaded, &data, 5, 1).unwrap(), before);
        let jitter = transfer_to_jitter(&delay.checkpoint, &data, &[], &tc).unwrap();
        assert_eq!(jitter.checkpoint.target, Target::Jitter);
        assert_eq!(jitter.checkpoint.params.config(), delay.checkpoint.params.config());
    }

    #[test]
    fn evaluation_report_and_csv() {
        let data = tiny_data(3, 4);
        let (mc, tc) = tiny_config(10);
        let out = train(&data, &[], Target::Delay, &mc, &tc).unwrap();
        let report = evaluate(&out.checkpoint, &data, 7, 3).unwrap();
        assert_eq!(report, evaluate(&out.checkpoint, &data, 7, 3).unwrap());
        assert_eq!(report.residuals.len(), data.len() * 20);
        assert!(report.r_squared <= 1.0);
        assert!((-1.0..=1.0).contains(&report.pearson_rho));
        let csv = report.residuals_csv().unwrap();
        assert_eq!(EvalReport::parse_residuals_csv(&csv).unwrap(), report.residuals);
        assert!(report.summary().contains("R2:"));
        let curve = curve_csv(&out.curve).unwrap();
        let text = String::from_utf8(curve).unwrap();
        assert!(text.starts_with("step,mse,smoothed"));
    }

    #[test]
    fn batch_loss_gradient_matches_finite_differences() {
        let data = tiny_data(4, 2);
        let mc = ModelConfig {
            path_dim: 4,
            link_dim: 3,
            iterations: 2,
            readout_hidden: vec![3, 2],
            ..ModelConfig::default()
        };
        let params = ModelParams::<f64>::new(mc).unwrap();
        let prepared = prepare(&data[..1], Target::Delay, &LabelNorm::fit(&data[0].labels.delay), 1.0).unwrap();
        let batch: Vec<&Prepared> = prepared.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let masks = ReadoutMasks::sample(&mut rng, 20, &[3, 2], 0.5);
        let (g, l) = batch_loss(&params, &batch, Some(&masks), 0.1).unwrap();
        let grads = g.backward(l, params.store()).unwrap();
        let h = 1e-6;
        for id in params.store().ids().collect::<Vec<_>>() {
            for i in 0..params.store().value(id).numel() {
                let f = |delta: f64| {
                    let mut p = params.clone();
                    p.store_mut().value_mut(id).data_mut()[i] += delta;
                    let (g, l) = batch_loss(&p, &batch, Some(&masks), 0.1).unwrap();
                    g.value(l).data()[0]
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                let an = grads.get(id).data()[i];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "{}[{i}] {fd} vs {an}",
                    params.store().name(id)
                );
            }
        }
    }
}
