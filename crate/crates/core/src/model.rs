//! The path/link message-passing model.
//!
//! Path states run a GRU along their link sequences; every intermediate state
//! is a message to the link just visited. Links sum their messages in
//! ascending path-id order and update through a second GRU. After `T` rounds a
//! small SELU network with dropout maps each final path state to a scalar.
//!
//! The forward pass is vectorized over paths. Paths are sorted by length
//! (longest first, ties by id) so that the paths still active at hop `k` form
//! a prefix of the state matrix; each hop is then one batched GRU step over
//! that prefix.

use std::path::Path as FsPath;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{gru_step, AutodiffError, BoundGru, Graph, GruParams, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::graph::{pair_count, RoutingScheme, Topology};
use crate::traffic::TrafficMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid instance: {0}")]
    Instance(String),
    #[error("readout masks: {0}")]
    Mask(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub path_dim: usize,
    pub link_dim: usize,
    pub iterations: usize,
    /// Widths of the SELU hidden layers of the readout.
    pub readout_hidden: Vec<usize>,
    pub dropout: f64,
    /// Path demands are divided by this before entering the first state slot.
    pub feature_scale: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            path_dim: 32,
            link_dim: 16,
            iterations: 8,
            readout_hidden: vec![8, 8],
            dropout: 0.5,
            feature_scale: 1.0,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.path_dim == 0 || self.link_dim == 0 {
            return bad("state dimensions must be at least 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.readout_hidden.contains(&0) {
            return bad("readout layer widths must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.feature_scale.is_finite() && self.feature_scale > 0.0) {
            return bad("feature_scale must be positive and finite");
        }
        Ok(())
    }
}

/// Link `link` is the `position`-th hop of path `path`.
///
/// Field order gives the derived ordering `(path, position, link)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Incidence {
    pub path: usize,
    pub position: usize,
    pub link: usize,
}

/// Model inputs for one (or several concatenated) network instances.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceEncoding {
    features: Vec<f64>,
    link_count: usize,
    incidence: Vec<Incidence>,
    path_start: Vec<usize>,
}

impl InstanceEncoding {
    /// `features[p]` is the already scaled input of path `p`. The incidence
    /// triples may come in any order.
    pub fn new(features: Vec<f64>, link_count: usize, mut incidence: Vec<Incidence>) -> Result<Self> {
        let n = features.len();
        if n == 0 {
            return Err(ModelError::Instance("no paths".into()));
        }
        if let Some(p) = features.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::Instance(format!("feature of path {p} is not finite")));
        }
        incidence.sort_unstable();
        let mut counts = vec![0usize; n];
        for inc in &incidence {
            if inc.path >= n {
                return Err(ModelError::Instance(format!("path id {} out of range", inc.path)));
            }
            if inc.link >= link_count {
                return Err(ModelError::Instance(format!("link id {} out of range", inc.link)));
            }
            counts[inc.path] += 1;
        }
        if let Some(p) = counts.iter().position(|&c| c == 0) {
            return Err(ModelError::Instance(format!("path {p} has no links")));
        }
        let mut path_start = Vec::with_capacity(n + 1);
        path_start.push(0);
        for c in &counts {
            path_start.push(path_start.last().unwrap() + c);
        }
        for (i, inc) in incidence.iter().enumerate() {
            if inc.position != i - path_start[inc.path] {
                return Err(ModelError::Instance(format!(
                    "path {} positions are not 0..{}",
                    inc.path, counts[inc.path]
                )));
            }
        }
        Ok(InstanceEncoding {
            features,
            link_count,
            incidence,
            path_start,
        })
    }

    /// Path ids follow the routing's lexicographic pair order; the feature of
    /// each path is its demand divided by `scale`.
    pub fn from_routing(topo: &Topology, routing: &RoutingScheme, tm: &TrafficMatrix, scale: f64) -> Result<Self> {
        let n = topo.node_count();
        if tm.n() != n || routing.len() != pair_count(n) {
            return Err(ModelError::Instance(format!(
                "topology has {n} nodes, traffic matrix {}, routing {} paths",
                tm.n(),
                routing.len()
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(ModelError::Instance(format!("feature scale {scale}")));
        }
        let features = tm.pair_demands().into_iter().map(|d| d / scale).collect();
        let incidence = routing
            .paths()
            .iter()
            .enumerate()
            .flat_map(|(p, path)| {
                path.links.iter().enumerate().map(move |(position, &link)| Incidence {
                    path: p,
                    position,
                    link,
                })
            })
            .collect();
        Self::new(features, topo.link_count(), incidence)
    }

    /// Disjoint union: path and link ids of later parts are offset.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a InstanceEncoding>) -> Self {
        let mut out = InstanceEncoding {
            features: Vec::new(),
            link_count: 0,
            incidence: Vec::new(),
            path_start: vec![0],
        };
        for part in parts {
            let (po, lo, io) = (out.features.len(), out.link_count, out.incidence.len());
            out.features.extend_from_slice(&part.features);
            out.link_count += part.link_count;
            out.incidence.extend(part.incidence.iter().map(|inc| Incidence {
                path: inc.path + po,
                position: inc.position,
                link: inc.link + lo,
            }));
            out.path_start.extend(part.path_start[1..].iter().map(|s| s + io));
        }
        out
    }

    pub fn path_count(&self) -> usize {
        self.features.len()
    }

    pub fn link_count(&self) -> usize {
        self.link_count
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Sorted by `(path, position)`.
    pub fn incidence(&self) -> &[Incidence] {
        &self.incidence
    }

    pub fn path_len(&self, path: usize) -> usize {
        self.path_start[path + 1] - self.path_start[path]
    }

    pub fn path_links(&self, path: usize) -> impl Iterator<Item = usize> + '_ {
        self.incidence[self.path_start[path]..self.path_start[path + 1]]
            .iter()
            .map(|i| i.link)
    }
}

/// Index tables for the vectorized forward pass, derived once per encoding.
#[derive(Debug, Clone)]
pub struct MessagePlan {
    path_count: usize,
    link_count: usize,
    /// Slot → path id, longest paths first.
    order: Arc<[usize]>,
    /// Path id → slot.
    restore: Arc<[usize]>,
    /// Number of paths with more than `k` hops.
    active: Vec<usize>,
    /// Link visited at hop `k` by each active slot.
    link_at: Vec<Arc<[usize]>>,
    /// Row of the stacked per-hop messages for each incidence, in canonical order.
    message_order: Arc<[usize]>,
    message_links: Arc<[usize]>,
}

impl MessagePlan {
    pub fn new(enc: &InstanceEncoding) -> Self {
        let n = enc.path_count();
        let lens: Vec<usize> = (0..n).map(|p| enc.path_len(p)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| lens[b].cmp(&lens[a]).then(a.cmp(&b)));
        let mut restore = vec![0; n];
        for (slot, &p) in order.iter().enumerate() {
            restore[p] = slot;
        }
        let max_len = lens[order[0]];
        let mut active = Vec::with_capacity(max_len);
        let mut link_at = Vec::with_capacity(max_len);
        for k in 0..max_len {
            let nk = order.iter().take_while(|&&p| lens[p] > k).count();
            active.push(nk);
            link_at.push(
                order[..nk]
                    .iter()
                    .map(|&p| enc.incidence[enc.path_start[p] + k].link)
                    .collect::<Arc<[usize]>>(),
            );
        }
        let mut block = Vec::with_capacity(max_len);
        let mut acc = 0;
        for &nk in &active {
            block.push(acc);
            acc += nk;
        }
        let message_order = enc
            .incidence
            .iter()
            .map(|inc| block[inc.position] + restore[inc.path])
            .collect();
        let message_links = enc.incidence.iter().map(|inc| inc.link).collect();
        MessagePlan {
            path_count: n,
            link_count: enc.link_count,
            order: order.into(),
            restore: restore.into(),
            active,
            link_at,
            message_order,
            message_links,
        }
    }

    pub fn path_count(&self) -> usize {
        self.path_count
    }

    pub fn link_count(&self) -> usize {
        self.link_count
    }
}

/// Weight and bias of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// All trainable tensors of the model together with the config that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    config: ModelConfig,
    store: ParamStore<F>,
    path_rnn: GruParams,
    link_update: GruParams,
    hidden: Vec<Dense>,
    output: Dense,
}

impl<F: Scalar> ModelParams<F> {
    /// Fresh parameters, uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, drawn
    /// from `config.init_seed`. Only readout weight matrices are L2-regularized.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let path_rnn = GruParams::register(&mut store, "path_rnn", config.path_dim, config.link_dim, &mut rng)?;
        let link_update = GruParams::register(&mut store, "link_update", config.link_dim, config.path_dim, &mut rng)?;
        let mut dense = |store: &mut ParamStore<F>, name: &str, fan_in: usize, width: usize| -> Result<Dense> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |n: usize| -> Vec<F> { (0..n).map(|_| F::of(rng.random_range(-bound..=bound))).collect() };
            let w = Tensor::matrix(fan_in, width, draw(fan_in * width))?;
            let b = Tensor::new(vec![width], draw(width))?;
            Ok(Dense {
                weight: store.add(&format!("{name}.weight"), w, true)?,
                bias: store.add(&format!("{name}.bias"), b, false)?,
            })
        };
        let mut hidden = Vec::new();
        let mut fan_in = config.path_dim;
        for (i, &w) in config.readout_hidden.iter().enumerate() {
            hidden.push(dense(&mut store, &format!("readout.hidden{i}"), fan_in, w)?);
            fan_in = w;
        }
        let output = dense(&mut store, "readout.output", fan_in, 1)?;
        Ok(ModelParams {
            config,
            store,
            path_rnn,
            link_update,
            hidden,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    pub fn path_rnn(&self) -> GruParams {
        self.path_rnn
    }

    pub fn link_update(&self) -> GruParams {
        self.link_update
    }

    pub fn hidden_layers(&self) -> &[Dense] {
        &self.hidden
    }

    pub fn output_layer(&self) -> Dense {
        self.output
    }

    /// Changes only the input scaling; weights are untouched.
    pub fn set_feature_scale(&mut self, scale: f64) -> Result<()> {
        let mut c = self.config.clone();
        c.feature_scale = scale;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            config: self.config.clone(),
            store: self.store.cast(),
            path_rnn: self.path_rnn,
            link_update: self.link_update,
            hidden: self.hidden.clone(),
            output: self.output,
        }
    }

    pub fn bind(&self, g: &mut Graph<F>) -> BoundModel {
        let dense = |g: &mut Graph<F>, d: &Dense| (g.param(&self.store, d.weight), g.param(&self.store, d.bias));
        BoundModel {
            path_rnn: self.path_rnn.bind(g, &self.store),
            link_update: self.link_update.bind(g, &self.store),
            hidden: self.hidden.iter().map(|d| dense(g, d)).collect(),
            output: dense(g, &self.output),
        }
    }
}

/// Model weights placed on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    path_rnn: BoundGru,
    link_update: BoundGru,
    hidden: Vec<(Var, Var)>,
    output: (Var, Var),
}

/// Initial states: the scaled demand in the first slot of each path state,
/// zeros elsewhere; all link states zero.
pub fn init_states<F: Scalar>(instance: &InstanceEncoding, config: &ModelConfig) -> (Tensor<F>, Tensor<F>) {
    let n = instance.path_count();
    let mut hp = Tensor::zeros(&[n, config.path_dim]);
    for (p, &x) in instance.features().iter().enumerate() {
        hp.data_mut()[p * config.path_dim] = F::of(x);
    }
    (hp, Tensor::zeros(&[instance.link_count(), config.link_dim]))
}

/// `iterations` rounds of message passing on a tape. `hp` and `hl` are in
/// path-id and link-id order, and so are the returned states.
pub fn message_passing_graph<F: Scalar>(
    g: &mut Graph<F>,
    model: &BoundModel,
    plan: &MessagePlan,
    hp: Var,
    hl: Var,
    iterations: usize,
) -> Result<(Var, Var)> {
    let n = plan.path_count;
    let mut h = g.gather(hp, plan.order.clone())?;
    let mut hl = hl;
    for _ in 0..iterations {
        let mut messages = Vec::with_capacity(plan.active.len());
        for (k, &nk) in plan.active.iter().enumerate() {
            let x = g.gather(hl, plan.link_at[k].clone())?;
            let prefix = if nk == n { h } else { g.slice(h, 0, 0, nk)? };
            let next = gru_step(g, &model.path_rnn, prefix, x)?;
            messages.push(next);
            h = if nk == n {
                next
            } else {
                let rest = g.slice(h, 0, nk, n)?;
                g.concat(&[next, rest], 0)?
            };
        }
        let stacked = g.concat(&messages, 0)?;
        let canonical = g.gather(stacked, plan.message_order.clone())?;
        let summed = g.segment_sum(canonical, plan.message_links.clone(), plan.link_count)?;
        hl = gru_step(g, &model.link_update, hl, summed)?;
    }
    let hp = g.gather(h, plan.restore.clone())?;
    Ok((hp, hl))
}

/// Readout on a tape; returns an `[n, 1]` column. Without masks dropout is
/// skipped entirely.
pub fn readout_graph<F: Scalar>(
    g: &mut Graph<F>,
    model: &BoundModel,
    hp: Var,
    masks: Option<&ReadoutMasks<F>>,
    rate: f64,
) -> Result<Var> {
    let rows = g.shape(hp)[0];
    if let Some(m) = masks {
        if m.layers.len() != model.hidden.len() {
            return Err(ModelError::Mask(format!(
                "{} masks for {} hidden layers",
                m.layers.len(),
                model.hidden.len()
            )));
        }
    }
    let mut h = hp;
    for (i, &(w, b)) in model.hidden.iter().enumerate() {
        let z = g.matmul(h, w)?;
        let z = g.add_row(z, b)?;
        h = g.selu(z)?;
        if let Some(m) = masks {
            let width = g.shape(h)[1];
            if m.layers[i].len() != rows * width {
                return Err(ModelError::Mask(format!(
                    "layer {i} mask has {} entries, expected {rows} x {width}",
                    m.layers[i].len()
                )));
            }
            h = g.dropout(h, &m.layers[i], F::of(rate))?;
        }
    }
    let y = g.matmul(h, model.output.0)?;
    Ok(g.add_row(y, model.output.1)?)
}

/// Final path states (path-id order) for one encoding, with the configured
/// number of iterations.
pub fn forward_states<F: Scalar>(
    g: &mut Graph<F>,
    params: &ModelParams<F>,
    model: &BoundModel,
    instance: &InstanceEncoding,
    plan: &MessagePlan,
) -> Result<Var> {
    let (hp0, hl0) = init_states::<F>(instance, &params.config);
    let hp0 = g.input(hp0)?;
    let hl0 = g.input(hl0)?;
    let (hp, _) = message_passing_graph(g, model, plan, hp0, hl0, params.config.iterations)?;
    Ok(hp)
}

/// Eager message passing from explicit starting states.
pub fn message_passing<F: Scalar>(
    params: &ModelParams<F>,
    plan: &MessagePlan,
    hp: &Tensor<F>,
    hl: &Tensor<F>,
    iterations: usize,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let (n, l) = (plan.path_count, plan.link_count);
    let (dp, dl) = (params.config.path_dim, params.config.link_dim);
    if hp.shape() != [n, dp] || hl.shape() != [l, dl] {
        return Err(ModelError::Instance(format!(
            "states {:?} / {:?} for {n} paths and {l} links",
            hp.shape(),
            hl.shape()
        )));
    }
    let mut g = Graph::new();
    let model = params.bind(&mut g);
    let hp = g.input(hp.clone())?;
    let hl = g.input(hl.clone())?;
    let (hp, hl) = message_passing_graph(&mut g, &model, plan, hp, hl, iterations)?;
    Ok((g.value(hp).clone(), g.value(hl).clone()))
}

/// Eager readout of a `[n, path_dim]` state matrix.
pub fn readout<F: Scalar>(params: &ModelParams<F>, hp: &Tensor<F>, masks: Option<&ReadoutMasks<F>>) -> Result<Vec<F>> {
    let mut g = Graph::new();
    let model = params.bind(&mut g);
    let hp = g.input(hp.clone())?;
    let y = readout_graph(&mut g, &model, hp, masks, params.config.dropout)?;
    Ok(g.value(y).data().to_vec())
}

/// Dropout-free prediction for every path.
pub fn predict_deterministic<F: Scalar>(params: &ModelParams<F>, instance: &InstanceEncoding) -> Result<Vec<f64>> {
    let plan = MessagePlan::new(instance);
    let mut g = Graph::new();
    let model = params.bind(&mut g);
    let hp = forward_states(&mut g, params, &model, instance, &plan)?;
    let y = readout_graph(&mut g, &model, hp, None, 0.0)?;
    Ok(g.value(y).data().iter().map(|v| v.f64()).collect())
}

/// Per-row 0/1 keep masks for each hidden readout layer, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutMasks<F> {
    layers: Vec<Vec<F>>,
}

impl<F: Scalar> ReadoutMasks<F> {
    /// Each unit is kept with probability `1 - rate`.
    pub fn sample<R: Rng>(rng: &mut R, rows: usize, widths: &[usize], rate: f64) -> Self {
        let layers = widths
            .iter()
            .map(|&w| {
                (0..rows * w)
                    .map(|_| {
                        if rng.random::<f64>() >= rate {
                            F::one()
                        } else {
                            F::zero()
                        }
                    })
                    .collect()
            })
            .collect();
        ReadoutMasks { layers }
    }

    pub fn ones(rows: usize, widths: &[usize]) -> Self {
        ReadoutMasks {
            layers: widths.iter().map(|&w| vec![F::one(); rows * w]).collect(),
        }
    }

    /// Stacks row blocks of several instances, layer by layer.
    pub fn concat(parts: &[ReadoutMasks<F>]) -> Self {
        let depth = parts.first().map_or(0, |p| p.layers.len());
        let layers = (0..depth)
            .map(|i| parts.iter().flat_map(|p| p.layers[i].iter().copied()).collect())
            .collect();
        ReadoutMasks { layers }
    }

    pub fn layers(&self) -> &[Vec<F>] {
        &self.layers
    }
}

/// Linear-interpolation percentile of an ascending slice, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// MC-dropout predictions for each path: raw samples, the median and the
/// central 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    /// `samples[path][draw]`.
    pub samples: Vec<Vec<f64>>,
    pub median: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PredictiveDistribution {
    pub fn from_samples(samples: Vec<Vec<f64>>) -> Self {
        let mut median = Vec::with_capacity(samples.len());
        let mut lower = Vec::with_capacity(samples.len());
        let mut upper = Vec::with_capacity(samples.len());
        for s in &samples {
            let mut sorted = s.clone();
            sorted.sort_by(f64::total_cmp);
            median.push(percentile(&sorted, 0.5));
            lower.push(percentile(&sorted, 0.025));
            upper.push(percentile(&sorted, 0.975));
        }
        PredictiveDistribution {
            samples,
            median,
            lower,
            upper,
        }
    }

    /// Applies `f` to every raw sample and recomputes the summaries.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_samples(self.samples.iter().map(|s| s.iter().map(|&v| f(v)).collect()).collect())
    }

    pub fn path_count(&self) -> usize {
        self.samples.len()
    }
}

/// Runs message passing once and `n_samples` dropout readouts.
pub fn predict_mc<F: Scalar>(
    params: &ModelParams<F>,
    instance: &InstanceEncoding,
    n_samples: usize,
    seed: u64,
) -> Result<PredictiveDistribution> {
    Ok(predict_mc_batch(params, &[instance], n_samples, &[seed])?.remove(0))
}

/// [`predict_mc`] for many instances at once; instance `i` draws its masks
/// from `seeds[i]`, so results do not depend on how instances are grouped.
pub fn predict_mc_batch<F: Scalar>(
    params: &ModelParams<F>,
    instances: &[&InstanceEncoding],
    n_samples: usize,
    seeds: &[u64],
) -> Result<Vec<PredictiveDistribution>> {
    if n_samples == 0 {
        return Err(ModelError::Config("n_samples must be at least 1".into()));
    }
    if instances.len() != seeds.len() {
        return Err(ModelError::Config(format!(
            "{} seeds for {} instances",
            seeds.len(),
            instances.len()
        )));
    }
    if instances.is_empty() {
        return Ok(Vec::new());
    }
    let joined = InstanceEncoding::concat(instances.iter().copied());
    let plan = MessagePlan::new(&joined);
    let mut g = Graph::new();
    let model = params.bind(&mut g);
    let hp = forward_states(&mut g, params, &model, &joined, &plan)?;
    let hp = g.value(hp).clone();

    let widths = &params.config.readout_hidden;
    let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect();
    let mut draws: Vec<Vec<Vec<f64>>> = instances
        .iter()
        .map(|inst| vec![Vec::with_capacity(n_samples); inst.path_count()])
        .collect();
    for _ in 0..n_samples {
        let parts: Vec<ReadoutMasks<F>> = instances
            .iter()
            .zip(rngs.iter_mut())
            .map(|(inst, rng)| ReadoutMasks::sample(rng, inst.path_count(), widths, params.config.dropout))
            .collect();
        let masks = ReadoutMasks::concat(&parts);
        let y = readout(params, &hp, Some(&masks))?;
        let mut row = 0;
        for d in draws.iter_mut() {
            for path in d.iter_mut() {
                path.push(y[row].f64());
                row += 1;
            }
        }
    }
    Ok(draws.into_iter().map(PredictiveDistribution::from_samples).collect())
}

/// Which per-path metric a model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Delay,
    Jitter,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Delay => "delay",
            Target::Jitter => "jitter",
        }
    }
}

/// z-score transform of labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelNorm {
    pub mean: f64,
    pub std: f64,
}

impl Default for LabelNorm {
    fn default() -> Self {
        LabelNorm { mean: 0.0, std: 1.0 }
    }
}

impl LabelNorm {
    /// Mean and population standard deviation; a constant sample gets std 1.
    pub fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        LabelNorm {
            mean,
            std: if std > 0.0 && std.is_finite() { std } else { 1.0 },
        }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint does not match the model layout: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    target: Target,
    label_norm: LabelNorm,
    step: u64,
    tensors: Vec<TensorEntry>,
    payload_crc32: u32,
}

/// Trained weights plus everything needed to turn outputs back into labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub target: Target,
    pub label_norm: LabelNorm,
    /// Training steps taken when the snapshot was made.
    pub step: u64,
}

impl Checkpoint {
    /// Layout: `u64` little-endian manifest length, the JSON manifest, then
    /// every tensor as little-endian `f32` in manifest order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let store = self.params.store();
        let mut payload = Vec::with_capacity(store.scalar_count() * 4);
        let mut tensors = Vec::with_capacity(store.len());
        for id in store.ids() {
            let t = store.value(id);
            tensors.push(TensorEntry {
                name: store.name(id).to_string(),
                shape: t.shape().to_vec(),
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: CHECKPOINT_VERSION,
            config: self.params.config().clone(),
            target: self.target,
            label_norm: self.label_norm,
            step: self.step,
            tensors,
            payload_crc32: crc32fast::hash(&payload),
        };
        let header = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(8 + header.len() + payload.len());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        let corrupt = |m: String| CheckpointError::Corrupt(m);
        if bytes.len() < 8 {
            return Err(corrupt(format!("{} bytes is shorter than the header", bytes.len())));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        let rest = &bytes[8..];
        if header_len > rest.len() as u64 {
            return Err(corrupt(format!("manifest length {header_len} exceeds file size")));
        }
        let (header, payload) = rest.split_at(header_len as usize);
        let raw: serde_json::Value =
            serde_json::from_slice(header).map_err(|e| corrupt(format!("manifest is not JSON: {e}")))?;
        let found = raw
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| corrupt("manifest has no format_version".into()))?;
        if found != CHECKPOINT_VERSION as u64 {
            return Err(CheckpointError::Version {
                found: found.min(u32::MAX as u64) as u32,
                expected: CHECKPOINT_VERSION,
            });
        }
        let manifest: Manifest =
            serde_json::from_value(raw).map_err(|e| CheckpointError::Schema(format!("manifest fields: {e}")))?;
        let expected_len: usize = manifest
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>() * 4)
            .sum();
        if payload.len() != expected_len {
            return Err(corrupt(format!(
                "payload has {} bytes, manifest needs {expected_len}",
                payload.len()
            )));
        }
        if crc32fast::hash(payload) != manifest.payload_crc32 {
            return Err(corrupt("payload checksum mismatch".into()));
        }
        let mut params =
            ModelParams::<f32>::new(manifest.config).map_err(|e| CheckpointError::Schema(e.to_string()))?;
        if manifest.tensors.len() != params.store().len() {
            return Err(CheckpointError::Schema(format!(
                "{} tensors stored, model has {}",
                manifest.tensors.len(),
                params.store().len()
            )));
        }
        let mut offset = 0;
        for entry in &manifest.tensors {
            let id = params
                .store()
                .id(&entry.name)
                .map_err(|e| CheckpointError::Schema(e.to_string()))?;
            let dest = params.store_mut().value_mut(id);
            if dest.shape() != entry.shape.as_slice() {
                return Err(CheckpointError::Schema(format!(
                    "{} has shape {:?}, model expects {:?}",
                    entry.name,
                    entry.shape,
                    dest.shape()
                )));
            }
            for v in dest.data_mut() {
                *v = f32::from_le_bytes(payload[offset..offset + 4].try_into().unwrap());
                offset += 4;
            }
        }
        Ok(Checkpoint {
            params,
            target: manifest.target,
            label_norm: manifest.label_norm,
            step: manifest.step,
        })
    }

    pub fn save(&self, path: &FsPath) -> std::result::Result<(), CheckpointError> {
        crate::fsio::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &FsPath) -> std::result::Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// MC-dropout prediction in label units.
    pub fn predict(&self, instance: &InstanceEncoding, n_samples: usize, seed: u64) -> Result<PredictiveDistribution> {
        let raw = predict_mc(&self.params, instance, n_samples, seed)?;
        Ok(raw.map(|v| self.label_norm.denormalize(v)))
    }

    /// [`Checkpoint::predict`] over many instances; instance `i` uses `seeds[i]`.
    pub fn predict_batch(
        &self,
        instances: &[&InstanceEncoding],
        n_samples: usize,
        seeds: &[u64],
    ) -> Result<Vec<PredictiveDistribution>> {
        let raw = predict_mc_batch(&self.params, instances, n_samples, seeds)?;
        Ok(raw
            .into_iter()
            .map(|d| d.map(|v| self.label_norm.denormalize(v)))
            .collect())
    }

    /// Encodes an instance with this model's feature scale.
    pub fn encode(&self, topo: &Topology, routing: &RoutingScheme, tm: &TrafficMatrix) -> Result<InstanceEncoding> {
        InstanceEncoding::from_routing(topo, routing, tm, self.params.config().feature_scale)
    }
}
