use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use super::{AutodiffError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry<F> {
    name: String,
    value: Tensor<F>,
    /// Included in the L2 penalty.
    regularized: bool,
    first_moment: Vec<F>,
    second_moment: Vec<F>,
}

/// Named trainable tensors together with their Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    entries: Vec<Entry<F>>,
    index: HashMap<String, usize>,
    step: u64,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<F>, regularized: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(AutodiffError::DuplicateParam(name.to_string()));
        }
        let n = value.numel();
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            regularized,
            first_moment: vec![F::zero(); n],
            second_moment: vec![F::zero(); n],
        });
        self.index.insert(name.to_string(), self.entries.len() - 1);
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }

    pub fn is_regularized(&self, id: ParamId) -> bool {
        self.entries[id.0].regularized
    }

    /// Adam steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Sum of squares over regularized parameters.
    pub fn l2_sum(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.regularized)
            .flat_map(|e| e.value.data())
            .map(|v| v.f64() * v.f64())
            .sum()
    }

    /// Converts values to another precision; Adam state is reset.
    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        let mut out = ParamStore::new();
        for e in &self.entries {
            out.add(&e.name, e.value.cast(), e.regularized)
                .expect("names are unique in the source store");
        }
        out
    }

    /// Drops optimizer state, keeping values.
    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for e in &mut self.entries {
            e.first_moment.iter_mut().for_each(|m| *m = F::zero());
            e.second_moment.iter_mut().for_each(|m| *m = F::zero());
        }
    }
}

/// One gradient tensor per parameter, aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    grads: Vec<Tensor<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Gradients {
            grads: store.entries.iter().map(|e| Tensor::zeros(e.value.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &[F]) {
        for (o, &x) in self.grads[id.0].data_mut().iter_mut().zip(g) {
            *o = *o + x;
        }
    }

    /// Adds `lambda * w` for every regularized parameter, the gradient of
    /// `lambda / 2 * sum(w^2)`.
    pub fn add_l2(&mut self, store: &ParamStore<F>, lambda: f64) {
        let l = F::of(lambda);
        for (g, e) in self.grads.iter_mut().zip(&store.entries) {
            if e.regularized {
                for (o, &w) in g.data_mut().iter_mut().zip(e.value.data()) {
                    *o = *o + l * w;
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam step; increments the store's step counter.
pub fn adam_update<F: Scalar>(store: &mut ParamStore<F>, grads: &Gradients<F>, lr: f64, cfg: AdamConfig) -> Result<()> {
    if grads.grads.len() != store.entries.len() {
        return Err(AutodiffError::Shape {
            op: "adam",
            detail: format!("{} gradients for {} parameters", grads.grads.len(), store.entries.len()),
        });
    }
    for (g, e) in grads.grads.iter().zip(&store.entries) {
        if g.shape() != e.value.shape() {
            return Err(AutodiffError::Shape {
                op: "adam",
                detail: format!(
                    "gradient {:?} for parameter {} {:?}",
                    g.shape(),
                    e.name,
                    e.value.shape()
                ),
            });
        }
    }
    store.step += 1;
    let t = store.step as i32;
    let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
    let c1 = F::one() - F::of(cfg.beta1.powi(t));
    let c2 = F::one() - F::of(cfg.beta2.powi(t));
    let (lr, eps) = (F::of(lr), F::of(cfg.eps));
    for (g, e) in grads.grads.iter().zip(store.entries.iter_mut()) {
        let params = e.value.data_mut();
        for (((w, &gi), m), v) in params
            .iter_mut()
            .zip(g.data())
            .zip(e.first_moment.iter_mut())
            .zip(e.second_moment.iter_mut())
        {
            *m = b1 * *m + (F::one() - b1) * gi;
            *v = b2 * *v + (F::one() - b2) * gi * gi;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Two-phase learning rate: `initial` before `switch_step`, `after` from then on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub after: f64,
    pub switch_step: u64,
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if step < self.switch_step {
            self.initial
        } else {
            self.after
        }
    }
}
