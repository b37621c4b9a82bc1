use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Graph, Var};
use super::tensor::{Scalar, Tensor};
use super::{AutodiffError, Result};

/// Weights of one GRU cell acting on the concatenation `[state, input]`.
///
/// `gate_weight` holds the update gate in columns `0..state_dim` and the reset
/// gate in `state_dim..2*state_dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruParams {
    pub gate_weight: ParamId,
    pub gate_bias: ParamId,
    pub cand_weight: ParamId,
    pub cand_bias: ParamId,
    pub state_dim: usize,
    pub input_dim: usize,
}

impl GruParams {
    /// Registers the cell under `prefix.*`, initialized uniformly in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn register<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        state_dim: usize,
        input_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = state_dim + input_dim;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut uniform = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| F::of(rng.random_range(-bound..=bound))).collect();
            Tensor::new(shape.to_vec(), data)
        };
        Ok(GruParams {
            gate_weight: store.add(
                &format!("{prefix}.gate_weight"),
                uniform(&[fan_in, 2 * state_dim])?,
                false,
            )?,
            gate_bias: store.add(&format!("{prefix}.gate_bias"), uniform(&[2 * state_dim])?, false)?,
            cand_weight: store.add(&format!("{prefix}.cand_weight"), uniform(&[fan_in, state_dim])?, false)?,
            cand_bias: store.add(&format!("{prefix}.cand_bias"), uniform(&[state_dim])?, false)?,
            state_dim,
            input_dim,
        })
    }

    /// Looks the cell up by prefix in an existing store.
    pub fn find<F: Scalar>(store: &ParamStore<F>, prefix: &str) -> Result<Self> {
        let gate_weight = store.id(&format!("{prefix}.gate_weight"))?;
        let cand_weight = store.id(&format!("{prefix}.cand_weight"))?;
        let state_dim = store.value(cand_weight).shape()[1];
        let fan_in = store.value(gate_weight).shape()[0];
        Ok(GruParams {
            gate_weight,
            gate_bias: store.id(&format!("{prefix}.gate_bias"))?,
            cand_weight,
            cand_bias: store.id(&format!("{prefix}.cand_bias"))?,
            state_dim,
            input_dim: fan_in - state_dim,
        })
    }

    /// Places the weights on the tape once so they can be reused by many steps.
    pub fn bind<F: Scalar>(&self, graph: &mut Graph<F>, store: &ParamStore<F>) -> BoundGru {
        BoundGru {
            gate_weight: graph.param(store, self.gate_weight),
            gate_bias: graph.param(store, self.gate_bias),
            cand_weight: graph.param(store, self.cand_weight),
            cand_bias: graph.param(store, self.cand_bias),
            state_dim: self.state_dim,
            input_dim: self.input_dim,
        }
    }
}

/// A GRU cell whose weights already live on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    gate_weight: Var,
    gate_bias: Var,
    cand_weight: Var,
    cand_bias: Var,
    state_dim: usize,
    input_dim: usize,
}

impl BoundGru {
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
}

/// One GRU step over a batch of rows; the output is the new state.
///
/// `z = σ([s, x]·W_z + b_z)`, `r = σ([s, x]·W_r + b_r)`,
/// `c = tanh([r ⊙ s, x]·W_c + b_c)`, `s' = s + z ⊙ (c − s)`.
pub fn gru_step<F: Scalar>(graph: &mut Graph<F>, cell: &BoundGru, state: Var, input: Var) -> Result<Var> {
    let d = cell.state_dim;
    let (sh, ih) = (graph.shape(state).to_vec(), graph.shape(input).to_vec());
    if sh.len() != 2 || ih.len() != 2 || sh[1] != d || ih[1] != cell.input_dim || sh[0] != ih[0] {
        return Err(AutodiffError::Shape {
            op: "gru",
            detail: format!("state {:?} input {:?} for cell ({}, {})", sh, ih, d, cell.input_dim),
        });
    }
    graph.gru(
        state,
        input,
        cell.gate_weight,
        cell.gate_bias,
        cell.cand_weight,
        cell.cand_bias,
    )
}
