//! LSTM layers over padded batches.
//!
//! Batched inputs are stacked time-major: row `t * batch + b` holds position
//! `t` of sequence `b`. A per-step mask freezes the state of sequences that
//! have already ended (forward) or not yet started (backward), so padded
//! positions never influence real outputs or gradients.

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{init_uniform, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    /// `input × 4h`, gate blocks ordered input, forget, output, cell.
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        Lstm {
            w_ih: store.add(format!("{prefix}.w_ih"), init_uniform(rng, input, 4 * hidden, input)),
            w_hh: store.add(format!("{prefix}.w_hh"), init_uniform(rng, hidden, 4 * hidden, hidden)),
            bias: store.add(format!("{prefix}.bias"), Array2::zeros((1, 4 * hidden))),
            input,
            hidden,
        }
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.w_ih, self.w_hh, self.bias]
    }

    /// Runs the cell over `masks.len()` steps. Returns the hidden state after
    /// each step (indexed by position) and the final state.
    pub fn run(
        &self,
        g: &mut Graph,
        inputs: Var,
        batch: usize,
        masks: &[Vec<f64>],
        reverse: bool,
    ) -> (Vec<Var>, Var) {
        let steps = masks.len();
        let h = self.hidden;
        let w_ih = g.param(self.w_ih);
        let w_hh = g.param(self.w_hh);
        let bias = g.param(self.bias);
        let projected = g.matmul(inputs, w_ih);
        let projected = g.add_row(projected, bias);

        let mut hidden = g.constant(Array2::zeros((batch, h)));
        let mut cell = g.constant(Array2::zeros((batch, h)));
        let mut outputs = vec![hidden; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let x_part = g.slice_rows(projected, t * batch, batch);
            let h_part = g.matmul(hidden, w_hh);
            let gates = g.add(x_part, h_part);
            let sig_block = g.slice_cols(gates, 0, 3 * h);
            let sig = g.sigmoid(sig_block);
            let cand_block = g.slice_cols(gates, 3 * h, h);
            let candidate = g.tanh(cand_block);
            let in_gate = g.slice_cols(sig, 0, h);
            let forget = g.slice_cols(sig, h, h);
            let out_gate = g.slice_cols(sig, 2 * h, h);
            let kept = g.mul(forget, cell);
            let written = g.mul(in_gate, candidate);
            let new_cell = g.add(kept, written);
            let squashed = g.tanh(new_cell);
            let new_hidden = g.mul(out_gate, squashed);
            if masks[t].iter().all(|&m| m == 1.0) {
                cell = new_cell;
                hidden = new_hidden;
            } else {
                cell = g.blend(new_cell, cell, masks[t].clone());
                hidden = g.blend(new_hidden, hidden, masks[t].clone());
            }
            outputs[t] = hidden;
        }
        (outputs, hidden)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        BiLstm {
            forward: Lstm::new(store, rng, &format!("{prefix}.fwd"), input, hidden),
            backward: Lstm::new(store, rng, &format!("{prefix}.bwd"), input, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.forward.params().to_vec();
        p.extend(self.backward.params());
        p
    }

    /// Per-position `[forward; backward]` states stacked time-major
    /// (`steps·batch × 2h`), plus the two final states.
    pub fn run(
        &self,
        g: &mut Graph,
        inputs: Var,
        batch: usize,
        masks: &[Vec<f64>],
    ) -> (Var, Var, Var) {
        let (fwd, fwd_final) = self.forward.run(g, inputs, batch, masks, false);
        let (bwd, bwd_final) = self.backward.run(g, inputs, batch, masks, true);
        let per_step: Vec<Var> = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat_cols(&[f, b]))
            .collect();
        let stacked = g.concat_rows(&per_step);
        (stacked, fwd_final, bwd_final)
    }
}

/// Encodes one sequence of vectors; each output is `[forward; backward]`.
pub fn bilstm_encode(
    inputs: &[Vec<f64>],
    store: &ParamStore,
    layer: &BiLstm,
) -> Result<Vec<Vec<f64>>> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("empty input sequence".into()));
    }
    let dim = layer.forward.input;
    if let Some(bad) = inputs.iter().find(|v| v.len() != dim) {
        return Err(Error::Dimension(format!("input of {} dims, expected {dim}", bad.len())));
    }
    let flat: Vec<f64> = inputs.iter().flatten().copied().collect();
    let x = Array2::from_shape_vec((inputs.len(), dim), flat).expect("shape checked");
    let mut g = Graph::new(store);
    let xv = g.constant(x);
    let masks = vec![vec![1.0]; inputs.len()];
    let (out, _, _) = layer.run(&mut g, xv, 1, &masks);
    Ok(g.value(out).rows().into_iter().map(|r| r.to_vec()).collect())
}
