//! Feature-conditioned attention over embedding sources.
//!
//! Each source `e_i` is mapped to a common size by `x_i = e_i · Q_i`; the
//! weight of source `i` is the softmax over sources of
//! `V · tanh(W x_i + U f)`, and the representation is `Σ a_i x_i`.
//! Matrices are stored input-major (`Q_i: E_i×E`, `W: E×H`, `U: F×H`,
//! `V: H×1`), i.e. transposed relative to column-vector notation.

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{init_uniform, softmax_rows, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub projections: Vec<ParamId>,
    pub w: ParamId,
    pub u: ParamId,
    pub v: ParamId,
    pub source_dims: Vec<usize>,
    pub target_dim: usize,
    pub feature_dim: usize,
    pub hidden: usize,
}

impl AttentionParams {
    /// One projection per source, named after it; target size is the
    /// largest source size.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        sources: &[(&str, usize)],
        feature_dim: usize,
        hidden: usize,
    ) -> Self {
        let target = sources.iter().map(|s| s.1).max().unwrap_or(0);
        let projections = sources
            .iter()
            .map(|&(name, dim)| {
                store.add(format!("attention.q.{name}"), init_uniform(rng, dim, target, dim))
            })
            .collect();
        AttentionParams {
            projections,
            w: store.add("attention.w", init_uniform(rng, target, hidden, target)),
            u: store.add("attention.u", init_uniform(rng, feature_dim, hidden, feature_dim)),
            v: store.add("attention.v", init_uniform(rng, hidden, 1, hidden)),
            source_dims: sources.iter().map(|s| s.1).collect(),
            target_dim: target,
            feature_dim,
            hidden,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.projections.clone();
        p.extend([self.w, self.u, self.v]);
        p
    }

    /// Batched attention: `sources[i]` is `N×E_i`, `features` is `N×F`.
    /// Returns the `N×E` representation and the `N×n` weights.
    pub fn attend(&self, g: &mut Graph, sources: &[Var], features: Var) -> (Var, Var) {
        let w = g.param(self.w);
        let u = g.param(self.u);
        let v = g.param(self.v);
        let conditioning = g.matmul(features, u);
        let mut mapped = Vec::with_capacity(sources.len());
        let mut scores = Vec::with_capacity(sources.len());
        for (&src, &q) in sources.iter().zip(&self.projections) {
            let qv = g.param(q);
            let x = g.matmul(src, qv);
            let hx = g.matmul(x, w);
            let pre = g.add(hx, conditioning);
            let act = g.tanh(pre);
            scores.push(g.matmul(act, v));
            mapped.push(x);
        }
        let scores = g.concat_cols(&scores);
        let weights = g.softmax_rows(scores);
        let mut out = None;
        for (i, &x) in mapped.iter().enumerate() {
            let a = g.slice_cols(weights, i, 1);
            let term = g.col_scale(x, a);
            out = Some(match out {
                None => term,
                Some(acc) => g.add(acc, term),
            });
        }
        (out.expect("at least one source"), weights)
    }
}

fn row_times(v: &[f64], m: &Array2<f64>) -> Vec<f64> {
    (0..m.ncols())
        .map(|c| v.iter().enumerate().map(|(r, x)| x * m[[r, c]]).sum())
        .collect()
}

/// Single-token attention, evaluated directly (no tape). Returns the
/// representation and the per-source weights.
pub fn attention_select(
    embeddings: &[&[f64]],
    features: &[f64],
    params: &AttentionParams,
    store: &ParamStore,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if embeddings.is_empty() {
        return Err(Error::InvalidArgument("attention over zero sources".into()));
    }
    if embeddings.len() != params.projections.len() {
        return Err(Error::Dimension(format!(
            "{} sources for {} projections",
            embeddings.len(),
            params.projections.len()
        )));
    }
    if features.len() != params.feature_dim {
        return Err(Error::Dimension(format!(
            "feature vector of {} dims, expected {}",
            features.len(),
            params.feature_dim
        )));
    }
    let mut mapped = Vec::new();
    for (i, (e, &q)) in embeddings.iter().zip(&params.projections).enumerate() {
        if e.len() != params.source_dims[i] {
            return Err(Error::Dimension(format!(
                "source {i} has {} dims, expected {}",
                e.len(),
                params.source_dims[i]
            )));
        }
        mapped.push(row_times(e, store.get(q)));
    }
    let conditioning = row_times(features, store.get(params.u));
    let w = store.get(params.w);
    let v = store.get(params.v);
    let scores: Vec<f64> = mapped
        .iter()
        .map(|x| {
            let hx = row_times(x, w);
            (0..params.hidden)
                .map(|h| v[[h, 0]] * (hx[h] + conditioning[h]).tanh())
                .sum()
        })
        .collect();
    let weights = softmax_rows(&Array2::from_shape_vec((1, scores.len()), scores).unwrap())
        .row(0)
        .to_vec();
    let mut out = vec![0.0; params.target_dim];
    for (a, x) in weights.iter().zip(&mapped) {
        for (o, xv) in out.iter_mut().zip(x) {
            *o += a * xv;
        }
    }
    Ok((out, weights))
}
