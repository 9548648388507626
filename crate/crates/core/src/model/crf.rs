//! Linear-chain CRF with START/STOP boundary transitions.
//!
//! Transitions are an `(L+2)×(L+2)` matrix; index `L` is START and `L+1`
//! is STOP. Entries into START and out of STOP are `-inf` and never read.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::autodiff::{init_uniform, CustomOp, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

pub(crate) fn logsumexp(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn start(l: usize) -> usize {
    l
}

fn stop(l: usize) -> usize {
    l + 1
}

/// Fresh transition matrix: uniform init with the masked entries at `-inf`.
pub fn init_transitions(rng: &mut impl Rng, labels: usize) -> Tensor {
    let mut t = init_uniform(rng, labels + 2, labels + 2, labels + 2);
    for i in 0..labels + 2 {
        t[[i, start(labels)]] = f64::NEG_INFINITY;
        t[[stop(labels), i]] = f64::NEG_INFINITY;
    }
    t
}

/// Unnormalized log score of one label path.
pub fn path_score(emissions: &Tensor, transitions: &Tensor, path: &[usize]) -> f64 {
    let l = emissions.ncols();
    let mut score = transitions[[start(l), path[0]]] + emissions[[0, path[0]]];
    for t in 1..path.len() {
        score += transitions[[path[t - 1], path[t]]] + emissions[[t, path[t]]];
    }
    score + transitions[[path[path.len() - 1], stop(l)]]
}

fn forward_table(emissions: &Tensor, transitions: &Tensor) -> Array2<f64> {
    let (n, l) = emissions.dim();
    let mut alpha = Array2::zeros((n, l));
    for j in 0..l {
        alpha[[0, j]] = transitions[[start(l), j]] + emissions[[0, j]];
    }
    for t in 1..n {
        for j in 0..l {
            alpha[[t, j]] = logsumexp((0..l).map(|i| alpha[[t - 1, i]] + transitions[[i, j]]))
                + emissions[[t, j]];
        }
    }
    alpha
}

fn backward_table(emissions: &Tensor, transitions: &Tensor) -> Array2<f64> {
    let (n, l) = emissions.dim();
    let mut beta = Array2::zeros((n, l));
    for i in 0..l {
        beta[[n - 1, i]] = transitions[[i, stop(l)]];
    }
    for t in (0..n - 1).rev() {
        for i in 0..l {
            beta[[t, i]] = logsumexp(
                (0..l).map(|j| transitions[[i, j]] + emissions[[t + 1, j]] + beta[[t + 1, j]]),
            );
        }
    }
    beta
}

/// Log partition function by the forward algorithm.
pub fn log_partition(emissions: &Tensor, transitions: &Tensor) -> f64 {
    let l = emissions.ncols();
    let alpha = forward_table(emissions, transitions);
    let last = alpha.nrows() - 1;
    logsumexp((0..l).map(|j| alpha[[last, j]] + transitions[[j, stop(l)]]))
}

fn check_shapes(emissions: &Tensor, transitions: &Tensor, gold: &[usize]) -> Result<()> {
    let (n, l) = emissions.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("empty emission sequence".into()));
    }
    if transitions.dim() != (l + 2, l + 2) {
        return Err(Error::Dimension(format!(
            "transitions {:?} for {l} labels",
            transitions.dim()
        )));
    }
    if gold.len() != n {
        return Err(Error::Dimension(format!("{} gold labels for {n} positions", gold.len())));
    }
    if let Some(&bad) = gold.iter().find(|&&y| y >= l) {
        return Err(Error::InvalidArgument(format!("label id {bad} out of range 0..{l}")));
    }
    Ok(())
}

/// Negative log-likelihood `log Z - score(gold)`.
pub fn crf_nll(emissions: &Tensor, transitions: &Tensor, gold: &[usize]) -> Result<f64> {
    check_shapes(emissions, transitions, gold)?;
    Ok(log_partition(emissions, transitions) - path_score(emissions, transitions, gold))
}

/// Gradients of the NLL with respect to emissions and transitions.
fn nll_gradients(emissions: &Tensor, transitions: &Tensor, gold: &[usize]) -> (Tensor, Tensor) {
    let (n, l) = emissions.dim();
    let alpha = forward_table(emissions, transitions);
    let beta = backward_table(emissions, transitions);
    let log_z = logsumexp((0..l).map(|j| alpha[[n - 1, j]] + transitions[[j, stop(l)]]));

    let mut d_em = Array2::zeros((n, l));
    let mut d_tr = Array2::zeros((l + 2, l + 2));
    for t in 0..n {
        for j in 0..l {
            d_em[[t, j]] = (alpha[[t, j]] + beta[[t, j]] - log_z).exp();
        }
        d_em[[t, gold[t]]] -= 1.0;
    }
    for j in 0..l {
        d_tr[[start(l), j]] += (alpha[[0, j]] + beta[[0, j]] - log_z).exp();
        d_tr[[j, stop(l)]] += (alpha[[n - 1, j]] + beta[[n - 1, j]] - log_z).exp();
    }
    for t in 1..n {
        for i in 0..l {
            for j in 0..l {
                d_tr[[i, j]] += (alpha[[t - 1, i]]
                    + transitions[[i, j]]
                    + emissions[[t, j]]
                    + beta[[t, j]]
                    - log_z)
                    .exp();
            }
        }
    }
    d_tr[[start(l), gold[0]]] -= 1.0;
    d_tr[[gold[n - 1], stop(l)]] -= 1.0;
    for t in 1..n {
        d_tr[[gold[t - 1], gold[t]]] -= 1.0;
    }
    (d_em, d_tr)
}

/// Highest-scoring path and its score. Ties go to the lowest label id.
pub fn viterbi_decode(emissions: &Tensor, transitions: &Tensor) -> (Vec<usize>, f64) {
    let (n, l) = emissions.dim();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let mut delta = Array1::from_shape_fn(l, |j| transitions[[start(l), j]] + emissions[[0, j]]);
    let mut back = Array2::<usize>::zeros((n, l));
    for t in 1..n {
        let mut next = Array1::zeros(l);
        for j in 0..l {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for i in 0..l {
                let s = delta[i] + transitions[[i, j]];
                if s > best_score {
                    best_score = s;
                    best = i;
                }
            }
            next[j] = best_score + emissions[[t, j]];
            back[[t, j]] = best;
        }
        delta = next;
    }
    let mut last = 0;
    let mut best_score = f64::NEG_INFINITY;
    for j in 0..l {
        let s = delta[j] + transitions[[j, stop(l)]];
        if s > best_score {
            best_score = s;
            last = j;
        }
    }
    let mut path = vec![last; n];
    for t in (1..n).rev() {
        path[t - 1] = back[[t, path[t]]];
    }
    (path, best_score)
}

/// Emission projection plus transition scores.
#[derive(Debug, Clone, Copy)]
pub struct CrfLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub transitions: ParamId,
    pub labels: usize,
}

impl CrfLayer {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, input: usize, labels: usize) -> Self {
        CrfLayer {
            weight: store.add("crf.emission.weight", init_uniform(rng, input, labels, input)),
            bias: store.add("crf.emission.bias", Array2::zeros((1, labels))),
            transitions: store.add("crf.transitions", init_transitions(rng, labels)),
            labels,
        }
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.weight, self.bias, self.transitions]
    }

    /// Emission scores for every row of `hidden`.
    pub fn emissions(&self, g: &mut Graph, hidden: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let z = g.matmul(hidden, w);
        g.add_row(z, b)
    }
}

/// One sequence inside a stacked emission matrix.
#[derive(Debug, Clone)]
pub struct CrfSequence {
    /// Row of the emission matrix for each position.
    pub rows: Vec<usize>,
    pub gold: Vec<usize>,
}

struct CrfNllOp {
    sequences: Vec<CrfSequence>,
}

fn gather(emissions: &Tensor, rows: &[usize]) -> Tensor {
    emissions.select(ndarray::Axis(0), rows)
}

impl CustomOp for CrfNllOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (emissions, transitions) = (inputs[0], inputs[1]);
        let upstream = grad[[0, 0]];
        let mut d_em = Array2::zeros(emissions.raw_dim());
        let mut d_tr = Array2::zeros(transitions.raw_dim());
        for seq in &self.sequences {
            let em = gather(emissions, &seq.rows);
            let (de, dt) = nll_gradients(&em, transitions, &seq.gold);
            for (k, &r) in seq.rows.iter().enumerate() {
                let mut row = d_em.row_mut(r);
                row.scaled_add(upstream, &de.row(k));
            }
            d_tr.scaled_add(upstream, &dt);
        }
        vec![Some(d_em), Some(d_tr)]
    }
}

/// Summed CRF NLL over `sequences`, recorded on the tape.
pub fn crf_nll_node(
    g: &mut Graph,
    emissions: Var,
    transitions: Var,
    sequences: Vec<CrfSequence>,
) -> Result<Var> {
    let mut total = 0.0;
    {
        let (em_all, tr) = (g.value(emissions), g.value(transitions));
        for seq in &sequences {
            let em = gather(em_all, &seq.rows);
            total += crf_nll(&em, tr, &seq.gold)?;
        }
    }
    let value = Array2::from_elem((1, 1), total);
    Ok(g.custom(&[emissions, transitions], value, Box::new(CrfNllOp { sequences })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_transitions(l: usize) -> Tensor {
        let mut t = Array2::zeros((l + 2, l + 2));
        for i in 0..l + 2 {
            t[[i, l]] = f64::NEG_INFINITY;
            t[[l + 1, i]] = f64::NEG_INFINITY;
        }
        t
    }

    #[test]
    fn single_position_nll() {
        // logsumexp(1, 2) - 2
        let em = array![[1.0, 2.0]];
        let loss = crf_nll(&em, &zero_transitions(2), &[1]).unwrap();
        let expected = (1f64.exp() + 2f64.exp()).ln() - 2.0;
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_labels() {
        let em = array![[1.0, 2.0]];
        assert!(crf_nll(&em, &zero_transitions(2), &[2]).is_err());
        assert!(crf_nll(&em, &zero_transitions(2), &[0, 1]).is_err());
    }

    #[test]
    fn viterbi_ties_and_zero_transitions() {
        let em = Array2::zeros((4, 3));
        assert_eq!(viterbi_decode(&em, &zero_transitions(3)).0, vec![0; 4]);
        let em = array![[0.1, 0.5, 0.2], [0.9, 0.0, 0.3], [0.0, 0.0, 1.0]];
        assert_eq!(viterbi_decode(&em, &zero_transitions(3)).0, vec![1, 0, 2]);
    }

    #[test]
    fn masked_entries_stay_masked() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = init_transitions(&mut rng, 4);
        for i in 0..6 {
            assert_eq!(t[[i, 4]], f64::NEG_INFINITY);
            assert_eq!(t[[5, i]], f64::NEG_INFINITY);
        }
        assert!(t[[4, 0]].is_finite());
    }

    #[test]
    fn nll_node_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let em = store.add("em", init_uniform(&mut rng, 7, 3, 1));
        let tr = store.add("tr", init_transitions(&mut rng, 3));
        let seqs = vec![
            CrfSequence { rows: vec![0, 2, 4], gold: vec![1, 2, 0] },
            CrfSequence { rows: vec![1, 3, 5, 6], gold: vec![0, 0, 2, 1] },
        ];
        let report = check_gradients(&mut store, &[em, tr], 1e-4, 1000, |g| {
            let e = g.param(em);
            let t = g.param(tr);
            crf_nll_node(g, e, t, seqs.clone()).unwrap()
        });
        for r in report {
            assert!(r.max_rel_error < 1e-6, "{}: {}", r.name, r.max_rel_error);
        }
    }
}
