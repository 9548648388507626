//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records operations on 2-D tensors as they are evaluated
//! (forward values are computed eagerly). [`Graph::backward`] walks the tape
//! in reverse and returns gradients for every parameter that took part.
//! Vectors are represented as `1×n` rows; batches as `rows×n`.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Tensor = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Named trainable tensors in a fixed declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter `{name}`"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, value });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn total_size(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Gradients indexed by [`ParamId`]; `None` for parameters not reached.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn empty(n: usize) -> Self {
        Gradients {
            grads: vec![None; n],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    /// Drops the gradient of `id`, so the optimizer leaves it untouched.
    pub fn remove(&mut self, id: ParamId) {
        if let Some(g) = self.grads.get_mut(id.0) {
            *g = None;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                match &mut self.grads[i] {
                    Some(mine) => *mine += g,
                    slot => *slot = Some(g.clone()),
                }
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * factor);
        }
    }

    /// Rescales so the global norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// An operation with a hand-written backward pass.
pub trait CustomOp {
    /// Gradients with respect to each input, given the upstream gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Blend { new: Var, old: Var, mask: Vec<f64> },
    ColScale(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    SoftmaxRows(Var),
    NegLogPick(Var, Vec<(usize, usize)>),
    Sum(Var),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param(id));
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    /// Row-wise `mask[r] * new + (1 - mask[r]) * old`.
    pub fn blend(&mut self, new: Var, old: Var, mask: Vec<f64>) -> Var {
        let (n, o) = (self.value(new), self.value(old));
        assert_eq!(n.dim(), o.dim());
        assert_eq!(mask.len(), n.nrows());
        let mut value = o.clone();
        for (r, &m) in mask.iter().enumerate() {
            if m != 0.0 {
                let row = &n.row(r) * m + &o.row(r) * (1.0 - m);
                value.row_mut(r).assign(&row);
            }
        }
        self.push(value, Op::Blend { new, old, mask })
    }

    /// Scales row `r` of `a` by `w[r, 0]`.
    pub fn col_scale(&mut self, a: Var, w: Var) -> Var {
        let value = self.value(a) * self.value(w);
        self.push(value, Op::ColScale(a, w))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts differ");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("column counts differ");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(value, Op::SliceRows(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Var {
        let value = self.value(a).select(Axis(0), &rows);
        self.push(value, Op::GatherRows(a, rows))
    }

    /// Element-wise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        let value = self.value(a) * &c;
        self.push(value, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        self.push(value, Op::Scale(a, factor))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    /// `-Σ ln a[r, c]` over the given cells, as a `1×1` tensor.
    pub fn neg_log_pick(&mut self, a: Var, picks: Vec<(usize, usize)>) -> Var {
        let v = self.value(a);
        let total: f64 = picks.iter().map(|&(r, c)| -v[[r, c]].ln()).sum();
        self.push(Array2::from_elem((1, 1), total), Op::NegLogPick(a, picks))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), total), Op::Sum(a))
    }

    /// Records an already-evaluated custom operation.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), op))
    }

    /// Back-propagates from `loss` (a `1×1` node).
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Array2::ones(self.nodes[loss.0].value.raw_dim()));
        let mut out = Gradients::empty(self.store.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.grads[id.0] = Some(g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *row, gr);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|g, &y| *g *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|g, &y| *g *= 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Blend { new, old, mask } => {
                    let mut gn = g.clone();
                    let mut go = g;
                    for (r, &m) in mask.iter().enumerate() {
                        gn.row_mut(r).mapv_inplace(|x| x * m);
                        go.row_mut(r).mapv_inplace(|x| x * (1.0 - m));
                    }
                    acc(&mut grads, *new, gn);
                    acc(&mut grads, *old, go);
                }
                Op::ColScale(a, w) => {
                    let ga = &g * self.value(*w);
                    let gw = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *w, gw);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![offset..offset + h, ..]).to_owned());
                        offset += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let shape = self.value(*a).raw_dim();
                    let w = g.ncols();
                    let target = slot(&mut grads, *a, shape);
                    let mut view = target.slice_mut(s![.., *start..*start + w]);
                    view += &g;
                }
                Op::SliceRows(a, start) => {
                    let shape = self.value(*a).raw_dim();
                    let h = g.nrows();
                    let target = slot(&mut grads, *a, shape);
                    let mut view = target.slice_mut(s![*start..*start + h, ..]);
                    view += &g;
                }
                Op::GatherRows(a, rows) => {
                    let shape = self.value(*a).raw_dim();
                    let target = slot(&mut grads, *a, shape);
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = target.row_mut(r);
                        dst += &g.row(k);
                    }
                }
                Op::MulConst(a, c) => acc(&mut grads, *a, g * c),
                Op::Scale(a, factor) => acc(&mut grads, *a, g * *factor),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    for (mut row, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        row.zip_mut_with(&yrow, |gy, &yv| *gy -= dot * yv);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::NegLogPick(a, picks) => {
                    let v = self.value(*a);
                    let shape = v.raw_dim();
                    let upstream = g[[0, 0]];
                    let target = slot(&mut grads, *a, shape);
                    for &(r, c) in picks {
                        target[[r, c]] -= upstream / v[[r, c]];
                    }
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).raw_dim();
                    acc(&mut grads, *a, Array2::from_elem(shape, g[[0, 0]]));
                }
                Op::Custom(inputs, op) => {
                    let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                    let results = op.backward(&values, &node.value, &g);
                    for (&v, r) in inputs.iter().zip(results) {
                        if let Some(r) = r {
                            acc(&mut grads, v, r);
                        }
                    }
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

fn slot(grads: &mut [Option<Tensor>], v: Var, shape: ndarray::Ix2) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Array2::zeros(shape))
}

/// Worst finite-difference disagreement found for one parameter tensor.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

/// Denominator floor of the relative error, so entries whose analytic and
/// numeric gradients are both ~0 do not divide by zero.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares analytic gradients of `build`'s scalar output against central
/// finite differences for the listed parameters. At most `max_entries`
/// entries per tensor are probed (chosen with a fixed seed).
pub fn check_gradients<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    step: f64,
    max_entries: usize,
    build: F,
) -> Vec<GradCheck>
where
    F: Fn(&mut Graph) -> Var,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = build(&mut g);
        g.backward(loss)
    };
    let eval = |store: &ParamStore| {
        let mut g = Graph::new(store);
        let loss = build(&mut g);
        g.scalar(loss)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut report = Vec::new();
    for &id in params {
        let n = store.get(id).len();
        let cols = store.get(id).ncols();
        let entries: Vec<usize> = if n <= max_entries {
            (0..n).collect()
        } else {
            (0..max_entries).map(|_| rng.gen_range(0..n)).collect()
        };
        let zeros = Array2::zeros(store.get(id).raw_dim());
        let grad = analytic.get(id).unwrap_or(&zeros).clone();
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for e in entries {
            let (r, c) = (e / cols, e % cols);
            let orig = store.get(id)[[r, c]];
            if !orig.is_finite() {
                continue;
            }
            store.get_mut(id)[[r, c]] = orig + step;
            let plus = eval(store);
            store.get_mut(id)[[r, c]] = orig - step;
            let minus = eval(store);
            store.get_mut(id)[[r, c]] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(grad[[r, c]], numeric));
            checked += 1;
        }
        report.push(GradCheck {
            name: store.name(id).to_string(),
            checked,
            max_rel_error: worst,
        });
    }
    report
}

/// Uniform `(-√(1/fan_in), √(1/fan_in))` initialization.
pub fn init_uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store_with(values: &[(&str, Tensor)]) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values.iter().map(|(n, v)| s.add(*n, v.clone())).collect();
        (s, ids)
    }

    #[test]
    fn elementary_ops_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut store, ids) = store_with(&[
            ("a", init_uniform(&mut rng, 3, 4, 1)),
            ("b", init_uniform(&mut rng, 4, 5, 1)),
            ("row", init_uniform(&mut rng, 1, 5, 1)),
            ("w", init_uniform(&mut rng, 3, 1, 1)),
        ]);
        let weights = init_uniform(&mut rng, 3, 5, 1);
        let report = check_gradients(&mut store, &ids, 1e-5, 100, |g| {
            let a = g.param(ids[0]);
            let b = g.param(ids[1]);
            let row = g.param(ids[2]);
            let w = g.param(ids[3]);
            let ab = g.matmul(a, b);
            let h = g.add_row(ab, row);
            let t = g.tanh(h);
            let sg = g.sigmoid(h);
            let m = g.mul(t, sg);
            let left = g.slice_cols(m, 0, 2);
            let right = g.slice_cols(m, 2, 3);
            let cat = g.concat_cols(&[right, left]);
            let top = g.slice_rows(cat, 0, 1);
            let rest = g.slice_rows(cat, 1, 2);
            let stacked = g.concat_rows(&[rest, top]);
            let sc = g.col_scale(stacked, w);
            let bl = g.blend(sc, stacked, vec![1.0, 0.0, 1.0]);
            let gathered = g.gather_rows(bl, vec![2, 0, 2]);
            let sm = g.softmax_rows(gathered);
            let nl = g.neg_log_pick(sm, vec![(0, 1), (1, 4), (2, 2)]);
            let weighted = g.mul_const(bl, weights.clone());
            let s = g.sum(weighted);
            let s = g.scale(s, 0.5);
            g.add(nl, s)
        });
        for r in report {
            assert!(r.max_rel_error < 1e-6, "{}: {}", r.name, r.max_rel_error);
        }
    }

    #[test]
    fn softmax_rows_sums_to_one() {
        let x = array![[1.0, 2.0, 3.0], [1000.0, 1000.0, -1000.0]];
        let y = softmax_rows(&x);
        for row in y.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((y[[1, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = Gradients::empty(1);
        g.grads[0] = Some(array![[3.0, 4.0]]);
        assert_eq!(g.clip_global_norm(1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn params_reused_in_graph_share_a_node() {
        let (store, ids) = store_with(&[("a", array![[2.0]])]);
        let mut g = Graph::new(&store);
        let a1 = g.param(ids[0]);
        let a2 = g.param(ids[0]);
        let p = g.mul(a1, a2);
        let grads = g.backward(p);
        assert_eq!(grads.get(ids[0]).unwrap()[[0, 0]], 4.0);
    }
}
