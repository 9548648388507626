//! NADAM (Adam with a Nesterov-style first-moment lookahead).

use ndarray::Array2;

use crate::autodiff::{Gradients, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        NadamConfig {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl Moments {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Moments {
            m: Array2::zeros((rows, cols)),
            v: Array2::zeros((rows, cols)),
            step: 0,
        }
    }
}

/// One update of `param` in place:
/// `θ -= lr · (β1·m̂ + (1-β1)·g/(1-β1^t)) / (√v̂ + ε)`.
pub fn nadam_step(param: &mut Tensor, grad: &Tensor, state: &mut Moments, cfg: &NadamConfig) -> Result<()> {
    if param.dim() != grad.dim() || param.dim() != state.m.dim() {
        return Err(Error::Dimension(format!(
            "parameter {:?}, gradient {:?}, moments {:?}",
            param.dim(),
            grad.dim(),
            state.m.dim()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    ndarray::Zip::from(param)
        .and(grad)
        .and(&mut state.m)
        .and(&mut state.v)
        .for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.lr * (b1 * m_hat + (1.0 - b1) * g / c1) / (v_hat.sqrt() + cfg.eps);
        });
    Ok(())
}

/// Optimizer state for a whole parameter store. Each tensor keeps its own
/// step counter, since some tensors only receive gradients on some passes.
#[derive(Debug, Clone)]
pub struct Nadam {
    pub config: NadamConfig,
    state: Vec<Option<Moments>>,
}

impl Nadam {
    pub fn new(config: NadamConfig) -> Self {
        Nadam {
            config,
            state: Vec::new(),
        }
    }

    pub fn moments(&self, index: usize) -> Option<&Moments> {
        self.state.get(index).and_then(Option::as_ref)
    }

    /// Updates every parameter that has a gradient. Nothing is modified if
    /// any gradient is non-finite or mis-shaped.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for (id, g) in grads.iter() {
            if id.0 >= store.len() || store.get(id).dim() != g.dim() {
                return Err(Error::Dimension(format!(
                    "gradient for `{}` has shape {:?}",
                    if id.0 < store.len() { store.name(id) } else { "?" },
                    g.dim()
                )));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{}`", store.name(id))));
            }
        }
        if self.state.len() < store.len() {
            self.state.resize(store.len(), None);
        }
        for (id, g) in grads.iter() {
            let param = store.get_mut(id);
            let moments = self.state[id.0].get_or_insert_with(|| Moments::zeros(param.nrows(), param.ncols()));
            nadam_step(param, g, moments, &self.config)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use ndarray::array;

    #[test]
    fn single_step_hand_trace() {
        let cfg = NadamConfig::default();
        let mut p = array![[1.0]];
        let mut s = Moments::zeros(1, 1);
        nadam_step(&mut p, &array![[1.0]], &mut s, &cfg).unwrap();
        // m = 0.1, v = 0.001, m̂ = v̂ = 1, ĝ = 10
        let expected = 1.0 - 0.002 * (0.9 * 1.0 + 0.1 * 10.0) / (1.0 + 1e-8);
        assert_eq!(p[[0, 0]], expected);
        assert!((p[[0, 0]] - 0.9962).abs() < 1e-9);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_or_zero_rate_leaves_params() {
        let mut p = array![[1.0, -2.0]];
        let mut s = Moments::zeros(1, 2);
        nadam_step(&mut p, &array![[0.0, 0.0]], &mut s, &NadamConfig::default()).unwrap();
        assert_eq!(p, array![[1.0, -2.0]]);
        let cfg = NadamConfig {
            lr: 0.0,
            ..Default::default()
        };
        nadam_step(&mut p, &array![[3.0, 1.0]], &mut s, &cfg).unwrap();
        assert_eq!(p, array![[1.0, -2.0]]);
        assert!(nadam_step(&mut p, &array![[1.0]], &mut s, &cfg).is_err());
    }

    #[test]
    fn rejects_non_finite_gradient_by_name() {
        let mut store = ParamStore::new();
        let a = store.add("encoder.w", array![[1.0, 2.0]]);
        let grads = {
            let mut g = Graph::new(&store);
            let v = g.param(a);
            let s = g.scale(v, f64::NAN);
            let loss = g.sum(s);
            g.backward(loss)
        };
        let mut opt = Nadam::new(NadamConfig::default());
        let err = opt.step(&mut store, &grads).unwrap_err();
        assert!(err.to_string().contains("encoder.w"), "{err}");
        assert_eq!(store.get(a), &array![[1.0, 2.0]]);
    }

    #[test]
    fn untouched_parameters_keep_their_step_count() {
        let mut store = ParamStore::new();
        let a = store.add("a", array![[1.0]]);
        let b = store.add("b", array![[1.0]]);
        let mut opt = Nadam::new(NadamConfig::default());
        for _ in 0..3 {
            let grads = {
                let mut g = Graph::new(&store);
                let v = g.param(a);
                let l = g.sum(v);
                g.backward(l)
            };
            opt.step(&mut store, &grads).unwrap();
        }
        assert_eq!(opt.moments(a.0).unwrap().step, 3);
        assert!(opt.moments(b.0).is_none());
        assert_eq!(store.get(b)[[0, 0]], 1.0);
    }
}
