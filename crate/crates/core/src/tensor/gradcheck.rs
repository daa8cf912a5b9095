//! Central-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the backward rules it validates.

use rand::seq::index::sample;
use rand::Rng;

use super::{Graph, ParamStore, Result, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    /// Absolute error accepted regardless of the relative error.
    pub abs: f64,
    pub step: f64,
}

impl Tolerance {
    /// Per-operation tolerance.
    pub const OP: Tolerance = Tolerance {
        rel: 1e-4,
        abs: 1e-6,
        step: 1e-5,
    };
    /// Whole-pipeline tolerance.
    pub const PIPELINE: Tolerance = Tolerance {
        rel: 1e-3,
        abs: 1e-6,
        step: 1e-5,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub leaf: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<Mismatch>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures.is_empty()
    }

    fn record(&mut self, leaf: usize, index: usize, analytic: f64, numeric: f64, tol: Tolerance) {
        self.checked += 1;
        let diff = (analytic - numeric).abs();
        let rel = diff / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        if diff > tol.abs {
            self.max_rel_err = self.max_rel_err.max(rel);
        }
        if diff > tol.abs && rel > tol.rel {
            self.failures.push(Mismatch {
                leaf,
                index,
                analytic,
                numeric,
            });
        }
    }
}

fn coords<R: Rng>(n: usize, per_leaf: usize, rng: &mut R) -> Vec<usize> {
    if n <= per_leaf {
        (0..n).collect()
    } else {
        let mut v = sample(rng, n, per_leaf).into_vec();
        v.sort_unstable();
        v
    }
}

/// Checks the gradient of the scalar produced by `f` with respect to each of
/// `inputs`, sampling up to `per_leaf` coordinates of every input.
pub fn check_inputs<F, R>(inputs: &[Tensor], f: F, per_leaf: usize, tol: Tolerance, rng: &mut R) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    R: Rng,
{
    let mut g = Graph::detached();
    let vars = inputs
        .iter()
        .map(|t| g.input(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::detached();
        let vars = xs.iter().map(|t| g.constant(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut report = CheckReport::default();
    let mut work = inputs.to_vec();
    for (leaf, &v) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[leaf].shape());
        let analytic = grads.wrt(v).unwrap_or(&zero);
        for i in coords(inputs[leaf].numel(), per_leaf, rng) {
            let x0 = work[leaf].data()[i];
            work[leaf].data_mut()[i] = x0 + tol.step;
            let up = eval(&work)?;
            work[leaf].data_mut()[i] = x0 - tol.step;
            let down = eval(&work)?;
            work[leaf].data_mut()[i] = x0;
            report.record(leaf, i, analytic.data()[i], (up - down) / (2.0 * tol.step), tol);
        }
    }
    Ok(report)
}

/// Checks the gradient of the scalar produced by `f` with respect to every
/// parameter tensor in `store`, sampling `total` coordinates across all of them.
pub fn check_params<F, R>(store: &ParamStore, f: F, total: usize, tol: Tolerance, rng: &mut R) -> Result<CheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
    R: Rng,
{
    let mut g = Graph::new(store);
    let out = f(&mut g)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Option<Tensor>> = {
        let mut v = vec![None; store.len()];
        for (id, t) in grads.params() {
            v[id.index()] = Some(t.clone());
        }
        v
    };
    drop(g);

    let sizes: Vec<usize> = store.ids().map(|id| store.get(id).numel()).collect();
    let n: usize = sizes.iter().sum();
    let mut work = store.clone();
    let mut report = CheckReport::default();
    for flat in coords(n, total, rng) {
        let (mut leaf, mut i) = (0, flat);
        while i >= sizes[leaf] {
            i -= sizes[leaf];
            leaf += 1;
        }
        let id = store.ids().nth(leaf).expect("in range");
        let eval = |s: &ParamStore| -> Result<f64> {
            let mut g = Graph::new(s);
            let out = f(&mut g)?;
            Ok(g.value(out).item())
        };
        let x0 = work.get(id).data()[i];
        work.get_mut(id).data_mut()[i] = x0 + tol.step;
        let up = eval(&work)?;
        work.get_mut(id).data_mut()[i] = x0 - tol.step;
        let down = eval(&work)?;
        work.get_mut(id).data_mut()[i] = x0;
        let a = analytic[leaf].as_ref().map_or(0.0, |t| t.data()[i]);
        report.record(leaf, i, a, (up - down) / (2.0 * tol.step), tol);
    }
    Ok(report)
}
