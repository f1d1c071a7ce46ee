//! Central finite-difference verification of analytic gradients.
//!
//! Works on any scalar-valued function of a [`ParamStore`]: the analytic
//! side comes from one reverse pass, the numeric side from central
//! differences in double precision. Within each parameter tensor a fixed,
//! evenly spread subset of entries is probed so large models stay checkable
//! in seconds.

use indexmap::IndexMap;

use crate::graph::{Graph, Tensor, Var};
use crate::params::{Binding, ParamStore};

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const DEFAULT_FD_TOL: f64 = 1e-4;

/// Builds a graph from the store, evaluates the scalar root and collects
/// per-parameter gradients.
pub fn run_scalar<F>(store: &ParamStore, build: F) -> (f64, IndexMap<String, Tensor>)
where
    F: Fn(&mut Graph, &Binding) -> Var,
{
    let mut g = Graph::new();
    let binding = store.bind(&mut g);
    let root = build(&mut g, &binding);
    assert_eq!(g.value(root).len(), 1, "gradcheck root must be scalar");
    let loss = g.value(root)[[0]];
    let mut grads = g.backward(root);
    let grad_map = binding.collect_grads(store, &mut grads);
    (loss, grad_map)
}

#[derive(Debug, Clone)]
pub struct GroupResult {
    pub name: String,
    pub max_rel_err: f64,
    pub checked_entries: usize,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub groups: Vec<GroupResult>,
    pub tol: f64,
}

impl GradReport {
    pub fn pass(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_err <= self.tol)
    }

    pub fn worst(&self) -> Option<&GroupResult> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).unwrap())
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs()).max(1e-6);
    (a - n).abs() / denom
}

/// Evenly spread entry indices, at most `count` of them.
fn probe_indices(len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    (0..count).map(|i| i * len / count).collect()
}

/// Checks the analytic gradient of `build` against central finite
/// differences, probing `entries_per_tensor` entries of every parameter.
pub fn check<F>(
    store: &ParamStore,
    build: F,
    entries_per_tensor: usize,
    step: f64,
    tol: f64,
) -> GradReport
where
    F: Fn(&mut Graph, &Binding) -> Var,
{
    let (_, analytic) = run_scalar(store, &build);
    let mut probe = store.clone_values();
    let mut groups = Vec::new();
    for (name, grad) in &analytic {
        let len = grad.len();
        let idxs = probe_indices(len, entries_per_tensor);
        let mut max_err: f64 = 0.0;
        for &i in &idxs {
            let orig = probe.get(name).as_slice().unwrap()[i];
            set_entry(probe.get_mut(name), i, orig + step);
            let (lp, _) = eval_only(&probe, &build);
            set_entry(probe.get_mut(name), i, orig - step);
            let (lm, _) = eval_only(&probe, &build);
            set_entry(probe.get_mut(name), i, orig);
            let numeric = (lp - lm) / (2.0 * step);
            let a = grad.as_slice().unwrap()[i];
            max_err = max_err.max(rel_err(a, numeric));
        }
        groups.push(GroupResult {
            name: name.clone(),
            max_rel_err: max_err,
            checked_entries: idxs.len(),
        });
    }
    GradReport { groups, tol }
}

fn set_entry(t: &mut Tensor, i: usize, v: f64) {
    t.as_slice_mut().unwrap()[i] = v;
}

fn eval_only<F>(store: &ParamStore, build: &F) -> (f64, ())
where
    F: Fn(&mut Graph, &Binding) -> Var,
{
    let mut g = Graph::new();
    let binding = store.bind(&mut g);
    let root = build(&mut g, &binding);
    (g.value(root)[[0]], ())
}

impl ParamStore {
    fn clone_values(&self) -> ParamStore {
        let mut s = ParamStore::new();
        for (name, t) in self.iter() {
            s.insert(name, t.clone());
        }
        s
    }
}
