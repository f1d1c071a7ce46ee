//! Named parameter storage and graph binding.

use indexmap::IndexMap;
use ndarray::IxDyn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Gradients, Graph, Tensor, Var};

#[derive(Default)]
pub struct ParamStore {
    map: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let prev = self.map.insert(name.to_string(), value);
        assert!(prev.is_none(), "duplicate parameter name: {name}");
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    /// Zeroes every parameter whose name contains `pat` (test/ablation hook).
    pub fn zero_matching(&mut self, pat: &str) {
        for (name, t) in self.map.iter_mut() {
            if name.contains(pat) {
                t.fill(0.0);
            }
        }
    }

    /// Zeroes all parameters except LayerNorm gains (which stay at 1).
    pub fn zero_all_weights(&mut self) {
        for (name, t) in self.map.iter_mut() {
            if !name.ends_with(".gamma") {
                t.fill(0.0);
            }
        }
    }

    /// Inserts every parameter into `g` as a leaf and returns the name -> Var map.
    pub fn bind(&self, g: &mut Graph) -> Binding {
        let mut vars = IndexMap::new();
        for (name, value) in &self.map {
            vars.insert(name.clone(), g.leaf(value.clone()));
        }
        Binding { vars }
    }
}

pub struct Binding {
    vars: IndexMap<String, Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter not bound: {name}"))
    }

    /// Collects per-parameter gradients after a backward pass. Parameters the
    /// loss does not reach get zero gradients.
    pub fn collect_grads(
        &self,
        store: &ParamStore,
        grads: &mut Gradients,
    ) -> IndexMap<String, Tensor> {
        let mut out = IndexMap::new();
        for (name, var) in &self.vars {
            let g = grads
                .take(*var)
                .unwrap_or_else(|| Tensor::zeros(store.get(name).raw_dim()));
            out.insert(name.clone(), g);
        }
        out
    }
}

pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// Unit-gain (LeCun) uniform init for conv weights: limit sqrt(3 / fan_in),
/// so a chain of convolutions neither amplifies nor attenuates activations.
pub fn conv_weight_init(rng: &mut ChaCha8Rng, shape: &[usize; 4]) -> Tensor {
    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
    let limit = (3.0 / fan_in).sqrt();
    rand_tensor(rng, shape, limit)
}

pub fn conv_bias_init(rng: &mut ChaCha8Rng, cout: usize, fan_in: usize) -> Tensor {
    let limit = 1.0 / (fan_in as f64).sqrt();
    rand_tensor(rng, &[cout], limit)
}
