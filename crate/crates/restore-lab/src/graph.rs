//! Reverse-mode autodiff over dynamically shaped f64 tensors.
//!
//! Operations append nodes to a [`Graph`]; [`Graph::backward`] walks the tape
//! in reverse and accumulates gradients. Every op stores whatever it needs
//! for its backward pass (or recomputes it from the parent values).

use ndarray::ArrayD;

pub type Tensor = ArrayD<f64>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Backward rule of a single op: given the output gradient, the parent
/// values and the output value, produce one gradient per parent.
pub trait Backward {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], output: &Tensor) -> Vec<Tensor>;
}

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    op: Option<Box<dyn Backward>>,
}

pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Inserts a leaf (parameter or constant). Leaves receive gradients but
    /// have no backward rule of their own.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor,
        parents: Vec<usize>,
        op: Box<dyn Backward>,
    ) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            op: Some(op),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reverse pass from `root`, seeding its gradient with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::ones(self.nodes[root.0].value.raw_dim()));
        for id in (0..=root.0).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if let Some(op) = &node.op {
                let inputs: Vec<&Tensor> =
                    node.parents.iter().map(|&p| &self.nodes[p].value).collect();
                let parent_grads = op.backward(&grad, &inputs, &node.value);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                    match &mut grads[pid] {
                        Some(acc) => *acc += &pg,
                        slot => *slot = Some(pg),
                    }
                }
            } else {
                grads[id] = Some(grad); // keep leaf gradients
            }
        }
        Gradients { grads }
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
