//! Simple gate: split channels in half, multiply the halves.

use ndarray::{Axis, Slice};

use crate::graph::{Backward, Graph, Tensor, Var};

struct SimpleGateBack;
impl Backward for SimpleGateBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let x = inputs[0];
        let c = x.shape()[1];
        let half = c / 2;
        let a = x.slice_axis(Axis(1), Slice::from(0..half));
        let b = x.slice_axis(Axis(1), Slice::from(half..c));
        let mut dx = Tensor::zeros(x.raw_dim());
        dx.slice_axis_mut(Axis(1), Slice::from(0..half))
            .assign(&(grad * &b));
        dx.slice_axis_mut(Axis(1), Slice::from(half..c))
            .assign(&(grad * &a));
        vec![dx]
    }
}

impl Graph {
    /// (B,C,H,W) with even C -> (B,C/2,H,W): first half times second half.
    pub fn simple_gate(&mut self, x: Var) -> Var {
        let c = self.shape(x)[1];
        assert!(c.is_multiple_of(2), "simple_gate requires an even channel count, got {c}");
        let half = c / 2;
        let xv = self.value(x);
        let a = xv.slice_axis(Axis(1), Slice::from(0..half));
        let b = xv.slice_axis(Axis(1), Slice::from(half..c));
        let v = &a.to_owned() * &b;
        self.push(v, vec![x.0], Box::new(SimpleGateBack))
    }
}
