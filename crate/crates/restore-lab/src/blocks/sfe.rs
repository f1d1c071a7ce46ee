//! Shallow feature extraction for the low-resolution auxiliary inputs:
//! 3x3 conv, gated 3x3 conv stage, 1x1 projection to the level width.

use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::layers::Conv2d;
use crate::params::{Binding, ParamStore};

pub struct SfeBlock {
    stem: Conv2d, // 3x3, 3 -> c
    gate: Conv2d, // 3x3, c -> 2c, halved by the gate
    proj: Conv2d, // 1x1, c -> level width
}

impl SfeBlock {
    pub fn init(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c: usize) -> Self {
        SfeBlock {
            stem: Conv2d::init(ps, rng, &format!("{name}.stem"), 3, c, 3, 1, 1),
            gate: Conv2d::init(ps, rng, &format!("{name}.gate"), c, 2 * c, 3, 1, 1),
            proj: Conv2d::pointwise(ps, rng, &format!("{name}.proj"), c, c),
        }
    }

    pub fn forward(&self, g: &mut Graph, bind: &Binding, img: Var) -> Var {
        let h = self.stem.apply(g, bind, img);
        let h = self.gate.apply(g, bind, h);
        let h = g.simple_gate(h);
        self.proj.apply(g, bind, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{rand_tensor, test_rng};

    fn setup(c: usize, seed: u64) -> (ParamStore, SfeBlock) {
        let mut ps = ParamStore::new();
        let mut rng = test_rng(seed);
        let b = SfeBlock::init(&mut ps, &mut rng, "sfe", c);
        (ps, b)
    }

    #[test]
    fn shape_contract() {
        let (ps, blk) = setup(8, 71);
        let img = rand_tensor(&mut test_rng(1), &[2, 3, 10, 12], 0.5);
        let mut g = Graph::new();
        let bind = ps.bind(&mut g);
        let x = g.leaf(img);
        let y = blk.forward(&mut g, &bind, x);
        assert_eq!(g.shape(y), &[2, 8, 10, 12]);
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let (mut ps, blk) = setup(4, 72);
        ps.zero_all_weights();
        let img = rand_tensor(&mut test_rng(2), &[1, 3, 6, 6], 0.5);
        let mut g = Graph::new();
        let bind = ps.bind(&mut g);
        let x = g.leaf(img);
        let y = blk.forward(&mut g, &bind, x);
        assert!(g.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_straight_line_recomputation() {
        let (ps, blk) = setup(4, 73);
        let img = rand_tensor(&mut test_rng(3), &[1, 3, 6, 6], 0.5);
        let mut g = Graph::new();
        let bind = ps.bind(&mut g);
        let x = g.leaf(img);
        let y = blk.forward(&mut g, &bind, x);
        let h = blk.stem.apply(&mut g, &bind, x);
        let h = blk.gate.apply(&mut g, &bind, h);
        let h = g.simple_gate(h);
        let want = blk.proj.apply(&mut g, &bind, h);
        assert_eq!(g.value(y), g.value(want));
    }
}
