//! Skip-connection attention: every encoder level is resized and
//! aggregated, cross-attended in both directions against the bottleneck
//! feature, and gated by zero-initialized per-channel scales, so skip paths
//! start silent and open up during training.

use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::layers::{ChannelScale, Conv2d, LayerNorm};
use crate::params::{Binding, ParamStore};

pub struct ScamLevel {
    level: usize, // 0-based; level i features have spatial extent H/2^i
    agg: Conv2d,      // 1x1 over all resized encoder features
    mid_proj: Conv2d, // 1x1 bottleneck width -> level width
    ln_e: LayerNorm,
    ln_m: LayerNorm,
    q_e: Conv2d,
    q_m: Conv2d,
    v_e: Conv2d,
    v_m: Conv2d,
    lambda_l: ChannelScale,
    lambda_h: ChannelScale,
}

impl ScamLevel {
    fn init(
        ps: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        widths: &[usize],
        level: usize,
    ) -> Self {
        let c = widths[level];
        let total: usize = widths.iter().sum();
        let mid = *widths.last().unwrap();
        ScamLevel {
            level,
            agg: Conv2d::pointwise(ps, rng, &format!("{name}.agg"), total, c),
            mid_proj: Conv2d::pointwise(ps, rng, &format!("{name}.mid"), mid, c),
            ln_e: LayerNorm::init(ps, &format!("{name}.ln_e"), c),
            ln_m: LayerNorm::init(ps, &format!("{name}.ln_m"), c),
            q_e: Conv2d::pointwise(ps, rng, &format!("{name}.q_e"), c, c),
            q_m: Conv2d::pointwise(ps, rng, &format!("{name}.q_m"), c, c),
            v_e: Conv2d::pointwise(ps, rng, &format!("{name}.v_e"), c, c),
            v_m: Conv2d::pointwise(ps, rng, &format!("{name}.v_m"), c, c),
            lambda_l: ChannelScale::init_zero(ps, &format!("{name}.lambda_l"), c),
            lambda_h: ChannelScale::init_zero(ps, &format!("{name}.lambda_h"), c),
        }
    }

    /// Resize every encoder feature to this level's extent, concatenate and
    /// project to the level width.
    pub fn aggregate(&self, g: &mut Graph, bind: &Binding, enc: &[Var]) -> Var {
        let resized: Vec<Var> = enc
            .iter()
            .enumerate()
            .map(|(j, &e)| g.resize_pow2(e, j as i32 - self.level as i32))
            .collect();
        let cat = g.concat_ch(&resized);
        self.agg.apply(g, bind, cat)
    }

    /// Bidirectional cross-attention over spatial tokens. Queries double as
    /// the opposite stream's keys; logits are scaled by 1/sqrt(C); both
    /// directions are gated by zero-initialized channel scales.
    pub fn cross(&self, g: &mut Graph, bind: &Binding, xe: Var, xm: Var) -> Var {
        let shape = g.shape(xe).to_vec();
        assert_eq!(g.shape(xm), &shape[..], "stream shape mismatch");
        let (c, h, w) = (shape[1], shape[2], shape[3]);
        let oe = self.ln_e.apply(g, bind, xe);
        let om = self.ln_m.apply(g, bind, xm);
        let qe = self.q_e.apply(g, bind, oe);
        let qm = self.q_m.apply(g, bind, om);
        let ve = self.v_e.apply(g, bind, oe);
        let vm = self.v_m.apply(g, bind, om);
        let (qe, qm, ve, vm) = (
            g.to_tokens(qe),
            g.to_tokens(qm),
            g.to_tokens(ve),
            g.to_tokens(vm),
        );
        let beta = (c as f64).sqrt();
        // middle -> encoder: Attention(Q_M, K_M = Q_E, V_E)
        let f_me = g.attention(qm, qe, ve, beta);
        // encoder -> middle: Attention(Q_E, K_E = Q_M, V_M)
        let f_em = g.attention(qe, qm, vm, beta);
        let f_me = g.from_tokens(f_me, h, w);
        let f_em = g.from_tokens(f_em, h, w);
        let low = self.lambda_l.apply(g, bind, f_me);
        let high = self.lambda_h.apply(g, bind, f_em);
        g.add(low, high)
    }

    pub fn forward(&self, g: &mut Graph, bind: &Binding, enc: &[Var], middle: Var) -> Var {
        let xe = self.aggregate(g, bind, enc);
        let steps = enc.len() as i32 - 1 - self.level as i32;
        let xm = g.resize_pow2(middle, steps);
        let xm = self.mid_proj.apply(g, bind, xm);
        self.cross(g, bind, xe, xm)
    }
}

pub struct Scam {
    pub levels: Vec<ScamLevel>,
}

impl Scam {
    /// `widths[i]` is the channel width of encoder level i (0-based, level 0
    /// at full resolution); the bottleneck shares the deepest width.
    pub fn init(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, widths: &[usize]) -> Self {
        let levels = (0..widths.len())
            .map(|i| ScamLevel::init(ps, rng, &format!("{name}.l{i}"), widths, i))
            .collect();
        Scam { levels }
    }

    /// One gated skip feature per level, shaped like that level's encoder
    /// output.
    pub fn forward(&self, g: &mut Graph, bind: &Binding, enc: &[Var], middle: Var) -> Vec<Var> {
        assert_eq!(enc.len(), self.levels.len());
        self.levels
            .iter()
            .map(|lvl| lvl.forward(g, bind, enc, middle))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::attention::attention_weights;
    use crate::params::{rand_tensor, test_rng};

    const WIDTHS: [usize; 4] = [2, 4, 8, 16];

    fn setup(seed: u64) -> (ParamStore, Scam) {
        let mut ps = ParamStore::new();
        let mut rng = test_rng(seed);
        let s = Scam::init(&mut ps, &mut rng, "scam", &WIDTHS);
        (ps, s)
    }

    fn pyramid(seed: u64, h: usize) -> Vec<crate::Tensor> {
        let mut rng = test_rng(seed);
        (0..4)
            .map(|i| rand_tensor(&mut rng, &[1, WIDTHS[i], h >> i, h >> i], 1.0))
            .collect()
    }

    #[test]
    fn zero_init_outputs_are_zero() {
        let (ps, s) = setup(51);
        let enc = pyramid(1, 16);
        let mid = rand_tensor(&mut test_rng(2), &[1, 16, 2, 2], 1.0);
        let mut g = Graph::new();
        let bind = ps.bind(&mut g);
        let evars: Vec<_> = enc.into_iter().map(|t| g.leaf(t)).collect();
        let m = g.leaf(mid);
        let outs = s.forward(&mut g, &bind, &evars, m);
        for (i, o) in outs.iter().enumerate() {
            assert_eq!(g.shape(*o), &[1, WIDTHS[i], 16 >> i, 16 >> i]);
            for &e in g.value(*o).iter() {
                assert_eq!(e, 0.0, "level {i} skip not silent at init");
            }
        }
    }

    #[test]
    fn aggregate_matches_resize_concat_project() {
        let (ps, s) = setup(52);
        let enc = pyramid(3, 16);
        let mut g = Graph::new();
        let bind = ps.bind(&mut g);
        let evars: Vec<_> = enc.into_iter().map(|t| g.leaf(t)).collect();
        let got = s.levels[1].aggregate(&mut g, &bind, &evars);
        let r0 = g.avg_pool2(evars[0]);
        let r2 = g.bilinear_up2(evars[2]);
        let r3 = g.resize_pow2(evars[3], 2);
        let cat = g.concat_ch(&[r0, evars[1], r2, r3]);
        let want = s.levels[1].agg.apply(&mut g, &bind, cat);
        assert_eq!(g.value(got), g.value(want));
    }

    #[test]
    fn single_token_attention_returns_values() {
        // H*W = 1: softmax over one logit, so each direction passes V through
        let (mut ps, s) = setup(53);
        ps.get_mut("scam.l3.lambda_l").fill(1.0);
        ps.get_mut("scam.l3.lambda_h").fill(1.0);
        let xe = rand_tensor(&mut test_rng(4), &[1, 16, 1, 1], 1.0);
        let xm = rand_tensor(&mut test_rng(5), &[1, 16, 1, 1], 1.0);
        let mut g = Graph::new();
        let bind = ps.bind(&mut g);
        let (e, m) = (g.leaf(xe), g.leaf(xm));
        let got = s.levels[3].cross(&mut g, &bind, e, m);
        let oe = s.levels[3].ln_e.apply(&mut g, &bind, e);
        let om = s.levels[3].ln_m.apply(&mut g, &bind, m);
        let ve = s.levels[3].v_e.apply(&mut g, &bind, oe);
        let vm = s.levels[3].v_m.apply(&mut g, &bind, om);
        let want = g.add(ve, vm);
        for (a, b) in g.value(got).iter().zip(g.value(want).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn micro_instance_matches_explicit_matmul() {
        // 2 spatial tokens, C = 2, gates opened
        let (mut ps, s) = setup(54);
        ps.get_mut("scam.l0.lambda_l").fill(1.0);
        ps.get_mut("scam.l0.lambda_h").fill(1.0);
        let xe = rand_tensor(&mut test_rng(6), &[1, 2, 2, 1], 1.0);
        let xm = rand_tensor(&mut test_rng(7), &[1, 2, 2, 1], 1.0);
        let mut g = Graph::new();
        let bind = ps.bind(&mut g);
        let (e, m) = (g.leaf(xe), g.leaf(xm));
        let lvl = &s.levels[0];
        let got = lvl.cross(&mut g, &bind, e, m);
        let oe = lvl.ln_e.apply(&mut g, &bind, e);
        let om = lvl.ln_m.apply(&mut g, &bind, m);
        // (1,C,2,1) -> 2 x C token matrix
        let tok = |v: &crate::Tensor| {
            let mut out = ndarray::Array2::zeros((2, 2));
            for t in 0..2 {
                for c in 0..2 {
                    out[[t, c]] = v[[0, c, t, 0]];
                }
            }
            out
        };
        let qe_v = lvl.q_e.apply(&mut g, &bind, oe);
        let qm_v = lvl.q_m.apply(&mut g, &bind, om);
        let ve_v = lvl.v_e.apply(&mut g, &bind, oe);
        let vm_v = lvl.v_m.apply(&mut g, &bind, om);
        let qe = tok(g.value(qe_v));
        let qm = tok(g.value(qm_v));
        let ve = tok(g.value(ve_v));
        let vm = tok(g.value(vm_v));
        let beta = 2f64.sqrt();
        let f_me = attention_weights(qm.view(), qe.view(), beta).dot(&ve);
        let f_em = attention_weights(qe.view(), qm.view(), beta).dot(&vm);
        let gv = g.value(got);
        for t in 0..2 {
            for c in 0..2 {
                let want = f_me[[t, c]] + f_em[[t, c]];
                let diff = (gv[[0, c, t, 0]] - want).abs();
                assert!(diff < 1e-9, "mismatch {diff}");
            }
        }
    }

    #[test]
    fn symmetric_parameters_swap_directions() {
        let (mut ps, s) = setup(55);
        // tie the two streams' projections and normalizations together
        for p in ["q", "v"] {
            let w = ps.get(&format!("scam.l0.{p}_e.w")).clone();
            let b = ps.get(&format!("scam.l0.{p}_e.b")).clone();
            ps.get_mut(&format!("scam.l0.{p}_m.w")).assign(&w);
            ps.get_mut(&format!("scam.l0.{p}_m.b")).assign(&b);
        }
        let xe = rand_tensor(&mut test_rng(8), &[1, 2, 4, 4], 1.0);
        let xm = rand_tensor(&mut test_rng(9), &[1, 2, 4, 4], 1.0);
        let lvl = &s.levels[0];

        // middle->encoder direction only
        ps.get_mut("scam.l0.lambda_l").fill(1.0);
        let run = |ps: &ParamStore, a: &crate::Tensor, b: &crate::Tensor| {
            let mut g = Graph::new();
            let bind = ps.bind(&mut g);
            let (e, m) = (g.leaf(a.clone()), g.leaf(b.clone()));
            let y = lvl.cross(&mut g, &bind, e, m);
            g.value(y).clone()
        };
        let forward_dir = run(&ps, &xe, &xm);
        ps.get_mut("scam.l0.lambda_l").fill(0.0);
        ps.get_mut("scam.l0.lambda_h").fill(1.0);
        let swapped_dir = run(&ps, &xm, &xe);
        for (a, b) in forward_dir.iter().zip(swapped_dir.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn gradients_reach_gates_and_projections() {
        let mut ps = ParamStore::new();
        let mut rng = test_rng(56);
        let widths = [2, 4];
        let s = Scam::init(&mut ps, &mut rng, "scam", &widths);
        ps.insert("e0", rand_tensor(&mut test_rng(10), &[1, 2, 6, 6], 1.0));
        ps.insert("e1", rand_tensor(&mut test_rng(11), &[1, 4, 3, 3], 1.0));
        ps.insert("mid", rand_tensor(&mut test_rng(12), &[1, 4, 3, 3], 1.0));
        // open the gates so gradients can flow past them
        for l in 0..2 {
            ps.get_mut(&format!("scam.l{l}.lambda_l")).fill(0.3);
            ps.get_mut(&format!("scam.l{l}.lambda_h")).fill(-0.2);
        }
        let report = crate::gradcheck::check(
            &ps,
            |g, bind| {
                let enc = [bind.var("e0"), bind.var("e1")];
                let outs = s.forward(g, bind, &enc, bind.var("mid"));
                let terms: Vec<_> = outs.iter().map(|&o| g.mean_abs(o)).collect();
                let mut acc = terms[0];
                for &t in &terms[1..] {
                    acc = g.add(acc, t);
                }
                acc
            },
            4,
            crate::gradcheck::DEFAULT_FD_STEP,
            crate::gradcheck::DEFAULT_FD_TOL,
        );
        let worst = report.worst().unwrap();
        assert!(report.pass(), "worst: {} {:.3e}", worst.name, worst.max_rel_err);
        // the gate gradients themselves must be nonzero
        let (_, grads) = crate::gradcheck::run_scalar(&ps, |g, bind| {
            let enc = [bind.var("e0"), bind.var("e1")];
            let outs = s.forward(g, bind, &enc, bind.var("mid"));
            let a = g.mean_abs(outs[0]);
            let b = g.mean_abs(outs[1]);
            g.add(a, b)
        });
        for l in 0..2 {
            assert!(grads[&format!("scam.l{l}.lambda_l")].iter().any(|&v| v != 0.0));
            assert!(grads[&format!("scam.l{l}.lambda_h")].iter().any(|&v| v != 0.0));
        }
    }
}
