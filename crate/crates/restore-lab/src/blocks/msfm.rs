//! Selective frequency module: per-sample learnable grouped low-pass
//! filters split a feature into low/high bands, which are then fused by
//! channel-transposed cross-band attention. Multiple branches run the same
//! pipeline on an even channel split with their own (groups, kernel).

use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::layers::{Conv2d, LayerNorm};
use crate::params::{Binding, ParamStore};

/// 1x1 projection followed by a 3x3 depthwise conv, bias-free at init.
#[derive(Clone)]
struct Proj {
    pw: Conv2d,
    dw: Conv2d,
}

impl Proj {
    fn init(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c: usize) -> Self {
        Proj {
            pw: Conv2d::init_zero_bias(ps, rng, &format!("{name}.pw"), c, c, 1, 1, 1),
            dw: Conv2d::init_zero_bias(ps, rng, &format!("{name}.dw"), c, c, 3, 1, c),
        }
    }

    fn apply(&self, g: &mut Graph, bind: &Binding, x: Var) -> Var {
        let h = self.pw.apply(g, bind, x);
        self.dw.apply(g, bind, h)
    }
}

pub struct MsfmBranch {
    pub width: usize,
    pub groups: usize,
    pub kernel: usize,
    pub heads: usize,
    filt_conv: Conv2d, // 1x1 C -> g*k^2 on pooled stats
    filt_ln: LayerNorm,
    ln_l: LayerNorm,
    ln_h: LayerNorm,
    k_l: Proj,
    k_h: Proj,
    v_l: Proj,
    v_h: Proj,
    q: Proj,
}

impl MsfmBranch {
    pub fn init(
        ps: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c: usize,
        groups: usize,
        kernel: usize,
        heads: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "low-pass kernel size must be odd, got {kernel}");
        assert!(c.is_multiple_of(groups), "width {c} not divisible by {groups} filter groups");
        assert!(c.is_multiple_of(heads), "width {c} not divisible by {heads} heads");
        let gk2 = groups * kernel * kernel;
        MsfmBranch {
            width: c,
            groups,
            kernel,
            heads,
            filt_conv: Conv2d::init_zero_bias(ps, rng, &format!("{name}.filt"), c, gk2, 1, 1, 1),
            filt_ln: LayerNorm::init(ps, &format!("{name}.filt_ln"), gk2),
            ln_l: LayerNorm::init(ps, &format!("{name}.ln_l"), c),
            ln_h: LayerNorm::init(ps, &format!("{name}.ln_h"), c),
            k_l: Proj::init(ps, rng, &format!("{name}.k_l"), c),
            k_h: Proj::init(ps, rng, &format!("{name}.k_h"), c),
            v_l: Proj::init(ps, rng, &format!("{name}.v_l"), c),
            v_h: Proj::init(ps, rng, &format!("{name}.v_h"), c),
            q: Proj::init(ps, rng, &format!("{name}.q"), c),
        }
    }

    /// Per-sample grouped low-pass filters: pooled stats -> 1x1 conv -> LN
    /// -> softmax over the k*k taps of each group. Output (B, g, k, k).
    pub fn make_filters(&self, g: &mut Graph, bind: &Binding, x: Var) -> Var {
        let b = g.shape(x)[0];
        let pooled = g.global_avg_pool(x);
        let logits = self.filt_conv.apply(g, bind, pooled);
        let logits = self.filt_ln.apply(g, bind, logits);
        let k2 = self.kernel * self.kernel;
        let flat = g.reshape(logits, &[b, self.groups, k2]);
        let f = g.softmax_lastdim(flat);
        g.reshape(f, &[b, self.groups, self.kernel, self.kernel])
    }

    /// Low/high band split: X_L is the filtered feature, X_H the residual,
    /// so X_L + X_H reconstructs the input exactly.
    pub fn split_frequency(&self, g: &mut Graph, bind: &Binding, x: Var) -> (Var, Var) {
        let filters = self.make_filters(g, bind, x);
        let xl = g.apply_lowpass(x, filters);
        let xh = g.sub(x, xl);
        (xl, xh)
    }

    /// Channel-transposed cross-band attention: channels are tokens, the
    /// flattened spatial extent is the feature dimension, logits scaled by
    /// 1/sqrt(H*W). Queries come from the summed normalized bands.
    pub fn cross_freq_attention(&self, g: &mut Graph, bind: &Binding, xl: Var, xh: Var) -> Var {
        let shape = g.shape(xl).to_vec();
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        assert_eq!(c, self.width);
        let hw = h * w;
        let ol = self.ln_l.apply(g, bind, xl);
        let oh = self.ln_h.apply(g, bind, xh);
        let q_in = g.add(ol, oh);
        let q = self.q.apply(g, bind, q_in);
        let kl = self.k_l.apply(g, bind, ol);
        let kh = self.k_h.apply(g, bind, oh);
        let vl = self.v_l.apply(g, bind, ol);
        let vh = self.v_h.apply(g, bind, oh);
        let heads = self.heads;
        let split = |g: &mut Graph, v: Var| g.reshape(v, &[b, heads, c / heads, hw]);
        let (q, kl, kh, vl, vh) = (
            split(g, q),
            split(g, kl),
            split(g, kh),
            split(g, vl),
            split(g, vh),
        );
        let scale = (hw as f64).sqrt();
        let fl = g.attention(q, kl, vl, scale);
        let fh = g.attention(q, kh, vh, scale);
        let fused = g.add(fl, fh);
        g.reshape(fused, &[b, c, h, w])
    }

    pub fn forward(&self, g: &mut Graph, bind: &Binding, x: Var) -> Var {
        let (xl, xh) = self.split_frequency(g, bind, x);
        self.cross_freq_attention(g, bind, xl, xh)
    }
}

pub struct Msfm {
    branches: Vec<MsfmBranch>,
}

impl Msfm {
    /// `branch_cfgs` lists (groups, kernel) per branch; the channel width is
    /// split evenly across branches.
    pub fn init(
        ps: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c: usize,
        branch_cfgs: &[(usize, usize)],
        heads: usize,
    ) -> Self {
        let n = branch_cfgs.len();
        assert!(n > 0, "at least one frequency branch required");
        assert!(c.is_multiple_of(n), "width {c} not divisible by {n} branches");
        let cb = c / n;
        let branches = branch_cfgs
            .iter()
            .enumerate()
            .map(|(i, &(g, k))| MsfmBranch::init(ps, rng, &format!("{name}.b{i}"), cb, g, k, heads))
            .collect();
        Msfm { branches }
    }

    pub fn forward(&self, g: &mut Graph, bind: &Binding, x: Var) -> Var {
        let n = self.branches.len();
        if n == 1 {
            return self.branches[0].forward(g, bind, x);
        }
        let cb = self.branches[0].width;
        let outs: Vec<Var> = self
            .branches
            .iter()
            .enumerate()
            .map(|(i, br)| {
                let part = g.slice_ch(x, i * cb, cb);
                br.forward(g, bind, part)
            })
            .collect();
        g.concat_ch(&outs)
    }
}
