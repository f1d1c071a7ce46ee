//! Hybrid stage block: a stack of detail/context blocks followed by a
//! residual frequency-selection path (1x1 conv -> selective frequency
//! module -> 1x1 conv).

use rand_chacha::ChaCha8Rng;

use crate::blocks::msfm::Msfm;
use crate::blocks::mssf::{MssfBlock, MssfOptions};
use crate::graph::{Graph, Var};
use crate::layers::{ChannelScale, Conv2d, GATE_INIT};
use crate::params::{Binding, ParamStore};

pub struct HsfsOptions {
    pub mssf: MssfOptions,
    /// (groups, kernel) per frequency branch; empty disables the
    /// frequency-selection path entirely (local-only ablation baseline).
    pub msfm_branches: Vec<(usize, usize)>,
    pub heads: usize,
}

impl Default for HsfsOptions {
    fn default() -> Self {
        HsfsOptions {
            mssf: MssfOptions::default(),
            msfm_branches: vec![(4, 3), (4, 5)],
            heads: 2,
        }
    }
}

struct MsfmPath {
    pre: Conv2d,
    msfm: Msfm,
    post: Conv2d,
    // small-initialized gate keeping the frequency path a modest
    // perturbation of a fresh stage
    gamma: ChannelScale,
}

pub struct HsfsBlock {
    blocks: Vec<MssfBlock>,
    freq: Option<MsfmPath>,
}

impl HsfsBlock {
    pub fn init(
        ps: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c: usize,
        depth: usize,
        opts: &HsfsOptions,
    ) -> Self {
        let blocks = (0..depth)
            .map(|i| MssfBlock::init(ps, rng, &format!("{name}.mssf{i}"), c, &opts.mssf))
            .collect();
        let freq = if opts.msfm_branches.is_empty() || opts.mssf.local_only {
            None
        } else {
            Some(MsfmPath {
                pre: Conv2d::pointwise(ps, rng, &format!("{name}.freq_pre"), c, c),
                msfm: Msfm::init(ps, rng, &format!("{name}.freq"), c, &opts.msfm_branches, opts.heads),
                post: Conv2d::pointwise(ps, rng, &format!("{name}.freq_post"), c, c),
                gamma: ChannelScale::init_const(ps, &format!("{name}.gamma_freq"), c, GATE_INIT),
            })
        };
        HsfsBlock { blocks, freq }
    }

    /// Output of the stacked blocks, before the frequency path.
    pub fn stack(&self, g: &mut Graph, bind: &Binding, x: Var) -> Var {
        let mut v = x;
        for b in &self.blocks {
            v = b.forward(g, bind, v);
        }
        v
    }

    pub fn forward(&self, g: &mut Graph, bind: &Binding, x: Var) -> Var {
        let stacked = self.stack(g, bind, x);
        match &self.freq {
            None => stacked,
            Some(path) => {
                let h = path.pre.apply(g, bind, stacked);
                let h = path.msfm.forward(g, bind, h);
                let h = path.post.apply(g, bind, h);
                let h = path.gamma.apply(g, bind, h);
                g.add(stacked, h)
            }
        }
    }
}
