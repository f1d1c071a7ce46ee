//! Multi-scale spatial feature block: a detail branch pair (gated local
//! convs + a Fourier-domain global path) followed by cross-linked
//! multi-scale depthwise context paths.

use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::layers::{ChannelScale, Conv2d, LayerNorm, GATE_INIT};
use crate::params::{Binding, ParamStore};

/// Kernel sizes assigned to context branches, in order.
pub const BRANCH_KERNELS: [usize; 3] = [3, 5, 7];

struct CtxBranch {
    ln: LayerNorm,
    expand: Conv2d, // 1x1 C -> 2C
    dw: Conv2d,     // depthwise k at 2C
}

pub struct MssfBlock {
    width: usize,
    local_only: bool,
    spectral_enabled: bool,
    ln_in: LayerNorm,
    local_expand: Conv2d, // 1x1 C -> 2C
    local_dw: Conv2d,     // dw3 at 2C
    sca_conv: Conv2d,     // 1x1 C -> C on pooled stats
    local_proj: Conv2d,   // 1x1 C -> C
    spec_expand: Option<Conv2d>, // 1x1 2C -> 4C on spectrum pairs
    spec_dw: Option<Conv2d>,     // dw3 at 4C
    ctx: Vec<CtxBranch>,
    fuse: Vec<Conv2d>, // depthwise k_j at n*C
    ctx_proj: Option<Conv2d>, // 1x1 n*(n*C/2) -> C
    // small-initialized per-channel gates on every residual branch, so a
    // fresh block starts near the identity and deep stacks stay well-scaled
    gamma_local: ChannelScale,
    gamma_spec: Option<ChannelScale>,
    gamma_ctx: Option<ChannelScale>,
}

pub struct MssfOptions {
    pub branches: usize,
    pub spectral_enabled: bool,
    /// Local branch only: drops the spectral path and the context stage
    /// (ablation baseline).
    pub local_only: bool,
}

impl Default for MssfOptions {
    fn default() -> Self {
        MssfOptions {
            branches: 2,
            spectral_enabled: true,
            local_only: false,
        }
    }
}

impl MssfBlock {
    pub fn init(
        ps: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        c: usize,
        opts: &MssfOptions,
    ) -> Self {
        let n = opts.branches;
        assert!(
            (1..=BRANCH_KERNELS.len()).contains(&n),
            "context branch count must be 1..=3, got {n}"
        );
        assert!((n * c).is_multiple_of(2), "context width {n}*{c} must be even");
        let ln_in = LayerNorm::init(ps, &format!("{name}.ln_in"), c);
        let local_expand = Conv2d::pointwise(ps, rng, &format!("{name}.local.expand"), c, 2 * c);
        let local_dw = Conv2d::depthwise(ps, rng, &format!("{name}.local.dw"), 2 * c, 3);
        let sca_conv = Conv2d::pointwise(ps, rng, &format!("{name}.local.sca"), c, c);
        let local_proj = Conv2d::pointwise(ps, rng, &format!("{name}.local.proj"), c, c);
        let (spec_expand, spec_dw) = if opts.spectral_enabled && !opts.local_only {
            (
                Some(Conv2d::pointwise(ps, rng, &format!("{name}.spec.expand"), 2 * c, 4 * c)),
                Some(Conv2d::depthwise(ps, rng, &format!("{name}.spec.dw"), 4 * c, 3)),
            )
        } else {
            (None, None)
        };
        let mut ctx = Vec::new();
        let mut fuse = Vec::new();
        let mut ctx_proj = None;
        if !opts.local_only {
            for (j, &k) in BRANCH_KERNELS.iter().enumerate().take(n) {
                ctx.push(CtxBranch {
                    ln: LayerNorm::init(ps, &format!("{name}.ctx{j}.ln"), c),
                    expand: Conv2d::pointwise(ps, rng, &format!("{name}.ctx{j}.expand"), c, 2 * c),
                    dw: Conv2d::depthwise(ps, rng, &format!("{name}.ctx{j}.dw"), 2 * c, k),
                });
                fuse.push(Conv2d::depthwise(ps, rng, &format!("{name}.fuse{j}.dw"), n * c, k));
            }
            ctx_proj = Some(Conv2d::pointwise(
                ps,
                rng,
                &format!("{name}.ctx_proj"),
                n * (n * c / 2),
                c,
            ));
        }
        let gamma_local = ChannelScale::init_const(ps, &format!("{name}.gamma_local"), c, GATE_INIT);
        let gamma_spec = (opts.spectral_enabled && !opts.local_only)
            .then(|| ChannelScale::init_const(ps, &format!("{name}.gamma_spec"), c, GATE_INIT));
        let gamma_ctx = (!opts.local_only)
            .then(|| ChannelScale::init_const(ps, &format!("{name}.gamma_ctx"), c, GATE_INIT));
        MssfBlock {
            width: c,
            local_only: opts.local_only,
            spectral_enabled: opts.spectral_enabled && !opts.local_only,
            ln_in,
            local_expand,
            local_dw,
            sca_conv,
            local_proj,
            spec_expand,
            spec_dw,
            ctx,
            fuse,
            ctx_proj,
            gamma_local,
            gamma_spec,
            gamma_ctx,
        }
    }

    /// Detail stage: local gated branch + spectral branch + identity.
    pub fn spatial(&self, g: &mut Graph, bind: &Binding, x: Var) -> Var {
        assert_eq!(g.shape(x)[1], self.width, "mssf: channel width mismatch");
        let normed = self.ln_in.apply(g, bind, x);

        // local: 1x1 expand -> dw3 -> SG -> SCA -> 1x1 project
        let h = self.local_expand.apply(g, bind, normed);
        let h = self.local_dw.apply(g, bind, h);
        let h = g.simple_gate(h);
        let pooled = g.global_avg_pool(h);
        let att = self.sca_conv.apply(g, bind, pooled);
        let h = g.broadcast_mul(h, att);
        let local = self.local_proj.apply(g, bind, h);
        let local = self.gamma_local.apply(g, bind, local);

        let mut out = g.add(local, x);
        if self.spectral_enabled {
            let spec = self.spectral(g, bind, normed);
            let spec = self.gamma_spec.as_ref().unwrap().apply(g, bind, spec);
            out = g.add(out, spec);
        }
        out
    }

    /// Fourier-domain global path on an already-normalized feature.
    fn spectral(&self, g: &mut Graph, bind: &Binding, normed: Var) -> Var {
        let pairs = g.fft2_pairs(normed);
        let h = self.spec_expand.as_ref().unwrap().apply(g, bind, pairs);
        let h = self.spec_dw.as_ref().unwrap().apply(g, bind, h);
        let h = g.simple_gate(h);
        g.ifft2_pairs_real(h)
    }

    /// Context stage: cross-linked multi-scale gated depthwise paths.
    pub fn context(&self, g: &mut Graph, bind: &Binding, xs: Var) -> Var {
        let n = self.ctx.len();
        let mut stage1 = Vec::with_capacity(n);
        for br in &self.ctx {
            let h = br.ln.apply(g, bind, xs);
            let h = br.expand.apply(g, bind, h);
            let h = br.dw.apply(g, bind, h);
            stage1.push(g.simple_gate(h)); // width C
        }
        let mut stage2 = Vec::with_capacity(n);
        for (j, fuse) in self.fuse.iter().enumerate() {
            // cyclic concatenation starting from branch j: [y_j, y_{j+1}, ...]
            let order: Vec<Var> = (0..n).map(|o| stage1[(j + o) % n]).collect();
            let cat = if n == 1 { order[0] } else { g.concat_ch(&order) };
            let h = fuse.apply(g, bind, cat);
            stage2.push(g.simple_gate(h)); // width n*C/2
        }
        let cat = if n == 1 { stage2[0] } else { g.concat_ch(&stage2) };
        self.ctx_proj.as_ref().unwrap().apply(g, bind, cat)
    }

    pub fn forward(&self, g: &mut Graph, bind: &Binding, x: Var) -> Var {
        let xs = self.spatial(g, bind, x);
        if self.local_only {
            return xs;
        }
        let xc = self.context(g, bind, xs);
        let xc = self.gamma_ctx.as_ref().unwrap().apply(g, bind, xc);
        g.add(xs, xc)
    }
}
