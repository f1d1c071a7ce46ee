//! Named layers: thin wrappers that own parameter names and apply graph ops.

use ndarray::IxDyn;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Tensor, Var};
use crate::ops::conv::ConvSpec;
use crate::params::{conv_bias_init, conv_weight_init, Binding, ParamStore};

#[derive(Clone)]
pub struct Conv2d {
    wname: String,
    bname: String,
    spec: ConvSpec,
    k: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        ps: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
    ) -> Self {
        let shape = [cout, cin / groups, k, k];
        ps.insert(&format!("{name}.w"), conv_weight_init(rng, &shape));
        let fan_in = shape[1] * k * k;
        ps.insert(&format!("{name}.b"), conv_bias_init(rng, cout, fan_in));
        Conv2d {
            wname: format!("{name}.w"),
            bname: format!("{name}.b"),
            spec: ConvSpec { stride, groups },
            k,
        }
    }

    pub fn pointwise(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize) -> Self {
        Self::init(ps, rng, name, cin, cout, 1, 1, 1)
    }

    pub fn depthwise(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c: usize, k: usize) -> Self {
        Self::init(ps, rng, name, c, c, k, 1, c)
    }

    /// Like [`Conv2d::init`] but with the bias starting at zero (used on
    /// attention projections so untouched paths contribute exactly nothing).
    #[allow(clippy::too_many_arguments)]
    pub fn init_zero_bias(
        ps: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
    ) -> Self {
        let conv = Self::init(ps, rng, name, cin, cout, k, stride, groups);
        ps.get_mut(&conv.bname).fill(0.0);
        conv
    }

    pub fn apply(&self, g: &mut Graph, bind: &Binding, x: Var) -> Var {
        let w = bind.var(&self.wname);
        let b = bind.var(&self.bname);
        if self.k == 1 && self.spec.stride == 1 {
            g.conv2d_valid(x, w, b, self.spec)
        } else {
            g.conv2d(x, w, b, self.spec)
        }
    }
}

#[derive(Clone)]
pub struct LayerNorm {
    gname: String,
    bname: String,
}

impl LayerNorm {
    pub fn init(ps: &mut ParamStore, name: &str, c: usize) -> Self {
        ps.insert(&format!("{name}.gamma"), Tensor::ones(IxDyn(&[c])));
        ps.insert(&format!("{name}.beta"), Tensor::zeros(IxDyn(&[c])));
        LayerNorm {
            gname: format!("{name}.gamma"),
            bname: format!("{name}.beta"),
        }
    }

    pub fn apply(&self, g: &mut Graph, bind: &Binding, x: Var) -> Var {
        g.layer_norm(x, bind.var(&self.gname), bind.var(&self.bname))
    }
}

/// Starting value for residual-branch gates. Small enough that deep stacks
/// stay well-scaled at initialization, large enough that branch weights
/// receive useful gradients from the first step (exactly-zero gates open
/// too slowly under short training budgets).
pub const GATE_INIT: f64 = 0.1;

/// Trainable per-channel scale (used for residual and attention gating).
#[derive(Clone)]
pub struct ChannelScale {
    name: String,
}

impl ChannelScale {
    pub fn init_zero(ps: &mut ParamStore, name: &str, c: usize) -> Self {
        ps.insert(name, Tensor::zeros(IxDyn(&[c])));
        ChannelScale { name: name.to_string() }
    }

    pub fn init_const(ps: &mut ParamStore, name: &str, c: usize, v: f64) -> Self {
        ps.insert(name, Tensor::from_elem(IxDyn(&[c]), v));
        ChannelScale { name: name.to_string() }
    }

    pub fn apply(&self, g: &mut Graph, bind: &Binding, x: Var) -> Var {
        g.channel_scale(x, bind.var(&self.name))
    }
}
