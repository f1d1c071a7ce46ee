//! Layer normalization over the channel axis, per spatial position.

use ndarray::IxDyn;

use crate::graph::{Backward, Graph, Tensor, Var};
use crate::ops::flat;

pub const LN_EPS: f64 = 1e-6;

struct LayerNormBack {
    x_hat: Tensor,    // (B,C,H,W)
    inv_std: Tensor,  // (B,1,H,W)
}

impl Backward for LayerNormBack {
    fn backward(&self, grad: &Tensor, _inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let shape = grad.shape();
        let (bn, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        let cf = c as f64;
        let gf = flat(grad);
        let xh = flat(&self.x_hat);
        let isf = flat(&self.inv_std);
        let mut dx = vec![0.0; grad.len()];
        let mut gm = vec![0.0; hw];
        let mut gxm = vec![0.0; hw];
        for b in 0..bn {
            let base = b * c * hw;
            gm.iter_mut().for_each(|v| *v = 0.0);
            gxm.iter_mut().for_each(|v| *v = 0.0);
            for ch in 0..c {
                let g = &gf[base + ch * hw..base + (ch + 1) * hw];
                let xr = &xh[base + ch * hw..base + (ch + 1) * hw];
                for p in 0..hw {
                    gm[p] += g[p];
                    gxm[p] += g[p] * xr[p];
                }
            }
            for p in 0..hw {
                gm[p] /= cf;
                gxm[p] /= cf;
            }
            let istd = &isf[b * hw..(b + 1) * hw];
            for ch in 0..c {
                let g = &gf[base + ch * hw..base + (ch + 1) * hw];
                let xr = &xh[base + ch * hw..base + (ch + 1) * hw];
                let d = &mut dx[base + ch * hw..base + (ch + 1) * hw];
                for p in 0..hw {
                    d[p] = istd[p] * (g[p] - gm[p] - xr[p] * gxm[p]);
                }
            }
        }
        vec![Tensor::from_shape_vec(grad.raw_dim(), dx).unwrap()]
    }
}

impl Graph {
    /// Channel mean 0 / variance 1 per spatial position; no affine part.
    pub fn layer_norm_plain(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let (bn, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let hw = h * w;
        let cf = c as f64;
        let xv = self.value(x);
        let xf = flat(xv);
        let mut out = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; bn * hw];
        let mut mean = vec![0.0; hw];
        let mut var = vec![0.0; hw];
        for b in 0..bn {
            let base = b * c * hw;
            mean.iter_mut().for_each(|v| *v = 0.0);
            var.iter_mut().for_each(|v| *v = 0.0);
            for ch in 0..c {
                let xr = &xf[base + ch * hw..base + (ch + 1) * hw];
                for p in 0..hw {
                    mean[p] += xr[p];
                }
            }
            for m in mean.iter_mut() {
                *m /= cf;
            }
            for ch in 0..c {
                let xr = &xf[base + ch * hw..base + (ch + 1) * hw];
                for p in 0..hw {
                    let d = xr[p] - mean[p];
                    var[p] += d * d;
                }
            }
            let istd = &mut inv_std[b * hw..(b + 1) * hw];
            for p in 0..hw {
                istd[p] = 1.0 / (var[p] / cf + LN_EPS).sqrt();
            }
            for ch in 0..c {
                let xr = &xf[base + ch * hw..base + (ch + 1) * hw];
                let o = &mut out[base + ch * hw..base + (ch + 1) * hw];
                for p in 0..hw {
                    o[p] = (xr[p] - mean[p]) * istd[p];
                }
            }
        }
        drop(xf);
        let out = Tensor::from_shape_vec(xv.raw_dim(), out).unwrap();
        let inv_std = Tensor::from_shape_vec(IxDyn(&[bn, 1, h, w]), inv_std).unwrap();
        let x_hat = out.clone();
        self.push(out, vec![x.0], Box::new(LayerNormBack { x_hat, inv_std }))
    }

    /// Full layer norm: normalize then scale/shift by per-channel gamma/beta.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        assert_eq!(
            self.shape(gamma)[0],
            self.shape(x)[1],
            "layer_norm: gamma length must equal channel count"
        );
        let n = self.layer_norm_plain(x);
        let s = self.channel_scale(n, gamma);
        self.channel_bias(s, beta)
    }
}
