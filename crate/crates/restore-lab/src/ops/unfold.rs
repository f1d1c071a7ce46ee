//! Neighborhood extraction and dynamic grouped low-pass filtering.

use ndarray::IxDyn;

use crate::graph::{Backward, Graph, Tensor, Var};
use crate::ops::flat;

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

struct UnfoldBack {
    k: usize,
}
impl Backward for UnfoldBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let s = inputs[0].shape();
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        let k = self.k;
        let r = (k / 2) as isize;
        let mut dx = Tensor::zeros(inputs[0].raw_dim());
        for b in 0..bn {
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let col = i * w + j;
                        for u in 0..k {
                            for v in 0..k {
                                let si = clamp_idx(i as isize + u as isize - r, h);
                                let sj = clamp_idx(j as isize + v as isize - r, w);
                                dx[[b, ch, si, sj]] +=
                                    grad[[b, (ch * k + u) * k + v, col]];
                            }
                        }
                    }
                }
            }
        }
        vec![dx]
    }
}

struct ApplyLowpassBack {
    groups: usize,
}
impl Backward for ApplyLowpassBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let (x, f) = (inputs[0], inputs[1]);
        let s = x.shape();
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        let g = self.groups;
        let k = f.shape()[2];
        let r = (k / 2) as isize;
        let ru = k / 2;
        let cg = c / g;
        let xf = flat(x);
        let ff = flat(f);
        let gf = flat(grad);
        let mut dx = vec![0.0; x.len()];
        let mut df = vec![0.0; f.len()];
        for b in 0..bn {
            for ch in 0..c {
                let gi = ch / cg;
                let ker = &ff[(b * g + gi) * k * k..(b * g + gi + 1) * k * k];
                let xp = &xf[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                let gp = &gf[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                let dfk_base = (b * g + gi) * k * k;
                for i in 0..h {
                    let inner_i = i >= ru && i + ru < h;
                    for j in 0..w {
                        let go = gp[i * w + j];
                        if inner_i && j >= ru && j + ru < w {
                            for u in 0..k {
                                let row = (i + u - ru) * w + j - ru;
                                let xr = &xp[row..row + k];
                                let kr = &ker[u * k..(u + 1) * k];
                                let dxr = &mut dx[(b * c + ch) * h * w + row
                                    ..(b * c + ch) * h * w + row + k];
                                let dfr = &mut df[dfk_base + u * k..dfk_base + (u + 1) * k];
                                for v in 0..k {
                                    dxr[v] += go * kr[v];
                                    dfr[v] += go * xr[v];
                                }
                            }
                        } else {
                            for u in 0..k {
                                for v in 0..k {
                                    let si = clamp_idx(i as isize + u as isize - r, h);
                                    let sj = clamp_idx(j as isize + v as isize - r, w);
                                    dx[(b * c + ch) * h * w + si * w + sj] += go * ker[u * k + v];
                                    df[dfk_base + u * k + v] += go * xp[si * w + sj];
                                }
                            }
                        }
                    }
                }
            }
        }
        vec![
            Tensor::from_shape_vec(x.raw_dim(), dx).unwrap(),
            Tensor::from_shape_vec(f.raw_dim(), df).unwrap(),
        ]
    }
}

impl Graph {
    /// Extracts k x k neighborhoods with replicate padding:
    /// (B,C,H,W) -> (B, C*k*k, H*W). Column j holds the neighborhood of
    /// position j for every channel; row layout is (c*k + u)*k + v.
    pub fn unfold(&mut self, x: Var, k: usize) -> Var {
        assert!(k % 2 == 1, "unfold requires an odd kernel size, got {k}");
        let s = self.shape(x).to_vec();
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        let r = (k / 2) as isize;
        let xv = self.value(x);
        let mut out = Tensor::zeros(IxDyn(&[bn, c * k * k, h * w]));
        for b in 0..bn {
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let col = i * w + j;
                        for u in 0..k {
                            for v in 0..k {
                                let si = clamp_idx(i as isize + u as isize - r, h);
                                let sj = clamp_idx(j as isize + v as isize - r, w);
                                out[[b, (ch * k + u) * k + v, col]] = xv[[b, ch, si, sj]];
                            }
                        }
                    }
                }
            }
        }
        self.push(out, vec![x.0], Box::new(UnfoldBack { k }))
    }

    /// Filters x (B,C,H,W) with per-sample grouped kernels f (B,g,k,k).
    /// Channels within a group share that group's kernel; replicate padding.
    pub fn apply_lowpass(&mut self, x: Var, f: Var) -> Var {
        let s = self.shape(x).to_vec();
        let fs = self.shape(f).to_vec();
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (g, k) = (fs[1], fs[2]);
        assert_eq!(fs[0], bn, "apply_lowpass: batch mismatch");
        assert_eq!(fs[2], fs[3], "apply_lowpass: kernels must be square");
        assert!(c % g == 0, "apply_lowpass: channel count {c} not divisible by groups {g}");
        let r = (k / 2) as isize;
        let ru = k / 2;
        let cg = c / g;
        let xv = self.value(x);
        let fv = self.value(f);
        let xf = flat(xv);
        let ff = flat(fv);
        let mut out = vec![0.0; bn * c * h * w];
        for b in 0..bn {
            for ch in 0..c {
                let gi = ch / cg;
                let ker = &ff[(b * g + gi) * k * k..(b * g + gi + 1) * k * k];
                let xp = &xf[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                let op = &mut out[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                for i in 0..h {
                    let inner_i = i >= ru && i + ru < h;
                    for j in 0..w {
                        let mut acc = 0.0;
                        if inner_i && j >= ru && j + ru < w {
                            for u in 0..k {
                                let xr = &xp[(i + u - ru) * w + j - ru..(i + u - ru) * w + j - ru + k];
                                let kr = &ker[u * k..(u + 1) * k];
                                for v in 0..k {
                                    acc += kr[v] * xr[v];
                                }
                            }
                        } else {
                            for u in 0..k {
                                for v in 0..k {
                                    let si = clamp_idx(i as isize + u as isize - r, h);
                                    let sj = clamp_idx(j as isize + v as isize - r, w);
                                    acc += ker[u * k + v] * xp[si * w + sj];
                                }
                            }
                        }
                        op[i * w + j] = acc;
                    }
                }
            }
        }
        drop(xf);
        drop(ff);
        let out = Tensor::from_shape_vec(IxDyn(&[bn, c, h, w]), out).unwrap();
        self.push(out, vec![x.0, f.0], Box::new(ApplyLowpassBack { groups: g }))
    }
}
