//! 2-D convolution with replicate padding, plus the padding op itself.
//!
//! Dense convs go through im2col + gemm; depthwise convs use a direct loop.
//! Backward recomputes the im2col buffer instead of storing it. All hot
//! loops run over flat slices — dynamic-dimension indexing is far too slow
//! for the inner loops.

use std::borrow::Cow;

use ndarray::{Array2, IxDyn};

use crate::graph::{Backward, Graph, Tensor, Var};

/// Flat view of a tensor's elements in logical order.
fn flat(t: &Tensor) -> Cow<'_, [f64]> {
    match t.as_slice() {
        Some(s) => Cow::Borrowed(s),
        None => Cow::Owned(t.iter().cloned().collect()),
    }
}

/// Flat view of a matrix in row-major order.
fn flat2(m: &Array2<f64>) -> Cow<'_, [f64]> {
    match m.as_slice() {
        Some(s) => Cow::Borrowed(s),
        None => Cow::Owned(m.iter().cloned().collect()),
    }
}

struct PadReplicateBack {
    p: usize,
}
impl Backward for PadReplicateBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let shape = inputs[0].shape();
        let (bn, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let p = self.p;
        let (ph, pw) = (h + 2 * p, w + 2 * p);
        let gf = flat(grad);
        let mut dx = Tensor::zeros(inputs[0].raw_dim());
        let df = dx.as_slice_mut().unwrap();
        for plane in 0..bn * c {
            let gbase = plane * ph * pw;
            let dbase = plane * h * w;
            for i in 0..ph {
                let si = i.saturating_sub(p).min(h - 1);
                let grow = &gf[gbase + i * pw..gbase + (i + 1) * pw];
                let drow = &mut df[dbase + si * w..dbase + (si + 1) * w];
                for (j, &g) in grow.iter().enumerate() {
                    let sj = j.saturating_sub(p).min(w - 1);
                    drow[sj] += g;
                }
            }
        }
        vec![dx]
    }
}

pub(crate) fn pad_replicate_value(x: &Tensor, p: usize) -> Tensor {
    let shape = x.shape();
    let (bn, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let xf = flat(x);
    let mut out = Tensor::zeros(IxDyn(&[bn, c, ph, pw]));
    let of = out.as_slice_mut().unwrap();
    for plane in 0..bn * c {
        let xbase = plane * h * w;
        let obase = plane * ph * pw;
        for i in 0..ph {
            let si = i.saturating_sub(p).min(h - 1);
            let src = &xf[xbase + si * w..xbase + (si + 1) * w];
            let dst = &mut of[obase + i * pw..obase + (i + 1) * pw];
            dst[..p].fill(src[0]);
            dst[p..p + w].copy_from_slice(src);
            dst[p + w..].fill(src[w - 1]);
        }
    }
    out
}

#[derive(Clone, Copy)]
pub struct ConvSpec {
    pub stride: usize,
    pub groups: usize,
}

struct Conv2dBack {
    spec: ConvSpec,
}

fn conv_out_hw(h: usize, w: usize, kh: usize, kw: usize, s: usize) -> (usize, usize) {
    ((h - kh) / s + 1, (w - kw) / s + 1)
}

/// im2col for one channel group: (cg*kh*kw, B*oh*ow).
#[allow(clippy::too_many_arguments)]
fn im2col(
    xf: &[f64],
    bn: usize,
    cin: usize,
    h: usize,
    wd: usize,
    c0: usize,
    cg: usize,
    kh: usize,
    kw: usize,
    s: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let ncols = bn * oh * ow;
    let mut col = Array2::<f64>::zeros((cg * kh * kw, ncols));
    let cf = col.as_slice_mut().unwrap();
    for cl in 0..cg {
        for u in 0..kh {
            for v in 0..kw {
                let rbase = ((cl * kh + u) * kw + v) * ncols;
                for b in 0..bn {
                    let xbase = (b * cin + c0 + cl) * h * wd;
                    for i in 0..oh {
                        let src0 = xbase + (i * s + u) * wd + v;
                        let dst0 = rbase + (b * oh + i) * ow;
                        if s == 1 {
                            cf[dst0..dst0 + ow].copy_from_slice(&xf[src0..src0 + ow]);
                        } else {
                            for j in 0..ow {
                                cf[dst0 + j] = xf[src0 + j * s];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, spec: ConvSpec) -> Tensor {
    let xs = x.shape();
    let ws = w.shape();
    let (bn, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, cg, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let g = spec.groups;
    let s = spec.stride;
    assert_eq!(cin % g, 0, "conv2d: groups must divide C_in");
    assert_eq!(cout % g, 0, "conv2d: groups must divide C_out");
    assert_eq!(cg, cin / g, "conv2d: weight shape vs groups");
    let (oh, ow) = conv_out_hw(h, wd, kh, kw, s);
    let xf = flat(x);
    let wf = flat(w);
    let bf = flat(b);
    let mut out = Tensor::zeros(IxDyn(&[bn, cout, oh, ow]));
    let of = out.as_slice_mut().unwrap();

    if g == cin && g == cout && cg == 1 {
        // depthwise
        for bb in 0..bn {
            for c in 0..cout {
                let xbase = (bb * cin + c) * h * wd;
                let obase = (bb * cout + c) * oh * ow;
                of[obase..obase + oh * ow].fill(bf[c]);
                for u in 0..kh {
                    for v in 0..kw {
                        let wc = wf[(c * kh + u) * kw + v];
                        for i in 0..oh {
                            let src0 = xbase + (i * s + u) * wd + v;
                            let dst = &mut of[obase + i * ow..obase + (i + 1) * ow];
                            if s == 1 {
                                let src = &xf[src0..src0 + ow];
                                for (d, &sv) in dst.iter_mut().zip(src) {
                                    *d += wc * sv;
                                }
                            } else {
                                for (j, d) in dst.iter_mut().enumerate() {
                                    *d += wc * xf[src0 + j * s];
                                }
                            }
                        }
                    }
                }
            }
        }
        return out;
    }

    let cog = cout / g;
    let ncols = bn * oh * ow;
    for gi in 0..g {
        let col = im2col(&xf, bn, cin, h, wd, gi * cg, cg, kh, kw, s, oh, ow);
        let wm = w
            .slice(ndarray::s![gi * cog..(gi + 1) * cog, .., .., ..])
            .to_owned()
            .into_shape_with_order((cog, cg * kh * kw))
            .unwrap();
        let y = wm.dot(&col); // (cog, B*oh*ow)
        let yf = flat2(&y);
        for oc in 0..cog {
            let c = gi * cog + oc;
            let bias = bf[c];
            for bb in 0..bn {
                let src = &yf[oc * ncols + bb * oh * ow..oc * ncols + (bb + 1) * oh * ow];
                let dst0 = (bb * cout + c) * oh * ow;
                for (d, &sv) in of[dst0..dst0 + oh * ow].iter_mut().zip(src) {
                    *d = sv + bias;
                }
            }
        }
    }
    out
}

impl Backward for Conv2dBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let (x, w) = (inputs[0], inputs[1]);
        let xs = x.shape();
        let ws = w.shape();
        let (bn, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cg, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let g = self.spec.groups;
        let s = self.spec.stride;
        let (oh, ow) = conv_out_hw(h, wd, kh, kw, s);
        let xf = flat(x);
        let wf = flat(w);
        let gf = flat(grad);
        let mut dx = Tensor::zeros(x.raw_dim());
        let mut dw = Tensor::zeros(w.raw_dim());
        let mut db = Tensor::zeros(IxDyn(&[cout]));
        let dxf = dx.as_slice_mut().unwrap();
        let dwf = dw.as_slice_mut().unwrap();
        let dbf = db.as_slice_mut().unwrap();

        for (c, dbe) in dbf.iter_mut().enumerate() {
            let mut acc = 0.0;
            for bb in 0..bn {
                let base = (bb * cout + c) * oh * ow;
                acc += gf[base..base + oh * ow].iter().sum::<f64>();
            }
            *dbe = acc;
        }

        if g == cin && g == cout && cg == 1 {
            for bb in 0..bn {
                for c in 0..cout {
                    let xbase = (bb * cin + c) * h * wd;
                    let gbase = (bb * cout + c) * oh * ow;
                    for u in 0..kh {
                        for v in 0..kw {
                            let wc = wf[(c * kh + u) * kw + v];
                            let mut wacc = 0.0;
                            for i in 0..oh {
                                let src0 = xbase + (i * s + u) * wd + v;
                                let grow = &gf[gbase + i * ow..gbase + (i + 1) * ow];
                                if s == 1 {
                                    let xrow = &xf[src0..src0 + ow];
                                    let drow = &mut dxf[src0..src0 + ow];
                                    for ((&gv, &xv), d) in
                                        grow.iter().zip(xrow).zip(drow.iter_mut())
                                    {
                                        *d += gv * wc;
                                        wacc += gv * xv;
                                    }
                                } else {
                                    for (j, &gv) in grow.iter().enumerate() {
                                        dxf[src0 + j * s] += gv * wc;
                                        wacc += gv * xf[src0 + j * s];
                                    }
                                }
                            }
                            dwf[(c * kh + u) * kw + v] += wacc;
                        }
                    }
                }
            }
            return vec![dx, dw, db];
        }

        let cog = cout / g;
        let ncols = bn * oh * ow;
        for gi in 0..g {
            let col = im2col(&xf, bn, cin, h, wd, gi * cg, cg, kh, kw, s, oh, ow);
            let mut gy = Array2::<f64>::zeros((cog, ncols));
            {
                let gyf = gy.as_slice_mut().unwrap();
                for oc in 0..cog {
                    let c = gi * cog + oc;
                    for bb in 0..bn {
                        let src0 = (bb * cout + c) * oh * ow;
                        let dst0 = oc * ncols + bb * oh * ow;
                        gyf[dst0..dst0 + oh * ow].copy_from_slice(&gf[src0..src0 + oh * ow]);
                    }
                }
            }
            let dwm = gy.dot(&col.t()); // (cog, cg*kh*kw)
            let dwmf = flat2(&dwm);
            for oc in 0..cog {
                let wbase = (gi * cog + oc) * cg * kh * kw;
                let src = &dwmf[oc * cg * kh * kw..(oc + 1) * cg * kh * kw];
                dwf[wbase..wbase + cg * kh * kw].copy_from_slice(src);
            }
            let wm = w
                .slice(ndarray::s![gi * cog..(gi + 1) * cog, .., .., ..])
                .to_owned()
                .into_shape_with_order((cog, cg * kh * kw))
                .unwrap();
            let dcol = wm.t().dot(&gy); // (cg*kh*kw, B*oh*ow)
            let dcf = flat2(&dcol);
            for cl in 0..cg {
                for u in 0..kh {
                    for v in 0..kw {
                        let rbase = ((cl * kh + u) * kw + v) * ncols;
                        for bb in 0..bn {
                            let xbase = (bb * cin + gi * cg + cl) * h * wd;
                            for i in 0..oh {
                                let dst0 = xbase + (i * s + u) * wd + v;
                                let src = &dcf[rbase + (bb * oh + i) * ow
                                    ..rbase + (bb * oh + i + 1) * ow];
                                if s == 1 {
                                    let dst = &mut dxf[dst0..dst0 + ow];
                                    for (d, &sv) in dst.iter_mut().zip(src) {
                                        *d += sv;
                                    }
                                } else {
                                    for (j, &sv) in src.iter().enumerate() {
                                        dxf[dst0 + j * s] += sv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        vec![dx, dw, db]
    }
}

impl Graph {
    /// Replicate (edge-clamp) padding of width `p` on both spatial axes.
    pub fn pad_replicate(&mut self, x: Var, p: usize) -> Var {
        if p == 0 {
            return x;
        }
        let v = pad_replicate_value(self.value(x), p);
        self.push(v, vec![x.0], Box::new(PadReplicateBack { p }))
    }

    /// Valid convolution (no padding). `w`: (C_out, C_in/groups, kh, kw), `b`: (C_out).
    pub fn conv2d_valid(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Var {
        let v = conv2d_forward(self.value(x), self.value(w), self.value(b), spec);
        self.push(v, vec![x.0, w.0, b.0], Box::new(Conv2dBack { spec }))
    }

    /// Convolution with replicate padding of k//2, preserving spatial size at stride 1.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Var {
        let k = self.shape(w)[2];
        let p = k / 2;
        let xp = self.pad_replicate(x, p);
        self.conv2d_valid(xp, w, b, spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::basic::tensor4;
    use ndarray::IxDyn;

    fn naive_conv_valid(x: &Tensor, w: &Tensor, b: &Tensor, s: usize, g: usize) -> Tensor {
        let xs = x.shape();
        let ws = w.shape();
        let (bn, cin) = (xs[0], xs[1]);
        let (cout, cg, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let (oh, ow) = conv_out_hw(xs[2], xs[3], kh, kw, s);
        let cog = cout / g;
        let mut out = Tensor::zeros(IxDyn(&[bn, cout, oh, ow]));
        for bb in 0..bn {
            for oc in 0..cout {
                let gi = oc / cog;
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = b[[oc]];
                        for cl in 0..cg {
                            let ic = gi * (cin / g) + cl;
                            for u in 0..kh {
                                for v in 0..kw {
                                    acc += w[[oc, cl, u, v]] * x[[bb, ic, i * s + u, j * s + v]];
                                }
                            }
                        }
                        out[[bb, oc, i, j]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn dense_matches_naive() {
        let mut rng = crate::params::test_rng(7);
        let x = crate::params::rand_tensor(&mut rng, &[2, 3, 5, 6], 1.0);
        let w = crate::params::rand_tensor(&mut rng, &[4, 3, 3, 3], 1.0);
        let b = crate::params::rand_tensor(&mut rng, &[4], 1.0);
        let spec = ConvSpec { stride: 2, groups: 1 };
        let got = conv2d_forward(&x, &w, &b, spec);
        let want = naive_conv_valid(&x, &w, &b, 2, 1);
        for (a, e) in got.iter().zip(want.iter()) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn grouped_matches_naive() {
        let mut rng = crate::params::test_rng(9);
        let x = crate::params::rand_tensor(&mut rng, &[2, 4, 6, 5], 1.0);
        let w = crate::params::rand_tensor(&mut rng, &[6, 2, 3, 3], 1.0);
        let b = crate::params::rand_tensor(&mut rng, &[6], 1.0);
        let spec = ConvSpec { stride: 1, groups: 2 };
        let got = conv2d_forward(&x, &w, &b, spec);
        let want = naive_conv_valid(&x, &w, &b, 1, 2);
        for (a, e) in got.iter().zip(want.iter()) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn depthwise_matches_naive() {
        let mut rng = crate::params::test_rng(8);
        let x = crate::params::rand_tensor(&mut rng, &[1, 4, 6, 6], 1.0);
        let w = crate::params::rand_tensor(&mut rng, &[4, 1, 3, 3], 1.0);
        let b = crate::params::rand_tensor(&mut rng, &[4], 1.0);
        let spec = ConvSpec { stride: 1, groups: 4 };
        let got = conv2d_forward(&x, &w, &b, spec);
        let want = naive_conv_valid(&x, &w, &b, 1, 4);
        for (a, e) in got.iter().zip(want.iter()) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn strided_depthwise_matches_naive() {
        let mut rng = crate::params::test_rng(10);
        let x = crate::params::rand_tensor(&mut rng, &[2, 3, 7, 7], 1.0);
        let w = crate::params::rand_tensor(&mut rng, &[3, 1, 3, 3], 1.0);
        let b = crate::params::rand_tensor(&mut rng, &[3], 1.0);
        let spec = ConvSpec { stride: 2, groups: 3 };
        let got = conv2d_forward(&x, &w, &b, spec);
        let want = naive_conv_valid(&x, &w, &b, 2, 3);
        for (a, e) in got.iter().zip(want.iter()) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn replicate_pad_keeps_constants() {
        let mut g = Graph::new();
        let x = g.leaf(tensor4([1, 1, 2, 2], &[3.0; 4]));
        let p = g.pad_replicate(x, 2);
        assert!(g.value(p).iter().all(|&v| v == 3.0));
    }
}
