//! Elementwise and shape-bookkeeping ops.

use ndarray::{ArrayD, Axis, IxDyn, Slice};

use crate::graph::{Backward, Graph, Tensor, Var};

struct AddBack;
impl Backward for AddBack {
    fn backward(&self, grad: &Tensor, _inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        vec![grad.clone(), grad.clone()]
    }
}

struct SubBack;
impl Backward for SubBack {
    fn backward(&self, grad: &Tensor, _inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        vec![grad.clone(), -grad]
    }
}

struct MulBack;
impl Backward for MulBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        vec![grad * inputs[1], grad * inputs[0]]
    }
}

struct ScaleBack(f64);
impl Backward for ScaleBack {
    fn backward(&self, grad: &Tensor, _inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        vec![grad * self.0]
    }
}

struct AddScaledBack(f64);
impl Backward for AddScaledBack {
    fn backward(&self, grad: &Tensor, _inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        vec![grad.clone(), grad * self.0]
    }
}

struct ConcatChBack {
    widths: Vec<usize>,
}
impl Backward for ConcatChBack {
    fn backward(&self, grad: &Tensor, _inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(self.widths.len());
        let mut start = 0;
        for &w in &self.widths {
            out.push(
                grad.slice_axis(Axis(1), Slice::from(start..start + w))
                    .to_owned(),
            );
            start += w;
        }
        out
    }
}

struct SliceChBack {
    start: usize,
    full: usize,
}
impl Backward for SliceChBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let mut dx = Tensor::zeros(inputs[0].raw_dim());
        let w = grad.shape()[1];
        debug_assert!(self.start + w <= self.full);
        dx.slice_axis_mut(Axis(1), Slice::from(self.start..self.start + w))
            .assign(grad);
        vec![dx]
    }
}

struct MeanAbsBack;
impl Backward for MeanAbsBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let n = inputs[0].len() as f64;
        let g = grad[[0]] / n;
        vec![inputs[0].mapv(|v| g * v.signum())]
    }
}

struct GapBack;
impl Backward for GapBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let shape = inputs[0].shape();
        let (h, w) = (shape[2], shape[3]);
        let scale = 1.0 / (h * w) as f64;
        let mut dx = Tensor::zeros(inputs[0].raw_dim());
        for b in 0..shape[0] {
            for c in 0..shape[1] {
                let g = grad[[b, c, 0, 0]] * scale;
                dx.slice_mut(ndarray::s![b, c, .., ..]).fill(g);
            }
        }
        vec![dx]
    }
}

struct BroadcastMulBack;
impl Backward for BroadcastMulBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let x = inputs[0];
        let s = inputs[1];
        let shape = x.shape();
        let mut dx = Tensor::zeros(x.raw_dim());
        let mut ds = Tensor::zeros(s.raw_dim());
        for b in 0..shape[0] {
            for c in 0..shape[1] {
                let sv = s[[b, c, 0, 0]];
                let mut acc = 0.0;
                for i in 0..shape[2] {
                    for j in 0..shape[3] {
                        let g = grad[[b, c, i, j]];
                        dx[[b, c, i, j]] = g * sv;
                        acc += g * x[[b, c, i, j]];
                    }
                }
                ds[[b, c, 0, 0]] = acc;
            }
        }
        vec![dx, ds]
    }
}

struct ChannelScaleBack;
impl Backward for ChannelScaleBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let x = inputs[0];
        let s = inputs[1];
        let shape = x.shape();
        let mut dx = Tensor::zeros(x.raw_dim());
        let mut ds = Tensor::zeros(s.raw_dim());
        for b in 0..shape[0] {
            for c in 0..shape[1] {
                let sv = s[[c]];
                let mut acc = 0.0;
                for i in 0..shape[2] {
                    for j in 0..shape[3] {
                        let g = grad[[b, c, i, j]];
                        dx[[b, c, i, j]] = g * sv;
                        acc += g * x[[b, c, i, j]];
                    }
                }
                ds[[c]] += acc;
            }
        }
        vec![dx, ds]
    }
}

struct ChannelBiasBack;
impl Backward for ChannelBiasBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let shape = grad.shape();
        let mut db = Tensor::zeros(inputs[1].raw_dim());
        for b in 0..shape[0] {
            for c in 0..shape[1] {
                let mut acc = 0.0;
                for i in 0..shape[2] {
                    for j in 0..shape[3] {
                        acc += grad[[b, c, i, j]];
                    }
                }
                db[[c]] += acc;
            }
        }
        vec![grad.clone(), db]
    }
}

struct ReshapeBack;
impl Backward for ReshapeBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let dx = grad
            .to_owned()
            .into_shape_with_order(inputs[0].raw_dim())
            .expect("reshape backward: size mismatch");
        vec![dx]
    }
}

/// (B,C,H,W) -> (B,1,H*W,C): spatial positions become token rows.
struct ToTokensBack;
impl Backward for ToTokensBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let shape = inputs[0].shape();
        let (bn, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let mut dx = Tensor::zeros(inputs[0].raw_dim());
        for b in 0..bn {
            for i in 0..h {
                for j in 0..w {
                    let t = i * w + j;
                    for ch in 0..c {
                        dx[[b, ch, i, j]] = grad[[b, 0, t, ch]];
                    }
                }
            }
        }
        vec![dx]
    }
}

/// (B,1,H*W,C) -> (B,C,H,W).
struct FromTokensBack;
impl Backward for FromTokensBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let shape = grad.shape();
        let (bn, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let mut dt = Tensor::zeros(inputs[0].raw_dim());
        for b in 0..bn {
            for i in 0..h {
                for j in 0..w {
                    let t = i * w + j;
                    for ch in 0..c {
                        dt[[b, 0, t, ch]] = grad[[b, ch, i, j]];
                    }
                }
            }
        }
        vec![dt]
    }
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let v = self.value(a) + self.value(b);
        self.push(v, vec![a.0, b.0], Box::new(AddBack))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let v = self.value(a) - self.value(b);
        self.push(v, vec![a.0, b.0], Box::new(SubBack))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(v, vec![a.0, b.0], Box::new(MulBack))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, vec![a.0], Box::new(ScaleBack(c)))
    }

    /// `a + c * b`
    pub fn add_scaled(&mut self, a: Var, b: Var, c: f64) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add_scaled: shape mismatch");
        let v = self.value(a) + &(self.value(b) * c);
        self.push(v, vec![a.0, b.0], Box::new(AddScaledBack(c)))
    }

    /// Channel-axis concatenation of 4-D feature maps.
    pub fn concat_ch(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let views: Vec<_> = xs.iter().map(|&x| self.value(x).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_ch: shape mismatch");
        let widths = xs.iter().map(|&x| self.shape(x)[1]).collect();
        let parents = xs.iter().map(|x| x.0).collect();
        self.push(v, parents, Box::new(ConcatChBack { widths }))
    }

    /// Channels `[start, start+width)` of a 4-D feature map.
    pub fn slice_ch(&mut self, x: Var, start: usize, width: usize) -> Var {
        let full = self.shape(x)[1];
        assert!(start + width <= full, "slice_ch: out of range");
        let v = self
            .value(x)
            .slice_axis(Axis(1), Slice::from(start..start + width))
            .to_owned();
        self.push(v, vec![x.0], Box::new(SliceChBack { start, full }))
    }

    /// Mean of |x| over every element; returns a length-1 tensor.
    pub fn mean_abs(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s: f64 = self.value(x).iter().map(|v| v.abs()).sum();
        let v = Tensor::from_elem(IxDyn(&[1]), s / n);
        self.push(v, vec![x.0], Box::new(MeanAbsBack))
    }

    /// Global average pool (B,C,H,W) -> (B,C,1,1).
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let (bn, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let mut v = Tensor::zeros(IxDyn(&[bn, c, 1, 1]));
        let xv = self.value(x);
        for b in 0..bn {
            for ch in 0..c {
                let s: f64 = xv.slice(ndarray::s![b, ch, .., ..]).sum();
                v[[b, ch, 0, 0]] = s / (h * w) as f64;
            }
        }
        self.push(v, vec![x.0], Box::new(GapBack))
    }

    /// x (B,C,H,W) * s (B,C,1,1), broadcast over spatial dims.
    pub fn broadcast_mul(&mut self, x: Var, s: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(self.shape(s), &[xs[0], xs[1], 1, 1], "broadcast_mul shapes");
        let mut v = self.value(x).clone();
        let sv = self.value(s);
        for b in 0..xs[0] {
            for c in 0..xs[1] {
                let f = sv[[b, c, 0, 0]];
                v.slice_mut(ndarray::s![b, c, .., ..]).mapv_inplace(|e| e * f);
            }
        }
        self.push(v, vec![x.0, s.0], Box::new(BroadcastMulBack))
    }

    /// x (B,C,H,W) * s (C), broadcast per channel.
    pub fn channel_scale(&mut self, x: Var, s: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(self.shape(s), &[xs[1]], "channel_scale shapes");
        let mut v = self.value(x).clone();
        let sv = self.value(s);
        for b in 0..xs[0] {
            for c in 0..xs[1] {
                let f = sv[[c]];
                v.slice_mut(ndarray::s![b, c, .., ..]).mapv_inplace(|e| e * f);
            }
        }
        self.push(v, vec![x.0, s.0], Box::new(ChannelScaleBack))
    }

    /// x (B,C,H,W) + b (C), broadcast per channel.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(self.shape(bias), &[xs[1]], "channel_bias shapes");
        let mut v = self.value(x).clone();
        let bv = self.value(bias);
        for b in 0..xs[0] {
            for c in 0..xs[1] {
                let f = bv[[c]];
                v.slice_mut(ndarray::s![b, c, .., ..]).mapv_inplace(|e| e + f);
            }
        }
        self.push(v, vec![x.0, bias.0], Box::new(ChannelBiasBack))
    }

    /// Contiguous reshape; element order preserved.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self
            .value(x)
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: size mismatch");
        self.push(v, vec![x.0], Box::new(ReshapeBack))
    }

    /// (B,C,H,W) -> (B,1,H*W,C): rows are spatial tokens.
    pub fn to_tokens(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        let mut v = Tensor::zeros(IxDyn(&[bn, 1, h * w, c]));
        let xv = self.value(x);
        for b in 0..bn {
            for i in 0..h {
                for j in 0..w {
                    let t = i * w + j;
                    for ch in 0..c {
                        v[[b, 0, t, ch]] = xv[[b, ch, i, j]];
                    }
                }
            }
        }
        self.push(v, vec![x.0], Box::new(ToTokensBack))
    }

    /// (B,1,H*W,C) -> (B,C,H,W).
    pub fn from_tokens(&mut self, x: Var, h: usize, w: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s[1], 1);
        assert_eq!(s[2], h * w, "from_tokens: token count mismatch");
        let (bn, c) = (s[0], s[3]);
        let mut v = Tensor::zeros(IxDyn(&[bn, c, h, w]));
        let xv = self.value(x);
        for b in 0..bn {
            for i in 0..h {
                for j in 0..w {
                    let t = i * w + j;
                    for ch in 0..c {
                        v[[b, ch, i, j]] = xv[[b, 0, t, ch]];
                    }
                }
            }
        }
        self.push(v, vec![x.0], Box::new(FromTokensBack))
    }
}

/// Builds a 4-D tensor from a flat slice, row-major.
pub fn tensor4(shape: [usize; 4], data: &[f64]) -> Tensor {
    ArrayD::from_shape_vec(IxDyn(&shape), data.to_vec()).expect("tensor4: size mismatch")
}
