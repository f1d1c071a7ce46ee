//! Scaled dot-product attention and softmax.
//!
//! The attention op works on (B, heads, rows, dim) tensors and computes
//! softmax(Q K^T / scale) V per (batch, head) slice. Attention matrices are
//! produced block-by-block and recomputed in backward rather than stored, so
//! memory stays bounded even for large token counts.

use ndarray::{Array2, ArrayView2, IxDyn};

use crate::graph::{Backward, Graph, Tensor, Var};

/// Max elements of one attention-score block (rows_per_block * N).
const BLOCK_ELEMS: usize = 1 << 21;

struct SoftmaxLastBack;
impl Backward for SoftmaxLastBack {
    fn backward(&self, grad: &Tensor, _inputs: &[&Tensor], out: &Tensor) -> Vec<Tensor> {
        let n = out.shape()[out.ndim() - 1];
        let rows = out.len() / n;
        let p = out.view().into_shape_with_order((rows, n)).unwrap();
        let g = grad.view().into_shape_with_order((rows, n)).unwrap();
        let mut dz = Array2::<f64>::zeros((rows, n));
        for r in 0..rows {
            let mut dot = 0.0;
            for c in 0..n {
                dot += g[[r, c]] * p[[r, c]];
            }
            for c in 0..n {
                dz[[r, c]] = p[[r, c]] * (g[[r, c]] - dot);
            }
        }
        vec![dz.into_shape_with_order(out.raw_dim()).unwrap().into_dyn()]
    }
}

fn softmax_rows_inplace(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn rows_per_block(n: usize) -> usize {
    (BLOCK_ELEMS / n.max(1)).max(1)
}

/// Forward attention for one (batch, head) slice.
fn attn_slice(q: ArrayView2<f64>, k: ArrayView2<f64>, v: ArrayView2<f64>, scale: f64) -> Array2<f64> {
    let (m, _d) = q.dim();
    let e = v.dim().1;
    let mut out = Array2::<f64>::zeros((m, e));
    let blk = rows_per_block(k.dim().0);
    let mut r0 = 0;
    while r0 < m {
        let r1 = (r0 + blk).min(m);
        let qb = q.slice(ndarray::s![r0..r1, ..]);
        let mut s = qb.dot(&k.t());
        s.mapv_inplace(|x| x / scale);
        softmax_rows_inplace(&mut s);
        let ob = s.dot(&v);
        out.slice_mut(ndarray::s![r0..r1, ..]).assign(&ob);
        r0 = r1;
    }
    out
}

struct AttentionBack {
    scale: f64,
}

impl Backward for AttentionBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
        let qs = q.shape();
        let (bn, hn, m, _d) = (qs[0], qs[1], qs[2], qs[3]);
        let n = k.shape()[2];
        let e = v.shape()[3];
        let mut dq = Tensor::zeros(q.raw_dim());
        let mut dk = Tensor::zeros(k.raw_dim());
        let mut dv = Tensor::zeros(v.raw_dim());
        let inv = 1.0 / self.scale;
        for b in 0..bn {
            for h in 0..hn {
                let qm: ArrayView2<f64> = q
                    .slice(ndarray::s![b, h, .., ..])
                    .into_dimensionality()
                    .unwrap();
                let km: ArrayView2<f64> = k
                    .slice(ndarray::s![b, h, .., ..])
                    .into_dimensionality()
                    .unwrap();
                let vm: ArrayView2<f64> = v
                    .slice(ndarray::s![b, h, .., ..])
                    .into_dimensionality()
                    .unwrap();
                let gm: ArrayView2<f64> = grad
                    .slice(ndarray::s![b, h, .., ..])
                    .into_dimensionality()
                    .unwrap();
                let mut dkm = Array2::<f64>::zeros((n, km.dim().1));
                let mut dvm = Array2::<f64>::zeros((n, e));
                let blk = rows_per_block(n);
                let mut r0 = 0;
                while r0 < m {
                    let r1 = (r0 + blk).min(m);
                    let qb = qm.slice(ndarray::s![r0..r1, ..]);
                    let gb = gm.slice(ndarray::s![r0..r1, ..]);
                    // recompute the softmax block
                    let mut a = qb.dot(&km.t());
                    a.mapv_inplace(|x| x * inv);
                    softmax_rows_inplace(&mut a);
                    let da = gb.dot(&vm.t());
                    // dS = A (dA - rowsum(dA .* A))
                    let mut ds = da;
                    for r in 0..r1 - r0 {
                        let mut dot = 0.0;
                        for c in 0..n {
                            dot += ds[[r, c]] * a[[r, c]];
                        }
                        for c in 0..n {
                            ds[[r, c]] = a[[r, c]] * (ds[[r, c]] - dot) * inv;
                        }
                    }
                    let dqb = ds.dot(&km);
                    dq.slice_mut(ndarray::s![b, h, r0..r1, ..])
                        .assign(&dqb);
                    dkm += &ds.t().dot(&qb);
                    dvm += &a.t().dot(&gb);
                    r0 = r1;
                }
                dk.slice_mut(ndarray::s![b, h, .., ..]).assign(&dkm);
                dv.slice_mut(ndarray::s![b, h, .., ..]).assign(&dvm);
            }
        }
        vec![dq, dk, dv]
    }
}

impl Graph {
    /// Softmax over the last axis of any tensor.
    pub fn softmax_lastdim(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let n = shape[shape.len() - 1];
        let rows = self.value(x).len() / n;
        let mut m = self
            .value(x)
            .to_owned()
            .into_shape_with_order((rows, n))
            .unwrap();
        softmax_rows_inplace(&mut m);
        let v = m.into_shape_with_order(IxDyn(&shape)).unwrap();
        self.push(v, vec![x.0], Box::new(SoftmaxLastBack))
    }

    /// softmax(Q K^T / scale) V over (B, heads, rows, dim) tensors.
    /// Q: (B,h,M,D), K: (B,h,N,D), V: (B,h,N,E) -> (B,h,M,E).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, scale: f64) -> Var {
        let qs = self.shape(q).to_vec();
        let ks = self.shape(k).to_vec();
        let vs = self.shape(v).to_vec();
        assert_eq!(qs[3], ks[3], "attention: Q/K dim mismatch");
        assert_eq!(ks[2], vs[2], "attention: K/V row mismatch");
        assert!(scale > 0.0, "attention: scale must be positive");
        let (bn, hn, m, e) = (qs[0], qs[1], qs[2], vs[3]);
        let mut out = Tensor::zeros(IxDyn(&[bn, hn, m, e]));
        for b in 0..bn {
            for h in 0..hn {
                let qm = self.value(q).slice(ndarray::s![b, h, .., ..]);
                let km = self.value(k).slice(ndarray::s![b, h, .., ..]);
                let vm = self.value(v).slice(ndarray::s![b, h, .., ..]);
                let o = attn_slice(
                    qm.into_dimensionality().unwrap(),
                    km.into_dimensionality().unwrap(),
                    vm.into_dimensionality().unwrap(),
                    scale,
                );
                out.slice_mut(ndarray::s![b, h, .., ..]).assign(&o);
            }
        }
        self.push(out, vec![q.0, k.0, v.0], Box::new(AttentionBack { scale }))
    }
}

/// Attention weight matrix softmax(Q K^T / scale) for one (batch, head)
/// slice. Test/inspection helper; not part of the autodiff path.
pub fn attention_weights(q: ArrayView2<f64>, k: ArrayView2<f64>, scale: f64) -> Array2<f64> {
    let mut s = q.dot(&k.t());
    s.mapv_inplace(|x| x / scale);
    softmax_rows_inplace(&mut s);
    s
}
