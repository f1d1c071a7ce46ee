//! Power-of-two resizing: 2x2 average pooling down, bilinear up, and
//! depth-to-space rearrangement for learned upsampling.

use ndarray::IxDyn;

use crate::graph::{Backward, Graph, Tensor, Var};
use crate::ops::flat;

struct AvgPool2Back;
impl Backward for AvgPool2Back {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let s = inputs[0].shape();
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        let gf = flat(grad);
        let mut dx = vec![0.0; inputs[0].len()];
        for pl in 0..bn * c {
            let gp = &gf[pl * (h / 2) * (w / 2)..(pl + 1) * (h / 2) * (w / 2)];
            let dp = &mut dx[pl * h * w..(pl + 1) * h * w];
            for i in 0..h {
                let gr = &gp[(i / 2) * (w / 2)..(i / 2 + 1) * (w / 2)];
                let dr = &mut dp[i * w..(i + 1) * w];
                for j in 0..w {
                    dr[j] = gr[j / 2] * 0.25;
                }
            }
        }
        vec![Tensor::from_shape_vec(inputs[0].raw_dim(), dx).unwrap()]
    }
}

/// Source index/weight pairs for bilinear 2x upsampling (align_corners=false).
fn up2_taps(n: usize) -> Vec<(usize, usize, f64)> {
    let mut taps = Vec::with_capacity(2 * n);
    for o in 0..2 * n {
        let src = (o as f64 + 0.5) / 2.0 - 0.5;
        let i0 = src.floor();
        let t = src - i0;
        let a = (i0 as isize).clamp(0, n as isize - 1) as usize;
        let b = (i0 as isize + 1).clamp(0, n as isize - 1) as usize;
        taps.push((a, b, t));
    }
    taps
}

struct BilinearUp2Back;
impl Backward for BilinearUp2Back {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let s = inputs[0].shape();
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        let ry = up2_taps(h);
        let rx = up2_taps(w);
        let gf = flat(grad);
        let mut dx = vec![0.0; inputs[0].len()];
        for pl in 0..bn * c {
            let gp = &gf[pl * 4 * h * w..(pl + 1) * 4 * h * w];
            let dp = &mut dx[pl * h * w..(pl + 1) * h * w];
            for oi in 0..2 * h {
                let (i0, i1, ti) = ry[oi];
                let gr = &gp[oi * 2 * w..(oi + 1) * 2 * w];
                for (oj, &(j0, j1, tj)) in rx.iter().enumerate() {
                    let g = gr[oj];
                    dp[i0 * w + j0] += g * (1.0 - ti) * (1.0 - tj);
                    dp[i0 * w + j1] += g * (1.0 - ti) * tj;
                    dp[i1 * w + j0] += g * ti * (1.0 - tj);
                    dp[i1 * w + j1] += g * ti * tj;
                }
            }
        }
        vec![Tensor::from_shape_vec(inputs[0].raw_dim(), dx).unwrap()]
    }
}

struct PixelShuffle2Back;
impl Backward for PixelShuffle2Back {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        let s = inputs[0].shape();
        let (bn, c4, h, w) = (s[0], s[1], s[2], s[3]);
        let c = c4 / 4;
        let gf = flat(grad);
        let mut dx = vec![0.0; inputs[0].len()];
        for b in 0..bn {
            for ch in 0..c {
                let gp = &gf[(b * c + ch) * 4 * h * w..(b * c + ch + 1) * 4 * h * w];
                for di in 0..2 {
                    for dj in 0..2 {
                        let ic = ch * 4 + di * 2 + dj;
                        let dp = &mut dx[(b * c4 + ic) * h * w..(b * c4 + ic + 1) * h * w];
                        for i in 0..h {
                            let gr = &gp[(2 * i + di) * 2 * w..(2 * i + di + 1) * 2 * w];
                            let dr = &mut dp[i * w..(i + 1) * w];
                            for j in 0..w {
                                dr[j] = gr[2 * j + dj];
                            }
                        }
                    }
                }
            }
        }
        vec![Tensor::from_shape_vec(inputs[0].raw_dim(), dx).unwrap()]
    }
}

impl Graph {
    /// 2x2 average pooling; spatial dims must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2: dims must be even, got {h}x{w}");
        let xv = self.value(x);
        let xf = flat(xv);
        let mut out = vec![0.0; bn * c * (h / 2) * (w / 2)];
        for pl in 0..bn * c {
            let xp = &xf[pl * h * w..(pl + 1) * h * w];
            let op = &mut out[pl * (h / 2) * (w / 2)..(pl + 1) * (h / 2) * (w / 2)];
            for i in 0..h / 2 {
                let r0 = &xp[2 * i * w..(2 * i + 1) * w];
                let r1 = &xp[(2 * i + 1) * w..(2 * i + 2) * w];
                let or = &mut op[i * (w / 2)..(i + 1) * (w / 2)];
                for j in 0..w / 2 {
                    or[j] = 0.25 * (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]);
                }
            }
        }
        drop(xf);
        let out = Tensor::from_shape_vec(IxDyn(&[bn, c, h / 2, w / 2]), out).unwrap();
        self.push(out, vec![x.0], Box::new(AvgPool2Back))
    }

    /// Bilinear 2x upsampling (half-pixel centers, edge clamped).
    pub fn bilinear_up2(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        let ry = up2_taps(h);
        let rx = up2_taps(w);
        let xv = self.value(x);
        let xf = flat(xv);
        let mut out = vec![0.0; bn * c * 4 * h * w];
        for pl in 0..bn * c {
            let xp = &xf[pl * h * w..(pl + 1) * h * w];
            let op = &mut out[pl * 4 * h * w..(pl + 1) * 4 * h * w];
            for oi in 0..2 * h {
                let (i0, i1, ti) = ry[oi];
                let r0 = &xp[i0 * w..(i0 + 1) * w];
                let r1 = &xp[i1 * w..(i1 + 1) * w];
                let or = &mut op[oi * 2 * w..(oi + 1) * 2 * w];
                for (oj, &(j0, j1, tj)) in rx.iter().enumerate() {
                    or[oj] = (1.0 - ti) * ((1.0 - tj) * r0[j0] + tj * r0[j1])
                        + ti * ((1.0 - tj) * r1[j0] + tj * r1[j1]);
                }
            }
        }
        drop(xf);
        let out = Tensor::from_shape_vec(IxDyn(&[bn, c, 2 * h, 2 * w]), out).unwrap();
        self.push(out, vec![x.0], Box::new(BilinearUp2Back))
    }

    /// Depth-to-space with factor 2: (B,4C,H,W) -> (B,C,2H,2W).
    pub fn pixel_shuffle2(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let (bn, c4, h, w) = (s[0], s[1], s[2], s[3]);
        assert!(c4 % 4 == 0, "pixel_shuffle2: channels must be divisible by 4");
        let c = c4 / 4;
        let xv = self.value(x);
        let xf = flat(xv);
        let mut out = vec![0.0; bn * c * 4 * h * w];
        for b in 0..bn {
            for ch in 0..c {
                let op = &mut out[(b * c + ch) * 4 * h * w..(b * c + ch + 1) * 4 * h * w];
                for di in 0..2 {
                    for dj in 0..2 {
                        let ic = ch * 4 + di * 2 + dj;
                        let xp = &xf[(b * c4 + ic) * h * w..(b * c4 + ic + 1) * h * w];
                        for i in 0..h {
                            let xr = &xp[i * w..(i + 1) * w];
                            let or = &mut op[(2 * i + di) * 2 * w..(2 * i + di + 1) * 2 * w];
                            for j in 0..w {
                                or[2 * j + dj] = xr[j];
                            }
                        }
                    }
                }
            }
        }
        drop(xf);
        let out = Tensor::from_shape_vec(IxDyn(&[bn, c, 2 * h, 2 * w]), out).unwrap();
        self.push(out, vec![x.0], Box::new(PixelShuffle2Back))
    }

    /// Resize by a power of two: `steps` > 0 upsamples bilinearly, < 0
    /// average-pools down, 0 is identity.
    pub fn resize_pow2(&mut self, x: Var, steps: i32) -> Var {
        let mut v = x;
        if steps >= 0 {
            for _ in 0..steps {
                v = self.bilinear_up2(v);
            }
        } else {
            for _ in 0..(-steps) {
                v = self.avg_pool2(v);
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::basic::tensor4;

    #[test]
    fn constant_is_fixed_point_of_both_directions() {
        let mut g = Graph::new();
        let x = g.leaf(tensor4([1, 1, 4, 4], &[0.7; 16]));
        let d = g.avg_pool2(x);
        assert!(g.value(d).iter().all(|&v| (v - 0.7).abs() < 1e-12));
        let u = g.bilinear_up2(x);
        assert!(g.value(u).iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn checkerboard_pools_to_half() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..16).map(|i| (((i / 4) + i % 4) % 2) as f64).collect();
        let x = g.leaf(tensor4([1, 1, 4, 4], &data));
        let d = g.avg_pool2(x);
        assert!(g.value(d).iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn up2_matches_scalar_interpolation_oracle() {
        let mut rng = crate::params::test_rng(9);
        let xt = crate::params::rand_tensor(&mut rng, &[1, 1, 3, 4], 1.0);
        let mut g = Graph::new();
        let x = g.leaf(xt.clone());
        let u = g.bilinear_up2(x);
        for oi in 0..6 {
            for oj in 0..8 {
                let sy: f64 = (oi as f64 + 0.5) / 2.0 - 0.5;
                let sx: f64 = (oj as f64 + 0.5) / 2.0 - 0.5;
                let y0 = sy.floor();
                let x0 = sx.floor();
                let ty = sy - y0;
                let tx = sx - x0;
                let yi = |v: f64| (v as isize).clamp(0, 2) as usize;
                let xi = |v: f64| (v as isize).clamp(0, 3) as usize;
                let want = (1.0 - ty)
                    * ((1.0 - tx) * xt[[0, 0, yi(y0), xi(x0)]] + tx * xt[[0, 0, yi(y0), xi(x0 + 1.0)]])
                    + ty * ((1.0 - tx) * xt[[0, 0, yi(y0 + 1.0), xi(x0)]]
                        + tx * xt[[0, 0, yi(y0 + 1.0), xi(x0 + 1.0)]]);
                assert!((g.value(u)[[0, 0, oi, oj]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pixel_shuffle_layout() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..4).map(|v| v as f64).collect();
        let x = g.leaf(tensor4([1, 4, 1, 1], &data));
        let y = g.pixel_shuffle2(x);
        assert_eq!(g.value(y)[[0, 0, 0, 0]], 0.0);
        assert_eq!(g.value(y)[[0, 0, 0, 1]], 1.0);
        assert_eq!(g.value(y)[[0, 0, 1, 0]], 2.0);
        assert_eq!(g.value(y)[[0, 0, 1, 1]], 3.0);
    }
}
