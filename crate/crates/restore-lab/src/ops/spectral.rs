//! 2-D Fourier transforms carried as stacked real/imaginary channel pairs.
//!
//! `fft2_pairs` maps (B,C,H,W) real features to (B,2C,H,W): the first C
//! channels hold the real part of the unnormalized 2-D FFT, the next C the
//! imaginary part. `ifft2_pairs_real` inverts (normalized by H*W) and keeps
//! the real part. Both are linear, so their backward passes are FFTs too.

use ndarray::{Array2, IxDyn};
use num_complex::Complex;
use rustfft::FftPlanner;

use crate::graph::{Backward, Graph, Tensor, Var};

/// In-place 2-D FFT on an (H,W) complex matrix. Unnormalized in both
/// directions; callers divide by H*W for the inverse.
pub fn fft2_inplace(m: &mut Array2<Complex<f64>>, inverse: bool) {
    let (h, w) = m.dim();
    let mut planner = FftPlanner::new();
    let dir = if inverse {
        rustfft::FftDirection::Inverse
    } else {
        rustfft::FftDirection::Forward
    };
    let row_fft = planner.plan_fft(w, dir);
    for mut row in m.rows_mut() {
        let slice = row.as_slice_mut().expect("contiguous row");
        row_fft.process(slice);
    }
    let col_fft = planner.plan_fft(h, dir);
    let mut scratch = vec![Complex::default(); h];
    for j in 0..w {
        for i in 0..h {
            scratch[i] = m[[i, j]];
        }
        col_fft.process(&mut scratch);
        for i in 0..h {
            m[[i, j]] = scratch[i];
        }
    }
}

/// Forward 2-D FFT of each (b,c) plane of a real tensor, as complex matrices.
fn fft_planes(x: &Tensor, inverse: bool) -> Vec<Array2<Complex<f64>>> {
    let s = x.shape();
    let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = Vec::with_capacity(bn * c);
    for b in 0..bn {
        for ch in 0..c {
            let mut m = Array2::<Complex<f64>>::zeros((h, w));
            for i in 0..h {
                for j in 0..w {
                    m[[i, j]] = Complex::new(x[[b, ch, i, j]], 0.0);
                }
            }
            fft2_inplace(&mut m, inverse);
            out.push(m);
        }
    }
    out
}

fn pairs_from_planes(planes: &[Array2<Complex<f64>>], bn: usize, c: usize, scale: f64) -> Tensor {
    let (h, w) = planes[0].dim();
    let mut out = Tensor::zeros(IxDyn(&[bn, 2 * c, h, w]));
    for b in 0..bn {
        for ch in 0..c {
            let m = &planes[b * c + ch];
            for i in 0..h {
                for j in 0..w {
                    out[[b, ch, i, j]] = m[[i, j]].re * scale;
                    out[[b, c + ch, i, j]] = m[[i, j]].im * scale;
                }
            }
        }
    }
    out
}

/// Complex planes from a (B,2C,H,W) pairs tensor.
fn planes_from_pairs(z: &Tensor) -> Vec<Array2<Complex<f64>>> {
    let s = z.shape();
    let (bn, c2, h, w) = (s[0], s[1], s[2], s[3]);
    let c = c2 / 2;
    let mut out = Vec::with_capacity(bn * c);
    for b in 0..bn {
        for ch in 0..c {
            let mut m = Array2::<Complex<f64>>::zeros((h, w));
            for i in 0..h {
                for j in 0..w {
                    m[[i, j]] = Complex::new(z[[b, ch, i, j]], z[[b, c + ch, i, j]]);
                }
            }
            out.push(m);
        }
    }
    out
}

struct Fft2PairsBack;
impl Backward for Fft2PairsBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        // Adjoint of [Re(Fx); Im(Fx)] with F the unnormalized DFT:
        // dx = Re(unnormalized inverse DFT of (gRe + i gIm)).
        let s = inputs[0].shape();
        let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
        let mut planes = planes_from_pairs(grad);
        let mut dx = Tensor::zeros(inputs[0].raw_dim());
        for b in 0..bn {
            for ch in 0..c {
                let m = &mut planes[b * c + ch];
                fft2_inplace(m, true);
                for i in 0..h {
                    for j in 0..w {
                        dx[[b, ch, i, j]] = m[[i, j]].re;
                    }
                }
            }
        }
        vec![dx]
    }
}

struct Ifft2PairsRealBack;
impl Backward for Ifft2PairsRealBack {
    fn backward(&self, grad: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Vec<Tensor> {
        // y = Re(IDFT(z))/N; adjoint: dzRe = Re(DFT(g))/N, dzIm = Im(DFT(g))/N.
        let s = inputs[0].shape();
        let (bn, c2, h, w) = (s[0], s[1], s[2], s[3]);
        let c = c2 / 2;
        let n = (h * w) as f64;
        let planes = fft_planes(grad, false);
        let mut dz = Tensor::zeros(inputs[0].raw_dim());
        for b in 0..bn {
            for ch in 0..c {
                let m = &planes[b * c + ch];
                for i in 0..h {
                    for j in 0..w {
                        dz[[b, ch, i, j]] = m[[i, j]].re / n;
                        dz[[b, c + ch, i, j]] = m[[i, j]].im / n;
                    }
                }
            }
        }
        vec![dz]
    }
}

impl Graph {
    /// Real (B,C,H,W) -> spectrum pairs (B,2C,H,W), unnormalized forward FFT.
    pub fn fft2_pairs(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let planes = fft_planes(self.value(x), false);
        let v = pairs_from_planes(&planes, s[0], s[1], 1.0);
        self.push(v, vec![x.0], Box::new(Fft2PairsBack))
    }

    /// Spectrum pairs (B,2C,H,W) -> real part of the normalized inverse FFT.
    pub fn ifft2_pairs_real(&mut self, z: Var) -> Var {
        let s = self.shape(z).to_vec();
        assert!(s[1].is_multiple_of(2), "ifft2_pairs_real: channel count must be even");
        let (bn, c, h, w) = (s[0], s[1] / 2, s[2], s[3]);
        let n = (h * w) as f64;
        let mut planes = planes_from_pairs(self.value(z));
        let mut v = Tensor::zeros(IxDyn(&[bn, c, h, w]));
        for b in 0..bn {
            for ch in 0..c {
                let m = &mut planes[b * c + ch];
                fft2_inplace(m, true);
                for i in 0..h {
                    for j in 0..w {
                        v[[b, ch, i, j]] = m[[i, j]].re / n;
                    }
                }
            }
        }
        self.push(v, vec![z.0], Box::new(Ifft2PairsRealBack))
    }
}
