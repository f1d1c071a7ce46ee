//! Full-reference image quality metrics on (C,H,W) float images in [0,1]:
//! PSNR, SSIM (11x11 Gaussian window), their luma-channel variants, and
//! mean absolute error.

use ndarray::{Array2, ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

pub fn mse(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64
}

/// Peak signal-to-noise ratio in dB; identical inputs give +infinity.
pub fn psnr(a: &ArrayD<f64>, b: &ArrayD<f64>, peak: f64) -> f64 {
    let m = mse(a, b);
    if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / m).log10()
    }
}

pub fn mae(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Limited-range BT.601 luma: Y = (65.481 R + 128.553 G + 24.966 B + 16)/255.
pub fn rgb_to_y(img: &ArrayD<f64>) -> ArrayD<f64> {
    let shape = img.shape();
    assert_eq!(shape.len(), 3);
    assert_eq!(shape[0], 3, "expected an RGB image");
    let (h, w) = (shape[1], shape[2]);
    let mut y = ArrayD::zeros(IxDyn(&[1, h, w]));
    for i in 0..h {
        for j in 0..w {
            y[[0, i, j]] = (65.481 * img[[0, i, j]]
                + 128.553 * img[[1, i, j]]
                + 24.966 * img[[2, i, j]]
                + 16.0)
                / 255.0;
        }
    }
    y
}

fn gaussian_window() -> Array2<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut w = Array2::zeros((SSIM_WINDOW, SSIM_WINDOW));
    let mut sum = 0.0;
    for i in 0..SSIM_WINDOW {
        for j in 0..SSIM_WINDOW {
            let di = i as isize - half;
            let dj = j as isize - half;
            let v = (-((di * di + dj * dj) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[[i, j]] = v;
            sum += v;
        }
    }
    w.mapv_inplace(|v| v / sum);
    w
}

fn ssim_channel(a: &ArrayD<f64>, b: &ArrayD<f64>, c: usize, win: &Array2<f64>) -> f64 {
    let (h, w) = (a.shape()[1], a.shape()[2]);
    let range = 1.0;
    let c1 = (K1 * range) * (K1 * range);
    let c2 = (K2 * range) * (K2 * range);
    let mut acc = 0.0;
    let mut count = 0usize;
    // valid region only: the window must fit entirely inside the image
    for i0 in 0..=h - SSIM_WINDOW {
        for j0 in 0..=w - SSIM_WINDOW {
            let (mut mu_a, mut mu_b) = (0.0, 0.0);
            let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
            for u in 0..SSIM_WINDOW {
                for v in 0..SSIM_WINDOW {
                    let g = win[[u, v]];
                    let x = a[[c, i0 + u, j0 + v]];
                    let y = b[[c, i0 + u, j0 + v]];
                    mu_a += g * x;
                    mu_b += g * y;
                    aa += g * x * x;
                    bb += g * y * y;
                    ab += g * x * y;
                }
            }
            let va = aa - mu_a * mu_a;
            let vb = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2);
            acc += num / den;
            count += 1;
        }
    }
    acc / count as f64
}

/// Mean structural similarity over the valid (fully covered) region,
/// averaged across channels. Inputs are (C,H,W) in [0,1].
pub fn ssim(a: &ArrayD<f64>, b: &ArrayD<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Input(format!(
            "ssim shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let shape = a.shape();
    if shape.len() != 3 {
        return Err(Error::Input("ssim expects a (C,H,W) image".into()));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Input(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let win = gaussian_window();
    let total: f64 = (0..c).map(|ch| ssim_channel(a, b, ch, &win)).sum();
    Ok(total / c as f64)
}

#[derive(Debug, Clone)]
pub struct MetricRow {
    pub image_id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_y: f64,
    pub ssim_y: f64,
    pub mae: f64,
}

impl MetricRow {
    pub const CSV_HEADER: &'static str = "image_id,psnr,ssim,psnr_y,ssim_y,mae";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.4},{:.6},{:.4},{:.6},{:.6}",
            self.image_id, self.psnr, self.ssim, self.psnr_y, self.ssim_y, self.mae
        )
    }
}

/// All metrics for one restored/reference pair of (3,H,W) images.
pub fn evaluate_pair(image_id: &str, pred: &ArrayD<f64>, target: &ArrayD<f64>) -> Result<MetricRow> {
    if pred.shape() != target.shape() {
        return Err(Error::Input(format!(
            "metric shape mismatch: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let py = rgb_to_y(pred);
    let ty = rgb_to_y(target);
    Ok(MetricRow {
        image_id: image_id.to_string(),
        psnr: psnr(pred, target, 1.0),
        ssim: ssim(pred, target)?,
        psnr_y: psnr(&py, &ty, 1.0),
        ssim_y: ssim(&py, &ty)?,
        mae: mae(pred, target),
    })
}
