//! Full-resolution inference on single images.
//!
//! The network needs spatial dimensions divisible by 8 (three stride-2
//! stages); arbitrary images are reflect-padded up to the next multiple,
//! restored, and cropped back, so output dimensions always equal input
//! dimensions. Only the full-resolution pyramid output is kept — the
//! low-resolution outputs exist for training supervision only.

use ndarray::IxDyn;

use crate::error::{Error, Result};
use crate::graph::{Graph, Tensor};
use crate::model::{make_pyramid, LcdNet};
use crate::params::ParamStore;

/// Spatial divisibility the network requires.
pub const SIZE_MULTIPLE: usize = 8;

fn mirror(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        // reflect about the last sample; clamp covers pathologically small n
        (2 * n).saturating_sub(i + 2).min(n - 1)
    }
}

/// Reflect-pads a (C,H,W) image on the bottom/right to the target size.
pub fn pad_reflect(img: &Tensor, th: usize, tw: usize) -> Tensor {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    assert!(th >= h && tw >= w, "target smaller than image");
    let mut out = Tensor::zeros(IxDyn(&[c, th, tw]));
    for ch in 0..c {
        for i in 0..th {
            for j in 0..tw {
                out[[ch, i, j]] = img[[ch, mirror(i, h), mirror(j, w)]];
            }
        }
    }
    out
}

fn next_multiple(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Restores one (3,H,W) image at full resolution.
pub fn restore(net: &LcdNet, params: &ParamStore, img: &Tensor) -> Result<Tensor> {
    if img.ndim() != 3 || img.shape()[0] != 3 {
        return Err(Error::Input(format!(
            "expected a (3,H,W) image, got {:?}",
            img.shape()
        )));
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let (ph, pw) = (next_multiple(h, SIZE_MULTIPLE), next_multiple(w, SIZE_MULTIPLE));
    let padded = pad_reflect(img, ph, pw);
    let batched = padded
        .into_shape_with_order(IxDyn(&[1, 3, ph, pw]))
        .expect("contiguous reshape");

    let mut g = Graph::new();
    let bind = params.bind(&mut g);
    let x = g.leaf(batched);
    let pyr = make_pyramid(&mut g, x);
    let outs = net.forward(&mut g, &bind, &pyr);
    let full = g.value(outs[0]);
    if full.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite values in restored image".into()));
    }

    let mut out = Tensor::zeros(IxDyn(&[3, h, w]));
    for c in 0..3 {
        for i in 0..h {
            for j in 0..w {
                out[[c, i, j]] = full[[0, c, i, j]];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::params::{rand_tensor, test_rng};

    fn micro_net() -> (ParamStore, LcdNet) {
        let cfg = ModelConfig {
            base_width: 4,
            blocks_per_level: [1, 1, 1, 1],
            msfm_branches: vec![(2, 3)],
            ..Default::default()
        };
        let mut ps = ParamStore::new();
        let net = LcdNet::init(&mut ps, 5, &cfg);
        (ps, net)
    }

    #[test]
    fn pad_reflect_mirrors_interior_samples() {
        let mut img = Tensor::zeros(IxDyn(&[1, 3, 4]));
        for j in 0..4 {
            img[[0, 2, j]] = j as f64;
        }
        let p = pad_reflect(&img, 5, 6);
        // rows: reflection of row index 2 about the last row (2) is row 0
        assert_eq!(p[[0, 3, 1]], img[[0, 1, 1]]);
        assert_eq!(p[[0, 4, 1]], img[[0, 0, 1]]);
        // cols: [0 1 2 3 | 2 1]
        assert_eq!(p[[0, 2, 4]], 2.0);
        assert_eq!(p[[0, 2, 5]], 1.0);
    }

    #[test]
    fn output_dimensions_equal_input_dimensions() {
        let (ps, net) = micro_net();
        let img = rand_tensor(&mut test_rng(1), &[3, 11, 13], 0.3).mapv(f64::abs);
        let out = restore(&net, &ps, &img).unwrap();
        assert_eq!(out.shape(), &[3, 11, 13]);
    }

    #[test]
    fn zero_heads_round_trip_divisible_images_exactly() {
        let (mut ps, net) = micro_net();
        for l in 0..4 {
            ps.zero_matching(&format!("head{l}"));
        }
        let img = rand_tensor(&mut test_rng(2), &[3, 8, 16], 0.3).mapv(f64::abs);
        let out = restore(&net, &ps, &img).unwrap();
        for (a, b) in out.iter().zip(img.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn non_rgb_input_is_rejected() {
        let (ps, net) = micro_net();
        let img = Tensor::zeros(IxDyn(&[1, 8, 8]));
        assert!(restore(&net, &ps, &img).is_err());
    }
}
