//! Randomized property tests over the data pipeline, the dynamic low-pass
//! filtering, the metrics, and the learning-rate schedule.

use ndarray::IxDyn;
use proptest::prelude::*;
use restore_lab::data::{
    degrade, gaussian_kernel, generate_clean, pyramid_tensor, step_rng, DegradationMode,
    DegradationSpec,
};
use restore_lab::metrics::{mae, mse, psnr, rgb_to_y, ssim};
use restore_lab::optim::cosine_lr;
use restore_lab::params::{rand_tensor, test_rng};
use restore_lab::{Graph, Tensor};

fn softmax_filters(seed: u64, groups: usize, k: usize) -> Tensor {
    let raw = rand_tensor(&mut test_rng(seed), &[1, groups, k, k], 1.0);
    let mut f = raw.mapv(f64::exp);
    for g in 0..groups {
        let s: f64 = f.slice(ndarray::s![0, g, .., ..]).sum();
        f.slice_mut(ndarray::s![0, g, .., ..]).mapv_inplace(|v| v / s);
    }
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Synthetic clean images and both degradations stay inside [0, 1].
    #[test]
    fn degradations_preserve_unit_range(
        seed in 0u64..1000,
        size in 2usize..5, // x8 pixels
        noise in 0.0f64..0.2,
        mode_rain in any::<bool>(),
    ) {
        let size = size * 8;
        let clean = generate_clean(&mut step_rng(seed, 0), size, size);
        prop_assert!(clean.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let spec = DegradationSpec {
            mode: if mode_rain { DegradationMode::Rain } else { DegradationMode::Blur },
            noise_sigma: noise,
            seed,
            ..Default::default()
        };
        let out = degrade(&clean, &spec, &mut step_rng(seed, 1));
        prop_assert_eq!(out.shape(), clean.shape());
        prop_assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    /// Gaussian kernels are probability kernels with full symmetry.
    #[test]
    fn gaussian_kernels_are_normalized_and_symmetric(
        sigma in 0.1f64..5.0,
        half in 0usize..5,
    ) {
        let k = 2 * half + 1;
        let w = gaussian_kernel(sigma, k);
        let sum: f64 = w.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        for i in 0..k {
            for j in 0..k {
                prop_assert!((w[[i, j]] - w[[k - 1 - i, k - 1 - j]]).abs() < 1e-15);
                prop_assert!((w[[i, j]] - w[[j, i]]).abs() < 1e-15);
            }
        }
    }

    /// Normalized nonnegative filters are non-expansive in the max norm and
    /// preserve constants exactly.
    #[test]
    fn lowpass_is_nonexpansive_and_affine_invariant(
        seed in 0u64..1000,
        k in prop::sample::select(vec![1usize, 3, 5]),
        c in 0.0f64..1.0,
    ) {
        let xt = rand_tensor(&mut test_rng(seed), &[1, 4, 6, 6], 1.0);
        let f = softmax_filters(seed + 1, 2, k);
        let mut g = Graph::new();
        let x = g.leaf(xt.clone());
        let fv = g.leaf(f.clone());
        let y = g.apply_lowpass(x, fv);
        let max_in = xt.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let max_out = g.value(y).iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        prop_assert!(max_out <= max_in + 1e-12);
        // constants are fixed points
        let ct = Tensor::from_elem(IxDyn(&[1, 4, 6, 6]), c);
        let cx = g.leaf(ct);
        let cf = g.leaf(f);
        let cy = g.apply_lowpass(cx, cf);
        prop_assert!(g.value(cy).iter().all(|&v| (v - c).abs() < 1e-12));
    }

    /// Repeated 2x2 averaging preserves the mean at every level.
    #[test]
    fn pyramid_preserves_the_mean(seed in 0u64..1000, size in 1usize..4) {
        let size = size * 8;
        let img = generate_clean(&mut step_rng(seed, 2), size, size);
        let pyr = pyramid_tensor(&img, 4).unwrap();
        let mean0 = img.iter().sum::<f64>() / img.len() as f64;
        for lvl in &pyr {
            let m = lvl.iter().sum::<f64>() / lvl.len() as f64;
            prop_assert!((m - mean0).abs() < 1e-12);
        }
    }

    /// Metric identities: zero error at equality, symmetry, and the exact
    /// PSNR/MSE correspondence.
    #[test]
    fn metric_identities(seed in 0u64..1000, offset in 1e-4f64..0.2) {
        let a = rand_tensor(&mut test_rng(seed), &[3, 16, 16], 0.4).mapv(|v| v.abs().min(1.0));
        prop_assert_eq!(mse(&a, &a), 0.0);
        prop_assert_eq!(mae(&a, &a), 0.0);
        prop_assert!(psnr(&a, &a, 1.0).is_infinite());
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let b = a.mapv(|v| (v + offset).min(1.0));
        prop_assert!((mse(&a, &b) - mse(&b, &a)).abs() < 1e-15);
        let m = mse(&a, &b);
        prop_assert!(m > 0.0);
        prop_assert!((psnr(&a, &b, 1.0) - (-10.0 * (m).log10())).abs() < 1e-9);
        prop_assert!(ssim(&a, &b).unwrap() < 1.0 + 1e-12);
        // luminance conversion is a convex combination of channels
        let y = rgb_to_y(&a.clone().into_dyn());
        let max = a.iter().fold(0.0f64, |acc, &v| acc.max(v));
        prop_assert!(y.iter().all(|&v| v <= max + 1e-12 && v >= 0.0));
    }

    /// The cosine schedule stays inside [end, start] and is monotone.
    #[test]
    fn cosine_schedule_is_bounded_and_monotone(
        total in 1u64..3000,
        start_exp in -5.0f64..-2.0,
        ratio in 1e-4f64..1.0,
    ) {
        let start = 10f64.powf(start_exp);
        let end = start * ratio;
        let mut prev = f64::INFINITY;
        for s in 0..total {
            let lr = cosine_lr(s, total, start, end);
            prop_assert!(lr <= start + 1e-18 && lr >= end - 1e-18);
            prop_assert!(lr <= prev + 1e-18);
            prev = lr;
        }
        prop_assert!((cosine_lr(0, total, start, end) - start).abs() < 1e-15);
    }
}
