//! Training objective: mean absolute error in the spatial domain plus a
//! weighted mean absolute error between 2-D Fourier spectra, averaged over
//! all pyramid levels.

use crate::graph::{Graph, Var};

#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub lambda_f: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_f: 0.1 }
    }
}

/// Returns (total, spatial term, frequency term). The spectra of the
/// difference are compared directly — valid because the transform is
/// linear — with real and imaginary parts averaged as plain entries.
pub fn restoration_loss(
    g: &mut Graph,
    pred: &[Var],
    target: &[Var],
    cfg: &LossConfig,
) -> (Var, Var, Var) {
    assert_eq!(pred.len(), target.len(), "pyramid level count mismatch");
    assert!(!pred.is_empty());
    assert!(cfg.lambda_f >= 0.0, "negative frequency weight");
    let inv_n = 1.0 / pred.len() as f64;
    let mut ls: Option<Var> = None;
    let mut lf: Option<Var> = None;
    for (&p, &t) in pred.iter().zip(target.iter()) {
        assert_eq!(g.shape(p), g.shape(t), "pyramid level shape mismatch");
        let diff = g.sub(p, t);
        let s = g.mean_abs(diff);
        let spec = g.fft2_pairs(diff);
        let f = g.mean_abs(spec);
        ls = Some(match ls {
            None => s,
            Some(acc) => g.add(acc, s),
        });
        lf = Some(match lf {
            None => f,
            Some(acc) => g.add(acc, f),
        });
    }
    let ls = g.scale(ls.unwrap(), inv_n);
    let lf = g.scale(lf.unwrap(), inv_n);
    let total = g.add_scaled(ls, lf, cfg.lambda_f);
    (total, ls, lf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{rand_tensor, test_rng, ParamStore};

    fn eval(pred: Vec<crate::Tensor>, target: Vec<crate::Tensor>, lambda: f64) -> (f64, f64, f64) {
        let mut g = Graph::new();
        let p: Vec<_> = pred.into_iter().map(|t| g.leaf(t)).collect();
        let t: Vec<_> = target.into_iter().map(|t| g.leaf(t)).collect();
        let (l, ls, lf) = restoration_loss(&mut g, &p, &t, &LossConfig { lambda_f: lambda });
        (g.value(l)[[0]], g.value(ls)[[0]], g.value(lf)[[0]])
    }

    fn random_pyramid(seed: u64) -> Vec<crate::Tensor> {
        let mut rng = test_rng(seed);
        (0..4)
            .map(|i| rand_tensor(&mut rng, &[1, 3, 8 >> i, 8 >> i], 0.5))
            .collect()
    }

    #[test]
    fn identical_pyramids_have_zero_loss() {
        let p = random_pyramid(1);
        let (l, ls, lf) = eval(p.clone(), p, 0.1);
        assert_eq!(l, 0.0);
        assert_eq!(ls, 0.0);
        assert_eq!(lf, 0.0);
    }

    #[test]
    fn zero_weight_reduces_to_spatial_term() {
        let p = random_pyramid(2);
        let t = random_pyramid(3);
        let (l, ls, _) = eval(p, t, 0.0);
        assert_eq!(l, ls);
    }

    #[test]
    fn constant_offset_matches_closed_forms() {
        let t = random_pyramid(4);
        let d = 0.25;
        let p: Vec<_> = t.iter().map(|x| x + d).collect();
        let (_, ls, lf) = eval(p, t, 0.1);
        assert!((ls - d).abs() < 1e-12, "spatial term {ls}");
        // only the DC bin of each channel is nonzero: |d|*H*W summed over
        // B*C channels, averaged over 2*B*C*H*W spectrum entries -> d/2
        assert!((lf - d / 2.0).abs() < 1e-9, "frequency term {lf}");
    }

    #[test]
    fn frequency_term_matches_naive_dft() {
        let t = random_pyramid(5);
        let p = random_pyramid(6);
        let (_, _, lf) = eval(p.clone(), t.clone(), 0.1);
        // naive O(N^2) DFT of the per-level difference, averaged per level
        let mut per_level = 0.0;
        let mut idx = 0;
        for (pt, tt) in p.iter().zip(t.iter()) {
            let (h, w) = (pt.shape()[2], pt.shape()[3]);
            let mut lvl_total = 0.0;
            for c in 0..3 {
                for ku in 0..h {
                    for kv in 0..w {
                        let (mut re, mut im) = (0.0, 0.0);
                        for i in 0..h {
                            for j in 0..w {
                                let ang = -2.0 * std::f64::consts::PI
                                    * (ku as f64 * i as f64 / h as f64
                                        + kv as f64 * j as f64 / w as f64);
                                let d = pt[[0, c, i, j]] - tt[[0, c, i, j]];
                                re += d * ang.cos();
                                im += d * ang.sin();
                            }
                        }
                        lvl_total += re.abs() + im.abs();
                    }
                }
            }
            per_level += lvl_total / (2 * 3 * h * w) as f64;
            idx += 1;
        }
        let want = per_level / idx as f64;
        assert!((lf - want).abs() < 1e-9, "{lf} vs {want}");
    }

    #[test]
    fn shared_offset_leaves_loss_unchanged() {
        let t = random_pyramid(7);
        let p = random_pyramid(8);
        let (l0, _, _) = eval(p.clone(), t.clone(), 0.1);
        let ps: Vec<_> = p.iter().map(|x| x + 0.3).collect();
        let ts: Vec<_> = t.iter().map(|x| x + 0.3).collect();
        let (l1, _, _) = eval(ps, ts, 0.1);
        assert!((l0 - l1).abs() < 1e-12);
    }

    #[test]
    fn loss_is_positive_unless_equal() {
        let t = random_pyramid(9);
        let mut p = t.clone();
        p[0][[0, 0, 0, 0]] += 1e-3;
        let (l, _, _) = eval(p, t, 0.1);
        assert!(l > 0.0);
    }

    #[test]
    fn gradient_wrt_prediction_matches_finite_differences() {
        let mut ps = ParamStore::new();
        let mut rng = test_rng(10);
        ps.insert("pred", rand_tensor(&mut rng, &[1, 3, 6, 6], 0.5));
        let target = rand_tensor(&mut rng, &[1, 3, 6, 6], 0.5);
        let report = crate::gradcheck::check(
            &ps,
            |g, bind| {
                let t = g.leaf(target.clone());
                let (l, _, _) =
                    restoration_loss(g, &[bind.var("pred")], &[t], &LossConfig::default());
                l
            },
            16,
            crate::gradcheck::DEFAULT_FD_STEP,
            crate::gradcheck::DEFAULT_FD_TOL,
        );
        let worst = report.worst().unwrap();
        assert!(report.pass(), "worst: {} {:.3e}", worst.name, worst.max_rel_err);
    }
}
