//! Adam with bias correction and the cosine learning-rate schedule.

use indexmap::IndexMap;
use ndarray::ArrayD;

use crate::graph::Tensor;
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    pub cfg: AdamConfig,
    /// Number of optimizer steps taken so far.
    pub t: u64,
    pub m: IndexMap<String, Tensor>,
    pub v: IndexMap<String, Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &IndexMap<String, Tensor>, lr: f64) {
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (name, grad) in grads {
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            let p = params.get_mut(name);
            for ((pe, ge), (me, ve)) in p
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *me = b1 * *me + (1.0 - b1) * ge;
                *ve = b2 * *ve + (1.0 - b2) * ge * ge;
                let mh = *me / bc1;
                let vh = *ve / bc2;
                *pe -= lr * mh / (vh.sqrt() + self.cfg.eps);
            }
        }
    }
}

/// Cosine annealing from `start` at step 0 to `end` at step `total - 1`.
pub fn cosine_lr(step: u64, total: u64, start: f64, end: f64) -> f64 {
    assert!(total >= 1);
    assert!(end <= start);
    if total == 1 {
        return start;
    }
    let progress = step.min(total - 1) as f64 / (total - 1) as f64;
    end + 0.5 * (start - end) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn schedule_hits_both_endpoints() {
        let total = 1000;
        assert!((cosine_lr(0, total, 2e-4, 1e-7) - 2e-4).abs() < 1e-12);
        assert!((cosine_lr(total - 1, total, 2e-4, 1e-7) - 1e-7).abs() < 1e-9);
    }

    #[test]
    fn schedule_is_monotone_nonincreasing() {
        let total = 500;
        let mut last = f64::INFINITY;
        for s in 0..total {
            let lr = cosine_lr(s, total, 2e-4, 1e-7);
            assert!(lr <= last + 1e-18);
            assert!((1e-7 - 1e-18..=2e-4 + 1e-18).contains(&lr));
            last = lr;
        }
    }

    #[test]
    fn first_step_matches_closed_form() {
        // with zero state, one Adam step moves by exactly lr/(1+eps')
        let mut ps = ParamStore::new();
        ps.insert("w", ArrayD::from_elem(IxDyn(&[1]), 1.0));
        let mut grads = IndexMap::new();
        grads.insert("w".to_string(), ArrayD::from_elem(IxDyn(&[1]), 0.5));
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut ps, &grads, 1e-2);
        // m_hat = g, v_hat = g^2 -> update = lr * g/(|g| + eps)
        let want = 1.0 - 1e-2 * 0.5 / (0.5 + 1e-8);
        assert!((ps.get("w")[[0]] - want).abs() < 1e-12);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut ps = ParamStore::new();
        ps.insert("w", ArrayD::from_elem(IxDyn(&[2]), 3.0));
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..4000 {
            let w = ps.get("w").clone();
            let mut grads = IndexMap::new();
            grads.insert("w".to_string(), w.mapv(|x| 2.0 * (x - 1.0)));
            opt.step(&mut ps, &grads, 1e-2);
        }
        for &x in ps.get("w").iter() {
            assert!((x - 1.0).abs() < 1e-3, "did not converge: {x}");
        }
    }
}
