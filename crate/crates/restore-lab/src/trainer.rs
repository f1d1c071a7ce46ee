//! The training loop: deterministic per-step batches, forward through the
//! pyramid model, the dual spatial/frequency objective, Adam with cosine
//! annealing, machine-parseable logging, and periodic checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::TrainConfig;
use crate::data::{Dataset, PatchSampler};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::loss::{restoration_loss, LossConfig};
use crate::model::{LcdNet, ModelConfig};
use crate::optim::{cosine_lr, Adam, AdamConfig};
use crate::params::ParamStore;

pub struct TrainOutcome {
    pub params: ParamStore,
    pub steps_run: u64,
    pub first_loss: f64,
    pub final_loss: f64,
    pub final_ckpt: Option<PathBuf>,
}

pub struct TrainSetup<'a> {
    pub model_cfg: &'a ModelConfig,
    pub train_cfg: &'a TrainConfig,
    pub dataset: &'a Dataset,
    /// Checkpoint directory; None disables persistence.
    pub out_dir: Option<&'a Path>,
    /// Manifest to resume from.
    pub resume: Option<&'a Path>,
    /// Stop after this step while keeping the full schedule horizon
    /// (simulates an interrupted run; the default runs to `steps`).
    pub stop_at: Option<u64>,
}

fn ckpt_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt_{step:07}.toml"))
}

pub fn train(setup: &TrainSetup, log: &mut dyn Write) -> Result<TrainOutcome> {
    let tc = setup.train_cfg;
    tc.validate()?;
    setup.model_cfg.validate().map_err(Error::Config)?;
    let adam_cfg = AdamConfig {
        beta1: tc.beta1,
        beta2: tc.beta2,
        ..Default::default()
    };

    let (mut params, mut adam, start_step, seed) = match setup.resume {
        Some(path) => {
            let loaded = checkpoint::load(path, adam_cfg)?;
            let adam = loaded.adam.unwrap_or_else(|| Adam::new(adam_cfg));
            (loaded.params, adam, loaded.manifest.step, loaded.manifest.seed)
        }
        None => {
            let mut ps = ParamStore::new();
            let _ = LcdNet::init(&mut ps, tc.seed, setup.model_cfg);
            (ps, Adam::new(adam_cfg), 0, tc.seed)
        }
    };
    // rebuild the network description against the (possibly loaded) store
    let net = {
        let mut scratch = ParamStore::new();
        let net = LcdNet::init(&mut scratch, seed, setup.model_cfg);
        for (name, _) in scratch.iter() {
            if !params.contains(name) {
                return Err(Error::Input(format!("checkpoint missing parameter {name}")));
            }
        }
        net
    };

    let sampler = PatchSampler::new(setup.dataset, tc.patch, tc.flips)?;
    let loss_cfg = LossConfig { lambda_f: tc.lambda_f };
    let levels = if setup.model_cfg.multi_io { 4 } else { 1 };

    if let Some(dir) = setup.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let stop = setup.stop_at.unwrap_or(tc.steps).min(tc.steps);
    let mut first_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    let mut final_ckpt = None;
    for step in start_step..stop {
        let lr = cosine_lr(step, tc.steps, tc.lr_start, tc.lr_end);
        let (inp, tgt, ids) = sampler.batch(seed, step, tc.batch_size);

        let mut g = Graph::new();
        let bind = params.bind(&mut g);
        let x = g.leaf(inp);
        let x_pyr = crate::model::make_pyramid(&mut g, x);
        let outs = net.forward(&mut g, &bind, &x_pyr);
        let t = g.leaf(tgt);
        let t_pyr = crate::model::make_pyramid(&mut g, t);
        let (l, ls, lf) = restoration_loss(&mut g, &outs, &t_pyr[..levels], &loss_cfg);
        let (lv, lsv, lfv) = (g.value(l)[[0]], g.value(ls)[[0]], g.value(lf)[[0]]);
        if !lv.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss {lv} at step {step}; batch: {}",
                ids.join(" ")
            )));
        }
        if first_loss.is_nan() {
            first_loss = lv;
        }
        final_loss = lv;

        let mut grads = g.backward(l);
        let grad_map = bind.collect_grads(&params, &mut grads);
        adam.step(&mut params, &grad_map, lr);

        if step % tc.log_every == 0 || step + 1 == stop {
            writeln!(
                log,
                "step={step} lr={lr:.6e} loss={lv:.6} l_s={lsv:.6} l_f={lfv:.6}"
            )
            .map_err(|e| Error::io("log", e))?;
        }
        if let Some(dir) = setup.out_dir {
            let done = step + 1;
            if done % tc.ckpt_every == 0 || done == stop {
                let path = ckpt_path(dir, done);
                checkpoint::save(&path, &params, Some(&adam), setup.model_cfg, done, seed)?;
                final_ckpt = Some(path);
            }
        }
    }

    Ok(TrainOutcome {
        params,
        steps_run: stop.saturating_sub(start_step),
        first_loss,
        final_loss,
        final_ckpt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{write_dataset, DegradationSpec};

    fn micro_setup(dir: &Path) -> (ModelConfig, TrainConfig) {
        write_dataset(
            dir,
            2,
            16,
            &DegradationSpec {
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let model_cfg = ModelConfig {
            base_width: 4,
            blocks_per_level: [1, 1, 1, 1],
            msfm_branches: vec![(2, 3)],
            ..Default::default()
        };
        let train_cfg = TrainConfig {
            batch_size: 2,
            steps: 4,
            patch: 16,
            seed: 7,
            ckpt_every: 2,
            log_every: 1,
            ..Default::default()
        };
        (model_cfg, train_cfg)
    }

    #[test]
    fn first_step_loss_is_reproducible() {
        let data = tempfile::tempdir().unwrap();
        let (mc, mut tc) = micro_setup(data.path());
        tc.steps = 1;
        let ds = Dataset::load(data.path()).unwrap();
        let run = || {
            let mut log = Vec::new();
            let setup = TrainSetup {
                model_cfg: &mc,
                train_cfg: &tc,
                dataset: &ds,
                out_dir: None,
                resume: None,
                stop_at: None,
            };
            let out = train(&setup, &mut log).unwrap();
            (out.first_loss, String::from_utf8(log).unwrap())
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a.to_bits(), b.to_bits(), "first-step loss not bit-identical");
        assert_eq!(la, lb);
        assert!(la.starts_with("step=0 lr=2.000000e-4"), "log: {la}");
    }

    #[test]
    fn resume_equals_uninterrupted_run() {
        let data = tempfile::tempdir().unwrap();
        let (mc, tc) = micro_setup(data.path());
        let ds = Dataset::load(data.path()).unwrap();

        // uninterrupted 4-step run
        let full_dir = tempfile::tempdir().unwrap();
        let mut log = Vec::new();
        let full = train(
            &TrainSetup {
                model_cfg: &mc,
                train_cfg: &tc,
                dataset: &ds,
                out_dir: Some(full_dir.path()),
                resume: None,
                stop_at: None,
            },
            &mut log,
        )
        .unwrap();

        // interrupt at 2 (same schedule horizon), then resume to 4
        let half_dir = tempfile::tempdir().unwrap();
        train(
            &TrainSetup {
                model_cfg: &mc,
                train_cfg: &tc,
                dataset: &ds,
                out_dir: Some(half_dir.path()),
                resume: None,
                stop_at: Some(2),
            },
            &mut log,
        )
        .unwrap();
        let mid = half_dir.path().join("ckpt_0000002.toml");
        let resumed = train(
            &TrainSetup {
                model_cfg: &mc,
                train_cfg: &tc,
                dataset: &ds,
                out_dir: Some(half_dir.path()),
                resume: Some(&mid),
                stop_at: None,
            },
            &mut log,
        )
        .unwrap();

        assert_eq!(resumed.steps_run, 2);
        for (name, t) in full.params.iter() {
            let r = resumed.params.get(name);
            assert_eq!(r, t, "parameter {name} differs after resume");
        }
        assert_eq!(full.final_loss.to_bits(), resumed.final_loss.to_bits());
    }

    #[test]
    fn checkpoints_are_written_on_schedule() {
        let data = tempfile::tempdir().unwrap();
        let (mc, tc) = micro_setup(data.path());
        let ds = Dataset::load(data.path()).unwrap();
        let out = tempfile::tempdir().unwrap();
        let mut log = Vec::new();
        let res = train(
            &TrainSetup {
                model_cfg: &mc,
                train_cfg: &tc,
                dataset: &ds,
                out_dir: Some(out.path()),
                resume: None,
                stop_at: None,
            },
            &mut log,
        )
        .unwrap();
        assert!(out.path().join("ckpt_0000002.toml").is_file());
        assert!(out.path().join("ckpt_0000004.toml").is_file());
        assert_eq!(res.final_ckpt.unwrap(), out.path().join("ckpt_0000004.toml"));
        let text = String::from_utf8(log).unwrap();
        assert_eq!(text.lines().count(), 4);
        for line in text.lines() {
            assert!(line.starts_with("step="));
            assert!(line.contains(" loss="));
        }
    }
}
