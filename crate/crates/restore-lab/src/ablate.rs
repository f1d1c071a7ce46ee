//! Ablation harness: trains a family of small model variants — skip-fusion
//! modes, single vs multi input/output, context branch counts — on one
//! dataset with a shared seed and budget, then scores each on the training
//! pairs. Results are reported, never asserted: at this scale the ordering
//! is dominated by seed noise.

use std::io::Write;

use crate::config::TrainConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_dataset, mean_row};
use crate::model::{LcdNet, ModelConfig, SkipMode};
use crate::params::ParamStore;
use crate::trainer::{train, TrainSetup};

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: String,
    pub final_loss: f64,
    pub psnr: f64,
    pub ssim: f64,
}

fn small_config() -> ModelConfig {
    ModelConfig {
        base_width: 4,
        blocks_per_level: [1, 1, 1, 1],
        msfm_branches: vec![(2, 3)],
        ..Default::default()
    }
}

/// The variant grid: fusion mode axis, input/output axis, and the context
/// branch-count axis (1, 2, 3 branches use kernels {3}, {3,5}, {3,5,7}).
pub fn variants() -> Vec<(String, ModelConfig)> {
    let base = small_config();
    let mut out = Vec::new();
    out.push(("baseline-scam".to_string(), base.clone()));
    for mode in [SkipMode::Sum, SkipMode::Concat] {
        let mut cfg = base.clone();
        cfg.skip_mode = mode;
        out.push((format!("skip-{}", mode.name()), cfg));
    }
    let mut cfg = base.clone();
    cfg.multi_io = false;
    out.push(("single-io".to_string(), cfg));
    for n in [1usize, 3] {
        let mut cfg = base.clone();
        cfg.mssf_branches = n;
        out.push((format!("branches-{n}"), cfg));
    }
    out
}

/// Trains and scores every variant; one table row per variant.
pub fn run_ablation(
    ds: &Dataset,
    steps: u64,
    seed: u64,
    patch: usize,
    log: &mut dyn Write,
) -> Result<Vec<AblationRow>> {
    if steps == 0 {
        return Err(Error::Input("ablation needs at least one step".into()));
    }
    let tc = TrainConfig {
        batch_size: 2,
        steps,
        patch,
        seed,
        log_every: u64::MAX,
        ckpt_every: u64::MAX,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for (name, cfg) in variants() {
        writeln!(log, "variant {name}: training {steps} steps").map_err(|e| Error::io("log", e))?;
        let outcome = train(
            &TrainSetup {
                model_cfg: &cfg,
                train_cfg: &tc,
                dataset: ds,
                out_dir: None,
                resume: None,
                stop_at: None,
            },
            log,
        )?;
        let net = {
            let mut scratch = ParamStore::new();
            LcdNet::init(&mut scratch, seed, &cfg)
        };
        let mean = mean_row(&evaluate_dataset(&net, &outcome.params, ds)?);
        rows.push(AblationRow {
            variant: name,
            final_loss: outcome.final_loss,
            psnr: mean.psnr,
            ssim: mean.ssim,
        });
    }
    Ok(rows)
}

/// Fixed-width text table of the results.
pub fn format_table(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<16} {:>12} {:>10} {:>10}\n",
        "variant", "final_loss", "psnr", "ssim"
    ));
    for r in rows {
        s.push_str(&format!(
            "{:<16} {:>12.6} {:>10.4} {:>10.6}\n",
            r.variant, r.final_loss, r.psnr, r.ssim
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_covers_all_axes() {
        let v = variants();
        assert_eq!(v.len(), 6);
        let names: Vec<_> = v.iter().map(|(n, _)| n.as_str()).collect();
        assert!(names.contains(&"baseline-scam"));
        assert!(names.contains(&"skip-sum"));
        assert!(names.contains(&"skip-concat"));
        assert!(names.contains(&"single-io"));
        assert!(names.contains(&"branches-1"));
        assert!(names.contains(&"branches-3"));
        for (_, cfg) in &v {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn table_has_one_row_per_variant() {
        let rows = vec![
            AblationRow {
                variant: "a".into(),
                final_loss: 0.5,
                psnr: 20.0,
                ssim: 0.8,
            },
            AblationRow {
                variant: "b".into(),
                final_loss: 0.4,
                psnr: 21.0,
                ssim: 0.9,
            },
        ];
        let t = format_table(&rows);
        assert_eq!(t.lines().count(), 3);
        assert!(t.lines().nth(1).unwrap().starts_with('a'));
    }
}
