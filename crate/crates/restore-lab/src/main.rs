//! Command-line interface: dataset synthesis, training, evaluation,
//! single-image inference, gradient verification, and the ablation harness.
//!
//! Exit codes: 0 success, 2 input error, 3 configuration error, 4 numeric
//! error, 5 io error. `RESTORE_LAB_THREADS` caps worker parallelism.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use restore_lab::ablate::{format_table, run_ablation};
use restore_lab::checkpoint;
use restore_lab::config::Config;
use restore_lab::data::{load_png, save_png, write_dataset, Dataset, DegradationMode, DegradationSpec};
use restore_lab::error::{Error, Result};
use restore_lab::eval::{evaluate_dataset, mean_row};
use restore_lab::gradcheck::DEFAULT_FD_TOL;
use restore_lab::infer::restore;
use restore_lab::metrics::MetricRow;
use restore_lab::model::{LcdNet, SkipMode};
use restore_lab::optim::AdamConfig;
use restore_lab::params::ParamStore;
use restore_lab::trainer::{train, TrainSetup};
use restore_lab::verify::{self, Selector};

#[derive(Parser)]
#[command(name = "restore-lab", version, about = "Multi-scale image restoration lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic paired dataset (input/ degraded, target/ clean)
    Synth {
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Number of image pairs
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Square image size in pixels
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Degradation family: blur or rain
        #[arg(long, default_value = "blur")]
        mode: String,
        /// Additive Gaussian noise sigma (0 disables)
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on a paired dataset
    Train {
        /// TOML config file; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint/output directory
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config step count
        #[arg(long)]
        steps: Option<u64>,
        /// Resume from this checkpoint manifest
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Override the skip-fusion mode: sum, concat, cgb-like, scam
        #[arg(long)]
        skip_mode: Option<String>,
        /// Override the context branch count (1..=3)
        #[arg(long)]
        branches: Option<usize>,
    },
    /// Evaluate a checkpoint on a paired dataset
    Eval {
        /// Checkpoint manifest
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated metric columns (psnr,ssim,psnr_y,ssim_y,mae)
        #[arg(long)]
        metrics: Option<String>,
        /// Write the CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Restore a single image
    Infer {
        /// Checkpoint manifest
        #[arg(long)]
        ckpt: PathBuf,
        /// Degraded input image (PNG)
        input: PathBuf,
        /// Restored output path (PNG)
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify analytic gradients against finite differences
    Gradcheck {
        /// Suite selector: mssf, msfm, scam, model, loss, all
        #[arg(long, default_value = "all")]
        module: String,
        /// Maximum allowed relative error
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Train and score the model-variant grid
    Ablate {
        /// Dataset directory
        #[arg(long)]
        data: PathBuf,
        /// Training budget per variant
        #[arg(long, default_value_t = 30)]
        steps: u64,
        /// Patch size (multiple of 8)
        #[arg(long, default_value_t = 16)]
        patch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn cmd_synth(out: &Path, count: usize, size: usize, mode: &str, noise: f64, seed: u64) -> Result<()> {
    let mode = match mode {
        "blur" => DegradationMode::Blur,
        "rain" => DegradationMode::Rain,
        other => return Err(Error::Input(format!("unknown degradation mode {other:?}"))),
    };
    let spec = DegradationSpec {
        mode,
        noise_sigma: noise,
        seed,
        ..Default::default()
    };
    spec.validate()?;
    write_dataset(out, count, size, &spec)?;
    println!("wrote {count} pairs of {size}x{size} to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    steps: Option<u64>,
    ckpt: Option<&Path>,
    skip_mode: Option<&str>,
    branches: Option<usize>,
) -> Result<()> {
    let mut cfg = match config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(s) = steps {
        cfg.train.steps = s;
    }
    if let Some(m) = skip_mode {
        cfg.model.skip_mode = SkipMode::parse(m)
            .ok_or_else(|| Error::Input(format!("unknown skip mode {m:?}")))?;
    }
    if let Some(n) = branches {
        cfg.model.mssf_branches = n;
    }
    cfg.validate()?;
    let ds = Dataset::load(data)?;
    let outcome = train(
        &TrainSetup {
            model_cfg: &cfg.model,
            train_cfg: &cfg.train,
            dataset: &ds,
            out_dir: Some(out),
            resume: ckpt,
            stop_at: None,
        },
        &mut std::io::stdout(),
    )?;
    println!(
        "trained {} steps: loss {:.6} -> {:.6}",
        outcome.steps_run, outcome.first_loss, outcome.final_loss
    );
    Ok(())
}

const METRIC_COLUMNS: [&str; 5] = ["psnr", "ssim", "psnr_y", "ssim_y", "mae"];

fn metric_value(row: &MetricRow, col: &str) -> f64 {
    match col {
        "psnr" => row.psnr,
        "ssim" => row.ssim,
        "psnr_y" => row.psnr_y,
        "ssim_y" => row.ssim_y,
        "mae" => row.mae,
        _ => unreachable!("validated column"),
    }
}

fn format_rows(rows: &[MetricRow], cols: &[String]) -> String {
    let mut s = String::new();
    s.push_str("image_id");
    for c in cols {
        s.push(',');
        s.push_str(c);
    }
    s.push('\n');
    for row in rows {
        s.push_str(&row.image_id);
        for c in cols {
            s.push_str(&format!(",{:.6}", metric_value(row, c)));
        }
        s.push('\n');
    }
    s
}

fn load_model(ckpt: &Path) -> Result<(LcdNet, ParamStore)> {
    let loaded = checkpoint::load(ckpt, AdamConfig::default())?;
    let net = {
        let mut scratch = ParamStore::new();
        LcdNet::init(&mut scratch, loaded.manifest.seed, &loaded.manifest.model)
    };
    Ok((net, loaded.params))
}

fn cmd_eval(ckpt: &Path, data: &Path, metrics: Option<&str>, out: Option<&Path>) -> Result<()> {
    let cols: Vec<String> = match metrics {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => METRIC_COLUMNS.iter().map(|s| s.to_string()).collect(),
    };
    for c in &cols {
        if !METRIC_COLUMNS.contains(&c.as_str()) {
            return Err(Error::Input(format!("unknown metric {c:?}")));
        }
    }
    let (net, params) = load_model(ckpt)?;
    let ds = Dataset::load(data)?;
    let mut rows = evaluate_dataset(&net, &params, &ds)?;
    rows.push(mean_row(&rows));
    let text = format_rows(&rows, &cols);
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_infer(ckpt: &Path, input: &Path, out: &Path) -> Result<()> {
    let (net, params) = load_model(ckpt)?;
    let img = load_png(input)?;
    let restored = restore(&net, &params, &img)?;
    save_png(out, &restored)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_gradcheck(module: &str, tol: Option<f64>) -> Result<()> {
    let sel = Selector::parse(module)
        .ok_or_else(|| Error::Input(format!("unknown module {module:?}")))?;
    let tol = tol.unwrap_or(DEFAULT_FD_TOL);
    let mut failed = false;
    for suite in verify::run(sel, tol) {
        let worst = suite.report.worst().expect("non-empty suite");
        let status = if suite.report.pass() { "pass" } else { "FAIL" };
        println!(
            "{}: {} ({} groups, worst {} rel err {:.3e}, tol {:.1e})",
            suite.suite,
            status,
            suite.report.groups.len(),
            worst.name,
            worst.max_rel_err,
            tol
        );
        failed |= !suite.report.pass();
    }
    if failed {
        return Err(Error::Numeric("gradient check failed".into()));
    }
    Ok(())
}

fn cmd_ablate(data: &Path, steps: u64, patch: usize, seed: u64) -> Result<()> {
    let ds = Dataset::load(data)?;
    let rows = run_ablation(&ds, steps, seed, patch, &mut std::io::stderr())?;
    print!("{}", format_table(&rows));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Synth {
            out,
            count,
            size,
            mode,
            noise,
            seed,
        } => cmd_synth(&out, count, size, &mode, noise, seed),
        Cmd::Train {
            config,
            data,
            out,
            seed,
            steps,
            ckpt,
            skip_mode,
            branches,
        } => cmd_train(
            config.as_deref(),
            &data,
            &out,
            seed,
            steps,
            ckpt.as_deref(),
            skip_mode.as_deref(),
            branches,
        ),
        Cmd::Eval {
            ckpt,
            data,
            metrics,
            out,
        } => cmd_eval(&ckpt, &data, metrics.as_deref(), out.as_deref()),
        Cmd::Infer { ckpt, input, out } => cmd_infer(&ckpt, &input, &out),
        Cmd::Gradcheck { module, tol } => cmd_gradcheck(&module, tol),
        Cmd::Ablate {
            data,
            steps,
            patch,
            seed,
        } => cmd_ablate(&data, steps, patch, seed),
    }
}

fn main() -> ExitCode {
    if let Ok(n) = std::env::var("RESTORE_LAB_THREADS") {
        if let Ok(n) = n.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
