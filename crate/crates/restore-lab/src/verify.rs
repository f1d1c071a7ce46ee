//! Packaged finite-difference verification suites.
//!
//! Each suite builds a small randomized instance of one component — the
//! gated spatial block, the frequency-selection module, the skip-connection
//! attention, the full network, or the training objective — and compares
//! every analytic parameter gradient against central finite differences.
//! The suites back the `gradcheck` command and the acceptance tests.

use crate::blocks::{Msfm, MssfBlock, MssfOptions, Scam};
use crate::gradcheck::{check, GradReport, DEFAULT_FD_STEP};
use crate::loss::{restoration_loss, LossConfig};
use crate::model::{LcdNet, ModelConfig};
use crate::params::{rand_tensor, test_rng, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    Mssf,
    Msfm,
    Scam,
    Model,
    Loss,
    All,
}

impl Selector {
    pub fn parse(s: &str) -> Option<Selector> {
        match s {
            "mssf" => Some(Selector::Mssf),
            "msfm" => Some(Selector::Msfm),
            "scam" => Some(Selector::Scam),
            "model" => Some(Selector::Model),
            "loss" => Some(Selector::Loss),
            "all" => Some(Selector::All),
            _ => None,
        }
    }
}

pub struct SuiteReport {
    pub suite: &'static str,
    pub report: GradReport,
}

/// Opens every zero-initialized residual gate so gradients flow through
/// all branches instead of vanishing at the (identity) initial point.
fn open_gates(ps: &mut ParamStore) {
    let names: Vec<String> = ps
        .names()
        .filter(|n| n.contains(".gamma_") || n.contains(".lambda_"))
        .cloned()
        .collect();
    for n in names {
        ps.get_mut(&n).fill(0.2);
    }
}

fn mssf_suite(tol: f64) -> SuiteReport {
    let mut ps = ParamStore::new();
    let mut rng = test_rng(21);
    let blk = MssfBlock::init(&mut ps, &mut rng, "blk", 4, &MssfOptions::default());
    open_gates(&mut ps);
    ps.insert("input", rand_tensor(&mut test_rng(22), &[1, 4, 6, 6], 1.0));
    let report = check(
        &ps,
        |g, bind| {
            let y = blk.forward(g, bind, bind.var("input"));
            g.mean_abs(y)
        },
        4,
        DEFAULT_FD_STEP,
        tol,
    );
    SuiteReport { suite: "mssf", report }
}

fn msfm_suite(tol: f64) -> SuiteReport {
    let mut ps = ParamStore::new();
    let mut rng = test_rng(31);
    let m = Msfm::init(&mut ps, &mut rng, "m", 4, &[(2, 3), (2, 5)], 2);
    ps.insert("input", rand_tensor(&mut test_rng(32), &[1, 4, 6, 6], 1.0));
    let report = check(
        &ps,
        |g, bind| {
            let y = m.forward(g, bind, bind.var("input"));
            g.mean_abs(y)
        },
        4,
        DEFAULT_FD_STEP,
        tol,
    );
    SuiteReport { suite: "msfm", report }
}

fn scam_suite(tol: f64) -> SuiteReport {
    let mut ps = ParamStore::new();
    let mut rng = test_rng(41);
    let s = Scam::init(&mut ps, &mut rng, "scam", &[2, 4]);
    ps.insert("e0", rand_tensor(&mut test_rng(42), &[1, 2, 6, 6], 1.0));
    ps.insert("e1", rand_tensor(&mut test_rng(43), &[1, 4, 3, 3], 1.0));
    ps.insert("mid", rand_tensor(&mut test_rng(44), &[1, 4, 3, 3], 1.0));
    open_gates(&mut ps);
    let report = check(
        &ps,
        |g, bind| {
            let enc = [bind.var("e0"), bind.var("e1")];
            let outs = s.forward(g, bind, &enc, bind.var("mid"));
            let terms: Vec<_> = outs.iter().map(|&o| g.mean_abs(o)).collect();
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = g.add(acc, t);
            }
            acc
        },
        4,
        DEFAULT_FD_STEP,
        tol,
    );
    SuiteReport { suite: "scam", report }
}

fn model_suite(tol: f64) -> SuiteReport {
    let cfg = ModelConfig {
        base_width: 4,
        blocks_per_level: [1, 1, 1, 1],
        msfm_branches: vec![(2, 3)],
        ..Default::default()
    };
    let mut ps = ParamStore::new();
    let net = LcdNet::init(&mut ps, 51, &cfg);
    // 16x16 keeps the deepest level at 2x2: on 1x1 maps the normalized
    // low-pass filters are structurally inert and their finite differences
    // are pure noise
    open_gates(&mut ps);
    ps.insert("img", rand_tensor(&mut test_rng(52), &[1, 3, 16, 16], 0.3));
    let report = check(
        &ps,
        |g, bind| {
            let pyr = crate::model::make_pyramid(g, bind.var("img"));
            let outs = net.forward(g, bind, &pyr);
            let terms: Vec<_> = outs.iter().map(|&o| g.mean_abs(o)).collect();
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = g.add(acc, t);
            }
            acc
        },
        2,
        DEFAULT_FD_STEP,
        tol,
    );
    SuiteReport { suite: "model", report }
}

fn loss_suite(tol: f64) -> SuiteReport {
    let mut ps = ParamStore::new();
    ps.insert("pred0", rand_tensor(&mut test_rng(61), &[1, 3, 8, 8], 0.5));
    ps.insert("pred1", rand_tensor(&mut test_rng(62), &[1, 3, 4, 4], 0.5));
    let tgt0 = rand_tensor(&mut test_rng(63), &[1, 3, 8, 8], 0.5);
    let tgt1 = rand_tensor(&mut test_rng(64), &[1, 3, 4, 4], 0.5);
    let cfg = LossConfig::default();
    let report = check(
        &ps,
        move |g, bind| {
            let pred = [bind.var("pred0"), bind.var("pred1")];
            let target = [g.leaf(tgt0.clone()), g.leaf(tgt1.clone())];
            let (l, _, _) = restoration_loss(g, &pred, &target, &cfg);
            l
        },
        6,
        DEFAULT_FD_STEP,
        tol,
    );
    SuiteReport { suite: "loss", report }
}

/// Runs the selected suites at the given tolerance.
pub fn run(selector: Selector, tol: f64) -> Vec<SuiteReport> {
    let mut out = Vec::new();
    if matches!(selector, Selector::Mssf | Selector::All) {
        out.push(mssf_suite(tol));
    }
    if matches!(selector, Selector::Msfm | Selector::All) {
        out.push(msfm_suite(tol));
    }
    if matches!(selector, Selector::Scam | Selector::All) {
        out.push(scam_suite(tol));
    }
    if matches!(selector, Selector::Model | Selector::All) {
        out.push(model_suite(tol));
    }
    if matches!(selector, Selector::Loss | Selector::All) {
        out.push(loss_suite(tol));
    }
    out
}
