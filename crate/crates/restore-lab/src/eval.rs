//! Dataset-level evaluation: run the network over every degraded/clean
//! pair and aggregate per-image metric rows plus their arithmetic mean.

use crate::data::Dataset;
use crate::error::Result;
use crate::infer::restore;
use crate::metrics::{evaluate_pair, MetricRow};
use crate::model::LcdNet;
use crate::params::ParamStore;

/// Per-image metrics for the whole dataset, in dataset order.
pub fn evaluate_dataset(net: &LcdNet, params: &ParamStore, ds: &Dataset) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::with_capacity(ds.len());
    for (name, (degraded, clean)) in ds.names.iter().zip(ds.pairs.iter()) {
        let pred = restore(net, params, degraded)?;
        rows.push(evaluate_pair(name, &pred, clean)?);
    }
    Ok(rows)
}

/// Metrics of the degraded inputs themselves — the no-op restoration
/// baseline any trained model has to beat.
pub fn baseline_rows(ds: &Dataset) -> Result<Vec<MetricRow>> {
    ds.names
        .iter()
        .zip(ds.pairs.iter())
        .map(|(name, (degraded, clean))| evaluate_pair(name, degraded, clean))
        .collect()
}

/// Arithmetic mean of each column; the id is "mean".
pub fn mean_row(rows: &[MetricRow]) -> MetricRow {
    assert!(!rows.is_empty(), "cannot average zero rows");
    let n = rows.len() as f64;
    MetricRow {
        image_id: "mean".to_string(),
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        psnr_y: rows.iter().map(|r| r.psnr_y).sum::<f64>() / n,
        ssim_y: rows.iter().map(|r| r.ssim_y).sum::<f64>() / n,
        mae: rows.iter().map(|r| r.mae).sum::<f64>() / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, v: f64) -> MetricRow {
        MetricRow {
            image_id: id.to_string(),
            psnr: v,
            ssim: v / 100.0,
            psnr_y: v + 1.0,
            ssim_y: v / 50.0,
            mae: v / 1000.0,
        }
    }

    #[test]
    fn mean_row_averages_each_column() {
        let rows = vec![row("a", 10.0), row("b", 30.0)];
        let m = mean_row(&rows);
        assert_eq!(m.image_id, "mean");
        assert!((m.psnr - 20.0).abs() < 1e-12);
        assert!((m.psnr_y - 21.0).abs() < 1e-12);
        assert!((m.ssim - 0.2).abs() < 1e-12);
        assert!((m.mae - 0.02).abs() < 1e-12);
    }
}
