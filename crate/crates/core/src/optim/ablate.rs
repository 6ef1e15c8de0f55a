use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, FitConfig};
use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_FRACTIONS: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.5];

/// One fit of the sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub neg_fraction: f64,
    pub seed: u64,
    #[serde(with = "crate::metrics::decibels")]
    pub psnr_db: f64,
    pub ssim: Option<f64>,
    pub positive: usize,
    pub negative: usize,
}

/// Means over seeds for one negative fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub neg_fraction: f64,
    #[serde(with = "crate::metrics::decibels")]
    pub mean_psnr_db: f64,
    pub mean_ssim: Option<f64>,
    pub mean_positive: f64,
    pub mean_negative: f64,
    pub mean_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    /// Fraction-major, seed-minor.
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn row(&self, neg_fraction: f64) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.neg_fraction == neg_fraction)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numeric(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("neg_fraction  psnr_db    ssim    positive  negative  total\n");
        for r in &self.rows {
            let ssim = r.mean_ssim.map_or_else(|| "-".to_string(), |s| format!("{s:.4}"));
            let _ = writeln!(
                out,
                "{:>12.2}  {:>7.3}  {:>6}  {:>8.1}  {:>8.1}  {:>5.1}",
                r.neg_fraction, r.mean_psnr_db, ssim, r.mean_positive, r.mean_negative, r.mean_total
            );
        }
        out
    }
}

/// Fits `target` once per (fraction, seed) pair, with `base` supplying every
/// other setting, and averages over seeds. Fits run in parallel but the
/// table does not depend on scheduling.
pub fn ablate(target: &Image, base: &FitConfig, fractions: &[f64], seeds: &[u64]) -> Result<AblationTable> {
    if fractions.is_empty() {
        return Err(Error::invalid("fraction list is empty"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("seed list is empty"));
    }
    let jobs: Vec<FitConfig> = fractions
        .iter()
        .flat_map(|&neg_fraction| {
            seeds.iter().map(move |&seed| FitConfig {
                neg_fraction,
                seed,
                ..base.clone()
            })
        })
        .collect();
    for cfg in &jobs {
        cfg.validate()?;
    }

    let cells = jobs
        .par_iter()
        .map(|cfg| {
            let (_, report) = fit(target, cfg)?;
            Ok(AblationCell {
                neg_fraction: cfg.neg_fraction,
                seed: cfg.seed,
                psnr_db: report.psnr_db,
                ssim: report.ssim,
                positive: report.positive,
                negative: report.negative,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let rows = cells
        .chunks(seeds.len())
        .map(|group| {
            let n = group.len() as f64;
            let mean = |f: &dyn Fn(&AblationCell) -> f64| group.iter().map(f).sum::<f64>() / n;
            let mean_ssim = group
                .iter()
                .map(|c| c.ssim)
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / n);
            AblationRow {
                neg_fraction: group[0].neg_fraction,
                mean_psnr_db: mean(&|c| c.psnr_db),
                mean_ssim,
                mean_positive: mean(&|c| c.positive as f64),
                mean_negative: mean(&|c| c.negative as f64),
                mean_total: mean(&|c| (c.positive + c.negative) as f64),
            }
        })
        .collect();

    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
        cells,
    })
}
