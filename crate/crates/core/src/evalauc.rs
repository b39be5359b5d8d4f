//! Sparsification curves, AUC and dataset reports.
//!
//! Valid ground-truth pixels are ranked by decreasing confidence (raster
//! order breaks ties) and the error rate of the retained prefix is sampled at
//! `k` evenly spaced densities. The AUC is the mean of those samples, so a
//! constant confidence scores exactly the full-density error rate.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{write_atomic, GroundTruth};
use crate::error::{Error, Result};
use crate::grid::{DisparityMap, Grid};

/// Default number of density samples (5% steps).
pub const DEFAULT_SAMPLES: usize = 20;

#[inline]
fn is_error(disp: f32, gt: f32, tau: f64) -> bool {
    !disp.is_finite() || (disp as f64 - gt as f64).abs() > tau
}

fn check_shapes(disp: &DisparityMap, gt: &GroundTruth) -> Result<()> {
    if disp.width() != gt.width() || disp.height() != gt.height() {
        return Err(Error::DimensionMismatch(format!(
            "disparity {}x{} vs ground truth {}x{}",
            disp.width(),
            disp.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(())
}

/// Fraction of the masked valid pixels whose absolute error exceeds `tau`.
/// Without a mask every valid pixel counts.
pub fn d1_rate(disp: &DisparityMap, gt: &GroundTruth, mask: Option<&Grid<bool>>, tau: f64) -> Result<f64> {
    check_shapes(disp, gt)?;
    let mut n = 0usize;
    let mut bad = 0usize;
    for i in 0..disp.len() {
        if !gt.valid().as_slice()[i] || mask.is_some_and(|m| !m.as_slice()[i]) {
            continue;
        }
        n += 1;
        bad += is_error(disp.as_slice()[i], gt.disparity().as_slice()[i], tau) as usize;
    }
    if n == 0 {
        return Err(Error::Empty("evaluation subset"));
    }
    Ok(bad as f64 / n as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Equal confidences keep raster order.
    #[default]
    Raster,
    /// Equal confidences are shuffled with the given seed.
    Shuffle(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparsificationCurve {
    pub densities: Vec<f64>,
    pub error_rates: Vec<f64>,
    pub k: usize,
    pub tau: f64,
    /// Error rate at full density.
    pub epsilon: f64,
    /// Number of evaluated pixels.
    pub pixels: usize,
}

impl SparsificationCurve {
    pub fn auc(&self) -> f64 {
        auc(self)
    }

    pub fn optimal_auc(&self) -> f64 {
        optimal_auc(self.epsilon).expect("epsilon in [0, 1]")
    }

    /// `density,error_rate` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("density,error_rate\n");
        for (d, e) in self.densities.iter().zip(&self.error_rates) {
            let _ = writeln!(out, "{d:.6},{e:.6}");
        }
        out
    }
}

pub fn sparsify(
    confidence: &Grid<f64>,
    disp: &DisparityMap,
    gt: &GroundTruth,
    tau: f64,
    k: usize,
) -> Result<SparsificationCurve> {
    sparsify_with(confidence, disp, gt, tau, k, TieBreak::Raster)
}

pub fn sparsify_with(
    confidence: &Grid<f64>,
    disp: &DisparityMap,
    gt: &GroundTruth,
    tau: f64,
    k: usize,
    ties: TieBreak,
) -> Result<SparsificationCurve> {
    check_shapes(disp, gt)?;
    if confidence.width() != disp.width() || confidence.height() != disp.height() {
        return Err(Error::DimensionMismatch("confidence map and disparity map".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be non-negative, got {tau}")));
    }
    let mut order: Vec<usize> = (0..disp.len()).filter(|&i| gt.valid().as_slice()[i]).collect();
    let n = order.len();
    if n == 0 {
        return Err(Error::Empty("valid ground-truth pixels"));
    }
    if n < k {
        return Err(Error::InvalidParameter(format!("{n} valid pixels is fewer than k = {k}")));
    }
    let conf = confidence.as_slice();
    if let TieBreak::Shuffle(seed) = ties {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    // Stable sort: within equal confidence the prior order survives.
    order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]));
    let mut prefix_errors = Vec::with_capacity(n + 1);
    prefix_errors.push(0usize);
    for &i in &order {
        let bad = is_error(disp.as_slice()[i], gt.disparity().as_slice()[i], tau) as usize;
        prefix_errors.push(prefix_errors.last().unwrap() + bad);
    }
    let mut densities = Vec::with_capacity(k);
    let mut error_rates = Vec::with_capacity(k);
    for j in 1..=k {
        let m = (j * n).div_ceil(k);
        densities.push(j as f64 / k as f64);
        error_rates.push(prefix_errors[m] as f64 / m as f64);
    }
    Ok(SparsificationCurve {
        densities,
        epsilon: *error_rates.last().unwrap(),
        error_rates,
        k,
        tau,
        pixels: n,
    })
}

/// Mean of the sampled error rates, accumulated as deviations from the
/// first rate so that a flat curve averages back to exactly its rate.
pub fn auc(curve: &SparsificationCurve) -> f64 {
    let rates = &curve.error_rates;
    let base = rates[0];
    base + rates.iter().map(|r| r - base).sum::<f64>() / rates.len() as f64
}

/// `ε + (1 - ε) ln(1 - ε)`, the area under an ideal curve; 1 at `ε = 1`.
pub fn optimal_auc(epsilon: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    if epsilon == 1.0 {
        return Ok(1.0);
    }
    Ok(epsilon + (1.0 - epsilon) * (-epsilon).ln_1p())
}

pub fn macro_average(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("values to average"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// One evaluated (measure, image) pair, as fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub measure: String,
    pub image: String,
    pub auc: f64,
    pub optimal_auc: f64,
    pub d1: f64,
}

impl EvalRecord {
    pub fn from_curve(measure: impl Into<String>, image: impl Into<String>, curve: &SparsificationCurve) -> Self {
        Self {
            measure: measure.into(),
            image: image.into(),
            auc: curve.auc(),
            optimal_auc: curve.optimal_auc(),
            d1: curve.epsilon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasureSummary {
    pub measure: String,
    pub rank: usize,
    pub mean_auc: f64,
    pub images: usize,
}

/// Per-image records plus macro averages and ranks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AucReport {
    pub records: Vec<EvalRecord>,
    pub summaries: Vec<MeasureSummary>,
    /// Macro average of per-image optimal AUCs.
    pub mean_optimal_auc: f64,
    /// Macro average of per-image D1.
    pub mean_d1: f64,
    /// Optimal AUC formula applied to `mean_d1`.
    pub optimal_auc_of_mean_d1: f64,
}

/// Fixed-point rendering of a fraction ×100 with two decimals.
pub fn x100(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

pub fn report(records: Vec<EvalRecord>) -> Result<AucReport> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation records"));
    }
    let mut measures: Vec<String> = Vec::new();
    for r in &records {
        if !measures.contains(&r.measure) {
            measures.push(r.measure.clone());
        }
    }
    let mut summaries: Vec<MeasureSummary> = measures
        .iter()
        .map(|m| {
            let aucs: Vec<f64> = records.iter().filter(|r| &r.measure == m).map(|r| r.auc).collect();
            MeasureSummary {
                measure: m.clone(),
                rank: 0,
                mean_auc: macro_average(&aucs).expect("non-empty"),
                images: aucs.len(),
            }
        })
        .collect();
    summaries.sort_by(|a, b| a.mean_auc.total_cmp(&b.mean_auc).then_with(|| a.measure.cmp(&b.measure)));
    for (i, s) in summaries.iter_mut().enumerate() {
        s.rank = i + 1;
    }
    // Image-level quantities do not depend on the measure: average over
    // distinct images.
    let mut images: Vec<(&str, f64, f64)> = Vec::new();
    for r in &records {
        if !images.iter().any(|(name, _, _)| *name == r.image) {
            images.push((&r.image, r.optimal_auc, r.d1));
        }
    }
    let mean_optimal_auc = macro_average(&images.iter().map(|i| i.1).collect::<Vec<_>>())?;
    let mean_d1 = macro_average(&images.iter().map(|i| i.2).collect::<Vec<_>>())?;
    Ok(AucReport {
        optimal_auc_of_mean_d1: optimal_auc(mean_d1)?,
        records,
        summaries,
        mean_optimal_auc,
        mean_d1,
    })
}

impl AucReport {
    /// Per-image rows followed by one `mean` row per measure.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("measure,image,auc_x100,opt_x100,d1_pct\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{},{}", r.measure, r.image, x100(r.auc), x100(r.optimal_auc), x100(r.d1));
        }
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{},mean,{},{},{}",
                s.measure,
                x100(s.mean_auc),
                x100(self.mean_optimal_auc),
                x100(self.mean_d1)
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| R. | Measure | AUC (x100) | Images |");
        let _ = writeln!(out, "|---:|:--------|-----------:|-------:|");
        for s in &self.summaries {
            let _ = writeln!(out, "| {} | {} | {} | {} |", s.rank, s.measure, x100(s.mean_auc), s.images);
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "| Reference | Value (x100) |");
        let _ = writeln!(out, "|:----------|-------------:|");
        let _ = writeln!(out, "| D1 (mean) | {} |", x100(self.mean_d1));
        let _ = writeln!(out, "| Opt. (mean of per-image optima) | {} |", x100(self.mean_optimal_auc));
        let _ = writeln!(out, "| Opt. (formula on mean D1) | {} |", x100(self.optimal_auc_of_mean_d1));
        out
    }

    /// Writes `report.csv` and `report.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("report.csv"), self.to_csv().as_bytes())?;
        write_atomic(&dir.join("report.md"), self.to_markdown().as_bytes())
    }
}
