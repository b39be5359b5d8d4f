//! End-to-end matching: census costs, aggregation, WTA and every auxiliary
//! volume the measures read.

use serde::{Deserialize, Serialize};

use crate::aggregate::{cbca_pair, sgm_aggregate, CbcaParams, ScanlineResult, SgmParams};
use crate::costvol::{build_self_volume, census_cost_volume, derive_right_volume, CostVolume, SelfCostVolume};
use crate::curve::{curve_stats, wta, CurveStats};
use crate::error::{Error, Result};
use crate::grid::{DisparityMap, GrayImage, Grid};
use crate::measures::MeasureInputs;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StereoAlgorithm {
    CensusCbca,
    CensusSgm,
    ExternalVolume,
}

impl StereoAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            StereoAlgorithm::CensusCbca => "census-cbca",
            StereoAlgorithm::CensusSgm => "census-sgm",
            StereoAlgorithm::ExternalVolume => "external-volume",
        }
    }

    pub fn has_scanlines(self) -> bool {
        self == StereoAlgorithm::CensusSgm
    }
}

impl std::str::FromStr for StereoAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::CensusCbca, Self::CensusSgm, Self::ExternalVolume]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineParams {
    pub census_window: usize,
    pub cbca: CbcaParams,
    pub sgm: SgmParams,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            census_window: 9,
            cbca: CbcaParams::default(),
            sgm: SgmParams::default(),
        }
    }
}

/// Everything produced for one stereo pair.
pub struct MatchResult {
    pub algorithm: StereoAlgorithm,
    pub left: GrayImage,
    pub right: GrayImage,
    /// Volume before aggregation.
    pub raw: CostVolume,
    /// Final `[0, 1]` volume the disparity is selected from.
    pub volume: CostVolume,
    pub stats: Grid<CurveStats>,
    pub disparity: DisparityMap,
    pub right_volume: CostVolume,
    pub right_disparity: DisparityMap,
    pub self_left: SelfCostVolume,
    pub self_right: SelfCostVolume,
    pub scanlines: Option<ScanlineResult>,
}

impl MatchResult {
    pub fn d_max(&self) -> usize {
        self.volume.d_max()
    }

    /// Inputs for every measure this result supports.
    pub fn inputs(&self) -> Result<MeasureInputs<'_>> {
        let mut inputs = MeasureInputs::new(&self.volume, &self.stats, &self.disparity)?
            .with_right(&self.right_volume, &self.right_disparity)?
            .with_images(&self.left, &self.right)?
            .with_self_volumes(&self.self_left, &self.self_right)?;
        if let Some(scan) = &self.scanlines {
            inputs = inputs.with_scanlines(scan)?.with_pre_aggregation(&self.raw)?;
        }
        Ok(inputs)
    }
}

fn check_pair(left: &GrayImage, right: &GrayImage, d_max: usize) -> Result<()> {
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::DimensionMismatch(format!(
            "left {}x{} vs right {}x{}",
            left.width(),
            left.height(),
            right.width(),
            right.height()
        )));
    }
    if d_max < 1 || d_max >= left.width() {
        return Err(Error::InvalidParameter(format!(
            "d_max must lie in [1, width) = [1, {}), got {d_max}",
            left.width()
        )));
    }
    Ok(())
}

/// Census matching cost volume for a pair.
pub fn raw_volume(left: &GrayImage, right: &GrayImage, d_max: usize, params: &PipelineParams) -> Result<CostVolume> {
    check_pair(left, right, d_max)?;
    census_cost_volume(left, right, d_max, params.census_window)
}

/// Aggregated volume plus scanline outputs when the algorithm has them.
pub fn aggregate_volume(
    raw: &CostVolume,
    left: &GrayImage,
    right: &GrayImage,
    params: &PipelineParams,
    algorithm: StereoAlgorithm,
) -> Result<(CostVolume, Option<ScanlineResult>)> {
    match algorithm {
        StereoAlgorithm::CensusCbca => Ok((cbca_pair(raw, left, right, &params.cbca)?, None)),
        StereoAlgorithm::CensusSgm => {
            let scan = sgm_aggregate(raw, &params.sgm)?;
            Ok((scan.normalized(), Some(scan)))
        }
        StereoAlgorithm::ExternalVolume => Ok((raw.clone(), None)),
    }
}

/// Completes a result from already computed volumes.
pub fn assemble(
    left: &GrayImage,
    right: &GrayImage,
    raw: CostVolume,
    volume: CostVolume,
    scanlines: Option<ScanlineResult>,
    params: &PipelineParams,
    algorithm: StereoAlgorithm,
) -> Result<MatchResult> {
    check_pair(left, right, volume.d_max())?;
    if volume.width() != left.width() || volume.height() != left.height() || !raw.same_shape(&volume) {
        return Err(Error::DimensionMismatch("volume does not match the image pair".into()));
    }
    let right_volume = derive_right_volume(&volume);
    let d_max = volume.d_max();
    Ok(MatchResult {
        algorithm,
        left: left.clone(),
        right: right.clone(),
        stats: curve_stats(&volume),
        disparity: wta(&volume),
        right_disparity: wta(&right_volume),
        right_volume,
        self_left: build_self_volume(left, d_max, params.census_window)?,
        self_right: build_self_volume(right, d_max, params.census_window)?,
        raw,
        volume,
        scanlines,
    })
}

/// Runs a census pipeline on a pair.
pub fn match_pair(
    left: &GrayImage,
    right: &GrayImage,
    d_max: usize,
    params: &PipelineParams,
    algorithm: StereoAlgorithm,
) -> Result<MatchResult> {
    if algorithm == StereoAlgorithm::ExternalVolume {
        return Err(Error::MissingInput("external cost volume"));
    }
    let raw = raw_volume(left, right, d_max, params)?;
    let (volume, scanlines) = aggregate_volume(&raw, left, right, params, algorithm)?;
    assemble(left, right, raw, volume, scanlines, params, algorithm)
}

/// Wraps an externally produced `[0, 1]` cost volume.
pub fn from_external_volume(
    left: &GrayImage,
    right: &GrayImage,
    volume: CostVolume,
    params: &PipelineParams,
) -> Result<MatchResult> {
    assemble(
        left,
        right,
        volume.clone(),
        volume,
        None,
        params,
        StereoAlgorithm::ExternalVolume,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::shifted_pair;

    #[test]
    fn guards_disparity_range() {
        let p = shifted_pair(16, 8, 2, 0);
        let params = PipelineParams::default();
        assert!(match_pair(&p.left, &p.right, 16, &params, StereoAlgorithm::CensusSgm).is_err());
        assert!(match_pair(&p.left, &p.right, 0, &params, StereoAlgorithm::CensusSgm).is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in [StereoAlgorithm::CensusCbca, StereoAlgorithm::CensusSgm, StereoAlgorithm::ExternalVolume] {
            assert_eq!(a.name().parse::<StereoAlgorithm>().unwrap(), a);
        }
    }
}
