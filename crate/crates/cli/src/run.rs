//! Per-entry pipeline stages behind the subcommands.

use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use stereoconf::aggregate::cbca_pair;
use stereoconf::costvol::{ingest_cost_volume, save_cost_volume, IngestMode};
use stereoconf::dataio::{load_gray_image, load_ground_truth, save_map, GroundTruth, ManifestEntry, MapEncoding};
use stereoconf::evalauc::{d1_rate, sparsify_with, EvalRecord, SparsificationCurve, TieBreak};
use stereoconf::features::{build_pyramid, compute_stack, export_stack, scale_d_max, Scale, ScaleRuns, StackKind};
use stereoconf::measures::{compute_measure, ConfidenceMap, MeasureId};
use stereoconf::pipeline::{aggregate_volume, assemble, from_external_volume, raw_volume, MatchResult, StereoAlgorithm};
use stereoconf::{GrayImage, Grid};

use crate::cache::{Key, VolumeCache};
use crate::config::PipelineConfig;
use crate::CliError;

/// One manifest entry with its label and loaded images.
pub struct Pair {
    pub name: String,
    pub entry: ManifestEntry,
    pub left: GrayImage,
    pub right: GrayImage,
}

pub struct Runner {
    pub cfg: PipelineConfig,
    cache: Option<VolumeCache>,
}

fn entry_err(name: &str) -> impl Fn(stereoconf::Error) -> CliError + '_ {
    move |source| CliError::Entry {
        entry: name.to_string(),
        source,
    }
}

/// Unique labels: duplicates get a `#<index>` suffix.
pub fn entry_names(entries: &[ManifestEntry]) -> Vec<String> {
    let labels: Vec<String> = entries.iter().map(ManifestEntry::label).collect();
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if labels.iter().filter(|o| *o == l).count() > 1 {
                format!("{l}#{i}")
            } else {
                l.clone()
            }
        })
        .collect()
}

impl Runner {
    pub fn new(cfg: PipelineConfig) -> Result<Self, CliError> {
        let cache = match cfg.cache_dir() {
            Some(dir) => Some(
                VolumeCache::new(dir.clone()).map_err(|e| CliError::Config(format!("cache {}: {e}", dir.display())))?,
            ),
            None => None,
        };
        Ok(Self { cfg, cache })
    }

    pub fn load(&self, name: String, entry: &ManifestEntry) -> Result<Pair, CliError> {
        let (left, right) = {
            let err = entry_err(&name);
            (
                load_gray_image(&entry.left).map_err(&err)?,
                load_gray_image(&entry.right).map_err(&err)?,
            )
        };
        Ok(Pair {
            name,
            entry: entry.clone(),
            left,
            right,
        })
    }

    pub fn ground_truth(&self, pair: &Pair) -> Result<GroundTruth, CliError> {
        load_ground_truth(&pair.entry.gt, pair.entry.gt_encoding).map_err(entry_err(&pair.name))
    }

    fn cached(
        &self,
        key: impl FnOnce() -> Key,
        compute: impl FnOnce() -> stereoconf::Result<stereoconf::CostVolume>,
    ) -> stereoconf::Result<stereoconf::CostVolume> {
        match &self.cache {
            Some(cache) => cache.get_or(key(), compute),
            None => compute(),
        }
    }

    /// Runs the configured algorithm on one image pair.
    pub fn match_images(&self, left: &GrayImage, right: &GrayImage, d_max: usize) -> stereoconf::Result<MatchResult> {
        let params = &self.cfg.pipeline;
        let algo = self.cfg.algorithm;
        let base = |stage: &str| {
            Key::new(stage)
                .image(left)
                .image(right)
                .number(d_max as u64)
                .number(params.census_window as u64)
        };
        let raw = self.cached(|| base("census"), || raw_volume(left, right, d_max, params))?;
        let (volume, scanlines) = match algo {
            StereoAlgorithm::CensusCbca => {
                let vol = self.cached(
                    || base("cbca").json(&params.cbca),
                    || cbca_pair(&raw, left, right, &params.cbca),
                )?;
                (vol, None)
            }
            _ => aggregate_volume(&raw, left, right, params, algo)?,
        };
        assemble(left, right, raw, volume, scanlines, params, algo)
    }

    pub fn match_pair(&self, pair: &Pair) -> Result<MatchResult, CliError> {
        let err = entry_err(&pair.name);
        if self.cfg.algorithm == StereoAlgorithm::ExternalVolume {
            let path = pair.entry.volume.as_ref().ok_or_else(|| {
                err(stereoconf::Error::MissingInput("manifest `volume` for external-volume"))
            })?;
            let vol = ingest_cost_volume(path, pair.entry.volume_mode.unwrap_or(IngestMode::Costs)).map_err(&err)?;
            if vol.d_max() != pair.entry.d_max {
                log::warn!(
                    "{}: volume has d_max {} but the manifest says {}; using the volume",
                    pair.name,
                    vol.d_max(),
                    pair.entry.d_max
                );
            }
            return from_external_volume(&pair.left, &pair.right, vol, &self.cfg.pipeline).map_err(&err);
        }
        self.match_images(&pair.left, &pair.right, pair.entry.d_max).map_err(&err)
    }

    pub fn confidences(&self, run: &MatchResult, ids: &[MeasureId], name: &str) -> Result<Vec<ConfidenceMap>, CliError> {
        let err = entry_err(name);
        let inputs = run.inputs().map_err(&err)?;
        ids.par_iter()
            .map(|&id| compute_measure(&inputs, &self.cfg.measure_params, id).map_err(&err))
            .collect()
    }

    pub fn curve(&self, conf: &ConfidenceMap, run: &MatchResult, gt: &GroundTruth, pair: &Pair) -> Result<SparsificationCurve, CliError> {
        let ties = self.cfg.shuffle_ties.map_or(TieBreak::Raster, TieBreak::Shuffle);
        sparsify_with(&conf.scores, &run.disparity, gt, pair.entry.tau, self.cfg.samples, ties).map_err(entry_err(&pair.name))
    }

    pub fn entry_dir(&self, name: &str) -> Result<PathBuf, CliError> {
        let dir = self.cfg.out.join(sanitize(name));
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(dir.clone(), e))?;
        Ok(dir)
    }
}

/// File-system-safe version of an entry label.
pub fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.#".contains(c) { c } else { '_' })
        .collect()
}

fn f32_map(g: &Grid<f64>) -> Grid<f32> {
    g.map(|&v| v as f32)
}

pub fn save_confidence(conf: &ConfidenceMap, dir: &Path, name: &str) -> Result<(), CliError> {
    let err = entry_err(name);
    let conf_dir = dir.join("conf");
    std::fs::create_dir_all(&conf_dir).map_err(|e| CliError::Io(conf_dir.clone(), e))?;
    save_map(&f32_map(&conf.scores), &conf_dir.join(format!("{}.pfm", conf.id)), MapEncoding::Pfm).map_err(&err)?;
    save_map(&f32_map(&conf.raw), &conf_dir.join(format!("{}.raw.pfm", conf.id)), MapEncoding::Pfm).map_err(&err)
}

/// Writes every artifact of a match run; returns the D1 rate.
pub fn persist_match(runner: &Runner, pair: &Pair, run: &MatchResult) -> Result<f64, CliError> {
    let err = entry_err(&pair.name);
    let dir = runner.entry_dir(&pair.name)?;
    save_map(&run.disparity, &dir.join("disparity.pfm"), MapEncoding::Pfm).map_err(&err)?;
    save_map(&run.right_disparity, &dir.join("right_disparity.pfm"), MapEncoding::Pfm).map_err(&err)?;
    save_cost_volume(&run.raw, &dir.join("raw.stcvol")).map_err(&err)?;
    save_cost_volume(&run.volume, &dir.join("volume.stcvol")).map_err(&err)?;
    save_cost_volume(&run.right_volume, &dir.join("right_volume.stcvol")).map_err(&err)?;
    save_cost_volume(run.self_left.volume(), &dir.join("self_left.stcvol")).map_err(&err)?;
    save_cost_volume(run.self_right.volume(), &dir.join("self_right.stcvol")).map_err(&err)?;
    if let Some(scan) = &run.scanlines {
        for (s, (vol, disp)) in scan.paths.iter().zip(&scan.path_disparities).enumerate() {
            save_cost_volume(vol, &dir.join(format!("path{s}.stcvol"))).map_err(&err)?;
            save_map(disp, &dir.join(format!("path{s}_disparity.pfm")), MapEncoding::Pfm).map_err(&err)?;
        }
    }
    let gt = runner.ground_truth(pair)?;
    d1_rate(&run.disparity, &gt, None, pair.entry.tau).map_err(&err)
}

/// Evaluates every measure on one entry.
pub fn evaluate_entry(runner: &Runner, pair: &Pair, ids: &[MeasureId]) -> Result<Vec<EvalRecord>, CliError> {
    let run = runner.match_pair(pair)?;
    let gt = runner.ground_truth(pair)?;
    let confs = runner.confidences(&run, ids, &pair.name)?;
    let dir = if runner.cfg.save_maps { Some(runner.entry_dir(&pair.name)?) } else { None };
    let mut records = Vec::with_capacity(confs.len());
    for conf in &confs {
        if let Some(dir) = &dir {
            save_confidence(conf, dir, &pair.name)?;
        }
        let curve = runner.curve(conf, &run, &gt, pair)?;
        records.push(EvalRecord::from_curve(conf.id.to_string(), pair.name.clone(), &curve));
    }
    info!("{}: evaluated {} measures", pair.name, records.len());
    Ok(records)
}

/// Dumps `density,error_rate` curves for every measure on one entry.
pub fn curves_entry(runner: &Runner, pair: &Pair, ids: &[MeasureId]) -> Result<usize, CliError> {
    let run = runner.match_pair(pair)?;
    let gt = runner.ground_truth(pair)?;
    let dir = runner.entry_dir(&pair.name)?.join("curves");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(dir.clone(), e))?;
    let confs = runner.confidences(&run, ids, &pair.name)?;
    for conf in &confs {
        let curve = runner.curve(conf, &run, &gt, pair)?;
        stereoconf::dataio::write_atomic(&dir.join(format!("{}.csv", conf.id)), curve.to_csv().as_bytes())
            .map_err(entry_err(&pair.name))?;
    }
    Ok(confs.len())
}

/// Computes and writes one feature stack.
pub fn features_entry(runner: &Runner, pair: &Pair, kind: StackKind, path: &Path) -> Result<(), CliError> {
    let err = entry_err(&pair.name);
    if kind.needs_scanlines() && !runner.cfg.algorithm.has_scanlines() {
        return Err(CliError::Config(format!("{} needs census-sgm", kind.name())));
    }
    let full = runner.match_pair(pair)?;
    let (half, quarter) = if kind.needs_pyramid() {
        if runner.cfg.algorithm == StereoAlgorithm::ExternalVolume {
            return Err(CliError::Config(format!("{} needs a pyramid, unavailable for external volumes", kind.name())));
        }
        let lp = build_pyramid(&pair.left).map_err(&err)?;
        let rp = build_pyramid(&pair.right).map_err(&err)?;
        let level = |scale: Scale| {
            let (l, r) = (&lp.levels[scale.level()], &rp.levels[scale.level()]);
            let d = scale_d_max(pair.entry.d_max, scale).min(l.width().saturating_sub(1));
            runner.match_images(l, r, d).map_err(&err)
        };
        (Some(level(Scale::Half)?), Some(level(Scale::Quarter)?))
    } else {
        (None, None)
    };
    let runs = ScaleRuns {
        full: &full,
        half: half.as_ref(),
        quarter: quarter.as_ref(),
    };
    let stack = compute_stack(kind, &runs, &runner.cfg.measure_params).map_err(&err)?;
    export_stack(&stack, path).map_err(&err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(left: &str) -> ManifestEntry {
        ManifestEntry {
            left: left.into(),
            right: "r.pgm".into(),
            gt: "gt.pfm".into(),
            gt_encoding: stereoconf::dataio::GtEncoding::Pfm,
            d_max: 4,
            tau: 1.0,
            name: None,
            volume: None,
            volume_mode: None,
        }
    }

    #[test]
    fn duplicate_labels_are_disambiguated() {
        let names = entry_names(&[entry("a/im0.pgm"), entry("b/im0.pgm"), entry("c/x.pgm")]);
        assert_eq!(names, ["im0#0", "im0#1", "x"]);
    }

    #[test]
    fn sanitize_keeps_safe_characters() {
        assert_eq!(sanitize("Adiron dack/im0#1"), "Adiron_dack_im0#1");
    }
}
