//! Run configuration: JSON file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stereoconf::measures::{evaluable_measures, validate_window, Input, MeasureId, MeasureParams};
use stereoconf::pipeline::{PipelineParams, StereoAlgorithm};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub algorithm: StereoAlgorithm,
    pub pipeline: PipelineParams,
    pub measure_params: MeasureParams,
    /// Measure ids (`PKRN`, `DA_31`) or the single entry `all`.
    pub measures: Vec<String>,
    /// Windows each windowed measure without an explicit suffix is swept over.
    pub windows: Vec<usize>,
    pub manifest: Option<PathBuf>,
    pub out: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Density samples per sparsification curve.
    pub samples: usize,
    /// Seed for random tie-breaking; raster order when absent.
    pub shuffle_ties: Option<u64>,
    pub cache: bool,
    /// Defaults to `<out>/cache`.
    pub cache_dir: Option<PathBuf>,
    /// Persist confidence maps during `eval`.
    pub save_maps: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            algorithm: StereoAlgorithm::CensusSgm,
            pipeline: PipelineParams::default(),
            measure_params: MeasureParams::default(),
            measures: vec!["all".into()],
            windows: Vec::new(),
            manifest: None,
            out: PathBuf::from("out"),
            workers: 0,
            samples: stereoconf::evalauc::DEFAULT_SAMPLES,
            shuffle_ties: None,
            cache: true,
            cache_dir: None,
            save_maps: true,
        }
    }
}

impl PipelineConfig {
    /// Reads a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.manifest.as_mut().map(resolve);
        cfg.cache_dir.as_mut().map(resolve);
        resolve(&mut cfg.out);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: stereoconf::Error| CliError::Config(e.to_string());
        self.measure_params.validate().map_err(bad)?;
        self.pipeline.sgm.validate().map_err(bad)?;
        if self.pipeline.census_window % 2 == 0 || self.pipeline.census_window < 3 {
            return Err(CliError::Config("census_window must be odd and >= 3".into()));
        }
        if self.samples == 0 {
            return Err(CliError::Config("samples must be >= 1".into()));
        }
        for &w in &self.windows {
            validate_window(w).map_err(bad)?;
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> Result<&Path, CliError> {
        self.manifest
            .as_deref()
            .ok_or_else(|| CliError::Config("no manifest given (config `manifest` or --manifest)".into()))
    }

    /// `out` itself, or its parent when `out` names a `.stfeat` file.
    pub fn out_dir(&self) -> PathBuf {
        if self.out.extension().is_some_and(|e| e == "stfeat") {
            self.out.parent().map(Path::to_path_buf).unwrap_or_default()
        } else {
            self.out.clone()
        }
    }

    pub fn cache_dir(&self) -> Option<PathBuf> {
        self.cache
            .then(|| self.cache_dir.clone().unwrap_or_else(|| self.out_dir().join("cache")))
    }

    /// Resolves the measure list against the catalog and the algorithm.
    pub fn measure_ids(&self) -> Result<Vec<MeasureId>, CliError> {
        let sgm = self.algorithm.has_scanlines();
        let mut ids = Vec::new();
        for name in &self.measures {
            if name.eq_ignore_ascii_case("all") {
                ids.extend(evaluable_measures(sgm));
                continue;
            }
            let id: MeasureId = name
                .parse()
                .map_err(|e: stereoconf::Error| CliError::Config(e.to_string()))?;
            if !id.kind.catalog_entry().evaluable {
                return Err(CliError::Config(format!("{id} is not a confidence measure")));
            }
            let needs = id.kind.requires(&self.measure_params);
            if !sgm && (needs.contains(&Input::Scanlines) || needs.contains(&Input::PreAggregation)) {
                return Err(CliError::Config(format!(
                    "{id} needs scanline aggregation, unavailable with {}",
                    self.algorithm.name()
                )));
            }
            ids.push(id);
        }
        if !self.windows.is_empty() {
            ids = ids
                .into_iter()
                .flat_map(|id| {
                    if id.kind.is_windowed() && id.window.is_none() {
                        self.windows
                            .iter()
                            .map(|&w| MeasureId::windowed(id.kind, w).expect("validated window"))
                            .collect()
                    } else {
                        vec![id]
                    }
                })
                .collect();
        }
        let mut unique = Vec::with_capacity(ids.len());
        for id in ids {
            if !unique.contains(&id) {
                unique.push(id);
            }
        }
        if unique.is_empty() {
            return Err(CliError::Config("empty measure list".into()));
        }
        Ok(unique)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_depends_on_algorithm() {
        let mut cfg = PipelineConfig::default();
        cfg.algorithm = StereoAlgorithm::CensusCbca;
        let cbca = cfg.measure_ids().unwrap();
        cfg.algorithm = StereoAlgorithm::CensusSgm;
        let sgm = cfg.measure_ids().unwrap();
        assert_eq!(sgm.len(), cbca.len() + 2);
        for name in ["SCS", "PS"] {
            let id: MeasureId = name.parse().unwrap();
            assert!(sgm.contains(&id) && !cbca.contains(&id));
        }
    }

    #[test]
    fn rejects_sgm_measure_without_scanlines() {
        let cfg = PipelineConfig {
            algorithm: StereoAlgorithm::CensusCbca,
            measures: vec!["SCS".into()],
            ..Default::default()
        };
        assert!(matches!(cfg.measure_ids(), Err(CliError::Config(_))));
    }

    #[test]
    fn window_sweep_expands_windowed_ids() {
        let cfg = PipelineConfig {
            measures: vec!["PKRN".into(), "DA".into(), "VAR_7".into()],
            windows: vec![5, 9],
            ..Default::default()
        };
        let ids: Vec<String> = cfg.measure_ids().unwrap().iter().map(|i| i.to_string()).collect();
        assert_eq!(ids, ["PKRN", "DA_5", "DA_9", "VAR_7"]);
    }

    #[test]
    fn unknown_fields_and_measures_are_config_errors() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"workerz": 2}"#).is_err());
        let cfg = PipelineConfig {
            measures: vec!["NOPE".into()],
            ..Default::default()
        };
        assert!(cfg.measure_ids().is_err());
        let cfg = PipelineConfig {
            measures: vec!["MED".into()],
            ..Default::default()
        };
        assert!(cfg.measure_ids().is_err());
    }
}
