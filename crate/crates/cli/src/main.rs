//! `stconf`: stereo matching, confidence measures and sparsification evaluation.
//!
//! Exit status: 0 on success, 1 if some manifest entries failed, 2 on a
//! configuration error.

mod cache;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use rayon::prelude::*;
use stereoconf::dataio::DatasetManifest;
use stereoconf::evalauc::report;
use stereoconf::features::StackKind;
use stereoconf::measures::catalog;
use stereoconf::pipeline::StereoAlgorithm;

use config::PipelineConfig;
use run::{entry_names, Pair, Runner};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("entry {entry}: {source}")]
    Entry {
        entry: String,
        #[source]
        source: stereoconf::Error,
    },
    #[error("i/o error on {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "stconf", version, about = "Stereo confidence measures and sparsification evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match every entry and write disparities and volumes.
    Match(Common),
    /// Compute confidence maps for the selected measures.
    Confidence(Common),
    /// Full evaluation: confidence maps, AUC table and ranks.
    Eval(Common),
    /// Export a feature stack for a learned confidence measure.
    Features {
        #[command(flatten)]
        common: Common,
        /// Stack kind (GCP, ENS7, ENS23, LEV22, LEV50, O1, O2, FA1, FA2, SGMF).
        #[arg(long)]
        kind: String,
    },
    /// Print the measure catalog as JSON.
    ListMeasures,
    /// Dump sparsification curves as CSV.
    Sparsify(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest (overrides the config).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Comma-separated measure ids, or `all`.
    #[arg(long, value_delimiter = ',')]
    measures: Option<Vec<String>>,
    /// Default window for windowed measures.
    #[arg(long)]
    window: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// census-cbca, census-sgm or external-volume.
    #[arg(long)]
    algo: Option<String>,
    /// Output directory (`features`: a `.stfeat` path is allowed for a single entry).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Density samples per curve.
    #[arg(long)]
    samples: Option<usize>,
    /// Shuffle confidence ties with this seed.
    #[arg(long)]
    shuffle_ties: Option<u64>,
    /// Disable the on-disk volume cache.
    #[arg(long)]
    no_cache: bool,
    /// SGM penalty for one-level disparity changes.
    #[arg(long)]
    p1: Option<f32>,
    /// SGM penalty for larger disparity changes.
    #[arg(long)]
    p2: Option<f32>,
    /// Longest support arm for cross-based aggregation.
    #[arg(long)]
    max_arm: Option<usize>,
    /// Intensity threshold bounding support arms.
    #[arg(long)]
    tau_color: Option<f32>,
    /// Cross-based aggregation passes.
    #[arg(long)]
    cbca_iters: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<PipelineConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(m) = &self.manifest {
            cfg.manifest = Some(m.clone());
        }
        if let Some(m) = &self.measures {
            cfg.measures = m.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        }
        if let Some(w) = self.window {
            cfg.measure_params.window = w;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(a) = &self.algo {
            cfg.algorithm = a
                .parse::<StereoAlgorithm>()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(k) = self.samples {
            cfg.samples = k;
        }
        if self.shuffle_ties.is_some() {
            cfg.shuffle_ties = self.shuffle_ties;
        }
        if self.no_cache {
            cfg.cache = false;
        }
        let p = &mut cfg.pipeline;
        if let Some(v) = self.p1 {
            p.sgm.p1 = v;
        }
        if let Some(v) = self.p2 {
            p.sgm.p2 = v;
        }
        if let Some(v) = self.max_arm {
            p.cbca.max_arm = v;
        }
        if let Some(v) = self.tau_color {
            p.cbca.tau_color = v;
        }
        if let Some(v) = self.cbca_iters {
            p.cbca.iterations = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs `f` on every entry in parallel; results keep manifest order.
fn for_entries<T: Send>(
    runner: &Runner,
    manifest: &DatasetManifest,
    f: impl Fn(&Pair) -> Result<T, CliError> + Sync,
) -> Vec<Result<T, CliError>> {
    let names = entry_names(&manifest.entries);
    manifest
        .entries
        .par_iter()
        .zip(names)
        .map(|(entry, name)| runner.load(name, entry).and_then(|pair| f(&pair)))
        .collect()
}

/// Logs failures and keeps successes.
fn split<T>(results: Vec<Result<T, CliError>>) -> Result<(Vec<T>, usize), CliError> {
    let mut ok = Vec::new();
    let mut failed = 0;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e @ CliError::Config(_)) => return Err(e),
            Err(e) => {
                error!("{e}");
                failed += 1;
            }
        }
    }
    Ok((ok, failed))
}

fn pipeline(common: &Common, body: impl FnOnce(Runner, DatasetManifest) -> Result<usize, CliError> + Send) -> Result<usize, CliError> {
    let cfg = common.resolve()?;
    let manifest = DatasetManifest::load(cfg.manifest_path()?).map_err(|e| CliError::Config(e.to_string()))?;
    if manifest.entries.is_empty() {
        return Err(CliError::Config("manifest has no entries".into()));
    }
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(out.clone(), e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let runner = Runner::new(cfg)?;
    pool.install(|| body(runner, manifest))
}

fn execute(command: Command) -> Result<usize, CliError> {
    match command {
        Command::ListMeasures => {
            let json = serde_json::to_string_pretty(&catalog()).expect("catalog serializes");
            println!("{json}");
            Ok(0)
        }
        Command::Match(common) => pipeline(&common, |runner, manifest| {
            let results = for_entries(&runner, &manifest, |pair| {
                let run = runner.match_pair(pair)?;
                let d1 = run::persist_match(&runner, pair, &run)?;
                Ok((pair.name.clone(), run.disparity.width(), run.disparity.height(), run.d_max(), d1))
            });
            let (rows, failed) = split(results)?;
            let mut csv = String::from("entry,width,height,d_max,d1_pct\n");
            for (name, w, h, d, d1) in rows {
                info!("{name}: D1 {:.2}%", 100.0 * d1);
                csv.push_str(&format!("{name},{w},{h},{d},{}\n", stereoconf::evalauc::x100(d1)));
            }
            write(&runner.cfg.out.join("match.csv"), &csv)?;
            Ok(failed)
        }),
        Command::Confidence(common) => pipeline(&common, |runner, manifest| {
            let ids = runner.cfg.measure_ids()?;
            let results = for_entries(&runner, &manifest, |pair| {
                let run = runner.match_pair(pair)?;
                let dir = runner.entry_dir(&pair.name)?;
                for conf in runner.confidences(&run, &ids, &pair.name)? {
                    run::save_confidence(&conf, &dir, &pair.name)?;
                }
                Ok(())
            });
            Ok(split(results)?.1)
        }),
        Command::Eval(common) => pipeline(&common, |runner, manifest| {
            let ids = runner.cfg.measure_ids()?;
            let results = for_entries(&runner, &manifest, |pair| run::evaluate_entry(&runner, pair, &ids));
            let (records, failed) = split(results)?;
            let records: Vec<_> = records.into_iter().flatten().collect();
            if records.is_empty() {
                error!("no entry could be evaluated");
                return Ok(failed.max(1));
            }
            let rep = report(records).map_err(|e| CliError::Entry {
                entry: "report".into(),
                source: e,
            })?;
            rep.write(&runner.cfg.out).map_err(|e| CliError::Entry {
                entry: "report".into(),
                source: e,
            })?;
            print!("{}", rep.to_markdown());
            Ok(failed)
        }),
        Command::Sparsify(common) => pipeline(&common, |runner, manifest| {
            let ids = runner.cfg.measure_ids()?;
            let results = for_entries(&runner, &manifest, |pair| run::curves_entry(&runner, pair, &ids));
            Ok(split(results)?.1)
        }),
        Command::Features { common, kind } => {
            let kind: StackKind = kind.parse().map_err(|e: stereoconf::Error| CliError::Config(e.to_string()))?;
            pipeline(&common, move |runner, manifest| {
                let single_file = runner.cfg.out.extension().is_some_and(|e| e == "stfeat");
                if single_file && manifest.entries.len() != 1 {
                    return Err(CliError::Config("a .stfeat output path needs a single-entry manifest".into()));
                }
                let results = for_entries(&runner, &manifest, |pair| {
                    let path = if single_file {
                        runner.cfg.out.clone()
                    } else {
                        runner.entry_dir(&pair.name)?.join(format!("{}.stfeat", kind.name()))
                    };
                    run::features_entry(&runner, pair, kind, &path)
                });
                Ok(split(results)?.1)
            })
        }
    }
}

fn write(path: &std::path::Path, text: &str) -> Result<(), CliError> {
    stereoconf::dataio::write_atomic(path, text.as_bytes()).map_err(|e| CliError::Entry {
        entry: "output".into(),
        source: e,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failed) => {
            error!("{failed} entr{} failed", if failed == 1 { "y" } else { "ies" });
            ExitCode::from(1)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
