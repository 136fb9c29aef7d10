use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use fsl_core::analytics::{
    comm_cost, linspace, standard_algorithms, sweep_bound, ArchSpec, BoundRow, CostAlgorithm,
    CostReport,
};
use fsl_core::prng::ALGORITHM_ID;
use fsl_core::protocols::{RoundRecord, Simulator};
use fsl_core::FslError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, FileConfig};
use crate::report;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fsl(#[from] FslError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("usage: {0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    pub manifest: PathBuf,
    pub records: PathBuf,
    pub results: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            manifest: dir.join(MANIFEST_FILE),
            records: dir.join(RECORDS_FILE),
            results: dir.join(RESULTS_FILE),
        }
    }
}

/// Written before the first round and rewritten with `finished` at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub generator: String,
    pub started: String,
    pub finished: Option<String>,
    pub workers: usize,
    pub outputs: OutputPaths,
    pub config: FileConfig,
}

impl RunManifest {
    fn write(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&self.outputs.manifest, text + "\n")
            .map_err(io_err(format!("writing {}", self.outputs.manifest.display())))
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Reads a TOML config, or the `config` section of a previous run's manifest.
pub fn load_config(path: &Path) -> Result<FileConfig, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        return Ok(manifest.config);
    }
    Ok(FileConfig::load(path)?)
}

pub struct RunOptions {
    pub workers: usize,
    pub seed_override: Option<u32>,
}

/// Runs an experiment into `out_dir`; returns the evaluation records.
pub fn cmd_run(config: FileConfig, out_dir: &Path, opts: &RunOptions) -> Result<Vec<RoundRecord>, CliError> {
    let mut config = config;
    if let Some(seed) = opts.seed_override {
        config.seed = seed;
    }
    let experiment = config.resolve()?;
    std::fs::create_dir_all(out_dir).map_err(io_err(format!("creating {}", out_dir.display())))?;
    let outputs = OutputPaths::in_dir(out_dir);
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        generator: ALGORITHM_ID.to_string(),
        started: now(),
        finished: None,
        workers: opts.workers,
        outputs: outputs.clone(),
        config,
    };
    manifest.write()?;

    let sim = Simulator::new(experiment, opts.workers)?;
    let file = File::create(&outputs.records).map_err(io_err(format!("creating {}", outputs.records.display())))?;
    let mut jsonl = BufWriter::new(file);
    let mut write_err = None;
    let (_, records) = sim.run_with(|rec| {
        if write_err.is_none() {
            let line = serde_json::to_string(rec).expect("record serializes");
            if let Err(e) = writeln!(jsonl, "{line}").and_then(|_| jsonl.flush()) {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(format!("writing {}", outputs.records.display()))(e));
    }

    let file = File::create(&outputs.results).map_err(io_err(format!("creating {}", outputs.results.display())))?;
    let mut csv = BufWriter::new(file);
    report::write_results(&mut csv, &records)
        .and_then(|_| csv.flush())
        .map_err(io_err(format!("writing {}", outputs.results.display())))?;

    manifest.finished = Some(now());
    manifest.write()?;
    Ok(records)
}

pub struct BoundArgs {
    pub n: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub p_steps: usize,
    pub alphas: Vec<f64>,
}

pub fn cmd_bound(args: &BoundArgs) -> Result<Vec<BoundRow>, CliError> {
    if args.alphas.is_empty() {
        return Err(CliError::Usage("at least one alpha is required".into()));
    }
    if args.p_steps == 0 {
        return Err(CliError::Usage("p-steps must be at least 1".into()));
    }
    if args.p_min > args.p_max {
        return Err(CliError::Usage(format!(
            "p-min {} exceeds p-max {}",
            args.p_min, args.p_max
        )));
    }
    let grid = linspace(args.p_min, args.p_max, args.p_steps);
    Ok(sweep_bound(args.n, &grid, &args.alphas)?)
}

pub enum ArchChoice {
    Preset(String),
    Counts(Vec<u64>),
}

pub fn cmd_commcost(arch: &ArchChoice) -> Result<(ArchSpec, Vec<(CostAlgorithm, CostReport)>), CliError> {
    let spec = match arch {
        ArchChoice::Preset(name) => ArchSpec::preset(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown preset `{name}`; expected one of {}",
                ArchSpec::preset_names().join(", ")
            ))
        })?,
        ArchChoice::Counts(counts) => ArchSpec::new("custom", counts.clone())?,
    };
    let rows = standard_algorithms()
        .into_iter()
        .map(|alg| (alg, comm_cost(&spec, alg, 32)))
        .collect();
    Ok((spec, rows))
}
