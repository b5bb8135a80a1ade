//! Command-line surface: `synth`, `run` and `bench`.
//!
//! Configuration precedence for `run` and `bench`: built-in defaults, then the
//! TOML file given by `--config`, then explicit flags. When no layer sets `k`
//! and the dataset has labels, `k` is the number of classes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{self, Benchmark, MultiViewDataset, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::pipeline::{self, ClusteringResult, PipelineConfig, RoundTrace};
use crate::weighting::WeightingMode;

/// Version of the `report.json` layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "cemvc", version, about = "Entropy-weighted, parameter-decoupled multi-view clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-view dataset.
    Synth(SynthArgs),
    /// Cluster a dataset and write a report directory.
    Run(RunArgs),
    /// Compare CE-MVC and the shared baseline on clean and noisy benchmarks.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Number of informative views.
    #[arg(long, default_value_t = 2)]
    pub views: usize,
    /// One width for every view, or a comma-separated width per view.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 8.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub noise_views: usize,
    /// Width of each noise view [default: mean informative width].
    #[arg(long)]
    pub noise_dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Cemvc,
    Shared,
    Ablation,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML file with any subset of the pipeline configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory under which the timestamped run directory is created.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Mode::Cemvc)]
    pub mode: Mode,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub weighting: Option<WeightingMode>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value = "noisy3view")]
    pub preset: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let manifest = cmd_synth(&args)?;
            println!("{}", manifest.display());
        }
        Command::Run(args) => {
            let dir = cmd_run(&args)?;
            println!("{}", dir.display());
        }
        Command::Bench(args) => {
            cmd_bench(&args)?;
            println!("{}", args.out.display());
        }
    }
    Ok(())
}

/// Writes the dataset files and returns the manifest path.
pub fn cmd_synth(args: &SynthArgs) -> Result<PathBuf> {
    let dims = match args.dims.len() {
        1 => vec![args.dims[0]; args.views],
        l if l == args.views => args.dims.clone(),
        l => {
            return Err(Error::InvalidInput(format!(
                "--dims lists {l} widths for {} views",
                args.views
            )))
        }
    };
    let mut dataset = data::synth_multiview(&SynthSpec {
        n: args.n,
        k: args.k,
        dims,
        separation: args.separation,
        seed: args.seed,
    })?;
    let noise_dim = args.noise_dim.unwrap_or_else(|| data::default_noise_dim(&dataset));
    for i in 0..args.noise_views {
        dataset = data::inject_noise_view(&dataset, noise_dim, data::noise_seed(args.seed, i as u64))?;
    }
    data::save_multiview(&dataset, &args.out)
}

fn read_config_file(path: &Path) -> Result<(PipelineConfig, bool)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |e: toml::de::Error| Error::Parse {
        path: path.to_path_buf(),
        line: e
            .span()
            .map_or(0, |s| text[..s.start].matches('\n').count() + 1),
        message: e.message().to_string(),
    };
    let table: toml::Table = toml::from_str(&text).map_err(parse_err)?;
    let sets_k = table.contains_key("k");
    let cfg: PipelineConfig = toml::from_str(&text).map_err(parse_err)?;
    Ok((cfg, sets_k))
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(args: &RunArgs, dataset: &MultiViewDataset) -> Result<PipelineConfig> {
    let (mut cfg, mut has_k) = match &args.config {
        Some(p) => read_config_file(p)?,
        None => (PipelineConfig::default(), false),
    };
    if let Some(k) = args.k {
        cfg.k = k;
        has_k = true;
    }
    if !has_k {
        if let Some(classes) = dataset.class_count() {
            cfg.k = classes;
        }
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = args.weighting {
        cfg.weighting_mode = mode;
    }
    cfg.decoupled = args.mode != Mode::Shared;
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct Invocation<'a> {
    command: &'static str,
    config: Option<&'a Path>,
    data: &'a Path,
    out: &'a Path,
    seed: Option<u64>,
    mode: Mode,
}

#[derive(Debug, Serialize)]
struct DatasetSummary<'a> {
    name: &'a str,
    n: usize,
    view_dims: Vec<usize>,
    has_labels: bool,
}

#[derive(Debug, Serialize)]
struct ResultReport<'a> {
    metrics: Option<&'a MetricReport>,
    iterations: usize,
    converged: bool,
    final_weights: &'a [f64],
    embedding_file: String,
    traces: &'a [RoundTrace],
    labels: &'a [usize],
}

#[derive(Debug, Serialize)]
struct RunReport<'a> {
    schema_version: u32,
    invocation: Invocation<'a>,
    dataset: DatasetSummary<'a>,
    config: &'a PipelineConfig,
    results: BTreeMap<&'static str, ResultReport<'a>>,
}

/// Creates `out/run-<UTC timestamp>[-<n>]`, never reusing an existing directory.
fn create_run_dir(out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    for attempt in 0.. {
        let name = if attempt == 0 {
            format!("run-{stamp}")
        } else {
            format!("run-{stamp}-{attempt}")
        };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!("unbounded attempt counter")
}

/// Runs the selected pipeline and returns the new run directory, which holds
/// `report.json` and one `embedding_<key>.csv` per result.
pub fn cmd_run(args: &RunArgs) -> Result<PathBuf> {
    let dataset = data::load_multiview(&args.data)?;
    let cfg = resolve_config(args, &dataset)?;
    let results: Vec<(&'static str, ClusteringResult)> = match args.mode {
        Mode::Cemvc => vec![("cemvc", pipeline::run(&dataset, &cfg)?)],
        Mode::Shared => vec![("shared", pipeline::run(&dataset, &cfg)?)],
        Mode::Ablation => pipeline::run_ablation(&dataset, &cfg)?
            .into_iter()
            .map(|(m, r)| (m.name(), r))
            .collect(),
    };

    let dir = create_run_dir(&args.out)?;
    let mut blocks = BTreeMap::new();
    for (key, r) in &results {
        let embedding_file = format!("embedding_{key}.csv");
        data::write_csv_matrix(&dir.join(&embedding_file), &r.embedding)?;
        blocks.insert(
            *key,
            ResultReport {
                metrics: r.metrics.as_ref(),
                iterations: r.traces.len(),
                converged: r.converged,
                final_weights: &r.weights,
                embedding_file,
                traces: &r.traces,
                labels: &r.labels,
            },
        );
    }
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        invocation: Invocation {
            command: "run",
            config: args.config.as_deref(),
            data: &args.data,
            out: &args.out,
            seed: args.seed,
            mode: args.mode,
        },
        dataset: DatasetSummary {
            name: dataset.name(),
            n: dataset.len(),
            view_dims: dataset.view_dims(),
            has_labels: dataset.labels().is_some(),
        },
        config: &cfg,
        results: blocks,
    };
    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidInput(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(dir)
}

/// One line of the bench table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: &'static str,
    pub variant: &'static str,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub nmi_mean: f64,
    pub nmi_std: f64,
    /// `noisy − clean` mean ACC of the same method; 0 on clean rows.
    pub acc_delta: f64,
    pub nmi_delta: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Seeds `0..seeds`; per seed, both methods on the clean and the noisy twin.
pub fn bench_rows(preset: &Benchmark, cfg: &PipelineConfig, seeds: u64) -> Result<Vec<BenchRow>> {
    if seeds == 0 {
        return Err(Error::InvalidInput("--seeds must be >= 1".into()));
    }
    let per_seed: Vec<[MetricReport; 4]> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let cfg = PipelineConfig {
                k: preset.k,
                seed,
                ..cfg.clone()
            };
            let clean = preset.clean(seed)?;
            let noisy = preset.noisy(seed)?;
            let metric = |r: ClusteringResult| r.metrics.expect("benchmark data carries labels");
            Ok([
                metric(pipeline::run_cemvc(&clean, &cfg)?),
                metric(pipeline::run_cemvc(&noisy, &cfg)?),
                metric(pipeline::run_shared_baseline(&clean, &cfg)?),
                metric(pipeline::run_shared_baseline(&noisy, &cfg)?),
            ])
        })
        .collect::<Result<_>>()?;

    let summary = |i: usize| {
        let acc: Vec<f64> = per_seed.iter().map(|m| m[i].acc).collect();
        let nmi: Vec<f64> = per_seed.iter().map(|m| m[i].nmi).collect();
        (mean_std(&acc), mean_std(&nmi))
    };
    let mut rows = Vec::with_capacity(4);
    for (m, method) in ["cemvc", "shared"].into_iter().enumerate() {
        let ((clean_acc, clean_acc_sd), (clean_nmi, clean_nmi_sd)) = summary(2 * m);
        let ((noisy_acc, noisy_acc_sd), (noisy_nmi, noisy_nmi_sd)) = summary(2 * m + 1);
        rows.push(BenchRow {
            method,
            variant: "clean",
            acc_mean: clean_acc,
            acc_std: clean_acc_sd,
            nmi_mean: clean_nmi,
            nmi_std: clean_nmi_sd,
            acc_delta: 0.0,
            nmi_delta: 0.0,
        });
        rows.push(BenchRow {
            method,
            variant: "noisy",
            acc_mean: noisy_acc,
            acc_std: noisy_acc_sd,
            nmi_mean: noisy_nmi,
            nmi_std: noisy_nmi_sd,
            acc_delta: noisy_acc - clean_acc,
            nmi_delta: noisy_nmi - clean_nmi,
        });
    }
    Ok(rows)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let preset = Benchmark::preset(&args.preset).ok_or_else(|| {
        Error::InvalidInput(format!(
            "unknown preset {:?}; valid presets: {}",
            args.preset,
            Benchmark::PRESETS.join(", ")
        ))
    })?;
    let cfg = match &args.config {
        Some(p) => read_config_file(p)?.0,
        None => PipelineConfig::default(),
    };
    let rows = bench_rows(&preset, &cfg, args.seeds)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(&args.out).map_err(|e| Error::InvalidInput(format!("{}: {e}", args.out.display())))?;
    for row in &rows {
        w.serialize(row)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", args.out.display())))?;
    }
    w.flush().map_err(|e| Error::io(&args.out, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_matches_hand_values() {
        assert_eq!(mean_std(&[1.0]), (1.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cli_parses_modes_and_rejects_unknown() {
        let cli = Cli::try_parse_from(["cemvc", "run", "--data", "m.toml", "--out", "o", "--mode", "ablation"]).unwrap();
        match cli.command {
            Command::Run(a) => assert_eq!(a.mode, Mode::Ablation),
            _ => panic!("expected run"),
        }
        let err = Cli::try_parse_from(["cemvc", "run", "--data", "m", "--out", "o", "--mode", "bogus"]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cemvc") && msg.contains("shared") && msg.contains("ablation"), "{msg}");
    }

    #[test]
    fn dims_flag_must_match_views() {
        let dir = tempfile::tempdir().unwrap();
        let args = SynthArgs {
            n: 30,
            k: 3,
            views: 2,
            dims: vec![3, 4, 5],
            separation: 6.0,
            noise_views: 0,
            noise_dim: None,
            seed: 0,
            out: dir.path().to_path_buf(),
        };
        assert!(cmd_synth(&args).is_err());
        let ok = cmd_synth(&SynthArgs { dims: vec![3, 4], ..args }).unwrap();
        assert_eq!(data::load_multiview(&ok).unwrap().view_dims(), vec![3, 4]);
    }
}
