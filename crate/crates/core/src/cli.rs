//! The `prior-forge` command line.
//!
//! Data goes to files or stdout, logs go to stderr as JSON lines, and a
//! failure ends with one JSON error object on stderr. Exit codes: 0 success,
//! 1 input or contract error, 2 usage or configuration error, 3 backend
//! failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::backends::sim::{synthetic_traces, DivergenceModel};
use crate::backends::{self, process, WorkerRequest, WorkerResponse};
use crate::earlystop::{calibrate, read_traces, unit_step_costs, write_traces};
use crate::error::{Error, Result};
use crate::matchloss::{loss_reference, LossCase, DEFAULT_TOP_K};
use crate::metrics::{area_density, center_histogram, evaluate, AreaDensity, CenterHistogram, PredictionRecord};
use crate::pipeline::export::{train_records, write_train_records};
use crate::pipeline::{self, read_records, write_records, DatasetRecord, RunConfig, Split, DEFAULT_SEED};
use crate::placement::select_top1_entry;
use crate::prior::{aggregate_class_prior, rasterize_heatmap, Heatmap, HeatmapParams, SpatialPrior};
use crate::verify::Detection;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "prior-forge", version, about = "Class-conditioned spatial prior extraction")]
pub struct Cli {
    /// Seed for every randomized step; overrides the config file's seed.
    /// Without either, 7.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker pool size. Defaults to the available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    /// In-process synthetic workers.
    Sim,
    /// Subprocess workers launched from PRIOR_FORGE_WORKER.
    Worker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImageFormat {
    Pgm,
    Png,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract priors for sampled (background, class) pairs into a dataset.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "sim")]
        backend: Backend,
        #[arg(long)]
        out: PathBuf,
        /// Failed-scene manifest. Defaults to `<out>.failed.jsonl`.
        #[arg(long)]
        failed: Option<PathBuf>,
    },
    /// Choose the early-stop step and threshold from labeled divergence traces.
    Calibrate {
        /// Labeled traces (JSON lines). Omit to draw synthetic traces.
        #[arg(long, required_unless_present = "synthetic")]
        traces: Option<PathBuf>,
        /// Number of synthetic traces to draw from the default model.
        #[arg(long, conflicts_with = "traces")]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 0.25)]
        success_fraction: f64,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        /// Also save the synthetic traces here.
        #[arg(long, requires = "synthetic")]
        save_traces: Option<PathBuf>,
        #[arg(long, default_value_t = 0.81)]
        target_recall: f64,
        /// Cost of a full inpainting run in step units.
        #[arg(long, default_value_t = 20.0)]
        full_cost: f64,
        /// Cumulative cost per step, comma separated. Defaults to one unit per step.
        #[arg(long, value_delimiter = ',')]
        step_costs: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score ranked predictions against a dataset's dense positives.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Optional PGM of the ground-truth center histogram.
        #[arg(long)]
        histogram_pgm: Option<PathBuf>,
    },
    /// Rasterize the aggregated prior of one class (or one scene) to an image.
    Heatmap {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        class: String,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to a single scene.
        #[arg(long)]
        scene: Option<String>,
        /// Output size in pixels. Defaults to the records' image side.
        #[arg(long)]
        size: Option<usize>,
        /// Defaults to the output extension, PGM otherwise.
        #[arg(long, value_enum)]
        format: Option<ImageFormat>,
        #[arg(long, default_value_t = 0.4)]
        conf_min: f64,
        #[arg(long, default_value_t = 0.0)]
        reward_min: f64,
    },
    /// Dataset summary: counts, splits, center histogram, area density.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 16)]
        bins: usize,
        #[arg(long, default_value_t = 16)]
        area_bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick one placement from a prior, avoiding the largest existing object.
    Place {
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        background_dets: Option<PathBuf>,
    },
    /// Emit reference loss values for a matching/loss case.
    LossRef {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the trainer-facing supervision file.
    ExportTrainset {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
    },
    /// Serve the simulator over the worker protocol on stdin/stdout.
    ServeSim {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Installs the JSON-lines stderr logger; `RUST_LOG` overrides the level.
pub fn init_logging() {
    let env = env_logger::Env::default().default_filter_or("info");
    let _ = env_logger::Builder::from_env(env)
        .format(|buf, record| {
            let line = serde_json::json!({
                "level": record.level().as_str(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .try_init();
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            report_error("usage", &e.kind().to_string());
            return EXIT_USAGE;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Worker(_) | Error::Protocol { .. } => EXIT_BACKEND,
        _ => EXIT_FAILURE,
    }
}

fn report_error(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{line}");
}

fn lanes(cli: &Cli) -> usize {
    cli.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn with_path(path: &Path, e: io::Error) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| with_path(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| with_path(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            serde_json::to_writer_pretty(&mut w, value)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        None => {
            let mut w = io::stdout().lock();
            serde_json::to_writer_pretty(&mut w, value)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    read_records(open(path)?)
}

/// Loads a run config; an unreadable or invalid file is a usage error.
fn load_config(cli: &Cli, path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::config(format!("{}: {other}", path.display())),
    })?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config, backend, out, failed } => cmd_run(cli, config, *backend, out, failed.as_deref()),
        Command::Calibrate {
            traces,
            synthetic,
            success_fraction,
            steps,
            save_traces,
            target_recall,
            full_cost,
            step_costs,
            out,
        } => {
            let traces = match (traces, synthetic) {
                (Some(path), _) => read_traces(open(path)?)?,
                (None, Some(n)) => {
                    let model = DivergenceModel::default();
                    let t = synthetic_traces(
                        &model,
                        *n,
                        *success_fraction,
                        *steps,
                        cli.seed.unwrap_or(DEFAULT_SEED),
                    );
                    if let Some(p) = save_traces {
                        let mut w = create(p)?;
                        write_traces(&mut w, &t)?;
                        w.flush()?;
                    }
                    t
                }
                (None, None) => return Err(Error::config("either --traces or --synthetic is required")),
            };
            let steps = traces.first().map_or(0, |t| t.deltas.len());
            let costs = step_costs.clone().unwrap_or_else(|| unit_step_costs(steps));
            let result = calibrate(&traces, &costs, *full_cost, *target_recall)?;
            log::info!(
                "calibrated step {} threshold {} speedup {:.3}",
                result.step,
                result.threshold,
                result.speedup
            );
            write_json(out.as_deref(), &result)
        }
        Command::Eval { pred, gt, report, histogram_pgm } => {
            let mut preds = Vec::new();
            for line in open(pred)?.lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    preds.push(serde_json::from_str::<PredictionRecord>(&line)?);
                }
            }
            let gt = read_dataset(gt)?;
            let rep = evaluate(&preds, &gt)?;
            if let Some(p) = histogram_pgm {
                let mut w = create(p)?;
                histogram_image(&rep.center_histogram).write_pgm(&mut w)?;
                w.flush()?;
            }
            write_json(Some(report), &rep)
        }
        Command::Heatmap { input, class, out, scene, size, format, conf_min, reward_min } => {
            let records = read_dataset(input)?;
            let params = HeatmapParams { conf_min: *conf_min, reward_min: *reward_min, ..HeatmapParams::default() };
            let priors: Vec<SpatialPrior> = records
                .iter()
                .filter(|r| &r.object_class == class)
                .filter(|r| scene.as_ref().is_none_or(|s| &r.scene_id == s))
                .map(DatasetRecord::to_prior)
                .collect();
            let side = size.unwrap_or_else(|| records.first().map_or(512, |r| r.image_side.round() as usize));
            let map = match (scene, priors.as_slice()) {
                (Some(_), [one]) => rasterize_heatmap(one, side, side, &params)?,
                _ => aggregate_class_prior(&priors, class, side, side, &params)?,
            };
            let format = format.unwrap_or_else(|| {
                match out.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
                    Some("png") => ImageFormat::Png,
                    _ => ImageFormat::Pgm,
                }
            });
            let mut w = create(out)?;
            match format {
                ImageFormat::Pgm => map.write_pgm(&mut w)?,
                ImageFormat::Png => map.write_png(&mut w)?,
            }
            w.flush()?;
            log::info!("heatmap of {} priors for {class} written to {}", priors.len(), out.display());
            Ok(())
        }
        Command::Stats { input, bins, area_bins, out } => {
            let records = read_dataset(input)?;
            write_json(out.as_deref(), &dataset_stats(&records, *bins, *area_bins))
        }
        Command::Place { prior, background_dets } => {
            let prior: SpatialPrior = read_json(prior)?;
            let dets: Vec<Detection> = match background_dets {
                Some(p) => read_json(p)?,
                None => Vec::new(),
            };
            let chosen = select_top1_entry(&prior, &dets);
            write_json(
                None,
                &serde_json::json!({
                    "box": chosen.map(|e| e.bbox),
                    "proposal": chosen.map(|e| e.proposal_index),
                    "reward": chosen.map(|e| e.reward),
                }),
            )
        }
        Command::LossRef { input, out } => {
            let case: LossCase = read_json(input)?;
            write_json(Some(out), &loss_reference(&case)?)
        }
        Command::ExportTrainset { input, out, top_k, split } => {
            let records = read_dataset(input)?;
            let train = train_records(&records, *top_k, split.map(Split::from));
            let mut w = create(out)?;
            write_train_records(&mut w, &train)?;
            w.flush()?;
            log::info!("exported {} of {} records", train.len(), records.len());
            Ok(())
        }
        Command::ServeSim { config } => {
            let cfg = load_config(cli, config)?;
            let world = cfg.sim_world(&cfg.taxonomy()?)?;
            serve(&world, io::stdin().lock(), io::stdout().lock())
        }
    }
}

fn cmd_run(cli: &Cli, config: &Path, backend: Backend, out: &Path, failed: Option<&Path>) -> Result<()> {
    let cfg = load_config(cli, config)?;
    let taxonomy = cfg.taxonomy()?;
    let lanes = lanes(cli);
    let mut pool = match backend {
        Backend::Sim => backends::sim_pool(Arc::new(cfg.sim_world(&taxonomy)?), lanes),
        Backend::Worker => {
            let (program, args) = process::command_from_env()?;
            backends::process_pool(&program, &args, &cfg.worker, lanes)
        }
    };
    log::info!("run: backend {backend:?}, {lanes} lanes, seed {}", cfg.seed);
    let run = pipeline::run_dataset(&cfg, &taxonomy, &mut pool)?;

    let mut w = create(out)?;
    write_records(&mut w, &run.records)?;
    w.flush()?;

    let failed_path = failed.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".failed.jsonl");
        PathBuf::from(s)
    });
    let mut fw = create(&failed_path)?;
    for f in &run.failed {
        serde_json::to_writer(&mut fw, f)?;
        fw.write_all(b"\n")?;
    }
    fw.flush()?;

    let summary = serde_json::json!({
        "records": run.records.len(),
        "positive_records": run.positive_records(),
        "failed": run.failed.len(),
        "out": out,
        "failed_manifest": failed_path,
    });
    println!("{summary}");
    if run.records.is_empty() && !run.failed.is_empty() {
        return Err(Error::Worker(format!("all {} scenes failed", run.failed.len())));
    }
    Ok(())
}

/// Answers protocol requests from `input` until EOF.
pub fn serve<R: BufRead, W: Write>(world: &backends::SimWorld, input: R, mut output: W) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<WorkerRequest>(&line) {
            Ok(req) => world.handle(&req),
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id")?.as_u64())
                    .unwrap_or(0);
                WorkerResponse::error(id, format!("bad request: {e}"))
            }
        };
        output.write_all(resp.to_line()?.as_bytes())?;
        output.flush()?;
    }
    Ok(())
}

fn histogram_image(h: &CenterHistogram) -> Heatmap {
    let values = h.counts.iter().flatten().map(|&c| c as f64).collect();
    Heatmap { width: h.bins, height: h.bins, values }.normalized()
}

#[derive(Debug, Serialize)]
pub struct DatasetStats {
    pub records: usize,
    pub positive_records: usize,
    pub positives: usize,
    pub negatives: usize,
    pub splits: BTreeMap<String, usize>,
    pub object_classes: BTreeMap<String, usize>,
    pub center_histogram: CenterHistogram,
    pub area_density: AreaDensity,
}

pub fn dataset_stats(records: &[DatasetRecord], bins: usize, area_bins: usize) -> DatasetStats {
    let positives: usize = records.iter().map(DatasetRecord::positive_count).sum();
    let total: usize = records.iter().map(|r| r.entries.len()).sum();
    let mut splits = BTreeMap::new();
    let mut object_classes = BTreeMap::new();
    for r in records {
        let split = serde_json::to_value(r.split).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        *splits.entry(split).or_insert(0) += 1;
        *object_classes.entry(r.object_class.clone()).or_insert(0) += 1;
    }
    DatasetStats {
        records: records.len(),
        positive_records: records.iter().filter(|r| r.positive_count() > 0).count(),
        positives,
        negatives: total - positives,
        splits,
        object_classes,
        center_histogram: center_histogram(records, bins),
        area_density: area_density(records, area_bins),
    }
}
