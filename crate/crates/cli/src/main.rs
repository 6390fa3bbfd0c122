use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use firecast_core::GeoPoint;

mod commands;
mod config;
mod font;
mod plot;
mod provenance;

use commands::PlotKind;
use config::{EvalFire, RunConfig};

/// Probabilistic fire arrival time reconstruction from sparse satellite
/// detections.
#[derive(Parser)]
#[command(name = "firecast", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; flags override its values.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output root for all artifacts.
    #[arg(long, short, global = true, env = "FIRECAST_OUTPUT")]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pixels per side of the 12.8 km domain.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// More log output (repeat for debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate fires and build the training dataset.
    Synth(SynthArgs),
    /// Train the conditional generator and critic.
    Train(TrainArgs),
    /// Sample an ensemble for one measurement and summarize it.
    Infer(InferArgs),
    /// Turn detection records into a measurement raster.
    Ingest(IngestArgs),
    /// Score mean arrival maps against reference perimeters.
    Eval(EvalArgs),
    /// Compare ensembles conditioned on true and flat terrain.
    Ablate(AblateArgs),
    /// Render rasters or histograms to PNG.
    Plot(PlotArgs),
    /// Print the fully resolved configuration as TOML.
    Config,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n_fires: Option<usize>,
    #[arg(long)]
    val_fires: Option<usize>,
    #[arg(long)]
    augment_factor: Option<usize>,
    #[arg(long)]
    meas_factor: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory [default: <output>/dataset].
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Ignore an existing checkpoint and start from scratch.
    #[arg(long)]
    fresh: bool,
}

#[derive(Args)]
struct InferArgs {
    /// Generator checkpoint [default: <output>/train/checkpoint.bin].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Measurement raster in hours since ignition.
    #[arg(long)]
    measurement: PathBuf,
    /// Terrain raster in meters.
    #[arg(long)]
    terrain: PathBuf,
    /// Ensemble size.
    #[arg(long, short)]
    k: Option<usize>,
    /// Name of the output directory under <output>/infer.
    #[arg(long, default_value = "fire")]
    name: String,
}

#[derive(Args)]
struct IngestArgs {
    /// Detection record CSV (lat,lon,time,confidence,source,footprint).
    #[arg(long)]
    records: PathBuf,
    /// Domain center as LAT,LON.
    #[arg(long, value_parser = parse_center)]
    center: GeoPoint,
    /// Approximate start time (ISO-8601, UTC).
    #[arg(long)]
    start_hint: String,
    /// Initial half-width of the ignition search window in hours.
    #[arg(long)]
    window_hours: Option<f64>,
    #[arg(long, default_value = "fire")]
    name: String,
}

#[derive(Args)]
struct EvalArgs {
    /// Mean arrival raster to score (adds one fire to the configured list).
    #[arg(long, requires = "time")]
    mean: Option<PathBuf>,
    /// Reference perimeter polygons.
    #[arg(long, conflicts_with = "truth")]
    perimeter: Option<PathBuf>,
    /// Reference arrival raster.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Hours since ignition of the reference.
    #[arg(long)]
    time: Option<f64>,
    #[arg(long, default_value = "fire")]
    name: String,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    cases: Option<usize>,
    #[arg(long, short)]
    k: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// Histogram half-width in hours.
    #[arg(long)]
    range: Option<f64>,
}

#[derive(Args)]
struct PlotArgs {
    /// Raster (.fcr) or histogram (.csv, ablation .json) files.
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    kind: PlotKind,
    /// Output file (one input or panels) or directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_center(s: &str) -> Result<GeoPoint, String> {
    let (lat, lon) = s.split_once(',').ok_or("expected LAT,LON")?;
    let lat: f64 = lat.trim().parse().map_err(|e| format!("latitude: {e}"))?;
    let lon: f64 = lon.trim().parse().map_err(|e| format!("longitude: {e}"))?;
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(format!("{lat},{lon} is not a valid coordinate"));
    }
    Ok(GeoPoint::new(lat, lon))
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let mut cfg = RunConfig::load(g.config.as_deref())?;
    set(&mut cfg.output, g.output.clone());
    set(&mut cfg.seed, g.seed);
    set(&mut cfg.resolution, g.resolution);
    match cli.command {
        Command::Synth(a) => {
            set(&mut cfg.dataset.n_fires, a.n_fires);
            set(&mut cfg.dataset.val_fires, a.val_fires);
            set(&mut cfg.dataset.augment_factor, a.augment_factor);
            set(&mut cfg.dataset.meas_factor, a.meas_factor);
            cfg.validate()?;
            commands::synth(&cfg)?;
        }
        Command::Train(a) => {
            set(&mut cfg.train.epochs, a.epochs);
            set(&mut cfg.train.batch, a.batch);
            set(&mut cfg.train.adam.lr, a.lr);
            set(&mut cfg.train.checkpoint_every, a.checkpoint_every);
            cfg.validate()?;
            let dataset = a.dataset.unwrap_or_else(|| commands::dataset_dir(&cfg));
            commands::train(&cfg, &dataset, a.fresh)?;
        }
        Command::Infer(a) => {
            set(&mut cfg.infer.k, a.k);
            cfg.validate()?;
            let ckpt = a.checkpoint.unwrap_or_else(|| commands::checkpoint_path(&cfg));
            commands::infer(&cfg, &ckpt, &a.measurement, &a.terrain, &a.name)?;
        }
        Command::Ingest(a) => {
            set(&mut cfg.ingest.search.window_hours, a.window_hours);
            cfg.validate()?;
            commands::ingest(&cfg, &a.records, a.center, &a.start_hint, &a.name)?;
        }
        Command::Eval(a) => {
            cfg.validate()?;
            let mut fires = cfg.eval.fires.clone();
            if let Some(mean) = a.mean {
                if a.perimeter.is_none() && a.truth.is_none() {
                    bail!("--mean needs --perimeter or --truth");
                }
                fires.push(EvalFire {
                    name: a.name,
                    mean,
                    perimeter: a.perimeter,
                    truth: a.truth,
                    time_h: a.time.expect("clap enforces --time"),
                });
            }
            commands::eval(&cfg, &fires)?;
        }
        Command::Ablate(a) => {
            set(&mut cfg.ablate.cases, a.cases);
            set(&mut cfg.ablate.k, a.k);
            set(&mut cfg.ablate.bins, a.bins);
            set(&mut cfg.ablate.range_h, a.range);
            cfg.validate()?;
            let ckpt = a.checkpoint.unwrap_or_else(|| commands::checkpoint_path(&cfg));
            let dataset = a.dataset.unwrap_or_else(|| commands::dataset_dir(&cfg));
            commands::ablate(&cfg, &ckpt, &dataset)?;
        }
        Command::Plot(a) => {
            commands::plot(&a.paths, a.kind, a.out.as_deref())?;
        }
        Command::Config => {
            cfg.validate()?;
            print!("{}", toml::to_string(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
