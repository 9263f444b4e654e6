//! `infill`: dataset building, masking, GP training and masked evaluation.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use infill_core::ingest::Split;
use infill_core::{GeoPoint, Region};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "infill", version, about = "Masked mineral-occurrence infilling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate clustered synthetic occurrence records.
    Synth(SynthArgs),
    /// Sample, rasterize, split and deduplicate windows into a dataset.
    Build(BuildArgs),
    /// Draw and persist one evaluation mask per dataset window.
    Mask(MaskArgs),
    /// Train the sparse variational GP classifier.
    TrainGp(TrainArgs),
    /// Write prediction grids for one split.
    Predict(PredictArgs),
    /// Score prediction grids or a model on the masked cells of one split.
    Eval(EvalArgs),
    /// Score a model at several test-time masking aggressiveness levels.
    SweepAggro(SweepArgs),
    /// Progressive-unmasking, influence or co-occurrence matrices.
    Matrix(MatrixArgs),
    /// Composite discovery/masking/recovery loss on stored tensors.
    SrmmLoss(SrmmArgs),
    /// Binned presence map over a lattice dataset.
    Map(MapArgs),
    /// Re-run a command from its run.json.
    Replay(ReplayArgs),
}

fn parse_point(s: &str) -> Result<GeoPoint, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [lon, lat] = parts.as_slice() else {
        return Err(format!("expected lon,lat, got {s:?}"));
    };
    let lon: f64 = lon.parse().map_err(|e| format!("longitude {lon:?}: {e}"))?;
    let lat: f64 = lat.parse().map_err(|e| format!("latitude {lat:?}: {e}"))?;
    Ok(GeoPoint::new(lon, lat))
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    /// Bounding box `lon1,lat1,lon2,lat2`.
    #[arg(long, allow_hyphen_values = true)]
    region: Region,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML file with generator settings; region and seed come from the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Expected clusters per 10^4 square miles.
    #[arg(long)]
    cluster_rate: Option<f64>,
    #[arg(long)]
    points_per_cluster: Option<f64>,
    #[arg(long)]
    scatter_mi: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct BuildArgs {
    /// Newline-delimited JSON records.
    #[arg(long)]
    records: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    region: Region,
    /// Number of sampled windows.
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    side_px: usize,
    #[arg(long, default_value_t = 1.0)]
    resolution_mi: f64,
    /// Centre of the held-out square; without it the split is random.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    ood_center: Option<GeoPoint>,
    #[arg(long, default_value_t = 300.0)]
    ood_side_mi: f64,
    #[arg(long, default_value_t = 50.0)]
    annulus_mi: f64,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    test_frac: f64,
    /// Tile the region with abutting windows at this stride instead of
    /// sampling; every window is tagged test.
    #[arg(long)]
    lattice_stride_mi: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct MaskArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    aggro: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// TOML training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Number of inducing points.
    #[arg(long)]
    inducing: Option<usize>,
    /// Masking aggressiveness for training tiles and the validation sweep.
    #[arg(long)]
    aggro: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Which model produces the probabilities.
#[derive(Debug, Args, Serialize)]
#[group(required = true, multiple = false)]
struct ModelSource {
    /// GP checkpoint directory.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Reference model: `copy-input` or `constant:P`.
    #[arg(long)]
    baseline: Option<String>,
}

/// Masks read from disk or drawn on the fly.
#[derive(Debug, Args, Serialize)]
struct MaskSource {
    /// Mask set written by `infill mask`.
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    aggro: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    source: ModelSource,
    #[command(flatten)]
    masks: MaskSource,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Prediction set from any model.
    #[arg(long, conflicts_with_all = ["model", "baseline"])]
    preds: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    baseline: Option<String>,
    #[command(flatten)]
    masks: MaskSource,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Decision threshold; defaults to the model's own or 0.5.
    #[arg(long = "grid-T")]
    grid_t: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    source: ModelSource,
    /// Comma-separated aggressiveness values.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0")]
    grid: Vec<f64>,
    /// Mask draws per window at each level.
    #[arg(long, default_value_t = 1)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MatrixKind {
    Progressive,
    Influence,
    Cooccurrence,
}

#[derive(Debug, Args, Serialize)]
struct MatrixArgs {
    #[arg(value_enum)]
    kind: MatrixKind,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, conflicts_with = "model")]
    baseline: Option<String>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SrmmArgs {
    /// Discovery probabilities (.m3t, f32 or f64).
    #[arg(long)]
    p_d: PathBuf,
    /// Masking probabilities.
    #[arg(long)]
    p_phi: PathBuf,
    /// Recovery probabilities.
    #[arg(long)]
    p_r: PathBuf,
    /// Sampled mask bits (.m3t, u8).
    #[arg(long)]
    z: PathBuf,
    #[arg(long = "grid-T", default_value_t = 0.5)]
    grid_t: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct MapArgs {
    /// Dataset built with `--lattice-stride-mi`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, conflicts_with_all = ["model", "baseline"])]
    preds: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long = "grid-T")]
    grid_t: Option<f64>,
    #[arg(long, default_value_t = 5.0)]
    bin_mi: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ReplayArgs {
    /// A run.json written by an earlier command.
    manifest: PathBuf,
    /// Output directory for the replay; defaults to the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn dispatch(argv: Vec<String>) -> ExitCode {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli.command, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    dispatch(std::env::args().collect())
}
