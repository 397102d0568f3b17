mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mdrnn::analysis::UnitSelection;
use mdrnn::data::DeformParams;
use mdrnn::exec::Execution;
use mdrnn::Error;

use commands::{DataSource, EvalArgs, InspectArgs, JacobianArgs, Status};

/// Multi-dimensional recurrent networks for pixel-wise image labelling.
#[derive(Parser)]
#[command(name = "mdrnn", version)]
struct Cli {
    /// Worker threads for evaluation, deformation and per-direction passes.
    /// Results are identical for every value.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    workers: u16,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// IDX image file.
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file matching --images.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// File of `image labelmap` path pairs.
    #[arg(long)]
    list: Option<PathBuf>,
    /// Palette of `class R G B` lines for --list.
    #[arg(long)]
    palette: Option<PathBuf>,
    /// Foreground threshold for digit targets.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    /// Use only the first N items.
    #[arg(long)]
    limit: Option<usize>,
}

impl From<Source> for DataSource {
    fn from(s: Source) -> Self {
        DataSource {
            images: s.images,
            labels: s.labels,
            list: s.list,
            palette: s.palette,
            threshold: s.threshold,
            limit: s.limit,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file, writing best.ckpt, final.ckpt, train.log and
    /// validation_report.txt to its output_dir.
    #[command(after_help = config::key_help())]
    Train {
        /// Flat `key = value` config file.
        config: PathBuf,
        /// Override a config key, e.g. `--set seed=3`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint and print its report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        source: Source,
        /// Write per-sequence predictions as CSV.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Write the confusion matrix as CSV.
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Elastically deform every image of an IDX file.
    Deform {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 4.0)]
        sigma: f64,
        #[arg(long, default_value_t = 34.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the input sensitivity map of one output unit at one point.
    Jacobian {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        source: Source,
        /// Item of the data source.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Focus point as comma-separated coordinates, e.g. `14,9`.
        #[arg(long, value_parser = parse_point)]
        point: Point,
        #[arg(long)]
        class: usize,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Show parameter counts for a preset or a checkpoint; optionally dump
    /// hidden-unit activation rasters.
    Inspect {
        /// `mnist` or `texture`.
        #[arg(long)]
        preset: Option<String>,
        /// Memory blocks per direction for --preset.
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Units to dump as `direction:unit`, comma-separated.
        #[arg(long, value_parser = parse_unit, value_delimiter = ',')]
        units: Vec<UnitSelection>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Compare analytic gradients against central finite differences for
    /// both layer kinds, 1 to 3 dimensions, one and all directions.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use larger grids.
        #[arg(long)]
        larger: bool,
        /// Offset one analytic gradient so the check must fail.
        #[arg(long)]
        corrupt: bool,
    },
}

#[derive(Clone, Debug)]
struct Point(Vec<usize>);

fn parse_point(s: &str) -> Result<Point, String> {
    s.split(',')
        .map(|c| {
            c.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad coordinate `{c}`"))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Point)
}

fn parse_unit(s: &str) -> Result<UnitSelection, String> {
    let (d, u) = s
        .split_once(':')
        .ok_or_else(|| format!("expected `direction:unit`, got `{s}`"))?;
    let num = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad number `{v}`"))
    };
    Ok(UnitSelection {
        direction: num(d)?,
        unit: num(u)?,
    })
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Precondition(_) => 1,
        Error::Numerical { .. } => 3,
        _ => 2,
    }
}

fn run(command: Command, exec: Execution) -> mdrnn::Result<Status> {
    match command {
        Command::Train { config, overrides } => commands::train(&config, &overrides, exec),
        Command::Eval {
            checkpoint,
            source,
            predictions,
            confusion,
        } => commands::eval(
            &EvalArgs {
                checkpoint,
                source: source.into(),
                predictions,
                confusion,
            },
            exec,
        ),
        Command::Deform {
            input,
            output,
            sigma,
            alpha,
            seed,
        } => commands::deform(&input, &output, DeformParams { sigma, alpha, seed }, exec),
        Command::Jacobian {
            checkpoint,
            source,
            index,
            point,
            class,
            output_dir,
        } => commands::jacobian_cmd(
            &JacobianArgs {
                checkpoint,
                source: source.into(),
                index,
                point: point.0,
                class,
                output_dir,
            },
            exec,
        ),
        Command::Inspect {
            preset,
            blocks,
            checkpoint,
            source,
            index,
            units,
            output_dir,
        } => commands::inspect(
            &InspectArgs {
                preset,
                blocks,
                checkpoint,
                source: source.into(),
                index,
                units,
                output_dir,
            },
            exec,
        ),
        Command::Gradcheck {
            seed,
            larger,
            corrupt,
        } => commands::gradcheck(seed, larger, corrupt, exec),
    }
}

#[cfg(feature = "parallel")]
fn run_with_workers(workers: usize, command: Command) -> mdrnn::Result<Status> {
    if workers == 1 {
        return run(command, Execution::Sequential);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| run(command, Execution::Parallel))
}

#[cfg(not(feature = "parallel"))]
fn run_with_workers(workers: usize, command: Command) -> mdrnn::Result<Status> {
    if workers > 1 {
        eprintln!("built without the `parallel` feature; running on one thread");
    }
    run(command, Execution::Sequential)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run_with_workers(cli.workers as usize, cli.command) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
