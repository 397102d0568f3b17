use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mdrnn::analysis::{dump_activations, jacobian, UnitSelection};
use mdrnn::checkpoint::{Checkpoint, RngState};
use mdrnn::data::{
    deform_idx, load_images, load_labelmap_pair, load_mnist, split_items, DeformParams, IdxFile,
    Palette, Sample,
};
use mdrnn::exec::Execution;
use mdrnn::gradcheck::{run_suite, TOLERANCE};
use mdrnn::grid::Coord;
use mdrnn::metrics::{evaluate, evaluate_detailed, predictions_csv};
use mdrnn::network::{count_parameters, Network};
use mdrnn::presets::{self, CountComparison};
use mdrnn::train::{fit, format_log};
use mdrnn::{Error, Result};

use crate::config::{RunConfig, Task};

/// Outcome of a command that ran to completion.
pub enum Status {
    Ok,
    /// A check ran and failed (gradient tolerance breached).
    CheckFailed,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

/// `image labelmap` per line, relative to the list's directory.
pub fn load_pair_list(list: &Path, palette: &Palette) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(list)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", list.display())))?;
    let base = list.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(Error::Data(format!(
                "{} line {}: expected `image labelmap`",
                list.display(),
                n + 1
            )));
        }
        out.push(load_labelmap_pair(
            &base.join(parts[0]),
            &base.join(parts[1]),
            palette,
        )?);
    }
    Ok(out)
}

fn take(mut v: Vec<Sample>, limit: Option<usize>) -> Vec<Sample> {
    if let Some(n) = limit {
        v.truncate(n);
    }
    v
}

struct Datasets {
    train: Vec<Sample>,
    validation: Vec<Sample>,
    test: Option<Vec<Sample>>,
    input_width: usize,
    classes: usize,
}

fn load_datasets(cfg: &RunConfig) -> Result<Datasets> {
    let (all, test, classes) = match cfg.task {
        Task::MnistPixels => {
            let all = load_mnist(
                cfg.train_images.as_ref().expect("checked"),
                cfg.train_labels.as_ref().expect("checked"),
                cfg.threshold,
                None,
            )?;
            let test = match (&cfg.test_images, &cfg.test_labels) {
                (Some(i), Some(l)) => Some(load_mnist(i, l, cfg.threshold, cfg.test_size)?),
                (None, None) => None,
                _ => {
                    return Err(Error::Config(
                        "test_images and test_labels go together".into(),
                    ))
                }
            };
            (all, test, mdrnn::data::MNIST_CLASSES)
        }
        Task::Labelmap => {
            let palette = Palette::load(cfg.palette.as_ref().expect("checked"))?;
            let all = load_pair_list(cfg.train_list.as_ref().expect("checked"), &palette)?;
            let test = cfg
                .test_list
                .as_ref()
                .map(|l| load_pair_list(l, &palette).map(|v| take(v, cfg.test_size)))
                .transpose()?;
            (all, test, palette.num_classes())
        }
    };
    let val = cfg.validation_size;
    let train_n = match cfg.train_size {
        Some(n) => n,
        None => all.len().saturating_sub(val),
    };
    let mut parts = split_items(&all, &[train_n, val], cfg.train.seed)?.into_iter();
    let train = parts.next().expect("two parts");
    let validation = parts.next().expect("two parts");
    if train.is_empty() {
        return Err(Error::Data("no training data".into()));
    }
    let input_width = train[0].input.width();
    Ok(Datasets {
        train,
        validation,
        test,
        input_width,
        classes,
    })
}

pub fn train(config: &Path, overrides: &[String], exec: Execution) -> Result<Status> {
    let cfg = RunConfig::load(config, overrides)?;
    cfg.check_paths()?;
    let data = load_datasets(&cfg)?;
    let net_cfg = cfg.network_config(data.input_width, data.classes);
    let net = Network::random(net_cfg, cfg.train.seed, cfg.init_range)?;
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", cfg.output_dir.display())))?;
    eprintln!(
        "training {} parameters on {} sequences, validating on {}",
        net.param_count(),
        data.train.len(),
        data.validation.len()
    );
    let result = fit(net, &data.train, &data.validation, &cfg.train, exec, |r| {
        eprintln!("{}", r.to_line());
    })?;

    let out = &cfg.output_dir;
    let checkpoint = |network: &Network, epochs: usize| Checkpoint {
        network: network.clone(),
        rng: RngState {
            seed: cfg.train.seed,
            epochs_completed: epochs as u64,
        },
        metadata: cfg.canonical.clone(),
    };
    checkpoint(&result.best, result.best_epoch).save(&out.join("best.ckpt"))?;
    checkpoint(&result.last, result.epochs_run).save(&out.join("final.ckpt"))?;
    write(&out.join("train.log"), format_log(&result.log))?;
    write(&out.join("config.txt"), &cfg.canonical)?;
    let report = evaluate(&result.best, &data.validation, exec)?;
    let mut text = format!("best_epoch = {}\n", result.best_epoch);
    text.push_str(&report.to_key_value());
    write(&out.join("validation_report.txt"), &text)?;
    write(
        &out.join("validation_confusion.csv"),
        report.confusion_csv(),
    )?;
    println!("{text}");
    if let Some(test) = &data.test {
        let report = evaluate(&result.best, test, exec)?;
        write(&out.join("test_report.txt"), report.to_key_value())?;
        println!("test:\n{}", report.to_key_value());
    }
    Ok(Status::Ok)
}

/// Where `eval`, `jacobian` and `inspect` read sequences from.
pub struct DataSource {
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub list: Option<PathBuf>,
    pub palette: Option<PathBuf>,
    pub threshold: f64,
    pub limit: Option<usize>,
}

impl DataSource {
    fn load(&self) -> Result<Vec<Sample>> {
        match (&self.images, &self.labels, &self.list, &self.palette) {
            (Some(i), Some(l), None, None) => load_mnist(i, l, self.threshold, self.limit),
            (None, None, Some(list), Some(p)) => {
                Ok(take(load_pair_list(list, &Palette::load(p)?)?, self.limit))
            }
            _ => Err(Error::Config(
                "give either --images with --labels, or --list with --palette".into(),
            )),
        }
    }

    /// One input sequence; labels are optional here.
    fn input(&self, index: usize) -> Result<mdrnn::grid::SequenceND> {
        let items = match (&self.images, &self.list) {
            (Some(i), _) => load_images(i)?,
            (None, Some(_)) => self.load()?.into_iter().map(|s| s.input).collect(),
            _ => return Err(Error::Config("give --images or --list".into())),
        };
        let n = items.len();
        items
            .into_iter()
            .nth(index)
            .ok_or_else(|| Error::Precondition(format!("index {index} out of range for {n} items")))
    }
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub source: DataSource,
    pub predictions: Option<PathBuf>,
    pub confusion: Option<PathBuf>,
}

pub fn eval(args: &EvalArgs, exec: Execution) -> Result<Status> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let data = args.source.load()?;
    let (report, rows) = evaluate_detailed(&ck.network, &data, exec)?;
    print!("{}", report.to_key_value());
    if let Some(p) = &args.predictions {
        write(p, predictions_csv(&rows))?;
    }
    if let Some(p) = &args.confusion {
        write(p, report.confusion_csv())?;
    }
    Ok(Status::Ok)
}

pub fn deform(
    input: &Path,
    output: &Path,
    params: DeformParams,
    exec: Execution,
) -> Result<Status> {
    let file = IdxFile::read(input)?;
    let out = deform_idx(&file, &params, exec)?;
    out.write(output)?;
    println!(
        "deformed {} images (sigma {}, alpha {}, seed {}) -> {}",
        out.dims[0],
        params.sigma,
        params.alpha,
        params.seed,
        output.display()
    );
    Ok(Status::Ok)
}

pub struct JacobianArgs {
    pub checkpoint: PathBuf,
    pub source: DataSource,
    pub index: usize,
    pub point: Vec<usize>,
    pub class: usize,
    pub output_dir: PathBuf,
}

pub fn jacobian_cmd(args: &JacobianArgs, exec: Execution) -> Result<Status> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let input = args.source.input(args.index)?;
    let focus = Coord::new(&args.point);
    let map = jacobian(&ck.network, &input, &focus, args.class, exec)?;
    std::fs::create_dir_all(&args.output_dir)?;
    let stem = format!(
        "jacobian_i{}_p{}_k{}",
        args.index,
        args.point
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join("-"),
        args.class
    );
    let png = args.output_dir.join(format!("{stem}.png"));
    let txt = args.output_dir.join(format!("{stem}.txt"));
    map.save(&png, &txt)?;
    println!("{}", png.display());
    Ok(Status::Ok)
}

pub struct InspectArgs {
    pub preset: Option<String>,
    pub blocks: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    pub source: DataSource,
    pub index: usize,
    pub units: Vec<UnitSelection>,
    pub output_dir: Option<PathBuf>,
}

pub fn inspect(args: &InspectArgs, exec: Execution) -> Result<Status> {
    let mut out = String::new();
    if let Some(name) = &args.preset {
        let (cfg, reference) = match name.as_str() {
            "mnist" => (
                presets::mnist(args.blocks.unwrap_or(presets::MNIST_BLOCKS)),
                presets::MNIST_REFERENCE_WEIGHTS,
            ),
            "texture" => (
                presets::texture(args.blocks.unwrap_or(presets::TEXTURE_BLOCKS)),
                presets::TEXTURE_REFERENCE_WEIGHTS,
            ),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (mnist or texture)"
                )))
            }
        };
        let _ = writeln!(out, "preset {name}: {cfg:?}");
        let _ = writeln!(out, "{}", CountComparison::new(&cfg, reference)?);
    }
    if let Some(path) = &args.checkpoint {
        let ck = Checkpoint::load(path)?;
        let cfg = ck.network.config();
        let _ = writeln!(out, "checkpoint {}", path.display());
        let _ = writeln!(out, "config {cfg:?}");
        let _ = writeln!(
            out,
            "seed {} epochs {}",
            ck.rng.seed, ck.rng.epochs_completed
        );
        let _ = writeln!(out, "{}", count_parameters(cfg)?);
        if !ck.metadata.is_empty() {
            let _ = writeln!(out, "metadata:\n{}", ck.metadata.trim_end());
        }
        if !args.units.is_empty() {
            let dir = args
                .output_dir
                .as_ref()
                .ok_or_else(|| Error::Config("--units needs --output-dir".into()))?;
            let input = args.source.input(args.index)?;
            let dump = dump_activations(&ck.network, &input, &args.units, exec)?;
            dump.save(dir)?;
            let _ = writeln!(out, "activations written to {}", dir.display());
        }
    } else if !args.units.is_empty() {
        return Err(Error::Config("--units needs --checkpoint".into()));
    }
    if args.preset.is_none() && args.checkpoint.is_none() {
        return Err(Error::Config("give --preset or --checkpoint".into()));
    }
    print!("{out}");
    Ok(Status::Ok)
}

pub fn gradcheck(seed: u64, larger: bool, corrupt: bool, exec: Execution) -> Result<Status> {
    let reports = run_suite(seed, larger, exec, corrupt)?;
    let mut worst: f64 = 0.0;
    for r in &reports {
        print!("{r}");
        worst = worst.max(r.max_relative_error());
    }
    let ok = reports.iter().all(|r| r.passed());
    println!(
        "overall max relative error {worst:.3e} (tolerance {TOLERANCE:e}): {}",
        if ok { "pass" } else { "FAIL" }
    );
    Ok(if ok { Status::Ok } else { Status::CheckFailed })
}
