//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Relative paths resolve against
//! the directory holding the config file. `--set key=value` overrides are
//! applied after the file and follow the same rules.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mdrnn::lstm::LstmLayerConfig;
use mdrnn::network::{LayerConfig, LayerKind, NetworkConfig, DEFAULT_INIT_RANGE};
use mdrnn::tanh::TanhLayerConfig;
use mdrnn::train::TrainConfig;
use mdrnn::{Error, Result};

/// Every accepted key with its default (`None` when required or unset).
pub const KEYS: &[(&str, Option<&str>, &str)] = &[
    ("task", Some("mnist_pixels"), "mnist_pixels or labelmap"),
    ("train_images", None, "IDX images (mnist_pixels)"),
    ("train_labels", None, "IDX labels (mnist_pixels)"),
    ("test_images", None, "optional held-out IDX images"),
    ("test_labels", None, "optional held-out IDX labels"),
    (
        "train_list",
        None,
        "lines of `image labelmap` paths (labelmap)",
    ),
    ("test_list", None, "optional held-out pair list (labelmap)"),
    ("palette", None, "lines of `class R G B` (labelmap)"),
    (
        "train_size",
        None,
        "training items taken after the split (default: the rest)",
    ),
    (
        "validation_size",
        Some("0"),
        "items split off for validation",
    ),
    ("test_size", None, "held-out items used (default: all)"),
    ("threshold", Some("0"), "foreground intensity threshold"),
    ("layer", Some("lstm"), "lstm or tanh"),
    (
        "hidden",
        Some("25"),
        "memory blocks (lstm) or units (tanh) per direction",
    ),
    ("cells_per_block", Some("1"), "lstm cells per block"),
    ("multidirectional", Some("true"), "scan from every corner"),
    (
        "init_range",
        None,
        "uniform initialisation half-width (default 0.1)",
    ),
    (
        "learning_rate",
        None,
        "default 1e-5 (mnist_pixels) or 1e-6 (labelmap)",
    ),
    ("momentum", Some("0.9"), "momentum in [0,1)"),
    ("max_epochs", Some("100"), "epoch limit"),
    ("patience", Some("20"), "non-improving epochs tolerated"),
    (
        "seed",
        Some("0"),
        "seed for initialisation, split and shuffling",
    ),
    (
        "shuffle",
        Some("true"),
        "shuffle the training order every epoch",
    ),
    ("clip", None, "elementwise gradient clip (off when unset)"),
    (
        "record_wall_clock",
        Some("false"),
        "write elapsed seconds to the log",
    ),
    (
        "output_dir",
        Some("run"),
        "directory receiving every artifact",
    ),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    MnistPixels,
    Labelmap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub train_list: Option<PathBuf>,
    pub test_list: Option<PathBuf>,
    pub palette: Option<PathBuf>,
    pub train_size: Option<usize>,
    pub validation_size: usize,
    pub test_size: Option<usize>,
    pub threshold: f64,
    pub layer: LayerKind,
    pub hidden: usize,
    pub cells_per_block: usize,
    pub multidirectional: bool,
    pub init_range: f64,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    /// Resolved settings, one `key = value` per line, sorted by key.
    pub canonical: String,
}

fn parse_line(line: &str, n: usize, origin: &str) -> Result<Option<(String, String)>> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(None);
    }
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("{origin} line {n}: expected `key = value`")))?;
    let (k, v) = (k.trim(), v.trim());
    if !KEYS.iter().any(|(name, _, _)| *name == k) {
        return Err(Error::Config(format!(
            "{origin} line {n}: unknown key `{k}`"
        )));
    }
    Ok(Some((k.to_string(), v.to_string())))
}

fn number<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    map.get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| Error::Config(format!("`{key}` has invalid value `{v}`")))
        })
        .transpose()
}

fn flag(map: &BTreeMap<String, String>, key: &str) -> Result<bool> {
    match map.get(key).map(String::as_str) {
        Some("true" | "1" | "yes") => Ok(true),
        Some("false" | "0" | "no") => Ok(false),
        Some(v) => Err(Error::Config(format!(
            "`{key}` must be true or false, got `{v}`"
        ))),
        None => Ok(false),
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, overrides)
    }

    pub fn parse(text: &str, base: &Path, overrides: &[String]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, default, _) in KEYS {
            if let Some(d) = default {
                map.insert(k.to_string(), d.to_string());
            }
        }
        for (n, line) in text.lines().enumerate() {
            if let Some((k, v)) = parse_line(line, n + 1, "config")? {
                map.insert(k, v);
            }
        }
        for (n, o) in overrides.iter().enumerate() {
            match parse_line(o, n + 1, "--set")? {
                Some((k, v)) => {
                    map.insert(k, v);
                }
                None => return Err(Error::Config(format!("empty --set override `{o}`"))),
            }
        }

        let task = match map["task"].as_str() {
            "mnist_pixels" => Task::MnistPixels,
            "labelmap" => Task::Labelmap,
            t => return Err(Error::Config(format!("unknown task `{t}`"))),
        };
        let layer = match map["layer"].as_str() {
            "lstm" => LayerKind::Lstm,
            "tanh" => LayerKind::Tanh,
            l => return Err(Error::Config(format!("unknown layer `{l}`"))),
        };
        let path = |k: &str| map.get(k).map(|v| base.join(v));
        let default_lr = match task {
            Task::MnistPixels => 1e-5,
            Task::Labelmap => 1e-6,
        };
        let train = TrainConfig {
            learning_rate: number(&map, "learning_rate")?.unwrap_or(default_lr),
            momentum: number(&map, "momentum")?.unwrap_or(0.9),
            max_epochs: number(&map, "max_epochs")?.unwrap_or(100),
            patience: number(&map, "patience")?.unwrap_or(20),
            seed: number(&map, "seed")?.unwrap_or(0),
            shuffle: flag(&map, "shuffle")?,
            clip: number(&map, "clip")?,
            record_wall_clock: flag(&map, "record_wall_clock")?,
        };
        train.validate()?;
        let cfg = RunConfig {
            task,
            train_images: path("train_images"),
            train_labels: path("train_labels"),
            test_images: path("test_images"),
            test_labels: path("test_labels"),
            train_list: path("train_list"),
            test_list: path("test_list"),
            palette: path("palette"),
            train_size: number(&map, "train_size")?,
            validation_size: number(&map, "validation_size")?.unwrap_or(0),
            test_size: number(&map, "test_size")?,
            threshold: number(&map, "threshold")?.unwrap_or(0.0),
            layer,
            hidden: number(&map, "hidden")?.unwrap_or(25),
            cells_per_block: number(&map, "cells_per_block")?.unwrap_or(1),
            multidirectional: flag(&map, "multidirectional")?,
            init_range: number(&map, "init_range")?.unwrap_or(DEFAULT_INIT_RANGE),
            train,
            output_dir: base.join(&map["output_dir"]),
            canonical: map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect(),
        };
        if !(cfg.init_range >= 0.0 && cfg.init_range.is_finite()) {
            return Err(Error::Config("init_range must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&cfg.threshold) {
            return Err(Error::Config("threshold must lie in [0,1)".into()));
        }
        let required: &[&str] = match task {
            Task::MnistPixels => &["train_images", "train_labels"],
            Task::Labelmap => &["train_list", "palette"],
        };
        for k in required {
            if !map.contains_key(*k) {
                return Err(Error::Config(format!("`{k}` is required for this task")));
            }
        }
        if cfg.validation_size == 0 {
            return Err(Error::Config("validation_size must be positive".into()));
        }
        Ok(cfg)
    }

    /// Every configured data file must exist.
    pub fn check_paths(&self) -> Result<()> {
        let all = [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
            &self.train_list,
            &self.test_list,
            &self.palette,
        ];
        for p in all.into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Data(format!("data file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn network_config(&self, input_width: usize, classes: usize) -> NetworkConfig {
        let layer = match self.layer {
            LayerKind::Lstm => LayerConfig::Lstm(LstmLayerConfig {
                num_dims: 2,
                input_width,
                num_blocks: self.hidden,
                cells_per_block: self.cells_per_block,
            }),
            LayerKind::Tanh => LayerConfig::Tanh(TanhLayerConfig {
                num_dims: 2,
                input_width,
                hidden_width: self.hidden,
            }),
        };
        NetworkConfig {
            layer,
            output_width: classes,
            multidirectional: self.multidirectional,
        }
    }
}

/// The key reference printed by `train --help`.
pub fn key_help() -> String {
    let mut s = String::from("Config keys (key = value, `#` starts a comment):\n");
    for (k, d, what) in KEYS {
        let d = d.map_or(String::new(), |d| format!(" [default: {d}]"));
        s.push_str(&format!("  {k:<18}{what}{d}\n"));
    }
    s
}
