//! Online gradient descent with momentum: one weight update per sequence,
//! validation-based model selection and patience stopping.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{argmax, evaluate};
use crate::network::{network_backward_with, network_forward_with, Network, NetworkParams};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Elementwise gradient clip, off when `None`.
    pub clip: Option<f64>,
    /// Write elapsed seconds into the log instead of `NA`.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            momentum: 0.9,
            max_epochs: 100,
            patience: 20,
            seed: 0,
            shuffle: true,
            clip: None,
            record_wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be positive"));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::config(format!("clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Velocity with the network's parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    pub velocity: NetworkParams,
}

impl MomentumState {
    pub fn new(net: &Network) -> Self {
        MomentumState {
            velocity: NetworkParams::zeros(net.config()),
        }
    }
}

/// `v <- momentum·v - lr·g`, `w <- w + v`. Nothing is modified when any
/// gradient is non-finite.
pub fn sgd_step(
    net: &mut Network,
    gradients: &NetworkParams,
    state: &mut MomentumState,
    cfg: &TrainConfig,
) -> Result<()> {
    gradients.check(net.config())?;
    state.velocity.check(net.config())?;
    for (id, g) in gradients.groups() {
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                group: id.to_string(),
                message: format!("non-finite gradient {bad}"),
            });
        }
    }
    let grads = gradients.groups();
    for ((w, v), (_, g)) in net
        .params_mut()
        .groups_mut()
        .into_iter()
        .zip(state.velocity.groups_mut())
        .zip(grads)
    {
        for ((w, v), &g) in w.1.iter_mut().zip(v.1.iter_mut()).zip(g) {
            let g = match cfg.clip {
                Some(c) => g.clamp(-c, c),
                None => g,
            };
            *v = cfg.momentum * *v - cfg.learning_rate * g;
            *w += *v;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    /// Summed cross-entropy per sequence, averaged over sequences.
    pub mean_loss: f64,
    /// Measured on each sequence's forward pass before its update.
    pub pixel_error: f64,
    pub updates: usize,
}

/// The visiting order of epoch `epoch`.
pub fn epoch_order(len: usize, cfg: &TrainConfig, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    if cfg.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
    }
    order
}

/// One pass over `data`, updating after every sequence.
pub fn train_epoch(
    net: &mut Network,
    data: &[Sample],
    cfg: &TrainConfig,
    state: &mut MomentumState,
    epoch: usize,
    exec: Execution,
) -> Result<EpochSummary> {
    if data.is_empty() {
        return Err(Error::data("no training data"));
    }
    let mut loss = 0.0;
    let mut wrong = 0usize;
    let mut points = 0usize;
    for i in epoch_order(data.len(), cfg, epoch) {
        let sample = &data[i];
        let with_id = |e: Error| match e {
            Error::Numerical { group, message } => Error::Numerical {
                group,
                message: format!("{message} (training sequence {i})"),
            },
            other => Error::Data(format!("training sequence {i}: {other}")),
        };
        let fwd = network_forward_with(net, &sample.input, exec).map_err(with_id)?;
        let back = network_backward_with(net, &sample.input, &fwd, &sample.targets, exec)
            .map_err(with_id)?;
        if !back.loss.is_finite() {
            return Err(Error::Numerical {
                group: "loss".into(),
                message: format!("non-finite loss on training sequence {i}"),
            });
        }
        loss += back.loss;
        for (p, &t) in sample.targets.labels().iter().enumerate() {
            if argmax(fwd.probabilities.point(p)) != t {
                wrong += 1;
            }
        }
        points += sample.targets.labels().len();
        sgd_step(net, &back.gradients, state, cfg).map_err(with_id)?;
    }
    Ok(EpochSummary {
        mean_loss: loss / data.len() as f64,
        pixel_error: wrong as f64 / points as f64,
        updates: data.len(),
    })
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_pixel_error: f64,
    pub validation_pixel_error: f64,
    pub seconds: Option<f64>,
}

pub const LOG_HEADER: &str =
    "# epoch\ttrain_loss\ttrain_pixel_error\tvalidation_pixel_error\twall_clock_seconds";

impl LogRecord {
    pub fn to_line(&self) -> String {
        let secs = self.seconds.map_or("NA".to_string(), |s| format!("{s:.3}"));
        format!(
            "{}\t{}\t{}\t{}\t{secs}",
            self.epoch, self.train_loss, self.train_pixel_error, self.validation_pixel_error
        )
    }
}

pub fn format_log(records: &[LogRecord]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", r.to_line());
    }
    s
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Network after the epoch with the lowest validation pixel error.
    pub best: Network,
    /// 1-based.
    pub best_epoch: usize,
    pub best_validation_error: f64,
    pub last: Network,
    pub epochs_run: usize,
    pub log: Vec<LogRecord>,
}

/// Trains until `max_epochs` or until more than `patience` consecutive
/// epochs fail to lower the validation pixel error. `on_epoch` sees every
/// record as it is produced.
pub fn fit(
    mut net: Network,
    train: &[Sample],
    validation: &[Sample],
    cfg: &TrainConfig,
    exec: Execution,
    mut on_epoch: impl FnMut(&LogRecord),
) -> Result<FitResult> {
    cfg.validate()?;
    if validation.is_empty() {
        return Err(Error::data("no validation data"));
    }
    let start = Instant::now();
    let mut state = MomentumState::new(&net);
    let mut best: Option<(Network, usize, f64)> = None;
    let mut stale = 0;
    let mut log = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let summary = train_epoch(&mut net, train, cfg, &mut state, epoch, exec)?;
        let val = evaluate(&net, validation, exec)?.pixel_error_rate();
        let record = LogRecord {
            epoch: epoch + 1,
            train_loss: summary.mean_loss,
            train_pixel_error: summary.pixel_error,
            validation_pixel_error: val,
            seconds: cfg.record_wall_clock.then(|| start.elapsed().as_secs_f64()),
        };
        on_epoch(&record);
        log.push(record);
        match &best {
            Some((_, _, b)) if val >= *b => stale += 1,
            _ => {
                best = Some((net.clone(), epoch + 1, val));
                stale = 0;
            }
        }
        if stale > cfg.patience {
            break;
        }
    }
    let (best, best_epoch, best_validation_error) = best.expect("at least one epoch ran");
    Ok(FitResult {
        best,
        best_epoch,
        best_validation_error,
        epochs_run: log.len(),
        last: net,
        log,
    })
}
