//! Multi-directional networks: `2^n` independent hidden layers, each scanning
//! the grid from a different corner, joined by one per-point softmax output
//! layer trained with cross-entropy.
//!
//! Hidden layer `d` sees the input through `reflect(·, shape, d)`, so its own
//! scan always starts at its local origin. Its output for an actual point
//! `p` lives at the reflected flat index of `p` on its tape.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::{LabelGrid, SequenceND};
use crate::layer::{gemv_acc, gemv_t_acc, ger_acc, DeltaTape, GroupId, GroupKind, ParamGroups};
use crate::lstm::{lstm_backward, lstm_forward, LstmLayerConfig, LstmTape, LstmWeights};
use crate::tanh::{layer_backward, layer_forward, ActivationTape, TanhLayerConfig, TanhWeights};

/// Default half-width of the uniform weight initialisation.
pub const DEFAULT_INIT_RANGE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Tanh,
    Lstm,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::Tanh => "tanh",
            LayerKind::Lstm => "lstm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerConfig {
    Tanh(TanhLayerConfig),
    Lstm(LstmLayerConfig),
}

impl LayerConfig {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerConfig::Tanh(_) => LayerKind::Tanh,
            LayerConfig::Lstm(_) => LayerKind::Lstm,
        }
    }

    pub fn num_dims(&self) -> usize {
        match self {
            LayerConfig::Tanh(c) => c.num_dims,
            LayerConfig::Lstm(c) => c.num_dims,
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            LayerConfig::Tanh(c) => c.input_width,
            LayerConfig::Lstm(c) => c.input_width,
        }
    }

    /// Width of the per-point vector the layer hands to the output layer.
    pub fn output_width(&self) -> usize {
        match self {
            LayerConfig::Tanh(c) => c.hidden_width,
            LayerConfig::Lstm(c) => c.cells(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            LayerConfig::Tanh(c) => c.validate(),
            LayerConfig::Lstm(c) => c.validate(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub layer: LayerConfig,
    /// Number of classes K.
    pub output_width: usize,
    /// When false the network has a single hidden layer scanning from the origin.
    pub multidirectional: bool,
}

impl NetworkConfig {
    pub fn num_dims(&self) -> usize {
        self.layer.num_dims()
    }

    pub fn input_width(&self) -> usize {
        self.layer.input_width()
    }

    pub fn directions(&self) -> usize {
        if self.multidirectional {
            1 << self.num_dims()
        } else {
            1
        }
    }

    /// Width of the concatenated hidden vector feeding the output layer.
    pub fn hidden_total(&self) -> usize {
        self.directions() * self.layer.output_width()
    }

    pub fn validate(&self) -> Result<()> {
        self.layer.validate()?;
        if self.output_width == 0 {
            return Err(Error::config("network needs at least one output class"));
        }
        if self.num_dims() >= usize::BITS as usize - 1 {
            return Err(Error::config("too many dimensions"));
        }
        Ok(())
    }
}

/// Parameters of one hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub enum HiddenWeights {
    Tanh(TanhWeights),
    Lstm(LstmWeights),
}

impl HiddenWeights {
    pub fn zeros(cfg: &LayerConfig) -> Self {
        match cfg {
            LayerConfig::Tanh(c) => HiddenWeights::Tanh(TanhWeights::zeros(c)),
            LayerConfig::Lstm(c) => HiddenWeights::Lstm(LstmWeights::zeros(c)),
        }
    }

    fn check(&self, cfg: &LayerConfig) -> Result<()> {
        match (self, cfg) {
            (HiddenWeights::Tanh(w), LayerConfig::Tanh(c)) => w.check(c),
            (HiddenWeights::Lstm(w), LayerConfig::Lstm(c)) => w.check(c),
            _ => Err(Error::config("hidden weights are of the wrong layer kind")),
        }
    }
}

impl ParamGroups for HiddenWeights {
    fn groups(&self) -> Vec<(GroupKind, &[f64])> {
        match self {
            HiddenWeights::Tanh(w) => w.groups(),
            HiddenWeights::Lstm(w) => w.groups(),
        }
    }

    fn groups_mut(&mut self) -> Vec<(GroupKind, &mut [f64])> {
        match self {
            HiddenWeights::Tanh(w) => w.groups_mut(),
            HiddenWeights::Lstm(w) => w.groups_mut(),
        }
    }
}

/// Every trainable value of a network. A zeroed copy holds gradients or
/// momentum with the identical layout.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    /// One entry per scan direction, ascending.
    pub hidden: Vec<HiddenWeights>,
    /// `K x (D·H)`; column `d·H + m` reads unit `m` of direction `d`.
    pub output_weights: Vec<f64>,
    pub output_bias: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        NetworkParams {
            hidden: (0..cfg.directions())
                .map(|_| HiddenWeights::zeros(&cfg.layer))
                .collect(),
            output_weights: vec![0.0; cfg.output_width * cfg.hidden_total()],
            output_bias: vec![0.0; cfg.output_width],
        }
    }

    pub fn check(&self, cfg: &NetworkConfig) -> Result<()> {
        if self.hidden.len() != cfg.directions() {
            return Err(Error::config(format!(
                "{} hidden layers for {} directions",
                self.hidden.len(),
                cfg.directions()
            )));
        }
        for h in &self.hidden {
            h.check(&cfg.layer)?;
        }
        if self.output_weights.len() != cfg.output_width * cfg.hidden_total()
            || self.output_bias.len() != cfg.output_width
        {
            return Err(Error::config("output layer does not match config"));
        }
        Ok(())
    }

    /// All groups in checkpoint order: directions ascending (input,
    /// recurrent per axis, peepholes, biases), then output weights and biases.
    pub fn groups(&self) -> Vec<(GroupId, &[f64])> {
        let mut out = Vec::new();
        for (d, h) in self.hidden.iter().enumerate() {
            for (kind, v) in h.groups() {
                out.push((
                    GroupId {
                        direction: Some(d),
                        kind,
                    },
                    v,
                ));
            }
        }
        out.push((
            output_id(GroupKind::OutputWeights),
            self.output_weights.as_slice(),
        ));
        out.push((
            output_id(GroupKind::OutputBias),
            self.output_bias.as_slice(),
        ));
        out
    }

    pub fn groups_mut(&mut self) -> Vec<(GroupId, &mut [f64])> {
        let mut out = Vec::new();
        for (d, h) in self.hidden.iter_mut().enumerate() {
            for (kind, v) in h.groups_mut() {
                out.push((
                    GroupId {
                        direction: Some(d),
                        kind,
                    },
                    v,
                ));
            }
        }
        out.push((
            output_id(GroupKind::OutputWeights),
            self.output_weights.as_mut_slice(),
        ));
        out.push((
            output_id(GroupKind::OutputBias),
            self.output_bias.as_mut_slice(),
        ));
        out
    }

    pub fn param_count(&self) -> usize {
        self.groups().iter().map(|(_, v)| v.len()).sum()
    }

    /// Flattened copy in checkpoint order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.groups()
            .iter()
            .flat_map(|(_, v)| v.iter().copied())
            .collect()
    }

    /// Overwrite from a flat vector in checkpoint order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Format(format!(
                "{} stored parameters, network has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for (_, g) in self.groups_mut() {
            g.copy_from_slice(&flat[offset..offset + g.len()]);
            offset += g.len();
        }
        Ok(())
    }
}

fn output_id(kind: GroupKind) -> GroupId {
    GroupId {
        direction: None,
        kind,
    }
}

/// A configured multi-directional network.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    params: NetworkParams,
}

impl Network {
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        Ok(Network {
            params: NetworkParams::zeros(&config),
            config,
        })
    }

    /// Weights uniform in `[-init_range, init_range]` drawn from a seeded
    /// ChaCha stream, in checkpoint order.
    pub fn random(config: NetworkConfig, seed: u64, init_range: f64) -> Result<Self> {
        use rand::Rng;
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, g) in net.params.groups_mut() {
            for v in g {
                *v = rng.gen_range(-init_range..=init_range);
            }
        }
        Ok(net)
    }

    pub fn from_params(config: NetworkConfig, params: NetworkParams) -> Result<Self> {
        config.validate()?;
        params.check(&config)?;
        Ok(Network { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetworkParams {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    pub fn forward(&self, input: &SequenceND) -> Result<ForwardPass> {
        network_forward_with(self, input, Execution::default())
    }
}

/// Forward record of one hidden layer.
#[derive(Clone, Debug)]
pub enum LayerTape {
    Tanh(ActivationTape),
    Lstm(LstmTape),
}

impl LayerTape {
    /// Hidden outputs, point-major, in the layer's own (reflected) frame.
    pub fn outputs(&self) -> &[f64] {
        match self {
            LayerTape::Tanh(t) => t.outputs(),
            LayerTape::Lstm(t) => t.outputs(),
        }
    }
}

/// Everything `network_backward` needs from the forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// Pre-softmax outputs `o_k` at every point.
    pub logits: SequenceND,
    /// Softmax distributions at every point.
    pub probabilities: SequenceND,
    /// One tape per direction, in that direction's frame.
    pub tapes: Vec<LayerTape>,
    /// `reflections[d][p]` is the flat index of actual point `p` in frame `d`.
    pub reflections: Vec<Vec<usize>>,
    /// The input as seen by each direction.
    pub views: Vec<SequenceND>,
}

impl ForwardPass {
    /// Hidden output of direction `d` at actual flat index `p`.
    pub fn hidden(&self, d: usize, p: usize) -> &[f64] {
        let outs = self.tapes[d].outputs();
        let w = outs.len() / self.reflections[d].len();
        let q = self.reflections[d][p];
        &outs[q * w..(q + 1) * w]
    }
}

pub fn network_forward(net: &Network, input: &SequenceND) -> Result<ForwardPass> {
    network_forward_with(net, input, Execution::default())
}

pub fn network_forward_with(
    net: &Network,
    input: &SequenceND,
    exec: Execution,
) -> Result<ForwardPass> {
    let cfg = &net.config;
    if input.shape().arity() != cfg.num_dims() || input.width() != cfg.input_width() {
        return Err(Error::config(format!(
            "network expects {}-dimensional input of width {}, got shape {} width {}",
            cfg.num_dims(),
            cfg.input_width(),
            input.shape(),
            input.width()
        )));
    }
    let shape = input.shape();
    let dirs = cfg.directions();
    let reflections: Vec<Vec<usize>> = (0..dirs).map(|d| shape.reflection_map(d)).collect();
    let views: Vec<SequenceND> = reflections
        .iter()
        .enumerate()
        .map(|(d, map)| {
            if d == 0 {
                input.clone()
            } else {
                input.permuted(map)
            }
        })
        .collect();

    let tapes = exec
        .map(dirs, |d| -> Result<LayerTape> {
            match (&cfg.layer, &net.params.hidden[d]) {
                (LayerConfig::Tanh(c), HiddenWeights::Tanh(w)) => {
                    Ok(LayerTape::Tanh(layer_forward(c, w, &views[d])?))
                }
                (LayerConfig::Lstm(c), HiddenWeights::Lstm(w)) => {
                    Ok(LayerTape::Lstm(lstm_forward(c, w, &views[d])?))
                }
                _ => Err(Error::config("hidden weights are of the wrong layer kind")),
            }
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let k = cfg.output_width;
    let hw = cfg.layer.output_width();
    let n = shape.point_count();
    let mut logits = vec![0.0; n * k];
    let mut probs = vec![0.0; n * k];
    let mut hcat = vec![0.0; cfg.hidden_total()];
    for p in 0..n {
        for d in 0..dirs {
            let q = reflections[d][p];
            hcat[d * hw..(d + 1) * hw].copy_from_slice(&tapes[d].outputs()[q * hw..(q + 1) * hw]);
        }
        let o = &mut logits[p * k..(p + 1) * k];
        o.copy_from_slice(&net.params.output_bias);
        gemv_acc(o, &net.params.output_weights, &hcat);
        softmax(o, &mut probs[p * k..(p + 1) * k]);
    }

    Ok(ForwardPass {
        logits: SequenceND::from_raw(shape.clone(), k, logits),
        probabilities: SequenceND::from_raw(shape.clone(), k, probs),
        tapes,
        reflections,
        views,
    })
}

pub(crate) fn softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (p, &o) in out.iter_mut().zip(logits) {
        *p = (o - max).exp();
        total += *p;
    }
    for p in out.iter_mut() {
        *p /= total;
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|o| (o - max).exp()).sum::<f64>().ln()
}

/// Gradients and loss for one sequence.
#[derive(Clone, Debug)]
pub struct NetworkBackward {
    pub gradients: NetworkParams,
    /// Cross-entropy summed over all points.
    pub loss: f64,
}

/// Cross-entropy loss and its full gradient.
pub fn network_backward(
    net: &Network,
    input: &SequenceND,
    fwd: &ForwardPass,
    targets: &LabelGrid,
) -> Result<NetworkBackward> {
    network_backward_with(net, input, fwd, targets, Execution::default())
}

pub fn network_backward_with(
    net: &Network,
    input: &SequenceND,
    fwd: &ForwardPass,
    targets: &LabelGrid,
    exec: Execution,
) -> Result<NetworkBackward> {
    let k = net.config.output_width;
    if targets.shape() != input.shape() {
        return Err(Error::data(format!(
            "targets have shape {}, input has {}",
            targets.shape(),
            input.shape()
        )));
    }
    if targets.num_classes() != k {
        return Err(Error::data(format!(
            "targets have {} classes, network has {k} outputs",
            targets.num_classes()
        )));
    }
    let n = input.shape().point_count();
    let mut deltas = fwd.probabilities.values().to_vec();
    let mut loss = 0.0;
    for (p, &t) in targets.labels().iter().enumerate() {
        let o = fwd.logits.point(p);
        loss += log_sum_exp(o) - o[t];
        deltas[p * k + t] -= 1.0;
    }
    debug_assert_eq!(deltas.len(), n * k);
    let deltas = SequenceND::from_raw(input.shape().clone(), k, deltas);
    let (gradients, _) = backward_from_logit_deltas(net, input, fwd, &deltas, exec)?;
    Ok(NetworkBackward { gradients, loss })
}

/// Propagates arbitrary `dL/do` (pre-softmax) deltas through the network.
/// Returns parameter gradients and `dL/d input` at every point.
pub fn backward_from_logit_deltas(
    net: &Network,
    input: &SequenceND,
    fwd: &ForwardPass,
    logit_deltas: &SequenceND,
    exec: Execution,
) -> Result<(NetworkParams, SequenceND)> {
    let cfg = &net.config;
    let shape = input.shape();
    let k = cfg.output_width;
    let dirs = cfg.directions();
    let hw = cfg.layer.output_width();
    if fwd.tapes.len() != dirs || fwd.logits.shape() != shape {
        return Err(Error::precondition("forward pass does not match input"));
    }
    if logit_deltas.shape() != shape || logit_deltas.width() != k {
        return Err(Error::precondition("output deltas do not match input"));
    }
    let n = shape.point_count();

    let mut grads = NetworkParams::zeros(cfg);
    let mut injected: Vec<DeltaTape> = (0..dirs)
        .map(|_| DeltaTape::zeros(shape.clone(), hw))
        .collect();
    let mut hcat = vec![0.0; cfg.hidden_total()];
    let mut dh = vec![0.0; cfg.hidden_total()];
    for p in 0..n {
        let delta = logit_deltas.point(p);
        for d in 0..dirs {
            hcat[d * hw..(d + 1) * hw].copy_from_slice(fwd.hidden(d, p));
        }
        for (g, &v) in grads.output_bias.iter_mut().zip(delta) {
            *g += v;
        }
        ger_acc(&mut grads.output_weights, delta, &hcat);
        dh.iter_mut().for_each(|v| *v = 0.0);
        gemv_t_acc(&mut dh, &net.params.output_weights, delta);
        for d in 0..dirs {
            let q = fwd.reflections[d][p];
            injected[d]
                .point_mut(q)
                .copy_from_slice(&dh[d * hw..(d + 1) * hw]);
        }
    }

    let per_direction = exec
        .map(dirs, |d| -> Result<(HiddenWeights, SequenceND)> {
            let view = &fwd.views[d];
            match (&cfg.layer, &net.params.hidden[d], &fwd.tapes[d]) {
                (LayerConfig::Tanh(c), HiddenWeights::Tanh(w), LayerTape::Tanh(t)) => {
                    let b = layer_backward(c, w, view, t, &injected[d])?;
                    Ok((HiddenWeights::Tanh(b.gradients), b.input_gradient))
                }
                (LayerConfig::Lstm(c), HiddenWeights::Lstm(w), LayerTape::Lstm(t)) => {
                    let b = lstm_backward(c, w, view, t, &injected[d])?;
                    Ok((HiddenWeights::Lstm(b.gradients), b.input_gradient))
                }
                _ => Err(Error::precondition("tape kind does not match layer kind")),
            }
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let iw = input.width();
    let mut input_grad = vec![0.0; n * iw];
    for (d, (g, view_grad)) in per_direction.into_iter().enumerate() {
        grads.hidden[d] = g;
        let map = &fwd.reflections[d];
        for p in 0..n {
            let q = map[p];
            for (acc, &v) in input_grad[p * iw..(p + 1) * iw]
                .iter_mut()
                .zip(view_grad.point(q))
            {
                *acc += v;
            }
        }
    }
    Ok((grads, SequenceND::from_raw(shape.clone(), iw, input_grad)))
}

/// Total trainable scalars and how they split across parameter roles,
/// summed over directions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterCount {
    pub directions: usize,
    pub breakdown: Vec<(GroupKind, usize)>,
    pub total: usize,
}

impl ParameterCount {
    pub fn get(&self, kind: GroupKind) -> usize {
        self.breakdown
            .iter()
            .find(|(k, _)| *k == kind)
            .map_or(0, |(_, c)| *c)
    }
}

impl fmt::Display for ParameterCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (kind, count) in &self.breakdown {
            let scope = match kind {
                GroupKind::OutputWeights | GroupKind::OutputBias => "output layer".to_string(),
                _ => format!(
                    "{} x {} directions",
                    count / self.directions,
                    self.directions
                ),
            };
            writeln!(f, "{:<16}{:>10}  ({scope})", kind.to_string(), count)?;
        }
        write!(f, "{:<16}{:>10}", "total", self.total)
    }
}

pub fn count_parameters(config: &NetworkConfig) -> Result<ParameterCount> {
    config.validate()?;
    let params = NetworkParams::zeros(config);
    let mut breakdown: Vec<(GroupKind, usize)> = Vec::new();
    for (id, v) in params.groups() {
        match breakdown.iter_mut().find(|(k, _)| *k == id.kind) {
            Some((_, c)) => *c += v.len(),
            None => breakdown.push((id.kind, v.len())),
        }
    }
    breakdown.sort_by_key(|(k, _)| *k);
    Ok(ParameterCount {
        directions: config.directions(),
        total: breakdown.iter().map(|(_, c)| c).sum(),
        breakdown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_network, TOLERANCE};
    use crate::testutil::random_input;
    use rand::Rng;

    fn tanh_config(n: usize, i: usize, h: usize, k: usize, multi: bool) -> NetworkConfig {
        NetworkConfig {
            layer: LayerConfig::Tanh(TanhLayerConfig {
                num_dims: n,
                input_width: i,
                hidden_width: h,
            }),
            output_width: k,
            multidirectional: multi,
        }
    }

    fn lstm_config(n: usize, i: usize, b: usize, k: usize, multi: bool) -> NetworkConfig {
        NetworkConfig {
            layer: LayerConfig::Lstm(LstmLayerConfig::new(n, i, b)),
            output_width: k,
            multidirectional: multi,
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_weights_give_uniform_distributions() {
        let net = Network::zeros(lstm_config(2, 1, 3, 11, true)).unwrap();
        let input = random_input(&[4, 5], 1, &mut rng(1));
        let fwd = network_forward(&net, &input).unwrap();
        for v in fwd.probabilities.values() {
            assert!((v - 1.0 / 11.0).abs() < 1e-15);
        }
        let targets = LabelGrid::new(input.shape().clone(), 11, vec![3; 20]).unwrap();
        let back = network_backward(&net, &input, &fwd, &targets).unwrap();
        assert!((back.loss / 20.0 - 11f64.ln()).abs() < 1e-12);
        assert!((11f64.ln() - 2.3979).abs() < 1e-4);
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_zero_output_deltas() {
        let mut net = Network::zeros(tanh_config(2, 1, 2, 4, true)).unwrap();
        net.params_mut().output_bias[2] = 1000.0;
        let input = random_input(&[3, 3], 1, &mut rng(2));
        let fwd = network_forward(&net, &input).unwrap();
        let targets = LabelGrid::new(input.shape().clone(), 4, vec![2; 9]).unwrap();
        let back = network_backward(&net, &input, &fwd, &targets).unwrap();
        assert_eq!(back.loss, 0.0);
        assert!(back.gradients.to_flat().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn distributions_are_normalised() {
        let net = Network::random(lstm_config(2, 2, 3, 7, true), 3, 1.0).unwrap();
        let input = random_input(&[5, 4], 2, &mut rng(3));
        let fwd = network_forward(&net, &input).unwrap();
        for p in 0..20 {
            let d = fwd.probabilities.point(p);
            assert!(d.iter().all(|v| *v > 0.0));
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch_is_config_error() {
        let net = Network::zeros(tanh_config(2, 2, 2, 3, false)).unwrap();
        let input = random_input(&[2, 2], 1, &mut rng(4));
        assert!(matches!(
            network_forward(&net, &input),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn label_out_of_range_is_data_error() {
        let net = Network::zeros(tanh_config(1, 1, 1, 3, false)).unwrap();
        let input = random_input(&[4], 1, &mut rng(5));
        let fwd = network_forward(&net, &input).unwrap();
        let targets = LabelGrid::new(input.shape().clone(), 5, vec![0; 4]).unwrap();
        assert!(matches!(
            network_backward(&net, &input, &fwd, &targets),
            Err(Error::Data(_))
        ));
    }

    /// Independent bidirectional tanh RNN classifier over a 1D sequence.
    fn brnn_oracle(net: &Network, xs: &[f64], iw: usize) -> Vec<Vec<f64>> {
        let (fw, bw) = match &net.params().hidden[..] {
            [HiddenWeights::Tanh(f), HiddenWeights::Tanh(b)] => (f, b),
            _ => unreachable!(),
        };
        let h = fw.bias.len();
        let t_len = xs.len() / iw;
        let step = |w: &TanhWeights, x: &[f64], prev: Option<&Vec<f64>>| -> Vec<f64> {
            (0..h)
                .map(|k| {
                    let mut a = w.bias[k];
                    for j in 0..iw {
                        a += w.input[k * iw + j] * x[j];
                    }
                    if let Some(prev) = prev {
                        for j in 0..h {
                            a += w.recurrent[0][k * h + j] * prev[j];
                        }
                    }
                    a.tanh()
                })
                .collect()
        };
        let mut fwd: Vec<Vec<f64>> = Vec::new();
        for t in 0..t_len {
            let v = step(fw, &xs[t * iw..(t + 1) * iw], fwd.last());
            fwd.push(v);
        }
        let mut bwd: Vec<Vec<f64>> = vec![Vec::new(); t_len];
        for t in (0..t_len).rev() {
            let prev = if t + 1 < t_len {
                Some(&bwd[t + 1])
            } else {
                None
            };
            bwd[t] = step(bw, &xs[t * iw..(t + 1) * iw], prev);
        }
        let k = net.config().output_width;
        let v = &net.params().output_weights;
        (0..t_len)
            .map(|t| {
                (0..k)
                    .map(|c| {
                        let mut o = net.params().output_bias[c];
                        for j in 0..h {
                            o += v[c * 2 * h + j] * fwd[t][j];
                            o += v[c * 2 * h + h + j] * bwd[t][j];
                        }
                        o
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn one_dimensional_network_matches_bidirectional_rnn() {
        for (seed, len) in [(10u64, 1usize), (11, 7), (12, 20)] {
            let net = Network::random(tanh_config(1, 3, 4, 5, true), seed, 0.7).unwrap();
            let input = random_input(&[len], 3, &mut rng(seed + 100));
            let fwd = network_forward(&net, &input).unwrap();
            let oracle = brnn_oracle(&net, input.values(), 3);
            for (t, row) in oracle.iter().enumerate() {
                for (a, b) in fwd.logits.point(t).iter().zip(row) {
                    assert!((a - b).abs() < 1e-12, "t={t}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn unidirectional_network_is_a_plain_rnn_classifier() {
        let net = Network::random(tanh_config(1, 2, 3, 4, false), 20, 0.8).unwrap();
        let input = random_input(&[9], 2, &mut rng(21));
        let fwd = network_forward(&net, &input).unwrap();
        let HiddenWeights::Tanh(w) = &net.params().hidden[0] else {
            unreachable!()
        };
        let mut h = vec![0.0; 3];
        for t in 0..9 {
            let x = input.point(t);
            let mut next = vec![0.0; 3];
            for k in 0..3 {
                let mut a = w.bias[k] + w.input[k * 2] * x[0] + w.input[k * 2 + 1] * x[1];
                if t > 0 {
                    a += (0..3)
                        .map(|j| w.recurrent[0][k * 3 + j] * h[j])
                        .sum::<f64>();
                }
                next[k] = a.tanh();
            }
            h = next;
            for c in 0..4 {
                let o = net.params().output_bias[c]
                    + (0..3)
                        .map(|j| net.params().output_weights[c * 3 + j] * h[j])
                        .sum::<f64>();
                assert!((fwd.logits.point(t)[c] - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_point_ignores_direction() {
        let cfg = lstm_config(2, 2, 3, 4, true);
        let mut net = Network::random(cfg, 30, 0.5).unwrap();
        let shared = net.params().hidden[0].clone();
        for h in net.params_mut().hidden.iter_mut() {
            *h = shared.clone();
        }
        let input = random_input(&[1, 1], 2, &mut rng(31));
        let fwd = network_forward(&net, &input).unwrap();
        let one = fwd.hidden(0, 0).to_vec();
        for d in 1..4 {
            assert_eq!(fwd.hidden(d, 0), one.as_slice());
        }
        let hw = one.len();
        for c in 0..4 {
            let mut o = net.params().output_bias[c];
            for d in 0..4 {
                for m in 0..hw {
                    o += net.params().output_weights[c * 4 * hw + d * hw + m] * one[m];
                }
            }
            assert!((fwd.logits.point(0)[c] - o).abs() < 1e-12);
        }
    }

    #[test]
    fn reflecting_input_and_swapping_directions_commutes() {
        for cfg in [tanh_config(2, 2, 3, 3, true), lstm_config(2, 2, 2, 3, true)] {
            let net = Network::random(cfg, 40, 0.6).unwrap();
            let input = random_input(&[3, 3], 2, &mut rng(41));
            let base = network_forward(&net, &input).unwrap();
            let hw = cfg.layer.output_width();
            let dirs = cfg.directions();
            let k = cfg.output_width;
            for axis in 0..2 {
                let bit = 1 << axis;
                let mut swapped = net.clone();
                let p = swapped.params_mut();
                for d in 0..dirs {
                    p.hidden[d] = net.params().hidden[d ^ bit].clone();
                    for c in 0..k {
                        let dst = c * dirs * hw + d * hw;
                        let src = c * dirs * hw + (d ^ bit) * hw;
                        p.output_weights[dst..dst + hw]
                            .copy_from_slice(&net.params().output_weights[src..src + hw]);
                    }
                }
                let reflected = input.reflected(bit);
                let out = network_forward(&swapped, &reflected).unwrap();
                let map = input.shape().reflection_map(bit);
                for q in 0..9 {
                    for (a, b) in out.logits.point(map[q]).iter().zip(base.logits.point(q)) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn composed_gradient_check_4x4_lstm() {
        let net = Network::random(lstm_config(2, 2, 2, 3, true), 50, 0.5).unwrap();
        let mut r = rng(51);
        let input = random_input(&[4, 4], 2, &mut r);
        let labels = (0..16).map(|_| r.gen_range(0..3)).collect();
        let targets = LabelGrid::new(input.shape().clone(), 3, labels).unwrap();
        let report =
            check_network("4x4", &net, &input, &targets, Execution::default(), false).unwrap();
        assert!(report.max_relative_error() < TOLERANCE, "{report}");
    }

    #[test]
    fn sequential_and_parallel_execution_agree_bitwise() {
        let net = Network::random(lstm_config(2, 1, 3, 5, true), 60, 0.5).unwrap();
        let input = random_input(&[6, 5], 1, &mut rng(61));
        let targets = LabelGrid::new(input.shape().clone(), 5, vec![1; 30]).unwrap();
        let a = network_forward_with(&net, &input, Execution::Sequential).unwrap();
        let b = network_forward_with(&net, &input, Execution::default()).unwrap();
        assert_eq!(a.logits, b.logits);
        let ga = network_backward_with(&net, &input, &a, &targets, Execution::Sequential).unwrap();
        let gb = network_backward_with(&net, &input, &b, &targets, Execution::default()).unwrap();
        assert_eq!(ga.gradients, gb.gradients);
        assert_eq!(ga.loss.to_bits(), gb.loss.to_bits());
    }

    #[test]
    fn random_init_is_seeded_and_bounded() {
        let cfg = lstm_config(2, 1, 4, 11, true);
        let a = Network::random(cfg, 7, 0.1).unwrap();
        assert_eq!(a, Network::random(cfg, 7, 0.1).unwrap());
        assert_ne!(a, Network::random(cfg, 8, 0.1).unwrap());
        assert!(a.params().to_flat().iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn trivial_parameter_count() {
        let c = count_parameters(&tanh_config(1, 1, 1, 1, false)).unwrap();
        assert_eq!(c.total, 5);
        assert_eq!(c.get(GroupKind::Input), 1);
        assert_eq!(c.get(GroupKind::Recurrent(0)), 1);
        assert_eq!(c.get(GroupKind::Bias), 1);
        assert_eq!(c.get(GroupKind::OutputWeights), 1);
        assert_eq!(c.get(GroupKind::OutputBias), 1);
    }

    #[test]
    fn doubling_blocks_scales_groups() {
        let small = count_parameters(&lstm_config(2, 1, 5, 11, true)).unwrap();
        let big = count_parameters(&lstm_config(2, 1, 10, 11, true)).unwrap();
        for kind in [GroupKind::Input, GroupKind::Peephole, GroupKind::Bias] {
            assert_eq!(big.get(kind), 2 * small.get(kind), "{kind}");
        }
        for axis in 0..2 {
            let kind = GroupKind::Recurrent(axis);
            assert_eq!(big.get(kind), 4 * small.get(kind));
        }
    }

    #[test]
    fn parameter_count_matches_network() {
        let cfg = lstm_config(2, 1, 25, 11, true);
        let c = count_parameters(&cfg).unwrap();
        assert_eq!(c.total, Network::zeros(cfg).unwrap().param_count());
        // per direction: input 125, recurrent 2x3125, peephole 125, bias 125
        assert_eq!(c.get(GroupKind::Peephole), 4 * 25 * 5);
        assert_eq!(c.total, 4 * (125 + 6250 + 125 + 125) + 11 * 100 + 11);
    }

    #[test]
    fn flat_round_trip() {
        let net = Network::random(tanh_config(3, 2, 2, 2, true), 70, 0.5).unwrap();
        let mut other = Network::zeros(*net.config()).unwrap();
        other
            .params_mut()
            .assign_flat(&net.params().to_flat())
            .unwrap();
        assert_eq!(other, net);
        assert!(other.params_mut().assign_flat(&[0.0]).is_err());
    }
}
