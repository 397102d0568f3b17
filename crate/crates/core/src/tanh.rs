//! The summation-unit MDRNN hidden layer with tanh activation.
//!
//! At every point the pre-activation is
//! `a = b + W·in + sum over axes i with a predecessor of U_i·h(pred_i)`
//! and `h = tanh(a)`. The backward pass walks the scan in reverse and pushes
//! each point's error back to its predecessors through `U_i^T`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{Cursor, SequenceND, Shape};
use crate::layer::{check_input, gemv_acc, gemv_t_acc, ger_acc, DeltaTape, GroupKind, ParamGroups};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TanhLayerConfig {
    pub num_dims: usize,
    pub input_width: usize,
    pub hidden_width: usize,
}

impl TanhLayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_dims == 0 || self.input_width == 0 || self.hidden_width == 0 {
            return Err(Error::config(format!(
                "tanh layer sizes must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Trainable parameters of one tanh layer. Also used, zero-initialised, as the
/// gradient accumulator for the same layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TanhWeights {
    /// `H x I`, row k holds the weights into hidden unit k.
    pub input: Vec<f64>,
    /// One `H x H` block per axis.
    pub recurrent: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

pub type TanhGradients = TanhWeights;

impl TanhWeights {
    pub fn zeros(cfg: &TanhLayerConfig) -> Self {
        let h = cfg.hidden_width;
        TanhWeights {
            input: vec![0.0; h * cfg.input_width],
            recurrent: vec![vec![0.0; h * h]; cfg.num_dims],
            bias: vec![0.0; h],
        }
    }

    /// Every parameter drawn uniformly from `[-range, range]`.
    pub fn random<R: Rng + ?Sized>(cfg: &TanhLayerConfig, rng: &mut R, range: f64) -> Self {
        let mut w = Self::zeros(cfg);
        for (_, group) in w.groups_mut() {
            for v in group {
                *v = rng.gen_range(-range..=range);
            }
        }
        w
    }

    pub fn check(&self, cfg: &TanhLayerConfig) -> Result<()> {
        let h = cfg.hidden_width;
        let ok = self.input.len() == h * cfg.input_width
            && self.recurrent.len() == cfg.num_dims
            && self.recurrent.iter().all(|u| u.len() == h * h)
            && self.bias.len() == h;
        if ok {
            Ok(())
        } else {
            Err(Error::config("tanh weights do not match layer config"))
        }
    }
}

impl ParamGroups for TanhWeights {
    fn groups(&self) -> Vec<(GroupKind, &[f64])> {
        let mut out = vec![(GroupKind::Input, self.input.as_slice())];
        for (axis, u) in self.recurrent.iter().enumerate() {
            out.push((GroupKind::Recurrent(axis), u.as_slice()));
        }
        out.push((GroupKind::Bias, self.bias.as_slice()));
        out
    }

    fn groups_mut(&mut self) -> Vec<(GroupKind, &mut [f64])> {
        let mut out = vec![(GroupKind::Input, self.input.as_mut_slice())];
        for (axis, u) in self.recurrent.iter_mut().enumerate() {
            out.push((GroupKind::Recurrent(axis), u.as_mut_slice()));
        }
        out.push((GroupKind::Bias, self.bias.as_mut_slice()));
        out
    }
}

/// Forward activations of a tanh layer over one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTape {
    shape: Shape,
    hidden_width: usize,
    pre: Vec<f64>,
    act: Vec<f64>,
}

impl ActivationTape {
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    /// Pre-activations `a` at a flat index.
    pub fn pre_activation(&self, flat: usize) -> &[f64] {
        &self.pre[flat * self.hidden_width..(flat + 1) * self.hidden_width]
    }

    /// Hidden outputs `h = tanh(a)` at a flat index.
    pub fn output(&self, flat: usize) -> &[f64] {
        &self.act[flat * self.hidden_width..(flat + 1) * self.hidden_width]
    }

    pub fn outputs(&self) -> &[f64] {
        &self.act
    }
}

/// Result of [`layer_backward`].
#[derive(Clone, Debug)]
pub struct TanhBackward {
    /// `dL/da` at every point.
    pub deltas: DeltaTape,
    pub gradients: TanhGradients,
    pub input_gradient: SequenceND,
}

pub fn layer_forward(
    cfg: &TanhLayerConfig,
    weights: &TanhWeights,
    input: &SequenceND,
) -> Result<ActivationTape> {
    cfg.validate()?;
    weights.check(cfg)?;
    check_input(input, cfg.num_dims, cfg.input_width)?;

    let shape = input.shape();
    let h = cfg.hidden_width;
    let n = shape.point_count();
    let strides = shape.strides();
    let mut pre = vec![0.0; n * h];
    let mut act = vec![0.0; n * h];

    let mut cursor = Cursor::new(shape);
    let mut a = vec![0.0; h];
    for idx in 0..n {
        a.copy_from_slice(&weights.bias);
        gemv_acc(&mut a, &weights.input, input.point(idx));
        for axis in 0..cfg.num_dims {
            if cursor.has_predecessor(axis) {
                let p = idx - strides[axis];
                gemv_acc(&mut a, &weights.recurrent[axis], &act[p * h..(p + 1) * h]);
            }
        }
        pre[idx * h..(idx + 1) * h].copy_from_slice(&a);
        for (out, &x) in act[idx * h..(idx + 1) * h].iter_mut().zip(&a) {
            *out = x.tanh();
        }
        cursor.advance();
    }

    Ok(ActivationTape {
        shape: shape.clone(),
        hidden_width: h,
        pre,
        act,
    })
}

/// Reverse-mode gradients given `dL/dh` injected at every point from above.
pub fn layer_backward(
    cfg: &TanhLayerConfig,
    weights: &TanhWeights,
    input: &SequenceND,
    tape: &ActivationTape,
    output_deltas: &DeltaTape,
) -> Result<TanhBackward> {
    cfg.validate()?;
    weights.check(cfg)?;
    check_input(input, cfg.num_dims, cfg.input_width)?;
    let shape = input.shape();
    let h = cfg.hidden_width;
    if tape.shape() != shape || tape.hidden_width != h {
        return Err(Error::precondition("activation tape does not match input"));
    }
    if output_deltas.shape() != shape || output_deltas.width() != h {
        return Err(Error::precondition("injected deltas do not match input"));
    }

    let n = shape.point_count();
    let iw = cfg.input_width;
    let strides = shape.strides();
    // Running dL/dh; starts as the injected error and collects the
    // recurrent contributions pushed back from successors.
    let mut err = output_deltas.values().to_vec();
    let mut deltas = vec![0.0; n * h];
    let mut grads = TanhWeights::zeros(cfg);
    let mut input_grad = vec![0.0; n * iw];

    let mut cursor = Cursor::at_end(shape);
    for idx in (0..n).rev() {
        {
            let d = &mut deltas[idx * h..(idx + 1) * h];
            for k in 0..h {
                let y = tape.act[idx * h + k];
                d[k] = (1.0 - y * y) * err[idx * h + k];
            }
        }
        let d = &deltas[idx * h..(idx + 1) * h];
        for (g, &dk) in grads.bias.iter_mut().zip(d) {
            *g += dk;
        }
        ger_acc(&mut grads.input, d, input.point(idx));
        gemv_t_acc(&mut input_grad[idx * iw..(idx + 1) * iw], &weights.input, d);
        for axis in 0..cfg.num_dims {
            if cursor.has_predecessor(axis) {
                let p = idx - strides[axis];
                ger_acc(&mut grads.recurrent[axis], d, &tape.act[p * h..(p + 1) * h]);
                gemv_t_acc(&mut err[p * h..(p + 1) * h], &weights.recurrent[axis], d);
            }
        }
        cursor.retreat();
    }

    Ok(TanhBackward {
        deltas: DeltaTape::new(shape.clone(), h, deltas)?,
        gradients: grads,
        input_gradient: SequenceND::from_raw(shape.clone(), iw, input_grad),
    })
}
