//! Pieces shared by the hidden-layer kinds: error tapes, named parameter
//! groups and the handful of dense kernels the scans need.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{SequenceND, Shape};

/// Per-point error signals of a hidden layer (one `width`-vector per point).
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaTape {
    shape: Shape,
    width: usize,
    values: Vec<f64>,
}

impl DeltaTape {
    pub fn zeros(shape: Shape, width: usize) -> Self {
        let values = vec![0.0; shape.point_count() * width];
        DeltaTape {
            shape,
            width,
            values,
        }
    }

    pub fn new(shape: Shape, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.point_count() * width {
            return Err(Error::precondition(format!(
                "delta tape has {} values, expected {}",
                values.len(),
                shape.point_count() * width
            )));
        }
        Ok(DeltaTape {
            shape,
            width,
            values,
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn point(&self, flat: usize) -> &[f64] {
        &self.values[flat * self.width..(flat + 1) * self.width]
    }

    pub fn point_mut(&mut self, flat: usize) -> &mut [f64] {
        &mut self.values[flat * self.width..(flat + 1) * self.width]
    }
}

/// Which role a block of parameters plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupKind {
    Input,
    /// Recurrent weights from the predecessor along this axis.
    Recurrent(usize),
    Peephole,
    Bias,
    OutputWeights,
    OutputBias,
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKind::Input => write!(f, "input"),
            GroupKind::Recurrent(axis) => write!(f, "recurrent[{axis}]"),
            GroupKind::Peephole => write!(f, "peephole"),
            GroupKind::Bias => write!(f, "bias"),
            GroupKind::OutputWeights => write!(f, "output.weights"),
            GroupKind::OutputBias => write!(f, "output.bias"),
        }
    }
}

/// Identifies one parameter group inside a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GroupId {
    /// Scan direction of the owning hidden layer; `None` for the output layer.
    pub direction: Option<usize>,
    pub kind: GroupKind,
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.direction {
            Some(d) => write!(f, "dir{d}.{}", self.kind),
            None => write!(f, "{}", self.kind),
        }
    }
}

/// Uniform access to a parameter store as an ordered list of named slices.
/// The order is the checkpoint order.
pub trait ParamGroups {
    fn groups(&self) -> Vec<(GroupKind, &[f64])>;
    fn groups_mut(&mut self) -> Vec<(GroupKind, &mut [f64])>;

    fn param_count(&self) -> usize {
        self.groups().iter().map(|(_, v)| v.len()).sum()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// y += W x, with W row-major `y.len() x x.len()`.
#[inline]
pub(crate) fn gemv_acc(y: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), y.len() * cols);
    for (yk, row) in y.iter_mut().zip(w.chunks_exact(cols)) {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *yk += acc;
    }
}

/// y += W^T d, with W row-major `d.len() x y.len()`.
#[inline]
pub(crate) fn gemv_t_acc(y: &mut [f64], w: &[f64], d: &[f64]) {
    let cols = y.len();
    debug_assert_eq!(w.len(), d.len() * cols);
    for (&dk, row) in d.iter().zip(w.chunks_exact(cols)) {
        if dk == 0.0 {
            continue;
        }
        for (yj, a) in y.iter_mut().zip(row) {
            *yj += dk * a;
        }
    }
}

/// G += d x^T, with G row-major `d.len() x x.len()`.
#[inline]
pub(crate) fn ger_acc(g: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(g.len(), d.len() * cols);
    for (&dk, row) in d.iter().zip(g.chunks_exact_mut(cols)) {
        if dk == 0.0 {
            continue;
        }
        for (gj, xj) in row.iter_mut().zip(x) {
            *gj += dk * xj;
        }
    }
}

pub(crate) fn check_input(input: &SequenceND, num_dims: usize, width: usize) -> Result<()> {
    if input.shape().arity() != num_dims {
        return Err(Error::config(format!(
            "layer expects {num_dims}-dimensional input, got shape {}",
            input.shape()
        )));
    }
    if input.width() != width {
        return Err(Error::config(format!(
            "layer expects input width {width}, got {}",
            input.width()
        )));
    }
    Ok(())
}
