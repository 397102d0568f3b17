//! Multi-dimensional LSTM hidden layer.
//!
//! Each memory block owns `C` cells, one input gate, one output gate and one
//! forget gate per axis. A cell keeps one self-connection per axis: its state
//! is `s = ι·g + Σ_i φ_i·s(pred_i)`. Peepholes per cell: one from each
//! predecessor state into the input gate, one from the predecessor state
//! along axis `i` into forget gate `i`, and one from the current state into
//! the output gate, `2n + 1` in total.
//!
//! Gate rows are laid out in one matrix with `R = B·C + B·(n + 2)` rows:
//! cell inputs (`B·C`), input gates (`B`), output gates (`B`), then the
//! forget gates of axis 0, 1, ... (`B` each). Recurrent inputs come from the
//! block outputs `h` (`B·C` wide) of the predecessor along each axis.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{Cursor, SequenceND, Shape};
use crate::layer::{
    check_input, gemv_acc, gemv_t_acc, ger_acc, sigmoid, DeltaTape, GroupKind, ParamGroups,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmLayerConfig {
    pub num_dims: usize,
    pub input_width: usize,
    pub num_blocks: usize,
    pub cells_per_block: usize,
}

impl LstmLayerConfig {
    pub fn new(num_dims: usize, input_width: usize, num_blocks: usize) -> Self {
        LstmLayerConfig {
            num_dims,
            input_width,
            num_blocks,
            cells_per_block: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_dims == 0
            || self.input_width == 0
            || self.num_blocks == 0
            || self.cells_per_block == 0
        {
            return Err(Error::config(format!(
                "lstm layer sizes must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Total cells, which is also the width of the block output `h`.
    #[inline]
    pub fn cells(&self) -> usize {
        self.num_blocks * self.cells_per_block
    }

    /// Rows of the stacked gate/cell-input matrix.
    #[inline]
    pub fn rows(&self) -> usize {
        self.cells() + self.num_blocks * (self.num_dims + 2)
    }

    #[inline]
    pub fn peepholes_per_cell(&self) -> usize {
        2 * self.num_dims + 1
    }

    #[inline]
    fn input_gate_row(&self) -> usize {
        self.cells()
    }

    #[inline]
    fn output_gate_row(&self) -> usize {
        self.cells() + self.num_blocks
    }

    #[inline]
    fn forget_gate_row(&self, axis: usize) -> usize {
        self.cells() + self.num_blocks * (2 + axis)
    }
}

/// Trainable parameters of one LSTM layer; zero-initialised it doubles as the
/// gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights {
    /// `R x I`.
    pub input: Vec<f64>,
    /// One `R x (B·C)` block per axis.
    pub recurrent: Vec<Vec<f64>>,
    /// `(B·C) x (2n+1)`: input-gate peepholes for axes `0..n`, forget-gate
    /// peepholes for axes `0..n`, then the output-gate peephole.
    pub peephole: Vec<f64>,
    /// `R`.
    pub bias: Vec<f64>,
}

pub type LstmGradients = LstmWeights;

impl LstmWeights {
    pub fn zeros(cfg: &LstmLayerConfig) -> Self {
        let r = cfg.rows();
        let cells = cfg.cells();
        LstmWeights {
            input: vec![0.0; r * cfg.input_width],
            recurrent: vec![vec![0.0; r * cells]; cfg.num_dims],
            peephole: vec![0.0; cells * cfg.peepholes_per_cell()],
            bias: vec![0.0; r],
        }
    }

    pub fn random<R: Rng + ?Sized>(cfg: &LstmLayerConfig, rng: &mut R, range: f64) -> Self {
        let mut w = Self::zeros(cfg);
        for (_, group) in w.groups_mut() {
            for v in group {
                *v = rng.gen_range(-range..=range);
            }
        }
        w
    }

    pub fn check(&self, cfg: &LstmLayerConfig) -> Result<()> {
        let r = cfg.rows();
        let cells = cfg.cells();
        let ok = self.input.len() == r * cfg.input_width
            && self.recurrent.len() == cfg.num_dims
            && self.recurrent.iter().all(|u| u.len() == r * cells)
            && self.peephole.len() == cells * cfg.peepholes_per_cell()
            && self.bias.len() == r;
        if ok {
            Ok(())
        } else {
            Err(Error::config("lstm weights do not match layer config"))
        }
    }

    /// Row of the bias vector feeding forget gate `axis` of `block`.
    pub fn forget_bias_mut(
        &mut self,
        cfg: &LstmLayerConfig,
        axis: usize,
        block: usize,
    ) -> &mut f64 {
        &mut self.bias[cfg.forget_gate_row(axis) + block]
    }

    pub fn input_gate_bias_mut(&mut self, cfg: &LstmLayerConfig, block: usize) -> &mut f64 {
        &mut self.bias[cfg.input_gate_row() + block]
    }

    pub fn output_gate_bias_mut(&mut self, cfg: &LstmLayerConfig, block: usize) -> &mut f64 {
        &mut self.bias[cfg.output_gate_row() + block]
    }

    pub fn cell_input_bias_mut(&mut self, cell: usize) -> &mut f64 {
        &mut self.bias[cell]
    }
}

impl ParamGroups for LstmWeights {
    fn groups(&self) -> Vec<(GroupKind, &[f64])> {
        let mut out = vec![(GroupKind::Input, self.input.as_slice())];
        for (axis, u) in self.recurrent.iter().enumerate() {
            out.push((GroupKind::Recurrent(axis), u.as_slice()));
        }
        out.push((GroupKind::Peephole, self.peephole.as_slice()));
        out.push((GroupKind::Bias, self.bias.as_slice()));
        out
    }

    fn groups_mut(&mut self) -> Vec<(GroupKind, &mut [f64])> {
        let mut out = vec![(GroupKind::Input, self.input.as_mut_slice())];
        for (axis, u) in self.recurrent.iter_mut().enumerate() {
            out.push((GroupKind::Recurrent(axis), u.as_mut_slice()));
        }
        out.push((GroupKind::Peephole, self.peephole.as_mut_slice()));
        out.push((GroupKind::Bias, self.bias.as_mut_slice()));
        out
    }
}

/// Stored forward quantities of an LSTM layer over one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmTape {
    shape: Shape,
    cfg: LstmLayerConfig,
    /// `N x R` pre-activations (output-gate rows include their peephole term).
    pre: Vec<f64>,
    /// `N x R` activations: tanh for cell inputs, logistic for gates.
    act: Vec<f64>,
    /// `N x (B·C)` cell states.
    state: Vec<f64>,
    /// `N x (B·C)` block outputs.
    output: Vec<f64>,
}

impl LstmTape {
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn config(&self) -> &LstmLayerConfig {
        &self.cfg
    }

    pub fn pre_activations(&self, flat: usize) -> &[f64] {
        let r = self.cfg.rows();
        &self.pre[flat * r..(flat + 1) * r]
    }

    pub fn activations(&self, flat: usize) -> &[f64] {
        let r = self.cfg.rows();
        &self.act[flat * r..(flat + 1) * r]
    }

    pub fn cell_input(&self, flat: usize) -> &[f64] {
        &self.activations(flat)[..self.cfg.cells()]
    }

    pub fn input_gate(&self, flat: usize) -> &[f64] {
        let r = self.cfg.input_gate_row();
        &self.activations(flat)[r..r + self.cfg.num_blocks]
    }

    pub fn output_gate(&self, flat: usize) -> &[f64] {
        let r = self.cfg.output_gate_row();
        &self.activations(flat)[r..r + self.cfg.num_blocks]
    }

    pub fn forget_gate(&self, flat: usize, axis: usize) -> &[f64] {
        let r = self.cfg.forget_gate_row(axis);
        &self.activations(flat)[r..r + self.cfg.num_blocks]
    }

    pub fn state(&self, flat: usize) -> &[f64] {
        let c = self.cfg.cells();
        &self.state[flat * c..(flat + 1) * c]
    }

    pub fn output(&self, flat: usize) -> &[f64] {
        let c = self.cfg.cells();
        &self.output[flat * c..(flat + 1) * c]
    }

    pub fn outputs(&self) -> &[f64] {
        &self.output
    }
}

/// Result of [`lstm_backward`].
#[derive(Clone, Debug)]
pub struct LstmBackward {
    /// Total `dL/dh` at every point: injected error plus what flowed back
    /// through the recurrent connections.
    pub deltas: DeltaTape,
    pub gradients: LstmGradients,
    pub input_gradient: SequenceND,
}

pub fn lstm_forward(
    cfg: &LstmLayerConfig,
    weights: &LstmWeights,
    input: &SequenceND,
) -> Result<LstmTape> {
    cfg.validate()?;
    weights.check(cfg)?;
    check_input(input, cfg.num_dims, cfg.input_width)?;

    let shape = input.shape();
    let n = shape.point_count();
    let dims = cfg.num_dims;
    let r = cfg.rows();
    let cells = cfg.cells();
    let cpb = cfg.cells_per_block;
    let pw = cfg.peepholes_per_cell();
    let ig = cfg.input_gate_row();
    let og = cfg.output_gate_row();
    let strides = shape.strides();

    let mut pre = vec![0.0; n * r];
    let mut act = vec![0.0; n * r];
    let mut state = vec![0.0; n * cells];
    let mut output = vec![0.0; n * cells];
    let mut preds: Vec<Option<usize>> = vec![None; dims];

    let mut cursor = Cursor::new(shape);
    for idx in 0..n {
        for (axis, p) in preds.iter_mut().enumerate() {
            *p = cursor.has_predecessor(axis).then(|| idx - strides[axis]);
        }
        let z = &mut pre[idx * r..(idx + 1) * r];
        z.copy_from_slice(&weights.bias);
        gemv_acc(z, &weights.input, input.point(idx));
        for (axis, p) in preds.iter().enumerate() {
            if let Some(p) = *p {
                gemv_acc(
                    z,
                    &weights.recurrent[axis],
                    &output[p * cells..(p + 1) * cells],
                );
            }
        }
        let (earlier, current) = state.split_at_mut(idx * cells);
        let s = &mut current[..cells];
        // peepholes from predecessor states into input and forget gates
        for cell in 0..cells {
            let block = cell / cpb;
            let peep = &weights.peephole[cell * pw..(cell + 1) * pw];
            for (axis, p) in preds.iter().enumerate() {
                if let Some(p) = *p {
                    let sp = earlier[p * cells + cell];
                    z[ig + block] += peep[axis] * sp;
                    z[cfg.forget_gate_row(axis) + block] += peep[dims + axis] * sp;
                }
            }
        }

        let a = &mut act[idx * r..(idx + 1) * r];
        for row in 0..cells {
            a[row] = z[row].tanh();
        }
        for row in ig..og {
            a[row] = sigmoid(z[row]);
        }
        for row in cfg.forget_gate_row(0)..r {
            a[row] = sigmoid(z[row]);
        }

        for cell in 0..cells {
            let block = cell / cpb;
            let mut v = a[ig + block] * a[cell];
            for (axis, p) in preds.iter().enumerate() {
                if let Some(p) = *p {
                    v += a[cfg.forget_gate_row(axis) + block] * earlier[p * cells + cell];
                }
            }
            s[cell] = v;
        }

        for block in 0..cfg.num_blocks {
            let mut zo = z[og + block];
            for c in 0..cpb {
                let cell = block * cpb + c;
                zo += weights.peephole[cell * pw + 2 * dims] * s[cell];
            }
            z[og + block] = zo;
            a[og + block] = sigmoid(zo);
        }
        for cell in 0..cells {
            let block = cell / cpb;
            output[idx * cells + cell] = a[og + block] * s[cell].tanh();
        }
        cursor.advance();
    }

    Ok(LstmTape {
        shape: shape.clone(),
        cfg: *cfg,
        pre,
        act,
        state,
        output,
    })
}

pub fn lstm_backward(
    cfg: &LstmLayerConfig,
    weights: &LstmWeights,
    input: &SequenceND,
    tape: &LstmTape,
    output_deltas: &DeltaTape,
) -> Result<LstmBackward> {
    cfg.validate()?;
    weights.check(cfg)?;
    check_input(input, cfg.num_dims, cfg.input_width)?;
    let shape = input.shape();
    let cells = cfg.cells();
    if tape.shape() != shape || tape.cfg != *cfg {
        return Err(Error::precondition("lstm tape does not match input"));
    }
    if output_deltas.shape() != shape || output_deltas.width() != cells {
        return Err(Error::precondition("injected deltas do not match input"));
    }

    let n = shape.point_count();
    let dims = cfg.num_dims;
    let r = cfg.rows();
    let cpb = cfg.cells_per_block;
    let pw = cfg.peepholes_per_cell();
    let ig = cfg.input_gate_row();
    let og = cfg.output_gate_row();
    let iw = cfg.input_width;
    let strides = shape.strides();

    // dL/dh and the part of dL/ds arriving from successors.
    let mut dh = output_deltas.values().to_vec();
    let mut ds_in = vec![0.0; n * cells];
    let mut grads = LstmWeights::zeros(cfg);
    let mut input_grad = vec![0.0; n * iw];
    let mut d = vec![0.0; r];
    let mut ds = vec![0.0; cells];
    let mut preds: Vec<Option<usize>> = vec![None; dims];

    let mut cursor = Cursor::at_end(shape);
    for idx in (0..n).rev() {
        for (axis, p) in preds.iter_mut().enumerate() {
            *p = cursor.has_predecessor(axis).then(|| idx - strides[axis]);
        }
        let a = tape.activations(idx);
        let s = tape.state(idx);
        let dh_here = &dh[idx * cells..(idx + 1) * cells];

        // output gates
        for block in 0..cfg.num_blocks {
            let mut acc = 0.0;
            for c in 0..cpb {
                let cell = block * cpb + c;
                acc += dh_here[cell] * s[cell].tanh();
            }
            let o = a[og + block];
            d[og + block] = acc * o * (1.0 - o);
        }
        // cell states
        for cell in 0..cells {
            let block = cell / cpb;
            let ts = s[cell].tanh();
            ds[cell] = ds_in[idx * cells + cell]
                + dh_here[cell] * a[og + block] * (1.0 - ts * ts)
                + d[og + block] * weights.peephole[cell * pw + 2 * dims];
        }
        // cell inputs, input gates, forget gates
        for cell in 0..cells {
            let block = cell / cpb;
            let g = a[cell];
            d[cell] = ds[cell] * a[ig + block] * (1.0 - g * g);
        }
        for block in 0..cfg.num_blocks {
            let mut acc = 0.0;
            for c in 0..cpb {
                let cell = block * cpb + c;
                acc += ds[cell] * a[cell];
            }
            let i = a[ig + block];
            d[ig + block] = acc * i * (1.0 - i);
        }
        for axis in 0..dims {
            let fr = cfg.forget_gate_row(axis);
            for block in 0..cfg.num_blocks {
                let mut acc = 0.0;
                if let Some(p) = preds[axis] {
                    for c in 0..cpb {
                        let cell = block * cpb + c;
                        acc += ds[cell] * tape.state[p * cells + cell];
                    }
                }
                let f = a[fr + block];
                d[fr + block] = acc * f * (1.0 - f);
            }
        }

        for (g, &dk) in grads.bias.iter_mut().zip(&d) {
            *g += dk;
        }
        ger_acc(&mut grads.input, &d, input.point(idx));
        gemv_t_acc(
            &mut input_grad[idx * iw..(idx + 1) * iw],
            &weights.input,
            &d,
        );
        for cell in 0..cells {
            grads.peephole[cell * pw + 2 * dims] += d[og + cell / cpb] * s[cell];
        }
        for (axis, p) in preds.iter().enumerate() {
            let Some(p) = *p else { continue };
            let fr = cfg.forget_gate_row(axis);
            ger_acc(&mut grads.recurrent[axis], &d, tape.output(p));
            gemv_t_acc(
                &mut dh[p * cells..(p + 1) * cells],
                &weights.recurrent[axis],
                &d,
            );
            for cell in 0..cells {
                let block = cell / cpb;
                let sp = tape.state[p * cells + cell];
                let peep = &weights.peephole[cell * pw..(cell + 1) * pw];
                grads.peephole[cell * pw + axis] += d[ig + block] * sp;
                grads.peephole[cell * pw + dims + axis] += d[fr + block] * sp;
                ds_in[p * cells + cell] += ds[cell] * a[fr + block]
                    + d[fr + block] * peep[dims + axis]
                    + d[ig + block] * peep[axis];
            }
        }
        cursor.retreat();
    }

    Ok(LstmBackward {
        deltas: DeltaTape::new(shape.clone(), cells, dh)?,
        gradients: grads,
        input_gradient: SequenceND::from_raw(shape.clone(), iw, input_grad),
    })
}
