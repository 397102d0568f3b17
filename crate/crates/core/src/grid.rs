//! N-dimensional grids: shapes, coordinates, the lexicographic scan order and
//! the axis reflections used by multi-directional networks.
//!
//! Storage is dense and row-major (last axis varies fastest), so the
//! lexicographic scan order coincides with increasing flat index. Every
//! axis-predecessor of a point therefore has a smaller flat index, which is
//! the property the recurrent layers rely on.

use std::fmt;

use crate::error::{Error, Result};

/// Lengths of each axis of an n-dimensional grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::config("shape must have at least one axis"));
        }
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return Err(Error::config(format!("axis {axis} has zero length")));
        }
        let mut strides = vec![1; dims.len()];
        let mut len: usize = 1;
        for axis in (0..dims.len()).rev() {
            strides[axis] = len;
            len = len
                .checked_mul(dims[axis])
                .ok_or_else(|| Error::config("point count overflows usize"))?;
        }
        Ok(Shape {
            dims: dims.to_vec(),
            strides,
            len,
        })
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Number of axes (n).
    #[inline]
    pub fn arity(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn point_count(&self) -> usize {
        self.len
    }

    /// Number of scan directions of a multi-directional network over this shape.
    pub fn direction_count(&self) -> usize {
        1 << self.arity()
    }

    pub fn contains(&self, coord: &Coord) -> bool {
        coord.0.len() == self.arity() && coord.0.iter().zip(&self.dims).all(|(&c, &d)| c < d)
    }

    fn check(&self, coord: &Coord) -> Result<()> {
        if self.contains(coord) {
            Ok(())
        } else {
            Err(Error::precondition(format!(
                "coordinate {coord} outside shape {self}"
            )))
        }
    }

    pub fn flat_index(&self, coord: &Coord) -> Result<usize> {
        self.check(coord)?;
        Ok(coord.0.iter().zip(&self.strides).map(|(c, s)| c * s).sum())
    }

    pub fn coord_of(&self, mut flat: usize) -> Coord {
        debug_assert!(flat < self.len);
        let mut out = vec![0; self.arity()];
        for (axis, &stride) in self.strides.iter().enumerate() {
            out[axis] = flat / stride;
            flat %= stride;
        }
        Coord(out)
    }

    /// Flat-index permutation realising `reflect` for every point. The map is
    /// its own inverse.
    pub fn reflection_map(&self, direction: usize) -> Vec<usize> {
        let mut map = Vec::with_capacity(self.len);
        let mut cursor = Cursor::new(self);
        loop {
            let mut target = 0;
            for axis in 0..self.arity() {
                let c = cursor.coord[axis];
                let c = if direction >> axis & 1 == 1 {
                    self.dims[axis] - 1 - c
                } else {
                    c
                };
                target += c * self.strides[axis];
            }
            map.push(target);
            if !cursor.advance() {
                break;
            }
        }
        map
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_tuple(f, &self.dims)
    }
}

fn write_tuple(f: &mut fmt::Formatter<'_>, xs: &[usize]) -> fmt::Result {
    write!(f, "(")?;
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            write!(f, ",")?;
        }
        write!(f, "{x}")?;
    }
    write!(f, ")")
}

/// A point in a grid, one component per axis.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord(pub Vec<usize>);

impl Coord {
    pub fn new(components: &[usize]) -> Self {
        Coord(components.to_vec())
    }

    pub fn components(&self) -> &[usize] {
        &self.0
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_tuple(f, &self.0)
    }
}

impl From<Vec<usize>> for Coord {
    fn from(v: Vec<usize>) -> Self {
        Coord(v)
    }
}

/// Iterator over every coordinate of a shape in lexicographic order.
pub struct ScanOrder<'a> {
    cursor: Cursor<'a>,
    done: bool,
}

impl Iterator for ScanOrder<'_> {
    type Item = Coord;

    fn next(&mut self) -> Option<Coord> {
        if self.done {
            return None;
        }
        let out = Coord(self.cursor.coord.clone());
        self.done = !self.cursor.advance();
        Some(out)
    }
}

pub fn scan_order(shape: &Shape) -> ScanOrder<'_> {
    ScanOrder {
        cursor: Cursor::new(shape),
        done: false,
    }
}

/// Mirrors every axis whose bit is set in `direction`.
pub fn reflect(coord: &Coord, shape: &Shape, direction: usize) -> Result<Coord> {
    shape.check(coord)?;
    if direction >= shape.direction_count() {
        return Err(Error::precondition(format!(
            "direction {direction} needs more than {} bits",
            shape.arity()
        )));
    }
    Ok(Coord(
        coord
            .0
            .iter()
            .zip(shape.dims())
            .enumerate()
            .map(|(axis, (&c, &d))| {
                if direction >> axis & 1 == 1 {
                    d - 1 - c
                } else {
                    c
                }
            })
            .collect(),
    ))
}

/// The neighbour one step back along `axis`, or `None` on the boundary.
pub fn predecessor(coord: &Coord, axis: usize) -> Option<Coord> {
    let c = *coord.0.get(axis)?;
    if c == 0 {
        return None;
    }
    let mut out = coord.clone();
    out.0[axis] -= 1;
    Some(out)
}

/// Odometer over a shape that tracks the coordinate of the current flat index.
/// Used by the layer kernels to decide which recurrent terms exist.
pub(crate) struct Cursor<'a> {
    shape: &'a Shape,
    pub(crate) coord: Vec<usize>,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(shape: &'a Shape) -> Self {
        Cursor {
            shape,
            coord: vec![0; shape.arity()],
        }
    }

    /// Positioned at the last point of the scan.
    pub(crate) fn at_end(shape: &'a Shape) -> Self {
        Cursor {
            shape,
            coord: shape.dims.iter().map(|d| d - 1).collect(),
        }
    }

    #[inline]
    pub(crate) fn has_predecessor(&self, axis: usize) -> bool {
        self.coord[axis] > 0
    }

    /// Steps forward; false once the scan is exhausted.
    pub(crate) fn advance(&mut self) -> bool {
        for axis in (0..self.coord.len()).rev() {
            self.coord[axis] += 1;
            if self.coord[axis] < self.shape.dims[axis] {
                return true;
            }
            self.coord[axis] = 0;
        }
        false
    }

    pub(crate) fn retreat(&mut self) -> bool {
        for axis in (0..self.coord.len()).rev() {
            if self.coord[axis] > 0 {
                self.coord[axis] -= 1;
                return true;
            }
            self.coord[axis] = self.shape.dims[axis] - 1;
        }
        false
    }
}

/// An n-dimensional grid of fixed-width real vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceND {
    shape: Shape,
    width: usize,
    values: Vec<f64>,
}

impl SequenceND {
    pub fn new(shape: Shape, width: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 {
            return Err(Error::config("sequence width must be positive"));
        }
        if values.len() != shape.point_count() * width {
            return Err(Error::config(format!(
                "sequence storage has {} values, shape {shape} x width {width} needs {}",
                values.len(),
                shape.point_count() * width
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "non-finite value at storage index {i}"
            )));
        }
        Ok(SequenceND {
            shape,
            width,
            values,
        })
    }

    pub fn zeros(shape: Shape, width: usize) -> Self {
        let values = vec![0.0; shape.point_count() * width];
        SequenceND {
            shape,
            width,
            values,
        }
    }

    /// Skips the finiteness scan; callers guarantee the invariant.
    pub(crate) fn from_raw(shape: Shape, width: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), shape.point_count() * width);
        SequenceND {
            shape,
            width,
            values,
        }
    }

    #[inline]
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn point(&self, flat: usize) -> &[f64] {
        &self.values[flat * self.width..(flat + 1) * self.width]
    }

    #[inline]
    pub fn point_mut(&mut self, flat: usize) -> &mut [f64] {
        &mut self.values[flat * self.width..(flat + 1) * self.width]
    }

    pub fn at(&self, coord: &Coord) -> Result<&[f64]> {
        Ok(self.point(self.shape.flat_index(coord)?))
    }

    /// The same data seen from the axes of `direction`: point `reflect(c)` of
    /// the result holds point `c` of `self`.
    pub fn reflected(&self, direction: usize) -> SequenceND {
        if direction == 0 {
            return self.clone();
        }
        let map = self.shape.reflection_map(direction);
        self.permuted(&map)
    }

    pub(crate) fn permuted(&self, map: &[usize]) -> SequenceND {
        let mut values = vec![0.0; self.values.len()];
        let w = self.width;
        for (src, &dst) in map.iter().enumerate() {
            values[dst * w..(dst + 1) * w].copy_from_slice(self.point(src));
        }
        SequenceND::from_raw(self.shape.clone(), w, values)
    }
}

/// Per-point class targets aligned with a [`SequenceND`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelGrid {
    shape: Shape,
    num_classes: usize,
    labels: Vec<usize>,
}

impl LabelGrid {
    pub fn new(shape: Shape, num_classes: usize, labels: Vec<usize>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::config("label grid needs at least one class"));
        }
        if labels.len() != shape.point_count() {
            return Err(Error::config(format!(
                "{} labels for {} points",
                labels.len(),
                shape.point_count()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::data(format!(
                "label {l} at point {} is not below {num_classes} classes",
                shape.coord_of(i)
            )));
        }
        Ok(LabelGrid {
            shape,
            num_classes,
            labels,
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}
