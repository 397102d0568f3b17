//! Sensitivity maps and hidden-activation rasters.

use std::fmt::Write as _;
use std::path::Path;

use image::GrayImage;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::{Coord, SequenceND, Shape};
use crate::metrics::argmax;
use crate::network::{backward_from_logit_deltas, network_forward_with, Network};

/// `|d o_k(focus) / d input(x)|` summed over input channels, for every `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianMap {
    pub shape: Shape,
    pub values: Vec<f64>,
    pub focus: Coord,
    pub class: usize,
    /// The signed derivatives, one per input value.
    pub gradient: SequenceND,
}

/// Derivative of the pre-softmax output `o_class` at `focus` with respect
/// to every input value.
pub fn jacobian(
    net: &Network,
    input: &SequenceND,
    focus: &Coord,
    class: usize,
    exec: Execution,
) -> Result<JacobianMap> {
    let shape = input.shape();
    if !shape.contains(focus) {
        return Err(Error::precondition(format!(
            "focus point {focus} lies outside shape {shape}"
        )));
    }
    let k = net.config().output_width;
    if class >= k {
        return Err(Error::precondition(format!(
            "class {class} out of range for {k} outputs"
        )));
    }
    let fwd = network_forward_with(net, input, exec)?;
    let mut seed = SequenceND::zeros(shape.clone(), k);
    seed.point_mut(shape.flat_index(focus)?)[class] = 1.0;
    let (_, gradient) = backward_from_logit_deltas(net, input, &fwd, &seed, exec)?;
    let values = (0..shape.point_count())
        .map(|p| gradient.point(p).iter().map(|g| g.abs()).sum())
        .collect();
    Ok(JacobianMap {
        shape: shape.clone(),
        values,
        focus: focus.clone(),
        class,
        gradient,
    })
}

/// Min-max scaling to bytes. A constant input maps to all zeros.
pub fn normalize_to_u8(values: &[f64]) -> (Vec<u8>, f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bytes = if hi > lo {
        values
            .iter()
            .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
            .collect()
    } else {
        vec![0; values.len()]
    };
    (bytes, lo, hi)
}

fn raster(shape: &Shape, bytes: Vec<u8>) -> Result<GrayImage> {
    let (rows, cols) = match *shape.dims() {
        [r, c] => (r, c),
        [c] => (1, c),
        _ => {
            return Err(Error::precondition(format!(
                "rasters need a 1D or 2D grid, got shape {shape}"
            )))
        }
    };
    Ok(GrayImage::from_raw(cols as u32, rows as u32, bytes).expect("one byte per point"))
}

impl JacobianMap {
    /// 8-bit raster plus the `(min, max)` used for scaling.
    pub fn to_raster(&self) -> Result<(GrayImage, f64, f64)> {
        let (bytes, lo, hi) = normalize_to_u8(&self.values);
        Ok((raster(&self.shape, bytes)?, lo, hi))
    }

    pub fn sidecar(&self, lo: f64, hi: f64) -> String {
        format!(
            "shape = {}\nfocus = {}\nclass = {}\nmin = {lo}\nmax = {hi}\nsum = {}\n",
            self.shape,
            self.focus,
            self.class,
            self.values.iter().sum::<f64>()
        )
    }

    /// Writes the raster and its text sidecar.
    pub fn save(&self, raster_path: &Path, sidecar_path: &Path) -> Result<()> {
        let (img, lo, hi) = self.to_raster()?;
        img.save(raster_path)?;
        std::fs::write(sidecar_path, self.sidecar(lo, hi))?;
        Ok(())
    }
}

/// One hidden unit of one scan direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnitSelection {
    pub direction: usize,
    pub unit: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitRaster {
    pub selection: UnitSelection,
    pub image: GrayImage,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationDump {
    pub units: Vec<UnitRaster>,
    /// Winning class per point, scaled by `255 / (K-1)`.
    pub argmax: GrayImage,
    pub num_classes: usize,
}

pub fn dump_activations(
    net: &Network,
    input: &SequenceND,
    selection: &[UnitSelection],
    exec: Execution,
) -> Result<ActivationDump> {
    let cfg = net.config();
    let width = cfg.layer.output_width();
    for s in selection {
        if s.direction >= cfg.directions() || s.unit >= width {
            return Err(Error::precondition(format!(
                "unit {} of direction {} does not exist ({} directions x {width} units)",
                s.unit,
                s.direction,
                cfg.directions()
            )));
        }
    }
    let fwd = network_forward_with(net, input, exec)?;
    let shape = input.shape();
    let n = shape.point_count();
    let units = selection
        .iter()
        .map(|&s| {
            let vals: Vec<f64> = (0..n).map(|p| fwd.hidden(s.direction, p)[s.unit]).collect();
            let (bytes, min, max) = normalize_to_u8(&vals);
            Ok(UnitRaster {
                selection: s,
                image: raster(shape, bytes)?,
                min,
                max,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k = cfg.output_width;
    let scale = if k > 1 { 255 / (k - 1) } else { 0 };
    let classes = (0..n)
        .map(|p| (argmax(fwd.probabilities.point(p)) * scale).min(255) as u8)
        .collect();
    Ok(ActivationDump {
        units,
        argmax: raster(shape, classes)?,
        num_classes: k,
    })
}

impl ActivationDump {
    /// Writes `unit_d{d}_u{m}.png` per selection, `argmax.png` and
    /// `activations.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut side = String::new();
        for u in &self.units {
            let name = format!("unit_d{}_u{}.png", u.selection.direction, u.selection.unit);
            u.image.save(dir.join(&name))?;
            let _ = writeln!(side, "{name}\tmin = {}\tmax = {}", u.min, u.max);
        }
        self.argmax.save(dir.join("argmax.png"))?;
        let k = self.num_classes;
        let scale = if k > 1 { 255 / (k - 1) } else { 0 };
        let _ = writeln!(side, "argmax.png\tclass = value / {scale}");
        std::fs::write(dir.join("activations.txt"), side)?;
        Ok(())
    }
}
