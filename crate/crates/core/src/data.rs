//! Dataset ingestion: IDX containers, per-pixel digit targets, elastic
//! deformation, seeded splits and image/labelmap pairs.

use std::path::Path;

use byteorder::{BigEndian, ByteOrder};
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::{LabelGrid, SequenceND, Shape};

/// Class index of background pixels in the MNIST pixel task.
pub const BACKGROUND_CLASS: usize = 10;
/// Ten digits plus background.
pub const MNIST_CLASSES: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IdxType {
    U8,
    I8,
    I16,
    I32,
    F32,
    F64,
}

impl IdxType {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0x08 => IdxType::U8,
            0x09 => IdxType::I8,
            0x0B => IdxType::I16,
            0x0C => IdxType::I32,
            0x0D => IdxType::F32,
            0x0E => IdxType::F64,
            _ => return None,
        })
    }

    pub fn code(self) -> u8 {
        match self {
            IdxType::U8 => 0x08,
            IdxType::I8 => 0x09,
            IdxType::I16 => 0x0B,
            IdxType::I32 => 0x0C,
            IdxType::F32 => 0x0D,
            IdxType::F64 => 0x0E,
        }
    }

    pub fn element_size(self) -> usize {
        match self {
            IdxType::U8 | IdxType::I8 => 1,
            IdxType::I16 => 2,
            IdxType::I32 | IdxType::F32 => 4,
            IdxType::F64 => 8,
        }
    }
}

/// A raw IDX container. The payload is kept as stored (big-endian elements).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxFile {
    pub data_type: IdxType,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

impl IdxFile {
    pub fn new(data_type: IdxType, dims: Vec<usize>, payload: Vec<u8>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 255 {
            return Err(Error::Format(format!(
                "IDX rank {} is not 1..=255",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Format("IDX dimension exceeds 32 bits".into()));
        }
        let expected = payload_len(data_type, &dims)
            .ok_or_else(|| Error::Format("IDX payload size overflows".into()))?;
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "IDX payload has {} bytes, dims need {expected}",
                payload.len()
            )));
        }
        Ok(IdxFile {
            data_type,
            dims,
            payload,
        })
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::parse(
                bytes.len(),
                "truncated header, need 4 magic bytes",
            ));
        }
        if bytes[0] != 0 || bytes[1] != 0 {
            return Err(Error::parse(0, "bad magic, first two bytes must be zero"));
        }
        let data_type = IdxType::from_code(bytes[2])
            .ok_or_else(|| Error::parse(2, format!("unknown data type code 0x{:02x}", bytes[2])))?;
        let rank = bytes[3] as usize;
        if rank == 0 {
            return Err(Error::parse(3, "rank 0"));
        }
        let header = 4 + 4 * rank;
        if bytes.len() < header {
            return Err(Error::parse(
                bytes.len(),
                format!("truncated header, rank {rank} needs {header} bytes"),
            ));
        }
        let dims: Vec<usize> = (0..rank)
            .map(|i| BigEndian::read_u32(&bytes[4 + 4 * i..8 + 4 * i]) as usize)
            .collect();
        let expected =
            payload_len(data_type, &dims).ok_or_else(|| Error::parse(4, "dimensions overflow"))?;
        let body = &bytes[header..];
        if body.len() < expected {
            return Err(Error::parse(
                bytes.len(),
                format!("truncated payload, expected {expected} bytes after header"),
            ));
        }
        if body.len() > expected {
            return Err(Error::parse(
                header + expected,
                "trailing bytes after payload",
            ));
        }
        Ok(IdxFile {
            data_type,
            dims,
            payload: body.to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.payload.len());
        out.extend_from_slice(&[0, 0, self.data_type.code(), self.dims.len() as u8]);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

fn payload_len(data_type: IdxType, dims: &[usize]) -> Option<usize> {
    dims.iter()
        .try_fold(data_type.element_size(), |acc, &d| acc.checked_mul(d))
}

/// Decoded content of an unsigned-byte IDX file.
#[derive(Clone, Debug, PartialEq)]
pub enum IdxContent {
    /// Rank-3 files: one `rows x cols` width-1 sequence per item, values `/255`.
    Images(Vec<SequenceND>),
    /// Rank-1 files.
    Labels(Vec<u8>),
}

pub fn decode_idx(file: &IdxFile) -> Result<IdxContent> {
    if file.data_type != IdxType::U8 {
        return Err(Error::parse(2, "expected unsigned-byte data (type 0x08)"));
    }
    match file.dims[..] {
        [_] => Ok(IdxContent::Labels(file.payload.clone())),
        [count, rows, cols] => {
            let shape = Shape::new(&[rows, cols])
                .map_err(|_| Error::parse(8, "image dimensions must be positive"))?;
            let per = rows * cols;
            let images = (0..count)
                .map(|i| {
                    let values = file.payload[i * per..(i + 1) * per]
                        .iter()
                        .map(|&b| b as f64 / 255.0)
                        .collect();
                    SequenceND::from_raw(shape.clone(), 1, values)
                })
                .collect();
            Ok(IdxContent::Images(images))
        }
        _ => Err(Error::parse(
            3,
            format!(
                "rank {} is neither 1 (labels) nor 3 (images)",
                file.dims.len()
            ),
        )),
    }
}

pub fn load_idx(path: &Path) -> Result<IdxContent> {
    decode_idx(&IdxFile::read(path)?)
}

pub fn load_images(path: &Path) -> Result<Vec<SequenceND>> {
    match load_idx(path)? {
        IdxContent::Images(v) => Ok(v),
        IdxContent::Labels(_) => Err(Error::Data(format!(
            "{} holds labels, expected images",
            path.display()
        ))),
    }
}

pub fn load_labels(path: &Path) -> Result<Vec<u8>> {
    match load_idx(path)? {
        IdxContent::Labels(v) => Ok(v),
        IdxContent::Images(_) => Err(Error::Data(format!(
            "{} holds images, expected labels",
            path.display()
        ))),
    }
}

/// One labelled sequence. `digit` is set for MNIST pixel tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: SequenceND,
    pub targets: LabelGrid,
    pub digit: Option<usize>,
}

/// Labels every pixel brighter than `threshold` with `digit`, the rest
/// with [`BACKGROUND_CLASS`].
pub fn build_pixel_targets(image: &SequenceND, digit: usize, threshold: f64) -> Result<Sample> {
    if digit > 9 {
        return Err(Error::precondition(format!("digit {digit} is not 0..=9")));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::precondition(format!(
            "threshold {threshold} is not in [0,1)"
        )));
    }
    if image.width() != 1 {
        return Err(Error::precondition(
            "pixel targets need a single-channel image",
        ));
    }
    let labels = image
        .values()
        .iter()
        .map(|&v| {
            if v > threshold {
                digit
            } else {
                BACKGROUND_CLASS
            }
        })
        .collect();
    Ok(Sample {
        input: image.clone(),
        targets: LabelGrid::new(image.shape().clone(), MNIST_CLASSES, labels)?,
        digit: Some(digit),
    })
}

/// Reads an image/label IDX pair into pixel tasks, keeping at most `limit` items.
pub fn load_mnist(
    images_path: &Path,
    labels_path: &Path,
    threshold: f64,
    limit: Option<usize>,
) -> Result<Vec<Sample>> {
    let images = load_images(images_path)?;
    let labels = load_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let take = limit.unwrap_or(images.len()).min(images.len());
    images
        .iter()
        .zip(&labels)
        .take(take)
        .enumerate()
        .map(|(i, (img, &d))| {
            build_pixel_targets(img, d as usize, threshold)
                .map_err(|e| Error::Data(format!("item {i} of {}: {e}", labels_path.display())))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeformParams {
    /// Gaussian smoothing width in pixels.
    pub sigma: f64,
    /// Displacement scale in pixels.
    pub alpha: f64,
    pub seed: u64,
}

impl DeformParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Normalised Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable convolution with zero padding.
fn smooth(field: &[f64], rows: usize, cols: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (t, &w) in kernel.iter().enumerate() {
                let c = j as isize + t as isize - r;
                if c >= 0 && (c as usize) < cols {
                    acc += w * field[i * cols + c as usize];
                }
            }
            tmp[i * cols + j] = acc;
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (t, &w) in kernel.iter().enumerate() {
                let rr = i as isize + t as isize - r;
                if rr >= 0 && (rr as usize) < rows {
                    acc += w * tmp[rr as usize * cols + j];
                }
            }
            out[i * cols + j] = acc;
        }
    }
    out
}

/// Per-pixel displacements in pixels; `dx` moves along columns, `dy` along rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Displacement {
    pub rows: usize,
    pub cols: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl Displacement {
    pub fn max_magnitude(&self) -> f64 {
        self.dx
            .iter()
            .zip(&self.dy)
            .map(|(x, y)| x.hypot(*y))
            .fold(0.0, f64::max)
    }
}

/// Smoothed random displacement field. `stream` selects an independent
/// ChaCha stream under the same seed, one per image.
pub fn displacement_field(
    rows: usize,
    cols: usize,
    params: &DeformParams,
    stream: u64,
) -> Result<Displacement> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(stream);
    let n = rows * cols;
    let raw_x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let raw_y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let kernel = gaussian_kernel(params.sigma);
    let scale = |v: Vec<f64>| v.into_iter().map(|d| d * params.alpha).collect();
    Ok(Displacement {
        rows,
        cols,
        dx: scale(smooth(&raw_x, rows, cols, &kernel)),
        dy: scale(smooth(&raw_y, rows, cols, &kernel)),
    })
}

/// Bilinear resampling of every channel at the displaced positions;
/// samples outside the grid read as 0.
pub fn warp(image: &SequenceND, field: &Displacement) -> Result<SequenceND> {
    let (rows, cols) = match image.shape().dims() {
        &[r, c] => (r, c),
        _ => return Err(Error::precondition("elastic deformation needs a 2D image")),
    };
    if (rows, cols) != (field.rows, field.cols) {
        return Err(Error::precondition(
            "displacement field does not match image",
        ));
    }
    let w = image.width();
    let src = image.values();
    let (lo, hi) = src
        .iter()
        .fold((0.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let fetch = |r: isize, c: isize, ch: usize| -> f64 {
        if r < 0 || c < 0 || r as usize >= rows || c as usize >= cols {
            0.0
        } else {
            src[(r as usize * cols + c as usize) * w + ch]
        }
    };
    let mut out = vec![0.0; src.len()];
    for i in 0..rows {
        for j in 0..cols {
            let p = i * cols + j;
            let y = i as f64 + field.dy[p];
            let x = j as f64 + field.dx[p];
            let (y0, x0) = (y.floor(), x.floor());
            let (fy, fx) = (y - y0, x - x0);
            let (r0, c0) = (y0 as isize, x0 as isize);
            for ch in 0..w {
                let v = (1.0 - fy) * ((1.0 - fx) * fetch(r0, c0, ch) + fx * fetch(r0, c0 + 1, ch))
                    + fy * ((1.0 - fx) * fetch(r0 + 1, c0, ch) + fx * fetch(r0 + 1, c0 + 1, ch));
                // bilinear weights sum to one only up to rounding
                out[p * w + ch] = v.clamp(lo, hi);
            }
        }
    }
    SequenceND::new(image.shape().clone(), w, out)
}

pub fn elastic_deform(image: &SequenceND, params: &DeformParams) -> Result<SequenceND> {
    elastic_deform_stream(image, params, 0)
}

pub fn elastic_deform_stream(
    image: &SequenceND,
    params: &DeformParams,
    stream: u64,
) -> Result<SequenceND> {
    let dims = image.shape().dims();
    if dims.len() != 2 {
        return Err(Error::precondition("elastic deformation needs a 2D image"));
    }
    let field = displacement_field(dims[0], dims[1], params, stream)?;
    warp(image, &field)
}

/// Deforms every image of a rank-3 unsigned-byte IDX file, image `i`
/// drawing its field from stream `i`. Results are rounded back to bytes.
pub fn deform_idx(file: &IdxFile, params: &DeformParams, exec: Execution) -> Result<IdxFile> {
    params.validate()?;
    let images = match decode_idx(file)? {
        IdxContent::Images(v) => v,
        IdxContent::Labels(_) => return Err(Error::data("cannot deform a label file")),
    };
    let per = file.dims[1] * file.dims[2];
    let warped = exec
        .map(images.len(), |i| {
            elastic_deform_stream(&images[i], params, i as u64)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut payload = Vec::with_capacity(images.len() * per);
    for img in &warped {
        payload.extend(
            img.values()
                .iter()
                .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    IdxFile::new(IdxType::U8, file.dims.clone(), payload)
}

/// Seeded shuffle of `0..len`, then consecutive chunks of the given sizes.
pub fn split(len: usize, sizes: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    let total: usize = sizes.iter().sum();
    if total > len {
        return Err(Error::Data(format!(
            "split sizes sum to {total}, dataset has {len} items"
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut start = 0;
    Ok(sizes
        .iter()
        .map(|&s| {
            let part = order[start..start + s].to_vec();
            start += s;
            part
        })
        .collect())
}

pub fn split_items<T: Clone>(items: &[T], sizes: &[usize], seed: u64) -> Result<Vec<Vec<T>>> {
    Ok(split(items.len(), sizes, seed)?
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| items[i].clone()).collect())
        .collect())
}

/// Colour to class mapping for labelmap rasters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    entries: Vec<(usize, [u8; 3])>,
}

impl Palette {
    pub fn new(entries: Vec<(usize, [u8; 3])>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::data("palette is empty"));
        }
        for (i, (_, c)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(_, o)| o == c) {
                return Err(Error::Data(format!(
                    "colour ({} {} {}) appears twice in the palette",
                    c[0], c[1], c[2]
                )));
            }
        }
        Ok(Palette { entries })
    }

    /// Lines of `class R G B`; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Data(format!("palette line {}: expected `class R G B`", n + 1));
            if fields.len() != 4 {
                return Err(bad());
            }
            let class: usize = fields[0].parse().map_err(|_| bad())?;
            let mut rgb = [0u8; 3];
            for (c, f) in rgb.iter_mut().zip(&fields[1..]) {
                *c = f.parse().map_err(|_| bad())?;
            }
            entries.push((class, rgb));
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, c)| format!("{k} {} {} {}\n", c[0], c[1], c[2]))
            .collect()
    }

    pub fn entries(&self) -> &[(usize, [u8; 3])] {
        &self.entries
    }

    pub fn class_of(&self, colour: [u8; 3]) -> Option<usize> {
        self.entries
            .iter()
            .find(|(_, c)| *c == colour)
            .map(|(k, _)| *k)
    }

    pub fn colour_of(&self, class: usize) -> Option<[u8; 3]> {
        self.entries
            .iter()
            .find(|(k, _)| *k == class)
            .map(|(_, c)| *c)
    }

    /// One past the largest class index.
    pub fn num_classes(&self) -> usize {
        self.entries.iter().map(|(k, _)| k + 1).max().unwrap_or(0)
    }
}

/// RGB input in `[0,1]` and palette classes from in-memory rasters.
pub fn labelmap_sample(image: &RgbImage, labelmap: &RgbImage, palette: &Palette) -> Result<Sample> {
    if image.dimensions() != labelmap.dimensions() {
        return Err(Error::Data(format!(
            "image is {:?}, labelmap is {:?}",
            image.dimensions(),
            labelmap.dimensions()
        )));
    }
    let (w, h) = image.dimensions();
    let shape = Shape::new(&[h as usize, w as usize])?;
    let values = image.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    let mut labels = Vec::with_capacity((w * h) as usize);
    for (x, y, px) in labelmap.enumerate_pixels() {
        let c = px.0;
        labels.push(palette.class_of(c).ok_or_else(|| {
            Error::Data(format!(
                "labelmap colour ({} {} {}) at pixel ({x},{y}) is not in the palette",
                c[0], c[1], c[2]
            ))
        })?);
    }
    Ok(Sample {
        input: SequenceND::new(shape.clone(), 3, values)?,
        targets: LabelGrid::new(shape, palette.num_classes(), labels)?,
        digit: None,
    })
}

/// Loads an image (grey or RGB) and its colour-coded labelmap.
pub fn load_labelmap_pair(
    image_path: &Path,
    labelmap_path: &Path,
    palette: &Palette,
) -> Result<Sample> {
    let open = |p: &Path| {
        image::open(p)
            .map(|i| i.to_rgb8())
            .map_err(|e| Error::Data(format!("cannot load {}: {e}", p.display())))
    };
    labelmap_sample(&open(image_path)?, &open(labelmap_path)?, palette)
}

/// A generated two-texture segmentation example.
#[derive(Clone, Debug, PartialEq)]
pub struct TexturePair {
    pub image: RgbImage,
    pub labelmap: RgbImage,
    pub palette: Palette,
}

impl TexturePair {
    pub fn save(&self, image_path: &Path, labelmap_path: &Path) -> Result<()> {
        self.image.save(image_path)?;
        self.labelmap.save(labelmap_path)?;
        Ok(())
    }

    pub fn to_sample(&self) -> Result<Sample> {
        labelmap_sample(&self.image, &self.labelmap, &self.palette)
    }
}

/// Horizontal stripes (class 0) left of a wandering boundary, a coarse
/// checkerboard (class 1) right of it, both with seeded noise.
pub fn synthetic_texture_pair(rows: usize, cols: usize, seed: u64) -> TexturePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let palette = Palette::new(vec![(0, [255, 0, 0]), (1, [0, 0, 255])]).expect("distinct colours");
    let mut image = RgbImage::new(cols as u32, rows as u32);
    let mut labelmap = RgbImage::new(cols as u32, rows as u32);
    let mut boundary = cols as f64 / 2.0;
    for y in 0..rows {
        boundary = (boundary + rng.gen_range(-1.0..=1.0)).clamp(1.0, cols as f64 - 1.0);
        for x in 0..cols {
            let class = usize::from(x as f64 >= boundary);
            let base: [f64; 3] = if class == 0 {
                if (y / 2) % 2 == 0 {
                    [200.0, 170.0, 60.0]
                } else {
                    [70.0, 50.0, 30.0]
                }
            } else if ((x / 3) + (y / 3)) % 2 == 0 {
                [60.0, 120.0, 210.0]
            } else {
                [20.0, 40.0, 90.0]
            };
            let px =
                base.map(|v| (v + rng.gen_range(-20.0..=20.0)).round().clamp(0.0, 255.0) as u8);
            image.put_pixel(x as u32, y as u32, Rgb(px));
            labelmap.put_pixel(
                x as u32,
                y as u32,
                Rgb(palette.colour_of(class).expect("class in palette")),
            );
        }
    }
    TexturePair {
        image,
        labelmap,
        palette,
    }
}
