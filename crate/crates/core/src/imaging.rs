//! Sensor image rectification, binarization and HOG descriptors.
//!
//! The standard chain is undistort → binarize → crop to foreground →
//! resize → HOG; see [`ImagePipeline::descriptor`].

use std::io::{BufReader, Cursor, Read, Write};
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageDecoder, ImageEncoder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image geometry: {0}")]
    Geometry(String),
    #[error("undistortion map of {grid_w}x{grid_h} samples cannot cover {out_w}x{out_h} output")]
    MapSizeMismatch {
        grid_w: usize,
        grid_h: usize,
        out_w: usize,
        out_h: usize,
    },
    #[error("invalid undistortion map: {0}")]
    InvalidMap(String),
    #[error("PGM format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ImageError>;

/// 8-bit single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImageError::Geometry(format!(
                "empty image {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(ImageError::Geometry(format!(
                "{} bytes for {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(u8) -> u8) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Sub-image with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(ImageError::Geometry(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Bilinear sample at continuous pixel coordinates, clamped to the edges.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) as f64 * (1.0 - fx) + self.get(x1, y0) as f64 * fx;
        let bottom = self.get(x0, y1) as f64 * (1.0 - fx) + self.get(x1, y1) as f64 * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Decodes a binary (P5) PGM with maxval 255.
    pub fn decode_pgm(bytes: &[u8]) -> Result<Self> {
        let decoder =
            PnmDecoder::new(BufReader::new(Cursor::new(bytes))).map_err(|e| ImageError::Format(e.to_string()))?;
        if decoder.subtype() != PnmSubtype::Graymap(SampleEncoding::Binary) {
            return Err(ImageError::Format("expected binary graymap (P5)".into()));
        }
        let maxval = decoder.header().maximal_sample();
        if maxval != 255 {
            return Err(ImageError::Format(format!("maxval {maxval}, expected 255")));
        }
        let (w, h) = decoder.dimensions();
        let mut data = vec![0u8; decoder.total_bytes() as usize];
        decoder
            .read_image(&mut data)
            .map_err(|e| ImageError::Format(e.to_string()))?;
        Self::new(w as usize, h as usize, data)
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = Vec::new();
        PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(
                &self.data,
                self.width as u32,
                self.height as u32,
                ExtendedColorType::L8,
            )
            .expect("in-memory PGM encoding");
        out
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode_pgm(&bytes)
            .map_err(|e| ImageError::Format(format!("{}: {e}", path.display())))
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_pgm()).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Calibration grid mapping rectified output positions to normalized raw
/// source coordinates `(u, v) ∈ [0, 1]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct UndistortionMap {
    grid_width: usize,
    grid_height: usize,
    samples: Vec<[f32; 2]>,
}

const MAP_MAGIC: &[u8; 4] = b"LMUM";
const INVALID_SAMPLE: [f32; 2] = [-1.0, -1.0];

impl UndistortionMap {
    /// `samples` are row-major; `None` marks regions with no source pixel.
    pub fn new(grid_width: usize, grid_height: usize, samples: Vec<Option<[f32; 2]>>) -> Result<Self> {
        if grid_width == 0 || grid_height == 0 {
            return Err(ImageError::InvalidMap("empty grid".into()));
        }
        if samples.len() != grid_width * grid_height {
            return Err(ImageError::InvalidMap(format!(
                "{} samples for a {grid_width}x{grid_height} grid",
                samples.len()
            )));
        }
        let samples = samples
            .into_iter()
            .map(|s| match s {
                None => Ok(INVALID_SAMPLE),
                Some([u, v]) if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) => Ok([u, v]),
                Some([u, v]) => Err(ImageError::InvalidMap(format!(
                    "sample ({u}, {v}) outside [0,1]²"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid_width,
            grid_height,
            samples,
        })
    }

    pub fn from_fn(
        grid_width: usize,
        grid_height: usize,
        f: impl Fn(usize, usize) -> Option<[f32; 2]>,
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(grid_width * grid_height);
        for j in 0..grid_height {
            for i in 0..grid_width {
                samples.push(f(i, j));
            }
        }
        Self::new(grid_width, grid_height, samples)
    }

    /// Map whose sample `(i, j)` is `(i / (w−1), j / (h−1))`.
    pub fn identity(grid_width: usize, grid_height: usize) -> Result<Self> {
        let norm = |i: usize, n: usize| if n > 1 { i as f32 / (n - 1) as f32 } else { 0.0 };
        Self::from_fn(grid_width, grid_height, |i, j| {
            Some([norm(i, grid_width), norm(j, grid_height)])
        })
    }

    /// Map undoing a radial lens model `r_raw = r (1 + k1 r²)` with `r` in
    /// normalized coordinates centered on the image (`[-1, 1]` across).
    /// Negative `k1` is barrel distortion.
    pub fn radial(grid_width: usize, grid_height: usize, k1: f64) -> Result<Self> {
        let norm = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        Self::from_fn(grid_width, grid_height, |i, j| {
            let (x, y) = (2.0 * norm(i, grid_width) - 1.0, 2.0 * norm(j, grid_height) - 1.0);
            let (xd, yd) = distort_radial(x, y, k1);
            let (u, v) = ((xd + 1.0) / 2.0, (yd + 1.0) / 2.0);
            ((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v)).then(|| [u as f32, v as f32])
        })
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn sample(&self, i: usize, j: usize) -> Option<[f32; 2]> {
        let s = self.samples[j * self.grid_width + i];
        (s != INVALID_SAMPLE).then_some(s)
    }

    /// Bilinearly interpolated source coordinate at fractional grid position.
    /// `None` when any sample with nonzero weight is invalid.
    fn lookup(&self, gx: f64, gy: f64) -> Option<(f64, f64)> {
        let x0 = gx.floor() as usize;
        let y0 = gy.floor() as usize;
        let fx = gx - x0 as f64;
        let fy = gy - y0 as f64;
        let x1 = (x0 + 1).min(self.grid_width - 1);
        let y1 = (y0 + 1).min(self.grid_height - 1);
        let mut u = 0.0;
        let mut v = 0.0;
        for (x, y, w) in [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ] {
            if w == 0.0 {
                continue;
            }
            let [su, sv] = self.sample(x, y)?;
            u += w * su as f64;
            v += w * sv as f64;
        }
        Some((u, v))
    }

    /// Little-endian `LMUM` container.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.samples.len());
        out.extend_from_slice(MAP_MAGIC);
        out.extend_from_slice(&(self.grid_width as u32).to_le_bytes());
        out.extend_from_slice(&(self.grid_height as u32).to_le_bytes());
        for [u, v] in &self.samples {
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAP_MAGIC {
            return Err(ImageError::InvalidMap("bad magic".into()));
        }
        let gw = read_u32(&mut r)? as usize;
        let gh = read_u32(&mut r)? as usize;
        let expected = gw
            .checked_mul(gh)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| ImageError::InvalidMap("grid size overflow".into()))?;
        if r.len() != expected {
            return Err(ImageError::InvalidMap(format!(
                "{} payload bytes for a {gw}x{gh} grid",
                r.len()
            )));
        }
        let samples = r
            .chunks_exact(8)
            .map(|c| {
                let u = f32::from_le_bytes(c[0..4].try_into().expect("4 bytes"));
                let v = f32::from_le_bytes(c[4..8].try_into().expect("4 bytes"));
                ([u, v] != INVALID_SAMPLE).then_some([u, v])
            })
            .collect();
        Self::new(gw, gh, samples)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        f.write_all(&self.to_bytes()).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| ImageError::InvalidMap("truncated header".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Forward radial model on centered normalized coordinates.
pub fn distort_radial(x: f64, y: f64, k1: f64) -> (f64, f64) {
    let f = 1.0 + k1 * (x * x + y * y);
    (x * f, y * f)
}

/// Inverse of [`distort_radial`] by fixed-point iteration.
pub fn undistort_radial(xd: f64, yd: f64, k1: f64) -> (f64, f64) {
    let (mut x, mut y) = (xd, yd);
    for _ in 0..50 {
        let f = 1.0 + k1 * (x * x + y * y);
        if f <= 1e-6 {
            break;
        }
        x = xd / f;
        y = yd / f;
    }
    (x, y)
}

/// Rectifies `raw` into an image of `out_size` through `map`.
pub fn undistort(raw: &GrayImage, map: &UndistortionMap, out_size: (usize, usize)) -> Result<GrayImage> {
    let (out_w, out_h) = out_size;
    if out_w == 0 || out_h == 0 {
        return Err(ImageError::Geometry(format!("empty output {out_w}x{out_h}")));
    }
    if (map.grid_width < 2 && out_w > 1) || (map.grid_height < 2 && out_h > 1) {
        return Err(ImageError::MapSizeMismatch {
            grid_w: map.grid_width,
            grid_h: map.grid_height,
            out_w,
            out_h,
        });
    }
    let grid_coord = |o: usize, out: usize, grid: usize| {
        if out > 1 {
            (o * (grid - 1)) as f64 / (out - 1) as f64
        } else {
            0.0
        }
    };
    let sx = (raw.width - 1) as f64;
    let sy = (raw.height - 1) as f64;
    GrayImage::from_fn(out_w, out_h, |x, y| {
        let gx = grid_coord(x, out_w, map.grid_width);
        let gy = grid_coord(y, out_h, map.grid_height);
        match map.lookup(gx, gy) {
            Some((u, v)) => to_u8(raw.sample_bilinear(u * sx, v * sy)),
            None => 0,
        }
    })
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// Pixels `>= t` become 255.
    Fixed(u8),
    Otsu,
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Otsu
    }
}

pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &p in &img.data {
        h[p as usize] += 1;
    }
    h
}

/// Threshold `t` (foreground is `>= t`) maximizing between-class variance.
/// The first maximizer wins. `None` when the image has a single intensity.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut below = 0u64;
    let mut sum_below = 0f64;
    let mut best: Option<(f64, u8)> = None;
    for t in 1..256usize {
        below += hist[t - 1];
        sum_below += (t - 1) as f64 * hist[t - 1] as f64;
        let above = total - below;
        if below == 0 || above == 0 {
            continue;
        }
        let (w0, w1) = (below as f64, above as f64);
        let diff = sum_below / w0 - (sum_all - sum_below) / w1;
        let var = w0 * w1 * diff * diff;
        if best.is_none_or(|(b, _)| var > b) {
            best = Some((var, t as u8));
        }
    }
    best.map(|(_, t)| t)
}

/// Two-valued output: 255 for foreground, 0 otherwise. A single-intensity
/// image under Otsu has no foreground.
pub fn binarize(img: &GrayImage, method: Threshold) -> GrayImage {
    match method {
        Threshold::Fixed(t) => img.map(|p| if p >= t { 255 } else { 0 }),
        Threshold::Otsu => match otsu_threshold(&histogram(img)) {
            Some(t) => img.map(|p| if p >= t { 255 } else { 0 }),
            None => img.map(|_| 0),
        },
    }
}

/// Bounding box of nonzero pixels grown by `margin` and clipped; the whole
/// image when nothing is set.
pub fn crop_to_foreground(img: &GrayImage, margin: usize) -> GrayImage {
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    for y in 0..img.height {
        for x in 0..img.width {
            if img.get(x, y) != 0 {
                bbox = Some(match bbox {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    let Some((x0, y0, x1, y1)) = bbox else {
        return img.clone();
    };
    let x0 = x0.saturating_sub(margin);
    let y0 = y0.saturating_sub(margin);
    let x1 = (x1 + margin).min(img.width - 1);
    let y1 = (y1 + margin).min(img.height - 1);
    img.crop(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
        .expect("bounding box inside image")
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn resize_bilinear(img: &GrayImage, out_size: (usize, usize)) -> Result<GrayImage> {
    let (w, h) = out_size;
    if (w, h) == (img.width, img.height) {
        return Ok(img.clone());
    }
    let kx = img.width as f64 / w as f64;
    let ky = img.height as f64 / h as f64;
    GrayImage::from_fn(w, h, |x, y| {
        let sx = (x as f64 + 0.5) * kx - 0.5;
        let sy = (y as f64 + 0.5) * ky - 0.5;
        to_u8(img.sample_bilinear(sx, sy))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HogParams {
    /// Cell side in pixels.
    pub cell_size: usize,
    /// Block side in cells.
    pub block_cells: usize,
    /// Block stride in cells.
    pub block_stride: usize,
    pub bins: usize,
    /// L2-Hys clipping level.
    pub clip: f64,
}

impl Default for HogParams {
    fn default() -> Self {
        Self {
            cell_size: 8,
            block_cells: 2,
            block_stride: 1,
            bins: 9,
            clip: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HogGeometry {
    pub cells_x: usize,
    pub cells_y: usize,
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub block_cells: usize,
    pub bins: usize,
}

impl HogGeometry {
    pub fn descriptor_len(&self) -> usize {
        self.blocks_x * self.blocks_y * self.block_cells * self.block_cells * self.bins
    }

    pub fn block_len(&self) -> usize {
        self.block_cells * self.block_cells * self.bins
    }
}

impl HogParams {
    pub fn geometry(&self, width: usize, height: usize) -> Result<HogGeometry> {
        if self.cell_size == 0 || self.block_cells == 0 || self.block_stride == 0 || self.bins == 0 {
            return Err(ImageError::Geometry(format!("degenerate HOG parameters {self:?}")));
        }
        if !(self.clip > 0.0) {
            return Err(ImageError::Geometry(format!("clip {} must be positive", self.clip)));
        }
        if width % self.cell_size != 0 || height % self.cell_size != 0 {
            return Err(ImageError::Geometry(format!(
                "{width}x{height} not divisible by cell size {}",
                self.cell_size
            )));
        }
        let cells_x = width / self.cell_size;
        let cells_y = height / self.cell_size;
        if cells_x < self.block_cells || cells_y < self.block_cells {
            return Err(ImageError::Geometry(format!(
                "{cells_x}x{cells_y} cells cannot hold a {0}x{0} block",
                self.block_cells
            )));
        }
        Ok(HogGeometry {
            cells_x,
            cells_y,
            blocks_x: (cells_x - self.block_cells) / self.block_stride + 1,
            blocks_y: (cells_y - self.block_cells) / self.block_stride + 1,
            block_cells: self.block_cells,
            bins: self.bins,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    pub values: Vec<f64>,
    pub geometry: HogGeometry,
}

const NORM_EPS: f64 = 1e-6;

fn l2_normalize(v: &mut [f64]) {
    let n = (v.iter().map(|x| x * x).sum::<f64>() + NORM_EPS * NORM_EPS).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// HOG with centered-difference gradients, unsigned orientation bins
/// centered at multiples of `180° / bins`, and L2-Hys block normalization.
pub fn compute_hog(img: &GrayImage, params: &HogParams) -> Result<HogDescriptor> {
    let geo = params.geometry(img.width, img.height)?;
    let (w, h) = (img.width, img.height);
    let bin_width = 180.0 / params.bins as f64;
    let mut cells = vec![0.0f64; geo.cells_x * geo.cells_y * params.bins];

    for y in 0..h {
        for x in 0..w {
            let px = |xx: usize, yy: usize| img.get(xx, yy) as f64;
            let gx = px((x + 1).min(w - 1), y) - px(x.saturating_sub(1), y);
            let gy = px(x, (y + 1).min(h - 1)) - px(x, y.saturating_sub(1));
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx).to_degrees();
            if theta < 0.0 {
                theta += 180.0;
            }
            if theta >= 180.0 {
                theta -= 180.0;
            }
            let pos = theta / bin_width;
            let lo = pos.floor();
            let frac = pos - lo;
            let lo = lo as usize % params.bins;
            let hi = (lo + 1) % params.bins;
            let cell = (y / params.cell_size) * geo.cells_x + x / params.cell_size;
            let base = cell * params.bins;
            cells[base + lo] += mag * (1.0 - frac);
            cells[base + hi] += mag * frac;
        }
    }

    let mut values = Vec::with_capacity(geo.descriptor_len());
    let mut block = Vec::with_capacity(geo.block_len());
    for by in 0..geo.blocks_y {
        for bx in 0..geo.blocks_x {
            block.clear();
            for cy in 0..params.block_cells {
                for cx in 0..params.block_cells {
                    let cell = (by * params.block_stride + cy) * geo.cells_x
                        + bx * params.block_stride
                        + cx;
                    block.extend_from_slice(&cells[cell * params.bins..(cell + 1) * params.bins]);
                }
            }
            l2_normalize(&mut block);
            block.iter_mut().for_each(|v| *v = v.min(params.clip));
            l2_normalize(&mut block);
            values.extend_from_slice(&block);
        }
    }
    Ok(HogDescriptor {
        values,
        geometry: geo,
    })
}

/// Which stereo image(s) feed the descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StereoMode {
    #[default]
    Left,
    /// Left and right descriptors concatenated.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImagePipeline {
    pub undistort_size: (usize, usize),
    pub threshold: Threshold,
    pub crop_margin: usize,
    pub hog_size: (usize, usize),
    pub hog: HogParams,
    pub stereo: StereoMode,
}

impl Default for ImagePipeline {
    fn default() -> Self {
        Self {
            undistort_size: (240, 240),
            threshold: Threshold::Otsu,
            crop_margin: 4,
            hog_size: (64, 64),
            hog: HogParams::default(),
            stereo: StereoMode::Left,
        }
    }
}

impl ImagePipeline {
    /// Descriptor length produced by this configuration.
    pub fn descriptor_len(&self) -> Result<usize> {
        let per_image = self.hog.geometry(self.hog_size.0, self.hog_size.1)?.descriptor_len();
        Ok(match self.stereo {
            StereoMode::Left => per_image,
            StereoMode::Both => 2 * per_image,
        })
    }

    /// Binarized, cropped and resized silhouette ready for HOG.
    pub fn prepare(&self, raw: &GrayImage, map: Option<&UndistortionMap>) -> Result<GrayImage> {
        let rectified = match map {
            Some(m) => undistort(raw, m, self.undistort_size)?,
            None => raw.clone(),
        };
        let binary = binarize(&rectified, self.threshold);
        let cropped = crop_to_foreground(&binary, self.crop_margin);
        resize_bilinear(&cropped, self.hog_size)
    }

    /// Full chain on the sample's stereo images (left first).
    pub fn descriptor(&self, images: &[GrayImage], map: Option<&UndistortionMap>) -> Result<HogDescriptor> {
        let wanted = match self.stereo {
            StereoMode::Left => 1,
            StereoMode::Both => 2,
        };
        if images.len() < wanted {
            return Err(ImageError::Geometry(format!(
                "{wanted} image(s) required, {} given",
                images.len()
            )));
        }
        let mut out: Option<HogDescriptor> = None;
        for img in &images[..wanted] {
            let d = compute_hog(&self.prepare(img, map)?, &self.hog)?;
            match &mut out {
                None => out = Some(d),
                Some(acc) => acc.values.extend_from_slice(&d.values),
            }
        }
        Ok(out.expect("at least one image"))
    }
}
