//! Single-channel float rasters and the MCG1 on-disk format.
//!
//! `Grid` is the carrier for every raster in the pipeline: elevation
//! models, thermal maps, and all derived feature layers. Values are
//! 32-bit floats, row-major, row 0 at the top (north). Nodata is NaN.
//!
//! MCG1 layout: bytes 0-3 magic `MCG1`; bytes 4-7 little-endian u32
//! header length `L`; bytes `8..8+L` a UTF-8 JSON header
//! `{"width":u32,"height":u32,"resolution_m":f64,"name":string}`;
//! then `width*height` little-endian IEEE-754 f32 values. Reads and
//! writes are bit-exact, including NaN payloads.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MCG1";
/// Paper-scale pixel size: thermal maps are resampled to 15 cm.
pub const DEFAULT_RESOLUTION_M: f64 = 0.15;
const MAX_HEADER_LEN: u32 = 1 << 20;

/// Single-channel raster with a physical resolution in meters per pixel.
///
/// Immutable by convention once built: pipeline stages take `&Grid` and
/// return new grids, so sharing across threads is safe.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub resolution_m: f64,
    pub name: String,
    values: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    width: u32,
    height: u32,
    resolution_m: f64,
    name: String,
}

impl Grid {
    pub fn new(width: usize, height: usize, resolution_m: f64, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dimension("grid dimensions must be positive"));
        }
        if resolution_m <= 0.0 || !resolution_m.is_finite() {
            return Err(Error::config("resolution_m must be positive and finite"));
        }
        if values.len() != width * height {
            return Err(Error::dimension(format!(
                "expected {} values for {}x{}, got {}",
                width * height,
                width,
                height,
                values.len()
            )));
        }
        Ok(Grid {
            width,
            height,
            resolution_m,
            name: String::new(),
            values,
        })
    }

    /// Grid filled with one value, at the default 0.15 m/px resolution.
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Grid::new(width, height, DEFAULT_RESOLUTION_M, vec![value; width * height]).unwrap()
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Grid::filled(width, height, 0.0)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_resolution(mut self, resolution_m: f64) -> Self {
        self.resolution_m = resolution_m;
        self
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.values[row * self.width + col] = value;
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.values[row * self.width..(row + 1) * self.width]
    }

    /// Rows split into disjoint mutable slices, for parallel fills.
    pub fn rows_mut(&mut self) -> std::slice::ChunksMut<'_, f32> {
        self.values.chunks_mut(self.width)
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.resolution_m == other.resolution_m
    }

    /// Mean over finite values; NaN if none.
    pub fn nan_mean(&self) -> f64 {
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for &v in &self.values {
            if v.is_finite() {
                sum += v as f64;
                n += 1;
            }
        }
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64
        }
    }

    /// Centered crop removing `margin` pixels from every edge.
    pub fn crop_border(&self, margin: usize) -> Result<Grid> {
        if 2 * margin >= self.width.min(self.height) {
            return Err(Error::dimension(format!(
                "margin {} leaves no pixels in a {}x{} grid",
                margin, self.width, self.height
            )));
        }
        let w = self.width - 2 * margin;
        let h = self.height - 2 * margin;
        let mut values = Vec::with_capacity(w * h);
        for row in margin..margin + h {
            let start = row * self.width + margin;
            values.extend_from_slice(&self.values[start..start + w]);
        }
        Ok(Grid {
            width: w,
            height: h,
            resolution_m: self.resolution_m,
            name: self.name.clone(),
            values,
        })
    }

    /// Downsample by an integer factor, each output pixel the mean of its
    /// `factor`x`factor` block ignoring NaN. Resolution scales by `factor`.
    pub fn resample_block_mean(&self, factor: usize) -> Result<Grid> {
        if factor == 0 {
            return Err(Error::config("resample factor must be >= 1"));
        }
        if self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::dimension(format!(
                "{}x{} not divisible by factor {}",
                self.width, self.height, factor
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let w = self.width / factor;
        let h = self.height / factor;
        let mut values = Vec::with_capacity(w * h);
        for by in 0..h {
            for bx in 0..w {
                let mut sum = 0.0f64;
                let mut n = 0usize;
                for dy in 0..factor {
                    for dx in 0..factor {
                        let v = self.get(by * factor + dy, bx * factor + dx);
                        if v.is_finite() {
                            sum += v as f64;
                            n += 1;
                        }
                    }
                }
                values.push(if n == 0 { f32::NAN } else { (sum / n as f64) as f32 });
            }
        }
        Ok(Grid {
            width: w,
            height: h,
            resolution_m: self.resolution_m * factor as f64,
            name: self.name.clone(),
            values,
        })
    }
}

/// Write a grid in MCG1 format; returns the byte count written.
pub fn write_grid<W: Write>(grid: &Grid, mut dest: W) -> Result<usize> {
    let header = Header {
        width: grid.width as u32,
        height: grid.height as u32,
        resolution_m: grid.resolution_m,
        name: grid.name.clone(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::format(format!("header encode: {e}")))?;
    let mut payload = Vec::with_capacity(8 + header_bytes.len() + grid.values.len() * 4);
    payload.extend_from_slice(MAGIC);
    payload.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    payload.extend_from_slice(&header_bytes);
    for v in &grid.values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    dest.write_all(&payload)?;
    Ok(payload.len())
}

pub fn write_grid_file(grid: &Grid, path: impl AsRef<Path>) -> Result<usize> {
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    let n = write_grid(grid, &mut writer)?;
    writer.flush()?;
    Ok(n)
}

/// Read an MCG1 grid, rejecting wrong magic, truncated payloads, and
/// dimension overflow.
pub fn read_grid<R: Read>(mut source: R) -> Result<Grid> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(Error::format("file shorter than MCG1 preamble"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(format!(
            "bad magic {:?}, expected \"MCG1\"",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if header_len > MAX_HEADER_LEN {
        return Err(Error::format(format!("header length {header_len} implausible")));
    }
    let header_len = header_len as usize;
    if bytes.len() < 8 + header_len {
        return Err(Error::format("truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| Error::format(format!("header decode: {e}")))?;
    let (w, h) = (header.width as usize, header.height as usize);
    if w == 0 || h == 0 {
        return Err(Error::format("zero dimension in header"));
    }
    let n_values = w
        .checked_mul(h)
        .ok_or_else(|| Error::format("dimension overflow"))?;
    let payload_len = n_values
        .checked_mul(4)
        .ok_or_else(|| Error::format("dimension overflow"))?;
    let payload = &bytes[8 + header_len..];
    if payload.len() < payload_len {
        return Err(Error::format(format!(
            "payload holds {} bytes, {}x{} needs {}",
            payload.len(),
            w,
            h,
            payload_len
        )));
    }
    let mut values = Vec::with_capacity(n_values);
    for chunk in payload[..payload_len].chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    let mut grid = Grid::new(w, h, header.resolution_m, values)?;
    grid.name = header.name;
    Ok(grid)
}

pub fn read_grid_file(path: impl AsRef<Path>) -> Result<Grid> {
    let file = std::fs::File::open(path)?;
    read_grid(std::io::BufReader::new(file))
}

/// Ordered set of co-registered named grids.
#[derive(Debug, Clone)]
pub struct GridStack {
    channels: Vec<(String, Grid)>,
}

impl GridStack {
    pub fn new(channels: Vec<(String, Grid)>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::dimension("stack needs at least one channel"));
        }
        let first = &channels[0].1;
        for (name, grid) in &channels {
            if !grid.same_shape(first) {
                return Err(Error::dimension(format!(
                    "channel {name} is {}x{}@{}, expected {}x{}@{}",
                    grid.width,
                    grid.height,
                    grid.resolution_m,
                    first.width,
                    first.height,
                    first.resolution_m
                )));
            }
        }
        for (i, (name, _)) in channels.iter().enumerate() {
            if channels[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::dimension(format!("duplicate channel name {name}")));
            }
        }
        Ok(GridStack { channels })
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.channels[0].1.width
    }

    pub fn height(&self) -> usize {
        self.channels[0].1.height
    }

    pub fn resolution_m(&self) -> f64 {
        self.channels[0].1.resolution_m
    }

    pub fn channel(&self, index: usize) -> &Grid {
        &self.channels[index].1
    }

    pub fn channel_name(&self, index: usize) -> &str {
        &self.channels[index].0
    }

    pub fn by_name(&self, name: &str) -> Option<&Grid> {
        self.channels.iter().find(|(n, _)| n == name).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Grid)> {
        self.channels.iter().map(|(n, g)| (n.as_str(), g))
    }
}
