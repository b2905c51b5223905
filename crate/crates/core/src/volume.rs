//! 3D scalar volumes: container, intensity preprocessing, noise degradation,
//! in-plane bilinear sampling and the `VOL1` binary format.
//!
//! Voxel `(x, y, z)` lives at `data[x + nx * (y + ny * z)]` and its center is
//! at integer coordinates. The axial plane spans `x` and `y`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub const VOL_MAGIC: &[u8; 4] = b"VOL1";
const VOL_HEADER_LEN: usize = 4 + 3 * 4 + 3 * 4;

/// Minimum voxel count for the 5th/95th percentiles to be meaningful.
pub const MIN_PREPROCESS_VOXELS: usize = 20;

/// Anatomical orientation of the voxel axes. Only RAS is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    #[default]
    Ras,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f32; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!("volume dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig(format!("voxel spacing must be positive, got {spacing:?}")));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: data.len() });
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn filled(dims: [usize; 3], spacing: [f32; 3], value: f32) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims[0] * dims[1] * dims[2]])
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel in storage order.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f32; 3],
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn orientation(&self) -> Orientation {
        Orientation::Ras
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Axial slice `z` as a row-major `ny × nx` view.
    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.dims[0] * self.dims[1];
        &self.data[z * n..(z + 1) * n]
    }

    fn with_data(&self, data: Vec<f32>) -> Self {
        Self { dims: self.dims, spacing: self.spacing, data }
    }
}

/// Percentile of an ascending slice by linear interpolation at index `q·(N−1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// The affine intensity map applied by [`preprocess`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rescale {
    pub low: f64,
    pub high: f64,
}

impl Rescale {
    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.low) / (self.high - self.low)
    }
}

/// Maps the 5th percentile to 0 and the 95th to 1. Values outside the band are not clamped.
pub fn preprocess(v: &Volume) -> Result<Volume> {
    preprocess_with_stats(v).map(|(out, _)| out)
}

pub fn preprocess_with_stats(v: &Volume) -> Result<(Volume, Rescale)> {
    if v.len() < MIN_PREPROCESS_VOXELS {
        return Err(Error::TooFewVoxels { required: MIN_PREPROCESS_VOXELS, found: v.len() });
    }
    let mut sorted: Vec<f64> = v.data.iter().map(|&x| x as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let rescale = Rescale { low: percentile(&sorted, 0.05), high: percentile(&sorted, 0.95) };
    if !(rescale.high > rescale.low) {
        return Err(Error::DegenerateIntensity(rescale.low));
    }
    let data = v.data.iter().map(|&x| rescale.apply(x as f64) as f32).collect();
    Ok((v.with_data(data), rescale))
}

/// Noise level `alpha` and RNG seed for [`add_noise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    alpha: f64,
    seed: u64,
}

impl NoiseSpec {
    pub fn new(alpha: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!("noise level must lie in [0, 1], got {alpha}")));
        }
        Ok(Self { alpha, seed })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// `alpha·g + (1 − alpha)·v` with `g ~ N(0, 1)` i.i.d. per voxel, drawn in storage order.
pub fn add_noise(v: &Volume, spec: NoiseSpec) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a = spec.alpha;
    let data = v
        .data
        .iter()
        .map(|&x| {
            let g: f64 = StandardNormal.sample(&mut rng);
            (a * g + (1.0 - a) * x as f64) as f32
        })
        .collect();
    v.with_data(data)
}

/// Bilinear interpolation in the axial plane of slice `z`.
pub fn sample_bilinear(v: &Volume, x: f64, y: f64, z: usize) -> Result<f64> {
    let [nx, ny, nz] = v.dims;
    if z >= nz {
        return Err(Error::OutOfBounds(format!("slice {z} outside [0, {nz})")));
    }
    let inside = |c: f64, n: usize| c >= 0.0 && c <= (n - 1) as f64;
    if !inside(x, nx) || !inside(y, ny) {
        return Err(Error::OutOfBounds(format!(
            "({x}, {y}) outside [0, {}]×[0, {}]",
            nx - 1,
            ny - 1
        )));
    }
    Ok(bilinear_unchecked(v, x, y, z))
}

/// Like [`sample_bilinear`] but clamps `x`/`y` to the slice. `z` must be valid.
#[inline]
pub fn sample_bilinear_clamped(v: &Volume, x: f64, y: f64, z: usize) -> f64 {
    let [nx, ny, _] = v.dims;
    bilinear_unchecked(v, x.clamp(0.0, (nx - 1) as f64), y.clamp(0.0, (ny - 1) as f64), z)
}

#[inline]
fn bilinear_unchecked(v: &Volume, x: f64, y: f64, z: usize) -> f64 {
    let [nx, ny, _] = v.dims;
    let x0 = (x.floor() as usize).min(nx - 1);
    let y0 = (y.floor() as usize).min(ny - 1);
    let x1 = (x0 + 1).min(nx - 1);
    let y1 = (y0 + 1).min(ny - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let s = v.slice(z);
    let at = |xx: usize, yy: usize| s[xx + nx * yy] as f64;
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let mut out = Vec::with_capacity(VOL_HEADER_LEN + 4 * v.len());
    out.extend_from_slice(VOL_MAGIC);
    for d in v.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in v.spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for x in &v.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < VOL_HEADER_LEN {
        return Err(Error::Format(format!("VOL header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != VOL_MAGIC {
        return Err(Error::Format(format!("bad VOL magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| -> [u8; 4] { bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap() };
    let dims = [0, 1, 2].map(|i| u32::from_le_bytes(word(i)) as usize);
    let spacing = [3, 4, 5].map(|i| f32::from_le_bytes(word(i)));
    let payload = &bytes[VOL_HEADER_LEN..];
    let expected = dims[0] * dims[1] * dims[2];
    if payload.len() % 4 != 0 || payload.len() / 4 != expected {
        return Err(Error::DimensionMismatch { expected, found: payload.len() / 4 });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(dims, spacing, data)
}

pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_volume(v)).map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    decode_volume(&bytes)
}
