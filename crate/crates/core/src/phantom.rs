//! Synthetic black-blood phantoms with exact elliptical lumen/wall ground truth.
//!
//! A cohort is a list of participants, each with one volume holding one or two
//! vessels ("L"/"R"). Every vessel slice has a dark lumen ellipse inside a
//! bright concentric wall ellipse on a mid-gray, slowly varying background.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polar::{ContourPair, PolarCenter, N_ANGLES, SLICE_HALF_WIDTH};
use crate::volume::Volume;

/// Free space kept between the outer wall and the volume border, in voxels.
pub const BORDER_MARGIN: f64 = 5.0;

/// Ellipse with semi-axes `a` (along angle `phi`) and `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub a: f64,
    pub b: f64,
    pub phi: f64,
}

impl Ellipse {
    pub fn circle(r: f64) -> Self {
        Self { a: r, b: r, phi: 0.0 }
    }

    fn to_frame(&self, d: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.phi.sin_cos();
        [d[0] * c + d[1] * s, -d[0] * s + d[1] * c]
    }

    /// Homothety level of offset `d` from the ellipse center: `< 1` inside, `1` on the boundary.
    pub fn level(&self, d: [f64; 2]) -> f64 {
        let [x, y] = self.to_frame(d);
        ((x / self.a).powi(2) + (y / self.b).powi(2)).sqrt()
    }

    /// Distance from `d` (relative to the ellipse center) to the boundary along `theta`.
    /// `None` unless `d` is strictly inside.
    pub fn ray_distance(&self, d: [f64; 2], theta: f64) -> Option<f64> {
        let [dx, dy] = self.to_frame(d);
        let [ux, uy] = self.to_frame([theta.cos(), theta.sin()]);
        let (a2, b2) = (self.a * self.a, self.b * self.b);
        let qa = ux * ux / a2 + uy * uy / b2;
        let qb = 2.0 * (dx * ux / a2 + dy * uy / b2);
        let qc = dx * dx / a2 + dy * dy / b2 - 1.0;
        // points within rounding of the boundary count as outside
        if qc >= -1e-12 {
            return None;
        }
        let root = (qb * qb - 4.0 * qa * qc).sqrt();
        // Pick the algebraically stable form of the positive root.
        Some(if qb <= 0.0 { (-qb + root) / (2.0 * qa) } else { 2.0 * qc / (-qb - root) })
    }

    /// `n` boundary vertices, uniform in the parametric angle, counterclockwise.
    pub fn polygon(&self, center: [f64; 2], n: usize) -> Vec<[f64; 2]> {
        let (s, c) = self.phi.sin_cos();
        (0..n)
            .map(|i| {
                let t = TAU * i as f64 / n as f64;
                let (x, y) = (self.a * t.cos(), self.b * t.sin());
                [center[0] + x * c - y * s, center[1] + x * s + y * c]
            })
            .collect()
    }

    /// Largest center-to-boundary distance.
    pub fn max_radius(&self) -> f64 {
        self.a.max(self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceTruth {
    pub z: usize,
    pub center: [f64; 2],
    pub lumen: Ellipse,
    pub wall: Ellipse,
}

/// Ground truth for one vessel: geometry on every slice plus the annotated subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselTruth {
    pub participant_id: String,
    pub vessel_id: String,
    pub slices: Vec<SliceTruth>,
    #[serde(default)]
    pub annotated: Vec<usize>,
}

impl VesselTruth {
    pub fn slice(&self, z: usize) -> Option<&SliceTruth> {
        self.slices.iter().find(|s| s.z == z)
    }

    pub fn annotated_slices(&self) -> impl Iterator<Item = &SliceTruth> {
        self.annotated.iter().filter_map(|&z| self.slice(z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntensityModel {
    pub lumen_mean: f64,
    pub wall_mean: f64,
    pub background_mean: f64,
    /// Per-voxel Gaussian texture standard deviation.
    pub texture_sigma: f64,
    /// Peak-to-peak amplitude of the smooth background ramp.
    pub background_gradient: f64,
}

impl Default for IntensityModel {
    fn default() -> Self {
        Self {
            lumen_mean: 0.1,
            wall_mean: 0.7,
            background_mean: 0.4,
            texture_sigma: 0.05,
            background_gradient: 0.05,
        }
    }
}

/// Sampling ranges for vessel geometry, all in voxels except `aspect` and `wobble`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryRanges {
    /// Lumen major semi-axis range.
    pub lumen_semi_axis: [f64; 2],
    /// Minor/major axis ratio range of the lumen.
    pub aspect: [f64; 2],
    pub wall_thickness: [f64; 2],
    /// Uniform jitter of the vessel center around its nominal position.
    pub center_jitter: f64,
    /// Amplitude of the sinusoidal center drift along z.
    pub drift: f64,
    /// Relative amplitude of the semi-axis modulation along z.
    pub wobble: f64,
}

impl Default for GeometryRanges {
    fn default() -> Self {
        Self {
            lumen_semi_axis: [5.0, 8.0],
            aspect: [0.7, 1.0],
            wall_thickness: [2.5, 4.5],
            center_jitter: 4.0,
            drift: 1.0,
            wobble: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub n_participants: usize,
    pub vessels_per_participant: usize,
    pub annotated_slices_per_vessel: usize,
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub intensity: IntensityModel,
    pub geometry: GeometryRanges,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_participants: 10,
            vessels_per_participant: 2,
            annotated_slices_per_vessel: 4,
            dims: [300, 150, 16],
            spacing: [0.6, 0.6, 1.2],
            intensity: IntensityModel::default(),
            geometry: GeometryRanges::default(),
            seed: 1,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_participants == 0 || self.annotated_slices_per_vessel == 0 {
            return bad("participant and annotated slice counts must be at least 1".into());
        }
        if !(1..=2).contains(&self.vessels_per_participant) {
            return bad(format!("vessels_per_participant must be 1 or 2, got {}", self.vessels_per_participant));
        }
        let i = &self.intensity;
        for (name, m) in [("lumen", i.lumen_mean), ("wall", i.wall_mean), ("background", i.background_mean)] {
            if !(0.0..=1.0).contains(&m) {
                return bad(format!("{name} intensity mean {m} outside [0, 1]"));
            }
        }
        if i.texture_sigma < 0.0 {
            return bad("texture_sigma must be non-negative".into());
        }
        let g = &self.geometry;
        let ordered = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1];
        if !ordered(g.lumen_semi_axis) || !ordered(g.wall_thickness) || !ordered(g.aspect) || g.aspect[1] > 1.0 {
            return bad("geometry ranges must be positive and ordered; aspect within (0, 1]".into());
        }
        if self.dims[2] < 2 * SLICE_HALF_WIDTH + 1 {
            return bad(format!("need at least {} slices", 2 * SLICE_HALF_WIDTH + 1));
        }
        let usable = self.dims[2] - 2 * SLICE_HALF_WIDTH;
        if self.annotated_slices_per_vessel > usable {
            return bad(format!("{} annotated slices requested, only {usable} usable", self.annotated_slices_per_vessel));
        }
        Ok(())
    }

    /// Slices that can host a full 7-slice polar patch, spread evenly.
    fn annotated_z(&self) -> Vec<usize> {
        let usable = self.dims[2] - 2 * SLICE_HALF_WIDTH;
        let m = self.annotated_slices_per_vessel;
        (0..m).map(|k| SLICE_HALF_WIDTH + ((2 * k + 1) * usable) / (2 * m)).collect()
    }
}

/// One synthetic participant: volume plus the truth of each of its vessels.
#[derive(Debug, Clone)]
pub struct Participant {
    pub id: String,
    pub volume: Volume,
    pub vessels: Vec<VesselTruth>,
}

pub fn participant_id(index: usize) -> String {
    format!("P{index:03}")
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

fn sample_vessel(spec: &CohortSpec, pid: &str, slot: usize, rng: &mut impl Rng) -> Result<VesselTruth> {
    let [nx, ny, nz] = spec.dims;
    let g = &spec.geometry;
    let (vessel_id, nominal_x) = match (spec.vessels_per_participant, slot) {
        (1, _) => ("R", nx as f64 / 2.0),
        (_, 0) => ("L", nx as f64 / 4.0),
        _ => ("R", 3.0 * nx as f64 / 4.0),
    };
    let jitter = |rng: &mut dyn rand::RngCore| g.center_jitter * (2.0 * rng.random::<f64>() - 1.0);
    let cx = nominal_x + jitter(rng);
    let cy = ny as f64 / 2.0 + jitter(rng);
    let a = uniform(rng, g.lumen_semi_axis);
    let b = a * uniform(rng, g.aspect);
    let phi = PI * rng.random::<f64>();
    let (ta, tb) = (uniform(rng, g.wall_thickness), uniform(rng, g.wall_thickness));
    let phase: [f64; 3] = [TAU * rng.random::<f64>(), TAU * rng.random::<f64>(), TAU * rng.random::<f64>()];

    let mut slices = Vec::with_capacity(nz);
    for z in 0..nz {
        let t = TAU * z as f64 / nz as f64;
        let center = [cx + g.drift * (t + phase[0]).sin(), cy + g.drift * (t + phase[1]).sin()];
        let scale = 1.0 + g.wobble * (t + phase[2]).sin();
        let lumen = Ellipse { a: a * scale, b: b * scale, phi };
        let wall = Ellipse { a: lumen.a + ta, b: lumen.b + tb, phi };
        let reach = wall.max_radius() + BORDER_MARGIN;
        let fits = |c: f64, n: usize| c - reach >= 0.0 && c + reach <= (n - 1) as f64;
        if !fits(center[0], nx) || !fits(center[1], ny) {
            return Err(Error::GeometryOverflow(format!(
                "{pid}/{vessel_id} slice {z}: center ({:.2}, {:.2}) with outer radius {:.2} and margin {BORDER_MARGIN} exceeds {nx}×{ny}",
                center[0],
                center[1],
                wall.max_radius()
            )));
        }
        slices.push(SliceTruth { z, center, lumen, wall });
    }
    Ok(VesselTruth {
        participant_id: pid.to_string(),
        vessel_id: vessel_id.to_string(),
        slices,
        annotated: spec.annotated_z(),
    })
}

const SUBSAMPLES: usize = 4;
// Beyond this distance from a boundary a voxel is treated as fully inside or outside.
const BAND: f64 = 0.75;

/// Fractions of a voxel covered by the lumen and by the outer-wall ellipse.
fn coverage(s: &SliceTruth, x: f64, y: f64) -> (f64, f64) {
    let d = [x - s.center[0], y - s.center[1]];
    let lumen_level = s.lumen.level(d);
    let wall_level = s.wall.level(d);
    let pure = |e: &Ellipse, lvl: f64| (lvl - 1.0).abs() * e.a.min(e.b) > BAND;
    if pure(&s.lumen, lumen_level) && pure(&s.wall, wall_level) {
        return (f64::from(u8::from(lumen_level < 1.0)), f64::from(u8::from(wall_level < 1.0)));
    }
    let (mut lumen, mut wall) = (0usize, 0usize);
    for j in 0..SUBSAMPLES {
        for i in 0..SUBSAMPLES {
            let ox = (i as f64 + 0.5) / SUBSAMPLES as f64 - 0.5;
            let oy = (j as f64 + 0.5) / SUBSAMPLES as f64 - 0.5;
            let q = [d[0] + ox, d[1] + oy];
            lumen += usize::from(s.lumen.level(q) <= 1.0);
            wall += usize::from(s.wall.level(q) <= 1.0);
        }
    }
    let n = (SUBSAMPLES * SUBSAMPLES) as f64;
    (lumen as f64 / n, wall as f64 / n)
}

fn render(spec: &CohortSpec, vessels: &[VesselTruth], rng: &mut impl Rng) -> Result<Volume> {
    let [nx, ny, nz] = spec.dims;
    let im = &spec.intensity;
    let mut data = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        let here: Vec<(&SliceTruth, [f64; 4])> = vessels
            .iter()
            .filter_map(|v| v.slice(z))
            .map(|s| {
                let r = s.wall.max_radius() + 2.0;
                (s, [s.center[0] - r, s.center[0] + r, s.center[1] - r, s.center[1] + r])
            })
            .collect();
        for y in 0..ny {
            for x in 0..nx {
                let (xf, yf) = (x as f64, y as f64);
                let ramp = (xf / nx as f64 - 0.5 + yf / ny as f64 - 0.5) / 2.0;
                let background = im.background_mean + im.background_gradient * ramp;
                let hit = here
                    .iter()
                    .find(|(_, bb)| xf >= bb[0] && xf <= bb[1] && yf >= bb[2] && yf <= bb[3]);
                let mean = match hit {
                    Some((s, _)) => {
                        let (lumen, outer) = coverage(s, xf, yf);
                        im.lumen_mean * lumen + im.wall_mean * (outer - lumen) + background * (1.0 - outer)
                    }
                    None => background,
                };
                let g: f64 = StandardNormal.sample(rng);
                data.push((mean + im.texture_sigma * g) as f32);
            }
        }
    }
    Volume::new(spec.dims, spec.spacing, data)
}

fn generate_participant(spec: &CohortSpec, index: usize) -> Result<Participant> {
    let id = participant_id(index);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ index as u64);
    let vessels = (0..spec.vessels_per_participant)
        .map(|slot| sample_vessel(spec, &id, slot, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let volume = render(spec, &vessels, &mut rng)?;
    Ok(Participant { id, volume, vessels })
}

/// Generates every participant of the cohort. Deterministic in `spec.seed`;
/// participants use independent streams so generation order does not matter.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<Participant>> {
    spec.validate()?;
    (0..spec.n_participants)
        .into_par_iter()
        .map(|i| generate_participant(spec, i))
        .collect()
}

/// Exact lumen radii and wall widths along `n_angles` equiangular rays from `center`.
pub fn truth_radii(
    truth: &VesselTruth,
    z: usize,
    center: [f64; 2],
    n_angles: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = truth
        .slice(z)
        .ok_or_else(|| Error::OutOfBounds(format!("no truth for slice {z}")))?;
    let d = [center[0] - s.center[0], center[1] - s.center[1]];
    let outside = || Error::CenterOutsideLumen { x: center[0], y: center[1], z };
    let mut radii = Vec::with_capacity(n_angles);
    let mut widths = Vec::with_capacity(n_angles);
    for i in 0..n_angles {
        let theta = TAU * i as f64 / n_angles as f64;
        let r = s.lumen.ray_distance(d, theta).ok_or_else(outside)?;
        let outer = s.wall.ray_distance(d, theta).ok_or_else(outside)?;
        radii.push(r);
        widths.push(outer - r);
    }
    Ok((radii, widths))
}

/// Truth radii on the canonical 31-ray grid as a [`ContourPair`].
pub fn truth_contour(truth: &VesselTruth, center: PolarCenter<f64>) -> Result<ContourPair<f64>> {
    let (radii, widths) = truth_radii(truth, center.z, [center.x, center.y], N_ANGLES)?;
    ContourPair::new(center, radii, widths)
}


#[cfg(test)]
pub(crate) use tests::circle_spec;
