//! Polar patch geometry: ray casting around a center and contour reconstruction.
//!
//! Ray `i` points along `θ_i = 2πi/31` (counterclockwise from +x). Radial sample
//! `k` sits at distance `k + 1` voxels, so a ray covers distances 1..=127.
//! Slice index `s` of a patch maps to volume slice `cz + s − 3`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{cast, Real};
use crate::volume::{sample_bilinear_clamped, Volume};

pub const N_ANGLES: usize = 31;
pub const N_RADII: usize = 127;
pub const N_SLICES: usize = 7;
pub const SLICE_HALF_WIDTH: usize = 3;
pub const RADIAL_STEP: f64 = 1.0;

/// Canonical shape `(angles, radii, slices)` of a polar patch.
pub const PATCH_SHAPE: [usize; 3] = [N_ANGLES, N_RADII, N_SLICES];

/// Angle of canonical ray `i`.
#[inline]
pub fn ray_angle(i: usize) -> f64 {
    TAU * i as f64 / N_ANGLES as f64
}

/// Unit direction `(cos θ_i, sin θ_i)` of canonical ray `i`.
#[inline]
pub fn ray_direction<T: Real>(i: usize) -> [T; 2] {
    let (s, c) = ray_angle(i).sin_cos();
    [T::of(c), T::of(s)]
}

/// In-plane center with an integer axial slice. Serialized as `[x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "(T, T, usize)", from = "(T, T, usize)")]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct PolarCenter<T> {
    pub x: T,
    pub y: T,
    pub z: usize,
}

impl<T: Real> PolarCenter<T> {
    pub fn new(x: T, y: T, z: usize) -> Self {
        Self { x, y, z }
    }

    pub fn xy(&self) -> [T; 2] {
        [self.x, self.y]
    }

    pub fn shifted(&self, dx: T, dy: T) -> Self {
        Self { x: self.x + dx, y: self.y + dy, z: self.z }
    }

    pub fn cast<U: Real>(&self) -> PolarCenter<U> {
        PolarCenter { x: cast(self.x), y: cast(self.y), z: self.z }
    }
}

impl<T> From<PolarCenter<T>> for (T, T, usize) {
    fn from(c: PolarCenter<T>) -> Self {
        (c.x, c.y, c.z)
    }
}

impl<T> From<(T, T, usize)> for PolarCenter<T> {
    fn from((x, y, z): (T, T, usize)) -> Self {
        Self { x, y, z }
    }
}

/// Intensities sampled on the cylindrical `(angle, radius, slice)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarPatch<T> {
    center: PolarCenter<T>,
    shape: [usize; 3],
    samples: Vec<T>,
}

impl<T: Real> PolarPatch<T> {
    /// Wraps raw samples in `(angle, radius, slice)` order. Any shape is accepted;
    /// consumers that need the canonical grid check it themselves.
    pub fn from_raw(center: PolarCenter<T>, shape: [usize; 3], samples: Vec<T>) -> Result<Self> {
        let expected = shape.iter().product();
        if samples.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: samples.len() });
        }
        Ok(Self { center, shape, samples })
    }

    pub fn center(&self) -> PolarCenter<T> {
        self.center
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    #[inline]
    pub fn get(&self, angle: usize, radius: usize, slice: usize) -> T {
        self.samples[(angle * self.shape[1] + radius) * self.shape[2] + slice]
    }

    /// Radial profile of ray `angle` on patch slice `slice`.
    pub fn profile(&self, angle: usize, slice: usize) -> Vec<T> {
        (0..self.shape[1]).map(|k| self.get(angle, k, slice)).collect()
    }

    pub fn ensure_canonical(&self) -> Result<()> {
        if self.shape != PATCH_SHAPE {
            return Err(Error::ShapeMismatch { expected: PATCH_SHAPE, found: self.shape });
        }
        Ok(())
    }

    /// Rotates the patch so that ray `i` of the result is ray `i − shift` of `self`.
    pub fn rotated(&self, shift: usize) -> Self {
        let [na, nr, ns] = self.shape;
        let block = nr * ns;
        let mut samples = Vec::with_capacity(self.samples.len());
        for i in 0..na {
            let src = (i + na - shift % na) % na;
            samples.extend_from_slice(&self.samples[src * block..(src + 1) * block]);
        }
        Self { center: self.center, shape: self.shape, samples }
    }
}

/// Casts the 31 canonical rays on slices `cz − 3 ..= cz + 3`.
///
/// In-plane sample positions outside the volume are clamped to the border;
/// a slice range leaving the volume is an error.
pub fn polar_transform<T: Real>(v: &Volume, center: PolarCenter<T>) -> Result<PolarPatch<T>> {
    let nz = v.dims()[2];
    if center.z < SLICE_HALF_WIDTH || center.z + SLICE_HALF_WIDTH >= nz {
        return Err(Error::OutOfBounds(format!(
            "slices {}..={} around z={} exceed [0, {nz})",
            center.z as isize - SLICE_HALF_WIDTH as isize,
            center.z + SLICE_HALF_WIDTH,
            center.z
        )));
    }
    let (cx, cy) = (center.x.f64(), center.y.f64());
    let mut samples = Vec::with_capacity(N_ANGLES * N_RADII * N_SLICES);
    for i in 0..N_ANGLES {
        let [dx, dy] = ray_direction::<f64>(i);
        for k in 0..N_RADII {
            let dist = (k + 1) as f64 * RADIAL_STEP;
            let (x, y) = (cx + dist * dx, cy + dist * dy);
            for s in 0..N_SLICES {
                let z = center.z + s - SLICE_HALF_WIDTH;
                samples.push(T::of(sample_bilinear_clamped(v, x, y, z)));
            }
        }
    }
    Ok(PolarPatch { center, shape: PATCH_SHAPE, samples })
}

/// Per-ray lumen radius and wall width around a center: the segmentation itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawContourPair<T>")]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct ContourPair<T> {
    center: PolarCenter<T>,
    lumen_radii: Vec<T>,
    wall_widths: Vec<T>,
}

#[derive(Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
struct RawContourPair<T> {
    center: PolarCenter<T>,
    lumen_radii: Vec<T>,
    wall_widths: Vec<T>,
}

impl<T: Real> TryFrom<RawContourPair<T>> for ContourPair<T> {
    type Error = Error;

    fn try_from(raw: RawContourPair<T>) -> Result<Self> {
        ContourPair::new(raw.center, raw.lumen_radii, raw.wall_widths)
    }
}

impl<T: Real> ContourPair<T> {
    pub fn new(center: PolarCenter<T>, lumen_radii: Vec<T>, wall_widths: Vec<T>) -> Result<Self> {
        for (name, v) in [("lumen_radii", &lumen_radii), ("wall_widths", &wall_widths)] {
            if v.len() != N_ANGLES {
                return Err(Error::DimensionMismatch { expected: N_ANGLES, found: v.len() });
            }
            if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x > T::zero())) {
                return Err(Error::Format(format!("{name} must be finite and positive, found {bad}")));
            }
        }
        Ok(Self { center, lumen_radii, wall_widths })
    }

    pub fn center(&self) -> PolarCenter<T> {
        self.center
    }

    pub fn lumen_radii(&self) -> &[T] {
        &self.lumen_radii
    }

    pub fn wall_widths(&self) -> &[T] {
        &self.wall_widths
    }

    pub fn outer_radii(&self) -> Vec<T> {
        self.lumen_radii.iter().zip(&self.wall_widths).map(|(&r, &w)| r + w).collect()
    }

    pub fn cast<U: Real>(&self) -> ContourPair<U> {
        ContourPair {
            center: self.center.cast(),
            lumen_radii: self.lumen_radii.iter().map(|&x| cast(x)).collect(),
            wall_widths: self.wall_widths.iter().map(|&x| cast(x)).collect(),
        }
    }
}

/// Vertices `center + r_i·(cos θ_i, sin θ_i)` of a star-shaped polygon.
pub fn star_polygon<T: Real>(center: [T; 2], radii: &[T]) -> Vec<[T; 2]> {
    let n = radii.len();
    radii
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let (s, c) = (TAU * i as f64 / n as f64).sin_cos();
            [center[0] + r * T::of(c), center[1] + r * T::of(s)]
        })
        .collect()
}

/// Lumen and outer-wall polygons; the wall ring is the region between them.
pub fn contours_to_cartesian<T: Real>(c: &ContourPair<T>) -> (Vec<[T; 2]>, Vec<[T; 2]>) {
    let center = c.center.xy();
    (star_polygon(center, &c.lumen_radii), star_polygon(center, &c.outer_radii()))
}

/// Distances from `center` to each vertex; inverts [`star_polygon`].
pub fn radii_from_polygon<T: Real>(center: [T; 2], polygon: &[[T; 2]]) -> Vec<T> {
    polygon
        .iter()
        .map(|p| (p[0] - center[0]).hypot(p[1] - center[1]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{circle_spec, generate_cohort, truth_contour, Ellipse, SliceTruth, VesselTruth};
    use crate::qa::point_in_polygon;
    use proptest::prelude::*;

    const UNIT: [f32; 3] = [1.0, 1.0, 1.0];

    #[test]
    fn grid_constants() {
        assert_eq!(PATCH_SHAPE, [31, 127, 7]);
        assert!((1..N_ANGLES).all(|i| ray_angle(i) > ray_angle(i - 1)));
        assert_eq!(ray_angle(0), 0.0);
    }

    #[test]
    fn constant_and_linear_fields() {
        let flat = Volume::filled([40, 40, 9], UNIT, 0.4).unwrap();
        let p = polar_transform::<f64>(&flat, PolarCenter::new(20.0, 20.0, 4)).unwrap();
        assert_eq!(p.shape(), [31, 127, 7]);
        assert!(p.samples().iter().all(|&s| (s - 0.4).abs() < 1e-7));

        let ramp = Volume::from_fn([300, 20, 7], UNIT, |x, _, _| x as f32).unwrap();
        let cx = 12.25;
        let p = polar_transform::<f64>(&ramp, PolarCenter::new(cx, 10.0, 3)).unwrap();
        for k in 0..N_RADII {
            for s in 0..N_SLICES {
                assert!((p.get(0, k, s) - (cx + (k + 1) as f64)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn slice_range_is_checked() {
        let flat = Volume::filled([40, 40, 9], UNIT, 0.4).unwrap();
        assert!(polar_transform::<f64>(&flat, PolarCenter::new(20.0, 20.0, 2)).is_err());
        assert!(polar_transform::<f64>(&flat, PolarCenter::new(20.0, 20.0, 6)).is_err());
        assert!(polar_transform::<f64>(&flat, PolarCenter::new(20.0, 20.0, 5)).is_ok());
        // far outside in-plane: clamped, not an error
        assert!(polar_transform::<f64>(&flat, PolarCenter::new(-500.0, 900.0, 4)).is_ok());
    }

    #[test]
    fn phantom_lumen_edge_along_rays() {
        let mut spec = circle_spec(5.0, 12.0, [64, 64, 9]);
        spec.intensity.texture_sigma = 0.0;
        spec.intensity.background_gradient = 0.0;
        let p = &generate_cohort(&spec).unwrap()[0];
        let s = p.vessels[0].slice(4).unwrap();
        let patch = polar_transform::<f64>(&p.volume, PolarCenter::new(s.center[0], s.center[1], 4)).unwrap();
        for i in 0..N_ANGLES {
            let profile = patch.profile(i, SLICE_HALF_WIDTH);
            let first = profile.iter().position(|&x| x > 0.4).unwrap();
            assert!((3..=5).contains(&first), "ray {i}: first bright sample at k={first}");
        }
    }

    #[test]
    fn regular_polygons_from_constant_radii() {
        let c = ContourPair::new(PolarCenter::new(3.0f64, -2.0, 0), vec![5.0; 31], vec![3.0; 31]).unwrap();
        let (lumen, wall) = contours_to_cartesian(&c);
        assert_eq!(lumen.len(), 31);
        for (l, w) in lumen.iter().zip(&wall) {
            assert!(((l[0] - 3.0).hypot(l[1] + 2.0) - 5.0).abs() < 1e-12);
            assert!(((w[0] - 3.0).hypot(w[1] + 2.0) - 8.0).abs() < 1e-12);
        }
        assert!((lumen[0][0] - 8.0).abs() < 1e-12 && (lumen[0][1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn offset_truth_contour_lies_on_ellipse() {
        let lumen = Ellipse { a: 6.0, b: 4.0, phi: 0.4 };
        let wall = Ellipse { a: 9.0, b: 6.5, phi: 0.4 };
        let truth = VesselTruth {
            participant_id: "P000".into(),
            vessel_id: "L".into(),
            slices: vec![SliceTruth { z: 3, center: [20.0, 15.0], lumen, wall }],
            annotated: vec![3],
        };
        let c = truth_contour(&truth, PolarCenter::new(21.5, 14.0, 3)).unwrap();
        let (lp, wp) = contours_to_cartesian(&c);
        for (l, w) in lp.iter().zip(&wp) {
            assert!((lumen.level([l[0] - 20.0, l[1] - 15.0]) - 1.0).abs() < 1e-6);
            assert!((wall.level([w[0] - 20.0, w[1] - 15.0]) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn contour_validation_and_json() {
        let center = PolarCenter::new(1.0, 2.0, 3);
        assert!(ContourPair::new(center, vec![1.0; 30], vec![1.0; 31]).is_err());
        assert!(ContourPair::new(center, vec![1.0; 31], vec![0.0; 31]).is_err());
        let c = ContourPair::new(center, vec![2.0; 31], vec![1.5; 31]).unwrap();
        let json = serde_json::to_value(&c).unwrap();
        assert_eq!(json["center"], serde_json::json!([1.0, 2.0, 3]));
        assert_eq!(json["lumen_radii"].as_array().unwrap().len(), 31);
        let back: ContourPair<f64> = serde_json::from_value(json.clone()).unwrap();
        assert_eq!(back, c);
        let mut broken = json;
        broken["wall_widths"][4] = serde_json::json!(-1.0);
        assert!(serde_json::from_value::<ContourPair<f64>>(broken).is_err());
    }

    fn arb_contour() -> impl Strategy<Value = ContourPair<f64>> {
        (
            -50.0f64..50.0,
            -50.0f64..50.0,
            prop::collection::vec(0.1f64..40.0, N_ANGLES),
            prop::collection::vec(0.1f64..20.0, N_ANGLES),
        )
            .prop_map(|(x, y, r, w)| ContourPair::new(PolarCenter::new(x, y, 0), r, w).unwrap())
    }

    proptest! {
        #[test]
        fn cartesian_round_trip(c in arb_contour()) {
            let (lumen, wall) = contours_to_cartesian(&c);
            let center = c.center().xy();
            for (a, b) in radii_from_polygon(center, &lumen).iter().zip(c.lumen_radii()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            for (a, b) in radii_from_polygon(center, &wall).iter().zip(c.outer_radii()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let rebuilt = star_polygon(center, &radii_from_polygon(center, &lumen));
            for (p, q) in rebuilt.iter().zip(&lumen) {
                prop_assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
            }
        }

        #[test]
        fn star_convex_and_nested(c in arb_contour()) {
            let (lumen, wall) = contours_to_cartesian(&c);
            let center = c.center().xy();
            prop_assert!(point_in_polygon(center, &lumen));
            // the wall polygon contains every lumen vertex pulled slightly inwards
            for p in &lumen {
                let q = [center[0] + 0.999 * (p[0] - center[0]), center[1] + 0.999 * (p[1] - center[1])];
                prop_assert!(point_in_polygon(q, &wall));
            }
            // each ray leaves the polygon exactly once: winding number about the center is 1
            let winding: f64 = (0..N_ANGLES).map(|i| {
                let a = lumen[i];
                let b = lumen[(i + 1) % N_ANGLES];
                let ta = (a[1] - center[1]).atan2(a[0] - center[0]);
                let tb = (b[1] - center[1]).atan2(b[0] - center[0]);
                let mut d = tb - ta;
                while d <= -std::f64::consts::PI { d += TAU; }
                while d > std::f64::consts::PI { d -= TAU; }
                prop_assert!(d > 0.0);
                Ok(d)
            }).collect::<std::result::Result<Vec<_>, TestCaseError>>()?.iter().sum();
            prop_assert!((winding - TAU).abs() < 1e-9);
        }
    }
}
