//! Edge-detection reference predictor working directly on radial profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::phantom::IntensityModel;
use crate::polar::{ContourPair, PolarPatch, N_ANGLES};
use crate::stats::median;
use crate::volume::Rescale;

/// Fewer successful rays than this is a failure of the whole contour.
pub const MIN_VALID_RAYS: usize = 8;
/// Smallest wall width the oracle reports, in voxels.
pub const MIN_WIDTH: f64 = 0.5;
/// Failed rays borrow from successful rays at most this many positions away.
const FALLBACK_REACH: usize = 3;

/// Intensity levels (in preprocessed units) at which the two edges are placed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleThresholds {
    /// Midpoint between lumen and wall intensity.
    pub lumen_edge: f64,
    /// Midpoint between wall and background intensity.
    pub outer_edge: f64,
}

impl OracleThresholds {
    /// Maps the phantom's raw intensity means through the volume's rescaling.
    pub fn from_intensity(model: &IntensityModel, rescale: &Rescale) -> Self {
        Self {
            lumen_edge: rescale.apply((model.lumen_mean + model.wall_mean) / 2.0),
            outer_edge: rescale.apply((model.wall_mean + model.background_mean) / 2.0),
        }
    }
}

fn smooth(profile: &[f64]) -> Vec<f64> {
    let n = profile.len();
    (0..n)
        .map(|k| {
            let window = &profile[k.saturating_sub(1)..(k + 2).min(n)];
            window.iter().sum::<f64>() / window.len() as f64
        })
        .collect()
}

/// Lumen radius and wall width along one smoothed profile, if both edges
/// exist and the samples between them are on average brighter than the outer
/// threshold. Sample `k` lies at distance `k + 1`.
fn ray_edges(p: &[f64], th: &OracleThresholds) -> Option<(f64, f64)> {
    if p.first()? >= &th.lumen_edge {
        return None;
    }
    let up = (1..p.len()).find(|&k| p[k] >= th.lumen_edge)?;
    let lumen = up as f64 + (th.lumen_edge - p[up - 1]) / (p[up] - p[up - 1]);
    let down = (up + 1..p.len()).find(|&k| p[k - 1] >= th.outer_edge && p[k] < th.outer_edge)?;
    let outer = down as f64 + (p[down - 1] - th.outer_edge) / (p[down - 1] - p[down]);
    let wall = &p[up..down];
    if wall.iter().sum::<f64>() / (wall.len() as f64) < th.outer_edge {
        return None;
    }
    Some((lumen, (outer - lumen).max(MIN_WIDTH)))
}

/// Per ray on the center slice: smooth the profile with a width-3 moving
/// average, place the lumen edge at the first upward crossing of
/// `lumen_edge` and the outer edge at the next downward crossing of
/// `outer_edge`. Rays without both edges take the median of the successful
/// rays nearby.
pub fn oracle_predict<T: Real>(patch: &PolarPatch<T>, th: &OracleThresholds) -> Result<ContourPair<T>> {
    patch.ensure_canonical()?;
    let center_slice = patch.shape()[2] / 2;
    let rays: Vec<Option<(f64, f64)>> = (0..N_ANGLES)
        .map(|a| {
            let profile: Vec<f64> = patch.profile(a, center_slice).into_iter().map(Real::f64).collect();
            ray_edges(&smooth(&profile), th)
        })
        .collect();
    let succeeded = rays.iter().flatten().count();
    if succeeded < MIN_VALID_RAYS {
        return Err(Error::AllRaysFailed { succeeded, total: N_ANGLES });
    }
    let mut radii = Vec::with_capacity(N_ANGLES);
    let mut widths = Vec::with_capacity(N_ANGLES);
    for (i, ray) in rays.iter().enumerate() {
        let (r, w) = match ray {
            Some(v) => *v,
            None => circular_median(&rays, i),
        };
        radii.push(T::of(r));
        widths.push(T::of(w));
    }
    ContourPair::new(patch.center(), radii, widths)
}

fn circular_median(rays: &[Option<(f64, f64)>], i: usize) -> (f64, f64) {
    let n = rays.len();
    let near: Vec<(f64, f64)> = (1..=FALLBACK_REACH)
        .flat_map(|k| [rays[(i + k) % n], rays[(i + n - k) % n]])
        .flatten()
        .collect();
    let pool: Vec<(f64, f64)> = if near.is_empty() { rays.iter().flatten().copied().collect() } else { near };
    let r: Vec<f64> = pool.iter().map(|p| p.0).collect();
    let w: Vec<f64> = pool.iter().map(|p| p.1).collect();
    (median(&r), median(&w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{circle_spec, generate_cohort, truth_radii, CohortSpec, Ellipse, GeometryRanges};
    use crate::polar::{polar_transform, PolarCenter, PATCH_SHAPE};
    use crate::volume::{add_noise, preprocess_with_stats, NoiseSpec};

    fn setup(spec: &CohortSpec) -> (crate::volume::Volume, OracleThresholds, crate::phantom::VesselTruth) {
        let mut spec = spec.clone();
        spec.intensity.texture_sigma = 0.0;
        let spec = &spec;
        let p = generate_cohort(spec).unwrap().remove(0);
        let (v, rescale) = preprocess_with_stats(&p.volume).unwrap();
        (v, OracleThresholds::from_intensity(&spec.intensity, &rescale), p.vessels[0].clone())
    }

    #[test]
    fn circle_phantom_within_tolerance() {
        let spec = circle_spec(5.0, 8.0, [80, 80, 8]);
        let (v, th, truth) = setup(&spec);
        let z = truth.annotated[0];
        let c = truth.slice(z).unwrap().center;
        let patch = polar_transform::<f64>(&v, PolarCenter::new(c[0], c[1], z)).unwrap();
        let pred = oracle_predict(&patch, &th).unwrap();
        for (&r, &w) in pred.lumen_radii().iter().zip(pred.wall_widths()) {
            assert!((r - 5.0).abs() < 0.75, "radius {r}");
            assert!((w - 3.0).abs() < 0.75, "width {w}");
        }
    }

    #[test]
    fn ellipse_matches_ray_solution() {
        let mut spec = circle_spec(6.0, 9.0, [80, 80, 8]);
        spec.geometry = GeometryRanges { aspect: [4.0 / 6.0, 4.0 / 6.0], ..spec.geometry };
        let (v, th, truth) = setup(&spec);
        let z = truth.annotated[0];
        let s = truth.slice(z).unwrap();
        assert!((s.lumen.a - 6.0).abs() < 1e-12 && (s.lumen.b - 4.0).abs() < 1e-12);
        let patch = polar_transform::<f64>(&v, PolarCenter::new(s.center[0], s.center[1], z)).unwrap();
        let pred = oracle_predict(&patch, &th).unwrap();
        let (radii, _) = truth_radii(&truth, z, s.center, N_ANGLES).unwrap();
        for (i, (&r, &t)) in pred.lumen_radii().iter().zip(&radii).enumerate() {
            let direct = Ellipse { a: 6.0, b: 4.0, phi: s.lumen.phi }
                .ray_distance([0.0, 0.0], crate::polar::ray_angle(i))
                .unwrap();
            assert!((direct - t).abs() < 1e-9);
            assert!((r - t).abs() < 1.0, "ray {i}: {r} vs {t}");
        }
    }

    #[test]
    fn pure_noise_fails() {
        let spec = circle_spec(5.0, 8.0, [80, 80, 8]);
        let (v, th, truth) = setup(&spec);
        let noisy = add_noise(&v, NoiseSpec::new(1.0, 9).unwrap());
        let z = truth.annotated[0];
        let c = truth.slice(z).unwrap().center;
        let patch = polar_transform::<f64>(&noisy, PolarCenter::new(c[0], c[1], z)).unwrap();
        assert!(matches!(oracle_predict(&patch, &th), Err(Error::AllRaysFailed { .. })));
    }

    #[test]
    fn failed_rays_borrow_from_neighbours() {
        let th = OracleThresholds { lumen_edge: 0.5, outer_edge: 0.5 };
        let mut data = Vec::with_capacity(PATCH_SHAPE.iter().product());
        for a in 0..N_ANGLES {
            for k in 0..PATCH_SHAPE[1] {
                for _ in 0..PATCH_SHAPE[2] {
                    // Ray 0 never leaves the lumen; the others see a wall at 5..8.
                    let d = (k + 1) as f64;
                    let v = if a != 0 && (5.0..8.0).contains(&d) { 1.0 } else if a != 0 && d >= 8.0 { 0.25 } else { 0.0 };
                    data.push(v);
                }
            }
        }
        let patch = PolarPatch::from_raw(PolarCenter::new(0.0, 0.0, 3), PATCH_SHAPE, data).unwrap();
        let pred = oracle_predict(&patch, &th).unwrap();
        assert_eq!(pred.lumen_radii()[0], pred.lumen_radii()[1]);
        assert_eq!(pred.wall_widths()[0], pred.wall_widths()[30]);
    }
}
