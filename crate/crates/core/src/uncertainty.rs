//! Contour ensembles and their fusion into one contour with per-ray uncertainty.
//!
//! Two ensembles are supported: Monte Carlo dropout (20 stochastic passes over
//! one patch) and center jitter (the 8-neighbourhood of the center, optionally
//! plus the center itself, each predicted deterministically). Members are fused
//! either by per-ray mean and standard deviation, which needs a shared center,
//! or by fitting a trigonometric polynomial `d(θ)` to all member vertices seen
//! from a reference center and measuring the residual spread around each ray.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ridge_least_squares;
use crate::num::Real;
use crate::polar::{polar_transform, ray_angle, star_polygon, ContourPair, PolarCenter, N_ANGLES};
use crate::predictor::{PredictMode, Predictor};
use crate::qa::{point_in_polygon, Aggregation, ContourShape, EnsembleMethod, Method, Structure};
use crate::volume::Volume;

/// Ridge parameter of the polar fit.
pub const POLAR_RIDGE: f64 = 1e-8;
/// Half-width of the angular window used for polar residuals.
pub const WINDOW_HALF_WIDTH: f64 = PI / 32.0;
/// Moore neighbourhood offsets used by the centers ensemble.
pub const CENTER_NEIGHBORHOOD: [(i32, i32); 8] =
    [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub method: EnsembleMethod,
    pub n_dropout: usize,
    /// Use only the 8 neighbours, without the original center.
    pub exclude_original: bool,
    pub base_seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { method: EnsembleMethod::Dropout, n_dropout: 20, exclude_original: false, base_seed: 0 }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.method == EnsembleMethod::None {
            return Err(Error::InvalidConfig("ensemble method must be dropout or centers".into()));
        }
        if self.n_dropout < 2 {
            return Err(Error::InvalidConfig(format!("n_dropout must be at least 2, got {}", self.n_dropout)));
        }
        Ok(())
    }
}

/// Where an ensemble member came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemberSource {
    Dropout { seed: u64 },
    Center { dx: i32, dy: i32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member<T> {
    pub source: MemberSource,
    pub contour: ContourPair<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourEnsemble<T> {
    method: EnsembleMethod,
    reference: PolarCenter<T>,
    members: Vec<Member<T>>,
}

impl<T: Real> ContourEnsemble<T> {
    pub fn new(method: EnsembleMethod, reference: PolarCenter<T>, members: Vec<Member<T>>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidConfig(format!("an ensemble needs at least 2 members, got {}", members.len())));
        }
        if let Some(m) = members.iter().find(|m| m.contour.center().z != reference.z) {
            return Err(Error::InvalidConfig(format!(
                "member on slice {} differs from reference slice {}",
                m.contour.center().z,
                reference.z
            )));
        }
        Ok(Self { method, reference, members })
    }

    pub fn method(&self) -> EnsembleMethod {
        self.method
    }

    pub fn reference(&self) -> PolarCenter<T> {
        self.reference
    }

    pub fn members(&self) -> &[Member<T>] {
        &self.members
    }

    fn distances(&self, structure: Structure) -> Vec<Vec<T>> {
        self.members
            .iter()
            .map(|m| match structure {
                Structure::Lumen => m.contour.lumen_radii().to_vec(),
                Structure::Wall => m.contour.outer_radii(),
            })
            .collect()
    }
}

/// Predicts every member of the configured ensemble around `center`.
pub fn build_ensemble(
    v: &Volume,
    center: PolarCenter<f64>,
    predictor: &Predictor<'_>,
    cfg: &EnsembleConfig,
) -> Result<ContourEnsemble<f64>> {
    cfg.validate()?;
    let members = match cfg.method {
        EnsembleMethod::Dropout => {
            let patch = polar_transform::<f32>(v, center.cast())?;
            (0..cfg.n_dropout as u64)
                .into_par_iter()
                .map(|k| {
                    let seed = cfg.base_seed.wrapping_add(k);
                    let contour = predictor.predict(&patch, PredictMode::Dropout { seed })?;
                    Ok(Member { source: MemberSource::Dropout { seed }, contour })
                })
                .collect::<Result<Vec<_>>>()?
        }
        EnsembleMethod::Centers => {
            let original = (!cfg.exclude_original).then_some((0, 0));
            let offsets: Vec<(i32, i32)> = original.into_iter().chain(CENTER_NEIGHBORHOOD).collect();
            offsets
                .into_par_iter()
                .map(|(dx, dy)| {
                    let c = center.shifted(f64::from(dx), f64::from(dy));
                    let patch = polar_transform::<f32>(v, c.cast())?;
                    let contour = predictor.predict(&patch, PredictMode::Deterministic)?;
                    // Keep the exact f64 center rather than its f32 round trip.
                    let contour = ContourPair::new(c, contour.lumen_radii().to_vec(), contour.wall_widths().to_vec())?;
                    Ok(Member { source: MemberSource::Center { dx, dy }, contour })
                })
                .collect::<Result<Vec<_>>>()?
        }
        EnsembleMethod::None => unreachable!("rejected by validate"),
    };
    ContourEnsemble::new(cfg.method, center, members)
}

/// Fused distances and uncertainties of one structure along the canonical rays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct AggregatedContour<T> {
    pub center: PolarCenter<T>,
    pub structure: Structure,
    pub method: Method,
    pub distances: Vec<T>,
    pub uncertainties: Vec<T>,
}

impl<T: Real> AggregatedContour<T> {
    /// Average of the per-ray uncertainties.
    pub fn mean_uncertainty(&self) -> f64 {
        self.uncertainties.iter().map(|u| u.f64()).sum::<f64>() / self.uncertainties.len() as f64
    }
}

/// Lumen and outer-wall results of one aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct AggregatedPair<T> {
    pub lumen: AggregatedContour<T>,
    pub wall: AggregatedContour<T>,
}

impl<T: Real> AggregatedPair<T> {
    /// Wraps a single deterministic prediction; its uncertainties are zero.
    pub fn from_single(c: &ContourPair<T>) -> Self {
        let one = |structure, distances: Vec<T>| AggregatedContour {
            center: c.center(),
            structure,
            method: Method::SINGLE,
            uncertainties: vec![T::zero(); distances.len()],
            distances,
        };
        Self { lumen: one(Structure::Lumen, c.lumen_radii().to_vec()), wall: one(Structure::Wall, c.outer_radii()) }
    }

    pub fn get(&self, structure: Structure) -> &AggregatedContour<T> {
        match structure {
            Structure::Lumen => &self.lumen,
            Structure::Wall => &self.wall,
        }
    }
}

impl<T: Real> ContourShape for AggregatedPair<T> {
    fn center_xy(&self) -> [f64; 2] {
        [self.lumen.center.x.f64(), self.lumen.center.y.f64()]
    }

    fn lumen_distances(&self) -> Vec<f64> {
        self.lumen.distances.iter().map(|d| d.f64()).collect()
    }

    fn outer_distances(&self) -> Vec<f64> {
        self.wall.distances.iter().map(|d| d.f64()).collect()
    }
}

/// Per-ray mean and normalized population standard deviation.
pub fn aggregate_mean<T: Real>(e: &ContourEnsemble<T>) -> Result<AggregatedPair<T>> {
    aggregate_mean_with(e, true)
}

/// As [`aggregate_mean`]; with `normalize = false` the raw standard deviation is reported.
pub fn aggregate_mean_with<T: Real>(e: &ContourEnsemble<T>, normalize: bool) -> Result<AggregatedPair<T>> {
    let center = e.members[0].contour.center();
    if e.members.iter().any(|m| m.contour.center() != center) {
        return Err(Error::MixedGeometry);
    }
    let method = Method { ensemble: e.method, aggregation: Aggregation::Mean };
    let one = |structure| {
        let d = e.distances(structure);
        let n = T::of(d.len() as f64);
        let mut distances = Vec::with_capacity(N_ANGLES);
        let mut uncertainties = Vec::with_capacity(N_ANGLES);
        for i in 0..N_ANGLES {
            let mean = d.iter().map(|m| m[i]).sum::<T>() / n;
            let var = d.iter().map(|m| (m[i] - mean) * (m[i] - mean)).sum::<T>() / n;
            let sd = var.sqrt();
            distances.push(mean);
            uncertainties.push(if normalize { sd / mean } else { sd });
        }
        AggregatedContour { center, structure, method, distances, uncertainties }
    };
    Ok(AggregatedPair { lumen: one(Structure::Lumen), wall: one(Structure::Wall) })
}

/// `d̂(θ) = c₀ + c₁ sin θ + c₂ cos θ + c₃ sin θ cos θ + c₄ sin² θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct PolarFitModel<T> {
    pub coefficients: [T; 5],
    pub lambda: T,
}

impl<T: Real> PolarFitModel<T> {
    pub fn basis(theta: T) -> [T; 5] {
        let (s, c) = theta.sin_cos();
        [T::one(), s, c, s * c, s * s]
    }

    pub fn eval(&self, theta: T) -> T {
        Self::basis(theta).iter().zip(&self.coefficients).map(|(&b, &c)| b * c).sum()
    }

    /// Ridge least-squares fit to `(θ, d)` samples.
    pub fn fit(points: &[(T, T)], lambda: T) -> Result<Self> {
        let rows: Vec<Vec<T>> = points.iter().map(|&(t, _)| Self::basis(t).to_vec()).collect();
        let y: Vec<T> = points.iter().map(|&(_, d)| d).collect();
        let c = ridge_least_squares(&rows, &y, lambda)?;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateFit("non-finite coefficients".into()));
        }
        Ok(Self { coefficients: [c[0], c[1], c[2], c[3], c[4]], lambda })
    }
}

/// Absolute angular distance on the circle, in `[0, π]`.
fn circular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Member vertices of `structure` as `(θ, d)` about `reference`, θ in `[0, 2π)`.
pub fn polar_points<T: Real>(e: &ContourEnsemble<T>, reference: [T; 2], structure: Structure) -> Vec<(T, T)> {
    let mut out = Vec::with_capacity(e.members.len() * N_ANGLES);
    for (m, d) in e.members.iter().zip(e.distances(structure)) {
        for p in star_polygon(m.contour.center().xy(), &d) {
            let (dx, dy) = (p[0] - reference[0], p[1] - reference[1]);
            let theta = dy.atan2(dx);
            let theta = if theta < T::zero() { theta + T::of(TAU) } else { theta };
            out.push((theta, dx.hypot(dy)));
        }
    }
    out
}

/// Indices of `points` whose angle lies within the window of canonical ray `i`.
pub fn window_members<T: Real>(points: &[(T, T)], i: usize) -> Vec<usize> {
    let center = ray_angle(i);
    (0..points.len())
        .filter(|&k| circular_gap(points[k].0.f64(), center) <= WINDOW_HALF_WIDTH)
        .collect()
}

/// Fits one structure of the ensemble about `reference`; returns the model and the fused contour.
pub fn polar_fit<T: Real>(
    e: &ContourEnsemble<T>,
    reference: PolarCenter<T>,
    structure: Structure,
) -> Result<(PolarFitModel<T>, AggregatedContour<T>)> {
    let r = reference.xy();
    let rf = [r[0].f64(), r[1].f64()];
    for (k, m) in e.members.iter().enumerate() {
        let lumen = star_polygon(m.contour.center().xy(), m.contour.lumen_radii());
        let lumen: Vec<[f64; 2]> = lumen.iter().map(|p| [p[0].f64(), p[1].f64()]).collect();
        if !point_in_polygon(rf, &lumen) {
            return Err(Error::CenterOutsideMember(k));
        }
    }
    let points = polar_points(e, r, structure);
    let model = PolarFitModel::fit(&points, T::of(POLAR_RIDGE))?;
    let distances: Vec<T> = (0..N_ANGLES).map(|i| model.eval(T::of(ray_angle(i)))).collect();
    if let Some(bad) = distances.iter().find(|d| !(d.is_finite() && **d > T::zero())) {
        return Err(Error::DegenerateFit(format!("fitted distance {bad} is not positive")));
    }
    let raw: Vec<Option<T>> = (0..N_ANGLES)
        .map(|i| {
            let w = window_members(&points, i);
            (!w.is_empty()).then(|| {
                let sum: T = w.iter().map(|&k| (points[k].1 - model.eval(points[k].0)).abs()).sum();
                sum / T::of(w.len() as f64)
            })
        })
        .collect();
    let uncertainties = (0..N_ANGLES)
        .map(|i| nearest_filled(&raw, i).map(|u| u / distances[i]))
        .collect::<Option<Vec<T>>>()
        .ok_or_else(|| Error::DegenerateFit("no ensemble point falls in any angular window".into()))?;
    let method = Method { ensemble: e.method, aggregation: Aggregation::Polar };
    Ok((model, AggregatedContour { center: reference, structure, method, distances, uncertainties }))
}

/// Value at `i`, or at the nearest filled index (lower index first on ties).
fn nearest_filled<T: Copy>(values: &[Option<T>], i: usize) -> Option<T> {
    let n = values.len();
    (0..=n / 2).find_map(|k| values[(i + n - k) % n].or(values[(i + k) % n]))
}

/// Polar-model fusion of both structures about `reference`.
pub fn aggregate_polar<T: Real>(e: &ContourEnsemble<T>, reference: PolarCenter<T>) -> Result<AggregatedPair<T>> {
    let (_, lumen) = polar_fit(e, reference, Structure::Lumen)?;
    let (_, wall) = polar_fit(e, reference, Structure::Wall)?;
    Ok(AggregatedPair { lumen, wall })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn member(center: PolarCenter<f64>, radii: Vec<f64>, widths: Vec<f64>, k: u64) -> Member<f64> {
        Member { source: MemberSource::Dropout { seed: k }, contour: ContourPair::new(center, radii, widths).unwrap() }
    }

    fn constant(center: PolarCenter<f64>, r: f64, w: f64, k: u64) -> Member<f64> {
        member(center, vec![r; N_ANGLES], vec![w; N_ANGLES], k)
    }

    fn c0() -> PolarCenter<f64> {
        PolarCenter::new(40.0, 40.0, 5)
    }

    #[test]
    fn mean_of_two_members() {
        let e = ContourEnsemble::new(EnsembleMethod::Dropout, c0(), vec![constant(c0(), 2.0, 1.0, 0), constant(c0(), 4.0, 1.0, 1)])
            .unwrap();
        let a = aggregate_mean(&e).unwrap();
        assert!(a.lumen.distances.iter().all(|&d| d == 3.0));
        assert!(a.lumen.uncertainties.iter().all(|&u| (u - 1.0 / 3.0).abs() < 1e-15));
        let raw = aggregate_mean_with(&e, false).unwrap();
        assert!(raw.lumen.uncertainties.iter().all(|&u| u == 1.0));
        assert!(a.wall.distances.iter().all(|&d| d == 4.0));
        assert_eq!(a.lumen.method.to_string(), "dropout_mean");
    }

    #[test]
    fn identical_members_have_no_spread() {
        let e = ContourEnsemble::new(EnsembleMethod::Dropout, c0(), (0..20).map(|k| constant(c0(), 5.0, 3.0, k)).collect())
            .unwrap();
        let m = aggregate_mean(&e).unwrap();
        assert!(m.lumen.uncertainties.iter().chain(&m.wall.uncertainties).all(|&u| u == 0.0));
        let (model, p) = polar_fit(&e, c0(), Structure::Lumen).unwrap();
        assert!((model.coefficients[0] - 5.0).abs() < 1e-6);
        assert!(model.coefficients[1..].iter().all(|c| c.abs() < 1e-6));
        assert!(p.distances.iter().all(|&d| (d - 5.0).abs() < 1e-6));
        assert!(p.uncertainties.iter().all(|&u| u < 1e-6));
    }

    #[test]
    fn mixed_centers_reject_mean() {
        let shifted = c0().shifted(1.0, 0.0);
        let e = ContourEnsemble::new(EnsembleMethod::Centers, c0(), vec![constant(c0(), 5.0, 3.0, 0), constant(shifted, 5.0, 3.0, 1)])
            .unwrap();
        assert!(matches!(aggregate_mean(&e), Err(Error::MixedGeometry)));
        assert!(aggregate_polar(&e, c0()).is_ok());
    }

    #[test]
    fn reference_outside_member_is_rejected() {
        let far = c0().shifted(10.0, 0.0);
        let e = ContourEnsemble::new(EnsembleMethod::Centers, c0(), vec![constant(c0(), 5.0, 3.0, 0), constant(far, 5.0, 3.0, 1)])
            .unwrap();
        assert!(matches!(aggregate_polar(&e, c0()), Err(Error::CenterOutsideMember(1))));
    }

    #[test]
    fn dropout_windows_hold_one_point_per_member() {
        let e = ContourEnsemble::new(
            EnsembleMethod::Dropout,
            c0(),
            (0..20).map(|k| constant(c0(), 4.0 + 0.1 * k as f64, 2.0, k)).collect(),
        )
        .unwrap();
        let points = polar_points(&e, c0().xy(), Structure::Lumen);
        for i in 0..N_ANGLES {
            let w = window_members(&points, i);
            assert_eq!(w.len(), 20);
            assert!(w.iter().all(|&k| k % N_ANGLES == i));
        }
    }

    #[test]
    fn empty_windows_borrow_nearest() {
        let v = [None, Some(1.0), None, None, Some(4.0), None];
        assert_eq!(nearest_filled(&v, 0), Some(1.0));
        assert_eq!(nearest_filled(&v, 2), Some(1.0));
        assert_eq!(nearest_filled(&v, 3), Some(4.0));
        assert_eq!(nearest_filled(&v, 5), Some(4.0));
        assert_eq!(nearest_filled::<f64>(&[None, None], 1), None);
    }

    #[test]
    fn config_invariants() {
        assert!(EnsembleConfig { n_dropout: 1, ..Default::default() }.validate().is_err());
        assert!(EnsembleConfig { method: EnsembleMethod::None, ..Default::default() }.validate().is_err());
        assert!(ContourEnsemble::new(EnsembleMethod::Dropout, c0(), vec![constant(c0(), 5.0, 3.0, 0)]).is_err());
    }

    #[test]
    fn aggregated_json_layout() {
        let e = ContourEnsemble::new(EnsembleMethod::Dropout, c0(), vec![constant(c0(), 2.0, 1.0, 0), constant(c0(), 4.0, 1.0, 1)])
            .unwrap();
        let a = aggregate_polar(&e, c0()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&a.wall).unwrap();
        assert_eq!(v["center"], serde_json::json!([40.0, 40.0, 5]));
        assert_eq!(v["structure"], "wall");
        assert_eq!(v["method"], "dropout_polar");
        assert_eq!(v["distances"].as_array().unwrap().len(), N_ANGLES);
        let back: AggregatedContour<f64> = serde_json::from_value(v).unwrap();
        assert_eq!(back, a.wall);
    }
}
