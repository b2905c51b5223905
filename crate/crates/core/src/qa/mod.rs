//! Segmentation quality (Dice against ground truth) and its correlation with
//! predicted uncertainty at contour, vessel and participant level.

mod raster;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use raster::{dice, find_self_intersection, point_in_polygon, rasterize, rasterize_in, Mask, Window};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::phantom::VesselTruth;
use crate::polar::{star_polygon, ContourPair};
use crate::stats::{mean, ols};

/// Number of vertices used to rasterize ground-truth ellipses.
pub const TRUTH_VERTICES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Lumen,
    Wall,
}

impl Structure {
    pub const ALL: [Structure; 2] = [Structure::Lumen, Structure::Wall];

    pub fn as_str(self) -> &'static str {
        match self {
            Structure::Lumen => "lumen",
            Structure::Wall => "wall",
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMethod {
    /// Single deterministic prediction.
    None,
    Dropout,
    Centers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    None,
    Mean,
    Polar,
}

/// Ensemble × aggregation pair, rendered (and serialized) as e.g. `dropout_polar`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Method {
    pub ensemble: EnsembleMethod,
    pub aggregation: Aggregation,
}

impl Method {
    pub const SINGLE: Method = Method { ensemble: EnsembleMethod::None, aggregation: Aggregation::None };
    pub const DROPOUT_MEAN: Method = Method { ensemble: EnsembleMethod::Dropout, aggregation: Aggregation::Mean };
    pub const DROPOUT_POLAR: Method = Method { ensemble: EnsembleMethod::Dropout, aggregation: Aggregation::Polar };
    pub const CENTERS_POLAR: Method = Method { ensemble: EnsembleMethod::Centers, aggregation: Aggregation::Polar };

    /// The uncertainty-producing methods; `centers × mean` is undefined.
    pub const UNCERTAINTY: [Method; 3] = [Method::DROPOUT_POLAR, Method::DROPOUT_MEAN, Method::CENTERS_POLAR];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Method::SINGLE {
            return f.write_str("single");
        }
        let e = match self.ensemble {
            EnsembleMethod::None => "none",
            EnsembleMethod::Dropout => "dropout",
            EnsembleMethod::Centers => "centers",
        };
        let a = match self.aggregation {
            Aggregation::None => "none",
            Aggregation::Mean => "mean",
            Aggregation::Polar => "polar",
        };
        write!(f, "{e}_{a}")
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Method::SINGLE, Method::DROPOUT_MEAN, Method::DROPOUT_POLAR, Method::CENTERS_POLAR]
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }
}

/// One scored contour. `condition` identifies the degradation level it came from
/// and is not part of the CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub participant_id: String,
    pub vessel_id: String,
    pub z: usize,
    pub structure: Structure,
    pub ensemble_method: EnsembleMethod,
    pub aggregation: Aggregation,
    pub dice: f64,
    pub mean_uncertainty: f64,
    #[serde(skip)]
    pub condition: usize,
}

impl QaRecord {
    pub fn method(&self) -> Method {
        Method { ensemble: self.ensemble_method, aggregation: self.aggregation }
    }
}

/// Anything that yields a lumen and an outer contour as distances along the canonical rays.
pub trait ContourShape {
    fn center_xy(&self) -> [f64; 2];
    fn lumen_distances(&self) -> Vec<f64>;
    fn outer_distances(&self) -> Vec<f64>;
}

impl<T: Real> ContourShape for ContourPair<T> {
    fn center_xy(&self) -> [f64; 2] {
        let c = self.center();
        [c.x.f64(), c.y.f64()]
    }

    fn lumen_distances(&self) -> Vec<f64> {
        self.lumen_radii().iter().map(|r| r.f64()).collect()
    }

    fn outer_distances(&self) -> Vec<f64> {
        self.outer_radii().iter().map(|r| r.f64()).collect()
    }
}

/// Lumen and wall-ring Dice of a predicted contour against the truth at slice `z`.
/// Masks live on the `[nx, ny]` slice grid.
pub fn score_contour(
    predicted: &impl ContourShape,
    truth: &VesselTruth,
    z: usize,
    grid: [usize; 2],
) -> Result<(f64, f64)> {
    let s = truth
        .slice(z)
        .ok_or_else(|| Error::OutOfBounds(format!("no truth for slice {z}")))?;
    let center = predicted.center_xy();
    let pred_lumen = star_polygon(center, &predicted.lumen_distances());
    let pred_outer = star_polygon(center, &predicted.outer_distances());
    let true_lumen = s.lumen.polygon(s.center, TRUTH_VERTICES);
    let true_outer = s.wall.polygon(s.center, TRUTH_VERTICES);

    let window = Window::around(&[&pred_outer, &true_outer, &pred_lumen], grid);
    let pl = rasterize_in(&pred_lumen, window);
    let po = rasterize_in(&pred_outer, window);
    let tl = rasterize_in(&true_lumen, window);
    let to = rasterize_in(&true_outer, window);
    let lumen = dice(&pl, &tl)?;
    let wall = dice(&po.minus(&pl)?, &to.minus(&tl)?)?;
    Ok((lumen, wall))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationLevel {
    Contour,
    Vessel,
    Participant,
}

impl CorrelationLevel {
    pub const ALL: [CorrelationLevel; 3] =
        [CorrelationLevel::Contour, CorrelationLevel::Vessel, CorrelationLevel::Participant];

    pub fn as_str(self) -> &'static str {
        match self {
            CorrelationLevel::Contour => "contour",
            CorrelationLevel::Vessel => "vessel",
            CorrelationLevel::Participant => "participant",
        }
    }
}

impl fmt::Display for CorrelationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    pub level: CorrelationLevel,
    pub structure: Structure,
    pub method: Method,
    /// OLS fit of Dice on mean uncertainty.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
    /// Dice or uncertainty had zero variance; `r_squared` is reported as 0.
    pub zero_variance: bool,
}

/// `(mean uncertainty, mean dice)` per group at `level`, ordered by group key.
pub fn group_points(records: &[QaRecord], level: CorrelationLevel) -> Vec<(f64, f64)> {
    if level == CorrelationLevel::Contour {
        return records.iter().map(|r| (r.mean_uncertainty, r.dice)).collect();
    }
    let mut groups: BTreeMap<(usize, &str, &str), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let vessel = if level == CorrelationLevel::Vessel { r.vessel_id.as_str() } else { "" };
        let g = groups.entry((r.condition, r.participant_id.as_str(), vessel)).or_default();
        g.0.push(r.mean_uncertainty);
        g.1.push(r.dice);
    }
    groups.into_values().map(|(u, d)| (mean(&u), mean(&d))).collect()
}

/// Regresses Dice on uncertainty for records of a single structure and method.
pub fn correlate(records: &[QaRecord], level: CorrelationLevel) -> Result<CorrelationResult> {
    let first = records.first().ok_or(Error::InsufficientGroups(0))?;
    if records
        .iter()
        .any(|r| r.structure != first.structure || r.method() != first.method())
    {
        return Err(Error::InvalidConfig("correlate expects records of one structure and method".into()));
    }
    let points = group_points(records, level);
    if points.len() < 2 {
        return Err(Error::InsufficientGroups(points.len()));
    }
    let (u, d): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
    let fit = ols(&u, &d);
    Ok(CorrelationResult {
        level,
        structure: first.structure,
        method: first.method(),
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        n: u.len(),
        zero_variance: fit.degenerate,
    })
}

/// Correlations for every (level, structure, uncertainty method) present in
/// `records`. Groupings with fewer than two groups are left out.
pub fn correlation_table(records: &[QaRecord]) -> Result<Vec<CorrelationResult>> {
    let mut out = Vec::new();
    for level in CorrelationLevel::ALL {
        for structure in Structure::ALL {
            for method in Method::UNCERTAINTY {
                let subset: Vec<QaRecord> = records
                    .iter()
                    .filter(|r| r.structure == structure && r.method() == method)
                    .cloned()
                    .collect();
                match correlate(&subset, level) {
                    Ok(c) => out.push(c),
                    Err(Error::InsufficientGroups(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(out)
}
