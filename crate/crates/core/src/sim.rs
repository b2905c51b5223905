//! Degradation experiments: image-noise sweeps and center-offset sweeps.
//!
//! Every sweep level segments all annotated slices of the cohort with each
//! requested method, scores the result against the phantom truth and keeps
//! the records in (level, participant, vessel, slice) order, so reports do
//! not depend on thread scheduling.

use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{Participant, VesselTruth};
use crate::polar::{polar_transform, ContourPair, PolarCenter};
use crate::predictor::{Model, PredictMode, Predictor};
use crate::qa::{
    correlation_table, score_contour, Aggregation, CorrelationLevel, CorrelationResult, EnsembleMethod, Method,
    QaRecord, Structure,
};
use crate::stats::{iqr, median};
use crate::uncertainty::{aggregate_mean, aggregate_polar, build_ensemble, AggregatedPair, EnsembleConfig};
use crate::volume::{add_noise, preprocess_with_stats, NoiseSpec, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Noise,
    Offset,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Noise => "noise",
            Experiment::Offset => "offset",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Center displaced by `offset` lumen radii toward the farthest lumen point.
///
/// The farthest point of an ellipse is an end of its major axis; of the two
/// ends the one at an angle in `[0, π)` is used, and circles use `θ = 0`.
pub fn offset_center(truth: &VesselTruth, z: usize, offset: f64) -> Result<[f64; 2]> {
    if !(offset >= 0.0 && offset.is_finite()) {
        return Err(Error::InvalidConfig(format!("offset must be finite and non-negative, got {offset}")));
    }
    let s = truth
        .slice(z)
        .ok_or_else(|| Error::OutOfBounds(format!("no truth for slice {z}")))?;
    let e = &s.lumen;
    let direction = if e.a > e.b {
        e.phi.rem_euclid(PI)
    } else if e.b > e.a {
        (e.phi + PI / 2.0).rem_euclid(PI)
    } else {
        0.0
    };
    let r = e.max_radius();
    Ok([s.center[0] + offset * r * direction.cos(), s.center[1] + offset * r * direction.sin()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Noise levels α or normalized offsets, strictly increasing.
    pub levels: Vec<f64>,
    pub methods: Vec<Method>,
    /// Offset sweeps only: correlate over all levels instead of offsets below 1.
    pub include_outside: bool,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self::noise_default()
    }
}

impl SweepConfig {
    const DEFAULT_METHODS: [Method; 4] =
        [Method::SINGLE, Method::DROPOUT_MEAN, Method::DROPOUT_POLAR, Method::CENTERS_POLAR];

    /// α ∈ {0, 0.1, …, 0.5}.
    pub fn noise_default() -> Self {
        Self {
            levels: (0..6).map(|k| k as f64 / 10.0).collect(),
            methods: Self::DEFAULT_METHODS.to_vec(),
            include_outside: false,
            seed: 11,
        }
    }

    /// Offsets {0, 0.1, …, 1.5}.
    pub fn offset_default() -> Self {
        Self { levels: (0..16).map(|k| k as f64 / 10.0).collect(), seed: 13, ..Self::noise_default() }
    }

    pub fn validate(&self, experiment: Experiment) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.levels.is_empty() || self.levels.windows(2).any(|w| !(w[0] < w[1])) {
            return bad(format!("sweep levels must be non-empty and strictly increasing, got {:?}", self.levels));
        }
        let (lo, hi) = match experiment {
            Experiment::Noise => (0.0, 1.0),
            Experiment::Offset => (0.0, f64::INFINITY),
        };
        if let Some(l) = self.levels.iter().find(|l| !(**l >= lo && **l <= hi)) {
            return bad(format!("{experiment} level {l} out of range"));
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if let Some(m) = self.methods.iter().find(|m| !Self::DEFAULT_METHODS.contains(m)) {
            return bad(format!("unsupported method {m}"));
        }
        Ok(())
    }

    fn needs(&self, e: EnsembleMethod) -> bool {
        self.methods.iter().any(|m| m.ensemble == e)
    }
}

/// Errors that invalidate one contour but not the experiment.
fn is_contour_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::AllRaysFailed { .. } | Error::CenterOutsideMember(_) | Error::DegenerateFit(_) | Error::CenterOutsideLumen { .. }
    )
}

fn soft<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e) if is_contour_failure(&e) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Segments one slice with every method in `methods`. A method whose
/// prediction or aggregation fails numerically yields `None`.
pub fn segment_slice(
    v: &Volume,
    center: PolarCenter<f64>,
    predictor: &Predictor<'_>,
    methods: &[Method],
    ensemble: &EnsembleConfig,
) -> Result<Vec<(Method, Option<AggregatedPair<f64>>)>> {
    let needs = |e| methods.iter().any(|m| m.ensemble == e);
    let single = if needs(EnsembleMethod::None) {
        let patch = polar_transform::<f32>(v, center.cast())?;
        soft(predictor.predict(&patch, PredictMode::Deterministic))?.map(|c| {
            let exact = ContourPair::new(center, c.lumen_radii().to_vec(), c.wall_widths().to_vec());
            exact.map(|c| AggregatedPair::from_single(&c))
        })
    } else {
        None
    };
    let single = single.transpose()?;
    let ens = |kind| -> Result<Option<_>> {
        if !needs(kind) {
            return Ok(None);
        }
        soft(build_ensemble(v, center, predictor, &EnsembleConfig { method: kind, ..ensemble.clone() }))
    };
    let dropout = ens(EnsembleMethod::Dropout)?;
    let centers = ens(EnsembleMethod::Centers)?;
    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        let members = match m.ensemble {
            EnsembleMethod::None => {
                out.push((m, single.clone()));
                continue;
            }
            EnsembleMethod::Dropout => dropout.as_ref(),
            EnsembleMethod::Centers => centers.as_ref(),
        };
        let agg = match (members, m.aggregation) {
            (None, _) => None,
            (Some(e), Aggregation::Mean) => soft(aggregate_mean(e))?,
            (Some(e), Aggregation::Polar) => soft(aggregate_polar(e, center))?,
            (Some(_), Aggregation::None) => return Err(Error::InvalidConfig(format!("unsupported method {m}"))),
        };
        out.push((m, agg));
    }
    Ok(out)
}

/// One segmented and scored slice of one vessel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedSlice {
    pub participant_id: String,
    pub vessel_id: String,
    pub z: usize,
    pub contours: Vec<AggregatedPair<f64>>,
}

#[derive(Debug, Default)]
struct SliceOutcome {
    records: Vec<QaRecord>,
    segmented: Option<SegmentedSlice>,
    dropped: bool,
    failed: usize,
}

#[allow(clippy::too_many_arguments)]
fn process_slice(
    v: &Volume,
    truth: &VesselTruth,
    z: usize,
    center: [f64; 2],
    predictor: &Predictor<'_>,
    ensemble: &EnsembleConfig,
    cfg: &SweepConfig,
    condition: usize,
    keep_contours: bool,
) -> Result<SliceOutcome> {
    let [nx, ny, _] = v.dims();
    let reach = if cfg.needs(EnsembleMethod::Centers) { 1.0 } else { 0.0 };
    let inside = |c: f64, n: usize| c - reach >= 0.0 && c + reach <= (n - 1) as f64;
    if !inside(center[0], nx) || !inside(center[1], ny) {
        return Ok(SliceOutcome { dropped: true, ..Default::default() });
    }
    let pc = PolarCenter::new(center[0], center[1], z);
    let results = segment_slice(v, pc, predictor, &cfg.methods, ensemble)?;
    let mut out = SliceOutcome::default();
    let mut contours = Vec::new();
    for (method, pair) in results {
        let Some(pair) = pair else {
            out.failed += 1;
            continue;
        };
        let (lumen, wall) = score_contour(&pair, truth, z, [nx, ny])?;
        for (structure, dice) in [(Structure::Lumen, lumen), (Structure::Wall, wall)] {
            out.records.push(QaRecord {
                participant_id: truth.participant_id.clone(),
                vessel_id: truth.vessel_id.clone(),
                z,
                structure,
                ensemble_method: method.ensemble,
                aggregation: method.aggregation,
                dice,
                mean_uncertainty: pair.get(structure).mean_uncertainty(),
                condition,
            });
        }
        if keep_contours {
            contours.push(pair);
        }
    }
    if keep_contours {
        out.segmented = Some(SegmentedSlice {
            participant_id: truth.participant_id.clone(),
            vessel_id: truth.vessel_id.clone(),
            z,
            contours,
        });
    }
    Ok(out)
}

/// A participant's preprocessed volume and the predictor bound to its scaling.
struct Prepared<'a, 'm> {
    participant: &'a Participant,
    volume: Volume,
    predictor: Predictor<'m>,
}

fn prepare<'a, 'm>(cohort: &'a [Participant], model: &Model<'m>) -> Result<Vec<Prepared<'a, 'm>>> {
    cohort
        .par_iter()
        .map(|p| {
            let (volume, rescale) = preprocess_with_stats(&p.volume)?;
            Ok(Prepared { participant: p, volume, predictor: model.bind(&rescale) })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelOutcome {
    pub index: usize,
    pub level: f64,
    /// Offset sweeps: the displaced centers lie outside the lumen.
    pub outside_lumen: bool,
    pub records: Vec<QaRecord>,
    /// Slices whose (jittered) centers left the image plane.
    pub dropped_slices: usize,
    /// Contours lost to numerical failure, counted per method.
    pub failed_contours: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub level: f64,
    pub structure: Structure,
    pub method: Method,
    pub median_dice: f64,
    pub iqr_dice: f64,
    pub median_uncertainty: f64,
    pub iqr_uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub experiment: Experiment,
    pub levels: Vec<LevelOutcome>,
    pub summary: Vec<SummaryRow>,
    /// Pooled over the correlated levels.
    pub correlations: Vec<CorrelationResult>,
    /// Per sweep level; groupings with fewer than two groups are left out.
    pub level_correlations: Vec<(f64, CorrelationResult)>,
}

impl SweepReport {
    /// Whether a level takes part in the pooled correlations.
    pub fn correlated(experiment: Experiment, level: f64, include_outside: bool) -> bool {
        experiment == Experiment::Noise || include_outside || level < 1.0
    }

    pub fn summary_for(&self, structure: Structure, method: Method) -> Vec<&SummaryRow> {
        self.summary.iter().filter(|r| r.structure == structure && r.method == method).collect()
    }

    pub fn correlation(&self, level: CorrelationLevel, structure: Structure, method: Method) -> Option<&CorrelationResult> {
        self.correlations
            .iter()
            .find(|c| c.level == level && c.structure == structure && c.method == method)
    }
}

/// Mixes a key into a seed (FNV-1a followed by the SplitMix64 finalizer).
pub fn sub_seed(seed: u64, key: &str, index: usize) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in key.bytes().chain((index as u64).to_le_bytes()) {
        h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn run_sweep(
    experiment: Experiment,
    cohort: &[Participant],
    model: &Model<'_>,
    ensemble: &EnsembleConfig,
    cfg: &SweepConfig,
    degrade: impl Fn(&Prepared<'_, '_>, usize, f64) -> Result<Option<Volume>> + Sync,
    center: impl Fn(&VesselTruth, usize, f64) -> Result<[f64; 2]> + Sync,
) -> Result<SweepReport> {
    cfg.validate(experiment)?;
    ensemble.validate()?;
    let prepared = prepare(cohort, model)?;
    let mut levels = Vec::with_capacity(cfg.levels.len());
    for (index, &level) in cfg.levels.iter().enumerate() {
        let per_participant: Vec<Vec<SliceOutcome>> = prepared
            .par_iter()
            .map(|p| {
                let degraded = degrade(p, index, level)?;
                let v = degraded.as_ref().unwrap_or(&p.volume);
                let mut out = Vec::new();
                for truth in &p.participant.vessels {
                    for &z in &truth.annotated {
                        let c = center(truth, z, level)?;
                        out.push(process_slice(v, truth, z, c, &p.predictor, ensemble, cfg, index, false)?);
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let outcomes: Vec<SliceOutcome> = per_participant.into_iter().flatten().collect();
        let outcome = LevelOutcome {
            index,
            level,
            outside_lumen: experiment == Experiment::Offset && level > 1.0,
            dropped_slices: outcomes.iter().filter(|o| o.dropped).count(),
            failed_contours: outcomes.iter().map(|o| o.failed).sum(),
            records: outcomes.into_iter().flat_map(|o| o.records).collect(),
        };
        log::info!(
            "{experiment} level {level}: {} records, {} dropped slices, {} failed contours",
            outcome.records.len(),
            outcome.dropped_slices,
            outcome.failed_contours
        );
        levels.push(outcome);
    }
    assemble(experiment, levels, cfg)
}

fn true_center(truth: &VesselTruth, z: usize) -> Result<[f64; 2]> {
    truth
        .slice(z)
        .map(|s| s.center)
        .ok_or_else(|| Error::OutOfBounds(format!("no truth for slice {z}")))
}

fn assemble(experiment: Experiment, levels: Vec<LevelOutcome>, cfg: &SweepConfig) -> Result<SweepReport> {
    let mut summary = Vec::new();
    let mut level_correlations = Vec::new();
    for l in &levels {
        for structure in Structure::ALL {
            for &method in &cfg.methods {
                let rs: Vec<&QaRecord> =
                    l.records.iter().filter(|r| r.structure == structure && r.method() == method).collect();
                if rs.is_empty() {
                    continue;
                }
                let d: Vec<f64> = rs.iter().map(|r| r.dice).collect();
                let u: Vec<f64> = rs.iter().map(|r| r.mean_uncertainty).collect();
                summary.push(SummaryRow {
                    level: l.level,
                    structure,
                    method,
                    median_dice: median(&d),
                    iqr_dice: iqr(&d),
                    median_uncertainty: median(&u),
                    iqr_uncertainty: iqr(&u),
                });
            }
        }
        level_correlations.extend(correlation_table(&l.records)?.into_iter().map(|c| (l.level, c)));
    }
    let pooled: Vec<QaRecord> = levels
        .iter()
        .filter(|l| SweepReport::correlated(experiment, l.level, cfg.include_outside))
        .flat_map(|l| l.records.iter().cloned())
        .collect();
    let correlations = correlation_table(&pooled)?;
    Ok(SweepReport { experiment, levels, summary, correlations, level_correlations })
}

/// Noise sweep at the true centers: each level adds `α`-weighted Gaussian
/// noise to the preprocessed volume with a seed derived from the sweep seed,
/// the participant and the level.
pub fn run_noise_sweep(
    cohort: &[Participant],
    model: &Model<'_>,
    ensemble: &EnsembleConfig,
    cfg: &SweepConfig,
) -> Result<SweepReport> {
    let degrade = |p: &Prepared<'_, '_>, index: usize, alpha: f64| {
        let spec = NoiseSpec::new(alpha, sub_seed(cfg.seed, &p.participant.id, index))?;
        Ok(Some(add_noise(&p.volume, spec)))
    };
    run_sweep(Experiment::Noise, cohort, model, ensemble, cfg, degrade, |truth, z, _| true_center(truth, z))
}

/// Offset sweep on the clean volumes, every annotated slice recentered by [`offset_center`].
pub fn run_offset_sweep(
    cohort: &[Participant],
    model: &Model<'_>,
    ensemble: &EnsembleConfig,
    cfg: &SweepConfig,
) -> Result<SweepReport> {
    run_sweep(Experiment::Offset, cohort, model, ensemble, cfg, |_, _, _| Ok(None), offset_center)
}

/// All methods on every annotated slice at the true centers of the clean volumes.
pub fn segment_cohort(
    cohort: &[Participant],
    model: &Model<'_>,
    methods: &[Method],
    ensemble: &EnsembleConfig,
) -> Result<(Vec<QaRecord>, Vec<SegmentedSlice>)> {
    let cfg = SweepConfig { levels: vec![0.0], methods: methods.to_vec(), ..SweepConfig::noise_default() };
    cfg.validate(Experiment::Noise)?;
    ensemble.validate()?;
    let prepared = prepare(cohort, model)?;
    let per: Vec<Vec<SliceOutcome>> = prepared
        .par_iter()
        .map(|p| {
            let mut out = Vec::new();
            for truth in &p.participant.vessels {
                for s in truth.annotated_slices() {
                    out.push(process_slice(&p.volume, truth, s.z, s.center, &p.predictor, ensemble, &cfg, 0, true)?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut slices = Vec::new();
    for o in per.into_iter().flatten() {
        records.extend(o.records);
        slices.extend(o.segmented);
    }
    Ok((records, slices))
}
