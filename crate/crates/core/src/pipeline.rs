//! Command stages over a fixed artifact layout below the output directory.
//!
//! ```text
//! cohort/manifest.json, cohort/P000.vol, cohort/P000.truth.json, ...
//! model/weights.pqw, model/training_log.csv, model/train.json
//! segment/records.csv, segment/contours.json, segment/correlations.csv
//! sweeps/{noise,offset}/records_level_NN.csv, summary.csv, correlations.csv,
//!                       level_correlations.csv, sweep.json
//! report/table.csv, report/{noise,offset}.svg
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Roles, RunConfig};
use crate::error::{Error, Result};
use crate::phantom::{generate_cohort, CohortSpec, Participant, VesselTruth};
use crate::polar::{polar_transform, PolarCenter};
use crate::predictor::{
    build_samples, read_weights, train, write_training_log, write_weights, Model, Network, PredictMode, PredictorKind,
    Sample, Slices,
};
use crate::qa::{correlation_table, score_contour};
use crate::report::{
    read_csv, read_json, read_records, sweep_svg, write_csv, write_json, write_records, write_sweep,
    write_text, CorrelationRow, SweepInfo, TableRow, CORRELATIONS_CSV, SUMMARY_CSV, SWEEP_JSON,
};
use crate::sim::{run_noise_sweep, run_offset_sweep, segment_cohort, sub_seed, Experiment, SummaryRow};
use crate::stats::median;
use crate::volume::{preprocess, read_volume, write_volume};

pub const MANIFEST_FILE: &str = "cohort/manifest.json";
pub const WEIGHTS_FILE: &str = "model/weights.pqw";
pub const TRAINING_LOG_FILE: &str = "model/training_log.csv";
pub const TRAIN_SUMMARY_FILE: &str = "model/train.json";
pub const SEGMENT_RECORDS_FILE: &str = "segment/records.csv";
pub const SEGMENT_CONTOURS_FILE: &str = "segment/contours.json";
pub const SEGMENT_CORRELATIONS_FILE: &str = "segment/correlations.csv";
pub const REPORT_TABLE_FILE: &str = "report/table.csv";

pub fn sweep_dir(out: &Path, experiment: Experiment) -> PathBuf {
    out.join("sweeps").join(experiment.as_str())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Paths relative to the manifest.
    pub volume: String,
    pub truth: String,
    pub vessels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: CohortSpec,
    pub roles: Roles,
    pub participants: Vec<ManifestEntry>,
}

/// Generates the cohort and writes volumes, truth and the manifest.
pub fn gen_phantoms(cfg: &RunConfig) -> Result<Manifest> {
    let out = &cfg.output_dir;
    let cohort = generate_cohort(&cfg.cohort)?;
    let dir = out.join("cohort");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut participants = Vec::with_capacity(cohort.len());
    for p in &cohort {
        let entry = ManifestEntry {
            id: p.id.clone(),
            volume: format!("{}.vol", p.id),
            truth: format!("{}.truth.json", p.id),
            vessels: p.vessels.iter().map(|v| v.vessel_id.clone()).collect(),
        };
        write_volume(&p.volume, dir.join(&entry.volume))?;
        write_json(dir.join(&entry.truth), &p.vessels)?;
        participants.push(entry);
    }
    let manifest = Manifest { spec: cfg.cohort.clone(), roles: cfg.split.roles(cohort.len()), participants };
    write_json(out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads the cohort written by [`gen_phantoms`], checking that it matches the config.
pub fn load_cohort(cfg: &RunConfig) -> Result<(Manifest, Vec<Participant>)> {
    let path = cfg.output_dir.join(MANIFEST_FILE);
    let manifest: Manifest = read_json(&path)?;
    if manifest.spec != cfg.cohort {
        return Err(Error::InvalidConfig(format!(
            "{} was generated from a different cohort section; rerun gen-phantoms",
            path.display()
        )));
    }
    let dir = path.parent().expect("manifest lives in a directory");
    let participants = manifest
        .participants
        .par_iter()
        .map(|e| {
            let volume = read_volume(dir.join(&e.volume)).map_err(|err| match err {
                Error::Io { path, .. } => Error::MissingArtifact(path),
                other => other,
            })?;
            let vessels: Vec<VesselTruth> = read_json(dir.join(&e.truth))?;
            Ok(Participant { id: e.id.clone(), volume, vessels })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, participants))
}

fn pick(cohort: &[Participant], idx: &[usize]) -> Vec<Participant> {
    idx.iter().map(|&i| cohort[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub epochs_run: usize,
    pub n_train_samples: usize,
    pub n_validation_samples: usize,
    /// Deterministic prediction at the true centers of the validation slices.
    pub validation_median_lumen_dice: f64,
    pub validation_median_wall_dice: f64,
}

fn samples(cohort: &[Participant], slices: Slices, cfg: &RunConfig, stream: usize) -> Result<Vec<Sample<f32>>> {
    let per: Vec<Vec<Sample<f32>>> = cohort
        .par_iter()
        .map(|p| {
            let v = preprocess(&p.volume)?;
            build_samples(&v, &p.vessels, slices, &cfg.dataset, sub_seed(cfg.train.seed, &p.id, stream))
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Median lumen and wall Dice of deterministic predictions at the true centers of annotated slices.
pub fn validation_dice(net: &Network<f32>, cohort: &[Participant]) -> Result<(f64, f64)> {
    let per: Vec<Vec<(f64, f64)>> = cohort
        .par_iter()
        .map(|p| {
            let v = preprocess(&p.volume)?;
            let [nx, ny, _] = v.dims();
            let mut out = Vec::new();
            for truth in &p.vessels {
                for s in truth.annotated_slices() {
                    let c = PolarCenter::new(s.center[0], s.center[1], s.z);
                    let patch = polar_transform::<f32>(&v, c.cast())?;
                    let pred = net.predict(&patch, PredictMode::Deterministic)?.cast::<f64>();
                    out.push(score_contour(&pred, truth, s.z, [nx, ny])?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let (l, w): (Vec<f64>, Vec<f64>) = per.into_iter().flatten().unzip();
    Ok((median(&l), median(&w)))
}

/// Trains the network on the unannotated slices of the training participants
/// and selects the epoch by the annotated slices of the validation participants.
pub fn train_model(cfg: &RunConfig) -> Result<(Network<f32>, TrainSummary)> {
    if cfg.predictor.kind == PredictorKind::Oracle {
        return Err(Error::InvalidConfig("predictor.kind is \"oracle\", which has nothing to train".into()));
    }
    let (_, cohort) = load_cohort(cfg)?;
    let roles = cfg.split.roles(cohort.len());
    let train_set = samples(&pick(&cohort, &roles.train), Slices::Unannotated, cfg, 0)?;
    let validation = pick(&cohort, &roles.validation);
    let val_set = samples(&validation, Slices::Annotated, cfg, 1)?;
    log::info!("training on {} samples, validating on {}", train_set.len(), val_set.len());
    let net = Network::canonical(&cfg.predictor.cnn)?;
    let outcome = train(net, &train_set, &val_set, &cfg.train)?;
    for l in &outcome.log {
        log::debug!("epoch {}: train {:.5} validation {:.5}", l.epoch, l.train_mse, l.val_mse);
    }
    let (lumen, wall) = validation_dice(&outcome.network, &validation)?;
    let summary = TrainSummary {
        best_epoch: outcome.best_epoch,
        best_val_mse: outcome.log[outcome.best_epoch - 1].val_mse,
        epochs_run: outcome.log.len(),
        n_train_samples: train_set.len(),
        n_validation_samples: val_set.len(),
        validation_median_lumen_dice: lumen,
        validation_median_wall_dice: wall,
    };
    let out = &cfg.output_dir;
    let weights = out.join(WEIGHTS_FILE);
    if let Some(dir) = weights.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_weights(&outcome.network, &weights)?;
    write_training_log(&outcome.log, out.join(TRAINING_LOG_FILE))?;
    write_json(out.join(TRAIN_SUMMARY_FILE), &summary)?;
    Ok((outcome.network, summary))
}

/// The trained network, if the configured predictor needs one.
pub fn load_network(cfg: &RunConfig) -> Result<Option<Network<f32>>> {
    match cfg.predictor.kind {
        PredictorKind::Oracle => Ok(None),
        PredictorKind::Cnn => read_weights(cfg.weights_path(), &cfg.predictor.cnn).map(Some),
    }
}

pub fn model<'a>(cfg: &RunConfig, net: Option<&'a Network<f32>>) -> Model<'a> {
    match cfg.predictor.kind {
        PredictorKind::Oracle => Model::Oracle(cfg.cohort.intensity),
        PredictorKind::Cnn => Model::Cnn(net),
    }
}

/// Segments the test participants with every configured method.
pub fn segment(cfg: &RunConfig) -> Result<usize> {
    let (_, cohort) = load_cohort(cfg)?;
    let roles = cfg.split.roles(cohort.len());
    let net = load_network(cfg)?;
    let test = pick(&cohort, &roles.test);
    let (records, slices) = segment_cohort(&test, &model(cfg, net.as_ref()), &cfg.segment.methods, &cfg.ensemble)?;
    write_records(cfg.output_dir.join(SEGMENT_RECORDS_FILE), &records)?;
    write_json(cfg.output_dir.join(SEGMENT_CONTOURS_FILE), &slices)?;
    Ok(records.len())
}

pub fn sweep(cfg: &RunConfig, experiment: Experiment) -> Result<crate::sim::SweepReport> {
    let (_, cohort) = load_cohort(cfg)?;
    let roles = cfg.split.roles(cohort.len());
    let net = load_network(cfg)?;
    let test = pick(&cohort, &roles.test);
    let m = model(cfg, net.as_ref());
    let (report, sweep_cfg) = match experiment {
        Experiment::Noise => (run_noise_sweep(&test, &m, &cfg.ensemble, &cfg.noise_sweep)?, &cfg.noise_sweep),
        Experiment::Offset => (run_offset_sweep(&test, &m, &cfg.ensemble, &cfg.offset_sweep)?, &cfg.offset_sweep),
    };
    write_sweep(&report, sweep_cfg.include_outside, sweep_dir(&cfg.output_dir, experiment))?;
    Ok(report)
}

/// Correlates the records of `segment` at all three levels.
pub fn correlate(cfg: &RunConfig) -> Result<Vec<CorrelationRow>> {
    let records = read_records(cfg.output_dir.join(SEGMENT_RECORDS_FILE))?;
    let rows: Vec<CorrelationRow> =
        correlation_table(&records)?.iter().map(|c| CorrelationRow::new("baseline", None, c)).collect();
    write_csv(cfg.output_dir.join(SEGMENT_CORRELATIONS_FILE), &rows)?;
    Ok(rows)
}

/// Merges the sweep correlation tables and draws one chart per sweep.
pub fn report(cfg: &RunConfig) -> Result<Vec<TableRow>> {
    let out = &cfg.output_dir;
    let mut table = Vec::new();
    let mut found = Vec::new();
    for exp in [Experiment::Noise, Experiment::Offset] {
        let dir = sweep_dir(out, exp);
        if !dir.join(SWEEP_JSON).is_file() {
            continue;
        }
        let info: SweepInfo = read_json(dir.join(SWEEP_JSON))?;
        let summary: Vec<SummaryRow> = read_csv(dir.join(SUMMARY_CSV))?;
        let rows: Vec<TableRow> = read_csv(dir.join(CORRELATIONS_CSV))?;
        table.extend(rows);
        let outside = (exp == Experiment::Offset).then_some(1.0);
        let svg = sweep_svg(info.experiment, &summary, outside);
        write_text(out.join("report").join(format!("{exp}.svg")), &svg)?;
        found.push(exp);
    }
    if found.is_empty() {
        return Err(Error::MissingArtifact(sweep_dir(out, Experiment::Noise).join(SWEEP_JSON)));
    }
    write_csv(out.join(REPORT_TABLE_FILE), &table)?;
    Ok(table)
}

/// Table rows of a sweep directory, e.g. for inspection in tests.
pub fn sweep_table(out: &Path, experiment: Experiment) -> Result<Vec<TableRow>> {
    read_csv(sweep_dir(out, experiment).join(CORRELATIONS_CSV))
}

