//! Run configuration: one JSON file with a section per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::CohortSpec;
use crate::predictor::{DatasetConfig, PredictorConfig, TrainConfig};
use crate::qa::Method;
use crate::sim::{sub_seed, Experiment, SweepConfig};
use crate::uncertainty::EnsembleConfig;

/// How many participants train and validate the network; the rest are test participants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSplit {
    pub train: usize,
    pub validation: usize,
}

impl Default for CohortSplit {
    fn default() -> Self {
        Self { train: 8, validation: 2 }
    }
}

/// Participant indices per role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl CohortSplit {
    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.validation == 0 {
            return Err(Error::InvalidConfig("split needs at least one training and one validation participant".into()));
        }
        Ok(())
    }

    /// Consecutive blocks of participants in the order train, validation, test.
    /// A role left empty by a small cohort falls back to every participant;
    /// training then still only sees unannotated slices, and validation and
    /// testing only annotated ones.
    pub fn roles(&self, n: usize) -> Roles {
        let block = |from: usize, len: usize| -> Vec<usize> {
            let r: Vec<usize> = (from.min(n)..(from + len).min(n)).collect();
            if r.is_empty() {
                (0..n).collect()
            } else {
                r
            }
        };
        Roles {
            train: block(0, self.train),
            validation: block(self.train, self.validation),
            test: block(self.train + self.validation, n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    pub methods: Vec<Method>,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { methods: SweepConfig::noise_default().methods }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; when set it overrides every per-section seed.
    pub seed: Option<u64>,
    /// Artifact root, relative to the config file.
    pub output_dir: PathBuf,
    /// Pretrained weights, relative to the config file; defaults to the output of `train`.
    pub weights: Option<PathBuf>,
    /// 0 quiet, 1 progress, 2 debug.
    pub verbosity: u8,
    pub cohort: CohortSpec,
    pub split: CohortSplit,
    pub predictor: PredictorConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
    pub segment: SegmentConfig,
    pub noise_sweep: SweepConfig,
    pub offset_sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            output_dir: PathBuf::from("out"),
            weights: None,
            verbosity: 1,
            // 8 training, 2 validation and 6 test participants under the default split
            cohort: CohortSpec { n_participants: 16, ..CohortSpec::default() },
            split: CohortSplit::default(),
            predictor: PredictorConfig::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            ensemble: EnsembleConfig::default(),
            segment: SegmentConfig::default(),
            noise_sweep: SweepConfig::noise_default(),
            offset_sweep: SweepConfig::offset_default(),
        }
    }
}

impl RunConfig {
    /// Parses, resolves relative paths against `base` and validates.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.output_dir = base.join(&cfg.output_dir);
        cfg.weights = cfg.weights.map(|w| base.join(w));
        if let Some(seed) = cfg.seed {
            cfg.apply_seed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read config file {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_json(&text, base)
            .map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e.to_string().trim_start_matches("invalid configuration: "))))
    }

    /// Derives every section's seed from `seed`.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.cohort.seed = seed;
        self.predictor.cnn.init_seed = sub_seed(seed, "init", 0);
        self.train.seed = sub_seed(seed, "train", 0);
        self.ensemble.base_seed = sub_seed(seed, "dropout", 0);
        self.noise_sweep.seed = sub_seed(seed, "noise", 0);
        self.offset_sweep.seed = sub_seed(seed, "offset", 0);
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.validate()?;
        self.split.validate()?;
        self.predictor.cnn.validate()?;
        self.dataset.validate()?;
        self.train.validate()?;
        self.ensemble.validate()?;
        self.noise_sweep.validate(Experiment::Noise)?;
        self.offset_sweep.validate(Experiment::Offset)?;
        let probe = SweepConfig { methods: self.segment.methods.clone(), ..SweepConfig::noise_default() };
        probe.validate(Experiment::Noise)?;
        if self.verbosity > 2 {
            return Err(Error::InvalidConfig(format!("verbosity must be 0, 1 or 2, got {}", self.verbosity)));
        }
        Ok(())
    }

    pub fn weights_path(&self) -> PathBuf {
        self.weights.clone().unwrap_or_else(|| self.output_dir.join(crate::pipeline::WEIGHTS_FILE))
    }
}
