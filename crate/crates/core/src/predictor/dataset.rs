//! Training patches cut at jittered centers with exact phantom targets.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::Sample;
use crate::error::{Error, Result};
use crate::phantom::{truth_contour, VesselTruth};
use crate::polar::{polar_transform, PolarCenter, SLICE_HALF_WIDTH};
use crate::volume::{add_noise, NoiseSpec, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Patches per vessel slice; the first is always at the true center.
    pub centers_per_slice: usize,
    /// Largest center displacement as a fraction of the lumen radius in that direction.
    pub max_offset: f64,
    /// Noise levels for augmentation. Each slice is cut from the clean volume
    /// or from one of these noisy copies, chosen uniformly.
    pub noise_levels: Vec<f64>,
}

/// Which slices of a vessel contribute samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slices {
    All,
    Annotated,
    /// Everything but the annotated slices, which stay reserved for evaluation.
    Unannotated,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { centers_per_slice: 3, max_offset: 0.5, noise_levels: Vec::new() }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.centers_per_slice == 0 || !(0.0..1.0).contains(&self.max_offset) {
            return Err(Error::InvalidConfig(
                "dataset needs centers_per_slice >= 1 and max_offset in [0, 1)".into(),
            ));
        }
        if let Some(a) = self.noise_levels.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidConfig(format!("noise levels must lie in [0, 1], got {a}")));
        }
        Ok(())
    }
}

/// Samples from the selected slices of `vessels` that can host a full patch.
///
/// `volume` must already be preprocessed. Jittered centers move a uniform
/// fraction of `max_offset` along a uniform direction, so they stay inside
/// the lumen and the targets are exact ray–ellipse distances.
pub fn build_samples(
    volume: &Volume,
    vessels: &[VesselTruth],
    slices: Slices,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<Vec<Sample<f32>>> {
    cfg.validate()?;
    let nz = volume.dims()[2];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = cfg
        .noise_levels
        .iter()
        .map(|&alpha| Ok(add_noise(volume, NoiseSpec::new(alpha, rng.random())?)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for truth in vessels {
        for z in SLICE_HALF_WIDTH..nz.saturating_sub(SLICE_HALF_WIDTH) {
            let annotated = truth.annotated.contains(&z);
            match slices {
                Slices::Annotated if !annotated => continue,
                Slices::Unannotated if annotated => continue,
                _ => {}
            }
            let s = truth
                .slice(z)
                .ok_or_else(|| Error::OutOfBounds(format!("{} has no truth at slice {z}", truth.vessel_id)))?;
            let source = match noisy.len() {
                0 => volume,
                n => match rng.random_range(0..=n) {
                    0 => volume,
                    k => &noisy[k - 1],
                },
            };
            for j in 0..cfg.centers_per_slice {
                let center = if j == 0 {
                    s.center
                } else {
                    let theta = TAU * rng.random::<f64>();
                    let reach = s.lumen.ray_distance([0.0, 0.0], theta).expect("truth center is inside");
                    let d = cfg.max_offset * rng.random::<f64>() * reach;
                    [s.center[0] + d * theta.cos(), s.center[1] + d * theta.sin()]
                };
                let target = truth_contour(truth, PolarCenter::new(center[0], center[1], z))?;
                let patch = polar_transform::<f32>(source, PolarCenter::new(center[0] as f32, center[1] as f32, z))?;
                out.push(Sample::new(patch, &target));
            }
        }
    }
    Ok(out)
}
