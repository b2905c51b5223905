//! Finite-difference verification of the network's backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cnn::{Activation, CnnConfig, Network};
use crate::error::{Error, Result};
use crate::polar::{PolarCenter, PolarPatch};

/// Denominator floor of the relative error, so that two vanishing gradients compare equal.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub n_layers: usize,
    pub channels: usize,
    pub activation: Activation,
    /// Patch shape `(angles, radii, slices)`.
    pub shape: [usize; 3],
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            channels: 4,
            activation: Activation::Relu,
            shape: [7, 12, 3],
            step: 1e-3,
            tolerance: 1e-4,
            seed: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub n_params: usize,
    /// Parameters whose ±step perturbation flips a ReLU; excluded from the comparison.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
}

/// Analytic gradient of the loss for one (patch, target) pair, flattened in
/// [`Network::params`] order.
pub fn analytic_gradient(net: &Network<f64>, patch: &PolarPatch<f64>, target: &[f64]) -> Result<Vec<f64>> {
    let mut grad = net.zeros_like();
    net.loss_and_grad(patch, target, None, &mut grad)?;
    Ok(grad.params().flatten().copied().collect())
}

pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    grad_check_with(cfg, analytic_gradient)
}

/// Compares `backward` against central differences of the loss.
pub fn grad_check_with(
    cfg: &GradCheckConfig,
    backward: impl Fn(&Network<f64>, &PolarPatch<f64>, &[f64]) -> Result<Vec<f64>>,
) -> Result<GradCheckReport> {
    let net_cfg = CnnConfig {
        n_layers: cfg.n_layers,
        channels: cfg.channels,
        dropout: 0.0,
        activation: cfg.activation,
        init_seed: cfg.seed,
        ..CnnConfig::default()
    };
    let [na, nr, ns] = cfg.shape;
    let mut net = Network::<f64>::new(&net_cfg, nr, ns)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    // Random head weights of ordinary size so every layer receives a sizeable gradient.
    let blocks = net.params_mut().count();
    if let Some(head) = net.params_mut().nth(blocks - 2) {
        head.iter_mut().for_each(|w| *w += rng.random_range(-0.5..0.5));
    }
    let data = (0..na * nr * ns).map(|_| rng.random_range(-1.0..1.0)).collect();
    let patch = PolarPatch::from_raw(PolarCenter::new(0.0, 0.0, ns / 2), cfg.shape, data)?;
    let target: Vec<f64> = (0..2 * na).map(|_| rng.random_range(1.0..8.0)).collect();

    let analytic = backward(&net, &patch, &target)?;
    let n_params = net.n_params();
    if analytic.len() != n_params {
        return Err(Error::DimensionMismatch { expected: n_params, found: analytic.len() });
    }
    let h = cfg.step;
    let mut report = GradCheckReport { n_params, skipped: 0, max_rel_error: 0.0, worst_param: String::new() };
    let mut offenders = Vec::new();
    let pattern = net.relu_pattern(&patch);
    for (k, &a) in analytic.iter().enumerate() {
        let (plus, kink_plus) = perturbed_loss(&mut net, k, h, &patch, &target, &pattern)?;
        let (minus, kink_minus) = perturbed_loss(&mut net, k, -h, &patch, &target, &pattern)?;
        if kink_plus || kink_minus {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = net.param_name(k);
        }
        if rel >= cfg.tolerance {
            offenders.push(net.param_name(k));
        }
    }
    if !offenders.is_empty() {
        return Err(Error::GradientMismatch { params: offenders, worst: report.max_rel_error });
    }
    Ok(report)
}

/// Loss with parameter `k` shifted by `delta`, and whether the ReLU pattern changed.
fn perturbed_loss(
    net: &mut Network<f64>,
    k: usize,
    delta: f64,
    patch: &PolarPatch<f64>,
    target: &[f64],
    pattern: &[bool],
) -> Result<(f64, bool)> {
    let slot = param_mut(net, k);
    let original = *slot;
    *slot = original + delta;
    let mut scratch = net.zeros_like();
    let loss = net.loss_and_grad(patch, target, None, &mut scratch);
    let changed = net.relu_pattern(patch) != pattern;
    *param_mut(net, k) = original;
    Ok((loss?, changed))
}

fn param_mut(net: &mut Network<f64>, mut k: usize) -> &mut f64 {
    for block in net.params_mut() {
        if k < block.len() {
            return &mut block[k];
        }
        k -= block.len();
    }
    panic!("parameter index out of range");
}
