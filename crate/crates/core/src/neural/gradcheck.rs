//! Central finite-difference check of the analytic gradients.

use rand::seq::index::sample;

use super::params::{LabelScaler, ModelParams, Weights};
use super::spec::ModelSpec;
use super::{backward, heteroscedastic_loss, predict, Mode};
use crate::error::Result;
use crate::fingerprint::Fingerprint;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-10)`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Check a freshly initialised `spec` (in `f64`, dropout off) on one sample.
/// Specs with more than `max_params` parameters are checked on a seeded
/// subsample.
pub fn grad_check(
    spec: &ModelSpec,
    input: &Fingerprint,
    label: &[f64],
    eps: f64,
    seed: u64,
    max_params: usize,
) -> Result<GradCheckReport> {
    let params = ModelParams::<f64>::init(spec, seed, LabelScaler::identity(spec.outputs))?;
    grad_check_with(&params, input, label, eps, seed, max_params, |_| {})
}

/// As [`grad_check`] on given parameters; `fault` may tamper with the
/// analytic gradient before comparison.
pub fn grad_check_with(
    params: &ModelParams<f64>,
    input: &Fingerprint,
    label: &[f64],
    eps: f64,
    seed: u64,
    max_params: usize,
    fault: impl FnOnce(&mut Weights<f64>),
) -> Result<GradCheckReport> {
    let (_, mut analytic) = backward(params, input, label, Mode::Eval, 0)?;
    fault(&mut analytic);
    let n = params.weights.len();
    let indices: Vec<usize> = if n <= max_params {
        (0..n).collect()
    } else {
        let mut rng = seed::rng(seed::derive(seed, &[0x4743]));
        let mut v = sample(&mut rng, n, max_params).into_vec();
        v.sort_unstable();
        v
    };
    let mut probe = params.clone();
    let loss_at = |p: &ModelParams<f64>| -> Result<f64> {
        let est = predict(p, &[input], Mode::Eval, &[])?.remove(0);
        Ok(heteroscedastic_loss(label, &est))
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: indices.len(),
    };
    for &i in &indices {
        let orig = params.weights.get_flat(i);
        probe.weights.set_flat(i, orig + eps);
        let up = loss_at(&probe)?;
        probe.weights.set_flat(i, orig - eps);
        let down = loss_at(&probe)?;
        probe.weights.set_flat(i, orig);
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.get_flat(i);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-10);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}
