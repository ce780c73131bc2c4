//! Per-station predictive uncertainty: Monte-Carlo dropout and leave-one-out
//! deep-ensemble set variances, and the certainty weights derived from them.
//!
//! All quantities are computed independently per output component `d`.

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::neural::{predict, soft_exp, Mode, ModelParams, PositionEstimate, Real};
use crate::seed::{self, stream};

/// Number of stochastic passes used when none is given.
pub const DEFAULT_MC_PASSES: usize = 50;

/// Values indexed `[bs][component]`.
pub type BsMatrix = Vec<Vec<f64>>;

/// Summary of `T` dropout-on passes for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct McdResult {
    pub mean_p: Vec<f64>,
    /// Epistemic spread of the pass means plus the mean aleatoric variance.
    pub var_mc: Vec<f64>,
    /// The aleatoric part of `var_mc`, `(1/T) sum_t exp(s_t)`.
    pub aleatoric: Vec<f64>,
    pub t_passes: usize,
}

impl McdResult {
    /// `var_mc - aleatoric`: the population variance of the pass means.
    pub fn epistemic(&self) -> Vec<f64> {
        self.var_mc
            .iter()
            .zip(&self.aleatoric)
            .map(|(v, a)| v - a)
            .collect()
    }
}

/// Reduce stored pass outputs. The epistemic term is evaluated in two passes
/// (mean first, then squared deviations), which equals
/// `mean(p^2) - mean(p)^2` without its cancellation.
pub fn mcd_from_passes(passes: &[PositionEstimate]) -> Result<McdResult> {
    let Some(first) = passes.first() else {
        return Err(Error::InvalidArgument("at least one MC pass is required".into()));
    };
    let d = first.p_hat.len();
    if passes.iter().any(|p| p.p_hat.len() != d || p.s.len() != d) {
        return Err(Error::Shape("MC passes differ in dimension".into()));
    }
    let t = passes.len() as f64;
    let mut mean_p = vec![0.0; d];
    let mut aleatoric = vec![0.0; d];
    for p in passes {
        for k in 0..d {
            mean_p[k] += p.p_hat[k];
            aleatoric[k] += soft_exp(p.s[k]);
        }
    }
    mean_p.iter_mut().for_each(|m| *m /= t);
    aleatoric.iter_mut().for_each(|a| *a /= t);
    let mut var_mc = vec![0.0; d];
    for p in passes {
        for k in 0..d {
            var_mc[k] += (p.p_hat[k] - mean_p[k]).powi(2);
        }
    }
    for k in 0..d {
        var_mc[k] = var_mc[k] / t + aleatoric[k];
    }
    Ok(McdResult {
        mean_p,
        var_mc,
        aleatoric,
        t_passes: passes.len(),
    })
}

/// Seed of pass `t` for an input whose MC seed is `seed`.
pub fn pass_seed(seed: u64, t: usize) -> u64 {
    seed::derive(seed, &[stream::MC_PASS, t as u64])
}

/// `t` dropout-on passes of one input.
pub fn mcd_predict<T: Real>(
    params: &ModelParams<T>,
    fp: &Fingerprint,
    t: usize,
    seed: u64,
) -> Result<McdResult> {
    Ok(mcd_predict_batch(params, &[fp], t, &[seed])?.remove(0))
}

/// [`mcd_predict`] for many inputs at once; input `i` uses `seeds[i]`, so the
/// result for an input does not depend on the rest of the batch.
pub fn mcd_predict_batch<T: Real>(
    params: &ModelParams<T>,
    fps: &[&Fingerprint],
    t: usize,
    seeds: &[u64],
) -> Result<Vec<McdResult>> {
    if t == 0 {
        return Err(Error::InvalidArgument("MC dropout needs t >= 1 passes".into()));
    }
    if seeds.len() != fps.len() {
        return Err(Error::Shape(format!("{} seeds for {} inputs", seeds.len(), fps.len())));
    }
    let mut inputs = Vec::with_capacity(fps.len() * t);
    let mut pass_seeds = Vec::with_capacity(fps.len() * t);
    for (fp, &s) in fps.iter().zip(seeds) {
        for k in 0..t {
            inputs.push(*fp);
            pass_seeds.push(pass_seed(s, k));
        }
    }
    let passes = predict(params, &inputs, Mode::McDropout, &pass_seeds)?;
    passes.chunks_exact(t).map(mcd_from_passes).collect()
}

/// Eval-mode estimates and aleatoric variances of all stations for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleInputs {
    /// `[bs][component]` position estimates.
    pub p_hat: BsMatrix,
    /// `[bs][component]` aleatoric variances `exp(s)`.
    pub aleatoric: BsMatrix,
}

impl EnsembleInputs {
    pub fn from_estimates(estimates: &[PositionEstimate]) -> Self {
        Self {
            p_hat: estimates.iter().map(|e| e.p_hat.clone()).collect(),
            aleatoric: estimates.iter().map(|e| e.variance()).collect(),
        }
    }

    pub fn n_bs(&self) -> usize {
        self.p_hat.len()
    }
}

/// Variance of the set that leaves out station `excluded`, for component
/// `d`: spread of the members' estimates plus their mean aleatoric variance.
/// An empty set gives 0.
pub fn de_set_variance(inputs: &EnsembleInputs, excluded: usize, d: usize) -> Result<f64> {
    let n_bs = inputs.n_bs();
    if excluded >= n_bs {
        return Err(Error::InvalidArgument(format!(
            "excluded station {excluded} out of range for {n_bs} stations"
        )));
    }
    if inputs.aleatoric.len() != n_bs || inputs.p_hat.iter().chain(&inputs.aleatoric).any(|r| d >= r.len()) {
        return Err(Error::Shape(format!("component {d} missing from ensemble inputs")));
    }
    let members: Vec<usize> = (0..n_bs).filter(|&i| i != excluded).collect();
    if members.is_empty() {
        return Ok(0.0);
    }
    let m = members.len() as f64;
    let mean = members.iter().map(|&i| inputs.p_hat[i][d]).sum::<f64>() / m;
    let spread = members
        .iter()
        .map(|&i| (inputs.p_hat[i][d] - mean).powi(2))
        .sum::<f64>()
        / m;
    let aleatoric = members.iter().map(|&i| inputs.aleatoric[i][d]).sum::<f64>() / m;
    Ok(spread + aleatoric)
}

/// `[bs][component]` set variances of all leave-one-out sets.
pub fn de_set_variances(inputs: &EnsembleInputs) -> Result<BsMatrix> {
    let d = inputs.p_hat.first().map_or(0, Vec::len);
    (0..inputs.n_bs())
        .map(|n| (0..d).map(|k| de_set_variance(inputs, n, k)).collect())
        .collect()
}

/// Per-station, per-component fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CertaintyWeights {
    /// `[bs][component]`, all non-negative.
    pub w: BsMatrix,
    /// Components whose weights came from a fallback rule rather than the
    /// plain formula.
    pub fallback: Vec<bool>,
}

impl CertaintyWeights {
    pub fn equal(n_bs: usize, d: usize) -> Self {
        Self {
            w: vec![vec![1.0; d]; n_bs],
            fallback: vec![false; d],
        }
    }

    /// Weights rescaled to sum to one per component.
    pub fn normalized(&self) -> BsMatrix {
        let d = self.fallback.len();
        let totals: Vec<f64> = (0..d).map(|k| self.w.iter().map(|r| r[k]).sum()).collect();
        self.w
            .iter()
            .map(|r| (0..d).map(|k| r[k] / totals[k]).collect())
            .collect()
    }
}

fn check_variances(v: &BsMatrix) -> Result<usize> {
    let d = v.first().map_or(0, Vec::len);
    if v.is_empty() || d == 0 || v.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("variance matrix must be a non-empty rectangle".into()));
    }
    if v.iter().flatten().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::Domain("variances must be finite and non-negative".into()));
    }
    Ok(d)
}

/// Leave-one-out ensemble weights `w_n = v_n / sum_{i != n} v_i`, where
/// `v_n` is the variance of the set without station `n`: a station whose
/// removal leaves a high-variance set is the one keeping the estimate tight.
///
/// Fallbacks (flagged): all variances zero gives equal weights; if only one
/// station has a positive variance, the ratio diverges for it and it takes
/// the whole weight.
pub fn de_weights(set_variances: &BsMatrix) -> Result<CertaintyWeights> {
    let d = check_variances(set_variances)?;
    let n_bs = set_variances.len();
    let mut out = CertaintyWeights::equal(n_bs, d);
    for k in 0..d {
        let total: f64 = set_variances.iter().map(|r| r[k]).sum();
        if total == 0.0 {
            out.fallback[k] = true;
            continue;
        }
        let rest: Vec<f64> = set_variances.iter().map(|r| total - r[k]).collect();
        if rest.iter().any(|r| *r <= 0.0) {
            out.fallback[k] = true;
            for n in 0..n_bs {
                out.w[n][k] = if rest[n] <= 0.0 { 1.0 } else { 0.0 };
            }
            continue;
        }
        for n in 0..n_bs {
            // the denominator is re-summed rather than subtracted so that
            // e.g. [2, 1, 1] yields exactly [1, 1/3, 1/3]
            let others: f64 = (0..n_bs).filter(|&i| i != n).map(|i| set_variances[i][k]).sum();
            out.w[n][k] = set_variances[n][k] / others;
        }
    }
    Ok(out)
}

/// Inverse-variance weights `w_n = 1 / var_mc_n`. A zero variance is
/// replaced by the smallest positive one of that component (flagged); if
/// every variance is zero the weights are equal (flagged).
pub fn mcd_weights(variances: &BsMatrix) -> Result<CertaintyWeights> {
    let d = check_variances(variances)?;
    let n_bs = variances.len();
    let mut out = CertaintyWeights::equal(n_bs, d);
    for k in 0..d {
        let floor = variances
            .iter()
            .map(|r| r[k])
            .filter(|v| *v > 0.0)
            .fold(f64::INFINITY, f64::min);
        if floor.is_infinite() {
            out.fallback[k] = true;
            continue;
        }
        for n in 0..n_bs {
            let mut v = variances[n][k];
            if v == 0.0 {
                out.fallback[k] = true;
                v = floor;
            }
            out.w[n][k] = 1.0 / v;
        }
    }
    Ok(out)
}
