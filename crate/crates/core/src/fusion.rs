//! Early and late fusion of the stations' views into one position.

use std::fmt;
use std::str::FromStr;

use crate::channel::CsiMatrix;
use crate::error::{Error, Result};
use crate::fingerprint::{apply_norm, concat_early, preprocess, Fingerprint, NormStats};
use crate::neural::{forward, Mode, ModelParams, PositionEstimate};
use crate::uncertainty::{
    de_set_variances, de_weights, mcd_predict, mcd_weights, BsMatrix, CertaintyWeights,
    EnsembleInputs, McdResult, DEFAULT_MC_PASSES,
};

/// `p_d = sum_n w_dn p_dn / sum_n w_dn` per component.
pub fn weighted_average(estimates: &BsMatrix, weights: &BsMatrix) -> Result<Vec<f64>> {
    let d = estimates.first().map_or(0, Vec::len);
    if estimates.is_empty()
        || weights.len() != estimates.len()
        || estimates.iter().chain(weights).any(|r| r.len() != d)
    {
        return Err(Error::Shape("estimates and weights must both be n_bs x D".into()));
    }
    let mut out = Vec::with_capacity(d);
    for k in 0..d {
        let mut num = 0.0;
        let mut den = 0.0;
        for (e, w) in estimates.iter().zip(weights) {
            if !(w[k] >= 0.0) {
                return Err(Error::Domain(format!("negative or NaN weight {}", w[k])));
            }
            num += w[k] * e[k];
            den += w[k];
        }
        if den <= 0.0 {
            return Err(Error::Domain(format!("all weights of component {k} are zero")));
        }
        // clamp the rounding of the ratio back into the estimates' hull
        let (lo, hi) = estimates
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e[k]), hi.max(e[k])));
        out.push((num / den).clamp(lo, hi));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionStrategy {
    /// One model on the concatenated fingerprints of all stations.
    Early,
    /// Plain average of the per-station estimates.
    LateEqual,
    /// Inverse MC-dropout variance weighting of the MC mean estimates.
    LateMcd { t_passes: usize },
    /// Leave-one-out ensemble weighting; needs at least 3 stations.
    LateDe,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 4] = [
        FusionStrategy::Early,
        FusionStrategy::LateEqual,
        FusionStrategy::LateMcd {
            t_passes: DEFAULT_MC_PASSES,
        },
        FusionStrategy::LateDe,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FusionStrategy::Early => "early",
            FusionStrategy::LateEqual => "late-equal",
            FusionStrategy::LateMcd { .. } => "late-mcd",
            FusionStrategy::LateDe => "late-de",
        }
    }

    pub fn is_late(&self) -> bool {
        !matches!(self, FusionStrategy::Early)
    }

    pub fn min_bs(&self) -> usize {
        match self {
            FusionStrategy::LateDe => 3,
            _ => 1,
        }
    }

    pub fn validate(&self, n_bs: usize) -> Result<()> {
        if let FusionStrategy::LateMcd { t_passes: 0 } = self {
            return Err(Error::InvalidArgument("late-mcd needs t_passes >= 1".into()));
        }
        if n_bs < self.min_bs() {
            return Err(Error::InvalidArgument(format!(
                "{} needs at least {} stations, got {n_bs}",
                self.name(),
                self.min_bs()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    /// Accepts the names of [`FusionStrategy::name`]; `late-mcd:T` sets the
    /// number of passes.
    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let strategy = match (head, arg) {
            ("early", None) => FusionStrategy::Early,
            ("late-equal", None) => FusionStrategy::LateEqual,
            ("late-de", None) => FusionStrategy::LateDe,
            ("late-mcd", None) => FusionStrategy::LateMcd {
                t_passes: DEFAULT_MC_PASSES,
            },
            ("late-mcd", Some(t)) => FusionStrategy::LateMcd {
                t_passes: t
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad pass count {t:?}")))?,
            },
            _ => return Err(Error::InvalidArgument(format!("unknown strategy {s:?}"))),
        };
        Ok(strategy)
    }
}

/// A trained model together with the normalisation of its inputs.
#[derive(Debug, Clone)]
pub struct NormalizedModel {
    pub params: ModelParams<f32>,
    pub norm: Vec<NormStats>,
}

/// Per-station models, and optionally an early-fusion model whose input is
/// the concatenation of all stations' fingerprints (one [`NormStats`] per
/// stacked block).
#[derive(Debug, Clone)]
pub struct BsModelBank {
    pub per_bs: Vec<NormalizedModel>,
    pub early: Option<NormalizedModel>,
}

impl BsModelBank {
    pub fn n_bs(&self) -> usize {
        self.per_bs.len()
    }

    fn check_csi(&self, csi_per_bs: &[CsiMatrix]) -> Result<()> {
        if csi_per_bs.len() != self.n_bs() {
            return Err(Error::Shape(format!(
                "{} CSI matrices for {} stations",
                csi_per_bs.len(),
                self.n_bs()
            )));
        }
        Ok(())
    }

    /// Normalised fingerprint of station `n`.
    pub fn fingerprint(&self, n: usize, csi: &CsiMatrix) -> Result<Fingerprint> {
        let mut fp = apply_norm(&preprocess(csi)?, &self.per_bs[n].norm[0]);
        fp.source_bs = n;
        Ok(fp)
    }
}

/// What one station contributes to late fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct BsPrediction {
    pub eval: PositionEstimate,
    /// Present when MC-dropout weighting is requested.
    pub mcd: Option<McdResult>,
}

/// Per-station detail of one late-fusion decision, all `[bs][component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LateDiagnostics {
    /// The estimates that entered the weighted average.
    pub estimates: BsMatrix,
    pub aleatoric: BsMatrix,
    /// The variance the weights were derived from: MC variance, the
    /// leave-one-out set variance, or the aleatoric variance for equal
    /// weighting.
    pub uncertainty: BsMatrix,
    pub weights: CertaintyWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub position: Vec<f64>,
    pub diagnostics: LateDiagnostics,
}

/// Apply a late strategy to the stations' predictions.
pub fn combine(strategy: FusionStrategy, preds: &[BsPrediction]) -> Result<Fused> {
    if !strategy.is_late() {
        return Err(Error::InvalidArgument("early fusion has no per-station combination".into()));
    }
    strategy.validate(preds.len())?;
    let eval: Vec<PositionEstimate> = preds.iter().map(|p| p.eval.clone()).collect();
    let ens = EnsembleInputs::from_estimates(&eval);
    let d = ens.p_hat.first().map_or(0, Vec::len);
    let (estimates, aleatoric, uncertainty, weights) = match strategy {
        FusionStrategy::LateEqual => (
            ens.p_hat.clone(),
            ens.aleatoric.clone(),
            ens.aleatoric.clone(),
            CertaintyWeights::equal(preds.len(), d),
        ),
        FusionStrategy::LateMcd { .. } => {
            let mcd: Vec<&McdResult> = preds
                .iter()
                .map(|p| p.mcd.as_ref())
                .collect::<Option<_>>()
                .ok_or_else(|| Error::InvalidArgument("late-mcd needs MC results for every station".into()))?;
            let var: BsMatrix = mcd.iter().map(|m| m.var_mc.clone()).collect();
            (
                mcd.iter().map(|m| m.mean_p.clone()).collect(),
                mcd.iter().map(|m| m.aleatoric.clone()).collect(),
                var.clone(),
                mcd_weights(&var)?,
            )
        }
        FusionStrategy::LateDe => {
            let set_var = de_set_variances(&ens)?;
            let w = de_weights(&set_var)?;
            (ens.p_hat.clone(), ens.aleatoric.clone(), set_var, w)
        }
        FusionStrategy::Early => unreachable!(),
    };
    let position = weighted_average(&estimates, &weights.w)?;
    Ok(Fused {
        position,
        diagnostics: LateDiagnostics {
            estimates,
            aleatoric,
            uncertainty,
            weights,
        },
    })
}

/// Late fusion of one observation: every station's CSI goes through its own
/// preprocessing, normalisation and model; `seed` drives the MC passes.
pub fn fuse_late(
    bank: &BsModelBank,
    csi_per_bs: &[CsiMatrix],
    strategy: FusionStrategy,
    seed: u64,
) -> Result<Fused> {
    bank.check_csi(csi_per_bs)?;
    strategy.validate(bank.n_bs())?;
    let mut preds = Vec::with_capacity(bank.n_bs());
    for (n, csi) in csi_per_bs.iter().enumerate() {
        let fp = bank.fingerprint(n, csi)?;
        let model = &bank.per_bs[n].params;
        let mcd = match strategy {
            FusionStrategy::LateMcd { t_passes } => Some(mcd_predict(
                model,
                &fp,
                t_passes,
                crate::seed::derive(seed, &[n as u64]),
            )?),
            _ => None,
        };
        preds.push(BsPrediction {
            eval: forward(model, &fp, Mode::Eval, 0)?,
            mcd,
        });
    }
    combine(strategy, &preds)
}

/// Concatenate the stations' fingerprints (each normalised with its block's
/// statistics) and run the early model in eval mode. Returns the position
/// and its aleatoric variance.
pub fn fuse_early(bank: &BsModelBank, csi_per_bs: &[CsiMatrix]) -> Result<(Vec<f64>, Vec<f64>)> {
    bank.check_csi(csi_per_bs)?;
    let early = bank
        .early
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("model bank has no early-fusion model".into()))?;
    let fp = early_fingerprint(&early.norm, csi_per_bs)?;
    let est = forward(&early.params, &fp, Mode::Eval, 0)?;
    let var = est.variance();
    Ok((est.p_hat, var))
}

/// Early-fusion input: per-station fingerprints normalised block by block
/// and stacked along the antenna axis.
pub fn early_fingerprint(norm: &[NormStats], csi_per_bs: &[CsiMatrix]) -> Result<Fingerprint> {
    if norm.len() != csi_per_bs.len() {
        return Err(Error::Shape(format!(
            "{} normalisation blocks for {} stations",
            norm.len(),
            csi_per_bs.len()
        )));
    }
    let fps = csi_per_bs
        .iter()
        .zip(norm)
        .map(|(csi, st)| Ok(apply_norm(&preprocess(csi)?, st)))
        .collect::<Result<Vec<_>>>()?;
    concat_early(&fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{LabelScaler, ModelSpec};
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn col(v: &[f64]) -> BsMatrix {
        v.iter().map(|x| vec![*x]).collect()
    }

    fn pred(p: &[f64], var: &[f64]) -> BsPrediction {
        BsPrediction {
            eval: PositionEstimate {
                p_hat: p.to_vec(),
                s: var.iter().map(|v| v.ln()).collect(),
            },
            mcd: None,
        }
    }

    #[test]
    fn weighted_average_hand_values() {
        assert_eq!(weighted_average(&col(&[0.0, 10.0]), &col(&[1.0, 3.0])).unwrap(), vec![7.5]);
        assert_eq!(weighted_average(&col(&[2.0, 4.0, 9.0]), &col(&[1.0; 3])).unwrap(), vec![5.0]);
        assert_eq!(weighted_average(&col(&[2.0, 4.0, 9.0]), &col(&[0.0, 1.0, 0.0])).unwrap(), vec![4.0]);
        assert!(matches!(
            weighted_average(&col(&[1.0, 2.0]), &col(&[0.0, 0.0])),
            Err(Error::Domain(_))
        ));
        assert!(weighted_average(&col(&[1.0, 2.0]), &col(&[1.0])).is_err());
    }

    #[test]
    fn late_equal_averages() {
        let f = combine(FusionStrategy::LateEqual, &[pred(&[0.0, 0.0], &[1.0, 1.0]), pred(&[2.0, 2.0], &[1.0, 1.0])]).unwrap();
        assert_eq!(f.position, vec![1.0, 1.0]);
    }

    #[test]
    fn late_de_matches_hand_evaluation() {
        // estimates 0, 3, 6 with aleatoric 1, 1, 4 on one component
        let preds = [pred(&[0.0], &[1.0]), pred(&[3.0], &[1.0]), pred(&[6.0], &[4.0])];
        // S_0 = {3, 6}: spread 2.25 + aleatoric 2.5 = 4.75
        // S_1 = {0, 6}: 9 + 2.5 = 11.5
        // S_2 = {0, 3}: 2.25 + 1 = 3.25
        let (v0, v1, v2) = (4.75, 11.5, 3.25);
        let w = [v0 / (v1 + v2), v1 / (v0 + v2), v2 / (v0 + v1)];
        let expected = (w[0] * 0.0 + w[1] * 3.0 + w[2] * 6.0) / (w[0] + w[1] + w[2]);
        let f = combine(FusionStrategy::LateDe, &preds).unwrap();
        assert!((f.diagnostics.uncertainty[1][0] - v1).abs() < 1e-12);
        assert!((f.position[0] - expected).abs() < 1e-12);
        assert!(combine(FusionStrategy::LateDe, &preds[..2]).is_err());
    }

    #[test]
    fn late_mcd_uses_mc_means() {
        let mut a = pred(&[0.0], &[1.0]);
        let mut b = pred(&[9.0], &[1.0]);
        a.mcd = Some(McdResult { mean_p: vec![1.0], var_mc: vec![1.0], aleatoric: vec![0.5], t_passes: 5 });
        b.mcd = Some(McdResult { mean_p: vec![5.0], var_mc: vec![3.0], aleatoric: vec![0.5], t_passes: 5 });
        let f = combine(FusionStrategy::LateMcd { t_passes: 5 }, &[a.clone(), b]).unwrap();
        assert!((f.position[0] - (1.0 + 5.0 / 3.0) / (1.0 + 1.0 / 3.0)).abs() < 1e-12);
        assert!(combine(FusionStrategy::LateMcd { t_passes: 5 }, &[a, pred(&[1.0], &[1.0])]).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in FusionStrategy::ALL {
            assert_eq!(s.name().parse::<FusionStrategy>().unwrap(), s);
        }
        assert_eq!("late-mcd:7".parse::<FusionStrategy>().unwrap(), FusionStrategy::LateMcd { t_passes: 7 });
        assert!("late-median".parse::<FusionStrategy>().is_err());
        assert!(FusionStrategy::LateMcd { t_passes: 0 }.validate(4).is_err());
    }

    fn bank(n_bs: usize) -> (BsModelBank, Vec<CsiMatrix>) {
        let spec = ModelSpec::standard(4, 8).with_dropout(0.2);
        let spec = ModelSpec { conv: vec![spec.conv[0]], pool_cols: 2, dense: vec![8], ..spec };
        let params = ModelParams::<f32>::init(&spec, 5, LabelScaler::identity(2)).unwrap();
        let csi = CsiMatrix::from_entries(
            8,
            4,
            (0..32).map(|i| Complex64::from_polar(1.0 + (i % 5) as f64, 0.3 * i as f64)).collect(),
        )
        .unwrap();
        let norm = crate::fingerprint::fit_norm([&preprocess(&csi).unwrap()]).unwrap();
        let model = NormalizedModel { params, norm: vec![norm] };
        let early_spec = ModelSpec { input_rows: 4 * n_bs, ..spec };
        let early = NormalizedModel {
            params: ModelParams::init(&early_spec, 6, LabelScaler::identity(2)).unwrap(),
            norm: vec![norm; n_bs],
        };
        (
            BsModelBank {
                per_bs: vec![model; n_bs],
                early: Some(early),
            },
            vec![csi; n_bs],
        )
    }

    #[test]
    fn identical_stations_fuse_to_the_single_estimate() {
        let (bank, csi) = bank(3);
        let single = forward(&bank.per_bs[0].params, &bank.fingerprint(0, &csi[0]).unwrap(), Mode::Eval, 0).unwrap();
        for s in [FusionStrategy::LateEqual, FusionStrategy::LateDe] {
            let f = fuse_late(&bank, &csi, s, 1).unwrap();
            for k in 0..2 {
                assert!((f.position[k] - single.p_hat[k]).abs() < 1e-12, "{s}");
            }
        }
        // each station gets its own MC seed, but identical stations with a
        // shared seed agree exactly
        let f = fuse_late(&bank, &csi, FusionStrategy::LateMcd { t_passes: 8 }, 1).unwrap();
        let est = &f.diagnostics.estimates;
        for k in 0..2 {
            let lo = est.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
            let hi = est.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
            assert!((lo..=hi).contains(&f.position[k]));
        }
    }

    #[test]
    fn early_fusion_is_deterministic_and_needs_a_model() {
        let (mut bank, csi) = bank(2);
        let a = fuse_early(&bank, &csi).unwrap();
        assert_eq!(a, fuse_early(&bank, &csi).unwrap());
        assert!(a.1.iter().all(|v| *v > 0.0));
        assert!(fuse_early(&bank, &csi[..1]).is_err());
        bank.early = None;
        assert!(fuse_early(&bank, &csi).is_err());
    }

    #[test]
    fn early_fusion_of_one_station_is_the_single_prediction() {
        let (mut bank, csi) = bank(1);
        bank.early = Some(bank.per_bs[0].clone());
        let (p, _) = fuse_early(&bank, &csi).unwrap();
        let single = forward(&bank.per_bs[0].params, &bank.fingerprint(0, &csi[0]).unwrap(), Mode::Eval, 0).unwrap();
        assert_eq!(p, single.p_hat);
    }

    proptest! {
        #[test]
        fn fusion_is_convex_scale_invariant_and_monotone(
            rows in prop::collection::vec((-100.0f64..100.0, 0.01f64..10.0), 2..8),
            c in 0.001f64..1000.0,
            pick in 0usize..8,
            bump in 0.0f64..10.0,
        ) {
            let e: BsMatrix = rows.iter().map(|r| vec![r.0]).collect();
            let w: BsMatrix = rows.iter().map(|r| vec![r.1]).collect();
            let p = weighted_average(&e, &w).unwrap()[0];
            let lo = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= p && p <= hi);

            let scaled: BsMatrix = w.iter().map(|r| vec![r[0] * c]).collect();
            let q = weighted_average(&e, &scaled).unwrap()[0];
            prop_assert!((p - q).abs() <= 1e-9 * (1.0 + p.abs()));

            let n = pick % rows.len();
            let mut more = w.clone();
            more[n][0] += bump;
            let r = weighted_average(&e, &more).unwrap()[0];
            let target = e[n][0];
            prop_assert!((r - target).abs() <= (p - target).abs() + 1e-9 * (1.0 + p.abs()));
        }
    }
}
