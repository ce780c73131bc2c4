//! Quick built-in checks: gradient fidelity and closed-form oracles.

use std::io::Write;

use crate::channel::los_blockage_prob;
use crate::config::ScenarioConfig;
use crate::error::Result;
use crate::fingerprint::Fingerprint;
use crate::fusion::weighted_average;
use crate::harness::{build_dataset, dataset_from_bytes, dataset_to_bytes};
use crate::neural::{grad_check, grad_check_with, heteroscedastic_loss, LabelScaler, ModelParams, ModelSpec, PositionEstimate};
use crate::uncertainty::{de_weights, mcd_from_passes};

fn sample(spec: &ModelSpec) -> Result<Fingerprint> {
    let data = (0..spec.input_len()).map(|i| ((i * 37 % 101) as f64) / 101.0).collect();
    Fingerprint::new(spec.input_rows, spec.input_cols, data, 0)
}

/// Run every check, writing one line each. Returns whether all passed.
pub fn run(out: &mut impl Write) -> Result<bool> {
    let mut all = true;
    let mut report = |name: &str, ok: bool, detail: String| -> Result<()> {
        all &= ok;
        writeln!(out, "{} {name}: {detail}", if ok { "ok  " } else { "FAIL" })?;
        Ok(())
    };

    let linear = ModelSpec::linear(3, 4);
    let r = grad_check(&linear, &sample(&linear)?, &[0.3, -0.7], 1e-4, 1, usize::MAX)?;
    report("gradient, linear spec", r.max_rel_error < 1e-9, format!("max rel error {:.2e}", r.max_rel_error))?;

    let toy = ModelSpec::toy();
    let r = grad_check(&toy, &sample(&toy)?, &[1.5, -0.5], 1e-5, 3, usize::MAX)?;
    report("gradient, toy spec", r.max_rel_error < 1e-4, format!("max rel error {:.2e}", r.max_rel_error))?;

    let params = ModelParams::<f64>::init(&toy, 3, LabelScaler::identity(2))?;
    let r = grad_check_with(&params, &sample(&toy)?, &[1.5, -0.5], 1e-5, 3, usize::MAX, |g| {
        if let Some(l) = g.layers.first_mut() {
            l.w[0] += 0.5;
        }
    })?;
    report("gradient, corrupted", r.max_rel_error > 1e-2, format!("max rel error {:.2e}", r.max_rel_error))?;

    let p10 = los_blockage_prob(10.0)?;
    let p100 = los_blockage_prob(100.0)?;
    report(
        "blockage probability",
        los_blockage_prob(0.0)? == 0.0 && (p10 - 0.05).abs() < 1e-15 && (p100 - (1.0 - 0.95f64.powi(10))).abs() < 1e-15,
        format!("p(10) = {p10:.6}, p(100) = {p100:.6}"),
    )?;

    let est = PositionEstimate {
        p_hat: vec![1.0, 1.0],
        s: vec![0.0, 0.0],
    };
    let l = heteroscedastic_loss(&[0.0, 0.0], &est);
    report("heteroscedastic loss", l == 0.5, format!("{l}"))?;

    let passes = [
        PositionEstimate { p_hat: vec![1.0], s: vec![0.5f64.ln()] },
        PositionEstimate { p_hat: vec![3.0], s: vec![0.5f64.ln()] },
    ];
    let v = mcd_from_passes(&passes)?.var_mc[0];
    report("MC-dropout variance", (v - 1.5).abs() < 1e-12, format!("{v}"))?;

    let w = de_weights(&vec![vec![2.0], vec![1.0], vec![1.0]])?;
    report(
        "ensemble weights",
        w.w == vec![vec![1.0], vec![1.0 / 3.0], vec![1.0 / 3.0]],
        format!("{:?}", w.w.iter().map(|r| r[0]).collect::<Vec<_>>()),
    )?;

    let f = weighted_average(&vec![vec![0.0], vec![10.0]], &vec![vec![1.0], vec![3.0]])?;
    report("weighted average", f == vec![7.5], format!("{}", f[0]))?;

    let mut cfg = ScenarioConfig::desk();
    cfg.n_rx = 4;
    cfg.sc_stride = 128;
    let ds = build_dataset(&cfg, 12, 1)?;
    let bytes = dataset_to_bytes(&ds);
    let ok = dataset_from_bytes(&bytes).map(|b| dataset_to_bytes(&b) == bytes)?;
    report("dataset round trip", ok, format!("{} bytes", bytes.len()))?;

    Ok(all)
}

#[cfg(test)]
mod tests {
    #[test]
    fn selftest_passes() {
        let mut out = Vec::new();
        assert!(super::run(&mut out).unwrap(), "{}", String::from_utf8_lossy(&out));
    }
}
