//! Convolutional position regressor with a log-variance head.
//!
//! The network maps a normalised fingerprint to `[p, s]`, a position and the
//! per-component log-variance `s = ln(sigma^2)` of that position, and is
//! trained on the heteroscedastic loss
//! `(1/2D) sum_d [exp(-s_d) (p_d - p^_d)^2 + s_d]`.

mod gradcheck;
mod io;
mod network;
mod params;
pub(crate) mod real;
mod spec;
mod train;

pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use io::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use network::soft_exp;
pub use params::{LabelScaler, Layer, ModelParams, Weights};
pub use real::Real;
pub use spec::{ConvShape, ConvSpec, Layout, ModelSpec};
pub use train::{train, LabeledSet, Optimizer, TrainConfig, Trained};

use network::{batch_loss, decode, Workspace};

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;

/// Dropout behaviour of a pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    /// Dropout off.
    Eval,
    /// Dropout kept on at inference, same probability as in training.
    McDropout,
}

impl Mode {
    fn stochastic(self) -> bool {
        !matches!(self, Mode::Eval)
    }
}

/// A position in meters with its per-component log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionEstimate {
    pub p_hat: Vec<f64>,
    pub s: Vec<f64>,
}

impl PositionEstimate {
    /// Aleatoric variance `exp(s)` per component.
    pub fn variance(&self) -> Vec<f64> {
        self.s.iter().map(|s| soft_exp(*s)).collect()
    }
}

/// `(1/2D) sum_d [exp(-s_d) (p_d - p^_d)^2 + s_d]`.
pub fn heteroscedastic_loss(label: &[f64], est: &PositionEstimate) -> f64 {
    let d = label.len();
    let sum: f64 = label
        .iter()
        .zip(&est.p_hat)
        .zip(&est.s)
        .map(|((p, q), s)| soft_exp(-s) * (p - q).powi(2) + s)
        .sum();
    sum / (2.0 * d as f64)
}

fn check_input<T: Real>(params: &ModelParams<T>, input: &Fingerprint) -> Result<()> {
    let spec = &params.spec;
    if input.shape() != (spec.input_rows, spec.input_cols, spec.input_channels) {
        return Err(Error::Shape(format!(
            "fingerprint {:?} does not match model input {:?}",
            input.shape(),
            (spec.input_rows, spec.input_cols, spec.input_channels)
        )));
    }
    Ok(())
}

/// One forward pass. In `Train` and `McDropout` modes the dropout masks are
/// drawn from `seed`; `Eval` ignores it.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    input: &Fingerprint,
    mode: Mode,
    seed: u64,
) -> Result<PositionEstimate> {
    Ok(predict(params, &[input], mode, &[seed])?.remove(0))
}

/// Batched [`forward`]: sample `i` uses `seeds[i]` for its dropout masks.
pub fn predict<T: Real>(
    params: &ModelParams<T>,
    inputs: &[&Fingerprint],
    mode: Mode,
    seeds: &[u64],
) -> Result<Vec<PositionEstimate>> {
    const CHUNK: usize = 256;
    if mode.stochastic() && seeds.len() != inputs.len() {
        return Err(Error::Shape(format!(
            "{} seeds for {} inputs",
            seeds.len(),
            inputs.len()
        )));
    }
    let mut ws = Workspace::<T>::new(&params.spec)?;
    let width = params.spec.head_width();
    let mut out = Vec::with_capacity(inputs.len());
    let mut buf = Vec::new();
    for (c, chunk) in inputs.chunks(CHUNK).enumerate() {
        buf.clear();
        for fp in chunk {
            check_input(params, fp)?;
            buf.extend(fp.data().iter().map(|v| T::from_real(*v)));
        }
        let row_seeds = mode
            .stochastic()
            .then(|| &seeds[c * CHUNK..c * CHUNK + chunk.len()]);
        let raw = ws.forward(&params.weights, &buf, chunk.len(), row_seeds)?;
        for row in raw.chunks_exact(width) {
            let (p_hat, s) = decode(row, &params.scaler);
            out.push(PositionEstimate { p_hat, s });
        }
    }
    Ok(out)
}

/// Loss and exact parameter gradient for one labelled sample. Forward and
/// backward share the dropout masks drawn from `seed`.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    input: &Fingerprint,
    label: &[f64],
    mode: Mode,
    seed: u64,
) -> Result<(f64, Weights<T>)> {
    check_input(params, input)?;
    if label.len() != params.spec.outputs {
        return Err(Error::Shape("label dimension differs from model outputs".into()));
    }
    let mut ws = Workspace::<T>::new(&params.spec)?;
    let x: Vec<T> = input.data().iter().map(|v| T::from_real(*v)).collect();
    let seeds = [seed];
    let raw = ws.forward(&params.weights, &x, 1, mode.stochastic().then_some(&seeds[..]))?;
    let (loss, d_raw) = batch_loss(raw, label, &params.scaler);
    let mut grads = Weights::zeros_like(&params.spec)?;
    ws.backward(&params.weights, &d_raw, &mut grads);
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(spec: &ModelSpec, phase: f64) -> Fingerprint {
        let data = (0..spec.input_len())
            .map(|i| 0.5 + 0.5 * (0.37 * i as f64 + phase).sin())
            .collect();
        Fingerprint::new(spec.input_rows, spec.input_cols, data, 0).unwrap()
    }

    #[test]
    fn loss_hand_values() {
        let est = PositionEstimate {
            p_hat: vec![1.0, 1.0],
            s: vec![0.0, 0.0],
        };
        assert_eq!(heteroscedastic_loss(&[0.0, 0.0], &est), 0.5);
        assert_eq!(heteroscedastic_loss(&[1.0, 1.0], &est), 0.0);
        // can go negative
        let confident = PositionEstimate {
            p_hat: vec![0.0, 0.0],
            s: vec![-3.0, -3.0],
        };
        assert!(heteroscedastic_loss(&[0.0, 0.0], &confident) < 0.0);
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let spec = ModelSpec::standard(8, 32);
        let params = ModelParams::<f32>::zeros(&spec).unwrap();
        let est = forward(&params, &input(&spec, 0.0), Mode::Eval, 0).unwrap();
        assert_eq!(est.p_hat, vec![0.0, 0.0]);
        assert_eq!(est.s, vec![0.0, 0.0]);
    }

    #[test]
    fn eval_is_deterministic_and_mc_without_dropout_matches_eval() {
        let spec = ModelSpec::standard(8, 32);
        let params = ModelParams::<f32>::init(&spec, 2, LabelScaler::identity(2)).unwrap();
        let x = input(&spec, 0.3);
        let a = forward(&params, &x, Mode::Eval, 1).unwrap();
        assert_eq!(a, forward(&params, &x, Mode::Eval, 2).unwrap());
        let mc = forward(&params, &x, Mode::McDropout, 5).unwrap();
        assert_ne!(a, mc);
        assert_eq!(mc, forward(&params, &x, Mode::McDropout, 5).unwrap());

        let no_drop = ModelParams::<f32>::init(&spec.clone().with_dropout(0.0), 2, LabelScaler::identity(2)).unwrap();
        assert_eq!(
            forward(&no_drop, &x, Mode::Eval, 0).unwrap(),
            forward(&no_drop, &x, Mode::McDropout, 77).unwrap()
        );
    }

    #[test]
    fn batched_predict_matches_single_passes() {
        let spec = ModelSpec::standard(8, 32);
        let params = ModelParams::<f32>::init(&spec, 4, LabelScaler::identity(2)).unwrap();
        let xs: Vec<Fingerprint> = (0..5).map(|i| input(&spec, i as f64)).collect();
        let refs: Vec<&Fingerprint> = xs.iter().collect();
        let seeds = [10, 11, 12, 13, 14];
        let batch = predict(&params, &refs, Mode::McDropout, &seeds).unwrap();
        for (i, x) in xs.iter().enumerate() {
            let one = forward(&params, x, Mode::McDropout, seeds[i]).unwrap();
            for k in 0..2 {
                assert!((one.p_hat[k] - batch[i].p_hat[k]).abs() < 1e-5);
                assert!((one.s[k] - batch[i].s[k]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let params = ModelParams::<f32>::zeros(&ModelSpec::standard(8, 32)).unwrap();
        let wrong = input(&ModelSpec::standard(16, 32), 0.0);
        assert!(matches!(forward(&params, &wrong, Mode::Eval, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_residual_gradient_at_s_zero() {
        // all-zero weights: p^ = 0, s = 0, so a zero label gives zero residual
        let spec = ModelSpec::toy().with_dropout(0.0);
        let params = ModelParams::<f64>::zeros(&spec).unwrap();
        let (loss, g) = backward(&params, &input(&spec, 1.0), &[0.0, 0.0], Mode::Eval, 0).unwrap();
        assert_eq!(loss, 0.0);
        let head = g.layers.last().unwrap();
        let d = spec.outputs;
        for row in head.w.chunks(2 * d) {
            assert!(row[..d].iter().all(|v| *v == 0.0));
        }
        assert!(head.b[..d].iter().all(|v| *v == 0.0));
        for v in &head.b[d..] {
            assert!((v - 1.0 / (2.0 * d as f64)).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_is_half_mse_at_zero_log_variance() {
        let est = PositionEstimate {
            p_hat: vec![3.0, -1.0],
            s: vec![0.0, 0.0],
        };
        let label = [1.0, 2.0];
        let mse = ((3.0f64 - 1.0).powi(2) + (-1.0f64 - 2.0).powi(2)) / 2.0;
        assert_eq!(heteroscedastic_loss(&label, &est), 0.5 * mse);
    }
}
