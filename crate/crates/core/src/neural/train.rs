use rand::seq::SliceRandom;

use super::network::{batch_loss, Workspace};
use super::params::{LabelScaler, ModelParams, Weights};
use super::real::Real;
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    /// Adaptive moment estimation with bias correction.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl TrainConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            batch_size: 32,
            epochs: 150,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            seed,
        }
    }

    pub fn paper(seed: u64) -> Self {
        Self {
            batch_size: 64,
            epochs: 1000,
            ..Self::desk(seed)
        }
    }
}

/// Inputs flattened to binary32 with their position labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub input_len: usize,
    pub outputs: usize,
    pub inputs: Vec<f32>,
    pub labels: Vec<f64>,
}

impl LabeledSet {
    pub fn new(input_len: usize, outputs: usize) -> Self {
        Self {
            input_len,
            outputs,
            inputs: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, fp: &Fingerprint, label: &[f64]) -> Result<()> {
        if fp.data().len() != self.input_len || label.len() != self.outputs {
            return Err(Error::Shape(format!(
                "sample of {} values / {} labels, expected {} / {}",
                fp.data().len(),
                label.len(),
                self.input_len,
                self.outputs
            )));
        }
        self.inputs.extend(fp.data().iter().map(|v| *v as f32));
        self.labels.extend_from_slice(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len() / self.outputs.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ModelParams<f32>,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

struct Adam<T> {
    m: Weights<T>,
    v: Weights<T>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<T: Real> Adam<T> {
    fn new(like: &Weights<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let mut m = like.clone();
        m.fill(T::zero());
        Self {
            v: m.clone(),
            m,
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    fn step(&mut self, params: &mut Weights<T>, grads: &Weights<T>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2) = (T::from_real(self.beta1), T::from_real(self.beta2));
        let (one_b1, one_b2) = (T::from_real(1.0 - self.beta1), T::from_real(1.0 - self.beta2));
        let step = T::from_real(lr * c2.sqrt() / c1);
        let eps = T::from_real(self.eps * c2.sqrt());
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                p[i] = p[i] - step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

/// Train a network from a seeded initialisation. Shuffling, initialisation
/// and dropout masks all derive from `cfg.seed`, so equal inputs give
/// bit-identical parameters.
pub fn train(spec: &ModelSpec, data: &LabeledSet, cfg: &TrainConfig) -> Result<Trained> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    if data.input_len != spec.input_len() || data.outputs != spec.outputs {
        return Err(Error::Shape(format!(
            "training data has {} inputs / {} outputs, spec expects {} / {}",
            data.input_len,
            data.outputs,
            spec.input_len(),
            spec.outputs
        )));
    }
    let scaler = LabelScaler::<f32>::fit(&data.labels, spec.outputs);
    let mut params = ModelParams::<f32>::init(spec, seed::derive(cfg.seed, &[stream::MODEL]), scaler)?;
    let mut ws = Workspace::<f32>::new(spec)?;
    let mut grads = Weights::<f32>::zeros_like(spec)?;
    let Optimizer::Adam { beta1, beta2, eps } = cfg.optimizer;
    let mut adam = Adam::new(&params.weights, beta1, beta2, eps);

    let n = data.len();
    let d = spec.outputs;
    let in_len = data.input_len;
    let mut order: Vec<usize> = (0..n).collect();
    let mut inputs = Vec::with_capacity(cfg.batch_size * in_len);
    let mut labels = Vec::with_capacity(cfg.batch_size * d);
    let mut row_seeds = Vec::with_capacity(cfg.batch_size);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = seed::rng(seed::derive(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            inputs.clear();
            labels.clear();
            row_seeds.clear();
            for (r, &i) in chunk.iter().enumerate() {
                inputs.extend_from_slice(&data.inputs[i * in_len..(i + 1) * in_len]);
                labels.extend_from_slice(&data.labels[i * d..(i + 1) * d]);
                row_seeds.push(seed::derive(
                    cfg.seed,
                    &[stream::DROPOUT, epoch as u64, bi as u64, r as u64],
                ));
            }
            let raw = ws.forward(&params.weights, &inputs, chunk.len(), Some(&row_seeds))?;
            let (loss, d_raw) = batch_loss(raw, &labels, &params.scaler);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            total += loss * chunk.len() as f64;
            ws.backward(&params.weights, &d_raw, &mut grads);
            adam.step(&mut params.weights, &grads, cfg.learning_rate);
        }
        epoch_losses.push(total / n as f64);
    }
    Ok(Trained {
        params,
        epoch_losses,
    })
}
