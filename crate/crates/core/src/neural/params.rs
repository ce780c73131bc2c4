use rand::Rng;

use super::real::Real;
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// Weights and biases of one layer. Convolution weights are stored as a
/// `(kernel_rows * kernel_cols * in_ch) x kernels` matrix, dense weights as
/// `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
}

/// All trainable tensors, convolutions first, then dense layers, head last.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Weights<T> {
    pub fn zeros_like(spec: &ModelSpec) -> Result<Self> {
        let layout = spec.layout()?;
        let mut layers = Vec::new();
        for c in &layout.conv {
            layers.push(Layer {
                w: vec![T::zero(); c.patch_len() * c.out_ch],
                b: vec![T::zero(); c.out_ch],
            });
        }
        for &(fan_in, fan_out) in &layout.dense {
            layers.push(Layer {
                w: vec![T::zero(); fan_in * fan_out],
                b: vec![T::zero(); fan_out],
            });
        }
        Ok(Self { layers })
    }

    /// Tensors in declaration order: `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> impl Iterator<Item = &Vec<T>> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b])
    }

    pub fn len(&self) -> usize {
        self.tensors().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fill(&mut self, v: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = v);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> Weights<U> {
        Weights {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: l.w.iter().map(|v| U::from_real(v.to_real())).collect(),
                    b: l.b.iter().map(|v| U::from_real(v.to_real())).collect(),
                })
                .collect(),
        }
    }

    /// Flat view for finite-difference perturbation: `(tensor, index)`.
    pub(crate) fn get_flat(&self, mut i: usize) -> T {
        for t in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("flat parameter index out of range")
    }

    pub(crate) fn set_flat(&mut self, mut i: usize, v: T) {
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = v;
                return;
            }
            i -= t.len();
        }
        panic!("flat parameter index out of range")
    }
}

/// Fixed affine map from the head's normalised outputs to meters:
/// `p = shift + scale * p'` and `s = s' + 2 ln(scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelScaler<T> {
    pub shift: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Real> LabelScaler<T> {
    pub fn identity(d: usize) -> Self {
        Self {
            shift: vec![T::zero(); d],
            scale: vec![T::one(); d],
        }
    }

    /// Per-component mean and standard deviation of `labels` (rows of `d`).
    pub fn fit(labels: &[f64], d: usize) -> Self {
        let n = (labels.len() / d).max(1) as f64;
        let mut shift = vec![0.0; d];
        for row in labels.chunks_exact(d) {
            for (s, v) in shift.iter_mut().zip(row) {
                *s += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for row in labels.chunks_exact(d) {
            for k in 0..d {
                var[k] += (row[k] - shift[k]).powi(2) / n;
            }
        }
        Self {
            shift: shift.into_iter().map(T::from_real).collect(),
            scale: var
                .into_iter()
                .map(|v| T::from_real(if v > 0.0 { v.sqrt() } else { 1.0 }))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> LabelScaler<U> {
        LabelScaler {
            shift: self.shift.iter().map(|v| U::from_real(v.to_real())).collect(),
            scale: self.scale.iter().map(|v| U::from_real(v.to_real())).collect(),
        }
    }
}

/// A network's architecture, weights and output scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub spec: ModelSpec,
    pub weights: Weights<T>,
    pub scaler: LabelScaler<T>,
    pub init_seed: u64,
}

impl<T: Real> ModelParams<T> {
    /// Fan-in scaled uniform initialisation: `U(-sqrt(6/fan_in), +)` for
    /// ReLU layers, `U(-sqrt(3/fan_in), +)` for the linear head. Biases 0.
    pub fn init(spec: &ModelSpec, seed: u64, scaler: LabelScaler<T>) -> Result<Self> {
        if scaler.shift.len() != spec.outputs || scaler.scale.len() != spec.outputs {
            return Err(Error::Shape("label scaler does not match outputs".into()));
        }
        let mut weights = Weights::zeros_like(spec)?;
        let mut rng = seed::rng(seed::derive(seed, &[stream::INIT]));
        let n_layers = weights.layers.len();
        let layout = spec.layout()?;
        let fans: Vec<usize> = layout
            .conv
            .iter()
            .map(|c| c.patch_len())
            .chain(layout.dense.iter().map(|d| d.0))
            .collect();
        for (i, (layer, fan_in)) in weights.layers.iter_mut().zip(fans).enumerate() {
            let gain = if i + 1 == n_layers { 3.0 } else { 6.0 };
            let bound = (gain / fan_in as f64).sqrt();
            for w in layer.w.iter_mut() {
                *w = T::from_real(rng.random_range(-bound..bound));
            }
        }
        Ok(Self {
            spec: spec.clone(),
            weights,
            scaler,
            init_seed: seed,
        })
    }

    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        Ok(Self {
            spec: spec.clone(),
            weights: Weights::zeros_like(spec)?,
            scaler: LabelScaler::identity(spec.outputs),
            init_seed: 0,
        })
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            spec: self.spec.clone(),
            weights: self.weights.cast(),
            scaler: self.scaler.cast(),
            init_seed: self.init_seed,
        }
    }
}
