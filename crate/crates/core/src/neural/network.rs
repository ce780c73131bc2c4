//! Batched forward and reverse-mode passes.
//!
//! Activations are laid out sample-major, `rows x cols x channels` within a
//! sample. Convolutions run as im2col followed by one GEMM per layer.

use rand::Rng;

use super::params::{LabelScaler, Weights};
use super::real::{gemm, Real, View};
use super::spec::{ConvShape, Layout, ModelSpec};
use crate::error::{Error, Result};
use crate::seed;

/// `exp(x)` continued linearly above `x = 15`, so the precision term of the
/// loss cannot overflow while its gradient keeps the sign of the true one.
pub fn soft_exp(x: f64) -> f64 {
    const KNEE: f64 = 15.0;
    if x <= KNEE {
        x.exp()
    } else {
        KNEE.exp() * (1.0 + x - KNEE)
    }
}

fn soft_exp_deriv(x: f64) -> f64 {
    x.min(15.0).exp()
}

#[derive(Debug, Default)]
struct ConvBuf<T> {
    cols: Vec<T>,
    out: Vec<T>,
    pooled: Vec<T>,
    argmax: Vec<usize>,
}

#[derive(Debug, Default)]
struct DenseBuf<T> {
    /// Inverted-dropout multipliers, empty when dropout is off.
    mask: Vec<T>,
    /// Layer input after masking.
    x: Vec<T>,
    y: Vec<T>,
}

/// Reusable activation storage for one architecture.
#[derive(Debug)]
pub(crate) struct Workspace<T> {
    layout: Layout,
    dropout_p: f64,
    batch: usize,
    input: Vec<T>,
    conv: Vec<ConvBuf<T>>,
    dense: Vec<DenseBuf<T>>,
}

impl<T: Real> Workspace<T> {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let layout = spec.layout()?;
        let conv = layout.conv.iter().map(|_| ConvBuf::default()).collect();
        let dense = layout.dense.iter().map(|_| DenseBuf::default()).collect();
        Ok(Self {
            layout,
            dropout_p: spec.dropout_p,
            batch: 0,
            input: Vec::new(),
            conv,
            dense,
        })
    }

    pub fn input_len(&self) -> usize {
        match self.layout.conv.first() {
            Some(c) => c.in_len(),
            None => self.layout.dense[0].0,
        }
    }

    /// Forward pass over `batch` samples. `row_seeds` enables dropout with
    /// one mask stream per sample; `None` is evaluation mode.
    pub fn forward(
        &mut self,
        weights: &Weights<T>,
        input: &[T],
        batch: usize,
        row_seeds: Option<&[u64]>,
    ) -> Result<&[T]> {
        let in_len = self.input_len();
        if input.len() != batch * in_len {
            return Err(Error::Shape(format!(
                "input holds {} values, expected {batch} x {in_len}",
                input.len()
            )));
        }
        self.batch = batch;
        self.input.clear();
        self.input.extend_from_slice(input);
        self.sample_masks(row_seeds)?;

        let n_conv = self.layout.conv.len();
        for l in 0..n_conv {
            let shape = self.layout.conv[l];
            let layer = &weights.layers[l];
            let (before, rest) = self.conv.split_at_mut(l);
            let x = if l == 0 { &self.input } else { &before[l - 1].pooled };
            conv_forward(&shape, batch, x, &layer.w, &layer.b, &mut rest[0]);
        }

        let n_dense = self.layout.dense.len();
        for l in 0..n_dense {
            let (fan_in, fan_out) = self.layout.dense[l];
            let layer = &weights.layers[n_conv + l];
            let (before, rest) = self.dense.split_at_mut(l);
            let buf = &mut rest[0];
            let x: &[T] = if l > 0 {
                &before[l - 1].y
            } else if n_conv > 0 {
                &self.conv[n_conv - 1].pooled
            } else {
                &self.input
            };
            buf.x.clear();
            if buf.mask.is_empty() {
                buf.x.extend_from_slice(x);
            } else {
                buf.x.extend(x.iter().zip(&buf.mask).map(|(v, m)| *v * *m));
            }
            buf.y.clear();
            for _ in 0..batch {
                buf.y.extend_from_slice(&layer.b);
            }
            gemm(
                View::new(&buf.x, batch, fan_in),
                View::new(&layer.w, fan_in, fan_out),
                T::one(),
                &mut buf.y,
            );
            if l + 1 < n_dense {
                relu(&mut buf.y);
            }
        }
        Ok(&self.dense[n_dense - 1].y)
    }

    fn sample_masks(&mut self, row_seeds: Option<&[u64]>) -> Result<()> {
        let p = self.dropout_p;
        let seeds = match row_seeds {
            Some(s) if p > 0.0 => s,
            _ => {
                self.dense.iter_mut().for_each(|d| d.mask.clear());
                return Ok(());
            }
        };
        if seeds.len() != self.batch {
            return Err(Error::Shape(format!(
                "{} dropout seeds for a batch of {}",
                seeds.len(),
                self.batch
            )));
        }
        let keep = T::from_real(1.0 / (1.0 - p));
        for (l, buf) in self.dense.iter_mut().enumerate() {
            buf.mask.clear();
            buf.mask.resize(self.batch * self.layout.dense[l].0, T::zero());
        }
        for (r, &s) in seeds.iter().enumerate() {
            let mut rng = seed::rng(s);
            for (l, buf) in self.dense.iter_mut().enumerate() {
                let fan_in = self.layout.dense[l].0;
                for m in &mut buf.mask[r * fan_in..(r + 1) * fan_in] {
                    *m = if rng.random::<f64>() < p { T::zero() } else { keep };
                }
            }
        }
        Ok(())
    }

    /// Reverse pass for the most recent forward, given the gradient of the
    /// loss with respect to the head outputs. Overwrites `grads`.
    pub fn backward(&self, weights: &Weights<T>, d_out: &[T], grads: &mut Weights<T>) {
        let batch = self.batch;
        let n_conv = self.layout.conv.len();
        let n_dense = self.layout.dense.len();
        let mut g = d_out.to_vec();

        for l in (0..n_dense).rev() {
            let (fan_in, fan_out) = self.layout.dense[l];
            let buf = &self.dense[l];
            if l + 1 < n_dense {
                for (gi, y) in g.iter_mut().zip(&buf.y) {
                    if *y <= T::zero() {
                        *gi = T::zero();
                    }
                }
            }
            let grad = &mut grads.layers[n_conv + l];
            gemm(
                View::new(&buf.x, batch, fan_in).t(),
                View::new(&g, batch, fan_out),
                T::zero(),
                &mut grad.w,
            );
            column_sums(&g, fan_out, &mut grad.b);
            if l > 0 || n_conv > 0 {
                let mut gx = vec![T::zero(); batch * fan_in];
                gemm(
                    View::new(&g, batch, fan_out),
                    View::new(&weights.layers[n_conv + l].w, fan_in, fan_out).t(),
                    T::zero(),
                    &mut gx,
                );
                if !buf.mask.is_empty() {
                    for (v, m) in gx.iter_mut().zip(&buf.mask) {
                        *v *= *m;
                    }
                }
                g = gx;
            }
        }

        for l in (0..n_conv).rev() {
            let shape = &self.layout.conv[l];
            let buf = &self.conv[l];
            let mut g_out = vec![T::zero(); batch * shape.out_len()];
            for (gi, &src) in g.iter().zip(&buf.argmax) {
                g_out[src] += *gi;
            }
            for (v, o) in g_out.iter_mut().zip(&buf.out) {
                if *o <= T::zero() {
                    *v = T::zero();
                }
            }
            let positions = batch * shape.out_rows * shape.out_cols;
            let grad = &mut grads.layers[l];
            gemm(
                View::new(&buf.cols, positions, shape.patch_len()).t(),
                View::new(&g_out, positions, shape.out_ch),
                T::zero(),
                &mut grad.w,
            );
            column_sums(&g_out, shape.out_ch, &mut grad.b);
            if l > 0 {
                let mut g_cols = vec![T::zero(); positions * shape.patch_len()];
                gemm(
                    View::new(&g_out, positions, shape.out_ch),
                    View::new(&weights.layers[l].w, shape.patch_len(), shape.out_ch).t(),
                    T::zero(),
                    &mut g_cols,
                );
                g = col2im(shape, batch, &g_cols);
            }
        }
    }
}

fn relu<T: Real>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

fn column_sums<T: Real>(m: &[T], cols: usize, out: &mut [T]) {
    out.iter_mut().for_each(|v| *v = T::zero());
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += *v;
        }
    }
}

fn conv_forward<T: Real>(
    s: &ConvShape,
    batch: usize,
    x: &[T],
    w: &[T],
    b: &[T],
    buf: &mut ConvBuf<T>,
) {
    let patch = s.patch_len();
    let span = s.kernel_cols * s.in_ch;
    let positions = batch * s.out_rows * s.out_cols;
    buf.cols.clear();
    buf.cols.reserve(positions * patch);
    for n in 0..batch {
        for oy in 0..s.out_rows {
            for ox in 0..s.out_cols {
                for dy in 0..s.kernel_rows {
                    let src = ((n * s.in_rows + oy + dy) * s.in_cols + ox) * s.in_ch;
                    buf.cols.extend_from_slice(&x[src..src + span]);
                }
            }
        }
    }
    buf.out.clear();
    for _ in 0..positions {
        buf.out.extend_from_slice(b);
    }
    gemm(
        View::new(&buf.cols, positions, patch),
        View::new(w, patch, s.out_ch),
        T::one(),
        &mut buf.out,
    );
    relu(&mut buf.out);

    // max-pool along columns, lowest index wins ties
    let width = s.pool_cols;
    buf.pooled.clear();
    buf.argmax.clear();
    for n in 0..batch {
        for y in 0..s.out_rows {
            for px in 0..s.pooled_cols {
                for c in 0..s.out_ch {
                    let base = (n * s.out_rows + y) * s.out_cols;
                    let mut best = (base + px * width) * s.out_ch + c;
                    for k in 1..width {
                        let at = (base + px * width + k) * s.out_ch + c;
                        if buf.out[at] > buf.out[best] {
                            best = at;
                        }
                    }
                    buf.pooled.push(buf.out[best]);
                    buf.argmax.push(best);
                }
            }
        }
    }
}

fn col2im<T: Real>(s: &ConvShape, batch: usize, g_cols: &[T]) -> Vec<T> {
    let patch = s.patch_len();
    let span = s.kernel_cols * s.in_ch;
    let mut gx = vec![T::zero(); batch * s.in_len()];
    let mut row = 0;
    for n in 0..batch {
        for oy in 0..s.out_rows {
            for ox in 0..s.out_cols {
                let cols = &g_cols[row * patch..(row + 1) * patch];
                for dy in 0..s.kernel_rows {
                    let dst = ((n * s.in_rows + oy + dy) * s.in_cols + ox) * s.in_ch;
                    for (d, v) in gx[dst..dst + span].iter_mut().zip(&cols[dy * span..(dy + 1) * span]) {
                        *d += *v;
                    }
                }
                row += 1;
            }
        }
    }
    gx
}

/// Map head outputs to meters: position and log-variance per component.
pub(crate) fn decode<T: Real>(raw: &[T], scaler: &LabelScaler<T>) -> (Vec<f64>, Vec<f64>) {
    let d = scaler.shift.len();
    let p = (0..d)
        .map(|k| scaler.shift[k].to_real() + scaler.scale[k].to_real() * raw[k].to_real())
        .collect();
    let s = (0..d)
        .map(|k| raw[d + k].to_real() + 2.0 * scaler.scale[k].to_real().ln())
        .collect();
    (p, s)
}

/// Mean heteroscedastic loss over a batch and its gradient with respect to
/// the head outputs.
pub(crate) fn batch_loss<T: Real>(
    raw: &[T],
    labels: &[f64],
    scaler: &LabelScaler<T>,
) -> (f64, Vec<T>) {
    let d = scaler.shift.len();
    let width = 2 * d;
    let batch = raw.len() / width;
    let norm = 1.0 / (2.0 * d as f64 * batch as f64);
    let mut total = 0.0;
    let mut grad = vec![T::zero(); raw.len()];
    for (r, (out, label)) in raw.chunks_exact(width).zip(labels.chunks_exact(d)).enumerate() {
        let (p, s) = decode(out, scaler);
        for k in 0..d {
            let e = p[k] - label[k];
            let precision = soft_exp(-s[k]);
            total += precision * e * e + s[k];
            let dp = norm * 2.0 * precision * e;
            let ds = norm * (1.0 - soft_exp_deriv(-s[k]) * e * e);
            grad[r * width + k] = T::from_real(dp * scaler.scale[k].to_real());
            grad[r * width + d + k] = T::from_real(ds);
        }
    }
    (total * norm, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::ModelParams;
    use crate::neural::spec::ConvSpec;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 37 % 101) as f64) / 101.0).collect()
    }

    #[test]
    fn pool_backward_routes_to_argmax_only() {
        let spec = ModelSpec {
            input_rows: 2,
            input_cols: 9,
            input_channels: 1,
            conv: vec![ConvSpec {
                kernels: 2,
                kernel_rows: 1,
                kernel_cols: 1,
            }],
            pool_cols: 4,
            dense: vec![],
            outputs: 1,
            dropout_p: 0.0,
        };
        let params = ModelParams::<f64>::init(&spec, 1, LabelScaler::identity(1)).unwrap();
        let mut ws = Workspace::new(&spec).unwrap();
        let x = ramp(18);
        ws.forward(&params.weights, &x, 1, None).unwrap();
        let buf = &ws.conv[0];
        // 9 columns pool to 2 (floor), the ninth column is dropped
        assert_eq!(buf.pooled.len(), 2 * 2 * 2);
        let g: Vec<f64> = (0..buf.pooled.len()).map(|i| 1.0 + i as f64).collect();
        let mut routed = vec![0.0; buf.out.len()];
        for (gi, &src) in g.iter().zip(&buf.argmax) {
            routed[src] += gi;
        }
        let nonzero = routed.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, g.len());
        assert_eq!(routed.iter().sum::<f64>(), g.iter().sum::<f64>());
        for (i, &src) in buf.argmax.iter().enumerate() {
            assert_eq!(buf.out[src], buf.pooled[i]);
        }
    }

    #[test]
    fn pool_ties_pick_lowest_index() {
        let spec = ModelSpec {
            input_rows: 1,
            input_cols: 4,
            input_channels: 1,
            conv: vec![ConvSpec {
                kernels: 1,
                kernel_rows: 1,
                kernel_cols: 1,
            }],
            pool_cols: 4,
            dense: vec![],
            outputs: 1,
            dropout_p: 0.0,
        };
        let mut params = ModelParams::<f64>::zeros(&spec).unwrap();
        params.weights.layers[0].w[0] = 1.0;
        let mut ws = Workspace::new(&spec).unwrap();
        ws.forward(&params.weights, &[0.5, 0.5, 0.5, 0.5], 1, None).unwrap();
        assert_eq!(ws.conv[0].argmax, vec![0]);
    }

    #[test]
    fn activations_are_nonnegative_after_relu() {
        let spec = ModelSpec::standard(8, 32);
        let params = ModelParams::<f32>::init(&spec, 9, LabelScaler::identity(2)).unwrap();
        let mut ws = Workspace::new(&spec).unwrap();
        let x: Vec<f32> = ramp(spec.input_len() * 2).into_iter().map(|v| v as f32 - 0.5).collect();
        ws.forward(&params.weights, &x, 2, None).unwrap();
        for c in &ws.conv {
            assert!(c.out.iter().all(|v| *v >= 0.0));
        }
        for d in &ws.dense[..ws.dense.len() - 1] {
            assert!(d.y.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn inverted_dropout_preserves_linear_expectation() {
        // single linear layer: E_mask[y] equals the eval output
        let spec = ModelSpec::linear(1, 2).with_dropout(0.2);
        let params = ModelParams::<f64>::init(&spec, 5, LabelScaler::identity(2)).unwrap();
        let x = vec![0.9, -0.4, 0.3, 0.7, 0.1, -0.8];
        let mut ws = Workspace::new(&spec).unwrap();
        let eval = ws.forward(&params.weights, &x, 1, None).unwrap().to_vec();
        let trials = 10_000;
        let mut mean = vec![0.0; 4];
        let mut sq = vec![0.0; 4];
        for t in 0..trials {
            let y = ws
                .forward(&params.weights, &x, 1, Some(&[seed::derive(1, &[t])]))
                .unwrap();
            for k in 0..4 {
                mean[k] += y[k] / trials as f64;
                sq[k] += y[k] * y[k] / trials as f64;
            }
        }
        for k in 0..4 {
            let sd = ((sq[k] - mean[k] * mean[k]) / trials as f64).sqrt();
            assert!((mean[k] - eval[k]).abs() < 3.0 * sd, "k={k}");
        }
    }

    #[test]
    fn soft_exp_is_continuous_and_monotone() {
        assert_eq!(soft_exp(0.0), 1.0);
        assert_eq!(soft_exp(15.0), 15f64.exp());
        assert!((soft_exp(15.0 + 1e-9) / soft_exp(15.0) - 1.0).abs() < 1e-8);
        assert!(soft_exp(1e6).is_finite());
        assert!(soft_exp(16.0) > soft_exp(15.5));
    }
}
