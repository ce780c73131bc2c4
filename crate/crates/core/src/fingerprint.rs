//! Real-valued network input derived from complex CSI.
//!
//! A [`Fingerprint`] is an `antennas x subcarriers x 3` tensor stored
//! antenna-major with the channel innermost: magnitude, then sine and cosine
//! of the phase step between adjacent antennas. The phase step cancels any
//! phase common to all antennas of a subcarrier, so timing offsets between
//! UE and BS drop out.

use crate::channel::CsiMatrix;
use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    pub source_bs: usize,
    /// Cells whose phase was undefined (zero magnitude) and set to 0.
    pub zero_phase_cells: usize,
}

impl Fingerprint {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, source_bs: usize) -> Result<Self> {
        if data.len() != rows * cols * CHANNELS {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols}x{CHANNELS} fingerprint",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            source_bs,
            zero_phase_cells: 0,
        })
    }

    /// Antenna axis length.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Subcarrier axis length.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, CHANNELS)
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.cols + col) * CHANNELS + ch]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Rows `start..start + len` as a new fingerprint.
    pub fn rows_slice(&self, start: usize, len: usize) -> Fingerprint {
        let stride = self.cols * CHANNELS;
        Fingerprint {
            rows: len,
            cols: self.cols,
            data: self.data[start * stride..(start + len) * stride].to_vec(),
            source_bs: self.source_bs,
            zero_phase_cells: 0,
        }
    }
}

/// Magnitude and adjacent-antenna phase difference of `csi`.
///
/// The last antenna has no right neighbour; its phase cells repeat those of
/// the previous antenna so the tensor keeps `n_rx` rows.
pub fn preprocess(csi: &CsiMatrix) -> Result<Fingerprint> {
    if !csi.is_finite() {
        return Err(Error::Domain("CSI contains non-finite entries".into()));
    }
    let rows = csi.n_rx();
    let cols = csi.n_sc();
    if rows < 2 {
        return Err(Error::Shape("need at least two antennas".into()));
    }
    let mut data = vec![0.0; rows * cols * CHANNELS];
    let mut zero_phase_cells = 0;
    let phase = |z: num_complex::Complex64, zeros: &mut usize| {
        if z.norm_sqr() == 0.0 {
            *zeros += 1;
            0.0
        } else {
            z.arg()
        }
    };
    for m in 0..cols {
        let h = csi.row(m);
        for a in 0..rows {
            let at = (a * cols + m) * CHANNELS;
            data[at] = h[a].norm();
            let (lo, hi) = if a + 1 < rows { (a, a + 1) } else { (a - 1, a) };
            let dphi = phase(h[hi], &mut zero_phase_cells) - phase(h[lo], &mut zero_phase_cells);
            let (s, c) = dphi.sin_cos();
            data[at + 1] = s;
            data[at + 2] = c;
        }
    }
    Ok(Fingerprint {
        rows,
        cols,
        data,
        source_bs: 0,
        zero_phase_cells,
    })
}

/// Per-channel min-max statistics of one BS's training fingerprints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub min: [f64; CHANNELS],
    pub max: [f64; CHANNELS],
}

pub fn fit_norm<'a>(train: impl IntoIterator<Item = &'a Fingerprint>) -> Result<NormStats> {
    let mut stats = NormStats {
        min: [f64::INFINITY; CHANNELS],
        max: [f64::NEG_INFINITY; CHANNELS],
    };
    let mut seen = false;
    for fp in train {
        seen = true;
        for cell in fp.data.chunks_exact(CHANNELS) {
            for ch in 0..CHANNELS {
                stats.min[ch] = stats.min[ch].min(cell[ch]);
                stats.max[ch] = stats.max[ch].max(cell[ch]);
            }
        }
    }
    if !seen {
        return Err(Error::InvalidArgument(
            "cannot fit normalization on an empty set".into(),
        ));
    }
    Ok(stats)
}

/// Map each channel affinely onto `[0, 1]`, clipping values outside the
/// fitted range. Constant channels map to 0.
pub fn apply_norm(fp: &Fingerprint, stats: &NormStats) -> Fingerprint {
    let mut out = fp.clone();
    for cell in out.data.chunks_exact_mut(CHANNELS) {
        for ch in 0..CHANNELS {
            let span = stats.max[ch] - stats.min[ch];
            cell[ch] = if span > 0.0 {
                ((cell[ch] - stats.min[ch]) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    out
}

/// Stack per-BS fingerprints along the antenna axis, in the given order.
pub fn concat_early(fps: &[Fingerprint]) -> Result<Fingerprint> {
    let first = fps
        .first()
        .ok_or_else(|| Error::InvalidArgument("no fingerprints to concatenate".into()))?;
    if let Some(bad) = fps.iter().find(|f| f.shape() != first.shape()) {
        return Err(Error::Shape(format!(
            "cannot concatenate {:?} with {:?}",
            first.shape(),
            bad.shape()
        )));
    }
    let mut data = Vec::with_capacity(first.data.len() * fps.len());
    for fp in fps {
        data.extend_from_slice(&fp.data);
    }
    Ok(Fingerprint {
        rows: first.rows * fps.len(),
        cols: first.cols,
        data,
        source_bs: first.source_bs,
        zero_phase_cells: fps.iter().map(|f| f.zero_phase_cells).sum(),
    })
}
