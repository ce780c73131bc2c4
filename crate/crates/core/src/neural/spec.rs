use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernels: usize,
    pub kernel_rows: usize,
    pub kernel_cols: usize,
}

/// Network architecture: valid convolutions (each followed by ReLU and a
/// max-pool along the subcarrier axis), ReLU dense layers, and a linear
/// head of `2 * outputs` units, the position followed by its log-variance.
/// A dropout layer precedes every dense layer, the head included.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub input_rows: usize,
    pub input_cols: usize,
    pub input_channels: usize,
    pub conv: Vec<ConvSpec>,
    /// Pool width along the column (subcarrier) axis; floor division.
    pub pool_cols: usize,
    pub dense: Vec<usize>,
    /// Position dimension D.
    pub outputs: usize,
    pub dropout_p: f64,
}

/// Shapes of one convolution stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_rows: usize,
    pub in_cols: usize,
    pub in_ch: usize,
    pub out_rows: usize,
    pub out_cols: usize,
    pub out_ch: usize,
    pub kernel_rows: usize,
    pub kernel_cols: usize,
    pub pool_cols: usize,
    pub pooled_cols: usize,
}

impl ConvShape {
    pub fn patch_len(&self) -> usize {
        self.kernel_rows * self.kernel_cols * self.in_ch
    }

    pub fn in_len(&self) -> usize {
        self.in_rows * self.in_cols * self.in_ch
    }

    pub fn out_len(&self) -> usize {
        self.out_rows * self.out_cols * self.out_ch
    }

    pub fn pooled_len(&self) -> usize {
        self.out_rows * self.pooled_cols * self.out_ch
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub conv: Vec<ConvShape>,
    /// `(fan_in, fan_out)` of each dense layer, head last.
    pub dense: Vec<(usize, usize)>,
}

impl Layout {
    pub fn flat_len(&self) -> usize {
        self.dense[0].0
    }
}

impl ModelSpec {
    /// Two 32-kernel 4x4 convolutions with 4x1 pooling, three 128-unit dense
    /// layers, dropout 0.2 and a 2-D position head.
    pub fn standard(input_rows: usize, input_cols: usize) -> Self {
        let conv = ConvSpec {
            kernels: 32,
            kernel_rows: 4,
            kernel_cols: 4,
        };
        Self {
            input_rows,
            input_cols,
            input_channels: 3,
            conv: vec![conv, conv],
            pool_cols: 4,
            dense: vec![128, 128, 128],
            outputs: 2,
            dropout_p: 0.2,
        }
    }

    /// Single convolution and single hidden dense layer; small enough for
    /// exhaustive finite-difference checks.
    pub fn toy() -> Self {
        Self {
            input_rows: 4,
            input_cols: 8,
            input_channels: 3,
            conv: vec![ConvSpec {
                kernels: 3,
                kernel_rows: 2,
                kernel_cols: 2,
            }],
            pool_cols: 2,
            dense: vec![6],
            outputs: 2,
            dropout_p: 0.2,
        }
    }

    /// Head only: a linear map from the flattened input.
    pub fn linear(input_rows: usize, input_cols: usize) -> Self {
        Self {
            input_rows,
            input_cols,
            input_channels: 3,
            conv: Vec::new(),
            pool_cols: 1,
            dense: Vec::new(),
            outputs: 2,
            dropout_p: 0.0,
        }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout_p = p;
        self
    }

    pub fn input_len(&self) -> usize {
        self.input_rows * self.input_cols * self.input_channels
    }

    pub fn head_width(&self) -> usize {
        2 * self.outputs
    }

    pub fn layout(&self) -> Result<Layout> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if self.outputs == 0 || self.pool_cols == 0 || self.input_len() == 0 {
            return bad("outputs, pool width and input shape must be positive".into());
        }
        let (mut rows, mut cols, mut ch) = (self.input_rows, self.input_cols, self.input_channels);
        let mut conv = Vec::with_capacity(self.conv.len());
        for (i, c) in self.conv.iter().enumerate() {
            if c.kernels == 0 || c.kernel_rows == 0 || c.kernel_cols == 0 {
                return bad(format!("conv {i}: empty kernel"));
            }
            if c.kernel_rows > rows || c.kernel_cols > cols {
                return bad(format!(
                    "conv {i}: {}x{} kernel does not fit a {rows}x{cols} input",
                    c.kernel_rows, c.kernel_cols
                ));
            }
            let out_rows = rows - c.kernel_rows + 1;
            let out_cols = cols - c.kernel_cols + 1;
            let pooled_cols = out_cols / self.pool_cols;
            if pooled_cols == 0 {
                return bad(format!("conv {i}: {out_cols} columns vanish under pooling"));
            }
            conv.push(ConvShape {
                in_rows: rows,
                in_cols: cols,
                in_ch: ch,
                out_rows,
                out_cols,
                out_ch: c.kernels,
                kernel_rows: c.kernel_rows,
                kernel_cols: c.kernel_cols,
                pool_cols: self.pool_cols,
                pooled_cols,
            });
            rows = out_rows;
            cols = pooled_cols;
            ch = c.kernels;
        }
        let mut fan_in = rows * cols * ch;
        let mut dense = Vec::with_capacity(self.dense.len() + 1);
        for &units in &self.dense {
            if units == 0 {
                return bad("dense layer with zero units".into());
            }
            dense.push((fan_in, units));
            fan_in = units;
        }
        dense.push((fan_in, self.head_width()));
        Ok(Layout { conv, dense })
    }

    /// Canonical one-line description, the input of [`ModelSpec::hash`].
    pub fn canonical(&self) -> String {
        let conv = self
            .conv
            .iter()
            .map(|c| format!("{}x{}x{}", c.kernels, c.kernel_rows, c.kernel_cols))
            .collect::<Vec<_>>()
            .join(",");
        let dense = self
            .dense
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "in={}x{}x{};conv={conv};pool={};dense={dense};out={};dropout={:?}",
            self.input_rows,
            self.input_cols,
            self.input_channels,
            self.pool_cols,
            self.outputs,
            self.dropout_p
        )
    }

    pub fn hash(&self) -> u32 {
        crc32fast::hash(self.canonical().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_layout_shapes() {
        let layout = ModelSpec::standard(8, 32).layout().unwrap();
        let c0 = layout.conv[0];
        assert_eq!((c0.out_rows, c0.out_cols, c0.pooled_cols), (5, 29, 7));
        let c1 = layout.conv[1];
        assert_eq!((c1.out_rows, c1.out_cols, c1.pooled_cols), (2, 4, 1));
        assert_eq!(layout.flat_len(), 64);
        assert_eq!(layout.dense, vec![(64, 128), (128, 128), (128, 128), (128, 4)]);
    }

    #[test]
    fn paper_layout_shapes() {
        let layout = ModelSpec::standard(16, 103).layout().unwrap();
        assert_eq!(layout.conv[0].pooled_cols, 25); // floor(100 / 4)
        assert_eq!(layout.conv[1].pooled_cols, 5); // floor(22 / 4)
        assert_eq!(layout.flat_len(), 10 * 5 * 32);
        let early = ModelSpec::standard(96, 103).layout().unwrap();
        assert_eq!(early.flat_len(), 90 * 5 * 32);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ModelSpec::standard(3, 32).layout().is_err());
        assert!(ModelSpec::standard(8, 20).layout().is_err());
        assert!(ModelSpec::standard(8, 32).with_dropout(1.0).layout().is_err());
        assert!(ModelSpec::standard(8, 32).with_dropout(-0.1).layout().is_err());
    }

    #[test]
    fn hash_tracks_architecture() {
        let a = ModelSpec::standard(8, 32);
        assert_eq!(a.hash(), ModelSpec::standard(8, 32).hash());
        assert_ne!(a.hash(), ModelSpec::standard(16, 32).hash());
        assert_ne!(a.hash(), a.clone().with_dropout(0.1).hash());
    }
}
