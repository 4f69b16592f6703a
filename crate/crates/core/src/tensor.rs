//! Dense real tensors shared by the convolution engine and the real embedding
//! of complex k-space.

use crate::error::{ReconError, Result};

/// Real tensor in channel-major batched layout: `data[((c * batch + n) * height + y) * width + x]`.
///
/// With `batch == 1` this is the usual channels × height × width layout. Keeping the
/// channel outermost lets a convolution over the whole batch run as a single matrix product.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            batch,
            height,
            width,
            data: vec![0.0; channels * batch * height * width],
        }
    }

    pub fn from_vec(
        channels: usize,
        batch: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != channels * batch * height * width {
            return Err(ReconError::Shape(format!(
                "tensor {channels}x{batch}x{height}x{width} needs {} values, got {}",
                channels * batch * height * width,
                data.len()
            )));
        }
        Ok(Tensor {
            channels,
            batch,
            height,
            width,
            data,
        })
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    /// Number of columns (batch × pixels) seen by a convolution.
    pub fn columns(&self) -> usize {
        self.batch * self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, n: usize, y: usize, x: usize) -> usize {
        ((c * self.batch + n) * self.height + y) * self.width + x
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.channels == other.channels
            && self.batch == other.batch
            && self.height == other.height
            && self.width == other.width
    }

    pub fn shape_string(&self) -> String {
        format!(
            "{}x{}x{}x{}",
            self.channels, self.batch, self.height, self.width
        )
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Images `start..start + len` of the batch.
    pub fn sub_batch(&self, start: usize, len: usize) -> Tensor {
        assert!(start + len <= self.batch, "sub-batch out of range");
        let plane = self.plane_len();
        let mut out = Tensor::zeros(self.channels, len, self.height, self.width);
        for c in 0..self.channels {
            let src = self.index(c, start, 0, 0);
            out.data[c * len * plane..(c + 1) * len * plane].copy_from_slice(&self.data[src..src + len * plane]);
        }
        out
    }

    /// Stacks single-image tensors with identical channel count and plane size into one batch.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| ReconError::Shape("cannot stack an empty list".into()))?;
        let (c, h, w) = (first.channels, first.height, first.width);
        let batch: usize = items.iter().map(|t| t.batch).sum();
        let mut out = Tensor::zeros(c, batch, h, w);
        let plane = h * w;
        let mut n0 = 0;
        for t in items {
            if t.channels != c || t.height != h || t.width != w {
                return Err(ReconError::Shape(format!(
                    "cannot stack {} with {}",
                    t.shape_string(),
                    first.shape_string()
                )));
            }
            for ch in 0..c {
                let src = &t.data[ch * t.batch * plane..(ch + 1) * t.batch * plane];
                let dst = out.index(ch, n0, 0, 0);
                out.data[dst..dst + t.batch * plane].copy_from_slice(src);
            }
            n0 += t.batch;
        }
        Ok(out)
    }
}
