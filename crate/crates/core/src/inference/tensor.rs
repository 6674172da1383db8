use crate::error::{Error, Result};

/// Channel-major feature map, `data[c][y][x]` flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch {
                context: "tensor data".into(),
                expected: vec![channels, height, width],
                found: vec![data.len()],
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn relu_in_place(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.max(0.0));
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2(&self) -> Tensor {
        let (h, w) = (self.height / 2, self.width / 2);
        let mut out = Tensor::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    let m = self
                        .get(c, 2 * y, 2 * x)
                        .max(self.get(c, 2 * y, 2 * x + 1))
                        .max(self.get(c, 2 * y + 1, 2 * x))
                        .max(self.get(c, 2 * y + 1, 2 * x + 1));
                    out.data[(c * h + y) * w + x] = m;
                }
            }
        }
        out
    }

    /// Bilinear x2 upsampling with half-pixel centers (no corner alignment).
    pub fn upsample_bilinear2(&self) -> Tensor {
        let (h, w) = (self.height * 2, self.width * 2);
        let rows: Vec<(usize, usize, f32)> = (0..h).map(|i| source_taps(i, self.height)).collect();
        let cols: Vec<(usize, usize, f32)> = (0..w).map(|i| source_taps(i, self.width)).collect();
        let mut out = Tensor::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for (y, &(y0, y1, ty)) in rows.iter().enumerate() {
                for (x, &(x0, x1, tx)) in cols.iter().enumerate() {
                    let top = (1.0 - tx) * self.get(c, y0, x0) + tx * self.get(c, y0, x1);
                    let bottom = (1.0 - tx) * self.get(c, y1, x0) + tx * self.get(c, y1, x1);
                    out.data[(c * h + y) * w + x] = (1.0 - ty) * top + ty * bottom;
                }
            }
        }
        out
    }

    /// Stacks the channels of `self` followed by those of `other`.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch {
                context: "skip concatenation".into(),
                expected: vec![self.height, self.width],
                found: vec![other.height, other.width],
            });
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Tensor {
            channels: self.channels + other.channels,
            height: self.height,
            width: self.width,
            data,
        })
    }
}

fn source_taps(dst: usize, src_len: usize) -> (usize, usize, f32) {
    let pos = ((dst as f32 + 0.5) * 0.5 - 0.5).max(0.0);
    let i0 = (pos.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_and_upsample() {
        let t = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.max_pool2().data, vec![4.0]);
        let up = t.upsample_bilinear2();
        assert_eq!((up.height, up.width), (4, 4));
        // half-pixel convention: corners copy, interior blends 3:1
        assert_eq!(up.get(0, 0, 0), 1.0);
        assert_eq!(up.get(0, 0, 1), 1.25);
        assert_eq!(up.get(0, 1, 1), 1.75);
        assert_eq!(up.get(0, 3, 3), 4.0);
    }

    #[test]
    fn concat_checks_shape() {
        let a = Tensor::zeros(2, 3, 3);
        let b = Tensor::zeros(1, 3, 3);
        assert_eq!(a.concat_channels(&b).unwrap().channels, 3);
        assert!(a.concat_channels(&Tensor::zeros(1, 2, 3)).is_err());
    }
}
