use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::inference::tensor::Tensor;

/// Weights of one 2-D convolution, `weight[out][in][ky][kx]` flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        weight: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if kernel_h % 2 == 0 || kernel_w % 2 == 0 {
            return Err(invalid(format!(
                "kernel must be odd-sized, got {kernel_h}x{kernel_w}"
            )));
        }
        if weight.len() != out_channels * in_channels * kernel_h * kernel_w {
            return Err(Error::ShapeMismatch {
                context: "conv weight".into(),
                expected: vec![out_channels, in_channels, kernel_h, kernel_w],
                found: vec![weight.len()],
            });
        }
        if bias.len() != out_channels {
            return Err(Error::ShapeMismatch {
                context: "conv bias".into(),
                expected: vec![out_channels],
                found: vec![bias.len()],
            });
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weight,
            bias,
        })
    }

    /// Single-channel, bias-free layer from a 2-D kernel.
    pub fn single(kernel_h: usize, kernel_w: usize, weight: Vec<f32>) -> Result<Self> {
        Self::new(1, 1, kernel_h, kernel_w, weight, vec![0.0])
    }

    #[inline]
    fn tap(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weight[((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }
}

/// Cross-correlation with taps `dilation` apart and zero "same" padding.
///
/// Each output plane accumulates bias first, then input channels and kernel
/// taps in lexicographic order, so results do not depend on thread scheduling.
pub fn conv2d_dilated(input: &Tensor, layer: &ConvLayer, dilation: usize) -> Result<Tensor> {
    if dilation == 0 {
        return Err(invalid("dilation must be at least 1"));
    }
    if input.channels != layer.in_channels {
        return Err(Error::ShapeMismatch {
            context: "conv input channels".into(),
            expected: vec![layer.in_channels],
            found: vec![input.channels],
        });
    }
    let (h, w) = (input.height, input.width);
    let pad_y = (dilation * (layer.kernel_h - 1) / 2) as isize;
    let pad_x = (dilation * (layer.kernel_w - 1) / 2) as isize;
    let plane = h * w;
    let mut data = vec![0.0f32; layer.out_channels * plane];

    data.par_chunks_mut(plane.max(1))
        .enumerate()
        .for_each(|(o, out)| {
            out.fill(layer.bias[o]);
            for i in 0..layer.in_channels {
                let src = input.plane(i);
                for ky in 0..layer.kernel_h {
                    let dy = (ky * dilation) as isize - pad_y;
                    let (y_lo, y_hi) = valid_range(dy, h);
                    for kx in 0..layer.kernel_w {
                        let wgt = layer.tap(o, i, ky, kx);
                        if wgt == 0.0 {
                            continue;
                        }
                        let dx = (kx * dilation) as isize - pad_x;
                        let (x_lo, x_hi) = valid_range(dx, w);
                        if x_lo >= x_hi {
                            continue;
                        }
                        for y in y_lo..y_hi {
                            let sy = (y as isize + dy) as usize;
                            let dst = &mut out[y * w + x_lo..y * w + x_hi];
                            let s0 = (sy * w) as isize + x_lo as isize + dx;
                            let s = &src[s0 as usize..s0 as usize + (x_hi - x_lo)];
                            for (d, v) in dst.iter_mut().zip(s) {
                                *d += wgt * v;
                            }
                        }
                    }
                }
            }
        });
    Tensor::from_vec(layer.out_channels, h, w, data)
}

/// Output indices `[lo, hi)` whose source `idx + offset` stays inside `0..len`.
fn valid_range(offset: isize, len: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}
