//! Dilated U-net: conv-conv-pool encoder, a stack (or bank) of dilated
//! convolutions at the bottleneck, a bilinear-upsampling decoder with skip
//! concatenations, and a 1x1 sigmoid head.
//!
//! Layer names in the weight file follow `enc{i}.conv{1,2}`, `bottleneck.{j}`,
//! `dec{i}.conv{1,2}` and `head`, each with `.weight` `[out, in, kh, kw]` and
//! `.bias` `[out]`. Any normalisation must be folded into the convolutions
//! at export time.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::inference::conv::{conv2d_dilated, ConvLayer};
use crate::inference::tensor::Tensor;
use crate::inference::weights::ModelWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BottleneckMode {
    /// Dilated convolutions applied one after another.
    #[default]
    Sequential,
    /// Dilated branches applied to the same input and summed.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilatedUnetConfig {
    pub encoder_levels: usize,
    pub base_channels: usize,
    pub bottleneck_dilations: Vec<usize>,
    pub kernel_size: usize,
    #[serde(default)]
    pub bottleneck_mode: BottleneckMode,
}

impl Default for DilatedUnetConfig {
    fn default() -> Self {
        Self {
            encoder_levels: 4,
            base_channels: 16,
            bottleneck_dilations: vec![1, 2, 4, 8],
            kernel_size: 3,
            bottleneck_mode: BottleneckMode::Sequential,
        }
    }
}

impl DilatedUnetConfig {
    /// One level, two base channels, a single undilated bottleneck conv.
    pub fn tiny() -> Self {
        Self {
            encoder_levels: 1,
            base_channels: 2,
            bottleneck_dilations: vec![1],
            kernel_size: 3,
            bottleneck_mode: BottleneckMode::Sequential,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_levels == 0 {
            return Err(invalid("encoder_levels must be at least 1"));
        }
        if self.encoder_levels > 12 {
            return Err(invalid("encoder_levels above 12 are not supported"));
        }
        if self.base_channels == 0 {
            return Err(invalid("base_channels must be at least 1"));
        }
        if self.bottleneck_dilations.is_empty() || self.bottleneck_dilations.contains(&0) {
            return Err(invalid("bottleneck dilations must be a non-empty list of positive integers"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(invalid("kernel_size must be odd"));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Input height and width must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.encoder_levels
    }

    /// Names and `[out, in, kh, kw]` shapes of every convolution, in file order.
    pub fn layer_shapes(&self) -> Vec<(String, [usize; 4])> {
        let k = self.kernel_size;
        let levels = self.encoder_levels;
        let mut out = Vec::new();
        for i in 0..levels {
            let c_in = if i == 0 { 1 } else { self.channels(i - 1) };
            let c = self.channels(i);
            out.push((format!("enc{i}.conv1"), [c, c_in, k, k]));
            out.push((format!("enc{i}.conv2"), [c, c, k, k]));
        }
        let deepest = self.channels(levels - 1);
        let bottleneck = self.channels(levels);
        for j in 0..self.bottleneck_dilations.len() {
            let c_in = match self.bottleneck_mode {
                BottleneckMode::Sequential if j > 0 => bottleneck,
                _ => deepest,
            };
            out.push((format!("bottleneck.{j}"), [bottleneck, c_in, k, k]));
        }
        for i in (0..levels).rev() {
            let below = self.channels(i + 1);
            let c = self.channels(i);
            out.push((format!("dec{i}.conv1"), [c, below + c, k, k]));
            out.push((format!("dec{i}.conv2"), [c, c, k, k]));
        }
        out.push(("head".to_string(), [1, self.channels(0), 1, 1]));
        out
    }

    pub fn summary(&self) -> String {
        let dil: Vec<String> = self.bottleneck_dilations.iter().map(|d| d.to_string()).collect();
        let mode = match self.bottleneck_mode {
            BottleneckMode::Sequential => "seq",
            BottleneckMode::Parallel => "par",
        };
        format!(
            "L{}-C{}-k{}-d{}-{mode}",
            self.encoder_levels,
            self.base_channels,
            self.kernel_size,
            dil.join(".")
        )
    }
}

struct Level {
    conv1: ConvLayer,
    conv2: ConvLayer,
}

/// A dilated U-net with weights bound and validated.
pub struct DilatedUnet {
    cfg: DilatedUnetConfig,
    encoder: Vec<Level>,
    bottleneck: Vec<(ConvLayer, usize)>,
    /// Ordered from the deepest level up to level 0.
    decoder: Vec<Level>,
    head: ConvLayer,
}

impl std::fmt::Debug for DilatedUnet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DilatedUnet").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl DilatedUnet {
    pub fn new(cfg: DilatedUnetConfig, weights: &ModelWeights) -> Result<Self> {
        cfg.validate()?;
        let shapes = cfg.layer_shapes();
        let mut expected_names = Vec::with_capacity(shapes.len() * 2);
        let mut layers = Vec::with_capacity(shapes.len());
        for (name, [o, i, kh, kw]) in &shapes {
            let w_name = format!("{name}.weight");
            let b_name = format!("{name}.bias");
            let w = weights.get(&w_name).ok_or_else(|| Error::MissingLayer(w_name.clone()))?;
            let b = weights.get(&b_name).ok_or_else(|| Error::MissingLayer(b_name.clone()))?;
            if w.shape != [*o, *i, *kh, *kw] {
                return Err(Error::ShapeMismatch {
                    context: w_name,
                    expected: vec![*o, *i, *kh, *kw],
                    found: w.shape.clone(),
                });
            }
            if b.shape != [*o] {
                return Err(Error::ShapeMismatch {
                    context: b_name,
                    expected: vec![*o],
                    found: b.shape.clone(),
                });
            }
            layers.push(ConvLayer::new(*o, *i, *kh, *kw, w.values.clone(), b.values.clone())?);
            expected_names.push(w_name);
            expected_names.push(b_name);
        }
        if let Some(extra) = weights.tensors.iter().find(|t| !expected_names.contains(&t.name)) {
            return Err(invalid(format!(
                "unexpected layer `{}` for config {}",
                extra.name,
                cfg.summary()
            )));
        }

        let mut it = layers.into_iter();
        let pair = |it: &mut std::vec::IntoIter<ConvLayer>| Level {
            conv1: it.next().unwrap(),
            conv2: it.next().unwrap(),
        };
        let encoder = (0..cfg.encoder_levels).map(|_| pair(&mut it)).collect();
        let bottleneck = cfg
            .bottleneck_dilations
            .iter()
            .map(|&d| (it.next().unwrap(), d))
            .collect();
        let decoder = (0..cfg.encoder_levels).map(|_| pair(&mut it)).collect();
        let head = it.next().unwrap();
        Ok(Self {
            cfg,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &DilatedUnetConfig {
        &self.cfg
    }

    fn conv_relu(input: &Tensor, layer: &ConvLayer, dilation: usize) -> Result<Tensor> {
        let mut t = conv2d_dilated(input, layer, dilation)?;
        t.relu_in_place();
        Ok(t)
    }

    fn check_input(&self, height: usize, width: usize, len: usize) -> Result<()> {
        let m = self.cfg.size_multiple();
        if len != height * width || height % m != 0 || width % m != 0 || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch {
                context: format!("network input (sides must be multiples of {m})"),
                expected: vec![height, width],
                found: vec![len],
            });
        }
        Ok(())
    }

    /// Encoder activations before pooling at every level, plus the bottleneck output.
    pub(crate) fn encode(&self, input: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut x = input.clone();
        for level in &self.encoder {
            let a = Self::conv_relu(&x, &level.conv1, 1)?;
            let b = Self::conv_relu(&a, &level.conv2, 1)?;
            x = b.max_pool2();
            skips.push(b);
        }
        let bottom = match self.cfg.bottleneck_mode {
            BottleneckMode::Sequential => {
                for (layer, d) in &self.bottleneck {
                    x = Self::conv_relu(&x, layer, *d)?;
                }
                x
            }
            BottleneckMode::Parallel => {
                let mut sum: Option<Tensor> = None;
                for (layer, d) in &self.bottleneck {
                    let branch = Self::conv_relu(&x, layer, *d)?;
                    sum = Some(match sum {
                        None => branch,
                        Some(mut acc) => {
                            acc.data.iter_mut().zip(&branch.data).for_each(|(a, b)| *a += b);
                            acc
                        }
                    });
                }
                sum.expect("validated non-empty dilations")
            }
        };
        Ok((skips, bottom))
    }

    /// Per-pixel foreground probability for a single-channel patch.
    pub fn forward(&self, pixels: &[f32], height: usize, width: usize) -> Result<Vec<f32>> {
        self.check_input(height, width, pixels.len())?;
        let input = Tensor::from_vec(1, height, width, pixels.to_vec())?;
        let (skips, mut x) = self.encode(&input)?;
        for (level, skip) in self.decoder.iter().zip(skips.iter().rev()) {
            let up = x.upsample_bilinear2();
            let cat = up.concat_channels(skip)?;
            let a = Self::conv_relu(&cat, &level.conv1, 1)?;
            x = Self::conv_relu(&a, &level.conv2, 1)?;
        }
        let logits = conv2d_dilated(&x, &self.head, 1)?;
        Ok(logits.data.into_iter().map(sigmoid).collect())
    }
}

#[inline]
pub fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

/// Kernel extent, stride and dilation of one layer along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl LayerGeometry {
    pub fn conv(kernel: usize, dilation: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            dilation,
        }
    }

    pub fn pool(size: usize) -> Self {
        Self {
            kernel: size,
            stride: size,
            dilation: 1,
        }
    }
}

/// Receptive field, in input pixels, of a chain of layers.
pub fn receptive_field_of(layers: &[LayerGeometry]) -> usize {
    let mut rf = 1;
    let mut jump = 1;
    for l in layers {
        rf += (l.kernel - 1) * l.dilation * jump;
        jump *= l.stride;
    }
    rf
}

/// Receptive field of one bottleneck unit through encoder and bottleneck.
pub fn receptive_field(cfg: &DilatedUnetConfig) -> usize {
    let k = cfg.kernel_size;
    let mut layers = Vec::new();
    for _ in 0..cfg.encoder_levels {
        layers.extend([LayerGeometry::conv(k, 1), LayerGeometry::conv(k, 1), LayerGeometry::pool(2)]);
    }
    match cfg.bottleneck_mode {
        BottleneckMode::Sequential => {
            layers.extend(cfg.bottleneck_dilations.iter().map(|&d| LayerGeometry::conv(k, d)));
        }
        BottleneckMode::Parallel => {
            let widest = cfg.bottleneck_dilations.iter().copied().max().unwrap_or(1);
            layers.push(LayerGeometry::conv(k, widest));
        }
    }
    receptive_field_of(&layers)
}
