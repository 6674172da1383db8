//! `CSDW` weight files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        4 bytes  "CSDW"
//! version      u32      (1)
//! layer count  u32
//! per layer:
//!   name length  u16, then UTF-8 name
//!   rank         u8, then rank x u32 dims
//!   values       prod(dims) x f32 (IEEE-754), row-major
//! crc32        u32      over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{io_err, Error, Result};
use crate::inference::unet::DilatedUnetConfig;

pub const MAGIC: [u8; 4] = *b"CSDW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            values,
        }
    }
}

/// Ordered list of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelWeights {
    pub tensors: Vec<NamedTensor>,
}

impl ModelWeights {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated("missing magic".into()));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < 16 {
            return Err(Error::Truncated("header shorter than 16 bytes".into()));
        }
        let body_len = bytes.len() - 4;
        let mut r = Reader {
            buf: &bytes[..body_len],
            pos: 4,
        };
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = r.u32("layer count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for index in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "layer name")?)
                .map_err(|_| Error::Truncated(format!("layer {index} name is not UTF-8")))?
                .to_string();
            let rank = r.take(1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dims")? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4, &format!("values of `{name}`"))?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, shape, values });
        }
        if r.pos != body_len {
            return Err(Error::Truncated(format!(
                "{} bytes between the last layer and the checksum",
                body_len - r.pos
            )));
        }
        let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..body_len]);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        if tensors.is_empty() {
            return Err(Error::NoLayers);
        }
        if let Some(t) = tensors.iter().find(|t| t.values.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument(format!("layer `{}` holds non-finite values", t.name)));
        }
        Ok(Self { tensors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    /// He-uniform random weights with zero biases, reproducible per seed.
    pub fn random(cfg: &DilatedUnetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = cfg
            .layer_shapes()
            .into_iter()
            .flat_map(|(name, [o, i, kh, kw])| {
                let bound = (6.0 / (i * kh * kw) as f32).sqrt();
                let w = (0..o * i * kh * kw)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                [
                    NamedTensor::new(format!("{name}.weight"), vec![o, i, kh, kw], w),
                    NamedTensor::new(format!("{name}.bias"), vec![o], vec![0.0; o]),
                ]
            })
            .collect();
        Self { tensors }
    }

    /// Every layer filled with `weight`/`bias` constants.
    pub fn constant(cfg: &DilatedUnetConfig, weight: f32, bias: f32) -> Self {
        let tensors = cfg
            .layer_shapes()
            .into_iter()
            .flat_map(|(name, [o, i, kh, kw])| {
                [
                    NamedTensor::new(format!("{name}.weight"), vec![o, i, kh, kw], vec![weight; o * i * kh * kw]),
                    NamedTensor::new(format!("{name}.bias"), vec![o], vec![bias; o]),
                ]
            })
            .collect();
        Self { tensors }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_crc(mut body: Vec<u8>) -> Vec<u8> {
        let crc = crc32fast::hash(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        body
    }

    fn header(count: u32) -> Vec<u8> {
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&count.to_le_bytes());
        b
    }

    #[test]
    fn empty_file_has_no_layers() {
        assert!(matches!(ModelWeights::from_bytes(&with_crc(header(0))), Err(Error::NoLayers)));
        assert!(matches!(
            ModelWeights::from_bytes(&ModelWeights::default().to_bytes()),
            Err(Error::NoLayers)
        ));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let w = ModelWeights {
            tensors: vec![
                NamedTensor::new("a.weight", vec![2, 1, 3, 3], (0..18).map(|i| i as f32 * -0.37).collect()),
                NamedTensor::new("a.bias", vec![2], vec![f32::MIN_POSITIVE, 1e-30]),
            ],
        };
        let back = ModelWeights::from_bytes(&w.to_bytes()).unwrap();
        assert_eq!(back, w);
        for (a, b) in w.tensors.iter().zip(&back.tensors) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn short_values_are_truncation() {
        let mut body = header(1);
        body.extend_from_slice(&1u16.to_le_bytes());
        body.push(b'k');
        body.push(2);
        body.extend_from_slice(&3u32.to_le_bytes());
        body.extend_from_slice(&3u32.to_le_bytes());
        for i in 0..8 {
            body.extend_from_slice(&(i as f32).to_le_bytes());
        }
        assert!(matches!(ModelWeights::from_bytes(&with_crc(body)), Err(Error::Truncated(_))));
    }

    #[test]
    fn distinct_failure_modes() {
        let good = ModelWeights {
            tensors: vec![NamedTensor::new("x", vec![1], vec![1.0])],
        }
        .to_bytes();

        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(ModelWeights::from_bytes(&magic), Err(Error::BadMagic(_))));

        let mut flipped = good.clone();
        let last_value = flipped.len() - 5;
        flipped[last_value] ^= 0x40;
        assert!(matches!(ModelWeights::from_bytes(&flipped), Err(Error::ChecksumMismatch { .. })));

        assert!(matches!(ModelWeights::from_bytes(&good[..good.len() - 6]), Err(Error::Truncated(_))));

        let mut version = good.clone();
        version[4] = 9;
        assert!(matches!(ModelWeights::from_bytes(&version), Err(Error::UnsupportedVersion(9))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csdw");
        let w = ModelWeights::random(&DilatedUnetConfig::tiny(), 7);
        w.save(&path).unwrap();
        assert_eq!(ModelWeights::load(&path).unwrap(), w);
    }
}
