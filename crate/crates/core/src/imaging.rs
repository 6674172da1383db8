//! Grayscale ultrasound images, their physical pixel pitch, and the two
//! vertical resampling steps used by the pipeline: normalisation to a fixed
//! height for far-wall detection and normalisation to a fixed vertical pitch
//! for intima-media segmentation.
//!
//! Rows grow downward. Resampling is endpoint aligned: the first and last
//! input rows land exactly on the first and last output rows.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, Error, Result};
use crate::geometry::Contour;

/// A B-mode image with vertical and horizontal pixel pitch in micrometers.
#[derive(Debug, Clone, PartialEq)]
pub struct UltrasoundImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    pitch_vertical_um: f64,
    pitch_horizontal_um: f64,
}

impl UltrasoundImage {
    pub fn new(
        height: usize,
        width: usize,
        pixels: Vec<f32>,
        pitch_vertical_um: f64,
        pitch_horizontal_um: f64,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!("image must be non-empty, got {height}x{width}")));
        }
        if pixels.len() != height * width {
            return Err(Error::ShapeMismatch {
                context: "image pixels".into(),
                expected: vec![height, width],
                found: vec![pixels.len()],
            });
        }
        for pitch in [pitch_vertical_um, pitch_horizontal_um] {
            if !(pitch.is_finite() && pitch > 0.0) {
                return Err(invalid(format!("pixel pitch must be positive and finite, got {pitch}")));
            }
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
            pitch_vertical_um,
            pitch_horizontal_um,
        })
    }

    /// Builds an image by evaluating `f(row, col)`; values are clamped to [0, 1].
    pub fn from_fn(
        height: usize,
        width: usize,
        pitch_vertical_um: f64,
        pitch_horizontal_um: f64,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x).clamp(0.0, 1.0));
            }
        }
        Self::new(height, width, pixels, pitch_vertical_um, pitch_horizontal_um)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pitch_vertical_um(&self) -> f64 {
        self.pitch_vertical_um
    }

    pub fn pitch_horizontal_um(&self) -> f64 {
        self.pitch_horizontal_um
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn column(&self, x: usize) -> impl Iterator<Item = f32> + '_ {
        (0..self.height).map(move |y| self.get(y, x))
    }

    /// Physical height covered by the rows, in micrometers.
    pub fn physical_height_um(&self) -> f64 {
        self.height as f64 * self.pitch_vertical_um
    }

    /// Decodes an 8-bit grayscale PGM (P5) or PNG; intensities are divided by 255.
    pub fn decode(bytes: &[u8], pitch_vertical_um: f64, pitch_horizontal_um: f64) -> Result<Self> {
        let gray = image::load_from_memory(bytes)?.to_luma8();
        let (w, h) = gray.dimensions();
        let pixels = gray.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Self::new(h as usize, w as usize, pixels, pitch_vertical_um, pitch_horizontal_um)
    }

    /// Loads an image together with its `.meta` sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = sidecar_meta_path(path).ok_or_else(|| Error::Malformed {
            what: "image",
            path: path.to_path_buf(),
            reason: "no .meta sidecar found".into(),
        })?;
        let meta = PitchMeta::load(&meta_path)?;
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::decode(&bytes, meta.pitch_vertical_um, meta.pitch_horizontal_um)
    }

    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([(self.get(y as usize, x as usize) * 255.0).round() as u8])
        })
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_gray8().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    /// Writes an 8-bit binary PGM (P5).
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|v| (v * 255.0).round() as u8));
        out
    }
}

/// Pitch metadata stored next to each image as `<image>.meta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchMeta {
    pub pitch_vertical_um: f64,
    pub pitch_horizontal_um: f64,
}

impl PitchMeta {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let malformed = |reason: String| Error::Malformed {
            what: "meta file",
            path: path.to_path_buf(),
            reason,
        };
        let mut vertical = None;
        let mut horizontal = None;
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| malformed(format!("expected key=value, got `{line}`")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| malformed(format!("`{}` is not a number", value.trim())))?;
            match key.trim() {
                "pitch_vertical_um" => vertical = Some(value),
                "pitch_horizontal_um" => horizontal = Some(value),
                other => return Err(malformed(format!("unknown key `{other}`"))),
            }
        }
        let meta = PitchMeta {
            pitch_vertical_um: vertical.ok_or_else(|| malformed("missing pitch_vertical_um".into()))?,
            pitch_horizontal_um: horizontal
                .ok_or_else(|| malformed("missing pitch_horizontal_um".into()))?,
        };
        for p in [meta.pitch_vertical_um, meta.pitch_horizontal_um] {
            if !(p.is_finite() && p > 0.0) {
                return Err(malformed(format!("pitch {p} must be positive")));
            }
        }
        Ok(meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        format!(
            "pitch_vertical_um={}\npitch_horizontal_um={}\n",
            self.pitch_vertical_um, self.pitch_horizontal_um
        )
    }
}

/// Finds `<stem>.meta` (preferred) or `<file name>.meta` beside an image.
pub fn sidecar_meta_path(image_path: &Path) -> Option<PathBuf> {
    let by_stem = image_path.with_extension("meta");
    if by_stem.is_file() {
        return Some(by_stem);
    }
    let mut name = image_path.file_name()?.to_os_string();
    name.push(".meta");
    let by_name = image_path.with_file_name(name);
    by_name.is_file().then_some(by_name)
}

/// Horizontal span delimited by the operator, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionOfInterest {
    pub x_left: usize,
    pub x_right: usize,
}

impl RegionOfInterest {
    pub fn new(x_left: usize, x_right: usize) -> Result<Self> {
        if x_left >= x_right {
            return Err(invalid(format!("ROI needs x_left < x_right, got [{x_left}, {x_right}]")));
        }
        Ok(Self { x_left, x_right })
    }

    pub fn full(width: usize) -> Result<Self> {
        Self::new(0, width.saturating_sub(1))
    }

    pub fn width(&self) -> usize {
        self.x_right - self.x_left + 1
    }

    pub fn check_within(&self, width: usize) -> Result<()> {
        if self.x_left >= self.x_right || self.x_right >= width {
            return Err(invalid(format!(
                "ROI [{}, {}] not inside image of width {width}",
                self.x_left, self.x_right
            )));
        }
        Ok(())
    }

    /// Shifts a full-image contour into ROI column coordinates.
    pub fn map_to_roi(&self, contour: &Contour) -> Result<Contour> {
        let x_start = contour.x_start().checked_sub(self.x_left).ok_or_else(|| {
            invalid(format!(
                "contour starts at column {}, left of ROI border {}",
                contour.x_start(),
                self.x_left
            ))
        })?;
        Ok(contour.with_x_start(x_start))
    }

    /// Shifts a ROI-relative contour back into full-image columns.
    pub fn map_to_full(&self, contour: &Contour) -> Contour {
        contour.with_x_start(contour.x_start() + self.x_left)
    }
}

/// Linear row mapping between two endpoint-aligned frames of the same scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowMap {
    pub src_rows: usize,
    pub dst_rows: usize,
}

impl RowMap {
    pub fn new(src_rows: usize, dst_rows: usize) -> Self {
        Self { src_rows, dst_rows }
    }

    fn scale(&self) -> f64 {
        if self.src_rows <= 1 || self.dst_rows <= 1 {
            return 1.0;
        }
        (self.dst_rows - 1) as f64 / (self.src_rows - 1) as f64
    }

    pub fn forward(&self, y_src: f64) -> f64 {
        y_src * self.scale()
    }

    pub fn inverse(&self, y_dst: f64) -> f64 {
        y_dst / self.scale()
    }

    pub fn forward_contour(&self, contour: &Contour) -> Contour {
        contour.map_ordinates(|y| self.forward(y))
    }

    pub fn inverse_contour(&self, contour: &Contour) -> Contour {
        contour.map_ordinates(|y| self.inverse(y))
    }

    pub fn then(&self, next: &RowMap) -> ComposedRowMap {
        ComposedRowMap {
            scale: self.scale() * next.scale(),
        }
    }
}

/// Product of several [`RowMap`]s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComposedRowMap {
    scale: f64,
}

impl ComposedRowMap {
    pub fn forward(&self, y: f64) -> f64 {
        y * self.scale
    }

    pub fn inverse(&self, y: f64) -> f64 {
        y / self.scale
    }
}

fn resample_rows(img: &UltrasoundImage, out_rows: usize, pitch: f64) -> UltrasoundImage {
    if out_rows == img.height {
        return UltrasoundImage {
            pitch_vertical_um: pitch,
            ..img.clone()
        };
    }
    let w = img.width;
    let mut pixels = vec![0.0f32; out_rows * w];
    let last_in = img.height - 1;
    for j in 0..out_rows {
        let pos = if img.height == 1 {
            0.0
        } else {
            (j * last_in) as f64 / (out_rows - 1) as f64
        };
        let mut i0 = pos.floor() as usize;
        let mut t = pos - i0 as f64;
        if i0 >= last_in {
            i0 = last_in;
            t = 0.0;
        }
        let i1 = (i0 + 1).min(last_in);
        let row0 = &img.pixels[i0 * w..(i0 + 1) * w];
        let row1 = &img.pixels[i1 * w..(i1 + 1) * w];
        let out = &mut pixels[j * w..(j + 1) * w];
        for ((o, &a), &b) in out.iter_mut().zip(row0).zip(row1) {
            let v = if t == 0.0 {
                a as f64
            } else {
                (1.0 - t) * a as f64 + t * b as f64
            };
            // interpolation in f64 may round a hair past the bracketing samples
            *o = (v as f32).clamp(a.min(b), a.max(b));
        }
    }
    UltrasoundImage {
        height: out_rows,
        width: w,
        pixels,
        pitch_vertical_um: pitch,
        pitch_horizontal_um: img.pitch_horizontal_um,
    }
}

/// Resamples every column to `target_height` rows by linear interpolation.
/// The vertical pitch is scaled by `height / target_height`.
pub fn resample_height(img: &UltrasoundImage, target_height: usize) -> Result<UltrasoundImage> {
    if target_height < 2 {
        return Err(invalid(format!("target height must be at least 2, got {target_height}")));
    }
    let pitch = img.pitch_vertical_um * img.height as f64 / target_height as f64;
    Ok(resample_rows(img, target_height, pitch))
}

/// Output height for a pitch change, `round(h * pitch / target)` with a floor of 2.
pub fn height_for_pitch(height: usize, pitch_um: f64, target_pitch_um: f64) -> usize {
    ((height as f64 * pitch_um / target_pitch_um).round() as usize).max(2)
}

/// Resamples columns so one row spans `target_pitch_um` micrometers.
pub fn resample_pitch(img: &UltrasoundImage, target_pitch_um: f64) -> Result<UltrasoundImage> {
    if !(target_pitch_um.is_finite() && target_pitch_um > 0.0) {
        return Err(invalid(format!("target pitch must be positive, got {target_pitch_um}")));
    }
    let rows = height_for_pitch(img.height, img.pitch_vertical_um, target_pitch_um);
    Ok(resample_rows(img, rows, target_pitch_um))
}

/// Column slice of an image plus the column offset of its left border.
#[derive(Debug, Clone, PartialEq)]
pub struct CroppedImage {
    pub image: UltrasoundImage,
    pub roi: RegionOfInterest,
}

impl CroppedImage {
    pub fn x_offset(&self) -> usize {
        self.roi.x_left
    }
}

pub fn crop_roi(img: &UltrasoundImage, roi: RegionOfInterest) -> Result<CroppedImage> {
    roi.check_within(img.width)?;
    let w = roi.width();
    let mut pixels = Vec::with_capacity(w * img.height);
    for y in 0..img.height {
        let row = &img.pixels[y * img.width..(y + 1) * img.width];
        pixels.extend_from_slice(&row[roi.x_left..=roi.x_right]);
    }
    Ok(CroppedImage {
        image: UltrasoundImage {
            height: img.height,
            width: w,
            pixels,
            pitch_vertical_um: img.pitch_vertical_um,
            pitch_horizontal_um: img.pitch_horizontal_um,
        },
        roi,
    })
}
