//! Fusion of overlapping patch predictions into ROI-wide maps, followed by
//! thresholding, largest-component cleanup and boundary extraction.

use std::collections::VecDeque;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Contour, Mask};
use crate::inference::ProbabilityMap;
use crate::tiling::PatchSpec;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_GAP: usize = 10;

/// Summed probabilities and patch coverage counts over the ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMaps {
    pub height: usize,
    pub width: usize,
    pub prediction: Vec<f64>,
    pub overlay: Vec<u32>,
}

impl FusionMaps {
    /// `prediction / overlay`, or `None` where no patch landed.
    pub fn average(&self, y: usize, x: usize) -> Option<f64> {
        let i = y * self.width + x;
        (self.overlay[i] > 0).then(|| self.prediction[i] / self.overlay[i] as f64)
    }

    pub fn covered_fraction(&self) -> f64 {
        let covered = self.overlay.iter().filter(|&&c| c > 0).count();
        covered as f64 / self.overlay.len().max(1) as f64
    }

    /// 8-bit PGM renderings of the averaged prediction and of the overlay.
    pub fn to_pgm(&self) -> (Vec<u8>, Vec<u8>) {
        let header = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        let mut avg = header.clone();
        let mut cov = header;
        let max = self.overlay.iter().copied().max().unwrap_or(0).max(1) as f64;
        for y in 0..self.height {
            for x in 0..self.width {
                let a = self.average(y, x).unwrap_or(0.0);
                avg.push((a * 255.0).round() as u8);
                cov.push((self.overlay[y * self.width + x] as f64 / max * 255.0).round() as u8);
            }
        }
        (avg, cov)
    }
}

/// Adds every prediction into the maps, patches visited in the order given.
pub fn accumulate(
    specs: &[PatchSpec],
    predictions: &[ProbabilityMap],
    shape: (usize, usize),
) -> Result<FusionMaps> {
    let (height, width) = shape;
    if specs.len() != predictions.len() {
        return Err(invalid(format!(
            "{} patch specs but {} predictions",
            specs.len(),
            predictions.len()
        )));
    }
    let mut maps = FusionMaps {
        height,
        width,
        prediction: vec![0.0; height * width],
        overlay: vec![0; height * width],
    };
    for (index, (spec, pred)) in specs.iter().zip(predictions).enumerate() {
        if !spec.fits(height, width) {
            return Err(Error::SpecOutOfBounds { index, height, width });
        }
        if (pred.height, pred.width) != (spec.height, spec.width) {
            return Err(Error::ShapeMismatch {
                context: format!("prediction #{index}"),
                expected: vec![spec.height, spec.width],
                found: vec![pred.height, pred.width],
            });
        }
        if let Some(v) = pred.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("prediction #{index} holds probability {v}")));
        }
        for r in 0..spec.height {
            let row = (spec.origin_y + r) * width + spec.origin_x;
            let src = &pred.values[r * spec.width..(r + 1) * spec.width];
            for (c, &p) in src.iter().enumerate() {
                maps.prediction[row + c] += p as f64;
                maps.overlay[row + c] += 1;
            }
        }
    }
    Ok(maps)
}

/// Pixel is 1 when covered and its average reaches `threshold` (ties go to 1).
pub fn average_binarize(maps: &FusionMaps, threshold: f64) -> Result<Mask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    Ok(Mask::from_fn(maps.height, maps.width, |y, x| {
        maps.average(y, x).is_some_and(|a| a >= threshold)
    }))
}

/// Binary map holding at most one 8-connected foreground component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap(Mask);

impl SegmentationMap {
    /// Wraps a mask without checking connectivity.
    pub fn from_mask_unchecked(mask: Mask) -> Self {
        Self(mask)
    }

    pub fn mask(&self) -> &Mask {
        &self.0
    }

    pub fn into_mask(self) -> Mask {
        self.0
    }

    pub fn area(&self) -> usize {
        self.0.count_ones()
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let m = &self.0;
        let mut out = format!("P5\n{} {}\n255\n", m.width(), m.height()).into_bytes();
        out.extend(m.data().iter().map(|&v| v * 255));
        out
    }
}

/// Keeps the largest 8-connected component; on equal sizes the component
/// whose first pixel comes earliest in row-major order wins.
pub fn largest_component(grid: &Mask) -> SegmentationMap {
    let (h, w) = grid.shape();
    let mut labels = vec![0u32; h * w];
    let mut best: Option<(u32, usize)> = None;
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if grid.data()[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (y, x) = (i / w, i % w);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if grid.data()[j] != 0 && labels[j] == 0 {
                        labels[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
        // strict comparison keeps the earliest label on ties
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((next, size));
        }
    }
    let keep = best.map(|(l, _)| l);
    let mask = Mask::from_fn(h, w, |y, x| keep == Some(labels[y * w + x]));
    SegmentationMap(mask)
}

#[derive(Clone, Copy)]
enum Side {
    Upper,
    Lower,
}

fn boundary(seg: &SegmentationMap, side: Side, max_gap: usize) -> Result<Contour> {
    let m = seg.mask();
    let (h, w) = m.shape();
    let mut rows: Vec<Option<f64>> = vec![None; w];
    let mut sum_x = 0.0;
    let mut count = 0usize;
    for x in 0..w {
        let mut col = (0..h).filter(|&y| m.get(y, x));
        let pick = match side {
            Side::Upper => col.next(),
            Side::Lower => col.next_back(),
        };
        rows[x] = pick.map(|y| y as f64);
        let n = (0..h).filter(|&y| m.get(y, x)).count();
        sum_x += (x * n) as f64;
        count += n;
    }
    if count == 0 {
        return Err(Error::NoRegion);
    }
    let centroid = (sum_x / count as f64).round() as usize;

    // runs of populated columns, joined across gaps of at most `max_gap`
    let populated: Vec<usize> = (0..w).filter(|&x| rows[x].is_some()).collect();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &x in &populated {
        match runs.last_mut() {
            Some((_, end)) if x - *end - 1 <= max_gap => *end = x,
            _ => runs.push((x, x)),
        }
    }
    let (lo, hi) = runs
        .iter()
        .copied()
        .find(|&(a, b)| (a..=b).contains(&centroid))
        .unwrap_or_else(|| {
            // centroid in a wide gap: widest run, leftmost on ties
            runs.iter()
                .copied()
                .fold(runs[0], |best, r| if r.1 - r.0 > best.1 - best.0 { r } else { best })
        });

    let mut ordinates = Vec::with_capacity(hi - lo + 1);
    let mut prev: Option<(usize, f64)> = None;
    for x in lo..=hi {
        match rows[x] {
            Some(y) => {
                ordinates.push(y);
                prev = Some((x, y));
            }
            None => {
                let (x0, y0) = prev.expect("runs start on populated columns");
                let (x1, y1) = (x + 1..=hi)
                    .find_map(|xx| rows[xx].map(|y| (xx, y)))
                    .expect("runs end on populated columns");
                let t = (x - x0) as f64 / (x1 - x0) as f64;
                ordinates.push(y0 + t * (y1 - y0));
            }
        }
    }
    Contour::new(lo, ordinates)
}

/// Smallest foreground row per column.
pub fn upper_boundary(seg: &SegmentationMap, max_gap: usize) -> Result<Contour> {
    boundary(seg, Side::Upper, max_gap)
}

/// Largest foreground row per column.
pub fn lower_boundary(seg: &SegmentationMap, max_gap: usize) -> Result<Contour> {
    boundary(seg, Side::Lower, max_gap)
}
