//! Metrics, cross-validation folds and the evaluation report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::Contour;

/// Candidate and reference contours in one common frame.
#[derive(Debug, Clone, Copy)]
pub struct ContourPair<'a> {
    pub candidate: &'a Contour,
    pub reference: &'a Contour,
    pub pitch_vertical_um: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsDiffStats {
    pub mean_um: f64,
    pub median_um: f64,
    pub std_um: f64,
    pub n_columns: usize,
}

impl AbsDiffStats {
    /// Mean, median and population standard deviation of non-negative values.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyIntersection);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        Ok(Self {
            mean_um: mean,
            median_um: median,
            std_um: var.sqrt(),
            n_columns: values.len(),
        })
    }
}

fn common_span(a: &Contour, b: &Contour) -> Result<RangeInclusive<usize>> {
    a.intersection(b).ok_or(Error::EmptyIntersection)
}

/// Per-column |candidate − reference| in µm over the abscissa intersection.
pub fn absdiff_values(pair: ContourPair<'_>) -> Result<Vec<f64>> {
    let span = common_span(pair.candidate, pair.reference)?;
    Ok(span
        .map(|x| {
            (pair.candidate.y_at(x).unwrap() - pair.reference.y_at(x).unwrap()).abs()
                * pair.pitch_vertical_um
        })
        .collect())
}

pub fn absdiff_stats(pair: ContourPair<'_>) -> Result<AbsDiffStats> {
    AbsDiffStats::from_values(&absdiff_values(pair)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImtProfile {
    pub x_start: usize,
    pub values_um: Vec<f64>,
    pub stats: AbsDiffStats,
}

impl ImtProfile {
    pub fn y_at(&self, x: usize) -> Option<f64> {
        x.checked_sub(self.x_start).and_then(|i| self.values_um.get(i).copied())
    }
}

pub fn imt_from_contours(li: &Contour, ma: &Contour, pitch_vertical_um: f64) -> Result<ImtProfile> {
    let span = common_span(li, ma)?;
    let mut values = Vec::with_capacity(span.clone().count());
    for x in span.clone() {
        let d = ma.y_at(x).unwrap() - li.y_at(x).unwrap();
        if d < 0.0 {
            return Err(Error::CrossingContours { column: x });
        }
        values.push(d * pitch_vertical_um);
    }
    Ok(ImtProfile {
        x_start: *span.start(),
        stats: AbsDiffStats::from_values(&values)?,
        values_um: values,
    })
}

/// Per-column |IMT_candidate − IMT_reference| in µm where all four contours overlap.
pub fn imt_absdiff_values(
    candidate: (&Contour, &Contour),
    reference: (&Contour, &Contour),
    pitch_vertical_um: f64,
) -> Result<Vec<f64>> {
    let c = imt_from_contours(candidate.0, candidate.1, pitch_vertical_um)?;
    let r = imt_from_contours(reference.0, reference.1, pitch_vertical_um)?;
    let lo = c.x_start.max(r.x_start);
    let hi = (c.x_start + c.values_um.len()).min(r.x_start + r.values_um.len());
    if lo >= hi {
        return Err(Error::EmptyIntersection);
    }
    Ok((lo..hi).map(|x| (c.y_at(x).unwrap() - r.y_at(x).unwrap()).abs()).collect())
}

/// Symmetric Hausdorff distance between the contours' integer-abscissa points, in µm.
pub fn hausdorff(a: &Contour, b: &Contour, pitch_vertical_um: f64, pitch_horizontal_um: f64) -> f64 {
    directed_hausdorff(a, b, pitch_vertical_um, pitch_horizontal_um)
        .max(directed_hausdorff(b, a, pitch_vertical_um, pitch_horizontal_um))
}

fn directed_hausdorff(a: &Contour, b: &Contour, pv: f64, ph: f64) -> f64 {
    let b_start = b.x_start() as i64;
    let b_end = b.x_end() as i64;
    let dist = |xa: usize, ya: f64, xb: i64| {
        let dx = (xa as i64 - xb) as f64 * ph;
        let dy = (ya - b.y_at(xb as usize).unwrap()) * pv;
        (dx * dx + dy * dy).sqrt()
    };
    let mut worst: f64 = 0.0;
    for (xa, ya) in a.iter() {
        // scan outwards from the nearest column of b; stop once the column gap alone is too far
        let start = (xa as i64).clamp(b_start, b_end);
        let mut best = dist(xa, ya, start);
        let mut step = 1;
        loop {
            let left = start - step;
            let right = start + step;
            let left_ok = left >= b_start && ((xa as i64 - left).abs() as f64) * ph < best;
            let right_ok = right <= b_end && ((xa as i64 - right).abs() as f64) * ph < best;
            if !left_ok && !right_ok {
                break;
            }
            if left_ok {
                best = best.min(dist(xa, ya, left));
            }
            if right_ok {
                best = best.min(dist(xa, ya, right));
            }
            step += 1;
        }
        worst = worst.max(best);
    }
    worst
}

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Shuffles the ids into five chunks; fold `i` tests on chunk `i`, validates
/// on chunk `i + 1` and trains on the other three.
pub fn make_folds(ids: &[String], seed: u64) -> Result<FoldPlan> {
    let k = DEFAULT_FOLDS;
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(invalid("fold ids must be unique"));
    }
    if ids.len() < k {
        return Err(invalid(format!("need at least {k} ids for {k} folds, got {}", ids.len())));
    }
    let mut shuffled: Vec<String> = unique.into_iter().cloned().collect();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let base = shuffled.len() / k;
    let extra = shuffled.len() % k;
    let mut chunks = Vec::with_capacity(k);
    let mut rest = shuffled.as_slice();
    for i in 0..k {
        let (head, tail) = rest.split_at(base + usize::from(i < extra));
        let mut chunk = head.to_vec();
        chunk.sort();
        chunks.push(chunk);
        rest = tail;
    }
    let folds = (0..k)
        .map(|i| {
            let val = (i + 1) % k;
            let mut train: Vec<String> = (0..k)
                .filter(|&j| j != i && j != val)
                .flat_map(|j| chunks[j].iter().cloned())
                .collect();
            train.sort();
            Fold {
                train,
                validation: chunks[val].clone(),
                test: chunks[i].clone(),
            }
        })
        .collect();
    Ok(FoldPlan { k, seed, folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Measure {
    #[serde(rename = "LI")]
    Li,
    #[serde(rename = "MA")]
    Ma,
    #[serde(rename = "IMT")]
    Imt,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Li, Measure::Ma, Measure::Imt];

    pub fn label(self) -> &'static str {
        match self {
            Measure::Li => "LI",
            Measure::Ma => "MA",
            Measure::Imt => "IMT",
        }
    }
}

/// LI and MA contours of one image, native coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Interfaces {
    pub li: Contour,
    pub ma: Contour,
}

#[derive(Debug, Default, Clone)]
struct ColumnValues {
    per_image: BTreeMap<String, [Vec<f64>; 3]>,
}

impl ColumnValues {
    fn add(&mut self, image_id: &str, candidate: &Interfaces, reference: &Interfaces, pitch: f64) -> Result<()> {
        let li = absdiff_values(ContourPair {
            candidate: &candidate.li,
            reference: &reference.li,
            pitch_vertical_um: pitch,
        })?;
        let ma = absdiff_values(ContourPair {
            candidate: &candidate.ma,
            reference: &reference.ma,
            pitch_vertical_um: pitch,
        })?;
        let imt = imt_absdiff_values((&candidate.li, &candidate.ma), (&reference.li, &reference.ma), pitch)?;
        self.per_image.insert(image_id.to_string(), [li, ma, imt]);
        Ok(())
    }

    fn pooled(&self, m: Measure) -> Option<AbsDiffStats> {
        let idx = m as usize;
        let values: Vec<f64> = self
            .per_image
            .values()
            .flat_map(|v| v[idx].iter().copied())
            .collect();
        AbsDiffStats::from_values(&values).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessRate {
    pub succeeded: usize,
    pub total: usize,
}

impl SuccessRate {
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.succeeded as f64 / self.total as f64
        }
    }
}

/// Accumulates per-column differences image by image; aggregation follows image-id order.
#[derive(Debug, Clone)]
pub struct ReportBuilder {
    reference_label: String,
    candidate_label: String,
    observer_label: String,
    method: ColumnValues,
    observer: ColumnValues,
    success: Option<SuccessRate>,
}

impl ReportBuilder {
    pub fn new(reference_label: &str, candidate_label: &str, observer_label: &str) -> Self {
        Self {
            reference_label: reference_label.into(),
            candidate_label: candidate_label.into(),
            observer_label: observer_label.into(),
            method: ColumnValues::default(),
            observer: ColumnValues::default(),
            success: None,
        }
    }

    pub fn add_candidate(&mut self, image_id: &str, candidate: &Interfaces, reference: &Interfaces, pitch: f64) -> Result<()> {
        self.method.add(image_id, candidate, reference, pitch)
    }

    pub fn add_observer(&mut self, image_id: &str, observer: &Interfaces, reference: &Interfaces, pitch: f64) -> Result<()> {
        self.observer.add(image_id, observer, reference, pitch)
    }

    pub fn set_success(&mut self, rate: SuccessRate) {
        self.success = Some(rate);
    }

    pub fn build(&self) -> EvaluationReport {
        let rows = Measure::ALL
            .iter()
            .map(|&m| ReportRow {
                measure: m,
                candidate: self.method.pooled(m),
                observer: self.observer.pooled(m),
            })
            .collect();
        EvaluationReport {
            reference_label: self.reference_label.clone(),
            candidate_label: self.candidate_label.clone(),
            observer_label: self.observer_label.clone(),
            candidate_images: self.method.per_image.len(),
            observer_images: self.observer.per_image.len(),
            rows,
            success: self.success,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub measure: Measure,
    pub candidate: Option<AbsDiffStats>,
    pub observer: Option<AbsDiffStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub reference_label: String,
    pub candidate_label: String,
    pub observer_label: String,
    pub candidate_images: usize,
    pub observer_images: usize,
    pub rows: Vec<ReportRow>,
    pub success: Option<SuccessRate>,
}

fn cell(stats: &Option<AbsDiffStats>) -> String {
    match stats {
        Some(s) => format!("{:.0} ± {:.0} (median {:.0})", s.mean_um, s.std_um, s.median_um),
        None => "n/a".into(),
    }
}

impl EvaluationReport {
    pub fn row(&self, m: Measure) -> &ReportRow {
        &self.rows[m as usize]
    }

    fn headers(&self) -> [String; 2] {
        [
            format!("{} vs. {}", self.candidate_label, self.reference_label),
            format!("{} vs. {}", self.observer_label, self.reference_label),
        ]
    }

    pub fn success_line(&self) -> Option<String> {
        self.success.map(|s| {
            format!(
                "Far-wall detection success rate: {:.1}% ({}/{})",
                s.percent(),
                s.succeeded,
                s.total
            )
        })
    }

    pub fn to_text(&self) -> String {
        let [h1, h2] = self.headers();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# mean absolute difference ± std in µm; per-column values pooled across images \
             ({} candidate images, {} observer images)",
            self.candidate_images, self.observer_images
        );
        let cells: Vec<[String; 3]> = self
            .rows
            .iter()
            .map(|r| [r.measure.label().to_string(), cell(&r.candidate), cell(&r.observer)])
            .collect();
        let w0 = cells.iter().map(|c| c[0].chars().count()).max().unwrap_or(0).max("Measure".len());
        let w1 = cells.iter().map(|c| c[1].chars().count()).max().unwrap_or(0).max(h1.chars().count());
        let w2 = cells.iter().map(|c| c[2].chars().count()).max().unwrap_or(0).max(h2.chars().count());
        let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w - s.chars().count()));
        let _ = writeln!(out, "{} | {} | {}", pad("Measure", w0), pad(&h1, w1), pad(&h2, w2));
        let _ = writeln!(out, "{}-+-{}-+-{}", "-".repeat(w0), "-".repeat(w1), "-".repeat(w2));
        for c in &cells {
            let _ = writeln!(out, "{} | {} | {}", pad(&c[0], w0), pad(&c[1], w1), pad(&c[2], w2));
        }
        if let Some(line) = self.success_line() {
            let _ = writeln!(out, "{line}");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let [h1, h2] = self.headers();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["measure", "comparison", "mean_um", "std_um", "median_um", "n_columns"])
            .expect("in-memory write");
        for r in &self.rows {
            for (label, stats) in [(&h1, &r.candidate), (&h2, &r.observer)] {
                let Some(s) = stats else { continue };
                w.write_record([
                    r.measure.label().to_string(),
                    label.clone(),
                    s.mean_um.to_string(),
                    s.std_um.to_string(),
                    s.median_um.to_string(),
                    s.n_columns.to_string(),
                ])
                .expect("in-memory write");
            }
        }
        if let Some(s) = self.success {
            w.write_record([
                "success_rate".to_string(),
                "stage1".to_string(),
                s.percent().to_string(),
                String::new(),
                String::new(),
                s.total.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}
