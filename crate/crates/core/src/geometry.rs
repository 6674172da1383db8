//! Curves and masks: column-indexed contours, monotone cubic Hermite
//! interpolation of control points, the median axis between two interfaces,
//! mask rasterisation, and cubic least-squares smoothing.

use std::fs;
use std::ops::RangeInclusive;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, Error, Result};

/// Open curve with one sub-pixel row ordinate per column over a contiguous span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    x_start: usize,
    ordinates: Vec<f64>,
}

impl Contour {
    pub fn new(x_start: usize, ordinates: Vec<f64>) -> Result<Self> {
        if ordinates.is_empty() {
            return Err(invalid("contour needs at least one ordinate"));
        }
        if let Some(i) = ordinates.iter().position(|y| !y.is_finite()) {
            return Err(invalid(format!("non-finite ordinate at column {}", x_start + i)));
        }
        Ok(Self { x_start, ordinates })
    }

    /// Evaluates `f` at every column of `span`.
    pub fn from_fn(span: RangeInclusive<usize>, f: impl Fn(usize) -> f64) -> Result<Self> {
        let x_start = *span.start();
        Self::new(x_start, span.map(f).collect())
    }

    pub fn x_start(&self) -> usize {
        self.x_start
    }

    /// Last column, inclusive.
    pub fn x_end(&self) -> usize {
        self.x_start + self.ordinates.len() - 1
    }

    pub fn len(&self) -> usize {
        self.ordinates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordinates.is_empty()
    }

    pub fn ordinates(&self) -> &[f64] {
        &self.ordinates
    }

    pub fn span(&self) -> RangeInclusive<usize> {
        self.x_start..=self.x_end()
    }

    pub fn y_at(&self, x: usize) -> Option<f64> {
        x.checked_sub(self.x_start)
            .and_then(|i| self.ordinates.get(i))
            .copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.ordinates
            .iter()
            .enumerate()
            .map(move |(i, &y)| (self.x_start + i, y))
    }

    pub fn with_x_start(&self, x_start: usize) -> Contour {
        Contour {
            x_start,
            ordinates: self.ordinates.clone(),
        }
    }

    pub fn map_ordinates(&self, f: impl Fn(f64) -> f64) -> Contour {
        Contour {
            x_start: self.x_start,
            ordinates: self.ordinates.iter().map(|&y| f(y)).collect(),
        }
    }

    /// Shared column span with another contour, if any.
    pub fn intersection(&self, other: &Contour) -> Option<RangeInclusive<usize>> {
        let lo = self.x_start.max(other.x_start);
        let hi = self.x_end().min(other.x_end());
        (lo <= hi).then_some(lo..=hi)
    }

    /// Sub-contour over `span`, which must lie inside this contour.
    pub fn restrict(&self, span: RangeInclusive<usize>) -> Result<Contour> {
        let (lo, hi) = (*span.start(), *span.end());
        if lo > hi || lo < self.x_start || hi > self.x_end() {
            return Err(invalid(format!(
                "span [{lo}, {hi}] not inside contour [{}, {}]",
                self.x_start,
                self.x_end()
            )));
        }
        Ok(Contour {
            x_start: lo,
            ordinates: self.ordinates[lo - self.x_start..=hi - self.x_start].to_vec(),
        })
    }

    pub fn min_y(&self) -> f64 {
        self.ordinates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_y(&self) -> f64 {
        self.ordinates.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_y(&self) -> f64 {
        self.ordinates.iter().sum::<f64>() / self.ordinates.len() as f64
    }
}

/// Binary grid, row-major, values 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self { height, width, data }
    }

    /// Builds a mask from rows of `0`/`1` literals, handy for fixtures.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(height * width);
        for row in rows {
            if row.len() != width {
                return Err(invalid("ragged mask rows"));
            }
            if row.iter().any(|&v| v > 1) {
                return Err(invalid("mask values must be 0 or 1"));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }
}

/// Monotone piecewise cubic Hermite interpolant (Fritsch-Carlson slopes).
#[derive(Debug, Clone)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(invalid(format!(
                "PCHIP needs at least 2 control points, got {}",
                points.len()
            )));
        }
        for (i, w) in points.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(invalid(format!(
                    "control point abscissas must be strictly increasing (points {i} and {})",
                    i + 1
                )));
            }
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(invalid("non-finite control point"));
        }
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        let slopes = fritsch_carlson_slopes(&xs, &ys);
        Ok(Self { xs, ys, slopes })
    }

    pub fn span(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.span();
        if !(x >= lo && x <= hi) {
            return Err(Error::OutOfRange { x, lo, hi });
        }
        // segment k such that xs[k] <= x <= xs[k+1]
        let k = match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => return Ok(self.ys[i]),
            Err(i) => i - 1,
        };
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        Ok(h00 * self.ys[k]
            + h10 * h * self.slopes[k]
            + h01 * self.ys[k + 1]
            + h11 * h * self.slopes[k + 1])
    }
}

fn fritsch_carlson_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0], delta[0]];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        let (a, b) = (delta[k - 1], delta[k]);
        if a == 0.0 || b == 0.0 || a.signum() != b.signum() {
            d[k] = 0.0;
        } else {
            // weighted harmonic mean
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / a + w2 / b);
        }
    }
    d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

/// One-sided three-point end slope, limited to keep the shape.
fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() || m0 == 0.0 {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

/// Interpolates control points at every integer abscissa of `query`.
pub fn pchip_interpolate(points: &[(f64, f64)], query: RangeInclusive<usize>) -> Result<Contour> {
    let interp = Pchip::new(points)?;
    let x_start = *query.start();
    let ordinates = query
        .map(|x| interp.eval(x as f64))
        .collect::<Result<Vec<_>>>()?;
    Contour::new(x_start, ordinates)
}

/// Integer abscissas covered by a sorted list of control points.
pub fn integer_span(points: &[(f64, f64)]) -> Result<RangeInclusive<usize>> {
    let (first, last) = match (points.first(), points.last()) {
        (Some(f), Some(l)) => (f.0, l.0),
        _ => return Err(invalid("no control points")),
    };
    let lo = first.max(0.0).ceil();
    let hi = last.floor();
    if hi < lo {
        return Err(invalid(format!("control points span no integer column ({first}..{last})")));
    }
    Ok(lo as usize..=hi as usize)
}

/// Curve halfway between two interfaces over their shared columns.
pub fn median_axis(li: &Contour, ma: &Contour) -> Result<Contour> {
    let span = li.intersection(ma).ok_or(Error::EmptyIntersection)?;
    Contour::from_fn(span, |x| {
        let (a, b) = (li.y_at(x).unwrap(), ma.y_at(x).unwrap());
        (a + b) / 2.0
    })
}

/// Mask with 1 at every pixel strictly below `axis` (larger row index).
pub fn rasterize_below(axis: &Contour, shape: (usize, usize)) -> Result<Mask> {
    let (h, w) = shape;
    if axis.x_start() != 0 || axis.len() < w {
        return Err(invalid(format!(
            "axis spans columns [{}, {}] but the mask needs [0, {}]",
            axis.x_start(),
            axis.x_end(),
            w.saturating_sub(1)
        )));
    }
    if let Some((x, y)) = axis.iter().take(w).find(|&(_, y)| y < -1.0 || y > h as f64) {
        return Err(invalid(format!("axis ordinate {y} at column {x} outside {h} image rows")));
    }
    let bounds: Vec<f64> = axis.ordinates()[..w].to_vec();
    Ok(Mask::from_fn(h, w, |y, x| y as f64 > bounds[x]))
}

/// Mask with 1 between `li` and `ma` inclusive, on their shared columns.
pub fn rasterize_between(li: &Contour, ma: &Contour, shape: (usize, usize)) -> Result<Mask> {
    let (h, w) = shape;
    let mut mask = Mask::zeros(h, w);
    let Some(span) = li.intersection(ma) else {
        return Ok(mask);
    };
    for x in span {
        let (top, bottom) = (li.y_at(x).unwrap(), ma.y_at(x).unwrap());
        if top > bottom {
            return Err(Error::CrossingContours { column: x });
        }
        if x >= w {
            continue;
        }
        for y in 0..h {
            let yf = y as f64;
            if top <= yf && yf <= bottom {
                mask.set(y, x, true);
            }
        }
    }
    Ok(mask)
}

/// Degree-3 least-squares polynomial over abscissas rescaled to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CubicFit {
    center: f64,
    half_range: f64,
    /// Coefficients of 1, t, t², t³ in the rescaled variable.
    coeffs: [f64; 4],
}

impl CubicFit {
    pub fn fit(contour: &Contour) -> Result<Self> {
        let n = contour.len();
        if n < 4 {
            return Err(invalid(format!("cubic fit needs at least 4 points, got {n}")));
        }
        let x0 = contour.x_start() as f64;
        let x1 = contour.x_end() as f64;
        let center = 0.5 * (x0 + x1);
        let half_range = 0.5 * (x1 - x0);
        let vandermonde = DMatrix::from_fn(n, 4, |i, j| {
            let t = ((x0 + i as f64) - center) / half_range;
            t.powi(j as i32)
        });
        let rhs = DVector::from_column_slice(contour.ordinates());
        let qr = vandermonde.qr();
        let qtb = qr.q().transpose() * rhs;
        let sol = qr
            .r()
            .solve_upper_triangular(&qtb)
            .ok_or_else(|| invalid("singular cubic fit"))?;
        Ok(Self {
            center,
            half_range,
            coeffs: [sol[0], sol[1], sol[2], sol[3]],
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let t = (x - self.center) / self.half_range;
        let [c0, c1, c2, c3] = self.coeffs;
        c0 + t * (c1 + t * (c2 + t * c3))
    }

    pub fn eval_span(&self, span: RangeInclusive<usize>) -> Contour {
        let x_start = *span.start();
        Contour {
            x_start,
            ordinates: span.map(|x| self.eval(x as f64)).collect(),
        }
    }

    /// Coefficients of 1, x, x², x³ in raw abscissas.
    pub fn monomial_coefficients(&self) -> [f64; 4] {
        let (c, s) = (self.center, self.half_range);
        let [a0, a1, a2, a3] = self.coeffs;
        // expand sum a_k ((x - c)/s)^k
        let b3 = a3 / s.powi(3);
        let b2 = a2 / s.powi(2) - 3.0 * a3 * c / s.powi(3);
        let b1 = a1 / s - 2.0 * a2 * c / s.powi(2) + 3.0 * a3 * c * c / s.powi(3);
        let b0 = a0 - a1 * c / s + a2 * c * c / s.powi(2) - a3 * c.powi(3) / s.powi(3);
        [b0, b1, b2, b3]
    }
}

/// Fits a cubic to the contour and evaluates it back on the same columns.
pub fn polyfit_cubic(contour: &Contour) -> Result<Contour> {
    Ok(CubicFit::fit(contour)?.eval_span(contour.span()))
}

/// Which interface an annotation point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interface {
    #[serde(rename = "LI")]
    LumenIntima,
    #[serde(rename = "MA")]
    MediaAdventitia,
}

/// Control points traced by one expert on one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub expert_id: String,
    pub li_points: Vec<(f64, f64)>,
    pub ma_points: Vec<(f64, f64)>,
}

impl AnnotationSet {
    /// Parses `interface,x,y` rows; an optional header row is skipped.
    pub fn parse_csv(text: &str, expert_id: &str, path: &Path) -> Result<Self> {
        let malformed = |reason: String| Error::Malformed {
            what: "annotation CSV",
            path: path.to_path_buf(),
            reason,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut li = Vec::new();
        let mut ma = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| malformed(e.to_string()))?;
            if record.len() == 1 && record[0].is_empty() {
                continue;
            }
            if record.len() != 3 {
                return Err(malformed(format!("row {} has {} fields", line + 1, record.len())));
            }
            let target = match record[0].to_ascii_uppercase().as_str() {
                "LI" => &mut li,
                "MA" => &mut ma,
                "INTERFACE" if line == 0 => continue,
                other => return Err(malformed(format!("unknown interface `{other}`"))),
            };
            let x: f64 = record[1]
                .parse()
                .map_err(|_| malformed(format!("bad x `{}` on row {}", &record[1], line + 1)))?;
            let y: f64 = record[2]
                .parse()
                .map_err(|_| malformed(format!("bad y `{}` on row {}", &record[2], line + 1)))?;
            target.push((x, y));
        }
        for (name, pts) in [("LI", &mut li), ("MA", &mut ma)] {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pts.len() < 2 {
                return Err(malformed(format!("{name} needs at least 2 points")));
            }
            if pts.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(malformed(format!("{name} has duplicate abscissas")));
            }
        }
        Ok(Self {
            expert_id: expert_id.to_string(),
            li_points: li,
            ma_points: ma,
        })
    }

    pub fn load(path: &Path, expert_id: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse_csv(&text, expert_id, path)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("interface,x,y\n");
        for (name, pts) in [("LI", &self.li_points), ("MA", &self.ma_points)] {
            for (x, y) in pts {
                out.push_str(&format!("{name},{x},{y}\n"));
            }
        }
        out
    }

    /// PCHIP-interpolated interface over its integer columns.
    pub fn contour(&self, interface: Interface) -> Result<Contour> {
        let pts = match interface {
            Interface::LumenIntima => &self.li_points,
            Interface::MediaAdventitia => &self.ma_points,
        };
        pchip_interpolate(pts, integer_span(pts)?)
    }

    pub fn median_axis(&self) -> Result<Contour> {
        median_axis(
            &self.contour(Interface::LumenIntima)?,
            &self.contour(Interface::MediaAdventitia)?,
        )
    }
}
