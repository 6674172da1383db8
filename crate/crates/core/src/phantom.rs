//! Synthetic longitudinal carotid image with an analytic intima-media band.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{AnnotationSet, Contour};
use crate::imaging::{RegionOfInterest, UltrasoundImage};

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub pitch_um: f64,
    /// LI row at the left border.
    pub li_base: f64,
    pub amplitude: f64,
    /// Full period of the LI sinusoid, in columns.
    pub period: f64,
    /// Band thickness in native rows.
    pub thickness: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    /// 512 columns by 600 rows at 10 µm with an 800 µm band.
    fn default() -> Self {
        Self {
            height: 600,
            width: 512,
            pitch_um: 10.0,
            li_base: 330.0,
            amplitude: 20.0,
            period: 1024.0,
            thickness: 80.0,
            seed: 2176,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub spec: PhantomSpec,
    pub image: UltrasoundImage,
    pub li: Contour,
    pub ma: Contour,
}

impl PhantomSpec {
    pub fn li_at(&self, x: f64) -> f64 {
        self.li_base - self.amplitude * (std::f64::consts::TAU * x / self.period).sin()
    }

    pub fn ma_at(&self, x: f64) -> f64 {
        self.li_at(x) + self.thickness
    }

    pub fn build(&self) -> Result<Phantom> {
        let li = Contour::from_fn(0..=self.width - 1, |x| self.li_at(x as f64))?;
        let ma = Contour::from_fn(0..=self.width - 1, |x| self.ma_at(x as f64))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise: Vec<f32> = (0..self.height * self.width)
            .map(|_| rng.random_range(-0.04f32..0.04))
            .collect();
        let near_wall = 0.18 * self.height as f64;
        let image = UltrasoundImage::from_fn(self.height, self.width, self.pitch_um, self.pitch_um, |y, x| {
            let yf = y as f64;
            let (top, bottom) = (self.li_at(x as f64), self.ma_at(x as f64));
            let base = if yf < near_wall - 30.0 {
                0.35
            } else if yf < near_wall {
                0.75
            } else if yf < top {
                0.06
            } else if yf <= bottom {
                0.5 + 0.25 * (-(yf - top).min(bottom - yf) / 4.0).exp()
            } else {
                0.9 * (-(yf - bottom) / 400.0).exp()
            };
            base as f32 + noise[y * self.width + x]
        })?;
        Ok(Phantom {
            spec: self.clone(),
            image,
            li,
            ma,
        })
    }
}

impl Phantom {
    pub fn standard() -> Self {
        PhantomSpec::default().build().expect("default phantom is valid")
    }

    pub fn median_axis(&self) -> Contour {
        crate::geometry::median_axis(&self.li, &self.ma).expect("same span")
    }

    pub fn default_roi(&self) -> RegionOfInterest {
        let margin = self.spec.width / 16;
        RegionOfInterest::new(margin, self.spec.width - 1 - margin).expect("phantom is wide enough")
    }

    /// Control points every `step` columns along both interfaces, as an expert would trace them.
    pub fn annotations(&self, expert_id: &str, step: usize) -> AnnotationSet {
        let mut xs: Vec<usize> = (0..self.spec.width).step_by(step.max(1)).collect();
        if *xs.last().unwrap() != self.spec.width - 1 {
            xs.push(self.spec.width - 1);
        }
        let pts = |f: &dyn Fn(f64) -> f64| xs.iter().map(|&x| (x as f64, f(x as f64))).collect();
        AnnotationSet {
            expert_id: expert_id.to_string(),
            li_points: pts(&|x| self.spec.li_at(x)),
            ma_points: pts(&|x| self.spec.ma_at(x)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_phantom_geometry() {
        let p = Phantom::standard();
        assert_eq!((p.image.height(), p.image.width()), (600, 512));
        assert!(p.li.iter().all(|(x, y)| (p.ma.y_at(x).unwrap() - y - 80.0).abs() < 1e-12));
        assert!(p.image.get(200, 100) < 0.15);
        assert!(p.image.get(p.li.y_at(100).unwrap().ceil() as usize + 1, 100) > 0.4);
    }

    #[test]
    fn phantom_is_deterministic() {
        assert_eq!(Phantom::standard().image, Phantom::standard().image);
    }
}
