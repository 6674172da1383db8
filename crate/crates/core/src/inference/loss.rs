use crate::error::{Error, Result};
use crate::geometry::Mask;

/// Probabilities are clamped to `[eps, 1 - eps]` before taking logs.
pub const BCE_EPSILON: f64 = 1e-7;
pub const DICE_SMOOTHING: f64 = 1.0;

/// Mean binary cross-entropy plus soft Dice loss.
pub fn loss_bce_dice(prediction: &[f32], target: &Mask) -> Result<f64> {
    if prediction.len() != target.height() * target.width() {
        return Err(Error::ShapeMismatch {
            context: "loss inputs".into(),
            expected: vec![target.height(), target.width()],
            found: vec![prediction.len()],
        });
    }
    let mut bce = 0.0;
    let mut intersection = 0.0;
    let mut sum_p = 0.0;
    let mut sum_t = 0.0;
    for (&p, &t) in prediction.iter().zip(target.data()) {
        let p = p as f64;
        let t = t as f64;
        let pc = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
        bce -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        intersection += p * t;
        sum_p += p;
        sum_t += t;
    }
    let n = prediction.len().max(1) as f64;
    let dice = 1.0 - (2.0 * intersection + DICE_SMOOTHING) / (sum_p + sum_t + DICE_SMOOTHING);
    Ok(bce / n + dice)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let target = Mask::from_rows(&[&[1, 0, 1], &[0, 0, 1]]).unwrap();
        let pred: Vec<f32> = target.data().iter().map(|&v| v as f32).collect();
        let loss = loss_bce_dice(&pred, &target).unwrap();
        let floor = -(1.0 - BCE_EPSILON).ln();
        assert!((loss - floor).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn uniform_half_gives_ln2_bce() {
        let target = Mask::from_rows(&[&[1, 0, 0, 1], &[1, 1, 0, 0]]).unwrap();
        let pred = vec![0.5f32; 8];
        // dice part: 1 - (2*2 + 1) / (4 + 4 + 1)
        let dice = 1.0 - 5.0 / 9.0;
        let loss = loss_bce_dice(&pred, &target).unwrap();
        assert!((loss - dice - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn dice_term_with_one_miss() {
        let target = Mask::from_rows(&[&[1, 1], &[1, 1]]).unwrap();
        let pred = [1.0f32, 1.0, 1.0, 0.0];
        let loss = loss_bce_dice(&pred, &target).unwrap();
        let bce = (-(BCE_EPSILON).ln() - 3.0 * (1.0 - BCE_EPSILON).ln()) / 4.0;
        assert!((loss - bce - 0.125).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let target = Mask::zeros(2, 2);
        assert!(loss_bce_dice(&[0.5; 3], &target).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn loss_is_non_negative(
                cells in proptest::collection::vec((0.0f32..=1.0, proptest::bool::ANY), 1..64)
            ) {
                let target = Mask::from_fn(1, cells.len(), |_, x| cells[x].1);
                let pred: Vec<f32> = cells.iter().map(|c| c.0).collect();
                prop_assert!(loss_bce_dice(&pred, &target).unwrap() >= 0.0);
            }
        }
    }
}
