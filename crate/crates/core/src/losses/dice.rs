use crate::data::DenseMask;
use crate::error::{Error, Result};

/// Dice per foreground class (index 0 is class 1) and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct DiceScores {
    pub per_class: Vec<f64>,
    pub mean: f64,
}

/// `2|A∩B| / (|A|+|B|)` per class `k >= 1`; both empty counts as 1.
pub fn dice_score(pred: &DenseMask, gold: &DenseMask) -> Result<DiceScores> {
    if (pred.classes(), pred.height(), pred.width())
        != (gold.classes(), gold.height(), gold.width())
    {
        return Err(Error::shape(
            "dice",
            format!(
                "prediction K={} {}x{} vs gold K={} {}x{}",
                pred.classes(),
                pred.height(),
                pred.width(),
                gold.classes(),
                gold.height(),
                gold.width()
            ),
        ));
    }
    let k = pred.classes();
    if k < 2 {
        return Err(Error::Invalid(
            "dice needs at least one foreground class".into(),
        ));
    }
    let mut inter = vec![0usize; k];
    let mut a = vec![0usize; k];
    let mut b = vec![0usize; k];
    for (&p, &g) in pred.data().iter().zip(gold.data()) {
        a[p as usize] += 1;
        b[g as usize] += 1;
        if p == g {
            inter[p as usize] += 1;
        }
    }
    let per_class: Vec<f64> = (1..k)
        .map(|c| {
            if a[c] + b[c] == 0 {
                1.0
            } else {
                2.0 * inter[c] as f64 / (a[c] + b[c]) as f64
            }
        })
        .collect();
    let mean = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok(DiceScores { per_class, mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let m = DenseMask::new(2, 4, 4, (0..16).map(|i| u8::from(i < 4)).collect()).unwrap();
        assert_eq!(dice_score(&m, &m).unwrap().mean, 1.0);
        let shifted = DenseMask::new(
            2,
            4,
            4,
            (0..16).map(|i| u8::from((2..6).contains(&i))).collect(),
        )
        .unwrap();
        assert_eq!(dice_score(&m, &shifted).unwrap().per_class, vec![0.5]);
        let far = DenseMask::new(2, 4, 4, (0..16).map(|i| u8::from(i >= 12)).collect()).unwrap();
        assert_eq!(dice_score(&m, &far).unwrap().mean, 0.0);
        let empty = DenseMask::new(2, 4, 4, vec![0; 16]).unwrap();
        assert_eq!(dice_score(&empty, &empty).unwrap().mean, 1.0);
        let other = DenseMask::new(2, 2, 8, vec![0; 16]).unwrap();
        assert!(dice_score(&empty, &other).is_err());
    }
}
