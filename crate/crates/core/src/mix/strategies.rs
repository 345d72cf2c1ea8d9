//! MixUp and CutMix, the non-saliency comparison strategies.

use rand_distr::{Beta, Distribution};

use crate::data::{ScribbleLabel, UNLABELED};
use crate::error::{Error, Result};
use crate::tensor::{CeTarget, MixField, RngStream, Tensor};

fn same_extent(
    x1: &Tensor,
    y1: &ScribbleLabel,
    x2: &Tensor,
    y2: &ScribbleLabel,
) -> Result<(usize, usize)> {
    let (h, w) = (y1.height(), y1.width());
    if x1.shape() != [1, h, w]
        || x2.shape() != x1.shape()
        || (y2.height(), y2.width()) != (h, w)
        || y1.classes() != y2.classes()
    {
        return Err(Error::shape(
            "mix",
            format!(
                "images {:?}/{:?}, labels {}x{}/{}x{}",
                x1.shape(),
                x2.shape(),
                h,
                w,
                y2.height(),
                y2.width()
            ),
        ));
    }
    Ok((h, w))
}

/// Soft labels for `lambda * y1 + (1 - lambda) * y2`: a pixel is labeled if
/// either source labels it; its target is the normalized weighted one-hot sum
/// and its weight is the available coefficient mass.
pub fn mixup_target(lambda: f64, y1: &ScribbleLabel, y2: &ScribbleLabel) -> Result<CeTarget> {
    if (y1.classes(), y1.height(), y1.width()) != (y2.classes(), y2.height(), y2.width()) {
        return Err(Error::shape("mixup", "label maps differ in shape"));
    }
    let (k, hw) = (y1.classes(), y1.height() * y1.width());
    let mut probs = vec![0.0f32; k * hw];
    let mut weight = vec![0.0f32; hw];
    for p in 0..hw {
        let mut mass = 0.0;
        let mut acc = vec![0.0; k];
        for (lab, coef) in [(y1.data()[p], lambda), (y2.data()[p], 1.0 - lambda)] {
            if lab != UNLABELED && coef > 0.0 {
                acc[lab as usize] += coef;
                mass += coef;
            }
        }
        if mass > 0.0 {
            for c in 0..k {
                probs[c * hw + p] = (acc[c] / mass) as f32;
            }
            weight[p] = mass as f32;
        }
    }
    Ok(CeTarget {
        classes: k,
        height: y1.height(),
        width: y1.width(),
        probs,
        weight,
    })
}

/// MixUp with a fixed coefficient.
pub fn mixup_with_lambda(
    lambda: f64,
    x1: &Tensor,
    y1: &ScribbleLabel,
    x2: &Tensor,
    y2: &ScribbleLabel,
) -> Result<(Tensor, CeTarget, MixField)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Invalid(format!(
            "mixup coefficient {lambda} outside [0,1]"
        )));
    }
    let (h, w) = same_extent(x1, y1, x2, y2)?;
    let field = MixField::identity(h, w, lambda as f32);
    let x = field.apply(x1, x2)?;
    Ok((x, mixup_target(lambda, y1, y2)?, field))
}

/// MixUp with `lambda ~ Beta(alpha, alpha)`; returns the coefficient too.
pub fn mixup_linear(
    rng: &mut RngStream,
    x1: &Tensor,
    y1: &ScribbleLabel,
    x2: &Tensor,
    y2: &ScribbleLabel,
    alpha: f64,
) -> Result<(Tensor, CeTarget, MixField, f64)> {
    let beta =
        Beta::new(alpha, alpha).map_err(|e| Error::Invalid(format!("mixup alpha {alpha}: {e}")))?;
    let lambda = beta.sample(rng);
    let (x, t, f) = mixup_with_lambda(lambda, x1, y1, x2, y2)?;
    Ok((x, t, f, lambda))
}

/// Axis-aligned rectangle in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.top && r < self.top + self.height && c >= self.left && c < self.left + self.width
    }

    /// Field copying the rectangle from the second source, the rest from the first.
    pub fn field(&self, h: usize, w: usize) -> MixField {
        let mut f = MixField::identity(h, w, 1.0);
        for p in 0..h * w {
            if self.contains(p / w, p % w) {
                f.weight_a[p] = 0.0;
                f.weight_b[p] = 1.0;
            }
        }
        f
    }
}

/// Pastes `rect` of `(x2, y2)` into `(x1, y1)`; labels copy verbatim.
pub fn cutmix_with_rect(
    rect: Rect,
    x1: &Tensor,
    y1: &ScribbleLabel,
    x2: &Tensor,
    y2: &ScribbleLabel,
) -> Result<(Tensor, ScribbleLabel, MixField)> {
    let (h, w) = same_extent(x1, y1, x2, y2)?;
    if rect.top + rect.height > h || rect.left + rect.width > w {
        return Err(Error::Invalid(format!(
            "rectangle {rect:?} exceeds {h}x{w}"
        )));
    }
    let field = rect.field(h, w);
    let x = field.apply(x1, x2)?;
    let labels = (0..h * w)
        .map(|p| {
            if field.weight_b[p] == 1.0 {
                y2.data()[p]
            } else {
                y1.data()[p]
            }
        })
        .collect();
    Ok((x, ScribbleLabel::new(y1.classes(), h, w, labels)?, field))
}

/// CutMix with area fraction `~ U(0.1, 0.5)` and a uniformly placed rectangle
/// of the image's aspect ratio.
pub fn cutmix(
    rng: &mut RngStream,
    x1: &Tensor,
    y1: &ScribbleLabel,
    x2: &Tensor,
    y2: &ScribbleLabel,
) -> Result<(Tensor, ScribbleLabel, MixField, Rect)> {
    let (h, w) = same_extent(x1, y1, x2, y2)?;
    let frac = rng.range(0.1, 0.5);
    let rh = ((h as f64 * frac.sqrt()).round() as usize).min(h);
    let rw = ((w as f64 * frac.sqrt()).round() as usize).min(w);
    let rect = Rect {
        top: rng.below(h - rh + 1),
        left: rng.below(w - rw + 1),
        height: rh,
        width: rw,
    };
    let (x, y, f) = cutmix_with_rect(rect, x1, y1, x2, y2)?;
    Ok((x, y, f, rect))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> (Tensor, ScribbleLabel, Tensor, ScribbleLabel) {
        let x1 = Tensor::from_fn([1, 4, 4], |i| i as f32);
        let x2 = Tensor::from_fn([1, 4, 4], |i| -(i as f32));
        let y1 = ScribbleLabel::new(
            3,
            4,
            4,
            (0..16).map(|i| if i < 8 { 1 } else { UNLABELED }).collect(),
        )
        .unwrap();
        let y2 = ScribbleLabel::new(
            3,
            4,
            4,
            (0..16).map(|i| if i % 2 == 0 { 1 } else { 2 }).collect(),
        )
        .unwrap();
        (x1, y1, x2, y2)
    }

    #[test]
    fn mixup_rules() {
        let (x1, y1, x2, y2) = pair();
        let (x, t, _) = mixup_with_lambda(1.0, &x1, &y1, &x2, &y2).unwrap();
        assert_eq!(x, x1);
        assert_eq!(t, y1.to_target());

        let (_, t, _) = mixup_with_lambda(0.5, &x1, &y1, &x2, &y2).unwrap();
        // pixel 0: both class 1 -> full weight on class 1
        assert_eq!((t.probs[16], t.weight[0]), (1.0, 1.0));
        // pixel 1: class 1 and class 2 at half each
        assert_eq!((t.probs[17], t.probs[33], t.weight[1]), (0.5, 0.5, 1.0));

        let y2u = ScribbleLabel::unlabeled(3, 4, 4);
        let (_, t, _) = mixup_with_lambda(0.5, &x1, &y1, &x2, &y2u).unwrap();
        // only source 1 labels pixel 0: one-hot, weight 0.5
        assert_eq!((t.probs[16], t.weight[0]), (1.0, 0.5));
        assert_eq!(t.labeled_count(), 8);
    }

    #[test]
    fn cutmix_extremes_and_region() {
        let (x1, y1, x2, y2) = pair();
        let none = Rect {
            top: 0,
            left: 0,
            height: 0,
            width: 0,
        };
        let (x, y, _) = cutmix_with_rect(none, &x1, &y1, &x2, &y2).unwrap();
        assert_eq!((x, y), (x1.clone(), y1.clone()));
        let full = Rect {
            top: 0,
            left: 0,
            height: 4,
            width: 4,
        };
        let (x, y, _) = cutmix_with_rect(full, &x1, &y1, &x2, &y2).unwrap();
        assert_eq!((x, y), (x2.clone(), y2.clone()));
        let r = Rect {
            top: 1,
            left: 2,
            height: 2,
            width: 1,
        };
        let (x, y, _) = cutmix_with_rect(r, &x1, &y1, &x2, &y2).unwrap();
        for p in 0..16 {
            let inside = p == 6 || p == 10;
            assert_eq!(
                x.data()[p],
                if inside { x2.data()[p] } else { x1.data()[p] }
            );
            assert_eq!(
                y.data()[p],
                if inside { y2.data()[p] } else { y1.data()[p] }
            );
        }
    }

    #[test]
    fn sampled_cutmix_area_in_range() {
        let (x1, y1, x2, y2) = pair();
        let mut r = RngStream::new(3, 0);
        for _ in 0..20 {
            let (_, _, _, rect) = cutmix(&mut r, &x1, &y1, &x2, &y2).unwrap();
            assert!(rect.top + rect.height <= 4 && rect.left + rect.width <= 4);
        }
        let (_, _, _, lam) = mixup_linear(&mut r, &x1, &y1, &x2, &y2, 1.0).unwrap();
        assert!((0.0..=1.0).contains(&lam));
        assert!(mixup_linear(&mut r, &x1, &y1, &x2, &y2, 0.0).is_err());
    }
}
