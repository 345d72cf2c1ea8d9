//! Scribble synthesis by random walks inside eroded class regions.

use super::regions::{components, largest, neighbors4};
use super::{DenseMask, ScribbleLabel, UNLABELED};
use crate::error::{Error, Result};
use crate::tensor::RngStream;

/// Per-class scribble coverage targets (background, RV, MYO, LV).
pub const DEFAULT_COVERAGE: [f64; 4] = [0.034, 0.277, 0.313, 0.241];

/// Probability of continuing in the current direction at each step.
const MOMENTUM: f64 = 0.75;

/// What [`gen_scribble`] achieved per class.
#[derive(Clone, Debug, PartialEq)]
pub struct ScribbleReport {
    /// Labeled fraction of each class region.
    pub achieved: Vec<f64>,
    /// Set for classes whose target did not fit inside the eroded region.
    pub shrunk: Vec<bool>,
}

impl ScribbleReport {
    pub fn any_warning(&self) -> bool {
        self.shrunk.iter().any(|&s| s)
    }
}

/// One connected scribble per class, strictly inside the class region with a
/// one-pixel erosion margin, grown until the class's labeled fraction reaches
/// its target.
pub fn gen_scribble(
    mask: &DenseMask,
    rng: &RngStream,
    coverage_targets: &[f64],
) -> Result<(ScribbleLabel, ScribbleReport)> {
    let k = mask.classes();
    if coverage_targets.len() != k {
        return Err(Error::Invalid(format!(
            "{} coverage targets for K={k}",
            coverage_targets.len()
        )));
    }
    if let Some(t) = coverage_targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Invalid(format!("coverage target {t} outside [0,1]")));
    }
    let counts = mask.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Invalid(format!("class {c} absent from mask")));
    }
    let (h, w) = (mask.height(), mask.width());
    let m = mask.data();
    let mut label = vec![UNLABELED; h * w];
    let mut achieved = vec![0.0; k];
    let mut shrunk = vec![false; k];

    for class in 0..k {
        let cls = class as u8;
        let mut r = rng.derive("scribble-class", &[class as u64]);
        let eroded: Vec<bool> = (0..h * w)
            .map(|p| m[p] == cls && interior(p, h, w) && neighbors4(p, h, w).all(|q| m[q] == cls))
            .collect();
        let target = ((coverage_targets[class] * counts[class] as f64).round() as usize).max(1);
        let comps = components(h, w, |p| eroded[p]);
        let Some(region) = largest(&comps) else {
            shrunk[class] = true;
            continue;
        };
        let goal = if region.pixels.len() < target {
            shrunk[class] = true;
            region.pixels.len()
        } else {
            target
        };

        let mut pos = region.pixels[r.below(region.pixels.len())];
        label[pos] = cls;
        let mut labeled = 1;
        let mut dir = r.below(4);
        let cap = 400 * goal + 10_000;
        let mut steps = 0;
        while labeled < goal && steps < cap {
            steps += 1;
            if r.uniform() >= MOMENTUM {
                dir = r.below(4);
            }
            let next = match step(pos, dir, h, w).filter(|&q| eroded[q]) {
                Some(q) => Some(q),
                None => {
                    let opts: Vec<usize> = (0..4)
                        .filter(|&d| step(pos, d, h, w).is_some_and(|q| eroded[q]))
                        .collect();
                    if opts.is_empty() {
                        None
                    } else {
                        dir = opts[r.below(opts.len())];
                        step(pos, dir, h, w)
                    }
                }
            };
            let Some(q) = next else { break };
            pos = q;
            if label[q] == UNLABELED {
                label[q] = cls;
                labeled += 1;
            }
        }
        if labeled < target {
            shrunk[class] = true;
        }
        achieved[class] = labeled as f64 / counts[class] as f64;
    }
    let scribble = ScribbleLabel::new(k, h, w, label)?;
    Ok((scribble, ScribbleReport { achieved, shrunk }))
}

fn interior(p: usize, h: usize, w: usize) -> bool {
    let (r, c) = (p / w, p % w);
    r > 0 && c > 0 && r + 1 < h && c + 1 < w
}

fn step(p: usize, dir: usize, h: usize, w: usize) -> Option<usize> {
    let (r, c) = (p / w, p % w);
    match dir {
        0 if r > 0 => Some(p - w),
        1 if c + 1 < w => Some(p + 1),
        2 if r + 1 < h => Some(p + w),
        3 if c > 0 => Some(p - 1),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_mask() -> DenseMask {
        // 12x12: class 1 is a 6x6 block in the middle
        let mut d = vec![0u8; 144];
        for r in 3..9 {
            for c in 3..9 {
                d[r * 12 + c] = 1;
            }
        }
        DenseMask::new(2, 12, 12, d).unwrap()
    }

    #[test]
    fn scribble_stays_inside_eroded_region() {
        let mask = square_mask();
        let (s, rep) = gen_scribble(&mask, &RngStream::new(1, 1), &[0.05, 0.3]).unwrap();
        for (i, &v) in s.data().iter().enumerate() {
            if v != UNLABELED {
                assert_eq!(v, mask.data()[i]);
                assert!(neighbors4(i, 12, 12).all(|q| mask.data()[q] == v));
            }
        }
        assert!(!rep.shrunk[1]);
        assert!((rep.achieved[1] - 11.0 / 36.0).abs() < 1e-12);
    }

    #[test]
    fn unreachable_target_shrinks_with_warning() {
        let mask = square_mask();
        // eroded 6x6 block is 4x4 = 16 pixels, far below 90% of 36
        let (s, rep) = gen_scribble(&mask, &RngStream::new(1, 1), &[0.05, 0.9]).unwrap();
        assert!(rep.shrunk[1]);
        assert!(rep.any_warning());
        assert_eq!(s.class_counts()[1], 16);
    }

    #[test]
    fn rejects_missing_class() {
        let mask = DenseMask::new(3, 4, 4, vec![0; 16]).unwrap();
        assert!(gen_scribble(&mask, &RngStream::new(0, 0), &[0.1, 0.1, 0.1]).is_err());
    }
}
