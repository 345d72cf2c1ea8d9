//! 4-connected component labeling on byte rasters.

use std::collections::VecDeque;

/// A 4-connected component: its pixels in BFS order and its first pixel in
/// scan order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub first: usize,
    pub pixels: Vec<usize>,
}

/// 4-connected components of the pixels where `member` holds, ordered by
/// their first pixel in scan order.
pub fn components(height: usize, width: usize, member: impl Fn(usize) -> bool) -> Vec<Component> {
    let n = height * width;
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if seen[start] || !member(start) {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(p) = queue.pop_front() {
            pixels.push(p);
            for q in neighbors4(p, height, width) {
                if !seen[q] && member(q) {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        out.push(Component {
            first: start,
            pixels,
        });
    }
    out
}

pub fn neighbors4(p: usize, height: usize, width: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (p / width, p % width);
    let up = (r > 0).then(|| p - width);
    let down = (r + 1 < height).then(|| p + width);
    let left = (c > 0).then(|| p - 1);
    let right = (c + 1 < width).then(|| p + 1);
    [up, left, right, down].into_iter().flatten()
}

/// The largest component; among equal sizes, the one whose first scan-order
/// pixel comes first.
pub fn largest(comps: &[Component]) -> Option<&Component> {
    let mut best: Option<&Component> = None;
    for c in comps {
        if best.is_none_or(|b| c.pixels.len() > b.pixels.len()) {
            best = Some(c);
        }
    }
    best
}
