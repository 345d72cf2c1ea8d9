#![allow(dead_code)]

use std::path::Path;

use scribblemix::data::{build_dataset, DEFAULT_COVERAGE};
use scribblemix::mix::SaliencyMap;
use scribblemix::{RngStream, Tensor};

/// Writes a small rings dataset into `dir`.
pub fn tiny_dataset(dir: &Path, n: usize, seed: u64) {
    build_dataset(dir, n, 64, seed, &DEFAULT_COVERAGE).expect("dataset");
}

/// Saliency with per-block scale variation, so block sums differ a lot.
pub fn blocky_saliency(rng: &mut RngStream, h: usize, w: usize, block: usize) -> SaliencyMap {
    let (gh, gw) = (h / block, w / block);
    let scales: Vec<f64> = (0..gh * gw).map(|_| rng.uniform().powi(2) * 4.0).collect();
    let values = Tensor::from_fn([h, w], |i| {
        let (r, c) = (i / w, i % w);
        (scales[(r / block) * gw + c / block] * rng.uniform()) as f32
    });
    SaliencyMap::new(values).expect("saliency")
}

/// Softmax over the channel axis of a `[K, H, W]` logit buffer.
pub fn softmax_channels(logits: &[f64], k: usize, hw: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; logits.len()];
    for p in 0..hw {
        let m = (0..k)
            .map(|c| logits[c * hw + p])
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..k).map(|c| (logits[c * hw + p] - m).exp()).sum();
        for c in 0..k {
            out[c * hw + p] = ((logits[c * hw + p] - m).exp() / z) as f32;
        }
    }
    out
}

/// Per-pixel segmentor: softmax of `a_k * x + b_k` at every pixel.
pub struct PixelSegmentor {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PixelSegmentor {
    pub fn random(rng: &mut RngStream, k: usize) -> Self {
        Self {
            a: (0..k).map(|_| rng.range(-2.0, 2.0)).collect(),
            b: (0..k).map(|_| rng.range(-1.0, 1.0)).collect(),
        }
    }

    pub fn predict(&self, x: &Tensor) -> Tensor {
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let k = self.a.len();
        let hw = h * w;
        let mut logits = vec![0.0; k * hw];
        for c in 0..k {
            for p in 0..hw {
                logits[c * hw + p] = self.a[c] * x.data()[p] as f64 + self.b[c];
            }
        }
        Tensor::new([k, h, w], softmax_channels(&logits, k, hw)).unwrap()
    }
}

pub fn random_image(rng: &mut RngStream, h: usize, w: usize) -> Tensor {
    Tensor::from_fn([1, h, w], |_| rng.range(-1.5, 1.5) as f32)
}

/// Random `[K, H, W]` probabilities whose argmax forms blobs, salt noise and
/// some exact two-way ties.
pub fn blob_probs(rng: &mut RngStream, k: usize, h: usize, w: usize) -> Tensor {
    let mut lab = vec![0usize; h * w];
    for _ in 0..(3 + rng.below(6)) {
        let class = 1 + rng.below(k - 1);
        let (r0, c0) = (rng.below(h), rng.below(w));
        let (bh, bw) = (1 + rng.below(h / 2), 1 + rng.below(w / 2));
        for r in r0..(r0 + bh).min(h) {
            for c in c0..(c0 + bw).min(w) {
                lab[r * w + c] = class;
            }
        }
    }
    for l in lab.iter_mut() {
        if rng.uniform() < 0.08 {
            *l = rng.below(k);
        }
    }
    let hw = h * w;
    let mut probs = vec![0.0f32; k * hw];
    for p in 0..hw {
        let rest = 0.3 / (k - 1) as f32;
        for c in 0..k {
            probs[c * hw + p] = if c == lab[p] { 0.7 } else { rest };
        }
        if rng.uniform() < 0.05 {
            // exact tie between the winner and another class
            let other = (lab[p] + 1 + rng.below(k - 1)) % k;
            probs[lab[p] * hw + p] = 0.4;
            probs[other * hw + p] = 0.4;
            let left = 0.2 / (k - 2).max(1) as f32;
            for c in 0..k {
                if c != lab[p] && c != other {
                    probs[c * hw + p] = left;
                }
            }
        }
    }
    Tensor::new([k, h, w], probs).unwrap()
}

/// Reference for the largest-component target: lowest-index argmax, then
/// for each foreground class a recursive flood fill; every component but
/// the biggest (earliest in scan order on ties) turns into background.
pub fn oracle_largest_cc(probs: &Tensor) -> Vec<u8> {
    let (k, h, w) = (probs.shape()[0], probs.shape()[1], probs.shape()[2]);
    let hw = h * w;
    let d = probs.data();
    let mut lab: Vec<u8> = (0..hw)
        .map(|p| {
            let mut best = 0;
            for c in 0..k {
                if d[c * hw + p] > d[best * hw + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();

    #[allow(clippy::too_many_arguments)]
    fn fill(
        lab: &[u8],
        comp: &mut [i32],
        h: usize,
        w: usize,
        r: usize,
        c: usize,
        class: u8,
        id: i32,
    ) -> usize {
        if comp[r * w + c] >= 0 || lab[r * w + c] != class {
            return 0;
        }
        comp[r * w + c] = id;
        let mut n = 1;
        if r > 0 {
            n += fill(lab, comp, h, w, r - 1, c, class, id);
        }
        if r + 1 < h {
            n += fill(lab, comp, h, w, r + 1, c, class, id);
        }
        if c > 0 {
            n += fill(lab, comp, h, w, r, c - 1, class, id);
        }
        if c + 1 < w {
            n += fill(lab, comp, h, w, r, c + 1, class, id);
        }
        n
    }

    let original = lab.clone();
    for class in 1..k as u8 {
        let mut comp = vec![-1i32; hw];
        let mut sizes = Vec::new();
        for p in 0..hw {
            if original[p] == class && comp[p] < 0 {
                let id = sizes.len() as i32;
                sizes.push(fill(&original, &mut comp, h, w, p / w, p % w, class, id));
            }
        }
        if sizes.is_empty() {
            continue;
        }
        // ids are assigned in scan order, so the first maximum wins ties
        let mut keep = 0;
        for (i, &s) in sizes.iter().enumerate() {
            if s > sizes[keep] {
                keep = i;
            }
        }
        for p in 0..hw {
            if comp[p] >= 0 && comp[p] != keep as i32 {
                lab[p] = 0;
            }
        }
    }
    lab
}
