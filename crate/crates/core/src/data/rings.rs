//! Synthetic short-axis "cardiac rings" images.
//!
//! Classes: 0 background, 1 RV crescent, 2 MYO annulus, 3 LV disk. The
//! background holds a body ellipse on dark air plus a few bright blobs with
//! blood-pool-like intensity, so intensity alone does not separate classes.

use rand_distr::{Distribution, Normal};

use super::regions::{components, largest};
use super::DenseMask;
use crate::error::{Error, Result};
use crate::tensor::{RngStream, Tensor};

pub const RINGS_CLASSES: usize = 4;

/// Standard deviation of the additive Gaussian noise.
pub const NOISE_SIGMA: f64 = 0.06;

const MIN_CLASS_PIXELS: usize = 20;
const MAX_ATTEMPTS: u64 = 64;

struct Geometry {
    cx: f64,
    cy: f64,
    r_lv: f64,
    r_out: f64,
    rvx: f64,
    rvy: f64,
    r_rv: f64,
}

/// Generates one raw (unnormalized) image and its dense mask.
pub fn gen_rings_sample(
    rng: &RngStream,
    size: usize,
    classes: usize,
) -> Result<(Tensor, DenseMask)> {
    if classes != RINGS_CLASSES {
        return Err(Error::Invalid(format!(
            "rings generator produces K=4 classes, got K={classes}"
        )));
    }
    if size < 32 || !size.is_multiple_of(4) {
        return Err(Error::Invalid(format!(
            "size must be >= 32 and divisible by 4, got {size}"
        )));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut r = rng.derive("rings-attempt", &[attempt]);
        let geo = sample_geometry(&mut r, size as f64);
        let mask = rasterize(&geo, size);
        if mask.class_counts().iter().all(|&c| c >= MIN_CLASS_PIXELS) {
            let image = render(&mut r, &geo, &mask, size);
            return Ok((image, mask));
        }
    }
    Err(Error::Invalid(format!(
        "no valid geometry within {MAX_ATTEMPTS} attempts at size {size}"
    )))
}

fn sample_geometry(r: &mut RngStream, s: f64) -> Geometry {
    let cx = s / 2.0 + r.range(-0.1, 0.1) * s;
    let cy = s / 2.0 + r.range(-0.1, 0.1) * s;
    let r_lv = r.range(0.085, 0.12) * s;
    let r_out = r_lv + r.range(0.055, 0.075) * s;
    let theta = r.range(0.8, 1.2) * std::f64::consts::PI;
    let d = r.range(0.5, 0.8) * r_out;
    let r_rv = r_out + r.range(0.05, 0.09) * s;
    Geometry {
        cx,
        cy,
        r_lv,
        r_out,
        rvx: cx + d * theta.cos(),
        rvy: cy + d * theta.sin(),
        r_rv,
    }
}

fn rasterize(g: &Geometry, size: usize) -> DenseMask {
    let mut data = vec![0u8; size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64, y as f64);
            let d = (px - g.cx).hypot(py - g.cy);
            let drv = (px - g.rvx).hypot(py - g.rvy);
            data[y * size + x] = if d < g.r_lv {
                3
            } else if d < g.r_out {
                2
            } else if drv < g.r_rv {
                1
            } else {
                0
            };
        }
    }
    // one 4-connected component per foreground class
    for k in 1..RINGS_CLASSES as u8 {
        let comps = components(size, size, |i| data[i] == k);
        if comps.len() > 1 {
            let keep = largest(&comps).map(|c| c.first);
            for c in comps.iter().filter(|c| Some(c.first) != keep) {
                for &p in &c.pixels {
                    data[p] = 0;
                }
            }
        }
    }
    DenseMask::new(RINGS_CLASSES, size, size, data).expect("values < 4")
}

fn render(r: &mut RngStream, g: &Geometry, mask: &DenseMask, size: usize) -> Tensor {
    let s = size as f64;
    let air = 0.05 + r.range(-0.02, 0.02);
    let tissue = 0.28 + r.range(-0.04, 0.04);
    let levels = [
        tissue,
        0.70 + r.range(-0.05, 0.05),
        0.12 + r.range(-0.03, 0.03),
        0.86 + r.range(-0.05, 0.05),
    ];
    // body ellipse
    let (bx, by) = (
        s / 2.0 + r.range(-0.05, 0.05) * s,
        s / 2.0 + r.range(-0.05, 0.05) * s,
    );
    let (ax, ay) = (r.range(0.42, 0.5) * s, r.range(0.36, 0.46) * s);
    // bright distractor blobs in the background, away from the heart
    let heart_r = (g.rvx - g.cx).hypot(g.rvy - g.cy) + g.r_rv;
    let n_blobs = 2 + r.below(3);
    let mut blobs = Vec::new();
    let mut tries = 0;
    while blobs.len() < n_blobs && tries < 200 {
        tries += 1;
        let rad = r.range(0.04, 0.08) * s;
        let x = r.range(0.0, s);
        let y = r.range(0.0, s);
        if (x - g.cx).hypot(y - g.cy) > heart_r + rad + 2.0 {
            blobs.push((x, y, rad, r.range(0.6, 0.9)));
        }
    }
    let (ga, gb, gc) = (r.range(-0.2, 0.2), r.range(-0.2, 0.2), r.range(0.0, 0.15));
    let phase = r.range(0.0, std::f64::consts::TAU);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");

    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64, y as f64);
            let k = mask.data()[y * size + x] as usize;
            let mut v = levels[k];
            if k == 0 {
                let e = ((px - bx) / ax).powi(2) + ((py - by) / ay).powi(2);
                if e > 1.0 {
                    v = air;
                }
                for &(ux, uy, rad, lvl) in &blobs {
                    if (px - ux).hypot(py - uy) < rad {
                        v = lvl;
                    }
                }
            }
            let u = px / s - 0.5;
            let w = py / s - 0.5;
            let bias = 1.0 + ga * u + gb * w + gc * (std::f64::consts::PI * (u + w) + phase).sin();
            v = v * bias + noise.sample(r);
            data.push(v as f32);
        }
    }
    Tensor::new([1, size, size], data).expect("sizes agree")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let r = RngStream::new(5, 3);
        let a = gen_rings_sample(&r, 64, 4).unwrap();
        let b = gen_rings_sample(&r, 64, 4).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.0), bits(&b.0));
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn rejects_bad_size() {
        let r = RngStream::new(0, 0);
        assert!(gen_rings_sample(&r, 30, 4).is_err());
        assert!(gen_rings_sample(&r, 66, 4).is_err());
        assert!(gen_rings_sample(&r, 64, 3).is_err());
    }
}
