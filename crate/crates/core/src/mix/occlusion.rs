use std::fmt;
use std::str::FromStr;

use crate::data::{ScribbleLabel, UNLABELED};
use crate::error::{Error, Result};
use crate::tensor::{chw, CeTarget, RngStream, Tensor};

/// Default occluder side as a fraction of the shorter image extent.
pub const DEFAULT_SIDE_FRAC: f64 = 0.15;

/// How occluded label pixels are supervised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OcclusionLabel {
    /// Occluded pixels become labeled background.
    #[default]
    Background,
    /// Occluded pixels drop out of the labeled set.
    Zero,
}

impl fmt::Display for OcclusionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OcclusionLabel::Background => "background",
            OcclusionLabel::Zero => "zero",
        })
    }
}

impl FromStr for OcclusionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "background" => Ok(OcclusionLabel::Background),
            "zero" => Ok(OcclusionLabel::Zero),
            _ => Err(Error::Parse(format!(
                "occlusion label mode {s:?}, expected background|zero"
            ))),
        }
    }
}

/// Binary raster of a rotated rectangle, clipped to the image.
#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionMask {
    height: usize,
    width: usize,
    raster: Vec<u8>,
    /// `(x, y)` in pixel units; pixel `(r, c)` has its center at `(c + 0.5, r + 0.5)`.
    pub center: (f64, f64),
    pub rect_width: f64,
    pub rect_height: f64,
    /// Radians.
    pub angle: f64,
}

impl OcclusionMask {
    /// Rasterizes by pixel-center inclusion.
    pub fn rasterize(
        height: usize,
        width: usize,
        center: (f64, f64),
        rect_width: f64,
        rect_height: f64,
        angle: f64,
    ) -> Self {
        let mut raster = vec![0u8; height * width];
        if rect_width > 0.0 && rect_height > 0.0 {
            let (s, c) = angle.sin_cos();
            for r in 0..height {
                for col in 0..width {
                    let dx = col as f64 + 0.5 - center.0;
                    let dy = r as f64 + 0.5 - center.1;
                    let u = dx * c + dy * s;
                    let v = -dx * s + dy * c;
                    if u.abs() <= rect_width / 2.0 && v.abs() <= rect_height / 2.0 {
                        raster[r * width + col] = 1;
                    }
                }
            }
        }
        OcclusionMask {
            height,
            width,
            raster,
            center,
            rect_width,
            rect_height,
            angle,
        }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::rasterize(height, width, (0.0, 0.0), 0.0, 0.0, 0.0)
    }

    /// Mask from an explicit raster; params are left at zero.
    pub fn from_raster(height: usize, width: usize, raster: Vec<u8>) -> Result<Self> {
        if raster.len() != height * width || raster.iter().any(|&v| v > 1) {
            return Err(Error::Invalid(
                "occlusion raster must be binary and H*W long".into(),
            ));
        }
        Ok(OcclusionMask {
            height,
            width,
            raster,
            center: (0.0, 0.0),
            rect_width: 0.0,
            rect_height: 0.0,
            angle: 0.0,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn raster(&self) -> &[u8] {
        &self.raster
    }

    pub fn occluded_count(&self) -> usize {
        self.raster.iter().filter(|&&v| v == 1).count()
    }

    /// `1 - O` as a float mask.
    pub fn keep(&self) -> Vec<f32> {
        self.raster.iter().map(|&v| 1.0 - v as f32).collect()
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        if (h, w) != (self.height, self.width) {
            return Err(Error::shape(
                "occlusion",
                format!("mask {}x{}, input {h}x{w}", self.height, self.width),
            ));
        }
        Ok(())
    }

    /// Zeroes occluded pixels in every channel of a `[C,H,W]` tensor.
    pub fn apply_image(&self, x: &Tensor) -> Result<Tensor> {
        let (_, h, w) = chw(x.shape(), "occlusion")?;
        self.check(h, w)?;
        let hw = h * w;
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            if self.raster[i % hw] == 1 {
                *v = 0.0;
            }
        }
        Ok(out)
    }

    pub fn apply_labels(&self, y: &ScribbleLabel, mode: OcclusionLabel) -> Result<ScribbleLabel> {
        self.check(y.height(), y.width())?;
        let fill = match mode {
            OcclusionLabel::Background => 0,
            OcclusionLabel::Zero => UNLABELED,
        };
        let data = y
            .data()
            .iter()
            .zip(&self.raster)
            .map(|(&v, &o)| if o == 1 { fill } else { v })
            .collect();
        ScribbleLabel::new(y.classes(), y.height(), y.width(), data)
    }

    /// Same rule on a soft target.
    pub fn apply_target(&self, t: &CeTarget, mode: OcclusionLabel) -> Result<CeTarget> {
        self.check(t.height, t.width)?;
        let hw = t.height * t.width;
        let mut out = t.clone();
        for p in (0..hw).filter(|&p| self.raster[p] == 1) {
            for k in 0..t.classes {
                out.probs[k * hw + p] = 0.0;
            }
            match mode {
                OcclusionLabel::Background => {
                    out.probs[p] = 1.0;
                    out.weight[p] = 1.0;
                }
                OcclusionLabel::Zero => out.weight[p] = 0.0,
            }
        }
        Ok(out)
    }
}

/// Square occluder with side `round(side_frac * min(H, W))`, uniform center,
/// angle uniform in `[0, pi)`.
pub fn sample_occlusion(
    rng: &mut RngStream,
    height: usize,
    width: usize,
    side_frac: f64,
) -> Result<OcclusionMask> {
    if !(side_frac > 0.0 && side_frac < 1.0) {
        return Err(Error::Invalid(format!(
            "side_frac must be in (0,1), got {side_frac}"
        )));
    }
    let side = (side_frac * height.min(width) as f64).round();
    let cx = rng.range(0.0, width as f64);
    let cy = rng.range(0.0, height as f64);
    let angle = rng.range(0.0, std::f64::consts::PI);
    Ok(OcclusionMask::rasterize(
        height,
        width,
        (cx, cy),
        side,
        side,
        angle,
    ))
}

/// `(1 - O) * x` and the occluded scribbles relabeled per `mode`.
pub fn apply_occlusion(
    mask: &OcclusionMask,
    x: &Tensor,
    y: &ScribbleLabel,
    mode: OcclusionLabel,
) -> Result<(Tensor, ScribbleLabel)> {
    Ok((mask.apply_image(x)?, mask.apply_labels(y, mode)?))
}
