//! Synthetic cardiac-rings data, scribble synthesis, normalization and the
//! NST tensor file format.

pub mod dataset;
pub mod nst;
pub mod regions;
pub mod rings;
pub mod scribble;

pub use dataset::{build_dataset, load_manifest, load_sample, Manifest, ManifestEntry};
pub use rings::gen_rings_sample;
pub use scribble::{gen_scribble, ScribbleReport, DEFAULT_COVERAGE};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{CeTarget, Tensor};

/// Label value marking pixels without scribble annotation.
pub const UNLABELED: u8 = 255;

/// Sparse per-pixel class labels; [`UNLABELED`] outside the labeled set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScribbleLabel {
    classes: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ScribbleLabel {
    pub fn new(classes: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "scribble",
                format!(
                    "{height}x{width} needs {} values, got {}",
                    height * width,
                    data.len()
                ),
            ));
        }
        if classes == 0 || classes >= UNLABELED as usize {
            return Err(Error::Invalid(format!(
                "class count {classes} out of range"
            )));
        }
        if let Some(v) = data
            .iter()
            .find(|&&v| v != UNLABELED && v as usize >= classes)
        {
            return Err(Error::Invalid(format!("label {v} >= K={classes}")));
        }
        Ok(ScribbleLabel {
            classes,
            height,
            width,
            data,
        })
    }

    pub fn unlabeled(classes: usize, height: usize, width: usize) -> Self {
        ScribbleLabel {
            classes,
            height,
            width,
            data: vec![UNLABELED; height * width],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.data[i] != UNLABELED
    }

    pub fn labeled_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != UNLABELED).count()
    }

    /// Labeled pixel count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &v in &self.data {
            if v != UNLABELED {
                c[v as usize] += 1;
            }
        }
        c
    }

    /// Fraction of each class's region (in `mask`) that carries a label.
    pub fn coverage(&self, mask: &DenseMask) -> Vec<f64> {
        let lab = self.class_counts();
        let tot = mask.class_counts();
        lab.iter()
            .zip(&tot)
            .map(|(&l, &t)| if t == 0 { 0.0 } else { l as f64 / t as f64 })
            .collect()
    }

    /// One-hot target with weight 1 on labeled pixels.
    pub fn to_target(&self) -> CeTarget {
        let hw = self.height * self.width;
        let mut probs = vec![0.0; self.classes * hw];
        let mut weight = vec![0.0; hw];
        for (i, &v) in self.data.iter().enumerate() {
            if v != UNLABELED {
                probs[v as usize * hw + i] = 1.0;
                weight[i] = 1.0;
            }
        }
        CeTarget {
            classes: self.classes,
            height: self.height,
            width: self.width,
            probs,
            weight,
        }
    }
}

/// Dense ground-truth mask, used only for evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenseMask {
    classes: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl DenseMask {
    pub fn new(classes: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "mask",
                format!(
                    "{height}x{width} needs {} values, got {}",
                    height * width,
                    data.len()
                ),
            ));
        }
        if classes == 0 || classes > 255 {
            return Err(Error::Invalid(format!(
                "class count {classes} out of range"
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v as usize >= classes) {
            return Err(Error::Invalid(format!("mask value {v} >= K={classes}")));
        }
        Ok(DenseMask {
            classes,
            height,
            width,
            data,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &v in &self.data {
            c[v as usize] += 1;
        }
        c
    }

    pub fn to_one_hot(&self) -> Tensor {
        let hw = self.height * self.width;
        let mut d = vec![0.0; self.classes * hw];
        for (i, &v) in self.data.iter().enumerate() {
            d[v as usize * hw + i] = 1.0;
        }
        Tensor::new([self.classes, self.height, self.width], d).expect("sizes agree")
    }

    /// Every pixel labeled with its mask class.
    pub fn to_scribble(&self) -> ScribbleLabel {
        ScribbleLabel {
            classes: self.classes,
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Parse(format!("unknown split {s:?}"))),
        }
    }
}

/// One normalized training / evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[1, H, W]`, zero mean and unit variance.
    pub image: Tensor,
    pub scribble: ScribbleLabel,
    pub mask: DenseMask,
    pub split: Split,
}

/// `(x - mean) / std` over all pixels (population std).
pub fn normalize_image(raw: &Tensor) -> Result<Tensor> {
    let n = raw.numel();
    if n == 0 {
        return Err(Error::Invalid("cannot normalize an empty image".into()));
    }
    let mean = raw.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let var = raw
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    if var.is_nan() || var <= 0.0 || var.is_infinite() {
        return Err(Error::Invalid("image has zero variance".into()));
    }
    let sd = var.sqrt();
    Ok(raw.map(|v| ((v as f64 - mean) / sd) as f32))
}
