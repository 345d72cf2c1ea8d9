use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{dataset, DenseMask, Sample, Split};
use crate::error::{Error, Result};
use crate::losses::dice_score;
use crate::segmentor::{forward, load_checkpoint, SegmentorParams};

/// Per-image Dice rows plus across-image summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub split: Split,
    pub ids: Vec<String>,
    /// `rows[i][k]` is the Dice of foreground class `k + 1` on image `i`.
    pub rows: Vec<Vec<f64>>,
    pub class_mean: Vec<f64>,
    pub class_std: Vec<f64>,
    /// Mean foreground Dice over images and classes.
    pub mean: f64,
}

impl EvalReport {
    fn from_rows(split: Split, ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Invalid(format!("{split} split is empty")));
        }
        let k = rows[0].len();
        let class_mean: Vec<f64> = (0..k)
            .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n as f64)
            .collect();
        let class_std = (0..k)
            .map(|c| {
                let m = class_mean[c];
                (rows.iter().map(|r| (r[c] - m).powi(2)).sum::<f64>() / n as f64).sqrt()
            })
            .collect();
        let mean = class_mean.iter().sum::<f64>() / k as f64;
        Ok(EvalReport {
            split,
            ids,
            rows,
            class_mean,
            class_std,
            mean,
        })
    }

    pub fn dice_header(&self) -> String {
        let mut cols: Vec<String> = (1..=self.class_mean.len())
            .map(|c| format!("dice_c{c}"))
            .collect();
        cols.push("mean".into());
        cols.join(",")
    }

    /// Class means and the foreground mean as CSV fields.
    pub fn summary_fields(&self) -> String {
        let mut f: Vec<String> = self.class_mean.iter().map(|v| format!("{v:.6}")).collect();
        f.push(format!("{:.6}", self.mean));
        f.join(",")
    }

    /// Header plus one row per image.
    pub fn to_csv(&self) -> String {
        let mut s = format!("id,{}\n", self.dice_header());
        for (id, r) in self.ids.iter().zip(&self.rows) {
            let vals: Vec<String> = r.iter().map(|v| format!("{v:.6}")).collect();
            let m = r.iter().sum::<f64>() / r.len() as f64;
            let _ = writeln!(s, "{id},{},{m:.6}", vals.join(","));
        }
        s
    }

    /// Human-readable `mean ± std` lines.
    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        for (c, (m, sd)) in self.class_mean.iter().zip(&self.class_std).enumerate() {
            let _ = writeln!(s, "class {}: {m:.6} ± {sd:.6}", c + 1);
        }
        let _ = writeln!(
            s,
            "mean foreground Dice ({} images): {:.6}",
            self.rows.len(),
            self.mean
        );
        s
    }
}

/// Argmax prediction of one image as a dense mask.
pub fn predict_mask(params: &SegmentorParams, sample: &Sample) -> Result<DenseMask> {
    let pred = forward(params, &sample.image)?;
    DenseMask::new(
        params.classes(),
        sample.mask.height(),
        sample.mask.width(),
        pred.hard_labels(),
    )
}

pub fn evaluate_params(
    params: &SegmentorParams,
    samples: &[Sample],
    split: Split,
) -> Result<EvalReport> {
    let rows: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| Ok(dice_score(&predict_mask(params, s)?, &s.mask)?.per_class))
        .collect::<Result<_>>()?;
    EvalReport::from_rows(split, samples.iter().map(|s| s.id.clone()).collect(), rows)
}

/// Loads a checkpoint and scores it on one split of a dataset.
pub fn evaluate(ckpt: &Path, data: &Path, split: Split) -> Result<EvalReport> {
    let params = load_checkpoint(ckpt)?;
    let manifest = dataset::load_manifest(data)?;
    let samples = dataset::load_split(data, &manifest, split)?;
    if samples.is_empty() {
        return Err(Error::Invalid(format!("{split} split is empty")));
    }
    if samples[0].scribble.classes() != params.classes() {
        return Err(Error::Invalid(format!(
            "checkpoint has K={}, dataset has K={}",
            params.classes(),
            samples[0].scribble.classes()
        )));
    }
    evaluate_params(&params, &samples, split)
}
