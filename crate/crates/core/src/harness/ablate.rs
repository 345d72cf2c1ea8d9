use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::config::{MixStrategy, TrainConfig};
use super::train::{train, RunReport};
use crate::error::{Error, Result};

/// Which loss terms and augmentations an ablation row enables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowSpec {
    pub row: usize,
    pub mix: bool,
    pub con_global: bool,
    pub occlusion: bool,
    pub con_local: bool,
}

/// Rows 1-5: each adds one component to the previous row.
pub fn row_spec(row: usize) -> Result<RowSpec> {
    if !(1..=5).contains(&row) {
        return Err(Error::Invalid(format!(
            "ablation rows are 1..=5, got {row}"
        )));
    }
    Ok(RowSpec {
        row,
        mix: row >= 2,
        con_global: row >= 3,
        occlusion: row >= 4,
        con_local: row >= 5,
    })
}

/// The training config of one row, derived from `base`. Enabled terms keep
/// their weights from `base`; disabled ones get weight 0.
pub fn row_config(base: &TrainConfig, row: usize) -> Result<TrainConfig> {
    let spec = row_spec(row)?;
    let mut cfg = base.clone();
    if !spec.mix {
        cfg.strategy = MixStrategy::None;
        cfg.weights.mix = 0.0;
    } else if cfg.strategy == MixStrategy::None {
        cfg.strategy = MixStrategy::Puzzle;
    }
    if !spec.con_global {
        cfg.weights.con_global = 0.0;
    }
    cfg.occlusion = spec.occlusion;
    if !spec.con_local {
        cfg.weights.con_local = 0.0;
    }
    Ok(cfg)
}

/// Parses `1-5`, `1,5` or `3`.
pub fn parse_rows(s: &str) -> Result<Vec<usize>> {
    let mut rows = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        let bad = || Error::Parse(format!("row set {s:?}"));
        if let Some((a, b)) = part.split_once('-') {
            let (a, b): (usize, usize) = (
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            );
            rows.extend(a..=b);
        } else {
            rows.push(part.parse().map_err(|_| bad())?);
        }
    }
    for &r in &rows {
        row_spec(r)?;
    }
    rows.sort_unstable();
    rows.dedup();
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct AblationRun {
    pub spec: RowSpec,
    pub seed: u64,
    pub report: RunReport,
}

impl AblationRun {
    pub fn test_mean(&self) -> f64 {
        self.report.test.as_ref().map_or(f64::NAN, |t| t.mean)
    }
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
}

impl AblationReport {
    /// Seed-averaged test foreground Dice of one row.
    pub fn row_mean(&self, row: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.spec.row == row)
            .map(AblationRun::test_mean)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for run in &self.runs {
            let Some(t) = &run.report.test else { continue };
            if s.is_empty() {
                s = format!(
                    "row,seed,l_unmix,l_mix,l_con_g,occlusion,l_con_l,{}\n",
                    t.dice_header()
                );
            }
            let sp = run.spec;
            let _ = writeln!(
                s,
                "{},{},1,{},{},{},{},{}",
                sp.row,
                run.seed,
                u8::from(sp.mix),
                u8::from(sp.con_global),
                u8::from(sp.occlusion),
                u8::from(sp.con_local),
                t.summary_fields()
            );
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut rows: Vec<usize> = self.runs.iter().map(|r| r.spec.row).collect();
        rows.dedup();
        let mut s = String::from("row,seeds,mean_dice\n");
        for r in rows {
            let n = self.runs.iter().filter(|x| x.spec.row == r).count();
            let _ = writeln!(s, "{r},{n},{:.6}", self.row_mean(r).unwrap_or(f64::NAN));
        }
        s
    }
}

/// Trains every `(row, seed)` combination, in parallel across runs. Seeds
/// are `base.seed + i` for `i < n_seeds`; the dataset is shared.
pub fn ablate(
    base: &TrainConfig,
    rows: &[usize],
    n_seeds: usize,
    out: Option<&Path>,
) -> Result<AblationReport> {
    if n_seeds == 0 {
        return Err(Error::Invalid("need at least one seed".into()));
    }
    let mut jobs = Vec::new();
    for &row in rows {
        for i in 0..n_seeds as u64 {
            let mut cfg = row_config(base, row)?;
            cfg.seed = base.seed + i;
            jobs.push((row_spec(row)?, cfg));
        }
    }
    let runs = jobs
        .into_par_iter()
        .map(|(spec, cfg)| {
            let dir = out.map(|d| d.join(format!("row{}_seed{}", spec.row, cfg.seed)));
            let report = train(&cfg, dir.as_deref())?;
            Ok(AblationRun {
                spec,
                seed: cfg.seed,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = AblationReport { runs };
    if let Some(d) = out {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        let p = d.join("ablation.csv");
        fs::write(&p, report.to_csv()).map_err(|e| Error::io(&p, e))?;
        let p = d.join("ablation_summary.csv");
        fs::write(&p, report.summary_csv()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_rows() {
        let base = TrainConfig::default();
        let r1 = row_config(&base, 1).unwrap();
        assert_eq!(r1.strategy, MixStrategy::None);
        assert_eq!(
            (r1.weights.mix, r1.weights.con_global, r1.weights.con_local),
            (0.0, 0.0, 0.0)
        );
        assert!(!r1.occlusion);
        let r3 = row_config(&base, 3).unwrap();
        assert_eq!((r3.weights.con_global, r3.occlusion), (0.05, false));
        let r5 = row_config(&base, 5).unwrap();
        assert_eq!(r5.weights, base.weights);
        assert!(r5.occlusion);
        assert!(row_config(&base, 6).is_err());
    }

    #[test]
    fn row_sets() {
        assert_eq!(parse_rows("1-5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_rows("5,1").unwrap(), vec![1, 5]);
        assert!(parse_rows("0-2").is_err());
        assert!(parse_rows("x").is_err());
    }
}
