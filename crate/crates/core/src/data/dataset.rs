//! On-disk dataset: NST files under `images/`, `scribbles/`, `masks/` plus
//! a `manifest.tsv` index.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::nst::{self, NstValue};
use super::rings::{gen_rings_sample, RINGS_CLASSES};
use super::scribble::gen_scribble;
use super::{normalize_image, DenseMask, Sample, ScribbleLabel, Split};
use crate::error::{Error, Result};
use crate::tensor::RngStream;

pub const MANIFEST_FILE: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "id\tsplit\timage\tscribble\tmask";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    /// Paths relative to the dataset root.
    pub image: String,
    pub scribble: String,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Ids whose scribble targets had to be shrunk.
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for e in &self.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.id, e.split, e.image, e.scribble, e.mask
            ));
        }
        s
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == MANIFEST_HEADER => {}
            other => return Err(Error::Parse(format!("manifest header {other:?}"))),
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(Error::Parse(format!(
                    "manifest line {}: {} fields",
                    n + 2,
                    f.len()
                )));
            }
            entries.push(ManifestEntry {
                id: f[0].to_string(),
                split: f[1].parse()?,
                image: f[2].to_string(),
                scribble: f[3].to_string(),
                mask: f[4].to_string(),
            });
        }
        Ok(Manifest {
            entries,
            warnings: Vec::new(),
        })
    }
}

/// Split sizes by 70/15/15 proportion; the test split takes the remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (0.70 * n as f64).round() as usize;
    let val = (0.15 * n as f64).round() as usize;
    (train, val, n - train - val)
}

pub fn sample_id(i: usize) -> String {
    format!("case{i:04}")
}

/// Generates `n` rings samples with scribbles and writes them under `out_dir`.
pub fn build_dataset(
    out_dir: &Path,
    n: usize,
    size: usize,
    seed: u64,
    coverage_targets: &[f64],
) -> Result<Manifest> {
    if n < 10 {
        return Err(Error::Invalid(format!("dataset needs n >= 10, got {n}")));
    }
    for sub in ["images", "scribbles", "masks"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let root = RngStream::new(seed, 0);
    let mut order: Vec<usize> = (0..n).collect();
    root.derive("split", &[]).shuffle(&mut order);
    let (n_train, n_val, _) = split_sizes(n);
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let results: Vec<Result<(ManifestEntry, bool)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let id = sample_id(i);
            let (raw, mask) =
                gen_rings_sample(&root.derive("rings", &[i as u64]), size, RINGS_CLASSES)?;
            let image = normalize_image(&raw)?;
            let (scribble, rep) = gen_scribble(
                &mask,
                &root.derive("scribble", &[i as u64]),
                coverage_targets,
            )?;
            let entry = ManifestEntry {
                image: format!("images/{id}.nst"),
                scribble: format!("scribbles/{id}.nst"),
                mask: format!("masks/{id}.nst"),
                split: splits[i],
                id,
            };
            nst::write_nst(&out_dir.join(&entry.image), &NstValue::F32(image))?;
            nst::write_nst(
                &out_dir.join(&entry.scribble),
                &NstValue::U8 {
                    shape: vec![size, size],
                    data: scribble.data().to_vec(),
                },
            )?;
            nst::write_nst(
                &out_dir.join(&entry.mask),
                &NstValue::U8 {
                    shape: vec![size, size],
                    data: mask.data().to_vec(),
                },
            )?;
            Ok((entry, rep.any_warning()))
        })
        .collect();
    let mut manifest = Manifest::default();
    for r in results {
        let (entry, warned) = r?;
        if warned {
            manifest.warnings.push(entry.id.clone());
        }
        manifest.entries.push(entry);
    }
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_tsv()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Manifest::parse_tsv(&text)
}

fn load_labels(path: &Path, expect: &[usize]) -> Result<Vec<u8>> {
    let (shape, data) = nst::read_u8(path)?;
    if shape != expect {
        return Err(Error::shape(
            "load_sample",
            format!("{}: shape {shape:?}, image is {expect:?}", path.display()),
        ));
    }
    Ok(data)
}

/// Loads one sample; all label maps use `K = 4`.
pub fn load_sample(dir: &Path, entry: &ManifestEntry) -> Result<Sample> {
    let image = nst::read_f32(&dir.join(&entry.image))?;
    let (h, w) = match image.shape() {
        [1, h, w] => (*h, *w),
        s => return Err(Error::shape("load_sample", format!("image shape {s:?}"))),
    };
    let scribble = ScribbleLabel::new(
        RINGS_CLASSES,
        h,
        w,
        load_labels(&dir.join(&entry.scribble), &[h, w])?,
    )?;
    let mask = DenseMask::new(
        RINGS_CLASSES,
        h,
        w,
        load_labels(&dir.join(&entry.mask), &[h, w])?,
    )?;
    Ok(Sample {
        id: entry.id.clone(),
        image,
        scribble,
        mask,
        split: entry.split,
    })
}

/// Loads every sample of one split.
pub fn load_split(dir: &Path, manifest: &Manifest, split: Split) -> Result<Vec<Sample>> {
    manifest.split(split).map(|e| load_sample(dir, e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_proportions() {
        assert_eq!(split_sizes(200), (140, 30, 30));
        assert_eq!(split_sizes(20), (14, 3, 3));
        assert_eq!(split_sizes(10), (7, 2, 1));
    }

    #[test]
    fn manifest_tsv_round_trip() {
        let m = Manifest {
            entries: vec![ManifestEntry {
                id: "case0001".into(),
                split: Split::Val,
                image: "images/case0001.nst".into(),
                scribble: "scribbles/case0001.nst".into(),
                mask: "masks/case0001.nst".into(),
            }],
            warnings: vec![],
        };
        let text = m.to_tsv();
        assert!(text.starts_with("id\tsplit\timage\tscribble\tmask\n"));
        assert_eq!(Manifest::parse_tsv(&text).unwrap(), m);
        assert!(Manifest::parse_tsv("bogus\n").is_err());
    }

    #[test]
    fn rejects_tiny_dataset() {
        let dir = tempfile::tempdir().unwrap();
        assert!(build_dataset(dir.path(), 5, 32, 0, &super::super::DEFAULT_COVERAGE).is_err());
    }
}
