use std::fs;
use std::path::{Path, PathBuf};

use super::config::{MixStrategy, TrainConfig};
use crate::data::nst::{write_nst, NstValue};
use crate::data::{dataset, ScribbleLabel, Split, UNLABELED};
use crate::error::{Error, Result};
use crate::mix::{
    apply_occlusion, compute_saliency, cutmix, mixup_linear, optimize_mix_plan, sample_occlusion,
    MixPlan,
};
use crate::segmentor::{load_checkpoint, SegmentorParams};
use crate::tensor::{RngStream, Tensor};

/// 8-bit binary PGM of a `[1,H,W]` or `[H,W]` tensor, linearly rescaled
/// from its own `[min, max]`.
pub fn to_pgm(t: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match t.shape() {
        [1, h, w] | [h, w] => (*h, *w),
        s => {
            return Err(Error::shape(
                "pgm",
                format!("expected one channel, got {s:?}"),
            ))
        }
    };
    let lo = t.data().iter().copied().fold(f32::INFINITY, f32::min);
    let hi = t.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    Ok(out)
}

/// Label map preview: unlabeled pixels black, classes spread over 64..=255.
pub fn labels_to_pgm(y: &ScribbleLabel) -> Vec<u8> {
    let k = y.classes().max(2);
    let mut out = format!("P5\n{} {}\n255\n", y.width(), y.height()).into_bytes();
    out.extend(y.data().iter().map(|&v| {
        if v == UNLABELED {
            0
        } else {
            (64 + v as usize * 191 / (k - 1)) as u8
        }
    }));
    out
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the inputs, the mixed and the occluded image of direction 1->2
/// with their labels (NST plus PGM previews), and a description of the mix.
/// Saliency comes from `ckpt` if given, else from a fresh seeded model.
pub fn mix_demo(
    data: &Path,
    out: &Path,
    seed: u64,
    strategy: MixStrategy,
    ckpt: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let manifest = dataset::load_manifest(data)?;
    let entries: Vec<_> = manifest.split(Split::Train).take(2).collect();
    if entries.len() < 2 {
        return Err(Error::Invalid("mix demo needs two training samples".into()));
    }
    let s1 = dataset::load_sample(data, entries[0])?;
    let s2 = dataset::load_sample(data, entries[1])?;
    let cfg = TrainConfig::default();
    let root = RngStream::new(seed, 0);
    let mut rng = root.derive("mix-demo", &[]);
    let (h, w) = (s1.scribble.height(), s1.scribble.width());

    let (xm, ym, description) = match strategy {
        MixStrategy::None => (s1.image.clone(), s1.scribble.clone(), "none\n".to_string()),
        MixStrategy::Puzzle => {
            let params = match ckpt {
                Some(p) => load_checkpoint(p)?,
                None => SegmentorParams::init(
                    s1.scribble.classes(),
                    cfg.base_channels,
                    &root.derive("init", &[]),
                )?,
            };
            let sal1 = compute_saliency(&params, &s1.image, &s1.scribble)?;
            let sal2 = compute_saliency(&params, &s2.image, &s2.scribble)?;
            let plan: MixPlan = optimize_mix_plan(&sal1, &sal2, &cfg.plan)?;
            (
                plan.apply(&s1.image, &s2.image)?,
                plan.apply_labels(&s1.scribble, &s2.scribble)?,
                plan.to_text(),
            )
        }
        MixStrategy::Mixup => {
            let (x, t, _, lam) = mixup_linear(
                &mut rng,
                &s1.image,
                &s1.scribble,
                &s2.image,
                &s2.scribble,
                1.0,
            )?;
            // hard preview of the soft target: dominant class where labeled
            let hw = h * w;
            let labels = (0..hw)
                .map(|p| {
                    if t.weight[p] == 0.0 {
                        return UNLABELED;
                    }
                    let mut best = 0;
                    for c in 1..t.classes {
                        if t.probs[c * hw + p] > t.probs[best * hw + p] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            (
                x,
                ScribbleLabel::new(t.classes, h, w, labels)?,
                format!("mixup lambda {lam}\n"),
            )
        }
        MixStrategy::Cutmix => {
            let (x, y, _, r) = cutmix(&mut rng, &s1.image, &s1.scribble, &s2.image, &s2.scribble)?;
            (
                x,
                y,
                format!(
                    "cutmix top {} left {} height {} width {}\n",
                    r.top, r.left, r.height, r.width
                ),
            )
        }
    };
    let (xo, yo) = if strategy == MixStrategy::None {
        (xm.clone(), ym.clone())
    } else {
        let occ = sample_occlusion(&mut rng, h, w, cfg.side_frac)?;
        apply_occlusion(&occ, &xm, &ym, cfg.occlusion_label)?
    };

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = Vec::new();
    let images = [
        ("x1", &s1.image),
        ("x2", &s2.image),
        ("xm12", &xm),
        ("xo12", &xo),
    ];
    for (name, t) in images {
        let p = out.join(format!("{name}.nst"));
        write_nst(&p, &NstValue::F32(t.clone()))?;
        files.push(p);
        let p = out.join(format!("{name}.pgm"));
        write_bytes(&p, &to_pgm(t)?)?;
        files.push(p);
    }
    let labels = [
        ("y1", &s1.scribble),
        ("y2", &s2.scribble),
        ("ym12", &ym),
        ("yo12", &yo),
    ];
    for (name, y) in labels {
        let p = out.join(format!("{name}.nst"));
        write_nst(
            &p,
            &NstValue::U8 {
                shape: vec![h, w],
                data: y.data().to_vec(),
            },
        )?;
        files.push(p);
        let p = out.join(format!("{name}.pgm"));
        write_bytes(&p, &labels_to_pgm(y))?;
        files.push(p);
    }
    let p = out.join("plan.txt");
    write_bytes(&p, description.as_bytes())?;
    files.push(p);
    Ok(files)
}
