use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use super::config::{MixStrategy, TrainConfig};
use super::eval::{evaluate_params, EvalReport};
use crate::data::{dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::losses::{
    global_consistency_node, local_consistency_node, symmetric_ce_node, total_loss, LossBreakdown,
    LossTerms, MixedView,
};
use crate::mix::{
    cutmix, mixup_linear, optimize_mix_plan, sample_occlusion, OcclusionMask, SaliencyMap,
};
use crate::segmentor::{save_checkpoint, SegmentorParams};
use crate::tensor::{Adam, AdamState, CeReduction, CeTarget, Graph, NodeId, RngStream, Tensor};

/// One mixing direction prepared for the graph.
struct Direction {
    view: MixedView,
    image: Tensor,
    target: Arc<CeTarget>,
    describe: String,
}

/// Builds `x^o` and its target for the ordered pair `(a, b)`.
#[allow(clippy::too_many_arguments)]
fn build_direction(
    cfg: &TrainConfig,
    a: &Sample,
    b: &Sample,
    sal: Option<(&SaliencyMap, &SaliencyMap)>,
    rng: &mut RngStream,
) -> Result<Direction> {
    let (h, w) = (a.scribble.height(), a.scribble.width());
    let (field, image, target, describe) = match cfg.strategy {
        MixStrategy::Puzzle => {
            let (sa, sb) = sal.expect("puzzle strategy computes saliency");
            let plan = optimize_mix_plan(sa, sb, &cfg.plan)?;
            let image = plan.apply(&a.image, &b.image)?;
            let labels = plan.apply_labels(&a.scribble, &b.scribble)?;
            (plan.field(), image, labels.to_target(), plan.to_text())
        }
        MixStrategy::Mixup => {
            let (x, t, f, lam) = mixup_linear(
                rng,
                &a.image,
                &a.scribble,
                &b.image,
                &b.scribble,
                cfg.mixup_alpha,
            )?;
            (f, x, t, format!("mixup lambda {lam}\n"))
        }
        MixStrategy::Cutmix => {
            let (x, y, f, r) = cutmix(rng, &a.image, &a.scribble, &b.image, &b.scribble)?;
            (f, x, y.to_target(), format!("cutmix {r:?}\n"))
        }
        MixStrategy::None => unreachable!("no mixed branch without a strategy"),
    };
    let occ = if cfg.occlusion {
        sample_occlusion(rng, h, w, cfg.side_frac)?
    } else {
        OcclusionMask::empty(h, w)
    };
    let image = occ.apply_image(&image)?;
    let target = occ.apply_target(&target, cfg.occlusion_label)?;
    let describe = format!(
        "{describe}occlusion center ({:.3}, {:.3}) side {} angle {:.4}\n",
        occ.center.0, occ.center.1, occ.rect_width, occ.angle
    );
    Ok(Direction {
        view: MixedView::new(field, &occ)?,
        image,
        target: Arc::new(target),
        describe,
    })
}

fn scalar(g: &Graph<f32>, id: NodeId) -> Result<f64> {
    Ok(g.value(id).item()? as f64)
}

/// One optimization step on the pair `(s1, s2)`: both directions of mixing,
/// all four loss terms, backward, and an Adam update of `params`.
pub fn train_step(
    params: &mut SegmentorParams,
    state: &mut AdamState,
    s1: &Sample,
    s2: &Sample,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<LossBreakdown> {
    let w = cfg.weights;
    let mut rng = rng.clone();
    let mut g = Graph::<f32>::new();
    let att = params.attach(&mut g, true);
    let x1 = g.constant(s1.image.clone());
    let x2 = g.constant(s2.image.clone());
    let p1 = att.forward(&mut g, x1)?;
    let p2 = att.forward(&mut g, x2)?;
    let t1 = Arc::new(s1.scribble.to_target());
    let t2 = Arc::new(s2.scribble.to_target());

    let unmix = symmetric_ce_node(&mut g, p1, t1.clone(), p2, t2.clone(), cfg.ce_reduction)?;
    let mut terms = LossTerms {
        unmix: scalar(&g, unmix)?,
        unmix_labeled: t1.labeled_count() + t2.labeled_count(),
        ..LossTerms::default()
    };
    let mut parts = vec![g.scale(unmix, w.unmix as f32)];
    let mut dump = String::new();

    if cfg.strategy != MixStrategy::None && (w.mix > 0.0 || w.con_global > 0.0) {
        let sal = if cfg.strategy == MixStrategy::Puzzle {
            let c1 = g.partial_ce(p1, t1.clone(), CeReduction::Sum)?;
            let c2 = g.partial_ce(p2, t2.clone(), CeReduction::Sum)?;
            let both = g.add(c1, c2)?;
            g.backward_wrt(both, &[x1, x2])?;
            let grad_of = |id: NodeId| -> Vec<f32> {
                g.grad(id)
                    .map(<[f32]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; g.value(id).numel()])
            };
            let m1 = SaliencyMap::from_gradient(&grad_of(x1), s1.image.shape())?;
            let m2 = SaliencyMap::from_gradient(&grad_of(x2), s2.image.shape())?;
            Some((m1, m2))
        } else {
            None
        };
        let sal_ref = sal.as_ref().map(|(a, b)| (a, b));
        let d12 = build_direction(cfg, s1, s2, sal_ref, &mut rng)?;
        let d21 = build_direction(cfg, s2, s1, sal_ref.map(|(a, b)| (b, a)), &mut rng)?;
        dump = format!(
            "direction 1->2:\n{}direction 2->1:\n{}",
            d12.describe, d21.describe
        );

        let xo12 = g.constant(d12.image.clone());
        let xo21 = g.constant(d21.image.clone());
        let po12 = att.forward(&mut g, xo12)?;
        let po21 = att.forward(&mut g, xo21)?;
        let mix = symmetric_ce_node(
            &mut g,
            po12,
            d12.target.clone(),
            po21,
            d21.target.clone(),
            cfg.ce_reduction,
        )?;
        terms.mix = scalar(&g, mix)?;
        terms.mix_labeled = d12.target.labeled_count() + d21.target.labeled_count();
        if w.mix > 0.0 {
            parts.push(g.scale(mix, w.mix as f32));
        }
        let cg = global_consistency_node(
            &mut g,
            &d12.view,
            &d21.view,
            p1,
            p2,
            po12,
            po21,
            cfg.stopgrad,
            cfg.ncs,
        )?;
        terms.con_g = scalar(&g, cg)?;
        if w.con_global > 0.0 {
            parts.push(g.scale(cg, w.con_global as f32));
        }
    }

    let cl = local_consistency_node(&mut g, p1, p2, cfg.ncs)?;
    terms.con_l = scalar(&g, cl)?;
    if w.con_local > 0.0 {
        parts.push(g.scale(cl, w.con_local as f32));
    }

    let mut total = parts[0];
    for &p in &parts[1..] {
        total = g.add(total, p)?;
    }
    let breakdown = total_loss(&terms, &w);
    if !g.value(total).all_finite() || !breakdown.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss {breakdown:?}\n{dump}"
        )));
    }
    g.backward_wrt(total, &att.ids)?;
    let grads = params.collect_grads(&g, &att);
    drop(g);
    Adam::with_lr(cfg.lr as f32).step(params.tensors_mut(), &grads, state)?;
    if !params.all_finite() {
        return Err(Error::NonFinite(format!(
            "parameters after step {breakdown:?}\n{dump}"
        )));
    }
    Ok(breakdown)
}

/// Per-epoch mean of the step breakdowns plus validation Dice.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub val_dice: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub seed: u64,
    pub config: String,
    pub trace: Vec<EpochRecord>,
    /// Every step's breakdown, in order.
    pub steps: Vec<LossBreakdown>,
    pub best_epoch: usize,
    pub val: Option<EvalReport>,
    pub test: Option<EvalReport>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("epoch,unmix,mix,con_g,con_l,total,val_dice\n");
        for r in &self.trace {
            let l = &r.loss;
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                r.epoch,
                l.unmix,
                l.mix,
                l.con_g,
                l.con_l,
                l.total,
                r.val_dice.map_or(String::new(), |d| format!("{d:.6}"))
            );
        }
        s
    }

    pub fn steps_csv(&self) -> String {
        let mut s = String::from("step,unmix,mix,con_g,con_l,total,unmix_labeled,mix_labeled\n");
        for (i, l) in self.steps.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
                l.unmix, l.mix, l.con_g, l.con_l, l.total, l.unmix_labeled, l.mix_labeled
            );
        }
        s
    }

    /// Per-split Dice summary: one row per evaluated split.
    pub fn summary_csv(&self) -> String {
        let mut s = String::new();
        for (name, rep) in [("val", &self.val), ("test", &self.test)] {
            if let Some(r) = rep {
                if s.is_empty() {
                    s.push_str("split,");
                    s.push_str(&r.dice_header());
                    s.push('\n');
                }
                let _ = writeln!(s, "{name},{}", r.summary_fields());
            }
        }
        s
    }
}

/// Shuffle-then-adjacent pairing; an odd leftover pairs with the first id.
pub fn epoch_pairs(n: usize, rng: &mut RngStream) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut pairs: Vec<(usize, usize)> = order.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    if n % 2 == 1 {
        let last = order[n - 1];
        if n == 1 {
            pairs.push((last, last));
        } else {
            pairs.push((last, order[0]));
        }
    }
    pairs
}

fn mean_breakdown(steps: &[LossBreakdown]) -> LossBreakdown {
    let n = steps.len().max(1) as f64;
    let mut m = LossBreakdown::default();
    for s in steps {
        m.unmix += s.unmix / n;
        m.mix += s.mix / n;
        m.con_g += s.con_g / n;
        m.con_l += s.con_l / n;
        m.total += s.total / n;
        m.unmix_labeled += s.unmix_labeled;
        m.mix_labeled += s.mix_labeled;
    }
    m
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Full training run. With `out`, writes the config echo, loss traces,
/// best and final checkpoints, a Dice summary, and wall-clock time (kept in
/// its own file so every other output is deterministic).
pub fn train(cfg: &TrainConfig, out: Option<&Path>) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let manifest = dataset::load_manifest(&cfg.data)?;
    let train_set = dataset::load_split(&cfg.data, &manifest, Split::Train)?;
    if train_set.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    let val_set = dataset::load_split(&cfg.data, &manifest, Split::Val)?;
    let test_set = dataset::load_split(&cfg.data, &manifest, Split::Test)?;
    let classes = train_set[0].scribble.classes();

    let root = RngStream::new(cfg.seed, 0);
    let mut params = SegmentorParams::init(classes, cfg.base_channels, &root.derive("init", &[]))?;
    let mut state = AdamState::for_params(params.tensors());
    let mut best: Option<(f64, usize, SegmentorParams)> = None;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut steps = Vec::new();

    for epoch in 0..cfg.epochs {
        let pairs = epoch_pairs(train_set.len(), &mut root.derive("epoch", &[epoch as u64]));
        let mut epoch_steps = Vec::with_capacity(pairs.len());
        for (k, &(a, b)) in pairs.iter().enumerate() {
            let step_rng = root.derive("step", &[epoch as u64, k as u64]);
            let bd = train_step(
                &mut params,
                &mut state,
                &train_set[a],
                &train_set[b],
                cfg,
                &step_rng,
            )?;
            epoch_steps.push(bd);
        }
        let val_dice = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_params(&params, &val_set, Split::Val)?.mean)
        };
        let score = val_dice.unwrap_or(-(epoch as f64));
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, params.clone()));
        }
        trace.push(EpochRecord {
            epoch,
            loss: mean_breakdown(&epoch_steps),
            val_dice,
        });
        steps.extend(epoch_steps);
    }
    let (_, best_epoch, best_params) = best.expect("epochs >= 1");
    let val = (!val_set.is_empty())
        .then(|| evaluate_params(&best_params, &val_set, Split::Val))
        .transpose()?;
    let test = (!test_set.is_empty())
        .then(|| evaluate_params(&best_params, &test_set, Split::Test))
        .transpose()?;
    let report = RunReport {
        seed: cfg.seed,
        config: cfg.to_text(),
        trace,
        steps,
        best_epoch,
        val,
        test,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join("config.txt"), &report.config)?;
        write(&dir.join("trace.csv"), &report.trace_csv())?;
        write(&dir.join("steps.csv"), &report.steps_csv())?;
        write(&dir.join("summary.csv"), &report.summary_csv())?;
        if let Some(t) = &report.test {
            write(&dir.join("test_dice.csv"), &t.to_csv())?;
        }
        save_checkpoint(&best_params, &dir.join("best.ckpt"))?;
        save_checkpoint(&params, &dir.join("final.ckpt"))?;
        write(
            &dir.join("timing.txt"),
            &format!(
                "wall_clock_secs={:.3}\nbest_epoch={}\n",
                report.wall_clock_secs, best_epoch
            ),
        )?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairing_covers_every_id() {
        let mut r = RngStream::new(1, 0);
        let p = epoch_pairs(6, &mut r);
        assert_eq!(p.len(), 3);
        let mut seen: Vec<usize> = p.iter().flat_map(|&(a, b)| [a, b]).collect();
        seen.sort();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
        assert_eq!(epoch_pairs(2, &mut r).len(), 1);
        assert_eq!(epoch_pairs(5, &mut r).len(), 3);
    }
}
