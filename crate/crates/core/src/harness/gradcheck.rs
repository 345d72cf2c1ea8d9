//! Finite-difference suite over every differentiable op, the segmentor and
//! every loss term, in 64-bit mode.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::data::{ScribbleLabel, UNLABELED};
use crate::error::Result;
use crate::losses::{
    global_consistency_node, local_consistency_node, symmetric_ce_node, MixedView, NcsMode,
};
use crate::mix::{mixup_target, MixPlan, OcclusionMask};
use crate::segmentor::SegmentorParams;
use crate::tensor::{
    finite_diff_gradcheck, gradcheck_coords, CeReduction, CeTarget, Fault, GradCheck, Graph,
    MixField, NodeId, RngStream, Tensor,
};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradRow {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
    pub instances: usize,
}

impl GradRow {
    pub fn passes(&self) -> bool {
        self.checked > 0 && self.max_rel_error.is_finite() && self.max_rel_error < GRADCHECK_TOL
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    pub instances: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            instances: 5,
            seed: 0,
            fault: None,
        }
    }
}

type Case = fn(&mut RngStream, Option<Fault>) -> Result<Vec<GradCheck>>;

fn rand_t(r: &mut RngStream, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| r.range(lo, hi))
}

/// `sum(out * R)` with a fixed random `R`, so every output coordinate
/// contributes with a generic weight.
fn project(g: &mut Graph<f64>, out: NodeId, r: &Tensor<f64>) -> Result<NodeId> {
    let c = g.constant(r.clone());
    let m = g.mul(out, c)?;
    Ok(g.sum(m))
}

fn check(
    fault: Option<Fault>,
    x: &Tensor<f64>,
    f: impl Fn(&mut Graph<f64>, NodeId) -> Result<NodeId>,
) -> Result<GradCheck> {
    finite_diff_gradcheck(
        |g, leaf| {
            g.set_fault(fault);
            f(g, leaf)
        },
        x,
        GRADCHECK_STEP,
    )
}

fn random_scribble(r: &mut RngStream, k: usize, h: usize, w: usize, frac: f64) -> ScribbleLabel {
    let data = (0..h * w)
        .map(|_| {
            if r.uniform() < frac {
                r.below(k) as u8
            } else {
                UNLABELED
            }
        })
        .collect();
    ScribbleLabel::new(k, h, w, data).expect("valid labels")
}

fn random_plan(r: &mut RngStream, h: usize, w: usize, b: usize) -> MixPlan {
    let mut p = MixPlan::identity(h, w, b).expect("tiling block");
    let n = p.blocks();
    p.z = (0..n).map(|_| r.below(2) as u8).collect();
    r.shuffle(&mut p.pi1);
    r.shuffle(&mut p.pi2);
    p
}

fn random_occlusion(r: &mut RngStream, h: usize, w: usize, side: f64) -> OcclusionMask {
    let c = (r.range(0.0, w as f64), r.range(0.0, h as f64));
    OcclusionMask::rasterize(h, w, c, side, side, r.range(0.0, std::f64::consts::PI))
}

fn conv_case(r: &mut RngStream, fault: Option<Fault>, k: usize) -> Result<Vec<GradCheck>> {
    let x = rand_t(r, &[2, 5, 5], -1.0, 1.0);
    let kern = rand_t(r, &[3, 2, k, k], -1.0, 1.0);
    let bias = rand_t(r, &[3], -1.0, 1.0);
    let proj = rand_t(r, &[3, 5, 5], -1.0, 1.0);
    let mut out = Vec::new();
    out.push(check(fault, &x, |g, x| {
        let (kn, bn) = (g.constant(kern.clone()), g.constant(bias.clone()));
        let y = g.conv2d(x, kn, bn)?;
        project(g, y, &proj)
    })?);
    out.push(check(fault, &kern, |g, kn| {
        let (xn, bn) = (g.constant(x.clone()), g.constant(bias.clone()));
        let y = g.conv2d(xn, kn, bn)?;
        project(g, y, &proj)
    })?);
    out.push(check(fault, &bias, |g, bn| {
        let (xn, kn) = (g.constant(x.clone()), g.constant(kern.clone()));
        let y = g.conv2d(xn, kn, bn)?;
        project(g, y, &proj)
    })?);
    Ok(out)
}

fn unary_case(
    r: &mut RngStream,
    fault: Option<Fault>,
    shape: &[usize],
    out_shape: &[usize],
    op: fn(&mut Graph<f64>, NodeId) -> Result<NodeId>,
) -> Result<Vec<GradCheck>> {
    let x = rand_t(r, shape, -1.0, 1.0);
    let proj = rand_t(r, out_shape, -1.0, 1.0);
    Ok(vec![check(fault, &x, |g, x| {
        let y = op(g, x)?;
        project(g, y, &proj)
    })?])
}

fn binary_case(
    r: &mut RngStream,
    fault: Option<Fault>,
    a_shape: &[usize],
    b_shape: &[usize],
    out_shape: &[usize],
    op: fn(&mut Graph<f64>, NodeId, NodeId) -> Result<NodeId>,
) -> Result<Vec<GradCheck>> {
    let a = rand_t(r, a_shape, 0.1, 1.0);
    let b = rand_t(r, b_shape, 0.1, 1.0);
    let proj = rand_t(r, out_shape, -1.0, 1.0);
    let first = check(fault, &a, |g, an| {
        let bn = g.constant(b.clone());
        let y = op(g, an, bn)?;
        project(g, y, &proj)
    })?;
    let second = check(fault, &b, |g, bn| {
        let an = g.constant(a.clone());
        let y = op(g, an, bn)?;
        project(g, y, &proj)
    })?;
    Ok(vec![first, second])
}

fn scalar_pair_case(
    r: &mut RngStream,
    fault: Option<Fault>,
    op: fn(&mut Graph<f64>, NodeId, NodeId) -> Result<NodeId>,
) -> Result<Vec<GradCheck>> {
    let p = rand_t(r, &[3, 4, 4], 0.05, 1.0);
    let q = rand_t(r, &[3, 4, 4], 0.05, 1.0);
    let first = check(fault, &p, |g, pn| {
        let qn = g.constant(q.clone());
        op(g, pn, qn)
    })?;
    let second = check(fault, &q, |g, qn| {
        let pn = g.constant(p.clone());
        op(g, pn, qn)
    })?;
    Ok(vec![first, second])
}

fn ce_case(
    r: &mut RngStream,
    fault: Option<Fault>,
    reduction: CeReduction,
) -> Result<Vec<GradCheck>> {
    let pred = rand_t(r, &[3, 4, 4], 0.05, 1.0);
    let y1 = random_scribble(r, 3, 4, 4, 0.5);
    let y2 = random_scribble(r, 3, 4, 4, 0.5);
    // soft labels exercise fractional weights
    let t = Arc::new(mixup_target(r.range(0.2, 0.8), &y1, &y2)?);
    Ok(vec![check(fault, &pred, |g, p| {
        g.partial_ce(p, t.clone(), reduction)
    })?])
}

fn mix_case(r: &mut RngStream, fault: Option<Fault>) -> Result<Vec<GradCheck>> {
    let (h, w) = (4, 4);
    let field = Arc::new(MixField {
        height: h,
        width: w,
        src_a: (0..16).map(|_| r.below(16) as u32).collect(),
        weight_a: (0..16).map(|_| r.range(0.0, 1.0) as f32).collect(),
        src_b: (0..16).map(|_| r.below(16) as u32).collect(),
        weight_b: (0..16).map(|_| r.range(0.0, 1.0) as f32).collect(),
    });
    let a = rand_t(r, &[2, h, w], -1.0, 1.0);
    let b = rand_t(r, &[2, h, w], -1.0, 1.0);
    let proj = rand_t(r, &[2, h, w], -1.0, 1.0);
    let first = check(fault, &a, |g, an| {
        let bn = g.constant(b.clone());
        let y = g.mix(an, bn, field.clone())?;
        project(g, y, &proj)
    })?;
    let second = check(fault, &b, |g, bn| {
        let an = g.constant(a.clone());
        let y = g.mix(an, bn, field.clone())?;
        project(g, y, &proj)
    })?;
    Ok(vec![first, second])
}

fn mask_mul_case(r: &mut RngStream, fault: Option<Fault>) -> Result<Vec<GradCheck>> {
    let mask: Arc<Vec<f32>> = Arc::new((0..16).map(|_| r.range(0.0, 1.0) as f32).collect());
    let x = rand_t(r, &[2, 4, 4], -1.0, 1.0);
    let proj = rand_t(r, &[2, 4, 4], -1.0, 1.0);
    Ok(vec![check(fault, &x, |g, x| {
        let y = g.mask_mul(x, mask.clone())?;
        project(g, y, &proj)
    })?])
}

const SEG_K: usize = 3;
const SEG_BASE: usize = 4;

fn segmentor_input_case(r: &mut RngStream, fault: Option<Fault>) -> Result<Vec<GradCheck>> {
    let params = SegmentorParams::init(SEG_K, SEG_BASE, &r.derive("seg", &[]))?;
    let x = rand_t(r, &[1, 8, 8], -2.0, 2.0);
    let proj = rand_t(r, &[SEG_K, 8, 8], -1.0, 1.0);
    Ok(vec![check(fault, &x, |g, x| {
        let att = params.attach(g, false);
        let p = att.forward(g, x)?;
        project(g, p, &proj)
    })?])
}

fn segmentor_params_case(r: &mut RngStream, fault: Option<Fault>) -> Result<Vec<GradCheck>> {
    let params = SegmentorParams::init(SEG_K, SEG_BASE, &r.derive("seg", &[]))?;
    // nonzero biases so bias coordinates are not all at a kink-free default
    let mut tensors: Vec<Tensor<f64>> = params.tensors().iter().map(|t| t.cast()).collect();
    for t in tensors.iter_mut().skip(1).step_by(2) {
        for v in t.data_mut() {
            *v = r.range(-0.1, 0.1);
        }
    }
    let x = rand_t(r, &[1, 8, 8], -2.0, 2.0);
    let proj = rand_t(r, &[SEG_K, 8, 8], -1.0, 1.0);
    let mut out = Vec::new();
    for j in 0..tensors.len() {
        let n = tensors[j].numel();
        let coords: Vec<usize> = (0..n.min(6)).map(|_| r.below(n)).collect();
        let gc = gradcheck_coords(
            |g, leaf| {
                g.set_fault(fault);
                let ids: Vec<NodeId> = tensors
                    .iter()
                    .enumerate()
                    .map(|(i, t)| if i == j { leaf } else { g.constant(t.clone()) })
                    .collect();
                let att = crate::segmentor::Attached::with_ids(ids, SEG_K);
                let xn = g.constant(x.clone());
                let p = att.forward(g, xn)?;
                project(g, p, &proj)
            },
            &tensors[j],
            GRADCHECK_STEP,
            &coords,
        )?;
        out.push(gc);
    }
    Ok(out)
}

/// Shared fixture for the loss-term cases: logits leaf of image 1, fixed
/// logits for the other three predictions, plans, occlusions and targets.
struct LossFixture {
    logits: Tensor<f64>,
    others: [Tensor<f64>; 3],
    t1: Arc<CeTarget>,
    t2: Arc<CeTarget>,
    view12: MixedView,
    view21: MixedView,
}

impl LossFixture {
    fn new(r: &mut RngStream) -> Result<Self> {
        let (k, h, w) = (SEG_K, 8, 8);
        let logits = rand_t(r, &[k, h, w], -2.0, 2.0);
        let others = [0, 1, 2].map(|_| rand_t(r, &[k, h, w], -2.0, 2.0));
        let t1 = Arc::new(random_scribble(r, k, h, w, 0.4).to_target());
        let t2 = Arc::new(random_scribble(r, k, h, w, 0.4).to_target());
        let p12 = random_plan(r, h, w, 2);
        let p21 = random_plan(r, h, w, 2);
        let view12 = MixedView::from_plan(&p12, &random_occlusion(r, h, w, 3.0))?;
        let view21 = MixedView::from_plan(&p21, &random_occlusion(r, h, w, 3.0))?;
        Ok(LossFixture {
            logits,
            others,
            t1,
            t2,
            view12,
            view21,
        })
    }

    /// Softmax predictions `[p1, p2, po12, po21]`; `p1` and `po12` depend on the leaf.
    fn preds(&self, g: &mut Graph<f64>, leaf: NodeId) -> Result<[NodeId; 4]> {
        let p1 = g.channel_softmax(leaf)?;
        let c: Vec<NodeId> = self.others.iter().map(|t| g.constant(t.clone())).collect();
        let p2 = g.channel_softmax(c[0])?;
        let shifted = g.add(leaf, c[1])?;
        let half = g.scale(shifted, 0.5);
        let po12 = g.channel_softmax(half)?;
        let po21 = g.channel_softmax(c[2])?;
        Ok([p1, p2, po12, po21])
    }
}

fn loss_unmix_case(r: &mut RngStream, fault: Option<Fault>) -> Result<Vec<GradCheck>> {
    let fx = LossFixture::new(r)?;
    Ok(vec![check(fault, &fx.logits, |g, leaf| {
        let [p1, p2, ..] = fx.preds(g, leaf)?;
        symmetric_ce_node(g, p1, fx.t1.clone(), p2, fx.t2.clone(), CeReduction::Mean)
    })?])
}

fn loss_mix_case(r: &mut RngStream, fault: Option<Fault>) -> Result<Vec<GradCheck>> {
    let fx = LossFixture::new(r)?;
    Ok(vec![check(fault, &fx.logits, |g, leaf| {
        let [_, _, po12, po21] = fx.preds(g, leaf)?;
        symmetric_ce_node(
            g,
            po12,
            fx.t1.clone(),
            po21,
            fx.t2.clone(),
            CeReduction::Sum,
        )
    })?])
}

fn global_case(r: &mut RngStream, fault: Option<Fault>, mode: NcsMode) -> Result<Vec<GradCheck>> {
    let fx = LossFixture::new(r)?;
    Ok(vec![check(fault, &fx.logits, |g, leaf| {
        let [p1, p2, po12, po21] = fx.preds(g, leaf)?;
        global_consistency_node(g, &fx.view12, &fx.view21, p1, p2, po12, po21, false, mode)
    })?])
}

fn local_case(r: &mut RngStream, fault: Option<Fault>) -> Result<Vec<GradCheck>> {
    let fx = LossFixture::new(r)?;
    Ok(vec![check(fault, &fx.logits, |g, leaf| {
        let [p1, p2, ..] = fx.preds(g, leaf)?;
        local_consistency_node(g, p1, p2, NcsMode::Flat)
    })?])
}

fn total_case(r: &mut RngStream, fault: Option<Fault>) -> Result<Vec<GradCheck>> {
    let fx = LossFixture::new(r)?;
    Ok(vec![check(fault, &fx.logits, |g, leaf| {
        let [p1, p2, po12, po21] = fx.preds(g, leaf)?;
        let u = symmetric_ce_node(g, p1, fx.t1.clone(), p2, fx.t2.clone(), CeReduction::Mean)?;
        let m = symmetric_ce_node(
            g,
            po12,
            fx.t1.clone(),
            po21,
            fx.t2.clone(),
            CeReduction::Mean,
        )?;
        let cg = global_consistency_node(
            g,
            &fx.view12,
            &fx.view21,
            p1,
            p2,
            po12,
            po21,
            false,
            NcsMode::Flat,
        )?;
        let cl = local_consistency_node(g, p1, p2, NcsMode::Flat)?;
        let cg = g.scale(cg, 0.05);
        let a = g.add(u, m)?;
        let b = g.add(cg, cl)?;
        g.add(a, b)
    })?])
}

fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("conv2d_3x3", |r, f| conv_case(r, f, 3)),
        ("conv2d_1x1", |r, f| conv_case(r, f, 1)),
        ("relu", |r, f| {
            unary_case(r, f, &[2, 4, 4], &[2, 4, 4], |g, x| Ok(g.relu(x)))
        }),
        ("channel_softmax", |r, f| {
            unary_case(r, f, &[3, 4, 4], &[3, 4, 4], |g, x| g.channel_softmax(x))
        }),
        ("maxpool2", |r, f| {
            unary_case(r, f, &[2, 4, 4], &[2, 2, 2], |g, x| g.maxpool2(x))
        }),
        ("upsample2", |r, f| {
            unary_case(r, f, &[2, 3, 3], &[2, 6, 6], |g, x| g.upsample2(x))
        }),
        ("scale", |r, f| {
            unary_case(r, f, &[2, 3, 3], &[2, 3, 3], |g, x| Ok(g.scale(x, -1.7)))
        }),
        ("sum", |r, f| {
            unary_case(r, f, &[2, 3, 3], &[], |g, x| Ok(g.sum(x)))
        }),
        ("concat_channels", |r, f| {
            binary_case(r, f, &[1, 3, 3], &[2, 3, 3], &[3, 3, 3], |g, a, b| {
                g.concat_channels(a, b)
            })
        }),
        ("add", |r, f| {
            binary_case(r, f, &[2, 3, 3], &[2, 3, 3], &[2, 3, 3], |g, a, b| {
                g.add(a, b)
            })
        }),
        ("mul", |r, f| {
            binary_case(r, f, &[2, 3, 3], &[2, 3, 3], &[2, 3, 3], |g, a, b| {
                g.mul(a, b)
            })
        }),
        ("mask_mul", mask_mul_case),
        ("mix", mix_case),
        ("partial_ce_sum", |r, f| ce_case(r, f, CeReduction::Sum)),
        ("partial_ce_mean", |r, f| ce_case(r, f, CeReduction::Mean)),
        ("ncs", |r, f| scalar_pair_case(r, f, |g, p, q| g.ncs(p, q))),
        ("ncs_per_class", |r, f| {
            scalar_pair_case(r, f, |g, p, q| g.ncs_per_class(p, q))
        }),
        ("segmentor_input", segmentor_input_case),
        ("segmentor_params", segmentor_params_case),
        ("loss_unmix", loss_unmix_case),
        ("loss_mix", loss_mix_case),
        ("global_consistency", |r, f| {
            global_case(r, f, NcsMode::Flat)
        }),
        ("global_consistency_per_class", |r, f| {
            global_case(r, f, NcsMode::PerClass)
        }),
        ("local_consistency", local_case),
        ("total_loss", total_case),
    ]
}

/// Runs every case on `instances` random instances and reports the worst
/// relative error per case.
pub fn run_gradcheck_suite(opts: &SuiteOptions) -> Result<Vec<GradRow>> {
    let root = RngStream::new(opts.seed, 0);
    let mut rows = Vec::new();
    for (ci, (name, case)) in cases().into_iter().enumerate() {
        let mut row = GradRow {
            name,
            max_rel_error: 0.0,
            checked: 0,
            excluded: 0,
            instances: opts.instances,
        };
        for inst in 0..opts.instances {
            let mut r = root.derive("gradcheck", &[ci as u64, inst as u64]);
            for gc in case(&mut r, opts.fault)? {
                row.max_rel_error = row.max_rel_error.max(gc.max_rel_error);
                if gc.max_rel_error.is_nan() {
                    row.max_rel_error = f64::NAN;
                }
                row.checked += gc.checked;
                row.excluded += gc.excluded;
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn format_table(rows: &[GradRow]) -> String {
    let mut s = format!(
        "{:<30} {:>12} {:>8} {:>8}  result\n",
        "case", "max_rel_err", "checked", "kinks"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<30} {:>12.3e} {:>8} {:>8}  {}",
            r.name,
            r.max_rel_error,
            r.checked,
            r.excluded,
            if r.passes() { "pass" } else { "FAIL" }
        );
    }
    s
}
