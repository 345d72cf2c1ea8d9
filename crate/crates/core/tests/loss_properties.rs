mod common;

use proptest::prelude::*;
use scribblemix::data::{DenseMask, ScribbleLabel, UNLABELED};
use scribblemix::losses::{
    dice_score, global_consistency, global_consistency_node, largest_cc_target, local_consistency,
    ncs, partial_ce, total_loss, LossTerms, LossWeights, MixedView, NcsMode,
};
use scribblemix::mix::{optimize_mix_plan, sample_occlusion, PlanConfig};
use scribblemix::tensor::{CeReduction, Graph};
use scribblemix::{RngStream, Tensor};

use common::{blob_probs, blocky_saliency, oracle_largest_cc, random_image, PixelSegmentor};

fn random_probs(rng: &mut RngStream, k: usize, h: usize, w: usize) -> Tensor {
    let logits: Vec<f64> = (0..k * h * w).map(|_| rng.range(-3.0, 3.0)).collect();
    Tensor::new([k, h, w], common::softmax_channels(&logits, k, h * w)).unwrap()
}

fn random_scribble(rng: &mut RngStream, k: usize, h: usize, w: usize, frac: f64) -> ScribbleLabel {
    let data = (0..h * w)
        .map(|_| {
            if rng.uniform() < frac {
                rng.below(k) as u8
            } else {
                UNLABELED
            }
        })
        .collect();
    ScribbleLabel::new(k, h, w, data).unwrap()
}

#[test]
fn global_consistency_gradient_respects_stopgrad() {
    let mut rng = RngStream::new(3, 0);
    let s1 = blocky_saliency(&mut rng, 16, 16, 8);
    let s2 = blocky_saliency(&mut rng, 16, 16, 8);
    let plan = optimize_mix_plan(&s1, &s2, &PlanConfig::default()).unwrap();
    let occ = sample_occlusion(&mut rng, 16, 16, 0.3).unwrap();
    let v12 = MixedView::from_plan(&plan, &occ).unwrap();
    let v21 = MixedView::from_plan(&plan, &occ).unwrap();
    let preds: Vec<Tensor<f64>> = (0..4)
        .map(|_| random_probs(&mut rng, 3, 16, 16).cast())
        .collect();
    for stop in [false, true] {
        let mut g = Graph::<f64>::new();
        let ids: Vec<_> = preds.iter().map(|p| g.param(p.clone())).collect();
        let l = global_consistency_node(
            &mut g,
            &v12,
            &v21,
            ids[0],
            ids[1],
            ids[2],
            ids[3],
            stop,
            NcsMode::Flat,
        )
        .unwrap();
        g.backward(l).unwrap();
        let norm = |i: usize| {
            g.grad(ids[i])
                .map_or(0.0, |d| d.iter().map(|v| v.abs()).sum::<f64>())
        };
        assert_eq!(norm(0) == 0.0, stop);
        assert_eq!(norm(1) == 0.0, stop);
        assert!(norm(2) > 0.0 && norm(3) > 0.0);
    }
}

#[test]
fn scaled_copies_have_ncs_minus_one() {
    let mut rng = RngStream::new(4, 0);
    let p = random_probs(&mut rng, 3, 8, 8);
    let q = p.map(|v| 2.5 * v);
    assert!((ncs(&p, &q).unwrap() + 1.0).abs() < 1e-6);
    assert!(ncs(&p, &Tensor::zeros([3, 8, 8])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn largest_component_matches_flood_fill(
        k in 2usize..6, h in 1usize..20, w in 1usize..20, seed in any::<u64>()
    ) {
        let mut rng = RngStream::new(seed, 0);
        let probs = blob_probs(&mut rng, k, h.max(2), w.max(2));
        let (mask, onehot) = largest_cc_target(&probs).unwrap();
        prop_assert_eq!(mask.data(), &oracle_largest_cc(&probs)[..]);
        let hw = mask.data().len();
        for (p, &l) in mask.data().iter().enumerate() {
            for c in 0..k {
                prop_assert_eq!(onehot.data()[c * hw + p], if c == l as usize { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn ncs_of_nonnegative_maps_is_in_range(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 1);
        let p = random_probs(&mut rng, 4, 6, 6);
        let q = random_probs(&mut rng, 4, 6, 6);
        let v = ncs(&p, &q).unwrap();
        prop_assert!((-1.0 - 1e-9..=1e-12).contains(&v), "{v}");
        prop_assert!((ncs(&q, &p).unwrap() - v).abs() < 1e-12);
    }

    #[test]
    fn partial_ce_is_nonnegative_and_mean_scales_sum(seed in any::<u64>(), frac in 0.0f64..1.0) {
        let mut rng = RngStream::new(seed, 2);
        let p = random_probs(&mut rng, 3, 8, 8);
        let y = random_scribble(&mut rng, 3, 8, 8, frac);
        let t = y.to_target();
        let sum = partial_ce(&p, &t).unwrap();
        prop_assert!(sum >= 0.0);
        let mut g = Graph::<f64>::new();
        let id = g.constant(p.cast());
        let m = g.partial_ce(id, std::sync::Arc::new(t.clone()), CeReduction::Mean).unwrap();
        let mean = g.value(m).item().unwrap();
        let n = y.labeled_count() as f64;
        if n == 0.0 {
            prop_assert_eq!(mean, 0.0);
            prop_assert_eq!(sum, 0.0);
        } else {
            prop_assert!((mean * n - sum).abs() <= 1e-6 * sum.max(1.0));
        }
    }

    #[test]
    fn total_recomposes_from_terms(
        u in -5.0f64..5.0, m in -5.0f64..5.0, cg in -1.0f64..0.0, cl in -1.0f64..0.0,
        w1 in 0.0f64..2.0, w2 in 0.0f64..2.0, w3 in 0.0f64..2.0, w4 in 0.0f64..2.0
    ) {
        let terms = LossTerms { unmix: u, mix: m, con_g: cg, con_l: cl, ..LossTerms::default() };
        let w = LossWeights { unmix: w1, mix: w2, con_global: w3, con_local: w4 };
        let b = total_loss(&terms, &w);
        prop_assert!((b.total - (w1 * u + w2 * m + w3 * cg + w4 * cl)).abs() < 1e-12);
        prop_assert_eq!((b.unmix, b.mix, b.con_g, b.con_l), (u, m, cg, cl));
    }

    #[test]
    fn dice_matches_set_counting(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 3);
        let a: Vec<u8> = (0..100).map(|_| rng.below(4) as u8).collect();
        let b: Vec<u8> = (0..100).map(|_| rng.below(4) as u8).collect();
        let pa = DenseMask::new(4, 10, 10, a.clone()).unwrap();
        let pb = DenseMask::new(4, 10, 10, b.clone()).unwrap();
        let d = dice_score(&pa, &pb).unwrap();
        for c in 1..4u8 {
            let sa: std::collections::BTreeSet<usize> = (0..100).filter(|&i| a[i] == c).collect();
            let sb: std::collections::BTreeSet<usize> = (0..100).filter(|&i| b[i] == c).collect();
            let both = sa.intersection(&sb).count() as f64;
            let expect = if sa.is_empty() && sb.is_empty() { 1.0 } else { 2.0 * both / (sa.len() + sb.len()) as f64 };
            prop_assert!((d.per_class[c as usize - 1] - expect).abs() < 1e-12);
        }
        prop_assert!((dice_score(&pa, &pa).unwrap().mean - 1.0).abs() < 1e-12);
        prop_assert_eq!(dice_score(&pb, &pa).unwrap(), d);
    }

    #[test]
    fn per_pixel_models_are_globally_consistent(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 4);
        let f = PixelSegmentor::random(&mut rng, 3);
        let x1 = random_image(&mut rng, 16, 16);
        let x2 = random_image(&mut rng, 16, 16);
        let p12 = optimize_mix_plan(&blocky_saliency(&mut rng, 16, 16, 8), &blocky_saliency(&mut rng, 16, 16, 8), &PlanConfig::default()).unwrap();
        let p21 = optimize_mix_plan(&blocky_saliency(&mut rng, 16, 16, 8), &blocky_saliency(&mut rng, 16, 16, 8), &PlanConfig::default()).unwrap();
        let o12 = sample_occlusion(&mut rng, 16, 16, 0.3).unwrap();
        let o21 = sample_occlusion(&mut rng, 16, 16, 0.3).unwrap();
        let xo12 = o12.apply_image(&p12.apply(&x1, &x2).unwrap()).unwrap();
        let xo21 = o21.apply_image(&p21.apply(&x2, &x1).unwrap()).unwrap();
        let v = global_consistency(
            &MixedView::from_plan(&p12, &o12).unwrap(),
            &MixedView::from_plan(&p21, &o21).unwrap(),
            &f.predict(&x1), &f.predict(&x2), &f.predict(&xo12), &f.predict(&xo21),
        ).unwrap();
        prop_assert!((v + 1.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn local_consistency_is_bounded(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 5);
        let a = blob_probs(&mut rng, 4, 12, 12);
        let b = random_probs(&mut rng, 4, 12, 12);
        let v = local_consistency(&a, &b).unwrap();
        prop_assert!((-1.0 - 1e-9..=0.0).contains(&v), "{v}");
    }
}
