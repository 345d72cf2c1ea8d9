mod common;

use proptest::prelude::*;
use scribblemix::data::{ScribbleLabel, UNLABELED};
use scribblemix::mix::{
    exhaustive_mix_plan, max_weight_assignment, optimize_mix_plan, optimize_mix_plan_traced,
    sample_occlusion, MixPlan, OcclusionLabel, PlanConfig, SaliencyMap,
};
use scribblemix::{RngStream, Tensor};

use common::blocky_saliency;

fn random_labels(rng: &mut RngStream, k: usize, h: usize, w: usize) -> ScribbleLabel {
    let data = (0..h * w)
        .map(|_| {
            if rng.uniform() < 0.3 {
                rng.below(k) as u8
            } else {
                UNLABELED
            }
        })
        .collect();
    ScribbleLabel::new(k, h, w, data).unwrap()
}

/// All permutations of `0..n`, by plain recursion.
fn all_perms(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in all_perms(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Brute force over every z and every pair of transports, scoring each
/// candidate pixel by pixel. No separability shortcut.
fn naive_optimum(s1: &SaliencyMap, s2: &SaliencyMap, block: usize, radius: usize) -> f64 {
    let (h, w) = (s1.height(), s1.width());
    let (gh, gw) = (h / block, w / block);
    let n = gh * gw;
    let near = |i: usize, j: usize| {
        let (ri, ci) = ((i / gw) as i64, (i % gw) as i64);
        let (rj, cj) = ((j / gw) as i64, (j % gw) as i64);
        (ri - rj).abs().max((ci - cj).abs()) <= radius as i64
    };
    let perms: Vec<Vec<usize>> = all_perms(n)
        .into_iter()
        .filter(|p| p.iter().enumerate().all(|(i, &j)| near(i, j)))
        .collect();
    let block_sum = |s: &SaliencyMap, j: usize| -> f64 {
        let (r0, c0) = ((j / gw) * block, (j % gw) * block);
        let mut t = 0.0;
        for r in r0..r0 + block {
            for c in c0..c0 + block {
                t += s.values().data()[r * w + c] as f64;
            }
        }
        t
    };
    let mut best = f64::NEG_INFINITY;
    for bits in 0..(1usize << n) {
        for p1 in &perms {
            for p2 in &perms {
                let v: f64 = (0..n)
                    .map(|i| {
                        if bits >> i & 1 == 1 {
                            block_sum(s2, p2[i])
                        } else {
                            block_sum(s1, p1[i])
                        }
                    })
                    .sum();
                best = best.max(v);
            }
        }
    }
    best
}

#[test]
fn exhaustive_search_matches_naive_enumeration() {
    let mut rng = RngStream::new(11, 0);
    let cfg = PlanConfig {
        block_size: 4,
        window_radius: 1,
        n_iter: 4,
    };
    for _ in 0..20 {
        let s1 = blocky_saliency(&mut rng, 8, 8, 4);
        let s2 = blocky_saliency(&mut rng, 8, 8, 4);
        let ex = exhaustive_mix_plan(&s1, &s2, &cfg).unwrap();
        let naive = naive_optimum(&s1, &s2, 4, 1);
        assert!(
            (ex.objective - naive).abs() <= 1e-9 * naive.max(1.0),
            "{} vs {naive}",
            ex.objective
        );
        assert!((ex.recompute_objective(&s1, &s2).unwrap() - naive).abs() <= 1e-4 * naive.max(1.0));
    }
}

#[test]
fn exhaustive_respects_the_window_on_a_strip() {
    // 1x4 grid with radius 1: block 0 can never take block 3
    let mut rng = RngStream::new(12, 0);
    let cfg = PlanConfig {
        block_size: 2,
        window_radius: 1,
        n_iter: 4,
    };
    for _ in 0..10 {
        let s1 = blocky_saliency(&mut rng, 2, 8, 2);
        let s2 = blocky_saliency(&mut rng, 2, 8, 2);
        let ex = exhaustive_mix_plan(&s1, &s2, &cfg).unwrap();
        let naive = naive_optimum(&s1, &s2, 2, 1);
        assert!((ex.objective - naive).abs() <= 1e-9 * naive.max(1.0));
        for i in 0..4 {
            assert!(ex.pi1[i].abs_diff(i) <= 1 && ex.pi2[i].abs_diff(i) <= 1);
        }
    }
}

#[test]
fn hungarian_handles_a_full_window() {
    let w = [[3.0, 1.0, 2.0], [2.0, 4.0, 6.0], [5.0, 2.0, 1.0]];
    let a = max_weight_assignment(3, |i, j| Some(w[i][j])).unwrap();
    let best = all_perms(3)
        .iter()
        .map(|p| (0..3).map(|i| w[i][p[i]]).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!((0..3).map(|i| w[i][a[i]]).sum::<f64>(), best);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mixed_pixels_come_from_exactly_one_source(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0);
        let s1 = blocky_saliency(&mut rng, 32, 32, 8);
        let s2 = blocky_saliency(&mut rng, 32, 32, 8);
        let plan = optimize_mix_plan(&s1, &s2, &PlanConfig::default()).unwrap();
        let x1 = Tensor::from_fn([2, 32, 32], |i| i as f32);
        let x2 = Tensor::from_fn([2, 32, 32], |i| -(i as f32) - 1.0);
        let xm = plan.apply(&x1, &x2).unwrap();
        prop_assert!(plan.field().is_selection());
        for (p, &v) in xm.data().iter().enumerate() {
            let c = p / 1024;
            let from1 = v >= 0.0 && (v as usize) / 1024 == c;
            let from2 = v < 0.0 && ((-v - 1.0) as usize) / 1024 == c;
            prop_assert!(from1 ^ from2, "pixel {p} value {v}");
        }
    }

    #[test]
    fn labels_travel_with_their_pixels(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 1);
        let s1 = blocky_saliency(&mut rng, 32, 32, 8);
        let s2 = blocky_saliency(&mut rng, 32, 32, 8);
        let plan = optimize_mix_plan(&s1, &s2, &PlanConfig::default()).unwrap();
        let y1 = random_labels(&mut rng, 4, 32, 32);
        let y2 = random_labels(&mut rng, 4, 32, 32);
        let ym = plan.apply_labels(&y1, &y2).unwrap();
        // tag each pixel by its index so the image tells us where it came from
        let tag1 = Tensor::from_fn([1, 32, 32], |i| i as f32);
        let tag2 = Tensor::from_fn([1, 32, 32], |i| -(i as f32) - 1.0);
        let tags = plan.apply(&tag1, &tag2).unwrap();
        for (p, &t) in tags.data().iter().enumerate() {
            let expect = if t >= 0.0 { y1.data()[t as usize] } else { y2.data()[(-t - 1.0) as usize] };
            prop_assert_eq!(ym.data()[p], expect);
        }
    }

    #[test]
    fn objective_is_consistent_and_bounded(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 2);
        let s1 = blocky_saliency(&mut rng, 32, 32, 8);
        let s2 = blocky_saliency(&mut rng, 32, 32, 8);
        let (plan, trace) = optimize_mix_plan_traced(&s1, &s2, &PlanConfig::default()).unwrap();
        let re = plan.recompute_objective(&s1, &s2).unwrap();
        prop_assert!((re - plan.objective).abs() <= 1e-5 * plan.objective.abs().max(1.0));
        prop_assert!(plan.objective >= s1.total().max(s2.total()) - 1e-9);
        prop_assert!(trace.windows(2).all(|w| w[1] >= w[0]));
        prop_assert_eq!(*trace.last().unwrap(), plan.objective);
        plan.validate().unwrap();
    }

    #[test]
    fn mixing_commutes_with_pixelwise_maps(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 3);
        let s1 = blocky_saliency(&mut rng, 16, 16, 8);
        let s2 = blocky_saliency(&mut rng, 16, 16, 8);
        let plan = optimize_mix_plan(&s1, &s2, &PlanConfig::default()).unwrap();
        let a = common::random_image(&mut rng, 16, 16);
        let b = common::random_image(&mut rng, 16, 16);
        let f = |t: &Tensor| t.map(|v| (3.0 * v).tanh() + v * v);
        let lhs = f(&plan.apply(&a, &b).unwrap());
        let rhs = plan.apply(&f(&a), &f(&b)).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn occlusion_is_idempotent(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 4);
        let occ = sample_occlusion(&mut rng, 64, 64, 0.15).unwrap();
        // side 10 -> area 100 at most, less when the border clips it; the
        // center is always inside so at least about a quarter survives
        prop_assert!((15..=130).contains(&occ.occluded_count()), "{}", occ.occluded_count());
        let x = common::random_image(&mut rng, 64, 64);
        let once = occ.apply_image(&x).unwrap();
        prop_assert_eq!(occ.apply_image(&once).unwrap(), once.clone());
        let y = random_labels(&mut rng, 4, 64, 64);
        for mode in [OcclusionLabel::Background, OcclusionLabel::Zero] {
            let y1 = occ.apply_labels(&y, mode).unwrap();
            prop_assert_eq!(occ.apply_labels(&y1, mode).unwrap(), y1.clone());
            for p in 0..64 * 64 {
                let expect = match (occ.raster()[p], mode) {
                    (0, _) => y.data()[p],
                    (_, OcclusionLabel::Background) => 0,
                    (_, OcclusionLabel::Zero) => UNLABELED,
                };
                prop_assert_eq!(y1.data()[p], expect);
            }
        }
        for p in 0..64 * 64 {
            if occ.raster()[p] == 1 {
                prop_assert_eq!(once.data()[p], 0.0);
            } else {
                prop_assert_eq!(once.data()[p], x.data()[p]);
            }
        }
    }

    #[test]
    fn hungarian_matches_brute_force(n in 1usize..6, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 5);
        let w: Vec<Option<f64>> = (0..n * n)
            .map(|i| (i % (n + 1) == 0 || rng.uniform() < 0.7).then(|| rng.range(-5.0, 5.0)))
            .collect();
        let best = all_perms(n)
            .iter()
            .filter_map(|p| (0..n).map(|i| w[i * n + p[i]]).sum::<Option<f64>>())
            .fold(f64::NEG_INFINITY, f64::max);
        let a = max_weight_assignment(n, |i, j| w[i * n + j]).expect("diagonal is always allowed");
        let got: f64 = (0..n).map(|i| w[i * n + a[i]].expect("allowed pair")).sum();
        prop_assert!((got - best).abs() < 1e-9, "{got} vs {best}");
    }

    #[test]
    fn plan_text_round_trips(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 6);
        let s1 = blocky_saliency(&mut rng, 24, 16, 8);
        let s2 = blocky_saliency(&mut rng, 24, 16, 8);
        let plan = optimize_mix_plan(&s1, &s2, &PlanConfig::default()).unwrap();
        let back = MixPlan::parse_text(&plan.to_text()).unwrap();
        prop_assert_eq!(&back.z, &plan.z);
        prop_assert_eq!(&back.pi1, &plan.pi1);
        prop_assert_eq!(&back.pi2, &plan.pi2);
        prop_assert!((back.objective - plan.objective).abs() <= 1e-8 * plan.objective.abs().max(1.0));
    }
}
