mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use scribblemix::data::dataset::load_split;
use scribblemix::data::{load_manifest, nst::read_f32, Split};
use scribblemix::harness::ablate::{parse_rows, row_config};
use scribblemix::harness::train::epoch_pairs;
use scribblemix::harness::{
    evaluate, evaluate_params, mix_demo, train, train_step, MixStrategy, TrainConfig,
};
use scribblemix::losses::LossWeights;
use scribblemix::segmentor::SegmentorParams;
use scribblemix::tensor::{Adam, AdamState, CeReduction, Graph};
use scribblemix::RngStream;

fn config(data: &Path, epochs: usize) -> TrainConfig {
    TrainConfig {
        data: data.to_path_buf(),
        epochs,
        ..TrainConfig::default()
    }
}

fn only_unmix(mut cfg: TrainConfig) -> TrainConfig {
    cfg.weights = LossWeights {
        unmix: 1.0,
        mix: 0.0,
        con_global: 0.0,
        con_local: 0.0,
    };
    cfg
}

#[test]
fn training_outputs_are_reproducible() {
    let data = tempfile::tempdir().unwrap();
    common::tiny_dataset(data.path(), 20, 3);
    let cfg = config(data.path(), 2);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train(&cfg, Some(a.path())).unwrap();
    train(&cfg, Some(b.path())).unwrap();
    for f in [
        "config.txt",
        "trace.csv",
        "steps.csv",
        "summary.csv",
        "test_dice.csv",
        "best.ckpt",
        "final.ckpt",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
    // a different seed gives a different run
    let mut other = cfg.clone();
    other.seed = 1;
    let c = train(&other, None).unwrap();
    assert_ne!(
        c.steps_csv(),
        fs::read_to_string(a.path().join("steps.csv")).unwrap()
    );
}

/// Partial-CE-only training written directly against the graph: same init,
/// same pairing, same optimizer. The library loop must match it step by step.
#[test]
fn supervision_only_run_matches_a_direct_reference() {
    let data = tempfile::tempdir().unwrap();
    common::tiny_dataset(data.path(), 20, 4);
    let cfg = only_unmix(config(data.path(), 2));
    let rep = train(&cfg, None).unwrap();

    let m = load_manifest(data.path()).unwrap();
    let set = load_split(data.path(), &m, Split::Train).unwrap();
    let root = RngStream::new(cfg.seed, 0);
    let mut params =
        SegmentorParams::init(4, cfg.base_channels, &root.derive("init", &[])).unwrap();
    let mut state = AdamState::for_params(params.tensors());
    let mut k = 0;
    for epoch in 0..cfg.epochs {
        for (a, b) in epoch_pairs(set.len(), &mut root.derive("epoch", &[epoch as u64])) {
            let mut g = Graph::<f32>::new();
            let att = params.attach(&mut g, true);
            let mut loss = None;
            for s in [&set[a], &set[b]] {
                let x = g.constant(s.image.clone());
                let p = att.forward(&mut g, x).unwrap();
                let ce = g
                    .partial_ce(p, Arc::new(s.scribble.to_target()), CeReduction::Mean)
                    .unwrap();
                loss = Some(match loss {
                    None => ce,
                    Some(prev) => g.add(prev, ce).unwrap(),
                });
            }
            let total = g.scale(loss.unwrap(), 0.5);
            let value = g.value(total).item().unwrap() as f64;
            let got = &rep.steps[k];
            assert!(
                (got.total - value).abs() < 1e-6,
                "step {k}: {} vs {value}",
                got.total
            );
            assert_eq!(got.total, got.unmix);
            g.backward_wrt(total, &att.ids).unwrap();
            let grads = params.collect_grads(&g, &att);
            Adam::with_lr(cfg.lr as f32)
                .step(params.tensors_mut(), &grads, &mut state)
                .unwrap();
            k += 1;
        }
    }
    assert_eq!(k, rep.steps.len());
}

#[test]
fn zero_weights_leave_only_the_supervised_term() {
    let data = tempfile::tempdir().unwrap();
    common::tiny_dataset(data.path(), 20, 5);
    let mut cfg = only_unmix(config(data.path(), 1));
    cfg.weights.unmix = 0.7;
    for strategy in [MixStrategy::None, MixStrategy::Puzzle] {
        cfg.strategy = strategy;
        let rep = train(&cfg, None).unwrap();
        for s in &rep.steps {
            assert!((s.total - 0.7 * s.unmix).abs() < 1e-12);
        }
    }
}

#[test]
fn repeated_steps_fit_one_pair() {
    let data = tempfile::tempdir().unwrap();
    common::tiny_dataset(data.path(), 20, 6);
    let m = load_manifest(data.path()).unwrap();
    let set = load_split(data.path(), &m, Split::Train).unwrap();
    let mut cfg = config(data.path(), 1);
    cfg.lr = 1e-3;
    let rng = RngStream::new(0, 0);
    let mut params = SegmentorParams::init(4, 8, &rng.derive("init", &[])).unwrap();
    let mut state = AdamState::for_params(params.tensors());
    let mut first = None;
    let mut last = 0.0;
    for i in 0..50 {
        let b = train_step(
            &mut params,
            &mut state,
            &set[0],
            &set[1],
            &cfg,
            &rng.derive("step", &[i]),
        )
        .unwrap();
        first.get_or_insert(b.unmix);
        last = b.unmix;
    }
    assert!(last < 0.5 * first.unwrap(), "{} -> {last}", first.unwrap());
}

#[test]
fn two_training_samples_make_one_pair() {
    let mut r = RngStream::new(0, 0);
    assert_eq!(epoch_pairs(2, &mut r).len(), 1);
    let pairs = epoch_pairs(7, &mut r);
    assert_eq!(pairs.len(), 4);
    let mut seen: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    seen.sort();
    seen.dedup();
    assert_eq!(seen, (0..7).collect::<Vec<_>>());
}

#[test]
fn evaluation_reports_are_consistent() {
    let data = tempfile::tempdir().unwrap();
    common::tiny_dataset(data.path(), 30, 7);
    let out = tempfile::tempdir().unwrap();
    let cfg = config(data.path(), 1);
    let rep = train(&cfg, Some(out.path())).unwrap();
    let test = rep.test.as_ref().unwrap();
    let csv = fs::read_to_string(out.path().join("test_dice.csv")).unwrap();
    assert_eq!(csv.lines().count(), test.ids.len() + 1);
    assert_eq!(
        test.ids.len(),
        scribblemix::data::dataset::split_sizes(30).2
    );
    let again = evaluate(&out.path().join("best.ckpt"), data.path(), Split::Test).unwrap();
    assert_eq!(again.to_csv(), test.to_csv());
    let mean_of_rows = test
        .rows
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .sum::<f64>()
        / test.rows.len() as f64;
    assert!((mean_of_rows - test.mean).abs() < 1e-9);
}

#[test]
fn untrained_model_scores_low() {
    let data = tempfile::tempdir().unwrap();
    common::tiny_dataset(data.path(), 20, 8);
    let m = load_manifest(data.path()).unwrap();
    let set = load_split(data.path(), &m, Split::Test).unwrap();
    let params = SegmentorParams::init(4, 8, &RngStream::new(0, 0).derive("init", &[])).unwrap();
    let rep = evaluate_params(&params, &set, Split::Test).unwrap();
    assert!(rep.mean < 0.5, "{}", rep.mean);
}

#[test]
fn ablation_rows_switch_terms_off() {
    let base = TrainConfig::default();
    let r1 = row_config(&base, 1).unwrap();
    assert_eq!(r1.strategy, MixStrategy::None);
    assert_eq!(
        (r1.weights.mix, r1.weights.con_global, r1.weights.con_local),
        (0.0, 0.0, 0.0)
    );
    assert!(!r1.occlusion);
    let r5 = row_config(&base, 5).unwrap();
    assert_eq!(r5.weights, base.weights);
    assert!(r5.occlusion);
    assert_eq!(r5.strategy, MixStrategy::Puzzle);
    assert_eq!(parse_rows("1-3").unwrap(), vec![1, 2, 3]);
    assert_eq!(parse_rows("1,5").unwrap(), vec![1, 5]);
    assert!(parse_rows("0").is_err() && parse_rows("6").is_err());
}

#[test]
fn config_text_round_trips() {
    let mut cfg = TrainConfig::default();
    cfg.apply_overrides(&[
        "lambda_con_g=0.1",
        "mix_strategy=cutmix",
        "occlusion=off",
        "ce_reduction=sum",
    ])
    .unwrap();
    let back = TrainConfig::parse(&cfg.to_text()).unwrap();
    assert_eq!(back.to_text(), cfg.to_text());
    assert!(cfg.apply_overrides(&["no_such_key=1"]).is_err());
    let mut bad = TrainConfig::default();
    assert!(bad.apply_overrides(&["lr=-1"]).is_err() || bad.validate().is_err());
}

#[test]
fn mix_previews_are_deterministic() {
    let data = tempfile::tempdir().unwrap();
    common::tiny_dataset(data.path(), 20, 9);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for strategy in [MixStrategy::Puzzle, MixStrategy::Mixup, MixStrategy::Cutmix] {
        let fa = mix_demo(data.path(), a.path(), 3, strategy, None).unwrap();
        let fb = mix_demo(data.path(), b.path(), 3, strategy, None).unwrap();
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(
                fs::read(x).unwrap(),
                fs::read(y).unwrap(),
                "{}",
                x.display()
            );
        }
    }
    // puzzle mixing only moves pixels around
    mix_demo(data.path(), a.path(), 3, MixStrategy::Puzzle, None).unwrap();
    let x1 = read_f32(&a.path().join("x1.nst")).unwrap();
    let x2 = read_f32(&a.path().join("x2.nst")).unwrap();
    let xm = read_f32(&a.path().join("xm12.nst")).unwrap();
    let pool: std::collections::HashSet<u32> = x1
        .data()
        .iter()
        .chain(x2.data())
        .map(|v| v.to_bits())
        .collect();
    assert!(xm.data().iter().all(|v| pool.contains(&v.to_bits())));

    mix_demo(data.path(), a.path(), 3, MixStrategy::None, None).unwrap();
    assert_eq!(
        read_f32(&a.path().join("xm12.nst")).unwrap(),
        read_f32(&a.path().join("x1.nst")).unwrap()
    );
    assert_eq!(
        read_f32(&a.path().join("xo12.nst")).unwrap(),
        read_f32(&a.path().join("x1.nst")).unwrap()
    );
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scribblemix"))
}

#[test]
fn command_line_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let ok = |c: &mut Command| {
        let o = c.output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    ok(cli()
        .args(["gen-data", "--n", "20", "--seed", "1", "--out"])
        .arg(&data));
    let trained = ok(cli()
        .args(["train", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .args(["epochs=1", "mix_strategy=none"]));
    assert!(trained.starts_with("epoch,"));
    let report = dir.path().join("eval.csv");
    ok(cli()
        .args(["eval", "--split", "val", "--ckpt"])
        .arg(run.join("best.ckpt"))
        .arg("--data")
        .arg(&data)
        .arg("--report")
        .arg(&report));
    assert_eq!(fs::read_to_string(&report).unwrap().lines().count(), 4);

    assert_eq!(cli().arg("bogus").output().unwrap().status.code(), Some(1));
    let missing = cli()
        .args(["eval", "--ckpt", "/nonexistent.ckpt", "--data"])
        .arg(&data)
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    let fault = cli()
        .args(["gradcheck", "--instances", "1", "--fault-relu"])
        .output()
        .unwrap();
    assert_eq!(fault.status.code(), Some(3));
}

#[test]
fn checkpoint_scores_one_against_its_own_predictions() {
    let data = tempfile::tempdir().unwrap();
    common::tiny_dataset(data.path(), 20, 10);
    let run = tempfile::tempdir().unwrap();
    train(&config(data.path(), 1), Some(run.path())).unwrap();
    let ckpt = run.path().join("best.ckpt");
    let params = scribblemix::segmentor::load_checkpoint(&ckpt).unwrap();
    let m = load_manifest(data.path()).unwrap();
    for s in load_split(data.path(), &m, Split::Test).unwrap() {
        let pred = scribblemix::harness::eval::predict_mask(&params, &s).unwrap();
        let entry = m.entries.iter().find(|e| e.id == s.id).unwrap();
        scribblemix::data::nst::write_nst(
            &data.path().join(&entry.mask),
            &scribblemix::data::nst::NstValue::U8 {
                shape: vec![64, 64],
                data: pred.data().to_vec(),
            },
        )
        .unwrap();
    }
    let rep = evaluate(&ckpt, data.path(), Split::Test).unwrap();
    assert_eq!(rep.mean, 1.0);
}
