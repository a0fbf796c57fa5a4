//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::Pattern::*;
use microvoc::archdsl::{parse, parse_with_input, render, Shape};
use microvoc::augment::Expansion;
use microvoc::gradcheck::{standard_suite, SUITE_KINDS};
use microvoc::init::{uniform_tensor, InitSpec};
use microvoc::layers::{dropout_apply, softmax_cross_entropy, DropoutConfig, Mode};
use microvoc::optim::{adam_step, AdamConfig, AdamState, PlateauMetric, PlateauScheduler};
use microvoc::rng;
use microvoc::trainer::*;
use microvoc::Tensor4;
use rand::Rng as _;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, detail: String) -> Check {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const M1: &str = "IMG-(Conv64-ReLU)-(FC1024-ReLU-FC20)-Softmax";
const M2: &str =
    "IMG-(Conv64-ReLU-MaxPool)-(Conv128-ReLU)-(Conv256-ReLU-MaxPool)-(FC1024-ReLU-Dropout-FC20)-Softmax";
const M3: &str = "IMG-(Conv64-ReLU-LRN-MaxPool)-(Conv128-ReLU-LRN)-(Conv256-ReLU-MaxPool-Dropout)-(FC1024-ReLU-Dropout-FC20)-Softmax";
const M4: &str =
    "IMG-(Conv64-ReLU-LRN)x2-MaxPool-(Conv96-ReLU-LRN)x3-MaxPool-(FC1024-ReLU-Dropout)x2-FC20-Softmax";

fn gradient_oracle() -> Check {
    let start = Instant::now();
    let reports = standard_suite(None, 0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<String> = reports.iter().filter(|r| !r.passed()).map(|r| r.to_string()).collect();
    let missing: Vec<&str> =
        SUITE_KINDS.iter().copied().filter(|k| !reports.iter().any(|r| r.name.starts_with(&k.replace("softmax", "softmax-ce")))).collect();
    ensure(
        failed.is_empty() && missing.is_empty() && elapsed < Duration::from_secs(30),
        format!(
            "{} checks, max rel err {worst:.2e} (< 1e-4), {:.2}s (< 30s); failed {failed:?}; missing kinds {missing:?}",
            reports.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn adam_oracle() -> Check {
    let cfg = AdamConfig::default();
    let (alpha, b1, b2, eps) = (cfg.alpha, cfg.beta1, cfg.beta2, cfg.epsilon);
    let g = 1.0;
    let mut w = Tensor4::new((1, 1, 1, 1), 1.0).unwrap();
    let grad = Tensor4::new((1, 1, 1, 1), g).unwrap();
    let mut state = AdamState::new([w.dims()]).unwrap();

    // Textbook form: bias-corrected moments, then the update.
    let (mut m, mut v, mut expected) = (0.0f64, 0.0f64, 1.0f64);
    let mut details = Vec::new();
    let mut worst = 0.0f64;
    let mut first_step = 0.0;
    for t in 1..=2 {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        expected -= alpha * m_hat / (v_hat.sqrt() + eps);
        let before = w.data()[0];
        adam_step(&mut [&mut w], &[&grad], &mut state, &cfg).unwrap();
        if t == 1 {
            first_step = (before - w.data()[0]).abs();
        }
        let err = (w.data()[0] - expected).abs();
        worst = worst.max(err).max((state.m[0].data()[0] - m).abs()).max((state.v[0].data()[0] - v).abs());
        details.push(format!("W{t}={:.16}", w.data()[0]));
    }
    ensure(
        worst <= 1e-10 && (first_step - alpha).abs() <= 1e-6,
        format!("{}; max abs err {worst:.1e} (<= 1e-10); first step {first_step:.3e} vs alpha {alpha:e}", details.join(" ")),
    )
}

fn dropout_expectation() -> Check {
    let x = Tensor4::new((1, 1, 1, 100_000), 1.0).unwrap();
    let cfg = DropoutConfig { p: 0.5 };
    let (train, _) = dropout_apply(&x, &cfg, Mode::Train, &mut rng::seeded(42));
    let (test, _) = dropout_apply(&x, &cfg, Mode::Test, &mut rng::seeded(42));
    let mean = train.data().iter().sum::<f64>() / train.len() as f64;
    let reference = test.data()[0];
    let rel = (mean - reference).abs() / reference;
    ensure(rel <= 0.02, format!("train mean {mean:.5} vs test output {reference}, rel diff {:.3}% (<= 2%)", rel * 100.0))
}

fn softmax_sanity() -> Check {
    let logits = Tensor4::new((1, 20, 1, 1), 0.7).unwrap();
    let uniform = softmax_cross_entropy(&logits, &[3]).map_err(|e| e.to_string())?.loss;
    let ln20 = 20f64.ln();

    // Full-resolution M1 needs ~8.6 GB for its FC1024 weights alone; the same
    // architecture is built on a 32x32 input.
    let input = Shape::new(3, 32, 32);
    let spec = parse_with_input(M1, input).map_err(|e| e.to_string())?;
    let mut net = Network::build(spec, &InitSpec::xavier(1)).map_err(|e| e.to_string())?;
    let mut r = rng::seeded(2);
    let x = uniform_tensor(-0.5, 0.5, (16, 3, 32, 32), &mut r).unwrap();
    let labels: Vec<usize> = (0..16).map(|_| r.random_range(0..20)).collect();
    let out = net.forward(&x, Mode::Train).map_err(|e| e.to_string())?;
    let m1 = softmax_cross_entropy(&out, &labels).map_err(|e| e.to_string())?.loss;
    ensure(
        (uniform - ln20).abs() <= 1e-6 && (m1 - ln20).abs() <= 0.5,
        format!("uniform loss {uniform:.9} vs ln20 {ln20:.9}; fresh M1 (3x32x32 input) loss {m1:.4} (|diff| <= 0.5)"),
    )
}

fn parser_conformance() -> Check {
    let mut counts = Vec::new();
    for (name, text) in [("M1", M1), ("M2", M2), ("M3", M3), ("M4", M4)] {
        let spec = parse(text).map_err(|e| format!("{name}: {e}"))?;
        let again = parse(&render(&spec)).map_err(|e| format!("{name} re-parse: {e}"))?;
        if again != spec || render(&again) != render(&spec) {
            return Err(format!("{name} does not round-trip"));
        }
        counts.push(spec.param_count);
    }
    let (m1, m2, m3, m4) = (counts[0], counts[1], counts[2], counts[3]);
    ensure(
        m1 < m2 && m2 == m3 && m3 < m4,
        format!(
            "all parse, shape-check on 3x128x128 and round-trip; params M1={m1} M2={m2} M3={m3} M4={m4}; \
             required M1 < M2 == M3 < M4"
        ),
    )
}

fn desk_scale_training() -> Check {
    let ds = common::bars(500, 32, 0.5, 1);
    let mut cfg = TrainConfig::new("IMG-(Conv8-ReLU-MaxPool)-(FC32-ReLU-FC2)-Softmax");
    cfg.max_iterations = 2000;
    cfg.seed = 3;
    let start = Instant::now();
    let st = train(&cfg, &ds).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let reached = st.history.records.iter().find(|r| r.val_acc >= 0.95).map(|r| r.iteration);
    let last = st.history.last().unwrap();
    ensure(
        reached.is_some() && elapsed < Duration::from_secs(120),
        format!(
            "val_acc >= 0.95 first at iteration {reached:?}; final val_acc {:.3}; {:.1}s (< 120s)",
            last.val_acc,
            elapsed.as_secs_f64()
        ),
    )
}

fn overfitting_direction() -> Check {
    let ds = common::split(common::pattern_samples(&[HBar, VBar, Cross, Square], 100, 32, 1.0, 1), &["h", "v", "c", "s"], 1);
    let gap = |arch: &str, augment: bool| -> Result<(f64, String), String> {
        let mut cfg = TrainConfig::new(arch);
        cfg.max_iterations = 1000;
        cfg.seed = 3;
        if augment {
            cfg.augment = Some(AugmentConfig { crop: (28, 28), expansion: Expansion::Five });
        }
        let st = train(&cfg, &ds).map_err(|e| e.to_string())?;
        let r = *st.history.last().unwrap();
        Ok((r.train_acc - r.val_acc, format!("train {:.3} val {:.3}", r.train_acc, r.val_acc)))
    };
    let (plain, pd) = gap("IMG-(Conv8-ReLU-MaxPool)-(FC64-ReLU-FC4)-Softmax", false)?;
    let (reg, rd) = gap("IMG-(Conv8-ReLU-MaxPool-Dropout)-(FC64-ReLU-Dropout-FC4)-Softmax", true)?;
    ensure(
        plain >= 0.15 && plain - reg >= 0.05,
        format!(
            "plain: {pd} gap {:.1} pts (>= 15); dropout+x5: {rd} gap {:.1} pts; reduction {:.1} pts (>= 5)",
            plain * 100.0,
            reg * 100.0,
            (plain - reg) * 100.0
        ),
    )
}

fn finetune_mechanism() -> Check {
    let body = "IMG-(Conv8-ReLU-MaxPool)-(Conv8-ReLU-MaxPool)-(FC32-ReLU-FC";
    let source = common::split(common::pattern_samples(&[Cross, Square, HBar, VBar], 400, 32, 1.0, 11), &["c", "s", "h", "v"], 11);
    let mut src_cfg = TrainConfig::new(format!("{body}4)-Softmax"));
    src_cfg.max_iterations = 1000;
    src_cfg.seed = 5;
    let pre = train(&src_cfg, &source).map_err(|e| e.to_string())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("source.ckpt");
    let ckpt = Checkpoint { state: pre, class_names: source.class_names.clone(), mean: None };
    save_checkpoint(&ckpt, &path).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;

    let target = common::split(common::pattern_samples(&[HBar, VBar], 100, 32, 2.0, 23), &["h", "v"], 23);
    let mut cfg = TrainConfig::new(format!("{body}2)-Softmax"));
    cfg.max_iterations = 500;
    cfg.seed = 5;
    let scratch = train(&cfg, &target).map_err(|e| e.to_string())?;

    let spec = parse_with_input(&cfg.arch, Shape::new(3, 32, 32)).map_err(|e| e.to_string())?;
    let mut net = Network::build(spec, &InitSpec::xavier(cfg.seed)).map_err(|e| e.to_string())?;
    net.prepare_finetune(&loaded.state.net, 0.005, cfg.seed).map_err(|e| e.to_string())?;
    let conv_before: Vec<Tensor4> =
        net.layers().iter().filter(|l| l.name() == "conv").flat_map(|l| l.params()).cloned().collect();
    let mut st = TrainState::from_network(&cfg, net).map_err(|e| e.to_string())?;
    run(&cfg, &target, &mut st, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let conv_after: Vec<Tensor4> =
        st.net.layers().iter().filter(|l| l.name() == "conv").flat_map(|l| l.params()).cloned().collect();

    let ft = st.history.last().unwrap().val_acc;
    let sc = scratch.history.last().unwrap().val_acc;
    ensure(
        conv_before == conv_after && ft > sc,
        format!(
            "conv params bit-identical: {}; target val_acc after 500 iters: fine-tuned {ft:.3} vs scratch {sc:.3}",
            conv_before == conv_after
        ),
    )
}

fn scheduler_drops() -> Check {
    let mut s = PlateauScheduler::new(PlateauMetric::ValidationAccuracy, 5, 1e-3, 10.0, 1e-8);
    let patience = s.patience;
    let mut alpha = 1e-2;
    let mut drops = Vec::new();
    let mut increased = false;
    let observations = 26;
    for i in 1..=observations {
        let next = s.observe(0.5, alpha);
        if next > alpha {
            increased = true;
        }
        if next < alpha {
            if next != alpha / 10.0 {
                return Err(format!("drop at observation {i} was {alpha} -> {next}, not /10"));
            }
            drops.push(i);
        }
        alpha = next;
    }
    let expected: Vec<usize> = (1..=observations).filter(|i| i > &1 && (i - 1) % patience == 0).collect();

    let mut improving = PlateauScheduler::default();
    let mut a = 1e-3;
    for i in 0..30 {
        a = improving.observe(i as f64 * 0.01, a);
    }
    ensure(
        drops == expected && !increased && a == 1e-3,
        format!("stalled drops at observations {drops:?} (expected {expected:?}); alpha never increased: {}; improving run kept alpha", !increased),
    )
}

fn determinism_persistence() -> Check {
    let ds = common::bars(80, 16, 0.5, 4);
    let cfg = |iters| {
        let mut c = TrainConfig::new("IMG-(Conv4-ReLU-MaxPool-Dropout)-(FC16-ReLU-FC2)-Softmax");
        c.max_iterations = iters;
        c.eval_every = 25;
        c.batch_size = 16;
        c.seed = 9;
        c.augment = Some(AugmentConfig::for_input(Shape::new(3, 16, 16)));
        c
    };
    let a = train(&cfg(100), &ds).map_err(|e| e.to_string())?;
    let b = train(&cfg(100), &ds).map_err(|e| e.to_string())?;
    let same_csv = a.history.to_csv() == b.history.to_csv();

    let val = ds.val();
    let x = Tensor4::stack(val.iter().map(|s| &s.image)).unwrap();
    let before = a.net.logits(&x).unwrap();
    let ckpt = Checkpoint { state: a.clone(), class_names: ds.class_names.clone(), mean: None };
    let loaded = from_bytes(&to_bytes(&ckpt).unwrap()).map_err(|e| e.to_string())?;
    let same_eval = loaded.state.net.logits(&x).unwrap().data() == before.data();

    let mut part = TrainState::new(&cfg(50), Shape::new(3, 16, 16)).unwrap();
    run(&cfg(50), &ds, &mut part, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let bytes = to_bytes(&Checkpoint { state: part, class_names: vec![], mean: None }).unwrap();
    let mut resumed = from_bytes(&bytes).map_err(|e| e.to_string())?.state;
    run(&cfg(100), &ds, &mut resumed, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let same_resume = resumed.history == a.history && resumed.net.params() == a.net.params();

    ensure(
        same_csv && same_eval && same_resume,
        format!("identical history CSV: {same_csv}; checkpoint eval bit-exact: {same_eval}; resume == uninterrupted: {same_resume}"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient oracle", gradient_oracle),
        ("Adam oracle", adam_oracle),
        ("dropout expectation", dropout_expectation),
        ("softmax sanity", softmax_sanity),
        ("parser conformance", parser_conformance),
        ("desk-scale training", desk_scale_training),
        ("overfitting/regularization direction", overfitting_direction),
        ("fine-tune mechanism", finetune_mechanism),
        ("scheduler", scheduler_drops),
        ("determinism & persistence", determinism_persistence),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS [{id:>2}] {name}: {d} ({secs:.1}s)"),
            Err(d) => {
                failures += 1;
                println!("FAIL [{id:>2}] {name}: {d} ({secs:.1}s)");
            }
        }
    }
    println!("acceptance: {failures} failed");
    if failures > 0 {
        std::process::exit(1);
    }
}
