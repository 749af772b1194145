use qmix_core::arch::{self, apply_surgery, ArchSpec, ModelGraph, SurgeryPlan};
use qmix_core::param::ParamStore;
use qmix_core::tape::Tape;
use qmix_core::train::{
    evaluate, gen_synthetic, run_ablation, shared_grad_audit, train, train_with_probe, AblationVariant, AdamW,
    LossProbe, SyntheticTask, TrainConfig,
};
use qmix_core::zoo::{Mode, VariantKind};
use qmix_core::{Error, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn nano() -> ModelGraph {
    let spec = arch::resolve_scaling(&ArchSpec::yolov8(), "n").unwrap();
    arch::build_model(&spec, 10, 0).unwrap()
}

fn surgery_nano() -> ModelGraph {
    apply_surgery(&nano(), &SurgeryPlan::final_design()).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 7,
        ..TrainConfig::default()
    }
}

#[test]
fn linear_schedule_endpoints_and_midpoint() {
    let cfg = TrainConfig {
        epochs: 51,
        ..TrainConfig::default()
    };
    assert_eq!(cfg.lr_at(0), 1e-3);
    assert!((cfg.lr_at(50) - 1e-5).abs() < 1e-18);
    assert!((cfg.lr_at(25) - 0.000505).abs() < 1e-15);
    for e in 1..51 {
        assert!(cfg.lr_at(e) < cfg.lr_at(e - 1));
    }
}

#[test]
fn synthetic_task_is_deterministic_and_balanced() {
    let a = gen_synthetic(7, 40, 4).unwrap();
    let b = gen_synthetic(7, 40, 4).unwrap();
    let bytes = |t: &SyntheticTask| {
        t.images
            .data()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect::<Vec<u8>>()
    };
    assert_eq!(bytes(&a), bytes(&b));
    assert_eq!(a.labels, b.labels);
    assert_ne!(bytes(&a), bytes(&gen_synthetic(8, 40, 4).unwrap()));
    for k in 0..4 {
        assert_eq!(a.labels.iter().filter(|&&l| l == k).count(), 10);
    }
    assert_eq!(a.images.shape(), &[40, 3, 64, 64]);
}

#[test]
fn synthetic_task_rejects_too_few_samples() {
    assert!(matches!(gen_synthetic(0, 3, 4), Err(Error::Invalid { .. })));
    assert!(gen_synthetic(0, 10, 1).is_err());
    assert!(gen_synthetic(0, 10, 9).is_err());
}

#[test]
fn class_channel_means_are_separated() {
    let task = gen_synthetic(3, 1000, 4).unwrap();
    let plane = 64 * 64;
    let mut sums = [[0.0 as Scalar; 3]; 4];
    let mut counts = [0usize; 4];
    for (i, &k) in task.labels.iter().enumerate() {
        counts[k] += 1;
        for (c, sum) in sums[k].iter_mut().enumerate() {
            let start = (i * 3 + c) * plane;
            *sum += task.images.data()[start..start + plane].iter().sum::<Scalar>() / plane as Scalar;
        }
    }
    let means: Vec<Vec<Scalar>> = (0..4)
        .map(|k| sums[k].iter().map(|s| s / counts[k] as Scalar).collect())
        .collect();
    for a in 0..4 {
        for b in a + 1..4 {
            let gap = (0..3).map(|c| (means[a][c] - means[b][c]).abs()).fold(0.0, Scalar::max);
            assert!(gap >= 1.0, "classes {a},{b}: {gap}");
        }
    }
}

#[test]
fn adamw_single_step_by_hand() {
    let mut store = ParamStore::new();
    let id = store.add("p", Tensor::full(&[1, 1], 1.0));
    store.get_mut(id).grad[0] = 2.0;
    let mut opt = AdamW::new(0.937, 0.999, 1e-8, 0.01);
    opt.step([&mut store], 0.1);
    // First step: both bias-corrected moments equal g and g².
    let want = 1.0 * (1.0 - 0.1 * 0.01) - 0.1 * 2.0 / (2.0 + 1e-8);
    let got = store.get(id).value.data()[0];
    assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    assert!((got - 0.899_000_000_5).abs() < 1e-10);
}

#[test]
fn adamw_moves_against_gradient_on_a_bowl() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let id = store.add("p", Tensor::randn(&[4, 5], &mut rng));
    let before = store.get(id).value.clone();
    for (g, &p) in store.get_mut(id).grad.iter_mut().zip(before.data()) {
        *g = 2.0 * p;
    }
    let mut opt = AdamW::new(0.937, 0.999, 1e-8, 0.0);
    opt.step([&mut store], 0.01);
    for (&a, &b) in store.get(id).value.data().iter().zip(before.data()) {
        assert!((a - b) * b < 0.0);
    }
}

#[test]
fn adamw_skips_frozen_blocks() {
    let mut store = ParamStore::new();
    let id = store.add("p", Tensor::full(&[2, 2], 1.0));
    store.get_mut(id).frozen = true;
    store.get_mut(id).grad = vec![1.0; 4];
    AdamW::default().step([&mut store], 0.1);
    assert_eq!(store.get(id).value.data(), &[1.0; 4]);
}

#[test]
fn probe_loss_at_uniform_logits_is_log_classes() {
    let graph = nano();
    let task = gen_synthetic(1, 8, 4).unwrap();
    let tap = LossProbe::default_tap(&graph).unwrap();
    assert_eq!(tap, 9);
    let mut probe = LossProbe::new(&graph, tap, 4, 0).unwrap();
    assert!(evaluate(&graph, &probe, &task, 8).unwrap() >= 0.0);
    let w = probe.weight;
    let shape = probe.params.get(w).shape().to_vec();
    probe.params.get_mut(w).value = Tensor::zeros(&shape);
    let loss = evaluate(&graph, &probe, &task, 8).unwrap();
    assert!((loss - (4.0 as Scalar).ln()).abs() < 1e-12);
}

#[test]
fn zero_learning_rate_keeps_the_curve_flat() {
    let mut graph = surgery_nano();
    let task = gen_synthetic(7, 32, 4).unwrap();
    let cfg = TrainConfig {
        lr0: 0.0,
        lrf: 0.0,
        ..quick(3)
    };
    let curve = train(&mut graph, &task, &cfg).unwrap();
    for e in &curve.epochs {
        assert_eq!(e.mean_loss, curve.initial);
    }
}

#[test]
fn non_finite_loss_reports_the_epoch() {
    let mut graph = nano();
    let task = gen_synthetic(7, 16, 4).unwrap();
    let tap = LossProbe::default_tap(&graph).unwrap();
    let mut probe = LossProbe::new(&graph, tap, 4, 0).unwrap();
    let b = probe.bias;
    probe.params.get_mut(b).value = Tensor::full(&[4], Scalar::NAN);
    let err = train_with_probe(&mut graph, &mut probe, &task, &quick(2)).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 0 }), "{err}");
}

#[test]
fn baseline_and_surgery_train_below_half_initial_loss() {
    let task = gen_synthetic(7, 64, 4).unwrap();
    for mut graph in [nano(), surgery_nano()] {
        let curve = train(&mut graph, &task, &quick(10)).unwrap();
        assert!(curve.final_loss() < 0.5 * curve.initial, "{curve:?}");
    }
}

#[test]
fn training_is_a_function_of_seeds() {
    let task = gen_synthetic(7, 32, 4).unwrap();
    let mut a = surgery_nano();
    let mut b = surgery_nano();
    let ca = train(&mut a, &task, &quick(2)).unwrap();
    let cb = train(&mut b, &task, &quick(2)).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(ca.to_csv().unwrap(), cb.to_csv().unwrap());
    assert!(ca.to_csv().unwrap().starts_with("epoch,lr,mean_loss\n"));
}

#[test]
fn audit_splits_the_shared_prefix() {
    let graph = surgery_nano();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = Tensor::randn(&[2, 3, 64, 64], &mut rng);
    let rec = shared_grad_audit(&graph, &batch).unwrap();
    assert_eq!(rec.nodes, vec![(6, 32), (8, 64)]);
    assert_eq!(rec.ranges.len(), 2);
    assert_eq!((rec.ranges[0].start, rec.ranges[0].end), (0, 32));
    assert_eq!(rec.ranges[0].contributors, vec![6, 8]);
    assert_eq!((rec.ranges[1].start, rec.ranges[1].end), (32, 64));
    assert_eq!(rec.ranges[1].contributors, vec![8]);
    for r in &rec.ranges {
        assert!(r.max_abs_grad_w > 0.0);
        assert!(r.max_abs_discrepancy_w <= 1e-12);
        assert!(r.max_abs_discrepancy_theta.unwrap() <= 1e-12);
    }
    assert!(rec.max_abs_discrepancy <= 1e-12);
    assert!(rec.to_json().unwrap().contains("\"contributors\""));
}

#[test]
fn audit_needs_two_blocks() {
    let one = apply_surgery(&nano(), &SurgeryPlan::new([6])).unwrap();
    let batch = Tensor::zeros(&[1, 3, 32, 32]);
    assert!(matches!(shared_grad_audit(&one, &batch), Err(Error::Audit(1))));
    assert!(matches!(shared_grad_audit(&nano(), &batch), Err(Error::Audit(0))));
}

#[test]
fn zero_batch_leaves_no_gradient_on_w() {
    let graph = surgery_nano();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 3, 64, 64]));
    let run = graph.forward_tape(&mut tape, x, Mode::Eval, None).unwrap();
    let parts: Vec<_> = run.outputs().iter().map(|&o| tape.mean_square(o)).collect();
    let loss = tape.sum(&parts).unwrap();
    let grads = tape.backward(loss).unwrap();
    let w = graph.mixer.as_ref().unwrap().handle.w;
    let g = grads.param(w).unwrap_or(&[]);
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn ablation_counts_and_frozen_alpha_equivalence() {
    let task = gen_synthetic(7, 16, 4).unwrap();
    let variants: Vec<AblationVariant> = VariantKind::ALL.iter().map(|&v| v.into()).collect();
    let rows = run_ablation(&nano(), &SurgeryPlan::final_design(), &variants, &task, &quick(2)).unwrap();
    let labels: Vec<_> = rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(labels, ["QMixSin", "QMixScaled", "QMixFull", "QMixBlock"]);
    for (row, paper) in rows.iter().zip([2.40e6, 2.40e6, 3.29e6, 2.40e6]) {
        assert!(
            (row.params as f64 - paper).abs() / paper <= 0.01,
            "{}: {}",
            row.variant,
            row.params
        );
        assert!(row.final_loss.is_finite());
        assert_eq!(row.epochs, 2);
    }

    let frozen = AblationVariant {
        kind: VariantKind::QMixScaled,
        freeze_alpha: true,
    };
    let pair = run_ablation(
        &nano(),
        &SurgeryPlan::final_design(),
        &[frozen, VariantKind::QMixBlock.into()],
        &task,
        &quick(2),
    )
    .unwrap();
    assert_eq!(pair[0].curve, pair[1].curve);
    assert_eq!(pair[0].variant, "QMixScaled (alpha frozen)");

    let bad = AblationVariant {
        kind: VariantKind::QMixBlock,
        freeze_alpha: true,
    };
    assert!(run_ablation(&nano(), &SurgeryPlan::final_design(), &[bad], &task, &quick(1)).is_err());
    assert!("QMixBogus".parse::<VariantKind>().is_err());
}
