mod common;

use common::tiny_run_config;
use dragonforge::eval::ablation::Bench;
use dragonforge::model::Model;
use dragonforge::numerics::{Binding, Tape, Tensor};
use dragonforge::pretrain::heads::Scorer;
use dragonforge::pretrain::{evaluate_mlm, Objective, Pretrainer, StepMetrics};
use dragonforge::rng::SeedStream;

fn pretrain(overrides: &[(&str, &str)], mut on_step: impl FnMut(&StepMetrics, &Model<f32>)) -> (Bench, Model<f32>, Vec<StepMetrics>) {
    let cfg = tiny_run_config(overrides);
    let bench = Bench::new(&cfg).unwrap();
    let seeds = SeedStream::new(cfg.seed().unwrap());
    let mut model = Model::<f32>::new(cfg.model().unwrap(), bench.sizes(), seeds).unwrap();
    let mut trainer = Pretrainer::new(cfg.pretrain().unwrap(), &model, seeds).unwrap();
    let metrics = trainer
        .run(&mut model, bench.train(), |m, model| {
            on_step(m, model);
            Ok(())
        })
        .unwrap();
    (bench, model, metrics)
}

#[test]
fn joint_loss_is_the_sum_of_its_terms() {
    let (_, _, metrics) = pretrain(&[], |_, _| ());
    assert_eq!(metrics.len(), 20);
    for m in &metrics {
        assert!((m.loss - (m.loss_mlm + m.loss_lp)).abs() < 1e-6, "{m:?}");
        assert!(m.loss_mlm > 0.0);
    }
    assert!(metrics.iter().any(|m| m.loss_lp != 0.0));
}

#[test]
fn single_objective_modes_zero_the_other_term() {
    let (_, _, metrics) = pretrain(&[("pretrain.objective", "mlm_only")], |_, _| ());
    assert!(metrics.iter().all(|m| m.loss_lp == 0.0));
    let (_, _, metrics) = pretrain(&[("pretrain.objective", "linkpred_only")], |_, _| ());
    assert!(metrics.iter().all(|m| m.loss_mlm == 0.0));
    assert_eq!(Objective::parse("joint"), Some(Objective::Joint));
}

#[test]
fn two_hundred_steps_lower_the_mlm_loss() {
    let cfg = tiny_run_config(&[]);
    let bench = Bench::new(&cfg).unwrap();
    let seeds = SeedStream::new(1);
    let untrained = Model::<f32>::new(cfg.model().unwrap(), bench.sizes(), seeds).unwrap();
    let before = evaluate_mlm(&untrained, bench.heldout(), 0.15, seeds).unwrap();
    let (bench, model, metrics) = pretrain(&[("pretrain.steps", "200")], |_, _| ());
    let after = evaluate_mlm(&model, bench.heldout(), 0.15, seeds).unwrap();
    assert!(after < before, "held-out MLM {before} -> {after}");
    let mean = |ms: &[StepMetrics]| ms.iter().map(|m| m.loss_mlm).sum::<f64>() / ms.len() as f64;
    assert!(mean(&metrics[180..]) < mean(&metrics[..20]));
}

#[test]
fn same_seed_gives_identical_metrics() {
    let lines = |ms: &[StepMetrics]| ms.iter().map(StepMetrics::to_json_line).collect::<String>();
    let (_, a, ma) = pretrain(&[], |_, _| ());
    let (_, b, mb) = pretrain(&[], |_, _| ());
    assert_eq!(lines(&ma), lines(&mb));
    for ((_, x), (_, y)) in a.store.iter().zip(b.store.iter()) {
        assert_eq!(x.tensor.data(), y.tensor.data());
    }
    let (_, _, mc) = pretrain(&[("seed", "8")], |_, _| ());
    assert_ne!(lines(&ma), lines(&mc));
}

#[test]
fn rotate_relations_keep_unit_modulus() {
    let mut checked = 0;
    pretrain(&[("model.scorer", "rotate")], |_, model| {
        assert_eq!(model.config.scorer, Scorer::RotatE);
        // With t = 0 the score is -|h ∘ r|, which equals -|h| only for unit-modulus r.
        let d = model.config.encoder.d_node;
        let h: Vec<f32> = (0..d).map(|i| (i as f32 * 0.37).sin()).collect();
        let norm = h.iter().map(|x| x * x).sum::<f32>().sqrt();
        let tape = Tape::new();
        let p = Binding::new(&tape, &model.store);
        let hv = tape.constant(Tensor::new(vec![1, d], h.clone()).unwrap());
        let tv = tape.constant(Tensor::zeros(&[1, d]));
        for r in 0..model.sizes().relations {
            let s = model.lp.score(&p, hv, &[r], tv).unwrap().to_vec()[0];
            assert!((s + norm).abs() < 1e-5, "relation {r}: {s} vs {}", -norm);
        }
        checked += 1;
    });
    assert_eq!(checked, 20);
}
