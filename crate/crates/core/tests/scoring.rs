mod common;

use common::{lp_head, randomize, scalar_loss, score_one, scoring_max_diff, sign_step, D};
use dragonforge::kg::RelationId;
use dragonforge::numerics::{log_sigmoid, Binding, ParamGroup, ParamStore, Tape, Tensor};
use dragonforge::pretrain::corrupt::EdgeHoldout;
use dragonforge::pretrain::heads::{NegativeTerm, Scorer};
use dragonforge::retrieval::LocalEdge;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn scorers_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for scorer in Scorer::ALL {
        let worst = scoring_max_diff(scorer, 100, &mut rng);
        assert!(worst < 1e-5, "{}: max abs diff {worst}", scorer.name());
    }
}

#[test]
fn distmult_all_ones_is_dimension() {
    let mut store = ParamStore::new();
    let lp = lp_head(Scorer::DistMult, &mut store, NegativeTerm::Verbatim);
    let ones = vec![1.0; D];
    assert!((score_one(&lp, &store, &ones, 0, &ones) - D as f64).abs() < 1e-6);
}

#[test]
fn transe_translation_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let lp = lp_head(Scorer::TransE, &mut store, NegativeTerm::Verbatim);
    let h: Vec<f64> = (0..D).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rel = store.by_name("lp.rel").unwrap().row(1).to_vec();
    let t: Vec<f64> = h.iter().zip(&rel).map(|(a, b)| a + b).collect();
    assert!(score_one(&lp, &store, &h, 1, &t).abs() < 1e-6);
}

#[test]
fn rotate_identity_rotation_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let lp = lp_head(Scorer::RotatE, &mut store, NegativeTerm::Verbatim);
    let id = store.id("lp.rotate_phase").unwrap();
    store.get_mut(id).tensor.data_mut().fill(0.0);
    let h: Vec<f64> = (0..D).map(|_| rng.random_range(-1.0..1.0)).collect();
    assert!(score_one(&lp, &store, &h, 2, &h).abs() < 1e-6);
}

#[test]
fn score_dimension_mismatch_is_an_error() {
    let mut store = ParamStore::new();
    let lp = lp_head(Scorer::DistMult, &mut store, NegativeTerm::Verbatim);
    let tape = Tape::new();
    let p = Binding::new(&tape, &store);
    let h = tape.constant(Tensor::zeros(&[1, D - 1]));
    assert!(lp.score(&p, h, &[0], h).is_err());
}

#[test]
fn linkpred_loss_hand_cases() {
    // φ⁺ = 4·5 = 20, φ⁻ = 4·(-5) = -20.
    let got = scalar_loss(NegativeTerm::Verbatim, &[4.0, 5.0, -5.0], (0, 1), &[(0, 2)]);
    let want = -log_sigmoid(20.0) + log_sigmoid(-20.0);
    assert!((want - -20.0).abs() < 1e-4);
    assert!((got - -20.0).abs() < 1e-4, "{got}");

    // φ⁺ = φ⁻ = 0 with two negatives cancels exactly.
    let got = scalar_loss(NegativeTerm::Verbatim, &[0.0, 1.0, 2.0], (0, 1), &[(0, 2), (1, 0)]);
    assert!(got.abs() < 1e-12, "{got}");

    // Bounded form: -log σ(20) - log σ(20).
    let got = scalar_loss(NegativeTerm::Bounded, &[4.0, 5.0, -5.0], (0, 1), &[(0, 2)]);
    assert!((got - -2.0 * log_sigmoid(20.0)).abs() < 1e-12);
    assert!(got >= 0.0);
}

#[test]
fn linkpred_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for scorer in Scorer::ALL {
        let mut store = ParamStore::new();
        let lp = lp_head(scorer, &mut store, NegativeTerm::Verbatim);
        randomize(&mut store, &mut rng);
        let nodes =
            store.insert("nodes", Tensor::from_fn(&[4, D], |_| rng.random_range(-1.0..1.0)), ParamGroup::Other).unwrap();
        let holdout = EdgeHoldout {
            positives: vec![LocalEdge {
                head: 1,
                rel: RelationId(2),
                tail: 3,
            }],
            negatives: vec![vec![(1, 2), (0, 3), (2, 3)]],
            forced: false,
        };
        let report = dragonforge::numerics::gradcheck::check_store(&store, 1e-5, None, |p| {
            lp.loss(p, &holdout, p.var(nodes)).map(Option::unwrap)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{}: {:?}", scorer.name(), report);
    }
}

#[test]
fn one_step_raises_positive_and_lowers_negative() {
    for scorer in Scorer::ALL {
        let [pos0, pos1, neg0, neg1] = sign_step(scorer);
        assert!(pos1 > pos0, "{}: positive {pos0} -> {pos1}", scorer.name());
        assert!(neg1 < neg0, "{}: negative {neg0} -> {neg1}", scorer.name());
    }
}
