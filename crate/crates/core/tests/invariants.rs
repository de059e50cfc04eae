use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfmgtl_core::adversarial::{Discriminator, ReversalGate};
use sfmgtl_core::autograd::Tape;
use sfmgtl_core::fusion::fused_adjacency_with;
use sfmgtl_core::hierarchy::{aggregate_labels, aux_loss, coarsen, Assigner};
use sfmgtl_core::params::ParamStore;
use sfmgtl_core::Mat;

fn mat(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Mat> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Mat::from_vec(rows, cols, v))
}

fn symmetric(n: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..3.0f64], n * n).prop_map(move |v| {
        Mat::from_fn(n, n, |i, j| if i == j { 0.0 } else { v[i.min(j) * n + i.max(j)] })
    })
}

fn assert_row_stochastic(m: &Mat, tol: f64) {
    for (i, s) in m.row_sums().iter().enumerate() {
        assert!((s - 1.0).abs() <= tol, "row {i} sums to {s}");
    }
    assert!(m.as_slice().iter().all(|&x| x >= 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fused_adjacency_is_row_stochastic(z in mat(12, 4, -5.0, 5.0), w in mat(4, 4, -2.0, 2.0)) {
        let mut tape = Tape::new();
        let (z, w) = (tape.constant(z), tape.constant(w));
        let a_f = fused_adjacency_with(&mut tape, z, w, 2);
        assert_row_stochastic(tape.value(a_f), 1e-6);
    }

    #[test]
    fn assignments_are_row_stochastic(a in symmetric(6), z in mat(6, 4, -3.0, 3.0), seed in 0u64..1000) {
        let mut store = ParamStore::new();
        let assigner = Assigner::new(&mut store, 0, 4, 2, 3, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut tape = Tape::new();
        let (a, z) = (tape.constant(a), tape.constant(z));
        let s = assigner.assign(&mut tape, &store, a, z, 1);
        assert_row_stochastic(tape.value(s), 1e-6);
    }

    #[test]
    fn mass_is_conserved_through_two_levels(
        a in symmetric(8),
        y in mat(8, 2, 0.0, 50.0),
        z in mat(8, 3, -1.0, 1.0),
        l1 in mat(8, 4, -4.0, 4.0),
        l2 in mat(4, 2, -4.0, 4.0),
    ) {
        let mut tape = Tape::new();
        let (mut a_v, mut y_v, mut z_v) = (tape.constant(a.clone()), tape.constant(y.clone()), tape.constant(z));
        for logits in [l1, l2] {
            let logits = tape.constant(logits);
            let s = tape.softmax_rows(logits);
            y_v = aggregate_labels(&mut tape, s, y_v, 1);
            (z_v, a_v) = coarsen(&mut tape, z_v, a_v, s, 1);
        }
        let y_next = tape.value(y_v);
        for f in 0..2 {
            let before: f64 = (0..8).map(|i| y[(i, f)]).sum();
            let after: f64 = (0..2).map(|i| y_next[(i, f)]).sum();
            prop_assert!((before - after).abs() <= 1e-10 * before.max(1.0), "labels {before} vs {after}");
        }
        let (before, after) = (a.sum(), tape.value(a_v).sum());
        prop_assert!((before - after).abs() <= 1e-10 * before.max(1.0), "adjacency {before} vs {after}");
    }

    #[test]
    fn entropy_vanishes_on_one_hot_rows(picks in prop::collection::vec(0usize..4, 6), a in symmetric(6)) {
        let s = Mat::from_fn(6, 4, |i, j| if picks[i] == j { 1.0 } else { 0.0 });
        let mut tape = Tape::new();
        let (a, s) = (tape.constant(a), tape.constant(s));
        let aux = aux_loss(&mut tape, a, s, 1);
        prop_assert_eq!(tape.scalar(aux.entropy), 0.0);
    }

    #[test]
    fn reversal_gate_negates_exactly(x in mat(3, 4, -10.0, 10.0), up in mat(3, 4, -10.0, 10.0), scale in 0.0..5.0f64) {
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let y = ReversalGate { scale }.apply(&mut tape, xv);
        prop_assert_eq!(tape.value(y), &x);
        let w = tape.constant(up.clone());
        let p = tape.mul(y, w);
        let loss = tape.sum(p);
        let g = tape.backward(loss).get(xv).unwrap().clone();
        for (gi, ui) in g.as_slice().iter().zip(up.as_slice()) {
            prop_assert_eq!(gi.to_bits(), (-scale * ui).to_bits());
        }
    }
}

#[test]
fn entropy_is_ln_k_on_uniform_rows() {
    for k in 1..=8 {
        for blocks in [1, 3] {
            let n = 5;
            let s = Mat::filled(n * blocks, k, 1.0 / k as f64);
            let a = Mat::zeros(n * blocks, n);
            let mut tape = Tape::new();
            let (a, s) = (tape.constant(a), tape.constant(s));
            let aux = aux_loss(&mut tape, a, s, blocks);
            let h = tape.scalar(aux.entropy);
            assert!((h - (k as f64).ln()).abs() <= 1e-12, "k = {k}: entropy {h}");
        }
    }
}

#[test]
fn bce_at_half_is_two_ln_two() {
    let mut store = ParamStore::new();
    let disc = Discriminator::new(&mut store, 0, 4, 8, &mut ChaCha8Rng::seed_from_u64(3));
    store.zero_all();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (ns, nt) in [(1, 1), (7, 3), (36, 25)] {
        let mut tape = Tape::new();
        let qs = tape.constant(Mat::from_fn(ns, 4, |_, _| rand::Rng::random_range(&mut rng, -3.0..3.0)));
        let qt = tape.constant(Mat::from_fn(nt, 4, |_, _| rand::Rng::random_range(&mut rng, -3.0..3.0)));
        let loss = disc.domain_loss(&mut tape, &store, ReversalGate::default(), qs, qt).unwrap();
        let v = tape.scalar(loss);
        assert!((v - 2.0 * core::f64::consts::LN_2).abs() <= 1e-12, "{v}");
    }
}
