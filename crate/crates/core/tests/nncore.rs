mod common;

use aps_core::nn::{adam_step, softmax, AdamState, ParamSet, Tape, Tensor};
use proptest::prelude::*;

#[test]
fn every_tape_operation_passes_gradient_check() {
    for op in common::OPS {
        for seed in [1, 2, 3] {
            let err = common::op_grad_error(op, 24, seed);
            assert!(err <= 1e-4, "{op} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn lstm_matches_scalar_loop_over_seeds() {
    for seed in 0..100 {
        let gap = common::lstm_oracle_gap(seed, 3 + (seed % 4) as usize, 2 + (seed % 5) as usize, false);
        assert!(gap <= 1e-12, "seed {seed}: {gap:e}");
    }
}

#[test]
fn lstm_seed_1337_with_unit_input() {
    assert!(common::lstm_oracle_gap(1337, 4, 4, true) <= 1e-12);
}

#[test]
fn adam_updates_are_bit_reproducible() {
    let run = || {
        let mut p = ParamSet::new();
        let id = p.insert("w", Tensor::vector(vec![0.5, -1.0, 2.0])).unwrap();
        let mut s = AdamState::new(&p, 1e-2, 5e-4);
        for k in 0..5 {
            let (values, grads) = p.split_mut();
            let mut t = Tape::new(values);
            let w = t.param(id);
            let loss = t.cross_entropy(w, k % 3);
            t.backward(loss, 1.0, grads);
            adam_step(&mut p, &mut s).unwrap();
        }
        p
    };
    assert!(run().values_bit_equal(&run()));
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = softmax(&logits).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn lstm_oracle_holds_for_any_seed(seed in any::<u64>(), din in 1usize..6, dh in 1usize..6) {
        prop_assert!(common::lstm_oracle_gap(seed, din, dh, false) <= 1e-12);
    }

    #[test]
    fn concat_then_slice_recovers_parts(a in prop::collection::vec(-5.0f64..5.0, 1..6), b in prop::collection::vec(-5.0f64..5.0, 1..6)) {
        let mut t = Tape::new(&[]);
        let (va, vb) = (t.input(a.clone()), t.input(b.clone()));
        let c = t.concat(&[va, vb]);
        let back = t.slice(c, a.len(), b.len());
        prop_assert_eq!(t.value(back), &b[..]);
    }
}
