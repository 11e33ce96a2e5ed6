mod common;

use common::{max_diff, oracle_apply_pauli, oracle_purify, oracle_swap};
use proptest::prelude::*;
use qlink::engine::RandomStream;
use qlink::quantum::{purify, BellDiagonalState, PauliLabel};

const TOL: f64 = 1e-9;

fn arb_state() -> impl Strategy<Value = BellDiagonalState> {
    prop::array::uniform4(0.0f64..1.0).prop_filter_map("nonzero weight", |w| {
        let total: f64 = w.iter().sum();
        (total > 1e-3).then(|| BellDiagonalState::from_components(w.map(|x| x / total)).unwrap())
    })
}

fn arb_label() -> impl Strategy<Value = PauliLabel> {
    prop::sample::select(PauliLabel::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn swap_compose_matches_projection(a in arb_state(), b in arb_state()) {
        let (expected, off) = oracle_swap(&a, &b);
        prop_assert!(max_diff(a.swap_compose(&b).components(), expected) < TOL);
        prop_assert!(off < TOL);
    }

    #[test]
    fn apply_pauli_matches_conjugation(s in arb_state(), p in arb_label()) {
        prop_assert!(max_diff(s.apply_pauli(p).components(), oracle_apply_pauli(&s, p)) < TOL);
    }

    #[test]
    fn recurrence_matches_bilateral_cnot(a in arb_state(), b in arb_state()) {
        let (p, state) = a.recurrence(&b);
        let (p_oracle, state_oracle) = oracle_purify(&a, &b);
        prop_assert!((p - p_oracle).abs() < TOL);
        match (state, state_oracle) {
            (Some(s), Some(o)) => prop_assert!(max_diff(s.components(), o) < TOL),
            (None, None) => {}
            other => prop_assert!(false, "mismatch {other:?}"),
        }
    }

    #[test]
    fn purify_keeps_oracle_state(a in arb_state(), b in arb_state(), seed in any::<u64>()) {
        let mut rng = RandomStream::derive(seed, "oracle/purify");
        let out = purify(&a, &b, &mut rng);
        let (p_oracle, state_oracle) = oracle_purify(&a, &b);
        prop_assert!((out.success_probability - p_oracle).abs() < TOL);
        prop_assert_eq!(rng.draws(), 1);
        if let Some(s) = out.state {
            prop_assert!(out.kept);
            prop_assert!(max_diff(s.components(), state_oracle.unwrap()) < TOL);
        } else {
            prop_assert!(!out.kept);
        }
    }
}

#[test]
fn werner_recurrence_value() {
    let w = BellDiagonalState::werner(0.7).unwrap();
    let (p, out) = oracle_purify(&w, &w);
    // F' = (F^2 + ((1-F)/3)^2) / (F^2 + 2F(1-F)/3 + 5((1-F)/3)^2)
    let f: f64 = 0.7;
    let e = (1.0 - f) / 3.0;
    let norm = f * f + 2.0 * f * e + 5.0 * e * e;
    assert!((p - norm).abs() < 1e-12);
    assert!((out.unwrap()[0] - (f * f + e * e) / norm).abs() < 1e-12);
    assert!((out.unwrap()[0] - 0.735_294_117_647).abs() < 1e-9);
}

#[test]
fn perfect_pairs_swap_to_perfect() {
    let (c, _) = oracle_swap(&BellDiagonalState::PERFECT, &BellDiagonalState::PERFECT);
    assert!(max_diff(c, [1.0, 0.0, 0.0, 0.0]) < 1e-12);
}

#[test]
fn depolarized_source_through_swaps_keeps_fidelity() {
    let src = BellDiagonalState::PERFECT.depolarize(0.4).unwrap();
    let (half, _) = oracle_swap(&BellDiagonalState::PERFECT, &src);
    let half = BellDiagonalState::from_components(half).unwrap();
    let (pair, _) = oracle_swap(&half, &BellDiagonalState::PERFECT);
    assert!((pair[0] - 0.7).abs() < 1e-12);
}
