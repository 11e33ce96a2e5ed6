//! Bell-diagonal state algebra.
//!
//! A two-qubit pair is tracked as a probability distribution over the four
//! Bell states, indexed by the Pauli error that maps `|Φ⁺⟩` onto each of them
//! when applied to one qubit:
//!
//! ```text
//! I -> |Φ⁺⟩    X -> |Ψ⁺⟩    Y -> |Ψ⁻⟩    Z -> |Φ⁻⟩
//! ```
//!
//! With that labelling, entanglement swapping is a convolution over the Pauli
//! group (modulo phase), a local Pauli is a permutation of the components, and
//! recurrence purification is a parity filter on the bit-flip part.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::RandomStream;

const NORM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("components {0:?} are not a probability distribution")]
    NotNormalized([f64; 4]),
}

fn check_probability(name: &'static str, value: f64) -> Result<f64, StateError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(StateError::OutOfRange { name, value })
    }
}

/// Single-qubit Pauli operator modulo global phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PauliLabel {
    I,
    X,
    Y,
    Z,
}

impl PauliLabel {
    pub const ALL: [PauliLabel; 4] = [PauliLabel::I, PauliLabel::X, PauliLabel::Y, PauliLabel::Z];

    /// Component index inside a [`BellDiagonalState`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Symplectic `(x, z)` bits: `X = (1,0)`, `Z = (0,1)`, `Y = (1,1)`.
    pub fn bits(self) -> (bool, bool) {
        match self {
            PauliLabel::I => (false, false),
            PauliLabel::X => (true, false),
            PauliLabel::Y => (true, true),
            PauliLabel::Z => (false, true),
        }
    }

    pub fn from_bits(x: bool, z: bool) -> Self {
        match (x, z) {
            (false, false) => PauliLabel::I,
            (true, false) => PauliLabel::X,
            (true, true) => PauliLabel::Y,
            (false, true) => PauliLabel::Z,
        }
    }

    /// Group product, phase dropped.
    pub fn compose(self, other: PauliLabel) -> PauliLabel {
        let (x1, z1) = self.bits();
        let (x2, z2) = other.bits();
        PauliLabel::from_bits(x1 ^ x2, z1 ^ z2)
    }
}

impl std::fmt::Display for PauliLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PauliLabel::I => "I",
            PauliLabel::X => "X",
            PauliLabel::Y => "Y",
            PauliLabel::Z => "Z",
        };
        f.write_str(s)
    }
}

/// One-bit BSM outcome label: 0 for `|Ψ⁺⟩`, 1 for `|Ψ⁻⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct CorrectionBit(bool);

impl CorrectionBit {
    pub const ZERO: CorrectionBit = CorrectionBit(false);
    pub const ONE: CorrectionBit = CorrectionBit(true);

    pub fn new(bit: bool) -> Self {
        CorrectionBit(bit)
    }

    pub fn is_set(self) -> bool {
        self.0
    }

    pub fn value(self) -> u8 {
        self.0 as u8
    }
}

impl std::fmt::Display for CorrectionBit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BsmOutcome {
    pub success: bool,
    /// Only meaningful when `success` is set.
    pub correction: CorrectionBit,
}

impl BsmOutcome {
    pub const FAILURE: BsmOutcome = BsmOutcome {
        success: false,
        correction: CorrectionBit::ZERO,
    };
}

/// Mixture of the four Bell states, components ordered `[p_I, p_X, p_Y, p_Z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BellDiagonalState {
    p: [f64; 4],
}

impl BellDiagonalState {
    pub const PERFECT: BellDiagonalState = BellDiagonalState {
        p: [1.0, 0.0, 0.0, 0.0],
    };

    pub const MAXIMALLY_MIXED: BellDiagonalState = BellDiagonalState {
        p: [0.25, 0.25, 0.25, 0.25],
    };

    pub fn new(p_i: f64, p_x: f64, p_y: f64, p_z: f64) -> Result<Self, StateError> {
        Self::from_components([p_i, p_x, p_y, p_z])
    }

    pub fn from_components(p: [f64; 4]) -> Result<Self, StateError> {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|&c| !(0.0..=1.0 + NORM_TOLERANCE).contains(&c))
            || (sum - 1.0).abs() > NORM_TOLERANCE
        {
            return Err(StateError::NotNormalized(p));
        }
        Ok(BellDiagonalState { p })
    }

    /// Werner state with the given fidelity to `|Φ⁺⟩`.
    pub fn werner(fidelity: f64) -> Result<Self, StateError> {
        let f = check_probability("fidelity", fidelity)?;
        let e = (1.0 - f) / 3.0;
        Ok(BellDiagonalState { p: [f, e, e, e] })
    }

    pub fn components(&self) -> [f64; 4] {
        self.p
    }

    pub fn component(&self, label: PauliLabel) -> f64 {
        self.p[label.index()]
    }

    /// Overlap with `|Φ⁺⟩`.
    pub fn fidelity(&self) -> f64 {
        self.p[0]
    }

    /// Mix with the maximally mixed state: `(1-λ)·s + λ·𝟙/4`.
    pub fn depolarize(&self, lambda: f64) -> Result<Self, StateError> {
        let lambda = check_probability("lambda", lambda)?;
        let keep = 1.0 - lambda;
        let floor = lambda / 4.0;
        Ok(BellDiagonalState {
            p: self.p.map(|c| keep * c + floor),
        })
    }

    /// Pair produced by a Bell measurement on one qubit of `self` and one qubit
    /// of `other`, expressed in the frame where the measurement outcome has
    /// already been accounted for. Errors compose in the Pauli group.
    pub fn swap_compose(&self, other: &BellDiagonalState) -> BellDiagonalState {
        let mut out = [0.0; 4];
        for m in PauliLabel::ALL {
            for n in PauliLabel::ALL {
                out[m.compose(n).index()] += self.p[m.index()] * other.p[n.index()];
            }
        }
        BellDiagonalState { p: out }
    }

    /// Apply a local Pauli to one qubit of the pair. Relabels the components;
    /// involutive for every label.
    pub fn apply_pauli(&self, pauli: PauliLabel) -> BellDiagonalState {
        let mut out = [0.0; 4];
        for k in PauliLabel::ALL {
            out[k.index()] = self.p[pauli.compose(k).index()];
        }
        BellDiagonalState { p: out }
    }

    /// Success probability and output of one recurrence step: bilateral CNOT
    /// from `self` (kept) onto `target` (measured in Z), kept when both sides
    /// read the same parity.
    pub fn recurrence(&self, target: &BellDiagonalState) -> (f64, Option<BellDiagonalState>) {
        let mut out = [0.0; 4];
        for m in PauliLabel::ALL {
            for n in PauliLabel::ALL {
                let (xm, zm) = m.bits();
                let (xn, zn) = n.bits();
                if xm != xn {
                    continue;
                }
                let label = PauliLabel::from_bits(xm, zm ^ zn);
                out[label.index()] += self.p[m.index()] * target.p[n.index()];
            }
        }
        let p_success: f64 = out.iter().sum();
        if p_success <= 0.0 {
            return (0.0, None);
        }
        let state = BellDiagonalState {
            p: out.map(|c| c / p_success),
        };
        (p_success, Some(state))
    }
}

impl Default for BellDiagonalState {
    fn default() -> Self {
        BellDiagonalState::PERFECT
    }
}

pub fn werner_from_fidelity(f: f64) -> Result<BellDiagonalState, StateError> {
    BellDiagonalState::werner(f)
}

pub fn depolarize(s: &BellDiagonalState, lambda: f64) -> Result<BellDiagonalState, StateError> {
    s.depolarize(lambda)
}

pub fn swap_compose(a: &BellDiagonalState, b: &BellDiagonalState) -> BellDiagonalState {
    a.swap_compose(b)
}

pub fn apply_pauli(s: &BellDiagonalState, p: PauliLabel) -> BellDiagonalState {
    s.apply_pauli(p)
}

/// Z when the two nodes saw different `|Ψ±⟩` outcomes, otherwise nothing.
pub fn correction_for(local: CorrectionBit, partner: CorrectionBit) -> PauliLabel {
    if local != partner {
        PauliLabel::Z
    } else {
        PauliLabel::I
    }
}

/// One linear-optics BSM trial.
///
/// Consumes exactly two draws from `rng` when both photons are present (success
/// coin, then the `|Ψ±⟩` coin) and none otherwise, so the stream position does
/// not depend on the outcome.
pub fn bsm_attempt(both_photons_arrived: bool, p_bsa: f64, rng: &mut RandomStream) -> BsmOutcome {
    if !both_photons_arrived {
        return BsmOutcome::FAILURE;
    }
    let success = rng.bernoulli(p_bsa);
    let correction = CorrectionBit::new(rng.bernoulli(0.5));
    if success {
        BsmOutcome {
            success,
            correction,
        }
    } else {
        BsmOutcome::FAILURE
    }
}

/// Outcome of one purification attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Purified {
    pub kept: bool,
    pub state: Option<BellDiagonalState>,
    pub success_probability: f64,
}

/// Two-to-one recurrence purification with a single Bernoulli draw deciding
/// whether the surviving pair is kept.
pub fn purify(a: &BellDiagonalState, b: &BellDiagonalState, rng: &mut RandomStream) -> Purified {
    let (p, out) = a.recurrence(b);
    let kept = rng.bernoulli(p);
    Purified {
        kept,
        state: if kept { out } else { None },
        success_probability: p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &BellDiagonalState, b: [f64; 4], tol: f64) -> bool {
        a.components().iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn arb_state() -> impl Strategy<Value = BellDiagonalState> {
        prop::array::uniform4(0.0f64..1.0).prop_filter_map("nonzero", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-6).then(|| BellDiagonalState { p: w.map(|x| x / s) })
        })
    }

    #[test]
    fn pauli_group_table() {
        use PauliLabel::*;
        for p in PauliLabel::ALL {
            assert_eq!(I.compose(p), p);
            assert_eq!(p.compose(p), I);
            for q in PauliLabel::ALL {
                for r in PauliLabel::ALL {
                    assert_eq!(p.compose(q).compose(r), p.compose(q.compose(r)));
                }
            }
        }
        assert_eq!(X.compose(Z), Y);
        assert_eq!(Z.compose(Y), X);
    }

    #[test]
    fn werner_examples() {
        assert!(close(&werner_from_fidelity(1.0).unwrap(), [1.0, 0.0, 0.0, 0.0], 0.0));
        assert!(close(&werner_from_fidelity(0.25).unwrap(), [0.25; 4], 1e-15));
        assert!(close(&werner_from_fidelity(0.7).unwrap(), [0.7, 0.1, 0.1, 0.1], 1e-15));
        assert!(werner_from_fidelity(1.2).is_err());
        assert!(werner_from_fidelity(-0.1).is_err());
        assert!(werner_from_fidelity(f64::NAN).is_err());
    }

    #[test]
    fn depolarize_examples() {
        let s = werner_from_fidelity(0.8).unwrap();
        assert_eq!(depolarize(&s, 0.0).unwrap(), s);
        let full = depolarize(&BellDiagonalState::PERFECT, 1.0).unwrap();
        assert!(close(&full, [0.25; 4], 0.0));
        let tuned = depolarize(&BellDiagonalState::PERFECT, 0.4).unwrap();
        assert!(close(&tuned, [0.7, 0.1, 0.1, 0.1], 1e-15));
        assert!(depolarize(&s, 1.5).is_err());
    }

    #[test]
    fn swap_examples() {
        let perfect = BellDiagonalState::PERFECT;
        let w = werner_from_fidelity(0.7).unwrap();
        assert_eq!(swap_compose(&perfect, &perfect), perfect);
        assert!(close(&swap_compose(&perfect, &w), [0.7, 0.1, 0.1, 0.1], 1e-15));
        // F1*F2 + 3*e1*e2
        assert!((swap_compose(&w, &w).fidelity() - 0.52).abs() < 1e-12);
    }

    #[test]
    fn pauli_examples() {
        let phi_minus = BellDiagonalState::new(0.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(apply_pauli(&phi_minus, PauliLabel::Z), BellDiagonalState::PERFECT);
        let w = werner_from_fidelity(0.7).unwrap();
        assert_eq!(apply_pauli(&w, PauliLabel::I), w);
        let skewed = BellDiagonalState::new(0.7, 0.2, 0.05, 0.05).unwrap();
        assert!(close(&apply_pauli(&skewed, PauliLabel::Z), [0.05, 0.05, 0.2, 0.7], 0.0));
        assert!(close(&apply_pauli(&skewed, PauliLabel::X), [0.2, 0.7, 0.05, 0.05], 0.0));
    }

    #[test]
    fn correction_table() {
        use CorrectionBit as C;
        assert_eq!(correction_for(C::ZERO, C::ZERO), PauliLabel::I);
        assert_eq!(correction_for(C::ZERO, C::ONE), PauliLabel::Z);
        assert_eq!(correction_for(C::ONE, C::ZERO), PauliLabel::Z);
        assert_eq!(correction_for(C::ONE, C::ONE), PauliLabel::I);
    }

    #[test]
    fn recurrence_werner_values() {
        let w = werner_from_fidelity(0.7).unwrap();
        let (p, out) = w.recurrence(&w);
        assert!((p - 0.68).abs() < 1e-12);
        assert!((out.unwrap().fidelity() - 0.5 / 0.68).abs() < 1e-12);

        let mixed = BellDiagonalState::MAXIMALLY_MIXED;
        let (_, out) = mixed.recurrence(&mixed);
        assert!((out.unwrap().fidelity() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn purify_perfect_always_kept() {
        let mut rng = RandomStream::derive(7, "purify-test");
        for _ in 0..100 {
            let r = purify(&BellDiagonalState::PERFECT, &BellDiagonalState::PERFECT, &mut rng);
            assert!(r.kept);
            assert_eq!(r.state, Some(BellDiagonalState::PERFECT));
        }
        assert_eq!(rng.draws(), 100);
    }

    #[test]
    fn bsm_missing_photon_draws_nothing() {
        let mut rng = RandomStream::derive(1, "bsa");
        assert!(!bsm_attempt(false, 0.5, &mut rng).success);
        assert_eq!(rng.draws(), 0);
        assert!(bsm_attempt(true, 1.0, &mut rng).success);
        assert_eq!(rng.draws(), 2);
        assert!(!bsm_attempt(true, 0.0, &mut rng).success);
        assert_eq!(rng.draws(), 4);
    }

    #[test]
    fn bsm_frequencies_within_three_sigma() {
        let mut rng = RandomStream::derive(20240101, "bsa-frequency");
        let trials = 100_000u32;
        let mut successes = 0u32;
        let mut ones = 0u32;
        for _ in 0..trials {
            let o = bsm_attempt(true, 0.5, &mut rng);
            if o.success {
                successes += 1;
                ones += o.correction.value() as u32;
            }
        }
        let n = trials as f64;
        let sigma = (0.25 / n).sqrt();
        assert!((successes as f64 / n - 0.5).abs() < 3.0 * sigma);
        let ns = successes as f64;
        assert!((ones as f64 / ns - 0.5).abs() < 3.0 * (0.25 / ns).sqrt());
    }

    proptest! {
        #[test]
        fn operations_preserve_normalization(a in arb_state(), b in arb_state(), l in 0.0f64..=1.0) {
            let results = [
                a.depolarize(l).unwrap(),
                a.swap_compose(&b),
                a.apply_pauli(PauliLabel::Y),
            ];
            for s in results.iter().chain(a.recurrence(&b).1.iter()) {
                let sum: f64 = s.components().iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(s.components().iter().all(|&c| c >= 0.0));
            }
        }

        #[test]
        fn swap_is_commutative_associative(a in arb_state(), b in arb_state(), c in arb_state()) {
            let ab = a.swap_compose(&b);
            let ba = b.swap_compose(&a);
            prop_assert!(close(&ab, ba.components(), 1e-15));
            let left = ab.swap_compose(&c);
            let right = a.swap_compose(&b.swap_compose(&c));
            prop_assert!(close(&left, right.components(), 1e-14));
            prop_assert_eq!(a.swap_compose(&BellDiagonalState::PERFECT), a);
        }

        #[test]
        fn pauli_is_involutive(a in arb_state()) {
            for p in PauliLabel::ALL {
                prop_assert_eq!(a.apply_pauli(p).apply_pauli(p), a);
            }
        }

        #[test]
        fn correction_is_symmetric(x: bool, y: bool) {
            let (a, b) = (CorrectionBit::new(x), CorrectionBit::new(y));
            prop_assert_eq!(correction_for(a, b), correction_for(b, a));
        }

        #[test]
        fn purification_improves_werner_above_half(f in 0.5001f64..0.9999) {
            let w = werner_from_fidelity(f).unwrap();
            let (p, out) = w.recurrence(&w);
            let e = (1.0 - f) / 3.0;
            prop_assert!((p - (f * f + 2.0 * f * (1.0 - f) / 3.0 + 5.0 * e * e)).abs() < 1e-12);
            prop_assert!(out.unwrap().fidelity() > f);
        }
    }
}
