//! Brute-force density-matrix oracle for Bell-diagonal algebra.
//!
//! Qubits are ordered left to right, most significant bit first. Bell labels
//! follow I -> Phi+, X -> Psi+, Y -> Psi-, Z -> Phi-.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use qlink::engine::RandomStream;
use qlink::quantum::{BellDiagonalState, PauliLabel};

const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

pub fn bell_vector(label: PauliLabel) -> DVector<f64> {
    let v = match label {
        PauliLabel::I => [H, 0.0, 0.0, H],
        PauliLabel::X => [0.0, H, H, 0.0],
        PauliLabel::Y => [0.0, H, -H, 0.0],
        PauliLabel::Z => [H, 0.0, 0.0, -H],
    };
    DVector::from_row_slice(&v)
}

pub fn density(state: &BellDiagonalState) -> DMatrix<f64> {
    let mut rho = DMatrix::zeros(4, 4);
    for label in PauliLabel::ALL {
        let v = bell_vector(label);
        rho += state.component(label) * &v * v.transpose();
    }
    rho
}

/// Bell-basis diagonal of a two-qubit density matrix.
pub fn bell_components(rho: &DMatrix<f64>) -> [f64; 4] {
    PauliLabel::ALL.map(|label| {
        let v = bell_vector(label);
        (v.transpose() * rho * &v)[(0, 0)]
    })
}

/// Largest Bell-basis off-diagonal magnitude.
pub fn bell_off_diagonal(rho: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for a in PauliLabel::ALL {
        for b in PauliLabel::ALL {
            if a != b {
                let x = (bell_vector(a).transpose() * rho * bell_vector(b))[(0, 0)];
                worst = worst.max(x.abs());
            }
        }
    }
    worst
}

fn pauli_matrix(label: PauliLabel) -> DMatrix<f64> {
    // Y is taken as iY so it stays real; phases cancel in conjugation.
    let m = match label {
        PauliLabel::I => [1.0, 0.0, 0.0, 1.0],
        PauliLabel::X => [0.0, 1.0, 1.0, 0.0],
        PauliLabel::Y => [0.0, 1.0, -1.0, 0.0],
        PauliLabel::Z => [1.0, 0.0, 0.0, -1.0],
    };
    DMatrix::from_row_slice(2, 2, &m)
}

pub fn oracle_apply_pauli(state: &BellDiagonalState, label: PauliLabel) -> [f64; 4] {
    let u = pauli_matrix(label).kronecker(&DMatrix::identity(2, 2));
    bell_components(&(&u * density(state) * u.transpose()))
}

/// Trace out the qubits not listed in `keep` from an n-qubit operator.
fn partial_trace(rho: &DMatrix<f64>, n: usize, keep: &[usize]) -> DMatrix<f64> {
    let bit = |idx: usize, q: usize| (idx >> (n - 1 - q)) & 1;
    let dim = 1 << keep.len();
    let mut out = DMatrix::zeros(dim, dim);
    let reduced = |idx: usize| keep.iter().fold(0, |acc, q| (acc << 1) | bit(idx, *q));
    let traced: Vec<usize> = (0..n).filter(|q| !keep.contains(q)).collect();
    for i in 0..1 << n {
        for j in 0..1 << n {
            if traced.iter().all(|q| bit(i, *q) == bit(j, *q)) {
                out[(reduced(i), reduced(j))] += rho[(i, j)];
            }
        }
    }
    out
}

/// Project the middle qubits of two pairs onto Phi+ and return the
/// normalized outer pair.
pub fn oracle_swap(a: &BellDiagonalState, b: &BellDiagonalState) -> ([f64; 4], f64) {
    let rho = density(a).kronecker(&density(b));
    let phi = bell_vector(PauliLabel::I);
    let proj = DMatrix::identity(2, 2)
        .kronecker(&(&phi * phi.transpose()))
        .kronecker(&DMatrix::identity(2, 2));
    let projected = &proj * rho * &proj;
    let outer = partial_trace(&projected, 4, &[0, 3]);
    let p = outer.trace();
    let rho_out = outer / p;
    (bell_components(&rho_out), bell_off_diagonal(&rho_out))
}

/// CNOT between two of `n` qubits as a permutation matrix.
fn cnot(n: usize, control: usize, target: usize) -> DMatrix<f64> {
    let dim = 1 << n;
    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let j = if (i >> (n - 1 - control)) & 1 == 1 {
            i ^ (1 << (n - 1 - target))
        } else {
            i
        };
        m[(j, i)] = 1.0;
    }
    m
}

/// Bilateral CNOT from pair `a` (qubits 0,1) onto pair `b` (qubits 2,3),
/// then Z measurement of pair `b`, kept on equal outcomes. Returns the
/// success probability and the kept state's Bell components.
pub fn oracle_purify(a: &BellDiagonalState, b: &BellDiagonalState) -> (f64, Option<[f64; 4]>) {
    let rho = density(a).kronecker(&density(b));
    let u = cnot(4, 0, 2) * cnot(4, 1, 3);
    let after = &u * rho * u.transpose();
    let mut kept = DMatrix::zeros(4, 4);
    for outcome in [0usize, 3] {
        let mut proj = DMatrix::zeros(4, 4);
        proj[(outcome, outcome)] = 1.0;
        let full = DMatrix::identity(4, 4).kronecker(&proj);
        kept += partial_trace(&(&full * &after * &full), 4, &[0, 1]);
    }
    let p = kept.trace();
    if p <= 0.0 {
        return (0.0, None);
    }
    (p, Some(bell_components(&(kept / p))))
}

/// Random Bell-diagonal state from a stream, with occasional zero components.
pub fn random_state(rng: &mut RandomStream) -> BellDiagonalState {
    loop {
        let w = [(); 4].map(|_| {
            let u = rng.uniform();
            if u < 0.1 {
                0.0
            } else {
                rng.uniform()
            }
        });
        let total: f64 = w.iter().sum();
        if total > 1e-3 {
            return BellDiagonalState::from_components(w.map(|x| x / total)).expect("normalized");
        }
    }
}

pub fn max_diff(a: [f64; 4], b: [f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
