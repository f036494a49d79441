//! Dense statevector simulator.
//!
//! Qubit 0 is the least-significant bit of a basis-state index, so for two
//! qubits the amplitude order is |q1 q0> = |00>, |01>, |10>, |11>.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 16;

/// Tolerance used when validating externally supplied amplitudes.
pub const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gate {
    H(usize),
    X(usize),
    Z(usize),
    Ry(usize, f64),
    Rz(usize, f64),
    /// Phase gate diag(1, e^{iλ}).
    P(usize, f64),
    Cx {
        control: usize,
        target: usize,
    },
}

impl Gate {
    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::H(q) | Gate::X(q) | Gate::Z(q) | Gate::Ry(q, _) | Gate::Rz(q, _) | Gate::P(q, _) => {
                vec![q]
            }
            Gate::Cx { control, target } => vec![control, target],
        }
    }

    /// The inverse gate: same kind with the angle negated (self-inverse gates unchanged).
    pub fn inverse(&self) -> Gate {
        match *self {
            Gate::Ry(q, a) => Gate::Ry(q, -a),
            Gate::Rz(q, a) => Gate::Rz(q, -a),
            Gate::P(q, a) => Gate::P(q, -a),
            g => g,
        }
    }

    /// 2x2 matrix of a single-qubit gate, `None` for CX.
    pub fn single_qubit_matrix(&self) -> Option<[[Complex64; 2]; 2]> {
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let m = match *self {
            Gate::H(_) => {
                [[c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0)], [c(FRAC_1_SQRT_2, 0.0), c(-FRAC_1_SQRT_2, 0.0)]]
            }
            Gate::X(_) => [[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]],
            Gate::Z(_) => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]],
            Gate::Ry(_, a) => {
                let (s, co) = (a / 2.0).sin_cos();
                [[c(co, 0.0), c(-s, 0.0)], [c(s, 0.0), c(co, 0.0)]]
            }
            Gate::Rz(_, a) => [
                [Complex64::from_polar(1.0, -a / 2.0), c(0.0, 0.0)],
                [c(0.0, 0.0), Complex64::from_polar(1.0, a / 2.0)],
            ],
            Gate::P(_, a) => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), Complex64::from_polar(1.0, a)]],
            Gate::Cx { .. } => return None,
        };
        Some(m)
    }

    /// Full matrix in the gate's local basis: 2x2, or 4x4 for CX with the
    /// control as the low bit.
    pub fn matrix(&self) -> Vec<Vec<Complex64>> {
        match self.single_qubit_matrix() {
            Some(m) => m.iter().map(|r| r.to_vec()).collect(),
            None => {
                let mut m = vec![vec![Complex64::new(0.0, 0.0); 4]; 4];
                // |t c>: control set on indices 1 and 3, which swap
                for (i, j) in [(0, 0), (1, 3), (2, 2), (3, 1)] {
                    m[i][j] = Complex64::new(1.0, 0.0);
                }
                m
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    qubit_count: usize,
    gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(qubit_count: usize) -> Result<Self> {
        if qubit_count == 0 || qubit_count > MAX_QUBITS {
            return Err(Error::UnsupportedQubitCount(qubit_count));
        }
        Ok(Self { qubit_count, gates: Vec::new() })
    }

    pub fn from_gates(qubit_count: usize, gates: impl IntoIterator<Item = Gate>) -> Result<Self> {
        let mut c = Self::new(qubit_count)?;
        for g in gates {
            c.push(g)?;
        }
        Ok(c)
    }

    /// Appends a gate after checking its qubit indices.
    pub fn push(&mut self, gate: Gate) -> Result<()> {
        for q in gate.qubits() {
            if q >= self.qubit_count {
                return Err(Error::QubitOutOfRange { index: q, qubit_count: self.qubit_count });
            }
        }
        if let Gate::Cx { control, target } = gate {
            if control == target {
                return Err(Error::invalid("cx", format!("control and target are both qubit {control}")));
            }
        }
        self.gates.push(gate);
        Ok(())
    }

    pub fn extend(&mut self, other: &Circuit) -> Result<()> {
        if other.qubit_count != self.qubit_count {
            return Err(Error::QubitCountMismatch { expected: self.qubit_count, actual: other.qubit_count });
        }
        self.gates.extend_from_slice(&other.gates);
        Ok(())
    }

    pub fn qubit_count(&self) -> usize {
        self.qubit_count
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// Reversed gate order with every angle negated.
    pub fn inverse(&self) -> Circuit {
        Circuit { qubit_count: self.qubit_count, gates: self.gates.iter().rev().map(Gate::inverse).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    qubit_count: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// |0...0>
    pub fn zero(qubit_count: usize) -> Result<Self> {
        Self::basis(qubit_count, 0)
    }

    pub fn basis(qubit_count: usize, index: usize) -> Result<Self> {
        if qubit_count == 0 || qubit_count > MAX_QUBITS {
            return Err(Error::UnsupportedQubitCount(qubit_count));
        }
        let dim = 1usize << qubit_count;
        if index >= dim {
            return Err(Error::Dimension(format!("basis index {index} >= {dim}")));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(Self { qubit_count, amplitudes })
    }

    /// Wraps caller-provided amplitudes; the length must be a power of two
    /// and the norm 1 within [`NORM_TOL`].
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::Dimension(format!("{len} amplitudes is not a power of two >= 2")));
        }
        let qubit_count = len.trailing_zeros() as usize;
        if qubit_count > MAX_QUBITS {
            return Err(Error::UnsupportedQubitCount(qubit_count));
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { qubit_count, amplitudes })
    }

    pub fn qubit_count(&self) -> usize {
        self.qubit_count
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Returns the state after all gates of `circuit`, in order.
    pub fn apply_circuit(&self, circuit: &Circuit) -> Result<StateVector> {
        if circuit.qubit_count != self.qubit_count {
            return Err(Error::QubitCountMismatch { expected: self.qubit_count, actual: circuit.qubit_count });
        }
        let mut out = self.clone();
        for g in &circuit.gates {
            out.apply_gate_in_place(g);
        }
        Ok(out)
    }

    /// Applies one gate. Indices were validated when the gate entered a
    /// circuit; direct callers must pass in-range qubits.
    pub(crate) fn apply_gate_in_place(&mut self, gate: &Gate) {
        match *gate {
            Gate::Cx { control, target } => {
                let cbit = 1usize << control;
                let tbit = 1usize << target;
                for i in 0..self.amplitudes.len() {
                    if i & cbit != 0 && i & tbit == 0 {
                        self.amplitudes.swap(i, i | tbit);
                    }
                }
            }
            Gate::X(q) => {
                let bit = 1usize << q;
                for i in 0..self.amplitudes.len() {
                    if i & bit == 0 {
                        self.amplitudes.swap(i, i | bit);
                    }
                }
            }
            Gate::Z(q) => {
                let bit = 1usize << q;
                for (i, a) in self.amplitudes.iter_mut().enumerate() {
                    if i & bit != 0 {
                        *a = -*a;
                    }
                }
            }
            Gate::P(q, angle) => {
                let bit = 1usize << q;
                let phase = Complex64::from_polar(1.0, angle);
                for (i, a) in self.amplitudes.iter_mut().enumerate() {
                    if i & bit != 0 {
                        *a *= phase;
                    }
                }
            }
            Gate::Ry(q, angle) => {
                // real rotation; avoid complex multiplies
                let (s, c) = (angle / 2.0).sin_cos();
                let bit = 1usize << q;
                for i in 0..self.amplitudes.len() {
                    if i & bit == 0 {
                        let a0 = self.amplitudes[i];
                        let a1 = self.amplitudes[i | bit];
                        self.amplitudes[i] = a0 * c - a1 * s;
                        self.amplitudes[i | bit] = a0 * s + a1 * c;
                    }
                }
            }
            _ => {
                let m = gate.single_qubit_matrix().expect("single-qubit gate");
                let bit = 1usize << gate.qubits()[0];
                for i in 0..self.amplitudes.len() {
                    if i & bit == 0 {
                        let a0 = self.amplitudes[i];
                        let a1 = self.amplitudes[i | bit];
                        self.amplitudes[i] = m[0][0] * a0 + m[0][1] * a1;
                        self.amplitudes[i | bit] = m[1][0] * a0 + m[1][1] * a1;
                    }
                }
            }
        }
    }

    /// Basis-state probabilities |a_i|².
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// <ψ|Z_qubit|ψ>.
    pub fn expectation_z(&self, qubit: usize) -> Result<f64> {
        if qubit >= self.qubit_count {
            return Err(Error::QubitOutOfRange { index: qubit, qubit_count: self.qubit_count });
        }
        let bit = 1usize << qubit;
        Ok(self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| if i & bit == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum())
    }

    /// Draws one basis index from the Born distribution.
    pub fn measure<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.probabilities(), rng)
    }
}

/// Draws an index from a discrete distribution (inverse CDF).
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding can leave acc slightly below 1; fall back to the last non-zero entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Empirical probabilities from `shots` multinomial samples.
pub fn sampled_probabilities<R: Rng + ?Sized>(probs: &[f64], shots: usize, rng: &mut R) -> Vec<f64> {
    let mut counts = vec![0usize; probs.len()];
    for _ in 0..shots {
        counts[sample_index(probs, rng)] += 1;
    }
    counts.into_iter().map(|c| c as f64 / shots as f64).collect()
}
