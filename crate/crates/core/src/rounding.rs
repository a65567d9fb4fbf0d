//! From vectors to measurements.
//!
//! A vector `(u_0, u_1, .., u_m)` is mapped to the Hermitian operator
//! `u_0 I + sum_j u_j sigma_j` where the `sigma_j` pairwise anticommute and
//! square to the identity. Uniform binary solutions map to projective
//! measurements directly; general solutions get a shifted and renormalized
//! identity share so every element is PSD.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{norm, CMatrix};
use crate::recovery::VectorStrategy;

/// Default cap on the operator dimension `d`.
pub const DEFAULT_DIM_CAP: usize = 1 << 12;

/// Allowed slack on first coordinates before they are clamped into `[0, 1]`.
const FIRST_COORD_SLACK: f64 = 1e-6;
/// Allowed deviation from `x_0 = 1/2` and `|x_tail| = 1/2` in uniform rounding.
const UNIFORM_SLACK: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoundingError {
    #[error(
        "operator dimension 2^{log2_d} exceeds the cap {cap}; \
         try --family compact or a larger --rank-tol"
    )]
    DimensionCapExceeded { log2_d: usize, cap: usize },
    #[error("uniform rounding needs k = 2, got k = {0}")]
    UniformNeedsBinary(usize),
    #[error("vectors are not uniform: {0}")]
    NotUniform(String),
    #[error("first coordinate {value} outside [0, 1]")]
    FirstCoordinateOutOfRange { value: f64 },
    #[error("family has {family} generators but vectors need {needed}")]
    FamilyTooSmall { family: usize, needed: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyMode {
    /// `Z^(i-1) X I^(m-i)`, dimension `2^m`.
    Tensor,
    /// Jordan-Wigner pairs `Z^j X I..`, `Z^j Y I..`, dimension `2^ceil(m/2)`.
    Compact,
}

impl fmt::Display for FamilyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Tensor => "tensor",
            Self::Compact => "compact",
        })
    }
}

impl FromStr for FamilyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tensor" => Ok(Self::Tensor),
            "compact" => Ok(Self::Compact),
            other => Err(format!("unknown family mode {other:?} (expected tensor or compact)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    /// Entry `<row|P|col>` for single-qubit bits.
    fn entry(self, row: usize, col: usize) -> Complex64 {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        match (self, row, col) {
            (Pauli::I, r, c) => if r == c { one } else { zero },
            (Pauli::X, r, c) => if r != c { one } else { zero },
            (Pauli::Y, 0, 1) => Complex64::new(0.0, -1.0),
            (Pauli::Y, 1, 0) => Complex64::new(0.0, 1.0),
            (Pauli::Y, _, _) => zero,
            (Pauli::Z, 0, 0) => one,
            (Pauli::Z, 1, 1) => -one,
            (Pauli::Z, _, _) => zero,
        }
    }

    fn flips(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }
}

/// A tensor product of single-qubit Paulis; slot 0 is the most significant
/// qubit. Each row of the matrix has exactly one non-zero entry.
#[derive(Debug, Clone, PartialEq, Eq)]
struct PauliString {
    slots: Vec<Pauli>,
    flip_mask: usize,
}

impl PauliString {
    fn new(slots: Vec<Pauli>) -> Self {
        let n = slots.len();
        let flip_mask =
            slots.iter().enumerate().filter(|(_, p)| p.flips()).fold(0, |m, (j, _)| m | (1 << (n - 1 - j)));
        Self { slots, flip_mask }
    }

    /// Column of the non-zero entry in `row`, and its value.
    #[inline]
    fn row_entry(&self, row: usize) -> (usize, Complex64) {
        let n = self.slots.len();
        let col = row ^ self.flip_mask;
        let mut val = Complex64::new(1.0, 0.0);
        for (j, p) in self.slots.iter().enumerate() {
            let bit = n - 1 - j;
            val *= p.entry((row >> bit) & 1, (col >> bit) & 1);
        }
        (col, val)
    }
}

/// Hermitian, pairwise anticommuting involutions `sigma_1 .. sigma_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnticommutingFamily {
    pub m: usize,
    pub d: usize,
    pub mode: FamilyMode,
    strings: Vec<PauliString>,
}

impl AnticommutingFamily {
    pub fn build(m: usize, mode: FamilyMode, dim_cap: usize) -> Result<Self, RoundingError> {
        let qubits = match mode {
            FamilyMode::Tensor => m,
            FamilyMode::Compact => m.div_ceil(2),
        };
        if qubits >= usize::BITS as usize - 1 || (1usize << qubits) > dim_cap {
            return Err(RoundingError::DimensionCapExceeded { log2_d: qubits, cap: dim_cap });
        }
        let strings = (0..m)
            .map(|i| {
                let (slot, op) = match mode {
                    FamilyMode::Tensor => (i, Pauli::X),
                    FamilyMode::Compact => (i / 2, if i % 2 == 0 { Pauli::X } else { Pauli::Y }),
                };
                let slots = (0..qubits)
                    .map(|j| match j.cmp(&slot) {
                        std::cmp::Ordering::Less => Pauli::Z,
                        std::cmp::Ordering::Equal => op,
                        std::cmp::Ordering::Greater => Pauli::I,
                    })
                    .collect();
                PauliString::new(slots)
            })
            .collect();
        Ok(Self { m, d: 1 << qubits, mode, strings })
    }

    /// Dense `sigma_{i+1}` (0-based index into the generators).
    pub fn sigma(&self, i: usize) -> CMatrix {
        let mut out = CMatrix::zeros(self.d);
        for r in 0..self.d {
            let (c, v) = self.strings[i].row_entry(r);
            out.set(r, c, v);
        }
        out
    }

    /// `c0 I + sum_j coeffs[j] sigma_{j+1}`; missing coefficients are zero.
    pub fn combination(&self, c0: f64, coeffs: &[f64]) -> CMatrix {
        assert!(coeffs.len() <= self.m, "more coefficients than generators");
        let mut out = CMatrix::identity(self.d).scale(c0);
        for (string, &c) in self.strings.iter().zip(coeffs) {
            if c == 0.0 {
                continue;
            }
            for r in 0..self.d {
                let (col, v) = string.row_entry(r);
                out.add_at(r, col, v * c);
            }
        }
        out
    }

    /// Worst deviations from the defining identities, computed densely.
    pub fn identity_defects(&self) -> FamilyDefects {
        let id = CMatrix::identity(self.d);
        let sigmas: Vec<CMatrix> = (0..self.m).map(|i| self.sigma(i)).collect();
        let mut out = FamilyDefects::default();
        for (i, s) in sigmas.iter().enumerate() {
            out.hermitian = out.hermitian.max(s.hermitian_defect());
            out.square = out.square.max(s.matmul(s).sub(&id).max_abs());
            out.trace = out.trace.max(s.trace().norm());
            for t in &sigmas[i + 1..] {
                out.anticommutator = out.anticommutator.max(s.matmul(t).add(&t.matmul(s)).max_abs());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FamilyDefects {
    pub hermitian: f64,
    pub square: f64,
    pub trace: f64,
    pub anticommutator: f64,
}

impl FamilyDefects {
    pub fn max(&self) -> f64 {
        self.hermitian.max(self.square).max(self.trace).max(self.anticommutator)
    }
}

/// Local measurements for both players; the shared state is the maximally
/// entangled state of dimension `d`. Bob's operators are stored as built;
/// evaluation applies the transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumStrategy {
    pub d: usize,
    pub k: usize,
    /// `alice[s][a]`
    pub alice: Vec<Vec<CMatrix>>,
    /// `bob[t][b]`
    pub bob: Vec<Vec<CMatrix>>,
    pub projective: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StrategyDefects {
    /// Largest `|sum_a E_a - I|` entry.
    pub completeness: f64,
    pub hermitian: f64,
    /// Smallest eigenvalue over all elements, when computed.
    pub min_eigenvalue: Option<f64>,
    /// Largest `|E² - E|` entry, when computed.
    pub projection_residual: Option<f64>,
}

impl QuantumStrategy {
    pub fn measurements(&self) -> impl Iterator<Item = &Vec<CMatrix>> {
        self.alice.iter().chain(self.bob.iter())
    }

    /// True when every element has no eigenvalue below `-tol`.
    pub fn all_psd_within(&self, tol: f64) -> bool {
        self.measurements().flatten().all(|e| e.is_psd_within(tol))
    }

    /// Checks completeness and Hermiticity always. Eigenvalues and the
    /// projection residual cost `O(d³)` per element and are only computed
    /// for `d <= spectral_cap`.
    pub fn defects(&self, spectral_cap: usize) -> StrategyDefects {
        let id = CMatrix::identity(self.d);
        let mut out = StrategyDefects::default();
        let spectral = self.d <= spectral_cap;
        let mut min_eig = f64::INFINITY;
        let mut proj = 0.0f64;
        for meas in self.measurements() {
            let mut sum = CMatrix::zeros(self.d);
            for e in meas {
                sum = sum.add(e);
                out.hermitian = out.hermitian.max(e.hermitian_defect());
                if spectral {
                    if let Ok(ev) = e.hermitian_eigenvalues() {
                        min_eig = min_eig.min(ev[0]);
                    } else {
                        min_eig = f64::NAN;
                    }
                    if self.projective {
                        proj = proj.max(e.matmul(e).sub(e).max_abs());
                    }
                }
            }
            out.completeness = out.completeness.max(sum.sub(&id).max_abs());
        }
        if spectral {
            out.min_eigenvalue = Some(min_eig);
            if self.projective {
                out.projection_residual = Some(proj);
            }
        }
        out
    }
}

fn check_family(vs: &VectorStrategy, fam: &AnticommutingFamily) -> Result<(), RoundingError> {
    if fam.m < vs.m_dim {
        return Err(RoundingError::FamilyTooSmall { family: fam.m, needed: vs.m_dim });
    }
    Ok(())
}

/// Projective rounding for uniform binary solutions.
///
/// Each question's pair is snapped onto the exact uniform form
/// `x_0 = 1/2`, `|x_tail| = 1/2`, `v_1 = z - v_0` before mapping, so the
/// resulting operators are exact projections summing to the identity.
pub fn round_uniform_binary(vs: &VectorStrategy, fam: &AnticommutingFamily) -> Result<QuantumStrategy, RoundingError> {
    if vs.k() != 2 {
        return Err(RoundingError::UniformNeedsBinary(vs.k()));
    }
    check_family(vs, fam)?;
    let project = |pair: &[Vec<f64>]| -> Result<Vec<CMatrix>, RoundingError> {
        let (u0, u1) = (&pair[0], &pair[1]);
        for (i, u) in [u0, u1].into_iter().enumerate() {
            if (u[0] - 0.5).abs() > UNIFORM_SLACK {
                return Err(RoundingError::NotUniform(format!("answer {i} has first coordinate {}", u[0])));
            }
        }
        let tail: Vec<f64> = u0[1..].iter().zip(&u1[1..]).map(|(a, b)| 0.5 * (a - b)).collect();
        let tn = norm(&tail);
        if (tn - 0.5).abs() > UNIFORM_SLACK {
            return Err(RoundingError::NotUniform(format!("residual norm {tn}, expected 1/2")));
        }
        let tail: Vec<f64> = tail.iter().map(|x| 0.5 * x / tn).collect();
        let neg: Vec<f64> = tail.iter().map(|x| -x).collect();
        Ok(vec![fam.combination(0.5, &tail), fam.combination(0.5, &neg)])
    };
    let alice = vs.v.chunks(2).map(project).collect::<Result<Vec<_>, _>>()?;
    let bob = vs.w.chunks(2).map(project).collect::<Result<Vec<_>, _>>()?;
    Ok(QuantumStrategy { d: fam.d, k: 2, alice, bob, projective: true })
}

/// Scaled POVM rounding for any `k`.
///
/// For one question with vectors `u^(1..k)`, element `i` is
/// `(c_i I + sum_j u^(i)_j sigma_j) / D` with
/// `c_i = max(u_0, sqrt(u_0 (1 - u_0)))` and `D = sum_i c_i`.
///
/// Solver noise is absorbed before mapping: first coordinates are clamped
/// into `[0, 1]`, the tails are recentred to sum to zero, and `c_i` is raised
/// to the tail norm if noise pushed the norm above it.
pub fn round_general(vs: &VectorStrategy, fam: &AnticommutingFamily) -> Result<QuantumStrategy, RoundingError> {
    check_family(vs, fam)?;
    let k = vs.k();
    let build = |group: &[Vec<f64>]| -> Result<Vec<CMatrix>, RoundingError> {
        let mut firsts = Vec::with_capacity(k);
        for u in group {
            let x = u[0];
            if !(-FIRST_COORD_SLACK..=1.0 + FIRST_COORD_SLACK).contains(&x) || !x.is_finite() {
                return Err(RoundingError::FirstCoordinateOutOfRange { value: x });
            }
            firsts.push(x.clamp(0.0, 1.0));
        }
        let dim = vs.m_dim;
        let mut mean = vec![0.0; dim];
        for u in group {
            for (m, x) in mean.iter_mut().zip(&u[1..]) {
                *m += x / k as f64;
            }
        }
        let tails: Vec<Vec<f64>> =
            group.iter().map(|u| u[1..].iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
        let shares: Vec<f64> = firsts
            .iter()
            .zip(&tails)
            .map(|(&x, tail)| x.max((x * (1.0 - x)).sqrt()).max(norm(tail)))
            .collect();
        let total: f64 = shares.iter().sum();
        Ok(shares
            .iter()
            .zip(&tails)
            .map(|(&c, tail)| {
                let scaled: Vec<f64> = tail.iter().map(|x| x / total).collect();
                fam.combination(c / total, &scaled)
            })
            .collect())
    };
    let alice = vs.v.chunks(k).map(build).collect::<Result<Vec<_>, _>>()?;
    let bob = vs.w.chunks(k).map(build).collect::<Result<Vec<_>, _>>()?;
    Ok(QuantumStrategy { d: fam.d, k, alice, bob, projective: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relaxation::GramIndex;

    #[test]
    fn single_generator_tensor_mode_is_pauli_x() {
        let f = AnticommutingFamily::build(1, FamilyMode::Tensor, DEFAULT_DIM_CAP).unwrap();
        assert_eq!(f.d, 2);
        let x = f.sigma(0);
        assert_eq!(x.get(0, 1), Complex64::new(1.0, 0.0));
        assert_eq!(x.get(1, 0), Complex64::new(1.0, 0.0));
        assert_eq!(x.get(0, 0), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn two_generators_compact_mode_are_x_and_y() {
        let f = AnticommutingFamily::build(2, FamilyMode::Compact, DEFAULT_DIM_CAP).unwrap();
        assert_eq!(f.d, 2);
        let y = f.sigma(1);
        assert_eq!(y.get(0, 1), Complex64::new(0.0, -1.0));
        assert_eq!(y.get(1, 0), Complex64::new(0.0, 1.0));
    }

    #[test]
    fn three_generators_tensor_mode() {
        let f = AnticommutingFamily::build(3, FamilyMode::Tensor, DEFAULT_DIM_CAP).unwrap();
        assert_eq!(f.d, 8);
        assert!(f.identity_defects().max() < 1e-12);
    }

    #[test]
    fn dimension_cap_reported() {
        let err = AnticommutingFamily::build(13, FamilyMode::Tensor, DEFAULT_DIM_CAP).unwrap_err();
        assert_eq!(err, RoundingError::DimensionCapExceeded { log2_d: 13, cap: 4096 });
        assert!(err.to_string().contains("compact"));
        assert!(AnticommutingFamily::build(13, FamilyMode::Compact, DEFAULT_DIM_CAP).is_ok());
    }

    #[test]
    fn combination_matches_dense_sum() {
        let f = AnticommutingFamily::build(5, FamilyMode::Compact, DEFAULT_DIM_CAP).unwrap();
        let coeffs = [0.3, -0.1, 0.25, 0.0, 0.7];
        let mut dense = CMatrix::identity(f.d).scale(0.4);
        for (i, c) in coeffs.iter().enumerate() {
            dense = dense.add(&f.sigma(i).scale(*c));
        }
        assert!(f.combination(0.4, &coeffs).sub(&dense).max_abs() < 1e-15);
    }

    fn strategy_from(k: usize, m_dim: usize, v: Vec<Vec<f64>>, w: Vec<Vec<f64>>) -> VectorStrategy {
        let mut z = vec![0.0; m_dim + 1];
        z[0] = 1.0;
        let index = GramIndex { s_size: v.len() / k, t_size: w.len() / k, k };
        VectorStrategy { index, m_dim, z, v, w, rank_tol: 1e-7 }
    }

    #[test]
    fn half_plus_single_generator_is_projection() {
        let v = vec![vec![0.5, 0.5, 0.0], vec![0.5, -0.5, 0.0]];
        let vs = strategy_from(2, 2, v.clone(), v);
        let f = AnticommutingFamily::build(2, FamilyMode::Tensor, DEFAULT_DIM_CAP).unwrap();
        let q = round_uniform_binary(&vs, &f).unwrap();
        let expected = CMatrix::identity(4).add(&f.sigma(0)).scale(0.5);
        assert!(q.alice[0][0].sub(&expected).max_abs() < 1e-15);
        assert!((q.alice[0][0].trace().re - 2.0).abs() < 1e-15);
        let d = q.defects(64);
        assert!(d.projection_residual.unwrap() < 1e-15);
        assert!(d.completeness < 1e-15);
    }

    #[test]
    fn swapping_answers_swaps_projections() {
        let a = vec![0.5, 0.3, 0.4];
        let b = vec![0.5, -0.3, -0.4];
        let f = AnticommutingFamily::build(2, FamilyMode::Compact, DEFAULT_DIM_CAP).unwrap();
        let q1 = round_uniform_binary(&strategy_from(2, 2, vec![a.clone(), b.clone()], vec![a.clone(), b.clone()]), &f).unwrap();
        let q2 = round_uniform_binary(&strategy_from(2, 2, vec![b.clone(), a.clone()], vec![a, b]), &f).unwrap();
        assert!(q1.alice[0][0].sub(&q2.alice[0][1]).max_abs() < 1e-15);
        assert!(q1.alice[0][1].sub(&q2.alice[0][0]).max_abs() < 1e-15);
    }

    #[test]
    fn uniform_rounding_rejects_non_uniform() {
        let v = vec![vec![0.9, 0.3, 0.0], vec![0.1, -0.3, 0.0]];
        let vs = strategy_from(2, 2, v.clone(), v);
        let f = AnticommutingFamily::build(2, FamilyMode::Tensor, DEFAULT_DIM_CAP).unwrap();
        assert!(matches!(round_uniform_binary(&vs, &f), Err(RoundingError::NotUniform(_))));
    }

    #[test]
    fn deterministic_answer_rounds_to_identity_and_zero() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let vs = strategy_from(2, 1, v.clone(), v);
        let f = AnticommutingFamily::build(1, FamilyMode::Tensor, DEFAULT_DIM_CAP).unwrap();
        let q = round_general(&vs, &f).unwrap();
        assert!(q.alice[0][0].sub(&CMatrix::identity(2)).max_abs() < 1e-15);
        assert!(q.alice[0][1].max_abs() < 1e-15);
    }

    #[test]
    fn general_matches_uniform_on_uniform_vectors() {
        let a = vec![0.5, 0.3, 0.4];
        let b = vec![0.5, -0.3, -0.4];
        let vs = strategy_from(2, 2, vec![a.clone(), b.clone()], vec![b, a]);
        let f = AnticommutingFamily::build(2, FamilyMode::Compact, DEFAULT_DIM_CAP).unwrap();
        let g = round_general(&vs, &f).unwrap();
        let u = round_uniform_binary(&vs, &f).unwrap();
        for (x, y) in g.measurements().flatten().zip(u.measurements().flatten()) {
            assert!(x.sub(y).max_abs() < 1e-15);
        }
    }

    #[test]
    fn three_outcome_uniform_povm() {
        // Tails of norm sqrt(2)/3 pointing at the vertices of a triangle.
        let r = 2f64.sqrt() / 3.0;
        let angles = [0.0, 2.0, 4.0].map(|k: f64| k * std::f64::consts::PI / 3.0);
        let v: Vec<Vec<f64>> = angles.iter().map(|t| vec![1.0 / 3.0, r * t.cos(), r * t.sin()]).collect();
        let vs = strategy_from(3, 2, v.clone(), v);
        let f = AnticommutingFamily::build(2, FamilyMode::Compact, DEFAULT_DIM_CAP).unwrap();
        let q = round_general(&vs, &f).unwrap();
        for e in &q.alice[0] {
            assert!((e.trace().re - f.d as f64 / 3.0).abs() < 1e-14);
        }
        let d = q.defects(64);
        assert!(d.completeness < 1e-14);
        assert!(d.min_eigenvalue.unwrap() > -1e-14);
    }

    #[test]
    fn first_coordinate_out_of_range() {
        let v = vec![vec![1.5, 0.0], vec![-0.5, 0.0]];
        let vs = strategy_from(2, 1, v.clone(), v);
        let f = AnticommutingFamily::build(1, FamilyMode::Tensor, DEFAULT_DIM_CAP).unwrap();
        assert!(matches!(round_general(&vs, &f), Err(RoundingError::FirstCoordinateOutOfRange { .. })));
    }
}
