//! The Gram-matrix relaxation of the entangled value.
//!
//! Index 0 of the Gram matrix is the reference vector `z`; then come Alice's
//! vectors `v(s,a)` in `(s, a)` order, then Bob's `w(t,b)`. Constraint terms
//! address the upper triangle: a term `(i, j, c)` with `i <= j` contributes
//! `c * M[i][j]`.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::Game;
use crate::linalg::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelaxationError {
    #[error("uniform constraints are only supported for binary games (k = 2), got k = {0}")]
    UniformNeedsBinary(usize),
    #[error("Gram matrix must be {expected}x{expected}, got {rows}x{cols}")]
    DimensionMismatch { expected: usize, rows: usize, cols: usize },
}

/// Which Gram vector an index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramLabel {
    Z,
    Alice { s: usize, a: usize },
    Bob { t: usize, b: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GramIndex {
    pub s_size: usize,
    pub t_size: usize,
    pub k: usize,
}

impl GramIndex {
    pub fn for_game(g: &Game) -> Self {
        Self { s_size: g.s_size(), t_size: g.t_size(), k: g.k() }
    }

    /// Total size `1 + k|S| + k|T|`.
    pub fn n(&self) -> usize {
        1 + self.k * (self.s_size + self.t_size)
    }

    pub const fn z(&self) -> usize {
        0
    }

    #[inline]
    pub fn v(&self, s: usize, a: usize) -> usize {
        1 + s * self.k + a
    }

    #[inline]
    pub fn w(&self, t: usize, b: usize) -> usize {
        1 + self.k * self.s_size + t * self.k + b
    }

    pub fn label(&self, i: usize) -> GramLabel {
        assert!(i < self.n());
        if i == 0 {
            GramLabel::Z
        } else if i <= self.k * self.s_size {
            GramLabel::Alice { s: (i - 1) / self.k, a: (i - 1) % self.k }
        } else {
            let j = i - 1 - self.k * self.s_size;
            GramLabel::Bob { t: j / self.k, b: j % self.k }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    /// `<z|z> = 1`
    Normalization,
    /// One row of `sum_a v(s,a) = z` (or Bob's analogue) against a Gram index.
    SumToReference,
    /// `<v(s,a)|v(s,a')> = 0` for `a != a'`.
    Orthogonality,
    /// `<v(s,a)|v(s,a)> = 1/2` in uniform mode.
    UniformDiagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqConstraint {
    pub kind: ConstraintKind,
    /// `(i, j, c)` with `i <= j`, contributing `c * M[i][j]`.
    pub terms: Vec<(usize, usize, f64)>,
    pub rhs: f64,
}

impl EqConstraint {
    pub fn evaluate(&self, m: &Matrix) -> f64 {
        self.terms.iter().map(|&(i, j, c)| c * m[(i, j)]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub index: GramIndex,
    /// Symmetric coefficient matrix; the objective is `sum_ij C[i][j] M[i][j]`.
    pub objective: Matrix,
    pub eq_constraints: Vec<EqConstraint>,
    /// Entries `(v-index, w-index)` constrained to be non-negative.
    pub ineq_indices: Vec<(usize, usize)>,
    pub uniform: bool,
}

impl SdpProblem {
    pub fn n(&self) -> usize {
        self.index.n()
    }

    pub fn objective_value(&self, m: &Matrix) -> f64 {
        self.objective.dot(m)
    }

    /// Largest absolute equality violation.
    pub fn max_eq_violation(&self, m: &Matrix) -> f64 {
        self.eq_constraints.iter().map(|c| (c.evaluate(m) - c.rhs).abs()).fold(0.0, f64::max)
    }

    /// Largest magnitude among negative constrained entries (0 if none).
    pub fn max_negative_ineq(&self, m: &Matrix) -> f64 {
        self.ineq_indices.iter().map(|&(i, j)| (-m[(i, j)]).max(0.0)).fold(0.0, f64::max)
    }

    pub fn count_kind(&self, kind: ConstraintKind) -> usize {
        self.eq_constraints.iter().filter(|c| c.kind == kind).count()
    }

    /// Same constraints, objective multiplied by `lambda`.
    pub fn with_scaled_objective(&self, lambda: f64) -> Self {
        Self { objective: self.objective.scale(lambda), ..self.clone() }
    }

    /// Sparse triplet text dump: `EQ`, `INEQ` and `OBJ` lines.
    pub fn dump_triplets(&self) -> String {
        let mut out = String::new();
        for (j, c) in self.eq_constraints.iter().enumerate() {
            let _ = write!(out, "EQ {j}");
            for &(a, b, coef) in &c.terms {
                let _ = write!(out, " {a} {b} {coef}");
            }
            let _ = writeln!(out, " = {}", c.rhs);
        }
        for &(i, j) in &self.ineq_indices {
            let _ = writeln!(out, "INEQ {i} {j}");
        }
        let n = self.n();
        for i in 0..n {
            for j in i..n {
                let c = self.objective[(i, j)];
                if c != 0.0 {
                    let _ = writeln!(out, "OBJ {i} {j} {c}");
                }
            }
        }
        out
    }
}

/// Canonical, merged form of a term list: sorted by entry, zero terms dropped.
fn canonical_terms(raw: impl IntoIterator<Item = (usize, usize, f64)>) -> Vec<(usize, usize, f64)> {
    let mut terms: Vec<(usize, usize, f64)> = raw.into_iter().map(|(i, j, c)| (i.min(j), i.max(j), c)).collect();
    terms.sort_by_key(|x| (x.0, x.1));
    let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(terms.len());
    for (i, j, c) in terms {
        match merged.last_mut() {
            Some(last) if last.0 == i && last.1 == j => last.2 += c,
            _ => merged.push((i, j, c)),
        }
    }
    merged.retain(|t| t.2 != 0.0);
    merged
}

/// Constraint terms and right-hand side with floats as bit patterns.
type ConstraintKey = (Vec<(usize, usize, u64)>, u64);

struct ConstraintSink {
    seen: HashSet<ConstraintKey>,
    out: Vec<EqConstraint>,
}

impl ConstraintSink {
    fn push(&mut self, kind: ConstraintKind, raw: Vec<(usize, usize, f64)>, rhs: f64) {
        let terms = canonical_terms(raw);
        if terms.is_empty() {
            return;
        }
        let key = (terms.iter().map(|&(i, j, c)| (i, j, c.to_bits())).collect(), rhs.to_bits());
        if self.seen.insert(key) {
            self.out.push(EqConstraint { kind, terms, rhs });
        }
    }
}

/// Builds the relaxation of `g`; `uniform` adds the `1/2` diagonal
/// constraints for binary games.
pub fn build_sdp(g: &Game, uniform: bool) -> Result<SdpProblem, RelaxationError> {
    if uniform && g.k() != 2 {
        return Err(RelaxationError::UniformNeedsBinary(g.k()));
    }
    let idx = GramIndex::for_game(g);
    let n = idx.n();
    let k = g.k();

    let mut objective = Matrix::zeros(n, n);
    for s in 0..g.s_size() {
        for t in 0..g.t_size() {
            for a in 0..k {
                for b in 0..k {
                    let c = 0.5 * g.weight(s, t, a, b);
                    objective[(idx.v(s, a), idx.w(t, b))] = c;
                    objective[(idx.w(t, b), idx.v(s, a))] = c;
                }
            }
        }
    }

    let mut sink = ConstraintSink { seen: HashSet::new(), out: Vec::new() };
    sink.push(ConstraintKind::Normalization, vec![(0, 0, 1.0)], 1.0);

    let groups: Vec<Vec<usize>> = (0..g.s_size())
        .map(|s| (0..k).map(|a| idx.v(s, a)).collect())
        .chain((0..g.t_size()).map(|t| (0..k).map(|b| idx.w(t, b)).collect()))
        .collect();

    for group in &groups {
        for u in 0..n {
            let mut raw: Vec<_> = group.iter().map(|&i| (u, i, 1.0)).collect();
            raw.push((u, 0, -1.0));
            sink.push(ConstraintKind::SumToReference, raw, 0.0);
        }
    }
    for group in &groups {
        for (x, &i) in group.iter().enumerate() {
            for &j in &group[x + 1..] {
                sink.push(ConstraintKind::Orthogonality, vec![(i, j, 1.0)], 0.0);
            }
        }
    }
    if uniform {
        for group in &groups {
            for &i in group {
                sink.push(ConstraintKind::UniformDiagonal, vec![(i, i, 1.0)], 0.5);
            }
        }
    }

    let mut ineq_indices = Vec::with_capacity(g.s_size() * g.t_size() * k * k);
    for s in 0..g.s_size() {
        for a in 0..k {
            for t in 0..g.t_size() {
                for b in 0..k {
                    ineq_indices.push((idx.v(s, a), idx.w(t, b)));
                }
            }
        }
    }

    Ok(SdpProblem { index: idx, objective, eq_constraints: sink.out, ineq_indices, uniform })
}

/// `sum_{s,t} pi(s,t) sum_{a,b} V(a,b|s,t) M[v(s,a)][w(t,b)]`.
pub fn objective_of(g: &Game, m: &Matrix) -> Result<f64, RelaxationError> {
    let idx = GramIndex::for_game(g);
    let n = idx.n();
    if m.rows() != n || m.cols() != n {
        return Err(RelaxationError::DimensionMismatch { expected: n, rows: m.rows(), cols: m.cols() });
    }
    let mut acc = 0.0;
    for s in 0..g.s_size() {
        for t in 0..g.t_size() {
            for a in 0..g.k() {
                for b in 0..g.k() {
                    acc += g.weight(s, t, a, b) * m[(idx.v(s, a), idx.w(t, b))];
                }
            }
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::random_game;

    #[test]
    fn chsh_constraint_counts() {
        let p = build_sdp(&Game::chsh(), false).unwrap();
        assert_eq!(p.n(), 9);
        assert_eq!(p.count_kind(ConstraintKind::Normalization), 1);
        assert_eq!(p.count_kind(ConstraintKind::SumToReference), 36);
        assert_eq!(p.count_kind(ConstraintKind::Orthogonality), 4);
        assert_eq!(p.count_kind(ConstraintKind::UniformDiagonal), 0);
        assert_eq!(p.ineq_indices.len(), 16);
    }

    #[test]
    fn uniform_adds_diagonal_constraints() {
        let g = random_game(3, 2, 2, 0.5, 4).unwrap();
        let plain = build_sdp(&g, false).unwrap();
        let uni = build_sdp(&g, true).unwrap();
        assert_eq!(uni.eq_constraints.len() - plain.eq_constraints.len(), 2 * 3 + 2 * 2);
        for c in uni.eq_constraints.iter().filter(|c| c.kind == ConstraintKind::UniformDiagonal) {
            assert_eq!(c.rhs, 0.5);
            assert_eq!(c.terms.len(), 1);
            assert_eq!(c.terms[0].0, c.terms[0].1);
        }
    }

    #[test]
    fn uniform_requires_binary() {
        let g = random_game(2, 2, 3, 0.5, 1).unwrap();
        assert_eq!(build_sdp(&g, true).unwrap_err(), RelaxationError::UniformNeedsBinary(3));
    }

    #[test]
    fn index_families_partition() {
        let idx = GramIndex { s_size: 3, t_size: 2, k: 3 };
        let mut seen = vec![false; idx.n()];
        seen[idx.z()] = true;
        for s in 0..3 {
            for a in 0..3 {
                assert!(!seen[idx.v(s, a)]);
                seen[idx.v(s, a)] = true;
                assert_eq!(idx.label(idx.v(s, a)), GramLabel::Alice { s, a });
            }
        }
        for t in 0..2 {
            for b in 0..3 {
                assert!(!seen[idx.w(t, b)]);
                seen[idx.w(t, b)] = true;
                assert_eq!(idx.label(idx.w(t, b)), GramLabel::Bob { t, b });
            }
        }
        assert!(seen.iter().all(|&x| x));
    }

    #[test]
    fn objective_matrix_layout() {
        let g = Game::chsh();
        let p = build_sdp(&g, false).unwrap();
        let idx = p.index;
        for s in 0..2 {
            for t in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        let (i, j) = (idx.v(s, a), idx.w(t, b));
                        assert_eq!(p.objective[(i, j)] + p.objective[(j, i)], g.weight(s, t, a, b));
                    }
                }
            }
        }
        let nonzero = p.objective.as_slice().iter().filter(|&&x| x != 0.0).count();
        assert_eq!(nonzero, 2 * 8);
    }

    #[test]
    fn objective_of_rank_one_all_equal() {
        let g = Game::constant(2, 3, 3, true).unwrap();
        let n = GramIndex::for_game(&g).n();
        let m = Matrix::from_fn(n, n, |_, _| 1.0 / n as f64);
        let expected = 9.0 / n as f64;
        assert!((objective_of(&g, &m).unwrap() - expected).abs() < 1e-12);
        let p = build_sdp(&g, false).unwrap();
        assert!((p.objective_value(&m) - expected).abs() < 1e-12);
    }

    #[test]
    fn objective_of_zero_predicate() {
        let g = Game::constant(2, 2, 2, false).unwrap();
        let m = Matrix::from_fn(9, 9, |i, j| (i * 7 + j) as f64);
        assert_eq!(objective_of(&g, &m).unwrap(), 0.0);
        assert!(objective_of(&g, &Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn deterministic_order() {
        let g = random_game(3, 3, 3, 0.3, 9).unwrap();
        assert_eq!(build_sdp(&g, false).unwrap(), build_sdp(&g, false).unwrap());
    }

    #[test]
    fn triplet_dump_lines() {
        let p = build_sdp(&Game::chsh(), true).unwrap();
        let dump = p.dump_triplets();
        assert_eq!(dump.lines().filter(|l| l.starts_with("EQ ")).count(), p.eq_constraints.len());
        assert_eq!(dump.lines().filter(|l| l.starts_with("INEQ ")).count(), 16);
        assert_eq!(dump.lines().filter(|l| l.starts_with("OBJ ")).count(), 8);
        assert!(dump.starts_with("EQ 0 0 0 1 = 1\n"));
    }
}
