//! Recovering explicit vectors from a solved Gram matrix.
//!
//! The Gram matrix is factored through its eigendecomposition and the whole
//! vector set is reflected so the reference vector becomes `e_0`. After that
//! the first coordinate of every player vector equals its squared norm, and
//! the remaining coordinates feed the operator construction in
//! [`crate::rounding`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm, sym_eigen, LinalgError, Matrix};
use crate::relaxation::GramIndex;

pub const DEFAULT_RANK_TOL: f64 = 1e-7;

const Z_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryError {
    #[error("Gram matrix is not PSD at tolerance {tol:e} (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64, tol: f64 },
    #[error("reference vector has norm {0}, expected 1")]
    ReferenceNorm(f64),
    #[error("expected {expected} vectors, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Factors `M = F Fᵀ` keeping eigenvalues above `rank_tol`.
///
/// Row `i` of the result is the vector whose inner products reproduce row
/// `i` of `M`. Columns are ordered by decreasing eigenvalue.
pub fn factor_gram(m: &Matrix, rank_tol: f64) -> Result<Vec<Vec<f64>>, RecoveryError> {
    let e = sym_eigen(m)?;
    if e.min_value() < -rank_tol {
        return Err(RecoveryError::NotPsd { min_eigenvalue: e.min_value(), tol: rank_tol });
    }
    let n = m.rows();
    let kept: Vec<usize> = (0..n).rev().filter(|&k| e.values[k] > rank_tol).collect();
    Ok((0..n)
        .map(|i| kept.iter().map(|&k| e.values[k].sqrt() * e.vectors[(i, k)]).collect())
        .collect())
}

/// Applies the reflection that sends `vectors[z_index]` to `e_0`.
///
/// The reference vector is normalized before the map is built, and is set to
/// exactly `e_0` in the output.
pub fn rotate_to_e0(vectors: &[Vec<f64>], z_index: usize) -> Result<Vec<Vec<f64>>, RecoveryError> {
    let z = &vectors[z_index];
    let zn = norm(z);
    if (zn - 1.0).abs() > Z_NORM_TOL {
        return Err(RecoveryError::ReferenceNorm(zn));
    }
    let dim = z.len();
    let unit: Vec<f64> = z.iter().map(|x| x / zn).collect();

    // Householder vector w = unit - s e_0 with s chosen so that |w| >= sqrt(2);
    // H = I - 2 w wᵀ / |w|² maps unit to s e_0. When s = -1 the map is negated.
    let flip = unit[0] >= 0.0;
    let mut w = unit.clone();
    w[0] += if flip { 1.0 } else { -1.0 };
    let ww = dot(&w, &w);

    let mut out: Vec<Vec<f64>> = vectors
        .iter()
        .map(|u| {
            let c = 2.0 * dot(&w, u) / ww;
            u.iter()
                .zip(&w)
                .map(|(ui, wi)| {
                    let h = ui - c * wi;
                    if flip {
                        -h
                    } else {
                        h
                    }
                })
                .collect()
        })
        .collect();
    let mut e0 = vec![0.0; dim];
    e0[0] = 1.0;
    out[z_index] = e0;
    Ok(out)
}

/// Player vectors in a frame where the reference vector is `e_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorStrategy {
    pub index: GramIndex,
    /// Number of coordinates after the first.
    pub m_dim: usize,
    pub z: Vec<f64>,
    /// Alice's vectors, `v[s * k + a]`.
    pub v: Vec<Vec<f64>>,
    /// Bob's vectors, `w[t * k + b]`.
    pub w: Vec<Vec<f64>>,
    pub rank_tol: f64,
}

impl VectorStrategy {
    /// Splits a rotated vector list laid out by `index`.
    pub fn from_rotated(vectors: Vec<Vec<f64>>, index: GramIndex, rank_tol: f64) -> Result<Self, RecoveryError> {
        if vectors.len() != index.n() {
            return Err(RecoveryError::WrongCount { expected: index.n(), got: vectors.len() });
        }
        let mut it = vectors.into_iter();
        let z = it.next().expect("non-empty");
        let m_dim = z.len().saturating_sub(1);
        let na = index.k * index.s_size;
        let v: Vec<Vec<f64>> = it.by_ref().take(na).collect();
        let w: Vec<Vec<f64>> = it.collect();
        Ok(Self { index, m_dim, z, v, w, rank_tol })
    }

    /// Full recovery: factor, then rotate the reference vector to `e_0`.
    pub fn recover(m: &Matrix, index: GramIndex, rank_tol: f64) -> Result<Self, RecoveryError> {
        if m.rows() != index.n() || m.cols() != index.n() {
            return Err(RecoveryError::WrongCount { expected: index.n(), got: m.rows() });
        }
        let vectors = factor_gram(m, rank_tol)?;
        let rotated = rotate_to_e0(&vectors, index.z())?;
        Self::from_rotated(rotated, index, rank_tol)
    }

    pub fn k(&self) -> usize {
        self.index.k
    }

    pub fn alice(&self, s: usize, a: usize) -> &[f64] {
        &self.v[s * self.index.k + a]
    }

    pub fn bob(&self, t: usize, b: usize) -> &[f64] {
        &self.w[t * self.index.k + b]
    }

    /// Every measurement's vector group, Alice's questions first.
    pub fn groups(&self) -> impl Iterator<Item = &[Vec<f64>]> {
        self.v.chunks(self.index.k).chain(self.w.chunks(self.index.k))
    }

    /// The Gram matrix of `(z, v.., w..)`.
    pub fn gram(&self) -> Matrix {
        let all: Vec<Vec<f64>> = std::iter::once(self.z.clone()).chain(self.v.iter().cloned()).chain(self.w.iter().cloned()).collect();
        Matrix::gram_of_rows(&all)
    }

    /// Largest `|<u_a|u_a'>|` over distinct answers of one question.
    pub fn orthogonality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for g in self.groups() {
            for i in 0..g.len() {
                for j in i + 1..g.len() {
                    worst = worst.max(dot(&g[i], &g[j]).abs());
                }
            }
        }
        worst
    }

    /// Largest `|sum_a u_a - z|` over questions.
    pub fn completeness_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for g in self.groups() {
            let mut sum = vec![0.0; self.z.len()];
            for u in g {
                for (s, x) in sum.iter_mut().zip(u) {
                    *s += x;
                }
            }
            let diff: Vec<f64> = sum.iter().zip(&self.z).map(|(a, b)| a - b).collect();
            worst = worst.max(norm(&diff));
        }
        worst
    }

    /// Largest `|u_0 - |u|²|`.
    pub fn first_coordinate_defect(&self) -> f64 {
        self.groups().flatten().map(|u| (u[0] - dot(u, u)).abs()).fold(0.0, f64::max)
    }

    /// Largest `|sum_{i>=1} u_i² - u_0 (1 - u_0)|`.
    pub fn residual_norm_defect(&self) -> f64 {
        self.groups()
            .flatten()
            .map(|u| {
                let tail: f64 = u[1..].iter().map(|x| x * x).sum();
                (tail - u[0] * (1.0 - u[0])).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest `|sum_a u_a[0] - 1|` over questions.
    pub fn first_coordinate_sum_defect(&self) -> f64 {
        self.groups().map(|g| (g.iter().map(|u| u[0]).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Largest deviation of a first coordinate from `1/k`.
    pub fn uniform_defect(&self) -> f64 {
        let target = 1.0 / self.index.k as f64;
        self.groups().flatten().map(|u| (u[0] - target).abs()).fold(0.0, f64::max)
    }
}
