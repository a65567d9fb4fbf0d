//! Exact evaluation of a strategy on a game.
//!
//! With the maximally entangled state `|psi> = d^{-1/2} sum_i |i>|i>` and Bob
//! measuring the transposed operators, the outcome probability is
//! `<psi| P ⊗ Qᵀ |psi> = Tr(P Q) / d`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::Game;
use crate::linalg::{CMatrix, Matrix};
use crate::par;
use crate::relaxation::GramIndex;
use crate::rounding::QuantumStrategy;

/// Largest `d` for which the explicit `d²`-dimensional state is built.
pub const EXPLICIT_STATE_CAP: usize = 64;

const IMAG_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("strategy shape {strategy:?} does not match game shape {game:?} (|S|, |T|, k)")]
    ShapeMismatch { strategy: (usize, usize, usize), game: (usize, usize, usize) },
    #[error("explicit state needs d <= {cap}, got d = {d}")]
    DimensionCap { d: usize, cap: usize },
    #[error("probability has imaginary part {0:e}")]
    ImaginaryProbability(f64),
}

fn shape_of(q: &QuantumStrategy) -> (usize, usize, usize) {
    (q.alice.len(), q.bob.len(), q.k)
}

fn complex_prob(q: &QuantumStrategy, s: usize, t: usize, a: usize, b: usize) -> Complex64 {
    q.alice[s][a].trace_product(&q.bob[t][b]) / q.d as f64
}

/// `Re Tr(P_a^s Q_b^t) / d`.
pub fn outcome_prob(q: &QuantumStrategy, s: usize, t: usize, a: usize, b: usize) -> f64 {
    complex_prob(q, s, t, a, b).re
}

/// `<psi| P ⊗ Qᵀ |psi>` with `|psi>` and the Kronecker action built
/// explicitly.
pub fn cross_check_state(q: &QuantumStrategy, s: usize, t: usize, a: usize, b: usize) -> Result<f64, EvalError> {
    let d = q.d;
    if d > EXPLICIT_STATE_CAP {
        return Err(EvalError::DimensionCap { d, cap: EXPLICIT_STATE_CAP });
    }
    let p = &q.alice[s][a];
    let qt = q.bob[t][b].transpose();
    let amp = 1.0 / (d as f64).sqrt();
    let psi: Vec<Complex64> =
        (0..d * d).map(|idx| if idx / d == idx % d { Complex64::new(amp, 0.0) } else { Complex64::new(0.0, 0.0) }).collect();

    // (P ⊗ Qᵀ)|psi>, entry (i, j) = sum_{k,l} P[i][k] Qᵀ[j][l] psi[k d + l]
    let mut out = vec![Complex64::new(0.0, 0.0); d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..d {
                let pik = p.get(i, k);
                if pik == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for l in 0..d {
                    acc += pik * qt.get(j, l) * psi[k * d + l];
                }
            }
            out[i * d + j] = acc;
        }
    }
    let val: Complex64 = psi.iter().zip(&out).map(|(x, y)| x.conj() * y).sum();
    Ok(val.re)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub win_prob: f64,
    /// `joint[s][t][a][b]`
    pub joint: Vec<Vec<Vec<Vec<f64>>>>,
    /// `alice_marginals[s][a]`, taken at `t = 0`.
    pub alice_marginals: Vec<Vec<f64>>,
    /// `bob_marginals[t][b]`, taken at `s = 0`.
    pub bob_marginals: Vec<Vec<f64>>,
}

impl EvalReport {
    /// Largest dependence of one player's marginal on the other's question.
    pub fn no_signaling_defect(&self) -> f64 {
        let s_size = self.joint.len();
        let t_size = self.joint[0].len();
        let k = self.alice_marginals[0].len();
        let mut worst = 0.0f64;
        for s in 0..s_size {
            for t in 0..t_size {
                for x in 0..k {
                    let row: f64 = self.joint[s][t][x].iter().sum();
                    let col: f64 = (0..k).map(|a| self.joint[s][t][a][x]).sum();
                    worst = worst.max((row - self.alice_marginals[s][x]).abs());
                    worst = worst.max((col - self.bob_marginals[t][x]).abs());
                }
            }
        }
        worst
    }

    /// Largest `|sum_{a,b} joint - 1|` over question pairs.
    pub fn normalization_defect(&self) -> f64 {
        self.joint
            .iter()
            .flatten()
            .map(|table| (table.iter().flatten().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_probability(&self) -> f64 {
        self.joint.iter().flatten().flatten().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest `|marginal - 1/k|`; a diagnostic for uniform strategies.
    pub fn uniform_marginal_deviation(&self) -> f64 {
        let k = self.alice_marginals[0].len() as f64;
        self.alice_marginals
            .iter()
            .chain(&self.bob_marginals)
            .flatten()
            .map(|p| (p - 1.0 / k).abs())
            .fold(0.0, f64::max)
    }
}

pub fn evaluate(g: &Game, q: &QuantumStrategy) -> Result<EvalReport, EvalError> {
    evaluate_with(g, q, |n, f| par::map_range(n, f))
}

/// [`evaluate`] without any threading.
pub fn evaluate_sequential(g: &Game, q: &QuantumStrategy) -> Result<EvalReport, EvalError> {
    evaluate_with(g, q, |n, f| (0..n).map(f).collect())
}

type Table = Vec<Vec<Complex64>>;

fn evaluate_with(
    g: &Game,
    q: &QuantumStrategy,
    map: impl Fn(usize, &(dyn Fn(usize) -> Table + Sync + Send)) -> Vec<Table>,
) -> Result<EvalReport, EvalError> {
    let game_shape = (g.s_size(), g.t_size(), g.k());
    if shape_of(q) != game_shape
        || q.alice.iter().chain(&q.bob).any(|m| m.len() != q.k)
        || q.alice.iter().chain(&q.bob).flatten().any(|e| e.dim() != q.d)
    {
        return Err(EvalError::ShapeMismatch { strategy: shape_of(q), game: game_shape });
    }
    let (s_size, t_size, k) = game_shape;
    let tables = map(s_size * t_size, &|st| {
        let (s, t) = (st / t_size, st % t_size);
        (0..k).map(|a| (0..k).map(|b| complex_prob(q, s, t, a, b)).collect()).collect()
    });

    let worst_imag = tables.iter().flatten().flatten().map(|z| z.im.abs()).fold(0.0, f64::max);
    if worst_imag > IMAG_TOL {
        return Err(EvalError::ImaginaryProbability(worst_imag));
    }

    let mut joint = vec![vec![vec![vec![0.0; k]; k]; t_size]; s_size];
    let mut win_prob = 0.0;
    for (st, table) in tables.iter().enumerate() {
        let (s, t) = (st / t_size, st % t_size);
        for a in 0..k {
            for b in 0..k {
                let p = table[a][b].re;
                joint[s][t][a][b] = p;
                win_prob += g.weight(s, t, a, b) * p;
            }
        }
    }
    let alice_marginals = (0..s_size).map(|s| (0..k).map(|a| joint[s][0][a].iter().sum()).collect()).collect();
    let bob_marginals =
        (0..t_size).map(|t| (0..k).map(|b| (0..k).map(|a| joint[0][t][a][b]).sum()).collect()).collect();
    Ok(EvalReport { win_prob, joint, alice_marginals, bob_marginals })
}

/// Gram matrix (real part) of `|z> = |psi>`, `|v_a^s> = P ⊗ I|psi>` and
/// `|w_b^t> = I ⊗ Qᵀ|psi>`, via the trace formula.
pub fn honest_gram(q: &QuantumStrategy) -> Matrix {
    let index = GramIndex { s_size: q.alice.len(), t_size: q.bob.len(), k: q.k };
    let n = index.n();
    let d = q.d as f64;
    let id = CMatrix::identity(q.d);
    let mut ops: Vec<(bool, &CMatrix)> = vec![(true, &id)];
    ops.extend(q.alice.iter().flatten().map(|e| (true, e)));
    ops.extend(q.bob.iter().flatten().map(|e| (false, e)));

    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let (ai, ei) = ops[i];
            let (aj, ej) = ops[j];
            // Same side: <psi|X Y ⊗ I|psi> = Tr(X Y)/d, and for Bob
            // Tr(Xᵀ Yᵀ)/d = Tr(Y X)/d. Cross side: Tr(P Q)/d. The identity at
            // index 0 commutes with everything.
            let val = if ai == aj && !ai { ej.trace_product(ei) } else { ei.trace_product(ej) };
            let x = val.re / d;
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    m
}
