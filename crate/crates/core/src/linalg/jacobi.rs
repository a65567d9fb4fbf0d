use super::{LinalgError, Matrix};

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition `A = V diag(values) Vᵀ` of a real symmetric matrix.
///
/// Eigenvalues are sorted ascending; `vectors` holds the matching
/// orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEigen {
    pub fn min_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// `V f(diag) Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let mapped: Vec<f64> = self.values.iter().map(|&x| f(x)).collect();
        let mut out = Matrix::zeros(n, n);
        for (k, &lam) in mapped.iter().enumerate() {
            if lam == 0.0 {
                continue;
            }
            for i in 0..n {
                let vik = self.vectors[(i, k)] * lam;
                if vik == 0.0 {
                    continue;
                }
                for j in i..n {
                    out[(i, j)] += vik * self.vectors[(j, k)];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                out[(i, j)] = out[(j, i)];
            }
        }
        out
    }
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
///
/// Only the upper triangle is trusted; the input is symmetrized first.
pub fn sym_eigen(a: &Matrix) -> Result<SymEigen, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    jacobi_from(a.symmetrized(), Matrix::identity(a.rows()))
}

/// Jacobi started from an approximate eigenbasis `guess` (orthogonal,
/// columns are vectors), typically the basis of a nearby matrix. Converges
/// in far fewer sweeps when `guess` nearly diagonalizes `a`.
pub fn sym_eigen_warm(a: &Matrix, guess: &Matrix) -> Result<SymEigen, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    if guess.rows() != a.rows() || guess.cols() != a.rows() {
        return Err(LinalgError::DimensionMismatch { expected: a.rows(), got: guess.rows() });
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let rotated = guess.transpose().matmul(a)?.matmul(guess)?.symmetrized();
    jacobi_from(rotated, guess.clone())
}

fn jacobi_from(mut w: Matrix, mut v: Matrix) -> Result<SymEigen, LinalgError> {
    let n = w.rows();
    let scale = w.frobenius_norm();
    if scale == 0.0 {
        return Ok(SymEigen { values: vec![0.0; n], vectors: v });
    }
    let target = f64::EPSILON * scale;

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += w[(i, j)] * w[(i, j)];
            }
        }
        if off.sqrt() <= target {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = w[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = w[(p, p)];
                let aqq = w[(q, q)];
                // Skip rotations that would not change the diagonal in floating point.
                if apq.abs() < 1e-3 * f64::EPSILON * (app.abs() + aqq.abs()) {
                    w[(p, q)] = 0.0;
                    w[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                w[(p, p)] = app - t * apq;
                w[(q, q)] = aqq + t * apq;
                w[(p, q)] = 0.0;
                w[(q, p)] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = w[(r, p)];
                    let arq = w[(r, q)];
                    let np = c * arp - s * arq;
                    let nq = s * arp + c * arq;
                    w[(r, p)] = np;
                    w[(p, r)] = np;
                    w[(r, q)] = nq;
                    w[(q, r)] = nq;
                }
                for r in 0..n {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = c * vrp - s * vrq;
                    v[(r, q)] = s * vrp + c * vrq;
                }
            }
        }
        if !w.is_finite() {
            return Err(LinalgError::NonFinite);
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(i, i)].total_cmp(&w[(j, j)]));
    let values = order.iter().map(|&i| w[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_input() {
        let a = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let e = sym_eigen(&a).unwrap();
        assert_eq!(e.values, vec![-1.0, 3.0]);
    }

    #[test]
    fn two_by_two_swap() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let e = sym_eigen(&a).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-15);
        assert!((e.values[1] - 1.0).abs() < 1e-15);
        let r = e.reconstruct_with(|x| x);
        assert!(r.sub(&a).max_abs() < 1e-15);
    }

    #[test]
    fn reconstructs_dense_symmetric() {
        let n = 12;
        let a = Matrix::from_fn(n, n, |i, j| {
            let (i, j) = (i.min(j) as f64, i.max(j) as f64);
            (i * 1.3 + j * 0.7).sin() + if i == j { 2.0 } else { 0.0 }
        });
        let e = sym_eigen(&a).unwrap();
        assert!(e.reconstruct_with(|x| x).sub(&a).max_abs() < 1e-12);
        let vtv = e.vectors.transpose().matmul(&e.vectors).unwrap();
        assert!(vtv.sub(&Matrix::identity(n)).max_abs() < 1e-12);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rejects_nan() {
        let a = Matrix::from_rows(&[vec![f64::NAN, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(sym_eigen(&a).unwrap_err(), LinalgError::NonFinite);
    }
}
