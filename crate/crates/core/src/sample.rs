//! Seeded random instances for tests and benchmarks.

use num_complex::Complex64;
use rand::Rng;

use crate::linalg::{dot, CMatrix};
use crate::recovery::{rotate_to_e0, RecoveryError, VectorStrategy};
use crate::relaxation::GramIndex;
use crate::rounding::QuantumStrategy;

fn gram_schmidt_complex(mut cols: Vec<Vec<Complex64>>) -> Vec<Vec<Complex64>> {
    for i in 0..cols.len() {
        for _ in 0..2 {
            for j in 0..i {
                let (head, tail) = cols.split_at_mut(i);
                let proj: Complex64 = head[j].iter().zip(&tail[0]).map(|(a, b)| a.conj() * b).sum();
                for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                    *x -= proj * y;
                }
            }
        }
        let n = cols[i].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        cols[i].iter_mut().for_each(|z| *z /= n);
    }
    cols
}

fn gram_schmidt_real(mut cols: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    for i in 0..cols.len() {
        for _ in 0..2 {
            for j in 0..i {
                let (head, tail) = cols.split_at_mut(i);
                let proj = dot(&head[j], &tail[0]);
                for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                    *x -= proj * y;
                }
            }
        }
        let n = dot(&cols[i], &cols[i]).sqrt();
        cols[i].iter_mut().for_each(|x| *x /= n);
    }
    cols
}

/// Random orthonormal basis of `C^d`.
pub fn random_unitary_columns(d: usize, rng: &mut impl Rng) -> Vec<Vec<Complex64>> {
    let cols = (0..d)
        .map(|_| (0..d).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
        .collect();
    gram_schmidt_complex(cols)
}

/// Random projective measurement with `k` outcomes in dimension `d`; each
/// basis vector of a random basis goes to a uniformly chosen outcome.
pub fn random_projective_measurement(d: usize, k: usize, rng: &mut impl Rng) -> Vec<CMatrix> {
    let basis = random_unitary_columns(d, rng);
    let mut out = vec![CMatrix::zeros(d); k];
    for col in &basis {
        let a = rng.gen_range(0..k);
        for i in 0..d {
            for j in 0..d {
                out[a].add_at(i, j, col[i] * col[j].conj());
            }
        }
    }
    out
}

pub fn random_projective_strategy(s_size: usize, t_size: usize, k: usize, d: usize, rng: &mut impl Rng) -> QuantumStrategy {
    let alice = (0..s_size).map(|_| random_projective_measurement(d, k, rng)).collect();
    let bob = (0..t_size).map(|_| random_projective_measurement(d, k, rng)).collect();
    QuantumStrategy { d, k, alice, bob, projective: true }
}

/// Random PSD matrix with trace at most `d`.
pub fn random_psd(d: usize, rng: &mut impl Rng) -> CMatrix {
    let data = (0..d * d).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let a = CMatrix::from_vec(d, data).expect("square");
    let p = a.matmul(&a.adjoint());
    let tr = p.trace().re.max(1e-300);
    p.scale(d as f64 / tr * rng.gen_range(0.0..1.0))
}

/// Exactly feasible vectors for the relaxation, in dimension `dim >= k`.
///
/// For each question a random orthonormal basis is split into `k` groups
/// and `u_a = P_a z` for a shared random unit `z`, so the vectors are
/// orthogonal, sum to `z` and satisfy `<u_a|z> = |u_a|²`.
pub fn random_vector_strategy(index: GramIndex, dim: usize, rng: &mut impl Rng) -> Result<VectorStrategy, RecoveryError> {
    assert!(dim >= index.k, "need at least k dimensions");
    let mut z: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let zn = dot(&z, &z).sqrt();
    z.iter_mut().for_each(|x| *x /= zn);

    let mut vectors = vec![z.clone()];
    for _ in 0..index.s_size + index.t_size {
        let basis = gram_schmidt_real((0..dim).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect());
        let mut group = vec![vec![0.0; dim]; index.k];
        for b in &basis {
            let a = rng.gen_range(0..index.k);
            let c = dot(b, &z);
            for (g, x) in group[a].iter_mut().zip(b) {
                *g += c * x;
            }
        }
        vectors.extend(group);
    }
    let rotated = rotate_to_e0(&vectors, index.z())?;
    VectorStrategy::from_rotated(rotated, index, 0.0)
}
