//! Approximation constants `c_k` for POVM rounding.
//!
//! `c_k` is the minimum of `f(u) = (sum_i max{u_i, sqrt(u_i (1 - u_i))})^-2`
//! over the probability simplex. The closed form is used at runtime; the
//! numeric minimizer is an independent check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUMERIC_K_RANGE: std::ops::RangeInclusive<usize> = 2..=6;
pub const DEFAULT_GRID: f64 = 1e-4;

const GOLDEN_TOL: f64 = 1e-13;
const DESCENT_STARTS: usize = 24;
const DESCENT_SWEEPS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstantsError {
    #[error("c_k needs k >= 2, got {0}")]
    AlphabetTooSmall(usize),
    #[error("numeric c_k supports k in 2..=6, got {0}")]
    UnsupportedK(usize),
    #[error("grid resolution must lie in (0, 0.5), got {0}")]
    InvalidGrid(f64),
}

pub fn c_k_closed(k: usize) -> Result<f64, ConstantsError> {
    match k {
        0 | 1 => Err(ConstantsError::AlphabetTooSmall(k)),
        2 => Ok(4.0 / (3.0 + 2.0 * std::f64::consts::SQRT_2)),
        _ => Ok(1.0 / (k - 1) as f64),
    }
}

/// Identity share of one element: `max{x, sqrt(x (1 - x))}`.
fn share(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x.max((x * (1.0 - x)).sqrt())
}

/// `f(u) = (sum_i share(u_i))^-2`.
pub fn ck_objective(u: &[f64]) -> f64 {
    let total: f64 = u.iter().map(|&x| share(x)).sum();
    total.powi(-2)
}

/// `min over a in [1/2, 1] of 1 / (a + sqrt(a (1 - a)))`, found numerically.
pub fn inner_min_binary() -> f64 {
    let g = |a: f64| 1.0 / (a + (a * (1.0 - a)).sqrt());
    let a = golden_min(g, 0.5, 1.0);
    g(a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkResult {
    pub k: usize,
    pub closed_form: f64,
    pub numeric: f64,
    pub argmin: Vec<f64>,
}

/// Minimizes `f` over the simplex without assuming the minimizer's shape.
///
/// Two searches run and the better point wins:
///
/// * a reduced family with one coordinate `a` and the rest `1 - a` split
///   evenly over `j` coordinates, gridded in `a` and refined by golden
///   section; this covers both "all coordinates at most 1/2" and "one
///   coordinate above 1/2";
/// * pairwise mass-transfer descent from seeded random starting points.
pub fn c_k_numeric(k: usize, grid: f64) -> Result<CkResult, ConstantsError> {
    if !NUMERIC_K_RANGE.contains(&k) {
        return Err(ConstantsError::UnsupportedK(k));
    }
    if !(grid > 0.0 && grid < 0.5) {
        return Err(ConstantsError::InvalidGrid(grid));
    }
    let closed_form = c_k_closed(k)?;

    let mut best = reduced_family_search(k, grid);
    let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
    for _ in 0..DESCENT_STARTS {
        let mut u: Vec<f64> = (0..k).map(|_| -rng.gen::<f64>().ln()).collect();
        let s: f64 = u.iter().sum();
        u.iter_mut().for_each(|x| *x /= s);
        let u = pairwise_descent(u);
        if ck_objective(&u) < ck_objective(&best) {
            best = u;
        }
    }
    let s: f64 = best.iter().sum();
    best.iter_mut().for_each(|x| *x = x.max(0.0) / s);
    Ok(CkResult { k, closed_form, numeric: ck_objective(&best), argmin: best })
}

fn family_point(k: usize, j: usize, a: f64) -> Vec<f64> {
    let mut u = vec![0.0; k];
    u[0] = a;
    for x in u.iter_mut().skip(1).take(j) {
        *x = (1.0 - a) / j as f64;
    }
    u
}

fn reduced_family_search(k: usize, grid: f64) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for j in 1..k {
        let f = |a: f64| ck_objective(&family_point(k, j, a));
        let steps = (1.0 / grid).round() as usize;
        let (mut arg, mut val) = (0.0, f64::INFINITY);
        for i in 0..=steps {
            let a = i as f64 / steps as f64;
            let v = f(a);
            if v < val {
                (arg, val) = (a, v);
            }
        }
        let lo = (arg - grid).max(0.0);
        let hi = (arg + grid).min(1.0);
        let a = golden_min(f, lo, hi);
        let a = if f(a) < val { a } else { arg };
        let v = f(a);
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, family_point(k, j, a)));
        }
    }
    best.expect("k >= 2").1
}

/// Moves mass between coordinate pairs until no single transfer helps.
fn pairwise_descent(mut u: Vec<f64>) -> Vec<f64> {
    let k = u.len();
    for _ in 0..DESCENT_SWEEPS {
        let before = ck_objective(&u);
        for i in 0..k {
            for j in i + 1..k {
                let pool = u[i] + u[j];
                let f = |t: f64| share(t) + share(pool - t);
                // maximize the pair's share sum by minimizing its negation
                let t = golden_min(|t| -f(t), 0.0, pool);
                let t = [0.0, pool, t, u[i]].into_iter().fold(u[i], |b, c| if f(c) > f(b) { c } else { b });
                u[i] = t;
                u[j] = pool - t;
            }
        }
        if before - ck_objective(&u) < 1e-16 {
            break;
        }
    }
    u
}

/// Golden-section minimizer of a unimodal function on `[lo, hi]`.
fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > GOLDEN_TOL {
        if f1 < f2 {
            hi = x2;
            (x2, f2) = (x1, f1);
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            (x1, f1) = (x2, f2);
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}
