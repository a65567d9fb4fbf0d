//! Two-player one-round games: the instance type, its file format, a seeded
//! generator and the classical value by exhaustive search.
//!
//! Answers are 0-indexed, `A = B = {0, .., k-1}`. The predicate is stored as
//! a dense `|S| x |T| x k x k` table of 0/1 bytes.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

/// Default cap on the number of deterministic strategy pairs enumerated.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

const NORMALIZATION_TOL: f64 = 1e-12;
/// Alice strategies per parallel work item. Blocks are fixed, so ties
/// resolve identically with or without threads.
const ENUMERATION_BLOCK: usize = 64;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("invalid game: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("classical enumeration needs {required} strategy pairs, cap is {cap}")]
    CapExceeded { required: u128, cap: u128 },
    #[error("density {0} outside [0, 1]")]
    InvalidDensity(f64),
    #[error("malformed JSON")]
    Json(#[from] serde_json::Error),
    #[error("cannot read file")]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// One broken game invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyQuestionSet { player: char },
    AlphabetTooSmall { k: usize },
    AsymmetricAlphabets { a_size: usize, b_size: usize },
    DistributionShape { expected: (usize, usize) },
    NegativeProbability { s: usize, t: usize, value: f64 },
    NonFiniteProbability { s: usize, t: usize },
    NotNormalized { sum: f64 },
    PredicateShape,
    NotBoolean { s: usize, t: usize, a: usize, b: usize, value: i64 },
    MissingPredicate,
    ConflictingPredicates,
    WinningTupleOutOfRange { tuple: [usize; 4] },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyQuestionSet { player } => write!(f, "question set empty for player {player}"),
            Self::AlphabetTooSmall { k } => write!(f, "answer alphabet too small (k = {k}, need k >= 2)"),
            Self::AsymmetricAlphabets { a_size, b_size } => {
                write!(f, "asymmetric alphabets ({a_size} vs {b_size})")
            }
            Self::DistributionShape { expected } => {
                write!(f, "distribution shape mismatch (expected {}x{})", expected.0, expected.1)
            }
            Self::NegativeProbability { s, t, value } => {
                write!(f, "negative probability pi[{s}][{t}] = {value}")
            }
            Self::NonFiniteProbability { s, t } => write!(f, "non-finite probability pi[{s}][{t}]"),
            Self::NotNormalized { sum } => write!(f, "distribution not normalized (sum = {sum})"),
            Self::PredicateShape => write!(f, "predicate shape mismatch"),
            Self::NotBoolean { s, t, a, b, value } => {
                write!(f, "predicate not boolean (v[{s}][{t}][{a}][{b}] = {value})")
            }
            Self::MissingPredicate => write!(f, "missing predicate: one of \"v\" or \"winning\" is required"),
            Self::ConflictingPredicates => write!(f, "\"v\" and \"winning\" are mutually exclusive"),
            Self::WinningTupleOutOfRange { tuple } => {
                write!(f, "winning tuple {tuple:?} out of range")
            }
        }
    }
}

/// On-disk game description, before validation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GameFile {
    pub name: String,
    pub s_size: usize,
    pub t_size: usize,
    pub k: usize,
    pub pi: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<Vec<Vec<Vec<i64>>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winning: Option<Vec<[usize; 4]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_size: Option<usize>,
}

/// Checks every game invariant and reports all violations found.
pub fn validate_game(g: &GameFile) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if g.s_size == 0 {
        out.push(Violation::EmptyQuestionSet { player: 'A' });
    }
    if g.t_size == 0 {
        out.push(Violation::EmptyQuestionSet { player: 'B' });
    }
    if g.k < 2 {
        out.push(Violation::AlphabetTooSmall { k: g.k });
    }
    let a_size = g.a_size.unwrap_or(g.k);
    let b_size = g.b_size.unwrap_or(g.k);
    if a_size != b_size || a_size != g.k {
        out.push(Violation::AsymmetricAlphabets { a_size, b_size });
    }

    if g.pi.len() != g.s_size || g.pi.iter().any(|row| row.len() != g.t_size) {
        out.push(Violation::DistributionShape { expected: (g.s_size, g.t_size) });
    } else {
        let mut sum = 0.0;
        let mut finite = true;
        for (s, row) in g.pi.iter().enumerate() {
            for (t, &p) in row.iter().enumerate() {
                if !p.is_finite() {
                    finite = false;
                    out.push(Violation::NonFiniteProbability { s, t });
                } else if p < 0.0 {
                    out.push(Violation::NegativeProbability { s, t, value: p });
                }
                sum += p;
            }
        }
        if finite && (sum - 1.0).abs() > NORMALIZATION_TOL {
            out.push(Violation::NotNormalized { sum });
        }
    }

    match (&g.v, &g.winning) {
        (None, None) => out.push(Violation::MissingPredicate),
        (Some(_), Some(_)) => out.push(Violation::ConflictingPredicates),
        (Some(v), None) => {
            let shape_ok = v.len() == g.s_size
                && v.iter().all(|vs| {
                    vs.len() == g.t_size
                        && vs.iter().all(|vt| vt.len() == g.k && vt.iter().all(|va| va.len() == g.k))
                });
            if !shape_ok {
                out.push(Violation::PredicateShape);
            } else {
                for (s, vs) in v.iter().enumerate() {
                    for (t, vt) in vs.iter().enumerate() {
                        for (a, va) in vt.iter().enumerate() {
                            for (b, &value) in va.iter().enumerate() {
                                if value != 0 && value != 1 {
                                    out.push(Violation::NotBoolean { s, t, a, b, value });
                                }
                            }
                        }
                    }
                }
            }
        }
        (None, Some(w)) => {
            for tuple in w {
                let [s, t, a, b] = *tuple;
                if s >= g.s_size || t >= g.t_size || a >= g.k || b >= g.k {
                    out.push(Violation::WinningTupleOutOfRange { tuple: *tuple });
                }
            }
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// A validated game instance. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    name: String,
    s_size: usize,
    t_size: usize,
    k: usize,
    pi: Vec<f64>,
    v: Vec<u8>,
}

impl Game {
    pub fn from_file(file: GameFile) -> Result<Self, GameError> {
        validate_game(&file).map_err(GameError::Invalid)?;
        let GameFile { name, s_size, t_size, k, pi, v, winning, .. } = file;
        let pi_flat: Vec<f64> = pi.into_iter().flatten().collect();
        let mut table = vec![0u8; s_size * t_size * k * k];
        if let Some(v) = v {
            let flat = v.into_iter().flatten().flatten().flatten();
            for (dst, x) in table.iter_mut().zip(flat) {
                *dst = x as u8;
            }
        } else if let Some(w) = winning {
            for [s, t, a, b] in w {
                table[((s * t_size + t) * k + a) * k + b] = 1;
            }
        }
        Ok(Self { name, s_size, t_size, k, pi: pi_flat, v: table })
    }

    /// Builds a game from a distribution and a predicate closure.
    pub fn from_predicate(
        name: impl Into<String>,
        pi: Vec<Vec<f64>>,
        k: usize,
        pred: impl Fn(usize, usize, usize, usize) -> bool,
    ) -> Result<Self, GameError> {
        let s_size = pi.len();
        let t_size = pi.first().map_or(0, Vec::len);
        let v = (0..s_size)
            .map(|s| {
                (0..t_size)
                    .map(|t| {
                        (0..k).map(|a| (0..k).map(|b| i64::from(pred(s, t, a, b))).collect()).collect()
                    })
                    .collect()
            })
            .collect();
        Self::from_file(GameFile {
            name: name.into(),
            s_size,
            t_size,
            k,
            pi,
            v: Some(v),
            winning: None,
            a_size: None,
            b_size: None,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self, GameError> {
        Self::from_file(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GameError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_file(&self) -> GameFile {
        let v = (0..self.s_size)
            .map(|s| {
                (0..self.t_size)
                    .map(|t| {
                        (0..self.k)
                            .map(|a| (0..self.k).map(|b| i64::from(self.wins(s, t, a, b))).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        GameFile {
            name: self.name.clone(),
            s_size: self.s_size,
            t_size: self.t_size,
            k: self.k,
            pi: (0..self.s_size).map(|s| self.pi[s * self.t_size..(s + 1) * self.t_size].to_vec()).collect(),
            v: Some(v),
            winning: None,
            a_size: None,
            b_size: None,
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("game serializes")
    }

    /// The CHSH game: uniform questions, win iff `a xor b = s and t`.
    pub fn chsh() -> Self {
        Self::from_predicate("chsh", vec![vec![0.25; 2]; 2], 2, |s, t, a, b| (a ^ b) == (s & t))
            .expect("CHSH is well formed")
    }

    /// Uniform questions with a constant predicate.
    pub fn constant(s_size: usize, t_size: usize, k: usize, win: bool) -> Result<Self, GameError> {
        let p = 1.0 / (s_size * t_size) as f64;
        let name = if win { "always_win" } else { "never_win" };
        Self::from_predicate(name, vec![vec![p; t_size]; s_size], k, |_, _, _, _| win)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn s_size(&self) -> usize {
        self.s_size
    }

    pub fn t_size(&self) -> usize {
        self.t_size
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn pi(&self, s: usize, t: usize) -> f64 {
        self.pi[s * self.t_size + t]
    }

    #[inline]
    pub fn wins(&self, s: usize, t: usize, a: usize, b: usize) -> bool {
        self.v[((s * self.t_size + t) * self.k + a) * self.k + b] == 1
    }

    /// `pi(s,t) * V(a,b|s,t)`.
    #[inline]
    pub fn weight(&self, s: usize, t: usize, a: usize, b: usize) -> f64 {
        if self.wins(s, t, a, b) {
            self.pi(s, t)
        } else {
            0.0
        }
    }

    /// Winning probability of a deterministic strategy pair.
    pub fn deterministic_value(&self, alice: &[usize], bob: &[usize]) -> f64 {
        assert_eq!(alice.len(), self.s_size);
        assert_eq!(bob.len(), self.t_size);
        let mut acc = 0.0;
        for (s, &a) in alice.iter().enumerate() {
            for (t, &b) in bob.iter().enumerate() {
                acc += self.weight(s, t, a, b);
            }
        }
        acc
    }

    /// Relabels questions and answers: question `s` becomes `perm_s[s]`,
    /// answer `a` becomes `perm_a[a]`, and likewise for Bob.
    pub fn relabeled(&self, perm_s: &[usize], perm_t: &[usize], perm_a: &[usize], perm_b: &[usize]) -> Self {
        let mut pi = vec![vec![0.0; self.t_size]; self.s_size];
        let mut v = vec![vec![vec![vec![0i64; self.k]; self.k]; self.t_size]; self.s_size];
        for s in 0..self.s_size {
            for t in 0..self.t_size {
                pi[perm_s[s]][perm_t[t]] = self.pi(s, t);
                for a in 0..self.k {
                    for b in 0..self.k {
                        v[perm_s[s]][perm_t[t]][perm_a[a]][perm_b[b]] = i64::from(self.wins(s, t, a, b));
                    }
                }
            }
        }
        Self::from_file(GameFile {
            name: format!("{}_relabeled", self.name),
            s_size: self.s_size,
            t_size: self.t_size,
            k: self.k,
            pi,
            v: Some(v),
            winning: None,
            a_size: None,
            b_size: None,
        })
        .expect("relabeling preserves validity")
    }
}

/// Seeded random game: uniform questions, each predicate entry set with
/// probability `density`.
pub fn random_game(s_size: usize, t_size: usize, k: usize, density: f64, seed: u64) -> Result<Game, GameError> {
    if !(0.0..=1.0).contains(&density) {
        return Err(GameError::InvalidDensity(density));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = 1.0 / (s_size.max(1) * t_size.max(1)) as f64;
    let mut v = vec![vec![vec![vec![0i64; k]; k]; t_size]; s_size];
    for vs in v.iter_mut() {
        for vt in vs.iter_mut() {
            for va in vt.iter_mut() {
                for x in va.iter_mut() {
                    *x = i64::from(rng.gen::<f64>() < density);
                }
            }
        }
    }
    Game::from_file(GameFile {
        name: format!("random_{s_size}x{t_size}_k{k}_d{density}_s{seed}"),
        s_size,
        t_size,
        k,
        pi: vec![vec![p; t_size]; s_size],
        v: Some(v),
        winning: None,
        a_size: None,
        b_size: None,
    })
}

/// Optimal deterministic strategy and its value.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClassicalResult {
    pub value: f64,
    pub best_alice: Vec<usize>,
    pub best_bob: Vec<usize>,
}

/// Number of deterministic strategy pairs, `k^|S| * k^|T|`, saturating.
pub fn strategy_pair_count(g: &Game) -> u128 {
    let k = g.k as u128;
    let mut n: u128 = 1;
    for _ in 0..g.s_size + g.t_size {
        n = n.saturating_mul(k);
    }
    n
}

pub fn classical_value(g: &Game) -> Result<ClassicalResult, GameError> {
    classical_value_with_cap(g, DEFAULT_ENUMERATION_CAP)
}

/// Classical value by enumerating Alice's deterministic strategies, with
/// Bob playing a best response to each. Shared randomness is a convex
/// combination of deterministic strategies and cannot beat this maximum.
pub fn classical_value_with_cap(g: &Game, cap: u128) -> Result<ClassicalResult, GameError> {
    let (count, block) = plan_enumeration(g, cap)?;
    let blocks = count.div_ceil(block);
    let best = par::map_range(blocks, |i| best_in_range(g, i * block, ((i + 1) * block).min(count)));
    Ok(pick_best(g, best))
}

/// Same result as [`classical_value_with_cap`], always single-threaded.
pub fn classical_value_sequential(g: &Game, cap: u128) -> Result<ClassicalResult, GameError> {
    let (count, block) = plan_enumeration(g, cap)?;
    let blocks = count.div_ceil(block);
    let best = (0..blocks).map(|i| best_in_range(g, i * block, ((i + 1) * block).min(count))).collect();
    Ok(pick_best(g, best))
}

fn plan_enumeration(g: &Game, cap: u128) -> Result<(usize, usize), GameError> {
    let required = strategy_pair_count(g);
    if required > cap {
        return Err(GameError::CapExceeded { required, cap });
    }
    let count = g.k.pow(g.s_size as u32);
    Ok((count, ENUMERATION_BLOCK))
}

fn pick_best(g: &Game, per_block: Vec<(f64, usize)>) -> ClassicalResult {
    let mut best = (f64::NEG_INFINITY, 0usize);
    for cand in per_block {
        if cand.0 > best.0 {
            best = cand;
        }
    }
    let alice = decode(best.1, g.k, g.s_size);
    let (value, bob) = best_response(g, &alice);
    ClassicalResult { value, best_alice: alice, best_bob: bob }
}

fn best_in_range(g: &Game, start: usize, end: usize) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, start);
    let mut alice = decode(start, g.k, g.s_size);
    for idx in start..end {
        let (value, _) = best_response(g, &alice);
        if value > best.0 {
            best = (value, idx);
        }
        increment(&mut alice, g.k);
    }
    best
}

fn best_response(g: &Game, alice: &[usize]) -> (f64, Vec<usize>) {
    let mut total = 0.0;
    let mut bob = Vec::with_capacity(g.t_size);
    for t in 0..g.t_size {
        let mut best = (f64::NEG_INFINITY, 0);
        for b in 0..g.k {
            let score: f64 = (0..g.s_size).map(|s| g.weight(s, t, alice[s], b)).sum();
            if score > best.0 {
                best = (score, b);
            }
        }
        total += best.0;
        bob.push(best.1);
    }
    (total, bob)
}

fn decode(mut idx: usize, k: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for d in out.iter_mut() {
        *d = idx % k;
        idx /= k;
    }
    out
}

fn increment(digits: &mut [usize], k: usize) {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < k {
            return;
        }
        *d = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chsh_file() -> GameFile {
        Game::chsh().to_file()
    }

    #[test]
    fn chsh_validates() {
        assert_eq!(validate_game(&chsh_file()), Ok(()));
    }

    #[test]
    fn unnormalized_distribution_is_named() {
        let mut f = chsh_file();
        f.pi[0][0] = 0.15;
        let errs = validate_game(&f).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].to_string().starts_with("distribution not normalized"));
    }

    #[test]
    fn non_boolean_predicate_is_named() {
        let mut f = chsh_file();
        f.v.as_mut().unwrap()[1][0][1][0] = 2;
        let errs = validate_game(&f).unwrap_err();
        assert_eq!(errs, vec![Violation::NotBoolean { s: 1, t: 0, a: 1, b: 0, value: 2 }]);
        assert!(errs[0].to_string().starts_with("predicate not boolean"));
    }

    #[test]
    fn all_violations_reported() {
        let mut f = chsh_file();
        f.k = 1;
        f.pi[0][0] = -0.25;
        let errs = validate_game(&f).unwrap_err();
        assert!(errs.iter().any(|v| matches!(v, Violation::AlphabetTooSmall { .. })));
        assert!(errs.iter().any(|v| matches!(v, Violation::NegativeProbability { .. })));
        assert!(errs.iter().any(|v| matches!(v, Violation::NotNormalized { .. })));
        assert!(errs.iter().any(|v| matches!(v, Violation::PredicateShape)));
    }

    #[test]
    fn decimal_literals_within_tolerance() {
        let mut f = chsh_file();
        f.pi = vec![vec![0.1, 0.2], vec![0.3, 0.4]];
        assert_eq!(validate_game(&f), Ok(()));
    }

    #[test]
    fn asymmetric_alphabets_rejected() {
        let mut f = chsh_file();
        f.a_size = Some(2);
        f.b_size = Some(3);
        let errs = validate_game(&f).unwrap_err();
        assert!(matches!(errs[0], Violation::AsymmetricAlphabets { .. }));
    }

    #[test]
    fn winning_list_equivalent_to_dense() {
        let json = r#"{"name":"chsh","s_size":2,"t_size":2,"k":2,
            "pi":[[0.25,0.25],[0.25,0.25]],
            "winning":[[0,0,0,0],[0,0,1,1],[0,1,0,0],[0,1,1,1],
                       [1,0,0,0],[1,0,1,1],[1,1,0,1],[1,1,1,0]]}"#;
        assert_eq!(Game::from_json_str(json).unwrap(), Game::chsh());
    }

    #[test]
    fn both_predicate_forms_rejected() {
        let mut f = chsh_file();
        f.winning = Some(vec![]);
        assert_eq!(validate_game(&f).unwrap_err(), vec![Violation::ConflictingPredicates]);
    }

    #[test]
    fn json_round_trip() {
        let g = random_game(2, 3, 3, 0.5, 11).unwrap();
        assert_eq!(Game::from_json_str(&g.to_json_string()).unwrap(), g);
    }

    #[test]
    fn chsh_classical() {
        let r = classical_value(&Game::chsh()).unwrap();
        assert_eq!(r.value, 0.75);
        let again = Game::chsh().deterministic_value(&r.best_alice, &r.best_bob);
        assert!((again - r.value).abs() < 1e-12);
    }

    #[test]
    fn constant_games() {
        assert_eq!(classical_value(&Game::constant(3, 2, 3, true).unwrap()).unwrap().value, 1.0);
        assert_eq!(classical_value(&Game::constant(3, 2, 3, false).unwrap()).unwrap().value, 0.0);
    }

    #[test]
    fn cap_exceeded_names_count() {
        let g = random_game(3, 3, 3, 0.5, 1).unwrap();
        match classical_value_with_cap(&g, 100) {
            Err(GameError::CapExceeded { required, cap }) => {
                assert_eq!(required, 729);
                assert_eq!(cap, 100);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn random_game_density_extremes_and_determinism() {
        let ones = random_game(2, 3, 2, 1.0, 5).unwrap();
        let zeros = random_game(2, 3, 2, 0.0, 5).unwrap();
        for s in 0..2 {
            for t in 0..3 {
                for a in 0..2 {
                    for b in 0..2 {
                        assert!(ones.wins(s, t, a, b));
                        assert!(!zeros.wins(s, t, a, b));
                    }
                }
            }
        }
        assert_eq!(random_game(2, 2, 2, 0.5, 7).unwrap(), random_game(2, 2, 2, 0.5, 7).unwrap());
        assert!(matches!(random_game(2, 2, 2, 1.5, 7), Err(GameError::InvalidDensity(_))));
    }

    #[test]
    fn sequential_matches_parallel() {
        let g = random_game(6, 4, 3, 0.4, 3).unwrap();
        let a = classical_value_with_cap(&g, u128::MAX).unwrap();
        let b = classical_value_sequential(&g, u128::MAX).unwrap();
        assert_eq!(a, b);
    }
}
