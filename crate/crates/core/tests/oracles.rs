//! Known values computed independently of the library code paths.

use std::f64::consts::{FRAC_PI_4, SQRT_2};

use num_complex::Complex64;
use nlg_core::constants::{c_k_closed, c_k_numeric, ck_objective, inner_min_binary, DEFAULT_GRID};
use nlg_core::eval::{cross_check_state, evaluate, honest_gram, outcome_prob};
use nlg_core::game::{classical_value, classical_value_with_cap, random_game, validate_game, Game, GameError, GameFile};
use nlg_core::linalg::{CMatrix, Matrix};
use nlg_core::relaxation::{build_sdp, objective_of, ConstraintKind, GramIndex};
use nlg_core::rounding::QuantumStrategy;
use nlg_core::solver::{solve, SolverConfig};

const TSIRELSON: f64 = (2.0 + SQRT_2) / 4.0;

/// Brute force over all 16 deterministic CHSH strategies, written out by hand.
#[allow(clippy::needless_range_loop)]
fn chsh_classical_by_hand() -> f64 {
    let mut best = 0.0f64;
    for a0 in 0..2 {
        for a1 in 0..2 {
            for b0 in 0..2 {
                for b1 in 0..2 {
                    let alice = [a0, a1];
                    let bob = [b0, b1];
                    let mut wins = 0;
                    for s in 0..2 {
                        for t in 0..2 {
                            if (alice[s] ^ bob[t]) == (s & t) {
                                wins += 1;
                            }
                        }
                    }
                    best = best.max(wins as f64 / 4.0);
                }
            }
        }
    }
    best
}

/// Projectors onto `cos(θ)|0> + sin(θ)|1>` and its complement.
fn real_qubit_measurement(theta: f64) -> Vec<CMatrix> {
    let (c, s) = (theta.cos(), theta.sin());
    let p = Matrix::from_rows(&[vec![c * c, c * s], vec![c * s, s * s]]).unwrap();
    let p = CMatrix::from_real(&p);
    vec![p.clone(), CMatrix::identity(2).sub(&p)]
}

/// The optimal CHSH strategy on the maximally entangled qubit pair.
fn textbook_chsh() -> QuantumStrategy {
    QuantumStrategy {
        d: 2,
        k: 2,
        alice: vec![real_qubit_measurement(0.0), real_qubit_measurement(FRAC_PI_4)],
        bob: vec![real_qubit_measurement(FRAC_PI_4 / 2.0), real_qubit_measurement(-FRAC_PI_4 / 2.0)],
        projective: true,
    }
}

fn game_file(pi: Vec<Vec<f64>>, v: Vec<Vec<Vec<Vec<i64>>>>) -> GameFile {
    serde_json::from_value(serde_json::json!({
        "name": "g", "s_size": pi.len(), "t_size": pi[0].len(), "k": v[0][0].len(), "pi": pi, "v": v
    }))
    .unwrap()
}

#[test]
fn chsh_is_valid() {
    assert_eq!(validate_game(&Game::chsh().to_file()), Ok(()));
}

#[test]
fn unnormalized_distribution_is_named() {
    let mut f = Game::chsh().to_file();
    f.pi = vec![vec![0.25, 0.25], vec![0.25, 0.15]];
    let msgs: Vec<String> = validate_game(&f).unwrap_err().iter().map(ToString::to_string).collect();
    assert!(msgs.iter().any(|m| m.contains("distribution not normalized")), "{msgs:?}");
}

#[test]
fn non_boolean_predicate_is_named() {
    let mut v = vec![vec![vec![vec![0i64; 2]; 2]; 2]; 2];
    v[1][0][1][1] = 2;
    let msgs: Vec<String> =
        validate_game(&game_file(vec![vec![0.25; 2]; 2], v)).unwrap_err().iter().map(ToString::to_string).collect();
    assert!(msgs.iter().any(|m| m.contains("predicate not boolean")), "{msgs:?}");
}

#[test]
fn chsh_classical_value_matches_hand_enumeration() {
    let r = classical_value(&Game::chsh()).unwrap();
    assert_eq!(r.value, chsh_classical_by_hand());
    assert_eq!(r.value, 0.75);
    assert_eq!(Game::chsh().deterministic_value(&r.best_alice, &r.best_bob), r.value);
}

#[test]
fn constant_games_classical() {
    assert_eq!(classical_value(&Game::constant(2, 3, 3, true).unwrap()).unwrap().value, 1.0);
    assert_eq!(classical_value(&Game::constant(2, 3, 3, false).unwrap()).unwrap().value, 0.0);
}

#[test]
fn enumeration_cap_names_the_count() {
    let g = Game::constant(3, 3, 3, true).unwrap();
    match classical_value_with_cap(&g, 100) {
        Err(GameError::CapExceeded { required, cap }) => assert_eq!((required, cap), (729, 100)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn random_game_extremes_and_determinism() {
    let full = random_game(2, 3, 2, 1.0, 1).unwrap();
    let empty = random_game(2, 3, 2, 0.0, 1).unwrap();
    for s in 0..2 {
        for t in 0..3 {
            for a in 0..2 {
                for b in 0..2 {
                    assert!(full.wins(s, t, a, b));
                    assert!(!empty.wins(s, t, a, b));
                }
            }
        }
    }
    assert_eq!(random_game(2, 2, 2, 0.5, 7).unwrap(), random_game(2, 2, 2, 0.5, 7).unwrap());
    assert!(random_game(2, 2, 2, 1.5, 7).is_err());
}

#[test]
fn chsh_relaxation_counts() {
    let p = build_sdp(&Game::chsh(), false).unwrap();
    assert_eq!(p.n(), 9);
    assert_eq!(p.count_kind(ConstraintKind::Normalization), 1);
    assert_eq!(p.count_kind(ConstraintKind::SumToReference), 36);
    assert_eq!(p.count_kind(ConstraintKind::Orthogonality), 4);
    assert_eq!(p.ineq_indices.len(), 16);
    let u = build_sdp(&Game::chsh(), true).unwrap();
    assert_eq!(u.count_kind(ConstraintKind::UniformDiagonal), 8);
    assert!(build_sdp(&Game::constant(1, 1, 3, true).unwrap(), true).is_err());
}

#[test]
fn objective_of_rank_one_all_equal() {
    // V ≡ 1 and M = J/N give k²/N.
    let g = Game::constant(2, 2, 3, true).unwrap();
    let n = GramIndex::for_game(&g).n();
    let m = Matrix::from_fn(n, n, |_, _| 1.0 / n as f64);
    assert!((objective_of(&g, &m).unwrap() - 9.0 / n as f64).abs() < 1e-14);
    let zero = Game::constant(2, 2, 3, false).unwrap();
    assert_eq!(objective_of(&zero, &m).unwrap(), 0.0);
    assert!(objective_of(&g, &Matrix::identity(3)).is_err());
}

#[test]
fn textbook_chsh_strategy_reaches_tsirelson() {
    let r = evaluate(&Game::chsh(), &textbook_chsh()).unwrap();
    assert!((r.win_prob - TSIRELSON).abs() < 1e-12, "{}", r.win_prob);
}

#[test]
fn explicit_state_examples() {
    let q = textbook_chsh();
    for (s, t, a, b) in [(0, 0, 0, 0), (1, 1, 1, 0), (0, 1, 1, 1)] {
        let diff = outcome_prob(&q, s, t, a, b) - cross_check_state(&q, s, t, a, b).unwrap();
        assert!(diff.abs() < 1e-12);
    }
    // (I + σ_z)/2 for both players gives 1/2
    let p = CMatrix::from_vec(2, vec![Complex64::new(1.0, 0.0), 0.0.into(), 0.0.into(), 0.0.into()]).unwrap();
    let meas = vec![p.clone(), CMatrix::identity(2).sub(&p)];
    let z = QuantumStrategy { d: 2, k: 2, alice: vec![meas.clone()], bob: vec![meas], projective: true };
    assert!((cross_check_state(&z, 0, 0, 0, 0).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn always_win_game_is_won_by_any_strategy() {
    let g = Game::constant(2, 2, 2, true).unwrap();
    let mut q = textbook_chsh();
    q.alice.swap(0, 1);
    assert!((evaluate(&g, &q).unwrap().win_prob - 1.0).abs() < 1e-14);
}

#[test]
fn honest_textbook_gram_is_feasible_and_tight() {
    let g = Game::chsh();
    let m = honest_gram(&textbook_chsh());
    let p = build_sdp(&g, false).unwrap();
    assert!(p.max_eq_violation(&m) < 1e-12);
    assert!(p.max_negative_ineq(&m) < 1e-12);
    assert!((objective_of(&g, &m).unwrap() - TSIRELSON).abs() < 1e-12);
    // the uniform relaxation is also tight: the textbook marginals are uniform
    assert!(build_sdp(&g, true).unwrap().max_eq_violation(&m) < 1e-12);
}

#[test]
fn chsh_sdp_optimum_is_tsirelson() {
    for uniform in [false, true] {
        let p = build_sdp(&Game::chsh(), uniform).unwrap();
        let (sol, st) = solve(&p, &SolverConfig::default()).unwrap();
        assert!(st.converged);
        assert!((sol.objective_value - TSIRELSON).abs() < 1e-6, "{}", sol.objective_value);
        assert!((objective_of(&Game::chsh(), &sol.m_matrix).unwrap() - sol.objective_value).abs() < 1e-10);
    }
}

#[test]
fn approximation_constants() {
    assert!((c_k_closed(2).unwrap() - 0.686_291_501_015_239_7).abs() < 1e-15);
    assert_eq!(c_k_closed(3).unwrap(), 0.5);
    assert!((inner_min_binary() - 2.0 / (1.0 + SQRT_2)).abs() < 1e-10);
    let mut previous = f64::INFINITY;
    for k in 2..=6 {
        let r = c_k_numeric(k, DEFAULT_GRID).unwrap();
        assert!((r.numeric - r.closed_form).abs() < 1e-6, "{r:?}");
        assert!((ck_objective(&r.argmin) - r.numeric).abs() < 1e-10);
        assert!(r.argmin.iter().all(|&x| x >= 0.0));
        assert!((r.argmin.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(r.numeric <= previous);
        previous = r.numeric;
    }
}
