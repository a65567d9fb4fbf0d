//! End-to-end pipeline and the JSON artifacts it produces.
//!
//! `run_pipeline` runs classical enumeration, the SDP solve (plain and, if
//! requested, uniform), vector recovery, rounding and evaluation, then checks
//! the bound sandwich `c_k * omega_sdp <= omega_extracted <= omega_sdp`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::constants::{c_k_closed, ConstantsError};
use crate::eval::{evaluate, EvalError, EvalReport};
use crate::game::{classical_value_with_cap, strategy_pair_count, ClassicalResult, Game, GameError, DEFAULT_ENUMERATION_CAP};
use crate::linalg::{CMatrix, LinalgError, Matrix};
use crate::par;
use crate::recovery::{RecoveryError, VectorStrategy, DEFAULT_RANK_TOL};
use crate::relaxation::{build_sdp, GramIndex, RelaxationError};
use crate::rounding::{
    round_general, round_uniform_binary, AnticommutingFamily, FamilyMode, QuantumStrategy, RoundingError,
    StrategyDefects, DEFAULT_DIM_CAP,
};
use crate::solver::{solve_with_log, IterRecord, Residuals, SdpSolution, SolveStatus, SolverConfig, SolverError};

/// Slack in every comparison of the bound sandwich.
pub const SANDWICH_TOL: f64 = 1e-5;
/// Slack allowed on POVM element eigenvalues.
pub const PSD_TOL: f64 = 1e-9;
/// Significant digits kept for floats in the report.
pub const REPORT_DIGITS: usize = 12;
/// Operators up to this dimension get a full spectral check.
pub const SPECTRAL_CAP: usize = 64;
/// Operators up to this dimension get a Cholesky PSD check.
pub const CHOLESKY_CAP: usize = 512;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Relaxation(#[from] RelaxationError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
    #[error(transparent)]
    Rounding(#[from] RoundingError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Constants(#[from] ConstantsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("artifact mismatch: {0}")]
    Artifact(String),
}

impl PipelineError {
    pub fn is_dimension_cap(&self) -> bool {
        matches!(self, PipelineError::Rounding(RoundingError::DimensionCapExceeded { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub solver: SolverConfig,
    pub uniform: bool,
    pub rank_tol: f64,
    pub family: FamilyMode,
    pub dim_cap: usize,
    pub skip_classical: bool,
    pub enumeration_cap: u128,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            uniform: false,
            rank_tol: DEFAULT_RANK_TOL,
            family: FamilyMode::Compact,
            dim_cap: DEFAULT_DIM_CAP,
            skip_classical: false,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundingPath {
    Uniform,
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub objective_value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub residuals: Residuals,
}

impl SolverSummary {
    fn new(sol: &SdpSolution, st: &SolveStatus) -> Self {
        Self {
            objective_value: sol.objective_value,
            converged: st.converged,
            iterations: st.iterations,
            primal_residual: st.primal_residual,
            dual_residual: st.dual_residual,
            residuals: sol.residuals,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub path: RoundingPath,
    pub value: f64,
    pub general_value: Option<f64>,
    pub uniform_value: Option<f64>,
    pub d: usize,
    pub m: usize,
    pub family: FamilyMode,
    pub projective: bool,
    pub defects: StrategyDefects,
    /// Cholesky check of every element at [`PSD_TOL`], when `d` is small enough.
    pub psd_ok: Option<bool>,
    pub no_signaling_defect: f64,
    pub uniform_marginal_deviation: f64,
    pub eval: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub tol_psd: f64,
    pub max_iters: usize,
    pub rank_tol: f64,
    pub sandwich: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub classical_s: f64,
    pub solve_s: f64,
    pub solve_uniform_s: f64,
    /// Vector recovery plus operator construction.
    pub round_s: f64,
    pub eval_s: f64,
    /// Defect and PSD checks on the chosen strategy.
    pub checks_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameValueReport {
    pub game_name: String,
    pub k: usize,
    pub s_size: usize,
    pub t_size: usize,
    pub omega_c: Option<f64>,
    pub omega_sdp: f64,
    pub omega_sdp_uniform: Option<f64>,
    pub c_k: f64,
    pub omega_extracted: Option<f64>,
    pub sandwich_ok: bool,
    pub converged: bool,
    pub solver_status: SolverSummary,
    pub solver_status_uniform: Option<SolverSummary>,
    pub strategy_dimension: Option<usize>,
    pub extraction: Option<Extraction>,
    pub tolerances: Tolerances,
    pub notes: Vec<String>,
    pub timings: Timings,
}

impl GameValueReport {
    /// The report as JSON with floats cut to [`REPORT_DIGITS`] significant digits.
    pub fn to_json_value(&self) -> Value {
        round_floats(serde_json::to_value(self).expect("report serializes"), REPORT_DIGITS)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("value serializes")
    }
}

/// The bound sandwich check.
pub fn sandwich_holds(omega_c: Option<f64>, omega_sdp: f64, c_k: f64, omega_extracted: f64) -> bool {
    omega_extracted >= c_k * omega_sdp - SANDWICH_TOL
        && omega_extracted <= omega_sdp + SANDWICH_TOL
        && omega_c.is_none_or(|c| c <= omega_sdp + SANDWICH_TOL)
}

fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().unwrap_or(x)
}

/// Recursively rounds every non-integer number in a JSON value.
pub fn round_floats(v: Value, digits: usize) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().expect("f64"), digits);
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(|x| round_floats(x, digits)).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, x)| (k, round_floats(x, digits))).collect()),
        other => other,
    }
}

/// Which solve an iteration record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStage {
    Plain,
    Uniform,
}

pub fn run_pipeline(g: &Game, cfg: &PipelineConfig) -> Result<GameValueReport, PipelineError> {
    run_pipeline_with_log(g, cfg, |_, _| {}).map(|(r, _)| r)
}

/// Recovers vectors from a solution and rounds them on the requested path.
pub fn round_solution(
    g: &Game,
    m: &Matrix,
    path: RoundingPath,
    cfg: &PipelineConfig,
) -> Result<(VectorStrategy, QuantumStrategy), PipelineError> {
    let vs = VectorStrategy::recover(m, GramIndex::for_game(g), cfg.rank_tol)?;
    let fam = AnticommutingFamily::build(vs.m_dim, cfg.family, cfg.dim_cap)?;
    let q = match path {
        RoundingPath::Uniform => round_uniform_binary(&vs, &fam)?,
        RoundingPath::General => round_general(&vs, &fam)?,
    };
    Ok((vs, q))
}

/// Like [`run_pipeline`], also returning the extracted strategy.
pub fn run_pipeline_with_log(
    g: &Game,
    cfg: &PipelineConfig,
    mut log: impl FnMut(SolveStage, IterRecord),
) -> Result<(GameValueReport, Option<QuantumStrategy>), PipelineError> {
    let start = Instant::now();
    let mut timings = Timings::default();
    let mut notes = Vec::new();
    let c_k = c_k_closed(g.k())?;
    if cfg.uniform && g.k() != 2 {
        return Err(RelaxationError::UniformNeedsBinary(g.k()).into());
    }

    let t = Instant::now();
    let omega_c = if cfg.skip_classical {
        notes.push("classical value skipped on request".into());
        None
    } else {
        match classical_value_with_cap(g, cfg.enumeration_cap) {
            Ok(r) => Some(r.value),
            Err(GameError::CapExceeded { required, cap }) => {
                notes.push(format!("classical value skipped: {required} strategy pairs exceed the cap {cap}"));
                None
            }
            Err(e) => return Err(e.into()),
        }
    };
    timings.classical_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (sol, st) = solve_with_log(&build_sdp(g, false)?, &cfg.solver, |r| log(SolveStage::Plain, r))?;
    timings.solve_s = t.elapsed().as_secs_f64();
    let mut converged = st.converged;
    if !st.converged {
        notes.push(format!("solver did not converge in {} iterations", st.iterations));
    }

    let uniform = if cfg.uniform {
        let t = Instant::now();
        let (usol, ust) = solve_with_log(&build_sdp(g, true)?, &cfg.solver, |r| log(SolveStage::Uniform, r))?;
        timings.solve_uniform_s = t.elapsed().as_secs_f64();
        if !ust.converged {
            converged = false;
            notes.push(format!("uniform solve did not converge in {} iterations", ust.iterations));
        }
        Some((usol, ust))
    } else {
        None
    };

    // Round on every available path, then keep the best strategy. A failing
    // uniform path is reported but does not abort the general one.
    let mut candidates: Vec<(RoundingPath, QuantumStrategy, usize, EvalReport)> = Vec::new();
    let mut paths: Vec<(RoundingPath, &Matrix)> = vec![(RoundingPath::General, &sol.m_matrix)];
    if let Some((usol, _)) = &uniform {
        paths.push((RoundingPath::Uniform, &usol.m_matrix));
    }
    for (path, m) in paths {
        let t = Instant::now();
        let rounded = round_solution(g, m, path, cfg);
        timings.round_s += t.elapsed().as_secs_f64();
        match rounded {
            Ok((vs, q)) => {
                let t = Instant::now();
                let ev = evaluate(g, &q)?;
                timings.eval_s += t.elapsed().as_secs_f64();
                candidates.push((path, q, vs.m_dim, ev));
            }
            Err(e) if e.is_dimension_cap() => return Err(e),
            Err(e) if converged => return Err(e),
            Err(e) => notes.push(format!("{path:?} rounding failed on unconverged solution: {e}")),
        }
    }

    let general_value = candidates.iter().find(|c| c.0 == RoundingPath::General).map(|c| c.3.win_prob);
    let uniform_value = candidates.iter().find(|c| c.0 == RoundingPath::Uniform).map(|c| c.3.win_prob);
    // Prefer the projective strategy unless the general one is clearly better.
    let best = candidates.into_iter().max_by(|a, b| {
        let bonus = |p: RoundingPath| if p == RoundingPath::Uniform { 1e-9 } else { 0.0 };
        (a.3.win_prob + bonus(a.0)).total_cmp(&(b.3.win_prob + bonus(b.0)))
    });

    let mut strategy = None;
    let extraction = match best {
        Some((path, q, m_dim, ev)) => {
            let t = Instant::now();
            let defects = q.defects(SPECTRAL_CAP);
            let psd_ok = (q.d <= CHOLESKY_CAP).then(|| q.all_psd_within(PSD_TOL));
            timings.checks_s = t.elapsed().as_secs_f64();
            let d = q.d;
            let projective = q.projective;
            strategy = Some(q);
            Some(Extraction {
                path,
                value: ev.win_prob,
                general_value,
                uniform_value,
                d,
                m: m_dim,
                family: cfg.family,
                projective,
                defects,
                psd_ok,
                no_signaling_defect: ev.no_signaling_defect(),
                uniform_marginal_deviation: ev.uniform_marginal_deviation(),
                eval: ev,
            })
        }
        None => None,
    };

    let omega_sdp = sol.objective_value;
    let omega_extracted = extraction.as_ref().map(|e| e.value);
    let sandwich_ok = converged && omega_extracted.is_some_and(|x| sandwich_holds(omega_c, omega_sdp, c_k, x));
    timings.total_s = start.elapsed().as_secs_f64();

    let report = GameValueReport {
        game_name: g.name().to_string(),
        k: g.k(),
        s_size: g.s_size(),
        t_size: g.t_size(),
        omega_c,
        omega_sdp,
        omega_sdp_uniform: uniform.as_ref().map(|(s, _)| s.objective_value),
        c_k,
        omega_extracted,
        sandwich_ok,
        converged,
        solver_status: SolverSummary::new(&sol, &st),
        solver_status_uniform: uniform.as_ref().map(|(s, t)| SolverSummary::new(s, t)),
        strategy_dimension: extraction.as_ref().map(|e| e.d),
        extraction,
        tolerances: Tolerances {
            tol_primal: cfg.solver.tol_primal,
            tol_dual: cfg.solver.tol_dual,
            tol_psd: cfg.solver.tol_psd,
            max_iters: cfg.solver.max_iters,
            rank_tol: cfg.rank_tol,
            sandwich: SANDWICH_TOL,
            seed: cfg.solver.seed,
        },
        notes,
        timings,
    };
    Ok((report, strategy))
}

/// Runs the pipeline on several game files, in parallel when enabled.
pub fn run_batch(paths: &[PathBuf], cfg: &PipelineConfig) -> Vec<(PathBuf, Result<GameValueReport, PipelineError>)> {
    par::map_slice(paths, |p| {
        let r = Game::load(p).map_err(PipelineError::from).and_then(|g| run_pipeline(&g, cfg));
        (p.clone(), r)
    })
}

/// Output of the classical stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalArtifact {
    pub game_name: String,
    pub strategy_pairs: String,
    #[serde(flatten)]
    pub result: ClassicalResult,
}

impl ClassicalArtifact {
    pub fn new(g: &Game, result: ClassicalResult) -> Self {
        Self { game_name: g.name().to_string(), strategy_pairs: strategy_pair_count(g).to_string(), result }
    }
}

/// Output of the solve stage; the input of the round stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveArtifact {
    pub game_name: String,
    pub uniform: bool,
    pub index: GramIndex,
    pub objective_value: f64,
    pub status: SolveStatus,
    pub residuals: Residuals,
    pub m_matrix: Vec<Vec<f64>>,
}

impl SolveArtifact {
    pub fn new(g: &Game, uniform: bool, sol: &SdpSolution, st: &SolveStatus) -> Self {
        Self {
            game_name: g.name().to_string(),
            uniform,
            index: GramIndex::for_game(g),
            objective_value: sol.objective_value,
            status: *st,
            residuals: sol.residuals,
            m_matrix: sol.m_matrix.to_rows(),
        }
    }

    /// The Gram matrix, checked against `g`'s shape.
    pub fn matrix_for(&self, g: &Game) -> Result<Matrix, PipelineError> {
        if self.index != GramIndex::for_game(g) {
            return Err(PipelineError::Artifact(format!(
                "solution was built for shape {:?}, game has {:?}",
                self.index,
                GramIndex::for_game(g)
            )));
        }
        let m = Matrix::from_rows(&self.m_matrix)?;
        if m.rows() != self.index.n() || m.cols() != self.index.n() {
            return Err(PipelineError::Artifact(format!("matrix is {}x{}, expected n = {}", m.rows(), m.cols(), self.index.n())));
        }
        Ok(m)
    }
}

/// Portable strategy export. Every matrix is a list of rows of `[re, im]`
/// pairs; Bob's matrices are stored untransposed and the shared state is
/// the maximally entangled state of dimension `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyFile {
    pub d: usize,
    pub k: usize,
    pub projective: bool,
    pub alice: Vec<Vec<Vec<Vec<[f64; 2]>>>>,
    pub bob: Vec<Vec<Vec<Vec<[f64; 2]>>>>,
}

fn export_matrix(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    let d = m.dim();
    (0..d).map(|i| (0..d).map(|j| [m.get(i, j).re, m.get(i, j).im]).collect()).collect()
}

fn import_matrix(rows: &[Vec<[f64; 2]>], d: usize) -> Result<CMatrix, PipelineError> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(PipelineError::Artifact(format!("operator is not {d}x{d}")));
    }
    let data = rows.iter().flatten().map(|&[re, im]| Complex64::new(re, im)).collect();
    Ok(CMatrix::from_vec(d, data)?)
}

impl StrategyFile {
    pub fn export(q: &QuantumStrategy) -> Self {
        let side = |ops: &[Vec<CMatrix>]| ops.iter().map(|meas| meas.iter().map(export_matrix).collect()).collect();
        Self { d: q.d, k: q.k, projective: q.projective, alice: side(&q.alice), bob: side(&q.bob) }
    }

    pub fn to_strategy(&self) -> Result<QuantumStrategy, PipelineError> {
        let side = |ops: &[Vec<Vec<Vec<[f64; 2]>>>]| -> Result<Vec<Vec<CMatrix>>, PipelineError> {
            ops.iter()
                .map(|meas| {
                    if meas.len() != self.k {
                        return Err(PipelineError::Artifact(format!("measurement has {} elements, k = {}", meas.len(), self.k)));
                    }
                    meas.iter().map(|m| import_matrix(m, self.d)).collect()
                })
                .collect()
        };
        Ok(QuantumStrategy { d: self.d, k: self.k, alice: side(&self.alice)?, bob: side(&self.bob)?, projective: self.projective })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<QuantumStrategy, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(GameError::from)?;
        let file: StrategyFile = serde_json::from_str(&text).map_err(GameError::from)?;
        file.to_strategy()
    }
}
