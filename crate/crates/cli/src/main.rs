//! `nlg`: bounds on the entangled value of two-player one-round games.
//!
//! Exit codes: 0 success (for `report`, the bound sandwich holds), 1 sandwich
//! violated or other failure, 2 invalid input, 3 solver did not converge,
//! 4 operator dimension cap exceeded.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nlg_core::constants::{c_k_numeric, DEFAULT_GRID, NUMERIC_K_RANGE};
use nlg_core::eval::evaluate;
use nlg_core::game::{classical_value_with_cap, random_game, Game, GameError, DEFAULT_ENUMERATION_CAP};
use nlg_core::recovery::DEFAULT_RANK_TOL;
use nlg_core::relaxation::{build_sdp, RelaxationError};
use nlg_core::report::{
    round_solution, run_batch, run_pipeline_with_log, ClassicalArtifact, PipelineConfig, PipelineError,
    RoundingPath, SolveArtifact, SolveStage, StrategyFile,
};
use nlg_core::rounding::{AnticommutingFamily, FamilyMode, RoundingError, DEFAULT_DIM_CAP};
use nlg_core::solver::{solve_with_log, IterRecord, SolverConfig};

const EXIT_SANDWICH: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_DIM_CAP: u8 = 4;

#[derive(Parser)]
#[command(name = "nlg", version, about = "Bounds on the entangled value of nonlocal games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: classical value, SDP bound, rounded strategy, sandwich check.
    Report(ReportArgs),
    /// Classical value by exhaustive search.
    Classical {
        game: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
        enumeration_cap: u128,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Solve the SDP relaxation and write the Gram matrix.
    Solve {
        game: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        uniform: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Round a solved Gram matrix into an explicit strategy.
    Round {
        game: PathBuf,
        solution: PathBuf,
        #[command(flatten)]
        rounding: RoundingArgs,
        /// Force the scaled POVM construction even for a uniform solution.
        #[arg(long)]
        general: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evaluate an exported strategy on a game.
    Eval {
        game: PathBuf,
        strategy: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check the approximation constants and the anticommuting families.
    Selftest,
    /// Generate a random game with uniform question distribution.
    Random {
        #[arg(long, default_value_t = 2)]
        s_size: usize,
        #[arg(long, default_value_t = 2)]
        t_size: usize,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 0.5)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SolverArgs {
    /// Primal, dual and PSD tolerance of the solver.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 50_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the iteration log as CSV.
    #[arg(long)]
    log_csv: Option<PathBuf>,
    /// Write the SDP in sparse triplet form.
    #[arg(long)]
    dump_sdp: Option<PathBuf>,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            max_iters: self.max_iters,
            tol_primal: self.tol,
            tol_dual: self.tol,
            tol_psd: self.tol,
            seed: self.seed,
            ..SolverConfig::default()
        }
    }
}

#[derive(Args)]
struct RoundingArgs {
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    rank_tol: f64,
    #[arg(long, default_value_t = FamilyMode::Compact)]
    family: FamilyMode,
    /// Largest operator dimension allowed.
    #[arg(long, env = "NLG_DIM_CAP", default_value_t = DEFAULT_DIM_CAP)]
    dim_cap: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Game file; omit when using --batch.
    #[arg(required_unless_present = "batch")]
    game: Option<PathBuf>,
    /// Process every *.json game in a directory; -o then names an output directory.
    #[arg(long, conflicts_with = "game")]
    batch: Option<PathBuf>,
    /// Also solve the uniform relaxation and round it projectively (k = 2 only).
    #[arg(long)]
    uniform: bool,
    #[arg(long)]
    skip_classical: bool,
    /// Write the extracted strategy for `nlg eval`.
    #[arg(long)]
    export_strategy: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    rounding: RoundingArgs,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl ReportArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            solver: self.solver.config(),
            uniform: self.uniform,
            rank_tol: self.rounding.rank_tol,
            family: self.rounding.family,
            dim_cap: self.rounding.dim_cap,
            skip_classical: self.skip_classical,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return pipeline_exit_code(p);
        }
        if cause.downcast_ref::<RoundingError>().is_some_and(|r| matches!(r, RoundingError::DimensionCapExceeded { .. })) {
            return EXIT_DIM_CAP;
        }
        if cause.downcast_ref::<GameError>().is_some() || cause.downcast_ref::<RelaxationError>().is_some() {
            return EXIT_INPUT;
        }
    }
    EXIT_SANDWICH
}

fn pipeline_exit_code(e: &PipelineError) -> u8 {
    match e {
        _ if e.is_dimension_cap() => EXIT_DIM_CAP,
        PipelineError::Game(_) | PipelineError::Relaxation(_) | PipelineError::Artifact(_) => EXIT_INPUT,
        _ => EXIT_SANDWICH,
    }
}

fn load_game(path: &Path) -> Result<Game> {
    Game::load(path).with_context(|| format!("loading {}", path.display()))
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, format!("{text}\n")).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}")?;
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("artifact serializes")
}

struct CsvLog {
    text: String,
}

impl CsvLog {
    fn new(with_stage: bool) -> Self {
        let header = if with_stage { "stage,iter,objective,primal_res,dual_res\n" } else { "iter,objective,primal_res,dual_res\n" };
        Self { text: header.to_string() }
    }

    fn push(&mut self, stage: Option<&str>, r: IterRecord) {
        if let Some(s) = stage {
            let _ = write!(self.text, "{s},");
        }
        let _ = writeln!(self.text, "{},{:e},{:e},{:e}", r.iter, r.objective, r.primal_res, r.dual_res);
    }
}

fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Report(args) => cmd_report(args),
        Command::Classical { game, enumeration_cap, output } => {
            let g = load_game(&game)?;
            let r = classical_value_with_cap(&g, enumeration_cap)?;
            write_output(output.as_deref(), &to_json(&ClassicalArtifact::new(&g, r)))?;
            Ok(0)
        }
        Command::Solve { game, solver, uniform, output } => {
            let g = load_game(&game)?;
            let p = build_sdp(&g, uniform)?;
            if let Some(path) = &solver.dump_sdp {
                fs::write(path, p.dump_triplets())?;
            }
            let mut log = CsvLog::new(false);
            let (sol, st) = solve_with_log(&p, &solver.config(), |r| log.push(None, r))?;
            if let Some(path) = &solver.log_csv {
                fs::write(path, &log.text)?;
            }
            write_output(output.as_deref(), &to_json(&SolveArtifact::new(&g, uniform, &sol, &st)))?;
            if !st.converged {
                eprintln!("solver did not converge in {} iterations", st.iterations);
                return Ok(EXIT_NOT_CONVERGED);
            }
            Ok(0)
        }
        Command::Round { game, solution, rounding, general, output } => {
            let g = load_game(&game)?;
            let text = fs::read_to_string(&solution).with_context(|| format!("reading {}", solution.display()))?;
            let art: SolveArtifact = serde_json::from_str(&text).map_err(GameError::from)?;
            let m = art.matrix_for(&g)?;
            let cfg = PipelineConfig {
                rank_tol: rounding.rank_tol,
                family: rounding.family,
                dim_cap: rounding.dim_cap,
                ..PipelineConfig::default()
            };
            let path = if art.uniform && !general { RoundingPath::Uniform } else { RoundingPath::General };
            let (_, q) = round_solution(&g, &m, path, &cfg)?;
            write_output(output.as_deref(), &to_json(&StrategyFile::export(&q)))?;
            Ok(0)
        }
        Command::Eval { game, strategy, output } => {
            let g = load_game(&game)?;
            let q = StrategyFile::load(&strategy)?;
            let r = evaluate(&g, &q)?;
            write_output(output.as_deref(), &to_json(&r))?;
            Ok(0)
        }
        Command::Selftest => cmd_selftest(),
        Command::Random { s_size, t_size, k, density, seed, output } => {
            let g = random_game(s_size, t_size, k, density, seed)?;
            write_output(output.as_deref(), &g.to_json_string())?;
            Ok(0)
        }
    }
}

fn cmd_report(args: ReportArgs) -> Result<u8> {
    let cfg = args.config();
    if let Some(dir) = &args.batch {
        return cmd_batch(dir, args.output.as_deref(), &cfg);
    }
    let path = args.game.as_deref().expect("clap enforces a game or --batch");
    let g = load_game(path)?;
    if let Some(p) = &args.solver.dump_sdp {
        fs::write(p, build_sdp(&g, args.uniform)?.dump_triplets())?;
    }
    let mut log = CsvLog::new(true);
    let (report, strategy) = run_pipeline_with_log(&g, &cfg, |stage, r| {
        log.push(Some(if stage == SolveStage::Plain { "plain" } else { "uniform" }), r)
    })?;
    if let Some(p) = &args.solver.log_csv {
        fs::write(p, &log.text)?;
    }
    if let Some(p) = &args.export_strategy {
        let q = strategy.as_ref().context("no strategy was extracted")?;
        fs::write(p, to_json(&StrategyFile::export(q)))?;
    }
    write_output(args.output.as_deref(), &report.to_json_pretty())?;
    Ok(if !report.converged {
        EXIT_NOT_CONVERGED
    } else if report.sandwich_ok {
        0
    } else {
        EXIT_SANDWICH
    })
}

fn cmd_batch(dir: &Path, out_dir: Option<&Path>, cfg: &PipelineConfig) -> Result<u8> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no *.json games in {}", dir.display());
    }
    if let Some(o) = out_dir {
        fs::create_dir_all(o)?;
    }
    let mut code = 0u8;
    for (path, result) in run_batch(&paths, cfg) {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match result {
            Ok(r) => {
                println!(
                    "{name}: omega_sdp={:.6} omega_extracted={} sandwich_ok={}",
                    r.omega_sdp,
                    r.omega_extracted.map_or("none".into(), |x| format!("{x:.6}")),
                    r.sandwich_ok
                );
                if let Some(o) = out_dir {
                    fs::write(o.join(&name), format!("{}\n", r.to_json_pretty()))?;
                }
                let c = if !r.converged { EXIT_NOT_CONVERGED } else if r.sandwich_ok { 0 } else { EXIT_SANDWICH };
                code = code.max(c);
            }
            Err(e) => {
                println!("{name}: error: {e}");
                code = code.max(pipeline_exit_code(&e));
            }
        }
    }
    Ok(code)
}

fn cmd_selftest() -> Result<u8> {
    let mut ok = true;
    for k in NUMERIC_K_RANGE {
        let r = c_k_numeric(k, DEFAULT_GRID)?;
        let pass = (r.numeric - r.closed_form).abs() <= 1e-6;
        ok &= pass;
        println!("c_{k}: closed {:.10} numeric {:.10} {}", r.closed_form, r.numeric, verdict(pass));
    }
    for mode in [FamilyMode::Tensor, FamilyMode::Compact] {
        for m in 1..=8 {
            let fam = AnticommutingFamily::build(m, mode, DEFAULT_DIM_CAP)?;
            let worst = fam.identity_defects().max();
            let pass = worst <= 1e-12;
            ok &= pass;
            println!("family {mode} m={m} d={}: defect {worst:.1e} {}", fam.d, verdict(pass));
        }
    }
    Ok(if ok { 0 } else { EXIT_SANDWICH })
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "ok"
    } else {
        "FAIL"
    }
}
