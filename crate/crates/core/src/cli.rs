//! Command-line front end: `synth`, `detect` and `eval`.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 for data errors
//! (unreadable or malformed files, invalid parameters, solver failures).

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::denoiser::PriorFamily;
use crate::detector::{anomaly_scores, roc_curve, rx_scores};
use crate::error::{Error, Result};
use crate::io::{load_hsi, load_mask, load_scores, save_hsi, save_mask, save_scores};
use crate::prox::SparsityPenalty;
use crate::solver::{run, DenoiserConfig, SolverConfig};
use crate::synth::{synth_scene, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(name = "pnp-pbcd", version, about = "Hyperspectral anomaly detection by low-rank plus group-sparse decomposition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic scene and its anomaly mask.
    Synth(SynthArgs),
    /// Score every pixel of a cube.
    Detect(DetectArgs),
    /// Compare scores against a ground-truth mask.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Cube size as N1xN2xN3.
    #[arg(long, value_parser = parse_dims)]
    dims: (usize, usize, usize),
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 0)]
    anomalies: usize,
    #[arg(long, default_value_t = 0.8)]
    magnitude: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, env = "PNPPBCD_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Pnp,
    Rx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Penalty {
    RelaxedLp,
    L1,
    Mcp,
    Scad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Prior {
    Smoother,
    Identity,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Subspace rank (required for the PnP method).
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Pnp)]
    method: Method,
    #[arg(long, default_value_t = 0.25)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Sets all three proximal step parameters at once.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long)]
    alpha_s: Option<f64>,
    #[arg(long)]
    alpha_e: Option<f64>,
    #[arg(long)]
    alpha_z: Option<f64>,
    #[arg(long, value_enum, default_value_t = Penalty::RelaxedLp)]
    penalty: Penalty,
    #[arg(long, default_value_t = 0.1)]
    p: f64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Threshold parameter of MCP / SCAD.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Concavity parameter of MCP / SCAD.
    #[arg(long, default_value_t = 3.0)]
    theta: f64,
    #[arg(long, value_enum, default_value_t = Prior::Smoother)]
    prior: Prior,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 0.2)]
    a: f64,
    #[arg(long, default_value_t = 0.4)]
    b: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    roc: Option<PathBuf>,
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format!("expected N1xN2xN3, got {s:?}"))?;
    match nums[..] {
        [a, b, c] if a > 0 && b > 0 && c > 0 => Ok((a, b, c)),
        _ => Err(format!("expected three positive sizes N1xN2xN3, got {s:?}")),
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        dims: args.dims,
        rank: args.rank,
        anomalies: args.anomalies,
        magnitude: args.magnitude,
        noise: args.noise,
        seed: args.seed,
    };
    let scene = synth_scene(&spec)?;
    save_hsi(&args.out, &scene.observed)?;
    save_mask(&args.truth, &scene.truth)?;
    Ok(())
}

fn solver_config(args: &DetectArgs, rank: usize) -> Result<SolverConfig> {
    let penalty = match args.penalty {
        Penalty::L1 => SparsityPenalty::L1,
        Penalty::RelaxedLp => SparsityPenalty::relaxed_lp(args.p, args.eps)?,
        Penalty::Mcp => SparsityPenalty::mcp(args.lambda, args.theta)?,
        Penalty::Scad => SparsityPenalty::scad(args.lambda, args.theta)?,
    };
    let family = match args.prior {
        Prior::Smoother => PriorFamily::LinearSmoother,
        Prior::Identity => PriorFamily::Identity,
    };
    let cfg = SolverConfig {
        delta: args.delta,
        tau: args.tau,
        rank,
        alpha_s: args.alpha_s.unwrap_or(args.alpha),
        alpha_e: args.alpha_e.unwrap_or(args.alpha),
        alpha_z: args.alpha_z.unwrap_or(args.alpha),
        penalty,
        denoiser: DenoiserConfig {
            family,
            gamma: args.gamma,
            a: args.a,
            b: args.b,
            sigmas: None,
        },
        max_iter: args.max_iter,
        tol: args.tol,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn detect(args: DetectArgs) -> Result<()> {
    let cube = load_hsi(&args.input)?;
    match args.method {
        Method::Rx => {
            let rx = rx_scores(&cube)?;
            if rx.regularized {
                eprintln!("warning: covariance was singular; a ridge term was added");
            }
            save_scores(&args.out, &rx.scores)?;
            if args.history.is_some() {
                eprintln!("warning: --history is ignored for the RX method");
            }
        }
        Method::Pnp => {
            let rank = args
                .rank
                .ok_or_else(|| Error::InvalidParameter("--rank is required for the PnP method".into()))?;
            let cfg = solver_config(&args, rank)?;
            let out = run(&cube, &cfg)?;
            let deficient = out.history.records.iter().filter(|r| r.rank_deficient).count();
            if deficient > 0 {
                eprintln!("warning: spectral basis update was rank deficient at {deficient} iterations");
            }
            if !out.converged && cfg.max_iter > 0 {
                eprintln!("warning: stopping rule not met after {} iterations", cfg.max_iter);
            }
            save_scores(&args.out, &anomaly_scores(&out.state.s))?;
            if let Some(path) = &args.history {
                out.history.write_csv(BufWriter::new(File::create(path)?))?;
            }
            println!("iterations={} converged={}", out.state.iteration, out.converged);
        }
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let scores = load_scores(&args.scores)?;
    let truth = load_mask(&args.truth)?;
    if scores.dims() != truth.dims() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?} score grid", truth.dims()),
            found: format!("{:?}", scores.dims()),
        });
    }
    let roc = roc_curve(scores.values(), &truth)?;
    if let Some(path) = &args.roc {
        roc.write_csv(BufWriter::new(File::create(path)?))?;
    }
    println!("AUC={}", roc.auc());
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Detect(a) => detect(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
