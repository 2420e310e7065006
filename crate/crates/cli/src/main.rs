use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pneumann::harness::{emit_report, estimate_poincare, run_equivalence, write_json, ExperimentConfig};
use pneumann::neumann::solve;
use pneumann::poincare::{poincare_from_neumann, PoincareMethod};
use pneumann::spectral::{l2_bound_check, solve_poisson_neumann_rect, CosineExpansion, L2BoundReport, ModalFunction};
use pneumann::grid::RectDomain;
use pneumann::weights::{
    admissible_pair_check, ap_constant, balance_check, doubling_constant, sample_nested_pairs, Ball, BallFamily,
    BallQuadrature, BoxDomain, ScalarWeightField,
};

/// Degenerate p-Laplacian Neumann problems, weighted Poincaré constants
/// and weight audits.
#[derive(Parser)]
#[command(name = "pneumann", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit scalar weights.
    #[command(subcommand)]
    Weights(WeightsCommand),
    /// Solve one Neumann problem from a config file.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the Poincaré constant of a configured instance.
    Poincare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Eigen)]
        method: MethodArg,
        /// Overrides the exponent in the config.
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form reference solutions.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Experiment runs.
    #[command(subcommand)]
    Harness(HarnessCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Eigen,
    Rayleigh,
    Neumann,
}

#[derive(Args)]
struct Common {
    /// Ambient dimension of the weights.
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Half side of the cube the weights live on.
    #[arg(long, default_value_t = 1.0)]
    half_side: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
#[allow(clippy::enum_variant_names)]
enum WeightsCommand {
    /// A_p constant over a dyadic ball family.
    CheckAp {
        #[arg(long)]
        weight: String,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 5)]
        levels: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Doubling constant over a dyadic ball family.
    CheckDoubling {
        #[arg(long)]
        weight: String,
        #[arg(long, default_value_t = 5)]
        levels: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Balance constant over random nested ball pairs.
    CheckBalance {
        #[arg(long)]
        w: String,
        #[arg(long)]
        v: String,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
        #[arg(long, default_value_t = 500)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of refinement levels in the trace.
        #[arg(long, default_value_t = 4)]
        levels: usize,
        /// Accepted relative change over the last two trace entries.
        #[arg(long, default_value_t = 0.1)]
        stability: f64,
        #[command(flatten)]
        common: Common,
    },
    /// All admissible-pair conditions at once.
    CheckAdmissible {
        #[arg(long)]
        w: String,
        #[arg(long)]
        v: String,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        q: f64,
        #[arg(long, default_value_t = 4)]
        levels: usize,
        #[arg(long, default_value_t = 500)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        stability: f64,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Cosine-series solution on a rectangle.
    Spectral {
        /// Modal data such as `cos:kx=2,ky=1 + cos:kx=0,ky=3,amp=0.5`.
        #[arg(long)]
        f: String,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        /// Truncation in the y index.
        #[arg(long, default_value_t = 64)]
        m: usize,
        /// Truncation in the x index.
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum HarnessCommand {
    /// Both directions of the Poincaré/Neumann equivalence over a corpus.
    Equivalence {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; `PNEUMANN_OUT_DIR` takes precedence.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// JSON to `out`, or to stdout without one.
fn emit(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    match out {
        Some(path) => write_json(path, value).with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn report_line(name: &str, passed: bool, detail: &str) {
    eprintln!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
}

fn cube(common: &Common) -> Result<BoxDomain> {
    Ok(BoxDomain::symmetric(common.dim, common.half_side)?)
}

fn run_weights(cmd: WeightsCommand) -> Result<bool> {
    match cmd {
        WeightsCommand::CheckAp { weight, p, levels, common } => {
            let dom = cube(&common)?;
            let w = ScalarWeightField::parse(&weight, dom.clone())?;
            let family = BallFamily::dyadic(&dom, levels, &w.singular_centers());
            let rep = ap_constant(&w, p, &family, &BallQuadrature::for_dim(common.dim))?;
            let ok = rep.estimate.is_finite() && !rep.divergent;
            report_line("ap-constant", ok, &format!("{:.6e}{}", rep.estimate, if rep.divergent { " (divergent)" } else { "" }));
            emit(common.out.as_deref(), &rep)?;
            Ok(ok)
        }
        WeightsCommand::CheckDoubling { weight, levels, common } => {
            let dom = cube(&common)?;
            let v = ScalarWeightField::parse(&weight, dom.clone())?;
            let family = BallFamily::dyadic(&dom, levels, &v.singular_centers());
            let rep = doubling_constant(&v, &family, &BallQuadrature::for_dim(common.dim))?;
            let ok = rep.estimate.is_finite();
            report_line("doubling-constant", ok, &format!("{:.6e}", rep.estimate));
            emit(common.out.as_deref(), &rep)?;
            Ok(ok)
        }
        WeightsCommand::CheckBalance { w, v, p, q, pairs, seed, levels, stability, common } => {
            let dom = cube(&common)?;
            let w = ScalarWeightField::parse(&w, dom.clone())?;
            let v = ScalarWeightField::parse(&v, dom)?;
            let container = Ball::new(vec![0.0; common.dim], common.half_side)?;
            let sample = sample_nested_pairs(&container, pairs, seed);
            let rep = balance_check(&w, &v, p, q, &sample, Some(&container), &BallQuadrature::for_dim(common.dim), levels)?;
            let ok = rep.estimate.is_finite() && rep.trace_variation() <= stability;
            report_line(
                "balance-constant",
                ok,
                &format!("{:.6e}, trace variation {:.3e}", rep.estimate, rep.trace_variation()),
            );
            emit(common.out.as_deref(), &rep)?;
            Ok(ok)
        }
        WeightsCommand::CheckAdmissible { w, v, p, q, levels, pairs, seed, stability, common } => {
            let dom = cube(&common)?;
            let w = ScalarWeightField::parse(&w, dom.clone())?;
            let v = ScalarWeightField::parse(&v, dom)?;
            let rep = admissible_pair_check(&w, &v, p, q, levels, pairs, seed, stability)?;
            report_line("admissible-pair", rep.admissible, &rep.failures.join("; "));
            emit(common.out.as_deref(), &rep)?;
            Ok(rep.admissible)
        }
    }
}

#[derive(Serialize)]
struct OracleReport {
    f: ModalFunction,
    data: CosineExpansion,
    solution: CosineExpansion,
    bounds: L2BoundReport,
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Weights(cmd) => run_weights(cmd),
        Command::Solve { config, out } => {
            let (cfg, _) = ExperimentConfig::load(&config)?;
            let problem = cfg.problem()?;
            let rep = solve(&problem, &cfg.solver)?;
            report_line("solve", rep.converged, &format!("residual {:.3e} after {} iterations", rep.residual, rep.iterations));
            emit(out.as_deref(), &rep)?;
            Ok(rep.converged)
        }
        Command::Poincare { config, method, p, out } => {
            let (mut cfg, _) = ExperimentConfig::load(&config)?;
            if let Some(p) = p {
                cfg.problem.p = p;
            }
            let inst = cfg.instance()?;
            let method = match method {
                MethodArg::Eigen => PoincareMethod::Eigen,
                MethodArg::Rayleigh => PoincareMethod::Rayleigh,
                MethodArg::Neumann => PoincareMethod::Neumann,
            };
            if method == PoincareMethod::Neumann {
                let corpus = cfg.corpus(&inst)?;
                let rep = poincare_from_neumann(&inst.q, &inst.v, inst.p, &corpus, &cfg.solver)?;
                let ok = rep.estimate.converged;
                report_line("poincare", ok, &format!("implied constant {:.6e}", rep.estimate.constant));
                emit(out.as_deref(), &rep)?;
                return Ok(ok);
            }
            let section = pneumann::harness::PoincareSection { method: Some(method), ..cfg.poincare };
            let est = estimate_poincare(&inst, &section, &[], &cfg.solver)?;
            let ok = est.converged && est.constant.is_finite();
            report_line("poincare", ok, &format!("constant {:.6e}", est.constant));
            emit(out.as_deref(), &est)?;
            Ok(ok)
        }
        Command::Oracle(OracleCommand::Spectral { f, a, b, m, n, out }) => {
            let modal = ModalFunction::parse(&f)?;
            if modal.modes.iter().any(|md| md.kx == 0 && md.ky == 0 && md.amp != 0.0) {
                bail!("data must have zero mean: drop the (0, 0) mode");
            }
            let domain = RectDomain::new(a, b, [0.0, 0.0])?;
            let data = modal.expansion(domain, m, n);
            let solution = solve_poisson_neumann_rect(&data)?;
            let bounds = l2_bound_check(&solution, &data)?;
            let ok = bounds.within_modewise;
            report_line(
                "spectral-bounds",
                ok,
                &format!("ratio {:.6e}, 1/λ_min {:.6e}, series {:.6e}", bounds.ratio, bounds.modewise_bound, bounds.series_bound),
            );
            emit(out.as_deref(), &OracleReport { f: modal, data, solution, bounds })?;
            Ok(ok)
        }
        Command::Harness(HarnessCommand::Equivalence { config, out }) => {
            let (cfg, text) = ExperimentConfig::load(&config)?;
            let rep = run_equivalence(&cfg, &text)?;
            let dir = cfg.output_dir(out.as_deref());
            for v in &rep.verdicts {
                report_line(&v.name, v.passed, &v.detail);
            }
            for path in emit_report(&rep, &dir)? {
                eprintln!("wrote {}", path.display());
            }
            Ok(rep.passed())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
