//! Experiment configuration, the two directions of the Poincaré/Neumann
//! equivalence run over a data corpus, and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{generate_corpus, CorpusSpec};
use crate::error::{Error, Result};
use crate::grid::{CellField, Grid, GridFunction, RectDomain};
use crate::matrix_weight::{lq_norm, MatrixDescriptor, MatrixWeightField};
use crate::neumann::{apply_t, check_coercivity, solve, CoercivityReport, NeumannProblem, SobolevPair, SolverConfig};
use crate::poincare::{
    poincare_from_neumann, poincare_p2_eigen, poincare_rayleigh_max, EigenConfig, NeumannPoincareReport,
    PoincareEstimate, PoincareMethod, RayleighConfig,
};
use crate::spectral::ModalFunction;
use crate::weights::ScalarWeightField;

/// Environment variable that overrides every output directory.
pub const OUT_DIR_ENV: &str = "PNEUMANN_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub origin: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSection {
    #[serde(default = "identity_descriptor")]
    pub q: String,
}

fn identity_descriptor() -> String {
    "identity".into()
}

impl Default for MatrixSection {
    fn default() -> Self {
        MatrixSection { q: identity_descriptor() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub p: f64,
    /// Name of the measure weight in `[weights]`.
    #[serde(default = "default_measure")]
    pub v: String,
    /// Modal data for single solves, e.g. `cos:kx=1,ky=0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
}

fn default_measure() -> String {
    "v".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PoincareSection {
    /// `None` picks the eigen solver at `p = 2` and Rayleigh ascent otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<PoincareMethod>,
    pub eigen: EigenConfig,
    pub rayleigh: RayleighConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative agreement of the implied and estimated constants at `p = 2`.
    pub direction_a: f64,
    /// Slack on the predicted regularity bound.
    pub direction_b: f64,
    /// Relative defect allowed in the chain `‖g‖^p ≤ ‖f‖^{p-1}‖u‖`.
    pub chain: f64,
    /// Largest tolerated fraction of failed solves.
    pub failure_fraction: f64,
    pub coercivity_samples: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { direction_a: 0.10, direction_b: 0.05, chain: 1e-6, failure_fraction: 0.05, coercivity_samples: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub json: bool,
    pub csv: bool,
    pub svg: bool,
    /// Adds a generation time to the JSON report, which then stops being
    /// byte-stable.
    pub timestamp: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: None, json: true, csv: true, svg: true, timestamp: false }
    }
}

/// Parsed experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainSection,
    pub grid: GridSection,
    /// Named scalar weights on the rectangle.
    #[serde(default)]
    pub weights: BTreeMap<String, String>,
    #[serde(default)]
    pub matrix: MatrixSection,
    pub problem: ProblemSection,
    #[serde(default)]
    pub corpus: CorpusSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub poincare: PoincareSection,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub outputs: OutputSection,
}

/// A discretized instance: grid, `Q`, `v` and `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub grid: Grid,
    pub q: MatrixWeightField,
    pub v: CellField,
    pub p: f64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.grid()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)?;
        Ok((Self::from_toml(&text)?, text))
    }

    pub fn grid(&self) -> Result<Grid> {
        let d = RectDomain::new(self.domain.a, self.domain.b, self.domain.origin)?;
        Grid::new(d, self.grid.nx, self.grid.ny)
    }

    /// Weight by name. An unlisted `v` defaults to the constant 1.
    pub fn weight(&self, name: &str) -> Result<ScalarWeightField> {
        let dom = self.grid()?.domain.as_box();
        match self.weights.get(name) {
            Some(text) => ScalarWeightField::parse(text, dom),
            None if name == "v" => ScalarWeightField::constant(1.0, dom),
            None => Err(Error::InvalidParameter(format!("no weight named {name:?} in [weights]"))),
        }
    }

    pub fn instance(&self) -> Result<Instance> {
        let grid = self.grid()?;
        let desc = MatrixDescriptor::parse(&self.matrix.q)?;
        let q = MatrixWeightField::from_descriptor(grid, &desc, |name| self.weight(name))?;
        let v = grid.sample_weight(&self.weight(&self.problem.v)?)?;
        if !(self.problem.p > 1.0 && self.problem.p.is_finite()) {
            return Err(Error::InvalidParameter(format!("need 1 < p < inf, got {}", self.problem.p)));
        }
        Ok(Instance { grid, q, v, p: self.problem.p })
    }

    /// Single-solve problem; without modal data the first corpus function
    /// is used.
    pub fn problem(&self) -> Result<NeumannProblem> {
        let inst = self.instance()?;
        let f = match &self.problem.f {
            Some(text) => crate::grid::project_mean_zero(&ModalFunction::parse(text)?.sample(&inst.grid), &inst.v)?,
            None => generate_corpus(&CorpusSpec { count: 1, ..self.corpus }, inst.grid, &inst.v)?
                .pop()
                .ok_or(Error::EmptyCorpus)?,
        };
        NeumannProblem::new(inst.p, inst.q, inst.v, f)
    }

    pub fn corpus(&self, inst: &Instance) -> Result<Vec<GridFunction>> {
        generate_corpus(&self.corpus, inst.grid, &inst.v)
    }

    /// `PNEUMANN_OUT_DIR`, then `cli`, then `[outputs] dir`, then `results`.
    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
            return PathBuf::from(dir);
        }
        cli.map(Path::to_path_buf).or_else(|| self.outputs.dir.clone()).unwrap_or_else(|| PathBuf::from("results"))
    }
}

/// Runs the configured Poincaré estimator at the instance exponent.
pub fn estimate_poincare(inst: &Instance, section: &PoincareSection, corpus: &[GridFunction], solver: &SolverConfig) -> Result<PoincareEstimate> {
    let method = section.method.unwrap_or(if inst.p == 2.0 { PoincareMethod::Eigen } else { PoincareMethod::Rayleigh });
    match method {
        PoincareMethod::Eigen if inst.p == 2.0 => poincare_p2_eigen(&inst.q, &inst.v, &section.eigen),
        PoincareMethod::Eigen => Err(Error::InvalidParameter("the eigen estimator needs p = 2".into())),
        PoincareMethod::Rayleigh => poincare_rayleigh_max(&inst.q, &inst.v, inst.p, &section.rayleigh),
        PoincareMethod::Neumann => Ok(poincare_from_neumann(&inst.q, &inst.v, inst.p, corpus, solver)?.estimate),
    }
}

/// Everything recorded about one corpus function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub index: usize,
    pub f_norm: f64,
    /// Zero data is excluded from both directions.
    pub excluded: bool,
    pub converged: bool,
    pub residual: f64,
    pub iterations: usize,
    pub hypoest_ratio: f64,
    pub a1_ratio: f64,
    /// `|‖f‖^p + ⟨T(u,g), (f,∇f)⟩| / ‖f‖^p`.
    pub identity_defect: f64,
    /// `‖f‖^p / (‖g‖^{p-1} ‖∇f‖)`.
    pub holder_ratio: f64,
    /// `(‖g‖^p - ‖f‖^{p-1}‖u‖)₊ / (‖f‖^{p-1}‖u‖)`.
    pub chain_defect: f64,
    /// `a1 ≤ h + h^{1/p}` with `h` the regularity ratio.
    pub a1_within_chain: bool,
    pub energy_trace: Vec<f64>,
    pub flags: Vec<String>,
}

fn solve_record(index: usize, f: &GridFunction, inst: &Instance, solver: &SolverConfig, chain_tol: f64) -> Result<CorpusRecord> {
    let problem = NeumannProblem::new(inst.p, inst.q.clone(), inst.v.clone(), f.clone())?;
    let f_norm = problem.data_norm();
    let mut rec = CorpusRecord {
        index,
        f_norm,
        excluded: f_norm == 0.0,
        converged: true,
        residual: 0.0,
        iterations: 0,
        hypoest_ratio: 0.0,
        a1_ratio: 0.0,
        identity_defect: 0.0,
        holder_ratio: 0.0,
        chain_defect: 0.0,
        a1_within_chain: true,
        energy_trace: Vec::new(),
        flags: Vec::new(),
    };
    if rec.excluded {
        rec.flags.push("zero data excluded".into());
        return Ok(rec);
    }
    let rep = match solve(&problem, solver) {
        Ok(rep) => rep,
        Err(e) => {
            rec.converged = false;
            rec.flags.push(format!("solve failed: {e}"));
            return Ok(rec);
        }
    };
    let p = inst.p;
    let (u, g) = (rep.norms.u_lp, rep.norms.g_lq);
    let fbar = SobolevPair::from_function(f.clone());
    let grad_f = lq_norm(&fbar.g, &inst.q, p)?;
    let fpp = f_norm.powf(p);
    let scale = f_norm.powf(p - 1.0) * u;
    let h = rep.ratio_hypoest;
    rec.converged = rep.converged;
    rec.residual = rep.residual;
    rec.iterations = rep.iterations;
    rec.hypoest_ratio = h;
    rec.a1_ratio = rep.ratio_a1;
    rec.identity_defect = (fpp + apply_t(&rep.solution, &fbar, &inst.q, p, 0.0)?).abs() / fpp;
    rec.holder_ratio = fpp / (g.powf(p - 1.0) * grad_f);
    rec.chain_defect = if scale > 0.0 { (g.powf(p) - scale).max(0.0) / scale } else { 0.0 };
    rec.a1_within_chain = rep.ratio_a1 <= (h + h.powf(1.0 / p)) * (1.0 + chain_tol);
    rec.energy_trace = rep.energy_history;
    rec.flags = rep.flags;
    Ok(rec)
}

/// Solves every corpus function; records come back in corpus order.
pub fn solve_corpus(inst: &Instance, corpus: &[GridFunction], solver: &SolverConfig, chain_tol: f64) -> Result<Vec<CorpusRecord>> {
    corpus.par_iter().enumerate().map(|(i, f)| solve_record(i, f, inst, solver, chain_tol)).collect()
}

fn used(records: &[CorpusRecord]) -> impl Iterator<Item = &CorpusRecord> {
    records.iter().filter(|r| !r.excluded && r.converged)
}

fn max_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, f64::max)
}

/// Neumann regularity turned into a Poincaré constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionA {
    /// Largest `‖u‖/‖f‖` over converged solves.
    pub regularity_constant: f64,
    /// `D^{p-1}`.
    pub implied_constant: f64,
    pub estimated_constant: f64,
    /// `implied / estimated`.
    pub discrepancy: f64,
    pub max_identity_defect: f64,
    pub max_holder_ratio: f64,
}

/// A Poincaré constant turned into Neumann regularity bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionB {
    pub poincare_constant: f64,
    /// `K^{1/(p-1)}`.
    pub hypoest_bound: f64,
    /// `K^{1/(p(p-1))} (K^{1/p} + 1)`.
    pub a1_bound: f64,
    pub max_hypoest: f64,
    pub max_a1: f64,
    pub max_chain_defect: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coercivity: Option<CoercivityReport>,
}

fn direction_a(records: &[CorpusRecord], p: f64, estimate: &PoincareEstimate) -> Result<DirectionA> {
    if used(records).next().is_none() {
        return Err(Error::EmptyCorpus);
    }
    let d = max_of(used(records).map(|r| r.hypoest_ratio));
    let implied = d.powf(p - 1.0);
    Ok(DirectionA {
        regularity_constant: d,
        implied_constant: implied,
        estimated_constant: estimate.constant,
        discrepancy: implied / estimate.constant,
        max_identity_defect: max_of(used(records).map(|r| r.identity_defect)),
        max_holder_ratio: max_of(used(records).map(|r| r.holder_ratio)),
    })
}

fn direction_b(
    records: &[CorpusRecord],
    inst: &Instance,
    corpus: &[GridFunction],
    estimate: &PoincareEstimate,
    tol: &Tolerances,
    seed: u64,
) -> Result<DirectionB> {
    let p = inst.p;
    let k = estimate.constant;
    let coercivity = match corpus.iter().zip(records).find(|(_, r)| !r.excluded) {
        Some((f, _)) if k.is_finite() && tol.coercivity_samples > 0 => {
            let problem = NeumannProblem::new(p, inst.q.clone(), inst.v.clone(), f.clone())?;
            Some(check_coercivity(&problem, k, tol.coercivity_samples, seed)?)
        }
        _ => None,
    };
    Ok(DirectionB {
        poincare_constant: k,
        hypoest_bound: k.powf(1.0 / (p - 1.0)),
        a1_bound: k.powf(1.0 / (p * (p - 1.0))) * (k.powf(1.0 / p) + 1.0),
        max_hypoest: max_of(used(records).map(|r| r.hypoest_ratio)),
        max_a1: max_of(used(records).map(|r| r.a1_ratio)),
        max_chain_defect: max_of(used(records).map(|r| r.chain_defect)),
        coercivity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn verdict(name: &str, passed: bool, detail: String) -> Verdict {
    Verdict { name: name.into(), passed, detail }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub version: String,
    pub corpus_seed: u64,
    pub solver_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub config: ExperimentConfig,
    /// The configuration file as read.
    pub config_text: String,
    pub stamp: Stamp,
    pub poincare: PoincareEstimate,
    pub records: Vec<CorpusRecord>,
    pub failures: usize,
    pub direction_a: DirectionA,
    pub direction_b: DirectionB,
    /// `max/min` of the two directions' constants; reported, not asserted.
    pub cross_direction_factor: f64,
    pub verdicts: Vec<Verdict>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }
}

/// Direction A on its own: corpus solves and the implied constant.
pub fn run_direction_a(config: &ExperimentConfig) -> Result<(DirectionA, NeumannPoincareReport)> {
    let inst = config.instance()?;
    let corpus = config.corpus(&inst)?;
    let records = solve_corpus(&inst, &corpus, &config.solver, config.tolerances.chain)?;
    let estimate = estimate_poincare(&inst, &config.poincare, &corpus, &config.solver)?;
    let a = direction_a(&records, inst.p, &estimate)?;
    let probe = poincare_from_neumann(&inst.q, &inst.v, inst.p, &corpus, &config.solver)?;
    Ok((a, probe))
}

/// Direction B on its own.
pub fn run_direction_b(config: &ExperimentConfig) -> Result<DirectionB> {
    let inst = config.instance()?;
    let corpus = config.corpus(&inst)?;
    let records = solve_corpus(&inst, &corpus, &config.solver, config.tolerances.chain)?;
    let estimate = estimate_poincare(&inst, &config.poincare, &corpus, &config.solver)?;
    direction_b(&records, &inst, &corpus, &estimate, &config.tolerances, config.corpus.seed)
}

/// Both directions over one set of solves, with verdicts.
pub fn run_equivalence(config: &ExperimentConfig, config_text: &str) -> Result<EquivalenceReport> {
    let inst = config.instance()?;
    let corpus = config.corpus(&inst)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let tol = config.tolerances;
    let records = solve_corpus(&inst, &corpus, &config.solver, tol.chain)?;
    let poincare = estimate_poincare(&inst, &config.poincare, &corpus, &config.solver)?;
    let a = direction_a(&records, inst.p, &poincare)?;
    let b = direction_b(&records, &inst, &corpus, &poincare, &tol, config.corpus.seed)?;
    let p = inst.p;
    let active = records.iter().filter(|r| !r.excluded).count();
    let failures = records.iter().filter(|r| !r.excluded && !r.converged).count();

    let mut verdicts = vec![verdict(
        "solves-converged",
        failures as f64 <= tol.failure_fraction * active as f64,
        format!("{failures} of {active} solves failed"),
    )];
    verdicts.push(verdict(
        "tested-identity",
        a.max_identity_defect <= tol.chain,
        format!("max relative defect {:.3e}", a.max_identity_defect),
    ));
    let agree = if p == 2.0 {
        (a.discrepancy - 1.0).abs() <= tol.direction_a
    } else {
        a.discrepancy <= 1.0 + tol.direction_a
    };
    verdicts.push(verdict(
        "implied-poincare-constant",
        agree,
        format!("implied {:.6e}, estimated {:.6e}, ratio {:.4}", a.implied_constant, a.estimated_constant, a.discrepancy),
    ));
    verdicts.push(verdict(
        "regularity-bound",
        b.max_hypoest <= b.hypoest_bound * (1.0 + tol.direction_b),
        format!("max ratio {:.6e}, bound {:.6e}", b.max_hypoest, b.hypoest_bound),
    ));
    verdicts.push(verdict(
        "full-norm-bound",
        b.max_a1 <= b.a1_bound * (1.0 + tol.direction_b),
        format!("max ratio {:.6e}, bound {:.6e}", b.max_a1, b.a1_bound),
    ));
    verdicts.push(verdict(
        "gradient-chain",
        b.max_chain_defect <= tol.chain && used(&records).all(|r| r.a1_within_chain),
        format!("max relative defect {:.3e}", b.max_chain_defect),
    ));
    if let Some(c) = &b.coercivity {
        verdicts.push(verdict(
            "coercivity-threshold",
            c.all_hold,
            format!("{} samples beyond {:.4e}, min margin {:.3e}", c.samples, c.lambda, c.min_margin),
        ));
    }
    let (x, y) = (a.implied_constant, b.poincare_constant);
    let cross = if x > 0.0 && y > 0.0 { x.max(y) / x.min(y) } else { f64::INFINITY };
    let generated_at = config
        .outputs
        .timestamp
        .then(|| std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0));
    Ok(EquivalenceReport {
        config: config.clone(),
        config_text: config_text.to_string(),
        stamp: Stamp {
            version: env!("CARGO_PKG_VERSION").into(),
            corpus_seed: config.corpus.seed,
            solver_seed: config.solver.seed,
            generated_at,
        },
        poincare,
        records,
        failures,
        direction_a: a,
        direction_b: b,
        cross_direction_factor: cross,
        verdicts,
    })
}

/// One CSV row per corpus function.
#[derive(Serialize)]
struct CsvRow {
    index: usize,
    excluded: bool,
    converged: bool,
    f_norm: f64,
    residual: f64,
    iterations: usize,
    hypoest_ratio: f64,
    a1_ratio: f64,
    identity_defect: f64,
    holder_ratio: f64,
    chain_defect: f64,
}

/// Writes the JSON report, the per-function CSV and two SVG plots into
/// `dir`, returning the written paths.
pub fn emit_report(report: &EquivalenceReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let out = &report.config.outputs;
    let mut written = Vec::new();
    if out.json {
        let path = dir.join("report.json");
        write_json(&path, report)?;
        written.push(path);
    }
    if out.csv {
        let path = dir.join("records.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for r in &report.records {
            w.serialize(CsvRow {
                index: r.index,
                excluded: r.excluded,
                converged: r.converged,
                f_norm: r.f_norm,
                residual: r.residual,
                iterations: r.iterations,
                hypoest_ratio: r.hypoest_ratio,
                a1_ratio: r.a1_ratio,
                identity_defect: r.identity_defect,
                holder_ratio: r.holder_ratio,
                chain_defect: r.chain_defect,
            })?;
        }
        w.flush()?;
        written.push(path);
    }
    if out.svg {
        let path = dir.join("convergence.svg");
        std::fs::write(&path, convergence_svg(&report.records))?;
        written.push(path);
        let path = dir.join("ratios.svg");
        std::fs::write(&path, ratio_histogram_svg(&report.records, report.direction_b.hypoest_bound))?;
        written.push(path);
    }
    Ok(written)
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn svg_frame(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">{title}</text>", WIDTH / 2.0);
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{x_label}</text>",
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{y_label}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    let _ = writeln!(
        s,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    s
}

/// `log10(J_k - J_final)` against iteration, one polyline per solve.
pub fn convergence_svg(records: &[CorpusRecord]) -> String {
    let gaps: Vec<Vec<f64>> = records
        .iter()
        .filter(|r| r.energy_trace.len() > 1)
        .map(|r| {
            let last = *r.energy_trace.last().unwrap();
            let scale = r.energy_trace.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            r.energy_trace[..r.energy_trace.len() - 1].iter().map(|v| ((v - last).max(1e-16 * scale)).log10()).collect()
        })
        .collect();
    let mut s = svg_frame("energy gap per iteration", "iteration", "log10 (J - J_final)");
    let max_len = gaps.iter().map(Vec::len).max().unwrap_or(1).max(2) as f64;
    let (lo, hi) = gaps.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let (w, h) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    for g in &gaps {
        let pts: Vec<String> = g
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", MARGIN + w * i as f64 / (max_len - 1.0), MARGIN + h * (hi - v) / (hi - lo)))
            .collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1\" points=\"{}\"/>", pts.join(" "));
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"10\">{hi:.1}</text>", 4.0, MARGIN + 4.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"10\">{lo:.1}</text>", 4.0, HEIGHT - MARGIN);
    s.push_str("</svg>\n");
    s
}

/// Histogram of `‖u‖/‖f‖` scaled by the predicted bound.
pub fn ratio_histogram_svg(records: &[CorpusRecord], bound: f64) -> String {
    const BINS: usize = 20;
    let ratios: Vec<f64> = used(records).map(|r| r.hypoest_ratio / bound).filter(|v| v.is_finite()).collect();
    let hi = ratios.iter().copied().fold(1.0f64, f64::max);
    let mut counts = [0usize; BINS];
    for r in &ratios {
        counts[((r / hi * BINS as f64) as usize).min(BINS - 1)] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut s = svg_frame("regularity ratio over predicted bound", "ratio / bound", "count");
    let (w, h) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let bw = w / BINS as f64;
    for (i, c) in counts.iter().enumerate() {
        let bh = h * *c as f64 / top;
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\" stroke=\"white\"/>",
            MARGIN + bw * i as f64,
            MARGIN + h - bh,
            bw,
            bh
        );
    }
    let x1 = MARGIN + w / hi;
    let _ = writeln!(
        s,
        "<line x1=\"{x1:.2}\" y1=\"{MARGIN}\" x2=\"{x1:.2}\" y2=\"{}\" stroke=\"firebrick\" stroke-dasharray=\"4 3\"/>",
        HEIGHT - MARGIN
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"10\">0</text>", MARGIN, HEIGHT - MARGIN + 14.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"10\">{hi:.3}</text>", WIDTH - MARGIN - 20.0, HEIGHT - MARGIN + 14.0);
    s.push_str("</svg>\n");
    s
}
