//! Batch front door: one job per invocation, one JSON report per job.
//!
//! Exit codes: 0 when every asserted invariant held, 2 when a certified
//! counterexample was found, 1 on operational errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::calculus::{cq_check, sum_representative, sum_square_min, LinearMap, ProductFn};
use crate::conjugate::ConjugateEngine;
use crate::convex_fn::ConvexFn;
use crate::error::{Error, Result};
use crate::fitzpatrick::{equality_set, fitzpatrick_fn, is_monotone, OperatorGraph};
use crate::paired::{DualPoint, PairedPoint, Region};
use crate::refinement::{ana_sequence, refine_from_gap, scaled_refine, DEFAULT_BETA, DEFAULT_GAMMA, DEFAULT_TERM_TOL};
use crate::representability::{
    box_family, check_locally_max, check_ni, check_representative, check_strong, distance_certificate,
    maximality_extension_test, minus_j_split, Budget, Tolerances,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_COUNTEREXAMPLE: i32 = 2;

const OUT_OF_SCOPE: &str = "maximal monotone operators that are not strongly representable, and non-reflexive separations, cannot arise in R^n and are not tested";

#[derive(Debug, Parser)]
#[command(name = "monocert", version, about = "Certificates for representable monotone operators on R^n x R^n")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Fitzpatrick function of a sampled graph.
    Fitz,
    /// Strong-representative verdict for a function (or phi_M of a graph).
    Check,
    /// Refinement onto M_f from each point.
    Refine,
    /// Primal and dual distance certificates at each point.
    Distance,
    /// Sum representative of two functions through a linear map.
    Sum,
    /// Conjugate values and a biconjugate check.
    Conjugate,
    /// ANA sequences from points off M_f.
    Ana,
    /// Monotone / NI / locally-max / extension verdicts for a graph.
    Classes,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Options {
    /// Input file: `.csv` graph or `.json` function. Repeatable.
    #[arg(long, global = true)]
    pub input: Vec<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// `lo:hi[,lo:hi...]`, one pair per coordinate of Z (or one pair for all).
    #[arg(long = "box", global = true, allow_hyphen_values = true)]
    pub region: Option<String>,
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// A point of Z as comma-separated `x..., x*...`. Repeatable.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub point: Vec<String>,
    /// Number of seeded random points when no `--point` is given.
    #[arg(long, global = true, default_value_t = 5)]
    pub samples: usize,
    /// JSON linear map `{"matrix": [[...]]}` for `sum`; identity when absent.
    #[arg(long, global = true)]
    pub map: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Clone, Serialize)]
struct Params {
    tol: f64,
    beta: Option<f64>,
    gamma: Option<f64>,
    alpha: Option<f64>,
    region: Option<Vec<(f64, f64)>>,
    resolution: Option<usize>,
    seed: u64,
    points: Vec<Vec<f64>>,
    tolerances: Tolerances,
}

#[derive(Debug, Serialize)]
struct Report {
    command: &'static str,
    version: &'static str,
    inputs: Vec<InputDigest>,
    params: Params,
    outcome: &'static str,
    exit_code: i32,
    result: Value,
    scope: &'static str,
    timing: Timing,
}

#[derive(Debug, Serialize)]
struct Timing {
    elapsed_ms: f64,
}

struct Outcome {
    result: Value,
    counterexample: bool,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Fitz => "fitz",
            Command::Check => "check",
            Command::Refine => "refine",
            Command::Distance => "distance",
            Command::Sum => "sum",
            Command::Conjugate => "conjugate",
            Command::Ana => "ana",
            Command::Classes => "classes",
        }
    }
}

enum Loaded {
    Graph(OperatorGraph),
    Function(ConvexFn),
}

struct Job {
    opts: Options,
    inputs: Vec<(PathBuf, Loaded)>,
    digests: Vec<InputDigest>,
    params: Params,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::NonFinite(_) => "non_finite",
        Error::InvalidParameter(_) => "invalid_parameter",
        Error::Improper(_) => "improper",
        Error::NotPsd(_) => "not_psd",
        Error::Unresolved(_) => "unresolved",
        Error::Unbounded(_) => "unbounded",
        Error::Precondition(_) => "precondition",
        Error::ConstraintQualification(_) => "constraint_qualification",
        Error::NotStrong(_) => "not_strong",
        Error::Breach(_) => "breach",
        Error::Parse(_) => "parse",
        Error::Io(_) => "io",
    }
}

fn load(path: &Path) -> Result<(Loaded, InputDigest)> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let digest = InputDigest { path: path.display().to_string(), sha256: format!("{:x}", Sha256::digest(&bytes)) };
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let loaded = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        Loaded::Graph(OperatorGraph::from_csv(&text, label)?)
    } else {
        let f: ConvexFn = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Loaded::Function(f)
    };
    Ok((loaded, digest))
}

fn parse_point(text: &str) -> Result<Vec<f64>> {
    text.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("point `{text}`: {e}")))).collect()
}

fn parse_region(text: &str, dim: usize) -> Result<Region> {
    let pairs: Vec<&str> = text.split(',').collect();
    if pairs.len() == 1 && dim > 1 {
        return Region::parse(&vec![text; dim].join(","), dim);
    }
    Region::parse(text, dim)
}

impl Job {
    fn new(opts: Options) -> Result<Self> {
        let mut inputs = Vec::new();
        let mut digests = Vec::new();
        for p in &opts.input {
            let (l, d) = load(p)?;
            inputs.push((p.clone(), l));
            digests.push(d);
        }
        if let Some(m) = &opts.map {
            let bytes = fs::read(m).map_err(|e| Error::Io(format!("{}: {e}", m.display())))?;
            digests
                .push(InputDigest { path: m.display().to_string(), sha256: format!("{:x}", Sha256::digest(&bytes)) });
        }
        let points = opts.point.iter().map(|s| parse_point(s)).collect::<Result<Vec<_>>>()?;
        let tolerances = Tolerances::default();
        let params = Params {
            tol: opts.tol.unwrap_or(tolerances.verdict),
            beta: opts.beta,
            gamma: opts.gamma,
            alpha: opts.alpha,
            region: None,
            resolution: opts.resolution,
            seed: opts.seed,
            points,
            tolerances,
        };
        Ok(Job { opts, inputs, digests, params })
    }

    fn function(&self, idx: usize) -> Result<ConvexFn> {
        match self.inputs.get(idx) {
            Some((_, Loaded::Function(f))) => Ok(f.clone()),
            Some((_, Loaded::Graph(g))) => fitzpatrick_fn(g),
            None => Err(Error::InvalidParameter(format!("missing --input number {}", idx + 1))),
        }
    }

    fn graph(&self, idx: usize) -> Result<OperatorGraph> {
        match self.inputs.get(idx) {
            Some((_, Loaded::Graph(g))) => Ok(g.clone()),
            Some((p, Loaded::Function(_))) => {
                Err(Error::InvalidParameter(format!("{} is not a graph CSV", p.display())))
            }
            None => Err(Error::InvalidParameter(format!("missing --input number {}", idx + 1))),
        }
    }

    /// Resolves the box for `Z = R^n x R^n` and records it.
    fn region(&mut self, n: usize, lo: f64, hi: f64) -> Result<Region> {
        let r = match &self.opts.region {
            Some(t) => parse_region(t, 2 * n)?,
            None => Region::cube(2 * n, lo, hi)?,
        };
        self.params.region = Some(r.bounds.clone());
        Ok(r)
    }

    fn resolution(&mut self, default: usize) -> usize {
        let r = self.opts.resolution.unwrap_or(default);
        self.params.resolution = Some(r);
        r
    }

    /// Given points, or seeded samples of the region.
    fn points(&mut self, n: usize, region: &Region) -> Result<Vec<PairedPoint>> {
        if self.params.points.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
            self.params.points = (0..self.opts.samples).map(|_| region.sample(&mut rng)).collect();
        }
        self.params
            .points
            .iter()
            .map(|v| {
                if v.len() != 2 * n {
                    return Err(Error::DimensionMismatch { expected: 2 * n, found: v.len() });
                }
                PairedPoint::from_concat(v)
            })
            .collect()
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Parse(e.to_string()))
}

fn run_fitz(job: &mut Job) -> Result<Outcome> {
    let g = job.graph(0)?;
    let (monotone, witness) = is_monotone(&g, job.params.tol);
    let phi = fitzpatrick_fn(&g)?;
    Ok(Outcome {
        result: json!({
            "points": g.len(),
            "dim": g.dim(),
            "monotone": monotone,
            "witness": to_value(&witness)?,
            "fitzpatrick": to_value(&phi)?,
        }),
        counterexample: false,
    })
}

fn run_check(job: &mut Job) -> Result<Outcome> {
    let f = job.function(0)?;
    let region = job.region(f.dim(), -1.0, 1.0)?;
    let resolution = job.resolution(11);
    let mut budget = Budget::for_dim(f.dim()).with_region(region).with_resolution(resolution);
    budget.seed = job.opts.seed;
    budget.tol.verdict = job.params.tol;
    job.params.tolerances = budget.tol;
    let report = check_strong(&f, &budget)?;
    let summary = if report.strong { "strong: pass" } else { "strong: fail" };
    Ok(Outcome { result: json!({ "summary": summary, "report": to_value(&report)? }), counterexample: !report.strong })
}

fn run_refine(job: &mut Job) -> Result<Outcome> {
    let f = job.function(0)?;
    let region = job.region(f.dim(), -1.0, 1.0)?;
    let points = job.points(f.dim(), &region)?;
    let mut out = Vec::new();
    match job.opts.alpha {
        Some(alpha) => {
            let gamma = job.opts.gamma.unwrap_or(4.5);
            job.params.gamma = Some(gamma);
            for z in &points {
                out.push(to_value(&scaled_refine(&f, z, alpha, gamma, DEFAULT_TERM_TOL)?)?);
            }
        }
        None => {
            let beta = job.opts.beta.unwrap_or(DEFAULT_BETA);
            let gamma = job.opts.gamma.unwrap_or(DEFAULT_GAMMA);
            job.params.beta = Some(beta);
            job.params.gamma = Some(gamma);
            for z in &points {
                out.push(to_value(&refine_from_gap(&f, z, beta, gamma, DEFAULT_TERM_TOL)?)?);
            }
        }
    }
    Ok(Outcome { result: json!({ "traces": out, "term_tol": DEFAULT_TERM_TOL }), counterexample: false })
}

fn run_distance(job: &mut Job) -> Result<Outcome> {
    let f = job.function(0)?;
    let region = job.region(f.dim(), -1.0, 1.0)?;
    let resolution = job.resolution(21);
    let points = job.points(f.dim(), &region)?;
    let es = equality_set(&f, &region, resolution, job.params.tolerances.membership)?;
    let mut certs = Vec::new();
    let mut all = true;
    for z in &points {
        let cert = distance_certificate(&f, z, Some(&es), job.params.tol)?;
        all &= cert.consistent;
        let split = match minus_j_split(&f, z, job.params.tol) {
            Ok(s) => to_value(&s)?,
            Err(e) => json!({ "error": { "kind": error_kind(&e), "message": e.to_string() } }),
        };
        certs.push(json!({ "certificate": to_value(&cert)?, "split": split }));
    }
    Ok(Outcome {
        result: json!({ "equality_set_size": es.len(), "certificates": certs, "all_consistent": all }),
        counterexample: !all,
    })
}

fn run_sum(job: &mut Job) -> Result<Outcome> {
    let f = job.function(0)?;
    let g = job.function(1)?;
    let a = match &job.opts.map {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<LinearMap>(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?
        }
        None => {
            if f.dim() != g.dim() {
                return Err(Error::DimensionMismatch { expected: f.dim(), found: g.dim() });
            }
            LinearMap::identity(f.dim())
        }
    };
    let cq = cq_check(&ProductFn::new(crate::calculus::compose_fn(&f.direct_sum(&g)?, &a)?, f.dim(), g.dim())?)?;
    let k = sum_representative(&f, &g, &a)?;
    let region = job.region(f.dim(), -2.0, 2.0)?;
    let resolution = job.resolution(21);
    let mk = equality_set(&k, &region, resolution, job.params.tolerances.membership)?;
    let engine = ConjugateEngine::default();
    let mut square = Vec::new();
    for z in mk.points.iter().step_by((mk.len() / 8).max(1)) {
        let mf = sum_square_min(&f, &g, &a, z, &engine)?;
        square.push(json!({ "z": z, "k": k.eval(z)?, "k_square": mf }));
    }
    Ok(Outcome {
        result: json!({
            "cq": to_value(&cq)?,
            "map": to_value(&a)?,
            "representative": to_value(&k)?,
            "equality_set": mk,
            "square_checks": square,
        }),
        counterexample: false,
    })
}

fn run_conjugate(job: &mut Job) -> Result<Outcome> {
    let f = job.function(0)?;
    let region = job.region(f.dim(), -1.0, 1.0)?;
    let points = job.points(f.dim(), &region)?;
    let engine = ConjugateEngine::default();
    let mut values = Vec::new();
    for z in &points {
        let d = DualPoint::from_concat(&z.to_concat())?;
        let cv = engine.conjugate_concat(&f, &d.to_dvector())?;
        values.push(json!({
            "at": z.to_concat(),
            "conjugate": cv.value,
            "argmax": cv.argmax.map(|v| v.iter().copied().collect::<Vec<f64>>()),
            "square_conjugate": engine.square_conjugate_at(&f, z)?,
        }));
    }
    let bic = engine.biconjugate_check(&f, &points, job.params.tol.max(1e-6))?;
    Ok(Outcome { result: json!({ "values": values, "biconjugate": bic }), counterexample: !bic.passed })
}

fn run_ana(job: &mut Job) -> Result<Outcome> {
    let f = job.function(0)?;
    let region = job.region(f.dim(), -1.0, 1.0)?;
    let points = job.points(f.dim(), &region)?;
    let eps: Vec<f64> = (0..=12).map(|k| 0.25f64.powi(k)).collect();
    let mut seqs = Vec::new();
    for z in &points {
        match ana_sequence(&f, z, &eps, DEFAULT_TERM_TOL) {
            Ok(s) => seqs.push(json!({ "z": z, "sequence": s })),
            Err(Error::Precondition(msg)) => seqs.push(json!({ "z": z, "skipped": msg })),
            Err(e) => return Err(e),
        }
    }
    Ok(Outcome { result: json!({ "eps": eps, "sequences": seqs }), counterexample: false })
}

fn run_classes(job: &mut Job) -> Result<Outcome> {
    let g = job.graph(0)?;
    let n = g.dim();
    let region = job.region(n, -1.0, 1.0)?;
    let resolution = job.resolution(11);
    let tol = job.params.tol;
    let grid: Vec<PairedPoint> =
        region.grid(resolution).iter().map(|v| PairedPoint::from_concat(v)).collect::<Result<_>>()?;
    let duals: Vec<DualPoint> = grid.iter().map(|z| DualPoint::from_concat(&z.to_concat())).collect::<Result<_>>()?;
    let (monotone, witness) = is_monotone(&g, tol);
    let ni = check_ni(&g, &duals, tol)?;
    let boxes = box_family(&region, n)?;
    let lmax = check_locally_max(&g, &boxes, &grid, tol)?;
    let ext = maximality_extension_test(g.points(), &grid, job.params.tolerances.membership)?;
    let phi = fitzpatrick_fn(&g)?;
    let mut budget = Budget::for_dim(n).with_region(region).with_resolution(resolution);
    budget.seed = job.opts.seed;
    let phi_rep = check_representative(&phi, &budget)?;
    // phi_M of a finite sample dips below c between samples; reported, not a verdict
    let negative = !monotone || !ni.passed || !lmax.passed || !ext.maximal_on_grid();
    Ok(Outcome {
        result: json!({
            "monotone": monotone,
            "monotonicity_witness": to_value(&witness)?,
            "ni": to_value(&ni)?,
            "locally_max": to_value(&lmax)?,
            "box_family": boxes.iter().map(|b| b.bounds.clone()).collect::<Vec<_>>(),
            "extension": to_value(&ext)?,
            "fitzpatrick_geq_c": to_value(&phi_rep)?,
        }),
        counterexample: negative,
    })
}

/// Runs one job and returns the report text and exit code.
pub fn execute(cli: Cli) -> (String, i32) {
    let start = Instant::now();
    let name = cli.command.name();
    let mut job = match Job::new(cli.opts) {
        Ok(j) => j,
        Err(e) => return (error_report(name, &e), EXIT_ERROR),
    };
    let run = match cli.command {
        Command::Fitz => run_fitz(&mut job),
        Command::Check => run_check(&mut job),
        Command::Refine => run_refine(&mut job),
        Command::Distance => run_distance(&mut job),
        Command::Sum => run_sum(&mut job),
        Command::Conjugate => run_conjugate(&mut job),
        Command::Ana => run_ana(&mut job),
        Command::Classes => run_classes(&mut job),
    };
    let outcome = match run {
        Ok(o) => o,
        Err(e) => return (error_report(name, &e), EXIT_ERROR),
    };
    let exit_code = if outcome.counterexample { EXIT_COUNTEREXAMPLE } else { EXIT_PASS };
    let report = Report {
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        inputs: job.digests,
        params: job.params,
        outcome: if outcome.counterexample { "counterexample" } else { "pass" },
        exit_code,
        result: outcome.result,
        scope: OUT_OF_SCOPE,
        timing: Timing { elapsed_ms: start.elapsed().as_secs_f64() * 1e3 },
    };
    match serde_json::to_string_pretty(&report) {
        Ok(s) => (s, exit_code),
        Err(e) => (error_report(name, &Error::Parse(e.to_string())), EXIT_ERROR),
    }
}

fn error_report(command: &str, e: &Error) -> String {
    let v = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "outcome": "error",
        "exit_code": EXIT_ERROR,
        "error": { "kind": error_kind(e), "message": e.to_string() },
    });
    serde_json::to_string_pretty(&v).unwrap_or_else(|_| e.to_string())
}

/// Parses arguments, runs the job, writes the report; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let output = cli.opts.output.clone();
    let (text, code) = execute(cli);
    if code == EXIT_ERROR {
        eprintln!("{text}");
    }
    match output {
        Some(p) => {
            if let Err(e) = fs::write(&p, format!("{text}\n")) {
                eprintln!("cannot write {}: {e}", p.display());
                return EXIT_ERROR;
            }
        }
        None if code != EXIT_ERROR => println!("{text}"),
        None => {}
    }
    code
}
