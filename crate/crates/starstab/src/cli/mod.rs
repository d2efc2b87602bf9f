//! The `starstab` command line.
//!
//! Every subcommand computes all of its results before touching the file
//! system, then writes each artifact through a temporary file and a rename.
//! If any write fails, the artifacts already written are removed.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical
//! failure or a disagreement between independent stability counts.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::eos::EquationOfState;
use crate::equilibrium::{integrate_profile_with, SolverOptions, StellarModel};
use crate::hamiltonian::{growth_degree, random_corpus, trichotomy, SeparableTriple};
use crate::mrcurve::{local_derivatives, tpp_walk, trace_curve};
use crate::spectral::{Closure, OperatorKind, RadialOperator, SpectralOptions};
use config::{EosConfig, OperatorChoice, RunConfig};

/// Version of every JSON document written by the CLI.
pub const SCHEMA_VERSION: &str = "1.0.0";

/// JSON Schema for the reports.
pub const REPORT_SCHEMA: &str = include_str!("../../schema/report.schema.json");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("I/O error: {0}")]
    Io(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "starstab", version, about = "Gaseous star equilibria and their linear stability")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// INI-style run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Main artifact (CSV or JSON depending on the command); stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON report.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Seed recorded in reports and used by randomized commands.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One equilibrium profile.
    #[command(allow_negative_numbers = true)]
    Equilibrium {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Mass–radius curve with extrema and the turning-point count.
    #[command(allow_negative_numbers = true)]
    Curve {
        #[command(flatten)]
        common: Common,
        #[arg(long = "mu-lo")]
        mu_lo: Option<f64>,
        #[arg(long = "mu-hi")]
        mu_hi: Option<f64>,
        /// Number of center densities.
        #[arg(short = 'N')]
        samples: Option<usize>,
    },
    /// Turning-point and spectral unstable-mode counts at one center density.
    #[command(allow_negative_numbers = true)]
    Stability {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Low eigenvalues of a radial operator.
    #[command(allow_negative_numbers = true)]
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mu: Option<f64>,
        /// Angular degree of the Schrödinger operator.
        #[arg(short = 'l')]
        l: Option<u32>,
        /// Number of eigenvalues.
        #[arg(short = 'k')]
        k: Option<usize>,
        /// Write the stiffness matrix entries as CSV.
        #[arg(long = "dump-operator")]
        dump_operator: Option<PathBuf>,
    },
    /// Finite-dimensional Hamiltonian toolkit.
    Toy {
        #[command(flatten)]
        common: Common,
        /// The 5×5 nilpotent example.
        #[arg(long = "paper-example")]
        example: bool,
        /// The seeded random-triple suite.
        #[arg(long)]
        random: bool,
        /// Number of random triples.
        #[arg(short = 'n')]
        count: Option<usize>,
    },
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("starstab: {e}");
            e.exit_code()
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        None => config::parse("", Path::new("."))
            .map_err(|e| CliError::Config(e.to_string()))?,
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
            let base = path.parent().unwrap_or(Path::new("."));
            config::parse(&text, base).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
    };
    if let Some(seed) = common.seed {
        cfg.numerics.seed = seed;
    }
    Ok(cfg)
}

fn build_eos(cfg: &EosConfig) -> Result<EquationOfState, CliError> {
    let bad = |e: crate::eos::EosError| CliError::Config(e.to_string());
    match cfg {
        EosConfig::Polytrope { k, gamma } => EquationOfState::polytrope(*k, *gamma).map_err(bad),
        EosConfig::WhiteDwarf { a, b } => EquationOfState::white_dwarf(*a, *b).map_err(bad),
        EosConfig::Composite { c_minus, gamma0, gamma_inf, rho_blend } => {
            EquationOfState::composite(*c_minus, *gamma0, *gamma_inf, *rho_blend).map_err(bad)
        }
        EosConfig::Tabulated { table_path } => {
            let text = std::fs::read_to_string(table_path)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", table_path.display())))?;
            EquationOfState::tabulated_from_csv_text(&text).map_err(bad)
        }
    }
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn solver(cfg: &RunConfig) -> SolverOptions {
    SolverOptions { tol: cfg.numerics.tol, n_grid: cfg.numerics.n_grid, ..SolverOptions::default() }
}

fn model_at(eos: &EquationOfState, cfg: &RunConfig, mu: f64) -> Result<StellarModel, CliError> {
    integrate_profile_with(eos, mu, &solver(cfg)).map_err(numerical)
}

fn header(command: &str, cfg: &RunConfig) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    m.insert("command".into(), json!(command));
    m.insert("eos".into(), serde_json::to_value(&cfg.eos).expect("config serializes"));
    m.insert("numerics".into(), serde_json::to_value(&cfg.numerics).expect("config serializes"));
    m
}

fn merge(mut head: serde_json::Map<String, Value>, body: impl Serialize) -> Value {
    if let Value::Object(extra) = serde_json::to_value(body).expect("report serializes") {
        head.extend(extra);
    }
    Value::Object(head)
}

fn to_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn csv_row(values: &[f64]) -> String {
    let cells: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
    cells.join(",")
}

/// Artifacts held in memory until the command has finished computing.
#[derive(Default)]
struct Outputs {
    files: Vec<(PathBuf, String)>,
    stdout: Vec<String>,
}

impl Outputs {
    fn emit(&mut self, path: Option<&PathBuf>, content: String) {
        match path {
            Some(p) => self.files.push((p.clone(), content)),
            None => self.stdout.push(content),
        }
    }

    fn commit(self) -> Result<(), CliError> {
        let mut written: Vec<PathBuf> = vec![];
        for (path, content) in &self.files {
            if let Err(e) = write_atomic(path, content) {
                for p in &written {
                    let _ = std::fs::remove_file(p);
                }
                return Err(e);
            }
            written.push(path.clone());
        }
        for s in self.stdout {
            print!("{s}");
        }
        Ok(())
    }
}

fn write_atomic(path: &Path, content: &str) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let io = |e: std::io::Error| CliError::Io(format!("cannot write {}: {e}", path.display()));
    if let Err(e) = std::fs::write(&tmp, content) {
        let _ = std::fs::remove_file(&tmp);
        return Err(io(e));
    }
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io(e)
    })
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let out = match cli.command {
        Command::Equilibrium { common, mu } => {
            let mut cfg = load_config(&common)?;
            if let Some(mu) = mu {
                cfg.mu = mu;
            }
            equilibrium(&cfg, &common)?
        }
        Command::Curve { common, mu_lo, mu_hi, samples } => {
            let mut cfg = load_config(&common)?;
            cfg.curve.mu_lo = mu_lo.unwrap_or(cfg.curve.mu_lo);
            cfg.curve.mu_hi = mu_hi.unwrap_or(cfg.curve.mu_hi);
            cfg.numerics.n_mu = samples.unwrap_or(cfg.numerics.n_mu);
            curve(&cfg, &common)?
        }
        Command::Stability { common, mu } => {
            let mut cfg = load_config(&common)?;
            cfg.mu = mu.unwrap_or(cfg.mu);
            stability(&cfg, &common)?
        }
        Command::Spectrum { common, mu, l, k, dump_operator } => {
            let mut cfg = load_config(&common)?;
            cfg.mu = mu.unwrap_or(cfg.mu);
            cfg.spectrum.l = l.unwrap_or(cfg.spectrum.l);
            cfg.spectrum.k = k.unwrap_or(cfg.spectrum.k);
            spectrum(&cfg, &common, dump_operator.as_ref())?
        }
        Command::Toy { common, example, random, count } => {
            let mut cfg = load_config(&common)?;
            cfg.toy.count = count.unwrap_or(cfg.toy.count);
            match (example, random) {
                (true, false) => toy_example(&cfg, &common)?,
                (false, true) => toy_random(&cfg, &common)?,
                _ => return Err(CliError::Config("toy needs exactly one of --paper-example or --random".into())),
            }
        }
    };
    out.commit()
}

fn equilibrium(cfg: &RunConfig, common: &Common) -> Result<Outputs, CliError> {
    let mu = positive("mu", cfg.mu)?;
    let eos = build_eos(&cfg.eos)?;
    let m = model_at(&eos, cfg, mu)?;
    let mut head = header("equilibrium", cfg);
    head.insert("mu".into(), json!(m.mu));
    head.insert("radius".into(), json!(m.radius));
    head.insert("mass".into(), json!(m.mass));
    head.insert("surface_potential".into(), json!(m.surface_potential()));
    head.insert("central_enthalpy".into(), json!(m.alpha));
    let report = Value::Object(head);

    let mut csv = format!("# {}\nr,y,rho,yprime\n", serde_json::to_string(&report).expect("report serializes"));
    for i in 0..m.r.len() {
        csv += &csv_row(&[m.r[i], m.y[i], m.rho[i], m.yprime[i]]);
        csv.push('\n');
    }
    let mut out = Outputs::default();
    out.emit(common.out.as_ref(), csv);
    if let Some(p) = &common.json {
        out.emit(Some(p), to_json(&report));
    }
    Ok(out)
}

fn curve(cfg: &RunConfig, common: &Common) -> Result<Outputs, CliError> {
    let (lo, hi) = (positive("mu_lo", cfg.curve.mu_lo)?, positive("mu_hi", cfg.curve.mu_hi)?);
    if lo >= hi {
        return Err(CliError::Config(format!("mu_lo = {lo} must be below mu_hi = {hi}")));
    }
    if cfg.numerics.n_mu < 8 {
        return Err(CliError::Config(format!("need at least 8 samples, got {}", cfg.numerics.n_mu)));
    }
    let eos = build_eos(&cfg.eos)?;
    let c = trace_curve(&eos, lo, hi, cfg.numerics.n_mu, cfg.numerics.tol).map_err(numerical)?;
    let walk = tpp_walk(&c, c.gamma0).map_err(numerical)?;

    let mut csv = String::from("mu,M,R,dM,dMR,i_mu,n_u\n");
    for (i, v) in walk.verdicts.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{}",
            csv_row(&[c.mus[i], c.masses[i], c.radii[i], c.dm[i], c.dmr[i]]),
            v.i_mu,
            v.n_u_tpp
        );
    }
    let mut out = Outputs::default();
    out.emit(common.out.as_ref(), csv);
    if let Some(p) = &common.json {
        let mut head = header("curve", cfg);
        head.insert("mu_lo".into(), json!(lo));
        head.insert("mu_hi".into(), json!(hi));
        head.insert("samples".into(), json!(c.len()));
        head.insert("truncated_at".into(), json!(c.truncated_at));
        head.insert("mass_extrema".into(), json!(c.mass_extrema));
        head.insert("mr_criticals".into(), json!(c.mr_criticals));
        out.emit(Some(p), to_json(&merge(head, &walk)));
    }
    Ok(out)
}

#[derive(Serialize)]
struct StabilityReport {
    mu: f64,
    mass: f64,
    radius: f64,
    dm: f64,
    dmr: f64,
    i_mu: u8,
    n_minus_d0: usize,
    d0_kernel_tol: f64,
    n_u_tpp: usize,
    n_u_formula: i64,
    n_u_eddington: usize,
    omega2_min: f64,
    classification: crate::mrcurve::Classification,
    walk_from: f64,
    walk_samples: usize,
    cross_check: bool,
}

fn stability(cfg: &RunConfig, common: &Common) -> Result<Outputs, CliError> {
    let mu = positive("mu", cfg.mu)?;
    let eos = build_eos(&cfg.eos)?;
    let m = model_at(&eos, cfg, mu)?;
    let opts = SpectralOptions { n: cfg.numerics.n_radial, outer_factor: cfg.numerics.r_out_factor, closure: Closure::Exterior };
    let d0 = RadialOperator::schrodinger(&m, 0, &opts).map_err(numerical)?;
    let n_minus = d0.negative_index();
    let edd = RadialOperator::eddington(&m, cfg.numerics.n_radial).map_err(numerical)?;
    let n_edd = edd.negative_index();
    let omega2_min = edd.eigenvalue(0).map_err(numerical)?;

    // walk from the small-density regime up to μ, which is the last sample
    let walk_from = cfg.curve.mu_lo.min(mu / 100.0);
    let samples = cfg.numerics.n_mu.max(8);
    let c = trace_curve(&eos, walk_from, mu, samples, cfg.numerics.tol).map_err(numerical)?;
    if c.truncated_at.is_some() {
        return Err(CliError::Numerical(format!("no compact support below mu = {mu}")));
    }
    let walk = tpp_walk(&c, c.gamma0).map_err(numerical)?;
    let last = walk.verdicts.last().expect("curve is not empty").clone();
    let local = local_derivatives(&eos, mu, cfg.numerics.tol).map_err(numerical)?;
    let i_mu = local.i_mu().map_err(numerical)?;
    let formula = n_minus as i64 - i64::from(i_mu);

    if cfg.stability.cross_check && (formula != last.n_u_tpp as i64 || n_edd as i64 != formula) {
        return Err(CliError::Numerical(format!(
            "unstable-mode counts disagree at mu = {mu}: turning point {}, n-(D0) - i_mu = {n_minus} - {i_mu} = {formula}, Eddington {n_edd}",
            last.n_u_tpp
        )));
    }
    let report = StabilityReport {
        mu,
        mass: m.mass,
        radius: m.radius,
        dm: local.dm,
        dmr: local.dmr,
        i_mu,
        n_minus_d0: n_minus,
        d0_kernel_tol: d0.default_kernel_tol(),
        n_u_tpp: last.n_u_tpp,
        n_u_formula: formula,
        n_u_eddington: n_edd,
        omega2_min,
        classification: last.classification,
        walk_from,
        walk_samples: c.len(),
        cross_check: cfg.stability.cross_check,
    };
    let text = to_json(&merge(header("stability", cfg), &report));
    let mut out = Outputs::default();
    out.emit(common.out.as_ref(), text.clone());
    if let Some(p) = &common.json {
        out.emit(Some(p), text);
    }
    Ok(out)
}

fn spectrum(cfg: &RunConfig, common: &Common, dump: Option<&PathBuf>) -> Result<Outputs, CliError> {
    let mu = positive("mu", cfg.mu)?;
    if cfg.spectrum.k == 0 {
        return Err(CliError::Config("k must be at least 1".into()));
    }
    if cfg.numerics.n_radial < crate::spectral::MIN_CELLS {
        return Err(CliError::Config(format!(
            "n_radial = {} is below the minimum of {}",
            cfg.numerics.n_radial,
            crate::spectral::MIN_CELLS
        )));
    }
    let eos = build_eos(&cfg.eos)?;
    let m = model_at(&eos, cfg, mu)?;
    let n = cfg.numerics.n_radial;
    let op = match cfg.spectrum.operator {
        OperatorChoice::Schrodinger => {
            let opts = SpectralOptions { n, outer_factor: cfg.numerics.r_out_factor, closure: Closure::Exterior };
            RadialOperator::schrodinger(&m, cfg.spectrum.l, &opts)
        }
        OperatorChoice::Eddington => RadialOperator::eddington(&m, n),
        OperatorChoice::RadialHessian => RadialOperator::radial_hessian(&m, n),
    }
    .map_err(numerical)?;
    let k = cfg.spectrum.k.min(op.dim());
    let slice = op.spectrum(k).map_err(numerical)?;

    let mut head = header("spectrum", cfg);
    head.insert("mu".into(), json!(mu));
    head.insert("operator".into(), json!(op.kind.label()));
    head.insert("l".into(), json!(match op.kind {
        OperatorKind::D0 => Some(0),
        OperatorKind::Dl(l) => Some(l),
        _ => None,
    }));
    head.insert("radius".into(), json!(m.radius));
    head.insert(
        "grid".into(),
        json!({
            "cells": n,
            "unknowns": op.dim(),
            "outer_radius": op.nodes.last().copied().unwrap_or(0.0),
            "central_spacing": op.h,
        }),
    );
    head.insert("eigenvalues".into(), json!(slice.eigenvalues));
    head.insert("neg_count".into(), json!(slice.neg_count));
    head.insert("kernel_dim".into(), json!(slice.kernel_dim));
    head.insert("kernel_tol".into(), json!(slice.kernel_tol));
    let text = to_json(&Value::Object(head));

    let mut out = Outputs::default();
    out.emit(common.out.as_ref(), text.clone());
    if let Some(p) = &common.json {
        out.emit(Some(p), text);
    }
    if let Some(p) = dump {
        let k = op.matrix(0.0);
        let mut csv = String::from("row,col,r_row,r_col,stiffness,weight\n");
        for i in 0..k.nrows() {
            for j in i..k.ncols() {
                let v = k[(i, j)];
                if v != 0.0 || i == j {
                    let w = if i == j { op.weight[i] } else { 0.0 };
                    let _ = writeln!(csv, "{i},{j},{}", csv_row(&[op.nodes[i], op.nodes[j], v, w]));
                }
            }
        }
        out.emit(Some(p), csv);
    }
    Ok(out)
}

fn toy_example(cfg: &RunConfig, common: &Common) -> Result<Outputs, CliError> {
    let t = SeparableTriple::cubic_example();
    let powers = t.jl_powers(4);
    let tri = trichotomy(&t, 1e-8).map_err(numerical)?;
    let fit = growth_degree(&t, &tri, cfg.toy.horizon, 40).map_err(numerical)?;

    let mut text = String::new();
    for (k, p) in powers.iter().enumerate() {
        let _ = writeln!(text, "(JL)^{}:", k + 1);
        for i in 0..p.nrows() {
            let row: Vec<String> = (0..p.ncols()).map(|j| format!("{:>3}", p[(i, j)] + 0.0)).collect();
            let _ = writeln!(text, "  {}", row.join(" "));
        }
    }
    let _ = writeln!(text, "kernel chain: {:?}", tri.kernel_chain);
    let _ = writeln!(text, "growth degree: {} (log-log slope {:.4})", fit.degree, fit.slope);

    let mut out = Outputs::default();
    out.emit(common.out.as_ref(), text);
    if let Some(p) = &common.json {
        let mut head = header("toy", cfg);
        head.insert("mode".into(), json!("example"));
        let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
        };
        head.insert("powers".into(), json!(powers.iter().map(rows).collect::<Vec<_>>()));
        head.insert("nilpotent".into(), json!(powers[3].iter().all(|&v| v == 0.0)));
        head.insert("kernel_chain".into(), json!(tri.kernel_chain));
        head.insert("d_u".into(), json!(tri.d_u));
        head.insert("growth_degree".into(), json!(fit.degree));
        head.insert("growth_slope".into(), json!(fit.slope));
        head.insert("growth_residual".into(), json!(fit.residual));
        out.emit(Some(p), to_json(&Value::Object(head)));
    }
    Ok(out)
}

fn toy_random(cfg: &RunConfig, common: &Common) -> Result<Outputs, CliError> {
    if cfg.toy.count == 0 {
        return Err(CliError::Config("count must be at least 1".into()));
    }
    let report = random_corpus(cfg.numerics.seed, cfg.toy.count);
    if !report.pass {
        return Err(CliError::Numerical(format!(
            "{} of {} random triples failed (index {}, semisimplicity {}, growth {})",
            report.failures, report.count, report.index_violations, report.semisimple_violations, report.growth_violations
        )));
    }
    let mut head = header("toy", cfg);
    head.insert("mode".into(), json!("random"));
    let text = to_json(&merge(head, &report));
    let mut out = Outputs::default();
    out.emit(common.out.as_ref(), text.clone());
    if let Some(p) = &common.json {
        out.emit(Some(p), text);
    }
    Ok(out)
}
