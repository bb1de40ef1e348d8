//! Command-line driver: long-format CSV ingest, model files, and the `fit`,
//! `select`, `diagnose` and `simulate` subcommands.
//!
//! Exit status is 0 on success, 2 when every artifact was written but some fit
//! stopped at the iteration cap, 64 on usage errors and 1 on any other error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::diagnostics::{curve_diagnostics, mean_confidence_band, outlier_cutoff, CurveDiagnostics};
use crate::error::{Error, Result};
use crate::model::{fit, Dataset, FitResult, FitSummary, ModelConfig, ModelParams, Nu, Trajectory};
use crate::selection::{select_dimension, Criterion, SelectionReport};
use crate::simulate::{estimator_label, monte_carlo, StudyConfig, StudySummary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "rfpca", version, about = "Robust functional principal components for sparse longitudinal data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write model.json, diagnostics.csv and functions.csv.
    Fit(FitArgs),
    /// Compare dimensions 0..=dmax and write selection.json.
    Select(SelectArgs),
    /// Evaluate a saved model on data and write band.csv, outliers.csv and diagnostics.csv.
    Diagnose(DiagnoseArgs),
    /// Run a Monte Carlo study and write its summary tables as CSV.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Degrees of freedom of the t model: a positive number or `inf` for the Normal model.
    #[arg(long, default_value = "1")]
    pub nu: Nu,
    /// Number of interior knots of the spline basis.
    #[arg(long, default_value_t = 5)]
    pub knots: usize,
    /// Spline order (4 = cubic).
    #[arg(long, default_value_t = 4)]
    pub order: usize,
    /// Roughness penalties: `a` for mean and all components, or `a,a1,a2,...`.
    #[arg(long, value_delimiter = ',')]
    pub penalty: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Basis domain `a,b`; defaults to the observed time range.
    #[arg(long, value_parser = parse_domain)]
    pub domain: Option<(f64, f64)>,
}

impl ModelArgs {
    fn config(&self, d: usize) -> ModelConfig {
        let (mean_penalty, component_penalties) = match self.penalty.as_slice() {
            [] => (0.0, Vec::new()),
            [a] => (*a, vec![*a; d.max(1)]),
            [a, rest @ ..] => (*a, rest.to_vec()),
        };
        ModelConfig {
            nu: self.nu,
            d,
            mean_penalty,
            component_penalties,
            max_iter: self.max_iter,
            tol: self.tol,
            seed: self.seed,
        }
    }

    fn domain(&self) -> Option<(f64, f64)> {
        self.domain
    }
}

fn parse_domain(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    let (a, b) = (parse(a)?, parse(b)?);
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(format!("domain needs finite a < b, got {a},{b}"));
    }
    Ok((a, b))
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Long-format CSV with header `id,time,value`.
    pub input: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of components.
    #[arg(long, conflicts_with = "dmax")]
    pub dim: Option<usize>,
    /// Choose the number of components in 0..=dmax with --criterion.
    #[arg(long)]
    pub dmax: Option<usize>,
    #[arg(long, default_value = "bic")]
    pub criterion: Criterion,
    /// Points in the evaluation grid for functions.csv.
    #[arg(long, default_value_t = 201)]
    pub grid: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 4, conflicts_with = "dim")]
    pub dmax: usize,
    /// Rejected: selection compares several dimensions.
    #[arg(long, hide = true)]
    pub dim: Option<usize>,
    #[arg(long, default_value = "bic")]
    pub criterion: Criterion,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    pub input: PathBuf,
    /// Model file written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 201)]
    pub grid: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Built-in study: 1 (estimation errors) or 2 (dimension selection).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2), required_unless_present = "config")]
    pub table: Option<u8>,
    /// Study configuration in JSON or TOML; replaces --table.
    #[arg(long, conflicts_with = "table")]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Contamination magnitude K.
    #[arg(long, default_value_t = 4.0)]
    pub k: f64,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Deserialize)]
struct LongRow {
    id: String,
    time: f64,
    value: f64,
}

/// Orders ids numerically when both parse as numbers, otherwise as strings.
fn id_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Reads long-format CSV into trajectories grouped by id and sorted by time.
pub fn read_long_csv(path: &Path) -> Result<Vec<Trajectory>> {
    let text = fs::read_to_string(path)?;
    parse_long_csv(&text)
}

pub fn parse_long_csv(text: &str) -> Result<Vec<Trajectory>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(Error::Parse { line: 1, msg: "empty file".into() }),
        Some(h) => h.map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?,
    };
    if header.iter().collect::<Vec<_>>() != ["id", "time", "value"] {
        return Err(Error::Parse { line: 1, msg: format!("expected header `id,time,value`, found `{}`", header.iter().collect::<Vec<_>>().join(",")) });
    }
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for rec in records {
        let rec = rec.map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line() as usize), msg: e.to_string() })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row: LongRow = rec.deserialize(None).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if !row.time.is_finite() || !row.value.is_finite() {
            return Err(Error::Parse { line, msg: "time and value must be finite".into() });
        }
        if row.id.is_empty() {
            return Err(Error::Parse { line, msg: "empty id".into() });
        }
        groups.entry(row.id).or_default().push((row.time, row.value));
    }
    if groups.is_empty() {
        return Err(Error::Parse { line: 2, msg: "no observations".into() });
    }
    let mut ids: Vec<String> = groups.keys().cloned().collect();
    ids.sort_by(|a, b| id_order(a, b));
    ids.into_iter()
        .map(|id| {
            let mut obs = groups.remove(&id).expect("key from map");
            obs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let (times, values) = obs.into_iter().unzip();
            Trajectory::new(id, times, values)
        })
        .collect()
}

/// Builds a dataset over `domain`, or the observed time range when absent.
pub fn build_dataset(curves: Vec<Trajectory>, order: usize, knots: usize, domain: Option<(f64, f64)>) -> Result<Dataset> {
    let domain = match domain {
        Some(d) => d,
        None => {
            let lo = curves.iter().flat_map(|c| c.times.iter().copied()).fold(f64::INFINITY, f64::min);
            let hi = curves.iter().flat_map(|c| c.times.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
    };
    let basis = SplineBasis::uniform(order, knots, domain)?;
    Dataset::new(basis, curves)
}

/// Reads a long-format CSV into a dataset.
pub fn ingest(path: &Path, order: usize, knots: usize, domain: Option<(f64, f64)>) -> Result<Dataset> {
    build_dataset(read_long_csv(path)?, order, knots, domain)
}

// ---------------------------------------------------------------- model file

/// Saved model. `H` has p rows of length d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub basis: SplineBasis,
    pub nu: Nu,
    pub d: usize,
    pub theta: Vec<f64>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub sigma2: f64,
    pub fit: FitSummary,
    pub version: u32,
}

impl ModelFile {
    pub fn from_params(params: &ModelParams, summary: FitSummary) -> Self {
        ModelFile {
            basis: (*params.basis).clone(),
            nu: params.nu,
            d: params.d(),
            theta: params.theta.iter().copied().collect(),
            h: params.h.row_iter().map(|r| r.iter().copied().collect()).collect(),
            lambda: params.lambda.iter().copied().collect(),
            sigma2: params.sigma2,
            fit: summary,
            version: MODEL_FILE_VERSION,
        }
    }

    pub fn from_fit(result: &FitResult) -> Self {
        let summary = FitSummary { loglik: result.loglik(), iterations: result.iterations, converged: result.converged };
        Self::from_params(&result.params, summary)
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        if self.version != MODEL_FILE_VERSION {
            return Err(Error::InvalidParams(format!("unsupported model file version {}", self.version)));
        }
        let p = self.basis.dim();
        if self.theta.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: self.theta.len() });
        }
        if self.h.len() != p || self.h.iter().any(|r| r.len() != self.d) {
            return Err(Error::InvalidParams(format!("H must be {p} rows of length {}", self.d)));
        }
        if self.lambda.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: self.lambda.len() });
        }
        let h = DMatrix::from_fn(p, self.d, |i, k| self.h[i][k]);
        let params = ModelParams::from_components(
            DVector::from_vec(self.theta.clone()),
            h,
            DVector::from_vec(self.lambda.clone()),
            self.sigma2,
            self.nu,
            Arc::new(self.basis.clone()),
        );
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

// ---------------------------------------------------------------- outputs

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// `id,residual_norm,s,weight,flag`.
pub fn write_diagnostics(path: &Path, diags: &[CurveDiagnostics]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["id", "residual_norm", "s", "weight", "flag"])?;
    for d in diags {
        w.write_record([d.id.clone(), d.residual_norm.to_string(), d.s.to_string(), d.weight.to_string(), d.outlier_flag.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Flagged curves, lowest weight first: `id,m,s,cutoff,weight,residual_norm`.
pub fn write_outliers(path: &Path, diags: &[CurveDiagnostics]) -> Result<()> {
    let mut flagged: Vec<&CurveDiagnostics> = diags.iter().filter(|d| d.outlier_flag).collect();
    flagged.sort_by(|a, b| a.weight.total_cmp(&b.weight));
    let mut w = csv_writer(path)?;
    w.write_record(["id", "m", "s", "cutoff", "weight", "residual_norm"])?;
    for d in flagged {
        let m = d.fitted_values.len();
        w.write_record([
            d.id.clone(),
            m.to_string(),
            d.s.to_string(),
            outlier_cutoff(m).to_string(),
            d.weight.to_string(),
            d.residual_norm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and components on the grid in long format: `t,function,value`.
pub fn write_functions(path: &Path, params: &ModelParams, grid: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "function", "value"])?;
    let mut series = vec![("mean".to_string(), params.mean_at(grid)?)];
    for k in 0..params.d() {
        series.push((format!("phi{}", k + 1), params.component_at(k, grid)?));
    }
    for (name, values) in &series {
        for (t, v) in grid.iter().zip(values) {
            w.write_record([t.to_string(), name.clone(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Table-1 layout: one row per (quantity, estimator), one column per scenario.
pub fn write_table1_wide(path: &Path, summary: &StudySummary) -> Result<()> {
    let mut scenarios: Vec<String> = Vec::new();
    let mut estimators: Vec<Nu> = Vec::new();
    for r in &summary.estimation {
        if !scenarios.contains(&r.scenario) {
            scenarios.push(r.scenario.clone());
        }
        if !estimators.contains(&r.estimator) {
            estimators.push(r.estimator);
        }
    }
    let mut w = csv_writer(path)?;
    let mut header = vec!["quantity".to_string(), "estimator".to_string()];
    header.extend(scenarios.iter().cloned());
    w.write_record(&header)?;
    for quantity in ["mu", "phi1"] {
        for &nu in &estimators {
            let mut row = vec![quantity.to_string(), estimator_label(nu)];
            for s in &scenarios {
                let cell = summary
                    .estimation
                    .iter()
                    .find(|r| &r.scenario == s && r.estimator == nu)
                    .and_then(|r| if quantity == "mu" { r.rmse_mu } else { r.rmse_phi1 });
                row.push(cell.map_or_else(String::new, |v| format!("{v:.3}")));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `scenario,estimator,quantity,rmse,se,n_ok,n_failed`.
pub fn write_table1_long(path: &Path, summary: &StudySummary) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["scenario", "estimator", "quantity", "rmse", "se", "n_ok", "n_failed"])?;
    for r in &summary.estimation {
        for (q, rmse, se) in [("mu", r.rmse_mu, r.se_mu), ("phi1", r.rmse_phi1, r.se_phi1)] {
            if let (Some(rmse), Some(se)) = (rmse, se) {
                w.write_record([
                    r.scenario.clone(),
                    estimator_label(r.estimator),
                    q.to_string(),
                    rmse.to_string(),
                    se.to_string(),
                    r.n_ok.to_string(),
                    r.n_failed.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Table-2 layout: `scenario,n,epsilon,estimator,criterion,d,percent,n_ok,n_failed`.
pub fn write_table2(path: &Path, summary: &StudySummary) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["scenario", "n", "epsilon", "estimator", "criterion", "d", "percent", "n_ok", "n_failed"])?;
    for r in &summary.selection {
        for (d, pct) in r.percent.iter().enumerate() {
            w.write_record([
                r.scenario.clone(),
                r.n.to_string(),
                r.epsilon.to_string(),
                estimator_label(r.estimator),
                r.criterion.to_string(),
                d.to_string(),
                format!("{pct:.1}"),
                r.n_ok.to_string(),
                r.n_failed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- commands

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn grid_points(basis: &SplineBasis, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidConfig("--grid needs at least 2 points".into()));
    }
    Ok(basis.grid(n))
}

pub fn cmd_fit(args: &FitArgs) -> Result<bool> {
    let data = ingest(&args.input, args.model.order, args.model.knots, args.model.domain())?;
    ensure_dir(&args.out)?;
    let grid = grid_points(data.basis(), args.grid)?;
    let d = match args.dmax {
        Some(dmax) => {
            let report = select_dimension(&data, dmax, args.criterion, &args.model.config(dmax))?;
            write_json(&args.out.join("selection.json"), &report)?;
            report.chosen_d
        }
        None => args.dim.unwrap_or(0),
    };
    let result = fit(&data, &args.model.config(d))?;
    ModelFile::from_fit(&result).save(&args.out.join("model.json"))?;
    write_diagnostics(&args.out.join("diagnostics.csv"), &curve_diagnostics(&result.params, &data)?)?;
    write_functions(&args.out.join("functions.csv"), &result.params, &grid)?;
    Ok(result.converged)
}

pub fn cmd_select(args: &SelectArgs) -> Result<bool> {
    let data = ingest(&args.input, args.model.order, args.model.knots, args.model.domain())?;
    ensure_dir(&args.out)?;
    let path = args.out.join("selection.json");
    match select_dimension(&data, args.dmax, args.criterion, &args.model.config(args.dmax)) {
        Ok(report) => {
            write_json(&path, &report)?;
            Ok(report_converged(&report))
        }
        Err(Error::Selection { d, source, partial }) => {
            write_json(&path, &partial)?;
            Err(Error::Selection { d, source, partial })
        }
        Err(e) => Err(e),
    }
}

fn report_converged(report: &SelectionReport) -> bool {
    report.per_d.iter().all(|r| r.converged) && report.cv_nonconverged.is_empty()
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<bool> {
    let file = ModelFile::load(&args.model)?;
    let params = file.to_params()?;
    let curves = read_long_csv(&args.input)?;
    let data = Dataset::new(Arc::clone(&params.basis), curves)?;
    ensure_dir(&args.out)?;
    let diags = curve_diagnostics(&params, &data)?;
    write_diagnostics(&args.out.join("diagnostics.csv"), &diags)?;
    write_outliers(&args.out.join("outliers.csv"), &diags)?;
    let grid = grid_points(&params.basis, args.grid)?;
    let band = mean_confidence_band(&params, &data, &grid, args.level)?;
    let mut w = csv_writer(&args.out.join("band.csv"))?;
    w.write_record(["t", "center", "lower", "upper"])?;
    for ((t, c), (lo, hi)) in grid.iter().zip(&band.band_center).zip(band.lower().iter().zip(band.upper())) {
        w.write_record([t.to_string(), c.to_string(), lo.to_string(), hi.to_string()])?;
    }
    w.flush()?;
    Ok(file.fit.converged)
}

/// Reads a study configuration; `.toml` files are parsed as TOML, anything else as JSON.
pub fn read_study_config(path: &Path) -> Result<StudyConfig> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    } else {
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<bool> {
    let mut study = match (&args.config, args.table) {
        (Some(path), _) => read_study_config(path)?,
        (None, Some(1)) => StudyConfig::table1(args.reps, args.seed, args.k),
        (None, Some(2)) => StudyConfig::table2(args.reps, args.seed, args.k),
        _ => return Err(Error::InvalidConfig("pass --table 1, --table 2 or --config".into())),
    };
    if let Some(m) = args.max_iter {
        study.max_iter = m;
    }
    if let Some(t) = args.tol {
        study.tol = t;
    }
    let summary = monte_carlo(&study)?;
    ensure_dir(&args.out)?;
    if !summary.estimation.is_empty() {
        write_table1_wide(&args.out.join("table1.csv"), &summary)?;
        write_table1_long(&args.out.join("table1_long.csv"), &summary)?;
    }
    if !summary.selection.is_empty() {
        write_table2(&args.out.join("table2.csv"), &summary)?;
    }
    let failed = summary.estimation.iter().map(|r| r.n_failed).sum::<usize>()
        + summary.selection.iter().map(|r| r.n_failed).sum::<usize>();
    Ok(failed == 0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Caps the global worker pool at `RFPCA_THREADS` when set.
fn configure_threads() -> std::result::Result<(), String> {
    match std::env::var("RFPCA_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| format!("RFPCA_THREADS must be a positive integer, got {v:?}"))?;
            if n == 0 {
                return Err("RFPCA_THREADS must be at least 1".into());
            }
            // a pool built earlier in the same process is kept
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            Ok(())
        }
        Err(_) => Ok(()),
    }
}

pub fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Select(a) => cmd_select(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    match run(&cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => {
            eprintln!("warning: at least one fit reached the iteration limit before converging");
            EXIT_NOT_CONVERGED
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
