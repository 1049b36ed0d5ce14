//! Command-line frontend: `simulate`, `converge` and `oracle-compare`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{ObservableSpec, RunConfig};
use crate::dm_compress::FactorMatrix;
use crate::error::{Error, Result};
use crate::integrator::{step_count, Integrator, StepStats};
use crate::linalg::frob;
use crate::models::LindbladModel;
use crate::observables::{energy_level, population, purity, site_probability};
use crate::oracle::{dense_evolve, min_eigenvalue, ORACLE_CAP};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tt-lindblad", version, about = "Low-rank CPTP Lindblad integrator with tensor-train columns")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration and write observables and step statistics.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep step sizes from `h-max` down by halving and fit the error slope.
    Converge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        h_min: f64,
        #[arg(long)]
        h_max: f64,
        #[arg(long)]
        levels: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run alongside the dense solver and report the density error per snapshot.
    OracleCompare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// C-style `%.15e`.
pub fn fmt_e(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{x:.15e}");
    let (mant, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", exp.abs())
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

/// Column names and values of one observable.
pub struct ObservableTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<(f64, Vec<f64>)>,
}

fn sites_or_all(sites: &Option<Vec<usize>>, n: usize) -> Vec<usize> {
    sites.clone().unwrap_or_else(|| (0..n).collect())
}

impl ObservableTable {
    fn new(spec: &ObservableSpec, n_sites: usize) -> Self {
        let columns = match spec {
            ObservableSpec::SiteProbability { sites, .. } | ObservableSpec::EnergyLevel { sites } => {
                sites_or_all(sites, n_sites).iter().map(|s| format!("site_{s}")).collect()
            }
            ObservableSpec::Population { .. } => vec!["population".into()],
            ObservableSpec::Purity => vec!["purity".into()],
        };
        Self { name: spec.file_stem(), columns, rows: Vec::new() }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", self.name))).map_err(csv_err)?;
        let mut header = vec!["time".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (t, vals) in &self.rows {
            let mut rec = vec![fmt_e(*t)];
            rec.extend(vals.iter().map(|&x| fmt_e(x)));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Evaluates one observable on `v`.
pub fn evaluate(spec: &ObservableSpec, cfg: &RunConfig, model: &LindbladModel, v: &FactorMatrix) -> Result<Vec<f64>> {
    let n = model.modes.len();
    match spec {
        ObservableSpec::SiteProbability { level, sites } => {
            sites_or_all(sites, n).iter().map(|&s| site_probability(v, s, *level)).collect()
        }
        ObservableSpec::Population { state } => Ok(vec![population(v, &cfg.population_state(state, &model.modes)?)?]),
        ObservableSpec::Purity => Ok(vec![purity(v)]),
        ObservableSpec::EnergyLevel { sites } => sites_or_all(sites, n).iter().map(|&s| energy_level(v, s)).collect(),
    }
}

/// One row of `summary.csv`.
#[derive(Clone, Debug, Serialize)]
pub struct SnapshotRow {
    pub time: f64,
    pub trace_pre: f64,
    pub rank: usize,
    pub max_bond: usize,
}

pub struct Simulation {
    pub model: LindbladModel,
    pub final_state: FactorMatrix,
    pub tables: Vec<ObservableTable>,
    pub snapshots: Vec<SnapshotRow>,
    pub stats: Vec<StepStats>,
}

/// Runs `cfg`, evaluating observables at every snapshot. Nothing is written.
pub fn run_config(cfg: &RunConfig) -> Result<Simulation> {
    let (model, v0) = cfg.build()?;
    run_model(cfg, &model, &v0, cfg.integrator.h)
}

fn run_model(cfg: &RunConfig, model: &LindbladModel, v0: &FactorMatrix, h: f64) -> Result<Simulation> {
    let t_final = cfg.integrator.t_final;
    let n_steps = step_count(h, t_final);
    let every = cfg.output.snapshot_every.unwrap_or_else(|| n_steps.div_ceil(1000).max(1));
    let mut tables: Vec<ObservableTable> =
        cfg.observables.iter().map(|o| ObservableTable::new(o, model.modes.len())).collect();
    let mut snapshots = Vec::new();
    let mut record = |t: f64, v: &FactorMatrix, trace: f64, tables: &mut Vec<ObservableTable>| -> Result<()> {
        for (spec, table) in cfg.observables.iter().zip(tables.iter_mut()) {
            table.rows.push((t, evaluate(spec, cfg, model, v)?));
        }
        snapshots.push(SnapshotRow { time: t, trace_pre: trace, rank: v.rank(), max_bond: v.max_bond() });
        Ok(())
    };
    let v0 = crate::integrator::trace_normalize(v0)?;
    record(0.0, &v0, 1.0, &mut tables)?;
    let mut it = Integrator::new(model, cfg.tableau()?, cfg.step_options())?;
    let mut failure = None;
    let traj = it.run_with(&v0, h, t_final, cfg.integrator.tolerance, usize::MAX, |t, v, st| {
        let n = st.step as usize + 1;
        if failure.is_none() && (n % every == 0 || n == n_steps) {
            if let Err(e) = record(t, v, st.trace, &mut tables) {
                failure = Some(e);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let final_state = traj.snapshots.last().cloned().unwrap_or(v0);
    Ok(Simulation { model: model.clone(), final_state, tables, snapshots, stats: traj.stats })
}

fn write_summary(dir: &Path, rows: &[SnapshotRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("summary.csv")).map_err(csv_err)?;
    w.write_record(["time", "trace_pre", "rank", "max_bond"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([fmt_e(r.time), fmt_e(r.trace_pre), r.rank.to_string(), r.max_bond.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_stats(dir: &Path, stats: &[StepStats]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(dir.join("stats.jsonl"))?);
    for s in stats {
        let line = serde_json::to_string(s).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writeln!(f, "{line}")?;
    }
    f.flush()?;
    Ok(())
}

/// `simulate`: run and write `<observable>.csv`, `summary.csv` and `stats.jsonl`.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Simulation> {
    let sim = run_config(cfg)?;
    fs::create_dir_all(out)?;
    for t in &sim.tables {
        t.write(out)?;
    }
    write_summary(out, &sim.snapshots)?;
    if cfg.output.stats {
        write_stats(out, &sim.stats)?;
    }
    Ok(sim)
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    /// `‖ρ_h(T) - ρ(T)‖_F` against the dense solution, when one is affordable.
    pub error: Option<f64>,
    /// `‖p_h - p_{h/2}‖` of the observables at `T`; absent on the finest level.
    pub delta: Option<f64>,
    pub max_rank: usize,
    pub max_bond: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub error_slope: Option<f64>,
    pub delta_slope: Option<f64>,
}

/// Step sizes `h_max / 2^k` down to `h_min`.
pub fn halving_levels(h_min: f64, h_max: f64, levels: usize) -> Result<Vec<f64>> {
    if !(h_min > 0.0 && h_max >= h_min) || levels < 2 {
        return Err(Error::Config(format!(
            "need 0 < h_min <= h_max and at least 2 levels, got h_min = {h_min}, h_max = {h_max}, levels = {levels}"
        )));
    }
    let hs: Vec<f64> = (0..levels).map(|k| h_max / 2f64.powi(k as i32)).collect();
    let last = hs[levels - 1];
    if (last - h_min).abs() > 1e-9 * h_min {
        return Err(Error::Config(format!("h_max / 2^(levels-1) = {last} does not equal h_min = {h_min}")));
    }
    Ok(hs)
}

fn final_observables(cfg: &RunConfig, sim: &Simulation) -> Result<Vec<f64>> {
    if cfg.observables.is_empty() {
        let n = sim.model.modes.len();
        return (0..n).map(|s| site_probability(&sim.final_state, s, 1)).collect();
    }
    Ok(sim.tables.iter().flat_map(|t| t.rows.last().map(|r| r.1.clone()).unwrap_or_default()).collect())
}

/// `converge`: runs every level and fits the log-log slope of the dense error
/// and of the self-refinement deviation `Δ_h`.
pub fn converge(cfg: &RunConfig, h_min: f64, h_max: f64, levels: usize) -> Result<ConvergenceReport> {
    let hs = halving_levels(h_min, h_max, levels)?;
    let (model, v0) = cfg.build()?;
    let n: usize = model.modes.iter().product();
    let exact = if n <= ORACLE_CAP {
        let rho0 = crate::integrator::trace_normalize(&v0)?.density()?;
        Some(dense_evolve(&model, &rho0, 0.0, cfg.integrator.t_final)?)
    } else {
        None
    };
    let mut quiet = cfg.clone();
    quiet.output.snapshot_every = Some(usize::MAX);
    let mut rows = Vec::new();
    let mut probes: Vec<Vec<f64>> = Vec::new();
    for &h in &hs {
        let sim = run_model(&quiet, &model, &v0, h)?;
        let error = match &exact {
            Some(rho) => Some(frob(&(sim.final_state.density()? - rho))),
            None => None,
        };
        probes.push(final_observables(&quiet, &sim)?);
        let max_rank = sim.stats.iter().map(|s| s.rank_after).max().unwrap_or(0);
        let max_bond = sim.stats.iter().map(|s| s.max_bond).max().unwrap_or(0);
        rows.push(ConvergenceRow { h, error, delta: None, max_rank, max_bond });
    }
    for k in 0..rows.len() - 1 {
        let d: f64 = probes[k].iter().zip(&probes[k + 1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        rows[k].delta = Some(d);
    }
    let slope = |pick: &dyn Fn(&ConvergenceRow) -> Option<f64>| -> Option<f64> {
        let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| pick(r).map(|y| (r.h, y))).collect();
        if pts.len() < 2 || pts.iter().any(|p| !(p.1 > 0.0)) {
            return None;
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        Some(fit_slope(&xs, &ys))
    };
    let error_slope = slope(&|r| r.error);
    let delta_slope = slope(&|r| r.delta);
    Ok(ConvergenceReport { rows, error_slope, delta_slope })
}

fn write_convergence(dir: &Path, rep: &ConvergenceReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("convergence.csv")).map_err(csv_err)?;
    w.write_record(["h", "error", "delta", "max_rank", "max_bond"]).map_err(csv_err)?;
    let opt = |x: Option<f64>| x.map(fmt_e).unwrap_or_default();
    for r in &rep.rows {
        w.write_record([fmt_e(r.h), opt(r.error), opt(r.delta), r.max_rank.to_string(), r.max_bond.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleRow {
    pub time: f64,
    pub error: f64,
    pub trace_pre: f64,
    pub min_eigenvalue: f64,
}

/// `oracle-compare`: `‖ρ_TT - ρ_dense‖_F` at every snapshot, with the dense
/// state propagated exactly between snapshots.
pub fn oracle_compare(cfg: &RunConfig) -> Result<Vec<OracleRow>> {
    let (model, v0) = cfg.build()?;
    let n: usize = model.modes.iter().product();
    if n > ORACLE_CAP {
        return Err(Error::DenseCap { size: n, cap: ORACLE_CAP });
    }
    let v0 = crate::integrator::trace_normalize(&v0)?;
    let mut rho = v0.density()?;
    let mut rows = vec![OracleRow { time: 0.0, error: 0.0, trace_pre: 1.0, min_eigenvalue: min_eigenvalue(&rho) }];
    let n_steps = cfg.n_steps();
    let every = cfg.snapshot_every();
    let mut it = Integrator::new(&model, cfg.tableau()?, cfg.step_options())?;
    let mut failure = None;
    let mut t_prev = 0.0;
    it.run_with(&v0, cfg.integrator.h, cfg.integrator.t_final, cfg.integrator.tolerance, usize::MAX, |t, v, st| {
        let k = st.step as usize + 1;
        if failure.is_some() || !(k % every == 0 || k == n_steps) {
            return;
        }
        let res = dense_evolve(&model, &rho, t_prev, t).and_then(|next| {
            let tt = v.density()?;
            rows.push(OracleRow { time: t, error: frob(&(&tt - &next)), trace_pre: st.trace, min_eigenvalue: min_eigenvalue(&tt) });
            Ok(next)
        });
        match res {
            Ok(next) => {
                rho = next;
                t_prev = t;
            }
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(rows)
}

fn write_oracle(dir: &Path, rows: &[OracleRow]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("oracle_compare.csv")).map_err(csv_err)?;
    w.write_record(["time", "error", "trace_pre", "min_eigenvalue"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([fmt_e(r.time), fmt_e(r.error), fmt_e(r.trace_pre), fmt_e(r.min_eigenvalue)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } | Error::ZeroFactor => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

fn load(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { config, seed, out } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            let sim = simulate(&cfg, &dir)?;
            let max_rank = sim.stats.iter().map(|s| s.rank_after).max().unwrap_or(0);
            println!("{} steps, max rank {max_rank}, output in {}", sim.stats.len(), dir.display());
        }
        Command::Converge { config, h_min, h_max, levels, out } => {
            let cfg = load(&config)?;
            let rep = converge(&cfg, h_min, h_max, levels)?;
            println!("h,error,delta,max_rank");
            for r in &rep.rows {
                let opt = |x: Option<f64>| x.map(fmt_e).unwrap_or_default();
                println!("{},{},{},{}", fmt_e(r.h), opt(r.error), opt(r.delta), r.max_rank);
            }
            if let Some(s) = rep.error_slope {
                println!("error slope {s:.3}");
            }
            if let Some(s) = rep.delta_slope {
                println!("delta slope {s:.3}");
            }
            write_convergence(&out.unwrap_or_else(|| cfg.output.dir.clone()), &rep)?;
        }
        Command::OracleCompare { config, out } => {
            let cfg = load(&config)?;
            let rows = oracle_compare(&cfg)?;
            let worst = rows.iter().map(|r| r.error).fold(0.0, f64::max);
            println!("{} snapshots, max error {}", rows.len(), fmt_e(worst));
            write_oracle(&out.unwrap_or_else(|| cfg.output.dir.clone()), &rows)?;
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
