use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use superlab::config::{ConfigError, ExperimentConfig, FunctionSpec, TerminalSpec};
use superlab::hjb_solver::{boundary_audit, extract_policy, residual_check, solve_w, surface_csv, SurfaceHeader, ValueSurface};
use superlab::mc_harness::{convergence_study, dpp_check, evaluate_cost, verify_optimality, Provenance};
use superlab::measure_space::{discretize, AtomicMeasure};
use superlab::model::{CoefficientSpec, FeedbackPolicy};
use superlab::oracles::riccati_w;
use superlab::particle_sim::{series_csv, simulate_batch, summary_csv};
use superlab::selftest::{run_selftest, SelftestOptions, ALL};
use superlab::stats::SampleMoments;

const FAILURE_MARKER: &str = "FAILED";

#[derive(Parser, Debug)]
#[command(name = "superlab", version, about = "Controlled branching particle systems, superprocess limits and HJB verification")]
struct Cli {
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a config value, e.g. `--set simulation.level=20`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate replicate trajectories and write per-replicate CSV.
    Simulate,
    /// Solve the reduced HJB equation and write the value surface.
    SolveHjb,
    /// Estimate the expected cost of a policy.
    Evaluate(PolicyArg),
    /// Check the solved feedback against the value function and alternatives.
    Verify,
    /// Dynamic programming consistency at the configured intermediate time.
    Dpp,
    /// Variance scaling across particle levels.
    Scaling(PolicyArg),
    /// Run the acceptance suite.
    Selftest {
        /// Comma-separated criterion numbers (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
}

#[derive(Args, Debug)]
struct PolicyArg {
    /// Constant control index; the solved feedback when omitted.
    #[arg(long)]
    control: Option<usize>,
}

enum Outcome {
    Pass,
    Fail,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p).map_err(|e| ConfigError::Parse(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(w) = cli.workers {
        overrides.push(format!("workers={w}"));
    }
    if let Some(o) = &cli.out {
        overrides.push(format!("output_dir={}", toml_string(&o.to_string_lossy())));
    }
    ExperimentConfig::from_toml_with_overrides(&text, &overrides)
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

struct Run {
    cfg: ExperimentConfig,
    hash: String,
    out: PathBuf,
}

impl Run {
    fn write(&self, name: &str, body: &str) -> Result<()> {
        let p = self.out.join(name);
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        log::info!("wrote {}", p.display());
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, report: &T, censored: usize) -> Result<()> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            provenance: Provenance,
            report: &'a T,
        }
        let provenance = Provenance {
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            family_fingerprint: self.cfg.family()?.fingerprint(),
            censored,
        };
        self.write(name, &(serde_json::to_string_pretty(&Wrapped { provenance, report })? + "\n"))
    }

    fn initial(&self, level: u64) -> Result<AtomicMeasure> {
        Ok(discretize(&self.cfg.initial, level)?)
    }

    fn solve(&self) -> Result<ValueSurface> {
        let c = self.cfg.coefficients()?;
        Ok(solve_w(&c, &self.cfg.terminal_h()?, &self.cfg.grid, &self.cfg.control_set())?)
    }

    fn policy(&self, control: Option<usize>) -> Result<FeedbackPolicy> {
        match control {
            Some(i) if i < self.cfg.controls.values.len() => Ok(FeedbackPolicy::Constant(i)),
            Some(i) => bail!("control index {i} out of range"),
            None if self.cfg.controls.values.len() == 1 => Ok(FeedbackPolicy::Constant(0)),
            None => Ok(extract_policy(&self.solve()?)),
        }
    }

    fn bias_allowance(&self) -> f64 {
        self.cfg.stats.kappa / self.cfg.simulation.level as f64
    }
}

fn simulate(run: &Run) -> Result<Outcome> {
    let sim = run.cfg.sim_config_with_records()?;
    let lam = run.initial(sim.level)?;
    let policy = run.policy(None)?;
    let records = simulate_batch(&lam, &policy, &run.cfg.control_set(), &sim, &run.cfg.coefficients()?)?;
    run.write("simulate_summary.csv", &summary_csv(&records, &sim, &run.hash))?;
    if run.cfg.simulation.write_series {
        run.write("simulate_series.csv", &series_csv(&records, &sim, &run.hash))?;
    }
    let kept: Vec<_> = records.iter().filter(|r| !r.censored).collect();
    for (j, r) in sim.record.iter().enumerate() {
        let xs: Vec<f64> = kept.iter().map(|rec| rec.terminal(j)).collect();
        if !xs.is_empty() {
            let m = SampleMoments::of(&xs);
            println!("{}: mean {:.6} (se {:.6}), variance {:.6}", r.label, m.mean, m.std_error, m.variance);
        }
    }
    println!("{} replicates, {} censored", records.len(), records.len() - kept.len());
    Ok(Outcome::Pass)
}

/// Closed-form comparison when the terminal function and the branching
/// rate are constants and there is no motion.
fn riccati_comparison(run: &Run, surface: &ValueSurface) -> Option<(String, f64)> {
    let c = &run.cfg.coefficients;
    let zero = CoefficientSpec::Constant { value: 0.0 };
    let gamma = match (&c.drift, &c.volatility, &c.branching, run.cfg.controls.values.len()) {
        (d, v, CoefficientSpec::Constant { value }, 1) if *d == zero && *v == zero => *value,
        _ => return None,
    };
    let theta = match &run.cfg.cost.terminal {
        TerminalSpec::ExpNegPairing {
            h: FunctionSpec::Constant { value },
        } => *value,
        _ => return None,
    };
    let g = &surface.grid;
    let mut err: f64 = 0.0;
    for k in 0..g.nt {
        let exact = riccati_w(theta, gamma, g.t_end - g.t(k));
        err = surface.row(k).iter().fold(err, |e, w| e.max((w - exact).abs()));
    }
    Some(("riccati_max_error".into(), err))
}

fn solve_hjb(run: &Run) -> Result<Outcome> {
    let surface = run.solve()?;
    let coeffs = run.cfg.coefficients()?;
    let residual = residual_check(&surface, &coeffs)?;
    println!("max residual {:.3e} at t = {}, x = {}", residual.max_abs, residual.t, residual.x);
    let header = SurfaceHeader {
        config_hash: run.hash.clone(),
        grid: surface.grid,
        controls: (0..surface.controls.len()).map(|i| surface.controls.point(i).to_vec()).collect(),
        terminal: surface.terminal.describe(),
        residual: Some(residual),
        oracle_comparisons: riccati_comparison(run, &surface)
            .into_iter()
            .chain([("boundary_doubling_max_diff".to_string(), boundary_audit(&surface, &coeffs)?)])
            .collect(),
    };
    for (k, v) in &header.oracle_comparisons {
        println!("{k} {v:.3e}");
    }
    run.write("surface.csv", &surface_csv(&surface, &run.hash))?;
    run.write_json("surface.json", &header, 0)?;
    Ok(Outcome::Pass)
}

fn evaluate(run: &Run, arg: &PolicyArg) -> Result<Outcome> {
    let sim = run.cfg.sim_config();
    let est = evaluate_cost(
        &run.initial(sim.level)?,
        &run.policy(arg.control)?,
        &run.cfg.control_set(),
        &run.cfg.cost()?,
        &sim,
        &run.cfg.coefficients()?,
    )?;
    println!("J = {:.6} (se {:.6}, {} replicates, {} censored)", est.mean, est.std_error, est.replicates, est.censored);
    run.write_json("evaluate.json", &est, est.censored)?;
    Ok(Outcome::Pass)
}

fn verify(run: &Run) -> Result<Outcome> {
    let surface = run.solve()?;
    let sim = run.cfg.sim_config();
    let alternatives: Vec<_> = run.cfg.verify.alternatives.iter().map(|&i| FeedbackPolicy::Constant(i)).collect();
    let rep = verify_optimality(&surface, &run.initial(sim.level)?, &alternatives, &sim, &run.cfg.coefficients()?, run.bias_allowance())?;
    println!(
        "v* = {:.6}, J(optimal) = {:.6} (se {:.6}): {}",
        rep.v_star,
        rep.optimal.mean,
        rep.optimal.std_error,
        verdict(rep.optimal_passed)
    );
    for a in &rep.alternatives {
        println!("J({}) = {:.6} (se {:.6}): {}", a.policy, a.estimate.mean, a.estimate.std_error, verdict(a.passed));
    }
    let censored = rep.optimal.censored + rep.alternatives.iter().map(|a| a.estimate.censored).sum::<usize>();
    run.write_json("verify.json", &rep, censored)?;
    Ok(if rep.passed { Outcome::Pass } else { Outcome::Fail })
}

fn dpp(run: &Run) -> Result<Outcome> {
    let surface = run.solve()?;
    let sim = run.cfg.sim_config();
    let rep = dpp_check(&surface, &run.initial(sim.level)?, run.cfg.dpp.tau, &sim, &run.cfg.coefficients()?, run.bias_allowance())?;
    println!(
        "v(t) = {:.6}, E v(tau) = {:.6} (se {:.6}), {} off grid: {}",
        rep.v_t,
        rep.estimate.mean,
        rep.estimate.std_error,
        rep.out_of_domain,
        verdict(rep.passed)
    );
    run.write_json("dpp.json", &rep, rep.estimate.censored)?;
    Ok(if rep.passed { Outcome::Pass } else { Outcome::Fail })
}

fn scaling(run: &Run, arg: &PolicyArg) -> Result<Outcome> {
    let mut sim = run.cfg.sim_config();
    sim.dt = run.cfg.scaling.dt_level_one;
    let rep = convergence_study(
        &run.cfg.initial,
        &run.policy(arg.control)?,
        &run.cfg.control_set(),
        &run.cfg.scaling.phi.build()?,
        &run.cfg.scaling.levels,
        &sim,
        &run.cfg.coefficients()?,
    )?;
    let mut csv = format!("# config_hash={}\nlevel,dt,mean,variance,variance_se,replicates,censored\n", run.hash);
    for r in &rep.levels {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.level, r.dt, r.mean, r.variance, r.variance_std_error, r.replicates, r.censored
        ));
    }
    println!(
        "Var(n) = {:.5} + {:.5}/n (se {:.5}, {:.5}), R^2 = {:.4}",
        rep.v_inf, rep.c, rep.v_inf_std_error, rep.c_std_error, rep.r_squared
    );
    run.write("scaling.csv", &csv)?;
    let censored = rep.levels.iter().map(|r| r.censored).sum();
    run.write_json("scaling.json", &rep, censored)?;
    Ok(Outcome::Pass)
}

fn selftest(run: &Run, only: &[u32]) -> Result<Outcome> {
    let mut opts = SelftestOptions::new(run.cfg.seed, run.cfg.stats.kappa, run.hash.clone());
    if !only.is_empty() {
        if let Some(bad) = only.iter().find(|i| !ALL.contains(i)) {
            bail!("unknown criterion {bad}");
        }
        opts.only = only.to_vec();
    }
    let summary = run_selftest(&opts);
    print!("{}", summary.report());
    run.write("selftest.csv", &summary.csv())?;
    run.write_json("selftest.json", &summary, 0)?;
    Ok(if summary.passed() { Outcome::Pass } else { Outcome::Fail })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn execute(cli: &Cli, run: &Run) -> Result<Outcome> {
    match &cli.command {
        Command::Simulate => simulate(run),
        Command::SolveHjb => solve_hjb(run),
        Command::Evaluate(a) => evaluate(run, a),
        Command::Verify => verify(run),
        Command::Dpp => dpp(run),
        Command::Scaling(a) => scaling(run, a),
        Command::Selftest { only } => selftest(run, only),
    }
}

fn mark_failure(out: &Path, message: &str) {
    if let Err(e) = fs::write(out.join(FAILURE_MARKER), format!("{message}\n")) {
        log::error!("cannot write failure marker: {e}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if cfg.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global() {
            log::warn!("worker pool already initialised: {e}");
        }
    }
    let hash = cfg.hash();
    let out = PathBuf::from(&cfg.output_dir);
    if let Err(e) = fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return ExitCode::from(2);
    }
    let _ = fs::remove_file(out.join(FAILURE_MARKER));
    let run = Run { cfg, hash, out };
    if let Err(e) = run.write("config.resolved.toml", &format!("# config_hash={}\n{}", run.hash, run.cfg.to_toml())) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match execute(&cli, &run) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => {
            mark_failure(&run.out, "one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            mark_failure(&run.out, &format!("{e:#}"));
            ExitCode::from(1)
        }
    }
}
