//! `bertrand`: run games, sweeps, audits, CCE solves and bound suites.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 failed bound check
//! (or audit slack above `--ceiling`).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use bertrand_core::distributions::{solve_extremal_cce, SamplingMode};
use bertrand_core::experiments::{
    load_json, verify_suite, write_csv, AuditConfig, AuditKind, ModeName, RunConfig, Suite, SuiteParams, SweepSpec,
};
use bertrand_core::grid::PriceGrid;
use bertrand_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "bertrand",
    version,
    about = "Repeated Bertrand pricing games with no-regret defectors"
)]
struct Cli {
    /// More logging (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `monte_carlo` or `exact_automaton` (overrides the config).
    #[arg(long)]
    mode: Option<ModeName>,
    /// Monte Carlo replicates (overrides the config).
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one game; writes trace.json and metrics.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a parameter sweep; writes one CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Certify the equilibrium slack of a profile.
    Audit {
        /// Profile or audit config (JSON).
        #[arg(long, alias = "config")]
        profile: PathBuf,
        #[arg(long = "T")]
        t: Option<u64>,
        /// Exit 2 when the certified slack exceeds this.
        #[arg(long)]
        ceiling: Option<f64>,
        /// auto, exact, adoption or defection_aware.
        #[arg(long)]
        kind: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Solve the extremal symmetric CCE for M defectors.
    Cce {
        #[arg(long = "M")]
        m: usize,
        #[arg(long = "K")]
        k: u32,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
        /// Write the solution JSON to the output directory.
        #[arg(long)]
        save: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run a bound-verification suite.
    Verify {
        #[arg(long)]
        suite: Suite,
        #[arg(long = "N", value_delimiter = ',')]
        n: Vec<usize>,
        #[arg(long = "K")]
        k: Option<u32>,
        #[arg(long = "T")]
        t: Option<u64>,
        #[arg(long = "M", value_delimiter = ',')]
        m: Vec<usize>,
        /// Random profiles for the property suites.
        #[arg(long)]
        profiles: Option<usize>,
        /// CCE sampling modes (iid, correlated).
        #[arg(long = "sampling-mode", value_delimiter = ',')]
        sampling_modes: Vec<SamplingMode>,
        /// Also write <out>/<suite>.csv.
        #[arg(long)]
        csv: bool,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Run { config, common } => {
            let mut cfg: RunConfig = load_json(&config)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(r) = common.replicates {
                cfg.replicates = r;
            }
            if let Some(m) = common.mode {
                cfg.mode = Some(m);
            }
            let out = cfg.execute()?;
            if let Some(trace) = &out.trace {
                write_json(&common.out.join("trace.json"), trace)?;
            }
            write_csv(&common.out.join("metrics.csv"), std::slice::from_ref(&out.row))?;
            println!("{}", serde_json::to_string_pretty(&out.metrics)?);
            Ok(0)
        }
        Command::Sweep { config, common } => {
            let mut spec: SweepSpec = load_json(&config)?;
            if let Some(s) = common.seed {
                spec.seed = s;
            }
            if let Some(r) = common.replicates {
                spec.replicates = r;
            }
            if let Some(m) = common.mode {
                spec.mode = Some(m);
            }
            let rows = bertrand_core::experiments::run_sweep(&spec)?;
            let path = spec
                .output
                .clone()
                .unwrap_or_else(|| common.out.join(format!("{}.csv", spec.experiment_id)));
            write_csv(&path, &rows)?;
            println!("{} rows -> {}", rows.len(), path.display());
            Ok(0)
        }
        Command::Audit {
            profile,
            t,
            ceiling,
            kind,
            common,
        } => {
            let text = std::fs::read_to_string(&profile).map_err(|e| io_err(&profile, e))?;
            let mut cfg = AuditConfig::from_json(&text, &profile.display().to_string())?;
            if let Some(t) = t {
                cfg.t = t;
            }
            if let Some(k) = kind {
                cfg.kind = serde_json::from_value::<AuditKind>(json!(k))
                    .map_err(|_| Error::Usage(format!("unknown audit kind `{k}`")))?;
            }
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(r) = common.replicates {
                cfg.replicates = r;
            }
            let report = cfg.execute()?;
            write_json(&common.out.join("audit.json"), &report)?;
            for p in &report.players {
                println!(
                    "player {}: equilibrium {:.6}, best deviation {:.6}, gain {:+.3e} ({})",
                    p.player, p.equilibrium_utility, p.best_deviation_utility, p.gain, p.witness
                );
            }
            println!("method {:?}, eq_slack {:.3e}", report.method, report.eq_slack);
            match ceiling {
                Some(c) if !report.within(c) => {
                    println!("FAIL: slack above ceiling {c}");
                    Ok(2)
                }
                Some(c) => {
                    println!("PASS: slack within ceiling {c}");
                    Ok(0)
                }
                None => Ok(0),
            }
        }
        Command::Cce {
            m,
            k,
            tolerance,
            save,
            common,
        } => {
            let grid = PriceGrid::new(k)?;
            let sol = solve_extremal_cce(m, grid, tolerance)?;
            let cert = sol.certify(tolerance)?;
            let target = m as f64 / (m as f64 - 1.0).exp();
            println!("objective {:.6}", sol.objective);
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "M": m,
                    "K": k,
                    "objective": sol.objective,
                    "limit_M_over_e_pow_M_minus_1": target,
                    "atoms": sol.atoms.len(),
                    "certificate": cert,
                    "iid_price": sol.iid_price(),
                    "iid_regret_per_round": sol.iid_regret_per_round(),
                }))?
            );
            if save {
                write_json(&common.out.join(format!("cce_M{m}_K{k}.json")), &sol)?;
            }
            Ok(0)
        }
        Command::Verify {
            suite,
            n,
            k,
            t,
            m,
            profiles,
            sampling_modes,
            csv,
            common,
        } => {
            let mut p = SuiteParams::defaults(suite);
            if !n.is_empty() {
                p.n = n;
            }
            if let Some(k) = k {
                p.k = k;
            }
            if let Some(t) = t {
                p.t = t;
            }
            if !m.is_empty() {
                p.m = m;
            }
            if let Some(x) = profiles {
                p.profiles = x;
            }
            if !sampling_modes.is_empty() {
                p.sampling_modes = sampling_modes;
            }
            if let Some(s) = common.seed {
                p.seed = s;
            }
            if let Some(r) = common.replicates {
                p.replicates = r;
            }
            let checks = verify_suite(suite, &p)?;
            for c in &checks {
                println!("{}", c.summary());
            }
            if csv {
                let rows: Vec<_> = checks.iter().map(|c| c.row.clone()).collect();
                let path = common.out.join(format!("{suite}.csv"));
                write_csv(&path, &rows)?;
                println!("{} rows -> {}", rows.len(), path.display());
            }
            let failed = checks.iter().filter(|c| !c.pass).count();
            println!("{suite}: {} passed, {failed} failed", checks.len() - failed);
            Ok(if failed == 0 { 0 } else { 2 })
        }
    }
}
