use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use pgflow_core::experiment::{
    check_rip, flow_vs_gd, run_to_dir, sweep, verify_derivatives, DeltaEff, ExperimentConfig, Steps,
};

#[derive(Parser)]
#[command(name = "pgflow", version, about = "Factored gradient descent for matrix sensing, audited as a perturbed gradient flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run gradient descent and write the trajectory CSV, summary JSON and snapshots.
    Run(Common),
    /// Compare the closed-form flow with the gradient descent iterates.
    FlowVsGd {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        probes: usize,
    },
    /// Monte-Carlo estimate of the RIP constant of a Gaussian operator.
    CheckRip {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Rank of the probe matrices (default r + 1).
        #[arg(long)]
        probe_rank: Option<usize>,
    },
    /// Finite-difference check of the analytic derivatives along the trajectory.
    VerifyDerivatives {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        probes: usize,
    },
    /// Independent runs with derived seeds, executed concurrently.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// JSON config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    y_file: Option<PathBuf>,
    /// identity | gaussian
    #[arg(long)]
    op_kind: Option<String>,
    /// Measurement count.
    #[arg(long = "N", alias = "n-meas")]
    n_meas: Option<usize>,
    #[arg(long)]
    rho_target: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// random | scaled_identity
    #[arg(long)]
    init: Option<String>,
    /// Init scale divisor.
    #[arg(long = "C")]
    c: Option<f64>,
    /// Step count or "auto".
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    log_every: Option<usize>,
    /// Monitoring delta, or "auto".
    #[arg(long)]
    delta_eff: Option<String>,
    #[arg(long)]
    sign_checks: bool,
    #[arg(long)]
    no_snapshots: bool,
    /// Record wall-clock time in the summary.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    rip_trials: Option<usize>,
}

/// Parses a bare word through the type's JSON representation.
fn parse_word<T: DeserializeOwned>(flag: &str, word: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(word.to_string()))
        .map_err(|_| format!("invalid value {word:?} for --{flag}"))
}

fn parse_auto_or<T: std::str::FromStr>(flag: &str, word: &str) -> Result<Option<T>, String> {
    if word == "auto" {
        return Ok(None);
    }
    word.parse()
        .map(Some)
        .map_err(|_| format!("invalid value {word:?} for --{flag}: expected a number or \"auto\""))
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path).map_err(|e| e.to_string())?,
            None => ExperimentConfig::default(),
        };
        let o = &self.overrides;
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = o.$field.clone() { cfg.$field = v; })*};
        }
        set!(m, n, r, h, kappa, n_meas, rho_target, eta, epsilon, alpha, c);
        if let Some(p) = &o.y_file {
            cfg.y_file = Some(p.clone());
        }
        if let Some(d) = o.delta {
            cfg.delta = Some(d);
        }
        if let Some(k) = o.log_every {
            cfg.log_every = Some(k);
        }
        if let Some(t) = o.rip_trials {
            cfg.rip_trials = t;
        }
        if let Some(w) = &o.op_kind {
            cfg.op_kind = parse_word("op-kind", w)?;
        }
        if let Some(w) = &o.init {
            cfg.init = parse_word("init", w)?;
        }
        if let Some(w) = &o.steps {
            cfg.steps = match parse_auto_or("steps", w)? {
                Some(k) => Steps::Count(k),
                None => parse_word::<Steps>("steps", w)?,
            };
        }
        if let Some(w) = &o.delta_eff {
            cfg.delta_eff = Some(match parse_auto_or("delta-eff", w)? {
                Some(d) => DeltaEff::Value(d),
                None => parse_word::<DeltaEff>("delta-eff", w)?,
            });
        }
        cfg.sign_checks |= o.sign_checks;
        cfg.timing |= o.timing;
        if o.no_snapshots {
            cfg.snapshots = false;
        }
        cfg.seed = self.seed;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

fn write_report<T: Serialize>(out_dir: &Path, name: &str, report: &T) -> Result<PathBuf, String> {
    std::fs::create_dir_all(out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let path = out_dir.join(name);
    let mut json = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(path)
}

fn execute(command: Command) -> Result<(), String> {
    let err = |e: pgflow_core::Error| e.to_string();
    match command {
        Command::Run(common) => {
            let cfg = common.config()?;
            let (out, art) = run_to_dir(&cfg, &common.out_dir).map_err(err)?;
            let s = &out.summary;
            println!(
                "steps {} final_error {:.3e} thm_bound {:.3e} MR_inf {:.3e}",
                s.steps, s.final_error, s.thm33_bound, s.mr_inf
            );
            match &s.first_warmup_violation {
                Some(v) => println!("first warm-up violation: {} at t = {}", v.item, v.t),
                None => println!("no warm-up violation on logged rows up to T2"),
            }
            match &s.first_local_violation {
                Some(v) => println!("first local violation: {} at t = {}", v.item, v.t),
                None => println!("no local violation on logged rows in [T1, T2]"),
            }
            println!(
                "E bound: {} applicable rows, {} violations",
                s.ebound_applicable_rows, s.ebound_violations
            );
            println!("wrote {} and {}", art.trajectory.display(), art.summary.display());
        }
        Command::FlowVsGd { common, probes } => {
            let cfg = common.config()?;
            let rep = flow_vs_gd(&cfg, probes).map_err(err)?;
            let path = write_report(&common.out_dir, "flow_vs_gd.json", &rep)?;
            let applicable = rep.probes.iter().filter(|p| p.e_bound_applicable).count();
            let violations = rep
                .probes
                .iter()
                .filter(|p| p.e_bound_applicable && !p.e_bound_pass)
                .count();
            println!(
                "{} probes, max relative deviation {:.3e}; E bound {} applicable, {} violations",
                rep.probes.len(),
                rep.max_deviation,
                applicable,
                violations
            );
            println!("wrote {}", path.display());
        }
        Command::CheckRip {
            common,
            trials,
            probe_rank,
        } => {
            let cfg = common.config()?;
            let rep = check_rip(&cfg, trials, probe_rank).map_err(err)?;
            if let Some(w) = &rep.warning {
                eprintln!("warning: {w}");
            }
            let path = write_report(&common.out_dir, "check_rip.json", &rep)?;
            println!(
                "rho_hat {:.4} (rank {}, {} trials) vs rho_target {}: {} [{}]",
                rep.estimate.rho_hat,
                rep.estimate.probe_rank,
                rep.estimate.trials,
                rep.rho_target,
                if rep.pass { "pass" } else { "fail" },
                rep.caveat
            );
            println!("wrote {}", path.display());
        }
        Command::VerifyDerivatives { common, probes } => {
            let cfg = common.config()?;
            let rep = verify_derivatives(&cfg, probes).map_err(err)?;
            let path = write_report(&common.out_dir, "verify_derivatives.json", &rep)?;
            println!("{:>6} {:>8} {:>12} {:>10} {:>10}", "k", "s", "quantity", "ratio", "err_fine");
            for p in &rep.probes {
                if let Some(reason) = &p.skipped {
                    println!("{:>6} {:>8.4} skipped: {reason}", p.k, p.s);
                }
                for c in &p.checks {
                    let ratio = c.ratio.map_or("n/a".to_string(), |q| format!("{q:.4}"));
                    println!(
                        "{:>6} {:>8.4} {:>12} {:>10} {:>10.2e}",
                        p.k, p.s, c.quantity, ratio, c.err_fine
                    );
                }
            }
            println!("all pass: {}", rep.all_pass());
            println!("wrote {}", path.display());
        }
        Command::Sweep {
            common,
            runs,
            threads,
        } => {
            let cfg = common.config()?;
            let threads = threads
                .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
                .unwrap_or(1);
            let entries = sweep(&cfg, runs, threads, &common.out_dir).map_err(err)?;
            for e in &entries {
                println!("run {:>3} seed {:>20} final_error {:.3e}", e.index, e.seed, e.final_error);
            }
            println!("wrote {}", common.out_dir.join("sweep.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
