//! Drivers behind the auxiliary subcommands.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{run_to_dir, Setup, Violation};
use crate::dynamics::{df_dt, dwtilde_dt, gd_step_lifted, FlowPiece, StepRecord};
use crate::error::{Error, Result};
use crate::lifted::LiftedState;
use crate::linalg::{singular_values, DenseMatrix};
use crate::measurement::{OpKind, RipEstimate};
use crate::monitors::{e_bound_from_inputs, EBoundInputs};
use crate::rng::{stream, streams};

/// Steps `setup` forward and hands the record of every step in `wanted` to
/// `visit`. Stops after the largest wanted index.
fn visit_steps(
    setup: &Setup,
    wanted: &BTreeSet<usize>,
    mut visit: impl FnMut(&StepRecord) -> Result<()>,
) -> Result<()> {
    let Some(&last) = wanted.iter().next_back() else {
        return Ok(());
    };
    let mut w = setup.w0.clone();
    for k in 0..=last {
        let rec = gd_step_lifted(&w, k, &setup.op, &setup.model).map_err(|e| e.at_step(k))?;
        if wanted.contains(&k) {
            visit(&rec).map_err(|e| e.at_step(k))?;
        }
        w = rec.w_after;
    }
    Ok(())
}

/// `count` distinct step indices in `0..steps`, all of them when
/// `count ≥ steps`.
fn probe_steps(seed: u64, steps: usize, count: usize) -> BTreeSet<usize> {
    if count >= steps {
        return (0..steps).collect();
    }
    let mut rng = stream(seed, streams::PROBES);
    let mut out = BTreeSet::new();
    while out.len() < count {
        out.insert(rng.random_range(0..steps));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowProbe {
    pub k: usize,
    /// `‖W(1) − W_{k+1}‖_F / ‖W_{k+1}‖_F`.
    pub deviation: f64,
    /// `‖E‖` at `s = 0, ¼, ½, ¾`.
    pub norm_e: [f64; 4],
    pub e_bound: f64,
    pub e_bound_applicable: bool,
    pub e_bound_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowVsGdReport {
    pub steps: usize,
    pub max_deviation: f64,
    pub probes: Vec<FlowProbe>,
}

pub const PROBE_FRACTIONS: [f64; 4] = [0.0, 0.25, 0.5, 0.75];

pub fn flow_vs_gd(cfg: &ExperimentConfig, probes: usize) -> Result<FlowVsGdReport> {
    let setup = Setup::new(cfg)?;
    let steps = cfg.resolved_steps(&setup.spec);
    let r = setup.spec.r;
    let mut out = Vec::new();
    visit_steps(&setup, &probe_steps(cfg.seed, steps, probes), |rec| {
        let piece = FlowPiece::new(rec)?;
        let diff = &piece.w_at(1.0) - &rec.w_after;
        let deviation = diff.frobenius_norm() / rec.w_after.frobenius_norm();
        let norm_e = PROBE_FRACTIONS.map(|s| piece.perturbation(s, &setup.model).op_norm());
        let sigma_r1 = singular_values(&rec.w_before).get(r).copied().unwrap_or(0.0);
        let inputs = EBoundInputs {
            t: piece.time(0.0),
            norm_e: norm_e.iter().copied().fold(0.0, f64::max),
            norm_w_k: rec.w_before.op_norm(),
            norm_r_k: rec.r_k.op_norm(),
            sigma_r1_w_k: sigma_r1,
        };
        let rep = e_bound_from_inputs(&setup.monitor.spec, &inputs);
        let item = rep.get("thm_bound").expect("thm_bound item");
        out.push(FlowProbe {
            k: rec.k,
            deviation,
            norm_e,
            e_bound: item.bound,
            e_bound_applicable: item.active,
            e_bound_pass: item.pass,
        });
        Ok(())
    })?;
    Ok(FlowVsGdReport {
        steps,
        max_deviation: out.iter().map(|p| p.deviation).fold(0.0, f64::max),
        probes: out,
    })
}

pub const RIP_CAVEAT: &str = "falsifier-only";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RipReport {
    pub estimate: RipEstimate,
    pub rho_target: f64,
    pub pass: bool,
    /// Random probes can only show the property fails, never that it holds.
    pub caveat: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Monte-Carlo RIP estimate of the configured operator on `probe_rank`
/// matrices (default `r + 1`).
pub fn check_rip(cfg: &ExperimentConfig, trials: usize, probe_rank: Option<usize>) -> Result<RipReport> {
    if cfg.op_kind == OpKind::Identity {
        return Err(Error::InvalidConfig(
            "the identity operator is an isometry; use rho = 0 instead of estimating it".into(),
        ));
    }
    cfg.validate()?;
    let op = cfg.operator()?;
    let rank = probe_rank.unwrap_or((cfg.r + 1).min(cfg.m.min(cfg.n)));
    let estimate = op.estimate_rip(rank, trials, cfg.seed)?;
    let warning = (trials == 0).then(|| "no trials: rho_hat is a vacuous 0".to_string());
    Ok(RipReport {
        pass: estimate.rho_hat <= cfg.rho_target,
        rho_target: cfg.rho_target,
        estimate,
        caveat: RIP_CAVEAT.into(),
        warning,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub quantity: String,
    /// Central-difference error at time steps `h` and `h/2`.
    pub err_h: f64,
    pub err_half: f64,
    /// `err_h / err_half`; `None` when both sit at roundoff.
    pub ratio: Option<f64>,
    /// Error at step `1e-4·η`.
    pub err_fine: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeProbe {
    pub k: usize,
    pub s: f64,
    pub t: f64,
    /// Coarse time step of the halving table.
    pub h: f64,
    pub checks: Vec<DerivativeCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub ratio_range: [f64; 2],
    pub abs_tolerance: f64,
    pub probes: Vec<DerivativeProbe>,
}

impl DerivativeReport {
    pub fn all_pass(&self) -> bool {
        self.probes.iter().all(|p| p.checks.iter().all(|c| c.pass))
    }
}

pub const RATIO_RANGE: [f64; 2] = [3.5, 4.5];
pub const FD_ABS_TOLERANCE: f64 = 1e-6;
/// The coarse step is `FD_STEP_SCALE/‖L‖` for the piece generator `L`, so the
/// truncation error stays well above roundoff even where the flow is slow.
pub const FD_STEP_SCALE: f64 = 0.05;

type Quantities = [DenseMatrix; 3];
const QUANTITIES: [&str; 3] = ["dF_dt", "dWtilde_dt", "dW_dt"];

fn sample(piece: &FlowPiece<'_>, s: f64, setup: &Setup) -> Result<Quantities> {
    let st = LiftedState::derive(piece.w_at(s), &setup.model, piece.time(s))?;
    Ok([st.f, st.wtilde, st.w])
}

fn central(piece: &FlowPiece<'_>, s: f64, dt: f64, setup: &Setup) -> Result<Quantities> {
    let ds = dt / piece.rec.eta;
    let plus = sample(piece, s + ds, setup)?;
    let minus = sample(piece, s - ds, setup)?;
    Ok([0, 1, 2].map(|i| (&plus[i] - &minus[i]).scale(0.5 / dt)))
}

/// Coarse step of the halving table for `piece`.
pub fn fd_step(piece: &FlowPiece<'_>, setup: &Setup) -> f64 {
    let rate = piece.generator().op_norm();
    if rate > 0.0 {
        FD_STEP_SCALE / rate
    } else {
        1e-2 / setup.spec.norm_y
    }
}

fn probe_derivatives(
    piece: &FlowPiece<'_>,
    s: f64,
    h: f64,
    setup: &Setup,
) -> Result<Vec<DerivativeCheck>> {
    let model = &setup.model;
    let st = LiftedState::derive(piece.w_at(s), model, piece.time(s))?;
    let e = piece.perturbation(s, model);
    let exact = [df_dt(&st, &e, model)?, dwtilde_dt(&st, &e, model)?, piece.dw_dt(s)];
    let coarse = central(piece, s, h, setup)?;
    let half = central(piece, s, h / 2.0, setup)?;
    let fine = central(piece, s, 1e-4 * piece.rec.eta, setup)?;
    let values = [&st.f, &st.wtilde, &st.w];
    Ok((0..3)
        .map(|i| {
            let err = |fd: &DenseMatrix| (fd - &exact[i]).frobenius_norm();
            let (err_h, err_half, err_fine) = (err(&coarse[i]), err(&half[i]), err(&fine[i]));
            let floor = 1e-12 * values[i].frobenius_norm().max(exact[i].frobenius_norm()).max(1e-300);
            let ratio = (err_h > floor).then(|| err_h / err_half);
            let ratio_ok = ratio.map_or(true, |q| (RATIO_RANGE[0]..=RATIO_RANGE[1]).contains(&q));
            DerivativeCheck {
                quantity: QUANTITIES[i].into(),
                err_h,
                err_half,
                ratio,
                err_fine,
                pass: ratio_ok && err_fine <= FD_ABS_TOLERANCE,
            }
        })
        .collect())
}

/// Step-halving table for the analytic derivatives of `F`, `W̃` and `W` at
/// `probes` random points of the trajectory.
pub fn verify_derivatives(cfg: &ExperimentConfig, probes: usize) -> Result<DerivativeReport> {
    let setup = Setup::new(cfg)?;
    let steps = cfg.resolved_steps(&setup.spec);
    let wanted = probe_steps(cfg.seed, steps, probes);
    let mut fractions = stream(cfg.seed, streams::PROBES);
    // Skip past the draws used for the step indices.
    fractions.set_word_pos(1 << 32);
    let mut out = Vec::new();
    visit_steps(&setup, &wanted, |rec| {
        let s: f64 = fractions.random();
        let piece = FlowPiece::new(rec)?;
        let h = fd_step(&piece, &setup);
        let (checks, skipped) = match probe_derivatives(&piece, s, h, &setup) {
            Ok(checks) => (checks, None),
            Err(e @ Error::RankDeficient { .. }) => (Vec::new(), Some(e.to_string())),
            Err(e) => return Err(e),
        };
        out.push(DerivativeProbe {
            k: rec.k,
            s,
            t: piece.time(s),
            h,
            checks,
            skipped,
        });
        Ok(())
    })?;
    Ok(DerivativeReport {
        ratio_range: RATIO_RANGE,
        abs_tolerance: FD_ABS_TOLERANCE,
        probes: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub index: usize,
    pub seed: u64,
    pub final_error: f64,
    pub first_warmup_violation: Option<Violation>,
    pub first_local_violation: Option<Violation>,
    pub ebound_violations: usize,
}

/// Seed of run `index`, drawn from a stream reserved for sweeps.
pub fn sweep_seed(seed: u64, index: usize) -> u64 {
    let mut rng = stream(seed, streams::SWEEP);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

pub fn sweep_dir_name(index: usize) -> String {
    format!("run_{index:03}")
}

/// `runs` copies of `cfg` with derived seeds, executed on up to `threads`
/// workers. Each run writes into `out_dir/run_NNN`; the entries also go to
/// `out_dir/sweep.json`.
pub fn sweep(cfg: &ExperimentConfig, runs: usize, threads: usize, out_dir: &Path) -> Result<Vec<SweepEntry>> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepEntry>>>> = Mutex::new((0..runs).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, runs.max(1)) {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= runs {
                    break;
                }
                let seed = sweep_seed(cfg.seed, index);
                let run_cfg = ExperimentConfig { seed, ..cfg.clone() };
                let res = run_to_dir(&run_cfg, &out_dir.join(sweep_dir_name(index))).map(|(out, _)| {
                    SweepEntry {
                        index,
                        seed,
                        final_error: out.summary.final_error,
                        first_warmup_violation: out.summary.first_warmup_violation,
                        first_local_violation: out.summary.first_local_violation,
                        ebound_violations: out.summary.ebound_violations,
                    }
                });
                results.lock().expect("no worker panicked")[index] = Some(res);
            });
        }
    });
    let entries = results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every index was claimed"))
        .collect::<Result<Vec<_>>>()?;
    let path = out_dir.join("sweep.json");
    let mut json = serde_json::to_string_pretty(&entries)?;
    json.push('\n');
    std::fs::write(&path, json).map_err(Error::io(&path))?;
    Ok(entries)
}
