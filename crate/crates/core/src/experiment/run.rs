use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DeltaEff, ExperimentConfig};
use crate::dynamics::{gd_step_lifted, FlowPiece, StepRecord};
use crate::error::{Error, Result};
use crate::lifted::{LiftedState, Model, ProblemSpec};
use crate::linalg::DenseMatrix;
use crate::measurement::{MeasOp, RipEstimate};
use crate::monitors::{
    derivative_sign_suite, e_bound_from_inputs, final_error_report, identity_suite,
    local_from_metrics, minimal_warmup_delta, mr_inf, thm33_bound, warmup_from_metrics,
    assumption_report, EBoundInputs, Metrics, Phase, PhaseBounds, WARMUP_IDS,
};
use crate::report::InvariantReport;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SNAPSHOT_DIR: &str = "snapshots";

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub k: usize,
    #[serde(rename = "norm_W")]
    pub norm_w: f64,
    #[serde(rename = "norm_R")]
    pub norm_r: f64,
    pub norm_imbalance: f64,
    #[serde(rename = "norm_PAJW")]
    pub norm_pajw: f64,
    #[serde(rename = "norm_PNW")]
    pub norm_pnw: f64,
    #[serde(rename = "lambda1_PPX")]
    pub lambda1_ppx: f64,
    #[serde(rename = "norm_F")]
    pub norm_f: f64,
    #[serde(rename = "norm_Wtilde")]
    pub norm_wtilde: f64,
    #[serde(rename = "sigma_r_A")]
    pub sigma_r_a: f64,
    #[serde(rename = "sigma_r1_W")]
    pub sigma_r1_w: f64,
    #[serde(rename = "norm_E")]
    pub norm_e: f64,
    #[serde(rename = "MR_t")]
    pub mr_t: f64,
    #[serde(rename = "norm_PNWQ")]
    pub norm_pnwq: f64,
    pub warmup_pass_bitmask: u64,
    pub local_pass_bitmask: u64,
    pub ebound_applicable: bool,
    pub ebound_pass: bool,
}

/// A logged row with the full reports behind it.
#[derive(Debug, Clone)]
pub struct LoggedStep {
    pub row: TrajectoryRow,
    pub warmup: InvariantReport,
    pub local: InvariantReport,
    pub ebound: InvariantReport,
    pub identities: InvariantReport,
    pub signs: Option<InvariantReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub item: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub version: String,
    #[serde(rename = "T1")]
    pub t1: f64,
    #[serde(rename = "T2")]
    pub t2: f64,
    pub beta_20: f64,
    pub beta_4: f64,
    pub steps: usize,
    pub log_every: usize,
    /// `δ` used by the monitors.
    pub delta_monitor: f64,
    pub final_error: f64,
    /// Final error bound at the configured `δ`.
    pub thm33_bound: f64,
    /// `M^R_∞` at the monitoring `δ` with `β_20`.
    #[serde(rename = "MR_inf")]
    pub mr_inf: f64,
    pub first_warmup_violation: Option<Violation>,
    pub first_local_violation: Option<Violation>,
    pub ebound_applicable_rows: usize,
    pub ebound_violations: usize,
    pub identity_failures: usize,
    pub sign_failures: usize,
    pub assumptions: InvariantReport,
    pub final_report: InvariantReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rip_estimate: Option<RipEstimate>,
    pub runtime_seconds: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub logged: Vec<LoggedStep>,
    pub summary: Summary,
    pub final_w: DenseMatrix,
}

impl RunOutput {
    pub fn rows(&self) -> impl Iterator<Item = &TrajectoryRow> {
        self.logged.iter().map(|l| &l.row)
    }
}

/// Problem, operator and the two models (run parameters, monitoring `δ`).
pub struct Setup {
    pub spec: ProblemSpec,
    pub model: Model,
    pub monitor: Model,
    pub op: MeasOp,
    pub w0: DenseMatrix,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let spec = cfg.problem_spec()?;
        let model = Model::new(spec.clone())?;
        let op = cfg.operator()?;
        let w0 = cfg.initial_w(&spec)?;
        let delta = match cfg.delta_eff {
            None => spec.delta,
            Some(DeltaEff::Value(d)) => d,
            Some(DeltaEff::Auto(_)) => {
                let st = LiftedState::derive(w0.clone(), &model, 0.0)?;
                match minimal_warmup_delta(&st, &model) {
                    Some(d) if d > 0.0 => d,
                    _ => {
                        return Err(Error::InvalidConfig(
                            "no delta_eff makes the warm-up items hold at t = 0".into(),
                        ))
                    }
                }
            }
        };
        let monitor = Model::new(spec.with_delta(delta))?;
        Ok(Self {
            spec,
            model,
            monitor,
            op,
            w0,
        })
    }
}

/// Monitors one logged point. `rec` is the step leaving `w`, if it exists.
pub fn log_point(
    k: usize,
    w: &DenseMatrix,
    rec: Option<&StepRecord>,
    setup: &Setup,
    sign_checks: bool,
) -> Result<LoggedStep> {
    let mon = &setup.monitor;
    let spec = &mon.spec;
    let t = k as f64 * spec.eta;
    let state = LiftedState::derive(w.clone(), mon, t)?;
    let m = Metrics::of(&state, mon);
    let warmup = warmup_from_metrics(&m, spec);
    let local = local_from_metrics(&m, spec);
    let e = match rec {
        Some(rec) => Some(FlowPiece::new(rec)?.perturbation(0.0, &setup.model)),
        None => None,
    };
    let norm_e = e.as_ref().map_or(f64::NAN, DenseMatrix::op_norm);
    let ebound = e_bound_from_inputs(
        spec,
        &EBoundInputs {
            t,
            norm_e,
            norm_w_k: m.norm_w,
            norm_r_k: m.norm_r,
            sigma_r1_w_k: m.sigma_r1_w,
        },
    );
    let identities = identity_suite(&state, mon);
    let signs = match (&e, sign_checks) {
        (Some(e), true) => {
            let mut rep = derivative_sign_suite(&state, e, mon, Phase::Warmup);
            if t >= spec.t1 {
                rep.items.extend(derivative_sign_suite(&state, e, mon, Phase::Local).items);
            }
            Some(rep)
        }
        _ => None,
    };
    let thm = ebound.get("thm_bound").expect("e-bound report has thm_bound");
    let row = TrajectoryRow {
        t,
        k,
        norm_w: m.norm_w,
        norm_r: m.norm_r,
        norm_imbalance: m.norm_imbalance,
        norm_pajw: m.norm_pajw,
        norm_pnw: m.norm_pnw,
        lambda1_ppx: m.lambda1_ppx,
        norm_f: m.norm_f,
        norm_wtilde: m.norm_wtilde,
        sigma_r_a: m.sigma_r_a,
        sigma_r1_w: m.sigma_r1_w,
        norm_e,
        mr_t: PhaseBounds::new(spec, t, spec.beta_20).mr_t,
        norm_pnwq: m.norm_pnwq,
        warmup_pass_bitmask: warmup.pass_bitmask(),
        local_pass_bitmask: local.pass_bitmask(),
        ebound_applicable: thm.active && rec.is_some(),
        ebound_pass: thm.pass,
    };
    Ok(LoggedStep {
        row,
        warmup,
        local,
        ebound,
        identities,
        signs,
    })
}

/// The step leaving `w`, or `None` when it would break the step guard.
fn trailing_step(w: &DenseMatrix, k: usize, setup: &Setup) -> Option<StepRecord> {
    gd_step_lifted(w, k, &setup.op, &setup.model).ok()
}

/// Runs gradient descent and monitors every logged step; nothing is written.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    run_with(cfg, |_, _| Ok(()))
}

/// Like [`run`], calling `on_log(entry, W)` for each logged step.
pub fn run_with(
    cfg: &ExperimentConfig,
    mut on_log: impl FnMut(&LoggedStep, &DenseMatrix) -> Result<()>,
) -> Result<RunOutput> {
    let started = Instant::now();
    let setup = Setup::new(cfg)?;
    let spec = &setup.spec;
    let steps = cfg.resolved_steps(spec);
    let log_every = cfg.resolved_log_every(steps);
    let t2_step = (spec.t2 / spec.eta).round() as usize;

    let mut logged = Vec::new();
    let mut w = setup.w0.clone();
    for k in 0..=steps {
        let rec = if k < steps {
            Some(gd_step_lifted(&w, k, &setup.op, &setup.model).map_err(|e| e.at_step(k))?)
        } else {
            None
        };
        if k % log_every == 0 || k == steps || k == t2_step {
            let trailing;
            let rec_ref = match &rec {
                Some(r) => Some(r),
                None => {
                    trailing = trailing_step(&w, k, &setup);
                    trailing.as_ref()
                }
            };
            let entry =
                log_point(k, &w, rec_ref, &setup, cfg.sign_checks).map_err(|e| e.at_step(k))?;
            on_log(&entry, &w)?;
            logged.push(entry);
        }
        if let Some(rec) = rec {
            w = rec.w_after;
        }
    }

    let mon = &setup.monitor;
    let final_state = LiftedState::derive(w.clone(), mon, steps as f64 * spec.eta)
        .map_err(|e| e.at_step(steps))?;
    let final_report = final_error_report(&final_state, mon);
    let (u, v) = setup.model.split(&w);
    let final_error = (&spec.y - &u.matmul_t(&v)).op_norm();

    let first_warmup_violation = logged
        .iter()
        .filter(|l| l.row.t <= spec.t2)
        .find_map(|l| {
            l.warmup.first_failure().map(|i| Violation {
                t: l.row.t,
                item: WARMUP_IDS[i - 1].to_string(),
            })
        });
    let first_local_violation = logged
        .iter()
        .filter(|l| l.row.t >= spec.t1 && l.row.t <= spec.t2)
        .find_map(|l| {
            l.local.failures().next().map(|item| Violation {
                t: l.row.t,
                item: item.id.clone(),
            })
        });
    let rip_estimate = if cfg.rip_trials > 0 {
        Some(setup.op.estimate_rip((spec.r + 1).min(spec.m.min(spec.n)), cfg.rip_trials, cfg.seed)?)
    } else {
        None
    };
    let summary = Summary {
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        t1: spec.t1,
        t2: spec.t2,
        beta_20: mon.spec.beta_20,
        beta_4: mon.spec.beta_4,
        steps,
        log_every,
        delta_monitor: mon.spec.delta,
        final_error,
        thm33_bound: thm33_bound(spec),
        mr_inf: mr_inf(&mon.spec, mon.spec.beta_20),
        first_warmup_violation,
        first_local_violation,
        ebound_applicable_rows: logged.iter().filter(|l| l.row.ebound_applicable).count(),
        ebound_violations: logged
            .iter()
            .filter(|l| l.row.ebound_applicable && !l.row.ebound_pass)
            .count(),
        identity_failures: logged.iter().filter(|l| !l.identities.all_pass()).count(),
        sign_failures: logged
            .iter()
            .filter(|l| l.signs.as_ref().is_some_and(|s| !s.all_pass()))
            .count(),
        assumptions: assumption_report(&mon.spec, setup.op.count()),
        final_report,
        rip_estimate,
        runtime_seconds: cfg.timing.then(|| started.elapsed().as_secs_f64()),
    };
    Ok(RunOutput {
        logged,
        summary,
        final_w: w,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub t: f64,
    pub k: usize,
    pub rows: usize,
    pub cols: usize,
}

fn snapshot_stem(k: usize) -> String {
    format!("w_{k:08}")
}

pub fn write_snapshot(dir: &Path, k: usize, t: f64, w: &DenseMatrix) -> Result<()> {
    let stem = snapshot_stem(k);
    let bin = dir.join(format!("{stem}.bin"));
    let bytes: Vec<u8> = w.as_slice().iter().flat_map(|x| x.to_le_bytes()).collect();
    std::fs::write(&bin, bytes).map_err(Error::io(&bin))?;
    let meta = SnapshotMeta {
        t,
        k,
        rows: w.rows(),
        cols: w.cols(),
    };
    let json = dir.join(format!("{stem}.json"));
    std::fs::write(&json, serde_json::to_string(&meta)?).map_err(Error::io(&json))?;
    Ok(())
}

pub fn read_snapshot(dir: &Path, k: usize) -> Result<(SnapshotMeta, DenseMatrix)> {
    let stem = snapshot_stem(k);
    let json = dir.join(format!("{stem}.json"));
    let text = std::fs::read_to_string(&json).map_err(Error::io(&json))?;
    let meta: SnapshotMeta = serde_json::from_str(&text)?;
    let bin = dir.join(format!("{stem}.bin"));
    let bytes = std::fs::read(&bin).map_err(Error::io(&bin))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8 bytes")))
        .collect();
    Ok((meta.clone(), DenseMatrix::new(meta.rows, meta.cols, data)?))
}

/// Paths of the artifacts written by [`run_to_dir`].
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub trajectory: PathBuf,
    pub summary: PathBuf,
    pub snapshots: Option<PathBuf>,
}

/// Runs and writes `trajectory.csv`, `summary.json` and, if enabled, the
/// `W` snapshots under `out_dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(RunOutput, Artifacts)> {
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let snap_dir = out_dir.join(SNAPSHOT_DIR);
    if cfg.snapshots {
        std::fs::create_dir_all(&snap_dir).map_err(Error::io(&snap_dir))?;
    }
    let trajectory = out_dir.join(TRAJECTORY_FILE);
    let mut writer = csv::Writer::from_path(&trajectory)?;
    let out = run_with(cfg, |entry, w| {
        writer.serialize(&entry.row)?;
        if cfg.snapshots {
            write_snapshot(&snap_dir, entry.row.k, entry.row.t, w)?;
        }
        Ok(())
    })?;
    writer.flush().map_err(Error::io(&trajectory))?;
    let summary = out_dir.join(SUMMARY_FILE);
    let mut json = serde_json::to_string_pretty(&out.summary)?;
    json.push('\n');
    std::fs::write(&summary, json).map_err(Error::io(&summary))?;
    Ok((
        out,
        Artifacts {
            trajectory,
            summary,
            snapshots: cfg.snapshots.then_some(snap_dir),
        },
    ))
}

/// Rebuilds the CSV row of step `k` from its stored snapshot alone.
pub fn recompute_row(cfg: &ExperimentConfig, snapshot_dir: &Path, k: usize) -> Result<TrajectoryRow> {
    let setup = Setup::new(cfg)?;
    let (meta, w) = read_snapshot(snapshot_dir, k)?;
    let rec = trailing_step(&w, meta.k, &setup);
    Ok(log_point(meta.k, &w, rec.as_ref(), &setup, false)?.row)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::Steps;

    fn short(steps: usize) -> ExperimentConfig {
        ExperimentConfig {
            m: 4,
            n: 4,
            h: 4,
            steps: Steps::Count(steps),
            log_every: Some(10),
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_logs_only_start() {
        let out = run(&short(0)).unwrap();
        assert_eq!(out.logged.len(), 1);
        let row = &out.logged[0].row;
        assert_eq!((row.k, row.t), (0, 0.0));
        assert_eq!(row.warmup_pass_bitmask, 0xff);
    }

    #[test]
    fn rows_increase_in_time_and_include_last() {
        let out = run(&short(35)).unwrap();
        let ks: Vec<usize> = out.rows().map(|r| r.k).collect();
        assert_eq!(ks, vec![0, 10, 20, 30, 35]);
        assert!(out.rows().zip(out.rows().skip(1)).all(|(a, b)| a.t < b.t));
        assert!(out.logged.iter().all(|l| l.identities.all_pass()));
    }

    #[test]
    fn artifacts_roundtrip_and_recompute() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = short(25);
        let (out, art) = run_to_dir(&cfg, dir.path()).unwrap();
        let rows = read_trajectory(&art.trajectory).unwrap();
        assert_eq!(rows.len(), out.logged.len());
        let header = std::fs::read_to_string(&art.trajectory).unwrap();
        assert!(header.starts_with(
            "t,k,norm_W,norm_R,norm_imbalance,norm_PAJW,norm_PNW,lambda1_PPX,norm_F,norm_Wtilde,\
             sigma_r_A,sigma_r1_W,norm_E,MR_t,norm_PNWQ,warmup_pass_bitmask,local_pass_bitmask,\
             ebound_applicable,ebound_pass\n"
        ));
        let snaps = art.snapshots.unwrap();
        for row in &rows {
            let again = recompute_row(&cfg, &snaps, row.k).unwrap();
            assert!((again.norm_r - row.norm_r).abs() <= 1e-12);
            assert!((again.norm_e - row.norm_e).abs() <= 1e-12 || row.norm_e.is_nan());
            assert_eq!(again.warmup_pass_bitmask, row.warmup_pass_bitmask);
        }
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&art.summary).unwrap()).unwrap();
        assert!(summary["runtime_seconds"].is_null());
        assert!(summary.get("rip_estimate").is_none());
        assert_eq!(summary["config"]["steps"], 25);
    }

    #[test]
    fn step_errors_carry_the_index() {
        // η‖R̃₀‖ ≈ η‖Y‖ = 2 exceeds the guard at the first step.
        let cfg = ExperimentConfig { eta: 1.0, ..short(5) };
        match run(&cfg) {
            Err(Error::AtStep { k: 0, source }) => {
                assert!(matches!(*source, Error::StepTooLarge { .. }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
