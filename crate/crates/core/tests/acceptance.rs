//! Acceptance gate. Each test prints one `criterion N: PASS|FAIL` line
//! straight to stdout (visible without `--nocapture`) and then asserts.

use std::io::Write;
use std::time::{Duration, Instant};

use pgflow_core::experiment::config::AutoTag;
use pgflow_core::experiment::{
    check_rip, flow_vs_gd, run, run_to_dir, verify_derivatives, DeltaEff, InitKind, RunOutput,
    Steps,
};
use pgflow_core::lifted::{LiftedState, Model, ProblemSpec};
use pgflow_core::monitors::identity_suite;
use pgflow_core::rng::{gaussian_matrix, gaussian_vector, stream};
use pgflow_core::{ExperimentConfig, Hyper, MeasOp, OpKind};

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "criterion {n} [{name}]: {} ({detail})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

/// Identity operator, `m = n = h = 12`, `r = 2`, `κ = 2`, scaled identity
/// init with `ε = 1e-3`, `η = 1e-2`, `steps = ceil(T₂/η)`.
fn reference_run() -> ExperimentConfig {
    ExperimentConfig {
        delta_eff: Some(DeltaEff::Auto(AutoTag::Auto)),
        ..Default::default()
    }
}

fn gaussian_run(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        m: 10,
        n: 10,
        r: 2,
        h: 20,
        op_kind: OpKind::Gaussian,
        n_meas: 6 * 20 * 2,
        init: InitKind::Random,
        log_every: Some(20),
        snapshots: false,
        seed,
        ..Default::default()
    }
}

#[test]
fn criterion_1_flow_matches_gd() {
    let configs = [
        (OpKind::Identity, 12, 12, 2, 24, 0, InitKind::Random),
        (OpKind::Gaussian, 8, 6, 2, 10, 200, InitKind::Random),
        (OpKind::Identity, 5, 7, 3, 9, 0, InitKind::Random),
        (OpKind::Gaussian, 10, 10, 2, 20, 240, InitKind::Random),
        (OpKind::Identity, 12, 12, 2, 12, 0, InitKind::ScaledIdentity),
    ];
    let (worst, elapsed) = timed(|| {
        configs
            .iter()
            .enumerate()
            .map(|(i, &(op_kind, m, n, r, h, n_meas, init))| {
                let cfg = ExperimentConfig {
                    m,
                    n,
                    r,
                    h,
                    op_kind,
                    n_meas,
                    init,
                    epsilon: 0.1,
                    eta: 1e-2,
                    steps: Steps::Count(200),
                    seed: 100 + i as u64,
                    ..Default::default()
                };
                let rep = flow_vs_gd(&cfg, 200).unwrap();
                assert_eq!(rep.probes.len(), 200);
                rep.max_deviation
            })
            .fold(0.0, f64::max)
    });
    let pass = worst <= 1e-8 && elapsed < Duration::from_secs(10);
    verdict(1, "flow/GD coincidence", pass, &format!("max rel dev {worst:.2e}, {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn criterion_2_adjoint_identity() {
    let (worst, elapsed) = timed(|| {
        let ops = [MeasOp::gaussian(10, 10, 240, 7).unwrap(), MeasOp::identity(10, 10)];
        let mut worst = 0.0f64;
        for (j, op) in ops.iter().enumerate() {
            let mut rng = stream(50 + j as u64, 0);
            for _ in 0..100 {
                let x = gaussian_matrix(&mut rng, 10, 10, 1.0);
                let y = gaussian_vector(&mut rng, op.count(), 1.0);
                let lhs: f64 = op.apply(&x).unwrap().iter().zip(&y).map(|(a, b)| a * b).sum();
                let rhs = x.inner(&op.adjoint(&y).unwrap());
                let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                worst = worst.max((lhs - rhs).abs() / (x.frobenius_norm() * ynorm));
            }
        }
        worst
    });
    let pass = worst <= 1e-10 && elapsed < Duration::from_secs(1);
    verdict(2, "adjoint identity", pass, &format!("max scaled gap {worst:.2e}, {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn criterion_3_derivative_formulas() {
    let cfg = gaussian_run(3);
    let (rep, elapsed) = timed(|| verify_derivatives(&cfg, 20).unwrap());
    let checks: Vec<_> = rep.probes.iter().flat_map(|p| &p.checks).collect();
    let ratios: Vec<f64> = checks.iter().filter_map(|c| c.ratio).collect();
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    let fine = checks.iter().map(|c| c.err_fine).fold(0.0, f64::max);
    let pass = rep.probes.len() == 20
        && rep.probes.iter().all(|p| p.skipped.is_none())
        && rep.all_pass()
        && elapsed < Duration::from_secs(10);
    verdict(
        3,
        "derivative formulas",
        pass,
        &format!(
            "{} ratios in [{lo:.3}, {hi:.3}], max fine-step error {fine:.2e}, {elapsed:.2?}",
            ratios.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_identity_suite() {
    let (failures, elapsed) = timed(|| {
        let shapes = [(12, 12, 2, 12), (7, 5, 2, 6), (6, 9, 3, 10), (10, 10, 2, 20)];
        let mut failures = Vec::new();
        for i in 0..100u64 {
            let (m, n, r, h) = shapes[i as usize % shapes.len()];
            let y = ProblemSpec::geometric_target(m, n, r, 2.0, 1.0).unwrap();
            let hyper = Hyper {
                alpha: 1.0,
                delta: 0.01,
                epsilon: 1e-3,
                eta: 1e-2,
                rho_target: 0.0,
            };
            let model = Model::new(ProblemSpec::new(y, r, h, hyper).unwrap()).unwrap();
            let scale = [1e-3, 1e-1, 1.0, 2.0][(i / 4) as usize % 4];
            let w = gaussian_matrix(&mut stream(i, 9), m + n, h, scale);
            let state = LiftedState::derive(w, &model, 0.0).unwrap();
            let rep = identity_suite(&state, &model);
            failures.extend(rep.failures().map(|f| format!("state {i}: {}", f.id)));
        }
        failures
    });
    let pass = failures.is_empty() && elapsed < Duration::from_secs(5);
    verdict(
        4,
        "identity suite",
        pass,
        &format!("{} failing items over 100 states, {elapsed:.2?}", failures.len()),
    );
    assert!(pass, "{failures:?}");
}

/// Endpoint log-slope `(ln v_to − ln v_from)/(t_to − t_from)` between two rows.
fn log_slope(out: &RunOutput, from: usize, to: usize, value: impl Fn(usize) -> f64) -> f64 {
    let rows: Vec<_> = out.rows().collect();
    (value(to).ln() - value(from).ln()) / (rows[to].t - rows[from].t)
}

#[test]
fn criterion_5_reference_run() {
    let cfg = reference_run();
    let (out, elapsed) = timed(|| run(&cfg).unwrap());
    let rows: Vec<_> = out.rows().collect();
    let rate = 0.4 * (2.0 / 5.0);
    let sqrt_yrr = 1.0f64;

    let cross = rows.iter().position(|r| r.sigma_r_a > sqrt_yrr).expect("sigma_r(A) crosses");
    let monotone = rows[..=cross].windows(2).all(|w| w[1].sigma_r_a >= w[0].sigma_r_a);
    let growth = log_slope(&out, 0, cross, |i| rows[i].sigma_r_a);

    let start = rows.iter().position(|r| r.sigma_r_a >= sqrt_yrr).unwrap();
    let reach = rows.iter().skip(start).position(|r| r.norm_r <= 1e-6).map(|i| i + start);
    let decay = reach.map(|end| log_slope(&out, start, end, |i| rows[i].norm_r));
    let imbalance = rows.iter().map(|r| r.norm_imbalance).fold(0.0, f64::max);
    let decay_text = decay.map_or("n/a".to_string(), |d| format!("{d:.3}"));
    let final_error = out.summary.final_error;

    let pass = final_error <= 1e-6
        && out.summary.steps <= 20_000
        && monotone
        && growth >= rate
        && decay.is_some_and(|d| d <= -rate)
        && imbalance <= 1e-4
        && elapsed < Duration::from_secs(60);
    verdict(
        5,
        "reference run",
        pass,
        &format!(
            "final {final_error:.3e} after {} steps, sigma_r(A) slope {growth:.3} (monotone {monotone}), \
             ||R|| slope {decay_text}, max imbalance {imbalance:.1e}, {elapsed:.2?}",
            out.summary.steps
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_gaussian_sensing() {
    let (result, elapsed) = timed(|| {
        let finals: Vec<f64> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..10u64)
                .map(|seed| s.spawn(move || run(&gaussian_run(seed)).unwrap().summary.final_error))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let rip = check_rip(&gaussian_run(0), 200, Some(3)).unwrap();
        (finals, rip)
    });
    let (finals, rip) = result;
    let good = finals.iter().filter(|e| **e <= 1e-3).count();
    let worst = finals.iter().copied().fold(0.0, f64::max);
    let pass = good >= 8 && rip.estimate.rho_hat < 0.5 && elapsed < Duration::from_secs(300);
    verdict(
        6,
        "gaussian sensing",
        pass,
        &format!(
            "{good}/10 seeds <= 1e-3 (worst {worst:.2e}), rho_hat {:.3}, {elapsed:.2?}",
            rip.estimate.rho_hat
        ),
    );
    assert!(pass);
}

/// `(applicable rows, violations)` of the perturbation bound in a run.
fn e_bound_audit(out: &RunOutput) -> (usize, usize) {
    (out.summary.ebound_applicable_rows, out.summary.ebound_violations)
}

#[test]
fn criterion_7_perturbation_bound_audit() {
    let mut audits = vec![("run 5", e_bound_audit(&run(&reference_run()).unwrap()))];
    for seed in 0..10 {
        audits.push(("run 6", e_bound_audit(&run(&gaussian_run(seed)).unwrap())));
    }
    // At η‖Y‖ = 4e-3 the implied β is 0.08, so the preconditions hold.
    let small_step = ExperimentConfig {
        eta: 2e-3,
        log_every: Some(50),
        snapshots: false,
        ..Default::default()
    };
    audits.push(("small-step identity", e_bound_audit(&run(&small_step).unwrap())));

    let mut detail = Vec::new();
    for name in ["run 5", "run 6", "small-step identity"] {
        let (a, v) = audits
            .iter()
            .filter(|(n, _)| *n == name)
            .fold((0, 0), |acc, (_, (a, v))| (acc.0 + a, acc.1 + v));
        detail.push(format!("{name}: {v} violations / {a} applicable rows"));
    }
    let violations: usize = audits.iter().map(|(_, (_, v))| v).sum();
    let applicable: usize = audits.iter().map(|(_, (a, _))| a).sum();
    let pass = violations == 0 && applicable > 0;
    verdict(7, "perturbation bound audit", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_8_phase_monitors() {
    let out = run(&reference_run()).unwrap();
    let s = &out.summary;
    let cross = out
        .logged
        .iter()
        .position(|l| l.row.sigma_r_a >= 1.0)
        .expect("sigma_r(A) reaches sqrt(Y_rr)");
    let warmup_bad = out.logged[..cross].iter().filter(|l| !l.warmup.all_pass()).count();
    let local_rows: Vec<_> = out
        .logged
        .iter()
        .filter(|l| l.row.t >= s.t1 && l.row.t <= s.t2 + 1e-9)
        .collect();
    let local_bad = local_rows
        .iter()
        .filter(|l| !l.local.get("norm_R").unwrap().pass)
        .count();
    let final_item = s.final_report.get("MR_inf").unwrap();
    let pass = warmup_bad == 0 && !local_rows.is_empty() && local_bad == 0 && final_item.pass;
    verdict(
        8,
        "warm-up/local monitors",
        pass,
        &format!(
            "delta_eff {:.3e}; {warmup_bad} warm-up violations in {cross} rows before sigma_r(A) = 1; \
             {local_bad} local violations in {} rows on [T1, T2]; ||R_T2|| {:.2e} <= MR_inf {:.2e}",
            s.delta_monitor,
            local_rows.len(),
            final_item.value,
            final_item.bound
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_determinism() {
    let cfg = reference_run();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, art_a) = run_to_dir(&cfg, a.path()).unwrap();
    let (_, art_b) = run_to_dir(&cfg, b.path()).unwrap();
    let read = |p: &std::path::Path| std::fs::read(p).unwrap();
    let csv_same = read(&art_a.trajectory) == read(&art_b.trajectory);
    let json_same = read(&art_a.summary) == read(&art_b.summary);
    let pass = csv_same && json_same;
    verdict(
        9,
        "determinism",
        pass,
        &format!("csv identical {csv_same}, json identical {json_same}"),
    );
    assert!(pass);
}
