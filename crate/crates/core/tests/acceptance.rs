//! Acceptance suite. One line per criterion; exits non-zero if any fails.
//!
//! Set `ACCEPTANCE_CRITERIA=1,4,9` to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use robust_precoding::conic::{solve, SolveStatus, VarId};
use robust_precoding::design::{
    order_blast, solve_max_delta, solve_minimax, solve_power_min, solve_power_min_with, DesignOptions,
    DesignStatus,
};
use robust_precoding::experiments::{sweep_delta, sweep_sinr, trial_estimates, ExperimentConfig, Method};
use robust_precoding::mse::{mse, sinr};
use robust_precoding::reformulation::{
    build_perfect_csi, build_robust_conservative, build_robust_exact, IntersectionMode,
};
use robust_precoding::thp::{simulate, ConstellationSpec};
use robust_precoding::{Complex64, ComplexMatrix, Design, PrecodingMode, ProblemData, QosTargets};

const CERT_TOL: f64 = 1e-6;
const C1_BUDGET_S: f64 = 300.0;
const C2_DELTA: f64 = 1e-9;
const C2_REL: f64 = 1e-5;
const C3_MSE_TOL: f64 = 1e-6;
const C3_SINR_TOL: f64 = 1e-4;
const C4_SLACK: f64 = -1e-9;
const C5_SAMPLE_TOL: f64 = 1e-6;
const C6_REL: f64 = 1e-6;
const C7_POWER_TOL: f64 = 1e-6;
const C7_DELTA_TOL: f64 = 1e-4;
const C8_TOL: f64 = 1e-3;
const C9_MSE_REL: f64 = 0.03;
const C9_SE: f64 = 3.0;
const C9_IDENTITY: f64 = 1e-12;
const C10_BUDGET_S: f64 = 1800.0;

const SEED: u64 = 20_240_601;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn instances(seed: u64, n: usize) -> Vec<ComplexMatrix> {
    (0..n).map(|t| trial_estimates(seed, t, 3, 3)).collect()
}

fn sphere(h: &ComplexMatrix, delta: f64, db: f64, mode: PrecodingMode) -> ProblemData {
    let k = h.nrows();
    ProblemData::spherical(h.clone(), vec![1.0; k], QosTargets::uniform_sinr_db(db, k).unwrap(), delta, mode).unwrap()
}

fn thp_blast(h: &ComplexMatrix, delta: f64, db: f64) -> ProblemData {
    sphere(h, delta, db, PrecodingMode::Thp).with_ordering(order_blast(h).order).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

fn no_certify() -> DesignOptions {
    DesignOptions {
        certify: false,
        intersection: IntersectionMode::Exact,
        ..DesignOptions::default()
    }
}

fn c1() -> Outcome {
    let start = Instant::now();
    let opts = DesignOptions {
        intersection: IntersectionMode::Exact,
        ..DesignOptions::default()
    };
    let (mut feasible, mut infeasible, mut other, mut bad) = (0, 0, 0, 0);
    let mut worst = f64::NEG_INFINITY;
    for h in instances(SEED, 100) {
        let data = sphere(&h, 0.05, 6.0, PrecodingMode::Linear);
        let out = solve_power_min_with(&data, &opts).unwrap();
        match out.status {
            DesignStatus::Optimal | DesignStatus::Uncertified => {
                feasible += 1;
                let excess = out
                    .certificates
                    .iter()
                    .zip(data.targets().zeta())
                    .map(|(c, z)| c - z)
                    .fold(f64::NEG_INFINITY, f64::max);
                worst = worst.max(excess);
                if excess > CERT_TOL {
                    bad += 1;
                }
            }
            DesignStatus::Infeasible => infeasible += 1,
            _ => other += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        bad == 0 && feasible > 0 && secs < C1_BUDGET_S,
        format!(
            "{feasible} feasible, {infeasible} infeasible, {other} unresolved; {bad} over ceiling; \
             max(cert - zeta) = {worst:.2e}; {secs:.1}s (budget {C1_BUDGET_S}s)"
        ),
    )
}

fn c2() -> Outcome {
    let (mut worst, mut bad, mut compared) = (0.0f64, 0, 0);
    for h in instances(SEED + 1, 100) {
        let perfect = solve_power_min(&sphere(&h, 0.0, 6.0, PrecodingMode::Linear)).unwrap();
        let robust = solve_power_min_with(&sphere(&h, C2_DELTA, 6.0, PrecodingMode::Linear), &no_certify()).unwrap();
        match (perfect.power, robust.power) {
            (Some(p), Some(r)) => {
                compared += 1;
                let e = rel(r, p);
                worst = worst.max(e);
                if e > C2_REL {
                    bad += 1;
                }
            }
            _ => bad += 1,
        }
    }
    (
        bad == 0,
        format!("{compared}/100 compared at radius {C2_DELTA:e}; max relative gap {worst:.2e}; {bad} exceptions"),
    )
}

fn c3() -> Outcome {
    let (mut mse_err, mut sinr_err, mut solves, mut bad) = (0.0f64, 0.0f64, 0, 0);
    for h in instances(SEED + 2, 100) {
        for db in [0.0, 6.0, 10.0] {
            for mode in [PrecodingMode::Linear, PrecodingMode::Thp] {
                let data = sphere(&h, 0.0, db, mode).with_ordering(order_blast(&h).order).unwrap();
                let out = solve_power_min(&data).unwrap();
                let Some(d) = out.design else {
                    bad += 1;
                    continue;
                };
                solves += 1;
                for (pos, &u) in data.ordering().iter().enumerate() {
                    let m = mse(&d, pos, &h.row(u), 1.0);
                    let z = data.targets().zeta()[u];
                    let s = sinr(&d, pos, &h.row(u), 1.0).value;
                    let e1 = (m - z).abs();
                    let e2 = (s - (1.0 / m - 1.0)).abs();
                    mse_err = mse_err.max(e1);
                    sinr_err = sinr_err.max(e2);
                    if e1 > C3_MSE_TOL || e2 > C3_SINR_TOL {
                        bad += 1;
                    }
                }
            }
        }
    }
    (
        bad == 0,
        format!("{solves} solves; max |MSE - zeta| = {mse_err:.2e}; max |SINR - (1/MSE - 1)| = {sinr_err:.2e}"),
    )
}

fn cnormal(rng: &mut ChaCha8Rng, scale: f64) -> Complex64 {
    Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * scale
}

fn c4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let (mut pairs, mut draws, mut worst) = (0usize, 0usize, f64::INFINITY);
    while pairs < 10_000 {
        draws += 1;
        let k = rng.gen_range(1..=4);
        let nt = rng.gen_range(k..=k + 2);
        let p: Vec<Complex64> = (0..nt * k).map(|_| cnormal(&mut rng, 1.0)).collect();
        let p = ComplexMatrix::from_row_slice(nt, k, &p).unwrap();
        let h: Vec<Complex64> = (0..nt).map(|_| cnormal(&mut rng, std::f64::consts::FRAC_1_SQRT_2)).collect();
        let sigma = rng.gen_range(0.05..1.5);
        let user = rng.gen_range(0..k);
        let hp = ComplexMatrix::row_times(&h, &p);
        // Gains near the MMSE value and feedback near the known interference keep MSE <= 1 likely.
        let energy: f64 = hp.iter().map(|z| z.norm_sqr()).sum::<f64>() + sigma * sigma;
        let g = hp[user].norm() / energy * rng.gen_range(0.5..1.5);
        let thp = rng.gen_bool(0.5);
        let mut b = vec![Complex64::new(0.0, 0.0); k * k];
        for i in 0..k {
            for j in 0..i {
                if thp {
                    let base = if i == user { hp[j] * g } else { Complex64::new(0.0, 0.0) };
                    b[i * k + j] = base + cnormal(&mut rng, 0.1);
                }
            }
        }
        let mut gains: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..2.0)).collect();
        gains[user] = g;
        let b = ComplexMatrix::from_row_slice(k, k, &b).unwrap();
        // Align the phase of the desired term with the real symbol axis.
        let phase = hp[user].conj() / hp[user].norm().max(1e-300);
        let rotated: Vec<Complex64> = (0..nt * k)
            .map(|e| {
                let (r, c) = (e / k, e % k);
                if c == user {
                    p.get(r, c) * phase
                } else {
                    p.get(r, c)
                }
            })
            .collect();
        let p = ComplexMatrix::from_row_slice(nt, k, &rotated).unwrap();
        let Ok(d) = Design::new(p, b, gains) else { continue };
        let m = mse(&d, user, &h, sigma);
        if m.is_nan() || m > 1.0 {
            continue;
        }
        let s = sinr(&d, user, &h, sigma).value;
        worst = worst.min(s - (1.0 / m - 1.0));
        pairs += 1;
    }
    (
        worst >= C4_SLACK,
        format!("{pairs} pairs with MSE <= 1 ({draws} draws); min SINR - (1/MSE - 1) = {worst:.3e}"),
    )
}

fn c5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let (mut designs, mut sample_bad, mut worst) = (0, 0, f64::NEG_INFINITY);
    let (mut violators, mut rejected, mut pin_other) = (0, 0, 0);
    for (t, h) in instances(SEED + 4, 100).into_iter().enumerate() {
        let data = if t % 2 == 0 {
            sphere(&h, 0.05, 6.0, PrecodingMode::Linear)
        } else {
            thp_blast(&h, 0.05, 6.0)
        };
        let out = solve_power_min_with(&data, &no_certify()).unwrap();
        if let Some(d) = &out.design {
            designs += 1;
            for (pos, &u) in data.ordering().iter().enumerate() {
                let z = data.targets().zeta()[u];
                for c in data.regions()[u].sample(1000, &mut rng, 0.5) {
                    let e = mse(d, pos, &c.to_complex(), data.sigma()[u]) - z;
                    worst = worst.max(e);
                    if e > C5_SAMPLE_TOL {
                        sample_bad += 1;
                    }
                }
            }
        }

        // A nominal design is tight at the estimate, so some admissible channel breaks it.
        let nominal = build_perfect_csi(&data).unwrap();
        let r = solve(&nominal.program, &DesignOptions::default().tolerances);
        if r.status != SolveStatus::Optimal {
            continue;
        }
        let d = nominal.layout.recover(&r.point).unwrap();
        let violated = data.ordering().iter().enumerate().any(|(pos, &u)| {
            let z = data.targets().zeta()[u];
            data.regions()[u]
                .sample(1000, &mut rng, 0.5)
                .iter()
                .any(|c| mse(&d, pos, &c.to_complex(), data.sigma()[u]) > z + C5_SAMPLE_TOL)
        });
        if !violated {
            continue;
        }
        violators += 1;
        // Substitute the nominal design into the robust program; only multipliers stay free.
        let robust = build_robust_exact(&data).unwrap();
        let fixed: Vec<(VarId, f64)> = nominal
            .layout
            .design_vars()
            .iter()
            .zip(robust.layout.design_vars())
            .map(|(&from, to)| (to, r.point[from.0]))
            .collect();
        let pinned = robust.program.with_fixed(&fixed).unwrap();
        match solve(&pinned, &DesignOptions::default().tolerances).status {
            SolveStatus::Infeasible => rejected += 1,
            SolveStatus::Optimal => {}
            _ => pin_other += 1,
        }
    }
    (
        designs > 0 && sample_bad == 0 && violators > 0 && rejected == violators,
        format!(
            "{designs} robust designs, {sample_bad} sampled violations (max MSE - zeta = {worst:.2e}); \
             {rejected}/{violators} violating designs rejected by the LMI ({pin_other} unresolved)"
        ),
    )
}

fn c6() -> Outcome {
    let power = |f: robust_precoding::reformulation::Formulation| {
        let r = solve(&f.program, &DesignOptions::default().tolerances);
        match r.status {
            SolveStatus::Optimal => Some(f.layout.power(&r.point)),
            SolveStatus::Infeasible => Some(f64::INFINITY),
            _ => None,
        }
    };
    let (mut ok, mut bad, mut unresolved, mut finite) = (0, 0, 0, 0);
    for h in instances(SEED + 5, 50) {
        let data = ProblemData::interval(
            h.clone(),
            vec![1.0; 3],
            QosTargets::uniform_sinr_db(6.0, 3).unwrap(),
            0.03,
            PrecodingMode::Linear,
        )
        .unwrap();
        let perfect = power(build_perfect_csi(&data).unwrap());
        let exact = power(build_robust_exact(&data).unwrap());
        let conservative = power(build_robust_conservative(&data).unwrap());
        let (Some(p), Some(e), Some(c)) = (perfect, exact, conservative) else {
            unresolved += 1;
            continue;
        };
        if c.is_finite() {
            finite += 1;
        }
        let ge = |a: f64, b: f64| a == f64::INFINITY || a >= b * (1.0 - C6_REL);
        if ge(c, e) && ge(e, p) {
            ok += 1;
        } else {
            bad += 1;
        }
    }
    (
        bad == 0 && unresolved == 0,
        format!("{ok}/50 ordered ({finite} with finite conservative power); {bad} exceptions, {unresolved} unresolved"),
    )
}

fn c7() -> Outcome {
    let (mut power_bad, mut delta_bad, mut compared) = (0, 0, 0);
    let (mut worst_p, mut worst_d) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for h in instances(SEED + 6, 50) {
        let lin = sphere(&h, 0.05, 10.0, PrecodingMode::Linear);
        let thp = thp_blast(&h, 0.05, 10.0);
        let pl = solve_power_min_with(&lin, &no_certify()).unwrap();
        let pt = solve_power_min_with(&thp, &no_certify()).unwrap();
        match (pl.status, pt.status) {
            (DesignStatus::Optimal, DesignStatus::Optimal) => {
                compared += 1;
                let e = pt.power.unwrap() - pl.power.unwrap();
                worst_p = worst_p.max(e);
                if e > C7_POWER_TOL {
                    power_bad += 1;
                }
            }
            (DesignStatus::Optimal, _) => power_bad += 1,
            _ => {}
        }
        let dl = solve_max_delta(&lin).unwrap().delta_max;
        let dt = solve_max_delta(&thp).unwrap().delta_max;
        worst_d = worst_d.max(dl - dt);
        if dl > dt + C7_DELTA_TOL {
            delta_bad += 1;
        }
    }
    (
        power_bad == 0 && delta_bad == 0,
        format!(
            "power: {compared} compared, max(thp - linear) = {worst_p:.2e}, {power_bad} exceptions; \
             radius: max(linear - thp) = {worst_d:.2e}, {delta_bad} exceptions"
        ),
    )
}

fn scalar(sigma: f64, zeta: f64) -> ProblemData {
    let one = ComplexMatrix::identity(1);
    ProblemData::spherical(one, vec![sigma], QosTargets::from_mse(vec![zeta]).unwrap(), 0.0, PrecodingMode::Linear)
        .unwrap()
}

fn c8() -> Outcome {
    let mut worst_minimax = 0.0f64;
    let mut worst_grid = 0.0f64;
    let mut ok = true;
    for p_total in [0.5, 1.0, 4.0, 9.0, 99.0] {
        let out = solve_minimax(&scalar(1.0, 1.0), p_total).unwrap();
        let closed = 1.0 / (1.0 + p_total);
        // Grid oracle over (|p|, g): MSE = (g |p| - 1)^2 + g^2.
        let n = 2000;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            let p = p_total.sqrt() * i as f64 / n as f64;
            // Inner minimum over g is closed form; a grid around it confirms.
            let g_star = p / (p * p + 1.0);
            for j in -20..=20 {
                let g = (g_star + j as f64 * 1e-4).max(0.0);
                best = best.min((g * p - 1.0).powi(2) + g * g);
            }
        }
        worst_minimax = worst_minimax.max((out.zeta0 - closed).abs());
        worst_grid = worst_grid.max((best - closed).abs());
        ok &= (out.zeta0 - closed).abs() <= C8_TOL && (best - closed).abs() <= C8_TOL;
    }

    let zeta = 0.25;
    let out = solve_max_delta(&scalar(1e-6, zeta)).unwrap();
    let n = 300_000;
    let grid = (1..=n)
        .map(|i| 3.0 * i as f64 / n as f64)
        .map(|c| (zeta.sqrt() - (c - 1.0f64).abs()) / c)
        .fold(f64::NEG_INFINITY, f64::max);
    let e = (out.delta_max - grid).abs();
    ok &= e <= C8_TOL;
    (
        ok,
        format!(
            "minimax: max |zeta0 - 1/(1+P)| = {worst_minimax:.2e} (grid {worst_grid:.2e}); \
             scalar radius {:.5} vs grid {grid:.5}",
            out.delta_max
        ),
    )
}

fn c9() -> Outcome {
    let c = ConstellationSpec::qam(64).unwrap();
    let loss = 64.0 / 63.0;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 8);
    let (mut runs, mut mse_err, mut identity) = (0, 0.0f64, 0.0f64);
    let mut voronoi = true;
    // The variance check is one run at 3 SE; the other runs are reported only.
    let (mut gated_z, mut outside, mut streams) = (None, 0, 0);
    for (t, h) in instances(SEED + 8, 20).into_iter().enumerate() {
        let data = thp_blast(&h, 0.05, 10.0);
        let Some(d) = solve_power_min_with(&data, &no_certify()).unwrap().design else { continue };
        // Actual channels drawn from the regions, rows in precoding order.
        let rows: Vec<Complex64> = data
            .ordering()
            .iter()
            .flat_map(|&u| data.regions()[u].sample(1, &mut rng, 0.5)[0].to_complex())
            .collect();
        let actual = ComplexMatrix::from_row_slice(3, 3, &rows).unwrap();
        let sigma = [1.0; 3];
        let r = simulate(&d, &actual, &sigma, 100_000, c, t as u64).unwrap();
        runs += 1;
        for (k, s) in sigma.iter().enumerate() {
            let analytic = mse(&d, k, &actual.row(k), *s);
            mse_err = mse_err.max(rel(r.mse[k], analytic));
        }
        let z = (1..3)
            .map(|k| (r.v_variance[k] - loss).abs() / r.v_variance_se[k])
            .fold(0.0f64, f64::max);
        gated_z.get_or_insert(z);
        outside += (1..3)
            .filter(|&k| (r.v_variance[k] - loss).abs() > C9_SE * r.v_variance_se[k])
            .count();
        streams += 2;
        identity = identity.max(r.identity_residual);
        voronoi &= r.in_voronoi;
    }
    (
        gated_z.is_some_and(|z| z <= C9_SE) && mse_err <= C9_MSE_REL && identity <= C9_IDENTITY && voronoi,
        format!(
            "{runs} runs; max relative MSE error {mse_err:.4}; first run |var - M/(M-1)| / SE = {:.2} \
             ({outside}/{streams} streams beyond {C9_SE} SE over all runs); identity residual {identity:.1e}",
            gated_z.unwrap_or(f64::NAN)
        ),
    )
}

fn nonincreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

fn c10() -> Outcome {
    let start = Instant::now();
    let base = ExperimentConfig {
        trials: 200,
        seed: Some(SEED + 9),
        targets_db: (0..=10).map(|i| 2.0 * i as f64).collect(),
        oracle_samples: 2000,
        ..ExperimentConfig::default()
    };
    let s = sweep_sinr(&base).unwrap();
    let d = sweep_delta(&base).unwrap();
    let frac = |r: &robust_precoding::experiments::SweepResult, m| r.curve(m).iter().map(|x| x.fraction()).collect::<Vec<_>>();
    let mut notes = Vec::new();
    let mut ok = true;
    for m in Method::ALL {
        if !nonincreasing(&frac(&s, m)) || !nonincreasing(&frac(&d, m)) {
            ok = false;
            notes.push(format!("{m} not monotone"));
        }
    }
    for r in [&s, &d] {
        let lin = frac(r, Method::LinearRobust);
        for m in [Method::ThpRobustOrder1, Method::ThpRobustOrder2] {
            if frac(r, m).iter().zip(&lin).any(|(t, l)| t < l) {
                ok = false;
                notes.push(format!("{m} below linear"));
            }
        }
    }
    let perfect = s.curve(Method::PerfectCsi);
    if perfect.iter().any(|x| x.fraction() < 1.0 || x.avg_power.is_none()) {
        ok = false;
        notes.push("perfect-csi not feasible everywhere".into());
    }
    for m in [Method::LinearRobust, Method::ThpRobustOrder1, Method::ThpRobustOrder2] {
        let curve = s.curve(m);
        match curve.iter().position(|x| x.diverged()) {
            Some(i) => notes.push(format!("{m} diverges at {} dB", curve[i].target_db)),
            None => {
                ok = false;
                notes.push(format!("{m} never diverges"));
            }
        }
    }
    let unresolved = s
        .records
        .iter()
        .chain(&d.records)
        .filter(|r| matches!(r.verdict.name(), "uncertified" | "failed"))
        .count();
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < C10_BUDGET_S;
    notes.push(format!("{unresolved} uncertified/failed records"));
    notes.push(format!("{secs:.0}s (budget {C10_BUDGET_S}s)"));
    (ok, notes.join("; "))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("robust designs certified by the worst-case oracle", c1),
        ("vanishing radius recovers nominal power", c2),
        ("nominal optimum meets targets with equality", c3),
        ("MSE ceiling implies SINR floor", c4),
        ("LMI feasibility matches sampled robustness", c5),
        ("conservative >= exact >= nominal power on boxes", c6),
        ("THP dominates linear in power and radius", c7),
        ("scalar closed forms", c8),
        ("simulator matches analytic MSE", c9),
        ("sweep trends", c10),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {n:>2} {} {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
