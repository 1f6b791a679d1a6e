//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `HERIT_ACCEPTANCE=1,2,8` runs a subset. With `HERIT_ACCEPTANCE_STRICT=1`
//! the process exits non-zero when any criterion fails; otherwise failures
//! are reported but do not fail `cargo test`.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use herit_core::bootstrap::{fitted_variances, recolor, whiten, Recolor};
use herit_core::calibrate::{decide, DecideConfig, Verdict};
use herit_core::data::{standardize, Phenotype, TraitParams};
use herit_core::lasso::{lasso_solve, lambda_max, objective, LassoOptions};
use herit_core::matrix::ColMatrix;
use herit_core::mle::{fit_heritability, kinship_eigen, profile_loglik, ETA_MAX};
use herit_core::pipeline::{run, Mode, PipelineConfig, RunResult};
use herit_core::rng::stream;
use herit_core::simulate::{simulate, simulate_genotypes, simulate_trait, SimConfig, SimOutput};

struct Outcome {
    pass: bool,
    detail: String,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len().is_multiple_of(2) {
        0.5 * (s[m - 1] + s[m])
    } else {
        s[m]
    }
}

// ---------------------------------------------------------------------------
// 1. Likelihood correctness

fn kinship(z: &ColMatrix) -> DMatrix<f64> {
    let m = DMatrix::from_column_slice(z.nrows(), z.ncols(), z.as_slice());
    &m * m.transpose() / z.ncols() as f64
}

/// Dense Gaussian log-density with the variance scale maximized out,
/// times `2 / n`.
fn dense_profile(eta: f64, r: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let n = y.len();
    let v = r * eta + DMatrix::identity(n, n) * (1.0 - eta);
    let chol = v.cholesky().expect("positive definite");
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let s2 = y.dot(&chol.solve(y)) / n as f64;
    -(2.0 * std::f64::consts::PI * s2).ln() - logdet / n as f64 - 1.0
}

fn dense_argmax(r: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let grid = 2000;
    let step = ETA_MAX / grid as f64;
    let best = (0..=grid)
        .map(|k| k as f64 * step)
        .max_by(|&a, &b| dense_profile(a, r, y).total_cmp(&dense_profile(b, r, y)))
        .unwrap();
    let (mut a, mut b) = ((best - step).max(0.0), (best + step).min(ETA_MAX));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-12 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if dense_profile(c, r, y) >= dense_profile(d, r, y) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

fn small_instance(seed: u64) -> (ColMatrix, Vec<f64>) {
    let mut rng = stream(seed, &[1000]);
    let n_snps = rng.gen_range(5..150);
    let z = standardize(&simulate_genotypes(30, n_snps, (0.1, 0.5), seed)).unwrap();
    let q = rng.gen_range(0.05..1.0);
    let eta = rng.gen_range(0.05..0.95);
    let se = z.n_snps() as f64 * q * (1.0 - eta) / eta;
    let (y, _, _) = simulate_trait(&z, &TraitParams::new(q, 1.0, se).unwrap(), seed).unwrap();
    (z.into_matrix(), y.into_inner())
}

fn criterion_1() -> Outcome {
    let mut worst_const = 0.0f64;
    let mut worst_arg = 0.0f64;
    for seed in 0..20 {
        let (z, y) = small_instance(seed);
        let ke = kinship_eigen(&z, &y).unwrap();
        let r = kinship(&z);
        let yv = DVector::from_column_slice(&y);
        let offsets: Vec<f64> = (0..=40)
            .map(|k| {
                let eta = 0.999 * k as f64 / 40.0;
                dense_profile(eta, &r, &yv) - profile_loglik(eta, &ke).unwrap()
            })
            .collect();
        let lo = offsets.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = offsets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        worst_const = worst_const.max(hi - lo);
        let fit = fit_heritability(&ke).unwrap();
        worst_arg = worst_arg.max((fit.eta_hat - dense_argmax(&r, &yv)).abs());
    }
    Outcome {
        pass: worst_const < 1e-9 && worst_arg <= 1e-6,
        detail: format!(
            "20 instances, n=30: spread of the offset {worst_const:.1e}, largest argmax gap {worst_arg:.1e} (tol 1e-6)"
        ),
    }
}

// ---------------------------------------------------------------------------
// 2. Lasso against dense grid search

/// Nested grid search on the box `|u_j| <= B`, where `B = ||y||^2 / lambda`
/// bounds every minimizer since the criterion at zero is `||y||^2`.
fn grid_lasso(y: &[f64], z: &ColMatrix, lambda: f64) -> Vec<f64> {
    let p = z.ncols();
    let bound = y.iter().map(|v| v * v).sum::<f64>() / lambda;
    let side = 20i64;
    let width = (2 * side + 1) as usize;
    let mut centre = vec![0.0; p];
    let mut half = bound;
    let mut u = vec![0.0; p];
    while half / side as f64 > 2e-6 {
        let step = half / side as f64;
        let mut best = (f64::INFINITY, centre.clone());
        for idx in 0..width.pow(p as u32) {
            let mut r = idx;
            for (k, uk) in u.iter_mut().enumerate() {
                *uk = centre[k] + ((r % width) as i64 - side) as f64 * step;
                r /= width;
            }
            let f = objective(y, z, &u, lambda);
            if f < best.0 {
                best = (f, u.clone());
            }
        }
        centre = best.1;
        half = 4.0 * step;
    }
    centre
}

fn criterion_2() -> Outcome {
    let mut rng = stream(2, &[2000]);
    let mut worst = 0.0f64;
    let mut monotone = true;
    for _ in 0..25 {
        let n = rng.gen_range(3..=6);
        let p = rng.gen_range(1..=3usize).min(n - 1);
        let cols: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let z = ColMatrix::from_columns(n, &cols).unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lambda = rng.gen_range(0.02..0.9) * lambda_max(&y, &z);
        let opts = LassoOptions {
            tol: 1e-12,
            record_trace: true,
            ..LassoOptions::default()
        };
        let fit = lasso_solve(&y, &z, lambda, None, &opts).unwrap();
        let grid = grid_lasso(&y, &z, lambda);
        for (a, b) in fit.coefficients.iter().zip(&grid) {
            worst = worst.max((a - b).abs());
        }
        monotone &= fit
            .trace
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
    }
    Outcome {
        pass: worst <= 5e-3 && monotone,
        detail: format!("25 instances: largest coefficient gap {worst:.1e} (tol 5e-3), sweep-monotone {monotone}"),
    }
}

// ---------------------------------------------------------------------------
// desk-scale simulations

fn desk(q: f64, eta: f64, seed: u64) -> SimOutput {
    simulate(&SimConfig {
        n: 500,
        n_snps: 5000,
        params: TraitParams::new(q, 1.0, 1.0).unwrap(),
        target_eta: Some(eta),
        seed,
        ..SimConfig::default()
    })
    .unwrap()
}

fn pipeline(mode: Mode, seed: u64) -> PipelineConfig {
    PipelineConfig {
        mode,
        seed,
        ..PipelineConfig::default()
    }
}

fn criterion_3() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for eta in [0.4, 0.6] {
        let mut etas = Vec::new();
        for seed in 0..50 {
            let sim = desk(1.0, eta, 3000 + seed);
            let r = run(&sim.y, &sim.z, None, &pipeline(Mode::HiLMM, seed)).unwrap();
            etas.push(r.fit.eta_hat);
        }
        let mean = etas.iter().sum::<f64>() / etas.len() as f64;
        let sd = (etas.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (etas.len() - 1) as f64).sqrt();
        pass &= (mean - eta).abs() <= 0.05;
        parts.push(format!("eta*={eta}: mean {mean:.4} (sd {sd:.3})"));
    }
    Outcome {
        pass,
        detail: format!("50 seeds each, HiLMM, q=1: {} (tol 0.05)", parts.join(", ")),
    }
}

const SPARSE_Q: f64 = 10.0 / 5000.0;
const POLY_Q: f64 = 500.0 / 5000.0;
const DESK_ETA: f64 = 0.6;

struct SparseRun {
    esther: Option<RunResult>,
    secs: f64,
}

fn esther_run(seed: u64) -> SparseRun {
    let start = Instant::now();
    let sim = desk(SPARSE_Q, DESK_ETA, seed);
    let esther = run(&sim.y, &sim.z, None, &pipeline(Mode::EstHer, seed)).ok();
    SparseRun {
        esther,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn criterion_4(runs: &[SparseRun]) -> (Outcome, f64) {
    let start = Instant::now();
    let mut w_est = Vec::new();
    let mut w_hil = Vec::new();
    let mut ordered = 0;
    let mut empty = 0;
    for (seed, r) in runs.iter().enumerate() {
        let seed = seed as u64;
        let sim = desk(SPARSE_Q, DESK_ETA, seed);
        let hil = run(&sim.y, &sim.z, None, &pipeline(Mode::HiLMM, seed)).unwrap();
        let support: Vec<usize> = sim.support.iter().filter_map(|&j| sim.z.position_of_source(j)).collect();
        let ora = run(&sim.y, &sim.z, None, &pipeline(Mode::Oracle(support), seed)).unwrap();
        let (wo, wh) = (ora.bootstrap.width(), hil.bootstrap.width());
        // an empty selection has no interval; it counts against selection
        let we = r.esther.as_ref().map_or(f64::INFINITY, |e| e.bootstrap.width());
        empty += usize::from(r.esther.is_none());
        if wo <= we && we <= wh {
            ordered += 1;
        }
        w_est.push(we);
        w_hil.push(wh);
    }
    let ratio = median(&w_est) / median(&w_hil);
    let frac = ordered as f64 / runs.len() as f64;
    let secs = start.elapsed().as_secs_f64() + runs.iter().map(|r| r.secs).sum::<f64>();
    let outcome = Outcome {
        pass: ratio <= 0.6 && frac >= 0.7,
        detail: format!(
            "{} seeds: median width EstHer {:.3} vs HiLMM {:.3}, ratio {ratio:.3} (need <= 0.6); \
             Oracle <= EstHer <= HiLMM in {ordered}/{} (need >= 70%); empty selections {empty}",
            runs.len(),
            median(&w_est),
            median(&w_hil),
            runs.len()
        ),
    };
    (outcome, secs)
}

fn criterion_5(runs: &[SparseRun]) -> Outcome {
    let covered = runs
        .iter()
        .filter(|r| r.esther.as_ref().is_some_and(|e| e.bootstrap.covers(DESK_ETA)))
        .count();
    let empty = runs.iter().filter(|r| r.esther.is_none()).count();
    let widths: Vec<f64> = runs.iter().filter_map(|r| r.esther.as_ref().map(|e| e.bootstrap.width())).collect();
    Outcome {
        pass: covered >= 88,
        detail: format!(
            "{covered}/{} EstHer intervals cover eta*={DESK_ETA} (need >= 88); empty selections {empty}; median width {:.3}",
            runs.len(),
            median(&widths)
        ),
    }
}

fn criterion_6() -> Outcome {
    let mut sparse = Vec::new();
    let mut poly = Vec::new();
    let mut wins = 0;
    let mut verdicts = [[0usize; 2]; 2];
    for seed in 0..20u64 {
        let overlap = |q: f64| {
            let sim = desk(q, DESK_ETA, 6000 + seed);
            let cfg = DecideConfig {
                pipeline: pipeline(Mode::EstHer, seed),
                ..DecideConfig::default()
            };
            decide(&sim.y, &sim.z, None, &cfg).unwrap()
        };
        let s = overlap(SPARSE_Q);
        let p = overlap(POLY_Q);
        if s.decision.overlap_count > p.decision.overlap_count {
            wins += 1;
        }
        verdicts[0][usize::from(s.decision.verdict == Verdict::HiLMM)] += 1;
        verdicts[1][usize::from(p.decision.verdict == Verdict::HiLMM)] += 1;
        sparse.push(s.decision.overlap_count);
        poly.push(p.decision.overlap_count);
    }
    let (ms, mp) = (median(&sparse), median(&poly));
    let median_verdicts = ms > 10.0 && mp <= 10.0;
    Outcome {
        pass: wins >= 16 && median_verdicts,
        detail: format!(
            "20 paired seeds: sparse overlap exceeds polygenic in {wins}/20 (need >= 16); median overlap sparse {ms:.2} \
             ({}), polygenic {mp:.2} ({}); verdicts EstHer/HiLMM sparse {}/{}, polygenic {}/{}",
            if ms > 10.0 { "esther" } else { "hilmm" },
            if mp > 10.0 { "esther" } else { "hilmm" },
            verdicts[0][0],
            verdicts[0][1],
            verdicts[1][0],
            verdicts[1][1]
        ),
    }
}

// ---------------------------------------------------------------------------
// 7. Determinism across worker counts

fn herit(dir: &Path, threads: &str, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_herit"))
        .current_dir(dir)
        .arg("--threads")
        .arg(threads)
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("sim.toml"),
        "n = 300\nn_snps = 2000\nq = 0.005\ntarget_eta = 0.6\nfixed_effects = 2\nseed = 7\n",
    )
    .unwrap();
    let data = [
        "--genotypes", "s1/genotypes.csv", "--phenotype", "s1/phenotype.csv", "--covariates", "s1/covariates.csv",
        "--truth", "s1/truth.toml", "--seed", "11",
    ];
    let mut files = Vec::new();
    let mut ok = true;
    for t in ["1", "4"] {
        ok &= herit(d, t, &["simulate", "--config", "sim.toml", "--out-dir", &format!("s{t}")]);
        for mode in ["esther", "hilmm", "oracle"] {
            let out = format!("{mode}{t}.toml");
            ok &= herit(d, t, &[&["estimate", "--mode", mode, "--out", &out][..], &data].concat());
        }
        ok &= herit(d, t, &[&["decide", "--out", &format!("decide{t}.toml")][..], &data].concat());
        ok &= herit(
            d,
            t,
            &[
                "calibrate", "--genotypes", "s1/genotypes.csv", "--eta-grid", "0.5,0.7", "--thresholds",
                "0.7,0.76,0.8", "--reps", "2", "--subsamples", "20", "--seed", "5", "--out", &format!("cal{t}.csv"),
            ],
        );
    }
    for f in ["genotypes.csv", "phenotype.csv", "covariates.csv", "truth.toml"] {
        files.push((format!("s1/{f}"), format!("s4/{f}")));
    }
    for stem in ["esther", "hilmm", "oracle", "decide"] {
        files.push((format!("{stem}1.toml"), format!("{stem}4.toml")));
    }
    files.push(("cal1.csv".into(), "cal4.csv".into()));
    let mut identical = 0;
    for (a, b) in &files {
        let x = std::fs::read(d.join(a));
        let y = std::fs::read(d.join(b));
        if matches!((&x, &y), (Ok(x), Ok(y)) if x == y) {
            identical += 1;
        }
    }
    Outcome {
        pass: ok && identical == files.len(),
        detail: format!(
            "commands succeeded {ok}; {identical}/{} outputs byte-identical between 1 and 4 threads",
            files.len()
        ),
    }
}

// ---------------------------------------------------------------------------
// 8. Identities

fn criterion_8() -> Outcome {
    let mut scale = 0.0f64;
    let mut fixed = 0.0f64;
    let mut trace = 0.0f64;
    let mut round_trip = 0.0f64;
    for seed in 0..10u64 {
        let (z, y) = small_instance(500 + seed);
        let ke = kinship_eigen(&z, &y).unwrap();
        let fit = fit_heritability(&ke).unwrap();
        let doubled = fit_heritability(&ke.with_rotated(ke.rotated.iter().map(|v| 2.0 * v).collect())).unwrap();
        scale = scale.max((fit.eta_hat - doubled.eta_hat).abs());
        let tr = kinship(&z).trace();
        trace = trace.max((tr - ke.lambdas.iter().sum::<f64>()).abs() / tr);
        let gamma = fitted_variances(&ke, &fit);
        let white = whiten(&ke, &fit);
        let idx: Vec<usize> = (0..ke.n()).collect();
        let back = recolor(&gamma, &white, &idx, Recolor::SqrtGamma);
        for (a, b) in back.iter().zip(&ke.rotated) {
            round_trip = round_trip.max((a - b).abs() / b.abs().max(1.0));
        }

        let sim = simulate(&SimConfig {
            n: 120,
            n_snps: 400,
            params: TraitParams::new(0.03, 1.0, 1.0).unwrap(),
            target_eta: Some(0.3 + 0.05 * seed as f64),
            fixed_effect_count: 3,
            seed: 700 + seed,
            ..SimConfig::default()
        })
        .unwrap();
        let x = sim.x.as_ref().unwrap();
        let mut rng = stream(seed, &[8000]);
        let shift: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let xb = x.matrix().mul_vec(&shift);
        let y2 = Phenotype::new(sim.y.values().iter().zip(&xb).map(|(a, b)| a + b).collect()).unwrap();
        let support: Vec<usize> = sim.support.iter().filter_map(|&j| sim.z.position_of_source(j)).collect();
        for mode in [Mode::HiLMM, Mode::Oracle(support)] {
            let cfg = PipelineConfig {
                bootstrap: herit_core::bootstrap::BootstrapConfig {
                    replicates: 20,
                    ..Default::default()
                },
                ..pipeline(mode, seed)
            };
            let a = run(&sim.y, &sim.z, Some(x), &cfg).unwrap();
            let b = run(&y2, &sim.z, Some(x), &cfg).unwrap();
            fixed = fixed.max((a.fit.eta_hat - b.fit.eta_hat).abs());
        }
    }
    let tol = 1e-8;
    Outcome {
        pass: scale <= tol && fixed <= tol && trace <= tol && round_trip <= tol,
        detail: format!(
            "scale {scale:.1e}, fixed effects {fixed:.1e}, trace {trace:.1e}, whiten/recolor {round_trip:.1e} (tol 1e-8)"
        ),
    }
}

// ---------------------------------------------------------------------------

fn report(id: usize, name: &str, limit_secs: f64, secs: f64, o: Outcome) -> bool {
    let in_time = secs < limit_secs;
    let pass = o.pass && in_time;
    let limit = if limit_secs.is_finite() {
        format!("limit {limit_secs:.0}s")
    } else {
        "no limit".to_string()
    };
    println!(
        "criterion {id} {}: {name}: {}; {secs:.1}s ({limit})",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
    );
    pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}

fn main() {
    // ignore harness flags such as --nocapture or a test-name filter
    let wanted: Vec<usize> = std::env::var("HERIT_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_else(|| (1..=8).collect());
    let strict = std::env::var("HERIT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut results = Vec::new();
    let on = |k: usize| wanted.contains(&k);

    if on(1) {
        let (o, s) = timed(criterion_1);
        results.push(report(1, "likelihood correctness", 10.0, s, o));
    }
    if on(2) {
        let (o, s) = timed(criterion_2);
        results.push(report(2, "lasso against grid search", 30.0, s, o));
    }
    if on(3) {
        let (o, s) = timed(criterion_3);
        results.push(report(3, "unbiasedness without selection", 600.0, s, o));
    }
    if on(4) || on(5) {
        let count = if on(5) { 100 } else { 20 };
        let runs: Vec<SparseRun> = (0..count).map(esther_run).collect();
        if on(4) {
            let (o, s) = criterion_4(&runs[..20]);
            results.push(report(4, "variance reduction via selection", 1200.0, s, o));
        }
        if on(5) {
            let (o, s) = timed(|| criterion_5(&runs));
            let s = s + runs.iter().map(|r| r.secs).sum::<f64>();
            results.push(report(5, "bootstrap coverage", 1800.0, s, o));
        }
    }
    if on(6) {
        let (o, s) = timed(criterion_6);
        results.push(report(6, "decision criterion separation", 1800.0, s, o));
    }
    if on(7) {
        let (o, s) = timed(criterion_7);
        results.push(report(7, "determinism across worker counts", 300.0, s, o));
    }
    if on(8) {
        let (o, s) = timed(criterion_8);
        results.push(report(8, "identities", f64::INFINITY, s, o));
    }
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}
