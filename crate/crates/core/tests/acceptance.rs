//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `CMSBM_ACCEPTANCE_ONLY=3,4` runs a subset. A failing criterion is reported
//! but only turns into a nonzero exit when `CMSBM_ACCEPTANCE_STRICT` is set.

use std::cell::OnceCell;
use std::time::Instant;

use cmsbm::families::{beta_bounds_check, enumerate_cycles, enumerate_paths};
use cmsbm::harness::{run_experiment, ExperimentOutput, ExperimentPlan};
use cmsbm::model::{sample, sample_null, sample_planted, ModelParams, Provenance};
use cmsbm::oracles::{brute_force_detection, brute_force_recovery, default_dominance_grid};
use cmsbm::rng::Stream;
use cmsbm::statistics::{
    detection_statistic, recovery_matrix, relative_gap, relative_matrix_gap, Backend, StatisticConfig,
};
use cmsbm::thresholds::{interaction_matrix, sigma_plus, threshold_f, FVariant};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn fig4(lambda: f64) -> ModelParams {
    ModelParams {
        n: 100,
        p: 50,
        mu: 0.5,
        rho: 0.6,
        lambda: vec![lambda; 2],
        epsilon: vec![0.5; 2],
    }
}

fn fig5() -> ModelParams {
    ModelParams {
        n: 100,
        p: 50,
        mu: 0.75,
        rho: 0.5,
        lambda: vec![1.0; 2],
        epsilon: vec![0.5; 2],
    }
}

fn exact(aleph: usize) -> StatisticConfig {
    StatisticConfig::new(aleph, Backend::ExactEnumeration)
}

fn transfer(aleph: usize) -> StatisticConfig {
    StatisticConfig::new(aleph, Backend::TransferApprox)
}

fn oracle_equivalence() -> Outcome {
    let rng = Stream::new(2024, 1);
    let (mut det, mut rec) = (0.0f64, 0.0f64);
    for k in 0..20u64 {
        let layers = 1 + (k % 2) as usize;
        let params = ModelParams {
            n: 6 + (k % 7) as usize,
            p: 3 + (k % 4) as usize,
            mu: 0.5 + rng.uniform(4 * k),
            rho: rng.uniform(4 * k + 1),
            lambda: (0..layers).map(|l| 1.5 + 2.0 * rng.uniform(4 * k + 2 + l as u64)).collect(),
            epsilon: vec![0.3 + 0.1 * (k % 5) as f64; layers],
        };
        let prov = if k % 2 == 0 { Provenance::Planted } else { Provenance::Null };
        let obs = sample(&params, k, prov).unwrap();
        let r = detection_statistic(&obs, &params, &exact(3)).unwrap();
        let b = brute_force_detection(&obs, &params, 3).unwrap();
        det = det.max(relative_gap(r.value.unwrap(), b));
        for aleph in 2..=3 {
            let r = recovery_matrix(&obs, &params, &exact(aleph)).unwrap();
            let b = brute_force_recovery(&obs, &params, aleph).unwrap();
            rec = rec.max(relative_matrix_gap(&r.matrix.unwrap(), &b));
        }
    }
    outcome(
        det <= 1e-10 && rec <= 1e-10,
        format!("20 instances, max relative gap detection {det:.2e}, recovery {rec:.2e} (tol 1e-10)"),
    )
}

fn backend_equivalence() -> Outcome {
    let mut params = fig4(3.0);
    params.n = 30;
    params.p = 15;
    let (mut det, mut rec) = (0.0f64, 0.0f64);
    for seed in 0..50 {
        let prov = if seed % 2 == 0 { Provenance::Planted } else { Provenance::Null };
        let obs = sample(&params, seed, prov).unwrap();
        let e = detection_statistic(&obs, &params, &exact(3)).unwrap().value.unwrap();
        let t = detection_statistic(&obs, &params, &transfer(3)).unwrap().value.unwrap();
        det = det.max(relative_gap(t, e));
        let e = recovery_matrix(&obs, &params, &exact(3)).unwrap().matrix.unwrap();
        let t = recovery_matrix(&obs, &params, &transfer(3)).unwrap().matrix.unwrap();
        rec = rec.max(relative_matrix_gap(&t, &e));
    }
    outcome(
        det <= 1e-8 && rec <= 1e-8,
        format!("50 seeds, max relative gap detection {det:.2e}, recovery {rec:.2e} (tol 1e-8)"),
    )
}

fn calibration_params(lambda: f64) -> ModelParams {
    let mut p = fig4(lambda);
    p.n = 200;
    p.p = 100;
    p
}

fn null_calibration() -> Outcome {
    let params = calibration_params(3.0);
    let v: Vec<f64> = (0..500)
        .map(|s| {
            let obs = sample_null(&params, s).unwrap();
            detection_statistic(&obs, &params, &transfer(3)).unwrap().value.unwrap()
        })
        .collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let second = v.iter().map(|x| x * x).sum::<f64>() / n;
    let se = ((second - mean * mean) * n / (n - 1.0)).sqrt() / n.sqrt();
    outcome(
        mean.abs() <= 3.0 * se && (0.85..=1.15).contains(&second),
        format!("mean {mean:.4} (3 SE = {:.4}), second moment {second:.4} (band [0.85, 1.15])", 3.0 * se),
    )
}

fn planted_mean() -> Outcome {
    let params = calibration_params(9.0);
    let mut beta = 0.0;
    let mut sum = 0.0;
    for s in 0..500 {
        let obs = sample_planted(&params, s).unwrap();
        let r = detection_statistic(&obs, &params, &transfer(3)).unwrap();
        beta = r.beta;
        sum += r.value.unwrap();
    }
    let mean = sum / 500.0;
    let target = beta.sqrt();
    let rel = (mean - target).abs() / target;
    outcome(rel <= 0.25, format!("mean {mean:.4}, sqrt(beta) {target:.4}, relative gap {rel:.3} (limit 0.25)"))
}

fn moment_dominance() -> Outcome {
    match default_dominance_grid() {
        Ok(reports) => {
            let checked: usize = reports.iter().map(|r| r.checked).sum();
            let worst = reports.iter().map(|r| r.max_gap).fold(f64::NEG_INFINITY, f64::max);
            outcome(worst <= 1e-12, format!("{} grid points, {checked} moments, largest bernoulli - gaussian {worst:.2e}", reports.len()))
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn threshold_equivalence() -> Outcome {
    let rng = Stream::new(7, 6);
    let (mut kept, mut agree, mut split, mut draws) = (0, 0, 0, 0u64);
    while kept < 1000 {
        let u = |k: u64| rng.uniform(16 * draws + k);
        let layers = 1 + (u(0) * 3.0) as usize;
        let gamma = 0.5 + 3.0 * u(1);
        let p = 100;
        let n = (gamma * p as f64).round() as usize;
        let params = ModelParams {
            n,
            p,
            mu: u(2) * 1.6,
            rho: u(3),
            lambda: (0..layers).map(|l| 0.5 + 8.0 * u(4 + l as u64)).collect(),
            epsilon: (0..layers).map(|l| u(8 + l as u64)).collect(),
        };
        draws += 1;
        let f = threshold_f(&params, FVariant::Intro);
        let ok = params.validate().is_ok()
            && params.spike_snr() < 1.0
            && (0..layers).all(|l| params.layer_snr(l) < 1.0)
            && (f - 1.0).abs() > 0.02;
        if !ok {
            continue;
        }
        kept += 1;
        let s = sigma_plus(&interaction_matrix(&params)).unwrap();
        if (s > 1.0) == (f > 1.0) {
            agree += 1;
        }
        if (threshold_f(&params, FVariant::SectionThree) > 1.0) != (f > 1.0) {
            split += 1;
        }
    }
    outcome(
        agree == kept,
        format!("{agree}/{kept} tuples agree on the side of 1; F_intro and F_sec3 disagree on {split} tuples (logged only)"),
    )
}

fn beta_bounds() -> Outcome {
    let params = fig4(5.0);
    let m = interaction_matrix(&params);
    let cycles: Vec<_> = (3..=8).map(|a| enumerate_cycles(a, &params).unwrap()).collect();
    let paths: Vec<_> = (3..=8).map(|a| enumerate_paths(a, &params, true).unwrap()).collect();
    let c = beta_bounds_check(&cycles, &m, 20.0).unwrap();
    let p = beta_bounds_check(&paths, &m, 20.0).unwrap();
    let cb = c.corrected_band.unwrap();
    outcome(
        cb <= 20.0 && p.band <= 20.0,
        format!("band of beta_H aleph^2 / sigma^aleph {cb:.3}, band of beta_J / sigma^aleph {:.3} (limit 20)", p.band),
    )
}

fn fig4_plan(trials: usize) -> ExperimentPlan {
    ExperimentPlan::from_json(&format!(
        r#"{{
            "kind": "detection",
            "base_params": {{"n": 100, "p": 50, "mu": 0.5, "rho": 0.6, "lambda": [3, 3], "epsilon": [0.5, 0.5]}},
            "sweep": [{{"lambda": 3}}, {{"lambda": 5}}, {{"lambda": 7}}, {{"lambda": 9}}],
            "trials": {trials},
            "aleph": 4,
            "variants": ["all", "color0", "color1", "color2"],
            "seed": 4,
            "backend": "transfer"
        }}"#
    ))
    .unwrap()
}

fn fig5_plan(trials: usize) -> ExperimentPlan {
    let arms: Vec<String> = [0.3, 0.5, 0.7, 0.9, 1.1, 1.3, 1.5, 1.7]
        .iter()
        .map(|f| format!(r#"{{"target_f": {f}}}"#))
        .collect();
    ExperimentPlan::from_json(&format!(
        r#"{{
            "kind": "recovery",
            "base_params": {},
            "sweep": [{}],
            "trials": {trials},
            "aleph": 4,
            "variants": ["all", "color0", "color1", "color2"],
            "seed": 5,
            "backend": "transfer",
            "projection": {{"correlation_floor": 0.05, "max_iters": 20000, "tol": 1e-8}}
        }}"#,
        serde_json::to_string(&fig5()).unwrap(),
        arms.join(", ")
    ))
    .unwrap()
}

fn variant<'a>(out: &'a ExperimentOutput, arm: usize, name: &str) -> &'a cmsbm::harness::VariantSummary {
    out.summary.arms[arm].variants.iter().find(|v| v.variant == name).unwrap()
}

fn fig4_replication() -> Outcome {
    let out = match run_experiment(&fig4_plan(100)) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("experiment failed: {e}")),
    };
    let aucs: Vec<f64> = (0..4).map(|a| variant(&out, a, "all").auc.unwrap()).collect();
    let margins_ok = aucs.windows(2).all(|w| w[1] - w[0] >= 0.03);
    let last = aucs[3];
    let singles: Vec<f64> = ["color0", "color1", "color2"].iter().map(|c| variant(&out, 3, c).auc.unwrap()).collect();
    let dominates = singles.iter().all(|&s| last >= s);
    outcome(
        margins_ok && dominates,
        format!("AUC(all) by arm {aucs:.3?}; single colors at lambda = 9 {singles:.3?}"),
    )
}

fn fig5_run() -> Result<ExperimentOutput, String> {
    run_experiment(&fig5_plan(50)).map_err(|e| e.to_string())
}

/// Runs `check` on the shared sweep output, or fails with the sweep's error.
fn with_fig5(out: &Result<ExperimentOutput, String>, check: fn(&ExperimentOutput) -> Outcome) -> Outcome {
    match out {
        Ok(o) => check(o),
        Err(e) => outcome(false, format!("experiment failed: {e}")),
    }
}

fn fig5_replication(out: &ExperimentOutput) -> Outcome {
    let cos = |a: usize, v: &str| variant(out, a, v).mean_cosine.unwrap();
    let gain = cos(7, "all") - cos(0, "all");
    let c0: Vec<f64> = (0..8).map(|a| cos(a, "color0")).collect();
    let spread = c0.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - c0.iter().cloned().fold(f64::INFINITY, f64::min);
    let worst = out
        .summary
        .arms
        .iter()
        .flat_map(|a| &a.variants)
        .filter_map(|v| v.worst_projection_violation)
        .fold(f64::NEG_INFINITY, f64::max);
    let all: Vec<f64> = (0..8).map(|a| cos(a, "all")).collect();
    outcome(
        gain >= 0.15 && spread <= 0.1 && worst <= 1e-8,
        format!(
            "raw cosine gain F 0.3 -> 1.7 {gain:.4} (need 0.15); mean raw cosine by arm {all:.3?}; color0 spread {spread:.4} (limit 0.1); worst projection violation {worst:.2e} (limit 1e-8)"
        ),
    )
}

fn correlation_floor(out: &ExperimentOutput) -> Outcome {
    let v = variant(out, 7, "all").mean_value_p;
    outcome(v >= 0.125, format!("mean <Phi, x x^T>/n^2 at F = 1.7 is {v:.4} over 50 seeds (need 0.125)"))
}

fn determinism() -> Outcome {
    let plans = [fig4_plan(5), fig5_plan(2)];
    let mut identical = true;
    for plan in &plans {
        let csvs: Vec<Result<String, String>> = [1, 4, 8]
            .iter()
            .map(|&t| {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
                pool.install(|| run_experiment(plan).map(|o| o.csv()).map_err(|e| e.to_string()))
            })
            .collect();
        if let Some(Err(e)) = csvs.iter().find(|c| c.is_err()) {
            return outcome(false, format!("experiment failed: {e}"));
        }
        identical &= csvs.windows(2).all(|w| w[0] == w[1]);
    }
    outcome(identical, "reduced-trial Fig-4 and Fig-5 plans under 1, 4 and 8 threads".into())
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("CMSBM_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().is_none_or(|o| o.contains(&k));
    let fig5 = OnceCell::new();
    let fig5_out = || fig5.get_or_init(fig5_run);
    let mut results = Vec::new();
    let mut report = |k: usize, name: &str, run: &mut dyn FnMut() -> Outcome| {
        if !wanted(k) {
            return;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!("C{k:<2} {verdict} {name} [{:.1}s]: {}", start.elapsed().as_secs_f64(), o.detail);
        results.push(o.passed);
    };
    report(1, "oracle equivalence", &mut oracle_equivalence);
    report(2, "backend equivalence", &mut backend_equivalence);
    report(3, "null calibration", &mut null_calibration);
    report(4, "planted mean", &mut planted_mean);
    report(5, "moment dominance", &mut moment_dominance);
    report(6, "threshold equivalence", &mut threshold_equivalence);
    report(7, "beta bounds", &mut beta_bounds);
    report(8, "detection sweep replication", &mut fig4_replication);
    report(9, "recovery sweep replication", &mut || with_fig5(fig5_out(), fig5_replication));
    report(10, "recovery correlation floor", &mut || with_fig5(fig5_out(), correlation_floor));
    report(11, "determinism", &mut determinism);
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed < results.len() && std::env::var_os("CMSBM_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
