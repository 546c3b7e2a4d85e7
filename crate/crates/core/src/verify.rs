//! Self-check suite: every fast path against its brute-force oracle.

use serde::Serialize;

use crate::families::{enumerate_cycles, enumerate_paths};
use crate::model::{sample, ModelParams, Provenance};
use crate::oracles::{
    bernoulli_moment, bernoulli_moment_enumerated, brute_force_detection, brute_force_recovery,
    default_dominance_grid, MomentQuery,
};
use crate::statistics::{
    detection_statistic, recovery_matrix, relative_gap, relative_matrix_gap, Backend, StatisticConfig,
};
use crate::thresholds::{interaction_matrix, word_recursion};

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// Largest relative discrepancy seen, when the check is numeric.
    pub max_gap: Option<f64>,
    pub detail: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

struct Tally {
    name: &'static str,
    tol: f64,
    cases: usize,
    max_gap: f64,
    error: Option<String>,
}

impl Tally {
    fn new(name: &'static str, tol: f64) -> Self {
        Tally {
            name,
            tol,
            cases: 0,
            max_gap: 0.0,
            error: None,
        }
    }

    fn gap(&mut self, g: f64) {
        self.cases += 1;
        if !(g <= self.max_gap) {
            self.max_gap = g;
        }
    }

    fn fail<E: std::fmt::Display>(&mut self, e: E) {
        if self.error.is_none() {
            self.error = Some(e.to_string());
        }
    }

    fn finish(self) -> Check {
        let passed = self.error.is_none() && self.max_gap <= self.tol;
        Check {
            name: self.name.to_string(),
            passed,
            cases: self.cases,
            max_gap: Some(self.max_gap),
            detail: self.error,
        }
    }
}

fn tiny(layers: usize) -> ModelParams {
    ModelParams {
        n: 8,
        p: 4,
        mu: 1.2,
        rho: 0.6,
        lambda: (0..layers).map(|l| 2.5 + l as f64).collect(),
        epsilon: (0..layers).map(|l| 0.6 - 0.1 * l as f64).collect(),
    }
}

fn provenance(seed: u64) -> Provenance {
    if seed % 2 == 0 {
        Provenance::Planted
    } else {
        Provenance::Null
    }
}

fn statistics_vs_brute_force(seeds: u64) -> Vec<Check> {
    let mut det = Tally::new("detection_exact_vs_brute_force", 1e-10);
    let mut rec = Tally::new("recovery_exact_vs_brute_force", 1e-10);
    let exact = |a| StatisticConfig::new(a, Backend::ExactEnumeration);
    for layers in 1..=2 {
        let params = tiny(layers);
        for seed in 0..seeds {
            let obs = match sample(&params, seed, provenance(seed)) {
                Ok(o) => o,
                Err(e) => {
                    det.fail(e);
                    continue;
                }
            };
            match (brute_force_detection(&obs, &params, 3), detection_statistic(&obs, &params, &exact(3))) {
                (Ok(b), Ok(r)) => det.gap(relative_gap(r.value.unwrap_or(f64::NAN), b)),
                (Err(e), _) => det.fail(e),
                (_, Err(e)) => det.fail(e),
            }
            for aleph in 2..=3 {
                match (brute_force_recovery(&obs, &params, aleph), recovery_matrix(&obs, &params, &exact(aleph))) {
                    (Ok(b), Ok(r)) => rec.gap(relative_matrix_gap(&r.matrix.unwrap(), &b)),
                    (Err(e), _) => rec.fail(e),
                    (_, Err(e)) => rec.fail(e),
                }
            }
        }
    }
    vec![det.finish(), rec.finish()]
}

fn transfer_vs_exact(seeds: u64) -> Check {
    let mut t = Tally::new("transfer_vs_exact", 1e-8);
    let mut params = tiny(2);
    params.n = 10;
    params.p = 5;
    for seed in 0..seeds {
        let obs = match sample(&params, seed, provenance(seed)) {
            Ok(o) => o,
            Err(e) => {
                t.fail(e);
                continue;
            }
        };
        for aleph in 3..=4 {
            let e = detection_statistic(&obs, &params, &StatisticConfig::new(aleph, Backend::ExactEnumeration));
            let f = detection_statistic(&obs, &params, &StatisticConfig::new(aleph, Backend::TransferApprox));
            match (e, f) {
                (Ok(a), Ok(b)) => t.gap(relative_gap(b.value.unwrap_or(f64::NAN), a.value.unwrap_or(f64::NAN))),
                (Err(e), _) | (_, Err(e)) => t.fail(e),
            }
        }
        for aleph in 1..=4 {
            let e = recovery_matrix(&obs, &params, &StatisticConfig::new(aleph, Backend::ExactEnumeration));
            let f = recovery_matrix(&obs, &params, &StatisticConfig::new(aleph, Backend::TransferApprox));
            match (e, f) {
                (Ok(a), Ok(b)) => t.gap(relative_matrix_gap(&b.matrix.unwrap(), &a.matrix.unwrap())),
                (Err(e), _) | (_, Err(e)) => t.fail(e),
            }
        }
    }
    t.finish()
}

fn beta_identities() -> Check {
    let mut t = Tally::new("beta_matrix_identities", 1e-12);
    let mut params = tiny(2);
    params.n = 100;
    params.p = 50;
    let m = interaction_matrix(&params).entries;
    for aleph in 3..=7 {
        match enumerate_cycles(aleph, &params) {
            Ok(w) => {
                let tr = m.pow(aleph as u32).trace() / (2 * aleph) as f64;
                t.gap(relative_gap(w.beta, tr));
            }
            Err(e) => t.fail(e),
        }
    }
    for aleph in 1..=7 {
        match enumerate_paths(aleph, &params, false) {
            Ok(w) => {
                let s = word_recursion(&params, aleph).iter().sum::<f64>() / 2.0;
                t.gap(relative_gap(w.beta, s));
            }
            Err(e) => t.fail(e),
        }
    }
    t.finish()
}

fn moment_oracles() -> Vec<Check> {
    let dominance = match default_dominance_grid() {
        Ok(reports) => Check {
            name: "moment_dominance".into(),
            passed: true,
            cases: reports.iter().map(|r| r.checked).sum(),
            max_gap: Some(reports.iter().map(|r| r.max_gap).fold(f64::NEG_INFINITY, f64::max)),
            detail: None,
        },
        Err(e) => Check {
            name: "moment_dominance".into(),
            passed: false,
            cases: 0,
            max_gap: None,
            detail: Some(e.to_string()),
        },
    };
    let mut t = Tally::new("bernoulli_factorized_vs_enumerated", 1e-12);
    for layers in 0..=2usize {
        for total in 0..=3usize {
            for alpha in 0..=total {
                let rest = total - alpha;
                let alphas: Vec<usize> = (0..layers).map(|l| if l == 0 { rest } else { 0 }).collect();
                if layers == 0 && rest > 0 {
                    continue;
                }
                for n in 1..=3 {
                    let q = MomentQuery {
                        alpha,
                        alphas: alphas.clone(),
                        n_small: n,
                    };
                    for rho in [0.0, 0.5, 1.0] {
                        match (bernoulli_moment(&q, rho), bernoulli_moment_enumerated(&q, rho)) {
                            (Ok(a), Ok(b)) => t.gap((a - b).abs()),
                            (Err(e), _) | (_, Err(e)) => t.fail(e),
                        }
                    }
                }
            }
        }
    }
    vec![dominance, t.finish()]
}

/// Runs the full suite; `seeds` sets the number of random instances per check.
pub fn verify_suite(seeds: u64) -> VerifyReport {
    let mut checks = moment_oracles();
    checks.extend(statistics_vs_brute_force(seeds));
    checks.push(transfer_vs_exact(seeds));
    checks.push(beta_identities());
    VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}
