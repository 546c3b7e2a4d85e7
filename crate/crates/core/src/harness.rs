//! Seeded batch experiments: detection ROC/AUC sweeps and recovery cosine sweeps.
//!
//! Every trial owns its seed, `seed + arm * 10^6 + trial`, so rows do not
//! depend on scheduling. Trials run on the current rayon pool and rows are
//! emitted in (arm, hypothesis, trial, variant) order.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{to_json, IoError};
use crate::model::{sample, ModelError, ModelParams, Provenance};
use crate::rounding::{cosine, overlap, psd_project, sign_round, ProjectionConfig, RoundingError};
use crate::statistics::{detection_statistic, recovery_matrix, Backend, StatError, StatisticConfig};
use crate::thresholds::{
    interaction_matrix, sigma_plus, solve_common_lambda, threshold_f, FVariant, ThresholdError,
};

pub const CSV_VERSION: &str = "#cmsbm-csv-v1";
pub const CSV_COLUMNS: &str =
    "arm,hypothesis,seed,variant,value,F_intro,F_sec3,sigma_plus,auc,cosine,elapsed";
const ARM_STRIDE: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("InvalidPlan: {0}")]
    InvalidPlan(String),
    #[error("SchemaMismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error(transparent)]
    Rounding(#[from] RoundingError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(IoError::Io(e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Detection,
    Recovery,
}

/// Statistic variant: the full family or the words of a single letter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    All,
    Color(u8),
}

impl Variant {
    fn colors(self) -> Option<Vec<u8>> {
        match self {
            Variant::All => None,
            Variant::Color(c) => Some(vec![c]),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::All => write!(f, "all"),
            Variant::Color(c) => write!(f, "color{c}"),
        }
    }
}

impl TryFrom<String> for Variant {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        if s == "all" {
            return Ok(Variant::All);
        }
        s.strip_prefix("color")
            .and_then(|c| c.parse().ok())
            .map(Variant::Color)
            .ok_or_else(|| format!("unknown variant {s:?}; use \"all\" or \"color<l>\""))
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

/// Overrides applied to the base parameters for one arm.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    /// Common mean degree for every layer.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub rho: Option<f64>,
    /// Solve for the common mean degree giving this `F_intro`.
    #[serde(default)]
    pub target_f: Option<f64>,
}

fn default_trials() -> usize {
    100
}
fn default_aleph() -> usize {
    4
}
fn default_variants() -> Vec<Variant> {
    vec![Variant::All]
}
fn default_backend() -> Backend {
    Backend::TransferApprox
}
fn default_c() -> f64 {
    0.5
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub kind: ExperimentKind,
    pub base_params: ModelParams,
    pub sweep: Vec<ArmSpec>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_aleph")]
    pub aleph: usize,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_backend")]
    pub backend: Backend,
    #[serde(default = "default_c")]
    pub threshold_c: f64,
    #[serde(default = "yes")]
    pub b_collision_correction: bool,
    /// Recovery only: project every matrix and sign-round the result.
    #[serde(default)]
    pub projection: Option<ProjectionConfig>,
    /// Fill the `elapsed` column; rows then differ between runs.
    #[serde(default)]
    pub timing: bool,
}

impl ExperimentPlan {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::InvalidPlan(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::InvalidPlan(e.to_string()))
    }

    /// JSON, or TOML when the extension says so.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "toml") {
            Self::from_toml(&text)
        } else {
            Self::from_json(&text)
        }
    }

    pub fn trial_seed(&self, arm: usize, trial: usize) -> u64 {
        self.seed
            .wrapping_add(arm as u64 * ARM_STRIDE)
            .wrapping_add(trial as u64)
    }

    fn statistic_config(&self, variant: Variant) -> StatisticConfig {
        let mut cfg = StatisticConfig::new(self.aleph, self.backend);
        cfg.threshold_c = self.threshold_c;
        cfg.b_collision_correction = self.b_collision_correction;
        cfg.colors = variant.colors();
        cfg
    }

    /// Checks the plan and resolves every arm's parameters.
    pub fn resolve_arms(&self) -> Result<Vec<ModelParams>, HarnessError> {
        let bad = HarnessError::InvalidPlan;
        if self.trials == 0 {
            return Err(bad("trials must be positive".into()));
        }
        if self.sweep.is_empty() {
            return Err(bad("sweep needs at least one arm".into()));
        }
        if self.variants.is_empty() {
            return Err(bad("variants must not be empty".into()));
        }
        if self.trials as u64 >= ARM_STRIDE {
            return Err(bad(format!("trials must be below {ARM_STRIDE}")));
        }
        let layers = self.base_params.layers();
        for v in &self.variants {
            if let Variant::Color(c) = v {
                if *c as usize > layers {
                    return Err(bad(format!("variant {v} names a letter above L = {layers}")));
                }
            }
        }
        if self.projection.is_some() && self.kind == ExperimentKind::Detection {
            return Err(bad("projection applies to recovery plans only".into()));
        }
        self.base_params.validate()?;
        self.sweep
            .iter()
            .enumerate()
            .map(|(a, arm)| {
                let mut p = self.base_params.clone();
                if let Some(mu) = arm.mu {
                    p.mu = mu;
                }
                if let Some(rho) = arm.rho {
                    p.rho = rho;
                }
                let set = [arm.lambda.is_some(), arm.lambdas.is_some(), arm.target_f.is_some()];
                if set.iter().filter(|&&b| b).count() > 1 {
                    return Err(bad(format!("arm {a}: give at most one of lambda, lambdas, target_f")));
                }
                if let Some(l) = arm.lambda {
                    p.lambda = vec![l; layers];
                }
                if let Some(ls) = &arm.lambdas {
                    if ls.len() != layers {
                        return Err(bad(format!("arm {a}: lambdas needs {layers} entries")));
                    }
                    p.lambda = ls.clone();
                }
                if let Some(f) = arm.target_f {
                    let l = solve_common_lambda(&p, f)?;
                    p.lambda = vec![l; layers];
                }
                p.validate()?;
                Ok(p)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmInfo {
    pub arm: usize,
    pub params: ModelParams,
    pub f_intro: f64,
    pub f_sec3: f64,
    pub sigma_plus: f64,
}

fn arm_info(arm: usize, params: &ModelParams) -> Result<ArmInfo, HarnessError> {
    Ok(ArmInfo {
        arm,
        params: params.clone(),
        f_intro: threshold_f(params, FVariant::Intro),
        f_sec3: threshold_f(params, FVariant::SectionThree),
        sigma_plus: sigma_plus(&interaction_matrix(params))?,
    })
}

/// One output row; `variant` carries a `+proj` suffix for projected matrices.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub arm: usize,
    pub hypothesis: char,
    pub seed: u64,
    pub variant: String,
    pub value: f64,
    pub f_intro: f64,
    pub f_sec3: f64,
    pub sigma_plus: f64,
    pub auc: Option<f64>,
    pub cosine: Option<f64>,
    pub elapsed: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentRecord {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            self.arm,
            self.hypothesis,
            self.seed,
            self.variant,
            self.value,
            self.f_intro,
            self.f_sec3,
            self.sigma_plus,
            opt(self.auc),
            opt(self.cosine),
            opt(self.elapsed),
        )
    }
}

/// Area under the ROC curve by the rank statistic, ties counted half.
pub fn auc_rank(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&v| (v, true))
        .chain(negatives.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Midrank of the tie group, 1-based.
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (np, nq) = (positives.len() as f64, negatives.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nq)
}

/// Empirical ROC points from the strictest threshold down, tie groups merged.
pub fn roc_curve(positives: &[f64], negatives: &[f64]) -> Vec<(f64, f64)> {
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&v| (v, true))
        .chain(negatives.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nq) = (positives.len() as f64, negatives.len() as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut pts = vec![(0.0, 0.0)];
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        pts.push((fp as f64 / nq, tp as f64 / np));
        i = j;
    }
    pts
}

pub fn auc_trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub auc: Option<f64>,
    pub auc_trapezoid: Option<f64>,
    pub mean_value_p: f64,
    pub mean_value_q: Option<f64>,
    pub mean_cosine: Option<f64>,
    pub sd_cosine: Option<f64>,
    pub mean_overlap: Option<f64>,
    /// Worst projection diagnostics over trials: diagonal error, -min eigenvalue, -slack.
    pub worst_projection_violation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmSummary {
    #[serde(flatten)]
    pub info: ArmInfo,
    pub variants: Vec<VariantSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub kind: ExperimentKind,
    pub trials: usize,
    pub aleph: usize,
    pub backend: Backend,
    pub arms: Vec<ArmSummary>,
    pub notes: Vec<String>,
}

pub struct ExperimentOutput {
    pub records: Vec<ExperimentRecord>,
    pub summary: ExperimentSummary,
}

impl ExperimentOutput {
    pub fn csv(&self) -> String {
        let mut s = format!("{CSV_VERSION}\n{CSV_COLUMNS}\n");
        for r in &self.records {
            s.push_str(&r.csv_line());
        }
        s
    }

    /// Writes `results.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("results.csv"), self.csv())?;
        std::fs::write(dir.join("summary.json"), to_json(&self.summary))?;
        Ok(())
    }
}

struct TrialRow {
    variant: String,
    value: f64,
    cosine: Option<f64>,
    overlap: Option<f64>,
    violation: Option<f64>,
    elapsed: f64,
}

fn detection_trial(
    plan: &ExperimentPlan,
    params: &ModelParams,
    seed: u64,
    provenance: Provenance,
) -> Result<Vec<TrialRow>, HarnessError> {
    let obs = sample(params, seed, provenance)?;
    plan.variants
        .iter()
        .map(|&v| {
            let start = Instant::now();
            let r = detection_statistic(&obs, params, &plan.statistic_config(v))?;
            Ok(TrialRow {
                variant: v.to_string(),
                value: r.value.expect("detection reports carry a value"),
                cosine: None,
                overlap: None,
                violation: None,
                elapsed: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

fn recovery_trial(
    plan: &ExperimentPlan,
    params: &ModelParams,
    seed: u64,
) -> Result<Vec<TrialRow>, HarnessError> {
    let obs = sample(params, seed, Provenance::Planted)?;
    let x = &obs.truth.as_ref().expect("planted samples carry truth").x;
    let n = params.n as f64;
    let mut rows = Vec::new();
    for &v in &plan.variants {
        let start = Instant::now();
        let phi = recovery_matrix(&obs, params, &plan.statistic_config(v))?
            .matrix
            .expect("recovery reports carry a matrix");
        let mut inner = 0.0;
        for j in 0..params.n {
            for i in 0..params.n {
                inner += phi[(i, j)] * (x[i] * x[j]) as f64;
            }
        }
        rows.push(TrialRow {
            variant: v.to_string(),
            value: inner / (n * n),
            cosine: Some(cosine(&phi, x)),
            overlap: None,
            violation: None,
            elapsed: start.elapsed().as_secs_f64(),
        });
        if let Some(pc) = &plan.projection {
            let start = Instant::now();
            let est = psd_project(&phi, pc)?;
            let d = &est.diagnostics;
            let x_hat = sign_round(&est, seed);
            let ov = overlap(&x_hat, x);
            rows.push(TrialRow {
                variant: format!("{v}+proj"),
                value: ov,
                cosine: Some(cosine(&est.phi_hat, x)),
                overlap: Some(ov),
                violation: Some(
                    d.diagonal_error.max(-d.min_eigenvalue).max(-d.constraint_slack),
                ),
                elapsed: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Runs every arm on the current rayon pool.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutput, HarnessError> {
    let arms = plan.resolve_arms()?;
    let infos: Vec<ArmInfo> = arms
        .iter()
        .enumerate()
        .map(|(a, p)| arm_info(a, p))
        .collect::<Result<_, _>>()?;
    let hypotheses: &[(char, Provenance)] = match plan.kind {
        ExperimentKind::Detection => &[('P', Provenance::Planted), ('Q', Provenance::Null)],
        ExperimentKind::Recovery => &[('P', Provenance::Planted)],
    };
    let mut jobs = Vec::new();
    for a in 0..arms.len() {
        for &(h, prov) in hypotheses {
            for t in 0..plan.trials {
                jobs.push((a, h, prov, t));
            }
        }
    }
    let results: Vec<Result<Vec<TrialRow>, HarnessError>> = jobs
        .par_iter()
        .map(|&(a, _, prov, t)| {
            let seed = plan.trial_seed(a, t);
            match plan.kind {
                ExperimentKind::Detection => detection_trial(plan, &arms[a], seed, prov),
                ExperimentKind::Recovery => recovery_trial(plan, &arms[a], seed),
            }
        })
        .collect();

    let mut records = Vec::new();
    // (arm, variant) -> values and extras by hypothesis.
    let mut groups: BTreeMap<(usize, String), Group> = BTreeMap::new();
    for (&(a, h, _, t), res) in jobs.iter().zip(results) {
        for row in res? {
            let g = groups.entry((a, row.variant.clone())).or_default();
            if g.order == usize::MAX {
                g.order = records.len();
            }
            if h == 'P' {
                g.p.push(row.value);
            } else {
                g.q.push(row.value);
            }
            if let Some(c) = row.cosine {
                g.cosine.push(c);
            }
            if let Some(o) = row.overlap {
                g.overlap.push(o);
            }
            if let Some(v) = row.violation {
                g.violation = g.violation.max(v);
                g.projected = true;
            }
            let info = &infos[a];
            records.push(ExperimentRecord {
                arm: a,
                hypothesis: h,
                seed: plan.trial_seed(a, t),
                variant: row.variant,
                value: row.value,
                f_intro: info.f_intro,
                f_sec3: info.f_sec3,
                sigma_plus: info.sigma_plus,
                auc: None,
                cosine: row.cosine,
                elapsed: plan.timing.then_some(row.elapsed),
            });
        }
    }

    let mut arm_summaries: Vec<ArmSummary> = infos
        .iter()
        .map(|info| ArmSummary {
            info: info.clone(),
            variants: Vec::new(),
        })
        .collect();
    let mut groups: Vec<((usize, String), Group)> = groups.into_iter().collect();
    groups.sort_by_key(|(_, g)| g.order);
    for ((a, variant), g) in groups {
        let auc = (!g.q.is_empty()).then(|| auc_rank(&g.p, &g.q));
        if let Some(v) = auc {
            for r in records.iter_mut().filter(|r| r.arm == a && r.variant == variant) {
                r.auc = Some(v);
            }
        }
        arm_summaries[a].variants.push(VariantSummary {
            variant,
            auc,
            auc_trapezoid: (!g.q.is_empty()).then(|| auc_trapezoid(&roc_curve(&g.p, &g.q))),
            mean_value_p: mean(&g.p),
            mean_value_q: (!g.q.is_empty()).then(|| mean(&g.q)),
            mean_cosine: (!g.cosine.is_empty()).then(|| mean(&g.cosine)),
            sd_cosine: (!g.cosine.is_empty()).then(|| sd(&g.cosine)),
            mean_overlap: (!g.overlap.is_empty()).then(|| mean(&g.overlap)),
            worst_projection_violation: g.projected.then_some(g.violation),
        });
    }
    let mut notes = vec![
        "Seeds follow base + arm * 1000000 + trial; P and Q samples of a trial share the seed but draw from separate streams.".to_string(),
    ];
    match plan.kind {
        ExperimentKind::Detection => notes.push(
            "No numeric AUC values are published for this experiment; AUC margins are engineering targets.".into(),
        ),
        ExperimentKind::Recovery => notes.push(
            "Raw rows: value = <Phi, x x^T>/n^2. Projected rows: value = sign-rounding overlap |<x_hat, x>|/n.".into(),
        ),
    }
    Ok(ExperimentOutput {
        records,
        summary: ExperimentSummary {
            kind: plan.kind,
            trials: plan.trials,
            aleph: plan.aleph,
            backend: plan.backend,
            arms: arm_summaries,
            notes,
        },
    })
}

struct Group {
    order: usize,
    p: Vec<f64>,
    q: Vec<f64>,
    cosine: Vec<f64>,
    overlap: Vec<f64>,
    violation: f64,
    projected: bool,
}

impl Default for Group {
    fn default() -> Self {
        Group {
            order: usize::MAX,
            p: Vec::new(),
            q: Vec::new(),
            cosine: Vec::new(),
            overlap: Vec::new(),
            violation: f64::NEG_INFINITY,
            projected: false,
        }
    }
}

/// A parsed experiment CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub arm: usize,
    pub hypothesis: char,
    pub variant: String,
    pub value: f64,
    pub f_intro: f64,
    pub cosine: Option<f64>,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, HarnessError> {
    let bad = |m: String| HarnessError::SchemaMismatch(m);
    let mut lines = text.lines();
    if lines.next() != Some(CSV_VERSION) {
        return Err(bad(format!("first line must be {CSV_VERSION}")));
    }
    if lines.next() != Some(CSV_COLUMNS) {
        return Err(bad(format!("second line must be {CSV_COLUMNS}")));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let at = k + 3;
        if f.len() != 11 {
            return Err(bad(format!("line {at}: expected 11 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("line {at}: bad number {s:?}")));
        let hypothesis = match f[1] {
            "P" => 'P',
            "Q" => 'Q',
            h => return Err(bad(format!("line {at}: hypothesis {h:?}"))),
        };
        rows.push(CsvRow {
            arm: f[0].parse().map_err(|_| bad(format!("line {at}: bad arm {:?}", f[0])))?,
            hypothesis,
            variant: f[3].to_string(),
            value: num(f[4])?,
            f_intro: num(f[5])?,
            cosine: if f[9].is_empty() { None } else { Some(num(f[9])?) },
        });
    }
    if rows.is_empty() {
        return Err(bad("no data rows".into()));
    }
    Ok(rows)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];
const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let sx = MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN);
        let sy = H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN);
        (sx, sy)
    }

    fn open(&self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
        );
        let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
        let (x0, y0) = self.px(self.x.0, self.y.0);
        let (x1, y1) = self.px(self.x.1, self.y.1);
        let _ = writeln!(
            s,
            "<rect x=\"{x0:.2}\" y=\"{y1:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"black\"/>",
            x1 - x0,
            y0 - y1
        );
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>", W / 2.0);
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\">{xlabel}</text>", W / 2.0, H - 10.0);
        let _ = writeln!(
            s,
            "<text x=\"14\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {:.2})\">{ylabel}</text>",
            H / 2.0,
            H / 2.0
        );
        for k in 0..=4 {
            let fx = self.x.0 + (self.x.1 - self.x.0) * k as f64 / 4.0;
            let fy = self.y.0 + (self.y.1 - self.y.0) * k as f64 / 4.0;
            let (tx, _) = self.px(fx, self.y.0);
            let (_, ty) = self.px(self.x.0, fy);
            let _ = writeln!(s, "<text x=\"{tx:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"10\">{fx:.2}</text>", y0 + 14.0);
            let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"10\">{fy:.2}</text>", x0 - 4.0, ty + 3.0);
        }
        s
    }

    fn polyline(&self, pts: &[(f64, f64)], color: &str) -> String {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let (a, b) = self.px(x, y);
                format!("{a:.2},{b:.2}")
            })
            .collect();
        format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            coords.join(" ")
        )
    }

    fn legend(&self, k: usize, label: &str, color: &str) -> String {
        let y = MARGIN + 14.0 * k as f64 + 4.0;
        format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\">{label}</text>\n",
            W - MARGIN - 90.0,
            W - MARGIN - 74.0,
            W - MARGIN - 70.0,
            y + 3.0
        )
    }
}

/// Standalone SVG plots for an experiment CSV, as `(file name, contents)`.
///
/// Detection CSVs give one ROC plot per arm; recovery CSVs give one plot of
/// mean cosine against `F_intro` with a line per variant.
pub fn emit_plots(csv: &str) -> Result<Vec<(String, String)>, HarnessError> {
    let rows = parse_csv(csv)?;
    let detection = rows.iter().any(|r| r.hypothesis == 'Q');
    let mut variants: Vec<String> = Vec::new();
    for r in &rows {
        if !variants.contains(&r.variant) {
            variants.push(r.variant.clone());
        }
    }
    let mut arms: Vec<usize> = rows.iter().map(|r| r.arm).collect();
    arms.sort_unstable();
    arms.dedup();

    let mut out = Vec::new();
    if detection {
        let frame = Frame {
            x: (0.0, 1.0),
            y: (0.0, 1.0),
        };
        for &a in &arms {
            let f = rows.iter().find(|r| r.arm == a).map(|r| r.f_intro).unwrap_or(0.0);
            let mut s = frame.open(&format!("ROC, arm {a}, F = {f:.2}"), "false positive rate", "true positive rate");
            s.push_str(&frame.polyline(&[(0.0, 0.0), (1.0, 1.0)], "#cccccc"));
            for (k, v) in variants.iter().enumerate() {
                let pick = |h: char| -> Vec<f64> {
                    rows.iter()
                        .filter(|r| r.arm == a && &r.variant == v && r.hypothesis == h)
                        .map(|r| r.value)
                        .collect()
                };
                let (p, q) = (pick('P'), pick('Q'));
                if p.is_empty() || q.is_empty() {
                    return Err(HarnessError::SchemaMismatch(format!(
                        "arm {a} variant {v} lacks P or Q rows"
                    )));
                }
                let color = PALETTE[k % PALETTE.len()];
                s.push_str(&frame.polyline(&roc_curve(&p, &q), color));
                s.push_str(&frame.legend(k, &format!("{v} AUC {:.3}", auc_rank(&p, &q)), color));
            }
            s.push_str("</svg>\n");
            out.push((format!("roc_arm{a}.svg"), s));
        }
    } else {
        let mut lines: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
        for v in &variants {
            let mut pts = Vec::new();
            for &a in &arms {
                let sel: Vec<&CsvRow> = rows.iter().filter(|r| r.arm == a && &r.variant == v).collect();
                let cos: Vec<f64> = sel.iter().filter_map(|r| r.cosine).collect();
                if cos.is_empty() {
                    return Err(HarnessError::SchemaMismatch(format!(
                        "recovery rows of arm {a} variant {v} lack cosine"
                    )));
                }
                pts.push((sel[0].f_intro, mean(&cos)));
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            lines.push((v.clone(), pts));
        }
        let xs = lines.iter().flat_map(|l| l.1.iter().map(|p| p.0));
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        let ys = lines.iter().flat_map(|l| l.1.iter().map(|p| p.1));
        let ymax = ys.fold(0.0f64, |a, y| a.max(y.abs()));
        let frame = Frame {
            x: (lo, hi),
            y: (-0.1f64.max(-ymax), (ymax * 1.1).max(0.1)),
        };
        let mut s = frame.open("Cosine similarity", "F", "mean cosine");
        for (k, (v, pts)) in lines.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            s.push_str(&frame.polyline(pts, color));
            s.push_str(&frame.legend(k, v, color));
        }
        s.push_str("</svg>\n");
        out.push(("cosine.svg".to_string(), s));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc_rank(&[3.0, 4.0, 5.0], &[0.0, 1.0, 2.0]), 1.0);
        assert_eq!(auc_rank(&[0.0, 1.0], &[2.0, 3.0]), 0.0);
        assert_eq!(auc_rank(&[1.0, 1.0], &[1.0]), 0.5);
        assert_eq!(auc_rank(&[2.0, 1.0], &[1.0, 0.0]), 0.875);
    }

    #[test]
    fn identical_distributions_give_half() {
        let s = crate::rng::Stream::new(5, 5);
        let (np, nq) = (400, 400);
        let p: Vec<f64> = (0..np).map(|i| s.normal(i)).collect();
        let q: Vec<f64> = (0..nq).map(|i| s.normal(10_000 + i)).collect();
        // Null standard error of the Mann-Whitney AUC.
        let se = (((np + nq + 1) as f64) / (12.0 * np as f64 * nq as f64)).sqrt();
        assert!((auc_rank(&p, &q) - 0.5).abs() < 3.0 * se);
    }

    proptest! {
        #[test]
        fn rank_and_trapezoid_agree(
            p in proptest::collection::vec(0i32..6, 1..30),
            q in proptest::collection::vec(0i32..6, 1..30),
        ) {
            let p: Vec<f64> = p.into_iter().map(f64::from).collect();
            let q: Vec<f64> = q.into_iter().map(f64::from).collect();
            let pts = roc_curve(&p, &q);
            prop_assert!((auc_rank(&p, &q) - auc_trapezoid(&pts)).abs() < 1e-12);
            prop_assert!(pts.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
            prop_assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
        }
    }

    #[test]
    fn variant_names() {
        assert_eq!(Variant::try_from("color2".to_string()), Ok(Variant::Color(2)));
        assert_eq!(Variant::try_from("all".to_string()), Ok(Variant::All));
        assert!(Variant::try_from("colour1".to_string()).is_err());
        assert_eq!(Variant::Color(0).to_string(), "color0");
    }

    #[test]
    fn plan_parsing_and_validation() {
        let json = r#"{
            "kind": "detection",
            "base_params": {"n": 30, "p": 15, "mu": 0.5, "rho": 0.6, "lambda": [3, 3], "epsilon": [0.5, 0.5]},
            "sweep": [{"lambda": 3.0}, {"lambdas": [4.0, 5.0]}, {"target_f": 1.5}],
            "variants": ["all", "color1"],
            "backend": "exact"
        }"#;
        let plan = ExperimentPlan::from_json(json).unwrap();
        assert_eq!(plan.trials, 100);
        assert_eq!(plan.backend, Backend::ExactEnumeration);
        let arms = plan.resolve_arms().unwrap();
        assert_eq!(arms[1].lambda, vec![4.0, 5.0]);
        assert!((threshold_f(&arms[2], FVariant::Intro) - 1.5).abs() < 1e-9);
        assert_eq!(plan.trial_seed(2, 7), 2_000_007);

        let mut bad = plan.clone();
        bad.variants = vec![Variant::Color(3)];
        assert!(matches!(bad.resolve_arms(), Err(HarnessError::InvalidPlan(_))));
        let mut bad = plan.clone();
        bad.sweep = vec![ArmSpec {
            lambda: Some(1.0),
            target_f: Some(1.0),
            ..ArmSpec::default()
        }];
        assert!(matches!(bad.resolve_arms(), Err(HarnessError::InvalidPlan(_))));
        assert!(ExperimentPlan::from_json(r#"{"kind": "detection"}"#).is_err());

        let toml = "kind = \"recovery\"\ntrials = 2\nsweep = [{ target_f = 1.2 }]\n[base_params]\nn = 20\np = 10\nmu = 0.75\nrho = 0.5\nlambda = [1.0]\nepsilon = [0.5]\n";
        let plan = ExperimentPlan::from_toml(toml).unwrap();
        assert_eq!(plan.kind, ExperimentKind::Recovery);
        assert_eq!(plan.trials, 2);
    }

    #[test]
    fn plots_reject_bad_schema() {
        assert!(matches!(emit_plots(""), Err(HarnessError::SchemaMismatch(_))));
        let header_only = format!("{CSV_VERSION}\n{CSV_COLUMNS}\n");
        assert!(matches!(emit_plots(&header_only), Err(HarnessError::SchemaMismatch(_))));
        let wrong = format!("{CSV_VERSION}\narm,value\n0,1\n");
        assert!(matches!(emit_plots(&wrong), Err(HarnessError::SchemaMismatch(_))));
    }
}
