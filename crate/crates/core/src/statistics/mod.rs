//! Decorated-cycle detection statistic and decorated-path recovery matrix.
//!
//! Both are weighted sums over embedded decorated subgraphs. Two backends
//! evaluate them: [`Backend::ExactEnumeration`] walks every vertex-distinct
//! embedding, [`Backend::TransferApprox`] contracts per-edge operators and
//! restores distinctness by inclusion-exclusion over set partitions.

mod exact;
pub(crate) mod partitions;
mod tensor;
mod transfer;

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::families::{
    enumerate_cycles, enumerate_paths, per_edge_weights, FamilyError, FamilyWeights, Topology,
};
use crate::model::{center_layer, ModelError, ModelParams, Observation};

pub use partitions::{set_partitions, moebius_weight};

/// Default cap on estimated elementary operations for one statistic.
pub const DEFAULT_OP_BUDGET: f64 = 1e11;

/// Largest cycle or path length accepted by the transfer backend.
pub const MAX_TRANSFER_ALEPH: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatError {
    #[error("InfeasibleSize: {0}")]
    InfeasibleSize(String),
    #[error("BudgetExceeded: estimated {estimated:.3e} operations exceed the budget {budget:.3e}; lower aleph or use the transfer backend")]
    BudgetExceeded { estimated: f64, budget: f64 },
    #[error("PartitionBudgetExceeded: aleph = {aleph} exceeds {max} for the transfer backend")]
    PartitionBudgetExceeded { aleph: usize, max: usize },
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    #[serde(alias = "exact")]
    ExactEnumeration,
    #[serde(alias = "transfer")]
    TransferApprox,
}

impl Backend {
    pub fn tag(self) -> &'static str {
        match self {
            Backend::ExactEnumeration => "exact",
            Backend::TransferApprox => "transfer",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticConfig {
    pub aleph: usize,
    pub backend: Backend,
    pub threshold_c: f64,
    pub b_collision_correction: bool,
    /// Letters allowed in the family; `None` keeps every color.
    #[serde(default)]
    pub colors: Option<Vec<u8>>,
    #[serde(default = "default_budget")]
    pub op_budget: f64,
}

fn default_budget() -> f64 {
    DEFAULT_OP_BUDGET
}

impl Default for StatisticConfig {
    fn default() -> Self {
        StatisticConfig {
            aleph: 4,
            backend: Backend::TransferApprox,
            threshold_c: 0.5,
            b_collision_correction: true,
            colors: None,
            op_budget: DEFAULT_OP_BUDGET,
        }
    }
}

impl StatisticConfig {
    pub fn new(aleph: usize, backend: Backend) -> Self {
        StatisticConfig {
            aleph,
            backend,
            ..Default::default()
        }
    }

    pub fn with_colors(mut self, colors: Vec<u8>) -> Self {
        self.colors = Some(colors);
        self
    }

    fn mask(&self, layers: usize) -> Result<Vec<u8>, StatError> {
        let mut m = match &self.colors {
            None => (0..=layers as u8).collect::<Vec<_>>(),
            Some(c) => c.clone(),
        };
        m.sort_unstable();
        m.dedup();
        if m.is_empty() {
            return Err(StatError::InvalidConfig("empty color set".into()));
        }
        if let Some(&c) = m.iter().find(|&&c| c as usize > layers) {
            return Err(StatError::InvalidConfig(format!(
                "color {c} exceeds the number of layers {layers}"
            )));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug)]
pub struct StatisticReport {
    /// Detection value; `None` for recovery reports.
    pub value: Option<f64>,
    /// Recovery matrix; `None` for detection reports.
    pub matrix: Option<DMatrix<f64>>,
    pub beta: f64,
    pub aleph: usize,
    pub tau: Option<f64>,
    pub decision: Option<bool>,
    pub backend: Backend,
    pub elapsed: f64,
}

/// Dense row-major views of one observation.
pub(crate) struct Prepared {
    pub n: usize,
    pub p: usize,
    /// `n x p`, row-major.
    pub y: Vec<f64>,
    /// `Y Y^T`, row-major, diagonal included.
    pub gram: Vec<f64>,
    /// Centered layers, row-major, index `l - 1` holds color `l`.
    pub centered: Vec<Vec<f64>>,
}

impl Prepared {
    pub fn new(obs: &Observation, params: &ModelParams) -> Result<Self, StatError> {
        let (n, p) = (obs.n(), obs.p());
        if n != params.n || p != params.p {
            return Err(StatError::InvalidConfig(format!(
                "observation is {n}x{p} but params say {}x{}",
                params.n, params.p
            )));
        }
        if obs.layers.len() != params.layers() {
            return Err(StatError::InvalidConfig(format!(
                "observation has {} layers but params have {}",
                obs.layers.len(),
                params.layers()
            )));
        }
        let mut y = vec![0.0; n * p];
        for i in 0..n {
            for k in 0..p {
                y[i * p + k] = obs.y[(i, k)];
            }
        }
        let g = &obs.y * obs.y.transpose();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                gram[i * n + j] = g[(i, j)];
            }
        }
        let mut centered = Vec::with_capacity(params.layers());
        for l in 0..params.layers() {
            let c = center_layer(obs, params, l)?;
            let mut v = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    v[i * n + j] = c.values[(i, j)];
                }
            }
            centered.push(v);
        }
        Ok(Prepared {
            n,
            p,
            y,
            gram,
            centered,
        })
    }
}

fn family_for(
    topology: Topology,
    aleph: usize,
    params: &ModelParams,
    mask: &[u8],
) -> Result<FamilyWeights, StatError> {
    let full = match topology {
        Topology::Cycle => enumerate_cycles(aleph, params)?,
        Topology::Path => enumerate_paths(aleph, params, true)?,
    };
    let fam = full.restricted(mask);
    if !(fam.beta > 0.0) {
        return Err(StatError::InvalidConfig(format!(
            "the family restricted to colors {mask:?} has zero weight"
        )));
    }
    Ok(fam)
}

fn check_detection_size(params: &ModelParams, aleph: usize) -> Result<(), StatError> {
    if aleph < 3 {
        return Err(StatError::InfeasibleSize(format!(
            "detection needs aleph >= 3, got {aleph}"
        )));
    }
    if params.n < 2 * aleph || params.p < aleph {
        return Err(StatError::InfeasibleSize(format!(
            "n = {}, p = {} too small for aleph = {aleph} (need n >= {}, p >= {aleph})",
            params.n,
            params.p,
            2 * aleph
        )));
    }
    Ok(())
}

fn check_recovery_size(params: &ModelParams, aleph: usize) -> Result<(), StatError> {
    if aleph < 1 {
        return Err(StatError::InfeasibleSize("recovery needs aleph >= 1".into()));
    }
    if params.n < aleph + 1 || params.p < aleph {
        return Err(StatError::InfeasibleSize(format!(
            "n = {}, p = {} too small for aleph = {aleph} (need n >= {}, p >= {aleph})",
            params.n,
            params.p,
            aleph + 1
        )));
    }
    Ok(())
}

/// Normalized weighted count of decorated cycles with `aleph` subject vertices.
pub fn detection_statistic(
    obs: &Observation,
    params: &ModelParams,
    cfg: &StatisticConfig,
) -> Result<StatisticReport, StatError> {
    let start = Instant::now();
    let aleph = cfg.aleph;
    check_detection_size(params, aleph)?;
    let mask = cfg.mask(params.layers())?;
    let fam = family_for(Topology::Cycle, aleph, params, &mask)?;
    let prep = Prepared::new(obs, params)?;
    let raw = match cfg.backend {
        Backend::ExactEnumeration => {
            exact::check_budget(&prep, Topology::Cycle, aleph, &mask, cfg.op_budget)?;
            exact::cycle_sum(&prep, params, aleph, &mask)
        }
        Backend::TransferApprox => {
            transfer::check_aleph(aleph)?;
            let w = per_edge_weights(params);
            transfer::cycle_sum(&prep, &w, aleph, &mask, cfg.b_collision_correction)
        }
    };
    let value = raw / (2 * aleph) as f64 / (prep.n as f64).powf(aleph as f64 / 2.0) / fam.beta.sqrt();
    let tau = cfg.threshold_c * fam.beta.sqrt();
    Ok(StatisticReport {
        value: Some(value),
        matrix: None,
        beta: fam.beta,
        aleph,
        tau: Some(tau),
        decision: Some(value >= tau),
        backend: cfg.backend,
        elapsed: start.elapsed().as_secs_f64(),
    })
}

/// Accept the planted hypothesis iff `value >= tau`.
pub fn detection_test(report: &StatisticReport) -> bool {
    match (report.value, report.tau) {
        (Some(v), Some(t)) => v >= t,
        _ => false,
    }
}

/// Weighted count of decorated paths between every pair of subjects.
pub fn recovery_matrix(
    obs: &Observation,
    params: &ModelParams,
    cfg: &StatisticConfig,
) -> Result<StatisticReport, StatError> {
    let start = Instant::now();
    let aleph = cfg.aleph;
    check_recovery_size(params, aleph)?;
    let mask = cfg.mask(params.layers())?;
    let fam = family_for(Topology::Path, aleph, params, &mask)?;
    let prep = Prepared::new(obs, params)?;
    let raw = match cfg.backend {
        Backend::ExactEnumeration => {
            exact::check_budget(&prep, Topology::Path, aleph, &mask, cfg.op_budget)?;
            exact::path_sums(&prep, params, aleph, &mask)
        }
        Backend::TransferApprox => {
            transfer::check_aleph(aleph)?;
            let w = per_edge_weights(params);
            transfer::path_sums(&prep, &w, aleph, &mask, cfg.b_collision_correction)
        }
    };
    let n = prep.n;
    let norm = 1.0 / (n as f64).powf(aleph as f64 / 2.0 - 1.0) / fam.beta;
    let phi = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            0.5 * (raw[i * n + j] + raw[j * n + i]) * norm
        }
    });
    Ok(StatisticReport {
        value: None,
        matrix: Some(phi),
        beta: fam.beta,
        aleph,
        tau: None,
        decision: None,
        backend: cfg.backend,
        elapsed: start.elapsed().as_secs_f64(),
    })
}

/// Same as [`recovery_matrix`] but requires the transfer backend.
pub fn transfer_backend(
    obs: &Observation,
    params: &ModelParams,
    cfg: &StatisticConfig,
    topology: Topology,
) -> Result<StatisticReport, StatError> {
    if cfg.backend != Backend::TransferApprox {
        return Err(StatError::InvalidConfig(
            "transfer_backend called with a non-transfer config".into(),
        ));
    }
    match topology {
        Topology::Cycle => detection_statistic(obs, params, cfg),
        Topology::Path => recovery_matrix(obs, params, cfg),
    }
}

/// Relative difference `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Largest entry difference relative to the largest entry magnitude.
pub fn relative_matrix_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let s = a.abs().max().max(b.abs().max());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs().max() / s
    }
}
