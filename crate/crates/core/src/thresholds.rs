//! Closed-form threshold quantities.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    #[error("NoConvergence: symmetric eigensolver did not converge")]
    NoConvergence,
    #[error("InvalidTarget: {0}")]
    InvalidTarget(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FVariant {
    /// Interaction summands rho^4 s / (1 - (1 - rho^4) s).
    Intro,
    /// Interaction summands rho^4 s^2 / (1 - (1 - rho^4) s^2).
    SectionThree,
}

/// Threshold function F.
///
/// When some interaction denominator is non-positive the interaction term is
/// left out of the maximum; such a layer already has `s > 1`, so the side of 1
/// is decided by `max s` alone.
pub fn threshold_f(params: &ModelParams, variant: FVariant) -> f64 {
    let m = params.spike_snr();
    let r4 = params.rho.powi(4);
    let mut best = m;
    let mut interaction = m;
    let mut finite = true;
    for l in 0..params.layers() {
        let s = params.layer_snr(l);
        best = best.max(s);
        let q = match variant {
            FVariant::Intro => s,
            FVariant::SectionThree => s * s,
        };
        let denom = 1.0 - (1.0 - r4) * q;
        if denom <= 0.0 {
            finite = false;
        } else {
            interaction += r4 * q / denom;
        }
    }
    if finite {
        best = best.max(interaction);
    }
    best
}

/// `P = D V` together with its symmetrization `U V U`.
#[derive(Clone, Debug)]
pub struct InteractionMatrix {
    pub entries: DMatrix<f64>,
    pub symmetrized: DMatrix<f64>,
}

fn correlation_matrix(params: &ModelParams) -> DMatrix<f64> {
    let k = params.layers() + 1;
    let (r2, r4) = (params.rho.powi(2), params.rho.powi(4));
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else if i == 0 || j == 0 {
            r2
        } else {
            r4
        }
    })
}

pub fn interaction_matrix(params: &ModelParams) -> InteractionMatrix {
    let d = params.snr_vector();
    let v = correlation_matrix(params);
    let k = d.len();
    let entries = DMatrix::from_fn(k, k, |i, j| d[i] * v[(i, j)]);
    let symmetrized = DMatrix::from_fn(k, k, |i, j| d[i].sqrt() * v[(i, j)] * d[j].sqrt());
    InteractionMatrix {
        entries,
        symmetrized,
    }
}

/// Largest eigenvalue of the interaction matrix.
pub fn sigma_plus(m: &InteractionMatrix) -> Result<f64, ThresholdError> {
    let eig = SymmetricEigen::try_new(m.symmetrized.clone(), 1e-15, 10_000)
        .ok_or(ThresholdError::NoConvergence)?;
    Ok(eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0))
}

/// Weighted open-chain word sums `P^(aleph-1) v0`, indexed by the last letter.
pub fn word_recursion(params: &ModelParams, aleph: usize) -> Vec<f64> {
    assert!(aleph >= 1, "word_recursion needs aleph >= 1");
    let p = interaction_matrix(params).entries;
    let mut v = DVector::from_vec(params.snr_vector());
    for _ in 1..aleph {
        v = &p * v;
    }
    v.iter().cloned().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DivergenceReason {
    LayerFactor,
    SpikeFactor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianSurrogate {
    /// `f64::INFINITY` when divergent.
    pub value: f64,
    pub divergence_reason: Option<DivergenceReason>,
}

/// Closed form of `E exp((1+t)^2 m U^2 / 2 + sum_l s_l V_l^2 / 2)` for the
/// correlated Gaussian vector `(U, V_1, .., V_L)`.
pub fn chi2_surrogate(params: &ModelParams, t: f64) -> GaussianSurrogate {
    let r4 = params.rho.powi(4);
    let mut layer_product = 1.0;
    let mut spike = 1.0 - (1.0 + t).powi(2) * params.spike_snr();
    for l in 0..params.layers() {
        let s = params.layer_snr(l);
        let f = 1.0 - (1.0 - r4) * s;
        if f <= 0.0 {
            return GaussianSurrogate {
                value: f64::INFINITY,
                divergence_reason: Some(DivergenceReason::LayerFactor),
            };
        }
        layer_product /= f.sqrt();
        spike -= r4 * s / f;
    }
    if spike <= 0.0 {
        return GaussianSurrogate {
            value: f64::INFINITY,
            divergence_reason: Some(DivergenceReason::SpikeFactor),
        };
    }
    GaussianSurrogate {
        value: layer_product / spike.sqrt(),
        divergence_reason: None,
    }
}

/// Largest common mean degree `lambda` (applied to every layer) with `F_intro = target`.
///
/// Past `pole`, the first `lambda` where an interaction denominator vanishes,
/// the interaction term is dropped and `F_intro = max(mu^2/gamma, max eps^2 lambda)`
/// grows linearly; targets at or above its value there are solved on that
/// branch. Smaller targets have a single root below the pole, found by bisection.
pub fn solve_common_lambda(params: &ModelParams, target: f64) -> Result<f64, ThresholdError> {
    if params.layers() == 0 {
        return Err(ThresholdError::InvalidTarget("no layers to tune".into()));
    }
    let floor = params.spike_snr();
    if !(target > floor) || !target.is_finite() {
        return Err(ThresholdError::InvalidTarget(format!(
            "target F = {target} is not above mu^2/gamma = {floor}"
        )));
    }
    let eps_sq_max = params.epsilon.iter().map(|e| e * e).fold(0.0, f64::max);
    if eps_sq_max == 0.0 {
        return Err(ThresholdError::InvalidTarget("every epsilon is zero".into()));
    }
    let r4 = params.rho.powi(4);
    let pole = params
        .epsilon
        .iter()
        .map(|e| {
            if r4 >= 1.0 || *e == 0.0 {
                f64::INFINITY
            } else {
                1.0 / ((1.0 - r4) * e * e)
            }
        })
        .fold(f64::INFINITY, f64::min);
    if pole.is_finite() && target >= floor.max(eps_sq_max * pole) {
        return Ok(target / eps_sq_max);
    }
    let with = |lam: f64| {
        let mut q = params.clone();
        q.lambda = vec![lam; params.layers()];
        threshold_f(&q, FVariant::Intro)
    };
    let mut hi = if pole.is_finite() { pole } else { 1.0 };
    if !pole.is_finite() {
        while with(hi) < target {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(ThresholdError::NoConvergence);
            }
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if with(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
