//! Correlation-preserving projection of a recovery matrix, sign rounding and
//! evaluation metrics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::LatentState;
use crate::rng::Stream;

const ROUND_TAG: u64 = 0x5157;
const JITTER: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoundingError {
    #[error("Infeasible: no unit-diagonal PSD matrix reaches correlation floor {0}")]
    Infeasible(f64),
    #[error("NoConvergence: {iters} iterations left slack {slack:.3e}; raise max_iters or lower the floor")]
    NoConvergence { iters: usize, slack: f64 },
    #[error("InvalidInput: {0}")]
    InvalidInput(String),
    #[error("MissingTruth: the observation carries no planted labels")]
    MissingTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// Level `t` in `<phi_hat, phi> >= t n ||phi||_F`.
    pub correlation_floor: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            correlation_floor: 0.05,
            max_iters: 20_000,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub min_eigenvalue: f64,
    /// `<phi_hat, phi> / ||phi||_F - t n`; nonnegative when the floor holds.
    pub constraint_slack: f64,
    pub iters: usize,
    /// `<phi_hat, phi> / (n ||phi||_F)`.
    pub correlation: f64,
    /// Largest deviation of the diagonal from 1.
    pub diagonal_error: f64,
    /// Weight on the maximal-correlation point mixed in when Dykstra stops short of the floor.
    #[serde(default)]
    pub blend: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub phi_hat: DMatrix<f64>,
    pub x_hat: Option<Vec<i8>>,
    pub diagnostics: Diagnostics,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn clip_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&vals);
    symmetrize(&(scaled * eig.eigenvectors.transpose()))
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Projects `phi` onto unit-diagonal PSD matrices meeting the correlation floor.
///
/// Dykstra's cyclic projection starts at `phi` rescaled to Frobenius norm `n`.
/// The final iterate is clipped to the PSD cone and renormalized to unit
/// diagonal, then every constraint is checked against `tol`. When only the floor
/// is missed, the result is blended toward the maximal-correlation point.
pub fn psd_project(phi: &DMatrix<f64>, cfg: &ProjectionConfig) -> Result<Estimate, RoundingError> {
    let n = phi.nrows();
    if n == 0 || phi.ncols() != n {
        return Err(RoundingError::InvalidInput(format!(
            "expected a nonempty square matrix, got {}x{}",
            phi.nrows(),
            phi.ncols()
        )));
    }
    if !(cfg.correlation_floor > 0.0) || !(cfg.tol > 0.0) || cfg.max_iters == 0 {
        return Err(RoundingError::InvalidInput(
            "floor, tol and max_iters must be positive".into(),
        ));
    }
    if cfg.correlation_floor > 1.0 {
        return Err(RoundingError::Infeasible(cfg.correlation_floor));
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(RoundingError::InvalidInput("non-finite entry".into()));
    }
    let sym = symmetrize(phi);
    let norm = sym.norm();
    if norm == 0.0 {
        return Err(RoundingError::InvalidInput("zero matrix".into()));
    }
    let nf = n as f64;
    let c = &sym * (nf / norm);
    // Half-space <X, c> >= level. The margin, a relative 1e-4 of the floor, keeps
    // the finalized point inside even when Dykstra stops short of convergence.
    let margin = 1e-4 * cfg.correlation_floor * nf + 0.5 * cfg.tol;
    let level = nf * (cfg.correlation_floor * nf + margin);
    let c_sq = nf * nf;

    let mut x = c.clone();
    let mut inc = [
        DMatrix::<f64>::zeros(n, n),
        DMatrix::<f64>::zeros(n, n),
        DMatrix::<f64>::zeros(n, n),
    ];
    let finalize = |x: &DMatrix<f64>, iters: usize| {
        let phi_hat = normalize_diagonal(clip_psd(x.clone()));
        let diagnostics = diagnose(&phi_hat, &c, cfg.correlation_floor, iters);
        let violation = (-diagnostics.constraint_slack)
            .max(-diagnostics.min_eigenvalue)
            .max(diagnostics.diagonal_error);
        (phi_hat, diagnostics, violation)
    };
    let mut iters = 0;
    while iters < cfg.max_iters {
        iters += 1;
        let prev = x.clone();

        let y = &x + &inc[0];
        let dot = y.dot(&c);
        let proj = if dot >= level { y.clone() } else { &y + &c * ((level - dot) / c_sq) };
        inc[0] = y - &proj;
        x = proj;

        let y = &x + &inc[1];
        let proj = clip_psd(y.clone());
        inc[1] = y - &proj;
        x = proj;

        let y = &x + &inc[2];
        let mut proj = y.clone();
        for i in 0..n {
            proj[(i, i)] = 1.0;
        }
        inc[2] = y - &proj;
        x = proj;

        // Small steps alone do not certify the intersection; the rounded-off point must be feasible.
        if (&x - &prev).norm() < cfg.tol && finalize(&x, iters).2 <= cfg.tol {
            break;
        }
    }

    let (mut phi_hat, mut diagnostics, mut violation) = finalize(&x, iters);
    if violation > cfg.tol {
        // Thin feasible sets stall Dykstra just short of the floor. Mixing in the
        // maximal-correlation point stays unit-diagonal and PSD and closes the gap.
        let (z, upper) = elliptope_max(&c);
        let floor_level = cfg.correlation_floor * nf * nf;
        if upper < floor_level {
            return Err(RoundingError::Infeasible(cfg.correlation_floor));
        }
        let (a, b) = (phi_hat.dot(&c), z.dot(&c));
        let target = level.min(0.5 * (floor_level + b));
        if b > floor_level && target > a {
            let theta = (target - a) / (b - a);
            let mixed = &phi_hat * (1.0 - theta) + &z * theta;
            let mut d = diagnose(&mixed, &c, cfg.correlation_floor, iters);
            d.blend = theta;
            let v = (-d.constraint_slack).max(-d.min_eigenvalue).max(d.diagonal_error);
            if v <= cfg.tol {
                (phi_hat, diagnostics, violation) = (mixed, d, v);
            }
        }
    }
    if violation > cfg.tol {
        return Err(RoundingError::NoConvergence {
            iters,
            slack: violation,
        });
    }
    Ok(Estimate {
        phi_hat,
        x_hat: None,
        diagnostics,
    })
}

fn normalize_diagonal(m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let v = m[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut out = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * d[i] * d[j]);
    // A zero diagonal entry means a zero row; put it back on the unit diagonal.
    for i in 0..n {
        if d[i] == 0.0 {
            out[(i, i)] = 1.0;
        }
    }
    out
}

fn diagnose(phi_hat: &DMatrix<f64>, c: &DMatrix<f64>, floor: f64, iters: usize) -> Diagnostics {
    let n = phi_hat.nrows() as f64;
    // c has Frobenius norm n.
    let inner = phi_hat.dot(c) / n;
    Diagnostics {
        min_eigenvalue: min_eigenvalue(phi_hat),
        constraint_slack: inner - floor * n,
        iters,
        correlation: inner / n,
        diagonal_error: phi_hat.diagonal().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max),
        blend: 0.0,
    }
}

const ASCENT_SWEEPS: usize = 20_000;

/// Largest `<X, c>` over unit-diagonal PSD `X`, by coordinate ascent on a rank-k
/// factor `X = V V^T` with unit rows. Returns the final `X` and an upper bound from
/// the dual certificate `tr c + sum y + n lambda_max(c_off - diag y)`.
fn elliptope_max(c: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = c.nrows();
    let k = ((2.0 * n as f64).sqrt().ceil() as usize + 1).min(n);
    let mut off = c.clone();
    off.fill_diagonal(0.0);
    let eig = SymmetricEigen::new(off.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut v = DMatrix::<f64>::zeros(n, k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        v.set_column(col, &eig.eigenvectors.column(idx));
    }
    for i in 0..n {
        let r = v.row(i).norm();
        if r > 0.0 {
            let row = v.row(i) / r;
            v.set_row(i, &row);
        } else {
            v[(i, i % k)] = 1.0;
        }
    }
    let mut value = f64::NEG_INFINITY;
    for _ in 0..ASCENT_SWEEPS {
        for i in 0..n {
            let g = off.row(i) * &v;
            let r = g.norm();
            if r > 0.0 {
                v.set_row(i, &(g / r));
            }
        }
        let now = (&v * v.transpose()).dot(&off);
        let done = now - value <= 1e-13 * now.abs().max(1.0);
        value = now;
        if done {
            break;
        }
    }
    let g = &off * &v;
    let y = DVector::from_fn(n, |i, _| g.row(i).norm());
    let top = SymmetricEigen::new(&off - DMatrix::from_diagonal(&y)).eigenvalues.max();
    let upper = c.trace() + y.sum() + n as f64 * top.max(0.0);
    let mut x = symmetrize(&(&v * v.transpose()));
    x.fill_diagonal(1.0);
    (x, upper)
}

/// Signs of a draw from `N(0, phi_hat)`; zero components become `+1`.
pub fn sign_round(est: &Estimate, seed: u64) -> Vec<i8> {
    let n = est.phi_hat.nrows();
    let eig = SymmetricEigen::new(symmetrize(&est.phi_hat));
    let stream = Stream::new(seed, ROUND_TAG);
    let g = DVector::from_fn(n, |i, _| stream.normal(i as u64));
    let root = eig.eigenvalues.map(|v| (v.max(0.0) + JITTER).sqrt());
    let w = &eig.eigenvectors * root.component_mul(&(eig.eigenvectors.transpose() * g));
    w.iter().map(|&v| if v < 0.0 { -1 } else { 1 }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cosine: Option<f64>,
    pub overlap: Option<f64>,
}

pub enum MetricInput<'a> {
    Matrix(&'a DMatrix<f64>),
    Signs(&'a [i8]),
}

/// `<m, x x^T> / (||m||_F n)`; zero for a zero matrix.
pub fn cosine(m: &DMatrix<f64>, x: &[i8]) -> f64 {
    let n = x.len();
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            s += m[(i, j)] * (x[i] * x[j]) as f64;
        }
    }
    s / (norm * n as f64)
}

/// `|<x_hat, x>| / n`.
pub fn overlap(x_hat: &[i8], x: &[i8]) -> f64 {
    let s: i64 = x_hat.iter().zip(x).map(|(&a, &b)| (a * b) as i64).sum();
    s.unsigned_abs() as f64 / x.len() as f64
}

pub fn metrics(input: MetricInput<'_>, truth: Option<&LatentState>) -> Result<Metrics, RoundingError> {
    let truth = truth.ok_or(RoundingError::MissingTruth)?;
    let n = truth.x.len();
    Ok(match input {
        MetricInput::Matrix(m) => {
            if m.nrows() != n || m.ncols() != n {
                return Err(RoundingError::InvalidInput("matrix size differs from truth".into()));
            }
            Metrics {
                cosine: Some(cosine(m, &truth.x)),
                overlap: None,
            }
        }
        MetricInput::Signs(s) => {
            if s.len() != n {
                return Err(RoundingError::InvalidInput("vector size differs from truth".into()));
            }
            Metrics {
                cosine: None,
                overlap: Some(overlap(s, &truth.x)),
            }
        }
    })
}
