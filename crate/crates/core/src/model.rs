//! Model parameters and the planted / null samplers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Stream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("InvalidParams: {0}")]
    InvalidParams(String),
    #[error("IndexOutOfRange: layer {index} but the model has {layers} layers")]
    IndexOutOfRange { index: usize, layers: usize },
}

/// Scalars defining both the planted and the null distribution.
///
/// The number of layers is `lambda.len()`; `epsilon` must have the same length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: usize,
    pub p: usize,
    pub mu: f64,
    pub rho: f64,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub epsilon: Vec<f64>,
}

impl ModelParams {
    pub fn layers(&self) -> usize {
        self.lambda.len()
    }

    pub fn gamma(&self) -> f64 {
        self.n as f64 / self.p as f64
    }

    /// Signal strength of the feature channel, mu^2 / gamma.
    pub fn spike_snr(&self) -> f64 {
        self.mu * self.mu / self.gamma()
    }

    /// Signal strength of layer `l` (zero-based), eps^2 * lambda.
    pub fn layer_snr(&self, l: usize) -> f64 {
        self.epsilon[l] * self.epsilon[l] * self.lambda[l]
    }

    /// `(mu^2/gamma, eps_1^2 lambda_1, ..., eps_L^2 lambda_L)`.
    pub fn snr_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layers() + 1);
        v.push(self.spike_snr());
        v.extend((0..self.layers()).map(|l| self.layer_snr(l)));
        v
    }

    /// Checks every invariant, including edge probabilities at `n_context` vertices.
    pub fn validate_at(&self, n_context: usize) -> Result<(), ModelError> {
        let bad = |s: String| Err(ModelError::InvalidParams(s));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.p == 0 {
            return bad("p must be positive".into());
        }
        if n_context == 0 {
            return bad("n_context must be positive".into());
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return bad(format!("mu must be finite and non-negative, got {}", self.mu));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0,1], got {}", self.rho));
        }
        if self.lambda.len() != self.epsilon.len() {
            return bad(format!(
                "len(lambda) = {} differs from len(epsilon) = {}",
                self.lambda.len(),
                self.epsilon.len()
            ));
        }
        for (l, (&lam, &eps)) in self.lambda.iter().zip(&self.epsilon).enumerate() {
            if !(lam.is_finite() && lam > 0.0) {
                return bad(format!("lambda[{l}] must be positive, got {lam}"));
            }
            if !(eps > 0.0 && eps < 1.0) {
                return bad(format!("epsilon[{l}] must lie in (0,1), got {eps}"));
            }
            let hi = (1.0 + eps) * lam / n_context as f64;
            if hi > 1.0 {
                return bad(format!(
                    "edge probability (1+epsilon[{l}])*lambda[{l}]/n = {hi} exceeds 1"
                ));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.validate_at(self.n)
    }
}

/// Returns normally iff `params` satisfies every invariant at `n_context` vertices.
pub fn validate_params(params: &ModelParams, n_context: usize) -> Result<(), ModelError> {
    params.validate_at(n_context)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub x: Vec<i8>,
    pub z: Vec<Vec<i8>>,
    pub x_layer: Vec<Vec<i8>>,
    pub u: Vec<f64>,
}

impl LatentState {
    pub fn x_f64(&self) -> Vec<f64> {
        self.x.iter().map(|&s| s as f64).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Planted,
    Null,
}

/// Undirected simple graph: sorted edge list plus a bitset adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    n: usize,
    edges: Vec<(usize, usize)>,
    bits: Vec<u64>,
}

impl Layer {
    /// Builds a layer from `(i, j)` pairs; orientation and order are normalized.
    ///
    /// Self-loops and duplicates are rejected.
    pub fn from_edges(n: usize, pairs: &[(usize, usize)]) -> Result<Self, ModelError> {
        let words = (n * n).div_ceil(64);
        let mut layer = Layer {
            n,
            edges: Vec::with_capacity(pairs.len()),
            bits: vec![0; words],
        };
        for &(a, b) in pairs {
            if a >= n || b >= n {
                return Err(ModelError::InvalidParams(format!(
                    "edge ({a},{b}) outside 0..{n}"
                )));
            }
            if a == b {
                return Err(ModelError::InvalidParams(format!("self-loop at {a}")));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if layer.has_edge(i, j) {
                return Err(ModelError::InvalidParams(format!("duplicate edge ({i},{j})")));
            }
            layer.set(i, j);
            layer.edges.push((i, j));
        }
        layer.edges.sort_unstable();
        Ok(layer)
    }

    fn set(&mut self, i: usize, j: usize) {
        for k in [i * self.n + j, j * self.n + i] {
            self.bits[k / 64] |= 1 << (k % 64);
        }
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let k = i * self.n + j;
        self.bits[k / 64] >> (k % 64) & 1 == 1
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(i, j) in &self.edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }
}

#[derive(Clone, Debug)]
pub struct Observation {
    pub y: DMatrix<f64>,
    pub layers: Vec<Layer>,
    pub truth: Option<LatentState>,
    pub provenance: Provenance,
    pub seed: u64,
}

impl Observation {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    /// Relabels subjects: vertex `i` of the result is vertex `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Observation {
        let n = self.n();
        let y = DMatrix::from_fn(n, self.p(), |i, k| self.y[(perm[i], k)]);
        let mut inv = vec![0; n];
        for (i, &pi) in perm.iter().enumerate() {
            inv[pi] = i;
        }
        let layers = self
            .layers
            .iter()
            .map(|g| {
                let pairs: Vec<_> = g.edges().iter().map(|&(a, b)| (inv[a], inv[b])).collect();
                Layer::from_edges(n, &pairs).expect("permutation preserves simplicity")
            })
            .collect();
        let truth = self.truth.as_ref().map(|t| {
            let pick = |v: &Vec<i8>| perm.iter().map(|&j| v[j]).collect::<Vec<_>>();
            LatentState {
                x: pick(&t.x),
                z: t.z.iter().map(pick).collect(),
                x_layer: t.x_layer.iter().map(pick).collect(),
                u: t.u.clone(),
            }
        });
        Observation {
            y,
            layers,
            truth,
            provenance: self.provenance,
            seed: self.seed,
        }
    }
}

/// Centered and scaled adjacency of one layer, zero diagonal.
#[derive(Clone, Debug)]
pub struct CenteredLayer {
    pub values: DMatrix<f64>,
}

const TAG_X: u64 = 1;
const TAG_Z: u64 = 2;
const TAG_U: u64 = 3;
const TAG_NOISE: u64 = 4;
const TAG_EDGE: u64 = 5;
const DOMAIN_PLANTED: u64 = 0x11;
const DOMAIN_NULL: u64 = 0x22;

fn pair_index(n: usize, a: usize, b: usize) -> u64 {
    let (i, j) = if a < b { (a, b) } else { (b, a) };
    (i * n + j) as u64
}

/// Samples with vertex `i` drawing its randomness from key `keys[i]`.
pub(crate) fn sample_keyed(
    params: &ModelParams,
    seed: u64,
    provenance: Provenance,
    keys: &[usize],
) -> Result<Observation, ModelError> {
    params.validate()?;
    let (n, p, nl) = (params.n, params.p, params.layers());
    let domain = match provenance {
        Provenance::Planted => DOMAIN_PLANTED,
        Provenance::Null => DOMAIN_NULL,
    };
    let root = Stream::new(seed, domain);
    let noise = root.child(TAG_NOISE);
    let edge_root = root.child(TAG_EDGE);

    let mut y = DMatrix::from_fn(n, p, |i, k| noise.normal((keys[i] * p + k) as u64));
    let mut layers = Vec::with_capacity(nl);

    match provenance {
        Provenance::Null => {
            for l in 0..nl {
                let s = edge_root.child(l as u64);
                let q = params.lambda[l] / n as f64;
                let mut pairs = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        if s.bernoulli(pair_index(n, keys[i], keys[j]), q) {
                            pairs.push((i, j));
                        }
                    }
                }
                layers.push(Layer::from_edges(n, &pairs)?);
            }
            Ok(Observation {
                y,
                layers,
                truth: None,
                provenance,
                seed,
            })
        }
        Provenance::Planted => {
            let sx = root.child(TAG_X);
            let x: Vec<i8> = (0..n).map(|i| sx.sign(keys[i] as u64) as i8).collect();
            let su = root.child(TAG_U);
            let u: Vec<f64> = (0..p).map(|k| su.normal(k as u64)).collect();
            let keep = (1.0 + params.rho) / 2.0;
            let mut z = Vec::with_capacity(nl);
            let mut x_layer = Vec::with_capacity(nl);
            for l in 0..nl {
                let sz = root.child(TAG_Z).child(l as u64);
                let zl: Vec<i8> = (0..n)
                    .map(|i| if sz.bernoulli(keys[i] as u64, keep) { 1 } else { -1 })
                    .collect();
                x_layer.push(x.iter().zip(&zl).map(|(a, b)| a * b).collect::<Vec<i8>>());
                z.push(zl);
            }
            let scale = (params.mu / n as f64).sqrt();
            for k in 0..p {
                for i in 0..n {
                    y[(i, k)] += scale * x[i] as f64 * u[k];
                }
            }
            for l in 0..nl {
                let s = edge_root.child(l as u64);
                let base = params.lambda[l] / n as f64;
                let (same, diff) = (base * (1.0 + params.epsilon[l]), base * (1.0 - params.epsilon[l]));
                let xl = &x_layer[l];
                let mut pairs = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        let q = if xl[i] == xl[j] { same } else { diff };
                        if s.bernoulli(pair_index(n, keys[i], keys[j]), q) {
                            pairs.push((i, j));
                        }
                    }
                }
                layers.push(Layer::from_edges(n, &pairs)?);
            }
            Ok(Observation {
                y,
                layers,
                truth: Some(LatentState { x, z, x_layer, u }),
                provenance,
                seed,
            })
        }
    }
}

pub fn sample_planted(params: &ModelParams, seed: u64) -> Result<Observation, ModelError> {
    let keys: Vec<usize> = (0..params.n).collect();
    sample_keyed(params, seed, Provenance::Planted, &keys)
}

pub fn sample_null(params: &ModelParams, seed: u64) -> Result<Observation, ModelError> {
    let keys: Vec<usize> = (0..params.n).collect();
    sample_keyed(params, seed, Provenance::Null, &keys)
}

pub fn sample(
    params: &ModelParams,
    seed: u64,
    provenance: Provenance,
) -> Result<Observation, ModelError> {
    match provenance {
        Provenance::Planted => sample_planted(params, seed),
        Provenance::Null => sample_null(params, seed),
    }
}

/// Centered layer from a graph and its mean degree.
pub fn center_graph(layer: &Layer, lambda: f64) -> CenteredLayer {
    let n = layer.n();
    let q = lambda / n as f64;
    let sd = q.sqrt();
    let on = (1.0 - q) / sd;
    let off = -q / sd;
    let values = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else if layer.has_edge(i, j) {
            on
        } else {
            off
        }
    });
    CenteredLayer { values }
}

pub fn center_layer(
    obs: &Observation,
    params: &ModelParams,
    l: usize,
) -> Result<CenteredLayer, ModelError> {
    if l >= obs.layers.len() || l >= params.layers() {
        return Err(ModelError::IndexOutOfRange {
            index: l,
            layers: obs.layers.len().min(params.layers()),
        });
    }
    Ok(center_graph(&obs.layers[l], params.lambda[l]))
}
