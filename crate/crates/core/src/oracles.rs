//! Brute-force reference implementations.
//!
//! Nothing here shares code with the fast paths beyond the families module's
//! canonical forms: embeddings are listed literally and deduplicated as edge
//! sets, and moments are summed over sign configurations or pairings.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::families::{
    canonical_cycle, canonical_path, enumerate_cycles, enumerate_paths, FamilyError, FamilyWeights,
};
use crate::model::{center_layer, ModelError, ModelParams, Observation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("InfeasibleSize: {0}")]
    InfeasibleSize(String),
    #[error("BudgetExceeded: {0}")]
    BudgetExceeded(String),
    #[error("DominanceViolated: {query:?} at rho = {rho}: bernoulli {bernoulli} > gaussian {gaussian}")]
    DominanceViolated {
        query: MomentQuery,
        rho: f64,
        bernoulli: f64,
        gaussian: f64,
    },
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Neumaier compensated sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Edge of a labeled decorated subgraph; feature vertex `b` is stored as `n + b`.
type Edge = (usize, usize, u8);

fn check_brute_size(obs: &Observation, aleph: usize) -> Result<(), OracleError> {
    if obs.n() > 12 || obs.p() > 6 || aleph > 3 {
        return Err(OracleError::InfeasibleSize(format!(
            "brute force needs n <= 12, p <= 6, aleph <= 3; got n = {}, p = {}, aleph = {aleph}",
            obs.n(),
            obs.p()
        )));
    }
    Ok(())
}

/// All decorations of one subject sequence: calls `f(word, edges)` per choice of
/// letters and distinct feature vertices.
fn for_each_decoration(
    seq: &[usize],
    closed: bool,
    n: usize,
    p: usize,
    colors: &[u8],
    f: &mut dyn FnMut(&[u8], Vec<Edge>),
) {
    let aleph = if closed { seq.len() } else { seq.len() - 1 };
    let mut word = Vec::with_capacity(aleph);
    let mut feats = Vec::with_capacity(aleph);
    #[allow(clippy::too_many_arguments)]
    fn rec(
        i: usize,
        aleph: usize,
        seq: &[usize],
        n: usize,
        p: usize,
        colors: &[u8],
        word: &mut Vec<u8>,
        feats: &mut Vec<Option<usize>>,
        f: &mut dyn FnMut(&[u8], Vec<Edge>),
    ) {
        if i == aleph {
            let mut edges = Vec::new();
            for e in 0..aleph {
                let (u, v) = (seq[e], seq[(e + 1) % seq.len()]);
                match feats[e] {
                    None => edges.push((u.min(v), u.max(v), word[e])),
                    Some(b) => {
                        edges.push((u, n + b, 0));
                        edges.push((v, n + b, 0));
                    }
                }
            }
            edges.sort_unstable();
            f(word, edges);
            return;
        }
        for &c in colors {
            word.push(c);
            if c == 0 {
                for b in 0..p {
                    if feats.contains(&Some(b)) {
                        continue;
                    }
                    feats.push(Some(b));
                    rec(i + 1, aleph, seq, n, p, colors, word, feats, f);
                    feats.pop();
                }
            } else {
                feats.push(None);
                rec(i + 1, aleph, seq, n, p, colors, word, feats, f);
                feats.pop();
            }
            word.pop();
        }
    }
    rec(0, aleph, seq, n, p, colors, &mut word, &mut feats, f);
}

fn for_each_distinct_sequence(n: usize, len: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(n: usize, len: usize, seq: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if seq.len() == len {
            f(seq);
            return;
        }
        for v in 0..n {
            if !seq.contains(&v) {
                seq.push(v);
                rec(n, len, seq, f);
                seq.pop();
            }
        }
    }
    rec(n, len, &mut Vec::with_capacity(len), f);
}

/// `f_S`: product of `Y` over feature edges and centered entries over colored edges.
fn subgraph_product(edges: &[Edge], n: usize, obs: &Observation, centered: &[DMatrix<f64>]) -> f64 {
    edges
        .iter()
        .map(|&(u, v, c)| {
            if c == 0 {
                obs.y[(u, v - n)]
            } else {
                centered[c as usize - 1][(u, v)]
            }
        })
        .product()
}

fn centered_all(obs: &Observation, params: &ModelParams) -> Result<Vec<DMatrix<f64>>, OracleError> {
    (0..params.layers())
        .map(|l| Ok(center_layer(obs, params, l)?.values))
        .collect()
}

fn colors_of(params: &ModelParams, mask: Option<&[u8]>) -> Vec<u8> {
    match mask {
        Some(m) => m.to_vec(),
        None => (0..=params.layers() as u8).collect(),
    }
}

/// Detection statistic by listing every labeled decorated cycle once.
pub fn brute_force_detection(
    obs: &Observation,
    params: &ModelParams,
    aleph: usize,
) -> Result<f64, OracleError> {
    brute_force_detection_masked(obs, params, aleph, None)
}

/// As [`brute_force_detection`], restricted to words over `mask`.
pub fn brute_force_detection_masked(
    obs: &Observation,
    params: &ModelParams,
    aleph: usize,
    mask: Option<&[u8]>,
) -> Result<f64, OracleError> {
    check_brute_size(obs, aleph)?;
    let (n, p) = (obs.n(), obs.p());
    let colors = colors_of(params, mask);
    let fam: FamilyWeights = enumerate_cycles(aleph, params)?.restricted(&colors);
    let centered = centered_all(obs, params)?;

    let mut seen: BTreeMap<Vec<Edge>, Vec<u8>> = BTreeMap::new();
    for_each_distinct_sequence(n, aleph, &mut |seq| {
        for_each_decoration(seq, true, n, p, &colors, &mut |word, edges| {
            seen.entry(edges).or_insert_with(|| word.to_vec());
        });
    });
    let mut total = CompensatedSum::default();
    for (edges, word) in &seen {
        let (canon, _) = canonical_cycle(word);
        let class = fam.find(&canon).expect("class present");
        let c0 = class.counts[0] as f64;
        let coef = class.xi / (n as f64).powf(aleph as f64 / 2.0) / (p as f64).powf(c0 / 2.0);
        total.add(coef * subgraph_product(edges, n, obs, &centered));
    }
    Ok(total.value() / fam.beta.sqrt())
}

/// Recovery matrix by listing every labeled decorated path once.
pub fn brute_force_recovery(
    obs: &Observation,
    params: &ModelParams,
    aleph: usize,
) -> Result<DMatrix<f64>, OracleError> {
    check_brute_size(obs, aleph)?;
    if aleph == 0 {
        return Err(OracleError::InfeasibleSize("aleph must be positive".into()));
    }
    let (n, p) = (obs.n(), obs.p());
    let colors = colors_of(params, None);
    let fam = enumerate_paths(aleph, params, true)?;
    let centered = centered_all(obs, params)?;

    let mut seen: BTreeMap<Vec<Edge>, (Vec<u8>, usize, usize)> = BTreeMap::new();
    for_each_distinct_sequence(n, aleph + 1, &mut |seq| {
        let (u, v) = (seq[0], seq[aleph]);
        for_each_decoration(seq, false, n, p, &colors, &mut |word, edges| {
            seen.entry(edges).or_insert_with(|| (word.to_vec(), u.min(v), u.max(v)));
        });
    });
    let mut acc: BTreeMap<(usize, usize), CompensatedSum> = BTreeMap::new();
    for (edges, (word, u, v)) in &seen {
        let (canon, _) = canonical_path(word);
        let class = fam.find(&canon).expect("class present");
        let c0 = class.counts[0] as f64;
        let coef = class.xi
            / (n as f64).powf(aleph as f64 / 2.0 - 1.0)
            / (p as f64).powf(c0 / 2.0)
            / fam.beta;
        acc.entry((*u, *v))
            .or_default()
            .add(coef * subgraph_product(edges, n, obs, &centered));
    }
    let mut phi = DMatrix::zeros(n, n);
    for ((u, v), s) in acc {
        phi[(u, v)] = s.value();
        phi[(v, u)] = s.value();
    }
    Ok(phi)
}

/// Exponents `2 alpha`, `2 alpha_l` of the overlap moments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MomentQuery {
    pub alpha: usize,
    pub alphas: Vec<usize>,
    pub n_small: usize,
}

impl MomentQuery {
    fn total(&self) -> usize {
        self.alpha + self.alphas.iter().sum::<usize>()
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|x| x as f64).product()
}

/// `E[(<x,x'>/sqrt n)^(2a) prod_l (<x_l,x_l'>/sqrt n)^(2a_l)]` by a product formula over coordinates.
pub fn bernoulli_moment(q: &MomentQuery, rho: f64) -> Result<f64, OracleError> {
    if q.total() > 4 || q.n_small > 8 || q.n_small == 0 {
        return Err(OracleError::BudgetExceeded(format!(
            "need alpha + sum alphas <= 4 and 1 <= n <= 8, got {q:?}"
        )));
    }
    // Exponent caps per channel; state = exponents already assigned.
    let caps: Vec<usize> = std::iter::once(2 * q.alpha).chain(q.alphas.iter().map(|a| 2 * a)).collect();
    let radix: Vec<usize> = caps.iter().map(|c| c + 1).collect();
    let states: usize = radix.iter().product();
    let decode = |mut s: usize| {
        let mut v = vec![0; radix.len()];
        for (i, r) in radix.iter().enumerate() {
            v[i] = s % r;
            s /= r;
        }
        v
    };
    let encode = |v: &[usize]| v.iter().zip(&radix).rev().fold(0, |acc, (x, r)| acc * r + x);
    let r2 = rho * rho;
    // Per-coordinate weight of an exponent tuple.
    let coord = |e: &[usize]| -> f64 {
        let sum: usize = e.iter().sum();
        if sum % 2 == 1 {
            return 0.0;
        }
        let odd = e[1..].iter().filter(|&&b| b % 2 == 1).count();
        let denom: f64 = e.iter().map(|&b| factorial(b)).product();
        r2.powi(odd as i32) / denom
    };
    let mut dp = vec![0.0; states];
    dp[0] = 1.0;
    for _ in 0..q.n_small {
        let mut next = vec![0.0; states];
        for s in 0..states {
            if dp[s] == 0.0 {
                continue;
            }
            let have = decode(s);
            for t in 0..states {
                let add = decode(t);
                if have.iter().zip(&add).zip(&caps).any(|((h, a), c)| h + a > *c) {
                    continue;
                }
                let w = coord(&add);
                if w == 0.0 {
                    continue;
                }
                let sum: Vec<usize> = have.iter().zip(&add).map(|(h, a)| h + a).collect();
                next[encode(&sum)] += dp[s] * w;
            }
        }
        dp = next;
    }
    let full = encode(&caps);
    let multinomial: f64 = caps.iter().map(|&c| factorial(c)).product();
    Ok(dp[full] * multinomial / (q.n_small as f64).powi(q.total() as i32))
}

/// The same moment by summing over every sign configuration of
/// `x, x', z_l, z'_l`, weighting each flip mask by its probability.
pub fn bernoulli_moment_enumerated(q: &MomentQuery, rho: f64) -> Result<f64, OracleError> {
    let n = q.n_small;
    let layers = q.alphas.len();
    let bits = n * (2 + 2 * layers);
    if bits > 24 {
        return Err(OracleError::BudgetExceeded(format!(
            "{bits} sign bits are too many for literal enumeration"
        )));
    }
    let keep = (1.0 + rho) / 2.0;
    let flip = (1.0 - rho) / 2.0;
    let sqrt_n = (n as f64).sqrt();
    let mut total = CompensatedSum::default();
    for cfg in 0u64..(1u64 << bits) {
        let s = |k: usize| if cfg >> k & 1 == 1 { -1.0 } else { 1.0 };
        let x = |i: usize| s(i);
        let xp = |i: usize| s(n + i);
        let z = |l: usize, i: usize| s(2 * n + 2 * l * n + i);
        let zp = |l: usize, i: usize| s(2 * n + 2 * l * n + n + i);
        let mut prob = 0.5f64.powi(2 * n as i32);
        for l in 0..layers {
            for i in 0..n {
                prob *= if z(l, i) > 0.0 { keep } else { flip };
                prob *= if zp(l, i) > 0.0 { keep } else { flip };
            }
        }
        if prob == 0.0 {
            continue;
        }
        let ov: f64 = (0..n).map(|i| x(i) * xp(i)).sum::<f64>() / sqrt_n;
        let mut v = ov.powi(2 * q.alpha as i32);
        for l in 0..layers {
            let o: f64 = (0..n).map(|i| x(i) * z(l, i) * xp(i) * zp(l, i)).sum::<f64>() / sqrt_n;
            v *= o.powi(2 * q.alphas[l] as i32);
        }
        total.add(prob * v);
    }
    Ok(total.value())
}

/// `E[U^(2a) prod_l V_l^(2a_l)]` by summing over all pairings.
pub fn gaussian_moment(q: &MomentQuery, rho: f64) -> Result<f64, OracleError> {
    let mut vars: Vec<usize> = vec![0; 2 * q.alpha];
    for (l, &a) in q.alphas.iter().enumerate() {
        vars.extend(std::iter::repeat_n(l + 1, 2 * a));
    }
    if vars.len() > 8 {
        return Err(OracleError::BudgetExceeded(format!(
            "total degree {} exceeds 8",
            vars.len()
        )));
    }
    let (r2, r4) = (rho * rho, rho.powi(4));
    let cov = |a: usize, b: usize| {
        if a == b {
            1.0
        } else if a == 0 || b == 0 {
            r2
        } else {
            r4
        }
    };
    fn pairings(rest: &mut Vec<usize>, cov: &dyn Fn(usize, usize) -> f64) -> f64 {
        if rest.is_empty() {
            return 1.0;
        }
        let first = rest.remove(0);
        let mut s = 0.0;
        for j in 0..rest.len() {
            let other = rest.remove(j);
            s += cov(first, other) * pairings(rest, cov);
            rest.insert(j, other);
        }
        rest.insert(0, first);
        s
    }
    Ok(pairings(&mut vars, &cov))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DominanceReport {
    pub rho: f64,
    pub layers: usize,
    pub checked: usize,
    /// Largest `bernoulli - gaussian` seen; non-positive when the inequality holds strictly.
    pub max_gap: f64,
    pub min_gap: f64,
}

/// All exponent tuples with `alpha + sum alphas <= max_total` over `layers` layers.
fn queries(layers: usize, max_total: usize) -> Vec<(usize, Vec<usize>)> {
    let mut out = Vec::new();
    fn rec(layers: usize, left: usize, cur: &mut Vec<usize>, alpha: usize, out: &mut Vec<(usize, Vec<usize>)>) {
        if cur.len() == layers {
            out.push((alpha, cur.clone()));
            return;
        }
        for a in 0..=left {
            cur.push(a);
            rec(layers, left - a, cur, alpha, out);
            cur.pop();
        }
    }
    for alpha in 0..=max_total {
        rec(layers, max_total - alpha, &mut Vec::new(), alpha, &mut out);
    }
    out
}

/// Checks `bernoulli <= gaussian + 1e-12` for every query with total at most 3 and `n` in 2..=6.
pub fn moment_dominance_suite(rho: f64, layers: usize) -> Result<DominanceReport, OracleError> {
    let mut report = DominanceReport {
        rho,
        layers,
        checked: 0,
        max_gap: f64::NEG_INFINITY,
        min_gap: f64::INFINITY,
    };
    for (alpha, alphas) in queries(layers, 3) {
        for n in 2..=6 {
            let q = MomentQuery {
                alpha,
                alphas: alphas.clone(),
                n_small: n,
            };
            let b = bernoulli_moment(&q, rho)?;
            let g = gaussian_moment(&q, rho)?;
            let gap = b - g;
            report.checked += 1;
            report.max_gap = report.max_gap.max(gap);
            report.min_gap = report.min_gap.min(gap);
            if gap > 1e-12 {
                return Err(OracleError::DominanceViolated {
                    query: q,
                    rho,
                    bernoulli: b,
                    gaussian: g,
                });
            }
        }
    }
    Ok(report)
}

/// Rho values of the default dominance grid.
pub const DOMINANCE_RHOS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
/// Layer counts of the default dominance grid.
pub const DOMINANCE_LAYERS: [usize; 3] = [0, 1, 2];

/// Runs [`moment_dominance_suite`] over the default grid.
pub fn default_dominance_grid() -> Result<Vec<DominanceReport>, OracleError> {
    let mut out = Vec::new();
    for &rho in &DOMINANCE_RHOS {
        for &l in &DOMINANCE_LAYERS {
            out.push(moment_dominance_suite(rho, l)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(alpha: usize, alphas: &[usize], n: usize) -> MomentQuery {
        MomentQuery {
            alpha,
            alphas: alphas.to_vec(),
            n_small: n,
        }
    }

    #[test]
    fn gaussian_examples() {
        for rho in [0.0f64, 0.3, 0.8, 1.0] {
            let r4 = rho.powi(4);
            assert!((gaussian_moment(&q(1, &[], 1), rho).unwrap() - 1.0).abs() < 1e-15);
            assert!((gaussian_moment(&q(1, &[1], 1), rho).unwrap() - (1.0 + 2.0 * r4)).abs() < 1e-14);
            assert!(
                (gaussian_moment(&q(0, &[1, 1], 1), rho).unwrap() - (1.0 + 2.0 * r4 * r4)).abs() < 1e-14
            );
            assert!((gaussian_moment(&q(2, &[], 1), rho).unwrap() - 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn gaussian_layer_symmetry() {
        for rho in [0.2, 0.7] {
            let a = gaussian_moment(&q(1, &[2, 0, 1], 1), rho).unwrap();
            let b = gaussian_moment(&q(1, &[0, 1, 2], 1), rho).unwrap();
            let c = gaussian_moment(&q(1, &[1, 2, 0], 1), rho).unwrap();
            assert!((a - b).abs() < 1e-13 && (a - c).abs() < 1e-13);
        }
    }

    #[test]
    fn bernoulli_simple() {
        for n in 1..6 {
            assert!((bernoulli_moment(&q(1, &[0, 0], n), 0.4).unwrap() - 1.0).abs() < 1e-14);
        }
        // Fourth moment of a normalized Rademacher sum: 3 - 2/n.
        for n in 1..6 {
            let want = 3.0 - 2.0 / n as f64;
            assert!((bernoulli_moment(&q(2, &[], n), 0.0).unwrap() - want).abs() < 1e-13);
        }
        assert!(bernoulli_moment(&q(3, &[2], 3), 0.5).is_err());
    }

    #[test]
    fn bernoulli_factorized_matches_enumeration() {
        let cases = [
            q(1, &[1], 4),
            q(1, &[0], 3),
            q(0, &[2], 3),
            q(2, &[1], 2),
            q(1, &[1, 1], 2),
            q(0, &[1, 1], 3),
            q(1, &[1, 0], 3),
        ];
        for c in &cases {
            for rho in [0.0, 0.5, 0.9, 1.0] {
                let a = bernoulli_moment(c, rho).unwrap();
                let b = bernoulli_moment_enumerated(c, rho).unwrap();
                assert!((a - b).abs() < 1e-12, "{c:?} rho {rho}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rho_one_single_overlap() {
        // With rho = 1 every layer overlap equals the main overlap.
        for n in 2..6 {
            let b = bernoulli_moment(&q(1, &[1], n), 1.0).unwrap();
            let c = bernoulli_moment(&q(2, &[0], n), 1.0).unwrap();
            assert!((b - c).abs() < 1e-12);
            assert!(b <= 3.0 + 1e-12);
        }
    }

    #[test]
    fn dominance_small() {
        let r = moment_dominance_suite(0.5, 1).unwrap();
        assert!(r.max_gap <= 1e-12);
        assert!(r.checked > 0);
    }

    #[test]
    fn compensated_sum() {
        let mut s = CompensatedSum::default();
        for x in [1e16, 1.0, -1e16, 1.0] {
            s.add(x);
        }
        assert_eq!(s.value(), 2.0);
    }
}
