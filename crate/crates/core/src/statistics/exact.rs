//! Direct enumeration of vertex-distinct embeddings.

use rayon::prelude::*;

use super::{Prepared, StatError};
use crate::families::{for_each_word, word_xi, Topology};
use crate::model::ModelParams;

fn falling(n: usize, k: usize) -> f64 {
    (0..k).map(|i| n.saturating_sub(i) as f64).product()
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

/// Estimated elementary operations of a full enumeration.
pub(crate) fn estimate_ops(prep: &Prepared, topology: Topology, aleph: usize, mask: &[u8]) -> f64 {
    let vertices = match topology {
        Topology::Cycle => aleph,
        Topology::Path => aleph + 1,
    };
    let colored = mask.iter().filter(|&&c| c != 0).count();
    let zero = mask.contains(&0);
    let mut per_seq = 0.0;
    for c0 in 0..=aleph {
        if c0 > 0 && !zero {
            break;
        }
        per_seq += binom(aleph, c0) * (colored as f64).powi((aleph - c0) as i32) * falling(prep.p, c0);
    }
    falling(prep.n, vertices) * per_seq * aleph as f64
}

pub(crate) fn check_budget(
    prep: &Prepared,
    topology: Topology,
    aleph: usize,
    mask: &[u8],
    budget: f64,
) -> Result<(), StatError> {
    let estimated = estimate_ops(prep, topology, aleph, mask);
    if estimated > budget {
        return Err(StatError::BudgetExceeded { estimated, budget });
    }
    Ok(())
}

/// Signal weight of every word, indexed by its base-(L+1) code; zero outside the mask.
fn xi_table(params: &ModelParams, topology: Topology, aleph: usize, mask: &[u8]) -> Vec<f64> {
    let k = params.layers() + 1;
    let mut table = Vec::with_capacity(k.pow(aleph as u32));
    for_each_word(aleph, k, |w| {
        if w.iter().all(|c| mask.contains(c)) {
            table.push(word_xi(w, topology, params));
        } else {
            table.push(0.0);
        }
    });
    table
}

struct Walker<'a> {
    prep: &'a Prepared,
    topology: Topology,
    aleph: usize,
    k: usize,
    mask: &'a [u8],
    xi: Vec<f64>,
    inv_sqrt_p: f64,
}

struct State {
    seq: Vec<usize>,
    used: Vec<bool>,
    zeros: Vec<(usize, usize)>,
    taken: Vec<usize>,
}

impl Walker<'_> {
    /// Sum over distinct feature vertices, one per zero letter.
    fn zero_sum(&self, zeros: &[(usize, usize)], taken: &mut Vec<usize>) -> f64 {
        let Some((&(u, v), rest)) = zeros.split_first() else {
            return 1.0;
        };
        let p = self.prep.p;
        let (yu, yv) = (&self.prep.y[u * p..(u + 1) * p], &self.prep.y[v * p..(v + 1) * p]);
        let mut s = 0.0;
        if rest.is_empty() {
            // Innermost index: the full row product minus the excluded terms.
            let mut s = self.prep.gram[u * self.prep.n + v];
            for &b in taken.iter() {
                s -= yu[b] * yv[b];
            }
            return s;
        }
        if let [(u2, v2)] = *rest {
            // Two indices left: product of the two restricted sums minus the b1 = b2 diagonal.
            let n = self.prep.n;
            let (zu, zv) = (&self.prep.y[u2 * p..(u2 + 1) * p], &self.prep.y[v2 * p..(v2 + 1) * p]);
            let (mut a, mut c, mut d) = (self.prep.gram[u * n + v], self.prep.gram[u2 * n + v2], 0.0);
            for b in 0..p {
                d += yu[b] * yv[b] * zu[b] * zv[b];
            }
            for &b in taken.iter() {
                a -= yu[b] * yv[b];
                c -= zu[b] * zv[b];
                d -= yu[b] * yv[b] * zu[b] * zv[b];
            }
            return a * c - d;
        }
        for b in 0..p {
            if taken.contains(&b) {
                continue;
            }
            taken.push(b);
            s += yu[b] * yv[b] * self.zero_sum(rest, taken);
            taken.pop();
        }
        s
    }

    /// Extends the walk by the edge at `pos`; `acc` receives completed terms by end vertex.
    fn step(&self, st: &mut State, pos: usize, code: usize, weight: f64, acc: &mut [f64]) {
        let n = self.prep.n;
        let cur = st.seq[pos];
        let closing = self.topology == Topology::Cycle && pos + 1 == self.aleph;
        for next in 0..n {
            if closing {
                if next != st.seq[0] {
                    continue;
                }
            } else if st.used[next] {
                continue;
            }
            for &c in self.mask {
                let code2 = code * self.k + c as usize;
                let w = if c == 0 {
                    st.zeros.push((cur, next));
                    weight * self.inv_sqrt_p
                } else {
                    weight * self.prep.centered[c as usize - 1][cur * n + next]
                };
                if pos + 1 == self.aleph {
                    let xi = self.xi[code2];
                    if xi != 0.0 {
                        let z = self.zero_sum(&st.zeros, &mut st.taken);
                        acc[next] += xi * w * z;
                    }
                } else {
                    st.seq.push(next);
                    st.used[next] = true;
                    self.step(st, pos + 1, code2, w, acc);
                    st.used[next] = false;
                    st.seq.pop();
                }
                if c == 0 {
                    st.zeros.pop();
                }
            }
        }
    }

    /// Terms of all walks starting at `a0`, indexed by their last vertex.
    fn from_start(&self, a0: usize) -> Vec<f64> {
        let n = self.prep.n;
        let mut st = State {
            seq: Vec::with_capacity(self.aleph + 1),
            used: vec![false; n],
            zeros: Vec::with_capacity(self.aleph),
            taken: Vec::with_capacity(self.aleph),
        };
        st.seq.push(a0);
        st.used[a0] = true;
        let mut acc = vec![0.0; n];
        self.step(&mut st, 0, 0, 1.0, &mut acc);
        acc
    }
}

fn walker<'a>(
    prep: &'a Prepared,
    params: &ModelParams,
    topology: Topology,
    aleph: usize,
    mask: &'a [u8],
) -> Walker<'a> {
    Walker {
        prep,
        topology,
        aleph,
        k: params.layers() + 1,
        mask,
        xi: xi_table(params, topology, aleph, mask),
        inv_sqrt_p: 1.0 / (prep.p as f64).sqrt(),
    }
}

/// Sum over words and pointed, directed, vertex-distinct closed walks.
pub(crate) fn cycle_sum(prep: &Prepared, params: &ModelParams, aleph: usize, mask: &[u8]) -> f64 {
    let w = walker(prep, params, Topology::Cycle, aleph, mask);
    let parts: Vec<f64> = (0..prep.n)
        .into_par_iter()
        .map(|a0| w.from_start(a0).iter().sum())
        .collect();
    parts.iter().sum()
}

/// Row-major `n x n` sums over words and directed vertex-distinct chains by endpoints.
pub(crate) fn path_sums(prep: &Prepared, params: &ModelParams, aleph: usize, mask: &[u8]) -> Vec<f64> {
    let w = walker(prep, params, Topology::Path, aleph, mask);
    let rows: Vec<Vec<f64>> = (0..prep.n).into_par_iter().map(|a0| w.from_start(a0)).collect();
    rows.concat()
}
