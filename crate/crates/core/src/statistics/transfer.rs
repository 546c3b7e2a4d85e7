//! Per-edge operator contraction with inclusion-exclusion for distinct vertices.
//!
//! Each term fixes a partition of the subject positions and a partition of the
//! edge positions. Subject positions in one block share an index; edge
//! positions in one non-singleton block are zero letters sharing a feature
//! index. Weighting every term by the Moebius function of both partitions
//! leaves exactly the vertex-distinct embeddings.

use std::sync::Arc;

use super::partitions::{block_count, moebius_weight, set_partitions};
use super::tensor::{contract_network, Tensor};
use super::{Prepared, StatError, MAX_TRANSFER_ALEPH};
use crate::families::{EdgeWeights, Topology};

pub(crate) fn check_aleph(aleph: usize) -> Result<(), StatError> {
    if aleph > MAX_TRANSFER_ALEPH {
        return Err(StatError::PartitionBudgetExceeded {
            aleph,
            max: MAX_TRANSFER_ALEPH,
        });
    }
    Ok(())
}

/// Shared operator data for one observation and color mask.
///
/// Junction factors are folded into the operator of the edge they precede, so
/// every network reuses the same buffers under different variable labels.
struct Operators {
    n: usize,
    p: usize,
    k: usize,
    has_zero: bool,
    /// `[c][a][a']`: letter factor times the edge operator of color `mask[c]`.
    full: Arc<Vec<f64>>,
    /// `[c][a]`: diagonal of `full`.
    diag: Arc<Vec<f64>>,
    /// `[c_in][c][a][a']`: `full` times the junction from letter `c_in`.
    full_after: Arc<Vec<f64>>,
    /// `[c_in][c][a]`: diagonal of `full_after`.
    diag_after: Arc<Vec<f64>>,
    /// `[c][a][a']`: `full` times the junction from a zero letter.
    full_after_zero: Arc<Vec<f64>>,
    /// `[c][a]`: diagonal of `full_after_zero`.
    diag_after_zero: Arc<Vec<f64>>,
    /// `[a][b]`.
    y: Arc<Vec<f64>>,
    /// `[c]`: junction between letter `mask[c]` and a following zero letter.
    junction_zero: Arc<Vec<f64>>,
    /// Letter factor of a zero letter, including `p^(-1/2)`.
    zero_factor: f64,
}

impl Operators {
    fn new(prep: &Prepared, w: &EdgeWeights, mask: &[u8]) -> Self {
        let (n, p) = (prep.n, prep.p);
        let zero_factor = w.base[0] / (p as f64).sqrt();
        let k = mask.len();
        let mut full = Vec::with_capacity(k * n * n);
        let mut diag = Vec::with_capacity(k * n);
        for &c in mask {
            let (src, f) = if c == 0 {
                (&prep.gram, zero_factor)
            } else {
                (&prep.centered[c as usize - 1], w.base[c as usize])
            };
            full.extend(src.iter().map(|v| v * f));
            diag.extend((0..n).map(|a| src[a * n + a] * f));
        }
        let scaled = |src: &[f64], block: usize, prev: usize| -> Vec<f64> {
            let mut out = Vec::with_capacity(k * block);
            for (ci, &c) in mask.iter().enumerate() {
                let t = w.junction[prev][c as usize];
                out.extend(src[ci * block..(ci + 1) * block].iter().map(|v| v * t));
            }
            out
        };
        let mut full_after = Vec::with_capacity(k * k * n * n);
        let mut diag_after = Vec::with_capacity(k * k * n);
        for &c_in in mask {
            full_after.extend(scaled(&full, n * n, c_in as usize));
            diag_after.extend(scaled(&diag, n, c_in as usize));
        }
        let full_after_zero = scaled(&full, n * n, 0);
        let diag_after_zero = scaled(&diag, n, 0);
        let junction_zero = mask.iter().map(|&a| w.junction[a as usize][0]).collect();
        Operators {
            n,
            p,
            k,
            has_zero: mask.contains(&0),
            full: Arc::new(full),
            diag: Arc::new(diag),
            full_after: Arc::new(full_after),
            diag_after: Arc::new(diag_after),
            full_after_zero: Arc::new(full_after_zero),
            diag_after_zero: Arc::new(diag_after_zero),
            y: Arc::new(prep.y.clone()),
            junction_zero: Arc::new(junction_zero),
            zero_factor,
        }
    }
}

/// One inclusion-exclusion term; `None` when it vanishes identically.
fn build_network(
    ops: &Operators,
    topology: Topology,
    aleph: usize,
    a_part: &[usize],
    b_part: &[usize],
) -> Option<(Vec<Tensor>, Vec<usize>)> {
    let (n, p, k) = (ops.n, ops.p, ops.k);
    let vertices = a_part.len();
    let a_blocks = block_count(a_part);
    let mut b_sizes = vec![0usize; block_count(b_part)];
    for &b in b_part {
        b_sizes[b] += 1;
    }
    // Variable ids: subject blocks, then one color per free edge, then feature blocks.
    let color_var = |e: usize| a_blocks + e;
    let feature_var = |b: usize| a_blocks + aleph + b;
    let free = |e: usize| b_sizes[b_part[e]] == 1;
    let previous = |e: usize| match topology {
        Topology::Cycle => Some((e + aleph - 1) % aleph),
        Topology::Path => e.checked_sub(1),
    };

    let mut factors = Vec::new();
    let mut scale = 1.0;
    for e in 0..aleph {
        let (x, y) = (a_part[e], a_part[(e + 1) % vertices]);
        if !free(e) {
            if !ops.has_zero {
                return None;
            }
            let fb = feature_var(b_part[e]);
            factors.push(Tensor::new(vec![x, fb], vec![n, p], Arc::clone(&ops.y)));
            factors.push(Tensor::new(vec![y, fb], vec![n, p], Arc::clone(&ops.y)));
            scale *= ops.zero_factor;
            // Junction from a free letter into this zero letter.
            if let Some(prev) = previous(e).filter(|&q| free(q)) {
                factors.push(Tensor::new(
                    vec![color_var(prev)],
                    vec![k],
                    Arc::clone(&ops.junction_zero),
                ));
            }
            continue;
        }
        if x == y && !ops.has_zero {
            return None;
        }
        let c = color_var(e);
        let t = match (previous(e), x == y) {
            (None, false) => Tensor::new(vec![c, x, y], vec![k, n, n], Arc::clone(&ops.full)),
            (None, true) => Tensor::new(vec![c, x], vec![k, n], Arc::clone(&ops.diag)),
            (Some(q), false) if free(q) => Tensor::new(
                vec![color_var(q), c, x, y],
                vec![k, k, n, n],
                Arc::clone(&ops.full_after),
            ),
            (Some(q), true) if free(q) => Tensor::new(
                vec![color_var(q), c, x],
                vec![k, k, n],
                Arc::clone(&ops.diag_after),
            ),
            (Some(_), false) => Tensor::new(vec![c, x, y], vec![k, n, n], Arc::clone(&ops.full_after_zero)),
            (Some(_), true) => Tensor::new(vec![c, x], vec![k, n], Arc::clone(&ops.diag_after_zero)),
        };
        factors.push(t);
    }
    factors.push(Tensor::scalar(scale));
    let outputs = match topology {
        Topology::Cycle => vec![],
        Topology::Path => vec![a_part[0], a_part[aleph]],
    };
    Some((factors, outputs))
}

fn edge_partitions(aleph: usize, mask: &[u8], b_correction: bool) -> Vec<Vec<usize>> {
    if b_correction && mask.contains(&0) {
        set_partitions(aleph)
    } else {
        vec![(0..aleph).collect()]
    }
}

/// Sum over words and pointed, directed, vertex-distinct closed walks.
pub(crate) fn cycle_sum(
    prep: &Prepared,
    w: &EdgeWeights,
    aleph: usize,
    mask: &[u8],
    b_correction: bool,
) -> f64 {
    let ops = Operators::new(prep, w, mask);
    let b_parts = edge_partitions(aleph, mask, b_correction);
    let mut total = 0.0;
    for a_part in set_partitions(aleph) {
        let ma = moebius_weight(&a_part);
        for b_part in &b_parts {
            if let Some((factors, outputs)) = build_network(&ops, Topology::Cycle, aleph, &a_part, b_part) {
                let t = contract_network(factors, &outputs);
                total += ma * moebius_weight(b_part) * t.data[0];
            }
        }
    }
    total
}

/// Row-major `n x n` sums over words and directed vertex-distinct chains, by endpoints.
///
/// Terms that merge the two endpoints only touch the diagonal and are skipped,
/// so the diagonal of the result is not meaningful.
pub(crate) fn path_sums(
    prep: &Prepared,
    w: &EdgeWeights,
    aleph: usize,
    mask: &[u8],
    b_correction: bool,
) -> Vec<f64> {
    let ops = Operators::new(prep, w, mask);
    let n = prep.n;
    let b_parts = edge_partitions(aleph, mask, b_correction);
    let mut total = vec![0.0; n * n];
    for a_part in set_partitions(aleph + 1) {
        if a_part[0] == a_part[aleph] {
            continue;
        }
        let ma = moebius_weight(&a_part);
        for b_part in &b_parts {
            if let Some((factors, outputs)) = build_network(&ops, Topology::Path, aleph, &a_part, b_part) {
                let t = contract_network(factors, &outputs);
                let c = ma * moebius_weight(b_part);
                for (acc, v) in total.iter_mut().zip(t.data.iter()) {
                    *acc += c * v;
                }
            }
        }
    }
    total
}
