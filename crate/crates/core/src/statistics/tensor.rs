//! Dense tensors with named indices and a greedy pairwise contraction.

use std::sync::Arc;

/// Row-major tensor; the last variable varies fastest.
#[derive(Clone, Debug)]
pub(crate) struct Tensor {
    pub vars: Vec<usize>,
    pub dims: Vec<usize>,
    pub data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(vars: Vec<usize>, dims: Vec<usize>, data: Arc<Vec<f64>>) -> Self {
        debug_assert_eq!(vars.len(), dims.len());
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor { vars, dims, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![], vec![], Arc::new(vec![v]))
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    fn dim_of(&self, var: usize) -> usize {
        self.dims[self.pos(var)]
    }

    fn pos(&self, var: usize) -> usize {
        self.vars.iter().position(|&v| v == var).expect("variable present")
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dims.len()];
        for i in (0..self.dims.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.dims[i + 1];
        }
        s
    }

    /// Data laid out in the variable order `order` (a permutation of `vars`).
    pub fn permuted(&self, order: &[usize]) -> Arc<Vec<f64>> {
        if order == self.vars.as_slice() {
            return Arc::clone(&self.data);
        }
        let st = self.strides();
        let src_strides: Vec<usize> = order.iter().map(|&v| st[self.pos(v)]).collect();
        let dims: Vec<usize> = order.iter().map(|&v| self.dim_of(v)).collect();
        let total = self.len();
        let mut out = Vec::with_capacity(total);
        let rank = dims.len();
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        let src = &self.data;
        if rank == 0 {
            return Arc::clone(&self.data);
        }
        let inner = dims[rank - 1];
        let inner_stride = src_strides[rank - 1];
        loop {
            for k in 0..inner {
                out.push(src[off + k * inner_stride]);
            }
            let mut a = rank - 1;
            loop {
                if a == 0 {
                    return Arc::new(out);
                }
                a -= 1;
                idx[a] += 1;
                off += src_strides[a];
                if idx[a] < dims[a] {
                    break;
                }
                off -= src_strides[a] * dims[a];
                idx[a] = 0;
            }
        }
    }

    /// Sums out one variable.
    pub fn sum_out(&self, var: usize) -> Tensor {
        let p = self.pos(var);
        let outer: usize = self.dims[..p].iter().product();
        let mid = self.dims[p];
        let inner: usize = self.dims[p + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for m in 0..mid {
                let src = &self.data[(o * mid + m) * inner..(o * mid + m + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut vars = self.vars.clone();
        let mut dims = self.dims.clone();
        vars.remove(p);
        dims.remove(p);
        Tensor::new(vars, dims, Arc::new(out))
    }

    pub fn scaled(&self, s: f64) -> Tensor {
        Tensor::new(
            self.vars.clone(),
            self.dims.clone(),
            Arc::new(self.data.iter().map(|x| x * s).collect()),
        )
    }
}

/// `c[m x n] = a[m x k] * b[k x n]`, all row-major and contiguous.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    if m * k * n <= 4096 {
        for i in 0..m {
            let crow = &mut c[i * n..(i + 1) * n];
            for (l, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                for (cv, bv) in crow.iter_mut().zip(&b[l * n..(l + 1) * n]) {
                    *cv += av * bv;
                }
            }
        }
        return;
    }
    // SAFETY: slices hold m*k, k*n and m*n elements with the strides given.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Contracts two tensors; shared variables listed in `keep` become batch indices.
pub(crate) fn contract_pair(a: &Tensor, b: &Tensor, keep: &[usize]) -> Tensor {
    let shared: Vec<usize> = a.vars.iter().cloned().filter(|v| b.vars.contains(v)).collect();
    let batch: Vec<usize> = shared.iter().cloned().filter(|v| keep.contains(v)).collect();
    let summed: Vec<usize> = shared.iter().cloned().filter(|v| !keep.contains(v)).collect();
    let left: Vec<usize> = a.vars.iter().cloned().filter(|v| !shared.contains(v)).collect();
    let right: Vec<usize> = b.vars.iter().cloned().filter(|v| !shared.contains(v)).collect();

    let size = |t: &Tensor, vs: &[usize]| vs.iter().map(|&v| t.dim_of(v)).product::<usize>();
    let (nb, nl, nc, nr) = (size(a, &batch), size(a, &left), size(a, &summed), size(b, &right));

    let a_order: Vec<usize> = batch.iter().chain(&left).chain(&summed).cloned().collect();
    let b_order: Vec<usize> = batch.iter().chain(&summed).chain(&right).cloned().collect();
    let ad = a.permuted(&a_order);
    let bd = b.permuted(&b_order);

    let mut out = vec![0.0; nb * nl * nr];
    if nl == 1 && nr == 1 {
        for i in 0..nb {
            let x = &ad[i * nc..(i + 1) * nc];
            let y = &bd[i * nc..(i + 1) * nc];
            out[i] = x.iter().zip(y).map(|(p, q)| p * q).sum();
        }
    } else {
        for i in 0..nb {
            gemm(
                nl,
                nc,
                nr,
                &ad[i * nl * nc..(i + 1) * nl * nc],
                &bd[i * nc * nr..(i + 1) * nc * nr],
                &mut out[i * nl * nr..(i + 1) * nl * nr],
            );
        }
    }
    let vars: Vec<usize> = batch.iter().chain(&left).chain(&right).cloned().collect();
    let dims: Vec<usize> = batch
        .iter()
        .map(|&v| a.dim_of(v))
        .chain(left.iter().map(|&v| a.dim_of(v)))
        .chain(right.iter().map(|&v| b.dim_of(v)))
        .collect();
    Tensor::new(vars, dims, Arc::new(out))
}

/// Contracts a network down to the variables `outputs`, in that order.
///
/// Cost of contracting factors `i` and `j`: growth in stored entries, then
/// the size of the index union.
fn pair_cost(factors: &[Tensor], i: usize, j: usize, outputs: &[usize]) -> (i128, usize) {
    let (a, b) = (&factors[i], &factors[j]);
    let mut union = a.len();
    let mut result = 1usize;
    let mut visit = |v: usize, d: usize, new: bool| {
        if new {
            union = union.saturating_mul(d);
        }
        let kept = outputs.contains(&v)
            || factors
                .iter()
                .enumerate()
                .any(|(k, f)| k != i && k != j && f.vars.contains(&v));
        if kept {
            result = result.saturating_mul(d);
        }
    };
    for (v, d) in a.vars.iter().zip(&a.dims) {
        visit(*v, *d, false);
    }
    for (v, d) in b.vars.iter().zip(&b.dims) {
        if !a.vars.contains(v) {
            visit(*v, *d, true);
        }
    }
    (result as i128 - a.len() as i128 - b.len() as i128, union)
}

/// Pairs are chosen greedily by `pair_cost`;
/// ties go to the first pair in factor order, so results are reproducible.
pub(crate) fn contract_network(mut factors: Vec<Tensor>, outputs: &[usize]) -> Tensor {
    let mut scale = 1.0;
    loop {
        // Fold scalars and sum out variables private to one factor.
        let mut i = 0;
        while i < factors.len() {
            if factors[i].vars.is_empty() {
                scale *= factors[i].data[0];
                factors.remove(i);
                continue;
            }
            let private: Vec<usize> = factors[i]
                .vars
                .iter()
                .cloned()
                .filter(|v| {
                    !outputs.contains(v)
                        && factors
                            .iter()
                            .enumerate()
                            .all(|(j, f)| j == i || !f.vars.contains(v))
                })
                .collect();
            for v in private {
                factors[i] = factors[i].sum_out(v);
            }
            if factors[i].vars.is_empty() {
                continue;
            }
            i += 1;
        }
        if factors.len() <= 1 {
            break;
        }
        let mut best: Option<(usize, usize, (i128, usize))> = None;
        for i in 0..factors.len() {
            for j in i + 1..factors.len() {
                let (a, b) = (&factors[i], &factors[j]);
                if !a.vars.iter().any(|v| b.vars.contains(v)) {
                    continue;
                }
                let cost = pair_cost(&factors, i, j, outputs);
                if best.is_none_or(|(_, _, c)| cost < c) {
                    best = Some((i, j, cost));
                }
            }
        }
        let (i, j) = match best {
            Some((i, j, _)) => (i, j),
            None => {
                // Disconnected: take an outer product of the two smallest factors.
                let mut idx: Vec<usize> = (0..factors.len()).collect();
                idx.sort_by_key(|&k| (factors[k].len(), k));
                (idx[0].min(idx[1]), idx[0].max(idx[1]))
            }
        };
        let b = factors.remove(j);
        let a = factors.remove(i);
        let mut keep: Vec<usize> = outputs.to_vec();
        for f in &factors {
            keep.extend(f.vars.iter().cloned());
        }
        let r = contract_pair(&a, &b, &keep);
        factors.push(r);
    }
    let result = match factors.pop() {
        None => Tensor::scalar(1.0),
        Some(t) => t,
    };
    let data = result.permuted(outputs);
    let dims = outputs.iter().map(|&v| result.dim_of(v)).collect();
    let t = Tensor::new(outputs.to_vec(), dims, data);
    if scale == 1.0 {
        t
    } else {
        t.scaled(scale)
    }
}
