//! Set partitions as restricted growth strings.

/// Every set partition of `0..k`, as restricted growth strings in lexicographic order.
pub fn set_partitions(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k == 0 {
        out.push(vec![]);
        return out;
    }
    let mut rgs = vec![0usize; k];
    fn rec(i: usize, max: usize, rgs: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == rgs.len() {
            out.push(rgs.clone());
            return;
        }
        for b in 0..=max + 1 {
            rgs[i] = b;
            rec(i + 1, max.max(b), rgs, out);
        }
    }
    rec(1, 0, &mut rgs, &mut out);
    out
}

pub fn block_count(rgs: &[usize]) -> usize {
    rgs.iter().max().map_or(0, |m| m + 1)
}

/// Moebius function from the finest partition: `prod_B (-1)^(|B|-1) (|B|-1)!`.
pub fn moebius_weight(rgs: &[usize]) -> f64 {
    let mut sizes = vec![0usize; block_count(rgs)];
    for &b in rgs {
        sizes[b] += 1;
    }
    sizes
        .iter()
        .map(|&s| {
            let f: f64 = (1..s).map(|x| x as f64).product();
            if s % 2 == 0 {
                -f
            } else {
                f
            }
        })
        .product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bell_numbers() {
        let bell = [1, 1, 2, 5, 15, 52, 203, 877];
        for (k, &b) in bell.iter().enumerate() {
            assert_eq!(set_partitions(k).len(), b);
        }
    }

    #[test]
    fn moebius_sums_to_zero() {
        // sum over partitions of mu(0, pi) * (number of maps constant on blocks, with m values)
        // equals the falling factorial (m)_k.
        for k in 1..6 {
            for m in 1..7usize {
                let s: f64 = set_partitions(k)
                    .iter()
                    .map(|r| moebius_weight(r) * (m as f64).powi(block_count(r) as i32))
                    .sum();
                let ff: f64 = (0..k).map(|i| m as f64 - i as f64).product();
                assert!((s - ff).abs() < 1e-9, "k {k} m {m}: {s} vs {ff}");
            }
        }
    }
}
