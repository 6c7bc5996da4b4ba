use crate::channel::CandidateSet;
use crate::error::{Error, Result};

/// `Σ_{i=0}^{E} C(N, i)·(P-1)^i`.
pub fn neighborhood_size(n: usize, order: usize, e: usize) -> usize {
    let mut total = 0usize;
    let mut binom = 1usize;
    let mut pow = 1usize;
    for i in 0..=e.min(n) {
        total += binom * pow;
        binom = binom * (n - i) / (i + 1);
        pow *= order - 1;
    }
    total
}

/// Every vector within Hamming distance `e` of `x0`, ordered by number of
/// changed positions, then by the (ascending) set of changed positions, then
/// by the replacement symbol indices. `x0` comes first.
pub fn neighborhood(x0: &[usize], e: usize, order: usize) -> Result<CandidateSet> {
    let n = x0.len();
    if e > n {
        return Err(Error::contract(format!("E = {e} exceeds N = {n}")));
    }
    if order < 2 || x0.iter().any(|&s| s >= order) {
        return Err(Error::contract("x0 has symbols outside the constellation"));
    }
    let mut indices = Vec::with_capacity(neighborhood_size(n, order, e) * n);
    indices.extend_from_slice(x0);
    for k in 1..=e {
        let mut positions: Vec<usize> = (0..k).collect();
        loop {
            // odometer over the P-1 alternatives at each chosen position
            let mut digits = vec![0usize; k];
            'symbols: loop {
                let start = indices.len();
                indices.extend_from_slice(x0);
                for (&d, &p) in digits.iter().zip(&positions) {
                    // d-th symbol other than x0[p], ascending
                    indices[start + p] = if d < x0[p] { d } else { d + 1 };
                }
                let mut i = k;
                loop {
                    if i == 0 {
                        break 'symbols;
                    }
                    i -= 1;
                    digits[i] += 1;
                    if digits[i] < order - 1 {
                        break;
                    }
                    digits[i] = 0;
                }
            }
            if !next_combination(&mut positions, n) {
                break;
            }
        }
    }
    Ok(CandidateSet { n_tx: n, indices })
}

/// Advances a sorted k-subset of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}
