//! Brute-force reference implementations for cross-checking the aggregation
//! rules. Deliberately naive and structured differently from the production
//! code: subsets come from bitmasks, distances from an explicit matrix.

use crate::vector::ParamVector;

/// Minimum-diameter subset of size `n - f` by exhaustive bitmask
/// enumeration. Ties go to the lexicographically smallest index tuple.
/// Returns the subset and its coordinate-wise mean.
pub fn brute_force_mda(vs: &[ParamVector], f: usize) -> (Vec<usize>, ParamVector) {
    let n = vs.len();
    assert!(n < 64 && n >= 2 * f + 1, "oracle needs 2f + 1 <= n < 64");
    let size = n - f;

    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            dist[i][j] = vs[i].iter().zip(vs[j].iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u64..(1u64 << n) {
        if mask.count_ones() as usize != size {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let mut diam = 0.0f64;
        for &a in &members {
            for &b in &members {
                if dist[a][b] > diam {
                    diam = dist[a][b];
                }
            }
        }
        let better = match &best {
            None => true,
            Some((d, m)) => diam < *d || (diam == *d && members < *m),
        };
        if better {
            best = Some((diam, members));
        }
    }
    let (_, subset) = best.expect("at least one subset");

    let dim = vs[0].dim();
    let mut sum = vec![0.0; dim];
    for &i in &subset {
        for (k, s) in sum.iter_mut().enumerate() {
            *s += vs[i][k];
        }
    }
    let mean: Vec<f64> = sum.into_iter().map(|s| s / subset.len() as f64).collect();
    (subset, ParamVector::from(mean))
}

/// Coordinate-wise median by sorting each column.
pub fn sorted_median(vs: &[ParamVector]) -> ParamVector {
    let n = vs.len();
    let coords = (0..vs[0].dim())
        .map(|k| {
            let mut col: Vec<f64> = vs.iter().map(|v| v[k]).collect();
            col.sort_by(f64::total_cmp);
            if n % 2 == 1 {
                col[n / 2]
            } else {
                (col[n / 2 - 1] + col[n / 2]) / 2.0
            }
        })
        .collect::<Vec<_>>();
    ParamVector::from(coords)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_examples() {
        let vs: Vec<ParamVector> = [1.0, 1.1, -50.0].iter().map(|&x| ParamVector::from(vec![x])).collect();
        let (subset, mean) = brute_force_mda(&vs, 1);
        assert_eq!(subset, vec![0, 1]);
        assert!((mean[0] - 1.05).abs() < 1e-12);
        assert_eq!(sorted_median(&vs)[0], 1.0);

        // Equal diameters: {0, 1} and {1, 2} both span 1.
        let tie: Vec<ParamVector> = [0.0, 1.0, 2.0].iter().map(|&x| ParamVector::from(vec![x])).collect();
        assert_eq!(brute_force_mda(&tie, 1).0, vec![0, 1]);
    }
}
