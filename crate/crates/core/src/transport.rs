//! Exact optimal transport between two uniform empirical measures of equal
//! size, via the O(n³) shortest augmenting path assignment method.

use crate::error::{Error, Result};

/// Largest sample count accepted by [`wasserstein1_empirical`].
pub const MAX_ASSIGNMENT_SIZE: usize = 512;

/// Minimum-cost perfect matching on a square cost matrix (row-major, `n×n`).
/// Returns `(total cost, assignment)` where `assignment[i]` is the column
/// matched to row `i`.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> (f64, Vec<usize>) {
    assert_eq!(cost.len(), n * n, "cost matrix must be n×n");
    if n == 0 {
        return (0.0, Vec::new());
    }
    // potentials and matching, 1-based with a sentinel column 0
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    (total, assignment)
}

/// `W_1` between the uniform measures on `a` and `b` under `dist`.
pub fn wasserstein1_empirical<P, D>(a: &[P], b: &[P], dist: D) -> Result<f64>
where
    D: Fn(&P, &P) -> f64,
{
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "empirical transport needs equal sample counts, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n > MAX_ASSIGNMENT_SIZE {
        return Err(Error::Config(format!(
            "{n} samples exceed the exact assignment limit of {MAX_ASSIGNMENT_SIZE}; subsample first"
        )));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut cost = Vec::with_capacity(n * n);
    for x in a {
        for y in b {
            cost.push(dist(x, y));
        }
    }
    let (total, _) = min_cost_assignment(&cost, n);
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn abs(a: &f64, b: &f64) -> f64 {
        (a - b).abs()
    }

    fn brute_force(a: &[f64], b: &[f64]) -> f64 {
        fn rec(a: &[f64], b: &[f64], used: &mut Vec<bool>, i: usize) -> f64 {
            if i == a.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..b.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min((a[i] - b[j]).abs() + rec(a, b, used, i + 1));
                    used[j] = false;
                }
            }
            best
        }
        rec(a, b, &mut vec![false; b.len()], 0) / a.len() as f64
    }

    fn sorted_formula(a: &[f64], b: &[f64]) -> f64 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn identical_sets_are_zero() {
        let a = [0.3, -1.0, 2.5];
        assert_eq!(wasserstein1_empirical(&a, &a, abs).unwrap(), 0.0);
    }

    #[test]
    fn shifted_pair() {
        let c = 0.7;
        let got = wasserstein1_empirical(&[0.0, 1.0], &[1.0 + c, c], abs).unwrap();
        assert!((got - c).abs() < 1e-15);
    }

    #[test]
    fn unequal_counts_refused() {
        assert!(wasserstein1_empirical(&[0.0], &[0.0, 1.0], abs).is_err());
    }

    #[test]
    fn assignment_is_a_permutation() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let (total, asg) = min_cost_assignment(&cost, 3);
        let mut seen = asg.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2]);
        assert_eq!(total, 5.0);
    }

    proptest! {
        #[test]
        fn matches_permutation_brute_force(
            (a, b) in (1usize..=7).prop_flat_map(|n| (
                proptest::collection::vec(-5.0f64..5.0, n),
                proptest::collection::vec(-5.0f64..5.0, n),
            ))
        ) {
            let got = wasserstein1_empirical(&a, &b, abs).unwrap();
            let brute = brute_force(&a, &b);
            prop_assert!((got - brute).abs() < 1e-9);
            prop_assert!((got - sorted_formula(&a, &b)).abs() < 1e-9);
        }

        #[test]
        fn symmetric_and_triangle(
            (a, b, c) in (1usize..=12).prop_flat_map(|n| (
                proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), n),
                proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), n),
                proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), n),
            ))
        ) {
            let d = |p: &(f64, f64), q: &(f64, f64)| (p.0 - q.0).abs().max((p.1 - q.1).abs());
            let ab = wasserstein1_empirical(&a, &b, d).unwrap();
            let ba = wasserstein1_empirical(&b, &a, d).unwrap();
            let bc = wasserstein1_empirical(&b, &c, d).unwrap();
            let ac = wasserstein1_empirical(&a, &c, d).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }
}
