//! Correlation statistics and clustering agreement.

/// Pearson correlation. Returns 0 when either argument has zero variance,
/// which is the contract the importance metric relies on for constant
/// trajectories.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.is_empty() {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// Average ranks (1-based); exact-equal values share the mean of their ranks.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

fn comb2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let sum_ij: f64 = table.iter().flatten().map(|&n| comb2(n)).sum();
    let sum_a: f64 = table
        .iter()
        .map(|row| comb2(row.iter().sum::<u64>()))
        .sum();
    let sum_b: f64 = (0..kb)
        .map(|j| comb2(table.iter().map(|row| row[j]).sum::<u64>()))
        .sum();
    let total = comb2(a.len() as u64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // Degenerate labelings (e.g. everything one cluster on both sides).
        return if sum_ij == expected { 1.0 } else { 0.0 };
    }
    (sum_ij - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_perfect_and_inverse() {
        let x = [0.0, 1.0, 2.0, 3.0];
        assert!((pearson(&x, &[0.0, 2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[6.0, 4.0, 2.0, 0.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_constant_is_zero_by_contract() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
        assert_eq!(pearson(&[5.0, 5.0, 5.0], &[1.0, 2.0, 3.0]), 0.0);
    }

    /// Independent direct-formula recomputation on a fixed fixture.
    #[test]
    fn pearson_matches_direct_formula() {
        let x = [0.0, 0.5, 1.0, 1.5, 2.0];
        let y = [0.12, 0.31, 0.35, 0.89, 0.97];
        let n = 5.0;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        let direct =
            (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
        assert!((pearson(&x, &y) - direct).abs() < 1e-9);
    }

    #[test]
    fn spearman_is_rank_based() {
        // Monotone but nonlinear: rho = 1 while r < 1.
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 10.0, 100.0, 1000.0, 10000.0];
        assert!((spearman(&x, &y) - 1.0).abs() < 1e-12);
        assert!(pearson(&x, &y) < 1.0);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 20.0, 30.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn spearman_tie_fixture_matches_hand_computation() {
        // ranks(x) = [1, 2, 3, 4], ranks(y) = [1.5, 1.5, 3, 4].
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [5.0, 5.0, 6.0, 7.0];
        let expected = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.5, 1.5, 3.0, 4.0]);
        assert!((spearman(&x, &y) - expected).abs() < 1e-12);
    }

    #[test]
    fn ari_perfect_agreement_and_relabeling() {
        let a = [0, 0, 1, 1, 2, 2];
        assert!((adjusted_rand_index(&a, &a) - 1.0).abs() < 1e-12);
        let relabeled = [2, 2, 0, 0, 1, 1];
        assert!((adjusted_rand_index(&a, &relabeled) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_known_fixture() {
        // Classic example: ARI of this pair is 0.24242424...
        let a = [0, 0, 1, 1, 0, 1];
        let b = [0, 0, 1, 1, 1, 0];
        let got = adjusted_rand_index(&a, &b);
        // Contingency: [[2,1],[1,2]]; sum_ij = 2, sum_a = sum_b = 6, total = 15.
        let expected = (2.0 - 6.0 * 6.0 / 15.0) / (6.0 - 6.0 * 6.0 / 15.0);
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn ari_single_cluster_degenerate() {
        let a = [0, 0, 0, 0];
        assert_eq!(adjusted_rand_index(&a, &a), 1.0);
    }
}
