//! Evaluation metrics: realism (Fréchet distance between Gaussian feature
//! fits), substitutability, importance, distinctness, and the class-mixing
//! alignment (conversion-rate) measurement.

use std::collections::BTreeMap;

use crate::cluster::argmax;
use crate::counterfactual::CounterfactualRecord;
use crate::data::stratified_split;
use crate::error::{Error, Result};
use crate::linalg::{all_finite, dist_sq, Matrix};
use crate::nn::{train_classifier, ClassifierConfig};
use crate::rng::SeedStream;
use crate::stats::{pearson, spearman};

/// Held-out performance of a classifier, from confusion counts.
///
/// Micro averages pool true/false positives over classes (for single-label
/// data they equal accuracy); macro averages the per-class values, counting
/// 0 for classes with an undefined ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierReport {
    pub accuracy: f64,
    pub precision_micro: f64,
    pub precision_macro: f64,
    pub recall_micro: f64,
    pub recall_macro: f64,
    pub per_class: Vec<ClassScores>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

pub fn classifier_report(
    y_true: &[usize],
    y_pred: &[usize],
    n_classes: usize,
) -> Result<ClassifierReport> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::shape("label vectors must pair up"));
    }
    if y_true.iter().chain(y_pred).any(|&y| y >= n_classes) {
        return Err(Error::param("label out of range"));
    }
    let mut conf = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        conf[t][p] += 1;
    }
    let total = y_true.len();
    let mut tp_sum = 0usize;
    let mut per_class = Vec::with_capacity(n_classes);
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    for c in 0..n_classes {
        let tp = conf[c][c];
        let support: usize = conf[c].iter().sum();
        let predicted: usize = (0..n_classes).map(|r| conf[r][c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        tp_sum += tp;
        per_class.push(ClassScores {
            precision,
            recall,
            f1,
            support,
        });
    }
    let accuracy = tp_sum as f64 / total as f64;
    Ok(ClassifierReport {
        accuracy,
        precision_micro: accuracy,
        precision_macro: per_class.iter().map(|c| c.precision).sum::<f64>() / n_classes as f64,
        recall_micro: accuracy,
        recall_macro: per_class.iter().map(|c| c.recall).sum::<f64>() / n_classes as f64,
        per_class,
    })
}

/// Sample mean and unbiased covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

/// Online (Welford) fit; the covariance increment is an exactly symmetric
/// outer product, so the stored matrix is symmetric to the bit.
pub fn fit_gaussian(features: &[Vec<f64>]) -> Result<GaussianFit> {
    if features.len() < 2 {
        return Err(Error::param("gaussian fit needs at least 2 vectors"));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim || !all_finite(f)) {
        return Err(Error::shape("ragged or non-finite features"));
    }
    let mut mean = vec![0.0; dim];
    let mut m2 = Matrix::zeros(dim, dim);
    for (t, x) in features.iter().enumerate() {
        let n = (t + 1) as f64;
        let dx: Vec<f64> = x.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for (m, d) in mean.iter_mut().zip(&dx) {
            *m += d / n;
        }
        let scale = (n - 1.0) / n;
        for i in 0..dim {
            for j in i..dim {
                let inc = scale * dx[i] * dx[j];
                m2.set(i, j, m2.get(i, j) + inc);
                if i != j {
                    m2.set(j, i, m2.get(i, j));
                }
            }
        }
    }
    let denom = (features.len() - 1) as f64;
    for v in m2.data_mut() {
        *v /= denom;
    }
    Ok(GaussianFit { mean, cov: m2 })
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    if m.rows() != m.cols() {
        return Err(Error::shape("eigenvalues need a square matrix"));
    }
    let n = m.rows();
    let mut a = m.clone();
    let frob: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * frob.max(1.0);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j) * a.get(i, j))
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= tol / (n * n) as f64 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    Ok((0..n).map(|i| a.get(i, i)).collect())
}

/// Fréchet distance between two Gaussian fits:
/// `|mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2))`, with the matrix square
/// root taken through the symmetrized product `(M + M^T)/2` and negative
/// eigenvalues clamped to zero.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::shape("gaussian fits have different dims"));
    }
    let mean_term = dist_sq(&a.mean, &b.mean);
    let product = a.cov.matmul(&b.cov)?;
    let pt = product.transpose();
    let mut sym = product;
    for (v, t) in sym.data_mut().iter_mut().zip(pt.data()) {
        *v = 0.5 * (*v + t);
    }
    let eigs = symmetric_eigenvalues(&sym)?;
    let tr_sqrt: f64 = eigs.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let fd = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    Ok(fd.max(0.0))
}

/// Aggregate importance statistics over alpha-sweep trajectories.
///
/// Pearson and Spearman are means of per-trajectory correlations between
/// alpha and probability (constant trajectories contribute 0). KL compares
/// the sum-normalized probability profile against a sum-normalized linear
/// ramp over the same alphas, flooring both at 1e-9 before normalizing. MSE
/// compares min-max-rescaled probabilities to the 0..1 ramp.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    pub pearson: f64,
    pub spearman: f64,
    pub kl: f64,
    pub mse: f64,
}

const KL_FLOOR: f64 = 1e-9;

pub fn importance_eval(trajectories: &[Vec<(f64, f64)>]) -> Result<ImportanceReport> {
    if trajectories.is_empty() {
        return Err(Error::param("no trajectories"));
    }
    let mut sum_r = 0.0;
    let mut sum_rho = 0.0;
    let mut sum_kl = 0.0;
    let mut sum_mse = 0.0;
    for traj in trajectories {
        if traj.len() < 3 {
            return Err(Error::param("trajectory needs at least 3 points"));
        }
        let alphas: Vec<f64> = traj.iter().map(|(a, _)| *a).collect();
        let probs: Vec<f64> = traj.iter().map(|(_, p)| *p).collect();
        for pair in alphas.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(Error::param("trajectory alphas must be ascending"));
            }
        }
        if !all_finite(&probs) {
            return Err(Error::numeric("non-finite probability"));
        }
        sum_r += pearson(&alphas, &probs);
        sum_rho += spearman(&alphas, &probs);

        let span = alphas.last().unwrap() - alphas[0];
        let ramp01: Vec<f64> = alphas.iter().map(|a| (a - alphas[0]) / span).collect();

        let normalize = |xs: &[f64]| -> Vec<f64> {
            let floored: Vec<f64> = xs.iter().map(|&x| x.max(0.0) + KL_FLOOR).collect();
            let sum: f64 = floored.iter().sum();
            floored.into_iter().map(|x| x / sum).collect()
        };
        let q = normalize(&probs);
        let r = normalize(&ramp01);
        sum_kl += q
            .iter()
            .zip(&r)
            .map(|(q, r)| q * (q / r).ln())
            .sum::<f64>();

        let (lo, hi) = probs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                (lo.min(p), hi.max(p))
            });
        let rescaled: Vec<f64> = if hi > lo {
            probs.iter().map(|p| (p - lo) / (hi - lo)).collect()
        } else {
            vec![0.0; probs.len()]
        };
        sum_mse += rescaled
            .iter()
            .zip(&ramp01)
            .map(|(m, r)| (m - r) * (m - r))
            .sum::<f64>()
            / probs.len() as f64;
    }
    let n = trajectories.len() as f64;
    Ok(ImportanceReport {
        pearson: sum_r / n,
        spearman: sum_rho / n,
        kl: sum_kl / n,
        mse: sum_mse / n,
    })
}

/// Majority original class of each cluster, from the positive samples'
/// assignments and their ground-truth modes. Ties break to the lower class.
pub fn cluster_class_map(assignments: &[usize], modes: &[usize]) -> BTreeMap<usize, usize> {
    let mut votes: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&cluster, &mode) in assignments.iter().zip(modes) {
        *votes.entry(cluster).or_default().entry(mode).or_default() += 1;
    }
    votes
        .into_iter()
        .map(|(cluster, counts)| {
            let class = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&c, _)| c)
                .expect("non-empty vote table");
            (cluster, class)
        })
        .collect()
}

/// Fraction of counterfactuals, per constituent class, whose oracle argmax
/// equals the class their target cluster stands for.
pub fn alignment_eval(
    records: &[CounterfactualRecord],
    true_class_of_cluster: &BTreeMap<usize, usize>,
) -> Result<BTreeMap<usize, f64>> {
    if records.is_empty() {
        return Err(Error::param("no counterfactual records"));
    }
    let mut totals: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for rec in records {
        let class = *true_class_of_cluster
            .get(&rec.target_cluster)
            .ok_or_else(|| {
                Error::param(format!("cluster {} missing from class map", rec.target_cluster))
            })?;
        let entry = totals.entry(class).or_insert((0, 0));
        entry.1 += 1;
        if argmax(&rec.oracle_probs) == class {
            entry.0 += 1;
        }
    }
    Ok(totals
        .into_iter()
        .map(|(class, (hits, n))| (class, hits as f64 / n as f64))
        .collect())
}

/// Train a fresh binary classifier to separate two counterfactual sets and
/// report its held-out (70/30 stratified) performance.
pub fn distinctness_eval(
    set_a: &[Vec<f64>],
    set_b: &[Vec<f64>],
    seed: SeedStream,
) -> Result<ClassifierReport> {
    if set_a.len() < 4 || set_b.len() < 4 {
        return Err(Error::param("each set needs at least 4 samples"));
    }
    let xs: Vec<Vec<f64>> = set_a.iter().chain(set_b).cloned().collect();
    let ys: Vec<usize> = std::iter::repeat(0)
        .take(set_a.len())
        .chain(std::iter::repeat(1).take(set_b.len()))
        .collect();
    let (train_idx, test_idx) = stratified_split(&ys, 2, 0.3, seed.derive("distinctness"))?;
    let train_x: Vec<Vec<f64>> = train_idx.iter().map(|&i| xs[i].clone()).collect();
    let train_y: Vec<usize> = train_idx.iter().map(|&i| ys[i]).collect();
    let cfg = ClassifierConfig {
        hidden: vec![16],
        epochs: 80,
        batch_size: 16,
        lr: 3e-3,
        weight_decay: 0.0,
    };
    let mlp = train_classifier(&train_x, &train_y, 2, &cfg, seed.derive("distinctness/train"))?;
    let mut y_true = Vec::with_capacity(test_idx.len());
    let mut y_pred = Vec::with_capacity(test_idx.len());
    for &i in &test_idx {
        y_true.push(ys[i]);
        y_pred.push(argmax(&mlp.forward(&xs[i])?));
    }
    classifier_report(&y_true, &y_pred, 2)
}

/// Train a classifier on synthetic samples only and report its performance
/// on the real corpus.
pub fn substitutability_eval(
    synth_x: &[Vec<f64>],
    synth_y: &[usize],
    real_x: &[Vec<f64>],
    real_y: &[usize],
    seed: SeedStream,
) -> Result<ClassifierReport> {
    if synth_x.is_empty() || real_x.is_empty() {
        return Err(Error::param("both corpora must be non-empty"));
    }
    if synth_x.len() != synth_y.len() || real_x.len() != real_y.len() {
        return Err(Error::shape("samples and labels must pair up"));
    }
    let label_set = |ys: &[usize]| -> Vec<usize> {
        let mut v = ys.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let labels = label_set(synth_y);
    if labels != label_set(real_y) {
        return Err(Error::param("label sets differ between corpora"));
    }
    let n_classes = labels.last().unwrap() + 1;
    let mlp = train_classifier(
        synth_x,
        synth_y,
        n_classes,
        &ClassifierConfig::default(),
        seed.derive("substitutability/train"),
    )?;
    let mut y_pred = Vec::with_capacity(real_x.len());
    for x in real_x {
        y_pred.push(argmax(&mlp.forward(x)?));
    }
    classifier_report(real_y, &y_pred, n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{SemanticCode, StochasticCode};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn stream(seed: u64) -> SeedStream {
        SeedStream::root(seed).derive("metrics/test")
    }

    #[test]
    fn report_matches_hand_computed_confusion() {
        let y_true = [0, 0, 0, 0, 1, 1, 1, 2, 2, 2];
        let y_pred = [0, 0, 1, 0, 1, 1, 0, 2, 2, 1];
        let r = classifier_report(&y_true, &y_pred, 3).unwrap();
        assert!((r.accuracy - 0.7).abs() < 1e-12);
        assert!((r.precision_micro - 0.7).abs() < 1e-12);
        assert!((r.recall_micro - 0.7).abs() < 1e-12);
        assert!((r.precision_macro - 0.75).abs() < 1e-12);
        assert!((r.recall_macro - (0.75 + 2.0 / 3.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        assert_eq!(r.per_class[0].support, 4);
        assert!((r.per_class[1].precision - 0.5).abs() < 1e-12);
        assert!((r.per_class[2].precision - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_two_point_closed_form() {
        let fit = fit_gaussian(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(fit.mean, vec![1.0, 0.0]);
        assert_eq!(fit.cov.data(), &[2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn gaussian_identical_points_zero_covariance() {
        let fit = fit_gaussian(&vec![vec![1.5, -2.0]; 5]).unwrap();
        assert!(fit.cov.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_rejects_tiny_sets() {
        assert!(matches!(
            fit_gaussian(&[vec![1.0]]),
            Err(Error::Param(_))
        ));
    }

    /// Independent two-pass recomputation on seeded 3-d data.
    #[test]
    fn gaussian_matches_two_pass_oracle() {
        let mut rng = stream(1).rng();
        let data: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect())
            .collect();
        let fit = fit_gaussian(&data).unwrap();
        let n = data.len() as f64;
        let mut mean = vec![0.0; 3];
        for x in &data {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        for (a, b) in fit.mean.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
        for i in 0..3 {
            for j in 0..3 {
                let cov: f64 = data
                    .iter()
                    .map(|x| (x[i] - mean[i]) * (x[j] - mean[j]))
                    .sum::<f64>()
                    / (n - 1.0);
                assert!((fit.cov.get(i, j) - cov).abs() < 1e-12);
                assert_eq!(fit.cov.get(i, j), fit.cov.get(j, i));
            }
        }
    }

    #[test]
    fn frechet_identical_fits_is_zero() {
        let mut rng = stream(2).rng();
        let data: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let fit = fit_gaussian(&data).unwrap();
        assert!(frechet_distance(&fit, &fit).unwrap() < 1e-9);
    }

    #[test]
    fn frechet_one_dimensional_closed_forms() {
        let fit = |mu: f64, var: f64| GaussianFit {
            mean: vec![mu],
            cov: Matrix::from_vec(1, 1, vec![var]).unwrap(),
        };
        // Means 0 and 1, zero variance: distance 1, exactly.
        assert_eq!(frechet_distance(&fit(0.0, 0.0), &fit(1.0, 0.0)).unwrap(), 1.0);
        // Equal means, variances 1 and 4: 1 + 4 - 2*2 = 1, exactly.
        assert_eq!(frechet_distance(&fit(0.0, 1.0), &fit(0.0, 4.0)).unwrap(), 1.0);
        // General 1-d closed form (mu 0.3 vs -0.9, sigma^2 2 and 5).
        let got = frechet_distance(&fit(0.3, 2.0), &fit(-0.9, 5.0)).unwrap();
        let expected = 1.2f64 * 1.2 + 2.0 + 5.0 - 2.0 * (10.0f64).sqrt();
        assert!((got - expected).abs() < 1e-12);
    }

    fn random_psd_fit<R: Rng>(dim: usize, rng: &mut R) -> GaussianFit {
        let data: Vec<Vec<f64>> = (0..(3 * dim + 2))
            .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * 1.5).collect())
            .collect();
        fit_gaussian(&data).unwrap()
    }

    #[test]
    fn frechet_is_symmetric_and_dominates_mean_term() {
        let mut rng = stream(3).rng();
        for _ in 0..20 {
            let a = random_psd_fit(4, &mut rng);
            let b = random_psd_fit(4, &mut rng);
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            assert!((ab - ba).abs() <= 1e-6 * ab.abs().max(1.0), "{ab} vs {ba}");
            assert!(ab >= dist_sq(&a.mean, &b.mean) - 1e-9);
        }
    }

    /// Denman-Beavers square-root oracle for the trace term.
    #[test]
    fn frechet_matches_matrix_sqrt_oracle() {
        fn invert(m: &Matrix) -> Matrix {
            let n = m.rows();
            let mut a = m.clone();
            let mut inv = Matrix::identity(n);
            for col in 0..n {
                let mut pivot = col;
                for r in (col + 1)..n {
                    if a.get(r, col).abs() > a.get(pivot, col).abs() {
                        pivot = r;
                    }
                }
                for c in 0..n {
                    let t = a.get(col, c);
                    a.set(col, c, a.get(pivot, c));
                    a.set(pivot, c, t);
                    let t = inv.get(col, c);
                    inv.set(col, c, inv.get(pivot, c));
                    inv.set(pivot, c, t);
                }
                let p = a.get(col, col);
                assert!(p.abs() > 1e-300, "singular matrix in oracle");
                for c in 0..n {
                    a.set(col, c, a.get(col, c) / p);
                    inv.set(col, c, inv.get(col, c) / p);
                }
                for r in 0..n {
                    if r == col {
                        continue;
                    }
                    let f = a.get(r, col);
                    for c in 0..n {
                        a.set(r, c, a.get(r, c) - f * a.get(col, c));
                        inv.set(r, c, inv.get(r, c) - f * inv.get(col, c));
                    }
                }
            }
            inv
        }

        let mut rng = stream(4).rng();
        let a = random_psd_fit(3, &mut rng);
        let b = random_psd_fit(3, &mut rng);

        // Symmetrized product, with a small ridge so the iteration stays
        // nonsingular.
        let p = a.cov.matmul(&b.cov).unwrap();
        let pt = p.transpose();
        let mut sym = p;
        for (v, t) in sym.data_mut().iter_mut().zip(pt.data()) {
            *v = 0.5 * (*v + t);
        }
        let ridge = 1e-12;
        for i in 0..3 {
            sym.set(i, i, sym.get(i, i) + ridge);
        }
        let mut y = sym.clone();
        let mut z = Matrix::identity(3);
        for _ in 0..200 {
            let y_next = {
                let zi = invert(&z);
                let mut m = y.clone();
                for (v, w) in m.data_mut().iter_mut().zip(zi.data()) {
                    *v = 0.5 * (*v + w);
                }
                m
            };
            let z_next = {
                let yi = invert(&y);
                let mut m = z.clone();
                for (v, w) in m.data_mut().iter_mut().zip(yi.data()) {
                    *v = 0.5 * (*v + w);
                }
                m
            };
            y = y_next;
            z = z_next;
        }
        let tr_sqrt_oracle = y.trace();
        let fd_oracle = (dist_sq(&a.mean, &b.mean) + a.cov.trace() + b.cov.trace()
            - 2.0 * tr_sqrt_oracle)
            .max(0.0);
        let fd = frechet_distance(&a, &b).unwrap();
        assert!(
            (fd - fd_oracle).abs() < 1e-6,
            "frechet {fd} vs oracle {fd_oracle}"
        );
    }

    #[test]
    fn importance_proportional_is_perfect() {
        let traj: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 0.1 * i as f64)).collect();
        let r = importance_eval(&[traj]).unwrap();
        assert!((r.pearson - 1.0).abs() < 1e-12);
        assert!((r.spearman - 1.0).abs() < 1e-12);
        assert!(r.mse < 1e-12);
    }

    #[test]
    fn importance_constant_contributes_zero_correlation() {
        let traj: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 0.4)).collect();
        let r = importance_eval(&[traj]).unwrap();
        assert_eq!(r.pearson, 0.0);
        assert_eq!(r.spearman, 0.0);
    }

    /// Frozen five-point fixture; expectations from the direct formulas.
    #[test]
    fn importance_fixture_matches_direct_formulas() {
        let alphas = [0.0, 0.5, 1.0, 1.5, 2.0];
        let probs = [0.12, 0.31, 0.35, 0.89, 0.97];
        let traj: Vec<(f64, f64)> = alphas.iter().cloned().zip(probs).collect();
        let r = importance_eval(&[traj]).unwrap();
        assert!((r.pearson - pearson(&alphas, &probs)).abs() < 1e-9);
        assert!((r.spearman - 1.0).abs() < 1e-9);
        // Frozen value computed from the definitions above.
        assert!((r.pearson - 0.953249232953196).abs() < 1e-9);
    }

    #[test]
    fn importance_rejects_short_trajectories() {
        assert!(matches!(
            importance_eval(&[vec![(0.0, 0.1), (1.0, 0.2)]]),
            Err(Error::Param(_))
        ));
    }

    fn record(cluster: usize, probs: Vec<f64>) -> CounterfactualRecord {
        CounterfactualRecord {
            source_id: 0,
            z_sem: SemanticCode(vec![0.0]),
            z_perturbed: SemanticCode(vec![0.0]),
            x_t: StochasticCode(vec![0.0]),
            decoded: vec![0.0],
            target_cluster: cluster,
            alpha: 3.0,
            oracle_probs: probs,
        }
    }

    #[test]
    fn alignment_all_converted_is_one() {
        let map = BTreeMap::from([(0usize, 0usize), (1, 1)]);
        let records = vec![
            record(0, vec![0.9, 0.05, 0.05]),
            record(0, vec![0.8, 0.1, 0.1]),
            record(1, vec![0.1, 0.8, 0.1]),
        ];
        let rates = alignment_eval(&records, &map).unwrap();
        assert_eq!(rates.get(&0), Some(&1.0));
        assert_eq!(rates.get(&1), Some(&1.0));
    }

    #[test]
    fn alignment_counts_misses_and_rejects_unmapped() {
        let map = BTreeMap::from([(0usize, 0usize)]);
        let records = vec![
            record(0, vec![0.9, 0.1]),
            record(0, vec![0.2, 0.8]),
        ];
        let rates = alignment_eval(&records, &map).unwrap();
        assert_eq!(rates.get(&0), Some(&0.5));
        let bad = vec![record(7, vec![1.0, 0.0])];
        assert!(matches!(alignment_eval(&bad, &map), Err(Error::Param(_))));
    }

    #[test]
    fn cluster_map_majority_vote() {
        let assignments = [0, 0, 0, 1, 1, 1, 1];
        let modes = [2, 2, 1, 0, 0, 0, 2];
        let map = cluster_class_map(&assignments, &modes);
        assert_eq!(map.get(&0), Some(&2));
        assert_eq!(map.get(&1), Some(&0));
    }

    fn gaussian_set(center: &[f64], n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                center
                    .iter()
                    .map(|c| c + rng.sample::<f64, _>(StandardNormal) * 0.5)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn distinctness_identical_sets_is_chance() {
        let mut rng = stream(5).rng();
        let set = gaussian_set(&[0.0, 0.0, 0.0], 100, &mut rng);
        let mut shuffled = set.clone();
        shuffled.reverse();
        let r = distinctness_eval(&set, &shuffled, stream(6)).unwrap();
        assert!(
            (r.accuracy - 0.5).abs() <= 0.1,
            "identical sets accuracy {}",
            r.accuracy
        );
    }

    #[test]
    fn distinctness_separated_sets_is_perfect() {
        let mut rng = stream(7).rng();
        let a = gaussian_set(&[0.0, 0.0, 0.0], 30, &mut rng);
        let b = gaussian_set(&[50.0, 50.0, 50.0], 30, &mut rng);
        let r = distinctness_eval(&a, &b, stream(8)).unwrap();
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn distinctness_rejects_small_sets() {
        let tiny = vec![vec![0.0]; 3];
        let ok = vec![vec![0.0]; 10];
        assert!(matches!(
            distinctness_eval(&tiny, &ok, stream(9)),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn substitutability_same_corpus_and_shuffled_labels() {
        let mut rng = stream(10).rng();
        let mut xs = gaussian_set(&[-3.0, 0.0], 40, &mut rng);
        xs.extend(gaussian_set(&[3.0, 0.0], 40, &mut rng));
        let ys: Vec<usize> = (0..40).map(|_| 0).chain((0..40).map(|_| 1)).collect();

        // Same corpus on both sides: essentially a training-set upper bound.
        let r = substitutability_eval(&xs, &ys, &xs, &ys, stream(11)).unwrap();
        assert!(r.accuracy >= 0.95, "same-corpus accuracy {}", r.accuracy);

        // Label-shuffled synthetic corpus: near chance on the real one.
        let half_shuffled: Vec<usize> = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| if i % 2 == 0 { 1 - y } else { y })
            .collect();
        let r = substitutability_eval(&xs, &half_shuffled, &xs, &ys, stream(12)).unwrap();
        assert!(
            (r.accuracy - 0.5).abs() <= 0.2,
            "shuffled-label accuracy {}",
            r.accuracy
        );
    }

    #[test]
    fn substitutability_rejects_label_mismatch() {
        let xs = vec![vec![0.0]; 8];
        let ys0 = vec![0usize; 8];
        let ys01: Vec<usize> = (0..8).map(|i| i % 2).collect();
        assert!(matches!(
            substitutability_eval(&xs, &ys0, &xs, &ys01, stream(13)),
            Err(Error::Param(_))
        ));
    }
}
