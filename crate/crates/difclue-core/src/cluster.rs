//! Mode discovery: k-means over semantic codes, and per-cluster perturbation
//! directions from a multinomial logistic classifier trained on the cluster
//! labels.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, dist_sq, norm, snap_f32, snap_f32_slice};
use crate::nn::softmax_cross_entropy;
use crate::rng::SeedStream;

const MAX_LLOYD_ITERS: usize = 300;
const GD_MAX_ITERS: usize = 5000;
const GD_GRAD_TOL: f64 = 1e-5;
const GD_LR: f64 = 0.1;

/// Fitted k-means model.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    centroids: Vec<Vec<f64>>,
    inertia: f64,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    /// Converged within-cluster sum of squared distances.
    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn from_parts(centroids: Vec<Vec<f64>>, inertia: f64) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::param("cluster model needs at least one centroid"));
        }
        let dim = centroids[0].len();
        if centroids.iter().any(|c| c.len() != dim || !all_finite(c)) {
            return Err(Error::shape("ragged or non-finite centroids"));
        }
        if !(inertia >= 0.0) {
            return Err(Error::numeric("inertia must be non-negative"));
        }
        Ok(ClusterModel { centroids, inertia })
    }
}

/// Index of the nearest centroid; ties break to the lowest index.
pub fn kmeans_assign(model: &ClusterModel, z: &[f64]) -> usize {
    nearest(&model.centroids, z).0
}

fn nearest(centroids: &[Vec<f64>], z: &[f64]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = dist_sq(c, z);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// K-means with k-means++ seeding and Lloyd iterations until the assignment
/// reaches a fixpoint (or 300 iterations). Empty clusters are reseeded to the
/// point currently farthest from its assigned centroid.
pub fn kmeans_fit(codes: &[Vec<f64>], k: usize, seed: SeedStream) -> Result<ClusterModel> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if codes.is_empty() {
        return Err(Error::param("no codes to cluster"));
    }
    let dim = codes[0].len();
    for c in codes {
        if c.len() != dim {
            return Err(Error::shape("ragged codes"));
        }
        if !all_finite(c) {
            return Err(Error::numeric("non-finite code"));
        }
    }
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for c in codes {
        if !distinct.iter().any(|d| *d == c) {
            distinct.push(c);
            if distinct.len() >= k {
                break;
            }
        }
    }
    if distinct.len() < k {
        return Err(Error::param(format!(
            "k = {k} exceeds the number of distinct codes"
        )));
    }

    let mut rng = seed.derive("kmeans/init").rng();
    let centroids = plus_plus_init(codes, k, &mut rng);
    lloyd(codes, centroids)
}

fn plus_plus_init<R: Rng>(codes: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(codes[rng.gen_range(0..codes.len())].clone());
    let mut d2: Vec<f64> = codes.iter().map(|c| dist_sq(c, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = codes.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // All mass on existing centroids; any point works.
            rng.gen_range(0..codes.len())
        };
        centroids.push(codes[idx].clone());
        for (dist, code) in d2.iter_mut().zip(codes) {
            let d = dist_sq(code, centroids.last().unwrap());
            if d < *dist {
                *dist = d;
            }
        }
    }
    centroids
}

pub(crate) fn lloyd(codes: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> Result<ClusterModel> {
    let k = centroids.len();
    let dim = centroids[0].len();
    let mut assignment = vec![usize::MAX; codes.len()];
    let mut prev_inertia = f64::INFINITY;
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dists = vec![0.0; codes.len()];
        for (i, code) in codes.iter().enumerate() {
            let (j, d) = nearest(&centroids, code);
            if assignment[i] != j {
                assignment[i] = j;
                changed = true;
            }
            dists[i] = d;
            inertia += d;
        }
        // Lloyd never increases the objective; tolerate float rounding only.
        assert!(
            inertia <= prev_inertia * (1.0 + 1e-12) + 1e-12,
            "inertia increased: {prev_inertia} -> {inertia}"
        );
        prev_inertia = inertia;
        if !changed {
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (code, &j) in codes.iter().zip(&assignment) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(code) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for s in sums[j].iter_mut() {
                    *s /= counts[j] as f64;
                }
                centroids[j] = sums[j].clone();
            } else {
                // Reseed to the point farthest from its assigned centroid.
                let far = dists
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .expect("non-empty codes");
                centroids[j] = codes[far].clone();
                dists[far] = 0.0;
                prev_inertia = f64::INFINITY;
            }
        }
    }

    let inertia: f64 = codes.iter().map(|c| nearest(&centroids, c).1).sum();
    // Persisted values live on the f32 grid (checkpoint contract).
    for c in centroids.iter_mut() {
        snap_f32_slice(c);
    }
    ClusterModel::from_parts(centroids, snap_f32(inertia))
}

/// Per-cluster direction weights from a linear softmax classifier, both raw
/// and unit-normalized. The pipeline perturbs along the normalized ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    normalized: Vec<Vec<f64>>,
}

impl DirectionSet {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn normalized_directions(&self) -> &[Vec<f64>] {
        &self.normalized
    }

    /// Rebuild from raw classifier parameters, renormalizing directions.
    pub fn from_parts(weights: Vec<Vec<f64>>, biases: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::shape("weights and biases must pair up"));
        }
        let dim = weights[0].len();
        if weights.iter().any(|w| w.len() != dim || !all_finite(w)) {
            return Err(Error::shape("ragged or non-finite weights"));
        }
        let normalized = weights
            .iter()
            .map(|w| {
                let n = norm(w);
                if n == 0.0 {
                    return Err(Error::numeric("cannot normalize a zero direction"));
                }
                Ok(w.iter().map(|x| x / n).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(DirectionSet {
            weights,
            biases,
            normalized,
        })
    }

    /// Class probabilities of the underlying linear classifier.
    pub fn predict_proba(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(crate::nn::softmax(&self.logits(z)?))
    }

    fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::shape("code length mismatch"));
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| crate::linalg::dot(w, z) + b)
            .collect())
    }

    pub fn predict(&self, z: &[f64]) -> Result<usize> {
        let logits = self.logits(z)?;
        Ok(argmax(&logits))
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy of the linear softmax classifier and its gradient with
/// respect to (weights, biases).
fn ce_loss_grad(
    codes: &[Vec<f64>],
    labels: &[usize],
    weights: &[Vec<f64>],
    biases: &[f64],
) -> (f64, Vec<Vec<f64>>, Vec<f64>) {
    let k = weights.len();
    let dim = weights[0].len();
    let n = codes.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![vec![0.0; dim]; k];
    let mut gb = vec![0.0; k];
    for (code, &label) in codes.iter().zip(labels) {
        let logits: Vec<f64> = weights
            .iter()
            .zip(biases)
            .map(|(w, b)| crate::linalg::dot(w, code) + b)
            .collect();
        let (l, grad_logits) = softmax_cross_entropy(&logits, label);
        loss += l / n;
        for (j, g) in grad_logits.iter().enumerate() {
            let g = g / n;
            gb[j] += g;
            for (gw_ji, x) in gw[j].iter_mut().zip(code) {
                *gw_ji += g * x;
            }
        }
    }
    (loss, gw, gb)
}

/// Multinomial logistic regression on cluster labels via full-batch gradient
/// descent, run until the gradient norm drops below 1e-5 or 5000 iterations.
pub fn fit_direction_classifier(
    codes: &[Vec<f64>],
    labels: &[usize],
    seed: SeedStream,
) -> Result<DirectionSet> {
    if codes.is_empty() || codes.len() != labels.len() {
        return Err(Error::shape("codes and labels must pair up"));
    }
    let dim = codes[0].len();
    if codes.iter().any(|c| c.len() != dim || !all_finite(c)) {
        return Err(Error::shape("ragged or non-finite codes"));
    }
    let k = labels.iter().max().unwrap() + 1;
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::param("every cluster needs at least one member"));
    }

    let mut rng = seed.derive("directions/init").rng();
    let mut weights: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| snap_f32(rng.gen_range(-0.01..0.01))).collect())
        .collect();
    let mut biases = vec![0.0; k];
    for _ in 0..GD_MAX_ITERS {
        let (_, gw, gb) = ce_loss_grad(codes, labels, &weights, &biases);
        let grad_norm: f64 = gw
            .iter()
            .flatten()
            .chain(gb.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if grad_norm < GD_GRAD_TOL {
            break;
        }
        for (w, g) in weights.iter_mut().zip(&gw) {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= GD_LR * gi;
            }
        }
        for (b, g) in biases.iter_mut().zip(&gb) {
            *b -= GD_LR * g;
        }
    }
    for w in weights.iter_mut() {
        snap_f32_slice(w);
    }
    snap_f32_slice(&mut biases);
    DirectionSet::from_parts(weights, biases)
}

/// Unit perturbation direction of cluster `j`.
pub fn direction_for_cluster(ds: &DirectionSet, j: usize) -> Result<&[f64]> {
    ds.normalized
        .get(j)
        .map(|v| v.as_slice())
        .ok_or_else(|| Error::param(format!("cluster index {j} out of range 0..{}", ds.k())))
}
