//! Counterfactual generation: perturb a sample's semantic code toward a
//! cluster's direction and decode with the sample's own stochastic code.
//! The whole path is a pure function of (model, directions, sample, spec).

use crate::cluster::{direction_for_cluster, DirectionSet};
use crate::data::OracleClassifier;
use crate::diffusion::{DiffusionAutoencoder, SemanticCode};
use crate::error::{Error, Result};
use crate::linalg::all_finite;

/// How to perturb: which cluster to move toward, how far, and the DDIM step
/// count used for inversion and decoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub target_cluster: usize,
    pub alpha: f64,
    pub steps: usize,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::numeric("alpha must be finite"));
        }
        if self.steps < 1 {
            return Err(Error::param("ddim steps must be at least 1"));
        }
        Ok(())
    }
}

/// Everything produced for one counterfactual.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualRecord {
    pub source_id: u64,
    pub z_sem: SemanticCode,
    pub z_perturbed: SemanticCode,
    pub x_t: crate::diffusion::StochasticCode,
    pub decoded: Vec<f64>,
    pub target_cluster: usize,
    pub alpha: f64,
    /// Oracle class probabilities of the decoded sample.
    pub oracle_probs: Vec<f64>,
}

/// `z + alpha * w`, exactly.
pub fn perturb(z: &SemanticCode, w: &[f64], alpha: f64) -> Result<SemanticCode> {
    if z.0.len() != w.len() {
        return Err(Error::shape(format!(
            "code dim {} vs direction dim {}",
            z.0.len(),
            w.len()
        )));
    }
    if !alpha.is_finite() || !all_finite(&z.0) || !all_finite(w) {
        return Err(Error::numeric("non-finite perturbation input"));
    }
    Ok(SemanticCode(
        z.0.iter().zip(w).map(|(z, w)| z + alpha * w).collect(),
    ))
}

/// Full pipeline for one sample: encode, invert, perturb, decode, classify.
pub fn generate_counterfactual(
    model: &DiffusionAutoencoder,
    directions: &DirectionSet,
    oracle: &OracleClassifier,
    source_id: u64,
    values: &[f64],
    spec: &PerturbationSpec,
) -> Result<CounterfactualRecord> {
    spec.validate()?;
    let w = direction_for_cluster(directions, spec.target_cluster)?;
    let z = model.encode_semantic(values)?;
    let x_t = model.ddim_invert(values, &z, spec.steps)?;
    let z_perturbed = perturb(&z, w, spec.alpha)?;
    let decoded = model.ddim_decode(&z_perturbed, &x_t, spec.steps)?;
    let oracle_probs = oracle.predict_proba(&decoded)?;
    Ok(CounterfactualRecord {
        source_id,
        z_sem: z,
        z_perturbed,
        x_t,
        decoded,
        target_cluster: spec.target_cluster,
        alpha: spec.alpha,
        oracle_probs,
    })
}

/// Probability of `target_class` under the oracle for each perturbation size.
/// The inversion is shared across the sweep; each alpha decodes separately.
pub fn alpha_sweep(
    model: &DiffusionAutoencoder,
    directions: &DirectionSet,
    oracle: &OracleClassifier,
    values: &[f64],
    cluster: usize,
    target_class: usize,
    alphas: &[f64],
    steps: usize,
) -> Result<Vec<(f64, f64)>> {
    if alphas.is_empty() {
        return Err(Error::param("alpha sweep needs at least one alpha"));
    }
    for pair in alphas.windows(2) {
        if !(pair[0] < pair[1]) {
            return Err(Error::param("alphas must be strictly ascending"));
        }
    }
    let w = direction_for_cluster(directions, cluster)?;
    let z = model.encode_semantic(values)?;
    let x_t = model.ddim_invert(values, &z, steps)?;
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let z_p = perturb(&z, w, alpha)?;
        let decoded = model.ddim_decode(&z_p, &x_t, steps)?;
        let probs = oracle.predict_proba(&decoded)?;
        let p = *probs
            .get(target_class)
            .ok_or_else(|| Error::param(format!("target class {target_class} out of range")))?;
        out.push((alpha, p));
    }
    Ok(out)
}
