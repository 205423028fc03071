//! Diffusion autoencoder: a semantic encoder paired with a conditional
//! noise-prediction network, trained on the standard forward process
//! `x_t = sqrt(a_t) x0 + sqrt(1 - a_t) eps` (`a_t` the cumulative alpha),
//! with deterministic DDIM updates for both inversion and decoding.
//!
//! Encoding a sample yields two codes: the semantic code `z` from the
//! encoder, and the stochastic code `x_T` obtained by running the DDIM
//! update forward (eta = 0) conditioned on `z`. Decoding the pair walks the
//! same step subsequence backwards and is a pure function, so decode and
//! invert are mutual inverses up to the denoiser's smoothness.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::all_finite;
use crate::nn::{Activation, AdamParams, AdamState, GradBuffer, LayerSpec, Mlp};
use crate::rng::SeedStream;

/// Dimension of the sinusoidal time features fed to the denoiser.
pub const TIME_EMB_DIM: usize = 8;

/// Linear-beta noise schedule with cumulative alpha products.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    /// Length T+1, `alphas_bar[0] = 1`, strictly decreasing.
    alphas_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear interpolation of beta from `beta_min` to `beta_max` over `t_max`
    /// steps.
    pub fn linear(t_max: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if t_max < 2 {
            return Err(Error::param("schedule needs at least 2 steps"));
        }
        if !(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0) {
            return Err(Error::param(format!(
                "betas must satisfy 0 < {beta_min} < {beta_max} < 1"
            )));
        }
        let betas = (0..t_max)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (t_max - 1) as f64)
            .collect();
        Self::from_betas(betas)
    }

    /// Build from explicit betas; they must be strictly increasing in (0, 1).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::param("schedule needs at least 2 steps"));
        }
        for pair in betas.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(Error::param("betas must be strictly increasing"));
            }
        }
        if !(betas[0] > 0.0 && *betas.last().unwrap() < 1.0) {
            return Err(Error::param("betas must lie strictly inside (0, 1)"));
        }
        let mut alphas_bar = Vec::with_capacity(betas.len() + 1);
        alphas_bar.push(1.0);
        for &b in &betas {
            let prev = *alphas_bar.last().unwrap();
            alphas_bar.push(prev * (1.0 - b));
        }
        Ok(NoiseSchedule { betas, alphas_bar })
    }

    pub fn t_max(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas_bar(&self) -> &[f64] {
        &self.alphas_bar
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alphas_bar[t]
    }
}

/// Forward process: `sqrt(a_t) x0 + sqrt(1 - a_t) eps`.
pub fn q_sample(x0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if t > schedule.t_max() {
        return Err(Error::param(format!(
            "t = {t} outside schedule range 0..={}",
            schedule.t_max()
        )));
    }
    if x0.len() != eps.len() {
        return Err(Error::shape("x0 and eps lengths differ"));
    }
    if !all_finite(x0) || !all_finite(eps) {
        return Err(Error::numeric("non-finite q_sample input"));
    }
    let ab = schedule.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| sa * x + sn * e).collect())
}

/// Semantic half of an encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCode(pub Vec<f64>);

/// Stochastic half of an encoding (the terminal diffusion variable).
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticCode(pub Vec<f64>);

/// Hyperparameters for [`train_autoencoder`].
#[derive(Debug, Clone, PartialEq)]
pub struct DaeConfig {
    pub latent_dim: usize,
    pub timesteps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub enc_width: usize,
    pub den_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Default DDIM step count used by the pipeline; must divide `timesteps`.
    pub ddim_steps: usize,
    /// Target per-dimension spread of the semantic code. At the end of each
    /// epoch the code's training-set mean and standard deviation are folded
    /// into the encoder's final affine layer, so codes stay centered with
    /// this spread and alpha perturbations along unit directions mean the
    /// same thing on every domain.
    pub z_scale: f64,
}

impl Default for DaeConfig {
    fn default() -> Self {
        DaeConfig {
            latent_dim: 8,
            timesteps: 100,
            beta_min: 1e-4,
            beta_max: 0.02,
            enc_width: 64,
            den_width: 128,
            epochs: 250,
            batch_size: 32,
            lr: 1e-3,
            ddim_steps: 20,
            z_scale: 0.7,
        }
    }
}

impl DaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.enc_width == 0 || self.den_width == 0 {
            return Err(Error::param("network dims must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::param("epochs and batch size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param("learning rate must be positive"));
        }
        if !(self.z_scale > 0.0 && self.z_scale.is_finite()) {
            return Err(Error::param("z scale must be positive"));
        }
        if self.ddim_steps == 0
            || self.ddim_steps > self.timesteps
            || self.timesteps % self.ddim_steps != 0
        {
            return Err(Error::param(format!(
                "ddim steps {} must evenly divide timesteps {}",
                self.ddim_steps, self.timesteps
            )));
        }
        NoiseSchedule::linear(self.timesteps, self.beta_min, self.beta_max).map(|_| ())
    }
}

/// Trained diffusion autoencoder. Immutable after training; encode, invert
/// and decode are pure functions of the stored parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionAutoencoder {
    pub sem_encoder: Mlp,
    pub denoiser: Mlp,
    pub schedule: NoiseSchedule,
    pub data_dim: usize,
    pub latent_dim: usize,
}

pub fn time_embedding(t: usize, t_max: usize) -> [f64; TIME_EMB_DIM] {
    let tau = t as f64 / t_max as f64;
    let mut emb = [0.0; TIME_EMB_DIM];
    for i in 0..TIME_EMB_DIM / 2 {
        let w = std::f64::consts::PI * (1 << i) as f64;
        emb[2 * i] = (w * tau).sin();
        emb[2 * i + 1] = (w * tau).cos();
    }
    emb
}

impl DiffusionAutoencoder {
    /// Untrained model with seeded initialization.
    pub fn init(data_dim: usize, cfg: &DaeConfig, seed: SeedStream) -> Result<Self> {
        cfg.validate()?;
        if data_dim == 0 {
            return Err(Error::param("data dim must be positive"));
        }
        let schedule = NoiseSchedule::linear(cfg.timesteps, cfg.beta_min, cfg.beta_max)?;
        let mut enc_rng = seed.derive("init/encoder").rng();
        let sem_encoder = Mlp::new(
            &[
                LayerSpec {
                    in_dim: data_dim,
                    out_dim: cfg.enc_width,
                    activation: Activation::Tanh,
                },
                LayerSpec {
                    in_dim: cfg.enc_width,
                    out_dim: cfg.enc_width,
                    activation: Activation::Tanh,
                },
                LayerSpec {
                    in_dim: cfg.enc_width,
                    out_dim: cfg.latent_dim,
                    activation: Activation::Identity,
                },
            ],
            &mut enc_rng,
        )?;
        let den_in = data_dim + cfg.latent_dim + TIME_EMB_DIM;
        let mut den_rng = seed.derive("init/denoiser").rng();
        let denoiser = Mlp::new(
            &[
                LayerSpec {
                    in_dim: den_in,
                    out_dim: cfg.den_width,
                    activation: Activation::Tanh,
                },
                LayerSpec {
                    in_dim: cfg.den_width,
                    out_dim: cfg.den_width,
                    activation: Activation::Tanh,
                },
                LayerSpec {
                    in_dim: cfg.den_width,
                    out_dim: cfg.den_width,
                    activation: Activation::Tanh,
                },
                LayerSpec {
                    in_dim: cfg.den_width,
                    out_dim: data_dim,
                    activation: Activation::Identity,
                },
            ],
            &mut den_rng,
        )?;
        Ok(DiffusionAutoencoder {
            sem_encoder,
            denoiser,
            schedule,
            data_dim,
            latent_dim: cfg.latent_dim,
        })
    }

    /// Deterministic semantic code of a sample.
    pub fn encode_semantic(&self, x0: &[f64]) -> Result<SemanticCode> {
        if x0.len() != self.data_dim {
            return Err(Error::shape(format!(
                "sample length {} does not match data dim {}",
                x0.len(),
                self.data_dim
            )));
        }
        Ok(SemanticCode(self.sem_encoder.forward(x0)?))
    }

    fn denoiser_input(&self, x_t: &[f64], z: &[f64], t: usize) -> Vec<f64> {
        let emb = time_embedding(t, self.schedule.t_max());
        let mut input = Vec::with_capacity(self.data_dim + self.latent_dim + TIME_EMB_DIM);
        input.extend_from_slice(x_t);
        input.extend_from_slice(z);
        input.extend_from_slice(&emb);
        input
    }

    /// Predicted noise at step `t` conditioned on the semantic code.
    pub fn predict_eps(&self, x_t: &[f64], z: &SemanticCode, t: usize) -> Result<Vec<f64>> {
        self.denoiser.forward(&self.denoiser_input(x_t, &z.0, t))
    }

    /// Uniform-stride step subsequence `0, T/steps, ..., T`.
    fn step_sequence(&self, steps: usize) -> Result<Vec<usize>> {
        let t_max = self.schedule.t_max();
        if steps == 0 || steps > t_max {
            return Err(Error::param(format!(
                "ddim steps {steps} outside 1..={t_max}"
            )));
        }
        if t_max % steps != 0 {
            return Err(Error::param(format!(
                "ddim steps {steps} must evenly divide {t_max}"
            )));
        }
        let stride = t_max / steps;
        Ok((0..=steps).map(|i| i * stride).collect())
    }

    /// Deterministic DDIM inversion (eta = 0): run the decode update rule in
    /// reverse to obtain the stochastic code `x_T` of a sample. `z` should be
    /// the sample's own semantic code for meaningful round trips.
    pub fn ddim_invert(
        &self,
        x0: &[f64],
        z: &SemanticCode,
        steps: usize,
    ) -> Result<StochasticCode> {
        if x0.len() != self.data_dim {
            return Err(Error::shape("sample length mismatch"));
        }
        let taus = self.step_sequence(steps)?;
        let mut x = x0.to_vec();
        for w in taus.windows(2) {
            let (t_lo, t_hi) = (w[0], w[1]);
            let eps = self.predict_eps(&x, z, t_lo)?;
            x = self.ddim_jump(&x, &eps, t_lo, t_hi);
        }
        Ok(StochasticCode(x))
    }

    /// Deterministic DDIM decoding (eta = 0): from `x_T` back to a sample,
    /// conditioned on a (possibly perturbed) semantic code.
    pub fn ddim_decode(
        &self,
        z: &SemanticCode,
        x_t: &StochasticCode,
        steps: usize,
    ) -> Result<Vec<f64>> {
        if x_t.0.len() != self.data_dim {
            return Err(Error::shape("stochastic code length mismatch"));
        }
        let taus = self.step_sequence(steps)?;
        let mut x = x_t.0.clone();
        for w in taus.windows(2).rev() {
            let (t_lo, t_hi) = (w[0], w[1]);
            let eps = self.predict_eps(&x, z, t_hi)?;
            x = self.ddim_jump(&x, &eps, t_hi, t_lo);
        }
        Ok(x)
    }

    /// One DDIM update from noise level `t_from` to `t_to`: reconstruct the
    /// sample estimate, then re-noise it at the target level with the same
    /// predicted eps.
    fn ddim_jump(&self, x: &[f64], eps: &[f64], t_from: usize, t_to: usize) -> Vec<f64> {
        let ab_from = self.schedule.alpha_bar(t_from);
        let ab_to = self.schedule.alpha_bar(t_to);
        let (sa_from, sn_from) = (ab_from.sqrt(), (1.0 - ab_from).sqrt());
        let (sa_to, sn_to) = (ab_to.sqrt(), (1.0 - ab_to).sqrt());
        x.iter()
            .zip(eps)
            .map(|(x, e)| {
                let x0_hat = (x - sn_from * e) / sa_from;
                sa_to * x0_hat + sn_to * e
            })
            .collect()
    }

    /// Encode, invert and decode a sample with its own codes.
    pub fn reconstruct(&self, x0: &[f64], steps: usize) -> Result<Vec<f64>> {
        let z = self.encode_semantic(x0)?;
        let x_t = self.ddim_invert(x0, &z, steps)?;
        self.ddim_decode(&z, &x_t, steps)
    }
}

/// Fold the training-set code statistics into the encoder's final affine
/// layer so codes have zero mean and `target` per-dimension spread. The
/// denoiser re-adapts over subsequent epochs; near convergence the fold
/// approaches the identity.
fn standardize_codes(
    model: &mut DiffusionAutoencoder,
    data: &[Vec<f64>],
    target: f64,
) -> Result<()> {
    let d_z = model.latent_dim;
    let n = data.len() as f64;
    let mut mean = vec![0.0; d_z];
    let mut sq = vec![0.0; d_z];
    for x in data {
        let z = model.sem_encoder.forward(x)?;
        for ((m, s), v) in mean.iter_mut().zip(sq.iter_mut()).zip(&z) {
            *m += v / n;
            *s += v * v / n;
        }
    }
    let last = model.sem_encoder.layers().len() - 1;
    let layer = &mut model.sem_encoder.layers_mut()[last];
    for i in 0..d_z {
        let var = (sq[i] - mean[i] * mean[i]).max(0.0);
        let divisor = (var.sqrt() / target).max(1e-6);
        let in_dim = layer.weight.cols();
        for c in 0..in_dim {
            let w = layer.weight.get(i, c) / divisor;
            layer.weight.set(i, c, crate::linalg::snap_f32(w));
        }
        layer.bias[i] = crate::linalg::snap_f32((layer.bias[i] - mean[i]) / divisor);
    }
    Ok(())
}

/// Train on the mean squared noise-prediction error, conditioning the
/// denoiser on the semantic code and a sinusoidal time embedding. Returns the
/// model and the per-epoch training loss history.
pub fn train_autoencoder(
    data: &[Vec<f64>],
    cfg: &DaeConfig,
    seed: SeedStream,
) -> Result<(DiffusionAutoencoder, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::param("training dataset is empty"));
    }
    let d = data[0].len();
    if d == 0 {
        return Err(Error::param("samples must be non-empty"));
    }
    for x in data {
        if x.len() != d {
            return Err(Error::shape("ragged training data"));
        }
        if !all_finite(x) {
            return Err(Error::numeric("non-finite training sample"));
        }
    }
    let mut model = DiffusionAutoencoder::init(d, cfg, seed)?;
    let t_max = model.schedule.t_max();
    let mut enc_opt = AdamState::new(&model.sem_encoder, AdamParams::with_lr(cfg.lr));
    let mut den_opt = AdamState::new(&model.denoiser, AdamParams::with_lr(cfg.lr));
    let mut draws = seed.derive("train/draws").rng();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = seed.derive(&format!("train/shuffle/{epoch}")).rng();
        indices.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut enc_grads = GradBuffer::zeros_like(&model.sem_encoder);
            let mut den_grads = GradBuffer::zeros_like(&model.denoiser);
            for &i in batch {
                let x0 = &data[i];
                let t = draws.gen_range(1..=t_max);
                let eps: Vec<f64> = (0..d).map(|_| draws.sample(StandardNormal)).collect();

                let enc_cache = model.sem_encoder.forward_cache(x0)?;
                let z = enc_cache.output().to_vec();
                let x_t = q_sample(x0, t, &eps, &model.schedule)?;
                let den_cache = model
                    .denoiser
                    .forward_cache(&model.denoiser_input(&x_t, &z, t))?;
                let eps_hat = den_cache.output();

                let residual: Vec<f64> = eps_hat.iter().zip(&eps).map(|(p, e)| p - e).collect();
                epoch_loss += residual.iter().map(|r| r * r).sum::<f64>() / d as f64;

                let grad_out: Vec<f64> =
                    residual.iter().map(|r| 2.0 * r * scale / d as f64).collect();
                let (dg, dinput) = model.denoiser.backward(&den_cache, &grad_out)?;
                den_grads.add_assign(&dg);
                let z_grad = &dinput[d..d + cfg.latent_dim];
                let (eg, _) = model.sem_encoder.backward(&enc_cache, z_grad)?;
                enc_grads.add_assign(&eg);
            }
            den_opt.step(&mut model.denoiser, &den_grads)?;
            enc_opt.step(&mut model.sem_encoder, &enc_grads)?;
        }
        standardize_codes(&mut model, data, cfg.z_scale)?;
        history.push(epoch_loss / data.len() as f64);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dist_sq;
    use proptest::prelude::*;

    #[test]
    fn schedule_two_step_products() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        assert_eq!(s.alphas_bar()[0], 1.0);
        assert!((s.alphas_bar()[1] - 0.9).abs() < 1e-12);
        assert!((s.alphas_bar()[2] - 0.72).abs() < 1e-12);
    }

    #[test]
    fn schedule_terminal_product_matches_log_recomputation() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let log_sum: f64 = s.betas().iter().map(|b| (1.0 - b).ln()).sum();
        let expected = log_sum.exp();
        assert!((s.alphas_bar()[100] - expected).abs() < 1e-12);
    }

    #[test]
    fn schedule_invariants_hold() {
        for (t, lo, hi) in [(2usize, 0.1, 0.2), (100, 1e-4, 0.02), (37, 0.003, 0.4)] {
            let s = NoiseSchedule::linear(t, lo, hi).unwrap();
            assert_eq!(s.betas().len(), t);
            assert_eq!(s.alphas_bar().len(), t + 1);
            assert_eq!(s.alphas_bar()[0], 1.0);
            for pair in s.betas().windows(2) {
                assert!(pair[0] < pair[1]);
            }
            for pair in s.alphas_bar().windows(2) {
                assert!(pair[0] > pair[1]);
            }
            assert!(s.betas().iter().all(|&b| b > 0.0 && b < 1.0));
        }
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(NoiseSchedule::linear(1, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 1.0).is_err());
    }

    #[test]
    fn q_sample_at_zero_is_identity() {
        let s = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        let x0 = vec![1.5, -2.0, 0.25];
        let eps = vec![3.0, -1.0, 10.0];
        assert_eq!(q_sample(&x0, 0, &eps, &s).unwrap(), x0);
    }

    #[test]
    fn q_sample_quarter_alpha_closed_form() {
        // betas (0.5 - a, 0.5 + a) give a cumulative alpha of 0.25 - a^2.
        let s = NoiseSchedule::from_betas(vec![0.5 - 1e-9, 0.5 + 1e-9]).unwrap();
        let got = q_sample(&[0.0, 0.0], 2, &[1.0, 0.0], &s).unwrap();
        assert!((got[0] - 0.75f64.sqrt()).abs() < 1e-9);
        assert_eq!(got[1], 0.0);
    }

    #[test]
    fn q_sample_rejects_out_of_range_t() {
        let s = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        assert!(matches!(
            q_sample(&[0.0], 11, &[0.0], &s),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn q_sample_moments_match_monte_carlo() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let t = 60;
        let ab = s.alpha_bar(t);
        let x0 = [1.2, -0.7];
        let n = 10_000usize;
        let mut rng = SeedStream::stream(7, "diffusion/mc");
        let mut sums = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        for _ in 0..n {
            let eps: Vec<f64> = (0..2)
                .map(|_| rand::Rng::sample(&mut rng, StandardNormal))
                .collect();
            let xt = q_sample(&x0, t, &eps, &s).unwrap();
            for k in 0..2 {
                sums[k] += xt[k];
                sq[k] += xt[k] * xt[k];
            }
        }
        let se_mean = ((1.0 - ab) / n as f64).sqrt();
        let se_var = (1.0 - ab) * (2.0 / (n as f64 - 1.0)).sqrt();
        for k in 0..2 {
            let mean = sums[k] / n as f64;
            let var = (sq[k] - sums[k] * sums[k] / n as f64) / (n as f64 - 1.0);
            assert!((mean - ab.sqrt() * x0[k]).abs() < 3.0 * se_mean);
            assert!((var - (1.0 - ab)).abs() < 3.0 * se_var);
        }
    }

    proptest! {
        #[test]
        fn q_sample_is_affine(a in -3.0f64..3.0, x in -2.0f64..2.0, e in -2.0f64..2.0, t in 0usize..=20) {
            let s = NoiseSchedule::linear(20, 0.01, 0.2).unwrap();
            let lhs = q_sample(&[a * x], t, &[a * e], &s).unwrap()[0];
            let rhs = a * q_sample(&[x], t, &[e], &s).unwrap()[0];
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0));
        }
    }

    fn zero_denoiser_model() -> DiffusionAutoencoder {
        let cfg = DaeConfig {
            timesteps: 50,
            ddim_steps: 10,
            latent_dim: 2,
            enc_width: 4,
            den_width: 4,
            ..Default::default()
        };
        let mut model =
            DiffusionAutoencoder::init(3, &cfg, SeedStream::root(1).derive("zero")).unwrap();
        // Zero out the denoiser: eps_hat = 0 everywhere.
        let zeros = vec![0.0; model.denoiser.param_count()];
        model.denoiser.set_from_flat(&zeros).unwrap();
        model
    }

    #[test]
    fn zero_denoiser_inversion_scales_by_sqrt_alpha_bar() {
        let model = zero_denoiser_model();
        let x0 = vec![1.0, -2.0, 0.5];
        let z = model.encode_semantic(&x0).unwrap();
        let x_t = model.ddim_invert(&x0, &z, 10).unwrap();
        let scale = model.schedule.alpha_bar(50).sqrt();
        for (got, x) in x_t.0.iter().zip(&x0) {
            assert!((got - scale * x).abs() < 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn zero_denoiser_decode_divides_by_sqrt_alpha_bar() {
        let model = zero_denoiser_model();
        let z = SemanticCode(vec![0.3, -0.4]);
        let x_t = StochasticCode(vec![0.2, 0.9, -1.1]);
        let out = model.ddim_decode(&z, &x_t, 10).unwrap();
        let scale = model.schedule.alpha_bar(50).sqrt();
        for (got, x) in out.iter().zip(&x_t.0) {
            assert!((got - x / scale).abs() < 1e-12 * (x / scale).abs().max(1.0));
        }
    }

    #[test]
    fn invert_and_decode_are_deterministic() {
        let cfg = DaeConfig {
            timesteps: 20,
            ddim_steps: 5,
            latent_dim: 2,
            enc_width: 8,
            den_width: 8,
            ..Default::default()
        };
        let model =
            DiffusionAutoencoder::init(3, &cfg, SeedStream::root(3).derive("det")).unwrap();
        let x0 = vec![0.4, -0.9, 1.3];
        let z = model.encode_semantic(&x0).unwrap();
        assert_eq!(model.encode_semantic(&x0).unwrap(), z);
        let a = model.ddim_invert(&x0, &z, 5).unwrap();
        let b = model.ddim_invert(&x0, &z, 5).unwrap();
        assert_eq!(a, b);
        let d1 = model.ddim_decode(&z, &a, 5).unwrap();
        let d2 = model.ddim_decode(&z, &a, 5).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn invalid_step_counts_are_rejected() {
        let model = zero_denoiser_model();
        let x0 = vec![0.0; 3];
        let z = model.encode_semantic(&x0).unwrap();
        assert!(model.ddim_invert(&x0, &z, 0).is_err());
        assert!(model.ddim_invert(&x0, &z, 51).is_err());
        // 7 does not divide 50.
        assert!(model.ddim_invert(&x0, &z, 7).is_err());
    }

    #[test]
    fn encoder_zero_weights_returns_bias() {
        let mut model = zero_denoiser_model();
        let zeros = vec![0.0; model.sem_encoder.param_count()];
        model.sem_encoder.set_from_flat(&zeros).unwrap();
        let z = model.encode_semantic(&[5.0, -2.0, 0.1]).unwrap();
        assert_eq!(z.0, vec![0.0, 0.0]);
    }

    #[test]
    fn training_on_constant_dataset_reconstructs() {
        let cfg = DaeConfig {
            timesteps: 50,
            ddim_steps: 10,
            latent_dim: 2,
            enc_width: 16,
            den_width: 32,
            epochs: 200,
            batch_size: 8,
            ..Default::default()
        };
        let data: Vec<Vec<f64>> = vec![vec![0.5, -0.3, 1.0]; 16];
        let (model, history) = train_autoencoder(&data, &cfg, SeedStream::root(7)).unwrap();
        assert_eq!(history.len(), 200);
        let recon = model.reconstruct(&data[0], 10).unwrap();
        let mse = dist_sq(&recon, &data[0]) / 3.0;
        assert!(mse < 1e-2, "constant-data reconstruction mse {mse}");
    }

    #[test]
    fn training_is_seed_deterministic() {
        let cfg = DaeConfig {
            timesteps: 20,
            ddim_steps: 5,
            latent_dim: 2,
            enc_width: 8,
            den_width: 8,
            epochs: 3,
            batch_size: 4,
            ..Default::default()
        };
        let data: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![i as f64 * 0.1, 1.0 - i as f64 * 0.05])
            .collect();
        let (m1, h1) = train_autoencoder(&data, &cfg, SeedStream::root(11)).unwrap();
        let (m2, h2) = train_autoencoder(&data, &cfg, SeedStream::root(11)).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1.sem_encoder.flatten(), m2.sem_encoder.flatten());
        assert_eq!(m1.denoiser.flatten(), m2.denoiser.flatten());
    }

    #[test]
    fn training_rejects_empty_dataset() {
        let cfg = DaeConfig::default();
        assert!(matches!(
            train_autoencoder(&[], &cfg, SeedStream::root(1)),
            Err(Error::Param(_))
        ));
    }
}
