//! Flat `key = value` experiment configuration with section prefixes
//! (`data.`, `dae.`, `oracle.`, `cluster.`, `cf.`). Lines starting with `#`
//! are comments. Every key has a default; unknown keys are errors.

use difclue_core::data::{DatasetKind, DatasetSpec};
use difclue_core::diffusion::DaeConfig;
use difclue_core::Error as CoreError;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub kind: DatasetKind,
    pub dim: usize,
    pub classes: usize,
    pub modes_per_class: usize,
    pub samples_per_mode: usize,
    pub separation: f64,
    pub noise: f64,
    pub mix_a: usize,
    pub mix_b: usize,
    pub dae: DaeConfig,
    pub oracle_hidden: usize,
    pub oracle_epochs: usize,
    pub oracle_batch: usize,
    pub oracle_lr: f64,
    pub oracle_weight_decay: f64,
    pub k: usize,
    /// Perturbation size for counterfactual generation and alignment.
    pub alpha: f64,
    /// Ascending alpha grid for importance sweeps.
    pub alphas: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            kind: DatasetKind::GaussMix,
            dim: 8,
            classes: 3,
            modes_per_class: 1,
            samples_per_mode: 80,
            separation: 6.0,
            noise: 1.0,
            mix_a: 0,
            mix_b: 1,
            dae: DaeConfig::default(),
            oracle_hidden: 32,
            oracle_epochs: 80,
            oracle_batch: 32,
            oracle_lr: 1e-3,
            oracle_weight_decay: 0.1,
            k: 2,
            alpha: 3.0,
            alphas: (0..=10).map(|i| i as f64 * 0.5).collect(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults tuned for the 16x16 raster domain.
    pub fn shapes_default() -> Self {
        let spec = DatasetSpec::shapes_default();
        ExperimentConfig {
            kind: spec.kind,
            dim: spec.dim,
            samples_per_mode: spec.samples_per_mode,
            noise: spec.noise,
            dae: DaeConfig {
                epochs: 120,
                ..DaeConfig::default()
            },
            ..Default::default()
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            kind: self.kind,
            dim: self.dim,
            classes: self.classes,
            modes_per_class: self.modes_per_class,
            samples_per_mode: self.samples_per_mode,
            separation: self.separation,
            noise: self.noise,
            seed: self.seed,
        }
    }

    pub fn parse(text: &str) -> Result<Self, CoreError> {
        let mut cfg = ExperimentConfig::default();
        let mut saw_shapes = false;
        // First pass: resolve the dataset kind so its defaults apply before
        // explicit keys override them.
        for line in text.lines() {
            if let Some((key, value)) = split_pair(line)? {
                if key == "data.kind" && value == "shapes-16" {
                    saw_shapes = true;
                }
            }
        }
        if saw_shapes {
            cfg = ExperimentConfig::shapes_default();
        }
        for line in text.lines() {
            if let Some((key, value)) = split_pair(line)? {
                cfg.apply(&key, &value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), CoreError> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "data.kind" => self.kind = DatasetKind::parse(value)?,
            "data.dim" => self.dim = parse(key, value)?,
            "data.classes" => self.classes = parse(key, value)?,
            "data.modes_per_class" => self.modes_per_class = parse(key, value)?,
            "data.samples_per_mode" => self.samples_per_mode = parse(key, value)?,
            "data.separation" => self.separation = parse(key, value)?,
            "data.noise" => self.noise = parse(key, value)?,
            "data.mix_a" => self.mix_a = parse(key, value)?,
            "data.mix_b" => self.mix_b = parse(key, value)?,
            "dae.latent_dim" => self.dae.latent_dim = parse(key, value)?,
            "dae.timesteps" => self.dae.timesteps = parse(key, value)?,
            "dae.beta_min" => self.dae.beta_min = parse(key, value)?,
            "dae.beta_max" => self.dae.beta_max = parse(key, value)?,
            "dae.enc_width" => self.dae.enc_width = parse(key, value)?,
            "dae.den_width" => self.dae.den_width = parse(key, value)?,
            "dae.epochs" => self.dae.epochs = parse(key, value)?,
            "dae.batch" => self.dae.batch_size = parse(key, value)?,
            "dae.lr" => self.dae.lr = parse(key, value)?,
            "dae.ddim_steps" => self.dae.ddim_steps = parse(key, value)?,
            "dae.z_scale" => self.dae.z_scale = parse(key, value)?,
            "oracle.hidden" => self.oracle_hidden = parse(key, value)?,
            "oracle.epochs" => self.oracle_epochs = parse(key, value)?,
            "oracle.batch" => self.oracle_batch = parse(key, value)?,
            "oracle.lr" => self.oracle_lr = parse(key, value)?,
            "oracle.weight_decay" => self.oracle_weight_decay = parse(key, value)?,
            "cluster.k" => self.k = parse(key, value)?,
            "cf.alpha" => self.alpha = parse(key, value)?,
            "cf.alphas" => {
                self.alphas = value
                    .split(',')
                    .map(|s| parse::<f64>("cf.alphas", s.trim()))
                    .collect::<Result<Vec<f64>, CoreError>>()?;
            }
            other => {
                return Err(CoreError::param(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        self.dataset_spec().validate()?;
        self.dae.validate()?;
        if self.mix_a >= self.classes || self.mix_b >= self.classes {
            return Err(CoreError::param(format!(
                "mix classes ({}, {}) must be below the class count {}",
                self.mix_a, self.mix_b, self.classes
            )));
        }
        if self.k == 0 {
            return Err(CoreError::param("cluster.k must be at least 1"));
        }
        if !self.alpha.is_finite() {
            return Err(CoreError::param("cf.alpha must be finite"));
        }
        if self.alphas.is_empty() {
            return Err(CoreError::param("cf.alphas must be non-empty"));
        }
        for pair in self.alphas.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(CoreError::param("cf.alphas must be strictly ascending"));
            }
        }
        if self.oracle_hidden == 0 || self.oracle_epochs == 0 || self.oracle_batch == 0 {
            return Err(CoreError::param("oracle settings must be positive"));
        }
        Ok(())
    }

    /// Stable textual rendering; parsing it back reproduces the config.
    pub fn render(&self) -> String {
        let alphas = self
            .alphas
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "seed = {}\n\
             data.kind = {}\n\
             data.dim = {}\n\
             data.classes = {}\n\
             data.modes_per_class = {}\n\
             data.samples_per_mode = {}\n\
             data.separation = {}\n\
             data.noise = {}\n\
             data.mix_a = {}\n\
             data.mix_b = {}\n\
             dae.latent_dim = {}\n\
             dae.timesteps = {}\n\
             dae.beta_min = {}\n\
             dae.beta_max = {}\n\
             dae.enc_width = {}\n\
             dae.den_width = {}\n\
             dae.epochs = {}\n\
             dae.batch = {}\n\
             dae.lr = {}\n\
             dae.ddim_steps = {}\n\
             dae.z_scale = {}\n\
             oracle.hidden = {}\n\
             oracle.epochs = {}\n\
             oracle.batch = {}\n\
             oracle.lr = {}\n\
             oracle.weight_decay = {}\n\
             cluster.k = {}\n\
             cf.alpha = {}\n\
             cf.alphas = {}\n",
            self.seed,
            self.kind.as_str(),
            self.dim,
            self.classes,
            self.modes_per_class,
            self.samples_per_mode,
            self.separation,
            self.noise,
            self.mix_a,
            self.mix_b,
            self.dae.latent_dim,
            self.dae.timesteps,
            self.dae.beta_min,
            self.dae.beta_max,
            self.dae.enc_width,
            self.dae.den_width,
            self.dae.epochs,
            self.dae.batch_size,
            self.dae.lr,
            self.dae.ddim_steps,
            self.dae.z_scale,
            self.oracle_hidden,
            self.oracle_epochs,
            self.oracle_batch,
            self.oracle_lr,
            self.oracle_weight_decay,
            self.k,
            self.alpha,
            alphas
        )
    }
}

fn split_pair(line: &str) -> Result<Option<(String, String)>, CoreError> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(None);
    }
    let (key, value) = line
        .split_once('=')
        .ok_or_else(|| CoreError::format(format!("expected 'key = value', got '{line}'")))?;
    Ok(Some((key.trim().to_string(), value.trim().to_string())))
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CoreError> {
    value
        .parse()
        .map_err(|_| CoreError::param(format!("bad value '{value}' for {key}")))
}
