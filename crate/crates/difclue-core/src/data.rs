//! Synthetic datasets with known ground-truth modes, the class-mixing
//! relabeling used by the alignment experiment, and the oracle attribute
//! classifier.
//!
//! Ground-truth mode labels exist for evaluation only: the encoding,
//! clustering and counterfactual stages receive bare value vectors.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, dist_sq};
use crate::metrics::{classifier_report, ClassifierReport};
use crate::nn::{train_classifier, ClassifierConfig, Mlp};
use crate::rng::SeedStream;

pub const SHAPES_SIDE: usize = 16;
pub const SHAPES_DIM: usize = SHAPES_SIDE * SHAPES_SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    GaussMix,
    Shapes16,
}

impl DatasetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::GaussMix => "gauss-mix",
            DatasetKind::Shapes16 => "shapes-16",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gauss-mix" => Ok(DatasetKind::GaussMix),
            "shapes-16" => Ok(DatasetKind::Shapes16),
            other => Err(Error::param(format!("unknown dataset kind '{other}'"))),
        }
    }
}

/// Generation parameters. Every (class, mode) cell receives
/// `samples_per_mode` samples, so the total count is `classes *
/// modes_per_class * samples_per_mode`.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub dim: usize,
    pub classes: usize,
    pub modes_per_class: usize,
    pub samples_per_mode: usize,
    /// Minimum pairwise mode-center distance, in units of the noise scale.
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: DatasetKind::GaussMix,
            dim: 8,
            classes: 3,
            modes_per_class: 1,
            samples_per_mode: 80,
            separation: 6.0,
            noise: 1.0,
            seed: 7,
        }
    }
}

impl DatasetSpec {
    pub fn shapes_default() -> Self {
        DatasetSpec {
            kind: DatasetKind::Shapes16,
            dim: SHAPES_DIM,
            classes: 3,
            modes_per_class: 1,
            samples_per_mode: 60,
            separation: 6.0,
            noise: 0.05,
            seed: 7,
        }
    }

    pub fn total_modes(&self) -> usize {
        self.classes * self.modes_per_class
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::param("need at least 2 classes"));
        }
        if self.modes_per_class < 1 || self.samples_per_mode < 1 {
            return Err(Error::param("modes and samples per mode must be positive"));
        }
        if !(self.separation > 0.0) {
            return Err(Error::param("separation must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::param("noise scale must be non-negative"));
        }
        match self.kind {
            DatasetKind::GaussMix => {
                if self.dim == 0 {
                    return Err(Error::param("dim must be positive"));
                }
            }
            DatasetKind::Shapes16 => {
                if self.dim != SHAPES_DIM {
                    return Err(Error::param(format!(
                        "shapes-16 samples are {SHAPES_DIM}-dimensional"
                    )));
                }
                if self.total_modes() > SHAPE_PATTERNS {
                    return Err(Error::param(format!(
                        "shapes-16 supports at most {SHAPE_PATTERNS} modes"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One data point. `mode` is ground truth, hidden from the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub values: Vec<f64>,
    pub class: usize,
    pub mode: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub dim: usize,
    pub classes: usize,
    pub modes_per_class: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn values_of_class(&self, class: usize) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .filter(|s| s.class == class)
            .map(|s| s.values.clone())
            .collect()
    }
}

const MAX_CENTER_TRIES: usize = 1000;

/// Deterministic dataset generation: a pure function of the spec.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let stream = SeedStream::root(spec.seed).derive("data");
    let samples = match spec.kind {
        DatasetKind::GaussMix => generate_gauss(spec, stream)?,
        DatasetKind::Shapes16 => generate_shapes(spec, stream),
    };
    Ok(Dataset {
        kind: spec.kind,
        dim: spec.dim,
        classes: spec.classes,
        modes_per_class: spec.modes_per_class,
        samples,
    })
}

fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let c: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = crate::linalg::norm(&c);
        if n > 1e-12 {
            return c.into_iter().map(|v| v / n).collect();
        }
    }
}

/// Mode centers: the first two cells sit at opposite poles of a seeded axis,
/// and every later cell near the midpoint with a perpendicular offset. With
/// the default three classes this puts the (future) negative class between
/// the two classes that get mixed, so attribute-style directions from a
/// negative cross into either constituent.
fn gauss_centers(spec: &DatasetSpec, stream: SeedStream) -> Result<Vec<Vec<f64>>> {
    let mut center_rng = stream.derive("centers").rng();
    let min_dist = spec.separation * spec.noise;
    let radius = if spec.noise > 0.0 {
        spec.separation * spec.noise
    } else {
        spec.separation
    };
    let total = spec.total_modes();
    let axis = random_unit(spec.dim, &mut center_rng);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(total);
    for cell in 0..total {
        match cell {
            0 => centers.push(axis.iter().map(|x| -radius * x).collect()),
            1 => centers.push(axis.iter().map(|x| radius * x).collect()),
            j => {
                let offset = radius * (0.4 + 0.5 * (j - 2) as f64);
                let mut placed = false;
                for _ in 0..MAX_CENTER_TRIES {
                    let raw = random_unit(spec.dim, &mut center_rng);
                    let along = crate::linalg::dot(&raw, &axis);
                    let mut perp: Vec<f64> = raw
                        .iter()
                        .zip(&axis)
                        .map(|(r, a)| r - along * a)
                        .collect();
                    let n = crate::linalg::norm(&perp);
                    if n < 1e-9 {
                        continue;
                    }
                    for v in perp.iter_mut() {
                        *v *= offset / n;
                    }
                    if centers
                        .iter()
                        .all(|other| dist_sq(other, &perp).sqrt() >= min_dist)
                    {
                        centers.push(perp);
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return Err(Error::param(
                        "could not place mode centers at the requested separation",
                    ));
                }
            }
        }
    }
    Ok(centers)
}

fn generate_gauss(spec: &DatasetSpec, stream: SeedStream) -> Result<Vec<Sample>> {
    let centers = gauss_centers(spec, stream)?;

    let sample_stream = stream.derive("samples");
    let mut samples = Vec::with_capacity(spec.total_modes() * spec.samples_per_mode);
    let mut id = 0u64;
    for class in 0..spec.classes {
        for mode_j in 0..spec.modes_per_class {
            let mode = class * spec.modes_per_class + mode_j;
            for _ in 0..spec.samples_per_mode {
                let mut rng = sample_stream.derive_index(id).rng();
                let values: Vec<f64> = centers[mode]
                    .iter()
                    .map(|c| c + spec.noise * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                samples.push(Sample {
                    id,
                    values,
                    class,
                    mode,
                });
                id += 1;
            }
        }
    }
    Ok(samples)
}

const SHAPE_PATTERNS: usize = 8;
const SHAPE_BG: f64 = 0.1;
const SHAPE_FG: f64 = 0.9;
const SHAPE_FAINT: f64 = 0.5;

fn stamp(img: &mut [f64], level: f64, pred: impl Fn(isize, isize) -> bool) {
    let side = SHAPES_SIDE as isize;
    for r in 0..side {
        for c in 0..side {
            if pred(r, c) {
                img[(r * side + c) as usize] = level;
            }
        }
    }
}

fn square_at(r0: isize, c0: isize) -> impl Fn(isize, isize) -> bool {
    move |r, c| r >= r0 && r < r0 + 6 && c >= c0 && c < c0 + 6
}

fn disc_at(cr: f64, cc: f64) -> impl Fn(isize, isize) -> bool {
    move |r, c| {
        let dr = r as f64 - cr;
        let dc = c as f64 - cc;
        dr * dr + dc * dc <= 3.2 * 3.2
    }
}

/// Base raster for a global mode id. The first two cells carry one strong
/// attribute each (bright square in the top-left corner, filled disc in the
/// bottom-right); the third carries faint versions of both, mirroring the
/// gauss-mix layout where the negative class sits between the constituents.
fn shape_pattern(mode: usize) -> Vec<f64> {
    let mut img = vec![SHAPE_BG; SHAPES_DIM];
    match mode % SHAPE_PATTERNS {
        0 => stamp(&mut img, SHAPE_FG, square_at(1, 1)),
        1 => stamp(&mut img, SHAPE_FG, disc_at(11.0, 11.0)),
        2 => {
            stamp(&mut img, SHAPE_FAINT, square_at(1, 1));
            stamp(&mut img, SHAPE_FAINT, disc_at(11.0, 11.0));
        }
        3 => stamp(&mut img, SHAPE_FG, |r, _| (7..9).contains(&r)),
        4 => stamp(&mut img, SHAPE_FG, square_at(9, 1)),
        5 => stamp(&mut img, SHAPE_FG, disc_at(4.0, 11.0)),
        6 => stamp(&mut img, SHAPE_FG, |_, c| (7..9).contains(&c)),
        _ => {
            stamp(&mut img, SHAPE_FAINT, square_at(9, 1));
            stamp(&mut img, SHAPE_FAINT, disc_at(4.0, 11.0));
        }
    }
    img
}

fn generate_shapes(spec: &DatasetSpec, stream: SeedStream) -> Vec<Sample> {
    let patterns: Vec<Vec<f64>> = (0..spec.total_modes()).map(shape_pattern).collect();
    let sample_stream = stream.derive("samples");
    let mut samples = Vec::with_capacity(spec.total_modes() * spec.samples_per_mode);
    let mut id = 0u64;
    for class in 0..spec.classes {
        for mode_j in 0..spec.modes_per_class {
            let mode = class * spec.modes_per_class + mode_j;
            for _ in 0..spec.samples_per_mode {
                let mut rng = sample_stream.derive_index(id).rng();
                let values: Vec<f64> = patterns[mode]
                    .iter()
                    .map(|p| {
                        let v = p + spec.noise * rng.sample::<f64, _>(StandardNormal);
                        v.clamp(0.0, 1.0)
                    })
                    .collect();
                samples.push(Sample {
                    id,
                    values,
                    class,
                    mode,
                });
                id += 1;
            }
        }
    }
    samples
}

pub const LABEL_NEGATIVE: usize = 0;
pub const LABEL_POSITIVE: usize = 1;

/// Binary relabeling of a dataset: two constituent classes become one
/// positive class, everything else negative. The original class label is
/// kept as the ground-truth mode.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDataset {
    pub dim: usize,
    pub class_a: usize,
    pub class_b: usize,
    /// `class` is 0 (negative) or 1 (positive); `mode` is the original class.
    pub samples: Vec<Sample>,
}

impl MixedDataset {
    pub fn positives(&self) -> Vec<&Sample> {
        self.samples
            .iter()
            .filter(|s| s.class == LABEL_POSITIVE)
            .collect()
    }

    pub fn negatives(&self) -> Vec<&Sample> {
        self.samples
            .iter()
            .filter(|s| s.class == LABEL_NEGATIVE)
            .collect()
    }
}

pub fn mix_classes(dataset: &Dataset, class_a: usize, class_b: usize) -> Result<MixedDataset> {
    for class in [class_a, class_b] {
        if !dataset.samples.iter().any(|s| s.class == class) {
            return Err(Error::param(format!("class {class} not present")));
        }
    }
    let samples = dataset
        .samples
        .iter()
        .map(|s| Sample {
            id: s.id,
            values: s.values.clone(),
            class: if s.class == class_a || s.class == class_b {
                LABEL_POSITIVE
            } else {
                LABEL_NEGATIVE
            },
            mode: s.class,
        })
        .collect();
    Ok(MixedDataset {
        dim: dataset.dim,
        class_a,
        class_b,
        samples,
    })
}

/// The attribute classifier standing in for a full-scale image model: an MLP
/// over raw values trained on the original (unmixed) class labels, with its
/// held-out report attached.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleClassifier {
    pub mlp: Mlp,
    pub classes: usize,
    pub holdout: ClassifierReport,
}

impl OracleClassifier {
    pub fn predict_proba(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.mlp.forward(values)
    }

    pub fn predict(&self, values: &[f64]) -> Result<usize> {
        Ok(crate::cluster::argmax(&self.predict_proba(values)?))
    }

    /// Penultimate-layer activations, used as the realism feature space.
    pub fn features(&self, values: &[f64]) -> Result<Vec<f64>> {
        let cache = self.mlp.forward_cache(values)?;
        Ok(cache.layer_output(self.mlp.layers().len() - 2).to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            hidden: 32,
            epochs: 80,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.1,
        }
    }
}

/// Seeded stratified index split; `test_fraction` of each class goes to the
/// held-out side.
pub fn stratified_split(
    labels: &[usize],
    n_classes: usize,
    test_fraction: f64,
    seed: SeedStream,
) -> Result<(Vec<usize>, Vec<usize>)> {
    use rand::seq::SliceRandom;
    if !(0.0 < test_fraction && test_fraction < 1.0) {
        return Err(Error::param("test fraction must be in (0, 1)"));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..n_classes {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        if n_test == 0 || n_test == idx.len() {
            return Err(Error::param(format!(
                "class {class} too small for a stratified split"
            )));
        }
        let mut rng = seed.derive(&format!("split/{class}")).rng();
        idx.shuffle(&mut rng);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Train the oracle on original class labels with a stratified 80/20 split.
pub fn train_oracle(
    dataset: &Dataset,
    cfg: &OracleConfig,
    seed: SeedStream,
) -> Result<OracleClassifier> {
    if dataset.classes < 2 {
        return Err(Error::param("oracle needs at least 2 classes"));
    }
    let labels: Vec<usize> = dataset.samples.iter().map(|s| s.class).collect();
    let (train_idx, test_idx) =
        stratified_split(&labels, dataset.classes, 0.2, seed.derive("oracle"))?;
    let xs: Vec<Vec<f64>> = train_idx
        .iter()
        .map(|&i| dataset.samples[i].values.clone())
        .collect();
    let ys: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let mlp = train_classifier(
        &xs,
        &ys,
        dataset.classes,
        &ClassifierConfig {
            hidden: vec![cfg.hidden, cfg.hidden],
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
        },
        seed.derive("oracle/train"),
    )?;
    let mut y_true = Vec::with_capacity(test_idx.len());
    let mut y_pred = Vec::with_capacity(test_idx.len());
    for &i in &test_idx {
        y_true.push(labels[i]);
        y_pred.push(crate::cluster::argmax(
            &mlp.forward(&dataset.samples[i].values)?,
        ));
    }
    let holdout = classifier_report(&y_true, &y_pred, dataset.classes)?;
    Ok(OracleClassifier {
        mlp,
        classes: dataset.classes,
        holdout,
    })
}

/// Text serialization: header `difclue-dataset v1, kind, d, n, M, count`,
/// then one `id, y, m, v1, ..., vd` record per line. Values print in
/// shortest-round-trip form, so parsing reproduces them bit-exactly.
pub fn dataset_to_string(ds: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "difclue-dataset v1, {}, {}, {}, {}, {}",
        ds.kind.as_str(),
        ds.dim,
        ds.classes,
        ds.modes_per_class,
        ds.samples.len()
    );
    for s in &ds.samples {
        let _ = write!(out, "{}, {}, {}", s.id, s.class, s.mode);
        for v in &s.values {
            let _ = write!(out, ", {v}");
        }
        out.push('\n');
    }
    out
}

pub fn dataset_from_str(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("empty dataset file"))?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields.len() != 6 || fields[0] != "difclue-dataset v1" {
        return Err(Error::format("bad dataset header"));
    }
    let kind = DatasetKind::parse(fields[1])?;
    let dim: usize = parse_field(fields[2], "dim")?;
    let classes: usize = parse_field(fields[3], "classes")?;
    let modes_per_class: usize = parse_field(fields[4], "modes")?;
    let count: usize = parse_field(fields[5], "count")?;
    let mut samples = Vec::with_capacity(count);
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 + dim {
            return Err(Error::format(format!(
                "record has {} fields, expected {}",
                parts.len(),
                3 + dim
            )));
        }
        let id: u64 = parse_field(parts[0], "id")?;
        let class: usize = parse_field(parts[1], "class")?;
        let mode: usize = parse_field(parts[2], "mode")?;
        if class >= classes {
            return Err(Error::format(format!("class {class} out of range")));
        }
        let values = parts[3..]
            .iter()
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::format(format!("bad value '{p}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if !all_finite(&values) {
            return Err(Error::format("non-finite value in dataset"));
        }
        samples.push(Sample {
            id,
            values,
            class,
            mode,
        });
    }
    if samples.len() != count {
        return Err(Error::format(format!(
            "header promised {count} records, found {}",
            samples.len()
        )));
    }
    Ok(Dataset {
        kind,
        dim,
        classes,
        modes_per_class,
        samples,
    })
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format(format!("bad {what} field '{s}'")))
}

/// Binary PGM (P5) encoding of a shapes-16 sample; pixel = round(value*255).
pub fn sample_to_pgm(values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != SHAPES_DIM {
        return Err(Error::shape(format!(
            "pgm export needs {SHAPES_DIM} values, got {}",
            values.len()
        )));
    }
    let mut out = format!("P5\n{SHAPES_SIDE} {SHAPES_SIDE}\n255\n").into_bytes();
    for v in values {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    Ok(out)
}
