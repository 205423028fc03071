//! Binary model checkpoints.
//!
//! Layout: magic `DIFCLUE1`, format version (u32), model kind tag (u8), a
//! kind-specific dimension header, the parameter payload as 32-bit
//! little-endian reals, and a trailing FNV-1a 64-bit checksum over the
//! payload bytes. All persisted parameters live on the f32 grid, so the
//! 32-bit payload round-trips models bit-exactly.

use std::path::Path;

use difclue_core::cluster::{ClusterModel, DirectionSet};
use difclue_core::data::OracleClassifier;
use difclue_core::diffusion::{DiffusionAutoencoder, NoiseSchedule};
#[cfg(test)]
use difclue_core::diffusion::DaeConfig;
use difclue_core::linalg::Matrix;
use difclue_core::metrics::{ClassScores, ClassifierReport};
use difclue_core::nn::{Activation, Layer, Mlp};
use difclue_core::rng::fnv1a64;
use difclue_core::{Error, Result};

const MAGIC: &[u8; 8] = b"DIFCLUE1";
const VERSION: u32 = 1;

const KIND_ORACLE: u8 = 1;
const KIND_DAE: u8 = 2;
const KIND_CLUSTER: u8 = 3;
const KIND_DIRECTIONS: u8 = 4;

/// Any persistable model in the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Oracle(OracleClassifier),
    Dae(DiffusionAutoencoder),
    Clusters(ClusterModel),
    Directions(DirectionSet),
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let bytes = encode(model);
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}

pub fn load_oracle(path: &Path) -> Result<OracleClassifier> {
    match load_checkpoint(path)? {
        Model::Oracle(m) => Ok(m),
        _ => Err(Error::format(format!("{} is not an oracle checkpoint", path.display()))),
    }
}

pub fn load_dae(path: &Path) -> Result<DiffusionAutoencoder> {
    match load_checkpoint(path)? {
        Model::Dae(m) => Ok(m),
        _ => Err(Error::format(format!("{} is not an autoencoder checkpoint", path.display()))),
    }
}

pub fn load_clusters(path: &Path) -> Result<ClusterModel> {
    match load_checkpoint(path)? {
        Model::Clusters(m) => Ok(m),
        _ => Err(Error::format(format!("{} is not a cluster checkpoint", path.display()))),
    }
}

pub fn load_directions(path: &Path) -> Result<DirectionSet> {
    match load_checkpoint(path)? {
        Model::Directions(m) => Ok(m),
        _ => Err(Error::format(format!("{} is not a directions checkpoint", path.display()))),
    }
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut header = Vec::new();
    let mut payload: Vec<f64> = Vec::new();
    let kind = match model {
        Model::Oracle(oracle) => {
            put_u32(&mut header, oracle.classes as u32);
            put_report(&mut header, &oracle.holdout);
            put_mlp_header(&mut header, &oracle.mlp);
            payload.extend(oracle.mlp.flatten());
            KIND_ORACLE
        }
        Model::Dae(dae) => {
            put_u32(&mut header, dae.data_dim as u32);
            put_u32(&mut header, dae.latent_dim as u32);
            // Full beta vector as f64 so the reconstructed schedule is
            // bit-identical regardless of how it was built.
            put_u32(&mut header, dae.schedule.t_max() as u32);
            for &b in dae.schedule.betas() {
                put_f64(&mut header, b);
            }
            put_mlp_header(&mut header, &dae.sem_encoder);
            put_mlp_header(&mut header, &dae.denoiser);
            payload.extend(dae.sem_encoder.flatten());
            payload.extend(dae.denoiser.flatten());
            KIND_DAE
        }
        Model::Clusters(cm) => {
            put_u32(&mut header, cm.k() as u32);
            put_u32(&mut header, cm.dim() as u32);
            payload.push(cm.inertia());
            for c in cm.centroids() {
                payload.extend_from_slice(c);
            }
            KIND_CLUSTER
        }
        Model::Directions(ds) => {
            put_u32(&mut header, ds.k() as u32);
            put_u32(&mut header, ds.dim() as u32);
            for w in ds.weights() {
                payload.extend_from_slice(w);
            }
            payload.extend_from_slice(ds.biases());
            KIND_DIRECTIONS
        }
    };

    let mut out = Vec::with_capacity(16 + header.len() + payload.len() * 4 + 8);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    out.push(kind);
    out.extend_from_slice(&header);
    put_u64(&mut out, payload.len() as u64);
    let payload_start = out.len();
    for v in &payload {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let checksum = fnv1a64(&out[payload_start..]);
    put_u64(&mut out, checksum);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::format("bad checkpoint magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let kind = r.u8()?;
    let model = match kind {
        KIND_ORACLE => {
            let classes = r.u32()? as usize;
            let holdout = read_report(&mut r)?;
            let specs = read_mlp_header(&mut r)?;
            let params = read_payload(&mut r)?;
            let mlp = build_mlp(&specs, &params, 0)?;
            Model::Oracle(OracleClassifier {
                mlp,
                classes,
                holdout,
            })
        }
        KIND_DAE => {
            let data_dim = r.u32()? as usize;
            let latent_dim = r.u32()? as usize;
            let timesteps = r.u32()? as usize;
            if timesteps < 2 || timesteps > (1 << 20) {
                return Err(Error::format("implausible timestep count"));
            }
            let betas = (0..timesteps)
                .map(|_| r.f64())
                .collect::<Result<Vec<f64>>>()?;
            let enc_specs = read_mlp_header(&mut r)?;
            let den_specs = read_mlp_header(&mut r)?;
            let params = read_payload(&mut r)?;
            let enc_len: usize = mlp_param_count(&enc_specs);
            let sem_encoder = build_mlp(&enc_specs, &params, 0)?;
            let denoiser = build_mlp(&den_specs, &params, enc_len)?;
            if params.len() != enc_len + mlp_param_count(&den_specs) {
                return Err(Error::format("payload length does not match dimensions"));
            }
            let schedule = NoiseSchedule::from_betas(betas)?;
            Model::Dae(DiffusionAutoencoder {
                sem_encoder,
                denoiser,
                schedule,
                data_dim,
                latent_dim,
            })
        }
        KIND_CLUSTER => {
            let k = r.u32()? as usize;
            let dim = r.u32()? as usize;
            let params = read_payload(&mut r)?;
            if params.len() != 1 + k * dim {
                return Err(Error::format("payload length does not match dimensions"));
            }
            let inertia = params[0];
            let centroids: Vec<Vec<f64>> = (0..k)
                .map(|j| params[1 + j * dim..1 + (j + 1) * dim].to_vec())
                .collect();
            Model::Clusters(ClusterModel::from_parts(centroids, inertia)?)
        }
        KIND_DIRECTIONS => {
            let k = r.u32()? as usize;
            let dim = r.u32()? as usize;
            let params = read_payload(&mut r)?;
            if params.len() != k * dim + k {
                return Err(Error::format("payload length does not match dimensions"));
            }
            let weights: Vec<Vec<f64>> = (0..k)
                .map(|j| params[j * dim..(j + 1) * dim].to_vec())
                .collect();
            let biases = params[k * dim..].to_vec();
            Model::Directions(DirectionSet::from_parts(weights, biases)?)
        }
        other => return Err(Error::format(format!("unknown model kind tag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::format("trailing bytes after checkpoint"));
    }
    Ok(model)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn act_tag(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Tanh => 1,
        Activation::Sigmoid => 2,
        Activation::Softmax => 3,
    }
}

fn act_from_tag(t: u8) -> Result<Activation> {
    Ok(match t {
        0 => Activation::Identity,
        1 => Activation::Tanh,
        2 => Activation::Sigmoid,
        3 => Activation::Softmax,
        other => return Err(Error::format(format!("unknown activation tag {other}"))),
    })
}

fn put_mlp_header(out: &mut Vec<u8>, mlp: &Mlp) {
    put_u32(out, mlp.layers().len() as u32);
    for layer in mlp.layers() {
        put_u32(out, layer.in_dim() as u32);
        put_u32(out, layer.out_dim() as u32);
        out.push(act_tag(layer.activation));
    }
}

type MlpSpecs = Vec<(usize, usize, Activation)>;

fn read_mlp_header(r: &mut Reader) -> Result<MlpSpecs> {
    let n = r.u32()? as usize;
    if n == 0 || n > 64 {
        return Err(Error::format("implausible layer count"));
    }
    let mut specs = Vec::with_capacity(n);
    for _ in 0..n {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let act = act_from_tag(r.u8()?)?;
        specs.push((in_dim, out_dim, act));
    }
    Ok(specs)
}

fn mlp_param_count(specs: &MlpSpecs) -> usize {
    specs.iter().map(|(i, o, _)| i * o + o).sum()
}

fn build_mlp(specs: &MlpSpecs, params: &[f64], offset: usize) -> Result<Mlp> {
    let layers = specs
        .iter()
        .map(|&(i, o, act)| {
            Ok(Layer {
                weight: Matrix::zeros(o, i),
                bias: vec![0.0; o],
                activation: act,
            })
        })
        .collect::<Result<Vec<Layer>>>()?;
    let mut mlp = Mlp::from_layers(layers)?;
    let count = mlp.param_count();
    if offset + count > params.len() {
        return Err(Error::format("payload length does not match dimensions"));
    }
    mlp.set_from_flat(&params[offset..offset + count])?;
    Ok(mlp)
}

fn put_report(out: &mut Vec<u8>, report: &ClassifierReport) {
    put_f64(out, report.accuracy);
    put_f64(out, report.precision_micro);
    put_f64(out, report.precision_macro);
    put_f64(out, report.recall_micro);
    put_f64(out, report.recall_macro);
    put_u32(out, report.per_class.len() as u32);
    for c in &report.per_class {
        put_f64(out, c.precision);
        put_f64(out, c.recall);
        put_f64(out, c.f1);
        put_u64(out, c.support as u64);
    }
}

fn read_report(r: &mut Reader) -> Result<ClassifierReport> {
    let accuracy = r.f64()?;
    let precision_micro = r.f64()?;
    let precision_macro = r.f64()?;
    let recall_micro = r.f64()?;
    let recall_macro = r.f64()?;
    let n = r.u32()? as usize;
    if n > 4096 {
        return Err(Error::format("implausible class count"));
    }
    let mut per_class = Vec::with_capacity(n);
    for _ in 0..n {
        per_class.push(ClassScores {
            precision: r.f64()?,
            recall: r.f64()?,
            f1: r.f64()?,
            support: r.u64()? as usize,
        });
    }
    Ok(ClassifierReport {
        accuracy,
        precision_micro,
        precision_macro,
        recall_micro,
        recall_macro,
        per_class,
    })
}

fn read_payload(r: &mut Reader) -> Result<Vec<f64>> {
    let n = r.u64()? as usize;
    if n > (1 << 28) {
        return Err(Error::format("implausible payload length"));
    }
    let bytes = r.take(n * 4)?;
    let stored = r.u64()?;
    let computed = fnv1a64(bytes);
    if stored != computed {
        return Err(Error::format(format!(
            "checksum mismatch: stored {stored:#018x}, computed {computed:#018x}"
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}
