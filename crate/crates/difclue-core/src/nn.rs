//! Multilayer perceptron with explicit forward/backward passes, an Adam
//! optimizer, and a central-difference gradient oracle.
//!
//! Parameters are f64 but always lie on the f32 grid (enforced at init and
//! after every optimizer step) so binary checkpoints with 32-bit payloads
//! round-trip bit-exactly. All arithmetic runs in f64.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, snap_f32, snap_f32_slice, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    /// Softmax over the whole layer output.
    Softmax,
}

impl Activation {
    fn apply(&self, pre: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => {
                for v in pre.iter_mut() {
                    *v = v.tanh();
                }
            }
            Activation::Sigmoid => {
                for v in pre.iter_mut() {
                    *v = 1.0 / (1.0 + (-*v).exp());
                }
            }
            Activation::Softmax => softmax_in_place(pre),
        }
    }

    /// Gradient with respect to the preactivation, expressed through the
    /// layer output `y` and the upstream gradient `g`.
    fn backprop(&self, y: &[f64], g: &[f64]) -> Vec<f64> {
        match self {
            Activation::Identity => g.to_vec(),
            Activation::Tanh => y.iter().zip(g).map(|(y, g)| g * (1.0 - y * y)).collect(),
            Activation::Sigmoid => y.iter().zip(g).map(|(y, g)| g * y * (1.0 - y)).collect(),
            Activation::Softmax => {
                // Full Jacobian: dz_i = y_i (g_i - sum_j g_j y_j).
                let s: f64 = y.iter().zip(g).map(|(y, g)| y * g).sum();
                y.iter().zip(g).map(|(y, g)| y * (g - s)).collect()
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Cross-entropy of a softmax head, computed from logits via log-sum-exp.
/// Returns the loss and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    debug_assert!(label < logits.len());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Shape (out_dim, in_dim), row-major.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Per-layer shape and activation used to build an [`Mlp`].
#[derive(Debug, Clone, Copy)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Fully-connected network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Per-layer activations saved by [`Mlp::forward_cache`], sufficient for an
/// exact backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (inputs[0] is the network input).
    inputs: Vec<Vec<f64>>,
    /// Post-activation output of each layer.
    outputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("cache of a non-empty net")
    }

    /// Post-activation output of layer `idx`.
    pub fn layer_output(&self, idx: usize) -> &[f64] {
        &self.outputs[idx]
    }
}

/// Gradients (or moment accumulators) shaped like an [`Mlp`].
#[derive(Debug, Clone)]
pub struct GradBuffer {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        GradBuffer {
            weights: mlp
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: mlp.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradBuffer) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in self.weights.iter_mut() {
            for x in w.data_mut() {
                *x *= s;
            }
        }
        for b in self.biases.iter_mut() {
            for x in b.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| all_finite(w.data()))
            && self.biases.iter().all(|b| all_finite(b))
    }

    /// Same parameter order as [`Mlp::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }
}

impl Mlp {
    /// Build with Xavier-uniform weights (limit sqrt(6/(fan_in+fan_out)))
    /// from the given generator and zero biases.
    pub fn new<R: Rng>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::param("mlp needs at least one layer"));
        }
        for pair in specs.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::shape(format!(
                    "layer dims do not chain: {} -> {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        let layers = specs
            .iter()
            .map(|spec| {
                if spec.in_dim == 0 || spec.out_dim == 0 {
                    return Err(Error::param("layer dims must be positive"));
                }
                let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
                let mut data = vec![0.0; spec.in_dim * spec.out_dim];
                for w in data.iter_mut() {
                    *w = snap_f32(rng.gen_range(-limit..limit));
                }
                Ok(Layer {
                    weight: Matrix::from_vec(spec.out_dim, spec.in_dim, data)?,
                    bias: vec![0.0; spec.out_dim],
                    activation: spec.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("mlp needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer dims do not chain: {} -> {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable layer access for trainers that rewrite parameters in place
    /// (e.g. folding an affine normalization into a layer). Layer shapes
    /// must not change.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.in_dim() {
            return Err(Error::shape(format!(
                "input length {} does not match first layer dim {}",
                input.len(),
                self.in_dim()
            )));
        }
        if !all_finite(input) {
            return Err(Error::numeric("non-finite network input"));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut pre = layer.weight.matvec(&x)?;
            for (p, b) in pre.iter_mut().zip(&layer.bias) {
                *p += b;
            }
            layer.activation.apply(&mut pre);
            x = pre;
        }
        Ok(x)
    }

    /// Forward pass that records everything the backward pass needs.
    pub fn forward_cache(&self, input: &[f64]) -> Result<ForwardCache> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            inputs.push(x.clone());
            let mut pre = layer.weight.matvec(&x)?;
            for (p, b) in pre.iter_mut().zip(&layer.bias) {
                *p += b;
            }
            layer.activation.apply(&mut pre);
            outputs.push(pre.clone());
            x = pre;
        }
        Ok(ForwardCache { inputs, outputs })
    }

    /// Logits recovered from a forward cache: the last layer's affine output
    /// before its activation.
    pub fn logits_from_cache(&self, cache: &ForwardCache) -> Result<Vec<f64>> {
        let last = self.layers.last().expect("non-empty");
        let input = cache.inputs.last().expect("non-empty cache");
        let mut pre = last.weight.matvec(input)?;
        for (p, b) in pre.iter_mut().zip(&last.bias) {
            *p += b;
        }
        Ok(pre)
    }

    /// Forward pass up to the final preactivation (the logits of a softmax
    /// head). Equals `forward` when the last activation is `Identity`.
    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = layer.weight.matvec(&x)?;
            for (p, b) in pre.iter_mut().zip(&layer.bias) {
                *p += b;
            }
            if i != last {
                layer.activation.apply(&mut pre);
            }
            x = pre;
        }
        Ok(x)
    }

    /// Exact gradients of `output . grad_output` with respect to every
    /// parameter, plus the gradient with respect to the network input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
    ) -> Result<(GradBuffer, Vec<f64>)> {
        self.backward_impl(cache, grad_output, false)
    }

    /// Backward pass where `grad` is taken with respect to the final
    /// preactivation, skipping the last activation's Jacobian. Used with
    /// [`softmax_cross_entropy`], whose gradient is already in logit space.
    pub fn backward_from_logits(
        &self,
        cache: &ForwardCache,
        grad_logits: &[f64],
    ) -> Result<(GradBuffer, Vec<f64>)> {
        self.backward_impl(cache, grad_logits, true)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        grad: &[f64],
        skip_last_activation: bool,
    ) -> Result<(GradBuffer, Vec<f64>)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::shape("cache does not match network depth"));
        }
        if grad.len() != self.out_dim() {
            return Err(Error::shape(format!(
                "grad length {} does not match output dim {}",
                grad.len(),
                self.out_dim()
            )));
        }
        if !all_finite(grad) {
            return Err(Error::numeric("non-finite upstream gradient"));
        }
        let mut grads = GradBuffer::zeros_like(self);
        let mut g = grad.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[idx];
            if input.len() != layer.in_dim() {
                return Err(Error::shape("cache produced by a different network"));
            }
            let dz = if skip_last_activation && idx == self.layers.len() - 1 {
                g.clone()
            } else {
                layer.activation.backprop(&cache.outputs[idx], &g)
            };
            let w_grad = grads.weights[idx].data_mut();
            let in_dim = layer.in_dim();
            for (o, dzo) in dz.iter().enumerate() {
                grads.biases[idx][o] = *dzo;
                let row = &mut w_grad[o * in_dim..(o + 1) * in_dim];
                for (i, xi) in input.iter().enumerate() {
                    row[i] = dzo * xi;
                }
            }
            // Gradient with respect to this layer's input.
            let mut g_in = vec![0.0; in_dim];
            for (o, dzo) in dz.iter().enumerate() {
                let row = layer.weight.row(o);
                for (i, gi) in g_in.iter_mut().enumerate() {
                    *gi += dzo * row[i];
                }
            }
            g = g_in;
        }
        Ok((grads, g))
    }

    /// All parameters, layer by layer: weights row-major, then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_dim() * l.out_dim() + l.out_dim())
            .sum()
    }

    /// Overwrite parameters from a flat vector in [`Mlp::flatten`] order.
    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!(
                "flat vector length {} does not match parameter count {}",
                flat.len(),
                self.param_count()
            )));
        }
        if !all_finite(flat) {
            return Err(Error::numeric("non-finite parameter vector"));
        }
        let mut off = 0;
        for layer in self.layers.iter_mut() {
            let w = layer.weight.data_mut();
            w.copy_from_slice(&flat[off..off + w.len()]);
            off += w.len();
            let blen = layer.bias.len();
            layer.bias.copy_from_slice(&flat[off..off + blen]);
            off += blen;
        }
        Ok(())
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            ..Default::default()
        }
    }
}

/// First/second-moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: GradBuffer,
    v: GradBuffer,
    t: u64,
    pub params: AdamParams,
}

impl AdamState {
    pub fn new(mlp: &Mlp, params: AdamParams) -> Self {
        AdamState {
            m: GradBuffer::zeros_like(mlp),
            v: GradBuffer::zeros_like(mlp),
            t: 0,
            params,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    #[cfg(test)]
    pub(crate) fn first_moments(&self) -> &GradBuffer {
        &self.m
    }

    /// One bias-corrected Adam update. Updated parameters are snapped to the
    /// f32 grid (see module docs).
    pub fn step(&mut self, mlp: &mut Mlp, grads: &GradBuffer) -> Result<()> {
        if grads.weights.len() != self.m.weights.len() {
            return Err(Error::shape("gradient shape does not match state"));
        }
        if !grads.is_finite() {
            return Err(Error::numeric("non-finite gradient entry"));
        }
        self.t += 1;
        let AdamParams {
            lr,
            beta1,
            beta2,
            eps,
        } = self.params;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for idx in 0..mlp.layers.len() {
            if grads.weights[idx].rows() != mlp.layers[idx].out_dim()
                || grads.weights[idx].cols() != mlp.layers[idx].in_dim()
            {
                return Err(Error::shape("gradient shape does not match params"));
            }
            let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = snap_f32(*p - lr * m_hat / (v_hat.sqrt() + eps));
            };
            let w = mlp.layers[idx].weight.data_mut();
            let gm = self.m.weights[idx].data_mut();
            let gv = self.v.weights[idx].data_mut();
            for i in 0..w.len() {
                update(&mut w[i], &mut gm[i], &mut gv[i], grads.weights[idx].data()[i]);
            }
            let b = &mut mlp.layers[idx].bias;
            let bm = &mut self.m.biases[idx];
            let bv = &mut self.v.biases[idx];
            for i in 0..b.len() {
                update(&mut b[i], &mut bm[i], &mut bv[i], grads.biases[idx][i]);
            }
        }
        Ok(())
    }
}

/// Central-difference gradient estimate of `f` at `x`.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::param("finite difference step must be positive"));
    }
    let mut work = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = work[i];
        work[i] = orig + step;
        let plus = f(&work);
        work[i] = orig - step;
        let minus = f(&work);
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Snap every parameter to the f32 grid. Used by trainers that update
/// parameters outside [`AdamState::step`].
pub fn snap_params(mlp: &mut Mlp) {
    for layer in mlp.layers.iter_mut() {
        snap_f32_slice(layer.weight.data_mut());
        snap_f32_slice(&mut layer.bias);
    }
}

/// Hyperparameters for [`train_classifier`].
#[derive(Debug, Clone)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// L2 weight decay folded into the gradients. Nonzero values temper the
    /// softmax (bounded logits), leaving decision boundaries intact.
    pub weight_decay: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![32, 32],
            epochs: 40,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.0,
        }
    }
}

/// Train a tanh MLP with a softmax head on cross-entropy via minibatch Adam.
/// Deterministic for a fixed seed stream.
pub fn train_classifier(
    xs: &[Vec<f64>],
    ys: &[usize],
    n_classes: usize,
    cfg: &ClassifierConfig,
    seed: crate::rng::SeedStream,
) -> Result<Mlp> {
    use rand::seq::SliceRandom;

    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::shape("inputs and labels must pair up"));
    }
    if n_classes < 2 {
        return Err(Error::param("need at least 2 classes"));
    }
    if ys.iter().any(|&y| y >= n_classes) {
        return Err(Error::param("label out of range"));
    }
    let in_dim = xs[0].len();
    let mut specs = Vec::new();
    let mut prev = in_dim;
    for &h in &cfg.hidden {
        specs.push(LayerSpec {
            in_dim: prev,
            out_dim: h,
            activation: Activation::Tanh,
        });
        prev = h;
    }
    specs.push(LayerSpec {
        in_dim: prev,
        out_dim: n_classes,
        activation: Activation::Softmax,
    });
    let mut init_rng = seed.derive("classifier/init").rng();
    let mut mlp = Mlp::new(&specs, &mut init_rng)?;
    let mut opt = AdamState::new(&mlp, AdamParams::with_lr(cfg.lr));

    let mut indices: Vec<usize> = (0..xs.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = seed.derive(&format!("classifier/shuffle/{epoch}")).rng();
        indices.shuffle(&mut shuffle_rng);
        for batch in indices.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut grads = GradBuffer::zeros_like(&mlp);
            for &i in batch {
                let cache = mlp.forward_cache(&xs[i])?;
                let logits = mlp.logits_from_cache(&cache)?;
                let (_, mut grad_logits) = softmax_cross_entropy(&logits, ys[i]);
                for g in grad_logits.iter_mut() {
                    *g *= scale;
                }
                let (g, _) = mlp.backward_from_logits(&cache, &grad_logits)?;
                grads.add_assign(&g);
            }
            if cfg.weight_decay > 0.0 {
                for (gw, layer) in grads.weights.iter_mut().zip(mlp.layers()) {
                    for (g, w) in gw.data_mut().iter_mut().zip(layer.weight.data()) {
                        *g += cfg.weight_decay * w;
                    }
                }
            }
            opt.step(&mut mlp, &grads)?;
        }
    }
    Ok(mlp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn assert_close_rel(a: f64, b: f64, rel: f64, floor: f64) {
        let diff = (a - b).abs();
        let scale = a.abs().max(b.abs()).max(floor);
        assert!(
            diff / scale <= rel,
            "a={a} b={b} rel diff {}",
            diff / scale
        );
    }

    fn random_net(seed: u64, specs: &[LayerSpec]) -> Mlp {
        let mut rng = SeedStream::stream(seed, "nn/test");
        Mlp::new(specs, &mut rng).unwrap()
    }

    #[test]
    fn forward_identity_layer() {
        let mlp = Mlp::from_layers(vec![Layer {
            weight: Matrix::identity(2),
            bias: vec![0.0, 0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        assert_eq!(mlp.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn forward_zero_weights_returns_bias() {
        let mlp = Mlp::from_layers(vec![Layer {
            weight: Matrix::zeros(3, 2),
            bias: vec![0.5, -1.0, 2.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        assert_eq!(mlp.forward(&[9.0, -3.0]).unwrap(), vec![0.5, -1.0, 2.0]);
        assert_eq!(mlp.forward(&[0.0, 0.0]).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn forward_matches_straight_line_recomputation() {
        // Independent re-implementation of the same arithmetic.
        let mlp = random_net(
            41,
            &[
                LayerSpec {
                    in_dim: 3,
                    out_dim: 4,
                    activation: Activation::Tanh,
                },
                LayerSpec {
                    in_dim: 4,
                    out_dim: 2,
                    activation: Activation::Identity,
                },
            ],
        );
        let x = [0.3, -0.8, 1.1];
        let got = mlp.forward(&x).unwrap();

        let l0 = &mlp.layers()[0];
        let mut h = vec![0.0; 4];
        for o in 0..4 {
            let mut s = l0.bias[o];
            for i in 0..3 {
                s += l0.weight.get(o, i) * x[i];
            }
            h[o] = s.tanh();
        }
        let l1 = &mlp.layers()[1];
        let mut y = vec![0.0; 2];
        for o in 0..2 {
            let mut s = l1.bias[o];
            for i in 0..4 {
                s += l1.weight.get(o, i) * h[i];
            }
            y[o] = s;
        }
        assert_eq!(got, y);
    }

    #[test]
    fn forward_rejects_shape_and_nonfinite() {
        let mlp = random_net(
            1,
            &[LayerSpec {
                in_dim: 2,
                out_dim: 2,
                activation: Activation::Tanh,
            }],
        );
        assert!(matches!(mlp.forward(&[1.0]), Err(Error::Shape(_))));
        assert!(matches!(
            mlp.forward(&[1.0, f64::NAN]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn backward_zero_grad_is_zero() {
        let mlp = random_net(
            2,
            &[
                LayerSpec {
                    in_dim: 3,
                    out_dim: 5,
                    activation: Activation::Tanh,
                },
                LayerSpec {
                    in_dim: 5,
                    out_dim: 2,
                    activation: Activation::Softmax,
                },
            ],
        );
        let cache = mlp.forward_cache(&[0.1, 0.2, 0.3]).unwrap();
        let (grads, g_in) = mlp.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(grads.flatten().iter().all(|&g| g == 0.0));
        assert!(g_in.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_identity_layer_is_outer_product() {
        let mlp = Mlp::from_layers(vec![Layer {
            weight: Matrix::zeros(2, 3),
            bias: vec![0.0; 2],
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = [1.0, -2.0, 3.0];
        let g = [0.5, -1.5];
        let cache = mlp.forward_cache(&x).unwrap();
        let (grads, _) = mlp.backward(&cache, &g).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(grads.weights[0].get(o, i), g[o] * x[i]);
            }
            assert_eq!(grads.biases[0][o], g[o]);
        }
    }

    /// Analytic gradients vs central differences, every activation kind.
    #[test]
    fn backward_matches_finite_differences() {
        for (seed, act) in [
            (10, Activation::Identity),
            (11, Activation::Tanh),
            (12, Activation::Sigmoid),
            (13, Activation::Softmax),
        ] {
            let mlp = random_net(
                seed,
                &[
                    LayerSpec {
                        in_dim: 4,
                        out_dim: 6,
                        activation: Activation::Tanh,
                    },
                    LayerSpec {
                        in_dim: 6,
                        out_dim: 3,
                        activation: act,
                    },
                ],
            );
            let mut probe = SeedStream::stream(seed, "nn/probe");
            let x: Vec<f64> = (0..4).map(|_| probe.gen_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..3).map(|_| probe.gen_range(-1.0..1.0)).collect();

            let cache = mlp.forward_cache(&x).unwrap();
            let (grads, g_in) = mlp.backward(&cache, &g).unwrap();

            let flat = mlp.flatten();
            let mut scratch = mlp.clone();
            let f = |p: &[f64]| {
                scratch.set_from_flat(p).unwrap();
                let y = scratch.forward(&x).unwrap();
                y.iter().zip(&g).map(|(y, g)| y * g).sum::<f64>()
            };
            let numeric = finite_diff_grad(f, &flat, 1e-5).unwrap();
            for (a, n) in grads.flatten().iter().zip(&numeric) {
                assert_close_rel(*a, *n, 1e-4, 1e-8);
            }

            // Input gradient too.
            let f_in = |xi: &[f64]| {
                let y = mlp.forward(xi).unwrap();
                y.iter().zip(&g).map(|(y, g)| y * g).sum::<f64>()
            };
            let numeric_in = finite_diff_grad(f_in, &x, 1e-5).unwrap();
            for (a, n) in g_in.iter().zip(&numeric_in) {
                assert_close_rel(*a, *n, 1e-4, 1e-8);
            }
        }
    }

    #[test]
    fn backward_from_logits_matches_finite_differences() {
        let mlp = random_net(
            21,
            &[
                LayerSpec {
                    in_dim: 3,
                    out_dim: 5,
                    activation: Activation::Tanh,
                },
                LayerSpec {
                    in_dim: 5,
                    out_dim: 3,
                    activation: Activation::Softmax,
                },
            ],
        );
        let x = [0.4, -0.2, 0.9];
        let label = 2;
        let cache = mlp.forward_cache(&x).unwrap();
        let logits = mlp.logits(&x).unwrap();
        let (_, grad_logits) = softmax_cross_entropy(&logits, label);
        let (grads, _) = mlp.backward_from_logits(&cache, &grad_logits).unwrap();

        let flat = mlp.flatten();
        let mut scratch = mlp.clone();
        let f = |p: &[f64]| {
            scratch.set_from_flat(p).unwrap();
            let logits = scratch.logits(&x).unwrap();
            softmax_cross_entropy(&logits, label).0
        };
        let numeric = finite_diff_grad(f, &flat, 1e-5).unwrap();
        for (a, n) in grads.flatten().iter().zip(&numeric) {
            assert_close_rel(*a, *n, 1e-4, 1e-8);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let mut mlp = random_net(
            3,
            &[LayerSpec {
                in_dim: 2,
                out_dim: 2,
                activation: Activation::Identity,
            }],
        );
        let mut state = AdamState::new(&mlp, AdamParams::default());
        let mut grads = GradBuffer::zeros_like(&mlp);
        grads.weights[0].data_mut()[0] = 0.3;
        state.step(&mut mlp, &grads).unwrap();
        let m_after_one = state.first_moments().weights[0].data()[0];

        let before = mlp.flatten();
        let zero = GradBuffer::zeros_like(&mlp);
        state.step(&mut mlp, &zero).unwrap();
        let after = mlp.flatten();
        // Zero moments on untouched coordinates: those params are unchanged.
        assert_eq!(before[1..], after[1..]);
        // First moment of the touched coordinate decayed by beta1.
        let m_after_two = state.first_moments().weights[0].data()[0];
        assert!((m_after_two - 0.9 * m_after_one).abs() < 1e-15);
        assert_eq!(state.step_count(), 2);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut mlp = random_net(
            4,
            &[LayerSpec {
                in_dim: 2,
                out_dim: 2,
                activation: Activation::Identity,
            }],
        );
        let before = mlp.flatten();
        let mut state = AdamState::new(&mlp, AdamParams::default());
        let mut grads = GradBuffer::zeros_like(&mlp);
        let g = [0.7, -0.01, 1.3, -2.0, 0.2, 0.9];
        for (slot, v) in grads.weights[0]
            .data_mut()
            .iter_mut()
            .chain(grads.biases[0].iter_mut())
            .zip(g)
        {
            *slot = v;
        }
        state.step(&mut mlp, &grads).unwrap();
        let after = mlp.flatten();
        for ((b, a), gi) in before.iter().zip(&after).zip(g) {
            let delta = a - b;
            // Bias-corrected ratio is 1 in magnitude per coordinate up to eps.
            assert!(delta.signum() == -gi.signum());
            assert_close_rel(delta.abs(), 1e-3, 1e-3, 1e-12);
        }
    }

    #[test]
    fn adam_descends_quadratic_and_matches_scalar_recomputation() {
        // f(x) = x^2 starting from x = 1, gradient 2x.
        let mut mlp = Mlp::from_layers(vec![Layer {
            weight: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            bias: vec![0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let mut state = AdamState::new(&mlp, AdamParams::with_lr(0.1));

        // Independent scalar Adam with the same snapping contract.
        let (mut xs, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);

        let mut prev = 1.0f64;
        for t in 1..=5 {
            let x = mlp.layers()[0].weight.data()[0];
            let mut grads = GradBuffer::zeros_like(&mlp);
            grads.weights[0].data_mut()[0] = 2.0 * x;
            // Bias gradient is zero: only the weight moves.
            state.step(&mut mlp, &grads).unwrap();

            let gs = 2.0 * xs;
            m = b1 * m + (1.0 - b1) * gs;
            v = b2 * v + (1.0 - b2) * gs * gs;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            xs = snap_f32(xs - lr * mh / (vh.sqrt() + eps));

            let got = mlp.layers()[0].weight.data()[0];
            assert!((got - xs).abs() < 1e-12, "step {t}: {got} vs {xs}");
            assert!(got * got < prev * prev, "f not decreasing at step {t}");
            prev = got;
        }
    }

    #[test]
    fn adam_rejects_nonfinite_gradient() {
        let mut mlp = random_net(
            5,
            &[LayerSpec {
                in_dim: 2,
                out_dim: 1,
                activation: Activation::Identity,
            }],
        );
        let mut state = AdamState::new(&mlp, AdamParams::default());
        let mut grads = GradBuffer::zeros_like(&mlp);
        grads.weights[0].data_mut()[0] = f64::INFINITY;
        assert!(matches!(
            state.step(&mut mlp, &grads),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn finite_diff_constant_and_quadratic() {
        let g = finite_diff_grad(|_| 4.2, &[1.0, 2.0, 3.0], 1e-5).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));

        let g = finite_diff_grad(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5).unwrap();
        assert_close_rel(g[0], 2.0, 1e-8, 1e-8);
        assert_close_rel(g[1], 4.0, 1e-8, 1e-8);
    }

    #[test]
    fn finite_diff_rejects_bad_step() {
        assert!(matches!(
            finite_diff_grad(|_| 0.0, &[1.0], 0.0),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let spec = [
            LayerSpec {
                in_dim: 4,
                out_dim: 8,
                activation: Activation::Tanh,
            },
            LayerSpec {
                in_dim: 8,
                out_dim: 2,
                activation: Activation::Softmax,
            },
        ];
        let a = random_net(99, &spec);
        let b = random_net(99, &spec);
        assert_eq!(a.flatten(), b.flatten());
    }

    #[test]
    fn params_stay_on_f32_grid_through_training() {
        let mut mlp = random_net(
            6,
            &[LayerSpec {
                in_dim: 3,
                out_dim: 3,
                activation: Activation::Tanh,
            }],
        );
        let mut state = AdamState::new(&mlp, AdamParams::default());
        let mut rng = SeedStream::stream(6, "nn/grid");
        for _ in 0..10 {
            let mut grads = GradBuffer::zeros_like(&mlp);
            for g in grads.weights[0].data_mut() {
                *g = rng.gen_range(-1.0..1.0);
            }
            state.step(&mut mlp, &grads).unwrap();
        }
        for p in mlp.flatten() {
            assert_eq!(p, snap_f32(p));
        }
    }
}
