//! Feed-forward tanh policies trained by mini-batch regression on expert
//! labels.

use crate::envmodels::Model;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("non-finite policy input")]
    NonFiniteInput,
    #[error("input has {got} components, policy expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("training diverged: non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid policy: {0}")]
    Invalid(String),
}

/// State-to-feature map. Headings enter as `(cos, sin)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// `(p_x, p_y, cos θ, sin θ)`
    Planar,
    /// `(p_x, p_y / 200, cos θ, sin θ)`
    Runway,
    /// The state itself.
    Identity,
}

const RUNWAY_SCALE: f64 = 200.0;

impl FeatureMap {
    pub fn for_model(model: &Model) -> Self {
        match model {
            Model::Unicycle(_) => FeatureMap::Planar,
            Model::Taxi(_) => FeatureMap::Runway,
            Model::Integrator(_) => FeatureMap::Identity,
        }
    }

    pub fn state_dim(&self) -> Option<usize> {
        match self {
            FeatureMap::Planar | FeatureMap::Runway => Some(3),
            FeatureMap::Identity => None,
        }
    }

    pub fn dim(&self, state_dim: usize) -> usize {
        match self {
            FeatureMap::Planar | FeatureMap::Runway => 4,
            FeatureMap::Identity => state_dim,
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self {
            FeatureMap::Planar => out.extend([x[0], x[1], x[2].cos(), x[2].sin()]),
            FeatureMap::Runway => out.extend([x[0], x[1] / RUNWAY_SCALE, x[2].cos(), x[2].sin()]),
            FeatureMap::Identity => out.extend_from_slice(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Linear,
}

/// Dense layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub env_hash: Option<String>,
    pub method: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpPolicy {
    pub features: FeatureMap,
    /// Feature normalization: `(f - shift) * scale`.
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub layers: Vec<Layer>,
    /// Output is `output_scale * tanh(z)`.
    pub output_scale: f64,
    #[serde(default)]
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            batch: 64,
            epochs: 500,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let ok = self.hidden.iter().all(|&h| h > 0)
            && self.learning_rate > 0.0
            && self.batch > 0
            && self.epochs > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        ok.then_some(())
            .ok_or_else(|| PolicyError::Invalid("training hyperparameters must be positive".into()))
    }
}

/// Training inputs: raw states with their expert labels.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub states: &'a [Vec<f64>],
    pub labels: &'a [f64],
}

impl MlpPolicy {
    /// Glorot-uniform weights and zero biases, identity normalization.
    pub fn init(
        cfg: &TrainConfig,
        features: FeatureMap,
        feature_dim: usize,
        output_scale: f64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut sizes = vec![feature_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    inputs: fan_in,
                    outputs: fan_out,
                    weights: (0..fan_in * fan_out)
                        .map(|_| rng.random_range(-limit..limit))
                        .collect(),
                    bias: vec![0.0; fan_out],
                    activation: if i + 2 == sizes.len() {
                        Activation::Linear
                    } else {
                        Activation::Tanh
                    },
                }
            })
            .collect();
        MlpPolicy {
            features,
            shift: vec![0.0; feature_dim],
            scale: vec![1.0; feature_dim],
            layers,
            output_scale,
            provenance: Provenance::default(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.shift.len()
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::Invalid(m.into()));
        if self.layers.is_empty() || self.shift.len() != self.scale.len() {
            return bad("empty network or mismatched normalization");
        }
        let mut width = self.feature_dim();
        for l in &self.layers {
            if l.inputs != width
                || l.weights.len() != l.inputs * l.outputs
                || l.bias.len() != l.outputs
            {
                return bad("layer shapes are inconsistent");
            }
            width = l.outputs;
        }
        if width != 1 {
            return bad("network must have a single output");
        }
        let finite = self
            .params()
            .iter()
            .chain(&self.shift)
            .chain(&self.scale)
            .all(|v| v.is_finite());
        if !finite || !(self.output_scale > 0.0) {
            return bad("non-finite weights or output scale");
        }
        Ok(())
    }

    fn normalized(&self, x: &[f64], buf: &mut Vec<f64>) -> Result<(), PolicyError> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteInput);
        }
        if let Some(d) = self.features.state_dim() {
            if x.len() != d {
                return Err(PolicyError::Dimension {
                    expected: d,
                    got: x.len(),
                });
            }
        }
        self.features.apply(x, buf);
        if buf.len() != self.feature_dim() {
            return Err(PolicyError::Dimension {
                expected: self.feature_dim(),
                got: buf.len(),
            });
        }
        for ((f, s), c) in buf.iter_mut().zip(&self.shift).zip(&self.scale) {
            *f = (*f - s) * c;
        }
        Ok(())
    }

    /// Control for state `x`, always within `[-output_scale, output_scale]`.
    pub fn forward(&self, x: &[f64]) -> Result<f64, PolicyError> {
        let mut a = Vec::with_capacity(self.feature_dim());
        self.normalized(x, &mut a)?;
        let mut z = Vec::new();
        for layer in &self.layers {
            z.clear();
            for o in 0..layer.outputs {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let s: f64 = row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + layer.bias[o];
                z.push(match layer.activation {
                    Activation::Tanh => s.tanh(),
                    Activation::Linear => s,
                });
            }
            std::mem::swap(&mut a, &mut z);
        }
        Ok(self.output_scale * a[0].tanh())
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("parameter vector too short");
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Mean squared error on `samples` and its gradient in [`Self::params`]
    /// order.
    pub fn loss_and_gradient(&self, samples: Samples<'_>) -> Result<(f64, Vec<f64>), PolicyError> {
        let n = samples.labels.len();
        let mut inputs = vec![0.0; self.feature_dim() * n];
        let mut buf = Vec::new();
        for (b, x) in samples.states.iter().enumerate() {
            self.normalized(x, &mut buf)?;
            for (i, f) in buf.iter().enumerate() {
                inputs[i * n + b] = *f;
            }
        }
        let mut work = Workspace::new(self, n);
        let loss = work.forward_backward(self, &inputs, samples.labels);
        Ok((loss, work.flat_gradient()))
    }
}

/// Per-batch activations and gradients, feature-major so the innermost
/// loops run over the batch.
struct Workspace {
    batch: usize,
    /// Activations per layer, including the input at index 0.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
    grad_w: Vec<Vec<f64>>,
    grad_b: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(p: &MlpPolicy, batch: usize) -> Self {
        let mut acts = vec![vec![0.0; p.feature_dim() * batch]];
        acts.extend(p.layers.iter().map(|l| vec![0.0; l.outputs * batch]));
        Self {
            batch,
            deltas: p
                .layers
                .iter()
                .map(|l| vec![0.0; l.outputs * batch])
                .collect(),
            grad_w: p
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            grad_b: p.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            acts,
        }
    }

    /// `inputs` holds `feature_dim x len` normalized features; `len` may be
    /// smaller than the allocated batch. Returns the mean squared error.
    fn forward_backward(&mut self, p: &MlpPolicy, inputs: &[f64], labels: &[f64]) -> f64 {
        let len = labels.len();
        let stride = self.batch;
        let fd = p.feature_dim();
        for i in 0..fd {
            self.acts[0][i * stride..i * stride + len]
                .copy_from_slice(&inputs[i * len..(i + 1) * len]);
        }
        for (li, layer) in p.layers.iter().enumerate() {
            let (before, after) = self.acts.split_at_mut(li + 1);
            let a = &before[li];
            let z = &mut after[0];
            for o in 0..layer.outputs {
                let out = &mut z[o * stride..o * stride + len];
                out.fill(layer.bias[o]);
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (i, &w) in row.iter().enumerate() {
                    let src = &a[i * stride..i * stride + len];
                    for (y, &v) in out.iter_mut().zip(src) {
                        *y += w * v;
                    }
                }
                if layer.activation == Activation::Tanh {
                    out.iter_mut().for_each(|v| *v = v.tanh());
                }
            }
        }

        let last = p.layers.len() - 1;
        let scale = p.output_scale;
        let mut loss = 0.0;
        {
            let z = &self.acts[last + 1][..len];
            let delta = &mut self.deltas[last][..len];
            for b in 0..len {
                let t = z[b].tanh();
                let err = scale * t - labels[b];
                loss += err * err;
                delta[b] = 2.0 * err / len as f64 * scale * (1.0 - t * t);
            }
        }

        for li in (0..p.layers.len()).rev() {
            let layer = &p.layers[li];
            let a = &self.acts[li];
            let delta = &self.deltas[li];
            let gw = &mut self.grad_w[li];
            let gb = &mut self.grad_b[li];
            for o in 0..layer.outputs {
                let d = &delta[o * stride..o * stride + len];
                gb[o] = d.iter().sum();
                for i in 0..layer.inputs {
                    gw[o * layer.inputs + i] = dot(d, &a[i * stride..i * stride + len]);
                }
            }
            if li == 0 {
                break;
            }
            let (lower, upper) = self.deltas.split_at_mut(li);
            let prev = &mut lower[li - 1];
            let delta = &upper[0];
            for i in 0..layer.inputs {
                let out = &mut prev[i * stride..i * stride + len];
                out.fill(0.0);
                for o in 0..layer.outputs {
                    let w = layer.weights[o * layer.inputs + i];
                    let d = &delta[o * stride..o * stride + len];
                    for (y, &v) in out.iter_mut().zip(d) {
                        *y += w * v;
                    }
                }
                let act = &a[i * stride..i * stride + len];
                for (y, &h) in out.iter_mut().zip(act) {
                    *y *= 1.0 - h * h;
                }
            }
        }
        loss / len as f64
    }

    fn flat_gradient(&self) -> Vec<f64> {
        self.grad_w
            .iter()
            .zip(&self.grad_b)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }
}

/// Dot product with eight independent partial sums, so the reduction
/// vectorizes while its order stays fixed.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            lanes[k] += x[k] * y[k];
        }
    }
    lanes.iter().sum::<f64>() + tail
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(p: &MlpPolicy) -> Self {
        let shapes: Vec<Vec<f64>> = p
            .layers
            .iter()
            .flat_map(|l| [vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]])
            .collect();
        Self {
            m: shapes.clone(),
            v: shapes,
            t: 0,
        }
    }

    fn step(&mut self, p: &mut MlpPolicy, work: &Workspace, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let mut slot = 0;
        for (li, layer) in p.layers.iter_mut().enumerate() {
            for (params, grads) in [
                (&mut layer.weights, &work.grad_w[li]),
                (&mut layer.bias, &work.grad_b[li]),
            ] {
                let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
                for k in 0..params.len() {
                    let g = grads[k];
                    m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
                    v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
                    let mh = m[k] / c1;
                    let vh = v[k] / c2;
                    params[k] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
                }
                slot += 1;
            }
        }
    }
}

/// Trains a fresh policy by mini-batch Adam on the mean squared error.
/// Returns the policy and the per-epoch mean training loss.
pub fn train(
    samples: Samples<'_>,
    features: FeatureMap,
    output_scale: f64,
    cfg: &TrainConfig,
) -> Result<(MlpPolicy, Vec<f64>), PolicyError> {
    cfg.validate()?;
    let n = samples.labels.len();
    if n == 0 || samples.states.len() != n {
        return Err(PolicyError::EmptyDataset);
    }
    let state_dim = samples.states[0].len();
    let fd = features.dim(state_dim);
    let mut policy = MlpPolicy::init(cfg, features, fd, output_scale);

    let mut feats = vec![0.0; n * fd];
    let mut buf = Vec::new();
    for (b, x) in samples.states.iter().enumerate() {
        policy.normalized(x, &mut buf)?;
        feats[b * fd..(b + 1) * fd].copy_from_slice(&buf);
    }
    for i in 0..fd {
        let col = feats.iter().skip(i).step_by(fd);
        let mean = col.clone().sum::<f64>() / n as f64;
        let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        policy.shift[i] = mean;
        policy.scale[i] = if std > 1e-8 { 1.0 / std } else { 1.0 };
    }
    for row in feats.chunks_mut(fd) {
        for i in 0..fd {
            row[i] = (row[i] - policy.shift[i]) * policy.scale[i];
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_5a11);
    let mut order: Vec<usize> = (0..n).collect();
    let batch = cfg.batch.min(n);
    let mut work = Workspace::new(&policy, batch);
    let mut adam = Adam::new(&policy);
    let mut inputs = vec![0.0; fd * batch];
    let mut labels = vec![0.0; batch];
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let len = chunk.len();
            for (b, &s) in chunk.iter().enumerate() {
                for i in 0..fd {
                    inputs[i * len + b] = feats[s * fd + i];
                }
                labels[b] = samples.labels[s];
            }
            let loss = work.forward_backward(&policy, &inputs[..fd * len], &labels[..len]);
            if !loss.is_finite() {
                return Err(PolicyError::NonFiniteLoss { epoch });
            }
            total += loss * len as f64;
            adam.step(&mut policy, &work, cfg);
        }
        curve.push(total / n as f64);
    }
    Ok((policy, curve))
}

/// Largest relative disagreement between `gradient` and central finite
/// differences of the loss over up to `probes` randomly chosen parameters.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-4)`.
pub fn grad_check_with<G>(
    policy: &MlpPolicy,
    samples: Samples<'_>,
    probes: usize,
    seed: u64,
    gradient: G,
) -> Result<f64, PolicyError>
where
    G: Fn(&MlpPolicy, Samples<'_>) -> Result<Vec<f64>, PolicyError>,
{
    const STEP: f64 = 1e-6;
    let analytic = gradient(policy, samples)?;
    let base = policy.params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = (0..base.len()).collect();
    chosen.shuffle(&mut rng);
    chosen.truncate(probes.max(1));

    let mut probe = policy.clone();
    let mut params = base.clone();
    let mut worst: f64 = 0.0;
    for &k in &chosen {
        params[k] = base[k] + STEP;
        probe.set_params(&params);
        let up = probe.loss_and_gradient(samples)?.0;
        params[k] = base[k] - STEP;
        probe.set_params(&params);
        let down = probe.loss_and_gradient(samples)?.0;
        params[k] = base[k];
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// [`grad_check_with`] against the policy's own backpropagation.
pub fn grad_check(
    policy: &MlpPolicy,
    samples: Samples<'_>,
    probes: usize,
    seed: u64,
) -> Result<f64, PolicyError> {
    grad_check_with(policy, samples, probes, seed, |p, s| {
        Ok(p.loss_and_gradient(s)?.1)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                vec![
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-3.0..3.0),
                ]
            })
            .collect();
        let ys = xs
            .iter()
            .map(|x| (0.3 * x[0] - 0.2 * x[1] + x[2].sin()).clamp(-0.9, 0.9))
            .collect();
        (xs, ys)
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            hidden: vec![16, 16],
            epochs: 60,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let cfg = TrainConfig::default();
        let a = MlpPolicy::init(&cfg, FeatureMap::Planar, 4, 1.0);
        let b = MlpPolicy::init(&cfg, FeatureMap::Planar, 4, 1.0);
        assert_eq!(a, b);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
        assert_eq!(a.layers.len(), 3);
        assert_eq!(a.param_count(), 4 * 64 + 64 + 64 * 64 + 64 + 64 + 1);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut p = MlpPolicy::init(&TrainConfig::default(), FeatureMap::Planar, 4, 1.0);
        let zeros = vec![0.0; p.param_count()];
        p.set_params(&zeros);
        assert_eq!(p.forward(&[1.0, -2.0, 0.3]).unwrap(), 0.0);
    }

    #[test]
    fn heading_wrap_is_invisible() {
        let p = MlpPolicy::init(&TrainConfig::default(), FeatureMap::Planar, 4, 1.0);
        let a = p.forward(&[0.5, -1.0, 0.7]).unwrap();
        let b = p
            .forward(&[0.5, -1.0, 0.7 + 2.0 * std::f64::consts::PI])
            .unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = MlpPolicy::init(&TrainConfig::default(), FeatureMap::Planar, 4, 1.0);
        assert_eq!(
            p.forward(&[f64::NAN, 0.0, 0.0]),
            Err(PolicyError::NonFiniteInput)
        );
        assert!(matches!(
            p.forward(&[0.0]),
            Err(PolicyError::Dimension { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (xs, ys) = toy(40, 1);
        let p = MlpPolicy::init(&TrainConfig::default(), FeatureMap::Planar, 4, 1.0);
        let s = Samples {
            states: &xs,
            labels: &ys,
        };
        let err = grad_check(&p, s, 200, 3).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (xs, ys) = toy(40, 2);
        let p = MlpPolicy::init(&TrainConfig::default(), FeatureMap::Planar, 4, 1.0);
        let s = Samples {
            states: &xs,
            labels: &ys,
        };
        let first_layer = p.layers[0].weights.len() + p.layers[0].bias.len();
        let err = grad_check_with(&p, s, 400, 3, |p, s| {
            let mut g = p.loss_and_gradient(s)?.1;
            g[..first_layer].iter_mut().for_each(|v| *v = -*v);
            Ok(g)
        })
        .unwrap();
        assert!(err > 0.1, "max relative error {err}");
    }

    #[test]
    fn zero_net_zero_labels_has_zero_gradient() {
        let (xs, _) = toy(10, 3);
        let ys = vec![0.0; 10];
        let mut p = MlpPolicy::init(&TrainConfig::default(), FeatureMap::Planar, 4, 1.0);
        let zeros = vec![0.0; p.param_count()];
        p.set_params(&zeros);
        let (_, g) = p
            .loss_and_gradient(Samples {
                states: &xs,
                labels: &ys,
            })
            .unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-10));
        assert!(
            grad_check(
                &p,
                Samples {
                    states: &xs,
                    labels: &ys
                },
                100,
                1
            )
            .unwrap()
                < 1e-10
        );
    }

    #[test]
    fn learns_a_constant_label() {
        let (xs, _) = toy(1000, 4);
        let ys = vec![0.5; xs.len()];
        let cfg = TrainConfig::default();
        let (p, curve) = train(
            Samples {
                states: &xs,
                labels: &ys,
            },
            FeatureMap::Planar,
            1.0,
            &cfg,
        )
        .unwrap();
        assert!(curve.last().unwrap() <= &curve[0]);
        for x in &xs {
            assert!(
                (p.forward(x).unwrap() - 0.5).abs() < 0.01,
                "{} {:?}",
                p.forward(x).unwrap(),
                &curve[curve.len() - 3..]
            );
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (xs, ys) = toy(150, 5);
        let s = Samples {
            states: &xs,
            labels: &ys,
        };
        let a = train(s, FeatureMap::Planar, 1.0, &small_cfg()).unwrap();
        let b = train(s, FeatureMap::Planar, 1.0, &small_cfg()).unwrap();
        assert_eq!(a, b);
        assert!(a.1.last().unwrap() < &(0.5 * a.1[0]));
    }

    #[test]
    fn diverging_training_aborts() {
        let (xs, _) = toy(20, 6);
        let ys = vec![f64::NAN; 20];
        let r = train(
            Samples {
                states: &xs,
                labels: &ys,
            },
            FeatureMap::Planar,
            1.0,
            &small_cfg(),
        );
        assert_eq!(r.unwrap_err(), PolicyError::NonFiniteLoss { epoch: 0 });
    }
}
