//! Feed-forward waypoint policy, its L1 imitation training, and the
//! demonstration dataset format.

use std::io::{BufRead, Write};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::scenario::Vec2;

use super::features::{FeatureVector, FEATURE_LEN};
use super::Waypoints;

pub const HIDDEN: usize = 64;
pub const OUTPUT_LEN: usize = 8;
const OUTPUT_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(rename = "in")]
    pub in_dim: usize,
    #[serde(rename = "out")]
    pub out_dim: usize,
    /// Row-major `out x in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim).map(|_| rng.random_range(-limit..limit)).collect(),
            bias: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.out_dim {
            let row = &self.weights[r * self.in_dim..(r + 1) * self.in_dim];
            let mut acc = self.bias[r];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Two tanh hidden layers and a linear head producing four ego-frame
/// waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub layers: Vec<Layer>,
    pub output_scale: f64,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    input: Vec<f64>,
    hidden: Vec<Vec<f64>>,
}

impl PolicyModel {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            layers: vec![
                Layer::init(FEATURE_LEN, HIDDEN, &mut rng),
                Layer::init(HIDDEN, HIDDEN, &mut rng),
                Layer::init(HIDDEN, OUTPUT_LEN, &mut rng),
            ],
            output_scale: OUTPUT_SCALE,
        }
    }

    /// A policy whose output ignores its input entirely.
    pub fn constant(waypoints: &Waypoints) -> Self {
        let mut m = Self::new(0);
        for l in &mut m.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let last = m.layers.last_mut().expect("three layers");
        for (k, w) in waypoints.iter().enumerate() {
            last.bias[2 * k] = w.x / OUTPUT_SCALE;
            last.bias[2 * k + 1] = w.y / OUTPUT_SCALE;
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        let mut dim = FEATURE_LEN;
        for (k, l) in self.layers.iter().enumerate() {
            if l.in_dim != dim || l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::ShapeMismatch(format!("layer {k} has inconsistent shape")));
            }
            dim = l.out_dim;
        }
        if dim != OUTPUT_LEN {
            return Err(Error::ShapeMismatch(format!(
                "policy outputs {dim} values, expected {OUTPUT_LEN}"
            )));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    pub fn forward(&self, x: &FeatureVector) -> ([f64; OUTPUT_LEN], ForwardCache) {
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if k < last {
                next.iter_mut().for_each(|v| *v = v.tanh());
                hidden.push(next.clone());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        let mut out = [0.0; OUTPUT_LEN];
        for (o, c) in out.iter_mut().zip(&cur) {
            *o = c * self.output_scale;
        }
        (
            out,
            ForwardCache {
                input: x.to_vec(),
                hidden,
            },
        )
    }

    pub fn waypoints(&self, x: &FeatureVector) -> Waypoints {
        outputs_to_waypoints(&self.forward(x).0)
    }

    /// Backpropagate `d_out` through the network. Returns the input gradient
    /// and, when `param_grad` is given, accumulates parameter gradients in
    /// the flat layout of [`PolicyModel::params`].
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_out: &[f64; OUTPUT_LEN],
        mut param_grad: Option<&mut [f64]>,
    ) -> FeatureVector {
        let mut delta: Vec<f64> = d_out.iter().map(|d| d * self.output_scale).collect();
        let offsets = self.param_offsets();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input: &[f64] = if k == 0 { &cache.input } else { &cache.hidden[k - 1] };
            if let Some(g) = param_grad.as_deref_mut() {
                let off = offsets[k];
                for r in 0..layer.out_dim {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut g[off + r * layer.in_dim..off + (r + 1) * layer.in_dim];
                    for (gw, xi) in row.iter_mut().zip(input) {
                        *gw += d * xi;
                    }
                    g[off + layer.weights.len() + r] += d;
                }
            }
            let mut prev = vec![0.0; layer.in_dim];
            for r in 0..layer.out_dim {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            if k > 0 {
                // through tanh: 1 - a^2
                for (p, a) in prev.iter_mut().zip(&cache.hidden[k - 1]) {
                    *p *= 1.0 - a * a;
                }
            }
            delta = prev;
        }
        let mut dx = [0.0; FEATURE_LEN];
        dx.copy_from_slice(&delta);
        dx
    }

    fn param_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offs.push(acc);
            acc += l.n_params();
        }
        offs
    }

    /// Flat parameter vector: per layer, weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("policy JSON is always serializable")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let m: PolicyModel = serde_json::from_slice(bytes).map_err(|e| Error::schema("policy", e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

pub fn outputs_to_waypoints(y: &[f64; OUTPUT_LEN]) -> Waypoints {
    [0, 1, 2, 3].map(|k| Vec2::new(y[2 * k], y[2 * k + 1]))
}

pub fn waypoints_to_outputs(w: &Waypoints) -> [f64; OUTPUT_LEN] {
    let mut y = [0.0; OUTPUT_LEN];
    for (k, p) in w.iter().enumerate() {
        y[2 * k] = p.x;
        y[2 * k + 1] = p.y;
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoTag {
    Regular,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoPair {
    pub features: Vec<f64>,
    pub waypoints: [[f64; 2]; 4],
    pub tag: DemoTag,
}

impl DemoPair {
    pub fn new(features: &FeatureVector, waypoints: &Waypoints, tag: DemoTag) -> Self {
        Self {
            features: features.to_vec(),
            waypoints: waypoints.map(|p| [p.x, p.y]),
            tag,
        }
    }

    fn target(&self) -> [f64; OUTPUT_LEN] {
        let mut y = [0.0; OUTPUT_LEN];
        for k in 0..4 {
            y[2 * k] = self.waypoints[k][0];
            y[2 * k + 1] = self.waypoints[k][1];
        }
        y
    }

    fn input(&self) -> Result<FeatureVector> {
        self.features.as_slice().try_into().map_err(|_| {
            Error::ShapeMismatch(format!(
                "feature vector of length {}, expected {FEATURE_LEN}",
                self.features.len()
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DemoDataset {
    pub pairs: Vec<DemoPair>,
}

impl DemoDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn count(&self, tag: DemoTag) -> usize {
        self.pairs.iter().filter(|p| p.tag == tag).count()
    }

    pub fn extend(&mut self, other: DemoDataset) {
        self.pairs.extend(other.pairs);
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for p in &self.pairs {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::schema(format!("line {}", n + 1), e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let p: DemoPair =
                serde_json::from_str(&line).map_err(|e| Error::schema(format!("line {}", n + 1), e.to_string()))?;
            pairs.push(p);
        }
        Ok(Self { pairs })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Cosine decay floor as a fraction of `learning_rate`.
    pub final_lr_fraction: f64,
    /// Probability that a sample is drawn from the critical pairs; `None`
    /// samples uniformly over the whole dataset.
    pub mix_ratio: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20000,
            batch_size: 64,
            learning_rate: 1e-3,
            final_lr_fraction: 1e-3,
            mix_ratio: None,
            seed: 0,
        }
    }
}

/// Mean absolute waypoint error over a batch and its parameter gradient.
pub fn l1_loss_and_grad(model: &PolicyModel, batch: &[&DemoPair]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.n_params()];
    let mut loss = 0.0;
    let norm = 1.0 / (batch.len() * OUTPUT_LEN) as f64;
    for pair in batch {
        let x = pair.input()?;
        let (y, cache) = model.forward(&x);
        let target = pair.target();
        let mut d = [0.0; OUTPUT_LEN];
        for k in 0..OUTPUT_LEN {
            let e = y[k] - target[k];
            loss += e.abs() * norm;
            d[k] = if e > 0.0 {
                norm
            } else if e < 0.0 {
                -norm
            } else {
                0.0
            };
        }
        model.backward(&cache, &d, Some(&mut grad));
    }
    Ok((loss, grad))
}

pub fn evaluate_l1(model: &PolicyModel, data: &DemoDataset) -> Result<f64> {
    let refs: Vec<&DemoPair> = data.pairs.iter().collect();
    Ok(l1_loss_and_grad(model, &refs)?.0)
}

fn check_dataset(data: &DemoDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for p in &data.pairs {
        p.input()?;
    }
    Ok(())
}

/// Train a freshly initialized policy.
pub fn train_policy(data: &DemoDataset, cfg: &TrainConfig) -> Result<PolicyModel> {
    let mut model = PolicyModel::new(cfg.seed);
    fit(&mut model, data, cfg)?;
    Ok(model)
}

/// Continue training from the given weights.
pub fn fine_tune(model: &PolicyModel, data: &DemoDataset, cfg: &TrainConfig) -> Result<PolicyModel> {
    let mut m = model.clone();
    fit(&mut m, data, cfg)?;
    Ok(m)
}

/// Mini-batch Adam on the L1 loss with cosine learning-rate decay. Returns
/// the mean batch loss of every epoch (one pass worth of samples).
pub fn fit(model: &mut PolicyModel, data: &DemoDataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
    check_dataset(data)?;
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f00d);
    let regular: Vec<&DemoPair> = data.pairs.iter().filter(|p| p.tag == DemoTag::Regular).collect();
    let critical: Vec<&DemoPair> = data.pairs.iter().filter(|p| p.tag == DemoTag::Critical).collect();
    let all: Vec<&DemoPair> = data.pairs.iter().collect();
    let batch_size = cfg.batch_size.max(1);
    let steps_per_epoch = data.len().div_ceil(batch_size).max(1);

    let mut params = model.params();
    let mut opt = Adam::new(params.len(), cfg.learning_rate);
    let mut history = Vec::new();
    let mut epoch_loss = 0.0;
    let mut epoch_steps = 0;
    let mut batch: Vec<&DemoPair> = Vec::with_capacity(batch_size);
    for step in 0..cfg.steps {
        batch.clear();
        for _ in 0..batch_size {
            let pool = match cfg.mix_ratio {
                None => &all,
                Some(r) => {
                    let want_critical = rng.random::<f64>() < r;
                    match (want_critical, critical.is_empty(), regular.is_empty()) {
                        (true, false, _) | (false, false, true) => &critical,
                        _ => &regular,
                    }
                }
            };
            batch.push(pool.choose(&mut rng).expect("pool is nonempty"));
        }
        let progress = step as f64 / cfg.steps.max(1) as f64;
        let floor = cfg.final_lr_fraction;
        opt.learning_rate =
            cfg.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        let (loss, grad) = l1_loss_and_grad(model, &batch)?;
        opt.step(&mut params, &grad);
        model.set_params(&params);
        epoch_loss += loss;
        epoch_steps += 1;
        if epoch_steps == steps_per_epoch || step + 1 == cfg.steps {
            history.push(epoch_loss / epoch_steps as f64);
            epoch_loss = 0.0;
            epoch_steps = 0;
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature(seed: f64) -> FeatureVector {
        let mut f = [0.0; FEATURE_LEN];
        for (k, v) in f.iter_mut().enumerate() {
            *v = ((k as f64 + 1.0) * seed).sin();
        }
        f
    }

    fn wp(scale: f64) -> Waypoints {
        [1.0, 2.0, 3.0, 4.0].map(|k| Vec2::new(k * scale, 0.2 * k))
    }

    #[test]
    fn memorizes_a_single_pair() {
        let pair = DemoPair::new(&feature(0.7), &wp(3.0), DemoTag::Regular);
        let data = DemoDataset { pairs: vec![pair; 16] };
        let cfg = TrainConfig {
            steps: 2000,
            batch_size: 4,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let model = train_policy(&data, &cfg).unwrap();
        let loss = evaluate_l1(&model, &data).unwrap();
        assert!(loss < 1e-3, "{loss}");
    }

    #[test]
    fn empty_and_malformed_datasets_rejected() {
        let cfg = TrainConfig::default();
        assert!(matches!(
            train_policy(&DemoDataset::default(), &cfg),
            Err(Error::EmptyDataset)
        ));
        let bad = DemoDataset {
            pairs: vec![DemoPair {
                features: vec![0.0; 3],
                waypoints: [[0.0; 2]; 4],
                tag: DemoTag::Regular,
            }],
        };
        assert!(matches!(train_policy(&bad, &cfg), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let model = PolicyModel::new(3);
        let pairs: Vec<DemoPair> = (0..6)
            .map(|k| DemoPair::new(&feature(0.3 + k as f64), &wp(1.0 + k as f64), DemoTag::Regular))
            .collect();
        let batch: Vec<&DemoPair> = pairs.iter().collect();
        let (_, grad) = l1_loss_and_grad(&model, &batch).unwrap();
        let params = model.params();
        let h = 1e-6;
        let mut m = model.clone();
        for k in (0..params.len()).step_by(37) {
            let mut p = params.clone();
            p[k] += h;
            m.set_params(&p);
            let lp = l1_loss_and_grad(&m, &batch).unwrap().0;
            p[k] -= 2.0 * h;
            m.set_params(&p);
            let lm = l1_loss_and_grad(&m, &batch).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-4);
            assert!(err < 1e-4, "param {k}: {} vs {fd}", grad[k]);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let model = PolicyModel::new(5);
        let x = feature(1.3);
        let (_, cache) = model.forward(&x);
        let h = 1e-6;
        for out in 0..OUTPUT_LEN {
            let mut d = [0.0; OUTPUT_LEN];
            d[out] = 1.0;
            let dx = model.backward(&cache, &d, None);
            for i in 0..FEATURE_LEN {
                let mut xp = x;
                xp[i] += h;
                let mut xm = x;
                xm[i] -= h;
                let fd = (model.forward(&xp).0[out] - model.forward(&xm).0[out]) / (2.0 * h);
                assert!((fd - dx[i]).abs() / fd.abs().max(1e-3) < 1e-6);
            }
        }
    }

    #[test]
    fn loss_decreases_over_epochs() {
        let pairs: Vec<DemoPair> = (0..200)
            .map(|k| {
                let s = k as f64 * 0.05;
                DemoPair::new(&feature(s), &wp(1.0 + s.sin()), DemoTag::Regular)
            })
            .collect();
        let data = DemoDataset { pairs };
        let mut model = PolicyModel::new(1);
        let cfg = TrainConfig {
            steps: 1200,
            batch_size: 20,
            ..Default::default()
        };
        let hist = fit(&mut model, &data, &cfg).unwrap();
        // compare smoothed windows of 10 epochs
        let windows: Vec<f64> = hist
            .chunks(10)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        for w in windows.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "{windows:?}");
        }
        assert!(windows.last().unwrap() < &(windows[0] * 0.5));
    }

    #[test]
    fn deterministic_under_seed() {
        let pairs: Vec<DemoPair> = (0..30)
            .map(|k| {
                DemoPair::new(
                    &feature(k as f64),
                    &wp(2.0),
                    if k % 2 == 0 {
                        DemoTag::Regular
                    } else {
                        DemoTag::Critical
                    },
                )
            })
            .collect();
        let data = DemoDataset { pairs };
        let cfg = TrainConfig {
            steps: 50,
            mix_ratio: Some(0.5),
            ..Default::default()
        };
        assert_eq!(train_policy(&data, &cfg).unwrap(), train_policy(&data, &cfg).unwrap());
    }

    #[test]
    fn json_round_trips() {
        let m = PolicyModel::new(9);
        assert_eq!(PolicyModel::from_json(&m.to_json()).unwrap(), m);
        let data = DemoDataset {
            pairs: vec![DemoPair::new(&feature(0.1), &wp(1.0), DemoTag::Critical)],
        };
        let mut buf = Vec::new();
        data.write_jsonl(&mut buf).unwrap();
        assert_eq!(DemoDataset::read_jsonl(&buf[..]).unwrap(), data);
    }
}
