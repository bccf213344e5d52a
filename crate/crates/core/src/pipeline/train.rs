use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, PoseModel, SceneLoss, DEFAULT_BACKBONE};
use super::scene::{gen_scene, SyntheticScene};
use super::shapes::num_shapes;
use crate::error::{Error, Result};

/// Training hyperparameters, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Input grid side length.
    pub grid: u32,
    /// Backbone layer config file; the built-in backbone when absent.
    pub layers: Option<String>,
    pub lr: f64,
    /// The learning rate halves after this many iterations.
    pub lr_halve_every: usize,
    pub iters: usize,
    /// Scenes per optimizer step.
    pub batch: usize,
    pub seed: u64,
    /// Refinement rounds used by evaluation.
    pub refine_iters: usize,
    pub noise_sigma: f64,
    pub num_points: usize,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            grid: 32,
            layers: None,
            lr: 0.01,
            lr_halve_every: 500,
            iters: 2000,
            batch: 4,
            seed: 0,
            refine_iters: 1,
            noise_sigma: 0.01,
            num_points: 512,
            hidden: 32,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Format(format!("training config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.grid < 4 {
            return bad(format!("grid must be >= 4, got {}", self.grid));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch == 0 || self.lr_halve_every == 0 || self.hidden == 0 {
            return bad("batch, lr_halve_every and hidden must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        Ok(())
    }

    /// Model architecture; a relative `layers` path is resolved against
    /// `base_dir`.
    pub fn model_config(&self, base_dir: &Path) -> Result<ModelConfig> {
        let backbone = match &self.layers {
            None => DEFAULT_BACKBONE.to_string(),
            Some(p) => std::fs::read_to_string(base_dir.join(p))?,
        };
        Ok(ModelConfig {
            grid: self.grid,
            hidden: self.hidden,
            backbone,
        })
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.epsilon);
        }
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scene `index` of the named stream `domain` (training and evaluation use
/// different domains, so they never share scenes).
pub fn stream_scene(seed: u64, domain: u64, index: u64, num_points: usize, noise_sigma: f64) -> Result<SyntheticScene> {
    let s = mix_seed(mix_seed(seed, domain), index);
    gen_scene(s, (s % num_shapes() as u64) as usize, num_points, noise_sigma)
}

pub const TRAIN_DOMAIN: u64 = 1;
pub const EVAL_DOMAIN: u64 = 2;

/// Mean losses per optimizer step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<SceneLoss>,
}

/// Trains from a fresh model seeded by `config.seed`. `progress` sees each
/// iteration's mean loss.
pub fn train(
    config: &TrainConfig,
    model_config: ModelConfig,
    mut progress: impl FnMut(usize, &SceneLoss),
) -> Result<(PoseModel, TrainReport)> {
    config.validate()?;
    let mut model = PoseModel::new(model_config, config.seed)?;
    let mut params = model.params();
    let mut adam = Adam::new(params.len());
    let mut report = TrainReport::default();
    for it in 0..config.iters {
        let mut grad = vec![0.0; params.len()];
        let mut mean = SceneLoss::default();
        for b in 0..config.batch {
            let index = (it * config.batch + b) as u64;
            let scene = stream_scene(config.seed, TRAIN_DOMAIN, index, config.num_points, config.noise_sigma)?;
            let (loss, g, first, second) = model.loss_and_grad(&scene.cloud, &scene.pose)?;
            model.commit(&first, &second);
            for (acc, v) in grad.iter_mut().zip(&g) {
                *acc += v / config.batch as f64;
            }
            mean.stage1 += loss.stage1 / config.batch as f64;
            mean.stage2 += loss.stage2 / config.batch as f64;
        }
        if !mean.stage1.is_finite() || !mean.stage2.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration: it,
                message: format!("loss stage1={} stage2={}", mean.stage1, mean.stage2),
            });
        }
        let lr = config.lr * 0.5f64.powi((it / config.lr_halve_every) as i32);
        adam.step(&mut params, &grad, lr);
        model.set_params(&params)?;
        progress(it, &mean);
        report.losses.push(mean);
    }
    Ok((model, report))
}
