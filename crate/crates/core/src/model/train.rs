use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{ModelConfig, ModelParams};
use crate::densitymap::DensityMap;
use crate::error::{Error, Result};
use crate::matching::{head_utilization, MatchLogEntry, DEFAULT_UTILIZATION_THRESHOLD};
use crate::raster::Raster;

/// An image with its per-class density maps.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image_id: String,
    pub image: Raster,
    pub gts: Vec<DensityMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Larger rates kill the head ReLUs at the default kernel width; wider
    /// density kernels tolerate about 1e-3.
    pub learning_rate: f64,
    /// The learning rate halves after every this many epochs.
    pub lr_halving_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m_hat: usize,
    pub seed: u64,
    pub freeze_backbone: bool,
    pub backbone_channels: [usize; 3],
    pub head_channels: [usize; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::new(64, 64, 5);
        Self {
            learning_rate: 3e-4,
            lr_halving_epochs: 35,
            epochs: 100,
            batch_size: 2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m_hat: 5,
            seed: 0,
            freeze_backbone: false,
            backbone_channels: model.backbone_channels,
            head_channels: model.head_channels,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.lr_halving_epochs == 0 || self.epochs == 0 || self.batch_size == 0 || self.m_hat == 0 {
            return Err(Error::Config(
                "epochs, batch size, halving interval and m_hat must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, height: usize, width: usize) -> ModelConfig {
        ModelConfig {
            backbone_channels: self.backbone_channels,
            head_channels: self.head_channels,
            ..ModelConfig::new(height, width, self.m_hat)
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * 0.5f64.powi((epoch / self.lr_halving_epochs) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean matched loss per image.
    pub loss: f64,
    pub lr: f64,
    /// Fraction of heads matched often enough over all epochs so far.
    pub head_utilization: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    /// Assignments of the final epoch, one per training image.
    pub match_log: Vec<MatchLogEntry>,
}

struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grad: &ModelParams, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let skip = if cfg.freeze_backbone { params.backbone.len() } else { 0 };
        let convs = params.convs_mut().into_iter().zip(self.m.convs_mut()).zip(self.v.convs_mut()).zip(grad.convs());
        for (((p, m), v), (_, g)) in convs.skip(skip) {
            let update = |p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
                for k in 0..p.len() {
                    m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                    v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                    p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.eps);
                }
            };
            update(&mut p.weight, &mut m.weight, &mut v.weight, &g.weight);
            update(&mut p.bias, &mut m.bias, &mut v.bias, &g.bias);
        }
    }
}

/// Trains a freshly initialised model.
pub fn train(
    samples: &[Sample],
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let first = samples.first().ok_or_else(|| Error::InvalidInput("training set is empty".into()))?;
    let model = config.model_config(first.image.height(), first.image.width());
    let params = ModelParams::init(model, config.seed)?;
    train_from(params, samples, config, on_epoch)
}

/// Continues training from `params`. With `freeze_backbone` only the heads
/// change.
pub fn train_from(
    mut params: ModelParams,
    samples: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.gts.len() > params.m_hat()) {
        return Err(Error::InvalidInput(format!(
            "image {} has {} classes but the model has only {} heads",
            s.image_id,
            s.gts.len(),
            params.m_hat()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e00);
    let mut adam = Adam::new(&params);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut match_log = Vec::new();
    let mut seen = Vec::new();

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_matches: Vec<(usize, MatchLogEntry)> = Vec::with_capacity(samples.len());
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<(f64, ModelParams, MatchLogEntry, usize)> = batch
                .par_iter()
                .map(|&i| {
                    let s = &samples[i];
                    let mut g = params.zeros_like();
                    let ml = params.loss_and_grad(&s.image, &s.gts, &mut g, config.freeze_backbone)?;
                    Ok((ml.loss, g, MatchLogEntry::new(s.image_id.clone(), &ml.assignment), i))
                })
                .collect::<Result<_>>()?;
            let mut grad = params.zeros_like();
            let mut batch_loss = 0.0;
            for (loss, g, entry, i) in results {
                batch_loss += loss;
                grad.add_assign(&g);
                epoch_matches.push((i, entry));
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    step,
                    loss: batch_loss,
                });
            }
            let scale = 1.0 / batch.len() as f64;
            for c in grad.convs_mut() {
                c.weight.iter_mut().chain(c.bias.iter_mut()).for_each(|v| *v *= scale);
            }
            adam.step(&mut params, &grad, lr, config);
            epoch_loss += batch_loss;
        }
        epoch_matches.sort_by_key(|(i, _)| *i);
        seen.extend(epoch_matches.iter().map(|(_, e)| e.assignment()));
        let entry = EpochLog {
            epoch: epoch + 1,
            loss: epoch_loss / samples.len() as f64,
            lr,
            head_utilization: head_utilization(&seen, params.m_hat(), DEFAULT_UTILIZATION_THRESHOLD)?,
        };
        log::info!(
            "epoch {} loss {:.5} lr {:.2e} utilization {:.2}",
            entry.epoch,
            entry.loss,
            entry.lr,
            entry.head_utilization
        );
        on_epoch(&entry);
        log.push(entry);
        match_log = epoch_matches.into_iter().map(|(_, e)| e).collect();
    }
    Ok(TrainOutcome {
        params,
        log,
        match_log,
    })
}
