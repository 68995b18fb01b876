use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{relu_backward, relu_inplace, upsample2, upsample2_backward, Conv2d};
use crate::assignment::Assignment;
use crate::densitymap::{DensityMap, l1_distance};
use crate::error::{Error, Result};
use crate::matching::{match_predictions, MatchedLoss, PredictionSet};
use crate::raster::Raster;

/// Downsampling factor of the backbone; heads upsample by the same amount.
pub const STRIDE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    /// Channels of the three stride-2 backbone convolutions; the last entry
    /// is the feature width `k`.
    pub backbone_channels: [usize; 3],
    /// Channels of the first two head convolutions; the third outputs one.
    pub head_channels: [usize; 2],
    pub m_hat: usize,
    /// Fixed factor applied to every head output, so that unit-scale
    /// activations correspond to ground-truth density magnitudes.
    #[serde(default = "default_output_scale")]
    pub output_scale: f64,
}

fn default_output_scale() -> f64 {
    0.01
}

impl ModelConfig {
    pub fn new(input_height: usize, input_width: usize, m_hat: usize) -> Self {
        Self {
            input_height,
            input_width,
            input_channels: 3,
            backbone_channels: [16, 32, 32],
            head_channels: [16, 8],
            m_hat,
            output_scale: default_output_scale(),
        }
    }

    pub fn feature_channels(&self) -> usize {
        self.backbone_channels[2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_hat == 0 {
            return Err(Error::Config("m_hat must be at least 1".into()));
        }
        if self.input_height == 0
            || self.input_width == 0
            || !self.input_height.is_multiple_of(STRIDE)
            || !self.input_width.is_multiple_of(STRIDE)
        {
            return Err(Error::Config(format!(
                "input size {}x{} must be a positive multiple of {STRIDE}",
                self.input_height, self.input_width
            )));
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(Error::Config(format!("output scale must be positive, got {}", self.output_scale)));
        }
        if self.input_channels == 0
            || self.backbone_channels.contains(&0)
            || self.head_channels.contains(&0)
        {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }
}

/// Backbone plus `m_hat` independent heads. Gradients share this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub backbone: Vec<Conv2d>,
    /// Three convolutions per head.
    pub heads: Vec<Vec<Conv2d>>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    backbone_inputs: Vec<Raster>,
    backbone_pre: Vec<Raster>,
    pub features: Raster,
    heads: Vec<HeadCache>,
}

#[derive(Debug, Clone)]
struct HeadCache {
    inputs: Vec<Raster>,
    pre: Vec<Raster>,
}

impl ModelParams {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c1, c2, k] = config.backbone_channels;
        let backbone = vec![
            Conv2d::init(config.input_channels, c1, 2, &mut rng),
            Conv2d::init(c1, c2, 2, &mut rng),
            Conv2d::init(c2, k, 2, &mut rng),
        ];
        let [h1, h2] = config.head_channels;
        let heads = (0..config.m_hat)
            .map(|_| {
                vec![
                    Conv2d::init(k, h1, 1, &mut rng),
                    Conv2d::init(h1, h2, 1, &mut rng),
                    Conv2d::init(h2, 1, 1, &mut rng),
                ]
            })
            .collect();
        Ok(Self {
            config,
            backbone,
            heads,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            backbone: self.backbone.iter().map(Conv2d::zeros_like).collect(),
            heads: self
                .heads
                .iter()
                .map(|h| h.iter().map(Conv2d::zeros_like).collect())
                .collect(),
        }
    }

    pub fn m_hat(&self) -> usize {
        self.heads.len()
    }

    /// Every convolution with its parameter-name prefix, backbone first.
    pub fn convs(&self) -> Vec<(String, &Conv2d)> {
        let mut out: Vec<(String, &Conv2d)> = self
            .backbone
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("backbone.{i}"), c))
            .collect();
        for (h, head) in self.heads.iter().enumerate() {
            for (i, c) in head.iter().enumerate() {
                out.push((format!("heads.{h}.{i}"), c));
            }
        }
        out
    }

    pub fn convs_mut(&mut self) -> Vec<&mut Conv2d> {
        self.backbone
            .iter_mut()
            .chain(self.heads.iter_mut().flat_map(|h| h.iter_mut()))
            .collect()
    }

    /// Flat view over all parameters, in [`ModelParams::convs`] order with
    /// weights before biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, c) in self.convs() {
            out.extend_from_slice(&c.weight);
            out.extend_from_slice(&c.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.convs().iter().map(|(_, c)| c.weight.len() + c.bias.len()).sum()
    }

    /// Name of the tensor holding flat parameter `index`.
    pub fn param_name(&self, mut index: usize) -> Option<String> {
        for (name, c) in self.convs() {
            if index < c.weight.len() {
                return Some(format!("{name}.weight"));
            }
            index -= c.weight.len();
            if index < c.bias.len() {
                return Some(format!("{name}.bias"));
            }
            index -= c.bias.len();
        }
        None
    }

    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for c in self.convs_mut() {
            if index < c.weight.len() {
                return Some(&mut c.weight[index]);
            }
            index -= c.weight.len();
            if index < c.bias.len() {
                return Some(&mut c.bias[index]);
            }
            index -= c.bias.len();
        }
        None
    }

    /// Reorders heads so that new head `i` is old head `perm[i]`.
    pub fn permute_heads(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.m_hat()];
        if perm.len() != self.m_hat() || perm.iter().any(|&p| p >= self.m_hat() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidInput(format!("{perm:?} is not a permutation of the heads")));
        }
        let mut out = self.clone();
        out.heads = perm.iter().map(|&p| self.heads[p].clone()).collect();
        Ok(out)
    }

    fn check_input(&self, image: &Raster) -> Result<()> {
        let c = &self.config;
        if (image.channels(), image.height(), image.width()) != (c.input_channels, c.input_height, c.input_width) {
            return Err(Error::Dimension(format!(
                "model expects a {}x{}x{} input, got {}x{}x{}",
                c.input_channels,
                c.input_height,
                c.input_width,
                image.channels(),
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    /// Runs backbone and every head, keeping what backward needs.
    pub fn forward_cached(&self, image: &Raster) -> Result<(PredictionSet, ForwardCache)> {
        self.check_input(image)?;
        let mut x = image.clone();
        for v in x.data_mut() {
            *v -= 0.5;
        }
        let mut backbone_inputs = Vec::with_capacity(3);
        let mut backbone_pre = Vec::with_capacity(3);
        for conv in &self.backbone {
            let pre = conv.forward(&x);
            let mut act = pre.clone();
            relu_inplace(&mut act);
            backbone_inputs.push(std::mem::replace(&mut x, act));
            backbone_pre.push(pre);
        }
        let features = x;
        let mut maps = Vec::with_capacity(self.m_hat());
        let mut heads = Vec::with_capacity(self.m_hat());
        for head in &self.heads {
            let (map, cache) = run_head(head, &features, self.config.output_scale);
            maps.push(map);
            heads.push(cache);
        }
        let preds = PredictionSet::new(maps)?;
        Ok((
            preds,
            ForwardCache {
                backbone_inputs,
                backbone_pre,
                features,
                heads,
            },
        ))
    }

    pub fn forward(&self, image: &Raster) -> Result<PredictionSet> {
        Ok(self.forward_cached(image)?.0)
    }

    /// The `k`-channel feature grid at 1/8 resolution.
    pub fn features(&self, image: &Raster) -> Result<Raster> {
        Ok(self.forward_cached(image)?.1.features)
    }

    /// Matched L1 loss under a given assignment.
    pub fn loss_with_assignment(&self, image: &Raster, gts: &[DensityMap], assignment: &Assignment) -> Result<f64> {
        let preds = self.forward(image)?;
        assignment
            .pairs
            .iter()
            .map(|&(i, j)| l1_distance(&gts[j], &preds.maps()[i]))
            .sum()
    }

    /// Accumulates gradients of the matched loss for a fixed assignment into
    /// `grad`. Heads without a label receive nothing; with
    /// `skip_backbone` the backbone is left untouched as well.
    pub fn backward_with_assignment(
        &self,
        preds: &PredictionSet,
        cache: &ForwardCache,
        gts: &[DensityMap],
        assignment: &Assignment,
        grad: &mut ModelParams,
        skip_backbone: bool,
    ) -> Result<()> {
        let (h, w) = (self.config.input_height, self.config.input_width);
        let mut dfeat = Raster::zeros(cache.features.channels(), cache.features.height(), cache.features.width());
        for &(i, j) in &assignment.pairs {
            let gt = gts.get(j).ok_or_else(|| Error::InvalidInput(format!("assignment refers to missing label {j}")))?;
            if gt.dims() != (h, w) {
                return Err(Error::Dimension(format!(
                    "label map is {}x{}, model output is {h}x{w}",
                    gt.height(),
                    gt.width()
                )));
            }
            // d|p - g|/dp with the subgradient at zero taken as 0.
            let scale = self.config.output_scale;
            let dout: Vec<f64> = preds.maps()[i]
                .values()
                .iter()
                .zip(gt.values())
                .map(|(p, g)| {
                    let d = p - g;
                    if d > 0.0 {
                        scale
                    } else if d < 0.0 {
                        -scale
                    } else {
                        0.0
                    }
                })
                .collect();
            let dout = Raster::from_vec(1, h, w, dout)?;
            let df = head_backward(&self.heads[i], &cache.heads[i], dout, &mut grad.heads[i], !skip_backbone);
            if let Some(df) = df {
                for (a, b) in dfeat.data_mut().iter_mut().zip(df.data()) {
                    *a += b;
                }
            }
        }
        if !skip_backbone && !assignment.pairs.is_empty() {
            let mut d = dfeat;
            for l in (0..self.backbone.len()).rev() {
                relu_backward(&cache.backbone_pre[l], &mut d);
                let next = self.backbone[l].backward(&cache.backbone_inputs[l], &d, &mut grad.backbone[l], l > 0);
                match next {
                    Some(n) => d = n,
                    None => break,
                }
            }
        }
        Ok(())
    }

    /// Forward, matching and backward for one image. Returns the matched loss
    /// and adds its gradient into `grad`.
    pub fn loss_and_grad(
        &self,
        image: &Raster,
        gts: &[DensityMap],
        grad: &mut ModelParams,
        skip_backbone: bool,
    ) -> Result<MatchedLoss> {
        let (preds, cache) = self.forward_cached(image)?;
        let assignment = match_predictions(gts, &preds)?;
        let per_pair_losses = assignment
            .pairs
            .iter()
            .map(|&(i, j)| l1_distance(&gts[j], &preds.maps()[i]))
            .collect::<Result<Vec<_>>>()?;
        self.backward_with_assignment(&preds, &cache, gts, &assignment, grad, skip_backbone)?;
        Ok(MatchedLoss {
            assignment,
            loss: per_pair_losses.iter().sum(),
            per_pair_losses,
        })
    }

    /// Adds `other` into `self` element-wise.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, (_, b)) in self.convs_mut().into_iter().zip(other.convs()) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

fn run_head(head: &[Conv2d], features: &Raster, scale: f64) -> (DensityMap, HeadCache) {
    let mut x = features.clone();
    let mut inputs = Vec::with_capacity(3);
    let mut pre = Vec::with_capacity(3);
    for conv in head {
        let z = conv.forward(&x);
        let mut a = z.clone();
        relu_inplace(&mut a);
        inputs.push(std::mem::replace(&mut x, upsample2(&a)));
        pre.push(z);
    }
    let (h, w) = (x.height(), x.width());
    let values = x.data().iter().map(|v| v * scale).collect();
    let map = DensityMap::from_vec(h, w, values).expect("ReLU output is nonnegative");
    (map, HeadCache { inputs, pre })
}

fn head_backward(
    head: &[Conv2d],
    cache: &HeadCache,
    dout: Raster,
    grad: &mut [Conv2d],
    need_features: bool,
) -> Option<Raster> {
    let mut d = dout;
    for b in (0..head.len()).rev() {
        let mut da = upsample2_backward(&d);
        relu_backward(&cache.pre[b], &mut da);
        d = head[b].backward(&cache.inputs[b], &da, &mut grad[b], b > 0 || need_features)?;
    }
    Some(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densitymap::{integrate, pseudo_density, InstanceCenter};
    use rand::Rng;

    fn toy(m_hat: usize, seed: u64) -> ModelParams {
        let mut cfg = ModelConfig::new(16, 16, m_hat);
        cfg.backbone_channels = [4, 6, 6];
        cfg.head_channels = [4, 3];
        ModelParams::init(cfg, seed).unwrap()
    }

    fn image(seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_vec(3, 16, 16, (0..768).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn shapes_and_nonnegativity() {
        let p = toy(3, 1);
        let preds = p.forward(&image(2)).unwrap();
        assert_eq!(preds.len(), 3);
        for (m, c) in preds.maps().iter().zip(preds.counts()) {
            assert_eq!(m.dims(), (16, 16));
            assert!(m.values().iter().all(|&v| v >= 0.0));
            assert!((integrate(m) - c).abs() < 1e-12);
        }
        assert_eq!(p.features(&image(2)).unwrap().height(), 2);
        assert!(p.forward(&Raster::zeros(3, 8, 16)).is_err());
    }

    #[test]
    fn zero_final_layers_give_zero_maps() {
        let mut p = toy(2, 4);
        for head in &mut p.heads {
            head[2] = head[2].zeros_like();
        }
        let preds = p.forward(&image(5)).unwrap();
        assert!(preds.counts().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn forward_is_bit_stable() {
        let p = toy(2, 7);
        let a = p.forward(&image(8)).unwrap();
        let b = p.forward(&image(8)).unwrap();
        assert_eq!(a.maps(), b.maps());
    }

    #[test]
    fn param_indexing_covers_everything() {
        let mut p = toy(2, 1);
        let n = p.num_params();
        assert_eq!(p.flat().len(), n);
        assert!(p.param_name(n).is_none());
        assert_eq!(p.param_name(0).unwrap(), "backbone.0.weight");
        assert_eq!(p.param_name(n - 1).unwrap(), "heads.1.2.bias");
        *p.param_mut(n - 1).unwrap() = 9.0;
        assert_eq!(p.heads[1][2].bias[0], 9.0);
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let p = toy(3, 11);
        let img = image(12);
        let preds = p.forward(&img).unwrap();
        let gts = vec![preds.maps()[1].clone()];
        let mut g = p.zeros_like();
        let loss = p.loss_and_grad(&img, &gts, &mut g, false).unwrap();
        assert_eq!(loss.loss, 0.0);
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unmatched_heads_get_no_gradient() {
        let p = toy(3, 21);
        let img = image(22);
        let gts = vec![pseudo_density(&[InstanceCenter::new(5.0, 6.0)], 16, 16, 2.0).unwrap()];
        let mut g = p.zeros_like();
        let loss = p.loss_and_grad(&img, &gts, &mut g, false).unwrap();
        let matched = loss.assignment.pairs[0].0;
        for (h, head) in g.heads.iter().enumerate() {
            let any = head.iter().any(|c| c.weight.iter().chain(&c.bias).any(|&v| v != 0.0));
            assert_eq!(any, h == matched, "head {h}");
        }
    }
}
