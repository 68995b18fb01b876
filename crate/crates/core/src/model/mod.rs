//! Multi-head density regressor.
//!
//! A three-layer strided convolutional backbone produces a `k`-channel
//! feature grid at 1/8 resolution. Each of the `m_hat` heads applies three
//! conv, ReLU, 2x bilinear upsample blocks to reach input resolution. The
//! last ReLU keeps every density nonnegative, and bilinear interpolation of
//! nonnegative values stays nonnegative.

mod checkpoint;
mod layers;
mod network;
mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matching::{evaluate_combined, MatchLogEntry, SubclassCombine};
use crate::metrics::CountPair;
use crate::scenegen::SceneLabel;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, named_tensors, save_checkpoint, NamedTensor,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use layers::{conv_out, relu_backward, relu_inplace, upsample2, upsample2_backward, Conv2d, KERNEL};
pub use network::{ForwardCache, ModelConfig, ModelParams, STRIDE};
pub use train::{train, train_from, EpochLog, Sample, TrainConfig, TrainOutcome};

/// Builds samples from generated scenes, with density maps over counted
/// instances.
pub fn samples_from_labels(labels: &[SceneLabel], sigma: f64) -> Result<Vec<Sample>> {
    labels
        .par_iter()
        .map(|l| {
            Ok(Sample {
                image_id: l.image_id.clone(),
                image: l.image.clone(),
                gts: l.density_maps(sigma)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub combine: SubclassCombine,
    /// Maximum normalized cost for an unmatched head to join a label when
    /// combining sub-class predictions.
    pub attach_threshold: f64,
    /// Unmatched heads counting less than this are ignored when combining.
    pub zero_threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            combine: SubclassCombine::None,
            attach_threshold: 1.0,
            zero_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub pairs: Vec<CountPair>,
    pub match_log: Vec<MatchLogEntry>,
}

/// Matched count pairs for every sample, in sample order.
pub fn evaluate(params: &ModelParams, samples: &[Sample], options: &EvalOptions) -> Result<EvalOutcome> {
    let per_image: Vec<(Vec<CountPair>, MatchLogEntry)> = samples
        .par_iter()
        .map(|s| {
            let preds = params.forward(&s.image)?;
            let (assignment, counts) = evaluate_combined(
                &s.gts,
                &preds,
                options.combine,
                options.attach_threshold,
                options.zero_threshold,
            )?;
            let pairs = counts
                .into_iter()
                .enumerate()
                .map(|(j, (y, y_hat))| CountPair::new(y, y_hat, s.image_id.clone(), j))
                .collect();
            Ok((pairs, MatchLogEntry::new(s.image_id.clone(), &assignment)))
        })
        .collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    let mut match_log = Vec::with_capacity(per_image.len());
    for (p, m) in per_image {
        pairs.extend(p);
        match_log.push(m);
    }
    Ok(EvalOutcome { pairs, match_log })
}
