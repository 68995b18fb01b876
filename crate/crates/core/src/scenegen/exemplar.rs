use rand::seq::index;
use rand::Rng;

use super::SceneLabel;
use crate::error::{Error, Result};
use crate::raster::BBox;

/// Training exemplars are drawn only from instances below this occlusion.
pub const TRAIN_EXEMPLAR_MAX_OCCLUSION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExemplarMode {
    /// Uniform sample among lightly occluded instances.
    Train,
    /// The least occluded counted instances, ties by instance index.
    Eval,
}

/// Boxes of `k` instances of `class_index` to serve as exemplars.
pub fn sample_exemplar_boxes(
    label: &SceneLabel,
    class_index: usize,
    k: usize,
    mode: ExemplarMode,
    rng: &mut impl Rng,
) -> Result<Vec<BBox>> {
    if class_index >= label.m() {
        return Err(Error::InvalidInput(format!(
            "class {class_index} not in scene with {} classes",
            label.m()
        )));
    }
    let counted: Vec<usize> = label
        .instances
        .iter()
        .enumerate()
        .filter(|(_, r)| r.class_index == class_index && r.counted)
        .map(|(i, _)| i)
        .collect();
    let chosen: Vec<usize> = match mode {
        ExemplarMode::Train => {
            let pool: Vec<usize> = counted
                .into_iter()
                .filter(|&i| label.instances[i].occlusion < TRAIN_EXEMPLAR_MAX_OCCLUSION)
                .collect();
            if pool.len() < k {
                return Err(Error::InvalidInput(format!(
                    "class {class_index} has {} instances under {TRAIN_EXEMPLAR_MAX_OCCLUSION} occlusion, need {k}",
                    pool.len()
                )));
            }
            let mut picks: Vec<usize> = index::sample(rng, pool.len(), k).into_iter().map(|j| pool[j]).collect();
            picks.sort_unstable();
            picks
        }
        ExemplarMode::Eval => {
            if counted.len() < k {
                return Err(Error::InvalidInput(format!(
                    "class {class_index} has {} counted instances, need {k}",
                    counted.len()
                )));
            }
            let mut order = counted;
            order.sort_by(|&a, &b| {
                label.instances[a]
                    .occlusion
                    .total_cmp(&label.instances[b].occlusion)
                    .then(a.cmp(&b))
            });
            order.truncate(k);
            order
        }
    };
    Ok(chosen.into_iter().map(|i| label.instances[i].bbox).collect())
}
