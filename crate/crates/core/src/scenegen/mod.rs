//! Procedural multi-class scenes with per-instance occlusion labels.
//!
//! Classes are 2D textured outlines identified by a seed. Instances are
//! dropped one after another, so later instances hide earlier ones, and each
//! instance records how much of it remains visible.

mod exemplar;
mod scene;
mod shapes;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use exemplar::{sample_exemplar_boxes, ExemplarMode, TRAIN_EXEMPLAR_MAX_OCCLUSION};
pub use scene::{
    class_count_distribution, compose, generate_scene, InstanceRecord, Lighting, Mask, Placement,
    SceneClass, SceneLabel,
};
pub use shapes::{ClassSpec, ShapeKind, Texture};
pub use split::{
    generate_split, generate_split_scenes, load_split, read_label, SplitManifest, SplitSummary,
    MANIFEST_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

/// splitmix64 finalizer. A bijection on `u64`, so distinct inputs give
/// distinct outputs.
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPool {
    pub split: Split,
    pub seeds: Vec<u64>,
}

/// One pool of class seeds per split, in train/val/test order. Seeds are
/// images of consecutive integers under [`mix64`], so no seed is shared.
pub fn class_pools(seed: u64, sizes: [usize; 3]) -> Vec<ClassPool> {
    let base = mix64(seed);
    let mut next = 0u64;
    Split::ALL
        .iter()
        .zip(sizes)
        .map(|(&split, n)| {
            let seeds = (0..n)
                .map(|_| {
                    next += 1;
                    mix64(base.wrapping_add(next))
                })
                .collect();
            ClassPool { split, seeds }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub width: usize,
    pub height: usize,
    pub classes_min: usize,
    pub classes_max: usize,
    /// Target mean number of classes per image.
    pub mean_classes: f64,
    pub instances_min: usize,
    pub instances_max: usize,
    /// Clamp range for a class's per-scene nominal size, in pixels.
    pub size_min: f64,
    pub size_max: f64,
    /// Fraction of the frame the instances would cover if laid side by side;
    /// sets the nominal size from the instance total.
    pub coverage: f64,
    pub occlusion_limit: f64,
    pub sigma: f64,
    pub max_retries: usize,
    /// Class pool sizes for train, val and test.
    pub pool_sizes: [usize; 3],
    pub illumination_jitter: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            classes_min: 1,
            classes_max: 4,
            mean_classes: 1.75,
            instances_min: 1,
            instances_max: 300,
            size_min: 3.0,
            size_max: 16.0,
            coverage: 0.35,
            occlusion_limit: 0.7,
            sigma: crate::densitymap::DEFAULT_SIGMA,
            max_retries: 20,
            pool_sizes: [287, 37, 19],
            illumination_jitter: 0.2,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.width < 8 || self.height < 8 {
            return fail(format!("image must be at least 8x8, got {}x{}", self.height, self.width));
        }
        if !(1 <= self.classes_min && self.classes_min <= self.classes_max && self.classes_max <= 4) {
            return fail(format!(
                "class range {}..={} must lie within 1..=4",
                self.classes_min, self.classes_max
            ));
        }
        if !(self.mean_classes >= self.classes_min as f64 && self.mean_classes <= self.classes_max as f64) {
            return fail(format!(
                "mean class count {} outside {}..={}",
                self.mean_classes, self.classes_min, self.classes_max
            ));
        }
        if !(1 <= self.instances_min && self.instances_min <= self.instances_max && self.instances_max <= 300) {
            return fail(format!(
                "instance range {}..={} must lie within 1..=300",
                self.instances_min, self.instances_max
            ));
        }
        if !(self.size_min >= 1.0 && self.size_min <= self.size_max && self.size_max.is_finite()) {
            return fail(format!("bad size range {}..{}", self.size_min, self.size_max));
        }
        if !(self.coverage > 0.0 && self.coverage.is_finite()) {
            return fail(format!("coverage must be positive, got {}", self.coverage));
        }
        if !(0.0..=1.0).contains(&self.occlusion_limit) {
            return fail(format!("occlusion limit {} outside [0, 1]", self.occlusion_limit));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(0.0..0.9).contains(&self.illumination_jitter) {
            return fail(format!("illumination jitter {} outside [0, 0.9)", self.illumination_jitter));
        }
        if self.pool_sizes.iter().any(|&n| n < self.classes_max) {
            return fail(format!(
                "every class pool needs at least {} classes, got {:?}",
                self.classes_max, self.pool_sizes
            ));
        }
        Ok(())
    }
}
