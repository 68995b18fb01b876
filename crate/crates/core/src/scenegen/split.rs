//! Writing and reading a generated split.
//!
//! ```text
//! <out>/manifest.json
//! <out>/images/<id>.png
//! <out>/labels/<id>.json
//! <out>/density/<id>_<class>.dmap   (+ .dmap.json sidecar)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{class_pools, generate_scene, mix64, ClassPool, GenConfig, SceneLabel, Split};
use crate::densitymap::{write_dmap, DmapSidecar};
use crate::error::{Error, Result};
use crate::raster::Raster;

pub const MANIFEST_VERSION: u32 = 1;

/// Candidate scenes tried per requested image when keeping only
/// single-class scenes.
const M1_CANDIDATES_PER_IMAGE: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format_version: u32,
    pub split: Split,
    pub seed: u64,
    pub n_images: usize,
    /// Only single-class scenes were kept.
    pub m1: bool,
    pub config: GenConfig,
    pub class_pool: ClassPool,
    pub image_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: Split,
    pub images: usize,
    /// Images with 1, 2, 3 and 4 classes.
    pub class_histogram: [usize; 4],
    pub mean_classes: f64,
    pub mean_instances_per_class: f64,
    pub min_count: usize,
    pub max_count: usize,
}

impl SplitSummary {
    pub fn from_labels(split: Split, labels: &[SceneLabel]) -> Self {
        let mut class_histogram = [0usize; 4];
        let (mut pairs, mut total) = (0usize, 0usize);
        let (mut min_count, mut max_count) = (usize::MAX, 0usize);
        for l in labels {
            class_histogram[(l.m() - 1).min(3)] += 1;
            for c in &l.classes {
                pairs += 1;
                total += c.count;
                min_count = min_count.min(c.count);
                max_count = max_count.max(c.count);
            }
        }
        let n = labels.len().max(1) as f64;
        Self {
            split,
            images: labels.len(),
            class_histogram,
            mean_classes: pairs as f64 / n,
            mean_instances_per_class: total as f64 / pairs.max(1) as f64,
            min_count: if pairs == 0 { 0 } else { min_count },
            max_count,
        }
    }
}

fn scene_seed(seed: u64, split: Split, index: usize) -> u64 {
    mix64(mix64(seed) ^ ((split.index() as u64 + 1) << 48) ^ index as u64)
}

fn image_id(split: Split, index: usize) -> String {
    format!("{}_{index:05}", split.name())
}

/// Generates the scenes of one split in memory. With `m1`, only scenes that
/// happen to contain a single class are kept.
pub fn generate_split_scenes(
    split: Split,
    n_images: usize,
    config: &GenConfig,
    seed: u64,
    m1: bool,
) -> Result<(ClassPool, Vec<SceneLabel>)> {
    config.validate()?;
    let pool = class_pools(seed, config.pool_sizes).swap_remove(split.index());
    let mut labels = Vec::with_capacity(n_images);
    let mut next = 0usize;
    let limit = if m1 { n_images * M1_CANDIDATES_PER_IMAGE } else { n_images };
    while labels.len() < n_images {
        if next >= limit {
            return Err(Error::Generation(format!(
                "only {} single-class scenes among {limit} candidates",
                labels.len()
            )));
        }
        let chunk = if m1 { (n_images - labels.len()) * 4 } else { n_images };
        let end = (next + chunk).min(limit);
        let batch: Vec<SceneLabel> = (next..end)
            .into_par_iter()
            .map(|i| generate_scene(scene_seed(seed, split, i), config, &pool))
            .collect::<Result<_>>()?;
        next = end;
        for scene in batch {
            if labels.len() < n_images && (!m1 || scene.m() == 1) {
                labels.push(scene);
            }
        }
    }
    for (i, l) in labels.iter_mut().enumerate() {
        l.image_id = image_id(split, i);
    }
    Ok((pool, labels))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<()> {
    let text = if pretty {
        serde_json::to_string_pretty(value)?
    } else {
        serde_json::to_string(value)?
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Generates a split and writes it under `out_dir`.
pub fn generate_split(
    split: Split,
    n_images: usize,
    config: &GenConfig,
    seed: u64,
    m1: bool,
    out_dir: &Path,
) -> Result<SplitSummary> {
    let (pool, labels) = generate_split_scenes(split, n_images, config, seed, m1)?;
    for sub in ["images", "labels", "density"] {
        create_dir(&out_dir.join(sub))?;
    }
    labels.par_iter().try_for_each(|l| -> Result<()> {
        l.image.save_png(&out_dir.join("images").join(format!("{}.png", l.image_id)))?;
        write_json(&out_dir.join("labels").join(format!("{}.json", l.image_id)), l, false)?;
        for (c, map) in l.density_maps(config.sigma)?.iter().enumerate() {
            let side = DmapSidecar {
                image_id: l.image_id.clone(),
                class_id: Some(c),
                head_index: None,
            };
            write_dmap(
                &out_dir.join("density").join(format!("{}_{c}.dmap", l.image_id)),
                map,
                Some(&side),
            )?;
        }
        Ok(())
    })?;
    let manifest = SplitManifest {
        format_version: MANIFEST_VERSION,
        split,
        seed,
        n_images,
        m1,
        config: config.clone(),
        class_pool: pool,
        image_ids: labels.iter().map(|l| l.image_id.clone()).collect(),
    };
    write_json(&out_dir.join("manifest.json"), &manifest, true)?;
    Ok(SplitSummary::from_labels(split, &labels))
}

/// Reads one label file and its image.
pub fn read_label(split_dir: &Path, image_id: &str) -> Result<SceneLabel> {
    let path: PathBuf = split_dir.join("labels").join(format!("{image_id}.json"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut label: SceneLabel =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    label.image = Raster::load_png(&split_dir.join("images").join(format!("{image_id}.png")))?;
    Ok(label)
}

/// Loads a split written by [`generate_split`].
pub fn load_split(split_dir: &Path) -> Result<(SplitManifest, Vec<SceneLabel>)> {
    let path = split_dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: SplitManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::format(
            &path,
            format!("unsupported manifest version {}", manifest.format_version),
        ));
    }
    let labels = manifest
        .image_ids
        .par_iter()
        .map(|id| read_label(split_dir, id))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densitymap::{integrate, read_dmap};
    use std::collections::HashSet;

    fn small() -> GenConfig {
        GenConfig {
            instances_max: 30,
            ..Default::default()
        }
    }

    #[test]
    fn write_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let s = generate_split(Split::Val, 6, &cfg, 3, false, dir.path()).unwrap();
        assert_eq!(s.images, 6);
        let (manifest, labels) = load_split(dir.path()).unwrap();
        assert_eq!(manifest.image_ids.len(), 6);
        let (_, fresh) = generate_split_scenes(Split::Val, 6, &cfg, 3, false).unwrap();
        assert_eq!(labels, fresh);
        let (map, side) = read_dmap(&dir.path().join("density").join("val_00000_0.dmap")).unwrap();
        assert_eq!(side.unwrap().class_id, Some(0));
        assert!((integrate(&map) - labels[0].classes[0].count as f64).abs() < 1e-3);
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_split(Split::Test, 4, &small(), 11, false, a.path()).unwrap();
        generate_split(Split::Test, 4, &small(), 11, false, b.path()).unwrap();
        for f in ["manifest.json", "labels/test_00002.json", "images/test_00003.png", "density/test_00001_0.dmap"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn splits_draw_from_disjoint_classes() {
        let cfg = small();
        let seeds = |split| -> HashSet<u64> {
            let (_, labels) = generate_split_scenes(split, 10, &cfg, 5, false).unwrap();
            labels.iter().flat_map(|l| l.classes.iter().map(|c| c.class_seed)).collect()
        };
        let (tr, va, te) = (seeds(Split::Train), seeds(Split::Val), seeds(Split::Test));
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
    }

    #[test]
    fn m1_keeps_single_class_scenes() {
        let (_, labels) = generate_split_scenes(Split::Train, 8, &small(), 2, true).unwrap();
        assert_eq!(labels.len(), 8);
        assert!(labels.iter().all(|l| l.m() == 1));
    }
}
