//! Scene composition: drop instances in order, let later ones cover earlier
//! ones, and measure how much of each survives.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shapes::{rasterize, ClassSpec};
use super::{mix64, ClassPool, GenConfig};
use crate::densitymap::{pseudo_density, DensityMap, InstanceCenter};
use crate::error::{Error, Result};
use crate::raster::{BBox, Raster};

/// Where and how one instance is dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    /// Index into the scene's class list.
    pub class_index: usize,
    pub center: InstanceCenter,
    /// Outline diameter in pixels.
    pub size: f64,
    pub rotation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    pub background: [f64; 3],
    /// Horizontal and vertical brightness ramp across the frame.
    pub gradient: [f64; 2],
    pub brightness: f64,
    pub contrast: f64,
}

impl Default for Lighting {
    fn default() -> Self {
        Self {
            background: [0.5, 0.5, 0.5],
            gradient: [0.0, 0.0],
            brightness: 1.0,
            contrast: 1.0,
        }
    }
}

/// Visible-pixel bitmap stored as `[start, length]` runs over the row-major
/// pixel index.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mask {
    runs: Vec<[u32; 2]>,
}

impl Mask {
    /// Builds a mask from ascending pixel indices.
    pub fn from_sorted(indices: &[usize]) -> Self {
        let mut runs: Vec<[u32; 2]> = Vec::new();
        for &i in indices {
            match runs.last_mut() {
                Some(r) if (r[0] + r[1]) as usize == i => r[1] += 1,
                _ => runs.push([i as u32, 1]),
            }
        }
        Self { runs }
    }

    pub fn len(&self) -> usize {
        self.runs.iter().map(|r| r[1] as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Whether the row-major pixel index is set.
    pub fn contains(&self, index: usize) -> bool {
        let i = index as u32;
        let pos = self.runs.partition_point(|r| r[0] <= i);
        pos > 0 && i < self.runs[pos - 1][0] + self.runs[pos - 1][1]
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.runs
            .iter()
            .flat_map(|r| (r[0] as usize)..(r[0] + r[1]) as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub class_index: usize,
    pub center: InstanceCenter,
    pub size: f64,
    pub rotation: f64,
    /// Unoccluded outline clipped to the frame, `[x0, y0, x1, y1)`.
    pub bbox: BBox,
    /// Pixels of this instance visible in the final image (A0).
    pub visible_pixels: usize,
    /// Pixels it would cover unoccluded and entirely inside the frame (A1).
    pub full_pixels: usize,
    pub occlusion: f64,
    /// Whether the instance is counted (occlusion within the limit).
    pub counted: bool,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneClass {
    pub class_seed: u64,
    pub nominal_size: f64,
    /// Counted instances of this class.
    pub count: usize,
}

/// Ground truth for one generated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLabel {
    pub image_id: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub classes: Vec<SceneClass>,
    /// All dropped instances in drop (z) order, counted or not.
    pub instances: Vec<InstanceRecord>,
    #[serde(skip)]
    pub image: Raster,
}

impl SceneLabel {
    /// Number of classes present.
    pub fn m(&self) -> usize {
        self.classes.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.count).collect()
    }

    pub fn counted_instances(&self, class_index: usize) -> impl Iterator<Item = &InstanceRecord> {
        self.instances
            .iter()
            .filter(move |r| r.class_index == class_index && r.counted)
    }

    /// Pseudo-density map per class over its counted instances.
    pub fn density_maps(&self, sigma: f64) -> Result<Vec<DensityMap>> {
        (0..self.m())
            .map(|c| {
                let centers: Vec<InstanceCenter> =
                    self.counted_instances(c).map(|r| r.center).collect();
                pseudo_density(&centers, self.height, self.width, sigma)
            })
            .collect()
    }
}

/// Renders `placements` in order and measures per-instance visibility.
pub fn compose(
    width: usize,
    height: usize,
    classes: &[SceneClass],
    placements: &[Placement],
    lighting: &Lighting,
    occlusion_limit: f64,
) -> Result<SceneLabel> {
    let specs: Vec<ClassSpec> = classes.iter().map(|c| ClassSpec::from_seed(c.class_seed)).collect();
    let mut owner: Vec<Option<usize>> = vec![None; width * height];
    let mut local: Vec<(f64, f64)> = vec![(0.0, 0.0); width * height];
    let mut full = Vec::with_capacity(placements.len());
    let mut bboxes = Vec::with_capacity(placements.len());

    for (i, p) in placements.iter().enumerate() {
        let spec = specs.get(p.class_index).ok_or_else(|| {
            Error::InvalidInput(format!("placement {i} refers to unknown class {}", p.class_index))
        })?;
        let covered = rasterize(spec, p.center.x, p.center.y, p.size, p.rotation);
        if covered.is_empty() {
            return Err(Error::Generation(format!(
                "instance {i} of size {:.2} covers no pixel",
                p.size
            )));
        }
        full.push(covered.len());
        let mut bbox = [usize::MAX, usize::MAX, 0, 0];
        for c in &covered {
            if c.x < 0 || c.y < 0 || c.x >= width as isize || c.y >= height as isize {
                continue;
            }
            let (x, y) = (c.x as usize, c.y as usize);
            owner[y * width + x] = Some(i);
            local[y * width + x] = (c.u, c.v);
            bbox = [bbox[0].min(x), bbox[1].min(y), bbox[2].max(x + 1), bbox[3].max(y + 1)];
        }
        if bbox[0] == usize::MAX {
            bbox = [0, 0, 0, 0];
        }
        bboxes.push(bbox);
    }

    let mut visible: Vec<Vec<usize>> = vec![Vec::new(); placements.len()];
    for (idx, o) in owner.iter().enumerate() {
        if let Some(i) = o {
            visible[*i].push(idx);
        }
    }

    let mut image = Raster::zeros(3, height, width);
    for y in 0..height {
        for x in 0..width {
            let idx = y * width + x;
            let ramp = 1.0
                + lighting.gradient[0] * (x as f64 / width as f64 - 0.5)
                + lighting.gradient[1] * (y as f64 / height as f64 - 0.5);
            let color = match owner[idx] {
                Some(i) => {
                    let (u, v) = local[idx];
                    specs[placements[i].class_index].color_at(u, v)
                }
                None => lighting.background,
            };
            for (c, &value) in color.iter().enumerate() {
                let lit = ((value * ramp - 0.5) * lighting.contrast + 0.5) * lighting.brightness;
                image.set(c, y, x, lit.clamp(0.0, 1.0));
            }
        }
    }
    image.quantize();

    let mut counts = vec![0usize; classes.len()];
    let instances: Vec<InstanceRecord> = placements
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let a0 = visible[i].len();
            let a1 = full[i];
            let occlusion = 1.0 - a0 as f64 / a1 as f64;
            let counted = occlusion <= occlusion_limit;
            if counted {
                counts[p.class_index] += 1;
            }
            InstanceRecord {
                class_index: p.class_index,
                center: p.center,
                size: p.size,
                rotation: p.rotation,
                bbox: bboxes[i],
                visible_pixels: a0,
                full_pixels: a1,
                occlusion,
                counted,
                mask: Mask::from_sorted(&visible[i]),
            }
        })
        .collect();

    let classes = classes
        .iter()
        .zip(counts)
        .map(|(c, count)| SceneClass { count, ..c.clone() })
        .collect();
    Ok(SceneLabel {
        image_id: String::new(),
        seed: 0,
        width,
        height,
        classes,
        instances,
        image,
    })
}

/// Probabilities for class counts `lo..=hi`, geometric in shape with the
/// requested mean.
pub fn class_count_distribution(lo: usize, hi: usize, mean: f64) -> Vec<f64> {
    let n = hi - lo + 1;
    let probs = |ratio: f64| {
        let w: Vec<f64> = (0..n).map(|k| ratio.powi(k as i32)).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect::<Vec<_>>()
    };
    let mean_of = |p: &[f64]| p.iter().enumerate().map(|(k, q)| (lo + k) as f64 * q).sum::<f64>();
    if n == 1 {
        return vec![1.0];
    }
    // Mean is increasing in the ratio; bisect in log space.
    let (mut a, mut b) = (-30.0f64, 30.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mean_of(&probs(mid.exp())) < mean {
            a = mid;
        } else {
            b = mid;
        }
    }
    probs((0.5 * (a + b)).exp())
}

fn sample_from(probs: &[f64], rng: &mut impl Rng) -> usize {
    let mut t = rng.gen_range(0.0..1.0);
    for (i, p) in probs.iter().enumerate() {
        if t < *p {
            return i;
        }
        t -= p;
    }
    probs.len() - 1
}

fn random_lighting(rng: &mut impl Rng, jitter: f64) -> Lighting {
    let grey: f64 = rng.gen_range(0.15..0.85);
    let mut background = [grey; 3];
    for c in &mut background {
        *c = (*c + rng.gen_range(-0.06..0.06)).clamp(0.0, 1.0);
    }
    Lighting {
        background,
        gradient: [rng.gen_range(-jitter..=jitter), rng.gen_range(-jitter..=jitter)],
        brightness: rng.gen_range(1.0 - jitter..=1.0 + jitter),
        contrast: rng.gen_range(1.0 - jitter..=1.0 + jitter),
    }
}

/// Class count and which pool entries appear. Fixed per scene seed so that
/// retries do not favour scenes with fewer classes.
fn draw_classes(seed: u64, config: &GenConfig, pool: &ClassPool) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed));
    let probs = class_count_distribution(config.classes_min, config.classes_max, config.mean_classes);
    let m = config.classes_min + sample_from(&probs, &mut rng);
    if m > pool.seeds.len() {
        return Err(Error::Generation(format!(
            "class pool of {} cannot supply {m} classes",
            pool.seeds.len()
        )));
    }
    Ok(index::sample(&mut rng, pool.seeds.len(), m).into_vec())
}

fn try_generate(
    rng: &mut ChaCha8Rng,
    config: &GenConfig,
    pool: &ClassPool,
    picked: &[usize],
) -> Result<SceneLabel> {
    let m = picked.len();
    // Log-uniform instance counts.
    let (lo, hi) = (config.instances_min as f64, config.instances_max as f64);
    let counts: Vec<usize> = (0..m)
        .map(|_| {
            let n = rng.gen_range(lo.ln()..(hi + 1.0).ln()).exp().floor() as usize;
            n.clamp(config.instances_min, config.instances_max)
        })
        .collect();
    let total: usize = counts.iter().sum();
    let area = (config.width * config.height) as f64;
    let base = (config.coverage * area / total as f64).sqrt();

    let mut classes = Vec::with_capacity(m);
    let mut placements = Vec::with_capacity(total);
    for (c, &pool_idx) in picked.iter().enumerate() {
        let class_seed = pool.seeds[pool_idx];
        let spec = ClassSpec::from_seed(class_seed);
        let nominal = (base * rng.gen_range(0.8..1.25) * spec.size_bias)
            .clamp(config.size_min, config.size_max);
        classes.push(SceneClass {
            class_seed,
            nominal_size: nominal,
            count: 0,
        });
        for _ in 0..counts[c] {
            placements.push(Placement {
                class_index: c,
                center: InstanceCenter::new(
                    rng.gen_range(0.0..config.width as f64),
                    rng.gen_range(0.0..config.height as f64),
                ),
                size: nominal * rng.gen_range(0.5..=1.5),
                rotation: rng.gen_range(0.0..std::f64::consts::TAU),
            });
        }
    }
    placements.shuffle(rng);
    let lighting = random_lighting(rng, config.illumination_jitter);
    compose(
        config.width,
        config.height,
        &classes,
        &placements,
        &lighting,
        config.occlusion_limit,
    )
}

/// Generates one scene. Attempts whose draw leaves some class with no
/// counted instance are redrawn, up to `config.max_retries` times.
pub fn generate_scene(seed: u64, config: &GenConfig, pool: &ClassPool) -> Result<SceneLabel> {
    config.validate()?;
    let picked = draw_classes(seed, config, pool)?;
    let mut last_reason = String::new();
    for attempt in 0..config.max_retries.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(attempt as u64 + 1)));
        match try_generate(&mut rng, config, pool, &picked) {
            Ok(mut label) if label.classes.iter().all(|c| c.count >= 1) => {
                label.seed = seed;
                return Ok(label);
            }
            Ok(_) => last_reason = "a class had every instance over the occlusion limit".into(),
            Err(Error::Generation(reason)) => last_reason = reason,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Generation(format!(
        "no valid scene for seed {seed} after {} attempts: {last_reason}",
        config.max_retries
    )))
}
