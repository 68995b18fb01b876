//! Finding examples of what each prediction counted.
//!
//! Seed points are pixels where one density map is high and every other map
//! is low. Among such points the selection spreads out in feature space, and
//! each seed grows into a region by thresholded flood fill on its density.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::densitymap::DensityMap;
use crate::error::{Error, Result};
use crate::matching::PredictionSet;
use crate::raster::{BBox, Raster};
use crate::scenegen::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscoveryConfig {
    pub n_per_head: usize,
    /// Candidates must score above this fraction of the best score.
    pub relative_floor: f64,
    /// Region pixels keep at least this fraction of the seed density.
    pub peak_fraction: f64,
    /// Padding added around each region box, in pixels.
    pub margin: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            n_per_head: 3,
            relative_floor: 0.25,
            peak_fraction: 0.35,
            margin: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedPoint {
    pub x: usize,
    pub y: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub bbox: BBox,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub head_index: usize,
    pub count: f64,
    pub seed_points: Vec<SeedPoint>,
    pub regions: Vec<Region>,
    /// Fewer seeds were found than requested.
    pub short: bool,
    #[serde(skip)]
    pub crops: Vec<Raster>,
}

/// `target - max(others)` per pixel.
pub fn seed_scores(target: &DensityMap, others: &[DensityMap]) -> Result<Vec<f64>> {
    let mut score = target.values().to_vec();
    for o in others {
        if o.dims() != target.dims() {
            return Err(Error::Dimension(format!(
                "density maps differ in size: {:?} vs {:?}",
                o.dims(),
                target.dims()
            )));
        }
    }
    if !others.is_empty() {
        for (k, s) in score.iter_mut().enumerate() {
            let max_other = others.iter().map(|o| o.values()[k]).fold(f64::NEG_INFINITY, f64::max);
            *s -= max_other;
        }
    }
    Ok(score)
}

/// Local maxima of `score` over the 8-neighbourhood, in raster order. On a
/// plateau only the first pixel in raster order qualifies.
fn local_maxima(score: &[f64], h: usize, w: usize, floor: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = score[y * w + x];
            if v <= floor {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    let earlier = n < y * w + x;
                    if score[n] > v || (earlier && score[n] == v) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                out.push(y * w + x);
            }
        }
    }
    out
}

fn feature_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Seeds for one prediction.
///
/// Candidates are local maxima of `target - max(others)` that score above
/// both zero and `relative_floor` times the best score. The first seed is the
/// best-scoring candidate; each further seed maximises its smallest feature
/// distance to those already chosen. Ties go to the earlier pixel in raster
/// order. Returns fewer than `n_points` seeds when candidates run out.
pub fn find_seed_points(
    target: &DensityMap,
    others: &[DensityMap],
    features: &Raster,
    n_points: usize,
    relative_floor: f64,
) -> Result<Vec<SeedPoint>> {
    if n_points == 0 {
        return Err(Error::InvalidInput("n_points must be at least 1".into()));
    }
    let (h, w) = target.dims();
    let score = seed_scores(target, others)?;
    let best = score.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(best > 0.0) {
        return Ok(Vec::new());
    }
    let floor = (relative_floor * best).max(0.0);
    let candidates = local_maxima(&score, h, w, floor);
    let feats: Vec<Vec<f64>> = candidates
        .iter()
        .map(|&k| features.sample_scaled((k % w) as f64, (k / w) as f64, h, w))
        .collect();

    let mut chosen: Vec<usize> = Vec::new();
    // Smallest distance from each candidate to the chosen set.
    let mut nearest = vec![f64::INFINITY; candidates.len()];
    while chosen.len() < n_points.min(candidates.len()) {
        let mut pick: Option<usize> = None;
        for c in 0..candidates.len() {
            if chosen.contains(&c) {
                continue;
            }
            let better = match pick {
                None => true,
                Some(p) if chosen.is_empty() => score[candidates[c]] > score[candidates[p]],
                Some(p) => nearest[c] > nearest[p],
            };
            if better {
                pick = Some(c);
            }
        }
        let p = pick.expect("unchosen candidate remains");
        chosen.push(p);
        for c in 0..candidates.len() {
            nearest[c] = nearest[c].min(feature_distance(&feats[c], &feats[p]));
        }
    }
    Ok(chosen
        .into_iter()
        .map(|c| {
            let k = candidates[c];
            SeedPoint {
                x: k % w,
                y: k / w,
                score: score[k],
            }
        })
        .collect())
}

/// Connected (4-neighbour) pixels around `seed` whose density is at least
/// `peak_fraction` of the seed's, with a box padded by `margin`.
pub fn extract_region(
    image: &Raster,
    density: &DensityMap,
    seed: (usize, usize),
    peak_fraction: f64,
    margin: usize,
) -> Result<Region> {
    let (h, w) = density.dims();
    if (image.height(), image.width()) != (h, w) {
        return Err(Error::Dimension(format!(
            "image is {}x{}, density is {h}x{w}",
            image.height(),
            image.width()
        )));
    }
    let (sx, sy) = seed;
    if sx >= w || sy >= h {
        return Err(Error::InvalidInput(format!("seed ({sx}, {sy}) outside {h}x{w} map")));
    }
    if !(peak_fraction > 0.0 && peak_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("peak fraction {peak_fraction} outside (0, 1)")));
    }
    let peak = density.get(sy, sx);
    if !(peak > 0.0) {
        return Err(Error::InvalidInput(format!("seed ({sx}, {sy}) has zero density")));
    }
    let threshold = peak_fraction * peak;
    let mut inside = vec![false; h * w];
    let mut queue = VecDeque::from([(sx, sy)]);
    inside[sy * w + sx] = true;
    let mut bbox = [sx, sy, sx + 1, sy + 1];
    while let Some((x, y)) = queue.pop_front() {
        bbox = [bbox[0].min(x), bbox[1].min(y), bbox[2].max(x + 1), bbox[3].max(y + 1)];
        let mut visit = |nx: usize, ny: usize| {
            let k = ny * w + nx;
            if !inside[k] && density.get(ny, nx) >= threshold {
                inside[k] = true;
                queue.push_back((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < w {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < h {
            visit(x, y + 1);
        }
    }
    let indices: Vec<usize> = (0..h * w).filter(|&k| inside[k]).collect();
    let bbox = [
        bbox[0].saturating_sub(margin),
        bbox[1].saturating_sub(margin),
        (bbox[2] + margin).min(w),
        (bbox[3] + margin).min(h),
    ];
    Ok(Region {
        bbox,
        mask: Mask::from_sorted(&indices),
    })
}

/// One example set per prediction, in prediction order.
pub fn discover_examples(
    image: &Raster,
    preds: &PredictionSet,
    features: &Raster,
    config: &DiscoveryConfig,
) -> Result<Vec<ExampleSet>> {
    let maps = preds.maps();
    (0..preds.len())
        .map(|i| {
            let others: Vec<DensityMap> =
                maps.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, m)| m.clone()).collect();
            let seeds = find_seed_points(&maps[i], &others, features, config.n_per_head, config.relative_floor)?;
            let mut regions = Vec::with_capacity(seeds.len());
            let mut crops = Vec::with_capacity(seeds.len());
            for s in &seeds {
                let region = extract_region(image, &maps[i], (s.x, s.y), config.peak_fraction, config.margin)?;
                crops.push(image.crop(region.bbox)?);
                regions.push(region);
            }
            Ok(ExampleSet {
                head_index: preds.heads()[i],
                count: preds.counts()[i],
                short: seeds.len() < config.n_per_head,
                seed_points: seeds,
                regions,
                crops,
            })
        })
        .collect()
}
