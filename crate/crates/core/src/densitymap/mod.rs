//! Density rasters and the algebra on them.
//!
//! A [`DensityMap`] is a nonnegative `height x width` raster whose sum is a
//! count. Values are held in `f64` so that integrating a map with hundreds of
//! unit-mass kernels reproduces the instance count to machine precision.

mod file;

pub use file::{read_dmap, write_dmap, DmapSidecar, DMAP_HEADER_LEN, DMAP_MAGIC};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default Gaussian width (pixels) for pseudo-density kernels at 64x64.
pub const DEFAULT_SIGMA: f64 = 2.0;

/// Kernels are evaluated out to this many standard deviations.
const KERNEL_RADIUS_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

/// Object center in pixel coordinates; `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceCenter {
    pub x: f64,
    pub y: f64,
}

impl InstanceCenter {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// The pixel `(row, col)` containing this center.
    pub fn pixel(&self) -> (usize, usize) {
        (self.y.floor() as usize, self.x.floor() as usize)
    }
}

impl DensityMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    /// Wraps a row-major buffer, rejecting negative or non-finite values.
    pub fn from_vec(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Dimension(format!(
                "{height}x{width} map needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "density values must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Builds a map from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("ragged density rows".into()));
        }
        Self::from_vec(rows.len(), width, rows.concat())
    }

    /// Map with a single nonzero pixel.
    pub fn one_hot(height: usize, width: usize, row: usize, col: usize, value: f64) -> Self {
        let mut map = Self::zeros(height, width);
        map.values[row * width + col] = value;
        map
    }

    pub fn uniform(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Location `(row, col)` of the largest value, first in raster order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension(format!(
                "density maps differ in size: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// Count encoded by a density map: the sum over all pixels.
pub fn integrate(map: &DensityMap) -> f64 {
    map.values.iter().sum()
}

/// Ground-truth density with a unit-mass Gaussian kernel per center.
///
/// Each kernel is placed on the pixel containing its center, truncated to the
/// raster and to a `4 sigma` window, then rescaled so its own mass is exactly
/// one. The map therefore integrates to `centers.len()`.
pub fn pseudo_density(
    centers: &[InstanceCenter],
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<DensityMap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    let mut map = DensityMap::zeros(height, width);
    let radius = (KERNEL_RADIUS_SIGMAS * sigma).ceil() as isize;
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let mut kernel = Vec::new();

    for c in centers {
        if !(c.x >= 0.0 && c.y >= 0.0 && c.x < width as f64 && c.y < height as f64) {
            return Err(Error::InvalidInput(format!(
                "center ({}, {}) lies outside the {height}x{width} raster",
                c.x, c.y
            )));
        }
        let (row, col) = c.pixel();
        let (row, col) = (row as isize, col as isize);
        let r0 = (row - radius).max(0);
        let r1 = (row + radius).min(height as isize - 1);
        let c0 = (col - radius).max(0);
        let c1 = (col + radius).min(width as isize - 1);

        kernel.clear();
        let mut mass = 0.0;
        for r in r0..=r1 {
            for cc in c0..=c1 {
                let d2 = ((r - row).pow(2) + (cc - col).pow(2)) as f64;
                let k = (-d2 * inv_two_var).exp();
                mass += k;
                kernel.push(k);
            }
        }
        let span = (c1 - c0 + 1) as usize;
        for (i, k) in kernel.iter().enumerate() {
            let r = r0 as usize + i / span;
            let cc = c0 as usize + i % span;
            map.values[r * width + cc] += k / mass;
        }
    }
    Ok(map)
}

/// Map divided by its L2 norm; the zero map normalizes to itself.
fn l2_normalized(map: &DensityMap) -> Vec<f64> {
    let norm = map.l2_norm();
    if norm == 0.0 {
        vec![0.0; map.values.len()]
    } else {
        map.values.iter().map(|v| v / norm).collect()
    }
}

/// Distance between L2-normalized maps; compares where mass sits, not how
/// much of it there is. Lies in `[0, 2]` (`[0, sqrt 2]` for nonnegative maps).
pub fn normalized_cost(gt: &DensityMap, pred: &DensityMap) -> Result<f64> {
    gt.check_same_dims(pred)?;
    let a = l2_normalized(gt);
    let b = l2_normalized(pred);
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Pixel-wise L1 distance.
pub fn l1_distance(a: &DensityMap, b: &DensityMap) -> Result<f64> {
    a.check_same_dims(b)?;
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum())
}

fn combine_with(maps: &[DensityMap], op: impl Fn(f64, f64) -> f64) -> Result<DensityMap> {
    let (first, rest) = maps
        .split_first()
        .ok_or_else(|| Error::InvalidInput("cannot combine an empty list of maps".into()))?;
    let mut out = first.clone();
    for m in rest {
        out.check_same_dims(m)?;
        for (o, v) in out.values.iter_mut().zip(&m.values) {
            *o = op(*o, *v);
        }
    }
    Ok(out)
}

/// Element-wise sum of sub-class maps.
pub fn combine_sum(maps: &[DensityMap]) -> Result<DensityMap> {
    combine_with(maps, |a, b| a + b)
}

/// Element-wise maximum of sub-class maps.
pub fn combine_max(maps: &[DensityMap]) -> Result<DensityMap> {
    combine_with(maps, f64::max)
}

/// Element-wise mean, used when merging duplicate predictions.
pub fn combine_mean(maps: &[DensityMap]) -> Result<DensityMap> {
    let n = maps.len() as f64;
    Ok(combine_sum(maps)?.scaled(1.0 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn integrate_basics() {
        assert_eq!(integrate(&DensityMap::zeros(5, 7)), 0.0);
        assert!((integrate(&DensityMap::uniform(4, 6, 0.25)) - 6.0).abs() < 1e-15);
    }

    #[test]
    fn seven_centers_integrate_to_seven() {
        let centers: Vec<_> = [(1.0, 1.0), (5.5, 9.2), (30.0, 30.0), (63.9, 0.0), (0.0, 63.0), (32.0, 10.0), (32.4, 10.1)]
            .iter()
            .map(|&(x, y)| InstanceCenter::new(x, y))
            .collect();
        let map = pseudo_density(&centers, 64, 64, DEFAULT_SIGMA).unwrap();
        assert!((integrate(&map) - 7.0).abs() < 1e-9);
        assert!(map.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn empty_centers_give_zero_map() {
        let map = pseudo_density(&[], 8, 9, 2.0).unwrap();
        assert!(map.is_zero());
        assert_eq!(map.dims(), (8, 9));
    }

    #[test]
    fn single_center_peaks_at_its_pixel() {
        let map = pseudo_density(&[InstanceCenter::new(32.0, 32.0)], 64, 64, 2.0).unwrap();
        assert!((integrate(&map) - 1.0).abs() < 1e-9);
        assert_eq!(map.argmax(), (32, 32));
    }

    #[test]
    fn corner_kernel_is_renormalized_after_truncation() {
        let sigma = 2.0;
        // Independent computation: the full 4-sigma window mass vs. the
        // quarter that survives at the corner.
        let radius = 8i32;
        let g = |dr: i32, dc: i32| (-((dr * dr + dc * dc) as f64) / (2.0 * sigma * sigma)).exp();
        let full: f64 = (-radius..=radius)
            .flat_map(|r| (-radius..=radius).map(move |c| g(r, c)))
            .sum();
        let kept: f64 = (0..=radius).flat_map(|r| (0..=radius).map(move |c| g(r, c))).sum();
        assert!((kept / full - 0.36).abs() < 0.01, "corner keeps about a third of the mass");

        let map = pseudo_density(&[InstanceCenter::new(0.0, 0.0)], 32, 32, sigma).unwrap();
        assert!((integrate(&map) - 1.0).abs() < 1e-9);
        assert!((map.get(0, 0) - 1.0 / kept).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_center_rejected() {
        assert!(pseudo_density(&[InstanceCenter::new(8.0, 0.0)], 8, 8, 2.0).is_err());
        assert!(pseudo_density(&[InstanceCenter::new(-0.1, 0.0)], 8, 8, 2.0).is_err());
        assert!(pseudo_density(&[InstanceCenter::new(1.0, 1.0)], 8, 8, 0.0).is_err());
    }

    #[test]
    fn normalized_cost_cases() {
        let a = pseudo_density(&[InstanceCenter::new(3.0, 4.0)], 16, 16, 1.5).unwrap();
        assert!(normalized_cost(&a, &a).unwrap().abs() < 1e-12);
        assert!(normalized_cost(&a, &a.scaled(7.0)).unwrap().abs() < 1e-12);

        let p = DensityMap::one_hot(4, 4, 0, 0, 1.0);
        let q = DensityMap::one_hot(4, 4, 3, 2, 5.0);
        assert!((normalized_cost(&p, &q).unwrap() - 2f64.sqrt()).abs() < 1e-12);

        // A zero map normalizes to zero, so the cost is the other map's unit norm.
        let z = DensityMap::zeros(4, 4);
        assert!((normalized_cost(&p, &z).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(normalized_cost(&z, &z).unwrap(), 0.0);

        assert!(matches!(
            normalized_cost(&p, &DensityMap::zeros(4, 5)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn l1_cases() {
        let z = DensityMap::zeros(3, 5);
        let u = DensityMap::uniform(3, 5, 0.5);
        assert_eq!(l1_distance(&u, &u).unwrap(), 0.0);
        assert!((l1_distance(&z, &u).unwrap() - 7.5).abs() < 1e-12);
        let one = pseudo_density(&[InstanceCenter::new(2.0, 1.0)], 3, 5, 1.0).unwrap();
        assert!((l1_distance(&one, &z).unwrap() - integrate(&one)).abs() < 1e-12);
        assert!((l1_distance(&one, &z).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn combine_cases() {
        let three = pseudo_density(
            &[InstanceCenter::new(2.0, 2.0), InstanceCenter::new(10.0, 3.0), InstanceCenter::new(5.0, 12.0)],
            16,
            16,
            1.0,
        )
        .unwrap();
        let four = DensityMap::uniform(16, 16, 4.0 / 256.0);
        assert_eq!(combine_sum(&[three.clone()]).unwrap(), three);
        assert_eq!(combine_max(&[three.clone()]).unwrap(), three);
        assert!((integrate(&combine_sum(&[three.clone(), four.clone()]).unwrap()) - 7.0).abs() < 1e-9);

        assert!((integrate(&combine_max(&[three.clone(), three.clone()]).unwrap()) - 3.0).abs() < 1e-9);
        assert!((integrate(&combine_sum(&[three.clone(), three.clone()]).unwrap()) - 6.0).abs() < 1e-9);

        let a = DensityMap::one_hot(4, 4, 0, 0, 3.0);
        let b = DensityMap::one_hot(4, 4, 3, 3, 4.0);
        let s = combine_sum(&[a.clone(), b.clone()]).unwrap();
        let m = combine_max(&[a, b]).unwrap();
        assert_eq!(s, m);
        assert_eq!(integrate(&m), 7.0);

        assert!(combine_sum(&[]).is_err());
        assert!(combine_max(&[DensityMap::zeros(2, 2), DensityMap::zeros(2, 3)]).is_err());
    }

    fn map_strategy() -> impl Strategy<Value = DensityMap> {
        prop::collection::vec(0.0f64..1.0, 36)
            .prop_filter("nonzero", |v| v.iter().any(|&x| x > 0.0))
            .prop_map(|v| DensityMap::from_vec(6, 6, v).unwrap())
    }

    proptest! {
        #[test]
        fn integral_equals_center_count(pts in prop::collection::vec((0.0f64..24.0, 0.0f64..20.0), 0..40), sigma in 0.5f64..4.0) {
            let centers: Vec<_> = pts.iter().map(|&(x, y)| InstanceCenter::new(x, y)).collect();
            let map = pseudo_density(&centers, 20, 24, sigma).unwrap();
            prop_assert!((integrate(&map) - centers.len() as f64).abs() < 1e-9);
        }

        #[test]
        fn cost_is_scale_invariant_and_symmetric(a in map_strategy(), b in map_strategy()) {
            let base = normalized_cost(&a, &b).unwrap();
            for alpha in [0.1, 3.0, 100.0] {
                prop_assert!((normalized_cost(&a, &b.scaled(alpha)).unwrap() - base).abs() < 1e-9);
            }
            prop_assert!((normalized_cost(&b, &a).unwrap() - base).abs() < 1e-12);
            prop_assert!((0.0..=2f64.sqrt() + 1e-12).contains(&base));
        }

        #[test]
        fn max_never_exceeds_sum(a in map_strategy(), b in map_strategy()) {
            let s = combine_sum(&[a.clone(), b.clone()]).unwrap();
            let m = combine_max(&[a, b]).unwrap();
            prop_assert!(m.values().iter().zip(s.values()).all(|(x, y)| x <= y));
        }
    }
}
