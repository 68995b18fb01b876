//! Correspondence between unguided predictions and ground-truth labels.
//!
//! Each of the `m_hat` prediction heads emits a density map. During training
//! and evaluation the `m` labels are matched to distinct heads by minimising
//! the summed [`normalized_cost`]; the loss is then the L1 distance over the
//! matched pairs only. Unmatched heads are free to count anything.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::assignment::{solve_lap, Assignment, CostMatrix};
use crate::densitymap::{
    combine_max, combine_mean, combine_sum, integrate, l1_distance, normalized_cost, DensityMap,
};
use crate::error::{Error, Result};

/// Heads used more often than this fraction of all label matches count as utilized.
pub const DEFAULT_UTILIZATION_THRESHOLD: f64 = 0.004;

/// Output of the prediction heads for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    maps: Vec<DensityMap>,
    counts: Vec<f64>,
    heads: Vec<usize>,
}

impl PredictionSet {
    /// Wraps head outputs; head indices are the positions in `maps`.
    pub fn new(maps: Vec<DensityMap>) -> Result<Self> {
        let heads = (0..maps.len()).collect();
        Self::with_heads(maps, heads)
    }

    pub fn with_heads(maps: Vec<DensityMap>, heads: Vec<usize>) -> Result<Self> {
        if heads.len() != maps.len() {
            return Err(Error::Dimension(format!(
                "{} maps but {} head indices",
                maps.len(),
                heads.len()
            )));
        }
        if let Some(first) = maps.first() {
            if maps.iter().any(|m| m.dims() != first.dims()) {
                return Err(Error::Dimension("prediction maps differ in size".into()));
            }
        }
        let counts = maps.iter().map(integrate).collect();
        Ok(Self { maps, counts, heads })
    }

    pub fn empty() -> Self {
        Self {
            maps: Vec::new(),
            counts: Vec::new(),
            heads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn maps(&self) -> &[DensityMap] {
        &self.maps
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    /// Originating head of each entry (the representative head after merging).
    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn into_maps(self) -> Vec<DensityMap> {
        self.maps
    }
}

/// Matched L1 loss for one image together with the matching it used.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedLoss {
    pub assignment: Assignment,
    pub loss: f64,
    /// L1 distance of each pair, in the order of `assignment.pairs`.
    pub per_pair_losses: Vec<f64>,
}

fn check_inputs(gts: &[DensityMap], preds: &PredictionSet) -> Result<()> {
    if gts.is_empty() {
        return Err(Error::InvalidInput("at least one ground-truth map is required".into()));
    }
    if gts.len() > preds.len() {
        return Err(Error::Dimension(format!(
            "{} labels exceed the {} available predictions",
            gts.len(),
            preds.len()
        )));
    }
    let dims = gts[0].dims();
    if gts.iter().any(|g| g.dims() != dims) || preds.maps.iter().any(|p| p.dims() != dims) {
        return Err(Error::Dimension("ground-truth and prediction maps differ in size".into()));
    }
    Ok(())
}

/// `m_hat x m` matrix with entry `(i, j) = normalized_cost(gts[j], preds[i])`.
pub fn build_cost_matrix(gts: &[DensityMap], preds: &PredictionSet) -> Result<CostMatrix> {
    check_inputs(gts, preds)?;
    let mut values = Vec::with_capacity(preds.len() * gts.len());
    for pred in &preds.maps {
        for gt in gts {
            values.push(normalized_cost(gt, pred)?);
        }
    }
    CostMatrix::new(preds.len(), gts.len(), values)
}

/// Optimal label-to-head matching on normalized cost.
pub fn match_predictions(gts: &[DensityMap], preds: &PredictionSet) -> Result<Assignment> {
    solve_lap(&build_cost_matrix(gts, preds)?)
}

/// L1 loss over the pairs of a given assignment.
pub fn loss_for_assignment(
    gts: &[DensityMap],
    preds: &PredictionSet,
    assignment: &Assignment,
) -> Result<MatchedLoss> {
    let per_pair_losses = assignment
        .pairs
        .iter()
        .map(|&(head, label)| l1_distance(&gts[label], &preds.maps[head]))
        .collect::<Result<Vec<_>>>()?;
    Ok(MatchedLoss {
        assignment: assignment.clone(),
        loss: per_pair_losses.iter().sum(),
        per_pair_losses,
    })
}

/// Matches on normalized cost, then sums L1 over matched pairs.
pub fn matched_loss(gts: &[DensityMap], preds: &PredictionSet) -> Result<MatchedLoss> {
    let assignment = match_predictions(gts, preds)?;
    loss_for_assignment(gts, preds, &assignment)
}

/// `(y, y_hat)` per ground-truth label, using the same matching as training.
pub fn evaluate_matched(gts: &[DensityMap], preds: &PredictionSet) -> Result<Vec<(f64, f64)>> {
    let assignment = match_predictions(gts, preds)?;
    Ok(counts_for_assignment(gts, preds, &assignment))
}

pub fn counts_for_assignment(
    gts: &[DensityMap],
    preds: &PredictionSet,
    assignment: &Assignment,
) -> Vec<(f64, f64)> {
    assignment
        .pairs
        .iter()
        .map(|&(head, label)| (integrate(&gts[label]), preds.counts[head]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SubclassCombine {
    #[default]
    None,
    Sum,
    Max,
}

/// Evaluation where extra heads may count sub-classes of a label.
///
/// Every unmatched head whose count reaches `zero_threshold` is attached to
/// the label it is closest to in normalized cost, provided that cost is below
/// `attach_threshold`. The matched head and its attached heads are merged
/// with `combine` before counting.
pub fn evaluate_combined(
    gts: &[DensityMap],
    preds: &PredictionSet,
    combine: SubclassCombine,
    attach_threshold: f64,
    zero_threshold: f64,
) -> Result<(Assignment, Vec<(f64, f64)>)> {
    let costs = build_cost_matrix(gts, preds)?;
    let assignment = solve_lap(&costs)?;
    if combine == SubclassCombine::None {
        let pairs = counts_for_assignment(gts, preds, &assignment);
        return Ok((assignment, pairs));
    }

    let mut groups: Vec<Vec<usize>> = assignment.pairs.iter().map(|&(h, _)| vec![h]).collect();
    for head in 0..preds.len() {
        if assignment.label_for(head).is_some() || preds.counts[head] < zero_threshold {
            continue;
        }
        let (label, cost) = (0..gts.len())
            .map(|j| (j, costs.get(head, j)))
            .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
        if cost < attach_threshold {
            groups[label].push(head);
        }
    }

    let mut pairs = Vec::with_capacity(gts.len());
    for (label, members) in groups.iter().enumerate() {
        let maps: Vec<DensityMap> = members.iter().map(|&h| preds.maps[h].clone()).collect();
        let merged = match combine {
            SubclassCombine::Sum => combine_sum(&maps)?,
            SubclassCombine::Max => combine_max(&maps)?,
            SubclassCombine::None => unreachable!(),
        };
        pairs.push((integrate(&gts[label]), integrate(&merged)));
    }
    Ok((assignment, pairs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessConfig {
    /// Predictions closer than this in normalized cost are merged.
    pub similarity_threshold: f64,
    /// Predictions counting fewer objects than this are dropped.
    pub zero_threshold: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: 0.15,
            zero_threshold: 0.5,
        }
    }
}

/// Deployment-time cleanup of raw head outputs when no labels exist.
///
/// Heads are visited by descending count (ties by head index). Heads below
/// `zero_threshold` are dropped. Each remaining head joins the first existing
/// group whose running mean map lies within `similarity_threshold`, otherwise
/// it starts a new group. Groups are returned by descending count, each
/// represented by its first (largest) head.
pub fn deployment_postprocess(
    preds: &PredictionSet,
    similarity_threshold: f64,
    zero_threshold: f64,
) -> Result<PredictionSet> {
    if !(similarity_threshold >= 0.0 && zero_threshold >= 0.0) {
        return Err(Error::InvalidInput("thresholds must be nonnegative".into()));
    }
    let mut order: Vec<usize> = (0..preds.len())
        .filter(|&i| preds.counts[i] >= zero_threshold)
        .collect();
    order.sort_by(|&a, &b| preds.counts[b].total_cmp(&preds.counts[a]).then(a.cmp(&b)));

    struct Group {
        members: Vec<usize>,
        merged: DensityMap,
    }
    let mut groups: Vec<Group> = Vec::new();
    for i in order {
        let map = &preds.maps[i];
        let mut joined = false;
        for g in groups.iter_mut() {
            if normalized_cost(&g.merged, map)? < similarity_threshold {
                g.members.push(i);
                let maps: Vec<DensityMap> = g.members.iter().map(|&m| preds.maps[m].clone()).collect();
                g.merged = combine_mean(&maps)?;
                joined = true;
                break;
            }
        }
        if !joined {
            groups.push(Group {
                members: vec![i],
                merged: map.clone(),
            });
        }
    }

    let mut out: Vec<(usize, DensityMap, f64)> = groups
        .into_iter()
        .map(|g| {
            let count = integrate(&g.merged);
            (preds.heads[g.members[0]], g.merged, count)
        })
        .filter(|(_, _, c)| *c >= zero_threshold)
        .collect();
    out.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    let (heads, maps): (Vec<usize>, Vec<DensityMap>) = out.into_iter().map(|(h, m, _)| (h, m)).unzip();
    PredictionSet::with_heads(maps, heads)
}

/// Fraction of heads matched more often than `frequency_threshold` of all
/// label matches in `match_log`.
pub fn head_utilization(match_log: &[Assignment], m_hat: usize, frequency_threshold: f64) -> Result<f64> {
    if match_log.is_empty() || m_hat == 0 {
        return Err(Error::InvalidInput("head utilization needs a nonempty match log".into()));
    }
    let mut uses = vec![0usize; m_hat];
    let mut total = 0usize;
    for a in match_log {
        for &(head, _) in &a.pairs {
            *uses.get_mut(head).ok_or_else(|| {
                Error::InvalidInput(format!("head {head} out of range for {m_hat} heads"))
            })? += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidInput("match log contains no pairs".into()));
    }
    let used = uses
        .iter()
        .filter(|&&u| u as f64 / total as f64 > frequency_threshold)
        .count();
    Ok(used as f64 / m_hat as f64)
}

/// One line of a match log (JSON lines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchLogEntry {
    pub image_id: String,
    /// `[head, class]` pairs.
    pub pairs: Vec<[usize; 2]>,
    pub total_cost: f64,
}

impl MatchLogEntry {
    pub fn new(image_id: impl Into<String>, assignment: &Assignment) -> Self {
        Self {
            image_id: image_id.into(),
            pairs: assignment.pairs.iter().map(|&(h, c)| [h, c]).collect(),
            total_cost: assignment.total_cost,
        }
    }

    pub fn assignment(&self) -> Assignment {
        Assignment {
            pairs: self.pairs.iter().map(|p| (p[0], p[1])).collect(),
            total_cost: self.total_cost,
        }
    }
}

pub fn write_match_log<W: Write>(mut out: W, entries: &[MatchLogEntry]) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_match_log<R: BufRead>(input: R) -> Result<Vec<MatchLogEntry>> {
    let mut entries = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<match log>", e))?;
        if !line.trim().is_empty() {
            entries.push(serde_json::from_str(&line)?);
        }
    }
    Ok(entries)
}
