//! Training-facing total loss: focal classification, IoU-threshold anchor
//! matching, and the weighted combination with the Bhattacharyya regression
//! loss.
//!
//! Class score vectors have `n_cls + 1` entries; the extra last entry is the
//! background class. Ground-truth labels index the foreground classes
//! `0..n_cls` directly.

use crate::divergence::{bd_loss, DivergenceConfig};
use crate::error::{Error, Result};
use crate::gaussian::{gaussian_for_pair, SquareLikePolicy};
use crate::geometry::{rotated_iou, ObbBox};

/// Probability clamp applied before taking logs in the focal loss.
pub const PROB_EPS: f64 = 1e-7;

/// A batch of predicted anchors with per-anchor class probabilities.
#[derive(Debug, Clone)]
pub struct AnchorBatch {
    pub anchors: Vec<ObbBox>,
    /// One probability vector per anchor, length `n_cls + 1` (background last).
    pub class_scores: Vec<Vec<f64>>,
}

/// Ground-truth boxes with foreground class labels in `0..n_cls`.
#[derive(Debug, Clone)]
pub struct GroundTruthSet {
    pub boxes: Vec<ObbBox>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalLossConfig {
    /// Weight of the regression term.
    pub lambda: f64,
    /// An anchor is positive when its best IoU exceeds this.
    pub pos_iou_thresh: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
}

impl Default for TotalLossConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            pos_iou_thresh: 0.5,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
        }
    }
}

/// Per-anchor contribution to the total loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorLossTerm {
    pub anchor: usize,
    /// Matched ground-truth index, `None` for background anchors.
    pub matched_gt: Option<usize>,
    pub focal: f64,
    /// Unweighted regression loss; zero for background anchors.
    pub regression: f64,
}

/// Total loss with its classification/regression split.
#[derive(Debug, Clone)]
pub struct TotalLoss {
    /// `(classification + lambda * regression) / max(n_pos, 1)`.
    pub total: f64,
    /// Sum of focal terms over all anchors (not normalized).
    pub classification: f64,
    /// Sum of regression losses over positive anchors (unweighted).
    pub regression: f64,
    pub n_pos: usize,
    pub per_anchor: Vec<AnchorLossTerm>,
}

/// Sums in a canonical order (sorted, then pairwise), so the result does not
/// depend on the input order and is reproducible across thread counts.
pub(crate) fn stable_sum(values: &[f64]) -> f64 {
    fn pairwise(xs: &[f64]) -> f64 {
        match xs.len() {
            0 => 0.0,
            1 => xs[0],
            n => {
                let mid = n / 2;
                pairwise(&xs[..mid]) + pairwise(&xs[mid..])
            }
        }
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    pairwise(&sorted)
}

/// Assigns each anchor to the ground truth with the highest rotated IoU,
/// keeping only matches strictly above the positive threshold. Ties go to
/// the lowest ground-truth index. Empty ground truth means all background.
pub fn match_anchors(
    anchors: &AnchorBatch,
    gts: &GroundTruthSet,
    cfg: &TotalLossConfig,
) -> Vec<Option<usize>> {
    anchors
        .anchors
        .iter()
        .map(|anchor| {
            let mut best: Option<(usize, f64)> = None;
            for (j, gt) in gts.boxes.iter().enumerate() {
                let iou = rotated_iou(anchor, gt);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            best.filter(|&(_, iou)| iou > cfg.pos_iou_thresh).map(|(j, _)| j)
        })
        .collect()
}

/// Focal loss `-alpha_t (1 - p_t)^gamma ln(p_t)` for one score vector.
///
/// `alpha_t` is `focal_alpha` for foreground classes and `1 - focal_alpha`
/// for the background class (the last score entry). The probability is
/// clamped to `[PROB_EPS, 1 - PROB_EPS]`, so a zero score never blows up.
pub fn focal_loss(scores: &[f64], true_class: usize, cfg: &TotalLossConfig) -> f64 {
    let p_t = scores[true_class].clamp(PROB_EPS, 1.0 - PROB_EPS);
    let alpha_t = if true_class + 1 == scores.len() {
        1.0 - cfg.focal_alpha
    } else {
        cfg.focal_alpha
    };
    -alpha_t * (1.0 - p_t).powf(cfg.focal_gamma) * p_t.ln()
}

fn validate_batch(anchors: &AnchorBatch, gts: &GroundTruthSet) -> Result<usize> {
    if anchors.class_scores.len() != anchors.anchors.len() {
        return Err(Error::InvalidConfig(format!(
            "{} anchors but {} score vectors",
            anchors.anchors.len(),
            anchors.class_scores.len()
        )));
    }
    let n_scores = match anchors.class_scores.first() {
        Some(s) => s.len(),
        None => return Ok(0),
    };
    if n_scores < 2 || anchors.class_scores.iter().any(|s| s.len() != n_scores) {
        return Err(Error::InvalidConfig(
            "score vectors must all have length n_cls + 1 (>= 2)".into(),
        ));
    }
    if gts.labels.len() != gts.boxes.len() {
        return Err(Error::InvalidConfig(format!(
            "{} gt boxes but {} labels",
            gts.boxes.len(),
            gts.labels.len()
        )));
    }
    // Labels index foreground classes only.
    if gts.labels.iter().any(|&l| l + 1 >= n_scores) {
        return Err(Error::InvalidConfig(
            "gt label out of range for the score vector width".into(),
        ));
    }
    Ok(n_scores)
}

/// Total detector loss over an anchor batch:
/// focal over all anchors plus `lambda` times the Bhattacharyya regression
/// loss over positive anchors, normalized by the positive count.
///
/// With no positive anchors the divisor is 1 and the regression term is
/// zero, so background-only batches stay finite.
pub fn total_loss(
    anchors: &AnchorBatch,
    gts: &GroundTruthSet,
    policy: &SquareLikePolicy,
    dcfg: &DivergenceConfig,
    cfg: &TotalLossConfig,
) -> Result<TotalLoss> {
    let n_scores = validate_batch(anchors, gts)?;
    let background = n_scores.saturating_sub(1);
    let assignment = match_anchors(anchors, gts, cfg);

    let mut per_anchor = Vec::with_capacity(anchors.anchors.len());
    for (i, matched_gt) in assignment.iter().copied().enumerate() {
        let true_class = matched_gt.map_or(background, |j| gts.labels[j]);
        let focal = focal_loss(&anchors.class_scores[i], true_class, cfg);
        let regression = match matched_gt {
            Some(j) => {
                let (p, t) = gaussian_for_pair(&anchors.anchors[i], &gts.boxes[j], policy)?;
                bd_loss(&p, &t, dcfg)?
            }
            None => 0.0,
        };
        per_anchor.push(AnchorLossTerm {
            anchor: i,
            matched_gt,
            focal,
            regression,
        });
    }

    let focal_terms: Vec<f64> = per_anchor.iter().map(|t| t.focal).collect();
    let reg_terms: Vec<f64> = per_anchor
        .iter()
        .filter(|t| t.matched_gt.is_some())
        .map(|t| t.regression)
        .collect();
    let classification = stable_sum(&focal_terms);
    let regression = stable_sum(&reg_terms);
    let n_pos = reg_terms.len();
    let divisor = n_pos.max(1) as f64;
    Ok(TotalLoss {
        total: (classification + cfg.lambda * regression) / divisor,
        classification,
        regression,
        n_pos,
        per_anchor,
    })
}
