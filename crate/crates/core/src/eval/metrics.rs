//! Ranking metrics over verification scores.
//!
//! Convention: the positive class is "different identity / attack" and the
//! score is a feature distance, so larger scores should rank positives
//! higher. AU-ROC integrates the ROC trapezoidally over distinct thresholds
//! (equivalently, tie-corrected Mann-Whitney); AU-PR uses step-wise
//! precision-recall summation.

use crate::error::{Error, Result};

fn check_two_classes(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(
            "both classes must be present to rank scores".into(),
        ));
    }
    Ok((pos, neg))
}

/// Sorted (descending score) groups of equal scores with per-group positive
/// and total counts.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for idx in order {
        let s = scores[idx];
        let p = labels[idx] as usize;
        match groups.last_mut() {
            Some((gs, gp, gn)) if *gs == s => {
                *gp += p;
                *gn += 1;
            }
            _ => groups.push((s, p, 1)),
        }
    }
    groups
}

/// Area under the ROC curve and the precision-recall curve.
pub fn auroc_aupr(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::Metric("scores and labels differ in length".into()));
    }
    let (pos, neg) = check_two_classes(labels)?;
    let groups = tie_groups(scores, labels);

    // Trapezoidal ROC over distinct thresholds; ties advance TP and FP
    // together, which is exactly the tie-corrected Mann-Whitney statistic.
    let mut auroc = 0.0f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    // Step-wise AU-PR: sum (R_k - R_{k-1}) * P_k over distinct thresholds.
    let mut aupr = 0.0f64;
    let mut prev_recall = 0.0f64;
    for &(_, gp, gn) in &groups {
        let gfp = gn - gp;
        let prev_fpr = fp as f64 / neg as f64;
        let prev_tpr = tp as f64 / pos as f64;
        tp += gp;
        fp += gfp;
        let fpr = fp as f64 / neg as f64;
        let tpr = tp as f64 / pos as f64;
        auroc += (fpr - prev_fpr) * 0.5 * (tpr + prev_tpr);

        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        aupr += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok((auroc, aupr))
}

/// ROC curve points (FPR, TPR) over distinct thresholds, from (0,0) to (1,1).
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check_two_classes(labels)?;
    let groups = tie_groups(scores, labels);
    let mut pts = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    for &(_, gp, gn) in &groups {
        tp += gp;
        fp += gn - gp;
        pts.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(pts)
}

/// Precision-recall curve points (recall, precision) over distinct
/// thresholds.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, _) = check_two_classes(labels)?;
    let groups = tie_groups(scores, labels);
    let mut pts = Vec::with_capacity(groups.len() + 1);
    let mut tp = 0usize;
    let mut total = 0usize;
    pts.push((0.0, 1.0));
    for &(_, gp, gn) in &groups {
        tp += gp;
        total += gn;
        pts.push((tp as f64 / pos as f64, tp as f64 / total as f64));
    }
    Ok(pts)
}

/// Smallest threshold among the observed scores such that the fraction of
/// genuine (same-identity) pairs scoring at or above it is at most `fpr`;
/// a genuine pair rejected as "different" is a false positive. When even the
/// maximum score would exceed the budget, returns a value just above the
/// maximum.
pub fn calibrate_threshold(scores_same: &[f64], fpr: f64) -> Result<f64> {
    if scores_same.is_empty() {
        return Err(Error::Metric("no genuine scores to calibrate on".into()));
    }
    if !(0.0..=1.0).contains(&fpr) || fpr <= 0.0 {
        return Err(Error::Metric(format!("fpr {fpr} outside (0,1]")));
    }
    let mut sorted = scores_same.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    for (k, &candidate) in sorted.iter().enumerate() {
        // Scores >= candidate, with ties collapsed to the first of the run.
        if k > 0 && sorted[k - 1] == candidate {
            continue;
        }
        let at_or_above = n - k;
        if at_or_above as f64 / n as f64 <= fpr {
            return Ok(candidate);
        }
    }
    // fpr budget below 1/n: threshold just above the maximum.
    let max = *sorted.last().unwrap();
    Ok(f64::from_bits(max.to_bits() + 1).max(max + f64::EPSILON * max.abs()))
}
