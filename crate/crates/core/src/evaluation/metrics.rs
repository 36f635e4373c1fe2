use crate::error::{Error, Result};

/// Receiver operating characteristic from a descending threshold sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Roc {
    /// `(fpr, tpr)` points from (0,0) to (1,1), one per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::invalid(format!("score {i} is NaN")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "need both classes, got {pos} positives and {neg} negatives"
        )));
    }
    Ok((pos, neg))
}

/// ROC and its area. Equal scores form one threshold group, which makes the
/// trapezoid area identical to `P(s₁ > s₀) + ½·P(s₁ = s₀)`. The area is
/// accumulated in integers and divided once.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<Roc> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    // twice the area in units of one (positive, negative) pair
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut dtp, mut dfp) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                dtp += 1;
            } else {
                dfp += 1;
            }
            i += 1;
        }
        area2 += dfp as u128 * (2 * tp as u128 + dtp as u128);
        tp += dtp;
        fp += dfp;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = area2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(Roc {
        points,
        auc,
        positives: pos,
        negatives: neg,
    })
}

/// Area under a polyline by the trapezoid rule.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if tp == 0 || denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// F1 of "score ≥ threshold" against the positive labels.
pub fn f1_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    class_counts(scores, labels)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Sweep {
    /// `(threshold, f1)` at `k/(n+1)` for `k = 1..=n`.
    pub curve: Vec<(f64, f64)>,
    /// First threshold with the highest F1.
    pub best: (f64, f64),
}

/// F1 over `n` evenly spaced thresholds in (0, 1).
pub fn f1_sweep(scores: &[f64], labels: &[bool], n: usize) -> Result<F1Sweep> {
    let (pos, _) = class_counts(scores, labels)?;
    if n == 0 {
        return Err(Error::invalid("sweep needs at least one threshold"));
    }
    let mut pos_scores: Vec<f64> = Vec::with_capacity(pos);
    let mut neg_scores: Vec<f64> = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l {
            pos_scores.push(s);
        } else {
            neg_scores.push(s);
        }
    }
    pos_scores.sort_unstable_by(f64::total_cmp);
    neg_scores.sort_unstable_by(f64::total_cmp);
    let at_or_above = |v: &[f64], t: f64| v.len() - v.partition_point(|&s| s < t);
    let mut curve = Vec::with_capacity(n);
    let mut best = (0.0, -1.0);
    for k in 1..=n {
        let t = k as f64 / (n + 1) as f64;
        let tp = at_or_above(&pos_scores, t);
        let fp = at_or_above(&neg_scores, t);
        let f1 = f1_from_counts(tp, fp, pos - tp);
        if f1 > best.1 {
            best = (t, f1);
        }
        curve.push((t, f1));
    }
    Ok(F1Sweep { curve, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabulated_auc() {
        let r = roc_auc(&[0.4, 0.6, 0.5, 0.7], &[false, false, true, true]).unwrap();
        assert_eq!(r.auc, 0.75);
        assert_eq!(roc_auc(&[0.1, 0.9], &[false, true]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[0.9, 0.1], &[false, true]).unwrap().auc, 0.0);
        assert_eq!(roc_auc(&[0.5; 6], &[true, false, true, false, false, false]).unwrap().auc, 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(f1_at(&[0.1], &[false], 0.5), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_at(&[0.9, 0.1], &[true, false], 0.5).unwrap(), 1.0);
        let f = f1_at(&[1.0; 4], &[true, true, false, false], 0.5).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1_at(&[0.1, 0.9], &[true, false], 0.5).unwrap(), 0.0);
        let s = f1_sweep(&[0.2, 0.8], &[false, true], 99).unwrap();
        assert_eq!(s.curve.len(), 99);
        assert_eq!(s.best.1, 1.0);
        assert!((s.curve[49].0 - 0.5).abs() < 1e-12);
    }
}
