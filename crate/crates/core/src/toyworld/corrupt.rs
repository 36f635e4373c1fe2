use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::ClassSet;
use crate::error::{Error, Result};
use crate::grid::{LabelMap, ProbField};
use crate::rng::{hash_unit, rng_for, stream};

/// Floor of the label smoothing applied to every predicted distribution.
pub const SMOOTHING_EPS: f32 = 0.05;

/// Upper end of the confidence drop drawn for wrong regions.
const MAX_REGION_EPS: f64 = 0.7;
/// Upper end of the confidence drop at true class boundaries.
const MAX_BOUNDARY_EPS: f64 = 0.5;

/// A simulated segmentation output.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: LabelMap,
    pub probs: ProbField,
}

const NEIGHBORS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn neighbors(h: usize, w: usize, idx: usize) -> impl Iterator<Item = usize> {
    let (r, c) = ((idx / w) as isize, (idx % w) as isize);
    NEIGHBORS.iter().filter_map(move |&(dr, dc)| {
        let (nr, nc) = (r + dr, c + dc);
        (nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w)
            .then(|| nr as usize * w + nc as usize)
    })
}

/// Simulate a segmentation network that only knows in-distribution classes.
///
/// OoD pixels are relabeled per connected component with the majority
/// in-distribution label on the component's border. Then connected regions,
/// each inside one true-class segment, are relabeled to a different
/// in-distribution class until exactly `round(rate · n_in_dist)` pixels are wrong.
///
/// Probabilities are one-hot smoothed with at least [`SMOOTHING_EPS`]. Wrong
/// regions, OoD components and pixels on true class boundaries get an extra
/// confidence drop, so the entropy of the field carries some (imperfect)
/// signal about errors.
pub fn corrupt_prediction(
    labels: &LabelMap,
    rate: f64,
    seed: u64,
    classes: &ClassSet,
) -> Result<Prediction> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("corruption rate {rate} outside [0, 1]")));
    }
    if let Some(&bad) = labels.data.iter().find(|&&l| !classes.contains(l)) {
        return Err(Error::UnknownClass(bad));
    }
    let (h, w) = (labels.height, labels.width);
    let n = h * w;
    let num_classes = classes.num_in_dist();
    if rate > 0.0 && num_classes < 2 {
        return Err(Error::invalid(
            "corruption needs at least two in-distribution classes",
        ));
    }
    let mut rng = rng_for(seed, stream::CORRUPT, 0);
    let mut pred = labels.clone();
    // per-pixel extra smoothing; negative means "no region-level value"
    let mut eps = vec![-1.0f64; n];
    let mut wrong_region = vec![false; n];

    // OoD components -> border majority
    let mut visited = vec![false; n];
    for start in 0..n {
        if visited[start] || !classes.is_ood(labels.data[start]) {
            continue;
        }
        let mut component = vec![start];
        visited[start] = true;
        let mut votes = vec![0usize; 256];
        let mut i = 0;
        while i < component.len() {
            let p = component[i];
            i += 1;
            for q in neighbors(h, w, p) {
                let l = labels.data[q];
                if classes.is_ood(l) {
                    if !visited[q] {
                        visited[q] = true;
                        component.push(q);
                    }
                } else {
                    votes[l as usize] += 1;
                }
            }
        }
        let fill = classes
            .in_dist_ids
            .iter()
            .copied()
            .max_by_key(|&id| (votes[id as usize], std::cmp::Reverse(id)))
            .filter(|&id| votes[id as usize] > 0)
            .unwrap_or(classes.background_id);
        let e = rng.gen_range(SMOOTHING_EPS as f64..MAX_REGION_EPS);
        for &p in &component {
            pred.data[p] = fill;
            eps[p] = e;
        }
    }

    // connected wrong regions on in-distribution pixels
    let in_dist: Vec<usize> = (0..n).filter(|&i| !classes.is_ood(labels.data[i])).collect();
    let target = (rate * in_dist.len() as f64).round() as usize;
    let (min_blob, max_blob) = ((n / 100).max(1), (n * 6 / 100).max(2));
    let mut order = in_dist.clone();
    order.shuffle(&mut rng);
    let mut corrupted = 0usize;
    let mut queue = VecDeque::new();
    for &start in &order {
        if corrupted >= target {
            break;
        }
        if wrong_region[start] {
            continue;
        }
        let want = rng.gen_range(min_blob..=max_blob).min(target - corrupted);
        let truth = labels.data[start];
        let others: Vec<u8> = classes
            .in_dist_ids
            .iter()
            .copied()
            .filter(|&id| id != truth)
            .collect();
        let new_id = others[rng.gen_range(0..others.len())];
        let e = rng.gen_range(SMOOTHING_EPS as f64..MAX_REGION_EPS);
        queue.clear();
        queue.push_back(start);
        wrong_region[start] = true;
        let mut grown = 0;
        while let Some(p) = queue.pop_front() {
            pred.data[p] = new_id;
            eps[p] = e;
            grown += 1;
            if grown >= want {
                break;
            }
            for q in neighbors(h, w, p) {
                if !wrong_region[q] && labels.data[q] == truth && queue.len() + grown < want {
                    wrong_region[q] = true;
                    queue.push_back(q);
                }
            }
        }
        // anything still queued was claimed but not relabeled
        for p in queue.drain(..) {
            wrong_region[p] = false;
        }
        corrupted += grown;
    }

    let probs = smoothed_probs(labels, &pred, &eps, &wrong_region, seed, classes);
    Ok(Prediction { labels: pred, probs })
}

fn smoothed_probs(
    truth: &LabelMap,
    pred: &LabelMap,
    eps: &[f64],
    wrong_region: &[bool],
    seed: u64,
    classes: &ClassSet,
) -> ProbField {
    let (h, w) = (truth.height, truth.width);
    let c = classes.num_in_dist();
    let mut field = ProbField {
        height: h,
        width: w,
        classes: c,
        data: vec![0.0; h * w * c],
    };
    let base = SMOOTHING_EPS as f64;
    for idx in 0..h * w {
        let p_ch = classes
            .channel_of(pred.data[idx])
            .expect("prediction holds in-distribution ids only");
        let on_boundary = neighbors(h, w, idx).any(|q| truth.data[q] != truth.data[idx]);
        let e = if eps[idx] >= 0.0 {
            eps[idx]
        } else if on_boundary {
            base + (MAX_BOUNDARY_EPS - base) * 0.5 * (1.0 + hash_unit(seed, idx as u64, 1, 0))
        } else {
            base
        };
        let mut row = vec![0.0f64; c];
        if c == 1 {
            row[0] = 1.0;
        } else if wrong_region[idx] && c > 2 {
            // most of the lost mass goes to the true class
            let t_ch = classes.channel_of(truth.data[idx]).unwrap();
            let rest = 0.25 * e / (c - 2) as f64;
            for (k, v) in row.iter_mut().enumerate() {
                *v = if k == p_ch {
                    1.0 - e
                } else if k == t_ch {
                    0.75 * e
                } else {
                    rest
                };
            }
        } else {
            let share = e / (c - 1) as f64;
            for (k, v) in row.iter_mut().enumerate() {
                *v = if k == p_ch { 1.0 - e } else { share };
            }
        }
        let (r, col) = (idx / w, idx % w);
        let out = field.row_mut(r, col);
        for k in 0..c {
            out[k] = row[k] as f32;
        }
        // renormalize in f32 so rows sum to one at storage precision
        let s: f32 = out.iter().sum();
        out[p_ch] += 1.0 - s;
    }
    field
}
