//! Ground-truth masks, dissimilarity maps, the entropy baseline, and
//! ROC/AUC/F1 reporting.

mod maps;
mod metrics;
mod render;

pub use maps::{
    assemble_map, build_masks, mask_for, ood_mask, softmax_entropy_map, DissimilarityMap, MaskKind, Masks, UNSCORED,
};
pub use metrics::{f1_at, f1_sweep, roc_auc, trapezoid, F1Sweep, Roc};
pub use render::{colormap, decode_colormap, render_panel, GUTTER, PANEL_COUNT};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::RgbImage;
use crate::models::{DetectorModel, GeneratorModel, PairBatch, SegModel};
use crate::patches::{extract_patches, Patch, Source, SourceImage};
use crate::rng::{mix, stream};
use crate::toyworld::{render_from_labels, ClassSet, LabeledImage};

/// Number of F1 thresholds in a report.
pub const F1_THRESHOLDS: usize = 99;
/// Upper bound on ROC points written to a report file.
pub const MAX_REPORT_ROC_POINTS: usize = 1001;

/// What turns an aligned (real, synthetic) image pair into patch scores.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    Model(&'a DetectorModel<f32>),
    /// Same score everywhere.
    Constant { value: f32, patch_size: usize },
    /// The ground-truth mask itself; an upper bound for harness checks.
    GroundTruth { kind: MaskKind, patch_size: usize },
}

impl Scorer<'_> {
    pub fn patch_size(&self) -> usize {
        match self {
            Scorer::Model(m) => m.config.patch_size,
            Scorer::Constant { patch_size, .. } | Scorer::GroundTruth { patch_size, .. } => *patch_size,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Scorer::Model(m) => m.head_kind().to_string(),
            Scorer::Constant { value, .. } => format!("constant-{value}"),
            Scorer::GroundTruth { kind, .. } => format!("ground-truth-{kind}"),
        }
    }
}

/// Source of the synthetic image.
#[derive(Debug, Clone, Copy)]
pub enum Synthesizer<'a> {
    /// The toy renderer, with a seed independent of the real image's.
    Oracle,
    Learned(&'a GeneratorModel<f32>),
}

impl Synthesizer<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Synthesizer::Oracle => "oracle",
            Synthesizer::Learned(_) => "generator",
        }
    }

    pub fn synthesize(&self, image: &LabeledImage, labels: &crate::grid::LabelMap, classes: &ClassSet, seed: u64) -> Result<RgbImage> {
        match self {
            Synthesizer::Oracle => render_from_labels(
                labels,
                classes,
                mix(&[image.render_seed, stream::SYNTH, seed]),
                image.noise_level,
            ),
            Synthesizer::Learned(g) => g.generate(labels),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalSetup<'a> {
    pub scorer: Scorer<'a>,
    pub synthesizer: Synthesizer<'a>,
    /// When set, predictions come from this network instead of the dataset.
    pub segnet: Option<&'a SegModel<f32>>,
    pub classes: &'a ClassSet,
    pub seed: u64,
    /// Pairs per detector forward pass.
    pub chunk: usize,
}

impl<'a> EvalSetup<'a> {
    pub fn new(scorer: Scorer<'a>, classes: &'a ClassSet) -> Self {
        EvalSetup {
            scorer,
            synthesizer: Synthesizer::Oracle,
            segnet: None,
            classes,
            seed: 0,
            chunk: 64,
        }
    }
}

/// One image after the full pipeline.
#[derive(Debug, Clone)]
pub struct ImageEval {
    /// The input image with the prediction that was used attached.
    pub image: LabeledImage,
    pub synthetic: RgbImage,
    pub map: DissimilarityMap,
}

/// Segment (or read the stored prediction), synthesize, score patches and
/// assemble the per-pixel map for one image.
pub fn process_image(setup: &EvalSetup<'_>, image: &LabeledImage) -> Result<ImageEval> {
    let image = match setup.segnet {
        Some(s) => image.clone().with_prediction(s.predict(&image.rgb)?)?,
        None => image.clone(),
    };
    let pred = image
        .pred_labels
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("{}: no prediction and no segmentation network", image.id)))?;
    let synthetic = setup.synthesizer.synthesize(&image, pred, setup.classes, setup.seed)?;
    let p = setup.scorer.patch_size();
    let id: Arc<str> = Arc::from(image.id.as_str());
    let (real, layout) = extract_patches(&image.rgb, pred, p, &id, Source::Real)?;
    let scores: Vec<Vec<f32>> = match setup.scorer {
        Scorer::Model(model) => {
            let (syn, _) = extract_patches(&synthetic, pred, p, &id, Source::Synthetic)?;
            let pairs: Vec<(&Patch, &Patch)> = real.iter().zip(&syn).collect();
            let cond = model.head_kind().needs_discriminator().then_some(setup.classes);
            let mut out = Vec::with_capacity(pairs.len());
            for c in pairs.chunks(setup.chunk.max(1)) {
                let y = model.forward(&PairBatch::from_patches(c, cond)?)?;
                out.extend((0..y.n).map(|i| y.sample(i).to_vec()));
            }
            out
        }
        Scorer::Constant { value, .. } => vec![vec![value]; layout.len()],
        Scorer::GroundTruth { kind, .. } => {
            let mask = mask_for(&image, setup.classes, kind)?;
            layout
                .origins()
                .map(|(r, c)| {
                    mask.window(r, c, p)
                        .data
                        .iter()
                        .map(|&b| if b { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect()
        }
    };
    let map = assemble_map(&scores, &layout, &setup.scorer.name())?;
    Ok(ImageEval {
        image,
        synthetic,
        map,
    })
}

/// Aligned (real, synthetic) training images: the synthetic side is rendered
/// from the ground-truth labels, so aligned patches agree semantically.
pub fn source_pairs(
    images: &[LabeledImage],
    synthesizer: &Synthesizer<'_>,
    classes: &ClassSet,
    seed: u64,
) -> Result<(Vec<SourceImage>, Vec<SourceImage>)> {
    let mut real = Vec::with_capacity(images.len());
    let mut synthetic = Vec::with_capacity(images.len());
    for im in images {
        let id: Arc<str> = Arc::from(im.id.as_str());
        synthetic.push(SourceImage {
            id: id.clone(),
            rgb: synthesizer.synthesize(im, &im.labels, classes, seed)?,
            labels: im.labels.clone(),
        });
        real.push(SourceImage {
            id,
            rgb: im.rgb.clone(),
            labels: im.labels.clone(),
        });
    }
    Ok((real, synthetic))
}

/// AUC and F1 summary of one score source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub auc: f64,
    pub best_f1: (f64, f64),
    pub f1_at_half: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detector: String,
    pub generator: String,
    pub mask_kind: String,
    pub auc: f64,
    /// `(fpr, tpr)`; thinned to at most [`MAX_REPORT_ROC_POINTS`] in files.
    pub roc: Vec<(f64, f64)>,
    pub roc_points_total: usize,
    pub f1_curve: Vec<(f64, f64)>,
    pub best_f1: (f64, f64),
    pub f1_at_half: f64,
    pub positives: usize,
    pub negatives: usize,
    pub scored_pixels: usize,
    pub unscored_pixels: usize,
    pub images: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub dataset_hash: String,
    pub version: String,
    /// Softmax-entropy baseline on the same pixels, when probabilities exist.
    pub entropy_baseline: Option<MetricSummary>,
}

impl EvalReport {
    /// Copy with the ROC thinned for writing; endpoints are kept.
    pub fn thinned(&self) -> EvalReport {
        let mut r = self.clone();
        let n = r.roc.len();
        if n > MAX_REPORT_ROC_POINTS {
            let m = MAX_REPORT_ROC_POINTS - 1;
            r.roc = (0..=m).map(|k| self.roc[k * (n - 1) / m]).collect();
        }
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.thinned()).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("bad report: {e}")))
    }

    /// Check the ROC shape and, for unthinned curves, the trapezoid area.
    pub fn validate(&self) -> Result<()> {
        let first = self.roc.first().copied();
        let last = self.roc.last().copied();
        if first != Some((0.0, 0.0)) || last != Some((1.0, 1.0)) {
            return Err(Error::invalid("roc must run from (0,0) to (1,1)"));
        }
        if self.roc.windows(2).any(|w| w[1].0 < w[0].0 || w[1].1 < w[0].1) {
            return Err(Error::invalid("roc is not monotone"));
        }
        if !(0.0..=1.0).contains(&self.auc) {
            return Err(Error::invalid("auc outside [0, 1]"));
        }
        if self.roc.len() == self.roc_points_total && (trapezoid(&self.roc) - self.auc).abs() > 1e-9 {
            return Err(Error::invalid("auc inconsistent with roc"));
        }
        Ok(())
    }
}

/// Scores and labels of all scored pixels, pooled in image order.
pub fn pooled_pixels(evals: &[ImageEval], classes: &ClassSet, kind: MaskKind) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for e in evals {
        let mask = mask_for(&e.image, classes, kind)?;
        for (i, v) in e.map.scored() {
            scores.push(v as f64);
            labels.push(mask.data[i]);
        }
    }
    Ok((scores, labels))
}

fn summarize(scores: &[f64], labels: &[bool]) -> Result<(Roc, F1Sweep, f64)> {
    let roc = roc_auc(scores, labels)?;
    let sweep = f1_sweep(scores, labels, F1_THRESHOLDS)?;
    let half = f1_at(scores, labels, 0.5)?;
    Ok((roc, sweep, half))
}

/// Entropy baseline over the same scored pixels, normalized by `ln C` so the
/// F1 thresholds in (0, 1) apply.
pub fn entropy_baseline(evals: &[ImageEval], classes: &ClassSet, kind: MaskKind) -> Result<Option<MetricSummary>> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for e in evals {
        let Some(probs) = &e.image.pred_probs else {
            return Ok(None);
        };
        let ent = softmax_entropy_map(probs)?;
        let norm = (probs.classes as f64).ln().max(f64::MIN_POSITIVE);
        let mask = mask_for(&e.image, classes, kind)?;
        for (i, _) in e.map.scored() {
            scores.push((ent.data[i] / norm).min(1.0));
            labels.push(mask.data[i]);
        }
    }
    let (roc, sweep, half) = summarize(&scores, &labels)?;
    Ok(Some(MetricSummary {
        auc: roc.auc,
        best_f1: sweep.best,
        f1_at_half: half,
    }))
}

/// Hex SHA-256 over ids, labels, rgb and stored predictions.
pub fn dataset_digest(images: &[LabeledImage]) -> String {
    let mut h = Sha256::new();
    for im in images {
        h.update((im.id.len() as u64).to_le_bytes());
        h.update(im.id.as_bytes());
        h.update((im.height() as u64).to_le_bytes());
        h.update((im.width() as u64).to_le_bytes());
        h.update(&im.labels.data);
        h.update(&im.rgb.data);
        if let Some(p) = &im.pred_labels {
            h.update(&p.data);
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn evaluate_maps(setup: &EvalSetup<'_>, evals: &[ImageEval], kind: MaskKind) -> Result<EvalReport> {
    let (scores, labels) = pooled_pixels(evals, setup.classes, kind)?;
    let (roc, sweep, half) = summarize(&scores, &labels)?;
    let total: usize = evals.iter().map(|e| e.map.values.data.len()).sum();
    let images: Vec<LabeledImage> = evals.iter().map(|e| e.image.clone()).collect();
    Ok(EvalReport {
        detector: setup.scorer.name(),
        generator: setup.synthesizer.name().to_string(),
        mask_kind: kind.to_string(),
        auc: roc.auc,
        roc_points_total: roc.points.len(),
        roc: roc.points,
        f1_curve: sweep.curve,
        best_f1: sweep.best,
        f1_at_half: half,
        positives: roc.positives,
        negatives: roc.negatives,
        scored_pixels: scores.len(),
        unscored_pixels: total - scores.len(),
        images: evals.len(),
        patch_size: setup.scorer.patch_size(),
        seed: setup.seed,
        dataset_hash: dataset_digest(&images),
        version: env!("CARGO_PKG_VERSION").to_string(),
        entropy_baseline: entropy_baseline(evals, setup.classes, kind)?,
    })
}

/// Full pipeline over a dataset, pixels pooled across images.
pub fn evaluate_detector(setup: &EvalSetup<'_>, dataset: &[LabeledImage], kind: MaskKind) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let evals = dataset
        .iter()
        .map(|im| process_image(setup, im))
        .collect::<Result<Vec<_>>>()?;
    evaluate_maps(setup, &evals, kind)
}
