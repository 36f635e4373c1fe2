//! Procedural labeled scenes with exact ground truth.
//!
//! Scenes are flat-shaded shapes over a background class. Out-of-distribution
//! objects are drawn from a disjoint class range with their own colors and a
//! much stronger texture, and segmentation errors are injected as connected
//! relabeled regions so that both evaluation masks are known exactly.

mod classes;
mod corrupt;
mod render;
mod scene;

pub use classes::ClassSet;
pub use corrupt::{corrupt_prediction, Prediction, SMOOTHING_EPS};
pub use render::{render_from_labels, Texture};
pub use scene::{generate_scene, inject_ood, place_ood_shapes, Shape};

use crate::error::{Error, Result};
use crate::grid::{LabelMap, Mask, ProbField, RgbImage};
use crate::rng::{mix, rng_for, stream};
use rand::Rng as _;

/// Default rendering noise for generated scenes.
pub const DEFAULT_NOISE: f32 = 0.02;

/// Size and rendering parameters shared by every scene of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Dimensions must be multiples of this.
    pub patch_size: usize,
    pub noise_level: f32,
}

impl SceneSpec {
    pub fn square(size: usize, patch_size: usize) -> Self {
        SceneSpec {
            height: size,
            width: size,
            patch_size,
            noise_level: DEFAULT_NOISE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 64 || self.width < 64 {
            return Err(Error::invalid(format!(
                "scene must be at least 64x64, got {}x{}",
                self.height, self.width
            )));
        }
        if self.patch_size == 0
            || self.height % self.patch_size != 0
            || self.width % self.patch_size != 0
        {
            return Err(Error::invalid(format!(
                "scene dimensions {}x{} are not divisible by patch size {}",
                self.height, self.width, self.patch_size
            )));
        }
        if !(0.0..=0.5).contains(&self.noise_level) {
            return Err(Error::invalid(format!(
                "noise level {} outside [0, 0.5]",
                self.noise_level
            )));
        }
        Ok(())
    }
}

/// One image of the toy world with its ground truth and (optionally) a
/// segmentation prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub rgb: RgbImage,
    pub labels: LabelMap,
    pub ood_mask: Mask,
    pub misclass_mask: Mask,
    pub pred_labels: Option<LabelMap>,
    pub pred_probs: Option<ProbField>,
    /// Seed the rgb was rendered with; reused when objects are added later.
    pub render_seed: u64,
    pub noise_level: f32,
}

impl LabeledImage {
    pub fn height(&self) -> usize {
        self.labels.height
    }

    pub fn width(&self) -> usize {
        self.labels.width
    }

    /// Attach a prediction and recompute the misclassification mask.
    pub fn with_prediction(mut self, prediction: Prediction) -> Result<Self> {
        if !prediction.labels.same_shape(&self.labels) {
            return Err(Error::invalid("prediction shape does not match labels"));
        }
        self.misclass_mask = Mask {
            height: self.labels.height,
            width: self.labels.width,
            data: self
                .labels
                .data
                .iter()
                .zip(&prediction.labels.data)
                .map(|(t, p)| t != p)
                .collect(),
        };
        self.pred_labels = Some(prediction.labels);
        self.pred_probs = Some(prediction.probs);
        Ok(self)
    }

    /// Exhaustive per-pixel check of the mask invariants.
    pub fn check_invariants(&self, classes: &ClassSet) -> Result<()> {
        let n = self.labels.data.len();
        if self.ood_mask.data.len() != n || self.misclass_mask.data.len() != n {
            return Err(Error::invalid(format!("{}: mask shape mismatch", self.id)));
        }
        for (i, &l) in self.labels.data.iter().enumerate() {
            if !classes.contains(l) {
                return Err(Error::UnknownClass(l));
            }
            if self.ood_mask.data[i] != classes.is_ood(l) {
                return Err(Error::invalid(format!("{}: ood mask wrong at {i}", self.id)));
            }
        }
        match &self.pred_labels {
            Some(pred) => {
                for i in 0..n {
                    if self.misclass_mask.data[i] != (pred.data[i] != self.labels.data[i]) {
                        return Err(Error::invalid(format!(
                            "{}: misclassification mask wrong at {i}",
                            self.id
                        )));
                    }
                }
            }
            None => {
                if self.misclass_mask.data.iter().any(|&b| b) {
                    return Err(Error::invalid(format!(
                        "{}: misclassification mask set without a prediction",
                        self.id
                    )));
                }
            }
        }
        if let Some(p) = &self.pred_probs {
            p.check_normalized(1e-6)?;
        }
        Ok(())
    }
}

/// Parameters for a whole generated split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub scene: SceneSpec,
    pub count: usize,
    pub seed: u64,
    pub n_objects: usize,
    /// Probability that an image receives out-of-distribution objects.
    pub ood_rate: f64,
    /// Maximum number of OoD objects per affected image (at least one).
    pub max_ood: usize,
    pub corrupt_rate: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            scene: SceneSpec::square(128, 32),
            count: 10,
            seed: 0,
            n_objects: 8,
            ood_rate: 0.0,
            max_ood: 2,
            corrupt_rate: 0.0,
        }
    }
}

/// Generate `spec.count` images: scene, optional OoD injection, then the
/// corrupted prediction. Image `i` depends only on `(spec, i)`.
pub fn generate_dataset(spec: &DatasetSpec, classes: &ClassSet) -> Result<Vec<LabeledImage>> {
    (0..spec.count)
        .map(|i| generate_item(spec, classes, i))
        .collect()
}

pub fn generate_item(spec: &DatasetSpec, classes: &ClassSet, index: usize) -> Result<LabeledImage> {
    let item_seed = mix(&[spec.seed, stream::DATASET, index as u64]);
    let mut rng = rng_for(item_seed, stream::DATASET, 0);
    let mut img = generate_scene(item_seed, classes, &spec.scene, spec.n_objects)?;
    img.id = format!("{index:05}");
    if spec.ood_rate > 0.0 && rng.gen_bool(spec.ood_rate.min(1.0)) {
        let n_ood = rng.gen_range(1..=spec.max_ood.max(1));
        img = inject_ood(&img, classes, mix(&[item_seed, stream::OOD]), n_ood)?;
    }
    let pred = corrupt_prediction(
        &img.labels,
        spec.corrupt_rate,
        mix(&[item_seed, stream::CORRUPT]),
        classes,
    )?;
    img.with_prediction(pred)
}
