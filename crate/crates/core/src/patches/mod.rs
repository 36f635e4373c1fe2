//! Patch grids, the semantic-difference gate, negative sampling and triplet
//! assembly.

mod augment;
mod extract;
mod sampling;

pub use augment::{augment, augment_with, AugmentParams};
pub use extract::{extract_grid, extract_patches, PatchLayout};
pub use sampling::{build_triplets, sample_negative, semantic_difference, PatchPool, TripletConfig, TripletSet};

use std::sync::Arc;

use crate::grid::{LabelMap, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Real,
    Synthetic,
}

/// Where a patch was cut from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Origin {
    pub image: Arc<str>,
    pub row: usize,
    pub col: usize,
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{},{}", self.image, self.row, self.col)
    }
}

/// A square crop with its label patch. `rgb` is interleaved `P×P×3` in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub rgb: Vec<f32>,
    pub labels: LabelMap,
    pub origin: Origin,
    pub source: Source,
}

impl Patch {
    /// Quantize to 8-bit RGB.
    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage {
            height: self.size,
            width: self.size,
            data: self
                .rgb
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        }
    }
}

/// An image with the label map it depicts. For real images these are ground
/// truth labels; for synthetic images, the labels the generator was fed.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceImage {
    pub id: Arc<str>,
    pub rgb: RgbImage,
    pub labels: LabelMap,
}

/// Anchor/positive share an origin; the negative comes from elsewhere and
/// passed the semantic gate.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub anchor: Patch,
    pub positive: Patch,
    pub negative: Patch,
    /// Gate value, computed before augmentation.
    pub semantic_diff: f64,
}

impl Triplet {
    /// Check the structural invariants against gate `tau`.
    pub fn validate(&self, tau: f64) -> Result<(), String> {
        if self.positive.origin != self.anchor.origin {
            return Err(format!("positive origin {} != anchor {}", self.positive.origin, self.anchor.origin));
        }
        if self.negative.origin == self.anchor.origin {
            return Err(format!("negative shares anchor origin {}", self.anchor.origin));
        }
        if self.semantic_diff < tau {
            return Err(format!("semantic diff {} below gate {tau}", self.semantic_diff));
        }
        Ok(())
    }
}
