use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask, ProbField};
use crate::patches::PatchLayout;
use crate::toyworld::{ClassSet, LabeledImage};

/// Ground truth the dissimilarity map is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskKind {
    Ood,
    Misclass,
    Union,
}

impl MaskKind {
    pub const ALL: [MaskKind; 3] = [MaskKind::Ood, MaskKind::Misclass, MaskKind::Union];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskKind::Ood => "ood",
            MaskKind::Misclass => "misclass",
            MaskKind::Union => "union",
        }
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ood" => Ok(MaskKind::Ood),
            "mis" | "misclass" | "misclassification" => Ok(MaskKind::Misclass),
            "union" => Ok(MaskKind::Union),
            other => Err(Error::invalid(format!("unknown mask kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Masks {
    pub ood: Mask,
    /// Prediction ≠ ground truth on in-distribution pixels only.
    pub misclass: Mask,
    pub union: Mask,
}

impl Masks {
    pub fn get(&self, kind: MaskKind) -> &Mask {
        match kind {
            MaskKind::Ood => &self.ood,
            MaskKind::Misclass => &self.misclass,
            MaskKind::Union => &self.union,
        }
    }
}

pub fn ood_mask(image: &LabeledImage, classes: &ClassSet) -> Mask {
    image.labels.map(|&l| classes.is_ood(l))
}

pub fn build_masks(image: &LabeledImage, classes: &ClassSet) -> Result<Masks> {
    let pred = image
        .pred_labels
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("{}: no prediction for the misclassification mask", image.id)))?;
    if !pred.same_shape(&image.labels) {
        return Err(Error::invalid(format!("{}: prediction shape differs from labels", image.id)));
    }
    let ood = ood_mask(image, classes);
    let misclass = Grid {
        height: ood.height,
        width: ood.width,
        data: image
            .labels
            .data
            .iter()
            .zip(&pred.data)
            .map(|(&t, &p)| !classes.is_ood(t) && t != p)
            .collect(),
    };
    let union = Grid {
        height: ood.height,
        width: ood.width,
        data: ood.data.iter().zip(&misclass.data).map(|(&a, &b)| a || b).collect(),
    };
    Ok(Masks { ood, misclass, union })
}

/// Mask of one kind; the OoD mask does not need a prediction.
pub fn mask_for(image: &LabeledImage, classes: &ClassSet, kind: MaskKind) -> Result<Mask> {
    match kind {
        MaskKind::Ood => Ok(ood_mask(image, classes)),
        _ => Ok(build_masks(image, classes)?.get(kind).clone()),
    }
}

/// Value of pixels outside every patch.
pub const UNSCORED: f32 = -1.0;

/// Per-pixel dissimilarity over a whole image. Pixels in cropped bands hold
/// [`UNSCORED`].
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMap {
    pub values: Grid<f32>,
    pub layout: PatchLayout,
    /// What produced the scores, e.g. a head name.
    pub source: String,
}

impl DissimilarityMap {
    pub fn is_scored(&self, row: usize, col: usize) -> bool {
        self.layout.covers(row, col)
    }

    /// Scored `(value, index)` pairs in row-major order.
    pub fn scored(&self) -> impl Iterator<Item = (usize, f32)> + '_ {
        let w = self.values.width;
        self.values
            .data
            .iter()
            .enumerate()
            .filter(move |(i, _)| self.layout.covers(i / w, i % w))
            .map(|(i, &v)| (i, v))
    }
}

/// Place patch scores at their origins. Each entry is either `P²` per-pixel
/// values (row-major) or a single value broadcast over the patch.
pub fn assemble_map(scores: &[Vec<f32>], layout: &PatchLayout, source: &str) -> Result<DissimilarityMap> {
    if scores.len() != layout.len() {
        return Err(Error::invalid(format!(
            "{} patch scores for a layout of {} patches",
            scores.len(),
            layout.len()
        )));
    }
    let p = layout.patch_size;
    let mut values = Grid::filled(layout.height, layout.width, UNSCORED);
    for (k, s) in scores.iter().enumerate() {
        let (r0, c0) = layout.origin(k);
        let per_pixel = match s.len() {
            1 => false,
            n if n == p * p => true,
            n => {
                return Err(Error::invalid(format!(
                    "patch {k} has {n} scores, expected 1 or {}",
                    p * p
                )))
            }
        };
        for r in 0..p {
            for c in 0..p {
                let v = if per_pixel { s[r * p + c] } else { s[0] };
                values.set(r0 + r, c0 + c, v);
            }
        }
    }
    Ok(DissimilarityMap {
        values,
        layout: *layout,
        source: source.to_string(),
    })
}

/// Shannon entropy per pixel in nats, with `0·ln 0 = 0`.
pub fn softmax_entropy_map(probs: &ProbField) -> Result<Grid<f64>> {
    probs.check_normalized(1e-6)?;
    let data = probs
        .data
        .chunks(probs.classes)
        .map(|row| {
            row.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| {
                    let p = p as f64;
                    -p * p.ln()
                })
                .sum::<f64>()
                .max(0.0)
        })
        .collect();
    Grid::from_vec(probs.height, probs.width, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patches::extract_grid;
    use crate::toyworld::{generate_dataset, DatasetSpec, SceneSpec};

    fn field(rows: &[&[f32]]) -> ProbField {
        ProbField {
            height: 1,
            width: rows.len(),
            classes: rows[0].len(),
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    #[test]
    fn entropy_examples() {
        let e = softmax_entropy_map(&field(&[&[1.0, 0.0, 0.0], &[0.5, 0.5, 0.0]])).unwrap();
        assert_eq!(e.data[0], 0.0);
        assert!((e.data[1] - 0.693147).abs() < 1e-6);
        let u = 1.0 / 8.0;
        let e = softmax_entropy_map(&field(&[&[u; 8]])).unwrap();
        assert!((e.data[0] - 8f64.ln()).abs() < 1e-6);
        assert!(softmax_entropy_map(&field(&[&[0.5, 0.6]])).is_err());
    }

    #[test]
    fn identity_round_trip_and_broadcast() {
        let g = Grid::from_vec(64, 64, (0..4096).map(|i| (i % 97) as f32 / 97.0).collect()).unwrap();
        let (patches, layout) = extract_grid(&g, 32).unwrap();
        let scores: Vec<Vec<f32>> = patches.iter().map(|p| p.data.clone()).collect();
        assert_eq!(assemble_map(&scores, &layout, "id").unwrap().values, g);
        let m = assemble_map(&[vec![0.1], vec![0.2], vec![0.3], vec![0.4]], &layout, "fc").unwrap();
        assert_eq!(*m.values.get(0, 0), 0.1);
        assert_eq!(*m.values.get(0, 63), 0.2);
        assert_eq!(*m.values.get(63, 0), 0.3);
        assert_eq!(*m.values.get(40, 40), 0.4);
        assert!(assemble_map(&[vec![0.1]], &layout, "x").is_err());
    }

    #[test]
    fn cropped_band_is_unscored() {
        let layout = PatchLayout::new(72, 64, 32).unwrap();
        let m = assemble_map(&vec![vec![0.5]; 4], &layout, "c").unwrap();
        assert_eq!(m.scored().count(), 2 * 2 * 32 * 32);
        assert_eq!(*m.values.get(70, 3), UNSCORED);
    }

    #[test]
    fn masks_match_toyworld_bookkeeping() {
        let c = ClassSet::default();
        let spec = DatasetSpec {
            scene: SceneSpec::square(64, 32),
            count: 6,
            seed: 3,
            ood_rate: 0.7,
            corrupt_rate: 0.2,
            ..DatasetSpec::default()
        };
        for im in generate_dataset(&spec, &c).unwrap() {
            let m = build_masks(&im, &c).unwrap();
            assert_eq!(m.ood, im.ood_mask);
            let expected_mis = im
                .misclass_mask
                .data
                .iter()
                .zip(&im.ood_mask.data)
                .filter(|(&mis, &ood)| mis && !ood)
                .count();
            assert_eq!(m.misclass.count(), expected_mis);
            for i in 0..m.union.data.len() {
                assert_eq!(m.union.data[i], m.ood.data[i] || m.misclass.data[i]);
            }
        }
    }

    #[test]
    fn clean_prediction_gives_empty_masks() {
        let c = ClassSet::default();
        let spec = DatasetSpec {
            scene: SceneSpec::square(64, 32),
            count: 3,
            seed: 9,
            ood_rate: 0.0,
            corrupt_rate: 0.0,
            ..DatasetSpec::default()
        };
        for im in generate_dataset(&spec, &c).unwrap() {
            let m = build_masks(&im, &c).unwrap();
            assert_eq!(m.union.count(), 0);
        }
    }
}
