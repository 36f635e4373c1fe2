use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng as _;

use super::{augment, extract_patches, Origin, Patch, PatchLayout, Source, SourceImage, Triplet};
use crate::error::{Error, Result};
use crate::grid::LabelMap;
use crate::rng::{mix, rng_for, stream};

/// Fraction of positions where two label patches disagree.
pub fn semantic_difference(a: &LabelMap, b: &LabelMap) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "label patches differ in shape: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let differing = a.data.iter().zip(&b.data).filter(|(x, y)| x != y).count();
    Ok(differing as f64 / a.data.len() as f64)
}

/// Synthetic images that negatives are drawn from.
#[derive(Debug, Clone)]
pub struct PatchPool<'a> {
    images: &'a [SourceImage],
    layouts: Vec<PatchLayout>,
    by_id: HashMap<Arc<str>, usize>,
    patch_size: usize,
}

impl<'a> PatchPool<'a> {
    pub fn new(images: &'a [SourceImage], patch_size: usize) -> Result<Self> {
        if images.len() < 2 {
            return Err(Error::invalid("negative pool needs at least two synthetic images"));
        }
        let layouts = images
            .iter()
            .map(|im| PatchLayout::new(im.labels.height, im.labels.width, patch_size))
            .collect::<Result<Vec<_>>>()?;
        let by_id = images
            .iter()
            .enumerate()
            .map(|(i, im)| (im.id.clone(), i))
            .collect();
        Ok(PatchPool {
            images,
            layouts,
            by_id,
            patch_size,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn labels_at(&self, image: usize, row: usize, col: usize) -> LabelMap {
        self.images[image].labels.window(row, col, self.patch_size)
    }

    fn patch_at(&self, image: usize, row: usize, col: usize) -> Patch {
        let im = &self.images[image];
        let p = self.patch_size;
        let mut rgb = Vec::with_capacity(p * p * 3);
        for r in row..row + p {
            let start = (r * im.rgb.width + col) * 3;
            rgb.extend(im.rgb.data[start..start + p * 3].iter().map(|&v| v as f32 / 255.0));
        }
        Patch {
            size: p,
            rgb,
            labels: self.labels_at(image, row, col),
            origin: Origin {
                image: im.id.clone(),
                row,
                col,
            },
            source: Source::Synthetic,
        }
    }
}

/// Draw a synthetic patch whose labels differ from `reference.labels` on at
/// least a `tau` fraction of pixels, then augment it.
///
/// The first half of the tries only considers other images; after that the
/// reference's own image is allowed too (never at the reference origin).
/// Returns the augmented patch and the pre-augmentation gate value.
pub fn sample_negative(
    reference: &Patch,
    pool: &PatchPool<'_>,
    tau: f64,
    seed: u64,
    max_tries: usize,
) -> Result<(Patch, f64)> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(format!("gate {tau} outside (0, 1]")));
    }
    if reference.size != pool.patch_size {
        return Err(Error::invalid("reference patch size differs from pool patch size"));
    }
    let own = pool.by_id.get(&reference.origin.image).copied();
    let mut rng = rng_for(seed, stream::NEGATIVE, 0);
    let mut best = 0.0f64;
    for attempt in 0..max_tries {
        let same_image_ok = attempt >= max_tries / 2;
        let image = match own {
            Some(o) if !same_image_ok => {
                let k = rng.gen_range(0..pool.len() - 1);
                if k >= o {
                    k + 1
                } else {
                    k
                }
            }
            _ => rng.gen_range(0..pool.len()),
        };
        let layout = &pool.layouts[image];
        let (row, col) = layout.origin(rng.gen_range(0..layout.len()));
        if Some(image) == own && row == reference.origin.row && col == reference.origin.col {
            continue;
        }
        let labels = pool.labels_at(image, row, col);
        let diff = semantic_difference(&reference.labels, &labels)?;
        best = best.max(diff);
        if diff >= tau {
            let candidate = pool.patch_at(image, row, col);
            return Ok((augment(&candidate, mix(&[seed, stream::AUGMENT])), diff));
        }
    }
    Err(Error::SamplingExhausted {
        tries: max_tries,
        best,
        gate: tau,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletConfig {
    pub patch_size: usize,
    /// Minimum semantic difference for a negative.
    pub tau: f64,
    pub seed: u64,
    pub max_tries: usize,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig {
            patch_size: 64,
            tau: 0.5,
            seed: 0,
            max_tries: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    /// Anchors for which no negative passed the gate.
    pub skipped: usize,
}

/// One triplet per patch position of every aligned (real, synthetic) pair.
///
/// The negative for patch `k` of image `i` uses seed
/// `mix(seed, NEGATIVE, i, k)`, so output does not depend on processing order.
pub fn build_triplets(
    real: &[SourceImage],
    synthetic: &[SourceImage],
    cfg: &TripletConfig,
) -> Result<TripletSet> {
    if real.len() != synthetic.len() {
        return Err(Error::invalid(format!(
            "{} real images but {} synthetic",
            real.len(),
            synthetic.len()
        )));
    }
    let pool = PatchPool::new(synthetic, cfg.patch_size)?;
    let mut out = TripletSet {
        triplets: Vec::new(),
        skipped: 0,
    };
    for (i, (r, s)) in real.iter().zip(synthetic).enumerate() {
        if r.id != s.id {
            return Err(Error::invalid(format!("image {i}: ids {} and {} not aligned", r.id, s.id)));
        }
        let (anchors, _) = extract_patches(&r.rgb, &r.labels, cfg.patch_size, &r.id, Source::Real)?;
        let (positives, _) = extract_patches(&s.rgb, &s.labels, cfg.patch_size, &s.id, Source::Synthetic)?;
        for (k, (anchor, positive)) in anchors.into_iter().zip(positives).enumerate() {
            let seed = mix(&[cfg.seed, stream::NEGATIVE, i as u64, k as u64]);
            match sample_negative(&anchor, &pool, cfg.tau, seed, cfg.max_tries) {
                Ok((negative, semantic_diff)) => out.triplets.push(Triplet {
                    anchor,
                    positive,
                    negative,
                    semantic_diff,
                }),
                Err(Error::SamplingExhausted { .. }) => out.skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, RgbImage};
    use crate::toyworld::{generate_scene, render_from_labels, ClassSet, SceneSpec};

    fn labels(h: usize, w: usize, values: &[u8]) -> LabelMap {
        Grid::from_vec(h, w, values.to_vec()).unwrap()
    }

    #[test]
    fn difference_examples() {
        let a = labels(4, 4, &[1; 16]);
        assert_eq!(semantic_difference(&a, &a).unwrap(), 0.0);
        let b = labels(4, 4, &[2; 16]);
        assert_eq!(semantic_difference(&a, &b).unwrap(), 1.0);
        let mut half = [1u8; 16];
        for v in half.iter_mut().step_by(2) {
            *v = 5;
        }
        // hand count: positions 0,2,...,14 differ -> 8 of 16
        assert_eq!(semantic_difference(&a, &labels(4, 4, &half)).unwrap(), 0.5);
        assert!(semantic_difference(&a, &labels(2, 8, &[1; 16])).is_err());
    }

    fn constant_image(id: &str, class: u8) -> SourceImage {
        SourceImage {
            id: Arc::from(id),
            rgb: RgbImage::new(64, 64),
            labels: Grid::filled(64, 64, class),
        }
    }

    #[test]
    fn constant_pool_exhausts() {
        let pool_images = vec![constant_image("a", 0), constant_image("b", 0)];
        let pool = PatchPool::new(&pool_images, 32).unwrap();
        let (anchors, _) = extract_patches(
            &pool_images[0].rgb,
            &pool_images[0].labels,
            32,
            &pool_images[0].id,
            Source::Real,
        )
        .unwrap();
        match sample_negative(&anchors[0], &pool, 0.01, 1, 50) {
            Err(Error::SamplingExhausted { best, .. }) => assert_eq!(best, 0.0),
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    pub(crate) fn toy_sources(n: usize, seed: u64) -> (Vec<SourceImage>, Vec<SourceImage>) {
        let c = ClassSet::default();
        let spec = SceneSpec::square(64, 32);
        let mut real = Vec::new();
        let mut syn = Vec::new();
        for i in 0..n {
            let s = generate_scene(seed * 1000 + i as u64, &c, &spec, 6).unwrap();
            let id: Arc<str> = Arc::from(format!("{i:03}"));
            syn.push(SourceImage {
                id: id.clone(),
                rgb: render_from_labels(&s.labels, &c, 77 + i as u64, 0.02).unwrap(),
                labels: s.labels.clone(),
            });
            real.push(SourceImage {
                id,
                rgb: s.rgb,
                labels: s.labels,
            });
        }
        (real, syn)
    }

    #[test]
    fn triplets_satisfy_invariants_and_are_deterministic() {
        let (real, syn) = toy_sources(2, 1);
        let cfg = TripletConfig {
            patch_size: 32,
            tau: 0.3,
            seed: 5,
            max_tries: 200,
        };
        let set = build_triplets(&real, &syn, &cfg).unwrap();
        assert!(set.triplets.len() + set.skipped == 8);
        for t in &set.triplets {
            t.validate(cfg.tau).unwrap();
            assert_eq!(t.anchor.labels, t.positive.labels);
        }
        assert_eq!(set, build_triplets(&real, &syn, &cfg).unwrap());
    }

    #[test]
    fn same_seed_same_negative() {
        let (real, syn) = toy_sources(4, 2);
        let pool = PatchPool::new(&syn, 32).unwrap();
        let (anchors, _) = extract_patches(&real[0].rgb, &real[0].labels, 32, &real[0].id, Source::Real).unwrap();
        let a = sample_negative(&anchors[1], &pool, 0.3, 9, 200).unwrap();
        let b = sample_negative(&anchors[1], &pool, 0.3, 9, 200).unwrap();
        assert_eq!(a, b);
    }
}
