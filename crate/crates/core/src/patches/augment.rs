use rand::Rng as _;

use super::Patch;
use crate::grid::Grid;
use crate::rng::{rng_for, stream};

/// Photometric and geometric jitter applied to negative patches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Additive shift, drawn from U[−0.2, 0.2].
    pub brightness: f32,
    /// Contrast scale about 0.5, drawn from U[0.8, 1.25].
    pub contrast: f32,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        brightness: 0.0,
        contrast: 1.0,
        flip_h: false,
        flip_v: false,
    };

    pub fn draw(seed: u64) -> Self {
        let mut rng = rng_for(seed, stream::AUGMENT, 0);
        AugmentParams {
            brightness: rng.gen_range(-0.2..=0.2),
            contrast: rng.gen_range(0.8..=1.25),
            flip_h: rng.gen_bool(0.5),
            flip_v: rng.gen_bool(0.5),
        }
    }
}

pub fn augment(patch: &Patch, seed: u64) -> Patch {
    augment_with(patch, AugmentParams::draw(seed))
}

/// `x → clamp((x − 0.5)·c + 0.5 + δ)` per channel, then flips applied to rgb
/// and labels alike.
pub fn augment_with(patch: &Patch, params: AugmentParams) -> Patch {
    let p = patch.size;
    let src = |r: usize, c: usize| {
        (
            if params.flip_v { p - 1 - r } else { r },
            if params.flip_h { p - 1 - c } else { c },
        )
    };
    // x·c + (0.5 − 0.5·c + δ) is exact for the identity parameters
    let offset = 0.5 - 0.5 * params.contrast + params.brightness;
    let mut rgb = vec![0.0f32; p * p * 3];
    let mut labels = Grid::filled(p, p, 0u8);
    for r in 0..p {
        for c in 0..p {
            let (sr, sc) = src(r, c);
            labels.set(r, c, *patch.labels.get(sr, sc));
            for ch in 0..3 {
                let x = patch.rgb[(sr * p + sc) * 3 + ch];
                rgb[(r * p + c) * 3 + ch] = (x * params.contrast + offset).clamp(0.0, 1.0);
            }
        }
    }
    Patch {
        rgb,
        labels,
        ..patch.clone()
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::patches::{semantic_difference, Origin, Source};

    fn stripe_patch() -> Patch {
        // left half class 1 (dark), right half class 2 (bright), one marker
        let p = 16;
        let mut labels = Grid::filled(p, p, 1u8);
        let mut rgb = vec![0.2f32; p * p * 3];
        for r in 0..p {
            for c in p / 2..p {
                labels.set(r, c, 2);
                for ch in 0..3 {
                    rgb[(r * p + c) * 3 + ch] = 0.8;
                }
            }
        }
        labels.set(2, 3, 3);
        rgb[(2 * p + 3) * 3] = 0.55;
        Patch {
            size: p,
            rgb,
            labels,
            origin: Origin {
                image: Arc::from("x"),
                row: 0,
                col: 0,
            },
            source: Source::Synthetic,
        }
    }

    #[test]
    fn identity_params_are_identity() {
        let p = stripe_patch();
        assert_eq!(augment_with(&p, AugmentParams::IDENTITY), p);
    }

    #[test]
    fn double_flip_is_identity() {
        let p = stripe_patch();
        let flip = AugmentParams {
            flip_h: true,
            ..AugmentParams::IDENTITY
        };
        assert_eq!(augment_with(&augment_with(&p, flip), flip), p);
    }

    #[test]
    fn draws_within_ranges_and_deterministic() {
        for s in 0..500 {
            let a = AugmentParams::draw(s);
            assert!((-0.2..=0.2).contains(&a.brightness));
            assert!((0.8..=1.25).contains(&a.contrast));
            assert_eq!(a, AugmentParams::draw(s));
        }
    }

    #[test]
    fn output_stays_in_unit_range() {
        let p = stripe_patch();
        for s in 0..50 {
            assert!(augment(&p, s).rgb.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    /// Label boundaries (horizontal or vertical neighbour with a different
    /// class) must coincide with rgb edges after any augmentation.
    #[test]
    fn label_and_rgb_flips_stay_aligned() {
        let p = stripe_patch();
        let reference = p.labels.clone();
        for s in 0..64 {
            let params = AugmentParams::draw(s);
            let a = augment_with(&p, params);
            let n = a.size;
            for r in 0..n {
                for c in 0..n - 1 {
                    let label_edge = a.labels.get(r, c) != a.labels.get(r, c + 1);
                    let i = (r * n + c) * 3;
                    let rgb_edge = (a.rgb[i] - a.rgb[i + 3]).abs() > 1e-6;
                    assert_eq!(label_edge, rgb_edge, "seed {s} at ({r},{c})");
                }
            }
            // the gate is evaluated on content, flips only permute it
            let flipped_ref = augment_with(
                &Patch {
                    labels: reference.clone(),
                    ..p.clone()
                },
                AugmentParams {
                    brightness: 0.0,
                    contrast: 1.0,
                    ..params
                },
            );
            assert_eq!(semantic_difference(&a.labels, &flipped_ref.labels).unwrap(), 0.0);
        }
    }
}
