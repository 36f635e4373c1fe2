use std::f64::consts::PI;

use super::ClassSet;
use crate::error::{Error, Result};
use crate::grid::{LabelMap, RgbImage};
use crate::rng::{hash_unit, mix, stream};

/// Per-class procedural luminance texture. Textures are evaluated pointwise,
/// so a label change at one pixel never affects the rendering of another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Texture {
    pub amplitude: f64,
    pub period: f64,
    pub angle: f64,
    /// Multiply by a second, orthogonal wave (checker-like pattern).
    pub checker: bool,
}

impl Texture {
    pub fn for_class(classes: &ClassSet, id: u8) -> Texture {
        let k = id as f64;
        if classes.is_ood(id) {
            Texture {
                amplitude: 0.18,
                period: 4.0 + (id % 3) as f64,
                angle: 0.3 + 0.5 * k,
                checker: true,
            }
        } else {
            Texture {
                amplitude: 0.03,
                period: 6.0 + 2.0 * (id % 4) as f64,
                angle: 0.65 * k,
                checker: false,
            }
        }
    }

    #[inline]
    fn eval(&self, row: usize, col: usize, phase: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (x, y) = (col as f64, row as f64);
        let u = (2.0 * PI * (x * c + y * s) / self.period + phase).sin();
        if self.checker {
            let v = (2.0 * PI * (y * c - x * s) / self.period + phase).sin();
            self.amplitude * u * v.signum()
        } else {
            self.amplitude * u
        }
    }
}

/// Render an RGB image from a label map: palette color plus the class texture
/// plus uniform noise in `[-noise_level, noise_level]`, per channel.
pub fn render_from_labels(
    labels: &LabelMap,
    classes: &ClassSet,
    seed: u64,
    noise_level: f32,
) -> Result<RgbImage> {
    if !(0.0..=0.5).contains(&noise_level) {
        return Err(Error::invalid(format!(
            "noise level {noise_level} outside [0, 0.5]"
        )));
    }
    let mut out = RgbImage::new(labels.height, labels.width);
    let mut lut: Vec<Option<([f64; 3], Texture, f64)>> = vec![None; 256];
    for row in 0..labels.height {
        for col in 0..labels.width {
            let id = *labels.get(row, col);
            let (base, tex, phase) = match lut[id as usize] {
                Some(entry) => entry,
                None => {
                    let color = classes.color(id)?;
                    let phase = PI * (1.0 + hash_unit(mix(&[seed, stream::RENDER_PHASE]), id as u64, 0, 0));
                    let entry = (
                        color.map(|c| c as f64 / 255.0),
                        Texture::for_class(classes, id),
                        phase,
                    );
                    lut[id as usize] = Some(entry);
                    entry
                }
            };
            let t = tex.eval(row, col, phase);
            let mut px = [0u8; 3];
            for ch in 0..3 {
                let noise = if noise_level > 0.0 {
                    noise_level as f64
                        * hash_unit(seed ^ stream::RENDER_NOISE, row as u64, col as u64, ch as u64)
                } else {
                    0.0
                };
                let v = (base[ch] + t + noise).clamp(0.0, 1.0);
                px[ch] = (v * 255.0).round() as u8;
            }
            out.put(row, col, px);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn mad_from_palette(img: &RgbImage, color: [u8; 3]) -> f64 {
        let mut s = 0.0;
        for (i, &v) in img.data.iter().enumerate() {
            s += (v as f64 - color[i % 3] as f64).abs() / 255.0;
        }
        s / img.data.len() as f64
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let c = ClassSet::default();
        let labels = Grid::filled(32, 32, 3u8);
        let a = render_from_labels(&labels, &c, 5, 0.1).unwrap();
        let b = render_from_labels(&labels, &c, 5, 0.1).unwrap();
        let d = render_from_labels(&labels, &c, 6, 0.1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
    }

    #[test]
    fn noiseless_single_class_is_palette_plus_texture() {
        let c = ClassSet::default();
        let labels = Grid::filled(16, 16, 2u8);
        let img = render_from_labels(&labels, &c, 1, 0.0).unwrap();
        let color = c.color(2).unwrap();
        for row in 0..16 {
            for col in 0..16 {
                let px = img.pixel(row, col);
                // luminance texture shifts all channels by the same amount
                let d0 = px[0] as i32 - color[0] as i32;
                for ch in 1..3 {
                    assert!((px[ch] as i32 - color[ch] as i32 - d0).abs() <= 1);
                }
                assert!(d0.abs() <= 9);
            }
        }
    }

    #[test]
    fn unknown_class_is_named() {
        let c = ClassSet::default();
        let labels = Grid::filled(4, 4, 42u8);
        match render_from_labels(&labels, &c, 0, 0.0) {
            Err(Error::UnknownClass(42)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn region_change_stays_local() {
        let c = ClassSet::default();
        let a = Grid::filled(64, 64, 0u8);
        let mut b = a.clone();
        for row in 20..30 {
            for col in 10..40 {
                b.set(row, col, 5);
            }
        }
        let ra = render_from_labels(&a, &c, 9, 0.05).unwrap();
        let rb = render_from_labels(&b, &c, 9, 0.05).unwrap();
        for row in 0..64 {
            for col in 0..64 {
                let inside = (20..30).contains(&row) && (10..40).contains(&col);
                if !inside {
                    assert_eq!(ra.pixel(row, col), rb.pixel(row, col), "({row},{col})");
                }
            }
        }
        assert_ne!(ra, rb);
    }

    #[test]
    fn deviation_grows_with_noise() {
        let c = ClassSet::default();
        let labels = Grid::filled(64, 64, 1u8);
        let color = c.color(1).unwrap();
        let mads: Vec<f64> = [0.0, 0.1, 0.2]
            .iter()
            .map(|&n| mad_from_palette(&render_from_labels(&labels, &c, 3, n).unwrap(), color))
            .collect();
        assert!(mads[0] < mads[1] && mads[1] < mads[2], "{mads:?}");
    }
}
