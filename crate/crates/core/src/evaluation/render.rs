use super::{DissimilarityMap, Masks};
use crate::error::{Error, Result};
use crate::grid::RgbImage;

/// Gutter width between panels, in pixels.
pub const GUTTER: usize = 4;
/// input | synthetic | dissimilarity | masks
pub const PANEL_COUNT: usize = 4;

const GUTTER_RGB: [u8; 3] = [255, 255, 255];
const UNSCORED_RGB: [u8; 3] = [64, 64, 64];
const OOD_RGB: [u8; 3] = [230, 40, 40];
const MISCLASS_RGB: [u8; 3] = [250, 210, 40];

/// Monotone heat colormap. The red channel is the 8-bit quantized score, so
/// the map inverts exactly through [`decode_colormap`].
pub fn colormap(score: f32) -> [u8; 3] {
    let q = (score.clamp(0.0, 1.0) * 255.0).round() as u32;
    [q as u8, ((q * q + 127) / 255) as u8, (255 - q) as u8]
}

/// Quantized score level `0..=255` of a colormap pixel, or `None` for a
/// pixel the colormap cannot produce.
pub fn decode_colormap(px: [u8; 3]) -> Option<u8> {
    let q = px[0];
    (colormap(q as f32 / 255.0) == px).then_some(q)
}

/// Side-by-side panel: real input, synthetic image, heatmap, and masks (OoD
/// red, misclassification yellow).
pub fn render_panel(real: &RgbImage, synthetic: &RgbImage, map: &DissimilarityMap, masks: &Masks) -> Result<RgbImage> {
    let (h, w) = (real.height, real.width);
    if synthetic.height != h || synthetic.width != w || map.values.height != h || map.values.width != w {
        return Err(Error::invalid("panel inputs differ in size"));
    }
    let total_w = PANEL_COUNT * w + (PANEL_COUNT - 1) * GUTTER;
    let mut out = RgbImage::new(h, total_w);
    for r in 0..h {
        for c in 0..total_w {
            out.put(r, c, GUTTER_RGB);
        }
    }
    let x0 = |k: usize| k * (w + GUTTER);
    for r in 0..h {
        for c in 0..w {
            out.put(r, x0(0) + c, real.pixel(r, c));
            out.put(r, x0(1) + c, synthetic.pixel(r, c));
            let heat = if map.is_scored(r, c) {
                colormap(*map.values.get(r, c))
            } else {
                UNSCORED_RGB
            };
            out.put(r, x0(2) + c, heat);
            let m = if *masks.ood.get(r, c) {
                OOD_RGB
            } else if *masks.misclass.get(r, c) {
                MISCLASS_RGB
            } else {
                [0, 0, 0]
            };
            out.put(r, x0(3) + c, m);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_is_monotone_and_invertible() {
        let mut prev = colormap(0.0);
        assert_eq!(decode_colormap(prev), Some(0));
        for q in 1..=255u8 {
            let px = colormap(q as f32 / 255.0);
            assert_eq!(decode_colormap(px), Some(q));
            assert!(px[0] > prev[0] && px[1] >= prev[1] && px[2] < prev[2]);
            prev = px;
        }
        assert_eq!(decode_colormap(UNSCORED_RGB), None);
    }
}
