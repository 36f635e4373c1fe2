use std::sync::Arc;

use super::{Origin, Patch, Source};
use crate::error::{Error, Result};
use crate::grid::{Grid, LabelMap, RgbImage};

/// Row-major grid of non-overlapping patches over an image. Rows or columns
/// beyond the last full patch are cropped and recorded here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchLayout {
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Height of the bottom band that is not covered by any patch.
    pub cropped_rows: usize,
    /// Width of the right band that is not covered by any patch.
    pub cropped_cols: usize,
}

impl PatchLayout {
    pub fn new(height: usize, width: usize, patch_size: usize) -> Result<Self> {
        if patch_size < 8 {
            return Err(Error::invalid(format!("patch size {patch_size} below minimum 8")));
        }
        if patch_size > height.min(width) {
            return Err(Error::invalid(format!(
                "patch size {patch_size} exceeds image {height}x{width}"
            )));
        }
        Ok(PatchLayout {
            height,
            width,
            patch_size,
            grid_rows: height / patch_size,
            grid_cols: width / patch_size,
            cropped_rows: height % patch_size,
            cropped_cols: width % patch_size,
        })
    }

    pub fn len(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel offset of patch `index`.
    pub fn origin(&self, index: usize) -> (usize, usize) {
        (
            (index / self.grid_cols) * self.patch_size,
            (index % self.grid_cols) * self.patch_size,
        )
    }

    pub fn origins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.len()).map(|i| self.origin(i))
    }

    /// Whether pixel `(row, col)` is covered by a patch.
    pub fn covers(&self, row: usize, col: usize) -> bool {
        row < self.grid_rows * self.patch_size && col < self.grid_cols * self.patch_size
    }

    pub fn scored_pixels(&self) -> usize {
        self.len() * self.patch_size * self.patch_size
    }
}

/// Cut any grid into layout-ordered windows.
pub fn extract_grid<T: Clone>(grid: &Grid<T>, patch_size: usize) -> Result<(Vec<Grid<T>>, PatchLayout)> {
    let layout = PatchLayout::new(grid.height, grid.width, patch_size)?;
    let windows = layout
        .origins()
        .map(|(r, c)| grid.window(r, c, patch_size))
        .collect();
    Ok((windows, layout))
}

/// Cut an image and its labels into patches.
pub fn extract_patches(
    rgb: &RgbImage,
    labels: &LabelMap,
    patch_size: usize,
    image_id: &Arc<str>,
    source: Source,
) -> Result<(Vec<Patch>, PatchLayout)> {
    if rgb.height != labels.height || rgb.width != labels.width {
        return Err(Error::invalid("rgb and label shapes differ"));
    }
    let layout = PatchLayout::new(labels.height, labels.width, patch_size)?;
    let p = patch_size;
    let patches = layout
        .origins()
        .map(|(r0, c0)| {
            let mut px = Vec::with_capacity(p * p * 3);
            for r in r0..r0 + p {
                let start = (r * rgb.width + c0) * 3;
                px.extend(rgb.data[start..start + p * 3].iter().map(|&v| v as f32 / 255.0));
            }
            Patch {
                size: p,
                rgb: px,
                labels: labels.window(r0, c0, p),
                origin: Origin {
                    image: image_id.clone(),
                    row: r0,
                    col: c0,
                },
                source,
            }
        })
        .collect();
    Ok((patches, layout))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_origins_row_major() {
        let g = Grid::filled(64, 64, 0u8);
        let (w, l) = extract_grid(&g, 32).unwrap();
        assert_eq!(w.len(), 4);
        let o: Vec<_> = l.origins().collect();
        assert_eq!(o, vec![(0, 0), (0, 32), (32, 0), (32, 32)]);
    }

    #[test]
    fn remainder_is_cropped_and_recorded() {
        let g = Grid::filled(65, 64, 0u8);
        let (w, l) = extract_grid(&g, 32).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(l.cropped_rows, 1);
        assert_eq!(l.cropped_cols, 0);
        assert!(!l.covers(64, 0));
    }

    #[test]
    fn rejects_bad_sizes() {
        let g = Grid::filled(64, 64, 0u8);
        assert!(extract_grid(&g, 4).is_err());
        assert!(extract_grid(&g, 65).is_err());
    }

    #[test]
    fn patch_pixels_match_source() {
        let mut rgb = RgbImage::new(64, 64);
        for (i, v) in rgb.data.iter_mut().enumerate() {
            *v = (i % 251) as u8;
        }
        let labels = Grid::from_vec(64, 64, (0..64 * 64).map(|i| (i % 7) as u8).collect()).unwrap();
        let id: Arc<str> = Arc::from("img");
        let (patches, _) = extract_patches(&rgb, &labels, 32, &id, Source::Real).unwrap();
        let p = &patches[3];
        assert_eq!((p.origin.row, p.origin.col), (32, 32));
        assert_eq!(p.to_rgb8().pixel(5, 6), rgb.pixel(37, 38));
        assert_eq!(*p.labels.get(5, 6), *labels.get(37, 38));
    }
}
