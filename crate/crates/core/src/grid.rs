//! Plain row-major raster containers shared by every module.

use crate::error::{Error, Result};

/// Row-major 2-D grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Grid<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "grid data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Grid { height, width, data })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Copy out the `size`×`size` window whose top-left corner is `(row, col)`.
    pub fn window(&self, row: usize, col: usize, size: usize) -> Grid<T> {
        let mut data = Vec::with_capacity(size * size);
        for r in row..row + size {
            data.extend_from_slice(&self.data[r * self.width + col..r * self.width + col + size]);
        }
        Grid {
            height: size,
            width: size,
            data,
        }
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }
}

pub type LabelMap = Grid<u8>;
pub type Mask = Grid<bool>;

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// 8-bit interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize) -> Self {
        RgbImage {
            height,
            width,
            data: vec![0; height * width * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, row: usize, col: usize, px: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }
}

/// Per-pixel class distribution, `height × width × classes`, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbField {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub data: Vec<f32>,
}

impl ProbField {
    pub fn row(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.classes;
        &self.data[i..i + self.classes]
    }

    pub fn row_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let i = (row * self.width + col) * self.classes;
        &mut self.data[i..i + self.classes]
    }

    /// Check every row sums to one within `tol`.
    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        for (i, row) in self.data.chunks(self.classes).enumerate() {
            let s: f64 = row.iter().map(|&p| p as f64).sum();
            if (s - 1.0).abs() > tol || row.iter().any(|&p| p < 0.0) {
                return Err(Error::invalid(format!(
                    "probability row {i} is not a distribution (sum {s})"
                )));
            }
        }
        Ok(())
    }
}
