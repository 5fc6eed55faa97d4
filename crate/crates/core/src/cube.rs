//! Hyperspectral cubes stored band-major, row-major.

use crate::array::DenseArray;
use crate::error::{Error, Result};

/// A `bands × height × width` grid of reals.
///
/// The flat layout doubles as a `bands × (height·width)` matrix with one
/// column per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    bands: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl HyperCube {
    pub fn new(bands: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if bands == 0 || height == 0 || width == 0 {
            return Err(Error::dim(format!(
                "cube dimensions must be positive, got {bands}×{height}×{width}"
            )));
        }
        if data.len() != bands * height * width {
            return Err(Error::dim(format!(
                "{bands}×{height}×{width} cube needs {} values, got {}",
                bands * height * width,
                data.len()
            )));
        }
        Ok(Self {
            bands,
            height,
            width,
            data,
        })
    }

    pub fn zeros(bands: usize, height: usize, width: usize) -> Self {
        Self::filled(bands, height, width, 0.0)
    }

    pub fn filled(bands: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            bands,
            height,
            width,
            data: vec![value; bands * height * width],
        }
    }

    /// Builds a cube by evaluating `f(band, row, col)`.
    pub fn from_fn(
        bands: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(bands * height * width);
        for b in 0..bands {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(b, i, j));
                }
            }
        }
        Self {
            bands,
            height,
            width,
            data,
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.bands, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.data[(band * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, band: usize, row: usize, col: usize, value: f64) {
        self.data[(band * self.height + row) * self.width + col] = value;
    }

    pub fn band(&self, band: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[band * n..(band + 1) * n]
    }

    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.get(b, row, col)).collect()
    }

    /// `[bands, height, width]` array.
    pub fn to_array(&self) -> DenseArray {
        DenseArray::new(vec![self.bands, self.height, self.width], self.data.clone())
            .expect("cube sizes are consistent")
    }

    /// `[bands, height·width]` matrix, one column per pixel.
    pub fn to_matrix(&self) -> DenseArray {
        DenseArray::new(vec![self.bands, self.pixels()], self.data.clone())
            .expect("cube sizes are consistent")
    }

    /// Reinterprets an array of `bands·height·width` values.
    pub fn from_array(array: DenseArray, height: usize, width: usize) -> Result<Self> {
        let n = array.len();
        if height == 0 || width == 0 || n % (height * width) != 0 {
            return Err(Error::dim(format!(
                "{n} values do not tile a {height}×{width} grid"
            )));
        }
        Self::new(n / (height * width), height, width, array.into_data())
    }

    pub fn same_shape(&self, other: &HyperCube) -> bool {
        self.dims() == other.dims()
    }

    pub fn ensure_same_shape(&self, other: &HyperCube) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "cube shapes {:?} and {:?} differ",
                self.dims(),
                other.dims()
            )))
        }
    }

    pub fn clamp01(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    /// Affinely maps the global value range onto `[0, 1]`. A constant cube
    /// maps to zeros.
    pub fn scale_to_unit(mut self) -> Self {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        for v in &mut self.data {
            *v = if span > 0.0 {
                ((*v - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        self
    }

    /// Copies the `size×size` window whose top-left corner is `(row, col)`.
    pub fn window(&self, row: usize, col: usize, rows: usize, cols: usize) -> Result<HyperCube> {
        if row + rows > self.height || col + cols > self.width || rows == 0 || cols == 0 {
            return Err(Error::dim(format!(
                "window {rows}×{cols} at ({row},{col}) exceeds {}×{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.bands * rows * cols);
        for b in 0..self.bands {
            for i in row..row + rows {
                let start = (b * self.height + i) * self.width + col;
                data.extend_from_slice(&self.data[start..start + cols]);
            }
        }
        HyperCube::new(self.bands, rows, cols, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_band_major() {
        let c = HyperCube::from_fn(2, 2, 3, |b, i, j| (100 * b + 10 * i + j) as f64);
        assert_eq!(c.get(1, 1, 2), 112.0);
        assert_eq!(c.data()[6], 100.0);
        assert_eq!(c.spectrum(1, 0), vec![10.0, 110.0]);
        assert_eq!(c.to_matrix().shape(), &[2, 6]);
    }

    #[test]
    fn scale_to_unit_spans_range() {
        let c = HyperCube::new(1, 1, 3, vec![-2.0, 0.0, 2.0]).unwrap().scale_to_unit();
        assert_eq!(c.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(HyperCube::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(HyperCube::new(0, 2, 2, vec![]).is_err());
    }

    #[test]
    fn window_copies_region() {
        let c = HyperCube::from_fn(2, 4, 4, |b, i, j| (100 * b + 10 * i + j) as f64);
        let w = c.window(1, 2, 2, 2).unwrap();
        assert_eq!(w.data(), &[12.0, 13.0, 22.0, 23.0, 112.0, 113.0, 122.0, 123.0]);
        assert!(c.window(3, 3, 2, 2).is_err());
    }
}
