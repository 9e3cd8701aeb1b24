//! Core grid types: single-band rasters, affine georeferencing, band stacks,
//! and binary masks.
//!
//! Values are stored row-major, top row first, as `f64` regardless of the
//! source bit depth so every downstream computation runs in one arithmetic.
//! Nodata cells hold the sentinel value itself; `is_valid` compares against
//! it. All types are immutable in normal use and safe to share across
//! worker threads.

use crate::error::{Error, Result};

/// Default nodata sentinel for grids that need one but whose inputs carried none.
pub const DEFAULT_NODATA: f64 = -9999.0;

/// Affine map between pixel and world coordinates:
///
/// ```text
/// world_x = a*col + b*row + c
/// world_y = d*col + e*row + f
/// ```
///
/// `(c, f)` is the world position of the CENTER of pixel `(col=0, row=0)`,
/// the standard world-file convention. Linear units are meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTransform {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl GeoTransform {
    pub fn new(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> Self {
        Self { a, b, c, d, e, f }
    }

    /// North-up square-cell transform: `cell` wide pixels, no rotation,
    /// `(center_x, center_y)` the center of the top-left pixel.
    pub fn north_up(cell: f64, center_x: f64, center_y: f64) -> Self {
        Self::new(cell, 0.0, center_x, 0.0, -cell, center_y)
    }

    /// Determinant `a*e - b*d` of the linear part.
    pub fn det(&self) -> f64 {
        self.a * self.e - self.b * self.d
    }

    /// Area of one cell in squared linear units.
    pub fn cell_area(&self) -> f64 {
        self.det().abs()
    }

    pub fn is_axis_aligned(&self) -> bool {
        self.b == 0.0 && self.d == 0.0
    }

    /// Pixel (col,row) to world (x,y). Fractional pixel coordinates are fine.
    pub fn forward(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.a * col + self.b * row + self.c,
            self.d * col + self.e * row + self.f,
        )
    }

    /// Composition with another affine: `self.compose(&inner).forward(p)`
    /// equals `self.forward(inner.forward(p))`.
    pub fn compose(&self, inner: &GeoTransform) -> GeoTransform {
        GeoTransform::new(
            self.a * inner.a + self.b * inner.d,
            self.a * inner.b + self.b * inner.e,
            self.a * inner.c + self.b * inner.f + self.c,
            self.d * inner.a + self.e * inner.d,
            self.d * inner.b + self.e * inner.e,
            self.d * inner.c + self.e * inner.f + self.f,
        )
    }

    /// World (x,y) back to fractional pixel (col,row); the exact algebraic
    /// inverse of [`forward`](Self::forward).
    pub fn inverse(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let det = self.det();
        if det == 0.0 {
            return Err(Error::DegenerateTransform);
        }
        let dx = x - self.c;
        let dy = y - self.f;
        Ok((
            (self.e * dx - self.b * dy) / det,
            (self.a * dy - self.d * dx) / det,
        ))
    }
}

/// Single-band 2-D grid of measurement values with an optional nodata
/// sentinel and optional georeferencing.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    nodata: Option<f64>,
    geo: Option<GeoTransform>,
}

impl RasterGrid {
    /// Builds a grid from row-major values.
    ///
    /// Panics if the shape is empty, `values.len() != rows*cols`, or any
    /// value is non-finite; those are caller bugs, not runtime conditions.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, nodata: Option<f64>) -> Self {
        assert!(rows >= 1 && cols >= 1, "grid must be at least 1x1");
        assert_eq!(values.len(), rows * cols, "values must fill rows*cols");
        assert!(
            values.iter().all(|v| v.is_finite()),
            "grid values must be finite"
        );
        if let Some(nd) = nodata {
            assert!(nd.is_finite(), "nodata sentinel must be finite");
        }
        Self {
            rows,
            cols,
            values,
            nodata,
            geo: None,
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::new(rows, cols, vec![value; rows * cols], None)
    }

    pub fn with_geo(mut self, geo: GeoTransform) -> Self {
        self.geo = Some(geo);
        self
    }

    pub fn with_nodata(mut self, nodata: f64) -> Self {
        assert!(nodata.is_finite(), "nodata sentinel must be finite");
        self.nodata = Some(nodata);
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a grid is always at least 1x1
    }

    pub fn nodata(&self) -> Option<f64> {
        self.nodata
    }

    pub fn geo(&self) -> Option<GeoTransform> {
        self.geo
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.idx(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(value.is_finite(), "grid values must be finite");
        let i = self.idx(row, col);
        self.values[i] = value;
    }

    /// Marks a cell nodata, installing the default sentinel if none is set.
    pub fn set_nodata_at(&mut self, row: usize, col: usize) {
        let nd = *self.nodata.get_or_insert(DEFAULT_NODATA);
        let i = self.idx(row, col);
        self.values[i] = nd;
    }

    #[inline]
    pub fn is_valid(&self, index: usize) -> bool {
        match self.nodata {
            Some(nd) => self.values[index] != nd,
            None => true,
        }
    }

    #[inline]
    pub fn is_valid_rc(&self, row: usize, col: usize) -> bool {
        self.is_valid(self.idx(row, col))
    }

    /// Value at (row,col) if in bounds and valid.
    pub fn sample(&self, row: isize, col: isize) -> Option<f64> {
        if row < 0 || col < 0 || row as usize >= self.rows || col as usize >= self.cols {
            return None;
        }
        let i = self.idx(row as usize, col as usize);
        self.is_valid(i).then(|| self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_valid(i)).count()
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.is_valid(*i))
            .map(|(_, v)| *v)
    }

    pub fn same_shape(&self, other: &RasterGrid) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub(crate) fn shape_mismatch(&self, other: &RasterGrid) -> Error {
        Error::DimensionMismatch {
            left: format!("{}x{}", self.rows, self.cols),
            right: format!("{}x{}", other.rows, other.cols),
        }
    }
}

/// Binary per-pixel mask sharing a grid's geometry. Used for edge maps and
/// change masks; nodata source pixels are always 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
    geo: Option<GeoTransform>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>, geo: Option<GeoTransform>) -> Self {
        assert!(rows >= 1 && cols >= 1, "mask must be at least 1x1");
        assert_eq!(bits.len(), rows * cols, "bits must fill rows*cols");
        Self {
            rows,
            cols,
            bits,
            geo,
        }
    }

    pub fn empty(rows: usize, cols: usize, geo: Option<GeoTransform>) -> Self {
        Self::new(rows, cols, vec![false; rows * cols], geo)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn geo(&self) -> Option<GeoTransform> {
        self.geo
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[self.idx(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        let i = self.idx(row, col);
        self.bits[i] = on;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// 0/1 grid carrying the mask's geometry; no nodata.
    pub fn to_grid(&self) -> RasterGrid {
        let values = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let grid = RasterGrid::new(self.rows, self.cols, values, None);
        match self.geo {
            Some(g) => grid.with_geo(g),
            None => grid,
        }
    }
}

/// Ordered stack of co-registered bands; a pixel's vector across bands is
/// its position in measurement space.
#[derive(Debug, Clone)]
pub struct BandStack {
    bands: Vec<RasterGrid>,
}

impl BandStack {
    /// Stacks bands after checking they all share the first band's shape.
    /// The first band's georeferencing is used for all derived products.
    pub fn new(bands: Vec<RasterGrid>) -> Result<Self> {
        let first = bands.first().ok_or(Error::EmptyInput)?;
        for band in &bands[1..] {
            if !first.same_shape(band) {
                return Err(first.shape_mismatch(band));
            }
        }
        Ok(Self { bands })
    }

    pub fn bands(&self) -> &[RasterGrid] {
        &self.bands
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn rows(&self) -> usize {
        self.bands[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.bands[0].cols()
    }

    pub fn len(&self) -> usize {
        self.bands[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn geo(&self) -> Option<GeoTransform> {
        self.bands[0].geo()
    }

    /// A pixel is valid only when every band is valid there.
    #[inline]
    pub fn is_valid(&self, index: usize) -> bool {
        self.bands.iter().all(|b| b.is_valid(index))
    }

    /// Writes the pixel's band vector into `buf`; returns false on nodata.
    pub fn pixel_into(&self, index: usize, buf: &mut Vec<f64>) -> bool {
        buf.clear();
        if !self.is_valid(index) {
            return false;
        }
        buf.extend(self.bands.iter().map(|b| b.values()[index]));
        true
    }
}

/// Stacks grids into a [`BandStack`]; all must share dimensions.
pub fn stack_bands(grids: Vec<RasterGrid>) -> Result<BandStack> {
    BandStack::new(grids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn forward_maps_origin_pixel_to_its_center() {
        let geo = GeoTransform::new(1.0, 0.0, 0.5, 0.0, -1.0, 1.5);
        assert_eq!(geo.forward(0.0, 0.0), (0.5, 1.5));
    }

    #[test]
    fn inverse_undoes_forward() {
        let geo = GeoTransform::new(2.0, 0.25, 31.5, -0.1, -2.0, 99.25);
        let (x, y) = geo.forward(3.25, 7.5);
        let (col, row) = geo.inverse(x, y).unwrap();
        assert_relative_eq!(col, 3.25, max_relative = 1e-9);
        assert_relative_eq!(row, 7.5, max_relative = 1e-9);
    }

    #[test]
    fn compose_chains_affines() {
        let outer = GeoTransform::new(2.0, 0.0, 100.0, 0.0, -2.0, 50.0);
        let inner = GeoTransform::new(1.0, 0.0, 3.0, 0.0, 1.0, -1.0);
        let composed = outer.compose(&inner);
        for (col, row) in [(0.0, 0.0), (1.5, -2.0), (7.0, 3.25)] {
            let (ix, iy) = inner.forward(col, row);
            assert_eq!(composed.forward(col, row), outer.forward(ix, iy));
        }
        // Composing with the identity pixel map changes nothing.
        let identity = GeoTransform::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        assert_eq!(outer.compose(&identity), outer);
    }

    #[test]
    fn inverse_rejects_degenerate_transform() {
        let geo = GeoTransform::new(0.0, 0.0, 1.0, 0.0, 0.0, 2.0);
        assert!(matches!(
            geo.inverse(0.0, 0.0),
            Err(Error::DegenerateTransform)
        ));
    }

    #[test]
    fn nodata_cells_are_invalid() {
        let g = RasterGrid::new(2, 2, vec![1.0, -9999.0, 3.0, 4.0], Some(-9999.0));
        assert!(g.is_valid_rc(0, 0));
        assert!(!g.is_valid_rc(0, 1));
        assert_eq!(g.valid_count(), 3);
    }

    #[test]
    fn stack_exposes_pixel_vectors() {
        let a = RasterGrid::new(2, 2, vec![1.0, 2.0, 3.0, 4.0], None);
        let b = RasterGrid::new(2, 2, vec![10.0, 20.0, 30.0, 40.0], None);
        let stack = stack_bands(vec![a, b]).unwrap();
        let mut buf = Vec::new();
        assert!(stack.pixel_into(3, &mut buf));
        assert_eq!(buf, vec![4.0, 40.0]);
    }

    #[test]
    fn stack_rejects_dimension_mismatch() {
        let a = RasterGrid::filled(2, 2, 0.0);
        let b = RasterGrid::filled(3, 3, 0.0);
        assert!(matches!(
            stack_bands(vec![a, b]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(stack_bands(vec![]), Err(Error::EmptyInput)));
    }

    #[test]
    fn stack_pixel_invalid_when_any_band_is_nodata() {
        let a = RasterGrid::new(2, 2, vec![-1.0, 2.0, 3.0, 4.0], Some(-1.0));
        let b = RasterGrid::filled(2, 2, 7.0);
        let stack = stack_bands(vec![a, b]).unwrap();
        assert!(!stack.is_valid(0));
        assert!(stack.is_valid(1));
    }
}
