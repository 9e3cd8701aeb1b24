//! Land-use/land-cover raster analysis.
//!
//! The crate covers the full batch pipeline for two-date grid analysis:
//!
//! - [`raster`]: grid, transform, band-stack, and mask types
//! - [`io`]: ASCII grid, PGM, and world-file readers/writers
//! - [`preprocess`]: affine registration, resampling, normalization
//! - [`edge`]: Sobel/Laplacian edge detection, suppression, linking
//! - [`segment`]: threshold, region-growing, and edge-based segmentation
//! - [`cluster`]: k-means and unsupervised classification
//! - [`gstat`]: General G high/low clustering statistic
//! - [`change`]: the five change detectors and multi-scale fusion
//! - [`report`]: hectare area reports
//!
//! With the default `parallel` feature the per-pixel and per-sample kernels
//! run on rayon; without it everything runs sequentially. Results are
//! identical either way, and for any thread count: reductions always
//! combine fixed-size chunks in order, and stochastic steps derive their
//! streams from explicit seeds.

pub mod change;
pub mod cluster;
pub mod edge;
pub mod error;
mod exec;
pub mod gstat;
pub mod io;
pub mod preprocess;
pub mod report;
pub mod segment;

pub mod raster;

pub use error::{Error, Result};
pub use raster::{BandStack, GeoTransform, Mask, RasterGrid};

/// Splits a CSV line into exactly `expected` finite numbers.
/// Shared by the control-point, seed, and point readers.
pub(crate) fn parse_csv_numbers(line: &str, expected: usize, line_no: usize) -> Result<Vec<f64>> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != expected {
        return Err(Error::WrongFieldCount {
            expected,
            found: fields.len(),
            line: line_no,
        });
    }
    fields
        .into_iter()
        .map(|field| match field.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::NonNumericLine {
                token: field.to_string(),
                line: line_no,
            }),
        })
        .collect()
}
