//! Rectification and restoration: affine registration from control points,
//! grid resampling, and band normalization.

use std::path::Path;

use crate::error::{Error, Result};
use crate::exec;
use crate::raster::{GeoTransform, RasterGrid};

/// One registration pair: a source pixel and where it should land.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPoint {
    pub src_col: f64,
    pub src_row: f64,
    pub dst_x: f64,
    pub dst_y: f64,
}

/// Result of a least-squares affine registration.
#[derive(Debug, Clone)]
pub struct AffineFit {
    pub transform: GeoTransform,
    /// Root mean squared residual distance over all pairs, in target units.
    pub rmse: f64,
}

/// Resampling kernels for [`resample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMethod {
    /// Round half up on both axes.
    Nearest,
    /// 4-neighbor weighted average; any nodata neighbor poisons the sample.
    Bilinear,
}

/// Normalization modes for [`normalize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeMode {
    /// Map `[min, max]` to `[0, 1]`.
    MinMax,
    /// Map to mean 0, standard deviation 1 over valid cells.
    ZScore,
}

/// Fits the least-squares affine map from source pixels to targets by
/// solving the normal equations; needs >= 3 non-collinear source points.
pub fn fit_affine(points: &[ControlPoint]) -> Result<AffineFit> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints { got: points.len() });
    }

    // Both coordinates share one 3x3 normal matrix over (col, row, 1).
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs_x = [0.0f64; 3];
    let mut rhs_y = [0.0f64; 3];
    for p in points {
        let basis = [p.src_col, p.src_row, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
            rhs_x[i] += basis[i] * p.dst_x;
            rhs_y[i] += basis[i] * p.dst_y;
        }
    }

    let scale = m
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let [a, b, c] = solve3(m, rhs_x, scale)?;
    let [d, e, f] = solve3(m, rhs_y, scale)?;
    let transform = GeoTransform::new(a, b, c, d, e, f);

    let sum_sq: f64 = points
        .iter()
        .map(|p| {
            let (x, y) = transform.forward(p.src_col, p.src_row);
            let (rx, ry) = (x - p.dst_x, y - p.dst_y);
            rx * rx + ry * ry
        })
        .sum();
    let rmse = (sum_sq / points.len() as f64).sqrt();

    Ok(AffineFit { transform, rmse })
}

/// Gaussian elimination with partial pivoting on a 3x3 system. Pivots below
/// `1e-12` of the matrix scale mean the source points are collinear.
fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3], scale: f64) -> Result<[f64; 3]> {
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    for col in 0..3 {
        let pivot_row = (col..3)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[pivot_row][col].abs() <= tol {
            return Err(Error::CollinearPoints);
        }
        m.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        let pivot = m[col];
        for row in col + 1..3 {
            let factor = m[row][col] / pivot[col];
            for (x, p) in m[row][col..].iter_mut().zip(&pivot[col..]) {
                *x -= factor * p;
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut out = [0.0f64; 3];
    for row in (0..3).rev() {
        let mut acc = rhs[row];
        for k in row + 1..3 {
            acc -= m[row][k] * out[k];
        }
        out[row] = acc / m[row][row];
    }
    Ok(out)
}

/// Resamples `grid` onto an `out_rows` x `out_cols` target. `transform` maps
/// OUTPUT pixel (col,row) to INPUT pixel coordinates. Samples that fall
/// outside the input or touch nodata become nodata.
pub fn resample(
    grid: &RasterGrid,
    transform: &GeoTransform,
    out_rows: usize,
    out_cols: usize,
    method: ResampleMethod,
) -> Result<RasterGrid> {
    if transform.det() == 0.0 {
        return Err(Error::DegenerateTransform);
    }
    assert!(out_rows >= 1 && out_cols >= 1, "output must be at least 1x1");

    let nodata = grid.nodata().unwrap_or(crate::raster::DEFAULT_NODATA);
    let mut values = vec![0.0f64; out_rows * out_cols];
    exec::for_each_row_mut(&mut values, out_cols, |r, row| {
        for (c, out) in row.iter_mut().enumerate() {
            let (ci, ri) = transform.forward(c as f64, r as f64);
            *out = match sample_at(grid, ri, ci, method) {
                Some(v) => v,
                None => nodata,
            };
        }
    });

    let out = RasterGrid::new(out_rows, out_cols, values, Some(nodata));
    // An output pixel p shows the input at transform(p), so the output's
    // world mapping is the input's composed with the pixel transform.
    Ok(match grid.geo() {
        Some(g) => out.with_geo(g.compose(transform)),
        None => out,
    })
}

fn sample_at(grid: &RasterGrid, ri: f64, ci: f64, method: ResampleMethod) -> Option<f64> {
    match method {
        ResampleMethod::Nearest => {
            // Round half up: floor(x + 0.5), not round-half-away-from-zero.
            let r = (ri + 0.5).floor();
            let c = (ci + 0.5).floor();
            if !r.is_finite() || !c.is_finite() {
                return None;
            }
            grid.sample(r as isize, c as isize)
        }
        ResampleMethod::Bilinear => {
            let r0 = ri.floor();
            let c0 = ci.floor();
            if !r0.is_finite() || !c0.is_finite() {
                return None;
            }
            let fr = ri - r0;
            let fc = ci - c0;
            let (r0, c0) = (r0 as isize, c0 as isize);
            // A zero fraction needs no second neighbor; this keeps the
            // identity transform an exact identity at the last row/column.
            let r1 = if fr == 0.0 { r0 } else { r0 + 1 };
            let c1 = if fc == 0.0 { c0 } else { c0 + 1 };
            let v00 = grid.sample(r0, c0)?;
            let v01 = grid.sample(r0, c1)?;
            let v10 = grid.sample(r1, c0)?;
            let v11 = grid.sample(r1, c1)?;
            let top = v00 * (1.0 - fc) + v01 * fc;
            let bottom = v10 * (1.0 - fc) + v11 * fc;
            Some(top * (1.0 - fr) + bottom * fr)
        }
    }
}

/// Rescales valid cells to `[0,1]` (min-max) or to mean 0 / sd 1 (z-score).
/// Nodata cells pass through untouched.
pub fn normalize(grid: &RasterGrid, mode: NormalizeMode) -> Result<RasterGrid> {
    let n = grid.len();
    let valid = |i: usize| grid.is_valid(i).then(|| grid.values()[i]);
    let (count, mean, sd) = exec::masked_stats(n, valid);
    if count == 0 {
        return Err(Error::DegenerateRange);
    }

    let map: Box<dyn Fn(f64) -> f64 + Sync> = match mode {
        NormalizeMode::MinMax => {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in grid.valid_values() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if lo == hi {
                return Err(Error::DegenerateRange);
            }
            Box::new(move |v| (v - lo) / (hi - lo))
        }
        NormalizeMode::ZScore => {
            if sd == 0.0 {
                return Err(Error::DegenerateRange);
            }
            Box::new(move |v| (v - mean) / sd)
        }
    };

    let nodata = grid.nodata();
    let values = exec::map_indexed(n, |i| {
        if grid.is_valid(i) {
            map(grid.values()[i])
        } else {
            nodata.unwrap()
        }
    });
    let out = RasterGrid::new(grid.rows(), grid.cols(), values, nodata);
    Ok(match grid.geo() {
        Some(g) => out.with_geo(g),
        None => out,
    })
}

/// Reads control points from CSV lines `src_col,src_row,dst_x,dst_y`.
/// Blank lines and `#` comments are skipped.
pub fn read_control_points(path: impl AsRef<Path>) -> Result<Vec<ControlPoint>> {
    let text = std::fs::read_to_string(path)?;
    parse_control_points(&text)
}

fn parse_control_points(text: &str) -> Result<Vec<ControlPoint>> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields = crate::parse_csv_numbers(line, 4, i + 1)?;
        points.push(ControlPoint {
            src_col: fields[0],
            src_row: fields[1],
            dst_x: fields[2],
            dst_y: fields[3],
        });
    }
    Ok(points)
}
