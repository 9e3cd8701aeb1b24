//! Gradient and Laplacian edge detection with non-maximum suppression and
//! morphological edge linking.
//!
//! The Sobel kernels are normalized by 1/8 so a unit-slope ramp reports a
//! gradient of exactly 1, which keeps the analytic test cases clean.
//! Borders use replicate padding; any window that touches a nodata cell
//! yields nodata (gradients) or 0 (masks).

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::exec;
use crate::raster::{Mask, RasterGrid};

/// Per-pixel partial derivatives plus derived magnitude and orientation.
///
/// `orientation` is the quadrant-aware angle of (gy, gx) in `(-pi, pi]`,
/// defined as 0 where both partials vanish. `gy` is positive toward
/// increasing row.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub gx: RasterGrid,
    pub gy: RasterGrid,
    pub magnitude: RasterGrid,
    pub orientation: RasterGrid,
}

/// 3x3 Sobel partials of the grid, `/8` so a unit ramp gives unit slope.
pub fn sobel_gradient_field(grid: &RasterGrid) -> Result<GradientField> {
    if grid.rows() < 3 || grid.cols() < 3 {
        return Err(Error::GridTooSmall {
            rows: grid.rows(),
            cols: grid.cols(),
        });
    }
    let (rows, cols) = (grid.rows(), grid.cols());
    let n = rows * cols;

    // NaN marks windows that touched nodata; converted to the sentinel below.
    let mut partials = vec![[0.0f64; 2]; n];
    exec::for_each_row_mut(&mut partials, cols, |r, out_row| {
        for (c, out) in out_row.iter_mut().enumerate() {
            *out = sobel_window(grid, r, c).unwrap_or([f64::NAN, f64::NAN]);
        }
    });

    let mag_ori = exec::map_indexed(n, |i| {
        let [gx, gy] = partials[i];
        if gx.is_nan() {
            return [f64::NAN, f64::NAN];
        }
        let mag = gx.hypot(gy);
        let ori = if gx == 0.0 && gy == 0.0 {
            0.0
        } else {
            let a = gy.atan2(gx);
            if a == -PI {
                PI
            } else {
                a
            }
        };
        [mag, ori]
    });

    let layer = |pick: &dyn Fn(usize) -> f64| -> RasterGrid {
        let nodata = grid.nodata();
        let values = (0..n)
            .map(|i| {
                let v = pick(i);
                if v.is_nan() {
                    nodata.expect("nodata windows imply a sentinel")
                } else {
                    v
                }
            })
            .collect();
        let out = RasterGrid::new(rows, cols, values, nodata);
        match grid.geo() {
            Some(g) => out.with_geo(g),
            None => out,
        }
    };

    Ok(GradientField {
        gx: layer(&|i| partials[i][0]),
        gy: layer(&|i| partials[i][1]),
        magnitude: layer(&|i| mag_ori[i][0]),
        orientation: layer(&|i| mag_ori[i][1]),
    })
}

/// One Sobel window with replicate padding; None if any covered cell is nodata.
fn sobel_window(grid: &RasterGrid, r: usize, c: usize) -> Option<[f64; 2]> {
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let rows = grid.rows() as isize;
    let cols = grid.cols() as isize;
    let mut gx = 0.0;
    let mut gy = 0.0;
    for dr in -1isize..=1 {
        for dc in -1isize..=1 {
            let rr = (r as isize + dr).clamp(0, rows - 1) as usize;
            let cc = (c as isize + dc).clamp(0, cols - 1) as usize;
            if !grid.is_valid_rc(rr, cc) {
                return None;
            }
            let v = grid.get(rr, cc);
            gx += KX[(dr + 1) as usize][(dc + 1) as usize] * v;
            gy += KX[(dc + 1) as usize][(dr + 1) as usize] * v;
        }
    }
    Some([gx / 8.0, gy / 8.0])
}

/// Thin edges: a pixel survives iff its magnitude reaches `threshold` and is
/// at least as large as both neighbors along the gradient direction
/// (quantized to 0/45/90/135 degrees). Equal neighbors are retained.
pub fn nonmax_suppress(field: &GradientField, threshold: f64) -> Mask {
    assert!(threshold >= 0.0, "threshold must be >= 0");
    let mag = &field.magnitude;
    let ori = &field.orientation;
    let (rows, cols) = (mag.rows(), mag.cols());

    let mut bits = vec![false; rows * cols];
    exec::for_each_row_mut(&mut bits, cols, |r, out_row| {
        for (c, out) in out_row.iter_mut().enumerate() {
            let i = mag.idx(r, c);
            if !mag.is_valid(i) {
                continue;
            }
            let m = mag.values()[i];
            if m < threshold {
                continue;
            }
            let (dr, dc) = quantize_direction(ori.values()[i]);
            let fetch = |rr: isize, cc: isize| -> f64 {
                let rr = rr.clamp(0, rows as isize - 1) as usize;
                let cc = cc.clamp(0, cols as isize - 1) as usize;
                if mag.is_valid_rc(rr, cc) {
                    mag.get(rr, cc)
                } else {
                    0.0
                }
            };
            let ahead = fetch(r as isize + dr, c as isize + dc);
            let behind = fetch(r as isize - dr, c as isize - dc);
            *out = m >= ahead && m >= behind;
        }
    });

    Mask::new(rows, cols, bits, mag.geo())
}

/// Gradient angle to one of four neighbor offsets (rows grow downward).
fn quantize_direction(angle: f64) -> (isize, isize) {
    let mut a = angle;
    if a < 0.0 {
        a += PI;
    }
    let bin = ((a / (PI / 4.0)).round() as usize) % 4;
    match bin {
        0 => (0, 1),
        1 => (1, 1),
        2 => (1, 0),
        _ => (1, -1),
    }
}

/// Marks pixels where the 5-point Laplacian changes sign against a
/// 4-neighbor and the jump between the two Laplacians is at least `min_slope`.
pub fn laplacian_zero_crossings(grid: &RasterGrid, min_slope: f64) -> Result<Mask> {
    assert!(min_slope >= 0.0, "min_slope must be >= 0");
    if grid.rows() < 3 || grid.cols() < 3 {
        return Err(Error::GridTooSmall {
            rows: grid.rows(),
            cols: grid.cols(),
        });
    }
    let (rows, cols) = (grid.rows(), grid.cols());
    let n = rows * cols;

    let lap = exec::map_indexed(n, |i| {
        let (r, c) = (i / cols, i % cols);
        laplacian_window(grid, r, c).unwrap_or(f64::NAN)
    });

    let mut bits = vec![false; n];
    exec::for_each_row_mut(&mut bits, cols, |r, out_row| {
        for (c, out) in out_row.iter_mut().enumerate() {
            let here = lap[r * cols + c];
            if here.is_nan() {
                continue;
            }
            for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                let rr = r as isize + dr;
                let cc = c as isize + dc;
                if rr < 0 || cc < 0 || rr as usize >= rows || cc as usize >= cols {
                    continue;
                }
                let there = lap[rr as usize * cols + cc as usize];
                if there.is_nan() {
                    continue;
                }
                if here * there < 0.0 && (here - there).abs() >= min_slope {
                    *out = true;
                    break;
                }
            }
        }
    });

    Ok(Mask::new(rows, cols, bits, grid.geo()))
}

fn laplacian_window(grid: &RasterGrid, r: usize, c: usize) -> Option<f64> {
    let rows = grid.rows() as isize;
    let cols = grid.cols() as isize;
    let mut acc = 0.0;
    for (dr, dc, w) in [
        (0isize, 0isize, -4.0),
        (-1, 0, 1.0),
        (1, 0, 1.0),
        (0, -1, 1.0),
        (0, 1, 1.0),
    ] {
        let rr = (r as isize + dr).clamp(0, rows - 1) as usize;
        let cc = (c as isize + dc).clamp(0, cols - 1) as usize;
        if !grid.is_valid_rc(rr, cc) {
            return None;
        }
        acc += w * grid.get(rr, cc);
    }
    Some(acc)
}

/// Thickens edges by Chebyshev dilation with a square element of half-width
/// `radius`; radius 0 is the identity. The output always contains the input.
pub fn link_edges(edges: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return edges.clone();
    }
    let (rows, cols) = (edges.rows(), edges.cols());
    let r = radius as isize;

    // Separable: horizontal sweep, then vertical over the intermediate.
    let mut horiz = vec![false; rows * cols];
    exec::for_each_row_mut(&mut horiz, cols, |row, out_row| {
        for (c, out) in out_row.iter_mut().enumerate() {
            let lo = (c as isize - r).max(0) as usize;
            let hi = ((c as isize + r) as usize).min(cols - 1);
            *out = (lo..=hi).any(|cc| edges.get(row, cc));
        }
    });

    let mut bits = vec![false; rows * cols];
    exec::for_each_row_mut(&mut bits, cols, |row, out_row| {
        let lo = (row as isize - r).max(0) as usize;
        let hi = ((row as isize + r) as usize).min(rows - 1);
        for (c, out) in out_row.iter_mut().enumerate() {
            *out = (lo..=hi).any(|rr| horiz[rr * cols + c]);
        }
    });

    Mask::new(rows, cols, bits, edges.geo())
}
