//! Two-date change detection: image differencing, difference-space PCA,
//! post-classification comparison, change vector analysis, thematic change,
//! and multi-scale pyramid fusion.
//!
//! Parametric methods threshold their change statistic at
//! `mean + k_sigma * sd` over the co-valid pixels (population sd). Nodata
//! in either input always yields 0 in the mask and nodata in the layers.

use serde::Serialize;
use std::collections::BTreeSet;

use crate::cluster::ClassMap;
use crate::error::{Error, Result};
use crate::exec;
use crate::raster::{BandStack, GeoTransform, Mask, RasterGrid, DEFAULT_NODATA};

/// Which detector produced a [`ChangeResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeMethod {
    Difference,
    Pca,
    PostClassification,
    ChangeVector,
    Thematic,
    Multiscale,
}

impl ChangeMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ChangeMethod::Difference => "difference",
            ChangeMethod::Pca => "pca",
            ChangeMethod::PostClassification => "postclass",
            ChangeMethod::ChangeVector => "cva",
            ChangeMethod::Thematic => "thematic",
            ChangeMethod::Multiscale => "multiscale",
        }
    }
}

/// Per-pixel change verdict plus whatever layers the method produces.
#[derive(Debug, Clone)]
pub struct ChangeResult {
    pub mask: Mask,
    pub magnitude: Option<RasterGrid>,
    /// Change direction in radians; bi-band change vector analysis only.
    pub direction: Option<RasterGrid>,
    pub method: ChangeMethod,
    pub threshold_used: f64,
    /// Full-resolution per-level masks; populated by [`multiscale_fuse`].
    pub level_masks: Vec<Mask>,
}

/// Pixel-count table of class-at-date-A (rows) versus class-at-date-B
/// (columns).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionMatrix {
    k_a: usize,
    k_b: usize,
    counts: Vec<u64>,
}

impl TransitionMatrix {
    pub fn k_a(&self) -> usize {
        self.k_a
    }

    pub fn k_b(&self) -> usize {
        self.k_b
    }

    /// Count of pixels labeled `a_class` at date A and `b_class` at date B
    /// (1-based class ids).
    pub fn count(&self, a_class: usize, b_class: usize) -> u64 {
        self.counts[(a_class - 1) * self.k_b + (b_class - 1)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Pixels whose class did not change.
    pub fn diagonal_total(&self) -> u64 {
        (1..=self.k_a.min(self.k_b))
            .map(|c| self.count(c, c))
            .sum()
    }

    /// CSV with date-A classes as rows and date-B classes as columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("a_class\\b_class");
        for b in 1..=self.k_b {
            out.push_str(&format!(",{b}"));
        }
        out.push('\n');
        for a in 1..=self.k_a {
            out.push_str(&format!("{a}"));
            for b in 1..=self.k_b {
                out.push_str(&format!(",{}", self.count(a, b)));
            }
            out.push('\n');
        }
        out
    }

    /// JSON mirror of the matrix: class ids plus nested count rows.
    pub fn to_json(&self) -> String {
        let rows: Vec<Vec<u64>> = (1..=self.k_a)
            .map(|a| (1..=self.k_b).map(|b| self.count(a, b)).collect())
            .collect();
        let value = serde_json::json!({
            "k_a": self.k_a,
            "k_b": self.k_b,
            "counts": rows,
            "total": self.total(),
            "unchanged": self.diagonal_total(),
        });
        serde_json::to_string_pretty(&value).expect("matrix serializes")
    }
}

/// Multi-resolution stack: level 0 is the input, each level halves the
/// previous by 2x2 block means (dimensions round up, saturating at 1).
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<RasterGrid>,
}

impl Pyramid {
    pub fn levels(&self) -> &[RasterGrid] {
        &self.levels
    }

    pub fn level(&self, index: usize) -> &RasterGrid {
        &self.levels[index]
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }
}

fn covalid(a: &RasterGrid, b: &RasterGrid) -> Result<()> {
    if !a.same_shape(b) {
        return Err(a.shape_mismatch(b));
    }
    Ok(())
}

/// Builds a grid holding `value(i)` where `valid(i)`, nodata elsewhere.
fn masked_grid(
    rows: usize,
    cols: usize,
    geo: Option<GeoTransform>,
    nodata_hint: Option<f64>,
    valid: impl Fn(usize) -> bool + Sync,
    value: impl Fn(usize) -> f64 + Sync,
) -> RasterGrid {
    let any_invalid = (0..rows * cols).any(|i| !valid(i));
    let nodata = if any_invalid {
        Some(nodata_hint.unwrap_or(DEFAULT_NODATA))
    } else {
        nodata_hint
    };
    let sentinel = nodata.unwrap_or(DEFAULT_NODATA);
    let values = exec::map_indexed(rows * cols, |i| if valid(i) { value(i) } else { sentinel });
    let grid = RasterGrid::new(rows, cols, values, nodata);
    match geo {
        Some(g) => grid.with_geo(g),
        None => grid,
    }
}

/// Image differencing: per-pixel `d = b - a`, flagged where
/// `|d| > mean(|d|) + k_sigma * sd(|d|)`. The magnitude layer keeps the
/// signed difference.
pub fn image_difference(a: &RasterGrid, b: &RasterGrid, k_sigma: f64) -> Result<ChangeResult> {
    assert!(k_sigma > 0.0, "k_sigma must be > 0");
    covalid(a, b)?;
    let n = a.len();
    let valid = |i: usize| a.is_valid(i) && b.is_valid(i);
    let diff = |i: usize| b.values()[i] - a.values()[i];

    let (count, mean, sd) = exec::masked_stats(n, |i| valid(i).then(|| diff(i).abs()));
    if count == 0 {
        return Err(Error::NoValidPixels);
    }
    let threshold = mean + k_sigma * sd;

    let bits = exec::map_indexed(n, |i| valid(i) && diff(i).abs() > threshold);
    let magnitude = masked_grid(a.rows(), a.cols(), a.geo(), a.nodata().or(b.nodata()), valid, diff);

    Ok(ChangeResult {
        mask: Mask::new(a.rows(), a.cols(), bits, a.geo()),
        magnitude: Some(magnitude),
        direction: None,
        method: ChangeMethod::Difference,
        threshold_used: threshold,
        level_masks: Vec::new(),
    })
}

/// Eigenvalues and eigenvectors of a symmetric matrix (row-major `n x n`)
/// by cyclic Jacobi rotation, sorted by descending eigenvalue. Eigenvectors
/// come back as rows, orthonormal, with a deterministic sign convention.
///
/// Iteration stops when the off-diagonal Frobenius norm falls to
/// `1e-10 * |trace|` (or machine tiny for traceless input).
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(matrix.len(), n * n, "matrix must be n x n");
    let mut a = matrix.to_vec();
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let trace: f64 = (0..n).map(|i| matrix[i * n + i]).sum();
    let tol = 1e-10 * trace.abs().max(f64::MIN_POSITIVE);

    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += a[p * n + q] * a[p * n + q];
                }
            }
        }
        s.sqrt()
    };

    for _sweep in 0..64 {
        if off_norm(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let eigenvectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&col| {
            let mut vec: Vec<f64> = (0..n).map(|row| v[row * n + col]).collect();
            // Sign convention: the first largest-magnitude component positive.
            let mut lead = 0;
            for p in 1..n {
                if vec[p].abs() > vec[lead].abs() {
                    lead = p;
                }
            }
            if vec[lead] < 0.0 {
                for x in vec.iter_mut() {
                    *x = -*x;
                }
            }
            vec
        })
        .collect();

    (eigenvalues, eigenvectors)
}

/// Principal components of the band-space covariance of `b - a`.
#[derive(Debug, Clone, Serialize)]
pub struct PcaComponents {
    /// Descending, clamped at zero (the covariance is positive
    /// semi-definite by construction).
    pub eigenvalues: Vec<f64>,
    /// One orthonormal loading vector per component, descending order.
    pub loadings: Vec<Vec<f64>>,
    /// Band means of the difference image.
    pub mean: Vec<f64>,
}

impl PcaComponents {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("components serialize")
    }
}

/// PCA change detection on the difference stack `b - a`: the change score
/// is the absolute projection of the centered difference vector onto the
/// first principal component, thresholded at `mean + k_sigma * sd`.
pub fn pca_change(
    a: &BandStack,
    b: &BandStack,
    k_sigma: f64,
) -> Result<(ChangeResult, PcaComponents)> {
    assert!(k_sigma > 0.0, "k_sigma must be > 0");
    if a.band_count() != b.band_count() {
        return Err(Error::DimensionMismatch {
            left: format!("{} bands", a.band_count()),
            right: format!("{} bands", b.band_count()),
        });
    }
    covalid(&a.bands()[0], &b.bands()[0])?;
    let bands = a.band_count();
    let n = a.len();
    let valid = |i: usize| a.is_valid(i) && b.is_valid(i);
    let diff = |band: usize, i: usize| b.bands()[band].values()[i] - a.bands()[band].values()[i];

    let folded = exec::reduce_chunks(
        n,
        |range| {
            let mut count = 0u64;
            let mut sums = vec![0.0f64; bands];
            for i in range {
                if !valid(i) {
                    continue;
                }
                count += 1;
                for (band, s) in sums.iter_mut().enumerate() {
                    *s += diff(band, i);
                }
            }
            (count, sums)
        },
        |(ca, mut sa), (cb, sb)| {
            for (x, y) in sa.iter_mut().zip(&sb) {
                *x += y;
            }
            (ca + cb, sa)
        },
    )
    .expect("grids are non-empty");
    let (count, sums) = folded;
    if count == 0 {
        return Err(Error::NoValidPixels);
    }
    let mean: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();

    let cov = exec::reduce_chunks(
        n,
        |range| {
            let mut acc = vec![0.0f64; bands * bands];
            let mut centered = vec![0.0f64; bands];
            for i in range {
                if !valid(i) {
                    continue;
                }
                for (band, c) in centered.iter_mut().enumerate() {
                    *c = diff(band, i) - mean[band];
                }
                for p in 0..bands {
                    for q in p..bands {
                        acc[p * bands + q] += centered[p] * centered[q];
                    }
                }
            }
            acc
        },
        |mut x, y| {
            for (p, q) in x.iter_mut().zip(&y) {
                *p += q;
            }
            x
        },
    )
    .expect("grids are non-empty");
    let mut cov: Vec<f64> = cov.iter().map(|c| c / count as f64).collect();
    for p in 0..bands {
        for q in 0..p {
            cov[p * bands + q] = cov[q * bands + p];
        }
    }

    let trace: f64 = (0..bands).map(|i| cov[i * bands + i]).sum();
    if trace <= 0.0 {
        return Err(Error::DegenerateCovariance);
    }

    let (eigenvalues, loadings) = symmetric_eigen(&cov, bands);
    let eigenvalues: Vec<f64> = eigenvalues.into_iter().map(|l| l.max(0.0)).collect();
    let first = loadings[0].clone();

    let score = move |i: usize| -> f64 {
        (0..bands)
            .map(|band| (diff(band, i) - mean[band]) * first[band])
            .sum::<f64>()
            .abs()
    };
    let (_, score_mean, score_sd) = exec::masked_stats(n, |i| valid(i).then(|| score(i)));
    let threshold = score_mean + k_sigma * score_sd;

    let bits = exec::map_indexed(n, |i| valid(i) && score(i) > threshold);
    let geo = a.geo();
    let magnitude = masked_grid(a.rows(), a.cols(), geo, None, valid, &score);

    let mean_out = (0..bands)
        .map(|band| sums[band] / count as f64)
        .collect::<Vec<f64>>();
    Ok((
        ChangeResult {
            mask: Mask::new(a.rows(), a.cols(), bits, geo),
            magnitude: Some(magnitude),
            direction: None,
            method: ChangeMethod::Pca,
            threshold_used: threshold,
            level_masks: Vec::new(),
        },
        PcaComponents {
            eigenvalues,
            loadings,
            mean: mean_out,
        },
    ))
}

/// Post-classification comparison: tabulates label transitions and flags
/// pixels whose class differs (both dates valid).
pub fn postclass_compare(a: &ClassMap, b: &ClassMap) -> Result<(TransitionMatrix, ChangeResult)> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch {
            left: format!("{}x{}", a.rows(), a.cols()),
            right: format!("{}x{}", b.rows(), b.cols()),
        });
    }
    let (k_a, k_b) = (a.k(), b.k());
    let n = a.len();

    let counts = exec::reduce_chunks(
        n,
        |range| {
            let mut acc = vec![0u64; k_a * k_b];
            for i in range {
                let (la, lb) = (a.labels()[i], b.labels()[i]);
                if la > 0 && lb > 0 {
                    acc[(la as usize - 1) * k_b + (lb as usize - 1)] += 1;
                }
            }
            acc
        },
        |mut x, y| {
            for (p, q) in x.iter_mut().zip(&y) {
                *p += q;
            }
            x
        },
    )
    .unwrap_or_else(|| vec![0u64; k_a * k_b]);

    let bits = exec::map_indexed(n, |i| {
        let (la, lb) = (a.labels()[i], b.labels()[i]);
        la > 0 && lb > 0 && la != lb
    });

    Ok((
        TransitionMatrix { k_a, k_b, counts },
        ChangeResult {
            mask: Mask::new(a.rows(), a.cols(), bits, a.geo()),
            magnitude: None,
            direction: None,
            method: ChangeMethod::PostClassification,
            threshold_used: 0.0,
            level_masks: Vec::new(),
        },
    ))
}

/// Change vector analysis: magnitude is the Euclidean norm of the per-pixel
/// band difference vector; for two-band stacks the direction layer holds
/// `atan2(delta_band2, delta_band1)`.
pub fn change_vector_analysis(a: &BandStack, b: &BandStack, k_sigma: f64) -> Result<ChangeResult> {
    assert!(k_sigma > 0.0, "k_sigma must be > 0");
    if a.band_count() != b.band_count() {
        return Err(Error::DimensionMismatch {
            left: format!("{} bands", a.band_count()),
            right: format!("{} bands", b.band_count()),
        });
    }
    covalid(&a.bands()[0], &b.bands()[0])?;
    let bands = a.band_count();
    let n = a.len();
    let valid = |i: usize| a.is_valid(i) && b.is_valid(i);
    let diff = |band: usize, i: usize| b.bands()[band].values()[i] - a.bands()[band].values()[i];
    let magnitude_at = |i: usize| -> f64 {
        (0..bands)
            .map(|band| {
                let d = diff(band, i);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    };

    let (count, mean, sd) = exec::masked_stats(n, |i| valid(i).then(|| magnitude_at(i)));
    if count == 0 {
        return Err(Error::NoValidPixels);
    }
    let threshold = mean + k_sigma * sd;

    let bits = exec::map_indexed(n, |i| valid(i) && magnitude_at(i) > threshold);
    let geo = a.geo();
    let magnitude = masked_grid(a.rows(), a.cols(), geo, None, valid, magnitude_at);
    let direction = (bands == 2).then(|| {
        masked_grid(a.rows(), a.cols(), geo, None, valid, |i| {
            diff(1, i).atan2(diff(0, i))
        })
    });

    Ok(ChangeResult {
        mask: Mask::new(a.rows(), a.cols(), bits, geo),
        magnitude: Some(magnitude),
        direction,
        method: ChangeMethod::ChangeVector,
        threshold_used: threshold,
        level_masks: Vec::new(),
    })
}

/// Thematic change for a set of theme classes: flags pixels entering or
/// leaving the theme. The magnitude layer holds +1 for gains, -1 for
/// losses, and 0 for no thematic change.
pub fn thematic_change(a: &ClassMap, b: &ClassMap, theme: &BTreeSet<u32>) -> Result<ChangeResult> {
    if theme.is_empty() {
        return Err(Error::EmptyTheme);
    }
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch {
            left: format!("{}x{}", a.rows(), a.cols()),
            right: format!("{}x{}", b.rows(), b.cols()),
        });
    }
    let n = a.len();
    let valid = |i: usize| a.labels()[i] > 0 && b.labels()[i] > 0;
    let in_theme = |label: u32| theme.contains(&label);

    let bits = exec::map_indexed(n, |i| {
        valid(i) && (in_theme(a.labels()[i]) != in_theme(b.labels()[i]))
    });
    let magnitude = masked_grid(a.rows(), a.cols(), a.geo(), None, valid, |i| {
        match (in_theme(a.labels()[i]), in_theme(b.labels()[i])) {
            (false, true) => 1.0,
            (true, false) => -1.0,
            _ => 0.0,
        }
    });

    Ok(ChangeResult {
        mask: Mask::new(a.rows(), a.cols(), bits, a.geo()),
        magnitude: Some(magnitude),
        direction: None,
        method: ChangeMethod::Thematic,
        threshold_used: 0.0,
        level_masks: Vec::new(),
    })
}

/// Builds `levels` pyramid levels by repeated 2x2 block means of valid
/// cells; partial edge blocks average their available cells, all-nodata
/// blocks stay nodata. Dimensions halve rounding up and saturate at 1x1.
pub fn build_pyramid(grid: &RasterGrid, levels: usize) -> Pyramid {
    assert!(levels >= 1, "a pyramid has at least one level");
    let mut out = Vec::with_capacity(levels);
    out.push(grid.clone());
    for _ in 1..levels {
        let prev = out.last().unwrap();
        out.push(reduce_level(prev));
    }
    Pyramid { levels: out }
}

fn reduce_level(prev: &RasterGrid) -> RasterGrid {
    let rows = prev.rows().div_ceil(2);
    let cols = prev.cols().div_ceil(2);
    let nodata = prev.nodata().unwrap_or(DEFAULT_NODATA);

    let mut values = vec![0.0f64; rows * cols];
    exec::for_each_row_mut(&mut values, cols, |r, out_row| {
        for (c, out) in out_row.iter_mut().enumerate() {
            let mut sum = 0.0;
            let mut count = 0usize;
            for dr in 0..2 {
                for dc in 0..2 {
                    let (rr, cc) = (2 * r + dr, 2 * c + dc);
                    if rr < prev.rows() && cc < prev.cols() && prev.is_valid_rc(rr, cc) {
                        sum += prev.get(rr, cc);
                        count += 1;
                    }
                }
            }
            *out = if count > 0 { sum / count as f64 } else { nodata };
        }
    });

    let has_invalid = values.contains(&nodata);
    let grid = RasterGrid::new(
        rows,
        cols,
        values,
        (has_invalid || prev.nodata().is_some()).then_some(nodata),
    );
    match prev.geo() {
        Some(g) => {
            // A level cell covers a 2x2 block; its (0,0) center sits at the
            // block center, half a parent pixel diagonally inward.
            let scaled = GeoTransform::new(
                2.0 * g.a,
                2.0 * g.b,
                g.c + (g.a + g.b) / 2.0,
                2.0 * g.d,
                2.0 * g.e,
                g.f + (g.d + g.e) / 2.0,
            );
            grid.with_geo(scaled)
        }
        None => grid,
    }
}

/// Multi-scale change detection: difference every pyramid level, replicate
/// each coarse mask back to full resolution, and take a majority vote
/// (ties count as changed). Per-level masks are kept for inspection.
pub fn multiscale_fuse(
    a: &RasterGrid,
    b: &RasterGrid,
    levels: usize,
    k_sigma: f64,
) -> Result<ChangeResult> {
    assert!(levels >= 1, "fusion needs at least one level");
    covalid(a, b)?;
    let pyr_a = build_pyramid(a, levels);
    let pyr_b = build_pyramid(b, levels);

    let mut level_masks: Vec<Mask> = Vec::with_capacity(levels);
    let mut base: Option<ChangeResult> = None;
    for level in 0..levels {
        let detected = image_difference(pyr_a.level(level), pyr_b.level(level), k_sigma)?;
        let upsampled = replicate_to(&detected.mask, a.rows(), a.cols(), level, a.geo());
        level_masks.push(upsampled);
        if level == 0 {
            base = Some(detected);
        }
    }
    let base = base.expect("at least one level");

    let n = a.len();
    let covalid_at = |i: usize| a.is_valid(i) && b.is_valid(i);
    let bits = exec::map_indexed(n, |i| {
        if !covalid_at(i) {
            return false;
        }
        let votes = level_masks.iter().filter(|m| m.bits()[i]).count();
        2 * votes >= levels
    });

    Ok(ChangeResult {
        mask: Mask::new(a.rows(), a.cols(), bits, a.geo()),
        magnitude: base.magnitude,
        direction: None,
        method: ChangeMethod::Multiscale,
        threshold_used: base.threshold_used,
        level_masks,
    })
}

/// Nearest-neighbor block replication of a level-`level` mask back to full
/// resolution: full-res pixel (r,c) reads level cell (r >> level, c >> level).
fn replicate_to(
    mask: &Mask,
    rows: usize,
    cols: usize,
    level: usize,
    geo: Option<GeoTransform>,
) -> Mask {
    if level == 0 {
        return mask.clone();
    }
    let mut bits = vec![false; rows * cols];
    exec::for_each_row_mut(&mut bits, cols, |r, out_row| {
        let src_r = r >> level;
        for (c, out) in out_row.iter_mut().enumerate() {
            *out = mask.get(src_r, c >> level);
        }
    });
    Mask::new(rows, cols, bits, geo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::stack_bands;
    use approx::assert_relative_eq;

    #[test]
    fn identical_inputs_have_empty_difference_mask() {
        let a = RasterGrid::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], None);
        let r = image_difference(&a, &a.clone(), 2.0).unwrap();
        assert_eq!(r.mask.count_ones(), 0);
        assert!(r.magnitude.unwrap().values().iter().all(|&v| v == 0.0));
    }

    // Hand statistics on the 5x5 instance: |d| is 100 once and 0 otherwise,
    // mean 4, sd sqrt(384), threshold 4 + 2*19.59... ~= 43.2, so only that
    // single pixel exceeds it.
    #[test]
    fn single_pixel_change_is_flagged_exactly() {
        let a = RasterGrid::filled(5, 5, 0.0);
        let mut b = RasterGrid::filled(5, 5, 0.0);
        b.set(2, 3, 100.0);
        let r = image_difference(&a, &b, 2.0).unwrap();
        assert_eq!(r.mask.count_ones(), 1);
        assert!(r.mask.get(2, 3));
        let mean = 100.0 / 25.0;
        let sd = (100.0f64 * 100.0 / 25.0 - mean * mean).sqrt();
        assert_relative_eq!(r.threshold_used, mean + 2.0 * sd, epsilon = 1e-12);
    }

    #[test]
    fn swapping_dates_negates_magnitude_keeps_mask() {
        let a = RasterGrid::new(2, 2, vec![1.0, 5.0, 9.0, 0.0], None);
        let b = RasterGrid::new(2, 2, vec![2.0, 3.0, 9.5, 4.0], None);
        let fwd = image_difference(&a, &b, 1.0).unwrap();
        let rev = image_difference(&b, &a, 1.0).unwrap();
        assert_eq!(fwd.mask, rev.mask);
        let fm = fwd.magnitude.unwrap();
        let rm = rev.magnitude.unwrap();
        for i in 0..fm.len() {
            assert_eq!(fm.values()[i], -rm.values()[i]);
        }
    }

    #[test]
    fn difference_nodata_zeroes_mask() {
        let mut a = RasterGrid::filled(2, 2, 0.0);
        a.set_nodata_at(0, 0);
        let mut b = RasterGrid::filled(2, 2, 0.0);
        b.set(0, 0, 500.0);
        b.set(1, 1, 100.0);
        let r = image_difference(&a, &b, 1.0).unwrap();
        assert!(!r.mask.get(0, 0));
        assert!(!r.magnitude.as_ref().unwrap().is_valid_rc(0, 0));
    }

    // Analytic 2x2 eigensolution: [[2,1],[1,2]] has eigenpairs
    // (3, (1,1)/sqrt2) and (1, (1,-1)/sqrt2).
    #[test]
    fn jacobi_matches_analytic_two_by_two() {
        let (vals, vecs) = symmetric_eigen(&[2.0, 1.0, 1.0, 2.0], 2);
        assert_relative_eq!(vals[0], 3.0, epsilon = 1e-9);
        assert_relative_eq!(vals[1], 1.0, epsilon = 1e-9);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(vecs[0][0], s, epsilon = 1e-9);
        assert_relative_eq!(vecs[0][1], s, epsilon = 1e-9);
        assert_relative_eq!(vecs[1][0], s, epsilon = 1e-9);
        assert_relative_eq!(vecs[1][1], -s, epsilon = 1e-9);
    }

    #[test]
    fn jacobi_eigenvectors_are_orthonormal() {
        // SPD matrix built as A^T A.
        let a = [1.0, 2.0, 0.5, -1.0, 0.25, 3.0, 2.0, 1.0, -0.5];
        let n = 3;
        let mut m = vec![0.0f64; n * n];
        for p in 0..n {
            for q in 0..n {
                for k in 0..n {
                    m[p * n + q] += a[k * n + p] * a[k * n + q];
                }
            }
        }
        let (vals, vecs) = symmetric_eigen(&m, n);
        let trace: f64 = (0..n).map(|i| m[i * n + i]).sum();
        assert_relative_eq!(vals.iter().sum::<f64>(), trace, max_relative = 1e-9);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        for p in 0..n {
            for q in 0..n {
                let dot: f64 = (0..n).map(|k| vecs[p][k] * vecs[q][k]).sum();
                let expected = if p == q { 1.0 } else { 0.0 };
                assert_relative_eq!(dot, expected, epsilon = 1e-9);
            }
        }
    }

    fn stack_of(values: Vec<Vec<f64>>, rows: usize, cols: usize) -> BandStack {
        stack_bands(
            values
                .into_iter()
                .map(|v| RasterGrid::new(rows, cols, v, None))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn pca_identical_stacks_are_degenerate() {
        let a = stack_of(vec![vec![1.0, 2.0, 3.0, 4.0]], 2, 2);
        assert!(matches!(
            pca_change(&a, &a.clone(), 2.0),
            Err(Error::DegenerateCovariance)
        ));
    }

    #[test]
    fn pca_rank_one_difference_aligns_first_component() {
        // band2 difference is exactly twice band1's: loadings ~ (1,2)/sqrt5.
        let d1 = vec![1.0, -2.0, 3.0, 0.5, -1.5, 2.5, 0.0, 1.0, -0.5];
        let base1 = vec![5.0; 9];
        let base2 = vec![7.0; 9];
        let b1: Vec<f64> = base1.iter().zip(&d1).map(|(b, d)| b + d).collect();
        let b2: Vec<f64> = base2.iter().zip(&d1).map(|(b, d)| b + 2.0 * d).collect();
        let a = stack_of(vec![base1, base2], 3, 3);
        let b = stack_of(vec![b1, b2], 3, 3);
        let (_, comps) = pca_change(&a, &b, 2.0).unwrap();
        let s5 = 5.0f64.sqrt();
        assert_relative_eq!(comps.loadings[0][0], 1.0 / s5, epsilon = 1e-9);
        assert_relative_eq!(comps.loadings[0][1], 2.0 / s5, epsilon = 1e-9);
        assert!(comps.eigenvalues[1].abs() < 1e-9);
    }

    #[test]
    fn postclass_diagonal_when_identical() {
        let m = ClassMap::new(2, 2, vec![1, 1, 2, 2], 2, None);
        let (t, r) = postclass_compare(&m, &m.clone()).unwrap();
        assert_eq!(r.mask.count_ones(), 0);
        assert_eq!(t.total(), 4);
        assert_eq!(t.diagonal_total(), 4);
        assert_eq!(t.count(1, 2), 0);
    }

    #[test]
    fn postclass_counts_single_transition() {
        let a = ClassMap::new(2, 2, vec![1, 1, 2, 2], 2, None);
        let b = ClassMap::new(2, 2, vec![1, 2, 2, 2], 2, None);
        let (t, r) = postclass_compare(&a, &b).unwrap();
        assert_eq!(t.count(1, 1), 1);
        assert_eq!(t.count(1, 2), 1);
        assert_eq!(t.count(2, 2), 2);
        assert_eq!(r.mask.count_ones(), 1);
        assert!(r.mask.get(0, 1));
    }

    #[test]
    fn postclass_total_conserves_covalid_pixels() {
        let a = ClassMap::new(2, 3, vec![1, 0, 2, 2, 1, 1], 2, None);
        let b = ClassMap::new(2, 3, vec![2, 1, 0, 2, 1, 1], 2, None);
        let (t, r) = postclass_compare(&a, &b).unwrap();
        assert_eq!(t.total(), 4); // two cells lack a label on one date
        assert_eq!(t.diagonal_total() + r.mask.count_ones() as u64, t.total());
    }

    #[test]
    fn transition_json_mirrors_counts() {
        let a = ClassMap::new(2, 2, vec![1, 1, 2, 2], 2, None);
        let b = ClassMap::new(2, 2, vec![1, 2, 2, 2], 2, None);
        let (t, _) = postclass_compare(&a, &b).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(parsed["counts"][0][1], 1);
        assert_eq!(parsed["counts"][1][1], 2);
        assert_eq!(parsed["total"], 4);
        assert_eq!(parsed["unchanged"], 3);
        assert_eq!(t.to_json(), t.to_json());
    }

    #[test]
    fn cva_pythagorean_magnitude_and_direction() {
        let a = stack_of(vec![vec![1.0], vec![2.0]], 1, 1);
        let b = stack_of(vec![vec![4.0], vec![6.0]], 1, 1);
        let r = change_vector_analysis(&a, &b, 2.0).unwrap();
        assert_relative_eq!(r.magnitude.unwrap().get(0, 0), 5.0, epsilon = 1e-12);
        assert_relative_eq!(
            r.direction.unwrap().get(0, 0),
            4.0f64.atan2(3.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn cva_zero_for_identical_stacks() {
        let a = stack_of(vec![vec![1.0, 2.0, 3.0, 4.0]], 2, 2);
        let r = change_vector_analysis(&a, &a.clone(), 2.0).unwrap();
        assert!(r.magnitude.unwrap().values().iter().all(|&v| v == 0.0));
        assert!(r.direction.is_none()); // single band has no direction
    }

    // Oracle: direct per-pixel recomputation of sqrt(sum of squared deltas).
    #[test]
    fn cva_magnitude_matches_direct_recomputation() {
        let mut rng = 12345u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 33) as f64) / (u32::MAX as f64) * 20.0 - 10.0
        };
        let mut mk = |n: usize| -> Vec<f64> { (0..n).map(|_| next()).collect() };
        let a = stack_of(vec![mk(16), mk(16), mk(16)], 4, 4);
        let b = stack_of(vec![mk(16), mk(16), mk(16)], 4, 4);
        let r = change_vector_analysis(&a, &b, 2.0).unwrap();
        let mag = r.magnitude.unwrap();
        for i in 0..16 {
            let direct: f64 = (0..3)
                .map(|band| {
                    let d = b.bands()[band].values()[i] - a.bands()[band].values()[i];
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            assert_relative_eq!(mag.values()[i], direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn thematic_tracks_gains_and_losses() {
        let theme: BTreeSet<u32> = [1u32].into_iter().collect();
        let a = ClassMap::new(1, 3, vec![1, 2, 1], 2, None);
        let b = ClassMap::new(1, 3, vec![1, 1, 2], 2, None);
        let r = thematic_change(&a, &b, &theme).unwrap();
        assert_eq!(r.mask.count_ones(), 2);
        let mag = r.magnitude.unwrap();
        assert_eq!(mag.get(0, 0), 0.0);
        assert_eq!(mag.get(0, 1), 1.0); // gained the theme
        assert_eq!(mag.get(0, 2), -1.0); // lost it
    }

    #[test]
    fn thematic_identity_and_empty_theme() {
        let theme: BTreeSet<u32> = [1u32].into_iter().collect();
        let a = ClassMap::new(1, 2, vec![1, 2], 2, None);
        let r = thematic_change(&a, &a.clone(), &theme).unwrap();
        assert_eq!(r.mask.count_ones(), 0);
        assert!(matches!(
            thematic_change(&a, &a.clone(), &BTreeSet::new()),
            Err(Error::EmptyTheme)
        ));
    }

    #[test]
    fn pyramid_of_constant_grid_stays_constant() {
        let pyr = build_pyramid(&RasterGrid::filled(8, 8, 3.5), 4);
        assert_eq!(pyr.level_count(), 4);
        for level in pyr.levels() {
            assert!(level.values().iter().all(|&v| v == 3.5));
        }
        assert_eq!(pyr.level(3).rows(), 1);
    }

    #[test]
    fn pyramid_two_by_two_block_mean() {
        let grid = RasterGrid::new(2, 2, vec![0.0, 0.0, 10.0, 10.0], None);
        let pyr = build_pyramid(&grid, 2);
        assert_eq!(pyr.level(1).rows(), 1);
        assert_eq!(pyr.level(1).cols(), 1);
        assert_eq!(pyr.level(1).get(0, 0), 5.0);
    }

    // Hand block means for a 3x3: full block, right pair, bottom pair, corner.
    #[test]
    fn pyramid_partial_edge_blocks() {
        let grid = RasterGrid::new(3, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0], None);
        let pyr = build_pyramid(&grid, 2);
        let l1 = pyr.level(1);
        assert_eq!((l1.rows(), l1.cols()), (2, 2));
        assert_eq!(l1.get(0, 0), 3.0); // (1+2+4+5)/4
        assert_eq!(l1.get(0, 1), 4.5); // (3+6)/2
        assert_eq!(l1.get(1, 0), 7.5); // (7+8)/2
        assert_eq!(l1.get(1, 1), 9.0); // lone corner
    }

    #[test]
    fn pyramid_all_nodata_block_stays_nodata() {
        let mut grid = RasterGrid::filled(4, 4, 1.0);
        for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            grid.set_nodata_at(r, c);
        }
        let pyr = build_pyramid(&grid, 2);
        assert!(!pyr.level(1).is_valid_rc(0, 0));
        assert!(pyr.level(1).is_valid_rc(0, 1));
    }

    #[test]
    fn fuse_single_level_equals_plain_difference() {
        let a = RasterGrid::new(4, 4, (0..16).map(|i| i as f64).collect(), None);
        let mut b = a.clone();
        b.set(1, 1, 99.0);
        let fused = multiscale_fuse(&a, &b, 1, 2.0).unwrap();
        let plain = image_difference(&a, &b, 2.0).unwrap();
        assert_eq!(fused.mask, plain.mask);
        assert_eq!(fused.threshold_used, plain.threshold_used);
        assert_eq!(fused.level_masks.len(), 1);
    }

    #[test]
    fn fuse_unanimous_change_matches_level_zero() {
        let a = RasterGrid::filled(16, 16, 0.0);
        let mut b = a.clone();
        for r in 4..12 {
            for c in 4..12 {
                b.set(r, c, 50.0);
            }
        }
        let fused = multiscale_fuse(&a, &b, 3, 1.0).unwrap();
        let plain = image_difference(&a, &b, 1.0).unwrap();
        assert_eq!(fused.mask, plain.mask);
    }

    // The constructed noisy scene: an aligned 8x8 block change plus three
    // isolated single-pixel flips. Level 0 flags block and noise; at the
    // coarser levels the noise dilutes below each level's threshold while
    // the block survives, so the 3-level vote drops exactly the noise.
    #[test]
    fn fuse_majority_vote_removes_isolated_noise() {
        let a = RasterGrid::filled(16, 16, 0.0);
        let mut b = a.clone();
        for r in 4..12 {
            for c in 4..12 {
                b.set(r, c, 50.0);
            }
        }
        for (r, c) in [(0, 0), (2, 14), (14, 2)] {
            b.set(r, c, 100.0);
        }

        let level0 = image_difference(&a, &b, 1.0).unwrap();
        let fused = multiscale_fuse(&a, &b, 3, 1.0).unwrap();

        let truth = |r: usize, c: usize| (4..12).contains(&r) && (4..12).contains(&c);
        let mut l0_fp = 0;
        let mut l0_tp = 0;
        let mut fused_fp = 0;
        let mut fused_tp = 0;
        for r in 0..16 {
            for c in 0..16 {
                if truth(r, c) {
                    l0_tp += u32::from(level0.mask.get(r, c));
                    fused_tp += u32::from(fused.mask.get(r, c));
                } else {
                    l0_fp += u32::from(level0.mask.get(r, c));
                    fused_fp += u32::from(fused.mask.get(r, c));
                }
            }
        }
        assert_eq!(l0_tp, 64, "level 0 must see the block");
        assert_eq!(l0_fp, 3, "level 0 must see the noise");
        assert!(fused_fp < l0_fp, "fusion must drop false positives");
        assert!(fused_tp >= l0_tp, "fusion must not lose true positives");
        assert_eq!(fused.level_masks.len(), 3);
    }
}
