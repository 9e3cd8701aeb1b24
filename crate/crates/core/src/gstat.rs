//! General G statistic for high/low value clustering, with distance-band
//! spatial weights and a conditional permutation significance test.
//!
//! For non-negative observations x and symmetric weights w built from a
//! cutoff distance d:
//!
//! ```text
//! G = sum_{i != j} w_ij x_i x_j / sum_{i != j} x_i x_j
//! E(G) = sum_{i != j} w_ij / (n (n - 1))
//! ```
//!
//! Both sums run over ordered pairs with i != j, so a constant positive
//! field gives G == E(G) exactly. The expectation depends only on the
//! weights and n, never on the values.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::raster::RasterGrid;

/// Weighting applied to pairs within the cutoff distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScheme {
    /// w = 1 for every pair with 0 < distance <= d.
    Binary,
    /// w = 1/distance for every pair with 0 < distance <= d.
    InverseDistance,
}

/// Sparse symmetric distance-band weights over n observations.
///
/// Pairs are stored once with i < j; every stored pair stands for the two
/// ordered entries (i,j) and (j,i). Self-pairs never appear.
#[derive(Debug, Clone)]
pub struct SpatialWeights {
    n: usize,
    pairs: Vec<(u32, u32, f64)>,
    scheme: WeightScheme,
    cutoff: f64,
}

impl SpatialWeights {
    /// Distance-band weights over explicit point coordinates.
    pub fn from_points(points: &[(f64, f64)], d: f64, scheme: WeightScheme) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::TooFewObservations { got: points.len() });
        }
        if !d.is_finite() || d <= 0.0 {
            return Err(Error::NonpositiveDistance { got: d });
        }
        let mut pairs = Vec::new();
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
                let dist = dx.hypot(dy);
                if dist > 0.0 && dist <= d {
                    pairs.push((i as u32, j as u32, pair_weight(dist, scheme)));
                }
            }
        }
        Ok(Self {
            n: points.len(),
            pairs,
            scheme,
            cutoff: d,
        })
    }

    /// Distance-band weights over a grid's valid cells, ordered row-major.
    /// Distances are center-to-center: in cell units without a transform,
    /// in map units (meters) with one.
    ///
    /// Cell centers form a lattice, so the pair scan only visits offsets
    /// that can fall inside the cutoff instead of every cell pair.
    pub fn from_raster(grid: &RasterGrid, d: f64, scheme: WeightScheme) -> Result<Self> {
        if !d.is_finite() || d <= 0.0 {
            return Err(Error::NonpositiveDistance { got: d });
        }
        let (rows, cols) = (grid.rows(), grid.cols());
        let mut obs_of_cell = vec![u32::MAX; grid.len()];
        let mut n = 0u32;
        for (i, slot) in obs_of_cell.iter_mut().enumerate() {
            if grid.is_valid(i) {
                *slot = n;
                n += 1;
            }
        }
        if n < 2 {
            return Err(Error::TooFewObservations { got: n as usize });
        }

        // Offset displacement for (dr, dc) is dc*(a,d) + dr*(b,e); with no
        // transform that is just (dc, dr). The smallest singular value of
        // the linear part bounds how many pixels an in-range pair can span.
        let (a, b, dd, e) = match grid.geo() {
            Some(g) => (g.a, g.b, g.d, g.e),
            None => (1.0, 0.0, 0.0, 1.0),
        };
        let (t, u, v) = (a * a + dd * dd, b * b + e * e, a * b + dd * e);
        let disc = ((t - u) * (t - u) + 4.0 * v * v).sqrt();
        let sigma_min = (((t + u) - disc) / 2.0).max(0.0).sqrt();
        if sigma_min == 0.0 {
            // Degenerate lattice; fall back to the generic point scan.
            let centers: Vec<(f64, f64)> = raster_observations(grid)
                .into_iter()
                .map(|(coords, _)| coords)
                .collect();
            return Self::from_points(&centers, d, scheme);
        }
        let reach = ((d / sigma_min).floor() as usize).min(rows.max(cols));

        // Forward offsets only: the partner always lies later in row-major
        // order, which keeps stored pairs canonical (i < j).
        let mut offsets: Vec<(usize, isize, f64)> = Vec::new();
        for dr in 0..=reach {
            let dc_range: Box<dyn Iterator<Item = isize>> = if dr == 0 {
                Box::new(1..=reach as isize)
            } else {
                Box::new(-(reach as isize)..=reach as isize)
            };
            for dc in dc_range {
                let dx = a * dc as f64 + b * dr as f64;
                let dy = dd * dc as f64 + e * dr as f64;
                let dist = dx.hypot(dy);
                if dist > 0.0 && dist <= d {
                    offsets.push((dr, dc, pair_weight(dist, scheme)));
                }
            }
        }

        let mut pairs = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = obs_of_cell[r * cols + c];
                if i == u32::MAX {
                    continue;
                }
                for &(dr, dc, w) in &offsets {
                    let rr = r + dr;
                    let cc = c as isize + dc;
                    if rr >= rows || cc < 0 || cc as usize >= cols {
                        continue;
                    }
                    let j = obs_of_cell[rr * cols + cc as usize];
                    if j != u32::MAX {
                        pairs.push((i, j, w));
                    }
                }
            }
        }
        Ok(Self {
            n: n as usize,
            pairs,
            scheme,
            cutoff: d,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored canonical pairs (i < j); each implies its mirror.
    pub fn pairs(&self) -> &[(u32, u32, f64)] {
        &self.pairs
    }

    pub fn scheme(&self) -> WeightScheme {
        self.scheme
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Number of ordered (i,j) entries with nonzero weight.
    pub fn ordered_len(&self) -> usize {
        self.pairs.len() * 2
    }

    /// Sum of weights over ordered pairs.
    pub fn sum_weights(&self) -> f64 {
        2.0 * exec::reduce_chunks(
            self.pairs.len(),
            |range| range.map(|p| self.pairs[p].2).sum::<f64>(),
            |a, b| a + b,
        )
        .unwrap_or(0.0)
    }
}

fn pair_weight(dist: f64, scheme: WeightScheme) -> f64 {
    match scheme {
        WeightScheme::Binary => 1.0,
        WeightScheme::InverseDistance => 1.0 / dist,
    }
}

/// Valid cells of a grid as (center coordinates, value) in row-major order;
/// the observation order used by [`SpatialWeights::from_raster`].
pub fn raster_observations(grid: &RasterGrid) -> Vec<((f64, f64), f64)> {
    let mut out = Vec::new();
    for r in 0..grid.rows() {
        for c in 0..grid.cols() {
            if !grid.is_valid_rc(r, c) {
                continue;
            }
            let coords = match grid.geo() {
                Some(geo) => geo.forward(c as f64, r as f64),
                None => (c as f64, r as f64),
            };
            out.push((coords, grid.get(r, c)));
        }
    }
    out
}

/// General G result; `permutation_p` is present only after
/// [`g_permutation_test`].
#[derive(Debug, Clone, Serialize)]
pub struct GResult {
    pub g: f64,
    pub expected_g: f64,
    pub n: usize,
    pub sum_weights: f64,
    pub permutation_p: Option<f64>,
}

impl GResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

fn validate_values(values: &[f64], weights: &SpatialWeights) -> Result<()> {
    assert_eq!(
        values.len(),
        weights.n(),
        "values must align with the weight observations"
    );
    for (i, &v) in values.iter().enumerate() {
        assert!(v.is_finite(), "values must be finite");
        if v < 0.0 {
            return Err(Error::NegativeValue { index: i, value: v });
        }
    }
    if weights.pairs().is_empty() {
        return Err(Error::EmptyWeights);
    }
    Ok(())
}

/// Weighted pair-product sum over ordered pairs, `2 * sum w_ij x_i x_j`.
fn weighted_pair_sum(values: &[f64], weights: &SpatialWeights) -> f64 {
    2.0 * exec::reduce_chunks(
        weights.pairs().len(),
        |range| {
            range
                .map(|p| {
                    let (i, j, w) = weights.pairs()[p];
                    w * values[i as usize] * values[j as usize]
                })
                .sum::<f64>()
        },
        |a, b| a + b,
    )
    .unwrap_or(0.0)
}

/// Pair-product denominator over ordered pairs: `(sum x)^2 - sum x^2`.
fn pair_product_total(values: &[f64]) -> f64 {
    let (sum, sumsq) = exec::reduce_chunks(
        values.len(),
        |range| {
            let mut s = 0.0;
            let mut sq = 0.0;
            for i in range {
                s += values[i];
                sq += values[i] * values[i];
            }
            (s, sq)
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    )
    .unwrap_or((0.0, 0.0));
    sum * sum - sumsq
}

/// Computes the General G statistic and its expectation.
pub fn general_g(values: &[f64], weights: &SpatialWeights) -> Result<GResult> {
    validate_values(values, weights)?;
    let denominator = pair_product_total(values);
    if denominator <= 0.0 {
        return Err(Error::AllZeroValues);
    }
    let n = weights.n();
    let sum_weights = weights.sum_weights();
    Ok(GResult {
        g: weighted_pair_sum(values, weights) / denominator,
        expected_g: sum_weights / (n as f64 * (n as f64 - 1.0)),
        n,
        sum_weights,
        permutation_p: None,
    })
}

/// Conditional permutation test: values are shuffled `n_perm` times with a
/// seeded generator and the two-sided p-value is
/// `(1 + #{|g_perm - E| >= |g_obs - E|}) / (n_perm + 1)`.
///
/// Each permutation uses its own counter-derived stream, so the result is
/// identical for any worker count.
pub fn g_permutation_test(
    values: &[f64],
    weights: &SpatialWeights,
    n_perm: usize,
    seed: u64,
) -> Result<GResult> {
    assert!(n_perm >= 99, "permutation test needs n_perm >= 99");
    let mut result = general_g(values, weights)?;
    let denominator = pair_product_total(values);
    let observed_dev = (result.g - result.expected_g).abs();
    let expected = result.expected_g;

    let hits = exec::map_indexed(n_perm, |p| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64 + 1);
        let mut shuffled = values.to_vec();
        for i in (1..shuffled.len()).rev() {
            let j = rng.random_range(0..=i);
            shuffled.swap(i, j);
        }
        let g_perm = weighted_pair_sum(&shuffled, weights) / denominator;
        u64::from((g_perm - expected).abs() >= observed_dev)
    });
    let exceed: u64 = hits.iter().sum();

    result.permutation_p = Some((1 + exceed) as f64 / (n_perm + 1) as f64);
    Ok(result)
}

/// Point coordinates paired with their observation values.
pub type PointObservations = (Vec<(f64, f64)>, Vec<f64>);

/// Reads observations from CSV lines `x,y,value`.
pub fn read_points_csv(path: impl AsRef<std::path::Path>) -> Result<PointObservations> {
    let text = std::fs::read_to_string(path)?;
    parse_points_csv(&text)
}

fn parse_points_csv(text: &str) -> Result<PointObservations> {
    let mut points = Vec::new();
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums = crate::parse_csv_numbers(line, 3, i + 1)?;
        points.push((nums[0], nums[1]));
        values.push(nums[2]);
    }
    Ok((points, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line_of_four() -> Vec<(f64, f64)> {
        (0..4).map(|i| (i as f64, 0.0)).collect()
    }

    #[test]
    fn binary_weights_keep_adjacent_pairs() {
        let w = SpatialWeights::from_points(&line_of_four(), 1.0, WeightScheme::Binary).unwrap();
        assert_eq!(w.ordered_len(), 6);
        let mut pairs: Vec<(u32, u32)> = w.pairs().iter().map(|&(i, j, _)| (i, j)).collect();
        pairs.sort_unstable();
        assert_eq!(pairs, vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(w.sum_weights(), 6.0);
    }

    #[test]
    fn short_cutoff_leaves_no_pairs() {
        let w = SpatialWeights::from_points(&line_of_four(), 0.5, WeightScheme::Binary).unwrap();
        assert_eq!(w.ordered_len(), 0);
    }

    #[test]
    fn raster_weights_are_rook_at_unit_distance() {
        let grid = RasterGrid::new(2, 2, vec![1.0, 2.0, 3.0, 4.0], None);
        let w = SpatialWeights::from_raster(&grid, 1.0, WeightScheme::Binary).unwrap();
        // 4 rook adjacencies; the two diagonals are sqrt(2) > 1 away.
        assert_eq!(w.ordered_len(), 8);
        let mut pairs: Vec<(u32, u32)> = w.pairs().iter().map(|&(i, j, _)| (i, j)).collect();
        pairs.sort_unstable();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn raster_weights_use_meters_with_georeferencing() {
        let geo = crate::raster::GeoTransform::north_up(100.0, 50.0, 350.0);
        let grid = RasterGrid::new(2, 2, vec![1.0, 2.0, 3.0, 4.0], None).with_geo(geo);
        let rook = SpatialWeights::from_raster(&grid, 100.0, WeightScheme::Binary).unwrap();
        assert_eq!(rook.pairs().len(), 4);
        let none = SpatialWeights::from_raster(&grid, 99.0, WeightScheme::Binary).unwrap();
        assert_eq!(none.pairs().len(), 0);
    }

    #[test]
    fn inverse_distance_weights_use_reciprocal() {
        let points = [(0.0, 0.0), (2.0, 0.0)];
        let w = SpatialWeights::from_points(&points, 2.0, WeightScheme::InverseDistance).unwrap();
        assert_eq!(w.pairs().len(), 1);
        assert_relative_eq!(w.pairs()[0].2, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn weights_validate_inputs() {
        assert!(matches!(
            SpatialWeights::from_points(&[(0.0, 0.0)], 1.0, WeightScheme::Binary),
            Err(Error::TooFewObservations { got: 1 })
        ));
        assert!(matches!(
            SpatialWeights::from_points(&line_of_four(), 0.0, WeightScheme::Binary),
            Err(Error::NonpositiveDistance { .. })
        ));
    }

    /// Independent O(n^2) oracle: direct double loop over ordered pairs.
    pub(crate) fn brute_force_g(
        points: &[(f64, f64)],
        values: &[f64],
        d: f64,
        scheme: WeightScheme,
    ) -> (f64, f64) {
        let n = points.len();
        let mut num = 0.0;
        let mut den = 0.0;
        let mut wsum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
                let dist = dx.hypot(dy);
                if dist > 0.0 && dist <= d {
                    let w = pair_weight(dist, scheme);
                    num += w * values[i] * values[j];
                    wsum += w;
                }
                den += values[i] * values[j];
            }
        }
        (num / den, wsum / (n as f64 * (n as f64 - 1.0)))
    }

    #[test]
    fn constant_field_matches_expectation_exactly() {
        let points = line_of_four();
        let w = SpatialWeights::from_points(&points, 1.0, WeightScheme::Binary).unwrap();
        let r = general_g(&[3.0, 3.0, 3.0, 3.0], &w).unwrap();
        assert_eq!(r.g, r.expected_g);
        assert_eq!(r.expected_g, 0.5);
    }

    // Brute-force enumeration of all 12 ordered pairs gives 14/26 for the
    // clustered arrangement and something below 1/2 for the alternating one.
    #[test]
    fn line_instance_matches_pair_enumeration() {
        let points = line_of_four();
        let w = SpatialWeights::from_points(&points, 1.0, WeightScheme::Binary).unwrap();

        let clustered = [1.0, 1.0, 2.0, 2.0];
        let r = general_g(&clustered, &w).unwrap();
        let (g_oracle, eg_oracle) = brute_force_g(&points, &clustered, 1.0, WeightScheme::Binary);
        assert_relative_eq!(r.g, 14.0 / 26.0, epsilon = 1e-12);
        assert_relative_eq!(r.g, g_oracle, epsilon = 1e-12);
        assert_relative_eq!(r.expected_g, 0.5, epsilon = 1e-15);
        assert_relative_eq!(r.expected_g, eg_oracle, epsilon = 1e-15);
        assert!(r.g > r.expected_g);

        let alternating = [2.0, 1.0, 2.0, 1.0];
        let r2 = general_g(&alternating, &w).unwrap();
        let (g2_oracle, _) = brute_force_g(&points, &alternating, 1.0, WeightScheme::Binary);
        assert_relative_eq!(r2.g, g2_oracle, epsilon = 1e-12);
        assert!(r2.g < 0.5);
    }

    #[test]
    fn g_rejects_bad_values() {
        let w = SpatialWeights::from_points(&line_of_four(), 1.0, WeightScheme::Binary).unwrap();
        assert!(matches!(
            general_g(&[1.0, -2.0, 1.0, 1.0], &w),
            Err(Error::NegativeValue { index: 1, .. })
        ));
        assert!(matches!(
            general_g(&[0.0, 0.0, 0.0, 0.0], &w),
            Err(Error::AllZeroValues)
        ));
        assert!(matches!(
            general_g(&[0.0, 5.0, 0.0, 0.0], &w),
            Err(Error::AllZeroValues)
        ));
        let empty = SpatialWeights::from_points(&line_of_four(), 0.5, WeightScheme::Binary).unwrap();
        assert!(matches!(
            general_g(&[1.0, 1.0, 2.0, 2.0], &empty),
            Err(Error::EmptyWeights)
        ));
    }

    // Six scattered points against the O(n^2) oracle, both schemes.
    #[test]
    fn six_point_instance_matches_oracle() {
        let points = [
            (0.0, 0.0),
            (1.0, 0.25),
            (1.5, 1.5),
            (0.25, 1.0),
            (2.5, 0.5),
            (2.0, 2.0),
        ];
        let values = [3.0, 0.5, 7.0, 1.0, 0.0, 4.5];
        for scheme in [WeightScheme::Binary, WeightScheme::InverseDistance] {
            let w = SpatialWeights::from_points(&points, 1.7, scheme).unwrap();
            let r = general_g(&values, &w).unwrap();
            let (g_oracle, eg_oracle) = brute_force_g(&points, &values, 1.7, scheme);
            assert_relative_eq!(r.g, g_oracle, epsilon = 1e-12);
            assert_relative_eq!(r.expected_g, eg_oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn g_is_scale_invariant() {
        let points = line_of_four();
        let w = SpatialWeights::from_points(&points, 1.0, WeightScheme::Binary).unwrap();
        let base = general_g(&[1.0, 1.0, 2.0, 2.0], &w).unwrap();
        let scaled = general_g(&[1000.0, 1000.0, 2000.0, 2000.0], &w).unwrap();
        assert_relative_eq!(base.g, scaled.g, max_relative = 1e-12);
        assert_eq!(base.expected_g, scaled.expected_g);
    }

    #[test]
    fn permutation_p_is_one_for_constant_values() {
        let w = SpatialWeights::from_points(&line_of_four(), 1.0, WeightScheme::Binary).unwrap();
        let r = g_permutation_test(&[5.0, 5.0, 5.0, 5.0], &w, 99, 7).unwrap();
        assert_eq!(r.permutation_p, Some(1.0));
    }

    // Oracle: exact enumeration of all 4! = 24 permutations of the values.
    #[test]
    fn permutation_p_matches_exact_enumeration() {
        let points = line_of_four();
        let w = SpatialWeights::from_points(&points, 1.0, WeightScheme::Binary).unwrap();
        let values = [1.0, 1.0, 2.0, 2.0];
        let r = g_permutation_test(&values, &w, 999, 42).unwrap();

        let expected_g = r.expected_g;
        let observed_dev = (r.g - expected_g).abs();
        let mut hits = 0usize;
        let mut total = 0usize;
        let perm_indices = permutations(&[0, 1, 2, 3]);
        assert_eq!(perm_indices.len(), 24);
        for perm in perm_indices {
            let arranged: Vec<f64> = perm.iter().map(|&i| values[i]).collect();
            let (g_perm, _) = brute_force_g(&points, &arranged, 1.0, WeightScheme::Binary);
            total += 1;
            if (g_perm - expected_g).abs() >= observed_dev - 1e-12 {
                hits += 1;
            }
        }
        let exact = hits as f64 / total as f64;
        let sampled = r.permutation_p.unwrap();
        assert!(
            (sampled - exact).abs() <= 0.05,
            "sampled {sampled} vs exact {exact}"
        );
    }

    #[test]
    fn permutation_test_is_deterministic() {
        let w = SpatialWeights::from_points(&line_of_four(), 1.0, WeightScheme::Binary).unwrap();
        let values = [1.0, 1.0, 2.0, 2.0];
        let a = g_permutation_test(&values, &w, 199, 9).unwrap();
        let b = g_permutation_test(&values, &w, 199, 9).unwrap();
        assert_eq!(a.permutation_p, b.permutation_p);
    }

    pub(crate) fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for (i, &head) in items.iter().enumerate() {
            let rest: Vec<usize> = items
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, &v)| v)
                .collect();
            for mut tail in permutations(&rest) {
                tail.insert(0, head);
                out.push(tail);
            }
        }
        out
    }

    #[test]
    fn points_csv_parses_triples() {
        let (points, values) = parse_points_csv("0,0,1\n1,0,1\n2,0,2\n3,0,2\n").unwrap();
        assert_eq!(points.len(), 4);
        assert_eq!(values, vec![1.0, 1.0, 2.0, 2.0]);
        assert!(matches!(
            parse_points_csv("1,2\n"),
            Err(Error::WrongFieldCount { .. })
        ));
    }
}
