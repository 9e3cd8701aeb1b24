//! The three segmentation families: threshold bucketing, seeded region
//! growing, and edge-based partitioning, plus the shared 4-connected
//! component labeler.
//!
//! 4-connectivity is used throughout so that edge curves actually separate
//! the regions they outline. Region growing and edge absorption are
//! deliberately sequential: their results depend on a documented visit
//! order, and that order is part of the contract.

use std::collections::VecDeque;

use crate::edge;
use crate::error::{Error, Result};
use crate::exec;
use crate::raster::{GeoTransform, Mask, RasterGrid};

/// Integer-labeled partition of a grid. Label 0 means unlabeled/nodata;
/// the remaining labels are exactly `1..=segment_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMap {
    rows: usize,
    cols: usize,
    labels: Vec<u32>,
    segment_count: usize,
    geo: Option<GeoTransform>,
}

impl SegmentMap {
    fn new(
        rows: usize,
        cols: usize,
        labels: Vec<u32>,
        segment_count: usize,
        geo: Option<GeoTransform>,
    ) -> Self {
        debug_assert_eq!(labels.len(), rows * cols);
        debug_assert!(labels.iter().all(|&l| l as usize <= segment_count));
        Self {
            rows,
            cols,
            labels,
            segment_count,
            geo,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn segment_count(&self) -> usize {
        self.segment_count
    }

    pub fn geo(&self) -> Option<GeoTransform> {
        self.geo
    }

    #[inline]
    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.cols + col]
    }

    /// Labels as a grid; 0 cells become nodata under the default sentinel.
    pub fn to_grid(&self) -> RasterGrid {
        let nd = crate::raster::DEFAULT_NODATA;
        let values = self
            .labels
            .iter()
            .map(|&l| if l == 0 { nd } else { l as f64 })
            .collect();
        let grid = RasterGrid::new(self.rows, self.cols, values, Some(nd));
        match self.geo {
            Some(g) => grid.with_geo(g),
            None => grid,
        }
    }
}

/// Renumbers nonzero labels to the contiguous range `1..=k`, preserving
/// the order of the original label values.
fn compact_labels(labels: &mut [u32], max_label: usize) -> usize {
    let mut present = vec![false; max_label + 1];
    for &l in labels.iter() {
        present[l as usize] = true;
    }
    let mut remap = vec![0u32; max_label + 1];
    let mut next = 0u32;
    for (old, &p) in present.iter().enumerate().skip(1) {
        if p {
            next += 1;
            remap[old] = next;
        }
    }
    for l in labels.iter_mut() {
        *l = remap[*l as usize];
    }
    next as usize
}

/// Buckets valid pixels by the strictly ascending `cuts`: a pixel's bucket
/// is 1 + the number of cuts strictly below its value. Empty buckets are
/// compacted away.
pub fn threshold_segment(grid: &RasterGrid, cuts: &[f64]) -> Result<SegmentMap> {
    if !cuts.iter().all(|c| c.is_finite()) || cuts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::UnsortedCuts);
    }

    let mut labels = exec::map_indexed(grid.len(), |i| {
        if !grid.is_valid(i) {
            return 0u32;
        }
        let v = grid.values()[i];
        let below = cuts.partition_point(|&cut| cut < v);
        below as u32 + 1
    });
    let count = compact_labels(&mut labels, cuts.len() + 1);
    Ok(SegmentMap::new(
        grid.rows(),
        grid.cols(),
        labels,
        count,
        grid.geo(),
    ))
}

/// Grows a region from each seed in order with breadth-first search.
/// A 4-neighbor is admitted when its value is within `tolerance` of the
/// region's running mean; the mean updates on admission and earlier seeds
/// keep what they claim. Neighbors are visited up, left, right, down.
pub fn region_grow(
    grid: &RasterGrid,
    seeds: &[(usize, usize)],
    tolerance: f64,
) -> Result<SegmentMap> {
    assert!(tolerance >= 0.0, "tolerance must be >= 0");
    let (rows, cols) = (grid.rows(), grid.cols());
    for &(col, row) in seeds {
        if row >= rows || col >= cols {
            return Err(Error::SeedOutOfBounds { col, row });
        }
        if !grid.is_valid_rc(row, col) {
            return Err(Error::SeedOnNodata { col, row });
        }
    }

    let mut labels = vec![0u32; grid.len()];
    let mut queue = VecDeque::new();
    let mut next_label = 0u32;
    for &(col, row) in seeds {
        let seed_idx = row * cols + col;
        if labels[seed_idx] != 0 {
            continue; // already swallowed by an earlier region
        }
        next_label += 1;
        let label = next_label;
        labels[seed_idx] = label;
        let mut sum = grid.values()[seed_idx];
        let mut count = 1usize;
        queue.clear();
        queue.push_back((row, col));
        while let Some((r, c)) = queue.pop_front() {
            for (dr, dc) in [(-1isize, 0isize), (0, -1), (0, 1), (1, 0)] {
                let rr = r as isize + dr;
                let cc = c as isize + dc;
                if rr < 0 || cc < 0 || rr as usize >= rows || cc as usize >= cols {
                    continue;
                }
                let (rr, cc) = (rr as usize, cc as usize);
                let idx = rr * cols + cc;
                if labels[idx] != 0 || !grid.is_valid(idx) {
                    continue;
                }
                let mean = sum / count as f64;
                if (grid.values()[idx] - mean).abs() <= tolerance {
                    labels[idx] = label;
                    sum += grid.values()[idx];
                    count += 1;
                    queue.push_back((rr, cc));
                }
            }
        }
    }

    let count = compact_labels(&mut labels, next_label as usize);
    Ok(SegmentMap::new(rows, cols, labels, count, grid.geo()))
}

/// Labels 4-connected components of the mask's 1-pixels, numbered
/// `1..=k` in row-major first-encounter order (classic two-pass).
pub fn label_components(mask: &Mask) -> SegmentMap {
    let (rows, cols) = (mask.rows(), mask.cols());
    let mut provisional = vec![0u32; rows * cols];
    let mut parent: Vec<u32> = vec![0]; // parent[0] unused

    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            parent[x as usize] = parent[parent[x as usize] as usize];
            x = parent[x as usize];
        }
        x
    }

    for r in 0..rows {
        for c in 0..cols {
            if !mask.get(r, c) {
                continue;
            }
            let up = (r > 0 && mask.get(r - 1, c)).then(|| provisional[(r - 1) * cols + c]);
            let left = (c > 0 && mask.get(r, c - 1)).then(|| provisional[r * cols + c - 1]);
            let label = match (up, left) {
                (None, None) => {
                    let fresh = parent.len() as u32;
                    parent.push(fresh);
                    fresh
                }
                (Some(a), None) | (None, Some(a)) => find(&mut parent, a),
                (Some(a), Some(b)) => {
                    let ra = find(&mut parent, a);
                    let rb = find(&mut parent, b);
                    let (lo, hi) = (ra.min(rb), ra.max(rb));
                    parent[hi as usize] = lo;
                    lo
                }
            };
            provisional[r * cols + c] = label;
        }
    }

    // Second pass: resolve roots and number them by first appearance.
    let mut final_of_root = vec![0u32; parent.len()];
    let mut labels = vec![0u32; rows * cols];
    let mut count = 0u32;
    for i in 0..labels.len() {
        if provisional[i] == 0 {
            continue;
        }
        let root = find(&mut parent, provisional[i]);
        if final_of_root[root as usize] == 0 {
            count += 1;
            final_of_root[root as usize] = count;
        }
        labels[i] = final_of_root[root as usize];
    }

    SegmentMap::new(rows, cols, labels, count as usize, mask.geo())
}

/// Edge-based segmentation: Sobel gradients, non-maximum suppression at
/// `nms_threshold`, edge linking with `dilate_radius`, 4-connected labeling
/// of the non-edge pixels, then each edge pixel joins the adjacent segment
/// whose mean value is closest (ties to the lowest label).
pub fn edge_based_segment(
    grid: &RasterGrid,
    nms_threshold: f64,
    dilate_radius: usize,
) -> Result<SegmentMap> {
    let field = edge::sobel_gradient_field(grid)?;
    let edges = edge::link_edges(&edge::nonmax_suppress(&field, nms_threshold), dilate_radius);
    let (rows, cols) = (grid.rows(), grid.cols());

    let valid_nonedge = Mask::new(
        rows,
        cols,
        (0..grid.len())
            .map(|i| grid.is_valid(i) && !edges.bits()[i])
            .collect(),
        grid.geo(),
    );
    let base = label_components(&valid_nonedge);
    if base.segment_count() == 0 {
        // Every valid pixel is an edge pixel; fall back to labeling the
        // valid area directly so no pixel is orphaned.
        let valid = Mask::new(
            rows,
            cols,
            (0..grid.len()).map(|i| grid.is_valid(i)).collect(),
            grid.geo(),
        );
        return Ok(label_components(&valid));
    }

    let mut labels = base.labels().to_vec();
    let count = base.segment_count();

    // Segment means over the non-edge members, fixed during absorption.
    let mut sums = vec![0.0f64; count + 1];
    let mut counts = vec![0u64; count + 1];
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            sums[l as usize] += grid.values()[i];
            counts[l as usize] += 1;
        }
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();

    let mut remaining: Vec<usize> = (0..grid.len())
        .filter(|&i| grid.is_valid(i) && labels[i] == 0)
        .collect();
    while !remaining.is_empty() {
        // Batch per pass: assignments are computed against the labeling at
        // the start of the pass, so within-pass order cannot matter.
        let mut assignments: Vec<(usize, u32)> = Vec::new();
        for &i in &remaining {
            let (r, c) = (i / cols, i % cols);
            let mut best: Option<(f64, u32)> = None;
            for (dr, dc) in [(-1isize, 0isize), (0, -1), (0, 1), (1, 0)] {
                let rr = r as isize + dr;
                let cc = c as isize + dc;
                if rr < 0 || cc < 0 || rr as usize >= rows || cc as usize >= cols {
                    continue;
                }
                let l = labels[rr as usize * cols + cc as usize];
                if l == 0 {
                    continue;
                }
                let dist = (grid.values()[i] - means[l as usize]).abs();
                let candidate = (dist, l);
                best = Some(match best {
                    None => candidate,
                    Some(current) => {
                        if candidate.0 < current.0
                            || (candidate.0 == current.0 && candidate.1 < current.1)
                        {
                            candidate
                        } else {
                            current
                        }
                    }
                });
            }
            if let Some((_, l)) = best {
                assignments.push((i, l));
            }
        }
        if assignments.is_empty() {
            // Valid pixels with no path to any segment (edge islands inside
            // nodata); label their components as fresh segments.
            let island = Mask::new(
                rows,
                cols,
                {
                    let mut bits = vec![false; grid.len()];
                    for &i in &remaining {
                        bits[i] = true;
                    }
                    bits
                },
                grid.geo(),
            );
            let extra = label_components(&island);
            for (i, &l) in extra.labels().iter().enumerate() {
                if l != 0 {
                    labels[i] = count as u32 + l;
                }
            }
            let total = count + extra.segment_count();
            return Ok(SegmentMap::new(rows, cols, labels, total, grid.geo()));
        }
        for &(i, l) in &assignments {
            labels[i] = l;
        }
        remaining.retain(|&i| labels[i] == 0);
    }

    Ok(SegmentMap::new(rows, cols, labels, count, grid.geo()))
}

/// Reads region-growing seeds from CSV lines `col,row`.
pub fn read_seeds(path: impl AsRef<std::path::Path>) -> Result<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path)?;
    parse_seeds(&text)
}

fn parse_seeds(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut seeds = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums = crate::parse_csv_numbers(line, 2, i + 1)?;
        if nums.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
            return Err(Error::NonNumericLine {
                token: line.to_string(),
                line: i + 1,
            });
        }
        seeds.push((nums[0] as usize, nums[1] as usize));
    }
    Ok(seeds)
}
