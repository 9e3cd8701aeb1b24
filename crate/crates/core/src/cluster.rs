//! k-means clustering in band space and unsupervised classification of a
//! band stack into a class map.
//!
//! Everything here is deterministic: initialization draws distinct samples
//! with a seeded generator, ties break to the lowest centroid index, and
//! centroid updates reduce in fixed chunk order so the fitted model does
//! not depend on the worker count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::raster::{BandStack, GeoTransform, RasterGrid};

/// A fitted k-means model.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterModel {
    pub k: usize,
    pub dim: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Per-cluster mean squared distance of assigned samples to the centroid.
    pub variances: Vec<f64>,
    /// Sum of squared distances of samples to their assigned centroids.
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    /// Inertia recorded at every assignment step, ending with the final one.
    #[serde(skip)]
    pub inertia_trace: Vec<f64>,
}

impl ClusterModel {
    /// JSON dump of the model (k, centroids, variances, inertia,
    /// iterations, seed).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// Integer class labels per pixel; 0 marks nodata. Class ids run `1..=k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    rows: usize,
    cols: usize,
    labels: Vec<u32>,
    k: usize,
    geo: Option<GeoTransform>,
    names: Option<Vec<String>>,
}

impl ClassMap {
    pub fn new(
        rows: usize,
        cols: usize,
        labels: Vec<u32>,
        k: usize,
        geo: Option<GeoTransform>,
    ) -> Self {
        assert_eq!(labels.len(), rows * cols);
        assert!(labels.iter().all(|&l| l as usize <= k), "label exceeds k");
        Self {
            rows,
            cols,
            labels,
            k,
            geo,
            names: None,
        }
    }

    /// Attaches class names; `names[i]` belongs to class `i + 1`.
    pub fn with_names(mut self, names: Vec<String>) -> Self {
        assert_eq!(names.len(), self.k);
        self.names = Some(names);
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn geo(&self) -> Option<GeoTransform> {
        self.geo
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    #[inline]
    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.cols + col]
    }

    pub fn same_shape(&self, other: &ClassMap) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Class labels as a grid; label 0 becomes nodata.
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

    /// Reads a class map from a grid of integer labels; nodata becomes 0.
    pub fn from_grid(grid: &RasterGrid) -> Result<ClassMap> {
        let mut labels = Vec::with_capacity(grid.len());
        let mut k = 0usize;
        for i in 0..grid.len() {
            if !grid.is_valid(i) {
                labels.push(0);
                continue;
            }
            let v = grid.values()[i];
            if v < 1.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                return Err(Error::InvalidClassLabel { index: i, value: v });
            }
            let l = v as u32;
            k = k.max(l as usize);
            labels.push(l);
        }
        Ok(ClassMap::new(grid.rows(), grid.cols(), labels, k, grid.geo()))
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Nearest centroid by squared Euclidean distance; ties take the lowest index.
#[inline]
fn nearest(centroids: &[Vec<f64>], sample: &[f64]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (j, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(sample, centroid);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's algorithm on flat sample-major data (`samples.len() == n * dim`).
///
/// Initialization draws `k` distinct sample values uniformly without
/// replacement from a generator seeded with `seed`. Empty clusters are
/// re-seeded to the sample farthest from its assigned centroid. Iteration
/// stops when the largest centroid displacement is at most `tol` or after
/// `max_iter` update steps.
pub fn kmeans_fit(
    samples: &[f64],
    dim: usize,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterModel> {
    assert!(dim >= 1, "dimension must be >= 1");
    assert!(k >= 1, "k must be >= 1");
    assert!(tol >= 0.0, "tol must be >= 0");
    assert_eq!(samples.len() % dim, 0, "samples must be a multiple of dim");
    assert!(
        samples.iter().all(|v| v.is_finite()),
        "samples must be finite"
    );
    let n = samples.len() / dim;
    let sample = |i: usize| &samples[i * dim..(i + 1) * dim];

    // Pool of distinct sample values in first-occurrence order.
    let mut seen = std::collections::HashSet::new();
    let mut pool: Vec<usize> = Vec::new();
    for i in 0..n {
        let key: Vec<u64> = sample(i).iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            pool.push(i);
        }
    }
    if pool.len() < k {
        return Err(Error::TooFewDistinctSamples {
            needed: k,
            found: pool.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    let mut centroids: Vec<Vec<f64>> = pool[..k].iter().map(|&i| sample(i).to_vec()).collect();

    let mut inertia_trace = Vec::new();
    let mut iterations = 0usize;
    let mut converged = false;
    let mut labels: Vec<u32>;
    let mut dists: Vec<f64>;

    loop {
        let assigned = assign_all(samples, dim, &centroids);
        labels = assigned.0;
        dists = assigned.1;
        inertia_trace.push(dists.iter().sum());

        if converged || iterations >= max_iter {
            break;
        }

        // Mean update with a fixed-chunk-order reduction.
        let acc = exec::reduce_chunks(
            n,
            |range| {
                let mut sums = vec![0.0f64; k * dim];
                let mut counts = vec![0u64; k];
                for i in range {
                    let j = labels[i] as usize;
                    counts[j] += 1;
                    for (s, v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(sample(i)) {
                        *s += v;
                    }
                }
                (sums, counts)
            },
            |(mut sa, mut ca), (sb, cb)| {
                for (a, b) in sa.iter_mut().zip(&sb) {
                    *a += b;
                }
                for (a, b) in ca.iter_mut().zip(&cb) {
                    *a += b;
                }
                (sa, ca)
            },
        )
        .expect("n >= k >= 1");
        let (sums, counts) = acc;

        let mut next: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                if counts[j] > 0 {
                    sums[j * dim..(j + 1) * dim]
                        .iter()
                        .map(|s| s / counts[j] as f64)
                        .collect()
                } else {
                    centroids[j].clone()
                }
            })
            .collect();

        // Re-seed empty clusters to the farthest-from-its-centroid sample,
        // lowest cluster index first, never reusing a sample in one round.
        let mut reseed_dists = dists.clone();
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let far = (0..n)
                .max_by(|&a, &b| reseed_dists[a].total_cmp(&reseed_dists[b]))
                .expect("at least one sample");
            next[j] = sample(far).to_vec();
            reseed_dists[far] = -1.0;
        }

        let displacement = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0f64, f64::max);
        centroids = next;
        iterations += 1;
        if displacement <= tol {
            converged = true; // one more assignment pass records the final state
        }
    }

    let inertia = *inertia_trace.last().expect("at least one assignment");
    let mut sq_sums = vec![0.0f64; k];
    let mut counts = vec![0u64; k];
    for i in 0..n {
        sq_sums[labels[i] as usize] += dists[i];
        counts[labels[i] as usize] += 1;
    }
    let variances = sq_sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();

    Ok(ClusterModel {
        k,
        dim,
        centroids,
        variances,
        inertia,
        iterations,
        converged,
        seed,
        inertia_trace,
    })
}

/// Assignment step shared by fitting and prediction; deterministic order.
fn assign_all(samples: &[f64], dim: usize, centroids: &[Vec<f64>]) -> (Vec<u32>, Vec<f64>) {
    let n = samples.len() / dim;
    let pairs = exec::map_indexed(n, |i| {
        let (j, d) = nearest(centroids, &samples[i * dim..(i + 1) * dim]);
        (j as u32, d)
    });
    let mut labels = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    for (l, d) in pairs {
        labels.push(l);
        dists.push(d);
    }
    (labels, dists)
}

/// Labels each sample with its nearest centroid, `1..=k`.
pub fn kmeans_assign(model: &ClusterModel, samples: &[f64], dim: usize) -> Result<Vec<u32>> {
    if dim != model.dim {
        return Err(Error::DimensionMismatch {
            left: format!("model dim {}", model.dim),
            right: format!("sample dim {dim}"),
        });
    }
    assert_eq!(samples.len() % dim, 0, "samples must be a multiple of dim");
    let (labels, _) = assign_all(samples, dim, &model.centroids);
    Ok(labels.into_iter().map(|l| l + 1).collect())
}

/// Unsupervised classification of a band stack.
///
/// Fits k-means on the valid pixel vectors (a seeded uniform subsample of
/// `sample_cap` when there are more), assigns every valid pixel, and
/// renumbers classes by descending pixel count so class 1 is the largest.
/// The returned model's centroid order matches the final class ids.
pub fn classify_stack(
    stack: &BandStack,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
    sample_cap: usize,
) -> Result<(ClassMap, ClusterModel)> {
    assert!(sample_cap >= 1, "sample_cap must be >= 1");
    let dim = stack.band_count();
    let n = stack.len();

    let valid_idx: Vec<usize> = (0..n).filter(|&i| stack.is_valid(i)).collect();
    if valid_idx.is_empty() {
        return Err(Error::TooFewDistinctSamples {
            needed: k,
            found: 0,
        });
    }

    let gather = |indices: &[usize]| -> Vec<f64> {
        let mut flat = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            for band in stack.bands() {
                flat.push(band.values()[i]);
            }
        }
        flat
    };

    let fit_samples = if valid_idx.len() > sample_cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = valid_idx.clone();
        for i in 0..sample_cap {
            let j = rng.random_range(i..picks.len());
            picks.swap(i, j);
        }
        picks.truncate(sample_cap);
        gather(&picks)
    } else {
        gather(&valid_idx)
    };

    let mut model = kmeans_fit(&fit_samples, dim, k, seed, max_iter, tol)?;

    let all_samples = gather(&valid_idx);
    let assigned = kmeans_assign(&model, &all_samples, dim)?;

    // Rank classes by support, largest first; ties keep centroid order.
    let mut support = vec![0u64; k];
    for &l in &assigned {
        support[(l - 1) as usize] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&j| (std::cmp::Reverse(support[j]), j));
    let mut new_of_old = vec![0u32; k];
    for (rank, &old) in order.iter().enumerate() {
        new_of_old[old] = rank as u32 + 1;
    }

    model.centroids = order.iter().map(|&j| model.centroids[j].clone()).collect();
    model.variances = order.iter().map(|&j| model.variances[j]).collect();

    let mut labels = vec![0u32; n];
    for (slot, &i) in valid_idx.iter().enumerate() {
        labels[i] = new_of_old[(assigned[slot] - 1) as usize];
    }

    let map = ClassMap::new(stack.rows(), stack.cols(), labels, k, stack.geo());
    Ok((map, model))
}
