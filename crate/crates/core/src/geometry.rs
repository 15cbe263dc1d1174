//! Distances, neighbour search and exponential weights shared by both steps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

pub fn euclidean(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance from row `i` of `m` to `x`.
pub fn row_distance(m: &DMatrix<f64>, i: usize, x: &DVector<f64>) -> f64 {
    m.row(i)
        .iter()
        .zip(x.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Distance between rows `i` and `j` of `m`.
pub fn row_row_distance(m: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    m.row(i)
        .iter()
        .zip(m.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Full symmetric distance matrix between the rows of `m`.
pub fn pairwise_distances(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = row_row_distance(m, i, j);
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    out
}

/// Sorts ascending by distance, ties to the lower index, and keeps `k`.
pub fn k_smallest(mut candidates: Vec<Neighbor>, k: usize) -> Result<Vec<Neighbor>> {
    if k > candidates.len() {
        return Err(Error::InsufficientPool {
            requested: k,
            available: candidates.len(),
        });
    }
    candidates.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
    candidates.truncate(k);
    Ok(candidates)
}

/// The `k` rows of `pool` nearest to `query`, skipping `exclude`.
pub fn knn_rows(query: &DVector<f64>, pool: &DMatrix<f64>, k: usize, exclude: &[usize]) -> Result<Vec<Neighbor>> {
    if query.len() != pool.ncols() {
        return Err(Error::DimensionMismatch {
            expected: pool.ncols(),
            found: query.len(),
        });
    }
    let candidates = (0..pool.nrows())
        .filter(|i| !exclude.contains(i))
        .map(|i| Neighbor {
            index: i,
            distance: row_distance(pool, i, query),
        })
        .collect();
    k_smallest(candidates, k)
}

/// `exp(-d_i / bandwidth)` normalised to sum to one. The minimum distance is
/// subtracted first, which leaves the result unchanged but avoids underflow.
pub fn neg_exp_weights(distances: &[f64], bandwidth: f64) -> Vec<f64> {
    let Some(min) = distances.iter().copied().reduce(f64::min) else {
        return Vec::new();
    };
    let raw: Vec<f64> = distances.iter().map(|d| (-(d - min) / bandwidth).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Index of the largest entry, ties to the lower index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}
