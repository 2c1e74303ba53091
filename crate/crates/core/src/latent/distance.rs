use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Symmetric matrix of L1 distances between feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.values.iter().map(|&v| v as f32).collect();
        Tensor::new([self.n, self.n], data).expect("square")
    }
}

/// L1 distance accumulated in `f64`, coordinates in order.
pub fn l1(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum()
}

fn rows(features: &Tensor) -> Result<(usize, usize)> {
    match features.shape() {
        &[n, d] => Ok((n, d)),
        s => Err(Error::shape("features [N, F]", &[2, 1], s)),
    }
}

pub fn pairwise_l1(features: &Tensor) -> Result<DistanceMatrix> {
    let (n, _) = rows(features)?;
    if n < 2 {
        return Err(Error::InvalidArgument("pairwise distances need at least 2 rows".into()));
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = l1(features.row(i), features.row(j));
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, values })
}

/// Order by distance, then by index.
pub(crate) fn by_distance(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Indices of the `k_max` nearest other rows to `i`, nearest first.
fn nearest(dist: &[f64], i: usize, k_max: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, &d)| (d, j))
        .collect();
    if k_max < cand.len() {
        cand.select_nth_unstable_by(k_max - 1, by_distance);
        cand.truncate(k_max);
    }
    cand.sort_by(by_distance);
    cand.into_iter().map(|(_, j)| j).collect()
}

/// For each `k` (1-based), the fraction of samples whose k-th nearest neighbour
/// (L1, self excluded, ties to the lower index) shares their label.
pub fn neighbor_purity(features: &Tensor, labels: &[usize], ks: &[usize]) -> Result<Vec<f64>> {
    let (n, _) = rows(features)?;
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k >= n) {
        return Err(Error::InvalidArgument(format!(
            "neighbour rank {bad} must lie in 1..{n}"
        )));
    }
    let Some(&k_max) = ks.iter().max() else {
        return Ok(Vec::new());
    };
    let mut hits = vec![0usize; ks.len()];
    let mut dist = vec![0.0; n];
    for i in 0..n {
        for (j, d) in dist.iter_mut().enumerate() {
            *d = l1(features.row(i), features.row(j));
        }
        let order = nearest(&dist, i, k_max);
        for (h, &k) in hits.iter_mut().zip(ks) {
            if labels[order[k - 1]] == labels[i] {
                *h += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / n as f64).collect())
}
