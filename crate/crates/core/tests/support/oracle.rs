//! Independent reference implementations: plain loops and nalgebra.

#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, SymmetricEigen};
use ucgan::numerics::Tensor;

pub fn l1_double_loop(features: &Tensor) -> Vec<Vec<f64>> {
    let (n, d) = (features.shape()[0], features.shape()[1]);
    let x = features.data();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0f64;
            for k in 0..d {
                s += (x[i * d + k] as f64 - x[j * d + k] as f64).abs();
            }
            out[i][j] = s;
        }
    }
    out
}

/// Nearest and farthest other row per row by linear scan; strict comparisons
/// keep the first (lowest) index on ties.
pub fn nearest_farthest_scan(dist: &[Vec<f64>]) -> (Vec<usize>, Vec<usize>) {
    let n = dist.len();
    let mut near = Vec::with_capacity(n);
    let mut far = Vec::with_capacity(n);
    for i in 0..n {
        let (mut bn, mut bf) = (usize::MAX, usize::MAX);
        for j in 0..n {
            if j == i {
                continue;
            }
            if bn == usize::MAX || dist[i][j] < dist[i][bn] {
                bn = j;
            }
            if bf == usize::MAX || dist[i][j] > dist[i][bf] {
                bf = j;
            }
        }
        near.push(bn);
        far.push(bf);
    }
    (near, far)
}

/// k-th neighbour purity by fully sorting every row (stable sort keeps index order on ties).
pub fn purity_by_sorting(features: &Tensor, labels: &[usize], ks: &[usize]) -> Vec<f64> {
    let dist = l1_double_loop(features);
    let n = labels.len();
    let mut hits = vec![0usize; ks.len()];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dist[i][a].partial_cmp(&dist[i][b]).unwrap());
        for (h, &k) in hits.iter_mut().zip(ks) {
            if labels[order[k - 1]] == labels[i] {
                *h += 1;
            }
        }
    }
    hits.into_iter().map(|h| h as f64 / n as f64).collect()
}

pub fn largest_singular_value(w: &[f32], rows: usize, cols: usize) -> f64 {
    let m = DMatrix::from_row_slice(rows, cols, &w.iter().map(|&x| x as f64).collect::<Vec<_>>());
    let wtw = m.transpose() * &m;
    SymmetricEigen::new(wtw).eigenvalues.max().max(0.0).sqrt()
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let roots = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose()
}

pub fn sqrt_psd_row_major(a: &[f64], n: usize) -> Vec<f64> {
    let s = sqrt_psd(&DMatrix::from_row_slice(n, n, a));
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| s[(i, j)])
        .collect()
}

pub fn frechet_eigen(mu1: &[f64], s1: &[f64], mu2: &[f64], s2: &[f64]) -> f64 {
    let d = mu1.len();
    let a = DMatrix::from_row_slice(d, d, s1);
    let b = DMatrix::from_row_slice(d, d, s2);
    let ra = sqrt_psd(&a);
    let inner = &ra * &b * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let mean: f64 = mu1.iter().zip(mu2).map(|(x, y)| (x - y).powi(2)).sum();
    mean + a.trace() + b.trace() - 2.0 * cross
}

pub fn inception_double_loop(probs: &[Vec<f64>]) -> f64 {
    let n = probs.len();
    let c = probs[0].len();
    let mut marginal = vec![0.0; c];
    for row in probs {
        for k in 0..c {
            marginal[k] += row[k] / n as f64;
        }
    }
    let mut kl_sum = 0.0;
    for row in probs {
        for k in 0..c {
            if row[k] > 0.0 {
                kl_sum += row[k] * (row[k] / marginal[k]).ln();
            }
        }
    }
    (kl_sum / n as f64).exp()
}

/// Random symmetric positive definite `d × d` matrix, row-major.
pub fn random_spd(rng: &mut impl rand::Rng, d: usize) -> Vec<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let m = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
    (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect()
}
