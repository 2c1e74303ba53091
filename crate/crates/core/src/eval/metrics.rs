//! Fréchet distance and Inception Score.

use crate::error::{Error, Result};
use crate::numerics::linalg::{matmul, mean_covariance, sym_sqrt};
use crate::numerics::Tensor;

/// Row-sum tolerance for probability inputs.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// `‖μ1 − μ2‖² + Tr(Σ1 + Σ2 − 2 (Σ1^½ Σ2 Σ1^½)^½)` for `d`-dimensional Gaussians
/// (covariances row-major). Clamped at zero against rounding.
pub fn frechet_distance(mu1: &[f64], sigma1: &[f64], mu2: &[f64], sigma2: &[f64]) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || sigma1.len() != d * d || sigma2.len() != d * d {
        return Err(Error::shape(
            "frechet_distance",
            &[d, d * d, d, d * d],
            &[mu1.len(), sigma1.len(), mu2.len(), sigma2.len()],
        ));
    }
    if d == 0 {
        return Ok(0.0);
    }
    let mean_term: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b).powi(2)).sum();
    let trace = |m: &[f64]| (0..d).map(|i| m[i * d + i]).sum::<f64>();
    let (root1, clipped1) = sym_sqrt(sigma1, d)?;
    let inner = matmul(&matmul(&root1, sigma2, d, d, d), &root1, d, d, d);
    let (cross, clipped2) = sym_sqrt(&inner, d)?;
    if clipped1 || clipped2 {
        log::warn!("frechet distance: clipped negative eigenvalues beyond tolerance");
    }
    Ok((mean_term + trace(sigma1) + trace(sigma2) - 2.0 * trace(&cross)).max(0.0))
}

/// Mean and unbiased covariance of the rows of `[N, D]` samples, in `f64`.
pub fn gaussian_stats(samples: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let &[n, d] = samples.shape() else {
        return Err(Error::shape("gaussian_stats [N, D]", &[2, 1], samples.shape()));
    };
    let data: Vec<f64> = samples.data().iter().map(|&v| v as f64).collect();
    mean_covariance(&data, n, d)
}

pub fn frechet_from_samples(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (m1, s1) = gaussian_stats(a)?;
    let (m2, s2) = gaussian_stats(b)?;
    frechet_distance(&m1, &s1, &m2, &s2)
}

/// `exp(mean_i KL(p_i ‖ p̄))` over rows of class probabilities.
pub fn inception_score(probs: &Tensor) -> Result<f64> {
    let &[n, c] = probs.shape() else {
        return Err(Error::shape("inception_score [N, C]", &[1, 1], probs.shape()));
    };
    if n == 0 || c == 0 {
        return Err(Error::InvalidArgument("inception score of an empty set".into()));
    }
    for (i, row) in probs.data().chunks(c).enumerate() {
        let s: f64 = row.iter().map(|&p| p as f64).sum();
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|&p| p.is_nan() || p < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "row {i} is not a probability vector (sum {s})"
            )));
        }
    }
    let mut marginal = vec![0.0f64; c];
    for row in probs.data().chunks(c) {
        for (m, &p) in marginal.iter_mut().zip(row) {
            *m += p as f64 / n as f64;
        }
    }
    let mean_kl = probs
        .data()
        .chunks(c)
        .map(|row| {
            row.iter()
                .zip(&marginal)
                .filter(|(&p, _)| p > 0.0)
                .map(|(&p, &m)| p as f64 * (p as f64 / m).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n as f64;
    Ok(mean_kl.exp())
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(
            "spearman needs two equal series of length ≥ 2".into(),
        ));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        da += (x - mean).powi(2);
        db += (y - mean).powi(2);
    }
    Ok(num / (da * db).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut s = 0;
    while s < idx.len() {
        let mut e = s;
        while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[s]] {
            e += 1;
        }
        let r = (s + e) as f64 / 2.0 + 1.0;
        for &k in &idx[s..=e] {
            out[k] = r;
        }
        s = e + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_closed_form() {
        assert_eq!(frechet_distance(&[0.0], &[1.0], &[2.0], &[1.0]).unwrap(), 4.0);
        // (σ1 − σ2)² with σ = 1, 3
        let f = frechet_distance(&[0.0], &[1.0], &[0.0], &[9.0]).unwrap();
        assert!((f - 4.0).abs() < 1e-12);
    }

    #[test]
    fn identical_gaussians() {
        let s = [2.0, 0.5, 0.5, 1.0];
        assert!(frechet_distance(&[1.0, 2.0], &s, &[1.0, 2.0], &s).unwrap() < 1e-8);
    }

    #[test]
    fn uniform_and_one_hot_scores() {
        let u = Tensor::full([5, 4], 0.25);
        assert!((inception_score(&u).unwrap() - 1.0).abs() < 1e-10);
        let mut eye = Tensor::zeros([4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 4 + i] = 1.0;
        }
        assert!((inception_score(&eye).unwrap() - 4.0).abs() < 1e-10);
        assert!(inception_score(&Tensor::full([1, 2], 0.7)).is_err());
    }

    #[test]
    fn spearman_extremes() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
    }
}
