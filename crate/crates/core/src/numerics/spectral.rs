//! Power-iteration spectral normalization.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Below this estimate a matrix is treated as zero.
pub const SIGMA_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralEstimate {
    pub sigma: f32,
    /// Left singular vector estimate (length = rows).
    pub u: Vec<f32>,
    /// Right singular vector estimate (length = cols).
    pub v: Vec<f32>,
}

/// Views a weight tensor as `[shape[0], rest]`.
pub fn matrix_dims(w: &Tensor) -> Result<(usize, usize)> {
    let rows = *w
        .shape()
        .first()
        .ok_or_else(|| Error::shape("spectral matrix", &[1, 1], w.shape()))?;
    if rows == 0 || w.numel() == 0 {
        return Err(Error::shape("spectral matrix", &[1, 1], w.shape()));
    }
    Ok((rows, w.numel() / rows))
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    n
}

/// Runs `iters` rounds of `v ← Wᵀu/‖Wᵀu‖, u ← Wv/‖Wv‖` starting from `u`.
/// With `iters == 0` only `v` is refreshed from the given `u`.
pub fn power_iteration(w: &[f32], rows: usize, cols: usize, u0: &[f32], iters: usize) -> Result<SpectralEstimate> {
    if w.len() != rows * cols || u0.len() != rows {
        return Err(Error::shape(
            "power_iteration",
            &[rows, cols],
            &[u0.len(), w.len() / rows.max(1)],
        ));
    }
    let mut u: Vec<f64> = u0.iter().map(|&x| x as f64).collect();
    if normalize(&mut u) == 0.0 {
        return Err(Error::InvalidArgument("power iteration needs a non-zero u".into()));
    }
    let mut v = vec![0.0f64; cols];
    let wt_u = |u: &[f64], v: &mut [f64]| {
        v.fill(0.0);
        for (r, &ur) in u.iter().enumerate() {
            for (vc, &wrc) in v.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *vc += wrc as f64 * ur;
            }
        }
    };
    let w_v = |v: &[f64], u: &mut [f64]| {
        for (r, ur) in u.iter_mut().enumerate() {
            *ur = w[r * cols..(r + 1) * cols]
                .iter()
                .zip(v)
                .map(|(&a, b)| a as f64 * b)
                .sum();
        }
    };
    for _ in 0..iters {
        wt_u(&u, &mut v);
        if normalize(&mut v) < SIGMA_TOLERANCE {
            return Err(Error::DegenerateMatrix { sigma: 0.0 });
        }
        w_v(&v, &mut u);
        if normalize(&mut u) < SIGMA_TOLERANCE {
            return Err(Error::DegenerateMatrix { sigma: 0.0 });
        }
    }
    // σ = uᵀ W v with v = Wᵀu / ‖Wᵀu‖, i.e. σ = ‖Wᵀu‖.
    wt_u(&u, &mut v);
    let sigma = normalize(&mut v);
    if !(sigma.is_finite() && sigma >= SIGMA_TOLERANCE) {
        return Err(Error::DegenerateMatrix { sigma });
    }
    Ok(SpectralEstimate {
        sigma: sigma as f32,
        u: u.iter().map(|&x| x as f32).collect(),
        v: v.iter().map(|&x| x as f32).collect(),
    })
}

/// Returns `(W / σ̂, updated u, σ̂)` after `iters` power-iteration rounds.
pub fn spectral_normalize(w: &Tensor, u: &[f32], iters: usize) -> Result<(Tensor, Vec<f32>, f32)> {
    let (rows, cols) = matrix_dims(w)?;
    let est = power_iteration(w.data(), rows, cols, u, iters)?;
    let scaled = w.data().iter().map(|x| x / est.sigma).collect();
    Ok((Tensor::new(w.shape().to_vec(), scaled)?, est.u, est.sigma))
}

/// Random unit vector used to seed the power iteration.
pub fn random_unit<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f32> {
    let mut v: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    normalize(&mut v);
    v.into_iter().map(|x| x as f32).collect()
}

/// Persistent left-vector estimates, keyed by weight name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    pub vectors: BTreeMap<String, Vec<f32>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_has_unit_norm() {
        let w = Tensor::new([3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let (n, _, s) = spectral_normalize(&w, &[0.3, -0.5, 0.8], 20).unwrap();
        assert!((s - 1.0).abs() < 1e-6);
        for (a, b) in n.data().iter().zip(w.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn diagonal_spectrum() {
        let w = Tensor::new([2, 2], vec![3., 0., 0., 1.]).unwrap();
        let (_, _, s) = spectral_normalize(&w, &[0.6, 0.8], 5).unwrap();
        assert!((s - 3.0).abs() < 1e-3, "{s}");
    }

    #[test]
    fn zero_matrix_is_an_error() {
        let w = Tensor::zeros([2, 3]);
        assert!(matches!(
            spectral_normalize(&w, &[1.0, 0.0], 3),
            Err(Error::DegenerateMatrix { .. })
        ));
    }

    #[test]
    fn normalized_matrix_has_norm_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Tensor::new([4, 6], (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let u = random_unit(4, &mut rng);
        let (n, u2, _) = spectral_normalize(&w, &u, 30).unwrap();
        let (_, _, s) = spectral_normalize(&n, &u2, 30).unwrap();
        assert!(s <= 1.0 + 1e-2, "{s}");
    }

    #[test]
    fn higher_rank_kernels_are_flattened() {
        let w = Tensor::full([2, 1, 2, 2], 0.5);
        let (rows, cols) = matrix_dims(&w).unwrap();
        assert_eq!((rows, cols), (2, 4));
        let (_, _, s) = spectral_normalize(&w, &[1.0, 0.0], 10).unwrap();
        // rank one: all-0.5 2x4 matrix has sigma = 0.5 * sqrt(8)
        assert!((s - 0.5 * 8f32.sqrt()).abs() < 1e-5);
    }
}
