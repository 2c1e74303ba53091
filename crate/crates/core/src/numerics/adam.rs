use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment buffers plus the step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam step that descends `grads`.
///
/// A tensor whose gradient is exactly zero everywhere keeps its value; its
/// moments still decay.
pub fn adam_step(params: &mut ParamStore, grads: &ParamStore, state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (name, g) in grads.iter() {
        let p = params.require(name)?;
        if p.shape() != g.shape() {
            return Err(Error::shape(format!("adam gradient {name}"), p.shape(), g.shape()));
        }
        g.check_finite(&format!("gradient of {name}"))?;
    }

    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - (beta1 as f64).powi(t);
    let bc2 = 1.0 - (beta2 as f64).powi(t);

    for (name, p) in params.iter_mut() {
        let g = grads.require(name)?.data();
        let m = state
            .m
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no moment for {name}")))?;
        for (mi, gi) in m.data_mut().iter_mut().zip(g) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
        }
        let v = state
            .v
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no moment for {name}")))?;
        for (vi, gi) in v.data_mut().iter_mut().zip(g) {
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
        }
        if g.iter().all(|&gi| gi == 0.0) {
            continue;
        }
        let m = state.m.require(name)?.data();
        let v = state.v.require(name)?.data();
        for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
            let mhat = *mi as f64 / bc1;
            let vhat = *vi as f64 / bc2;
            *pi -= (lr as f64 * mhat / (vhat.sqrt() + eps as f64)) as f32;
        }
        p.check_finite(&format!("parameter {name} after adam"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    fn single(v: f32) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_vec(vec![v])).unwrap();
        p
    }

    const HAND: AdamConfig = AdamConfig {
        lr: 0.001,
        beta1: 0.0,
        beta2: 0.9,
        eps: 0.0,
    };

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(0.5);
        let mut st = AdamState::new(&p, HAND);
        adam_step(&mut p, &single(1.0), &mut st).unwrap();
        assert_eq!(st.t, 1);
        assert!((p.get("w").unwrap().data()[0] - 0.499).abs() < 1e-7);
    }

    #[test]
    fn two_steps_match_hand_computation() {
        // step 1: g=1 -> m=1, v=0.1, mhat=1, vhat=0.1/0.1=1, update 0.001
        // step 2: g=3 -> m=3, v=0.09+0.9=0.99, vhat=0.99/0.19, update 0.001*3/sqrt(0.99/0.19)
        let mut p = single(0.0);
        let mut st = AdamState::new(&p, HAND);
        adam_step(&mut p, &single(1.0), &mut st).unwrap();
        adam_step(&mut p, &single(3.0), &mut st).unwrap();
        let expected = -0.001 - 0.001 * 3.0 / (0.99f64 / 0.19).sqrt();
        assert!((p.get("w").unwrap().data()[0] as f64 - expected).abs() < 1e-7);
        assert!((st.v.get("w").unwrap().data()[0] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_keeps_values_and_decays_moments() {
        let mut p = single(0.25);
        let mut st = AdamState::new(&p, AdamConfig { beta1: 0.5, ..HAND });
        adam_step(&mut p, &single(2.0), &mut st).unwrap();
        let before = p.clone();
        let (m0, v0) = (st.m.get("w").unwrap().data()[0], st.v.get("w").unwrap().data()[0]);
        adam_step(&mut p, &single(0.0), &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.m.get("w").unwrap().data()[0], 0.5 * m0);
        assert_eq!(st.v.get("w").unwrap().data()[0], 0.9 * v0);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut p = single(0.0);
        let mut st = AdamState::new(&p, HAND);
        let mut nan = single(0.0);
        nan.get_mut("w").unwrap().data_mut()[0] = f32::NAN;
        assert!(adam_step(&mut p, &nan, &mut st).is_err());
        let mut wrong = ParamStore::new();
        wrong.insert("w", Tensor::zeros([2])).unwrap();
        assert!(matches!(adam_step(&mut p, &wrong, &mut st), Err(Error::Shape { .. })));
        assert_eq!(st.t, 0);
    }
}
