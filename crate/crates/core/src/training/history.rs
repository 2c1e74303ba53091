use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics recorded after a given number of completed iterations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iter: usize,
    pub loss_adv: Option<f64>,
    pub loss_same: Option<f64>,
    pub loss_diff: Option<f64>,
    pub loss_gen: Option<f64>,
    pub frechet: Option<f64>,
    pub accuracy: Option<f64>,
    /// Milliseconds since the run started; not persisted, so reruns stay bit-identical.
    #[serde(skip)]
    pub elapsed_ms: Option<u64>,
}

impl Snapshot {
    pub fn losses(&self) -> impl Iterator<Item = f64> + '_ {
        [self.loss_adv, self.loss_same, self.loss_diff, self.loss_gen]
            .into_iter()
            .flatten()
    }
}

/// Append-only record of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub records: Vec<Snapshot>,
    pub generator_updates: u64,
    pub discriminator_updates: u64,
}

impl RunHistory {
    pub fn push(&mut self, s: Snapshot) -> Result<()> {
        if let Some(last) = self.records.last() {
            if s.iter <= last.iter {
                return Err(Error::InvalidArgument(format!(
                    "snapshot iteration {} does not follow {}",
                    s.iter, last.iter
                )));
            }
        }
        self.records.push(s);
        Ok(())
    }

    pub fn last(&self) -> Option<&Snapshot> {
        self.records.last()
    }

    pub fn best_frechet(&self) -> Option<f64> {
        self.records.iter().filter_map(|s| s.frechet).reduce(f64::min)
    }

    pub fn losses_finite(&self) -> bool {
        self.records.iter().all(|s| s.losses().all(f64::is_finite))
    }

    /// Mean Fréchet distance over the last 10% of snapshots (at least one).
    pub fn final_window_frechet(&self) -> Option<f64> {
        let vals: Vec<f64> = self.records.iter().filter_map(|s| s.frechet).collect();
        if vals.is_empty() {
            return None;
        }
        let w = vals.len().div_ceil(10);
        Some(vals[vals.len() - w..].iter().sum::<f64>() / w as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceVerdict {
    pub converged: bool,
    pub final_frechet: Option<f64>,
    pub threshold: f64,
    pub losses_finite: bool,
}

/// Converged when every recorded loss is finite and the final-window Fréchet
/// distance is at most twice `reference_best` (the baseline's best).
pub fn convergence_verdict(history: &RunHistory, reference_best: f64) -> ConvergenceVerdict {
    let final_frechet = history.final_window_frechet();
    let threshold = 2.0 * reference_best;
    let losses_finite = history.losses_finite();
    ConvergenceVerdict {
        converged: losses_finite && final_frechet.is_some_and(|f| f <= threshold),
        final_frechet,
        threshold,
        losses_finite,
    }
}
