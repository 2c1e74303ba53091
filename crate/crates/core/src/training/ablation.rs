use serde::{Deserialize, Serialize};

use crate::data::ImageSet;
use crate::error::Result;
use crate::numerics::Tensor;
use crate::training::run::Evaluator;
use crate::training::{convergence_verdict, ConvergenceVerdict, Prototype, RunHistory, TrainConfig, TrainState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub prototype: Prototype,
    pub verdict: ConvergenceVerdict,
    /// Conditional accuracy at the final snapshot.
    pub accuracy: Option<f64>,
    /// Set when the run aborted; the row then counts as not converged.
    pub error: Option<String>,
    pub history: RunHistory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Best Fréchet distance of the baseline, the convergence reference.
    pub reference_frechet: Option<f64>,
}

impl AblationReport {
    pub fn row(&self, p: Prototype) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.prototype == p)
    }

    /// `prototype  converged  accuracy` table.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<10} {:<11} {:>8}\n", "prototype", "convergence", "accuracy");
        for r in &self.rows {
            let acc = r.accuracy.map_or("-".to_string(), |a| format!("{:.1}%", 100.0 * a));
            let conv = if r.verdict.converged { "yes" } else { "no" };
            s.push_str(&format!("{:<10} {:<11} {:>8}\n", r.prototype.name(), conv, acc));
        }
        s
    }
}

/// Trains every prototype with the same seed and budget, judging convergence
/// against the baseline's best Fréchet distance. `evaluator` is rebuilt per row.
pub fn run_ablation<'e>(
    base: &TrainConfig,
    images: &ImageSet,
    features: &Tensor,
    mut evaluator: impl FnMut() -> Result<Box<dyn Evaluator + 'e>>,
) -> Result<AblationReport> {
    let mut runs = Vec::new();
    for p in Prototype::ALL {
        let cfg = TrainConfig {
            prototype: p,
            ..base.clone()
        };
        let mut eval = evaluator()?;
        let outcome = TrainState::new(cfg, &images.image_shape(), features.shape()[1]).and_then(|mut s| {
            s.run(images, features, s.config.n_iter, Some(eval.as_mut()))?;
            Ok(s.history)
        });
        match outcome {
            Ok(h) => runs.push((p, h, None)),
            Err(e) => {
                log::warn!("prototype {} failed: {e}", p.name());
                runs.push((p, RunHistory::default(), Some(e.to_string())));
            }
        }
    }
    let reference = runs
        .iter()
        .find(|(p, _, _)| *p == Prototype::Baseline)
        .and_then(|(_, h, _)| h.best_frechet());
    let rows = runs
        .into_iter()
        .map(|(prototype, history, error)| {
            let mut verdict = convergence_verdict(&history, reference.unwrap_or(f64::NAN));
            verdict.converged &= error.is_none() && reference.is_some();
            AblationRow {
                prototype,
                accuracy: history.last().and_then(|s| s.accuracy),
                verdict,
                error,
                history,
            }
        })
        .collect();
    Ok(AblationReport {
        rows,
        reference_frechet: reference,
    })
}
