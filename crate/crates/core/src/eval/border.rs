use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{export_embedding, l1, Embedding};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BorderSummary {
    /// Mean of (distance to nearest other-class sample − distance to nearest
    /// same-class sample) over successful codes.
    pub success_margin: Option<f64>,
    pub failure_margin: Option<f64>,
    /// All flags equal, so the two groups cannot be compared.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BorderReport {
    pub embedding: Embedding,
    pub summary: BorderSummary,
}

/// Margin of each sample: how much closer its own class is than any other
/// (L1). `None` when either class side has no other member.
pub fn margins(features: &Tensor, labels: &[usize]) -> Result<Vec<Option<f64>>> {
    let &[n, _] = features.shape() else {
        return Err(Error::shape("features [N, F]", &[2, 1], features.shape()));
    };
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    Ok((0..n)
        .map(|i| {
            let (mut same, mut other) = (f64::INFINITY, f64::INFINITY);
            for j in (0..n).filter(|&j| j != i) {
                let d = l1(features.row(i), features.row(j));
                let slot = if labels[j] == labels[i] { &mut same } else { &mut other };
                *slot = slot.min(d);
            }
            (same.is_finite() && other.is_finite()).then_some(other - same)
        })
        .collect())
}

/// Embedding of the codes annotated with success flags, plus whether failures
/// sit closer to class borders than successes.
pub fn border_effect_report(features: &Tensor, labels: &[usize], flags: &[bool]) -> Result<BorderReport> {
    if flags.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} flags for {} samples",
            flags.len(),
            labels.len()
        )));
    }
    let embedding = export_embedding(features, Some(labels), Some(flags))?;
    let m = margins(features, labels)?;
    let mean = |want: bool| {
        let v: Vec<f64> = m
            .iter()
            .zip(flags)
            .filter(|(_, &f)| f == want)
            .filter_map(|(m, _)| *m)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let degenerate = flags.iter().all(|&f| f) || flags.iter().all(|&f| !f);
    Ok(BorderReport {
        embedding,
        summary: BorderSummary {
            success_margin: mean(true),
            failure_margin: mean(false),
            degenerate,
        },
    })
}
