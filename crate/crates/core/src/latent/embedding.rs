//! Two-dimensional PCA projection for inspecting the latent space.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg::{mean_covariance, sym_eigen};
use crate::numerics::Tensor;

/// Total variance below which the features are treated as constant.
const DEGENERATE_VARIANCE: f64 = 1e-20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub x: f64,
    pub y: f64,
    pub label: Option<usize>,
    pub flag: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub rows: Vec<EmbeddingRow>,
    /// Variance along each of the two axes.
    pub variance: [f64; 2],
    /// Set when the input had no variance and the raw first two coordinates were used.
    pub degenerate: bool,
}

/// Projects centred features onto their top two principal axes. Each axis is
/// signed so that its largest-magnitude loading is positive.
pub fn export_embedding(features: &Tensor, labels: Option<&[usize]>, flags: Option<&[bool]>) -> Result<Embedding> {
    let &[n, d] = features.shape() else {
        return Err(Error::shape("features [N, F]", &[3, 1], features.shape()));
    };
    if n < 3 {
        return Err(Error::InvalidArgument("embedding export needs at least 3 rows".into()));
    }
    for (what, len) in [("labels", labels.map(<[_]>::len)), ("flags", flags.map(<[_]>::len))] {
        if let Some(len) = len.filter(|&l| l != n) {
            return Err(Error::InvalidArgument(format!("{n} feature rows but {len} {what}")));
        }
    }
    let data: Vec<f64> = features.data().iter().map(|&v| v as f64).collect();
    let (mean, cov) = mean_covariance(&data, n, d)?;
    let total: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let degenerate = total <= DEGENERATE_VARIANCE;
    let axes: Vec<Vec<f64>> = if degenerate {
        log::warn!("embedding input has zero variance; using the first two raw coordinates");
        (0..2.min(d))
            .map(|k| (0..d).map(|i| if i == k { 1.0 } else { 0.0 }).collect())
            .collect()
    } else {
        let eig = sym_eigen(&cov, d)?;
        (0..2.min(d))
            .map(|k| {
                let mut v = eig.vector(k);
                let lead = v
                    .iter()
                    .copied()
                    .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
                if lead < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                v
            })
            .collect()
    };
    let project = |row: &[f64], axis: Option<&Vec<f64>>| {
        axis.map_or(0.0, |a| {
            row.iter().zip(&mean).zip(a).map(|((x, m), w)| (x - m) * w).sum()
        })
    };
    let rows: Vec<EmbeddingRow> = (0..n)
        .map(|i| {
            let row = &data[i * d..(i + 1) * d];
            EmbeddingRow {
                x: project(row, axes.first()),
                y: project(row, axes.get(1)),
                label: labels.map(|l| l[i]),
                flag: flags.map(|f| f[i]),
            }
        })
        .collect();
    let var = |f: fn(&EmbeddingRow) -> f64| rows.iter().map(|r| f(r).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(Embedding {
        variance: [var(|r| r.x), var(|r| r.y)],
        rows,
        degenerate,
    })
}

impl Embedding {
    /// CSV with header `x,y,label,flag`; absent values are empty cells, flags are 0/1.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "y", "label", "flag"])?;
        for r in &self.rows {
            out.write_record([
                r.x.to_string(),
                r.y.to_string(),
                r.label.map(|l| l.to_string()).unwrap_or_default(),
                r.flag.map(|f| u8::from(f).to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
