//! Learning-curve CSV: `iter,loss_adv,loss_same,loss_diff,loss_gen,frechet,accuracy`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::training::{RunHistory, Snapshot};

pub const CURVE_HEADER: [&str; 7] = [
    "iter",
    "loss_adv",
    "loss_same",
    "loss_diff",
    "loss_gen",
    "frechet",
    "accuracy",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_curves<W: Write>(history: &RunHistory, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CURVE_HEADER)?;
    for s in &history.records {
        out.write_record([
            s.iter.to_string(),
            cell(s.loss_adv),
            cell(s.loss_same),
            cell(s.loss_diff),
            cell(s.loss_gen),
            cell(s.frechet),
            cell(s.accuracy),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn emit_curves(history: &RunHistory, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_curves(history, std::io::BufWriter::new(file))
}

/// Inverse of [`write_curves`]; rejects unknown headers and non-increasing iterations.
pub fn parse_curves<R: Read>(r: R) -> Result<Vec<Snapshot>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CURVE_HEADER) {
        return Err(Error::InvalidArgument(format!("unexpected curve header {header:?}")));
    }
    let mut history = RunHistory::default();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| -> Result<Option<f64>> {
            let s = rec.get(i).unwrap_or("");
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|_| Error::InvalidArgument(format!("row {}: bad {} value {s:?}", line + 1, CURVE_HEADER[i])))
        };
        let iter = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::InvalidArgument(format!("row {}: bad iteration", line + 1)))?;
        history.push(Snapshot {
            iter,
            loss_adv: field(1)?,
            loss_same: field(2)?,
            loss_diff: field(3)?,
            loss_gen: field(4)?,
            frechet: field(5)?,
            accuracy: field(6)?,
            elapsed_ms: None,
        })?;
    }
    Ok(history.records)
}
