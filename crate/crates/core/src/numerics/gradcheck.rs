//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::numerics::tensor::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub eps: f32,
    /// Relative tolerance.
    pub rtol: f64,
    /// Absolute tolerance for gradients near zero.
    pub atol: f64,
    /// Coordinates checked per tensor (all if the tensor is smaller).
    pub max_coords: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            rtol: 1e-4,
            atol: 1e-3,
            max_coords: 24,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates skipped because the loss has a kink within `eps`.
    pub skipped_nonsmooth: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0 && self.skipped_nonsmooth * 10 <= self.checked
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped_nonsmooth += other.skipped_nonsmooth;
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.failures.extend(other.failures);
    }
}

/// `|analytic − numeric| ≤ atol + rtol · |numeric|`.
pub fn close(analytic: f64, numeric: f64, cfg: &GradCheckConfig) -> bool {
    (analytic - numeric).abs() <= cfg.atol + cfg.rtol * numeric.abs()
}

/// Checks one coordinate. `f(δ)` is the loss with the coordinate shifted by `δ`.
///
/// A mismatch is attributed to a kink (and skipped) only when the gap between
/// the one-sided slopes fails to shrink linearly with the step, which is what
/// any twice-differentiable loss must do.
fn check_coord(
    label: &str,
    analytic: f64,
    mut f: impl FnMut(f32) -> Result<f64>,
    cfg: &GradCheckConfig,
    report: &mut GradCheckReport,
) -> Result<()> {
    let eps = cfg.eps;
    let base = f(0.0)?;
    let (plus, minus) = (f(eps)?, f(-eps)?);
    let numeric = (plus - minus) / (2.0 * eps as f64);
    if !close(analytic, numeric, cfg) {
        let h = eps / 2.0;
        let (hp, hm) = (f(h)?, f(-h)?);
        let gap = (plus - base) / eps as f64 - (base - minus) / eps as f64;
        let half_gap = (hp - base) / h as f64 - (base - hm) / h as f64;
        if (gap - 2.0 * half_gap).abs() > cfg.atol + cfg.rtol * numeric.abs() {
            report.skipped_nonsmooth += 1;
            return Ok(());
        }
    }
    report.checked += 1;
    let abs = (analytic - numeric).abs();
    report.max_abs_err = report.max_abs_err.max(abs);
    report.max_rel_err = report.max_rel_err.max(abs / numeric.abs().max(1e-12));
    if !close(analytic, numeric, cfg) {
        report
            .failures
            .push(format!("{label}: analytic {analytic:.6e} vs numeric {numeric:.6e}"));
    }
    Ok(())
}

/// Compares `analytic` gradients against central differences of `loss`
/// over a random subset of coordinates of every parameter.
pub fn check_params<R: Rng + ?Sized>(
    params: &ParamStore,
    analytic: &ParamStore,
    mut loss: impl FnMut(&ParamStore) -> Result<f32>,
    cfg: &GradCheckConfig,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.require(&name)?.numel();
        let coords = sample(rng, n, n.min(cfg.max_coords)).into_vec();
        let grad = analytic.require(&name)?;
        for i in coords {
            let orig = params.require(&name)?.data()[i];
            let shifted = |d: f32| {
                probe.get_mut(&name).unwrap().data_mut()[i] = orig + d;
                let l = loss(&probe);
                probe.get_mut(&name).unwrap().data_mut()[i] = orig;
                l.map(f64::from)
            };
            check_coord(
                &format!("{name}[{i}]"),
                grad.data()[i] as f64,
                shifted,
                cfg,
                &mut report,
            )?;
        }
    }
    Ok(report)
}

/// Same as [`check_params`] for a single input tensor.
pub fn check_input<R: Rng + ?Sized>(
    label: &str,
    input: &Tensor,
    analytic: &Tensor,
    mut loss: impl FnMut(&Tensor) -> Result<f32>,
    cfg: &GradCheckConfig,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    let mut probe = input.clone();
    let n = input.numel();
    for i in sample(rng, n, n.min(cfg.max_coords)).into_vec() {
        let orig = input.data()[i];
        let shifted = |d: f32| {
            probe.data_mut()[i] = orig + d;
            let l = loss(&probe);
            probe.data_mut()[i] = orig;
            l.map(f64::from)
        };
        check_coord(
            &format!("{label}[{i}]"),
            analytic.data()[i] as f64,
            shifted,
            cfg,
            &mut report,
        )?;
    }
    Ok(report)
}
