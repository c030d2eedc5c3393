//! The p×p sensitivity kernel on a uniform time grid and its Volterra
//! resolvent.
//!
//! For a separable interaction `F(x,y) = Σ f_i(y) w_i(x)`, the linearized
//! response of the interaction term to initial-law perturbations collapses to
//! the matrix kernel
//!
//! `K_t[i,j] = ∫ ∇_y E_y f_i(Y_t) · w_j(y) ν(dy)`,
//!
//! estimated pathwise as `(1/M) Σ_m (J_tᵀ ∇f_i(Y_t^m)) · w_j(y_m)` with
//! `y_m` drawn from the invariant law and `J` the pathwise Jacobian flow.
//! The resolvent `R` solves `R = K + K ∗ R` (time convolution) by a marching
//! trapezoidal scheme, and its decay rate is read off by log-linear fitting.

mod estimate;
mod resolvent;

pub use estimate::{estimate_theta, CrnCheck, ThetaEstimate, ThetaOptions};
pub use resolvent::{convolve, neumann_partial, resolvent};

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error(transparent)]
    Sde(#[from] crate::sde::SdeError),
    #[error("invalid kernel series: {0}")]
    Invalid(String),
    #[error("(I - Δ/2 K_0) is singular; reduce the grid step Δ")]
    SingularMarch,
    #[error("decay fit failed: {0}")]
    DecayFit(String),
}

/// A p×p matrix-valued function of time on the uniform grid `t_k = k Δ`,
/// with optional per-entry Monte Carlo standard errors.
#[derive(Debug, Clone)]
pub struct KernelSeries {
    step: f64,
    mats: Vec<DMatrix<f64>>,
    ses: Option<Vec<DMatrix<f64>>>,
}

impl KernelSeries {
    pub fn new(step: f64, mats: Vec<DMatrix<f64>>) -> Result<KernelSeries, KernelError> {
        if !(step > 0.0) {
            return Err(KernelError::Invalid("grid step must be positive".into()));
        }
        if mats.is_empty() {
            return Err(KernelError::Invalid("series needs at least one matrix".into()));
        }
        let p = mats[0].nrows();
        for (k, m) in mats.iter().enumerate() {
            if m.nrows() != p || m.ncols() != p {
                return Err(KernelError::Invalid(format!(
                    "matrix {k} is {}x{}, expected {p}x{p}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(KernelError::Invalid(format!(
                    "matrix {k} has non-finite entries"
                )));
            }
        }
        Ok(KernelSeries {
            step,
            mats,
            ses: None,
        })
    }

    pub fn with_ses(mut self, ses: Vec<DMatrix<f64>>) -> Result<KernelSeries, KernelError> {
        if ses.len() != self.mats.len() {
            return Err(KernelError::Invalid(
                "standard errors must match the grid".into(),
            ));
        }
        self.ses = Some(ses);
        Ok(self)
    }

    /// Sample a closed-form kernel `K(t)` on the grid `0, Δ, ..., KΔ`.
    pub fn from_fn(
        step: f64,
        len: usize,
        p: usize,
        f: impl Fn(f64) -> DMatrix<f64>,
    ) -> Result<KernelSeries, KernelError> {
        let mats: Vec<DMatrix<f64>> = (0..=len).map(|k| f(k as f64 * step)).collect();
        for m in &mats {
            if m.nrows() != p || m.ncols() != p {
                return Err(KernelError::Invalid("closed form has wrong shape".into()));
            }
        }
        KernelSeries::new(step, mats)
    }

    pub fn step(&self) -> f64 {
        self.step
    }
    /// Number of grid points (K + 1).
    pub fn len(&self) -> usize {
        self.mats.len()
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn dim(&self) -> usize {
        self.mats[0].nrows()
    }
    pub fn horizon(&self) -> f64 {
        (self.mats.len() - 1) as f64 * self.step
    }
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.step
    }
    pub fn mat(&self, k: usize) -> &DMatrix<f64> {
        &self.mats[k]
    }
    pub fn mats(&self) -> &[DMatrix<f64>] {
        &self.mats
    }
    pub fn ses(&self) -> Option<&[DMatrix<f64>]> {
        self.ses.as_deref()
    }

    /// Spectral norm at every grid point.
    pub fn norm_series(&self) -> Vec<f64> {
        self.mats.iter().map(spectral_norm).collect()
    }

    /// Entry (i, j) as a time series.
    pub fn entry_series(&self, i: usize, j: usize) -> Vec<f64> {
        self.mats.iter().map(|m| m[(i, j)]).collect()
    }
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone().singular_values().max()
}

/// Fitted exponential decay of a kernel's norm series.
#[derive(Debug, Clone)]
pub struct DecayFit {
    /// Decay rate λ̂ of `‖K_t‖ ≈ Ĉ e^{-λ̂ t}`.
    pub rate: f64,
    pub prefactor: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
}

/// Log-linear least squares on the spectral-norm series over the last
/// `window_fraction` of the grid.
pub fn fit_decay(series: &KernelSeries, window_fraction: f64) -> Result<DecayFit, KernelError> {
    if !(0.0 < window_fraction && window_fraction <= 1.0) {
        return Err(KernelError::DecayFit(
            "window fraction must lie in (0, 1]".into(),
        ));
    }
    let norms = series.norm_series();
    let k_start = ((series.len() - 1) as f64 * (1.0 - window_fraction)).floor() as usize;
    fit_decay_on_values(series.step, &norms, k_start)
}

pub(crate) fn fit_decay_on_values(
    step: f64,
    norms: &[f64],
    k_start: usize,
) -> Result<DecayFit, KernelError> {
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    for (k, &v) in norms.iter().enumerate().skip(k_start) {
        if v <= 0.0 {
            return Err(KernelError::DecayFit(format!(
                "non-positive norm at t = {}: extend the horizon T so the window \
                 stays above zero",
                k as f64 * step
            )));
        }
        ts.push(k as f64 * step);
        logs.push(v.ln());
    }
    if ts.len() < 3 {
        return Err(KernelError::DecayFit("window has fewer than 3 points".into()));
    }
    let n = ts.len() as f64;
    let tbar = ts.iter().sum::<f64>() / n;
    let lbar = logs.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (t, l) in ts.iter().zip(&logs) {
        sxx += (t - tbar) * (t - tbar);
        sxy += (t - tbar) * (l - lbar);
        syy += (l - lbar) * (l - lbar);
    }
    let slope = sxy / sxx;
    let rate = -slope;
    if !rate.is_finite() {
        return Err(KernelError::DecayFit("non-finite fitted rate".into()));
    }
    Ok(DecayFit {
        rate,
        prefactor: (lbar - slope * tbar).exp(),
        window: (ts[0], *ts.last().unwrap()),
        r_squared: if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) },
    })
}
