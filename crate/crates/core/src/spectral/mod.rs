//! Stability analysis in the Laplace domain.
//!
//! The kernel's Laplace transform `K̂(z)` is evaluated by trapezoidal
//! quadrature on the stored grid plus a fitted exponential-tail closure,
//! which also provides the meromorphic continuation a little beyond the
//! abscissa of convergence. Zeros of `det(I - K̂(z))` are located by the
//! argument principle on subdivided rectangles and polished by Newton
//! iteration; the rightmost zero determines the stability abscissa.

mod criterion;
mod laplace;
mod roots;

pub use criterion::{jacobian_criterion, JacobianCriterionReport};
pub use laplace::{laplace, LaplaceKernel, LaplaceOptions};
pub use roots::{find_roots, FindRootsOptions, LocatedRoot, RootClass, RootReport, SearchWindow};

use crate::kernel::{fit_decay, KernelError, KernelSeries};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(
        "kernel tail does not decay (fitted rate {rate}); the stability criterion \
         requires exponentially decaying kernels"
    )]
    NonDecayingTail { rate: f64 },
    #[error("evaluation at z = {z} sits within {margin} of the tail pole at {pole}")]
    NearPole { z: Complex64, pole: f64, margin: f64 },
    #[error(
        "evaluation at z = {z} amplifies the grid tail by {amplification:.2e} \
         (cap {cap:.0e}); shrink the window or extend the kernel horizon"
    )]
    Amplification {
        z: Complex64,
        amplification: f64,
        cap: f64,
    },
    #[error("contour repeatedly passes within {tol} of a root near {z}")]
    ContourNearRoot { z: Complex64, tol: f64 },
    #[error("winding numbers remain inconsistent after refinement ({context})")]
    WindingInconsistent { context: String },
    #[error("point is not an equilibrium: |V(x*, x*)| = {residual} > {tol}")]
    NotEquilibrium { residual: f64, tol: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Certificate from the weak-interaction sufficient condition: when
/// `∫₀^∞ ‖K_t‖ dt < 1` the stability abscissa is positive and no root
/// search is needed.
#[derive(Debug, Clone)]
pub struct WeakInteractionReport {
    /// Trapezoid integral of the spectral-norm series plus the tail bound.
    pub integral: f64,
    pub tail: f64,
    pub certified: bool,
}

/// Trapezoid `∫ ‖K_t‖ dt` with an exponential tail bound.
pub fn weak_interaction_bound(theta: &KernelSeries) -> WeakInteractionReport {
    let norms = theta.norm_series();
    let step = theta.step();
    let mut integral = 0.0;
    for (k, &v) in norms.iter().enumerate() {
        let w = if k == 0 || k + 1 == norms.len() { 0.5 } else { 1.0 };
        integral += w * v * step;
    }
    let max = norms.iter().cloned().fold(0.0, f64::max);
    let tail = if max == 0.0 {
        0.0
    } else {
        match fit_decay(theta, 0.3) {
            Ok(fit) if fit.rate > 0.0 => {
                fit.prefactor * (-fit.rate * theta.horizon()).exp() / fit.rate
            }
            _ => f64::INFINITY,
        }
    };
    let total = integral + tail;
    WeakInteractionReport {
        integral: total,
        tail,
        certified: total < 1.0,
    }
}

#[cfg(test)]
mod tests;
