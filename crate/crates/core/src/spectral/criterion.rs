//! Noise-free stability criterion: with σ ≡ 0 the invariant measures are
//! point masses δ_{x*}, and the root criterion reduces to the classical
//! Jacobian test on `∇_x V(x*, x*) + ∇_y V(x*, x*)` for the combined field
//! `V(x, y) = b(x) + F(x, y)`.

use super::SpectralError;
use crate::expr::MAX_DIM;
use crate::sde::DynamicsSpec;
use nalgebra::DMatrix;
use num_complex::Complex64;

#[derive(Debug, Clone)]
pub struct JacobianCriterionReport {
    /// `∇_x V + ∇_y V` at `(x*, x*)`.
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<Complex64>,
    /// True when every eigenvalue has negative real part.
    pub stable: bool,
}

/// Evaluate the σ ≡ 0 criterion at a candidate equilibrium `x*` of
/// `x ↦ V(x, x)`.
pub fn jacobian_criterion(
    spec: &DynamicsSpec,
    x_star: &[f64],
    tol: f64,
) -> Result<JacobianCriterionReport, SpectralError> {
    if !spec.is_deterministic() {
        return Err(SpectralError::Invalid(
            "the Jacobian criterion applies to σ ≡ 0 dynamics only".into(),
        ));
    }
    let d = spec.dim();
    if x_star.len() != d {
        return Err(SpectralError::Invalid(format!(
            "equilibrium point has dimension {}, expected {d}",
            x_star.len()
        )));
    }

    // Residual |V(x*, x*)| = |b(x*) + F(x*, x*)|.
    let mut v = [0.0; MAX_DIM];
    spec.drift()
        .eval_vector(x_star, &mut v[..d])
        .map_err(crate::sde::SdeError::from)
        .map_err(crate::kernel::KernelError::from)?;
    let mut inter = [0.0; MAX_DIM];
    spec.interaction_at(x_star, x_star, &mut inter[..d])
        .map_err(crate::kernel::KernelError::from)?;
    let residual = v[..d]
        .iter()
        .zip(&inter[..d])
        .map(|(a, b)| (a + b) * (a + b))
        .sum::<f64>()
        .sqrt();
    if residual > tol {
        return Err(SpectralError::NotEquilibrium { residual, tol });
    }

    // ∇_x V = ∇b + Σ f_i(y) ∇w_i(x);  ∇_y V = Σ w_i(x) ∇f_i(y)ᵀ.
    let mut total = vec![0.0; d * d];
    spec.drift()
        .jac(x_star, &mut total)
        .map_err(crate::sde::SdeError::from)
        .map_err(crate::kernel::KernelError::from)?;
    let mut wjac = vec![0.0; d * d];
    let mut wval = [0.0; MAX_DIM];
    let mut fgrad = [0.0; MAX_DIM];
    for term in spec.interaction() {
        let fy = term
            .f
            .eval_scalar(x_star)
            .map_err(crate::sde::SdeError::from)
            .map_err(crate::kernel::KernelError::from)?;
        term.w
            .jac(x_star, &mut wjac)
            .map_err(crate::sde::SdeError::from)
            .map_err(crate::kernel::KernelError::from)?;
        term.w
            .eval_vector(x_star, &mut wval[..d])
            .map_err(crate::sde::SdeError::from)
            .map_err(crate::kernel::KernelError::from)?;
        term.f
            .grad(x_star, &mut fgrad[..d])
            .map_err(crate::sde::SdeError::from)
            .map_err(crate::kernel::KernelError::from)?;
        for r in 0..d {
            for c in 0..d {
                total[r * d + c] += fy * wjac[r * d + c] + wval[r] * fgrad[c];
            }
        }
    }

    let matrix = DMatrix::from_row_slice(d, d, &total);
    let eigenvalues: Vec<Complex64> = matrix.complex_eigenvalues().iter().cloned().collect();
    let stable = eigenvalues.iter().all(|e| e.re < 0.0);
    Ok(JacobianCriterionReport {
        matrix,
        eigenvalues,
        stable,
    })
}
