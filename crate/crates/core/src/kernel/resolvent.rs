//! Volterra machinery on the uniform grid: trapezoidal convolution, the
//! marching resolvent solve, and Neumann partial sums.

use super::{KernelError, KernelSeries};
use nalgebra::DMatrix;

/// Trapezoidal grid convolution `(a ∗ b)_k = ∫_0^{t_k} a(t_k - s) b(s) ds`.
pub fn convolve(a: &KernelSeries, b: &KernelSeries) -> Result<KernelSeries, KernelError> {
    if a.step() != b.step() || a.len() != b.len() {
        return Err(KernelError::Invalid(
            "convolution operands must share the grid".into(),
        ));
    }
    let p = a.dim();
    let step = a.step();
    let n = a.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = DMatrix::<f64>::zeros(p, p);
        if k > 0 {
            acc += a.mat(k) * b.mat(0) * 0.5;
            acc += a.mat(0) * b.mat(k) * 0.5;
            for j in 1..k {
                acc += a.mat(k - j) * b.mat(j);
            }
            acc *= step;
        }
        out.push(acc);
    }
    KernelSeries::new(step, out)
}

/// Solve the resolvent equation `R = K + K ∗ R` by a marching trapezoidal
/// scheme:
///
/// `(I - Δ/2 K_0) R_k = K_k + Δ [ ½ K_k R_0 + Σ_{0<j<k} K_{k-j} R_j ]`.
pub fn resolvent(theta: &KernelSeries) -> Result<KernelSeries, KernelError> {
    let p = theta.dim();
    let step = theta.step();
    let n = theta.len();
    if p == 0 {
        return KernelSeries::new(step, vec![DMatrix::zeros(0, 0); n]);
    }
    let lhs = DMatrix::<f64>::identity(p, p) - theta.mat(0) * (step / 2.0);
    let lu = lhs.lu();
    if lu.determinant().abs() < 1e-300 {
        return Err(KernelError::SingularMarch);
    }

    let mut omega: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    omega.push(theta.mat(0).clone());
    for k in 1..n {
        let mut rhs = theta.mat(k).clone();
        let mut conv = theta.mat(k) * &omega[0] * 0.5;
        for j in 1..k {
            conv += theta.mat(k - j) * &omega[j];
        }
        rhs += conv * step;
        let solved = lu
            .solve(&rhs)
            .ok_or(KernelError::SingularMarch)?;
        omega.push(solved);
    }
    KernelSeries::new(step, omega)
}

/// Partial sum of the Neumann series: `Σ_{i=1..terms} K^{∗i}` with
/// `K^{∗(i+1)} = K ∗ K^{∗i}`. An independent cross-check of [`resolvent`].
pub fn neumann_partial(theta: &KernelSeries, terms: usize) -> Result<KernelSeries, KernelError> {
    if terms == 0 {
        return Err(KernelError::Invalid("needs at least one term".into()));
    }
    let mut acc = theta.clone();
    if terms == 1 {
        return Ok(acc);
    }
    let mut power = theta.clone();
    for _ in 2..=terms {
        power = convolve(theta, &power)?;
        let mats = acc
            .mats()
            .iter()
            .zip(power.mats())
            .map(|(a, b)| a + b)
            .collect();
        acc = KernelSeries::new(theta.step(), mats)?;
    }
    Ok(acc)
}
