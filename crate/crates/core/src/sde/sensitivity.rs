//! Numerical check of the integrated sensitivity identity: the effect of an
//! extra drift `k` on an observable `g` equals the time integral of the
//! linearized response,
//!
//! `E g(Y^{α+k}_T) - E g(Y^α_T) = ∫₀ᵀ ∫ ∇_y E_y g(Y^α_{T-θ}) · k_θ(y)
//!  Law(Y^{α+k}_θ)(dy) dθ`.
//!
//! Both sides are estimated per particle with common random numbers, so the
//! reported residual has a per-sample standard error.

use super::engine::run_jacobian_path;
use super::{
    simulate_linear, simulate_nonhomogeneous, DynamicsSpec, ParticleEnsemble, SdeError,
    SimOptions, TimeVectorField, VectorField,
};
use crate::exec;
use crate::expr::{FieldHandle, MAX_DIM};

const CONTINUATION_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy)]
pub struct SensitivityOptions {
    pub dt: f64,
    /// Final time T at which the observable is compared.
    pub horizon: f64,
    /// Quadrature step of the θ-integral; must be a multiple of `dt`.
    pub theta_step: f64,
    /// Outer Monte Carlo samples.
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SensitivityReport {
    /// Monte Carlo estimate of `E g(Y^{α+k}_T) - E g(Y^α_T)`.
    pub lhs: f64,
    /// Quadrature estimate of the integrated response.
    pub rhs: f64,
    /// `lhs - rhs`, estimated sample by sample.
    pub residual: f64,
    /// Standard error of the residual.
    pub se: f64,
    pub samples: usize,
}

/// Estimate both sides of the integrated sensitivity identity and return
/// their difference with its standard error.
pub fn sensitivity_residual(
    spec: &DynamicsSpec,
    alpha: &dyn VectorField,
    k: &dyn TimeVectorField,
    g: &FieldHandle,
    init: &ParticleEnsemble,
    opts: &SensitivityOptions,
) -> Result<SensitivityReport, SdeError> {
    let d = spec.dim();
    let m = opts.samples;
    if m < 2 {
        return Err(SdeError::Invalid("need at least 2 samples".into()));
    }
    let stride = (opts.theta_step / opts.dt).round() as usize;
    if stride == 0 || (stride as f64 * opts.dt - opts.theta_step).abs() > 1e-12 {
        return Err(SdeError::Invalid(
            "theta_step must be a positive multiple of dt".into(),
        ));
    }
    let steps = (opts.horizon / opts.dt).round() as usize;
    if steps == 0 || steps % stride != 0 {
        return Err(SdeError::Invalid(
            "horizon must be a multiple of theta_step".into(),
        ));
    }
    let n_nodes = steps / stride + 1;

    // Outer ensemble of m particles, resampled from `init` if needed.
    let mut positions = Vec::with_capacity(m * d);
    for i in 0..m {
        positions.extend_from_slice(init.position(i % init.len()));
    }
    let outer = ParticleEnsemble::from_positions(d, positions, spec.space());

    // Coupled pair of runs: with and without the extra drift.
    let sim = SimOptions::new(opts.dt, steps as f64 * opts.dt, opts.seed).with_stride(stride);
    let pert = simulate_nonhomogeneous(spec, alpha, k, &outer, &sim)?;
    debug_assert_eq!(pert.frames.len(), n_nodes);
    let base = simulate_linear(spec, alpha, &outer, &SimOptions::new(opts.dt, sim.horizon, opts.seed))?;
    let base_final = base.last();
    let pert_final = pert.last();

    // Per-particle estimates of both sides; the continuation paths that
    // realize `∇_y E_y g(Y^α_{T-θ})` use dedicated noise streams.
    let indices: Vec<usize> = (0..m).collect();
    let per_particle: Vec<Result<(f64, f64), SdeError>> = exec::ordered_map(&indices, |&r| {
        let gp = g.eval_scalar(pert_final.position(r))?;
        let gb = g.eval_scalar(base_final.position(r))?;
        let lhs = gp - gb;

        let mut rhs = 0.0;
        for q in 0..n_nodes {
            let theta = q as f64 * opts.theta_step;
            let weight = if q == 0 || q == n_nodes - 1 {
                0.5 * opts.theta_step
            } else {
                opts.theta_step
            };
            let y_start = pert.frames[q].position(r);
            let mut kv = [0.0; MAX_DIM];
            k.eval_into(theta, y_start, &mut kv[..d])?;
            let remaining = steps - q * stride;
            let mut value = 0.0;
            if remaining == 0 {
                let mut grad = [0.0; MAX_DIM];
                g.grad(y_start, &mut grad[..d])?;
                for i in 0..d {
                    value += grad[i] * kv[i];
                }
            } else {
                let stream = CONTINUATION_STREAM_BASE + (q as u64) * m as u64 + r as u64;
                let mut terminal: Option<(Vec<f64>, Vec<f64>)> = None;
                run_jacobian_path(
                    spec,
                    alpha,
                    y_start,
                    opts.dt,
                    remaining,
                    remaining,
                    opts.seed,
                    stream,
                    |idx, _t, y, jac| {
                        if idx == 1 {
                            terminal = Some((y.to_vec(), jac.to_vec()));
                        }
                    },
                )?;
                let (y_end, jac) = terminal.expect("continuation recorded no endpoint");
                let mut grad = [0.0; MAX_DIM];
                g.grad(&y_end, &mut grad[..d])?;
                // (Jᵀ ∇g(Y_end)) · k_θ(y_start)
                for j in 0..d {
                    let mut jt_g = 0.0;
                    for i in 0..d {
                        jt_g += jac[i * d + j] * grad[i];
                    }
                    value += jt_g * kv[j];
                }
            }
            rhs += weight * value;
        }
        Ok((lhs, rhs))
    });

    let mut lhs_sum = 0.0;
    let mut rhs_sum = 0.0;
    let mut res_sum = 0.0;
    let mut res_sq = 0.0;
    for item in per_particle {
        let (lhs, rhs) = item?;
        lhs_sum += lhs;
        rhs_sum += rhs;
        let res = lhs - rhs;
        res_sum += res;
        res_sq += res * res;
    }
    let n = m as f64;
    let residual = res_sum / n;
    let var = (res_sq / n - residual * residual).max(0.0);
    Ok(SensitivityReport {
        lhs: lhs_sum / n,
        rhs: rhs_sum / n,
        residual,
        se: (var / n).sqrt(),
        samples: m,
    })
}
