//! Invariant measures as fixed points of the stationary-response map.
//!
//! For a separable interaction the map `Ψ` sends an interaction profile to
//! the stationary average of the interaction components: in coefficient
//! space, `Ψ(a)_i = ∫ f_i(y) ν^a(dy)` where `ν^a` is the invariant law of
//! the linear process with drift `b + Σ a_j w_j`. Invariant measures of the
//! interacting dynamics are exactly the fixed points of `Ψ`.
//!
//! The solver runs a damped iteration with common random numbers across
//! iterations (the sampled `Ψ̃` is then a fixed smooth function of `a`, which
//! makes damping and bisection well behaved). Repelling fixed points are
//! unreachable by forward iteration; for scalar profiles a sign-change
//! enumeration of the residual locates them instead.

mod dissipativity;
mod scan;

pub use dissipativity::{check_dissipativity, DissipativityOptions, DissipativityReport};
pub use scan::{bifurcation_scan, BranchClass, BranchReport, ScanOptions, ScanPoint};

use crate::exec;
use crate::expr::{ExprError, MAX_DIM};
use crate::sde::{
    sample_invariant, DynamicsSpec, ParticleEnsemble, SamplerOptions, SdeError, VectorField,
};
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Kernel(#[from] crate::kernel::KernelError),
    #[error(transparent)]
    Spectral(#[from] crate::spectral::SpectralError),
    #[error("{0}")]
    Invalid(String),
    #[error(
        "Green-Kubo validator disagrees with the transform at 0 by {max_sigmas:.2} \
         combined standard errors (limit 5)"
    )]
    GreenKuboMismatch {
        max_sigmas: f64,
        report: Box<GreenKuboReport>,
    },
}

/// Coefficients of an interaction profile `α(x) = Σ a_i w_i(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaProfile {
    pub coeffs: Vec<f64>,
}

impl AlphaProfile {
    pub fn new(coeffs: Vec<f64>) -> AlphaProfile {
        AlphaProfile { coeffs }
    }

    pub fn zeros(p: usize) -> AlphaProfile {
        AlphaProfile {
            coeffs: vec![0.0; p],
        }
    }

    /// Bind the coefficients to a dynamics' interaction terms.
    pub fn as_field<'a>(&'a self, spec: &'a DynamicsSpec) -> AlphaField<'a> {
        AlphaField {
            spec,
            coeffs: &self.coeffs,
        }
    }
}

/// `α(x) = Σ a_i w_i(x)` as an evaluable drift.
pub struct AlphaField<'a> {
    spec: &'a DynamicsSpec,
    coeffs: &'a [f64],
}

impl VectorField for AlphaField<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        out.fill(0.0);
        let d = self.spec.dim();
        let mut w = [0.0; MAX_DIM];
        for (term, &a) in self.spec.interaction().iter().zip(self.coeffs) {
            term.w.eval_vector(x, &mut w[..d])?;
            for (o, wv) in out.iter_mut().zip(&w[..d]) {
                *o += a * wv;
            }
        }
        Ok(())
    }

    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        out.fill(0.0);
        let d = self.spec.dim();
        let mut j = vec![0.0; d * d];
        for (term, &a) in self.spec.interaction().iter().zip(self.coeffs) {
            term.w.jac(x, &mut j)?;
            for (o, jv) in out.iter_mut().zip(&j) {
                *o += a * jv;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FixedPointOptions {
    /// Damping λ of `a ← (1-λ) a + λ Ψ̃(a)`.
    pub damping: f64,
    /// Stop when `‖Ψ̃(a) - a‖∞ ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Monte Carlo samples per Ψ evaluation.
    pub mc_samples: usize,
    /// Budget doubling cap when the residual stalls above `tol`.
    pub max_budget_doublings: usize,
    pub sampler: SamplerOptions,
    /// Re-equilibration time for warm-started evaluations.
    pub reburn: f64,
    pub seed: u64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            damping: 0.5,
            tol: 1e-3,
            max_iter: 60,
            mc_samples: 20_000,
            max_budget_doublings: 4,
            sampler: SamplerOptions::default(),
            reburn: 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixedPointReport {
    pub converged: bool,
    pub coeffs: Vec<f64>,
    /// `‖Ψ̃(a) - a‖∞` at the reported iterate.
    pub residual_norm: f64,
    pub iterations: usize,
    /// Standard error of each Ψ̃ component at the final evaluation.
    pub mc_se: Vec<f64>,
}

/// One Monte Carlo evaluation of `Ψ̃(a)` with per-component standard errors.
pub(crate) fn psi_eval(
    spec: &DynamicsSpec,
    coeffs: &[f64],
    samples: usize,
    sampler: &SamplerOptions,
    warm: Option<(&ParticleEnsemble, f64)>,
) -> Result<(Vec<f64>, Vec<f64>, ParticleEnsemble), SolverError> {
    let p = spec.n_terms();
    let profile = AlphaProfile::new(coeffs.to_vec());
    let field = profile.as_field(spec);
    let stationary = sample_invariant(spec, &field, samples, sampler, warm)?;

    struct Acc {
        sum: Vec<f64>,
        sumsq: Vec<f64>,
        err: Option<ExprError>,
    }
    let acc = exec::chunked_accumulate(
        samples,
        exec::CHUNK,
        || Acc {
            sum: vec![0.0; p],
            sumsq: vec![0.0; p],
            err: None,
        },
        |range, acc| {
            for s in range {
                if acc.err.is_some() {
                    return;
                }
                let y = stationary.point(s);
                for (i, term) in spec.interaction().iter().enumerate() {
                    match term.f.eval_scalar(y) {
                        Ok(v) => {
                            acc.sum[i] += v;
                            acc.sumsq[i] += v * v;
                        }
                        Err(e) => {
                            acc.err = Some(e);
                            return;
                        }
                    }
                }
            }
        },
        |acc, part| {
            if acc.err.is_none() {
                acc.err = part.err;
            }
            for (a, b) in acc.sum.iter_mut().zip(&part.sum) {
                *a += b;
            }
            for (a, b) in acc.sumsq.iter_mut().zip(&part.sumsq) {
                *a += b;
            }
        },
    );
    if let Some(e) = acc.err {
        return Err(SolverError::Sde(e.into()));
    }
    let n = samples as f64;
    let mut psi = Vec::with_capacity(p);
    let mut se = Vec::with_capacity(p);
    for i in 0..p {
        let mean = acc.sum[i] / n;
        let var = (acc.sumsq[i] / n - mean * mean).max(0.0);
        psi.push(mean);
        se.push((var / n).sqrt());
    }
    Ok((psi, se, stationary.chains))
}

/// Damped fixed-point iteration on the interaction coefficients.
pub fn solve_fixed_point(
    spec: &DynamicsSpec,
    a0: &[f64],
    opts: &FixedPointOptions,
) -> Result<FixedPointReport, SolverError> {
    let p = spec.n_terms();
    if a0.len() != p {
        return Err(SolverError::Invalid(format!(
            "initial coefficients have length {}, expected {p}",
            a0.len()
        )));
    }
    if !(0.0 < opts.damping && opts.damping <= 1.0) {
        return Err(SolverError::Invalid("damping must lie in (0, 1]".into()));
    }
    if p == 0 {
        return Ok(FixedPointReport {
            converged: true,
            coeffs: Vec::new(),
            residual_norm: 0.0,
            iterations: 1,
            mc_se: Vec::new(),
        });
    }

    let mut a = a0.to_vec();
    let mut warm: Option<ParticleEnsemble> = None;
    let mut samples = opts.mc_samples;
    let mut doublings = 0;
    let mut best: Option<FixedPointReport> = None;
    let mut residual_history: Vec<f64> = Vec::new();

    for it in 1..=opts.max_iter {
        let warm_ref = warm.as_ref().map(|w| (w, opts.reburn));
        let (psi, se, chains) = psi_eval(spec, &a, samples, &opts.sampler, warm_ref)?;
        let residual = psi
            .iter()
            .zip(&a)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        if best
            .as_ref()
            .map(|b| residual < b.residual_norm)
            .unwrap_or(true)
        {
            best = Some(FixedPointReport {
                converged: residual <= opts.tol,
                coeffs: a.clone(),
                residual_norm: residual,
                iterations: it,
                mc_se: se.clone(),
            });
        }
        if residual <= opts.tol {
            return Ok(best.expect("recorded above"));
        }
        if a.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
            break;
        }
        // Stalls above tolerance get a doubled Monte Carlo budget.
        residual_history.push(residual);
        let len = residual_history.len();
        if len >= 3
            && residual_history[len - 1] > 0.9 * residual_history[len - 3]
            && doublings < opts.max_budget_doublings
        {
            samples *= 2;
            doublings += 1;
            residual_history.clear();
            // Chain counts change with the budget; restart the sampler.
            warm = None;
        } else {
            warm = Some(chains);
        }
        for (av, pv) in a.iter_mut().zip(&psi) {
            *av = (1.0 - opts.damping) * *av + opts.damping * pv;
        }
    }
    let mut report = best.unwrap_or(FixedPointReport {
        converged: false,
        coeffs: a,
        residual_norm: f64::INFINITY,
        iterations: opts.max_iter,
        mc_se: vec![f64::NAN; p],
    });
    report.converged = false;
    Ok(report)
}

/// Estimated per-coefficient bounds `sup |f_i|` over a sampling box,
/// standing in for the interaction sup-norm that delimits the multi-start
/// box.
pub fn coefficient_bounds(spec: &DynamicsSpec, radius: f64, seed: u64) -> Vec<f64> {
    let p = spec.n_terms();
    let d = spec.dim();
    let mut bounds = vec![0.0f64; p];
    let mut rng = crate::rng::ParticleRng::new(seed ^ BOUNDS_SEED_SALT, 0);
    let mut x = vec![0.0; d];
    for _ in 0..512 {
        for xv in x.iter_mut() {
            *xv = if spec.space().is_torus() {
                crate::sde::TAU * rng.uniform()
            } else {
                radius * (2.0 * rng.uniform() - 1.0)
            };
        }
        for (i, term) in spec.interaction().iter().enumerate() {
            if let Ok(v) = term.f.eval_scalar(&x) {
                bounds[i] = bounds[i].max(v.abs());
            }
        }
    }
    bounds.iter_mut().for_each(|b| *b = b.max(1e-6));
    bounds
}

const BOUNDS_SEED_SALT: u64 = 0xb0a3_9d11_55aa_0042;

/// Multi-start damped solves from `starts` initial vectors inside the
/// coefficient box, merged within `2 tol`.
pub fn multi_start_fixed_points(
    spec: &DynamicsSpec,
    a0: &[f64],
    starts: usize,
    opts: &FixedPointOptions,
) -> Result<Vec<FixedPointReport>, SolverError> {
    let p = spec.n_terms();
    let bounds = coefficient_bounds(spec, 5.0, opts.seed);
    let mut inits: Vec<Vec<f64>> = vec![a0.to_vec(), vec![0.0; p]];
    let mut rng = crate::rng::ParticleRng::new(opts.seed ^ 0x57a2_7000, 1);
    while inits.len() < starts.max(2) {
        let v: Vec<f64> = bounds
            .iter()
            .map(|b| b * (2.0 * rng.uniform() - 1.0))
            .collect();
        inits.push(v);
    }
    let runs: Vec<Result<FixedPointReport, SolverError>> =
        exec::ordered_map(&inits, |init| solve_fixed_point(spec, init, opts));
    let mut reports = Vec::new();
    for run in runs {
        let rep = run?;
        if rep.converged {
            reports.push(rep);
        }
    }
    Ok(merge_fixed_points(reports, 2.0 * opts.tol))
}

pub(crate) fn merge_fixed_points(
    mut reports: Vec<FixedPointReport>,
    radius: f64,
) -> Vec<FixedPointReport> {
    reports.sort_by(|a, b| a.coeffs.partial_cmp(&b.coeffs).unwrap());
    let mut merged: Vec<FixedPointReport> = Vec::new();
    for rep in reports {
        let dup = merged.iter().any(|m| {
            m.coeffs
                .iter()
                .zip(&rep.coeffs)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
                < radius
        });
        if !dup {
            merged.push(rep);
        }
    }
    merged
}

/// Locate every root of the scalar residual `Ψ̃(a) - a` on the coefficient
/// box by sign-change enumeration plus bisection (p = 1 only). This also
/// finds repelling fixed points which forward iteration cannot reach.
pub fn enumerate_fixed_points_1d(
    spec: &DynamicsSpec,
    opts: &FixedPointOptions,
    grid_points: usize,
) -> Result<Vec<FixedPointReport>, SolverError> {
    if spec.n_terms() != 1 {
        return Err(SolverError::Invalid(
            "sign-change enumeration applies to p = 1 profiles only".into(),
        ));
    }
    let bound = coefficient_bounds(spec, 5.0, opts.seed)[0] * 1.05;
    let n = grid_points.max(9);
    let mut warm: Option<ParticleEnsemble> = None;

    let residual_at = |a: f64, warm: &mut Option<ParticleEnsemble>| -> Result<(f64, f64), SolverError> {
        let warm_ref = warm.as_ref().map(|w| (w, opts.reburn));
        let (psi, se, chains) = psi_eval(spec, &[a], opts.mc_samples, &opts.sampler, warm_ref)?;
        *warm = Some(chains);
        Ok((psi[0] - a, se[0]))
    };

    let mut grid = Vec::with_capacity(n);
    for k in 0..n {
        let a = -bound + 2.0 * bound * k as f64 / (n - 1) as f64;
        let (g, _) = residual_at(a, &mut warm)?;
        grid.push((a, g));
    }

    let mut reports = Vec::new();
    for win in grid.windows(2) {
        let (a_lo, g_lo) = win[0];
        let (a_hi, g_hi) = win[1];
        if g_lo == 0.0 {
            continue;
        }
        if g_lo * g_hi > 0.0 {
            continue;
        }
        let (mut lo, mut hi, mut glo) = (a_lo, a_hi, g_lo);
        let mut last_se = 0.0;
        for _ in 0..40 {
            if hi - lo <= opts.tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let (gm, se) = residual_at(mid, &mut warm)?;
            last_se = se;
            if glo * gm <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
                glo = gm;
            }
        }
        let a_star = 0.5 * (lo + hi);
        let (g_star, se) = residual_at(a_star, &mut warm)?;
        reports.push(FixedPointReport {
            converged: true,
            coeffs: vec![a_star],
            residual_norm: g_star.abs(),
            iterations: n + 40,
            mc_se: vec![se.max(last_se)],
        });
    }
    Ok(merge_fixed_points(reports, 2.0 * opts.tol))
}

// --- Green-Kubo derivative --------------------------------------------------

#[derive(Debug, Clone)]
pub struct GreenKuboOptions {
    /// Finite-difference bump ε applied to each coefficient.
    pub epsilon: f64,
    pub samples: usize,
    pub sampler: SamplerOptions,
    pub seed: u64,
}

impl Default for GreenKuboOptions {
    fn default() -> Self {
        GreenKuboOptions {
            epsilon: 1e-2,
            samples: 100_000,
            sampler: SamplerOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GreenKuboReport {
    /// The Fréchet derivative `DΨ(a*) = K̂(0)` restricted to the profile span.
    pub dpsi: DMatrix<f64>,
    /// Finite-difference validator `(Ψ(a*+εe_j) - Ψ(a*)) / ε` (columns j).
    pub fd: DMatrix<f64>,
    /// Combined standard error per entry.
    pub combined_se: DMatrix<f64>,
    pub max_sigmas: f64,
    pub agrees: bool,
}

/// The derivative of the stationary-response map is the kernel transform at
/// zero; validate it against coupled finite differences of `Ψ` itself.
///
/// `theta_hat_0` is the p×p transform at z = 0 and `theta_hat_0_se` its
/// per-entry Monte Carlo error (zero for analytic kernels).
pub fn green_kubo_derivative(
    spec: &DynamicsSpec,
    a_star: &AlphaProfile,
    theta_hat_0: &DMatrix<f64>,
    theta_hat_0_se: &DMatrix<f64>,
    opts: &GreenKuboOptions,
) -> Result<GreenKuboReport, SolverError> {
    let p = spec.n_terms();
    if p == 0 {
        return Ok(GreenKuboReport {
            dpsi: DMatrix::zeros(0, 0),
            fd: DMatrix::zeros(0, 0),
            combined_se: DMatrix::zeros(0, 0),
            max_sigmas: 0.0,
            agrees: true,
        });
    }
    if theta_hat_0.nrows() != p || theta_hat_0.ncols() != p {
        return Err(SolverError::Invalid(format!(
            "transform at 0 must be {p}x{p}"
        )));
    }
    let eps = opts.epsilon;
    let mut sampler = opts.sampler;
    sampler.seed = opts.seed;

    // Base evaluation and per-sample values for pairing.
    let base = psi_samples(spec, &a_star.coeffs, opts.samples, &sampler)?;
    let mut fd = DMatrix::zeros(p, p);
    let mut combined = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut bumped = a_star.coeffs.clone();
        bumped[j] += eps;
        // Same sampler seed: the bumped run shares every Brownian increment.
        let pert = psi_samples(spec, &bumped, opts.samples, &sampler)?;
        for i in 0..p {
            let n = opts.samples as f64;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for s in 0..opts.samples {
                let diff = (pert[(s, i)] - base[(s, i)]) / eps;
                sum += diff;
                sumsq += diff * diff;
            }
            let mean = sum / n;
            let var = (sumsq / n - mean * mean).max(0.0);
            fd[(i, j)] = mean;
            let fd_se = (var / n).sqrt();
            combined[(i, j)] = (fd_se * fd_se + theta_hat_0_se[(i, j)].powi(2)).sqrt();
        }
    }

    let mut max_sigmas = 0.0f64;
    for i in 0..p {
        for j in 0..p {
            let dev = (fd[(i, j)] - theta_hat_0[(i, j)]).abs();
            let se = combined[(i, j)].max(1e-12);
            max_sigmas = max_sigmas.max(dev / se);
        }
    }
    let report = GreenKuboReport {
        dpsi: theta_hat_0.clone(),
        fd,
        combined_se: combined,
        max_sigmas,
        agrees: max_sigmas <= 5.0,
    };
    if !report.agrees {
        return Err(SolverError::GreenKuboMismatch {
            max_sigmas,
            report: Box::new(report),
        });
    }
    Ok(report)
}

/// Per-sample interaction values `f_i(Y_s)` as an (samples × p) matrix.
fn psi_samples(
    spec: &DynamicsSpec,
    coeffs: &[f64],
    samples: usize,
    sampler: &SamplerOptions,
) -> Result<DMatrix<f64>, SolverError> {
    let p = spec.n_terms();
    let profile = AlphaProfile::new(coeffs.to_vec());
    let field = profile.as_field(spec);
    let stationary = sample_invariant(spec, &field, samples, sampler, None)?;
    let mut out = DMatrix::zeros(samples, p);
    for s in 0..samples {
        let y = stationary.point(s);
        for (i, term) in spec.interaction().iter().enumerate() {
            out[(s, i)] = term
                .f
                .eval_scalar(y)
                .map_err(|e| SolverError::Sde(e.into()))?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
