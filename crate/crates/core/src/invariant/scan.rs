//! Parameter sweeps: all fixed points per grid point, the determinant at
//! zero, and a root-based stability classification per branch. Static
//! bifurcations show up as sign changes of `det(I - K̂(0))`; oscillatory
//! instabilities as near-axis roots with nonzero imaginary part.

use super::{
    enumerate_fixed_points_1d, merge_fixed_points, multi_start_fixed_points, AlphaProfile,
    FixedPointOptions, FixedPointReport, SolverError,
};
use crate::kernel::{estimate_theta, ThetaOptions};
use crate::sde::DynamicsSpec;
use crate::spectral::{
    find_roots, laplace, weak_interaction_bound, FindRootsOptions, LaplaceOptions, SearchWindow,
};
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchClass {
    Stable,
    Unstable,
    /// `|det(I - K̂(0))|` below the tolerance: a static bifurcation nearby.
    StaticCritical,
    /// Rightmost root close to the imaginary axis with `|Im| > ω_tol`.
    HopfCandidate,
    /// Kernel estimation or root search failed; see `note`.
    Unresolved,
}

#[derive(Debug, Clone)]
pub struct BranchReport {
    pub fixed_point: FixedPointReport,
    pub det_at_zero: f64,
    pub rightmost_root: Option<Complex64>,
    pub class: BranchClass,
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ScanPoint {
    pub parameter: f64,
    pub branches: Vec<BranchReport>,
}

#[derive(Debug, Clone)]
pub struct ScanOptions {
    pub solver: FixedPointOptions,
    pub kernel: ThetaOptions,
    pub laplace: LaplaceOptions,
    pub roots: FindRootsOptions,
    /// Multi-start count for the damped iteration.
    pub starts: usize,
    /// Also enumerate sign changes for scalar profiles (finds repellers).
    pub enumerate_p1: bool,
    pub enum_grid: usize,
    /// `|det(I - K̂(0))|` below this is classified static-critical.
    pub det_tol: f64,
    /// Rightmost roots with `|Re| ≤ hopf_re_tol` and `|Im| > ω_tol` are
    /// Hopf candidates.
    pub hopf_re_tol: f64,
    /// Left window edge as a fraction of the fitted tail rate.
    pub window_left_fraction: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        let mut kernel = ThetaOptions::default();
        kernel.horizon = 6.0;
        kernel.delta = 2e-2;
        kernel.dt = 1e-2;
        kernel.samples = 20_000;
        kernel.crn_check = false;
        ScanOptions {
            solver: FixedPointOptions::default(),
            kernel,
            laplace: LaplaceOptions::default(),
            roots: FindRootsOptions::default(),
            starts: 8,
            enumerate_p1: true,
            enum_grid: 25,
            det_tol: 0.05,
            hopf_re_tol: 0.05,
            window_left_fraction: 0.25,
        }
    }
}

/// Scan a scalar-parametrized family: per grid point, all located fixed
/// points with their determinant at zero and classification. Non-converged
/// or failed branches are flagged, never dropped.
pub fn bifurcation_scan<F>(
    family: F,
    grid: &[f64],
    opts: &ScanOptions,
) -> Result<Vec<ScanPoint>, SolverError>
where
    F: Fn(f64) -> Result<DynamicsSpec, crate::sde::SdeError>,
{
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SolverError::Invalid(
            "parameter grid must be strictly increasing".into(),
        ));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &param in grid {
        let spec = family(param)?;
        let p = spec.n_terms();
        let mut candidates =
            multi_start_fixed_points(&spec, &vec![0.0; p], opts.starts, &opts.solver)?;
        if p == 1 && opts.enumerate_p1 {
            let extra = enumerate_fixed_points_1d(&spec, &opts.solver, opts.enum_grid)?;
            candidates.extend(extra);
            candidates = merge_fixed_points(candidates, 2.0 * opts.solver.tol);
        }
        if candidates.is_empty() {
            // Keep the (flagged) best effort of a plain solve so the grid
            // point still shows up in reports.
            let fallback = super::solve_fixed_point(&spec, &vec![0.0; p], &opts.solver)?;
            candidates.push(fallback);
        }

        let mut branches = Vec::with_capacity(candidates.len());
        for fixed_point in candidates {
            if !fixed_point.converged {
                branches.push(BranchReport {
                    fixed_point,
                    det_at_zero: f64::NAN,
                    rightmost_root: None,
                    class: BranchClass::Unresolved,
                    note: Some("fixed-point iteration did not converge".into()),
                });
                continue;
            }
            let branch = classify_branch(&spec, &fixed_point, opts);
            branches.push(match branch {
                Ok(b) => b,
                Err(e) => BranchReport {
                    fixed_point,
                    det_at_zero: f64::NAN,
                    rightmost_root: None,
                    class: BranchClass::Unresolved,
                    note: Some(e.to_string()),
                },
            });
        }
        points.push(ScanPoint {
            parameter: param,
            branches,
        });
    }
    Ok(points)
}

fn classify_branch(
    spec: &DynamicsSpec,
    fixed_point: &FixedPointReport,
    opts: &ScanOptions,
) -> Result<BranchReport, SolverError> {
    let profile = AlphaProfile::new(fixed_point.coeffs.clone());
    let mut kernel_opts = opts.kernel.clone();
    kernel_opts.seed ^= fixed_point
        .coeffs
        .iter()
        .fold(0u64, |acc, c| acc.wrapping_add(c.to_bits()));
    let est = estimate_theta(spec, &profile.as_field(spec), &kernel_opts)?;
    let lk = laplace(&est.series, &opts.laplace)?;
    let det0 = {
        let m = lk.eval_real(0.0)?;
        let p = m.nrows();
        (nalgebra::DMatrix::<f64>::identity(p, p) - m).determinant()
    };

    // A narrow left edge keeps the contour away from amplified Monte Carlo
    // noise; classification only needs the sign of the rightmost root.
    let weak = weak_interaction_bound(&est.series);
    let mut window = SearchWindow::default_for(&lk, weak.integral);
    if lk.kappa_tail().is_finite() {
        window.re_min = -opts.window_left_fraction * lk.kappa_tail();
    }
    let report = find_roots(&lk, &window, &opts.roots)?;
    let rightmost = report.rightmost().map(|r| r.z);

    let class = if det0.abs() < opts.det_tol {
        BranchClass::StaticCritical
    } else if let Some(z) = rightmost {
        if z.re.abs() <= opts.hopf_re_tol && z.im.abs() > opts.roots.omega_tol {
            BranchClass::HopfCandidate
        } else if z.re > 0.0 {
            BranchClass::Unstable
        } else {
            BranchClass::Stable
        }
    } else {
        BranchClass::Stable
    };
    Ok(BranchReport {
        fixed_point: fixed_point.clone(),
        det_at_zero: det0,
        rightmost_root: rightmost,
        class,
        note: None,
    })
}
