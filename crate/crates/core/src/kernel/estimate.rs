//! Monte Carlo estimation of the sensitivity kernel.
//!
//! Entry (i, j) at grid time t is `E[(J_tᵀ ∇f_i(Y_t)) · w_j(y)]` with
//! `y ~ ν` (invariant law of the linear process), `Y` the path from `y` and
//! `J` its pathwise Jacobian flow. The pathwise estimator has no
//! finite-difference bias; a common-random-number central difference of the
//! same quantity ships as a cross-check of the flow integration.

use super::{KernelError, KernelSeries};
use crate::exec;
use crate::expr::MAX_DIM;
use crate::sde::{
    run_jacobian_path, sample_invariant, DynamicsSpec, SamplerOptions, SdeError, VectorField,
};
use nalgebra::DMatrix;

const PATH_SEED_SALT: u64 = 0x7a11_ce55_0bad_cafe;
const SAMPLE_SEED_SALT: u64 = 0x5eed_1234_9876_aabb;

#[derive(Debug, Clone)]
pub struct ThetaOptions {
    /// Output grid step Δ (a multiple of `dt`).
    pub delta: f64,
    /// Output horizon T.
    pub horizon: f64,
    /// Integrator step.
    pub dt: f64,
    /// Monte Carlo sample paths.
    pub samples: usize,
    pub seed: u64,
    /// Invariant-law sampler settings (its seed is derived from `seed`).
    pub sampler: SamplerOptions,
    /// Run the CRN finite-difference cross-check of entry (1,1).
    pub crn_check: bool,
    /// Sub-sample size and bump for the cross-check.
    pub crn_subsample: usize,
    pub crn_bump: f64,
}

impl Default for ThetaOptions {
    fn default() -> Self {
        ThetaOptions {
            delta: 1e-2,
            horizon: 10.0,
            dt: 1e-3,
            samples: 10_000,
            seed: 0,
            sampler: SamplerOptions::default(),
            crn_check: true,
            crn_subsample: 4096,
            crn_bump: 1e-3,
        }
    }
}

/// Cross-check of entry (1,1) against CRN central differences at three grid
/// times.
#[derive(Debug, Clone)]
pub struct CrnCheck {
    pub times: Vec<f64>,
    pub pathwise: Vec<f64>,
    pub crn: Vec<f64>,
    /// Standard error of the paired difference at each checked time.
    pub diff_se: Vec<f64>,
    pub agrees: bool,
}

#[derive(Debug, Clone)]
pub struct ThetaEstimate {
    pub series: KernelSeries,
    pub warnings: Vec<String>,
    pub crn: Option<CrnCheck>,
}

struct Acc {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    err: Option<SdeError>,
}

/// Estimate the kernel on the grid `0, Δ, ..., T` from `opts.samples` paths.
pub fn estimate_theta(
    spec: &DynamicsSpec,
    alpha: &dyn VectorField,
    opts: &ThetaOptions,
) -> Result<ThetaEstimate, KernelError> {
    let d = spec.dim();
    let p = spec.n_terms();
    let record_every = (opts.delta / opts.dt).round() as usize;
    if record_every == 0 || (record_every as f64 * opts.dt - opts.delta).abs() > 1e-9 * opts.delta
    {
        return Err(KernelError::Invalid(
            "delta must be a positive multiple of dt".into(),
        ));
    }
    let k_grid = (opts.horizon / opts.delta).round() as usize;
    if k_grid == 0 {
        return Err(KernelError::Invalid("horizon must be at least delta".into()));
    }
    let steps = k_grid * record_every;
    let m = opts.samples;
    if m == 0 {
        return Err(KernelError::Invalid("sample count must be positive".into()));
    }
    if p == 0 {
        let series = KernelSeries::new(opts.delta, vec![DMatrix::zeros(0, 0); k_grid + 1])?;
        return Ok(ThetaEstimate {
            series,
            warnings: Vec::new(),
            crn: None,
        });
    }

    // Initial points from the invariant law of the linear process.
    let mut sampler = opts.sampler;
    sampler.seed = opts.seed ^ SAMPLE_SEED_SALT;
    sampler.dt = sampler.dt.min(opts.dt.max(1e-3));
    let stationary = sample_invariant(spec, alpha, m, &sampler, None)?;

    let path_seed = opts.seed ^ PATH_SEED_SALT;
    let width = (k_grid + 1) * p * p;

    let acc = exec::chunked_accumulate(
        m,
        64,
        || Acc {
            sum: vec![0.0; width],
            sumsq: vec![0.0; width],
            err: None,
        },
        |range, acc| {
            let mut w_at_y = vec![0.0; p * d];
            let mut grad = [0.0; MAX_DIM];
            let mut values = vec![0.0; p * p];
            for sample in range {
                if acc.err.is_some() {
                    return;
                }
                let y0 = stationary.point(sample);
                let mut ok = true;
                for (j, term) in spec.interaction().iter().enumerate() {
                    if let Err(e) = term.w.eval_vector(y0, &mut w_at_y[j * d..(j + 1) * d]) {
                        acc.err = Some(e.into());
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    return;
                }
                let res = run_jacobian_path(
                    spec,
                    alpha,
                    y0,
                    opts.dt,
                    steps,
                    record_every,
                    path_seed,
                    sample as u64,
                    |k, _t, y, jac| {
                        for (i, term) in spec.interaction().iter().enumerate() {
                            if term.f.grad(y, &mut grad[..d]).is_err() {
                                values[i * p..(i + 1) * p].fill(f64::NAN);
                                continue;
                            }
                            for j in 0..p {
                                let wj = &w_at_y[j * d..(j + 1) * d];
                                let mut val = 0.0;
                                for (col, wv) in wj.iter().enumerate() {
                                    let mut jt_g = 0.0;
                                    for row in 0..d {
                                        jt_g += jac[row * d + col] * grad[row];
                                    }
                                    val += jt_g * wv;
                                }
                                values[i * p + j] = val;
                            }
                        }
                        let base = k * p * p;
                        for (slot, &v) in values.iter().enumerate() {
                            acc.sum[base + slot] += v;
                            acc.sumsq[base + slot] += v * v;
                        }
                    },
                );
                if let Err(e) = res {
                    acc.err = Some(e);
                    return;
                }
            }
        },
        |acc, part| {
            if acc.err.is_none() {
                if let Some(e) = part.err {
                    acc.err = Some(e);
                }
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
        return Err(e.into());
    }

    let n = m as f64;
    let mut mats = Vec::with_capacity(k_grid + 1);
    let mut ses = Vec::with_capacity(k_grid + 1);
    let mut warnings = Vec::new();
    for k in 0..=k_grid {
        let mut mat = DMatrix::zeros(p, p);
        let mut se = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                let idx = k * p * p + i * p + j;
                let mean = acc.sum[idx] / n;
                let var = (acc.sumsq[idx] / n - mean * mean).max(0.0);
                mat[(i, j)] = mean;
                se[(i, j)] = (var / n).sqrt();
            }
        }
        mats.push(mat);
        ses.push(se);
    }
    for k in (0..=k_grid).step_by((k_grid / 8).max(1)) {
        for i in 0..p {
            for j in 0..p {
                let mean = mats[k][(i, j)];
                let se = ses[k][(i, j)];
                if mean.abs() > 1e-12 && se > 0.2 * mean.abs() && warnings.len() < 16 {
                    warnings.push(format!(
                        "entry ({},{}) at t = {:.3}: standard error {:.2e} exceeds 20% of \
                         |estimate| {:.2e}",
                        i + 1,
                        j + 1,
                        k as f64 * opts.delta,
                        se,
                        mean.abs()
                    ));
                }
            }
        }
    }

    let series = KernelSeries::new(opts.delta, mats)?.with_ses(ses)?;
    let crn = if opts.crn_check {
        Some(crn_cross_check(
            spec,
            alpha,
            &stationary,
            &series,
            opts,
            path_seed,
            k_grid,
            record_every,
            steps,
        )?)
    } else {
        None
    };
    Ok(ThetaEstimate {
        series,
        warnings,
        crn,
    })
}

/// Re-estimate entry (1,1) at three grid times with common-random-number
/// central differences `(E_{y+h} - E_{y-h}) / 2h` and compare pathwise vs
/// CRN sample by sample.
#[allow(clippy::too_many_arguments)]
fn crn_cross_check(
    spec: &DynamicsSpec,
    alpha: &dyn VectorField,
    stationary: &crate::sde::StationarySample,
    series: &KernelSeries,
    opts: &ThetaOptions,
    path_seed: u64,
    k_grid: usize,
    record_every: usize,
    steps: usize,
) -> Result<CrnCheck, KernelError> {
    let d = spec.dim();
    let h = opts.crn_bump;
    let sub = opts.crn_subsample.min(opts.samples).max(2);
    let checks = [k_grid / 4, k_grid / 2, k_grid]
        .into_iter()
        .filter(|&k| k > 0)
        .collect::<Vec<_>>();
    let term0 = &spec.interaction()[0];

    struct CAcc {
        pw: Vec<f64>,
        crn: Vec<f64>,
        diff_sq: Vec<f64>,
        err: Option<SdeError>,
    }
    let nchecks = checks.len();
    let acc = exec::chunked_accumulate(
        sub,
        32,
        || CAcc {
            pw: vec![0.0; nchecks],
            crn: vec![0.0; nchecks],
            diff_sq: vec![0.0; nchecks],
            err: None,
        },
        |range, acc| {
            let mut grad = [0.0; MAX_DIM];
            let mut w0 = [0.0; MAX_DIM];
            for sample in range {
                if acc.err.is_some() {
                    return;
                }
                let y0 = stationary.point(sample);
                if let Err(e) = term0.w.eval_vector(y0, &mut w0[..d]) {
                    acc.err = Some(e.into());
                    return;
                }

                // Pathwise values at the checked grid indices.
                let mut pw_vals = vec![0.0; nchecks];
                let res = run_jacobian_path(
                    spec,
                    alpha,
                    y0,
                    opts.dt,
                    steps,
                    record_every,
                    path_seed,
                    sample as u64,
                    |k, _t, y, jac| {
                        if let Some(pos) = checks.iter().position(|&c| c == k) {
                            if term0.f.grad(y, &mut grad[..d]).is_ok() {
                                let mut val = 0.0;
                                for (col, wv) in w0[..d].iter().enumerate() {
                                    let mut jt_g = 0.0;
                                    for row in 0..d {
                                        jt_g += jac[row * d + col] * grad[row];
                                    }
                                    val += jt_g * wv;
                                }
                                pw_vals[pos] = val;
                            }
                        }
                    },
                );
                if let Err(e) = res {
                    acc.err = Some(e);
                    return;
                }

                // CRN differences along each coordinate, same noise stream.
                let mut crn_vals = vec![0.0; nchecks];
                for axis in 0..d {
                    for (sign_idx, sign) in [1.0f64, -1.0].into_iter().enumerate() {
                        let mut y_bumped = [0.0; MAX_DIM];
                        y_bumped[..d].copy_from_slice(y0);
                        y_bumped[axis] += sign * h;
                        let res = run_jacobian_path(
                            spec,
                            alpha,
                            &y_bumped[..d],
                            opts.dt,
                            steps,
                            record_every,
                            path_seed,
                            sample as u64,
                            |k, _t, y, _jac| {
                                if let Some(pos) = checks.iter().position(|&c| c == k) {
                                    if let Ok(fv) = term0.f.eval_scalar(y) {
                                        let signed = if sign_idx == 0 { fv } else { -fv };
                                        crn_vals[pos] += signed / (2.0 * h) * w0[axis];
                                    }
                                }
                            },
                        );
                        if let Err(e) = res {
                            acc.err = Some(e);
                            return;
                        }
                    }
                }

                for pos in 0..nchecks {
                    acc.pw[pos] += pw_vals[pos];
                    acc.crn[pos] += crn_vals[pos];
                    let diff = pw_vals[pos] - crn_vals[pos];
                    acc.diff_sq[pos] += diff * diff;
                }
            }
        },
        |acc, part| {
            if acc.err.is_none() {
                if let Some(e) = part.err {
                    acc.err = Some(e);
                }
            }
            for (a, b) in acc.pw.iter_mut().zip(&part.pw) {
                *a += b;
            }
            for (a, b) in acc.crn.iter_mut().zip(&part.crn) {
                *a += b;
            }
            for (a, b) in acc.diff_sq.iter_mut().zip(&part.diff_sq) {
                *a += b;
            }
        },
    );
    if let Some(e) = acc.err {
        return Err(e.into());
    }

    let n = sub as f64;
    let mut times = Vec::new();
    let mut pathwise = Vec::new();
    let mut crn = Vec::new();
    let mut diff_se = Vec::new();
    let mut agrees = true;
    for (pos, &k) in checks.iter().enumerate() {
        let pw_mean = acc.pw[pos] / n;
        let crn_mean = acc.crn[pos] / n;
        let diff_mean = pw_mean - crn_mean;
        let var = (acc.diff_sq[pos] / n - diff_mean * diff_mean).max(0.0);
        let se = (var / n).sqrt();
        times.push(k as f64 * series.step());
        pathwise.push(pw_mean);
        crn.push(crn_mean);
        diff_se.push(se);
        // Allow the O(h²) truncation bias of the central difference.
        if diff_mean.abs() > 3.0 * se + 10.0 * h * h {
            agrees = false;
        }
    }
    Ok(CrnCheck {
        times,
        pathwise,
        crn,
        diff_se,
        agrees,
    })
}
