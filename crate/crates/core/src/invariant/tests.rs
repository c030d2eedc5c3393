use super::*;
use crate::sde::tests::{cos_example_spec, cos_fixed_point_oracle};
use crate::sde::{simulate_mckean_vlasov, SimOptions, ZeroField};
use nalgebra::DMatrix;

fn lean_opts(samples: usize, seed: u64) -> FixedPointOptions {
    let mut sampler = crate::sde::SamplerOptions::default();
    sampler.dt = 1e-2;
    FixedPointOptions {
        damping: 0.5,
        tol: 2e-3,
        max_iter: 60,
        mc_samples: samples,
        max_budget_doublings: 3,
        sampler,
        reburn: 3.0,
        seed,
    }
}

/// All roots of sqrt(e)·α = J cos(α) by dense sign-change enumeration.
fn cos_roots_oracle(j: f64) -> Vec<f64> {
    let bound = j.abs() / 1f64.exp().sqrt() + 1.0;
    let g = |a: f64| 1f64.exp().sqrt() * a - j * a.cos();
    let n = 20_000;
    let mut roots = Vec::new();
    let mut prev = (-bound, g(-bound));
    for k in 1..=n {
        let a = -bound + 2.0 * bound * k as f64 / n as f64;
        let ga = g(a);
        if prev.1 * ga <= 0.0 && prev.1 != 0.0 {
            let (mut lo, mut hi) = (prev.0, a);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if g(lo) * g(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev = (a, ga);
    }
    roots
}

#[test]
fn cos_example_fixed_point_matches_bisection_oracle() {
    let j = 1.0;
    let spec = cos_example_spec(j);
    let report = solve_fixed_point(&spec, &[0.5], &lean_opts(20_000, 3)).unwrap();
    assert!(report.converged, "{report:?}");
    let alpha_star = cos_fixed_point_oracle(j, 0.0, 1.0);
    // The drift constant is J times the coefficient.
    let drift = j * report.coeffs[0];
    assert!(
        (drift - alpha_star).abs() < 0.01,
        "drift {drift} vs oracle {alpha_star}"
    );
    assert!(report.residual_norm <= 2e-3);
}

#[test]
fn empty_interaction_converges_immediately() {
    let drift = crate::expr::FieldHandle::parse_vector(&["-x0"], 1).unwrap();
    let spec =
        crate::sde::DynamicsSpec::new(drift, vec![], DMatrix::from_element(1, 1, 2f64.sqrt()))
            .unwrap();
    let report = solve_fixed_point(&spec, &[], &lean_opts(100, 1)).unwrap();
    assert!(report.converged);
    assert_eq!(report.iterations, 1);
    assert!(report.coeffs.is_empty());
}

#[test]
fn zero_interaction_term_fixes_zero() {
    let drift = crate::expr::FieldHandle::parse_vector(&["-x0"], 1).unwrap();
    let term = crate::sde::InteractionTerm {
        f: crate::expr::FieldHandle::parse_scalar("0", 1).unwrap(),
        w: crate::expr::FieldHandle::parse_vector(&["1"], 1).unwrap(),
    };
    let spec = crate::sde::DynamicsSpec::new(
        drift,
        vec![term],
        DMatrix::from_element(1, 1, 2f64.sqrt()),
    )
    .unwrap();
    let report = solve_fixed_point(&spec, &[0.0], &lean_opts(500, 2)).unwrap();
    assert!(report.converged);
    assert_eq!(report.iterations, 1);
    assert_eq!(report.coeffs[0], 0.0);
}

#[test]
fn large_coupling_has_multiple_fixed_points() {
    // J = 10: three roots of sqrt(e) α = J cos α; the middle one repels the
    // damped iteration and only the enumeration finds it.
    let j = 10.0;
    let spec = cos_example_spec(j);
    let opts = lean_opts(6000, 7);
    let expected = cos_roots_oracle(j);
    assert_eq!(expected.len(), 3);

    let iterated = multi_start_fixed_points(&spec, &[0.0], 8, &opts).unwrap();
    assert!(
        iterated.len() >= 2,
        "damped iteration found {} attracting points",
        iterated.len()
    );

    let enumerated = enumerate_fixed_points_1d(&spec, &opts, 33).unwrap();
    assert_eq!(
        enumerated.len(),
        expected.len(),
        "enumerated {enumerated:?} vs oracle {expected:?}"
    );
    let mut drifts: Vec<f64> = enumerated.iter().map(|r| j * r.coeffs[0]).collect();
    drifts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut oracle = expected.clone();
    oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (got, want) in drifts.iter().zip(&oracle) {
        assert!((got - want).abs() < 0.08, "{got} vs {want}");
    }
}

#[test]
fn solver_commutes_with_term_reordering() {
    // Two-term interaction; swapping the terms together with a0 swaps a*.
    let drift = crate::expr::FieldHandle::parse_vector(&["-x0"], 1).unwrap();
    let t1 = crate::sde::InteractionTerm {
        f: crate::expr::FieldHandle::parse_scalar("cos(x0)", 1).unwrap(),
        w: crate::expr::FieldHandle::parse_vector(&["0.8"], 1).unwrap(),
    };
    let t2 = crate::sde::InteractionTerm {
        f: crate::expr::FieldHandle::parse_scalar("sin(x0)", 1).unwrap(),
        w: crate::expr::FieldHandle::parse_vector(&["0.4"], 1).unwrap(),
    };
    let sigma = DMatrix::from_element(1, 1, 2f64.sqrt());
    let spec_a = crate::sde::DynamicsSpec::new(
        drift.clone(),
        vec![t1.clone(), t2.clone()],
        sigma.clone(),
    )
    .unwrap();
    let spec_b = crate::sde::DynamicsSpec::new(drift, vec![t2, t1], sigma).unwrap();
    let opts = lean_opts(20_000, 11);
    let ra = solve_fixed_point(&spec_a, &[0.2, 0.1], &opts).unwrap();
    let rb = solve_fixed_point(&spec_b, &[0.1, 0.2], &opts).unwrap();
    assert!(ra.converged && rb.converged);
    let tol = 4.0 * (ra.mc_se[0] + ra.mc_se[1]) + 4e-3;
    assert!(
        (ra.coeffs[0] - rb.coeffs[1]).abs() < tol,
        "{:?} vs {:?}",
        ra.coeffs,
        rb.coeffs
    );
    assert!((ra.coeffs[1] - rb.coeffs[0]).abs() < tol);
}

#[test]
fn mckean_vlasov_confirms_fixed_point() {
    // Particles started from ν^{a*} keep the empirical interaction averages
    // at a* (within Monte Carlo error) over t ∈ [0, 10].
    let j = 1.0;
    let spec = cos_example_spec(j);
    let opts = lean_opts(20_000, 13);
    let report = solve_fixed_point(&spec, &[0.5], &opts).unwrap();
    assert!(report.converged);
    let a_star = report.coeffs[0];

    let n = 8000;
    let profile = AlphaProfile::new(report.coeffs.clone());
    let stationary = crate::sde::sample_invariant(
        &spec,
        &profile.as_field(&spec),
        n,
        &opts.sampler,
        None,
    )
    .unwrap();
    let init = crate::sde::ParticleEnsemble::from_positions(
        1,
        stationary.points,
        crate::sde::Space::Euclidean,
    );
    let sim = SimOptions::new(1e-2, 10.0, 17).with_stride(100);
    let traj = simulate_mckean_vlasov(&spec, &init, &sim).unwrap();
    // Per-frame MC standard error of (1/N) Σ cos.
    for frame in &traj.frames {
        let xs = frame.coordinate(0);
        let mean = xs.iter().map(|x| x.cos()).sum::<f64>() / n as f64;
        let var = xs
            .iter()
            .map(|x| (x.cos() - mean) * (x.cos() - mean))
            .sum::<f64>()
            / n as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - a_star).abs() <= 3.0 * se + 3.0 * report.mc_se[0],
            "t = {}: mean {mean} vs a* {a_star} (se {se})",
            frame.t
        );
    }
}

#[test]
fn green_kubo_zero_interaction() {
    let drift = crate::expr::FieldHandle::parse_vector(&["-x0"], 1).unwrap();
    let spec =
        crate::sde::DynamicsSpec::new(drift, vec![], DMatrix::from_element(1, 1, 2f64.sqrt()))
            .unwrap();
    let rep = green_kubo_derivative(
        &spec,
        &AlphaProfile::zeros(0),
        &DMatrix::zeros(0, 0),
        &DMatrix::zeros(0, 0),
        &GreenKuboOptions::default(),
    )
    .unwrap();
    assert!(rep.agrees);
}

#[test]
fn green_kubo_cos_example_validates() {
    // DΨ = K̂(0) = -(J/√e) sin(α*), validated by coupled finite differences.
    let j = 1.0;
    let spec = cos_example_spec(j);
    let alpha_star = cos_fixed_point_oracle(j, 0.0, 1.0);
    let a_star = AlphaProfile::new(vec![alpha_star / j]);
    let c = -(j / 1f64.exp().sqrt()) * alpha_star.sin();
    let theta0 = DMatrix::from_element(1, 1, c);
    let theta0_se = DMatrix::from_element(1, 1, 2e-3);
    let mut opts = GreenKuboOptions::default();
    opts.samples = 40_000;
    opts.sampler.dt = 5e-3;
    opts.seed = 21;
    let rep = green_kubo_derivative(&spec, &a_star, &theta0, &theta0_se, &opts).unwrap();
    assert!(
        rep.agrees,
        "fd {} vs transform {c} ({} sigmas)",
        rep.fd[(0, 0)],
        rep.max_sigmas
    );
}

#[test]
fn green_kubo_flags_wrong_derivative() {
    let j = 1.0;
    let spec = cos_example_spec(j);
    let alpha_star = cos_fixed_point_oracle(j, 0.0, 1.0);
    let a_star = AlphaProfile::new(vec![alpha_star / j]);
    // Deliberately wrong transform-at-zero.
    let theta0 = DMatrix::from_element(1, 1, 0.5);
    let theta0_se = DMatrix::from_element(1, 1, 1e-3);
    let mut opts = GreenKuboOptions::default();
    opts.samples = 20_000;
    opts.sampler.dt = 5e-3;
    match green_kubo_derivative(&spec, &a_star, &theta0, &theta0_se, &opts) {
        Err(SolverError::GreenKuboMismatch { max_sigmas, .. }) => {
            assert!(max_sigmas > 5.0)
        }
        other => panic!("expected mismatch, got {other:?}"),
    }
}

// --- dissipativity ----------------------------------------------------------

#[test]
fn linear_contraction_is_dissipative_everywhere() {
    let drift = crate::expr::FieldHandle::parse_vector(&["-x0"], 1).unwrap();
    let spec =
        crate::sde::DynamicsSpec::new(drift, vec![], DMatrix::from_element(1, 1, 1.0)).unwrap();
    let rep =
        check_dissipativity(&spec, &ZeroField(1), &DissipativityOptions::default()).unwrap();
    assert_eq!(rep.r_hat, 0.0);
    assert!((rep.beta_hat - 1.0).abs() < 1e-9, "beta {}", rep.beta_hat);
    assert!(rep.dissipative_tail);
}

#[test]
fn expanding_drift_violates_at_all_radii() {
    let drift = crate::expr::FieldHandle::parse_vector(&["x0"], 1).unwrap();
    let spec = crate::sde::DynamicsSpec::new(drift, vec![], DMatrix::zeros(1, 1)).unwrap();
    let rep =
        check_dissipativity(&spec, &ZeroField(1), &DissipativityOptions::default()).unwrap();
    assert!(!rep.dissipative_tail);
    assert!(rep.table.iter().all(|&(_, q)| q > 0.0));
}

#[test]
fn double_well_dissipative_beyond_finite_radius() {
    // b = x - x³: q(r) = 1 - min(x² + x x' + x'²) = 1 - r²/4, violated for
    // r < 2 (dense-grid oracle) and contracting beyond.
    let drift = crate::expr::FieldHandle::parse_vector(&["x0 - x0^3"], 1).unwrap();
    let spec = crate::sde::DynamicsSpec::new(drift, vec![], DMatrix::zeros(1, 1)).unwrap();
    let rep =
        check_dissipativity(&spec, &ZeroField(1), &DissipativityOptions::default()).unwrap();
    assert!(rep.dissipative_tail);
    assert!(
        rep.r_hat > 1.5 && rep.r_hat < 2.4,
        "r_hat {} (oracle: violations up to r = 2)",
        rep.r_hat
    );

    // Dense-grid oracle at a mid-table radius.
    let r = 1.0;
    let mut oracle = f64::NEG_INFINITY;
    let mut x: f64 = -4.0;
    while x <= 4.0 {
        let xp = x - r;
        let q = (x - xp) * ((x - x.powi(3)) - (xp - xp.powi(3))) / (r * r);
        oracle = oracle.max(q);
        x += 1e-3;
    }
    let (_, worst) = rep
        .table
        .iter()
        .min_by(|a, b| {
            ((a.0 - r).abs())
                .partial_cmp(&(b.0 - r).abs())
                .unwrap()
        })
        .unwrap();
    assert!(
        (worst - oracle).abs() < 0.05,
        "MC worst {worst} vs oracle {oracle}"
    );
}

// --- scan --------------------------------------------------------------------

#[test]
fn scan_of_zero_interaction_family_is_all_stable() {
    let family = |_p: f64| {
        let drift = crate::expr::FieldHandle::parse_vector(&["-x0"], 1).unwrap();
        let term = crate::sde::InteractionTerm {
            f: crate::expr::FieldHandle::parse_scalar("0", 1).unwrap(),
            w: crate::expr::FieldHandle::parse_vector(&["1"], 1).unwrap(),
        };
        crate::sde::DynamicsSpec::new(
            drift,
            vec![term],
            DMatrix::from_element(1, 1, 2f64.sqrt()),
        )
    };
    let mut opts = ScanOptions::default();
    opts.solver = lean_opts(2000, 5);
    opts.kernel.samples = 2000;
    opts.enumerate_p1 = false;
    let points = bifurcation_scan(family, &[-1.0, 0.0, 1.0], &opts).unwrap();
    for pt in &points {
        assert_eq!(pt.branches.len(), 1);
        let b = &pt.branches[0];
        assert_eq!(b.class, BranchClass::Stable);
        assert!((b.det_at_zero - 1.0).abs() < 1e-9, "det {}", b.det_at_zero);
    }
}

#[test]
fn scan_classifies_cos_example_branch() {
    let family = |j: f64| Ok(cos_example_spec(j));
    let mut opts = ScanOptions::default();
    opts.solver = lean_opts(4000, 9);
    opts.solver.tol = 5e-3;
    opts.kernel.samples = 8000;
    opts.kernel.dt = 5e-3;
    let points = bifurcation_scan(family, &[1.0], &opts).unwrap();
    assert_eq!(points.len(), 1);
    let branch = &points[0].branches[0];
    assert_eq!(branch.class, BranchClass::Stable, "{branch:?}");
    // det(I - K̂(0)) = 1 + α* tan(α*) on this branch.
    let alpha_star = cos_fixed_point_oracle(1.0, 0.0, 1.0);
    let expect = 1.0 + alpha_star * alpha_star.tan();
    assert!(
        (branch.det_at_zero - expect).abs() < 0.05,
        "det {} vs {expect}",
        branch.det_at_zero
    );
}
