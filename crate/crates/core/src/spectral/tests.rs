use super::laplace::fredholm_det;
use super::*;
use crate::kernel::tests::{scalar_exp_kernel, two_by_two_mixed_kernel};
use crate::kernel::KernelSeries;
use crate::rng::ParticleRng;
use crate::sde::tests::cos_fixed_point_oracle;
use nalgebra::DMatrix;
use num_complex::Complex64;

fn laplace_default(theta: &KernelSeries) -> LaplaceKernel {
    laplace(theta, &LaplaceOptions::default()).unwrap()
}

#[test]
fn scalar_transform_matches_closed_form() {
    // K = a e^{-bt}: K̂(z) = a/(z+b).
    let (a, b) = (0.7, 1.0);
    let theta = scalar_exp_kernel(a, b, 1e-3, 20.0);
    let lk = laplace_default(&theta);
    for z in [
        Complex64::new(0.0, 0.0),
        Complex64::new(0.5, 1.0),
        Complex64::new(-0.4, -2.0),
    ] {
        let got = lk.eval(z).unwrap()[(0, 0)];
        let expect = a / (z + b);
        assert!(
            (got - expect).norm() / expect.norm() < 1e-4,
            "z = {z}: {got} vs {expect}"
        );
    }
    assert!((lk.kappa_tail() - b).abs() < 1e-6);
}

#[test]
fn zero_kernel_transforms_to_zero() {
    let theta = KernelSeries::from_fn(1e-2, 500, 1, |_| DMatrix::zeros(1, 1)).unwrap();
    let lk = laplace_default(&theta);
    assert_eq!(lk.eval(Complex64::new(0.3, 2.0)).unwrap()[(0, 0)], Complex64::new(0.0, 0.0));
    assert!(lk.kappa_tail().is_infinite());
    // det(I - 0) = 1 everywhere.
    let det = fredholm_det(&lk, Complex64::new(-5.0, 3.0)).unwrap();
    assert_eq!(det, Complex64::new(1.0, 0.0));
}

#[test]
fn cos_example_transform_and_root() {
    let j = 1.0;
    let alpha = cos_fixed_point_oracle(j, 0.0, 1.0);
    let c = -(j / 1f64.exp().sqrt()) * alpha.sin();
    let theta = scalar_exp_kernel(c, 1.0, 1e-3, 20.0);
    let lk = laplace_default(&theta);
    // K̂(z) = c/(z+1) on the convergence half-plane and its continuation.
    let z = Complex64::new(0.25, 0.0);
    let got = lk.eval(z).unwrap()[(0, 0)];
    assert!((got - c / (z + 1.0)).norm() < 1e-6);

    let window = SearchWindow::new(-1.6, 1.0, 5.0);
    let report = find_roots(&lk, &window, &FindRootsOptions::default()).unwrap();
    assert_eq!(report.roots.len(), 1);
    let root = &report.roots[0];
    let expect = c - 1.0;
    assert!(
        (root.z - Complex64::new(expect, 0.0)).norm() <= 1e-3,
        "root {} vs {expect}",
        root.z
    );
    assert_eq!(root.multiplicity, 1);
    assert_eq!(root.class, RootClass::Static);
    assert!(root.residual <= 1e-8, "residual {}", root.residual);
    assert!((report.lambda_prime.unwrap() - (1.0 - c)).abs() <= 1e-3);
    assert!(report.stats.consistent);
    // The root lies left of the tail pole at -1: the excluded strip was used.
    assert!(!report.excluded_strips.is_empty());
    assert!(expect < -1.0 && report.verdict().starts_with("stable"));
}

#[test]
fn diagonal_two_by_two_determinant_factorizes() {
    let (a1, b1, a2, b2) = (0.5, 1.0, 0.8, 2.0);
    let theta = KernelSeries::from_fn(1e-3, 20_000, 2, |t| {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            a1 * (-b1 * t).exp(),
            a2 * (-b2 * t).exp(),
        ]))
    })
    .unwrap();
    let lk = laplace_default(&theta);
    for z in [Complex64::new(0.2, 0.7), Complex64::new(1.0, -1.0)] {
        let det = fredholm_det(&lk, z).unwrap();
        let expect = (Complex64::new(1.0, 0.0) - a1 / (z + b1))
            * (Complex64::new(1.0, 0.0) - a2 / (z + b2));
        assert!((det - expect).norm() < 1e-4, "z = {z}: {det} vs {expect}");
    }
}

#[test]
fn unstable_scalar_kernel_root_is_positive() {
    // a/(z+b) = 1 at z = a - b > 0 when a > b.
    let (a, b) = (2.0, 1.0);
    let theta = scalar_exp_kernel(a, b, 1e-3, 15.0);
    let lk = laplace_default(&theta);
    let report = find_roots(
        &lk,
        &SearchWindow::new(-0.5, 3.0, 5.0),
        &FindRootsOptions::default(),
    )
    .unwrap();
    assert_eq!(report.roots.len(), 1);
    assert!((report.roots[0].z - Complex64::new(1.0, 0.0)).norm() < 1e-6);
    assert!(report.verdict().starts_with("unstable"));
    assert!(!report.stable_in_window());
}

#[test]
fn conjugate_pair_is_found_and_classified_hopf() {
    // Rotation kernel a e^{-bt} R(ωt): roots at a - b ± iω.
    let (a, b, om) = (0.6, 1.2, 2.0);
    let theta = KernelSeries::from_fn(1e-3, 15_000, 2, |t| {
        let e = a * (-b * t).exp();
        DMatrix::from_row_slice(
            2,
            2,
            &[
                e * (om * t).cos(),
                -e * (om * t).sin(),
                e * (om * t).sin(),
                e * (om * t).cos(),
            ],
        )
    })
    .unwrap();
    let lk = laplace_default(&theta);
    let report = find_roots(
        &lk,
        &SearchWindow::new(-1.0, 1.0, 6.0),
        &FindRootsOptions::default(),
    )
    .unwrap();
    assert_eq!(report.roots.len(), 2, "roots: {:?}", report.roots);
    for root in &report.roots {
        assert!((root.z.re - (a - b)).abs() < 1e-3, "{:?}", root.z);
        assert!((root.z.im.abs() - om).abs() < 1e-3);
        assert_eq!(root.class, RootClass::Hopf);
    }
    // Conjugate symmetry of the pair.
    assert!((report.roots[0].z.im + report.roots[1].z.im).abs() < 1e-6);
    assert!((report.lambda_prime.unwrap() - (b - a)).abs() < 1e-3);
}

#[test]
fn empty_window_reports_no_roots() {
    let theta = scalar_exp_kernel(0.3, 1.0, 1e-3, 15.0);
    let lk = laplace_default(&theta);
    // Root at -0.7: search strictly to the right of it.
    let report = find_roots(
        &lk,
        &SearchWindow::new(-0.3, 2.0, 5.0),
        &FindRootsOptions::default(),
    )
    .unwrap();
    assert!(report.roots.is_empty());
    assert!(report.lambda_prime.is_none());
    assert!(report.verdict().contains("no root in window"));
}

#[test]
fn weak_interaction_certificate() {
    let half = scalar_exp_kernel(0.5, 1.0, 1e-3, 15.0);
    let rep = weak_interaction_bound(&half);
    assert!((rep.integral - 0.5).abs() < 1e-3);
    assert!(rep.certified);

    let two = scalar_exp_kernel(2.0, 1.0, 1e-3, 15.0);
    let rep = weak_interaction_bound(&two);
    assert!((rep.integral - 2.0).abs() < 1e-2);
    assert!(!rep.certified);

    let zero = KernelSeries::from_fn(1e-2, 100, 1, |_| DMatrix::zeros(1, 1)).unwrap();
    assert!(weak_interaction_bound(&zero).certified);
}

#[test]
fn growing_kernel_is_rejected() {
    let theta = KernelSeries::from_fn(1e-2, 500, 1, |t| {
        DMatrix::from_element(1, 1, 0.1 * (0.5 * t).exp())
    })
    .unwrap();
    match laplace(&theta, &LaplaceOptions::default()) {
        Err(SpectralError::NonDecayingTail { .. }) => {}
        other => panic!("expected non-decaying tail error, got {other:?}"),
    }
}

#[test]
fn pole_proximity_is_refused() {
    let theta = scalar_exp_kernel(0.5, 1.0, 1e-3, 15.0);
    let lk = laplace_default(&theta);
    match lk.eval(Complex64::new(-1.001, 0.0)) {
        Err(SpectralError::NearPole { .. }) => {}
        other => panic!("expected near-pole refusal, got {other:?}"),
    }
}

#[test]
fn amplification_cap_is_enforced() {
    let theta = scalar_exp_kernel(0.5, 1.0, 1e-3, 15.0);
    let lk = laplace_default(&theta);
    match lk.eval(Complex64::new(-3.0, 0.0)) {
        Err(SpectralError::Amplification { .. }) => {}
        other => panic!("expected amplification refusal, got {other:?}"),
    }
}

#[test]
fn mixed_kernel_rates_match_roots() {
    // Eigen-rates 1 - 0.5 and 2 - 0.3: rightmost root at -0.5.
    let theta = two_by_two_mixed_kernel(1e-3, 18.0);
    let lk = laplace_default(&theta);
    let report = find_roots(
        &lk,
        &SearchWindow::new(-0.85, 1.0, 5.0),
        &FindRootsOptions::default(),
    )
    .unwrap();
    let lam = report.lambda_prime.unwrap();
    assert!((lam - 0.5).abs() < 2e-3, "λ' = {lam}");
}

// ---- σ ≡ 0 Jacobian criterion ---------------------------------------------

fn deterministic_spec_1d(drift: &str, f: &str, w: &str) -> crate::sde::DynamicsSpec {
    let b = crate::expr::FieldHandle::parse_vector(&[drift], 1).unwrap();
    let term = crate::sde::InteractionTerm {
        f: crate::expr::FieldHandle::parse_scalar(f, 1).unwrap(),
        w: crate::expr::FieldHandle::parse_vector(&[w], 1).unwrap(),
    };
    crate::sde::DynamicsSpec::new(b, vec![term], DMatrix::zeros(1, 1)).unwrap()
}

#[test]
fn jacobian_criterion_linear_cases() {
    let b = crate::expr::FieldHandle::parse_vector(&["-x0"], 1).unwrap();
    let spec = crate::sde::DynamicsSpec::new(b, vec![], DMatrix::zeros(1, 1)).unwrap();
    let rep = jacobian_criterion(&spec, &[0.0], 1e-9).unwrap();
    assert!((rep.eigenvalues[0].re + 1.0).abs() < 1e-12);
    assert!(rep.stable);

    let b = crate::expr::FieldHandle::parse_vector(&["x0"], 1).unwrap();
    let spec = crate::sde::DynamicsSpec::new(b, vec![], DMatrix::zeros(1, 1)).unwrap();
    let rep = jacobian_criterion(&spec, &[0.0], 1e-9).unwrap();
    assert!((rep.eigenvalues[0].re - 1.0).abs() < 1e-12);
    assert!(!rep.stable);
}

#[test]
fn jacobian_criterion_rejects_non_equilibrium() {
    let spec = deterministic_spec_1d("-x0", "sin(x0)", "1");
    match jacobian_criterion(&spec, &[3.0], 1e-9) {
        Err(SpectralError::NotEquilibrium { .. }) => {}
        other => panic!("expected non-equilibrium error, got {other:?}"),
    }
}

#[test]
fn jacobian_criterion_includes_interaction_derivatives() {
    // V(x, y) = -2x + sin(y): V(0,0) = 0; ∇_x V = -2, ∇_y V = 1: sum -1.
    let spec = deterministic_spec_1d("-2*x0", "sin(x0)", "1");
    let rep = jacobian_criterion(&spec, &[0.0], 1e-9).unwrap();
    assert!((rep.matrix[(0, 0)] + 1.0).abs() < 1e-12);
    assert!(rep.stable);
}

/// Random 2×2 linear system with `∇_x V = -c I` and `∇_y V = G` random:
/// assembled kernel `A_t = G e^{-ct}`, dual route via eigenvalues of `G - cI`.
pub(crate) fn random_linear_system(seed: u64) -> (f64, DMatrix<f64>) {
    let mut rng = ParticleRng::new(seed, 0);
    let c = 1.5 + 1.5 * rng.uniform();
    loop {
        let g = DMatrix::from_fn(2, 2, |_, _| 2.0 * rng.uniform() - 1.0) * 1.2;
        let shifted = &g - DMatrix::identity(2, 2) * c;
        let eigs = shifted.complex_eigenvalues();
        let ok = eigs.iter().all(|e| {
            e.re > -0.85 * c + 0.1 && e.re < 0.9 && (e.re + c).hypot(e.im) > 0.15
        }) && {
            let e0 = eigs[0];
            let e1 = eigs[1];
            (e0 - e1).norm() > 5e-2
        };
        if ok {
            return (c, g);
        }
    }
}

#[test]
fn sigma_zero_root_search_matches_eigenvalues() {
    for seed in 0..3u64 {
        let (c, g) = random_linear_system(seed + 10);
        let theta = KernelSeries::from_fn(2e-4, (2.0f64 / 2e-4) as usize, 2, |t| {
            &g * (-c * t).exp()
        })
        .unwrap();
        let lk = laplace_default(&theta);
        let window = SearchWindow::new(-0.85 * c, 1.5, 4.0);
        let report = find_roots(&lk, &window, &FindRootsOptions::default()).unwrap();

        let shifted = &g - DMatrix::identity(2, 2) * c;
        let mut eigs: Vec<Complex64> = shifted
            .complex_eigenvalues()
            .iter()
            .cloned()
            .filter(|e| e.re > -0.85 * c && e.re < 1.5 && e.im.abs() < 4.0)
            .collect();
        eigs.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
        let mut found: Vec<Complex64> = report.roots.iter().map(|r| r.z).collect();
        found.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
        assert_eq!(found.len(), eigs.len(), "seed {seed}: {found:?} vs {eigs:?}");
        for (f, e) in found.iter().zip(&eigs) {
            assert!(
                (f - e).norm() < 1e-6,
                "seed {seed}: root {f} vs eigenvalue {e}"
            );
        }
    }
}

#[test]
fn paley_wiener_rates_agree_within_ten_percent() {
    // Fitted resolvent decay vs λ' from roots, on the cos example and two
    // synthetic 2×2 kernels.
    use crate::kernel::{fit_decay, resolvent};
    let alpha = cos_fixed_point_oracle(1.0, 0.0, 1.0);
    let c = -(1.0 / 1f64.exp().sqrt()) * alpha.sin();
    let cases: Vec<(KernelSeries, SearchWindow)> = vec![
        (
            scalar_exp_kernel(c, 1.0, 1e-3, 12.0),
            SearchWindow::new(-1.6, 1.0, 5.0),
        ),
        (
            two_by_two_mixed_kernel(1e-3, 12.0),
            SearchWindow::new(-0.85, 1.0, 5.0),
        ),
        (
            KernelSeries::from_fn(1e-3, 12_000, 2, |t| {
                let e = 0.6 * (-1.5f64 * t).exp();
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        e * (1.0 * t).cos(),
                        -e * (1.0 * t).sin(),
                        e * (1.0 * t).sin(),
                        e * (1.0 * t).cos(),
                    ],
                )
            })
            .unwrap(),
            SearchWindow::new(-1.3, 1.0, 4.0),
        ),
    ];
    for (i, (theta, window)) in cases.iter().enumerate() {
        let lk = laplace_default(theta);
        let report = find_roots(&lk, window, &FindRootsOptions::default()).unwrap();
        let lambda = report.lambda_prime.expect("a root in the window");
        let omega = resolvent(theta).unwrap();
        let fit = fit_decay(&omega, 0.5).unwrap();
        let ratio = fit.rate / lambda;
        assert!(
            (0.9..=1.1).contains(&ratio),
            "case {i}: fitted {} vs λ' {lambda} (ratio {ratio})",
            fit.rate
        );
    }
}
