use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use robust_sos::data::{empirical_moments, mean_of};
use robust_sos::estimator::*;
use robust_sos::pe::{check_pe, DEFAULT_PSD_CAP};
use robust_sos::poly::Poly;
use robust_sos::sdp::SolveStatus;

fn gaussian(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

#[test]
fn mean_handle_is_the_average_of_the_points() {
    let y = gaussian(1, 5, 2);
    let h = build_program(Variant::Canonical, &y, 0.2, 4, 1.0).unwrap();
    for a in 0..2 {
        let mut p = Poly::zero();
        for xi in &h.x_prime {
            p.add_scaled(&xi[a], 0.2);
        }
        assert!(p.max_coeff_diff(&h.mu_prime[a]) < 1e-12);
    }
}

#[test]
fn rounding_polynomials_agree_on_centered_points() {
    let y = gaussian(2, 6, 2);
    let h = build_program(Variant::Canonical, &y, 0.0, 4, 1.0).unwrap();
    let x = gaussian(3, 6, 2);
    let point = h.point(&x, &[1.0; 6]);
    for a in 0..2 {
        assert!((h.mu_prime[a].eval(&point).unwrap() - h.mu_round[a].eval(&point).unwrap()).abs() < 1e-12);
        for b in 0..2 {
            let s = h.sigma_prime[a][b].eval(&point).unwrap();
            assert!((s - h.sigma_round[a][b].eval(&point).unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn intended_solution_is_feasible() {
    for (variant, degree) in [(Variant::Canonical, 4), (Variant::Frobenius, 4), (Variant::Canonical, 6)] {
        let clean = gaussian(4, 8, 1);
        let mut y = clean.clone();
        y[0][0] = 25.0;
        let h = build_program(variant, &y, 0.125, degree, default_slack(0.125, 8, 1)).unwrap();
        let mut w = [1.0; 8];
        w[0] = 0.0;
        let pe = h.dirac(&h.point(&clean, &w), DEFAULT_PSD_CAP).unwrap();
        let report = check_pe(&pe, &h.program).unwrap();
        assert!(report.passed, "{variant:?} k={degree}: {report:?}");
        let r = round_estimates(&pe, &h).unwrap();
        let m = empirical_moments(&clean).unwrap();
        assert!((r.mu_hat[0] - m.mu0[0]).abs() < 1e-12);
        assert!((r.sigma_hat.get(0, 0) - m.sigma0.get(0, 0)).abs() < 1e-12);
    }
}

#[test]
fn outlier_breaks_the_dirac_at_the_observed_data() {
    let mut y = gaussian(5, 8, 1);
    y[0][0] = 25.0;
    // one point carries almost all the fourth moment: E(ℓ² − σ)²/σ² ≈ n − 2
    let h = build_program(Variant::Canonical, &y, 0.0, 4, 0.5).unwrap();
    let pe = h.dirac(&h.point(&y, &[1.0; 8]), DEFAULT_PSD_CAP).unwrap();
    assert!(!check_pe(&pe, &h.program).unwrap().passed);
}

#[test]
fn clean_one_stage_returns_the_sample_moments() {
    let y = gaussian(6, 14, 1);
    let report = estimate_one_stage(&y, 0.0, &EstimatorConfig::default()).unwrap();
    assert_eq!(report.status(), SolveStatus::Solved);
    let m = empirical_moments(&y).unwrap();
    assert!((report.mu_hat[0] - m.mu0[0]).abs() < 1e-6);
    assert!((report.sigma_hat.get(0, 0) - m.sigma0.get(0, 0)).abs() < 1e-4);
}

#[test]
fn one_stage_ignores_a_far_point() {
    let mut y = gaussian(7, 10, 1);
    y[3][0] = 40.0;
    let config = EstimatorConfig {
        max_iters: 2000,
        ..EstimatorConfig::default()
    };
    let report = estimate_one_stage(&y, 0.1, &config).unwrap();
    let naive = mean_of(&y)[0];
    assert!(naive > 3.0);
    assert!(report.mu_hat[0].abs() < 1.5, "mu_hat {}", report.mu_hat[0]);
}

#[test]
fn two_stage_reports_both_programs() {
    let mut y = gaussian(8, 16, 1);
    y[0][0] = 30.0;
    let config = EstimatorConfig {
        max_iters: 300,
        ..EstimatorConfig::default()
    };
    let report = estimate_two_stage(&y, 1.0 / 16.0, &config).unwrap();
    assert_eq!(report.stage, Stage::Two);
    if report.stages[0].solver.status != SolveStatus::InfeasibleHeuristic {
        assert_eq!(report.stages.len(), 2);
        assert_eq!(report.stages[1].variant, Variant::Frobenius);
    }
    assert!(report.sigma_hat.min_eigenvalue().unwrap() >= -1e-12);
    assert!(estimate_two_stage(&y[..3], 0.0, &config).is_err());
}

#[test]
fn program_arguments_are_checked() {
    let y = gaussian(9, 6, 2);
    assert!(build_program(Variant::Canonical, &y, 0.1, 5, 1.0).is_err());
    assert!(build_program(Variant::Canonical, &y, 0.6, 4, 1.0).is_err());
    assert!(build_program(Variant::Canonical, &y, 0.1, 4, -1.0).is_err());
    assert!(build_program(Variant::Canonical, &y[..1], 0.1, 4, 1.0).is_err());
}

#[test]
fn certificate_follows_the_kurtosis() {
    // E x⁴ / (E x²)² = 4 about zero for {0, 0, 0, t}
    let pts = vec![vec![0.0], vec![0.0], vec![0.0], vec![2.0]];
    assert!(certify_subgaussianity(&pts, 0.5).unwrap().is_none());
    assert!(certify_subgaussianity(&pts, 1.5).unwrap().is_some());
}
