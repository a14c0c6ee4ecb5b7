use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robust_sos::data::{empirical_moments, sample_gaussian, GaussianModel};
use robust_sos::estimator::{build_program, Variant};
use robust_sos::linalg::SymMat;
use robust_sos::pe::{PseudoExpectation, DEFAULT_PSD_CAP};
use robust_sos::resilience::*;

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

fn unit_matrix(rng: &mut ChaCha8Rng, d: usize) -> SymMat {
    let p = SymMat::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let norm = p.frobenius_norm();
    p.scale(1.0 / norm)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn linear_three_points() {
    let pts = vec![vec![-1.0], vec![0.0], vec![1.0]];
    let v = worst_subset_linear(&pts, 1.0 / 3.0, &[1.0]).unwrap();
    assert!((v - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(worst_subset_linear(&pts, 0.0, &[1.0]).unwrap(), 0.0);
}

#[test]
fn second_moment_on_symmetric_pair_is_zero() {
    let pts = vec![vec![-1.0], vec![1.0]];
    let stat = Statistic::SecondMomentDev(vec![1.0]);
    let v = worst_subset_quadratic(&pts, 0.5, &stat, &Normalization::Frobenius).unwrap();
    assert!(v.abs() < 1e-15);
}

#[test]
fn identical_points_give_zero() {
    let pts = vec![vec![2.0, -1.0]; 6];
    let stat = Statistic::SecondMomentDev(vec![0.6, 0.8]);
    assert_eq!(worst_subset_quadratic(&pts, 0.3, &stat, &Normalization::Frobenius).unwrap(), 0.0);
}

#[test]
fn linear_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.random_range(2..=20);
        let d = rng.random_range(1..=3);
        let eps = rng.random_range(0.0..0.3);
        let pts = random_points(&mut rng, n, d);
        let v = unit(&mut rng, d);
        let fast = worst_subset_linear(&pts, eps, &v).unwrap();
        let s = statistic_values(&pts, &Statistic::FirstMoment(v), &Normalization::Frobenius).unwrap();
        let slow = oracle::scalars(&s, eps);
        assert!(close(fast, slow), "n={n} eps={eps}: {fast} vs {slow}");
    }
}

#[test]
fn quadratic_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for k in 0..200 {
        let n = rng.random_range(2..=20);
        let d = rng.random_range(1..=3);
        let eps = rng.random_range(0.0..0.3);
        let pts = random_points(&mut rng, n, d);
        let stat = match k % 3 {
            0 => Statistic::SecondMomentDev(unit(&mut rng, d)),
            1 => Statistic::FourthMomentDev(unit_matrix(&mut rng, d)),
            _ => Statistic::MatrixFirst(unit_matrix(&mut rng, d)),
        };
        let fast = worst_subset_quadratic(&pts, eps, &stat, &Normalization::Frobenius).unwrap();
        let s = statistic_values(&pts, &stat, &Normalization::Frobenius).unwrap();
        let slow = oracle::scalars(&s, eps);
        assert!(close(fast, slow), "{} n={n} eps={eps}: {fast} vs {slow}", stat.name());
    }
}

#[test]
fn paired_matches_vertex_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for k in 0..200 {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(1..=2);
        let eps = rng.random_range(0.0..0.25);
        let pts = random_points(&mut rng, n, d);
        let p = unit_matrix(&mut rng, d);
        let stat = if k % 2 == 0 { Statistic::PairedFirst(p) } else { Statistic::PairedSecond(p) };
        let s = statistic_values(&pts, &stat, &Normalization::Frobenius).unwrap();
        let fast = worst_subset_paired(&s, n, eps).unwrap();
        let slow = oracle::paired(&s, n, eps);
        assert!(close(fast, slow), "n={n} eps={eps}: {fast} vs {slow}");
    }
}

#[test]
fn paired_tables_agree_with_plain_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let n = rng.random_range(2..=5);
        let eps = rng.random_range(0.0..0.2);
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let x = rng.random_range(-2.0..2.0);
                s[i * n + j] = x;
                s[j * n + i] = x;
            }
        }
        let a = oracle::paired(&s, n, eps);
        let b = oracle::paired_enumerated(&s, n, eps);
        assert!(close(a, b), "n={n} eps={eps}: {a} vs {b}");
    }
}

#[test]
fn paired_limits() {
    // constant statistic: full mass is optimal
    let s = vec![-0.7; 16];
    assert!((worst_subset_paired(&s, 4, 0.1).unwrap() - 0.7).abs() < 1e-15);
    // enough budget to drop every negative entry
    let n = 3;
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = if (i + j) % 2 == 0 { 1.0 } else { -2.0 };
        }
    }
    let positive: f64 = s.iter().filter(|&&x| x > 0.0).sum();
    let v = worst_subset_paired(&s, n, 0.25).unwrap();
    assert!(v >= positive / (n * n) as f64 - 1e-15);
}

#[test]
fn monotone_in_eps_and_homogeneous_in_v() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let pts = random_points(&mut rng, 30, 2);
    let v = unit(&mut rng, 2);
    let mut last = 0.0;
    for k in 0..=20 {
        let eps = k as f64 * 0.02;
        let x = worst_subset_linear(&pts, eps, &v).unwrap();
        assert!(x >= last - 1e-15);
        last = x;
    }
    let scaled: Vec<f64> = v.iter().map(|x| -3.0 * x).collect();
    let a = worst_subset_linear(&pts, 0.1, &v).unwrap();
    let b = worst_subset_linear(&pts, 0.1, &scaled).unwrap();
    assert!((b - 3.0 * a).abs() < 1e-12);
}

#[test]
fn true_covariance_normalization_matches_frobenius_at_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let pts = random_points(&mut rng, 12, 2);
    let p = unit_matrix(&mut rng, 2);
    let stat = Statistic::FourthMomentDev(p);
    let a = worst_subset_quadratic(&pts, 0.1, &stat, &Normalization::Frobenius).unwrap();
    let b = worst_subset_quadratic(&pts, 0.1, &stat, &Normalization::TrueCovariance(SymMat::identity(2))).unwrap();
    assert!(close(a, b));
}

#[test]
fn query_dispatches_paired_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pts = random_points(&mut rng, 6, 2);
    let p = unit_matrix(&mut rng, 2);
    let q = ResilienceQuery {
        points: pts.clone(),
        eps: 0.05,
        statistic: Statistic::PairedFirst(p.clone()),
        normalization: Normalization::Frobenius,
    };
    let s = statistic_values(&pts, &Statistic::PairedFirst(p), &Normalization::Frobenius).unwrap();
    assert_eq!(q.evaluate().unwrap(), worst_subset_paired(&s, 6, 0.05).unwrap());
    assert!(worst_subset_quadratic(&pts, 0.05, &q.statistic, &q.normalization).is_err());
}

#[test]
fn clean_gaussian_linear_resilience_is_small() {
    let pts = sample_gaussian(&GaussianModel::standard(2), 4000, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for eps in [0.02, 0.05, 0.1] {
        let env = 3.0 * eps * (1.0f64 / eps).ln().sqrt();
        for _ in 0..20 {
            let v = unit(&mut rng, 2);
            assert!(worst_subset_linear(&pts, eps, &v).unwrap() <= env);
        }
    }
}

fn lemma_fixture() -> (robust_sos::estimator::ProgramHandle, Vec<Vec<f64>>) {
    let clean = sample_gaussian(&GaussianModel::standard(1), 10, 5).unwrap();
    let handle = build_program(Variant::Canonical, &clean, 0.1, 4, 0.5).unwrap();
    (handle, clean)
}

#[test]
fn generic_lemma_vanishes_at_the_clean_dirac() {
    let (handle, clean) = lemma_fixture();
    let point = handle.point(&clean, &[1.0; 10]);
    let pe = handle.dirac(&point, DEFAULT_PSD_CAP).unwrap();
    let mask = vec![true; 10];
    let input = GenericLemmaInput { pe: &pe, handle: &handle, clean: &clean, mask: &mask };
    let table = check_generic_lemma(&input, &[vec![1.0], vec![-1.0]]).unwrap();
    for row in &table.rows {
        match row.conclusion {
            Conclusion::SquaredAverage => assert!(row.lhs.is_none() && row.ratio.is_none()),
            _ => assert!(row.lhs.unwrap().abs() < 1e-12, "{row:?}"),
        }
    }
}

#[test]
fn generic_lemma_on_a_two_atom_mixture() {
    let (handle, clean) = lemma_fixture();
    let eps = handle.eps;
    let shift = 4.0;
    let mut moved = clean.clone();
    moved[0][0] += shift;
    let a = handle.dirac(&handle.point(&clean, &[1.0; 10]), DEFAULT_PSD_CAP).unwrap();
    let b = handle.dirac(&handle.point(&moved, &[1.0; 10]), DEFAULT_PSD_CAP).unwrap();
    let pe = PseudoExpectation::mixture(&[(1.0 - eps, &a), (eps, &b)]).unwrap();
    let mask = vec![true; 10];
    let input = GenericLemmaInput { pe: &pe, handle: &handle, clean: &clean, mask: &mask };
    let table = check_generic_lemma(&input, &[vec![1.0]]).unwrap();

    // μ' − μ₀ is 0 on the first atom and shift/n on the second
    let step = shift / 10.0;
    let c1 = table.rows.iter().find(|r| r.conclusion == Conclusion::PseudoMean).unwrap();
    assert!((c1.lhs.unwrap() - eps * step * step).abs() < 1e-12);
    let c2 = table.rows.iter().find(|r| r.conclusion == Conclusion::RoundedMean).unwrap();
    assert!((c2.lhs.unwrap() - eps * step).abs() < 1e-12);

    // Ẽ V(μ', v) is the mixture of the two empirical variances
    let var = |p: &[Vec<f64>]| empirical_moments(p).unwrap().sigma0.get(0, 0);
    let ev = (1.0 - eps) * var(&clean) + eps * var(&moved);
    assert!((c1.rhs.unwrap() - eps * (ev + var(&clean))).abs() < 1e-10);
}

#[test]
fn diagnostic_csv_has_one_line_per_row() {
    let (handle, clean) = lemma_fixture();
    let pe = handle.dirac(&handle.point(&clean, &[1.0; 10]), DEFAULT_PSD_CAP).unwrap();
    let mask = vec![true; 10];
    let input = GenericLemmaInput { pe: &pe, handle: &handle, clean: &clean, mask: &mask };
    let table = check_generic_lemma(&input, &[vec![1.0]]).unwrap();
    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1 + table.rows.len());
    assert!(text.starts_with("probe,statistic,lhs,rhs,ratio"));
}
