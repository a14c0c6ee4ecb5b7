//! Gaussian samples, strong-contamination adversaries and error metrics.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, MatPower, SymMat, DEFAULT_EIGEN_FLOOR};

/// Version tag written at the top of sample CSV files.
pub const SAMPLE_SCHEMA: &str = "robust-sos-sample/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianModel {
    pub mu: Vec<f64>,
    pub sigma: SymMat,
}

impl GaussianModel {
    pub fn new(mu: Vec<f64>, sigma: SymMat) -> Result<Self> {
        if mu.len() != sigma.dim() {
            return Err(Error::InvalidInput("mean and covariance dimensions differ".into()));
        }
        let min = sigma.min_eigenvalue()?;
        if min < DEFAULT_EIGEN_FLOOR {
            return Err(Error::SingularMatrix {
                min_eigenvalue: min,
                floor: DEFAULT_EIGEN_FLOOR,
            });
        }
        Ok(GaussianModel { mu, sigma })
    }

    pub fn standard(d: usize) -> Self {
        GaussianModel {
            mu: vec![0.0; d],
            sigma: SymMat::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// `x_i = μ + Σ^{1/2} z_i`, `z_i` standard normal from a ChaCha stream seeded with `seed`.
pub fn sample_gaussian(model: &GaussianModel, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be positive".into()));
    }
    let root = linalg::mat_pow(&model.sigma, MatPower::Half, DEFAULT_EIGEN_FLOOR)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.dim();
    Ok((0..n)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            root.mat_vec(&z)
                .iter()
                .zip(&model.mu)
                .map(|(a, m)| a + m)
                .collect()
        })
        .collect())
}

/// How corrupted points are produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AdversarySpec {
    /// Adds a fixed offset to each chosen point.
    MeanShift { offset: Vec<f64> },
    /// Moves every chosen point to one location.
    FarCluster { center: Vec<f64> },
    /// Scales chosen points away from the clean sample mean.
    CovInflation { scale: f64 },
    /// Mirrors chosen points through the clean sample mean.
    SignFlip,
    /// Places outliers on the top eigenvector of the clean sample covariance,
    /// replacing the points that already project furthest along it.
    AdaptiveWorst { radius: f64 },
}

/// Adversary names accepted on the command line.
pub const ADVERSARY_NAMES: [&str; 5] = [
    "mean-shift",
    "far-cluster",
    "cov-inflation",
    "sign-flip",
    "adaptive-worst",
];

impl AdversarySpec {
    /// The named adversary with its default strength in dimension `d`.
    ///
    /// Defaults: offset and far-cluster center `(10, …, 10)`-style points at
    /// distance 10√d for the cluster and 10 for the shift, inflation factor 10,
    /// and adaptive radius 10√d.
    pub fn with_defaults(name: &str, d: usize) -> Result<Self> {
        let root_d = (d as f64).sqrt();
        Ok(match name {
            "mean-shift" => AdversarySpec::MeanShift {
                offset: vec![10.0 / root_d; d],
            },
            "far-cluster" => AdversarySpec::FarCluster {
                center: vec![10.0; d],
            },
            "cov-inflation" => AdversarySpec::CovInflation { scale: 10.0 },
            "sign-flip" => AdversarySpec::SignFlip,
            "adaptive-worst" => AdversarySpec::AdaptiveWorst {
                radius: 10.0 * root_d,
            },
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown adversary {other:?}; expected one of {}",
                    ADVERSARY_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            AdversarySpec::MeanShift { .. } => "mean-shift",
            AdversarySpec::FarCluster { .. } => "far-cluster",
            AdversarySpec::CovInflation { .. } => "cov-inflation",
            AdversarySpec::SignFlip => "sign-flip",
            AdversarySpec::AdaptiveWorst { .. } => "adaptive-worst",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContaminatedSample {
    /// The uncorrupted points `x_i`.
    pub clean: Vec<Vec<f64>>,
    /// The points handed to the estimator, `y_i`.
    pub observed: Vec<Vec<f64>>,
    /// `mask[i] = (x_i == y_i)`.
    pub mask: Vec<bool>,
    pub eps: f64,
}

impl ContaminatedSample {
    pub fn n(&self) -> usize {
        self.observed.len()
    }

    pub fn dim(&self) -> usize {
        self.observed.first().map_or(0, Vec::len)
    }

    pub fn num_corrupted(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }
}

/// Number of points replaced at corruption rate `eps`: `⌊eps·n⌋`, robust to
/// the representation error of decimal rates such as 0.29.
pub fn corrupted_count(eps: f64, n: usize) -> usize {
    (eps * n as f64 + 1e-9).floor() as usize
}

pub fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::InvalidInput(format!("eps must lie in [0, 0.5), got {eps}")));
    }
    Ok(())
}

/// Replaces exactly `⌊eps·n⌋` points according to the adversary.
pub fn contaminate(
    clean: &[Vec<f64>],
    eps: f64,
    adversary: &AdversarySpec,
    seed: u64,
) -> Result<ContaminatedSample> {
    check_eps(eps)?;
    let n = clean.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty sample".into()));
    }
    let d = clean[0].len();
    if clean.iter().any(|x| x.len() != d) {
        return Err(Error::InvalidInput("points have inconsistent dimensions".into()));
    }
    let count = corrupted_count(eps, n);
    let mut observed = clean.to_vec();
    let mean = mean_of(clean);
    let check_dim = |v: &[f64]| {
        if v.len() != d {
            Err(Error::InvalidInput("adversary vector has the wrong dimension".into()))
        } else {
            Ok(())
        }
    };

    let chosen: Vec<usize> = match adversary {
        AdversarySpec::AdaptiveWorst { .. } => {
            let q = top_direction(clean)?;
            let mut order: Vec<usize> = (0..n).collect();
            let proj = |i: usize| -> f64 { clean[i].iter().zip(&mean).zip(&q).map(|((x, m), q)| (x - m) * q).sum() };
            order.sort_by(|&a, &b| proj(b).total_cmp(&proj(a)).then(a.cmp(&b)));
            let mut c = order[..count].to_vec();
            c.sort_unstable();
            c
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c = rand::seq::index::sample(&mut rng, n, count).into_vec();
            c.sort_unstable();
            c
        }
    };

    for &i in &chosen {
        let x = &clean[i];
        observed[i] = match adversary {
            AdversarySpec::MeanShift { offset } => {
                check_dim(offset)?;
                x.iter().zip(offset).map(|(a, b)| a + b).collect()
            }
            AdversarySpec::FarCluster { center } => {
                check_dim(center)?;
                center.clone()
            }
            AdversarySpec::CovInflation { scale } => {
                x.iter().zip(&mean).map(|(a, m)| m + scale * (a - m)).collect()
            }
            AdversarySpec::SignFlip => x.iter().zip(&mean).map(|(a, m)| 2.0 * m - a).collect(),
            AdversarySpec::AdaptiveWorst { radius } => {
                let q = top_direction(clean)?;
                mean.iter().zip(&q).map(|(m, q)| m + radius * q).collect()
            }
        };
    }
    let mask = clean.iter().zip(&observed).map(|(x, y)| x == y).collect();
    Ok(ContaminatedSample {
        clean: clean.to_vec(),
        observed,
        mask,
        eps,
    })
}

fn top_direction(points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = empirical_moments(points)?;
    Ok(linalg::sym_eig(&m.sigma0)?.vectors.column(0))
}

pub fn mean_of(points: &[Vec<f64>]) -> Vec<f64> {
    let d = points[0].len();
    let mut mu = vec![0.0; d];
    for p in points {
        for (m, x) in mu.iter_mut().zip(p) {
            *m += x;
        }
    }
    let n = points.len() as f64;
    mu.iter_mut().for_each(|m| *m /= n);
    mu
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMoments {
    pub mu0: Vec<f64>,
    pub sigma0: SymMat,
}

/// Sample mean and population-normalized (1/n) covariance.
pub fn empirical_moments(points: &[Vec<f64>]) -> Result<EmpiricalMoments> {
    if points.len() < 2 {
        return Err(Error::InvalidInput("need at least two points".into()));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::InvalidInput("points have inconsistent dimensions".into()));
    }
    let mu0 = mean_of(points);
    let n = points.len() as f64;
    let sigma0 = SymMat::from_fn(d, |a, b| {
        points
            .iter()
            .map(|p| (p[a] - mu0[a]) * (p[b] - mu0[b]))
            .sum::<f64>()
            / n
    });
    Ok(EmpiricalMoments { mu0, sigma0 })
}

/// Coordinatewise median (average of the middle pair for even n).
pub fn coordinatewise_median(points: &[Vec<f64>]) -> Vec<f64> {
    let d = points[0].len();
    (0..d)
        .map(|a| {
            let mut col: Vec<f64> = points.iter().map(|p| p[a]).collect();
            median_in_place(&mut col)
        })
        .collect()
}

pub(crate) fn median_in_place(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationErrors {
    pub mean_err: f64,
    pub spec_err: f64,
    pub frob_err: f64,
    /// `min(1, mean_err + frob_err)`: an upper-bound surrogate, not an exact TV distance.
    pub tv_surrogate: f64,
}

pub fn error_report(model: &GaussianModel, mu_hat: &[f64], sigma_hat: &SymMat) -> Result<EstimationErrors> {
    if mu_hat.len() != model.dim() || sigma_hat.dim() != model.dim() {
        return Err(Error::InvalidInput("estimate dimension does not match the model".into()));
    }
    let diff: Vec<f64> = mu_hat.iter().zip(&model.mu).map(|(a, b)| a - b).collect();
    let mean_err = linalg::mahalanobis(&diff, &model.sigma, DEFAULT_EIGEN_FLOOR)?;
    let spec_err = linalg::rel_spectral(sigma_hat, &model.sigma, DEFAULT_EIGEN_FLOOR)?;
    let frob_err = linalg::rel_frobenius(sigma_hat, &model.sigma, DEFAULT_EIGEN_FLOOR)?;
    Ok(EstimationErrors {
        mean_err,
        spec_err,
        frob_err,
        tv_surrogate: (mean_err + frob_err).min(1.0),
    })
}

/// Provenance recorded in a sample file header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub adversary: String,
    pub seed: u64,
}

impl fmt::Display for SampleMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "adversary={} seed={}", self.adversary, self.seed)
    }
}

/// Writes a sample as CSV: two `#` header lines, then `i,mask,y0..,x0..` rows.
pub fn write_sample_csv<W: Write>(sample: &ContaminatedSample, meta: &SampleMeta, mut out: W) -> Result<()> {
    let d = sample.dim();
    writeln!(out, "# {SAMPLE_SCHEMA}")?;
    writeln!(
        out,
        "# d={d} n={} eps={} {meta}",
        sample.n(),
        sample.eps
    )?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["i".to_string(), "mask".to_string()];
    header.extend((0..d).map(|a| format!("y{a}")));
    header.extend((0..d).map(|a| format!("x{a}")));
    w.write_record(&header)?;
    for i in 0..sample.n() {
        let mut rec = vec![i.to_string(), u8::from(sample.mask[i]).to_string()];
        rec.extend(sample.observed[i].iter().map(f64::to_string));
        rec.extend(sample.clean[i].iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sample_csv<R: Read>(mut input: R) -> Result<(ContaminatedSample, SampleMeta)> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let header = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .find(|l| l.contains("eps="))
        .ok_or_else(|| Error::InvalidInput("sample file lacks its header line".into()))?;
    let field = |name: &str| -> Result<String> {
        header
            .split_whitespace()
            .find_map(|t| t.strip_prefix(name))
            .map(str::to_string)
            .ok_or_else(|| Error::InvalidInput(format!("sample header lacks {name}")))
    };
    let parse = |name: &str| -> Result<f64> {
        let v = field(name)?;
        f64::from_str(&v).map_err(|e| Error::InvalidInput(format!("bad {name}{v}: {e}")))
    };
    let d = parse("d=")? as usize;
    let eps = parse("eps=")?;
    let meta = SampleMeta {
        adversary: field("adversary=")?,
        seed: parse("seed=")? as u64,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let (mut clean, mut observed, mut mask) = (Vec::new(), Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != 2 + 2 * d {
            return Err(Error::InvalidInput(format!("sample row has {} fields, expected {}", rec.len(), 2 + 2 * d)));
        }
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse()
                .map_err(|e| Error::InvalidInput(format!("bad number {:?}: {e}", &rec[k])))
        };
        mask.push(&rec[1] == "1");
        observed.push((0..d).map(|a| num(2 + a)).collect::<Result<Vec<_>>>()?);
        clean.push((0..d).map(|a| num(2 + d + a)).collect::<Result<Vec<_>>>()?);
    }
    let sample = ContaminatedSample {
        clean,
        observed,
        mask,
        eps,
    };
    Ok((sample, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sampling_is_deterministic() {
        let m = GaussianModel::standard(2);
        assert_eq!(sample_gaussian(&m, 4, 7).unwrap(), sample_gaussian(&m, 4, 7).unwrap());
        assert_ne!(sample_gaussian(&m, 4, 7).unwrap(), sample_gaussian(&m, 4, 8).unwrap());
    }

    #[test]
    fn large_sample_moments_match_the_model() {
        let n = 100_000;
        let xs = sample_gaussian(&GaussianModel::standard(2), n, 1).unwrap();
        let mu = mean_of(&xs);
        assert!(mu.iter().all(|m| m.abs() <= 3.0 / (n as f64).sqrt()));

        let model = GaussianModel::new(vec![0.0, 0.0], SymMat::from_diag(&[4.0, 1.0])).unwrap();
        let xs = sample_gaussian(&model, n, 2).unwrap();
        let m = empirical_moments(&xs).unwrap();
        assert!((m.sigma0.get(0, 0) / 4.0 - 1.0).abs() < 0.05);
        assert!((m.sigma0.get(1, 1) - 1.0).abs() < 0.05);
    }

    #[test]
    fn moments_examples() {
        let m = empirical_moments(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(m.mu0, vec![1.0, 0.0]);
        assert_eq!(m.sigma0, SymMat::from_diag(&[1.0, 0.0]));
        let m = empirical_moments(&vec![vec![1.5, -2.0]; 3]).unwrap();
        assert_eq!(m.sigma0, SymMat::zeros(2));
        let m = empirical_moments(&[vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(m.mu0, vec![0.0]);
        assert!((m.sigma0.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!(empirical_moments(&[vec![1.0]]).is_err());
    }

    #[test]
    fn zero_eps_is_a_no_op() {
        let xs = sample_gaussian(&GaussianModel::standard(3), 20, 3).unwrap();
        for name in ADVERSARY_NAMES {
            let adv = AdversarySpec::with_defaults(name, 3).unwrap();
            let s = contaminate(&xs, 0.0, &adv, 9).unwrap();
            assert_eq!(s.observed, xs);
            assert!(s.mask.iter().all(|&m| m));
        }
    }

    #[test]
    fn far_cluster_count_is_exact() {
        let xs = sample_gaussian(&GaussianModel::standard(2), 10, 4).unwrap();
        let c = vec![7.0, -3.0];
        let s = contaminate(&xs, 0.2, &AdversarySpec::FarCluster { center: c.clone() }, 5).unwrap();
        assert_eq!(s.observed.iter().filter(|y| **y == c).count(), 2);
        assert_eq!(s.num_corrupted(), 2);
    }

    #[test]
    fn mean_shift_moves_the_mean_by_the_expected_amount() {
        let xs = sample_gaussian(&GaussianModel::standard(2), 100, 6).unwrap();
        let adv = AdversarySpec::MeanShift {
            offset: vec![10.0, 0.0],
        };
        let s = contaminate(&xs, 0.1, &adv, 1).unwrap();
        let before = mean_of(&s.clean);
        let after = mean_of(&s.observed);
        assert!((after[0] - before[0] - 1.0).abs() < 1e-12);
        assert!((after[1] - before[1]).abs() < 1e-12);
    }

    #[test]
    fn eps_out_of_range_is_rejected() {
        let xs = sample_gaussian(&GaussianModel::standard(1), 10, 1).unwrap();
        let adv = AdversarySpec::SignFlip;
        for eps in [-0.1, 0.5, 0.9, f64::NAN] {
            assert!(matches!(contaminate(&xs, eps, &adv, 0), Err(Error::InvalidInput(_))));
        }
    }

    #[test]
    fn adaptive_worst_replaces_the_furthest_points() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        let s = contaminate(&xs, 0.2, &AdversarySpec::AdaptiveWorst { radius: 50.0 }, 0).unwrap();
        assert_eq!(s.mask, [true, true, true, true, true, true, true, true, false, false]);
        assert!((s.observed[9][0] - 54.5).abs() < 1e-9);
    }

    #[test]
    fn unknown_adversary_name_is_rejected() {
        assert!(AdversarySpec::with_defaults("meteor", 2).is_err());
    }

    #[test]
    fn error_report_examples() {
        let model = GaussianModel::new(vec![1.0, -1.0], SymMat::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap()).unwrap();
        let e = error_report(&model, &model.mu, &model.sigma).unwrap();
        assert!(e.mean_err < 1e-12 && e.spec_err < 1e-12 && e.frob_err < 1e-12);

        let eps = 0.07;
        let root = linalg::mat_pow(&model.sigma, MatPower::Half, DEFAULT_EIGEN_FLOOR).unwrap();
        let shift = root.mat_vec(&[eps, 0.0]);
        let mu_hat: Vec<f64> = model.mu.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let e = error_report(&model, &mu_hat, &model.sigma).unwrap();
        assert!((e.mean_err - eps).abs() < 1e-12);

        let t = 0.3;
        let e = error_report(&model, &model.mu, &model.sigma.scale(1.0 + t)).unwrap();
        assert!((e.spec_err - t).abs() < 1e-12);
        assert!((e.frob_err - t * 2f64.sqrt()).abs() < 1e-12);
        assert!((e.tv_surrogate - (t * 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn sample_csv_round_trips() {
        let xs = sample_gaussian(&GaussianModel::standard(2), 12, 8).unwrap();
        let adv = AdversarySpec::with_defaults("far-cluster", 2).unwrap();
        let s = contaminate(&xs, 0.25, &adv, 3).unwrap();
        let meta = SampleMeta {
            adversary: adv.name().into(),
            seed: 3,
        };
        let mut buf = Vec::new();
        write_sample_csv(&s, &meta, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# robust-sos-sample/1\n# d=2 n=12 eps=0.25 adversary=far-cluster seed=3\ni,mask,y0,y1,x0,x1\n"));
        let (back, back_meta) = read_sample_csv(buf.as_slice()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back_meta, meta);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn contamination_touches_at_most_the_budget(seed in 0u64..1000, n in 2usize..60, eps in 0.0f64..0.49) {
            let xs = sample_gaussian(&GaussianModel::standard(2), n, seed).unwrap();
            for name in ADVERSARY_NAMES {
                let adv = AdversarySpec::with_defaults(name, 2).unwrap();
                let s = contaminate(&xs, eps, &adv, seed).unwrap();
                prop_assert!(s.num_corrupted() <= (eps * n as f64).ceil() as usize);
                for i in 0..n {
                    if s.mask[i] {
                        prop_assert_eq!(&s.observed[i], &s.clean[i]);
                    }
                }
            }
        }

        #[test]
        fn errors_are_invariant_under_linear_maps(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
            let a = linalg::Matrix::from_fn(2, 2, |i, j| draw() + if i == j { 3.0 } else { 0.0 });
            let sigma = SymMat::identity(2).congruence(&linalg::Matrix::from_fn(2, 2, |_, _| draw())).add(&SymMat::identity(2));
            let model = GaussianModel::new(vec![draw(), draw()], sigma).unwrap();
            let mu_hat = vec![model.mu[0] + 0.1 * draw(), model.mu[1] + 0.1 * draw()];
            let sigma_hat = model.sigma.add(&SymMat::from_fn(2, |_, _| 0.05 * draw()));
            let before = error_report(&model, &mu_hat, &sigma_hat).unwrap();
            let moved = GaussianModel::new(a.mat_vec(&model.mu), model.sigma.congruence(&a)).unwrap();
            let after = error_report(&moved, &a.mat_vec(&mu_hat), &sigma_hat.congruence(&a)).unwrap();
            prop_assert!((before.mean_err - after.mean_err).abs() < 1e-8);
            prop_assert!((before.frob_err - after.frob_err).abs() < 1e-8);
        }
    }
}
