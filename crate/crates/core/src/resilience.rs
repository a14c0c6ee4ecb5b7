//! Worst-case weighted-subset deviations and the generic estimation-lemma diagnostic.
//!
//! Every `worst_subset_*` value is a supremum of `|E_i a_i s_i|` over a box
//! with a mass budget, `a ∈ [0,1]ⁿ`, `Σ_i (1 − a_i) ≤ εn`. A linear objective
//! over that polytope is maximized by dropping the most negative scalars first
//! (fractional knapsack), so the greedy answer is exact.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data;
use crate::error::{Error, Result};
use crate::estimator::ProgramHandle;
use crate::linalg::{self, MatPower, SymMat, DEFAULT_EIGEN_FLOOR};
use crate::pe::PseudoExpectation;
use crate::poly::Poly;

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidInput(format!("eps must lie in [0, 1], got {eps}")));
    }
    Ok(())
}

/// `sup |Σ_k a_k v_k| / total` over `a_k ∈ [0,1]` with `Σ_k cost_k (1 − a_k) ≤ budget`.
fn knapsack_sup(values: &[f64], costs: &[f64], budget: f64, total: f64) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let full: f64 = values.iter().zip(costs).map(|(v, c)| v * c).sum();
    // raise the sum by dropping the most negative items, lower it by dropping the most positive
    let mut best = 0.0f64;
    for descending in [false, true] {
        let mut sum = full;
        let mut left = budget;
        let iter: Box<dyn Iterator<Item = &usize>> = if descending {
            Box::new(order.iter().rev())
        } else {
            Box::new(order.iter())
        };
        for &k in iter {
            let v = values[k];
            if left <= 0.0 || (if descending { v <= 0.0 } else { v >= 0.0 }) {
                break;
            }
            let take = left.min(costs[k]);
            sum -= v * take;
            left -= take;
        }
        best = best.max(if descending { -sum } else { sum });
    }
    // the full-mass point is feasible for both signs
    best.max(full.abs()) / total
}

/// `sup |E_i a_i s_i|` over `a ∈ [0,1]ⁿ`, `Σ_i a_i ≥ (1 − ε)n`.
pub fn worst_subset_scalars(s: &[f64], eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if s.is_empty() {
        return Ok(0.0);
    }
    let n = s.len() as f64;
    Ok(knapsack_sup(s, &vec![1.0; s.len()], eps * n, n))
}

fn centered(points: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, SymMat)> {
    let m = data::empirical_moments(points)?;
    let r = points
        .iter()
        .map(|p| p.iter().zip(&m.mu0).map(|(a, b)| a - b).collect())
        .collect();
    Ok((r, m.sigma0))
}

fn check_dim(points: &[Vec<f64>], d: usize) -> Result<()> {
    if points.is_empty() || points.iter().any(|p| p.len() != d) {
        return Err(Error::InvalidInput(format!("expected non-empty points of dimension {d}")));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sup_a |E_i a_i⟨x_i − μ₀, v⟩|` with `μ₀` the sample mean.
pub fn worst_subset_linear(points: &[Vec<f64>], eps: f64, v: &[f64]) -> Result<f64> {
    check_dim(points, v.len())?;
    let (r, _) = centered(points)?;
    let s: Vec<f64> = r.iter().map(|ri| dot(ri, v)).collect();
    worst_subset_scalars(&s, eps)
}

/// How the fourth-moment statistics subtract their Gaussian value `2‖·‖_F²`.
#[derive(Clone, Debug, PartialEq)]
pub enum Normalization {
    /// `2‖P‖_F²` (isotropic data).
    Frobenius,
    /// `2‖Σ^{1/2} P Σ^{1/2}‖_F²` for a known covariance `Σ`.
    TrueCovariance(SymMat),
}

impl Normalization {
    fn gaussian_fourth(&self, p: &SymMat) -> Result<f64> {
        Ok(match self {
            Normalization::Frobenius => 2.0 * p.frobenius_norm().powi(2),
            Normalization::TrueCovariance(sigma) => {
                let root = linalg::mat_pow(sigma, MatPower::Half, DEFAULT_EIGEN_FLOOR)?;
                2.0 * p.congruence(&root.to_matrix()).frobenius_norm().powi(2)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Statistic {
    /// `⟨x_i − μ₀, v⟩`
    FirstMoment(Vec<f64>),
    /// `⟨x_i − μ₀, v⟩² − vᵀΣ₀v`
    SecondMomentDev(Vec<f64>),
    /// `⟨(x_i − μ₀)(x_i − μ₀)ᵀ − Σ₀, P⟩² − 2‖P‖²` (normalization chosen separately)
    FourthMomentDev(SymMat),
    /// `⟨(x_i − μ₀)(x_i − μ₀)ᵀ − Σ₀, P⟩`
    MatrixFirst(SymMat),
    /// `⟨X_ij − Σ₀, P⟩` over pairs, `X_ij = ½(x_i − x_j)(x_i − x_j)ᵀ`
    PairedFirst(SymMat),
    /// `⟨X_ij − Σ₀, P⟩² − 2‖P‖²` over pairs
    PairedSecond(SymMat),
}

impl Statistic {
    pub fn name(&self) -> &'static str {
        match self {
            Statistic::FirstMoment(_) => "first-moment",
            Statistic::SecondMomentDev(_) => "second-moment-dev",
            Statistic::FourthMomentDev(_) => "fourth-moment-dev",
            Statistic::MatrixFirst(_) => "matrix-first",
            Statistic::PairedFirst(_) => "paired-first",
            Statistic::PairedSecond(_) => "paired-second",
        }
    }

    pub fn is_paired(&self) -> bool {
        matches!(self, Statistic::PairedFirst(_) | Statistic::PairedSecond(_))
    }
}

/// One point per sample (or one value per pair for the paired statistics).
pub fn statistic_values(points: &[Vec<f64>], stat: &Statistic, norm: &Normalization) -> Result<Vec<f64>> {
    let d = points.first().map_or(0, |p| p.len());
    check_dim(points, d)?;
    let (r, sigma0) = centered(points)?;
    let probe_dim = match stat {
        Statistic::FirstMoment(v) | Statistic::SecondMomentDev(v) => v.len(),
        Statistic::FourthMomentDev(p)
        | Statistic::MatrixFirst(p)
        | Statistic::PairedFirst(p)
        | Statistic::PairedSecond(p) => p.dim(),
    };
    if probe_dim != d {
        return Err(Error::InvalidInput(format!("probe dimension {probe_dim} does not match data dimension {d}")));
    }
    let matrix_dev = |x: &[f64], p: &SymMat, scale: f64| p.quad_form(x) * scale - sigma0.inner(p);
    Ok(match stat {
        Statistic::FirstMoment(v) => r.iter().map(|ri| dot(ri, v)).collect(),
        Statistic::SecondMomentDev(v) => {
            let var = sigma0.quad_form(v);
            r.iter().map(|ri| dot(ri, v).powi(2) - var).collect()
        }
        Statistic::MatrixFirst(p) => r.iter().map(|ri| matrix_dev(ri, p, 1.0)).collect(),
        Statistic::FourthMomentDev(p) => {
            let g = norm.gaussian_fourth(p)?;
            r.iter().map(|ri| matrix_dev(ri, p, 1.0).powi(2) - g).collect()
        }
        Statistic::PairedFirst(p) | Statistic::PairedSecond(p) => {
            let g = match stat {
                Statistic::PairedSecond(_) => Some(norm.gaussian_fourth(p)?),
                _ => None,
            };
            let n = points.len();
            let mut out = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    let diff: Vec<f64> = points[i].iter().zip(&points[j]).map(|(a, b)| a - b).collect();
                    let first = matrix_dev(&diff, p, 0.5);
                    out.push(match g {
                        Some(g) => first * first - g,
                        None => first,
                    });
                }
            }
            out
        }
    })
}

/// Exact sup for the per-point quadratic statistics.
pub fn worst_subset_quadratic(points: &[Vec<f64>], eps: f64, stat: &Statistic, norm: &Normalization) -> Result<f64> {
    if stat.is_paired() {
        return Err(Error::InvalidInput("paired statistics go through worst_subset_paired".into()));
    }
    worst_subset_scalars(&statistic_values(points, stat, norm)?, eps)
}

/// `sup |E_ij a_ij s_ij|` over symmetric `a ∈ [0,1]^{n×n}` with `E_ij a_ij ≥ 1 − 4ε`.
///
/// This is the relaxed superset of the pair-weight set with row sums tied (row-linking
/// conditions dropped), so the value is an upper bound there.
pub fn worst_subset_paired(s: &[f64], n: usize, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if s.len() != n * n {
        return Err(Error::InvalidInput(format!("expected {n}×{n} pair statistics, got {}", s.len())));
    }
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (s[i * n + j], s[j * n + i]);
            if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::InvalidInput("pair statistics must be symmetric".into()));
            }
        }
    }
    if n == 0 {
        return Ok(0.0);
    }
    let (values, costs) = upper_triangle_items(s, n);
    let total = (n * n) as f64;
    Ok(knapsack_sup(&values, &costs, (4.0 * eps * total).min(total), total))
}

/// Upper-triangle entries with their multiplicity in the full matrix.
fn upper_triangle_items(s: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut values = Vec::with_capacity(n * (n + 1) / 2);
    let mut costs = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            values.push(s[i * n + j]);
            costs.push(if i == j { 1.0 } else { 2.0 });
        }
    }
    (values, costs)
}

/// A statistic together with the sample it is evaluated on.
#[derive(Clone, Debug, PartialEq)]
pub struct ResilienceQuery {
    pub points: Vec<Vec<f64>>,
    pub eps: f64,
    pub statistic: Statistic,
    pub normalization: Normalization,
}

impl ResilienceQuery {
    pub fn evaluate(&self) -> Result<f64> {
        let values = statistic_values(&self.points, &self.statistic, &self.normalization)?;
        if self.statistic.is_paired() {
            worst_subset_paired(&values, self.points.len(), self.eps)
        } else {
            worst_subset_scalars(&values, self.eps)
        }
    }
}

/// Brute-force vertex enumeration of the same polytopes, for cross-checking at small sizes.
pub mod oracle {
    use super::upper_triangle_items;

    /// Enumerates every vertex: a set of fully dropped items plus at most one partially dropped one.
    pub fn vertex_sup(values: &[f64], costs: &[f64], budget: f64, total: f64) -> f64 {
        let full: f64 = values.iter().zip(costs).map(|(v, c)| v * c).sum();
        let mut best = full.abs();
        let mut dropped = vec![false; values.len()];
        recurse(values, costs, budget, 0, full, &mut dropped, &mut best);
        best / total
    }

    fn recurse(values: &[f64], costs: &[f64], left: f64, start: usize, sum: f64, dropped: &mut [bool], best: &mut f64) {
        *best = best.max(sum.abs());
        // one fractional item using the leftover budget
        for k in 0..values.len() {
            if !dropped[k] && left > 0.0 && left < costs[k] {
                *best = best.max((sum - values[k] * left).abs());
            }
        }
        for k in start..values.len() {
            if costs[k] <= left + 1e-12 {
                dropped[k] = true;
                recurse(values, costs, left - costs[k], k + 1, sum - values[k] * costs[k], dropped, best);
                dropped[k] = false;
            }
        }
    }

    pub fn scalars(s: &[f64], eps: f64) -> f64 {
        let n = s.len() as f64;
        vertex_sup(s, &vec![1.0; s.len()], eps * n, n)
    }

    /// Plain enumeration for the pair polytope; only practical for n ≤ 5 or so.
    pub fn paired_enumerated(s: &[f64], n: usize, eps: f64) -> f64 {
        let (values, costs) = upper_triangle_items(s, n);
        let total = (n * n) as f64;
        vertex_sup(&values, &costs, (4.0 * eps * total).min(total), total)
    }

    /// Same vertex set as [`paired_enumerated`], searched by subset-sum tables.
    ///
    /// Pair costs are the integers 1 and 2, so for every integer spend `c` the
    /// extreme dropped sums over all subsets of cost exactly `c` are tabulated,
    /// once with every item and once per choice of the fractional item.
    pub fn paired(s: &[f64], n: usize, eps: f64) -> f64 {
        let (values, costs) = upper_triangle_items(s, n);
        let total = (n * n) as f64;
        let budget = (4.0 * eps * total).min(total);
        let cap = (budget + 1e-12).floor() as usize;
        let full: f64 = values.iter().zip(&costs).map(|(v, c)| v * c).sum();
        let mut best = 0.0f64;
        for skip in std::iter::once(None).chain((0..values.len()).map(Some)) {
            let (hi, lo) = extreme_drops(&values, &costs, cap, skip);
            for c in 0..=cap {
                if !hi[c].is_finite() {
                    continue;
                }
                let left = budget - c as f64;
                let frac = match skip {
                    None => 0.0,
                    Some(k) if left > 0.0 && left < costs[k] => values[k] * left,
                    Some(_) => continue,
                };
                best = best.max((full - hi[c] - frac).abs()).max((full - lo[c] - frac).abs());
            }
        }
        best / total
    }

    /// Max and min of `Σ_{k∈S} v_k c_k` over subsets `S` of exact cost `c`, for `c ≤ cap`.
    fn extreme_drops(values: &[f64], costs: &[f64], cap: usize, skip: Option<usize>) -> (Vec<f64>, Vec<f64>) {
        let mut hi = vec![f64::NEG_INFINITY; cap + 1];
        let mut lo = vec![f64::INFINITY; cap + 1];
        hi[0] = 0.0;
        lo[0] = 0.0;
        for (k, (&v, &c)) in values.iter().zip(costs).enumerate() {
            if Some(k) == skip {
                continue;
            }
            let c = c as usize;
            for spend in (c..=cap).rev() {
                if hi[spend - c].is_finite() {
                    hi[spend] = hi[spend].max(hi[spend - c] + v * c as f64);
                    lo[spend] = lo[spend].min(lo[spend - c] + v * c as f64);
                }
            }
        }
        (hi, lo)
    }
}

/// Which conclusion of the generic estimation lemma a row reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conclusion {
    /// `Ẽ⟨μ' − μ₀, v⟩² ≤ O(ε)(Ẽ V(μ', v) + V(μ₀, v))`
    PseudoMean,
    /// `|⟨μ̂ − μ₀, v⟩| ≤ Õ(ε)√V(μ₀, v) + √T`
    RoundedMean,
    /// `T ≤ O(ε)(Ẽ V(μ', v) − V(μ₀, v)) + Õ(ε²)(Ẽ V(μ', v) + V(μ₀, v))`
    SquaredAverage,
}

impl Conclusion {
    pub fn name(&self) -> &'static str {
        match self {
            Conclusion::PseudoMean => "pseudo-mean",
            Conclusion::RoundedMean => "rounded-mean",
            Conclusion::SquaredAverage => "squared-average",
        }
    }
}

/// `lhs`, `rhs` and `lhs / rhs`; all `None` when the moments needed are not available.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub probe: usize,
    pub conclusion: Conclusion,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub ratio: Option<f64>,
    /// True when `T` was replaced by its degree-4 upper bound `2ε·Ẽ E_i (1 − w'_i)⟨x'_i − μ₀, v⟩²`.
    pub bounded: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticTable {
    pub rows: Vec<DiagnosticRow>,
}

pub const DEFAULT_RATIO_CEILING: f64 = 10.0;

impl DiagnosticTable {
    /// Largest available ratio (infinite if any available ratio is not finite).
    pub fn max_ratio(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.ratio)
            .map(|r| if r.is_finite() { r } else { f64::INFINITY })
            .reduce(f64::max)
    }

    pub fn all_within(&self, ceiling: f64) -> bool {
        self.rows.iter().all(|r| r.ratio.is_some_and(|x| x.is_finite() && x <= ceiling))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["probe", "statistic", "lhs", "rhs", "ratio"])?;
        let cell = |x: Option<f64>| x.map_or_else(|| "unavailable".to_string(), |v| format!("{v:e}"));
        for r in &self.rows {
            w.write_record([
                r.probe.to_string(),
                r.conclusion.name().to_string(),
                cell(r.lhs),
                cell(r.rhs),
                cell(r.ratio),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything the generic-lemma diagnostic reads. The clean sample and mask
/// are ground truth, so this is a test-side instrument.
pub struct GenericLemmaInput<'a> {
    pub pe: &'a PseudoExpectation,
    pub handle: &'a ProgramHandle,
    /// Clean points in the coordinates the program was built in.
    pub clean: &'a [Vec<f64>],
    pub mask: &'a [bool],
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else if rhs > 0.0 {
        lhs / rhs
    } else {
        f64::INFINITY
    }
}

/// Evaluates both sides of the three conclusions per probe direction with
/// `V(μ₀, v) = vᵀΣ₀v` (clean empirical covariance). `O(ε)` and `Õ(ε²)` are
/// read as `ε` and `ε²`.
pub fn check_generic_lemma(input: &GenericLemmaInput, probes: &[Vec<f64>]) -> Result<DiagnosticTable> {
    let h = input.handle;
    let (n, d) = (h.catalog.n, h.catalog.d);
    if input.clean.len() != n || input.mask.len() != n {
        return Err(Error::InvalidInput("clean sample and mask must match the program's points".into()));
    }
    check_dim(input.clean, d)?;
    let eps = h.eps;
    let m0 = data::empirical_moments(input.clean)?;
    let pe = input.pe;
    let exact_t = pe.degree() >= 6;

    let mut rows = Vec::with_capacity(3 * probes.len());
    for (k, v) in probes.iter().enumerate() {
        if v.len() != d {
            return Err(Error::InvalidInput(format!("probe {k} has dimension {}, expected {d}", v.len())));
        }
        let v0 = m0.sigma0.quad_form(v);
        let mu_dev = linear_in_v(&h.mu_round, v, &m0.mu0);
        let mut v_prime = Poly::zero();
        for a in 0..d {
            for b in 0..d {
                v_prime.add_scaled(&h.sigma_round[a][b], v[a] * v[b]);
            }
        }
        let ev_prime = pe.apply(&v_prime)?;
        let c1 = pe.apply(&(&mu_dev * &mu_dev))?;
        let mu_hat_dev = pe.apply(&mu_dev)?.abs();

        // ℓ_i = ⟨x'_i − μ₀, v⟩ and 1 − w'_i = 1 − mask_i·w_i
        let ell: Vec<Poly> = (0..n).map(|i| linear_in_v(&h.x_prime[i], v, &m0.mu0)).collect();
        let miss = |i: usize| {
            let mut p = Poly::constant(1.0);
            if input.mask[i] {
                p.add_scaled(&Poly::var(h.catalog.w(i)), -1.0);
            }
            p
        };
        let t = if exact_t {
            let mut avg = Poly::zero();
            for i in 0..n {
                avg.add_scaled(&(&miss(i) * &ell[i]), 1.0 / n as f64);
            }
            Some(pe.apply(&(&avg * &avg))?)
        } else {
            None
        };
        let t_for_c2 = match t {
            Some(t) => t,
            None => {
                let mut sq = Poly::zero();
                for i in 0..n {
                    sq.add_scaled(&(&miss(i) * &(&ell[i] * &ell[i])), 1.0 / n as f64);
                }
                2.0 * eps * pe.apply(&sq)?
            }
        };

        let rhs1 = eps * (ev_prime + v0);
        rows.push(DiagnosticRow {
            probe: k,
            conclusion: Conclusion::PseudoMean,
            lhs: Some(c1),
            rhs: Some(rhs1),
            ratio: Some(ratio(c1, rhs1)),
            bounded: false,
        });
        let rhs2 = eps * v0.max(0.0).sqrt() + t_for_c2.max(0.0).sqrt();
        rows.push(DiagnosticRow {
            probe: k,
            conclusion: Conclusion::RoundedMean,
            lhs: Some(mu_hat_dev),
            rhs: Some(rhs2),
            ratio: Some(ratio(mu_hat_dev, rhs2)),
            bounded: !exact_t,
        });
        rows.push(match t {
            Some(t) => {
                let rhs3 = eps * (ev_prime - v0) + eps * eps * (ev_prime + v0);
                DiagnosticRow {
                    probe: k,
                    conclusion: Conclusion::SquaredAverage,
                    lhs: Some(t),
                    rhs: Some(rhs3),
                    ratio: Some(ratio(t, rhs3)),
                    bounded: false,
                }
            }
            None => DiagnosticRow {
                probe: k,
                conclusion: Conclusion::SquaredAverage,
                lhs: None,
                rhs: None,
                ratio: None,
                bounded: false,
            },
        });
    }
    Ok(DiagnosticTable { rows })
}

/// `⟨p − c, v⟩` for a vector of polynomials `p`.
fn linear_in_v(p: &[Poly], v: &[f64], c: &[f64]) -> Poly {
    let mut out = Poly::zero();
    for a in 0..v.len() {
        out.add_scaled(&p[a], v[a]);
        out.add_term(crate::poly::Monomial::one(), -v[a] * c[a]);
    }
    out
}
