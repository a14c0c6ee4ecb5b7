//! Robust mean/covariance programs, their rounding, and the two-stage pipeline.
//!
//! # Variable catalog
//!
//! For `n` points in `R^d` the program variables are
//!
//! * `u_{i,a}` (index `i·d + a`): the centered coordinates of `x'_i`,
//! * `w_i` (index `n·d + i`): the intersection indicators,
//! * `m_a` (index `n·d + n + a`): the mean,
//!
//! with `x'_i = u_i + m` and the linear constraint `Σ_i u_i = 0`. Every point
//! `x'` corresponds to exactly one `(u, m)` (take `m` = the mean of the
//! `x'_i`), so this is a change of coordinates, not a restriction. In these
//! coordinates `μ' = m` and `Σ' = E_i u_i u_iᵀ` modulo the centering
//! constraint, and the fourth-moment constraint only multiplies variables
//! belonging to the same point. That is what makes a term-sparse moment basis
//! (the `Structured` basis below) sufficient for every constraint.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{self, corrupted_count};
use crate::error::{Error, Result};
use crate::linalg::{self, MatPower, SymMat, DEFAULT_EIGEN_FLOOR};
use crate::pe::{self, MomentBasis, PsdBlock, PseudoExpectation, SosProgram, ViolationReport};
use crate::poly::{Monomial, Poly};
use crate::sdp::{self, GramMatrix, SolveStatus, SolverOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Fourth-moment constraint in every direction `v` (mean and spectral covariance).
    Canonical,
    /// Variance-of-quadratics constraint in every symmetric direction `P` (Frobenius covariance).
    Frobenius,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisMode {
    /// Products of variables belonging to the same point (plus the mean and indicator terms).
    Structured,
    /// Every monomial of degree ≤ k/2; only practical for a handful of points.
    Dense,
}

/// Index arithmetic for the variable catalog.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Catalog {
    pub n: usize,
    pub d: usize,
}

impl Catalog {
    pub fn u(&self, i: usize, a: usize) -> usize {
        i * self.d + a
    }

    pub fn w(&self, i: usize) -> usize {
        self.n * self.d + i
    }

    pub fn m(&self, a: usize) -> usize {
        self.n * self.d + self.n + a
    }

    pub fn num_vars(&self) -> usize {
        self.n * self.d + self.n + self.d
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.num_vars());
        for i in 0..self.n {
            for a in 0..self.d {
                names.push(format!("u{i}_{a}"));
            }
        }
        names.extend((0..self.n).map(|i| format!("w{i}")));
        names.extend((0..self.d).map(|a| format!("m{a}")));
        names
    }

    /// The catalog point representing concrete points `x'` with indicators `w`.
    pub fn point(&self, x: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
        let mean = data::mean_of(x);
        let mut z = vec![0.0; self.num_vars()];
        for i in 0..self.n {
            for a in 0..self.d {
                z[self.u(i, a)] = x[i][a] - mean[a];
            }
            z[self.w(i)] = w[i];
        }
        for a in 0..self.d {
            z[self.m(a)] = mean[a];
        }
        z
    }

    fn var(&self, idx: usize) -> Monomial {
        Monomial::var(idx)
    }
}

/// Moment basis of the structured relaxation.
///
/// Degree 4: `1, w_i, u_{ia}, m_a, m_a m_b, u_{ia} u_{ib}, w_i m_a`.
/// Degree 6 adds `w_i u_{ia}`, `u_{ia} u_{ib} u_{ic}`, `w_i u_{ia} u_{ib}` and `m_a m_b m_c`.
pub fn structured_basis(cat: &Catalog, degree: usize) -> Vec<Monomial> {
    let (n, d) = (cat.n, cat.d);
    let mut out = vec![Monomial::one()];
    let mono = |v: Vec<usize>| Monomial::from_vars(v.into_iter().map(|x| x as u32).collect());
    for i in 0..n {
        out.push(cat.var(cat.w(i)));
        for a in 0..d {
            out.push(cat.var(cat.u(i, a)));
            for b in a..d {
                out.push(mono(vec![cat.u(i, a), cat.u(i, b)]));
            }
        }
    }
    for a in 0..d {
        out.push(cat.var(cat.m(a)));
        for b in a..d {
            out.push(mono(vec![cat.m(a), cat.m(b)]));
        }
        for i in 0..n {
            out.push(mono(vec![cat.w(i), cat.m(a)]));
        }
    }
    if degree >= 6 {
        for i in 0..n {
            for a in 0..d {
                out.push(mono(vec![cat.w(i), cat.u(i, a)]));
                for b in a..d {
                    out.push(mono(vec![cat.w(i), cat.u(i, a), cat.u(i, b)]));
                    for c in b..d {
                        out.push(mono(vec![cat.u(i, a), cat.u(i, b), cat.u(i, c)]));
                    }
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                for c in b..d {
                    out.push(mono(vec![cat.m(a), cat.m(b), cat.m(c)]));
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Quadratic and quartic forms in an auxiliary direction `v`, with polynomial coefficients.
#[derive(Clone, Debug, Default)]
struct VForm(BTreeMap<Monomial, Poly>);

impl VForm {
    fn linear(coeffs: &[Poly]) -> Self {
        let mut f = VForm::default();
        for (a, c) in coeffs.iter().enumerate() {
            f.add(Monomial::var(a), c, 1.0);
        }
        f
    }

    fn quadratic(s: &[Vec<Poly>]) -> Self {
        let mut f = VForm::default();
        for (a, row) in s.iter().enumerate() {
            for (b, c) in row.iter().enumerate() {
                f.add(Monomial::from_vars(vec![a as u32, b as u32]), c, 1.0);
            }
        }
        f
    }

    fn add(&mut self, m: Monomial, c: &Poly, scale: f64) {
        self.0.entry(m).or_default().add_scaled(c, scale);
    }

    fn add_form(&mut self, other: &VForm, scale: f64) {
        for (m, c) in &other.0 {
            self.add(m.clone(), c, scale);
        }
    }

    fn mul(&self, other: &VForm) -> VForm {
        let mut out = VForm::default();
        for (a, ca) in &self.0 {
            for (b, cb) in &other.0 {
                out.add(a.mul(b), &(ca * cb), 1.0);
            }
        }
        out
    }
}

/// A quantifier-free PSD block: `z(v)ᵀ H z(v)` reproduces the eliminated form.
#[derive(Clone, Debug)]
pub struct EliminatedBlock {
    /// Monomials in the direction variables indexing the rows of `H`.
    pub v_basis: Vec<Monomial>,
    pub entries: Vec<Vec<Poly>>,
    /// Constant directions `K` with `z(v)ᵀ K z(v) ≡ 0`.
    pub gram_kernel: Vec<SymMat>,
}

impl EliminatedBlock {
    pub fn dim(&self) -> usize {
        self.v_basis.len()
    }

    pub fn into_psd_block(self, name: &str) -> Result<PsdBlock> {
        PsdBlock::new(name, self.entries)?.with_gram_kernel(self.gram_kernel)
    }
}

fn degree_two_monomials(d: usize) -> Vec<Monomial> {
    let mut out = Vec::new();
    for a in 0..d {
        for b in a..d {
            out.push(Monomial::from_vars(vec![a as u32, b as u32]));
        }
    }
    out
}

/// Canonical Gram matrix of a quartic form `Σ_q P_q(x) v^q`: each coefficient
/// is split equally over all ordered pairs `(α, β)` with `z_α z_β = v^q`.
/// Also returns a basis of the constant Gram kernel.
fn quartic_gram(quartic: &VForm, d: usize) -> EliminatedBlock {
    let z = degree_two_monomials(d);
    let dim = z.len();
    let mut pairs: BTreeMap<Monomial, Vec<(usize, usize)>> = BTreeMap::new();
    for r in 0..dim {
        for s in 0..dim {
            pairs.entry(z[r].mul(&z[s])).or_default().push((r, s));
        }
    }
    let mut entries = vec![vec![Poly::zero(); dim]; dim];
    for (q, coeff) in &quartic.0 {
        let ps = &pairs[q];
        let share = 1.0 / ps.len() as f64;
        for &(r, s) in ps {
            entries[r][s].add_scaled(coeff, share);
        }
    }
    let mut gram_kernel = Vec::new();
    for ps in pairs.values() {
        let unordered: Vec<(usize, usize)> = ps.iter().copied().filter(|(r, s)| r <= s).collect();
        let doubled = |(r, s): (usize, usize)| {
            let mut m = SymMat::zeros(dim);
            if r == s {
                m.set(r, r, 2.0);
            } else {
                m.set(r, s, 1.0);
            }
            m
        };
        for &p in &unordered[1..] {
            gram_kernel.push(doubled(p).sub(&doubled(unordered[0])));
        }
    }
    EliminatedBlock {
        v_basis: z,
        entries,
        gram_kernel,
    }
}

/// The quartic `(2 + c)(vᵀSv)² − E_i(⟨r_i, v⟩² − vᵀSv)²` for centered points
/// `r_i` and covariance `S` given as polynomials.
fn canonical_quartic(r: &[Vec<Poly>], s: &[Vec<Poly>], c: f64) -> VForm {
    let n = r.len() as f64;
    let sigma = VForm::quadratic(s);
    let mut second = VForm::default();
    let mut fourth = VForm::default();
    for ri in r {
        let l = VForm::linear(ri);
        let l2 = l.mul(&l);
        fourth.add_form(&l2.mul(&l2), 1.0 / n);
        second.add_form(&l2, 1.0 / n);
    }
    // E_i(ℓ_i² − σ)² = E_i ℓ_i⁴ − 2σ·E_i ℓ_i² + σ²
    let sigma2 = sigma.mul(&sigma);
    let mut q = VForm::default();
    q.add_form(&sigma2, 1.0 + c);
    q.add_form(&fourth, -1.0);
    q.add_form(&sigma.mul(&second), 2.0);
    q
}

/// Eliminates `∀v` from the fourth-moment constraint for arbitrary centered
/// points `r_i` and covariance polynomials `S`.
pub fn canonical_block_from(r: &[Vec<Poly>], s: &[Vec<Poly>], c: f64) -> EliminatedBlock {
    let d = s.len();
    quartic_gram(&canonical_quartic(r, s, c), d)
}

/// Coordinates of symmetric `P` weighted so their Euclidean norm is `‖P‖_F`.
pub fn svec_weight(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        std::f64::consts::SQRT_2
    }
}

/// Eliminates `∀P` from `E_i⟨r_i r_iᵀ − S, P⟩² ≤ (2 + c)‖P‖_F²`: returns
/// `H = (2 + c)I − E_i svec(M_i) svec(M_i)ᵀ` with `M_i = r_i r_iᵀ − S`.
pub fn frobenius_block_from(r: &[Vec<Poly>], s: &[Vec<Poly>], c: f64) -> EliminatedBlock {
    let d = s.len();
    let z = degree_two_monomials(d);
    let pairs: Vec<(usize, usize)> = z.iter().map(|m| (m.vars()[0] as usize, m.vars()[1] as usize)).collect();
    let dim = pairs.len();
    let n = r.len() as f64;
    let svec = |mat: &dyn Fn(usize, usize) -> Poly| -> Vec<Poly> {
        pairs.iter().map(|&(a, b)| mat(a, b).scale(svec_weight(a, b))).collect()
    };
    let s_vec = svec(&|a, b| s[a][b].clone());
    let mut mean_n = vec![Poly::zero(); dim];
    let mut second = vec![vec![Poly::zero(); dim]; dim];
    for ri in r {
        let ni = svec(&|a, b| &ri[a] * &ri[b]);
        for p in 0..dim {
            mean_n[p].add_scaled(&ni[p], 1.0 / n);
            for q in p..dim {
                second[p][q].add_scaled(&(&ni[p] * &ni[q]), 1.0 / n);
            }
        }
    }
    // E_i (N_i − S)(N_i − S)ᵀ = E_i N_i N_iᵀ − (E_i N_i) Sᵀ − S (E_i N_i)ᵀ + S Sᵀ
    let mut entries = vec![vec![Poly::zero(); dim]; dim];
    for p in 0..dim {
        for q in p..dim {
            let mut cov = second[p][q].clone();
            cov.add_scaled(&(&mean_n[p] * &s_vec[q]), -1.0);
            cov.add_scaled(&(&s_vec[p] * &mean_n[q]), -1.0);
            cov.add_scaled(&(&s_vec[p] * &s_vec[q]), 1.0);
            let mut h = cov.scale(-1.0);
            if p == q {
                h.add_term(Monomial::one(), 2.0 + c);
            }
            entries[p][q] = h.clone();
            entries[q][p] = h;
        }
    }
    EliminatedBlock {
        v_basis: z,
        entries,
        gram_kernel: Vec::new(),
    }
}

/// Centered-point and covariance polynomials of the catalog: `r_i = u_i`, `S = E_i u_i u_iᵀ`.
fn catalog_moments(cat: &Catalog) -> (Vec<Vec<Poly>>, Vec<Vec<Poly>>) {
    let r: Vec<Vec<Poly>> = (0..cat.n)
        .map(|i| (0..cat.d).map(|a| Poly::var(cat.u(i, a))).collect())
        .collect();
    let mut s = vec![vec![Poly::zero(); cat.d]; cat.d];
    for ri in &r {
        for a in 0..cat.d {
            for b in 0..cat.d {
                s[a][b].add_scaled(&(&ri[a] * &ri[b]), 1.0 / cat.n as f64);
            }
        }
    }
    (r, s)
}

/// Fourth-moment block `H(x')` over the degree-2 monomials of `v`.
pub fn eliminate_quantifier_canonical(n: usize, d: usize, c: f64) -> EliminatedBlock {
    let cat = Catalog { n, d };
    let (r, s) = catalog_moments(&cat);
    canonical_block_from(&r, &s, c)
}

/// Variance-of-quadratics block `H(x')` over the `d(d+1)/2` coordinates of `P`.
pub fn eliminate_quantifier_frobenius(n: usize, d: usize, c: f64) -> EliminatedBlock {
    let cat = Catalog { n, d };
    let (r, s) = catalog_moments(&cat);
    frobenius_block_from(&r, &s, c)
}

/// Default fourth-moment slack.
///
/// `max(0.1, 2.2·ε·ln(1/ε), (3 + d)·√(24/n))`. The last term is a sampling
/// allowance: the directional excess kurtosis of n clean Gaussian points has
/// standard deviation about √(24/n), and the maximum over directions grows
/// with d. Without it the clean sample itself violates the constraint for a
/// large fraction of desk-scale draws.
pub fn default_slack(eps: f64, n: usize, d: usize) -> f64 {
    let contamination = if eps > 0.0 { 2.2 * eps * (1.0 / eps).ln() } else { 0.0 };
    let sampling = (3.0 + d as f64) * (24.0 / n as f64).sqrt();
    0.1f64.max(contamination).max(sampling)
}

/// An encoded program plus the polynomials the rounding and the diagnostics read.
#[derive(Clone, Debug)]
pub struct ProgramHandle {
    pub variant: Variant,
    pub catalog: Catalog,
    pub eps: f64,
    /// Number of points the program may discard, `⌊εn⌋`.
    pub dropped: usize,
    pub degree: usize,
    pub slack: f64,
    pub program: SosProgram,
    /// `x'_i = u_i + m`.
    pub x_prime: Vec<Vec<Poly>>,
    /// `μ' = E_i x'_i` as defined (degree 1).
    pub mu_prime: Vec<Poly>,
    /// `Σ' = E_i (x'_i − μ')(x'_i − μ')ᵀ` as defined (degree 2).
    pub sigma_prime: Vec<Vec<Poly>>,
    /// `μ'` reduced by the centering constraint: `m`.
    pub mu_round: Vec<Poly>,
    /// `Σ'` reduced by the centering constraint: `E_i u_i u_iᵀ`.
    pub sigma_round: Vec<Vec<Poly>>,
    pub observed: Vec<Vec<f64>>,
}

pub fn build_program(variant: Variant, y: &[Vec<f64>], eps: f64, degree: usize, slack: f64) -> Result<ProgramHandle> {
    data::check_eps(eps)?;
    let dropped = corrupted_count(eps, y.len());
    build_program_with(variant, y, eps, dropped, degree, slack, BasisMode::Structured)
}

/// Full control over the discard budget and the moment basis.
pub fn build_program_with(
    variant: Variant,
    y: &[Vec<f64>],
    eps: f64,
    dropped: usize,
    degree: usize,
    slack: f64,
    basis: BasisMode,
) -> Result<ProgramHandle> {
    if degree < 4 || degree % 2 != 0 {
        return Err(Error::InvalidInput(format!("program degree must be even and ≥ 4, got {degree}")));
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two points".into()));
    }
    let d = y[0].len();
    if d == 0 || y.iter().any(|p| p.len() != d || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("points must be finite and share one dimension".into()));
    }
    if 2 * dropped > n {
        return Err(Error::InvalidInput("cannot discard more than half of the points".into()));
    }
    if !(slack >= 0.0) || !slack.is_finite() {
        return Err(Error::InvalidInput(format!("slack must be finite and non-negative, got {slack}")));
    }
    let cat = Catalog { n, d };
    let mut prog = SosProgram::new(cat.num_vars(), degree);
    prog.var_names = cat.names();

    let w = |i| Poly::var(cat.w(i));
    for i in 0..n {
        prog.add_equality(&(&w(i) * &w(i)) - &w(i));
    }
    let mut size = Poly::constant(-((n - dropped) as f64));
    for i in 0..n {
        size.add_scaled(&w(i), 1.0);
    }
    prog.add_equality(size);
    let x_prime: Vec<Vec<Poly>> = (0..n)
        .map(|i| (0..d).map(|a| &Poly::var(cat.u(i, a)) + &Poly::var(cat.m(a))).collect())
        .collect();
    for i in 0..n {
        for a in 0..d {
            let diff = &x_prime[i][a] - &Poly::constant(y[i][a]);
            prog.add_equality(&w(i) * &diff);
        }
    }
    for a in 0..d {
        let mut centering = Poly::zero();
        for i in 0..n {
            centering.add_term(Monomial::var(cat.u(i, a)), 1.0);
        }
        prog.add_equality(centering);
    }
    let block = match variant {
        Variant::Canonical => eliminate_quantifier_canonical(n, d, slack),
        Variant::Frobenius => eliminate_quantifier_frobenius(n, d, slack),
    };
    let name = match variant {
        Variant::Canonical => "fourth-moment",
        Variant::Frobenius => "quadratic-variance",
    };
    prog.add_psd_block(block.into_psd_block(name)?);
    prog.basis = match basis {
        BasisMode::Structured => MomentBasis::Explicit(structured_basis(&cat, degree)),
        BasisMode::Dense => MomentBasis::Dense,
    };

    let inv_n = 1.0 / n as f64;
    let mu_prime: Vec<Poly> = (0..d)
        .map(|a| {
            let mut p = Poly::zero();
            for xi in &x_prime {
                p.add_scaled(&xi[a], inv_n);
            }
            p
        })
        .collect();
    let centered: Vec<Vec<Poly>> = x_prime
        .iter()
        .map(|xi| xi.iter().zip(&mu_prime).map(|(x, m)| x - m).collect())
        .collect();
    let sigma_prime: Vec<Vec<Poly>> = (0..d)
        .map(|a| {
            (0..d)
                .map(|b| {
                    let mut p = Poly::zero();
                    for ci in &centered {
                        p.add_scaled(&(&ci[a] * &ci[b]), inv_n);
                    }
                    p
                })
                .collect()
        })
        .collect();
    let (_, sigma_round) = catalog_moments(&cat);
    let mu_round = (0..d).map(|a| Poly::var(cat.m(a))).collect();

    Ok(ProgramHandle {
        variant,
        catalog: cat,
        eps,
        dropped,
        degree,
        slack,
        program: prog,
        x_prime,
        mu_prime,
        sigma_prime,
        mu_round,
        sigma_round,
        observed: y.to_vec(),
    })
}

impl ProgramHandle {
    /// Catalog point for concrete `x'` and `w` (the intended solution uses the clean points and the mask).
    pub fn point(&self, x: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
        self.catalog.point(x, w)
    }

    /// Point mass at a catalog point, on this program's moment support, with
    /// its Gram-kernel slack fitted.
    pub fn dirac(&self, point: &[f64], cap: usize) -> Result<PseudoExpectation> {
        let system = pe::build_moment_system_with_cap(&self.program, cap)?;
        let mut dirac = PseudoExpectation::dirac(self.degree, system.support.clone(), point)?;
        dirac.tau = 1e-8;
        pe::fit_block_slack(&mut dirac, &self.program)?;
        Ok(dirac)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rounded {
    pub mu_hat: Vec<f64>,
    pub sigma_hat: SymMat,
    /// True when `Σ̂` had a negative eigenvalue and was projected onto the PSD cone.
    pub psd_repaired: bool,
}

/// `μ̂ = Ẽ[μ']`, `Σ̂ = Ẽ[Σ']` (symmetrized, PSD-repaired if needed).
pub fn round_estimates(pe: &PseudoExpectation, handle: &ProgramHandle) -> Result<Rounded> {
    if pe.degree() < 4 {
        return Err(Error::DegreeExceeded {
            degree: 4,
            limit: pe.degree(),
        });
    }
    let d = handle.catalog.d;
    let mu_hat = handle
        .mu_round
        .iter()
        .map(|p| pe.apply(p))
        .collect::<Result<Vec<_>>>()?;
    let mut raw = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            raw[a * d + b] = pe.apply(&handle.sigma_round[a][b])?;
        }
    }
    let sym = SymMat::from_square_averaged(d, &raw);
    let min = sym.min_eigenvalue()?;
    let (sigma_hat, psd_repaired) = if min < 0.0 {
        (linalg::psd_project(&sym)?, true)
    } else {
        (sym, false)
    };
    Ok(Rounded {
        mu_hat,
        sigma_hat,
        psd_repaired,
    })
}

/// Looks for a degree-4 SoS proof that `(3 + margin)(vᵀΣv)² − E_i⟨x_i, v⟩⁴ ≥ 0`,
/// `Σ = E_i x_i x_iᵀ`. The caller centers the points.
pub fn certify_subgaussianity(points: &[Vec<f64>], eps_margin: f64) -> Result<Option<GramMatrix>> {
    certify_subgaussianity_with(points, eps_margin, &SolverOptions::new(1e-9, 50_000, 0))
}

pub fn certify_subgaussianity_with(
    points: &[Vec<f64>],
    eps_margin: f64,
    options: &SolverOptions,
) -> Result<Option<GramMatrix>> {
    let target = subgaussian_form(points, eps_margin)?;
    if target.is_zero() {
        return Ok(None);
    }
    sdp::solve_sos_cert(&target, 2, options)
}

/// `(3 + margin)(vᵀΣv)² − E_i⟨x_i, v⟩⁴` as a polynomial in `v`.
pub fn subgaussian_form(points: &[Vec<f64>], margin: f64) -> Result<Poly> {
    let n = points.len();
    if n == 0 {
        return Err(Error::InvalidInput("no points".into()));
    }
    let d = points[0].len();
    let constant_rows = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<Poly>> {
        (0..d).map(|a| (0..d).map(|b| Poly::constant(f(a, b))).collect()).collect()
    };
    let second = constant_rows(&|a, b| points.iter().map(|x| x[a] * x[b]).sum::<f64>() / n as f64);
    let sigma = VForm::quadratic(&second);
    let mut form = VForm::default();
    form.add_form(&sigma.mul(&sigma), 3.0 + margin);
    // E_i⟨x_i, v⟩⁴ through the symmetric fourth-moment tensor
    let mut fourth: BTreeMap<Monomial, f64> = BTreeMap::new();
    for x in points {
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    for e in 0..d {
                        let m = Monomial::from_vars(vec![a as u32, b as u32, c as u32, e as u32]);
                        *fourth.entry(m).or_default() += x[a] * x[b] * x[c] * x[e] / n as f64;
                    }
                }
            }
        }
    }
    let mut out = Poly::zero();
    for (m, c) in &form.0 {
        out.add_term(m.clone(), c.coeff(&Monomial::one()));
    }
    for (m, c) in fourth {
        out.add_term(m, -c);
    }
    Ok(out)
}

/// Estimator knobs shared by the one- and two-stage pipelines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub degree: usize,
    /// Fourth-moment slack `c`; `None` selects [`default_slack`].
    pub slack: Option<f64>,
    pub basis: BasisMode,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub psd_cap: usize,
    /// Rescale coordinates by median/MAD before solving the canonical program.
    pub standardize: bool,
    /// Extra divisor applied on top of the robust scale. The program's
    /// feasible set is not a single point and the solver returns the feasible
    /// point its metric favours; the coordinate scale sets how strongly far
    /// points' moments are penalized in that metric (smaller scale: fewer
    /// outliers kept, slower convergence).
    pub solver_scale: f64,
    /// Record a solver trace row every this many iterations (0 = off).
    pub trace_every: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            degree: 4,
            slack: None,
            basis: BasisMode::Structured,
            tol: 1e-6,
            max_iters: 5_000,
            seed: 0,
            psd_cap: pe::DEFAULT_PSD_CAP,
            standardize: true,
            solver_scale: 2.0,
            trace_every: 0,
        }
    }
}

impl EstimatorConfig {
    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            trace_every: self.trace_every,
            ..SolverOptions::new(self.tol, self.max_iters, self.seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Outcome of the independent constraint check (only for `Solved`).
    pub check_passed: Option<bool>,
    pub psd_dim: usize,
    pub equality_rows: usize,
    pub unknowns: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    One,
    Two,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub variant: Variant,
    pub points: usize,
    pub dropped: usize,
    pub slack: f64,
    pub solver: SolverDiagnostics,
    pub psd_repaired: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub mu_hat: Vec<f64>,
    pub sigma_hat: SymMat,
    pub stage: Stage,
    pub stages: Vec<StageReport>,
    /// Solver trace of the last stage, when requested.
    #[serde(skip)]
    pub trace: Vec<sdp::TraceRow>,
}

impl EstimationReport {
    /// `Solved` only if every stage solved and passed its check.
    pub fn status(&self) -> SolveStatus {
        self.stages
            .iter()
            .map(|s| match (s.solver.status, s.solver.check_passed) {
                (SolveStatus::Solved, Some(false)) => SolveStatus::MaxIters,
                (status, _) => status,
            })
            .find(|s| *s != SolveStatus::Solved)
            .unwrap_or(SolveStatus::Solved)
    }

    pub fn iterations(&self) -> usize {
        self.stages.iter().map(|s| s.solver.iterations).sum()
    }
}

/// Result of one program solve: estimates in original coordinates plus the raw objects.
#[derive(Clone, Debug)]
pub struct SolvedProgram {
    pub handle: ProgramHandle,
    pub pe: PseudoExpectation,
    pub report: Option<ViolationReport>,
    pub rounded: Rounded,
    pub stage: StageReport,
    pub trace: Vec<sdp::TraceRow>,
    standardizer: Standardizer,
}

impl SolvedProgram {
    /// Maps points into the coordinates the program was built in.
    pub fn program_coordinates(&self, points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.standardizer.apply(points)
    }
}

/// Affine change of coordinates `z = D⁻¹(y − c)` with diagonal `D`.
#[derive(Clone, Debug)]
struct Standardizer {
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn identity(d: usize) -> Self {
        Standardizer {
            center: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    fn robust(y: &[Vec<f64>], extra: f64) -> Self {
        let center = data::coordinatewise_median(y);
        let scale = (0..center.len())
            .map(|a| {
                let mut dev: Vec<f64> = y.iter().map(|p| (p[a] - center[a]).abs()).collect();
                let mad = 1.482_602_218_505_602 * data::median_in_place(&mut dev);
                extra * if mad > 1e-12 { mad } else { 1.0 }
            })
            .collect();
        Standardizer { center, scale }
    }

    fn centered(y: &[Vec<f64>], extra: f64) -> Self {
        Standardizer {
            center: data::coordinatewise_median(y),
            scale: vec![extra; y[0].len()],
        }
    }

    fn apply(&self, y: &[Vec<f64>]) -> Vec<Vec<f64>> {
        y.iter()
            .map(|p| p.iter().zip(&self.center).zip(&self.scale).map(|((v, c), s)| (v - c) / s).collect())
            .collect()
    }

    fn undo(&self, r: Rounded) -> Rounded {
        let d = self.scale.len();
        Rounded {
            mu_hat: (0..d).map(|a| self.center[a] + self.scale[a] * r.mu_hat[a]).collect(),
            sigma_hat: SymMat::from_fn(d, |a, b| self.scale[a] * self.scale[b] * r.sigma_hat.get(a, b)),
            psd_repaired: r.psd_repaired,
        }
    }
}

fn solve_stage(
    variant: Variant,
    y: &[Vec<f64>],
    eps: f64,
    dropped: usize,
    config: &EstimatorConfig,
    standardizer: &Standardizer,
) -> Result<SolvedProgram> {
    let n = y.len();
    let d = y[0].len();
    let slack = config.slack.unwrap_or_else(|| default_slack(eps, n, d));
    let z = standardizer.apply(y);
    let handle = build_program_with(variant, &z, eps, dropped, config.degree, slack, config.basis)?;
    // With nothing to discard, Σ(1 − w_i)² = 0 forces Ẽ[w] = 1 and Ẽ[m] = ȳ
    // linearly, and the point mass at the observed data is feasible; starting
    // there lets the solver confirm it instead of crawling toward it.
    let start = match dropped {
        0 => Some(handle.dirac(&handle.point(&z, &vec![1.0; n]), config.psd_cap)?),
        _ => None,
    };
    let solved = pe::solve_program_from(&handle.program, &config.solver_options(), config.psd_cap, start.as_ref())?;
    let rounded = standardizer.undo(round_estimates(&solved.pe, &handle)?);
    let problem = &solved.system.problem;
    let stage = StageReport {
        variant,
        points: n,
        dropped,
        slack,
        solver: SolverDiagnostics {
            status: solved.solution.status,
            iterations: solved.solution.iterations,
            primal_residual: solved.solution.primal_residual,
            dual_residual: solved.solution.dual_residual,
            check_passed: solved.report.as_ref().map(|r| r.passed),
            psd_dim: problem.total_psd_dim(),
            equality_rows: problem.rows.len(),
            unknowns: problem.num_unknowns,
        },
        psd_repaired: rounded.psd_repaired,
    };
    Ok(SolvedProgram {
        handle,
        pe: solved.pe,
        report: solved.report,
        rounded,
        stage,
        trace: solved.solution.trace,
        standardizer: standardizer.clone(),
    })
}

/// Solves one program on all points and returns the raw solve (used by the diagnostics).
pub fn solve_one_stage(variant: Variant, y: &[Vec<f64>], eps: f64, config: &EstimatorConfig) -> Result<SolvedProgram> {
    data::check_eps(eps)?;
    check_points(y)?;
    let standardizer = match (variant, config.standardize) {
        (Variant::Canonical, true) => Standardizer::robust(y, config.solver_scale),
        (Variant::Frobenius, true) => Standardizer::centered(y, config.solver_scale),
        (_, false) => Standardizer::identity(y[0].len()),
    };
    solve_stage(variant, y, eps, corrupted_count(eps, y.len()), config, &standardizer)
}

fn check_points(y: &[Vec<f64>]) -> Result<()> {
    if y.len() < 2 {
        return Err(Error::InvalidInput("need at least two points".into()));
    }
    let d = y[0].len();
    if d == 0 || y.iter().any(|p| p.len() != d || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("points must be finite and share one dimension".into()));
    }
    Ok(())
}

/// The canonical program on all points.
pub fn estimate_one_stage(y: &[Vec<f64>], eps: f64, config: &EstimatorConfig) -> Result<EstimationReport> {
    let solved = solve_one_stage(Variant::Canonical, y, eps, config)?;
    Ok(EstimationReport {
        mu_hat: solved.rounded.mu_hat,
        sigma_hat: solved.rounded.sigma_hat,
        stage: Stage::One,
        stages: vec![solved.stage],
        trace: solved.trace,
    })
}

/// Canonical program on the first ⌊n/2⌋ points, then the Frobenius program on
/// the remaining points after whitening by the first estimate.
///
/// Each half may contain every corrupted point, so each program is allowed to
/// discard `⌊εn⌋` points of its half.
pub fn estimate_two_stage(y: &[Vec<f64>], eps: f64, config: &EstimatorConfig) -> Result<EstimationReport> {
    data::check_eps(eps)?;
    check_points(y)?;
    let n = y.len();
    let half = n / 2;
    if half < 2 || n - half < 2 {
        return Err(Error::InvalidInput("two-stage estimation needs at least four points".into()));
    }
    let budget = corrupted_count(eps, n);
    let (first, second) = y.split_at(half);
    let stage_eps = |len: usize| budget as f64 / len as f64;
    for len in [first.len(), second.len()] {
        if 2 * budget > len {
            return Err(Error::InvalidInput(format!(
                "{budget} corrupted points cannot be tolerated in a half of {len} points"
            )));
        }
    }

    let standardizer = if config.standardize {
        Standardizer::robust(first, config.solver_scale)
    } else {
        Standardizer::identity(first[0].len())
    };
    let s1 = solve_stage(Variant::Canonical, first, stage_eps(first.len()), budget, config, &standardizer)?;
    let mut stages = vec![s1.stage.clone()];
    let mu_hat = s1.rounded.mu_hat.clone();
    let sigma1 = s1.rounded.sigma_hat.clone();
    // an iteration-capped first stage is still a usable estimate to whiten with
    if s1.stage.solver.status == SolveStatus::InfeasibleHeuristic {
        return Ok(EstimationReport {
            mu_hat,
            sigma_hat: sigma1,
            stage: Stage::Two,
            stages,
            trace: s1.trace,
        });
    }
    let inv_root = linalg::mat_pow(&sigma1, MatPower::NegHalf, DEFAULT_EIGEN_FLOOR)?;
    let root = linalg::mat_pow(&sigma1, MatPower::Half, DEFAULT_EIGEN_FLOOR)?;
    let whitened: Vec<Vec<f64>> = second
        .iter()
        .map(|p| {
            let centered: Vec<f64> = p.iter().zip(&mu_hat).map(|(a, b)| a - b).collect();
            inv_root.mat_vec(&centered)
        })
        .collect();
    let centerer = if config.standardize {
        Standardizer::centered(&whitened, config.solver_scale)
    } else {
        Standardizer::identity(whitened[0].len())
    };
    let s2 = solve_stage(Variant::Frobenius, &whitened, stage_eps(second.len()), budget, config, &centerer)?;
    stages.push(s2.stage.clone());
    let sigma3 = s2.rounded.sigma_hat;
    let sigma_hat = sigma3.congruence(&root.to_matrix());
    Ok(EstimationReport {
        mu_hat,
        sigma_hat,
        stage: Stage::Two,
        stages,
        trace: s2.trace,
    })
}
