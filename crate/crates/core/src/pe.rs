//! Pseudo-expectations and the moment systems that produce them.
//!
//! A [`PseudoExpectation`] stores moments on an explicit monomial support.
//! For a dense relaxation the support is every monomial of degree ≤ k; for
//! the structured relaxations used by the estimator it is the set of products
//! of a smaller basis, and any multiplier whose product would fall outside the
//! support is simply not part of the program.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::SymMat;
use crate::poly::{basis_size, Monomial, MonomialIndex, Poly};
use crate::sdp::{
    self, AffineExpr, EqualityRow, PsdBlockSpec, SdpProblem, SdpSolution, SolveStatus,
    SolverOptions,
};

pub const DEFAULT_TAU: f64 = 1e-6;
/// Default cap on the summed dimension of all PSD blocks of a moment system.
pub const DEFAULT_PSD_CAP: usize = 2000;

/// Which monomials index the moment matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum MomentBasis {
    /// Every monomial of degree ≤ k/2.
    Dense,
    /// A caller-chosen basis (each of degree ≤ k/2).
    Explicit(Vec<Monomial>),
}

/// Matrix-valued polynomial constraint `Ẽ[H] ⪰ 0`.
///
/// `gram_kernel` lists constant symmetric directions `K` that may be added to
/// `Ẽ[H]` for free; they come from the non-uniqueness of Gram representations
/// (see the estimator's quantifier elimination). Each direction is one extra
/// unknown of the moment system.
#[derive(Clone, Debug)]
pub struct PsdBlock {
    pub name: String,
    entries: Vec<Vec<Poly>>,
    gram_kernel: Vec<SymMat>,
}

impl PsdBlock {
    pub fn new(name: impl Into<String>, entries: Vec<Vec<Poly>>) -> Result<Self> {
        let dim = entries.len();
        if dim == 0 || entries.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("PSD block must be square and non-empty".into()));
        }
        for r in 0..dim {
            for s in 0..r {
                if entries[r][s] != entries[s][r] {
                    return Err(Error::InvalidInput(format!(
                        "PSD block entry ({r}, {s}) is not symmetric"
                    )));
                }
            }
        }
        Ok(PsdBlock {
            name: name.into(),
            entries,
            gram_kernel: Vec::new(),
        })
    }

    pub fn with_gram_kernel(mut self, kernel: Vec<SymMat>) -> Result<Self> {
        if kernel.iter().any(|k| k.dim() != self.dim()) {
            return Err(Error::InvalidInput("kernel direction has the wrong size".into()));
        }
        self.gram_kernel = kernel;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, r: usize, s: usize) -> &Poly {
        &self.entries[r][s]
    }

    pub fn gram_kernel(&self) -> &[SymMat] {
        &self.gram_kernel
    }

    pub fn degree(&self) -> usize {
        self.entries.iter().flatten().map(Poly::degree).max().unwrap_or(0)
    }

    /// `H(point)`.
    pub fn eval(&self, point: &[f64]) -> Result<SymMat> {
        let n = self.dim();
        let mut m = SymMat::zeros(n);
        for r in 0..n {
            for s in r..n {
                m.set(r, s, self.entries[r][s].eval(point)?);
            }
        }
        Ok(m)
    }

    /// `Ẽ[H]` under a pseudo-expectation.
    pub fn apply(&self, pe: &PseudoExpectation) -> Result<SymMat> {
        let n = self.dim();
        let mut m = SymMat::zeros(n);
        for r in 0..n {
            for s in r..n {
                m.set(r, s, pe.apply(&self.entries[r][s])?);
            }
        }
        Ok(m)
    }

    /// `base + Σ λ_j K_j`.
    pub fn with_slack(&self, base: &SymMat, slack: &[f64]) -> SymMat {
        let mut out = base.clone();
        for (k, &l) in self.gram_kernel.iter().zip(slack) {
            out = out.add(&k.scale(l));
        }
        out
    }
}

/// Equality and PSD constraints over `num_vars` variables, at relaxation degree `degree`.
#[derive(Clone, Debug)]
pub struct SosProgram {
    pub num_vars: usize,
    pub var_names: Vec<String>,
    pub degree: usize,
    pub equalities: Vec<Poly>,
    /// Linear conditions `Ẽ[p] = c` imposed on the moments directly (no multipliers).
    pub moment_equalities: Vec<(Poly, f64)>,
    pub psd_blocks: Vec<PsdBlock>,
    pub basis: MomentBasis,
}

impl SosProgram {
    pub fn new(num_vars: usize, degree: usize) -> Self {
        SosProgram {
            num_vars,
            var_names: (0..num_vars).map(|i| format!("x{i}")).collect(),
            degree,
            equalities: Vec::new(),
            moment_equalities: Vec::new(),
            psd_blocks: Vec::new(),
            basis: MomentBasis::Dense,
        }
    }

    pub fn add_equality(&mut self, g: Poly) {
        self.equalities.push(g);
    }

    pub fn add_moment_equality(&mut self, p: Poly, value: f64) {
        self.moment_equalities.push((p, value));
    }

    pub fn add_psd_block(&mut self, block: PsdBlock) {
        self.psd_blocks.push(block);
    }

    /// Adds `g ≥ 0` as the localizing block `[x^{γ+δ} g]` over monomials of degree ≤ (k − deg g)/2.
    pub fn add_inequality(&mut self, g: &Poly) -> Result<()> {
        if g.degree() > self.degree {
            return Err(Error::DegreeExceeded {
                degree: g.degree(),
                limit: self.degree,
            });
        }
        let half = (self.degree - g.degree()) / 2;
        let idx = MonomialIndex::dense(self.num_vars, half, usize::MAX)?;
        let mons = idx.monomials();
        let entries = mons
            .iter()
            .map(|a| mons.iter().map(|b| g.mul_monomial(&a.mul(b))).collect())
            .collect();
        self.add_psd_block(PsdBlock::new(format!("localizing({g})"), entries)?);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.degree;
        if k < 2 || k % 2 != 0 {
            return Err(Error::InvalidInput(format!("degree must be even and ≥ 2, got {k}")));
        }
        if self.var_names.len() != self.num_vars {
            return Err(Error::InvalidInput("variable catalog size mismatch".into()));
        }
        for g in &self.equalities {
            if g.degree() > k {
                return Err(Error::DegreeExceeded {
                    degree: g.degree(),
                    limit: k,
                });
            }
            if g.var_span() > self.num_vars {
                return Err(Error::InvalidInput(format!("equality {g} uses unknown variables")));
            }
        }
        for (p, c) in &self.moment_equalities {
            if p.degree() > k {
                return Err(Error::DegreeExceeded {
                    degree: p.degree(),
                    limit: k,
                });
            }
            if p.var_span() > self.num_vars || !c.is_finite() {
                return Err(Error::InvalidInput(format!("moment condition on {p} is malformed")));
            }
        }
        for b in &self.psd_blocks {
            if b.degree() > k {
                return Err(Error::DegreeExceeded {
                    degree: b.degree(),
                    limit: k,
                });
            }
            for r in 0..b.dim() {
                for s in 0..b.dim() {
                    if b.entry(r, s).var_span() > self.num_vars {
                        return Err(Error::InvalidInput("PSD block uses unknown variables".into()));
                    }
                }
            }
        }
        if let MomentBasis::Explicit(basis) = &self.basis {
            if basis.is_empty() || !basis.iter().any(Monomial::is_one) {
                return Err(Error::InvalidInput("explicit basis must contain the constant monomial".into()));
            }
            if let Some(m) = basis.iter().find(|m| m.degree() > k / 2 || m.var_span() > self.num_vars) {
                return Err(Error::InvalidInput(format!("basis monomial {m} is out of range")));
            }
        }
        Ok(())
    }

    /// The monomials indexing the moment matrix, sorted in graded-lex order.
    pub fn basis_monomials(&self, cap: usize) -> Result<Vec<Monomial>> {
        match &self.basis {
            MomentBasis::Dense => {
                let size = basis_size(self.num_vars, self.degree / 2)?;
                let total = size + self.psd_blocks.iter().map(PsdBlock::dim).sum::<usize>();
                if total > cap {
                    return Err(Error::CapacityExceeded {
                        what: "total PSD dimension",
                        size: total,
                        limit: cap,
                    });
                }
                Ok(MonomialIndex::dense(self.num_vars, self.degree / 2, cap)?
                    .monomials()
                    .to_vec())
            }
            MomentBasis::Explicit(b) => {
                let idx = MonomialIndex::from_monomials(self.num_vars, b.iter().cloned());
                Ok(idx.monomials().to_vec())
            }
        }
    }
}

/// A degree-k pseudo-expectation with moments on an explicit support.
#[derive(Clone, Debug)]
pub struct PseudoExpectation {
    degree: usize,
    support: Arc<MonomialIndex>,
    moments: Vec<f64>,
    /// Gram-kernel coefficients, one vector per PSD block of the program.
    block_slack: Vec<Vec<f64>>,
    pub tau: f64,
}

impl PseudoExpectation {
    pub fn new(degree: usize, support: Arc<MonomialIndex>, moments: Vec<f64>, tau: f64) -> Result<Self> {
        if degree < 2 || degree % 2 != 0 {
            return Err(Error::InvalidInput(format!("degree must be even and ≥ 2, got {degree}")));
        }
        if moments.len() != support.len() {
            return Err(Error::InvalidInput("moment vector does not match its support".into()));
        }
        if support.max_degree() > degree {
            return Err(Error::DegreeExceeded {
                degree: support.max_degree(),
                limit: degree,
            });
        }
        Ok(PseudoExpectation {
            degree,
            support,
            moments,
            block_slack: Vec::new(),
            tau,
        })
    }

    /// Moments of the point mass at `z` on the given support.
    pub fn dirac(degree: usize, support: Arc<MonomialIndex>, z: &[f64]) -> Result<Self> {
        if z.len() < support.num_vars() {
            return Err(Error::InvalidInput("point is shorter than the variable catalog".into()));
        }
        let moments = support.monomials().iter().map(|m| m.eval(z)).collect();
        Self::new(degree, support, moments, DEFAULT_TAU)
    }

    /// Point mass on the dense support of all monomials of degree ≤ k.
    pub fn dense_dirac(degree: usize, z: &[f64]) -> Result<Self> {
        let support = MonomialIndex::dense(z.len(), degree, usize::MAX)?;
        Self::dirac(degree, Arc::new(support), z)
    }

    /// Convex combination of pseudo-expectations sharing one support.
    pub fn mixture(components: &[(f64, &PseudoExpectation)]) -> Result<Self> {
        let (_, first) = components
            .first()
            .ok_or_else(|| Error::InvalidInput("empty mixture".into()))?;
        let total: f64 = components.iter().map(|c| c.0).sum();
        if components.iter().any(|c| c.0 < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput("mixture weights must be a probability vector".into()));
        }
        if components
            .iter()
            .any(|(_, p)| !Arc::ptr_eq(&p.support, &first.support) && p.support.monomials() != first.support.monomials())
        {
            return Err(Error::InvalidInput("mixture components have different supports".into()));
        }
        let mut moments = vec![0.0; first.moments.len()];
        for (w, p) in components {
            for (m, v) in moments.iter_mut().zip(&p.moments) {
                *m += w * v;
            }
        }
        let mut out = Self::new(first.degree, first.support.clone(), moments, first.tau)?;
        let slack_len = first.block_slack.len();
        if slack_len > 0 && components.iter().all(|(_, p)| p.block_slack.len() == slack_len) {
            out.block_slack = (0..slack_len)
                .map(|b| {
                    let mut acc = vec![0.0; first.block_slack[b].len()];
                    for (w, p) in components {
                        for (a, v) in acc.iter_mut().zip(&p.block_slack[b]) {
                            *a += w * v;
                        }
                    }
                    acc
                })
                .collect();
        }
        Ok(out)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn support(&self) -> &Arc<MonomialIndex> {
        &self.support
    }

    pub fn moments(&self) -> &[f64] {
        &self.moments
    }

    pub fn moments_mut(&mut self) -> &mut [f64] {
        &mut self.moments
    }

    pub fn block_slack(&self) -> &[Vec<f64>] {
        &self.block_slack
    }

    pub fn set_block_slack(&mut self, slack: Vec<Vec<f64>>) {
        self.block_slack = slack;
    }

    pub fn moment(&self, m: &Monomial) -> Result<f64> {
        if m.degree() > self.degree {
            return Err(Error::DegreeExceeded {
                degree: m.degree(),
                limit: self.degree,
            });
        }
        self.support
            .index_of(m)
            .map(|i| self.moments[i])
            .ok_or_else(|| Error::MomentUnavailable(m.to_string()))
    }

    /// `Ẽ[p] = Σ_α c_α y_α`.
    pub fn apply(&self, p: &Poly) -> Result<f64> {
        if p.degree() > self.degree {
            return Err(Error::DegreeExceeded {
                degree: p.degree(),
                limit: self.degree,
            });
        }
        let mut total = 0.0;
        for (m, c) in p.terms() {
            total += c * self.moment(m)?;
        }
        Ok(total)
    }

    /// `M[a, b] = Ẽ[x^a x^b]` over the given basis.
    pub fn moment_matrix(&self, basis: &[Monomial]) -> Result<SymMat> {
        let n = basis.len();
        let mut m = SymMat::zeros(n.max(1));
        for r in 0..n {
            for s in r..n {
                m.set(r, s, self.moment(&basis[r].mul(&basis[s]))?);
            }
        }
        Ok(m)
    }

    /// Plain-text dump: a header line, then `index value monomial` per line.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# moments degree={} vars={} count={}",
            self.degree,
            self.support.num_vars(),
            self.moments.len()
        )?;
        for (i, (m, v)) in self.support.monomials().iter().zip(&self.moments).enumerate() {
            writeln!(out, "{i} {v:.17e} {m}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("empty moment file".into()))??;
        let field = |name: &str| -> Result<usize> {
            header
                .split_whitespace()
                .find_map(|t| t.strip_prefix(name))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidInput(format!("moment header lacks {name}")))
        };
        let degree = field("degree=")?;
        let num_vars = field("vars=")?;
        let mut mons = Vec::new();
        let mut values = Vec::new();
        for line in lines {
            let line = line?;
            let mut parts = line.split_whitespace();
            let (Some(_), Some(v), Some(m)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::InvalidInput(format!("malformed moment line: {line}")));
            };
            values.push(
                v.parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("bad moment value {v}: {e}")))?,
            );
            mons.push(parse_monomial(m)?);
        }
        let support = MonomialIndex::from_monomials(num_vars, mons.iter().cloned());
        let mut moments = vec![0.0; support.len()];
        for (m, v) in mons.iter().zip(values) {
            moments[support.index_of(m).expect("inserted")] = v;
        }
        Self::new(degree, Arc::new(support), moments, DEFAULT_TAU)
    }
}

fn parse_monomial(text: &str) -> Result<Monomial> {
    if text == "1" {
        return Ok(Monomial::one());
    }
    let bad = || Error::InvalidInput(format!("bad monomial {text}"));
    let mut vars = Vec::new();
    for factor in text.split('*') {
        let body = factor.strip_prefix('x').ok_or_else(bad)?;
        let (var, power) = match body.split_once('^') {
            Some((v, p)) => (v, p.parse::<usize>().map_err(|_| bad())?),
            None => (body, 1),
        };
        let var: u32 = var.parse().map_err(|_| bad())?;
        vars.extend(std::iter::repeat(var).take(power));
    }
    Ok(Monomial::from_vars(vars))
}

/// `Ẽ[p]`.
pub fn pe_apply(pe: &PseudoExpectation, p: &Poly) -> Result<f64> {
    pe.apply(p)
}

/// Multipliers `x^γ` with `deg γ ≤ k − deg g` for which every monomial of `x^γ g` is in the support.
fn multipliers(g: &Poly, support: &MonomialIndex, by_var: &[Vec<usize>], k: usize) -> Vec<Monomial> {
    let deg_g = g.degree();
    if g.is_zero() || deg_g > k {
        return Vec::new();
    }
    let budget = k - deg_g;
    let (pivot, _) = g.terms().last().expect("non-zero");
    let candidates: Box<dyn Iterator<Item = usize>> = match pivot.vars().first() {
        Some(&v) => Box::new(by_var[v as usize].iter().copied()),
        None => Box::new(0..support.len()),
    };
    let mut out = Vec::new();
    for u in candidates {
        let Some(gamma) = support.monomial(u).quotient(pivot) else {
            continue;
        };
        if gamma.degree() > budget {
            continue;
        }
        if g.terms().all(|(t, _)| support.contains(&gamma.mul(t))) {
            out.push(gamma);
        }
    }
    out.sort();
    out
}

fn variable_lists(support: &MonomialIndex) -> Vec<Vec<usize>> {
    let mut by_var = vec![Vec::new(); support.num_vars()];
    for (i, m) in support.monomials().iter().enumerate() {
        let mut last = None;
        for &v in m.vars() {
            if last != Some(v) {
                by_var[v as usize].push(i);
                last = Some(v);
            }
        }
    }
    by_var
}

/// An SDP instance together with the bookkeeping needed to read moments back.
#[derive(Clone, Debug)]
pub struct MomentSystem {
    pub problem: SdpProblem,
    pub support: Arc<MonomialIndex>,
    pub basis: Vec<Monomial>,
    /// Unknown ranges holding the Gram-kernel coefficients of each program block.
    pub slack_ranges: Vec<Range<usize>>,
    /// Rows generated from equality and moment constraints (excluding normalization).
    pub equality_rows: usize,
    pub degree: usize,
}

impl MomentSystem {
    pub fn pseudo_expectation(&self, unknowns: &[f64], tau: f64) -> Result<PseudoExpectation> {
        let n = self.support.len();
        let mut pe = PseudoExpectation::new(self.degree, self.support.clone(), unknowns[..n].to_vec(), tau)?;
        pe.set_block_slack(self.slack_ranges.iter().map(|r| unknowns[r.clone()].to_vec()).collect());
        Ok(pe)
    }
}

impl MomentSystem {
    /// The solver unknowns that reproduce `pe` (moments outside its support read as 0).
    pub fn unknowns_of(&self, pe: &PseudoExpectation) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.problem.num_unknowns];
        for (j, m) in self.support.monomials().iter().enumerate() {
            out[j] = match pe.support().index_of(m) {
                Some(i) => pe.moments()[i],
                None => 0.0,
            };
        }
        for (b, range) in self.slack_ranges.iter().enumerate() {
            if let Some(slack) = pe.block_slack().get(b) {
                if slack.len() != range.len() {
                    return Err(Error::InvalidInput("block slack does not match the program".into()));
                }
                out[range.clone()].copy_from_slice(slack);
            }
        }
        Ok(out)
    }
}

pub fn build_moment_system(prog: &SosProgram) -> Result<MomentSystem> {
    build_moment_system_with_cap(prog, DEFAULT_PSD_CAP)
}

pub fn build_moment_system_with_cap(prog: &SosProgram, cap: usize) -> Result<MomentSystem> {
    prog.validate()?;
    let k = prog.degree;
    let basis = prog.basis_monomials(cap)?;
    let total_dim = basis.len() + prog.psd_blocks.iter().map(PsdBlock::dim).sum::<usize>();
    if total_dim > cap {
        return Err(Error::CapacityExceeded {
            what: "total PSD dimension",
            size: total_dim,
            limit: cap,
        });
    }

    let mut mons: HashSet<Monomial> = HashSet::new();
    mons.insert(Monomial::one());
    for (r, a) in basis.iter().enumerate() {
        for b in &basis[r..] {
            mons.insert(a.mul(b));
        }
    }
    for (p, _) in &prog.moment_equalities {
        mons.extend(p.terms().map(|(m, _)| m.clone()));
    }
    for block in &prog.psd_blocks {
        for r in 0..block.dim() {
            for s in r..block.dim() {
                mons.extend(block.entry(r, s).terms().map(|(m, _)| m.clone()));
            }
        }
    }
    let support = Arc::new(MonomialIndex::from_monomials(prog.num_vars, mons));
    let by_var = variable_lists(&support);
    let col = |m: &Monomial| support.index_of(m).expect("monomial in support");

    let mut rows = vec![EqualityRow {
        terms: vec![(col(&Monomial::one()), 1.0)],
        rhs: 1.0,
    }];
    for g in &prog.equalities {
        for gamma in multipliers(g, &support, &by_var, k) {
            rows.push(EqualityRow {
                terms: g.terms().map(|(t, c)| (col(&gamma.mul(t)), c)).collect(),
                rhs: 0.0,
            });
        }
    }
    for (p, c) in &prog.moment_equalities {
        rows.push(EqualityRow {
            terms: p.terms().map(|(m, a)| (col(m), a)).collect(),
            rhs: *c,
        });
    }
    let equality_rows = rows.len() - 1;

    let mut num_unknowns = support.len();
    let mut blocks = vec![PsdBlockSpec::new(basis.len(), |r, s| {
        AffineExpr::unknown(col(&basis[r].mul(&basis[s])))
    })];
    let mut slack_ranges = Vec::new();
    for block in &prog.psd_blocks {
        let slack = num_unknowns..num_unknowns + block.gram_kernel().len();
        num_unknowns = slack.end;
        blocks.push(PsdBlockSpec::new(block.dim(), |r, s| {
            let mut terms: Vec<(usize, f64)> = block.entry(r, s).terms().map(|(m, c)| (col(m), c)).collect();
            for (j, kdir) in block.gram_kernel().iter().enumerate() {
                let c = kdir.get(r, s);
                if c != 0.0 {
                    terms.push((slack.start + j, c));
                }
            }
            AffineExpr { constant: 0.0, terms }
        }));
        slack_ranges.push(slack);
    }

    Ok(MomentSystem {
        problem: SdpProblem {
            num_unknowns,
            rows,
            blocks,
        },
        support,
        basis,
        slack_ranges,
        equality_rows,
        degree: k,
    })
}

/// Constraint violations of a pseudo-expectation against a program.
#[derive(Clone, Debug, PartialEq)]
pub struct ViolationReport {
    pub tau: f64,
    /// `|Ẽ[1] − 1|`.
    pub normalization: f64,
    /// `max |Ẽ[x^γ g]|` over all equality rows.
    pub max_equality: f64,
    pub worst_equality: Option<String>,
    pub equality_rows: usize,
    pub moment_min_eig: f64,
    pub block_min_eigs: Vec<f64>,
    pub passed: bool,
}

/// Checks normalization, the equality rows, the moment matrix and every PSD block.
pub fn check_pe(pe: &PseudoExpectation, prog: &SosProgram) -> Result<ViolationReport> {
    prog.validate()?;
    if pe.degree() < prog.degree {
        return Err(Error::DegreeExceeded {
            degree: prog.degree,
            limit: pe.degree(),
        });
    }
    let tau = pe.tau;
    let normalization = (pe.moment(&Monomial::one())? - 1.0).abs();
    let by_var = variable_lists(pe.support());
    let mut max_equality: f64 = 0.0;
    let mut worst_equality = None;
    let mut equality_rows = 0;
    for g in &prog.equalities {
        for gamma in multipliers(g, pe.support(), &by_var, prog.degree) {
            equality_rows += 1;
            let v = pe.apply(&g.mul_monomial(&gamma))?.abs();
            if v > max_equality {
                max_equality = v;
                worst_equality = Some(format!("{gamma} * ({g})"));
            }
        }
    }
    for (p, c) in &prog.moment_equalities {
        equality_rows += 1;
        let v = (pe.apply(p)? - c).abs();
        if v > max_equality {
            max_equality = v;
            worst_equality = Some(format!("E[{p}] = {c}"));
        }
    }
    let basis = prog.basis_monomials(usize::MAX)?;
    let moment_min_eig = pe.moment_matrix(&basis)?.min_eigenvalue()?;
    let mut block_min_eigs = Vec::with_capacity(prog.psd_blocks.len());
    for (b, block) in prog.psd_blocks.iter().enumerate() {
        let base = block.apply(pe)?;
        let slack = pe.block_slack().get(b).map(Vec::as_slice).unwrap_or(&[]);
        block_min_eigs.push(block.with_slack(&base, slack).min_eigenvalue()?);
    }
    let passed = normalization <= tau
        && max_equality <= tau
        && moment_min_eig >= -tau
        && block_min_eigs.iter().all(|&e| e >= -tau);
    Ok(ViolationReport {
        tau,
        normalization,
        max_equality,
        worst_equality,
        equality_rows,
        moment_min_eig,
        block_min_eigs,
        passed,
    })
}

/// Chooses Gram-kernel coefficients maximizing the smallest eigenvalue of each
/// block. Used for point masses, whose blocks are fixed matrices.
pub fn fit_block_slack(pe: &mut PseudoExpectation, prog: &SosProgram) -> Result<()> {
    let mut all = Vec::with_capacity(prog.psd_blocks.len());
    for block in &prog.psd_blocks {
        let base = block.apply(pe)?;
        let count = block.gram_kernel().len();
        let mut slack = vec![0.0; count];
        if count > 0 {
            let radius = 10.0 * (1.0 + base.frobenius_norm());
            let objective = |s: &[f64]| -> Result<f64> { block.with_slack(&base, s).min_eigenvalue() };
            for _ in 0..4 {
                for j in 0..count {
                    let (mut lo, mut hi) = (-radius, radius);
                    let ratio = 0.5 * (5f64.sqrt() - 1.0);
                    for _ in 0..80 {
                        let a = hi - ratio * (hi - lo);
                        let b = lo + ratio * (hi - lo);
                        slack[j] = a;
                        let fa = objective(&slack)?;
                        slack[j] = b;
                        let fb = objective(&slack)?;
                        if fa < fb {
                            lo = a;
                        } else {
                            hi = b;
                        }
                    }
                    slack[j] = 0.5 * (lo + hi);
                }
            }
        }
        all.push(slack);
    }
    pe.set_block_slack(all);
    Ok(())
}

/// A solved program: the moment system, the raw solver output and the induced pseudo-expectation.
#[derive(Clone, Debug)]
pub struct ProgramSolution {
    pub system: MomentSystem,
    pub solution: SdpSolution,
    pub pe: PseudoExpectation,
    /// Present when the solver reports `Solved`; checked at τ = 10·tol.
    pub report: Option<ViolationReport>,
}

pub fn solve_program(prog: &SosProgram, options: &SolverOptions, cap: usize) -> Result<ProgramSolution> {
    solve_program_from(prog, options, cap, None)
}

/// As [`solve_program`], with the solver started at a candidate pseudo-expectation.
pub fn solve_program_from(
    prog: &SosProgram,
    options: &SolverOptions,
    cap: usize,
    start: Option<&PseudoExpectation>,
) -> Result<ProgramSolution> {
    let system = build_moment_system_with_cap(prog, cap)?;
    let start = start.map(|pe| system.unknowns_of(pe)).transpose()?;
    let solution = sdp::solve_feasibility_from(&system.problem, options, start.as_deref())?;
    let tau = 10.0 * options.tol;
    let pe = system.pseudo_expectation(&solution.unknowns, tau)?;
    let report = match solution.status {
        SolveStatus::Solved => Some(check_pe(&pe, prog)?),
        _ => None,
    };
    Ok(ProgramSolution {
        system,
        solution,
        pe,
        report,
    })
}
