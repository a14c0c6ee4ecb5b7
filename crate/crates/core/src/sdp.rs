//! First-order feasibility solver for affine-constrained PSD problems.
//!
//! The problem is: find `y` with `C y = b` and `B_k(y) ⪰ 0` for every block,
//! where each block entry is an affine function of `y`. The solver splits it
//! into two projections (onto the affine set and onto the PSD cone) and runs
//! ADMM on the consensus `Z = A y`.
//!
//! Every block entry is rewritten as a single unknown (entries that are not
//! already a bare unknown get an auxiliary unknown and one extra equality
//! row), which makes `AᵀA` diagonal. The affine step is then a projection in
//! that diagonal metric and only needs one cached factorization of
//! `C D⁻¹ Cᵀ`.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymMat};
use crate::poly::{Monomial, MonomialIndex, Poly};

/// `constant + Σ coeff · y[index]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffineExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        AffineExpr {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn unknown(j: usize) -> Self {
        AffineExpr {
            constant: 0.0,
            terms: vec![(j, 1.0)],
        }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, c)| c * y[j]).sum::<f64>()
    }

    fn as_selection(&self) -> Option<usize> {
        match self.terms.as_slice() {
            [(j, c)] if self.constant == 0.0 && *c == 1.0 => Some(*j),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EqualityRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl EqualityRow {
    pub fn residual(&self, y: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, c)| c * y[j]).sum::<f64>() - self.rhs
    }
}

/// A PSD block given by its upper triangle, row-major: `(0,0), (0,1), …, (1,1), …`.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdBlockSpec {
    pub dim: usize,
    pub entries: Vec<AffineExpr>,
}

impl PsdBlockSpec {
    pub fn new(dim: usize, mut entry: impl FnMut(usize, usize) -> AffineExpr) -> Self {
        let mut entries = Vec::with_capacity(dim * (dim + 1) / 2);
        for r in 0..dim {
            for s in r..dim {
                entries.push(entry(r, s));
            }
        }
        PsdBlockSpec { dim, entries }
    }

    pub fn value(&self, y: &[f64]) -> SymMat {
        let mut it = self.entries.iter();
        SymMat::from_fn(self.dim, |_, _| it.next().expect("entry count").eval(y))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SdpProblem {
    pub num_unknowns: usize,
    pub rows: Vec<EqualityRow>,
    pub blocks: Vec<PsdBlockSpec>,
}

impl SdpProblem {
    pub fn validate(&self) -> Result<()> {
        let in_range = |terms: &[(usize, f64)]| {
            terms
                .iter()
                .all(|&(j, c)| j < self.num_unknowns && c.is_finite())
        };
        for row in &self.rows {
            if !in_range(&row.terms) || !row.rhs.is_finite() {
                return Err(Error::InvalidInput("malformed equality row".into()));
            }
        }
        for b in &self.blocks {
            if b.dim == 0 || b.entries.len() != b.dim * (b.dim + 1) / 2 {
                return Err(Error::InvalidInput("malformed PSD block".into()));
            }
            if b.entries
                .iter()
                .any(|e| !in_range(&e.terms) || !e.constant.is_finite())
            {
                return Err(Error::InvalidInput("malformed PSD block entry".into()));
            }
        }
        Ok(())
    }

    pub fn total_psd_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }

    pub fn max_row_violation(&self, y: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|r| r.residual(y).abs())
            .fold(0.0, f64::max)
    }

    pub fn block_min_eigenvalues(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.blocks
            .iter()
            .map(|b| b.value(y).min_eigenvalue())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Solved,
    MaxIters,
    InfeasibleHeuristic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdpSolution {
    pub unknowns: Vec<f64>,
    pub status: SolveStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Over-relaxation factor in (0, 2).
    pub relaxation: f64,
    /// Rescale the penalty every 100 iterations when the residuals are out of balance.
    pub residual_balancing: bool,
    /// Window for the stagnation test used as an infeasibility heuristic.
    pub stagnation_window: usize,
    /// Record one trace row every this many iterations (0 disables tracing).
    pub trace_every: usize,
    /// Anderson acceleration memory (0 disables it).
    pub anderson_memory: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_iters: 50_000,
            seed: 0,
            relaxation: 1.6,
            residual_balancing: true,
            stagnation_window: 1000,
            trace_every: 0,
            anderson_memory: 8,
        }
    }
}

impl SolverOptions {
    pub fn new(tol: f64, max_iters: usize, seed: u64) -> Self {
        SolverOptions {
            tol,
            max_iters,
            seed,
            ..Default::default()
        }
    }
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "primal_residual", "dual_residual"])?;
    for row in trace {
        w.write_record([
            row.iteration.to_string(),
            format!("{:e}", row.primal_residual),
            format!("{:e}", row.dual_residual),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sparse rows in compressed form.
struct SparseRows {
    start: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl SparseRows {
    fn len(&self) -> usize {
        self.start.len() - 1
    }

    fn row(&self, p: usize) -> (&[usize], &[f64]) {
        let r = self.start[p]..self.start[p + 1];
        (&self.col[r.clone()], &self.val[r])
    }
}

/// `LLᵀ` factorization that drops pivots of (numerically) dependent rows.
/// The factor is stored as `U = Lᵀ`, upper triangle row-major.
struct DroppingCholesky {
    n: usize,
    u: Vec<f64>,
    dropped: Vec<bool>,
}

const PIVOT_DROP: f64 = 1e-9;

impl DroppingCholesky {
    fn factor(mut k: Vec<f64>, n: usize) -> Self {
        let diag: Vec<f64> = (0..n).map(|i| k[i * n + i]).collect();
        let mut dropped = vec![false; n];
        for p in 0..n {
            let d = k[p * n + p];
            if d <= PIVOT_DROP * diag[p].max(f64::MIN_POSITIVE) {
                dropped[p] = true;
                for j in p..n {
                    k[p * n + j] = 0.0;
                }
                continue;
            }
            let l = d.sqrt();
            k[p * n + p] = l;
            for j in p + 1..n {
                k[p * n + j] /= l;
            }
            let (head, tail) = k.split_at_mut((p + 1) * n);
            let pivot_row = &head[p * n..];
            for i in p + 1..n {
                let upi = pivot_row[i];
                if upi == 0.0 {
                    continue;
                }
                let row = &mut tail[(i - p - 1) * n..(i - p) * n];
                for j in i..n {
                    row[j] -= upi * pivot_row[j];
                }
            }
        }
        DroppingCholesky { n, u: k, dropped }
    }

    /// Solves `K x = r` on the retained rows; dropped coordinates are set to zero.
    fn solve(&self, r: &mut [f64]) {
        let n = self.n;
        for p in 0..n {
            if self.dropped[p] {
                r[p] = 0.0;
                continue;
            }
            let z = r[p] / self.u[p * n + p];
            r[p] = z;
            let row = &self.u[p * n..(p + 1) * n];
            for j in p + 1..n {
                r[j] -= row[j] * z;
            }
        }
        for p in (0..n).rev() {
            if self.dropped[p] {
                continue;
            }
            let row = &self.u[p * n..(p + 1) * n];
            let s: f64 = (p + 1..n).map(|j| row[j] * r[j]).sum();
            r[p] = (r[p] - s) / row[p];
        }
    }
}

struct BlockMap {
    dim: usize,
    /// Unknown selected by each upper-triangle entry.
    select: Vec<usize>,
}

/// The problem in split form: selection blocks plus equality rows.
struct Split {
    num_unknowns: usize,
    rows: SparseRows,
    rhs: Vec<f64>,
    blocks: Vec<BlockMap>,
    weight: Vec<f64>,
    in_block: Vec<bool>,
}

fn split_problem(prob: &SdpProblem) -> Split {
    let mut num_unknowns = prob.num_unknowns;
    let mut start = vec![0];
    let mut col = Vec::new();
    let mut val = Vec::new();
    let mut rhs = Vec::new();
    let mut push_row = |terms: &[(usize, f64)], b: f64, rhs: &mut Vec<f64>| {
        let mut terms = terms.to_vec();
        terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (j, c) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += c,
                _ => merged.push((j, c)),
            }
        }
        for (j, c) in merged {
            if c != 0.0 {
                col.push(j);
                val.push(c);
            }
        }
        start.push(col.len());
        rhs.push(b);
    };
    for row in &prob.rows {
        push_row(&row.terms, row.rhs, &mut rhs);
    }
    let mut blocks = Vec::with_capacity(prob.blocks.len());
    for b in &prob.blocks {
        let mut select = Vec::with_capacity(b.entries.len());
        for e in &b.entries {
            match e.as_selection() {
                Some(j) => select.push(j),
                None => {
                    let aux = num_unknowns;
                    num_unknowns += 1;
                    let mut terms = vec![(aux, 1.0)];
                    terms.extend(e.terms.iter().map(|&(j, c)| (j, -c)));
                    push_row(&terms, e.constant, &mut rhs);
                    select.push(aux);
                }
            }
        }
        blocks.push(BlockMap { dim: b.dim, select });
    }
    let mut weight = vec![0.0; num_unknowns];
    for b in &blocks {
        let mut idx = 0;
        for r in 0..b.dim {
            for s in r..b.dim {
                weight[b.select[idx]] += if r == s { 1.0 } else { 2.0 };
                idx += 1;
            }
        }
    }
    let in_block: Vec<bool> = weight.iter().map(|&w| w > 0.0).collect();
    for w in weight.iter_mut() {
        if *w == 0.0 {
            *w = 1.0;
        }
    }
    Split {
        num_unknowns,
        rows: SparseRows { start, col, val },
        rhs,
        blocks,
        weight,
        in_block,
    }
}

/// `C D⁻¹ Cᵀ` as a dense row-major matrix.
fn normal_matrix(split: &Split) -> Vec<f64> {
    let r = split.rows.len();
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); split.num_unknowns];
    for p in 0..r {
        let (cols, vals) = split.rows.row(p);
        for (&j, &c) in cols.iter().zip(vals) {
            columns[j].push((p, c));
        }
    }
    let mut k = vec![0.0; r * r];
    for (j, entries) in columns.iter().enumerate() {
        let inv = 1.0 / split.weight[j];
        for (a, &(p, cp)) in entries.iter().enumerate() {
            for &(q, cq) in &entries[a..] {
                let v = cp * cq * inv;
                k[p * r + q] += v;
                if p != q {
                    k[q * r + p] += v;
                }
            }
        }
    }
    k
}

struct AffineProjector {
    chol: DroppingCholesky,
}

impl AffineProjector {
    /// Overwrites `y` with the `D`-metric projection of `t` onto `{C y = b}`.
    fn project(&self, split: &Split, t: &[f64], y: &mut [f64], work: &mut [f64]) {
        let rows = &split.rows;
        for p in 0..rows.len() {
            let (cols, vals) = rows.row(p);
            work[p] = cols.iter().zip(vals).map(|(&j, &c)| c * t[j]).sum::<f64>() - split.rhs[p];
        }
        self.chol.solve(work);
        y.copy_from_slice(t);
        for p in 0..rows.len() {
            let lambda = work[p];
            if lambda == 0.0 {
                continue;
            }
            let (cols, vals) = rows.row(p);
            for (&j, &c) in cols.iter().zip(vals) {
                y[j] -= c * lambda / split.weight[j];
            }
        }
    }
}

fn max_split_row_violation(split: &Split, y: &[f64]) -> f64 {
    (0..split.rows.len())
        .map(|p| {
            let (cols, vals) = split.rows.row(p);
            (cols.iter().zip(vals).map(|(&j, &c)| c * y[j]).sum::<f64>() - split.rhs[p]).abs()
        })
        .fold(0.0, f64::max)
}

fn fill_block(map: &BlockMap, y: &[f64], out: &mut [f64]) {
    let n = map.dim;
    let mut idx = 0;
    for r in 0..n {
        for s in r..n {
            let v = y[map.select[idx]];
            out[r * n + s] = v;
            out[s * n + r] = v;
            idx += 1;
        }
    }
}

fn frob_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Scratch space and block layout for one application of the ADMM map.
///
/// The map acts on the state `x = (Z, U)`, both halves laid out block after
/// block as full row-major matrices.
struct Admm<'a> {
    split: &'a Split,
    proj: AffineProjector,
    offsets: Vec<usize>,
    half: usize,
    alpha: f64,
    acc: Vec<f64>,
    t: Vec<f64>,
    work: Vec<f64>,
    ay: Vec<f64>,
}

struct StepInfo {
    primal: f64,
    dual: f64,
}

impl<'a> Admm<'a> {
    fn new(split: &'a Split, proj: AffineProjector, alpha: f64) -> Self {
        let mut offsets = Vec::with_capacity(split.blocks.len() + 1);
        let mut half = 0;
        for b in &split.blocks {
            offsets.push(half);
            half += b.dim * b.dim;
        }
        offsets.push(half);
        Admm {
            split,
            proj,
            offsets,
            half,
            alpha,
            acc: vec![0.0; split.num_unknowns],
            t: vec![0.0; split.num_unknowns],
            work: vec![0.0; split.rows.len()],
            ay: vec![0.0; half],
        }
    }

    fn z_block<'x>(&self, x: &'x [f64], b: usize) -> &'x [f64] {
        &x[self.offsets[b]..self.offsets[b + 1]]
    }

    fn u_block<'x>(&self, x: &'x [f64], b: usize) -> &'x [f64] {
        &x[self.half + self.offsets[b]..self.half + self.offsets[b + 1]]
    }

    /// One relaxed ADMM step from `x`. `y` carries the affine iterate in and out
    /// (unknowns outside every block keep their previous value as the target).
    fn step(&mut self, x: &[f64], y: &mut [f64], out: &mut [f64]) -> Result<StepInfo> {
        let split = self.split;
        // affine step on Z − U
        self.acc.iter_mut().for_each(|a| *a = 0.0);
        for (b, map) in split.blocks.iter().enumerate() {
            let dim = map.dim;
            let (zb, ub) = (self.z_block(x, b), self.u_block(x, b));
            let mut idx = 0;
            for r in 0..dim {
                for s in r..dim {
                    let v = if r == s {
                        zb[r * dim + r] - ub[r * dim + r]
                    } else {
                        zb[r * dim + s] - ub[r * dim + s] + zb[s * dim + r] - ub[s * dim + r]
                    };
                    self.acc[map.select[idx]] += v;
                    idx += 1;
                }
            }
        }
        for j in 0..split.num_unknowns {
            self.t[j] = if split.in_block[j] {
                self.acc[j] / split.weight[j]
            } else {
                y[j]
            };
        }
        self.proj.project(split, &self.t, y, &mut self.work);

        // cone step
        let alpha = self.alpha;
        let mut info = StepInfo { primal: 0.0, dual: 0.0 };
        for (b, map) in split.blocks.iter().enumerate() {
            let (lo, hi) = (self.offsets[b], self.offsets[b + 1]);
            let ay = &mut self.ay[lo..hi];
            fill_block(map, y, ay);
            let (z_out, u_out) = out.split_at_mut(self.half);
            let next = &mut z_out[lo..hi];
            let (zb, ub) = (&x[lo..hi], &x[self.half + lo..self.half + hi]);
            for i in 0..next.len() {
                next[i] = alpha * ay[i] + (1.0 - alpha) * zb[i] + ub[i];
            }
            linalg::psd_project_in_place(next, map.dim)?;
            let u_next = &mut u_out[lo..hi];
            for i in 0..next.len() {
                u_next[i] = ub[i] + alpha * ay[i] + (1.0 - alpha) * zb[i] - next[i];
            }
            info.primal = info.primal.max(frob_dist(ay, next));
            info.dual = info.dual.max(frob_dist(next, zb));
        }
        Ok(info)
    }
}

/// Type-II Anderson acceleration of the fixed-point map `x ↦ T(x)`.
struct Anderson {
    memory: usize,
    dx: VecDeque<Vec<f64>>,
    dg: VecDeque<Vec<f64>>,
    // inner products of the stored ΔG columns, kept in step with `dg`
    gram: VecDeque<VecDeque<f64>>,
    last: Option<(Vec<f64>, Vec<f64>)>,
}

impl Anderson {
    fn new(memory: usize) -> Self {
        Anderson {
            memory,
            dx: VecDeque::new(),
            dg: VecDeque::new(),
            gram: VecDeque::new(),
            last: None,
        }
    }

    fn reset(&mut self) {
        self.dx.clear();
        self.dg.clear();
        self.gram.clear();
        self.last = None;
    }

    /// Records the pair `(x, g = T(x) − x)`.
    fn push(&mut self, x: &[f64], g: &[f64]) {
        if let Some((lx, lg)) = self.last.take() {
            let mut dx = if self.dx.len() == self.memory {
                self.dg.pop_front();
                self.gram.pop_front();
                self.gram.iter_mut().for_each(|row| {
                    row.pop_front();
                });
                self.dx.pop_front().unwrap()
            } else {
                Vec::with_capacity(x.len())
            };
            dx.clear();
            dx.extend(x.iter().zip(&lx).map(|(a, b)| a - b));
            let dg: Vec<f64> = g.iter().zip(&lg).map(|(a, b)| a - b).collect();
            let mut row: VecDeque<f64> = self.dg.iter().map(|o| dot(o, &dg)).collect();
            for (r, &v) in self.gram.iter_mut().zip(&row) {
                r.push_back(v);
            }
            row.push_back(dot(&dg, &dg));
            self.gram.push_back(row);
            self.dx.push_back(dx);
            self.dg.push_back(dg);
            let (mut lx, mut lg) = (lx, lg);
            lx.copy_from_slice(x);
            lg.copy_from_slice(g);
            self.last = Some((lx, lg));
        } else {
            self.last = Some((x.to_vec(), g.to_vec()));
        }
    }

    /// `T(x) − (ΔX + ΔG)γ` with `γ` the regularized least-squares fit of `g` by `ΔG`.
    fn extrapolate(&self, fx: &[f64], g: &[f64], out: &mut [f64]) -> bool {
        let m = self.dg.len();
        if m == 0 {
            return false;
        }
        let mut gram = vec![0.0; m * m];
        let mut rhs = vec![0.0; m];
        for i in 0..m {
            rhs[i] = dot(&self.dg[i], g);
            for j in 0..m {
                gram[i * m + j] = self.gram[i][j];
            }
        }
        let trace: f64 = (0..m).map(|i| gram[i * m + i]).sum();
        if !(trace > 0.0) {
            return false;
        }
        for i in 0..m {
            gram[i * m + i] += 1e-10 * trace;
        }
        let Some(gamma) = solve_dense(gram, rhs, m) else {
            return false;
        };
        out.copy_from_slice(fx);
        for (i, &c) in gamma.iter().enumerate() {
            for ((o, a), b) in out.iter_mut().zip(&self.dx[i]).zip(&self.dg[i]) {
                *o -= c * (a + b);
            }
        }
        out.iter().all(|v| v.is_finite())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gaussian elimination with partial pivoting for a small dense system.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, m: usize) -> Option<Vec<f64>> {
    for c in 0..m {
        let p = (c..m).max_by(|&i, &j| a[i * m + c].abs().total_cmp(&a[j * m + c].abs()))?;
        if a[p * m + c].abs() < 1e-300 {
            return None;
        }
        if p != c {
            for k in 0..m {
                a.swap(c * m + k, p * m + k);
            }
            b.swap(c, p);
        }
        for r in c + 1..m {
            let f = a[r * m + c] / a[c * m + c];
            for k in c..m {
                a[r * m + k] -= f * a[c * m + k];
            }
            b[r] -= f * b[c];
        }
    }
    for c in (0..m).rev() {
        let s: f64 = (c + 1..m).map(|k| a[c * m + k] * b[k]).sum();
        b[c] = (b[c] - s) / a[c * m + c];
    }
    b.iter().all(|v| v.is_finite()).then_some(b)
}

/// ADMM feasibility solve. Deterministic in `(prob, options)`.
pub fn solve_feasibility(prob: &SdpProblem, options: &SolverOptions) -> Result<SdpSolution> {
    solve_feasibility_from(prob, options, None)
}

/// As [`solve_feasibility`], starting from the affine projection of `start`
/// instead of a small seeded perturbation of the origin.
pub fn solve_feasibility_from(prob: &SdpProblem, options: &SolverOptions, start: Option<&[f64]>) -> Result<SdpSolution> {
    prob.validate()?;
    if start.is_some_and(|s| s.len() != prob.num_unknowns || s.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("warm start must be finite with one value per unknown".into()));
    }
    if !(options.tol > 0.0) || !(options.relaxation > 0.0 && options.relaxation < 2.0) {
        return Err(Error::InvalidInput("solver tolerance/relaxation out of range".into()));
    }
    let split = split_problem(prob);
    let n = split.num_unknowns;
    let proj = AffineProjector {
        chol: DroppingCholesky::factor(normal_matrix(&split), split.rows.len()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut work = vec![0.0; split.rows.len()];

    let mut y = vec![0.0; n];
    let t0: Vec<f64> = match start {
        Some(s) => {
            // auxiliary unknowns carry the non-selection block entries, in split order
            let mut t = s.to_vec();
            for b in &prob.blocks {
                t.extend(b.entries.iter().filter(|e| e.as_selection().is_none()).map(|e| e.eval(s)));
            }
            t
        }
        None => (0..n).map(|_| 1e-6 * rng.random_range(-1.0..1.0)).collect(),
    };
    proj.project(&split, &t0, &mut y, &mut work);
    let scale = 1.0 + split.rhs.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    let violation = max_split_row_violation(&split, &y);
    if !(violation <= options.tol.max(1e-9) * scale) {
        return Ok(SdpSolution {
            unknowns: y[..prob.num_unknowns].to_vec(),
            status: SolveStatus::InfeasibleHeuristic,
            primal_residual: violation,
            dual_residual: 0.0,
            iterations: 0,
            trace: Vec::new(),
        });
    }

    let mut admm = Admm::new(&split, proj, options.relaxation);
    let half = admm.half;
    let mut x = vec![0.0; 2 * half];
    for (b, map) in split.blocks.iter().enumerate() {
        let lo = admm.offsets[b];
        fill_block(map, &y, &mut x[lo..lo + map.dim * map.dim]);
    }
    let mut fx = vec![0.0; 2 * half];
    let mut g = vec![0.0; 2 * half];
    let mut accel = Anderson::new(options.anderson_memory);
    // plain iterate and residual norm to fall back on if an accelerated step is worse
    let mut fallback: Option<(Vec<f64>, f64)> = None;
    let mut trace = Vec::new();
    let mut info = StepInfo {
        primal: f64::INFINITY,
        dual: f64::INFINITY,
    };
    let mut window_start = f64::INFINITY;

    let finish = |y: &[f64], status, info: &StepInfo, iterations, trace| SdpSolution {
        unknowns: y[..prob.num_unknowns].to_vec(),
        status,
        primal_residual: info.primal,
        dual_residual: info.dual,
        iterations,
        trace,
    };

    for iter in 1..=options.max_iters {
        info = admm.step(&x, &mut y, &mut fx)?;
        for i in 0..g.len() {
            g[i] = fx[i] - x[i];
        }
        let g_norm = dot(&g, &g).sqrt();

        if options.trace_every > 0 && (iter % options.trace_every == 0 || iter == 1) {
            trace.push(TraceRow {
                iteration: iter,
                primal_residual: info.primal,
                dual_residual: info.dual,
            });
        }
        if info.primal <= options.tol && info.dual <= options.tol && verified(prob, &y, options.tol)? {
            return Ok(finish(&y, SolveStatus::Solved, &info, iter, trace));
        }

        let mut rescale = 1.0;
        if options.residual_balancing && iter % 100 == 0 {
            if info.primal > 10.0 * info.dual {
                rescale = 0.5;
            } else if info.dual > 10.0 * info.primal {
                rescale = 2.0;
            }
        }
        if options.stagnation_window > 0 && iter % options.stagnation_window == 0 {
            // an infeasible splitting keeps a constant primal gap while the
            // iterates themselves settle, so the dual side has to be quiet too
            if info.primal >= 100.0 * options.tol
                && info.primal > 0.99 * window_start
                && info.dual < 0.01 * info.primal
            {
                return Ok(finish(&y, SolveStatus::InfeasibleHeuristic, &info, iter, trace));
            }
            window_start = info.primal;
        }

        let rejected = match fallback.take() {
            Some((plain, plain_norm)) if g_norm > plain_norm => {
                x = plain;
                true
            }
            _ => false,
        };
        if rejected {
            accel.reset();
        } else if rescale != 1.0 {
            // ρ ← ρ / rescale, so the scaled dual U scales by `rescale`
            fx[half..].iter_mut().for_each(|v| *v *= rescale);
            accel.reset();
            std::mem::swap(&mut x, &mut fx);
        } else if accel.memory > 0 {
            accel.push(&x, &g);
            let mut next = vec![0.0; 2 * half];
            if accel.extrapolate(&fx, &g, &mut next) {
                fallback = Some((fx.clone(), g_norm));
                x = next;
            } else {
                std::mem::swap(&mut x, &mut fx);
            }
        } else {
            std::mem::swap(&mut x, &mut fx);
        }
        if rejected && rescale != 1.0 {
            x[half..].iter_mut().for_each(|v| *v *= rescale);
        }
    }
    Ok(finish(&y, SolveStatus::MaxIters, &info, options.max_iters, trace))
}

/// Independent re-check of the original rows and blocks.
fn verified(prob: &SdpProblem, y: &[f64], tol: f64) -> Result<bool> {
    if prob.max_row_violation(y) > tol {
        return Ok(false);
    }
    Ok(prob
        .block_min_eigenvalues(y)?
        .into_iter()
        .all(|e| e >= -tol))
}

/// A sum-of-squares certificate `target = z(v)ᵀ G z(v)`.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    pub basis: Vec<Monomial>,
    pub gram: SymMat,
}

impl GramMatrix {
    /// Expands `z(v)ᵀ G z(v)` back into a polynomial.
    pub fn expand(&self) -> Poly {
        let mut p = Poly::zero();
        for (r, a) in self.basis.iter().enumerate() {
            for (s, b) in self.basis.iter().enumerate() {
                p.add_term(a.mul(b), self.gram.get(r, s));
            }
        }
        p
    }
}

/// Searches for a PSD Gram matrix of `target` over monomials of degree ≤
/// `basis_degree` (exactly `basis_degree` when the target is a form of degree
/// `2·basis_degree`). Returns `None` when the solver does not reach a feasible point.
pub fn solve_sos_cert(
    target: &Poly,
    basis_degree: usize,
    options: &SolverOptions,
) -> Result<Option<GramMatrix>> {
    if target.degree() > 2 * basis_degree {
        return Err(Error::DegreeExceeded {
            degree: target.degree(),
            limit: 2 * basis_degree,
        });
    }
    let num_vars = target.var_span().max(1);
    let homogeneous = target.terms().all(|(m, _)| m.degree() == 2 * basis_degree);
    let all = MonomialIndex::dense(num_vars, basis_degree, usize::MAX)?;
    let basis: Vec<Monomial> = all
        .monomials()
        .iter()
        .filter(|m| !homogeneous || m.degree() == basis_degree)
        .cloned()
        .collect();
    let dim = basis.len();

    // one unknown per upper-triangle Gram entry
    let mut unknown_of = vec![vec![0usize; dim]; dim];
    let mut count = 0;
    for r in 0..dim {
        for s in r..dim {
            unknown_of[r][s] = count;
            unknown_of[s][r] = count;
            count += 1;
        }
    }
    let products = MonomialIndex::from_monomials(
        num_vars,
        basis
            .iter()
            .flat_map(|a| basis.iter().map(move |b| a.mul(b)))
            .chain(target.terms().map(|(m, _)| m.clone())),
    );
    let mut rows: Vec<EqualityRow> = products
        .monomials()
        .iter()
        .map(|m| EqualityRow {
            terms: Vec::new(),
            rhs: target.coeff(m),
        })
        .collect();
    for r in 0..dim {
        for s in r..dim {
            let m = basis[r].mul(&basis[s]);
            let p = products.index_of(&m).expect("product present");
            rows[p]
                .terms
                .push((unknown_of[r][s], if r == s { 1.0 } else { 2.0 }));
        }
    }
    let prob = SdpProblem {
        num_unknowns: count,
        rows,
        blocks: vec![PsdBlockSpec::new(dim, |r, s| AffineExpr::unknown(unknown_of[r][s]))],
    };
    let sol = solve_feasibility(&prob, options)?;
    if sol.status != SolveStatus::Solved {
        return Ok(None);
    }
    let gram = SymMat::from_fn(dim, |r, s| sol.unknowns[unknown_of[r][s]]);
    Ok(Some(GramMatrix { basis, gram }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SolverOptions {
        SolverOptions::new(1e-8, 50_000, 1)
    }

    #[test]
    fn scalar_problem_is_solved() {
        let prob = SdpProblem {
            num_unknowns: 1,
            rows: vec![EqualityRow {
                terms: vec![(0, 1.0)],
                rhs: 1.0,
            }],
            blocks: vec![PsdBlockSpec::new(1, |_, _| AffineExpr::unknown(0))],
        };
        let sol = solve_feasibility(&prob, &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        assert!((sol.unknowns[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn off_diagonal_beyond_unit_disk_is_infeasible() {
        let prob = SdpProblem {
            num_unknowns: 1,
            rows: vec![EqualityRow {
                terms: vec![(0, 1.0)],
                rhs: 2.0,
            }],
            blocks: vec![PsdBlockSpec::new(2, |r, s| {
                if r == s {
                    AffineExpr::constant(1.0)
                } else {
                    AffineExpr::unknown(0)
                }
            })],
        };
        let sol = solve_feasibility(&prob, &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::InfeasibleHeuristic);
    }

    #[test]
    fn inconsistent_rows_are_rejected_immediately() {
        let prob = SdpProblem {
            num_unknowns: 1,
            rows: vec![
                EqualityRow {
                    terms: vec![(0, 1.0)],
                    rhs: 1.0,
                },
                EqualityRow {
                    terms: vec![(0, 2.0)],
                    rhs: 3.0,
                },
            ],
            blocks: vec![],
        };
        let sol = solve_feasibility(&prob, &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::InfeasibleHeuristic);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn dependent_consistent_rows_are_fine() {
        let prob = SdpProblem {
            num_unknowns: 2,
            rows: vec![
                EqualityRow {
                    terms: vec![(0, 1.0), (1, 1.0)],
                    rhs: 1.0,
                },
                EqualityRow {
                    terms: vec![(0, 2.0), (1, 2.0)],
                    rhs: 2.0,
                },
            ],
            blocks: vec![PsdBlockSpec::new(2, |r, s| match (r, s) {
                (0, 0) => AffineExpr::unknown(0),
                (1, 1) => AffineExpr::unknown(1),
                _ => AffineExpr::constant(0.0),
            })],
        };
        let sol = solve_feasibility(&prob, &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        assert!((sol.unknowns[0] + sol.unknowns[1] - 1.0).abs() < 1e-10);
        assert!(sol.unknowns.iter().all(|&v| v >= -1e-8));
    }

    #[test]
    fn runs_are_bit_identical() {
        let prob = SdpProblem {
            num_unknowns: 3,
            rows: vec![EqualityRow {
                terms: vec![(0, 1.0), (2, 1.0)],
                rhs: 1.0,
            }],
            blocks: vec![PsdBlockSpec::new(2, |r, s| AffineExpr::unknown(r + s))],
        };
        let a = solve_feasibility(&prob, &opts()).unwrap();
        let b = solve_feasibility(&prob, &opts()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.status, SolveStatus::Solved);
    }

    #[test]
    fn trace_is_recorded_and_written() {
        let prob = SdpProblem {
            num_unknowns: 2,
            rows: vec![EqualityRow {
                terms: vec![(0, 1.0)],
                rhs: 1.0,
            }],
            blocks: vec![PsdBlockSpec::new(2, |r, s| match (r, s) {
                (0, 0) => AffineExpr::unknown(0),
                (0, 1) => AffineExpr::constant(0.5),
                _ => AffineExpr::unknown(1),
            })],
        };
        let mut o = opts();
        o.trace_every = 1;
        let sol = solve_feasibility(&prob, &o).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        assert_eq!(sol.trace.len(), sol.iterations);
        let mut buf = Vec::new();
        write_trace_csv(&sol.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,primal_residual,dual_residual\n"));
        assert_eq!(text.lines().count(), sol.iterations + 1);
    }

    #[test]
    fn square_has_a_certificate() {
        let target = Poly::term(Monomial::from_vars(vec![0, 0]), 1.0);
        let cert = solve_sos_cert(&target, 1, &opts()).unwrap().unwrap();
        assert_eq!(cert.basis, vec![Monomial::var(0)]);
        assert!((cert.gram.get(0, 0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn negative_square_has_no_certificate() {
        let target = Poly::term(Monomial::from_vars(vec![0, 0]), -1.0);
        assert!(solve_sos_cert(&target, 1, &opts()).unwrap().is_none());
    }

    #[test]
    fn explicit_sum_of_squares_is_certified() {
        let diff = &Poly::var(0) - &Poly::var(1);
        let prod = Poly::term(Monomial::from_vars(vec![0, 1]), 1.0);
        let target = &(&diff * &diff) + &(&prod * &prod);
        let cert = solve_sos_cert(&target, 2, &opts()).unwrap().unwrap();
        assert!(cert.expand().max_coeff_diff(&target) < 1e-8);
        assert!(cert.gram.min_eigenvalue().unwrap() >= -1e-8);
    }

    #[test]
    fn certificate_degree_is_checked() {
        let target = Poly::term(Monomial::from_vars(vec![0, 0, 0, 0]), 1.0);
        assert!(matches!(
            solve_sos_cert(&target, 1, &opts()),
            Err(Error::DegreeExceeded { .. })
        ));
    }
}
