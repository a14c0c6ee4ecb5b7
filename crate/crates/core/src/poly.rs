//! Sparse multivariate polynomials and graded-lex monomial indexing.
//!
//! A monomial is stored as the sorted multiset of its variable indices, so
//! `x0² x3` is `[0, 0, 3]`. Ordering monomials first by degree and then by
//! that sorted list gives graded lexicographic order with `x0 > x1 > …`,
//! and the monomials of degree ≤ j always form a prefix of any index.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn var(i: usize) -> Self {
        Monomial(vec![i as u32])
    }

    pub fn from_vars(mut vars: Vec<u32>) -> Self {
        vars.sort_unstable();
        Monomial(vars)
    }

    /// Builds a monomial from an exponent vector.
    pub fn from_exponents(alpha: &[u32]) -> Self {
        let mut vars = Vec::new();
        for (i, &a) in alpha.iter().enumerate() {
            vars.extend(std::iter::repeat(i as u32).take(a as usize));
        }
        Monomial(vars)
    }

    pub fn exponents(&self, num_vars: usize) -> Vec<u32> {
        let mut alpha = vec![0; num_vars];
        for &v in &self.0 {
            alpha[v as usize] += 1;
        }
        alpha
    }

    pub fn vars(&self) -> &[u32] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    /// One past the largest variable index used (0 for the constant monomial).
    pub fn var_span(&self) -> usize {
        self.0.last().map_or(0, |&v| v as usize + 1)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                out.push(a[i]);
                i += 1;
            } else {
                out.push(b[j]);
                j += 1;
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Monomial(out)
    }

    /// `self / divisor` when `divisor` divides `self`.
    pub fn quotient(&self, divisor: &Monomial) -> Option<Monomial> {
        let mut out = Vec::with_capacity(self.0.len());
        let mut j = 0;
        for &v in &self.0 {
            if j < divisor.0.len() && divisor.0[j] == v {
                j += 1;
            } else if j < divisor.0.len() && divisor.0[j] < v {
                return None;
            } else {
                out.push(v);
            }
        }
        (j == divisor.0.len()).then_some(Monomial(out))
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.0.iter().map(|&v| point[v as usize]).product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        let mut first = true;
        let mut i = 0;
        while i < self.0.len() {
            let v = self.0[i];
            let mut power = 1;
            while i + power < self.0.len() && self.0[i + power] == v {
                power += 1;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            if power == 1 {
                write!(f, "x{v}")?;
            } else {
                write!(f, "x{v}^{power}")?;
            }
            i += power;
        }
        Ok(())
    }
}

/// `C(m + k, k)`, the number of monomials of degree ≤ k in m variables.
pub fn basis_size(m: usize, k: usize) -> Result<usize> {
    let overflow = || Error::CapacityExceeded {
        what: "monomial basis",
        size: usize::MAX,
        limit: usize::MAX,
    };
    // C(m+k, k) = Π_{i=1..k} (m+i)/i, exact at every step
    let mut acc: usize = 1;
    for i in 1..=k {
        let top = m.checked_add(i).ok_or_else(overflow)?;
        let g = gcd(acc, i);
        let (a, div) = (acc / g, i / g);
        let t = top / div;
        acc = a.checked_mul(t).ok_or_else(overflow)?;
    }
    Ok(acc)
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// A set of monomials in graded-lex order with O(1) lookup.
#[derive(Clone, Debug)]
pub struct MonomialIndex {
    num_vars: usize,
    monomials: Vec<Monomial>,
    lookup: HashMap<Monomial, usize>,
}

impl MonomialIndex {
    /// All monomials of degree ≤ k in m variables. Fails when there are more than `cap`.
    pub fn dense(num_vars: usize, max_degree: usize, cap: usize) -> Result<Self> {
        let size = basis_size(num_vars, max_degree)?;
        if size > cap {
            return Err(Error::CapacityExceeded {
                what: "monomial basis",
                size,
                limit: cap,
            });
        }
        let mut monomials = Vec::with_capacity(size);
        let mut buf = Vec::new();
        for deg in 0..=max_degree {
            push_sorted_sequences(num_vars as u32, deg, 0, &mut buf, &mut monomials);
        }
        Ok(Self::from_sorted(num_vars, monomials))
    }

    /// Sorts and deduplicates an arbitrary collection of monomials.
    pub fn from_monomials(num_vars: usize, monomials: impl IntoIterator<Item = Monomial>) -> Self {
        let mut monomials: Vec<Monomial> = monomials.into_iter().collect();
        monomials.sort_unstable();
        monomials.dedup();
        debug_assert!(monomials.iter().all(|m| m.var_span() <= num_vars));
        Self::from_sorted(num_vars, monomials)
    }

    fn from_sorted(num_vars: usize, monomials: Vec<Monomial>) -> Self {
        let lookup = monomials
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        MonomialIndex {
            num_vars,
            monomials,
            lookup,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn max_degree(&self) -> usize {
        self.monomials.last().map_or(0, Monomial::degree)
    }

    pub fn monomial(&self, i: usize) -> &Monomial {
        &self.monomials[i]
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    pub fn index_of(&self, m: &Monomial) -> Option<usize> {
        self.lookup.get(m).copied()
    }

    pub fn contains(&self, m: &Monomial) -> bool {
        self.lookup.contains_key(m)
    }

    pub fn exponents(&self, i: usize) -> Vec<u32> {
        self.monomials[i].exponents(self.num_vars)
    }

    pub fn index_of_exponents(&self, alpha: &[u32]) -> Option<usize> {
        if alpha.len() != self.num_vars {
            return None;
        }
        self.index_of(&Monomial::from_exponents(alpha))
    }

    /// Number of leading entries with degree ≤ j.
    pub fn prefix_len(&self, j: usize) -> usize {
        self.monomials.partition_point(|m| m.degree() <= j)
    }
}

fn push_sorted_sequences(
    num_vars: u32,
    remaining: usize,
    start: u32,
    buf: &mut Vec<u32>,
    out: &mut Vec<Monomial>,
) {
    if remaining == 0 {
        out.push(Monomial(buf.clone()));
        return;
    }
    for v in start..num_vars {
        buf.push(v);
        push_sorted_sequences(num_vars, remaining - 1, v, buf, out);
        buf.pop();
    }
}

/// Sparse polynomial with real coefficients; exact zeros are never stored.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Poly {
    terms: BTreeMap<Monomial, f64>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::term(Monomial::one(), c)
    }

    pub fn var(i: usize) -> Self {
        Self::term(Monomial::var(i), 1.0)
    }

    pub fn term(m: Monomial, c: f64) -> Self {
        let mut p = Poly::zero();
        p.add_term(m, c);
        p
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(m);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Degree of the highest term; the zero polynomial has degree 0.
    pub fn degree(&self) -> usize {
        self.terms.keys().next_back().map_or(0, Monomial::degree)
    }

    pub fn var_span(&self) -> usize {
        self.terms.keys().map(Monomial::var_span).max().unwrap_or(0)
    }

    pub fn scale(&self, s: f64) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in self.terms() {
            out.add_term(m.clone(), c * s);
        }
        out
    }

    pub fn add_scaled(&mut self, other: &Poly, s: f64) {
        for (m, c) in other.terms() {
            self.add_term(m.clone(), c * s);
        }
    }

    pub fn mul_monomial(&self, m: &Monomial) -> Poly {
        Poly {
            terms: self.terms.iter().map(|(t, &c)| (t.mul(m), c)).collect(),
        }
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        if self.var_span() > point.len() {
            return Err(Error::InvalidInput(format!(
                "polynomial uses {} variables, point has {}",
                self.var_span(),
                point.len()
            )));
        }
        Ok(self.terms().map(|(m, c)| c * m.eval(point)).sum())
    }

    /// Largest absolute coefficient difference.
    pub fn max_coeff_diff(&self, other: &Poly) -> f64 {
        let mut worst: f64 = 0.0;
        for (m, c) in self.terms() {
            worst = worst.max((c - other.coeff(m)).abs());
        }
        for (m, c) in other.terms() {
            if !self.terms.contains_key(m) {
                worst = worst.max(c.abs());
            }
        }
        worst
    }

    /// Euclidean norm of the coefficient vector.
    pub fn coeff_norm(&self) -> f64 {
        self.terms.values().map(|c| c * c).sum::<f64>().sqrt()
    }
}

impl Add for &Poly {
    type Output = Poly;

    fn add(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        out.add_scaled(rhs, 1.0);
        out
    }
}

impl Sub for &Poly {
    type Output = Poly;

    fn sub(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        out.add_scaled(rhs, -1.0);
        out
    }
}

impl Neg for &Poly {
    type Output = Poly;

    fn neg(self) -> Poly {
        self.scale(-1.0)
    }
}

impl Mul for &Poly {
    type Output = Poly;

    fn mul(self, rhs: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (a, ca) in self.terms() {
            for (b, cb) in rhs.terms() {
                out.add_term(a.mul(b), ca * cb);
            }
        }
        out
    }
}

macro_rules! forward_owned {
    ($tr:ident, $method:ident) => {
        impl $tr for Poly {
            type Output = Poly;

            fn $method(self, rhs: Poly) -> Poly {
                (&self).$method(&rhs)
            }
        }
    };
}

forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.terms().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            if m.is_one() {
                write!(f, "{c}")?;
            } else {
                write!(f, "{c}*{m}")?;
            }
        }
        Ok(())
    }
}
