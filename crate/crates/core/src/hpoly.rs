//! Finite linear combinations of the monomials h_{i,j}(x) = x^i (1-x)^j.
//! These carry the moment expansions P_t h_{n,p} and the smoother's backward
//! functions.

use std::collections::BTreeMap;

use crate::mixture::LatticeIndex;
use crate::scalar::{KahanSum, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct HPolynomial<T> {
    terms: BTreeMap<LatticeIndex, T>,
}

impl<T: Real> Default for HPolynomial<T> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<T: Real> HPolynomial<T> {
    pub fn zero() -> Self {
        Self {
            terms: BTreeMap::new(),
        }
    }

    /// The constant polynomial 1 = h_{0,0}.
    pub fn one() -> Self {
        let mut p = Self::zero();
        p.add_term(LatticeIndex::ORIGIN, T::one());
        p
    }

    pub fn add_term(&mut self, idx: LatticeIndex, coeff: T) {
        *self.terms.entry(idx).or_insert_with(T::zero) += coeff;
    }

    pub fn coeff(&self, idx: LatticeIndex) -> T {
        self.terms.get(&idx).copied().unwrap_or_else(T::zero)
    }

    pub fn iter(&self) -> impl Iterator<Item = (LatticeIndex, T)> + '_ {
        self.terms.iter().map(|(&k, &v)| (k, v))
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Largest i + j over the support.
    pub fn degree(&self) -> usize {
        self.terms.keys().map(LatticeIndex::depth).max().unwrap_or(0)
    }

    pub fn scale(&mut self, factor: T) {
        for c in self.terms.values_mut() {
            *c = *c * factor;
        }
    }

    /// Multiply by the monomial h_{a,b}: a pure index shift.
    pub fn shifted(&self, a: usize, b: usize) -> Self {
        let mut out = Self::zero();
        for (idx, c) in self.iter() {
            out.add_term(idx.shifted(a, b), c);
        }
        out
    }

    pub fn max_abs_coeff(&self) -> T {
        self.terms
            .values()
            .fold(T::zero(), |m, c| m.max(c.abs()))
    }

    /// Drop terms with |coeff| below `rel` times the largest coefficient.
    pub fn prune_relative(&mut self, rel: T) {
        let cutoff = self.max_abs_coeff() * rel;
        self.terms.retain(|_, c| c.abs() >= cutoff);
    }

    pub fn eval(&self, x: T) -> T {
        let mut acc = KahanSum::default();
        for (idx, c) in self.iter() {
            acc.add(c * x.powi(idx.i as i32) * (T::one() - x).powi(idx.j as i32));
        }
        acc.value()
    }
}
