//! Sparse multivariate polynomials over the rationals in jet coordinates,
//! base variables, named parameters, and opaque base functions with formal
//! derivative tags.
//!
//! Expressions are kept in a unique canonical form (sorted monomials, no zero
//! coefficients), so equality of canonical forms is plain structural equality.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Exact rational coefficient type used throughout the crate.
pub type Rat = BigRational;

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_int(n: i64) -> Rat {
    Rat::from(BigInt::from(n))
}

/// A commutative multi-index: a sorted multiset of base-variable indices
/// (1-based). The empty multi-index has order zero.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MultiIndex(Vec<u8>);

impl MultiIndex {
    pub fn empty() -> Self {
        MultiIndex(Vec::new())
    }

    /// Canonicalizes by sorting; entries are 1-based base-variable indices.
    pub fn new(mut entries: Vec<u8>) -> Self {
        entries.sort_unstable();
        MultiIndex(entries)
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[u8] {
        &self.0
    }

    /// Multiplication of multi-indices: disjoint union of the multisets, so
    /// |ab| = |a| + |b|.
    pub fn concat(&self, other: &MultiIndex) -> MultiIndex {
        let mut v = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            if self.0[i] <= other.0[j] {
                v.push(self.0[i]);
                i += 1;
            } else {
                v.push(other.0[j]);
                j += 1;
            }
        }
        v.extend_from_slice(&self.0[i..]);
        v.extend_from_slice(&other.0[j..]);
        MultiIndex(v)
    }

    pub fn push(&self, i: u8) -> MultiIndex {
        let pos = self.0.partition_point(|&e| e <= i);
        let mut v = self.0.clone();
        v.insert(pos, i);
        MultiIndex(v)
    }

    pub fn min_entry(&self) -> Option<u8> {
        self.0.first().copied()
    }

    /// Multiset difference `self \ other` when `other` is contained in `self`.
    pub fn try_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        let mut v = self.0.clone();
        for &e in &other.0 {
            let pos = v.iter().position(|&x| x == e)?;
            v.remove(pos);
        }
        Some(MultiIndex(v))
    }

    pub fn count(&self, i: u8) -> usize {
        self.0.iter().filter(|&&e| e == i).count()
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// A jet coordinate u^dep_idx. `dep` is the 1-based index of the dependent
/// variable; `idx` the (canonicalized) derivative multi-index. Two jet
/// variables are equal iff dep and canonical multi-index agree.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct JetVar {
    pub dep: u8,
    pub idx: MultiIndex,
}

impl JetVar {
    pub fn new(dep: u8, idx: MultiIndex) -> Self {
        JetVar { dep, idx }
    }

    pub fn base(dep: u8) -> Self {
        JetVar {
            dep,
            idx: MultiIndex::empty(),
        }
    }

    pub fn order(&self) -> usize {
        self.idx.order()
    }

    /// The image of this variable under the total derivative D_i.
    pub fn derive(&self, i: u8) -> JetVar {
        JetVar {
            dep: self.dep,
            idx: self.idx.push(i),
        }
    }
}

/// Fixed canonical order on jet variables: graded by |sigma|, then dependent
/// index, then the sorted multi-index lexicographically. Rankings used for
/// leader selection live in `system::Ranking`; this order only pins canonical
/// forms.
impl Ord for JetVar {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.idx
            .order()
            .cmp(&other.idx.order())
            .then_with(|| self.dep.cmp(&other.dep))
            .then_with(|| self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for JetVar {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for JetVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}_{:?}", self.dep, self.idx)
    }
}

/// An opaque given function of base variables with a formal derivative tag.
/// `deps` is a bitmask of the 1-based base-variable indices the function
/// depends on; total derivatives in other directions vanish.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BaseFunc {
    pub name: Arc<str>,
    pub deriv: MultiIndex,
    pub deps: u16,
}

impl BaseFunc {
    pub fn new(name: &str, deriv: MultiIndex, deps: u16) -> Self {
        BaseFunc {
            name: name.into(),
            deriv,
            deps,
        }
    }

    pub fn depends_on(&self, i: u8) -> bool {
        self.deps & (1 << (i - 1)) != 0
    }

    pub fn derive(&self, i: u8) -> Option<BaseFunc> {
        if self.depends_on(i) {
            Some(BaseFunc {
                name: self.name.clone(),
                deriv: self.deriv.push(i),
                deps: self.deps,
            })
        } else {
            None
        }
    }
}

impl fmt::Debug for BaseFunc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}^{:?}", self.name, self.deriv)
    }
}

/// An atomic symbol the polynomial ring is built over.
///
/// The `Ord` on atoms makes jet variables compare above base variables,
/// functions, and parameters, so leading monomials are dominated by jet
/// content.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Atom {
    /// A named parameter (nonzero constant such as a viscosity).
    Param(Arc<str>),
    /// An opaque base function with formal derivative tag.
    Func(BaseFunc),
    /// A base (independent) variable, 1-based.
    Base(u8),
    /// A jet coordinate.
    Jet(JetVar),
}

impl Atom {
    pub fn param(name: &str) -> Atom {
        Atom::Param(name.into())
    }

    pub fn jet(&self) -> Option<&JetVar> {
        match self {
            Atom::Jet(v) => Some(v),
            _ => None,
        }
    }
}

/// A monomial: atoms with positive exponents, sorted by atom.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Monomial(Vec<(Atom, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn var(a: Atom) -> Self {
        Monomial(vec![(a, 1)])
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn factors(&self) -> &[(Atom, u32)] {
        &self.0
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out: Vec<(Atom, u32)> = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].0.cmp(&other.0[j].0) {
                std::cmp::Ordering::Less => {
                    out.push(self.0[i].clone());
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(other.0[j].clone());
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push((self.0[i].0.clone(), self.0[i].1 + other.0[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&other.0[j..]);
        Monomial(out)
    }

    pub fn degree_of(&self, a: &Atom) -> u32 {
        self.0.iter().find(|(b, _)| b == a).map_or(0, |(_, e)| *e)
    }

    /// Removes `a^e` from the monomial; `e` must not exceed the present degree.
    pub fn without(&self, a: &Atom, e: u32) -> Monomial {
        let mut v = self.0.clone();
        if let Some(pos) = v.iter().position(|(b, _)| b == a) {
            if v[pos].1 > e {
                v[pos].1 -= e;
            } else {
                v.remove(pos);
            }
        }
        Monomial(v)
    }

    /// Maximum jet order among the atoms, or None if jet-free.
    pub fn max_jet_order(&self) -> Option<usize> {
        self.0
            .iter()
            .filter_map(|(a, _)| a.jet().map(|v| v.order()))
            .max()
    }

    pub fn has_jet(&self) -> bool {
        self.0.iter().any(|(a, _)| matches!(a, Atom::Jet(_)))
    }

    pub fn has_func(&self) -> bool {
        self.0.iter().any(|(a, _)| matches!(a, Atom::Func(_)))
    }

    /// True if every atom is a parameter.
    pub fn params_only(&self) -> bool {
        self.0.iter().all(|(a, _)| matches!(a, Atom::Param(_)))
    }
}

/// A sparse polynomial in canonical form: a map from monomials to nonzero
/// rational coefficients.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Expr {
    terms: BTreeMap<Monomial, Rat>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExprError {
    #[error("cyclic substitution through symbol {0}")]
    CyclicSubstitution(String),
}

impl Expr {
    pub fn zero() -> Expr {
        Expr::default()
    }

    pub fn one() -> Expr {
        Expr::constant(Rat::one())
    }

    pub fn constant(c: Rat) -> Expr {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(Monomial::one(), c);
        }
        Expr { terms }
    }

    pub fn int(n: i64) -> Expr {
        Expr::constant(rat_int(n))
    }

    pub fn atom(a: Atom) -> Expr {
        let mut terms = BTreeMap::new();
        terms.insert(Monomial::var(a), Rat::one());
        Expr { terms }
    }

    pub fn jet(v: JetVar) -> Expr {
        Expr::atom(Atom::Jet(v))
    }

    pub fn base(i: u8) -> Expr {
        Expr::atom(Atom::Base(i))
    }

    pub fn param(name: &str) -> Expr {
        Expr::atom(Atom::param(name))
    }

    pub fn func(f: BaseFunc) -> Expr {
        Expr::atom(Atom::Func(f))
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (Monomial, Rat)>) -> Expr {
        let mut out = BTreeMap::new();
        for (m, c) in terms {
            if c.is_zero() {
                continue;
            }
            match out.entry(m) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(c);
                }
                std::collections::btree_map::Entry::Occupied(mut e) => {
                    let s = e.get() + &c;
                    if s.is_zero() {
                        e.remove();
                    } else {
                        *e.get_mut() = s;
                    }
                }
            }
        }
        Expr { terms: out }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Rat)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// True if the expression is a rational constant (including zero).
    pub fn as_constant(&self) -> Option<Rat> {
        if self.terms.is_empty() {
            return Some(Rat::zero());
        }
        if self.terms.len() == 1 {
            let (m, c) = self.terms.iter().next().unwrap();
            if m.is_one() {
                return Some(c.clone());
            }
        }
        None
    }

    /// True if no monomial contains a jet variable.
    pub fn jet_free(&self) -> bool {
        self.terms.keys().all(|m| !m.has_jet())
    }

    /// True if every monomial is built from parameters only (constants allowed).
    pub fn params_only(&self) -> bool {
        self.terms.keys().all(|m| m.params_only())
    }

    pub fn has_func(&self) -> bool {
        self.terms.keys().any(|m| m.has_func())
    }

    /// Maximum jet order occurring, or None if jet-free.
    pub fn max_jet_order(&self) -> Option<usize> {
        self.terms.keys().filter_map(|m| m.max_jet_order()).max()
    }

    /// All distinct jet variables occurring.
    pub fn jet_vars(&self) -> Vec<JetVar> {
        let mut out: Vec<JetVar> = Vec::new();
        for m in self.terms.keys() {
            for (a, _) in m.factors() {
                if let Atom::Jet(v) = a {
                    if !out.contains(v) {
                        out.push(v.clone());
                    }
                }
            }
        }
        out.sort();
        out
    }

    /// All distinct atoms occurring.
    pub fn atoms(&self) -> Vec<Atom> {
        let mut out: Vec<Atom> = Vec::new();
        for m in self.terms.keys() {
            for (a, _) in m.factors() {
                if !out.contains(a) {
                    out.push(a.clone());
                }
            }
        }
        out.sort();
        out
    }

    pub fn add(&self, other: &Expr) -> Expr {
        let mut terms = self.terms.clone();
        for (m, c) in &other.terms {
            match terms.entry(m.clone()) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(c.clone());
                }
                std::collections::btree_map::Entry::Occupied(mut e) => {
                    let s = e.get() + c;
                    if s.is_zero() {
                        e.remove();
                    } else {
                        *e.get_mut() = s;
                    }
                }
            }
        }
        Expr { terms }
    }

    pub fn neg(&self) -> Expr {
        Expr {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c)).collect(),
        }
    }

    pub fn sub(&self, other: &Expr) -> Expr {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: &Rat) -> Expr {
        if c.is_zero() {
            return Expr::zero();
        }
        Expr {
            terms: self.terms.iter().map(|(m, k)| (m.clone(), k * c)).collect(),
        }
    }

    pub fn mul(&self, other: &Expr) -> Expr {
        let mut out: BTreeMap<Monomial, Rat> = BTreeMap::new();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                let m = m1.mul(m2);
                let c = c1 * c2;
                match out.entry(m) {
                    std::collections::btree_map::Entry::Vacant(e) => {
                        e.insert(c);
                    }
                    std::collections::btree_map::Entry::Occupied(mut e) => {
                        let s = e.get() + &c;
                        if s.is_zero() {
                            e.remove();
                        } else {
                            *e.get_mut() = s;
                        }
                    }
                }
            }
        }
        Expr { terms: out }
    }

    pub fn pow(&self, n: u32) -> Expr {
        let mut out = Expr::one();
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }

    /// Re-normalizes (idempotent by construction; exists for the property
    /// tests that pin canonicalization).
    pub fn normalize(&self) -> Expr {
        Expr::from_terms(self.terms.iter().map(|(m, c)| (m.clone(), c.clone())))
    }

    /// Standard polynomial partial derivative with respect to an atom,
    /// treating distinct canonical atoms as independent variables.
    pub fn partial(&self, a: &Atom) -> Expr {
        let mut out: Vec<(Monomial, Rat)> = Vec::new();
        for (m, c) in &self.terms {
            let d = m.degree_of(a);
            if d == 0 {
                continue;
            }
            out.push((m.without(a, 1), c * Rat::from(BigInt::from(d))));
        }
        Expr::from_terms(out)
    }

    /// Total derivative D_i: base variables differentiate to 1, jet variables
    /// shift their multi-index, base functions gain a formal derivative (zero
    /// if they do not depend on direction i), parameters die.
    pub fn total_derivative(&self, i: u8) -> Expr {
        let mut out = Expr::zero();
        for (m, c) in &self.terms {
            for (pos, (a, e)) in m.factors().iter().enumerate() {
                let da = match a {
                    Atom::Base(j) => {
                        if *j == i {
                            Some(Expr::one())
                        } else {
                            None
                        }
                    }
                    Atom::Jet(v) => Some(Expr::jet(v.derive(i))),
                    Atom::Func(f) => f.derive(i).map(Expr::func),
                    Atom::Param(_) => None,
                };
                let Some(da) = da else { continue };
                let _ = pos;
                let rest = m.without(a, 1);
                let coeff = c * Rat::from(BigInt::from(*e));
                let term = Expr::from_terms([(rest, coeff)]).mul(&da);
                out = out.add(&term);
            }
        }
        out
    }

    /// Iterated total derivative D_alpha.
    pub fn total_derivative_multi(&self, alpha: &MultiIndex) -> Expr {
        let mut out = self.clone();
        for &i in alpha.entries() {
            out = out.total_derivative(i);
        }
        out
    }

    /// Coefficient of the first power of a jet variable, and the degree in it.
    pub fn coeff_and_degree(&self, v: &JetVar) -> (Expr, u32) {
        let a = Atom::Jet(v.clone());
        let mut coeff: Vec<(Monomial, Rat)> = Vec::new();
        let mut deg = 0;
        for (m, c) in &self.terms {
            let d = m.degree_of(&a);
            deg = deg.max(d);
            if d == 1 {
                coeff.push((m.without(&a, 1), c.clone()));
            }
        }
        (Expr::from_terms(coeff), deg)
    }

    /// Simultaneous substitution of atoms by expressions, then renormalization.
    ///
    /// Base-function keys rewrite with derivative closure: an assignment for
    /// f with derivative tag sigma also rewrites occurrences f_{sigma.tau} to
    /// D_tau of the replacement (most specific key wins). Fails with
    /// `CyclicSubstitution` when an assigned symbol is reachable from its own
    /// replacement chain.
    pub fn substitute(&self, assignment: &Substitution) -> Result<Expr, ExprError> {
        assignment.check_acyclic()?;
        let mut out = Expr::zero();
        for (m, c) in &self.terms {
            let mut term = Expr::constant(c.clone());
            for (a, e) in m.factors() {
                let repl = assignment.lookup(a);
                let factor = match repl {
                    Some(r) => r,
                    None => Expr::atom(a.clone()),
                };
                term = term.mul(&factor.pow(*e));
            }
            out = out.add(&term);
        }
        Ok(out)
    }

    /// Splits into (part with at least one jet variable, jet-free part).
    pub fn split_jet(&self) -> (Expr, Expr) {
        let mut jet: Vec<(Monomial, Rat)> = Vec::new();
        let mut rest: Vec<(Monomial, Rat)> = Vec::new();
        for (m, c) in &self.terms {
            if m.has_jet() {
                jet.push((m.clone(), c.clone()));
            } else {
                rest.push((m.clone(), c.clone()));
            }
        }
        (Expr::from_terms(jet), Expr::from_terms(rest))
    }

    /// Canonical scaling for equations (zero sets): divides by the rational
    /// content and by any parameter monomial common to all terms, then makes
    /// the leading coefficient positive.
    pub fn canonical_equation(&self) -> Expr {
        if self.is_zero() {
            return Expr::zero();
        }
        // Rational content.
        let mut num_gcd = BigInt::zero();
        let mut den_lcm = BigInt::one();
        for c in self.terms.values() {
            num_gcd = bigint_gcd::gcd(num_gcd, c.numer().abs());
            den_lcm = bigint_gcd::lcm(den_lcm, c.denom().clone());
        }
        let content = Rat::new(num_gcd, den_lcm);
        let mut out = self.scale(&content.recip());
        // Common parameter-monomial factor.
        let mut common: Option<Vec<(Atom, u32)>> = None;
        for m in out.terms.keys() {
            let params: Vec<(Atom, u32)> = m
                .factors()
                .iter()
                .filter(|(a, _)| matches!(a, Atom::Param(_)))
                .cloned()
                .collect();
            common = Some(match common {
                None => params,
                Some(prev) => prev
                    .into_iter()
                    .filter_map(|(a, e)| {
                        params
                            .iter()
                            .find(|(b, _)| *b == a)
                            .map(|(_, e2)| (a, e.min(*e2)))
                    })
                    .collect(),
            });
            if common.as_ref().map_or(true, |c| c.is_empty()) {
                break;
            }
        }
        if let Some(common) = common {
            if !common.is_empty() {
                let terms = out
                    .terms
                    .iter()
                    .map(|(m, c)| {
                        let mut m2 = m.clone();
                        for (a, e) in &common {
                            m2 = m2.without(a, *e);
                        }
                        (m2, c.clone())
                    })
                    .collect::<Vec<_>>();
                out = Expr::from_terms(terms);
            }
        }
        // Sign: leading (largest) monomial coefficient positive.
        if let Some((_, c)) = out.terms.iter().next_back() {
            if c.is_negative() {
                out = out.neg();
            }
        }
        out
    }

    /// Leading monomial under the fixed canonical order.
    pub fn leading_monomial(&self) -> Option<&Monomial> {
        self.terms.keys().next_back()
    }
}

pub(crate) mod bigint_gcd {
    use num_bigint::BigInt;
    use num_traits::{Signed, Zero};

    pub fn gcd(a: BigInt, b: BigInt) -> BigInt {
        let (mut a, mut b) = (a.abs(), b.abs());
        while !b.is_zero() {
            let r = &a % &b;
            a = b;
            b = r;
        }
        a
    }

    pub fn lcm(a: BigInt, b: BigInt) -> BigInt {
        if a.is_zero() || b.is_zero() {
            return BigInt::zero();
        }
        let g = gcd(a.clone(), b.clone());
        (a / g) * b
    }
}

/// A simultaneous assignment for `Expr::substitute`.
#[derive(Clone, Debug, Default)]
pub struct Substitution {
    direct: BTreeMap<Atom, Expr>,
    /// Base-function rules keyed by (name, derivative tag); occurrences with a
    /// larger derivative tag rewrite to D_tau of the value.
    funcs: Vec<(BaseFunc, Expr)>,
}

impl Substitution {
    pub fn new() -> Self {
        Substitution::default()
    }

    pub fn insert(&mut self, a: Atom, value: Expr) {
        if let Atom::Func(f) = &a {
            self.funcs.push((f.clone(), value));
        } else {
            self.direct.insert(a, value);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.direct.is_empty() && self.funcs.is_empty()
    }

    fn lookup(&self, a: &Atom) -> Option<Expr> {
        if let Some(e) = self.direct.get(a) {
            return Some(e.clone());
        }
        if let Atom::Func(f) = a {
            // Most specific key (largest derivative tag contained in f.deriv),
            // ties broken by smallest tag lexicographically.
            let mut best: Option<(&BaseFunc, &Expr, MultiIndex)> = None;
            for (key, value) in &self.funcs {
                if key.name != f.name {
                    continue;
                }
                let Some(tau) = f.deriv.try_sub(&key.deriv) else {
                    continue;
                };
                let better = match &best {
                    None => true,
                    Some((bk, _, _)) => {
                        key.deriv.order() > bk.deriv.order()
                            || (key.deriv.order() == bk.deriv.order() && key.deriv < bk.deriv)
                    }
                };
                if better {
                    best = Some((key, value, tau));
                }
            }
            if let Some((_, value, tau)) = best {
                return Some(value.total_derivative_multi(&tau));
            }
        }
        None
    }

    fn check_acyclic(&self) -> Result<(), ExprError> {
        // Keys depend on each other exactly when a key atom is rewritable by
        // the assignment and occurs in another key's value.
        let keys: Vec<Atom> = self
            .direct
            .keys()
            .cloned()
            .chain(self.funcs.iter().map(|(f, _)| Atom::Func(f.clone())))
            .collect();
        let values: Vec<&Expr> = self
            .direct
            .values()
            .chain(self.funcs.iter().map(|(_, v)| v))
            .collect();
        let n = keys.len();
        let mut adj = vec![Vec::new(); n];
        for (i, v) in values.iter().enumerate() {
            for a in v.atoms() {
                for (j, k) in keys.iter().enumerate() {
                    let hits = match (&a, k) {
                        (Atom::Func(fa), Atom::Func(fk)) => {
                            fa.name == fk.name && fa.deriv.try_sub(&fk.deriv).is_some()
                        }
                        _ => a == *k,
                    };
                    if hits {
                        adj[i].push(j);
                    }
                }
            }
        }
        // DFS cycle detection.
        let mut state = vec![0u8; n];
        fn dfs(u: usize, adj: &[Vec<usize>], state: &mut [u8]) -> bool {
            state[u] = 1;
            for &v in &adj[u] {
                if state[v] == 1 {
                    return true;
                }
                if state[v] == 0 && dfs(v, adj, state) {
                    return true;
                }
            }
            state[u] = 2;
            false
        }
        for i in 0..n {
            if state[i] == 0 && dfs(i, &adj, &mut state) {
                return Err(ExprError::CyclicSubstitution(format!("{:?}", keys[i])));
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in self.terms.iter().rev() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{}", c)?;
            for (a, e) in m.factors() {
                write!(f, "*{:?}", a)?;
                if *e > 1 {
                    write!(f, "^{}", e)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jv(dep: u8, idx: &[u8]) -> JetVar {
        JetVar::new(dep, MultiIndex::new(idx.to_vec()))
    }

    #[test]
    fn multi_index_concat_adds_orders() {
        let a = MultiIndex::new(vec![2, 1]);
        let b = MultiIndex::new(vec![1]);
        let c = a.concat(&b);
        assert_eq!(c.order(), 3);
        assert_eq!(c.entries(), &[1, 1, 2]);
    }

    #[test]
    fn jetvar_identified_under_permutation() {
        assert_eq!(jv(1, &[1, 2]), jv(1, &[2, 1]));
    }

    #[test]
    fn partial_linear_coefficient() {
        // partial(u_x - u, u_x) = 1
        let f = Expr::jet(jv(1, &[1])).sub(&Expr::jet(jv(1, &[])));
        let d = f.partial(&Atom::Jet(jv(1, &[1])));
        assert_eq!(d, Expr::one());
    }

    #[test]
    fn partial_product_rule() {
        // partial(u1 * u1_x, u1_x) = u1
        let f = Expr::jet(jv(1, &[])).mul(&Expr::jet(jv(1, &[1])));
        let d = f.partial(&Atom::Jet(jv(1, &[1])));
        assert_eq!(d, Expr::jet(jv(1, &[])));
    }

    #[test]
    fn partial_of_constant_is_zero() {
        assert!(Expr::int(7).partial(&Atom::Jet(jv(1, &[]))).is_zero());
    }

    #[test]
    fn total_derivative_of_ut_minus_u() {
        // D_t(u_t - u) = u_tt - u_t  (t is base index 1 here)
        let f = Expr::jet(jv(1, &[1])).sub(&Expr::jet(jv(1, &[])));
        let d = f.total_derivative(1);
        let expect = Expr::jet(jv(1, &[1, 1])).sub(&Expr::jet(jv(1, &[1])));
        assert_eq!(d, expect);
    }

    #[test]
    fn total_derivative_of_constant_vanishes() {
        assert!(Expr::int(5).total_derivative(1).is_zero());
    }

    #[test]
    fn total_derivatives_commute_on_product() {
        // D_1 D_2 f = D_2 D_1 f for f = u * u_{x1}
        let f = Expr::jet(jv(1, &[])).mul(&Expr::jet(jv(1, &[1])));
        let a = f.total_derivative(1).total_derivative(2);
        let b = f.total_derivative(2).total_derivative(1);
        assert_eq!(a, b);
    }

    #[test]
    fn base_func_formal_derivative_respects_deps() {
        // f depends on base var 1 only
        let f = BaseFunc::new("p", MultiIndex::empty(), 0b01);
        let e = Expr::func(f);
        assert!(!e.total_derivative(1).is_zero());
        assert!(e.total_derivative(2).is_zero());
    }

    #[test]
    fn substitute_on_shell() {
        // substitute(u_t - u, {u_t -> u}) = 0
        let f = Expr::jet(jv(1, &[1])).sub(&Expr::jet(jv(1, &[])));
        let mut s = Substitution::new();
        s.insert(Atom::Jet(jv(1, &[1])), Expr::jet(jv(1, &[])));
        assert!(f.substitute(&s).unwrap().is_zero());
    }

    #[test]
    fn substitute_empty_is_identity() {
        let f = Expr::jet(jv(1, &[1])).mul(&Expr::jet(jv(2, &[2, 1])));
        assert_eq!(f.substitute(&Substitution::new()).unwrap(), f);
    }

    #[test]
    fn substitute_func_with_derivative_closure() {
        // p_{,1} -> -q; then occurrence p_{,12} -> -q_{,2}
        let p1 = BaseFunc::new("p", MultiIndex::new(vec![1]), 0b11);
        let q = BaseFunc::new("q", MultiIndex::empty(), 0b11);
        let mut s = Substitution::new();
        s.insert(Atom::Func(p1.clone()), Expr::func(q.clone()).neg());
        let p12 = BaseFunc::new("p", MultiIndex::new(vec![1, 2]), 0b11);
        let got = Expr::func(p12).substitute(&s).unwrap();
        let expect = Expr::func(BaseFunc::new("q", MultiIndex::new(vec![2]), 0b11)).neg();
        assert_eq!(got, expect);
    }

    #[test]
    fn substitute_detects_cycle() {
        let u = Atom::Jet(jv(1, &[]));
        let v = Atom::Jet(jv(2, &[]));
        let mut s = Substitution::new();
        s.insert(u.clone(), Expr::atom(v.clone()));
        s.insert(v, Expr::atom(u));
        let f = Expr::atom(Atom::Jet(jv(1, &[])));
        assert!(matches!(
            f.substitute(&s),
            Err(ExprError::CyclicSubstitution(_))
        ));
    }

    #[test]
    fn canonical_equation_strips_content_and_params() {
        // 2*nu*u_x + 4*nu*u  ->  u_x + 2 u
        let nu = Expr::param("nu");
        let f = nu
            .mul(&Expr::jet(jv(1, &[1])))
            .scale(&rat_int(2))
            .add(&nu.mul(&Expr::jet(jv(1, &[]))).scale(&rat_int(4)));
        let c = f.canonical_equation();
        let expect = Expr::jet(jv(1, &[1])).add(&Expr::jet(jv(1, &[])).scale(&rat_int(2)));
        assert_eq!(c, expect);
    }
}
