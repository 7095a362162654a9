//! Symbol, prolonged symbol, and restricted symbol matrices of a system, with
//! exact generic-rank computation, g-dimensions, and the vector-bundle and
//! quasi-regular-basis tests.

use crate::expr::{Atom, Expr, JetVar, MultiIndex, Rat, Substitution};
use crate::jetgeom::{dim_sym, dim_sym_restricted, enumerate_jet_coords};
use crate::linalg::RatMatrix;
use crate::system::{solved_form_opts, PdeSystem, Ranking, SysError};
use num_traits::{One, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SymbolError {
    #[error("unbound symbol {0} in point evaluation")]
    UnboundSymbol(String),
    #[error(transparent)]
    Sys(#[from] SysError),
}

/// The matrix of top-order coefficients of (a prolongation of) a system.
///
/// Columns index the order-(k+l) jet coordinates (optionally restricted to
/// directions > j); rows index (equation, multi-index alpha) pairs with
/// |alpha| = l; entries are d(D_alpha Phi^h)/d(u^j_sigma).
#[derive(Clone, Debug)]
pub struct SymbolMatrix {
    pub columns: Vec<JetVar>,
    /// (equation index, alpha) per row.
    pub rows: Vec<(usize, MultiIndex)>,
    pub entries: Vec<Vec<Expr>>,
    pub system_order: usize,
    pub level: usize,
    pub restriction: Option<usize>,
}

impl SymbolMatrix {
    fn build(sys: &PdeSystem, l: usize, restriction: Option<usize>) -> SymbolMatrix {
        let k = sys.order();
        let columns = enumerate_jet_coords(&sys.bundle, k + l, restriction);
        assert_eq!(
            columns.len(),
            sys.bundle.e() * dim_sym_restricted(sys.bundle.m(), k + l, restriction.unwrap_or(0)),
            "column count must match the closed form"
        );
        let mut alphas: Vec<MultiIndex> = Vec::new();
        let m = sys.bundle.m() as u8;
        let mut cur: Vec<u8> = Vec::new();
        fn rec(out: &mut Vec<MultiIndex>, cur: &mut Vec<u8>, next: u8, m: u8, left: usize) {
            if left == 0 {
                out.push(MultiIndex::new(cur.clone()));
                return;
            }
            for i in next..=m {
                cur.push(i);
                rec(out, cur, i, m, left - 1);
                cur.pop();
            }
        }
        rec(&mut alphas, &mut cur, 1, m, l);
        assert_eq!(alphas.len(), dim_sym(sys.bundle.m(), l));
        let mut rows = Vec::new();
        let mut entries = Vec::new();
        for (h, eq) in sys.equations().iter().enumerate() {
            for alpha in &alphas {
                let prolonged = eq.total_derivative_multi(alpha);
                let mut row = Vec::with_capacity(columns.len());
                for col in &columns {
                    row.push(prolonged.partial(&Atom::Jet(col.clone())));
                }
                // Entries only involve jet variables of order <= k: the
                // top-order dependence of D_alpha Phi comes from the order-k
                // coefficients of Phi.
                debug_assert!(row
                    .iter()
                    .all(|e| e.max_jet_order().unwrap_or(0) <= k));
                rows.push((h, alpha.clone()));
                entries.push(row);
            }
        }
        SymbolMatrix {
            columns,
            rows,
            entries,
            system_order: k,
            level: l,
            restriction,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    /// All free symbols occurring in entries.
    pub fn symbols(&self) -> Vec<Atom> {
        let mut out: Vec<Atom> = Vec::new();
        for row in &self.entries {
            for e in row {
                for a in e.atoms() {
                    if !out.contains(&a) {
                        out.push(a);
                    }
                }
            }
        }
        out.sort();
        out
    }

    fn evaluate(&self, assignment: &Substitution) -> Result<RatMatrix, SymbolError> {
        let mut rows = Vec::with_capacity(self.entries.len());
        for row in &self.entries {
            let mut out = Vec::with_capacity(row.len());
            for e in row {
                let v = e
                    .substitute(assignment)
                    .map_err(|err| SysError::Invalid(err.to_string()))?;
                match v.as_constant() {
                    Some(c) => out.push(c),
                    None => {
                        let a = v.atoms().into_iter().next().unwrap();
                        return Err(SymbolError::UnboundSymbol(format!("{:?}", a)));
                    }
                }
            }
            rows.push(out);
        }
        Ok(RatMatrix::from_rows(rows))
    }
}

/// The l = 0 symbol matrix: entries dPhi^h/du^j_sigma with |sigma| = k.
pub fn symbol_matrix(sys: &PdeSystem) -> SymbolMatrix {
    SymbolMatrix::build(sys, 0, None)
}

/// Prolonged symbol matrix: rows for all equations x all |alpha| = l.
pub fn prolonged_symbol_matrix(sys: &PdeSystem, l: usize) -> SymbolMatrix {
    SymbolMatrix::build(sys, l, None)
}

/// Restricted symbol matrix: columns limited to min(sigma) >= j+1.
pub fn restricted_symbol_matrix(sys: &PdeSystem, l: usize, j: usize) -> SymbolMatrix {
    SymbolMatrix::build(sys, l, Some(j))
}

/// How free symbols in symbol entries are evaluated for rank computation.
#[derive(Clone, Debug)]
pub enum EvalStrategy {
    /// Seeded nonzero rational draws; the rank is the maximum over trials.
    Generic { seed: u64, trials: usize },
    /// Pinned values for listed symbols; remaining symbols drawn from the
    /// seeded generator per trial. With `strict` set, any unpinned symbol is
    /// an error instead.
    AtPoint {
        assignment: BTreeMap<Atom, Rat>,
        seed: u64,
        trials: usize,
        strict: bool,
    },
}

impl Default for EvalStrategy {
    fn default() -> Self {
        EvalStrategy::Generic {
            seed: 42,
            trials: 5,
        }
    }
}

impl EvalStrategy {
    pub fn at_point(assignment: BTreeMap<Atom, Rat>) -> EvalStrategy {
        EvalStrategy::AtPoint {
            assignment,
            seed: 42,
            trials: 5,
            strict: false,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            EvalStrategy::Generic { seed, .. } => *seed,
            EvalStrategy::AtPoint { seed, .. } => *seed,
        }
    }

    pub fn trials(&self) -> usize {
        match self {
            EvalStrategy::Generic { trials, .. } => *trials,
            EvalStrategy::AtPoint { trials, .. } => *trials,
        }
    }
}

/// Nonzero rational with numerator and denominator in [1, 997], random signs
/// on the numerator.
fn draw_nonzero(rng: &mut ChaCha8Rng) -> Rat {
    let n = rng.gen_range(1..=997i64);
    let d = rng.gen_range(1..=997i64);
    let sign = if rng.gen_bool(0.5) { 1 } else { -1 };
    Rat::new((sign * n).into(), d.into())
}

#[derive(Clone, Debug)]
pub struct RankReport {
    pub rank: usize,
    pub per_trial: Vec<usize>,
    pub seed: u64,
}

/// Exact rank over the rationals of the evaluated matrix. Generic mode takes
/// the maximum over trials, Schwartz-Zippel style; per-trial seeds split
/// deterministically from the base seed.
pub fn rank(mat: &SymbolMatrix, strat: &EvalStrategy) -> Result<RankReport, SymbolError> {
    let symbols = mat.symbols();
    let (pinned, seed, trials, strict): (BTreeMap<Atom, Rat>, u64, usize, bool) = match strat {
        EvalStrategy::Generic { seed, trials } => (BTreeMap::new(), *seed, *trials, false),
        EvalStrategy::AtPoint {
            assignment,
            seed,
            trials,
            strict,
        } => (assignment.clone(), *seed, *trials, *strict),
    };
    if strict {
        for s in &symbols {
            if !pinned.contains_key(s) {
                return Err(SymbolError::UnboundSymbol(format!("{:?}", s)));
            }
        }
    }
    let trials = trials.max(1);
    let mut per_trial = Vec::with_capacity(trials);
    let mut best = 0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
        let mut sub = Substitution::new();
        for s in &symbols {
            let value = match pinned.get(s) {
                Some(v) => v.clone(),
                None => draw_nonzero(&mut rng),
            };
            sub.insert(s.clone(), Expr::constant(value));
        }
        let m = mat.evaluate(&sub)?;
        let r = m.rank();
        per_trial.push(r);
        best = best.max(r);
        if symbols.iter().all(|s| pinned.contains_key(s)) {
            // Fully pinned evaluation is deterministic; one trial suffices.
            break;
        }
    }
    Ok(RankReport {
        rank: best,
        per_trial,
        seed,
    })
}

/// dim g^{k+l} = e * dim S^{k+l} - rank(sigma^l).
pub fn g_dimension(
    sys: &PdeSystem,
    l: usize,
    strat: &EvalStrategy,
) -> Result<usize, SymbolError> {
    let mat = SymbolMatrix::build(sys, l, None);
    let r = rank(&mat, strat)?;
    Ok(sys.bundle.e() * dim_sym(sys.bundle.m(), sys.order() + l) - r.rank)
}

#[derive(Clone, Debug)]
pub struct QuasiRegularReport {
    /// dim g^{k+1}
    pub lhs: usize,
    /// dim g^k + sum_j dim g^{k,j}
    pub rhs: usize,
    pub holds: bool,
    pub g_k: usize,
    pub g_k1: usize,
    /// (j, restricted rank, dim g^{k,j}) for j = 1..m-1 in the tested order.
    pub per_j: Vec<(usize, usize, usize)>,
    /// Base order that satisfied the test, if the declared order failed and a
    /// permutation succeeded.
    pub succeeding_order: Option<Vec<u8>>,
}

/// Applies a base-coordinate permutation to every equation of the system.
fn permute_base(sys: &PdeSystem, perm: &[u8]) -> PdeSystem {
    // perm[new-1] = old: new coordinate i reads old coordinate perm[i-1].
    let mut old_to_new = vec![0u8; perm.len() + 1];
    for (new0, &old) in perm.iter().enumerate() {
        old_to_new[old as usize] = new0 as u8 + 1;
    }
    let map_idx = |idx: &MultiIndex| {
        MultiIndex::new(idx.entries().iter().map(|&i| old_to_new[i as usize]).collect())
    };
    let eqs = sys
        .equations()
        .iter()
        .map(|eq| {
            let terms: Vec<_> = eq
                .terms()
                .map(|(m, c)| {
                    let mut factors: Vec<(Atom, u32)> = Vec::new();
                    for (a, e) in m.factors() {
                        let a2 = match a {
                            Atom::Jet(v) => Atom::Jet(JetVar::new(v.dep, map_idx(&v.idx))),
                            Atom::Base(i) => Atom::Base(old_to_new[*i as usize]),
                            Atom::Func(f) => {
                                let mut deps = 0u16;
                                for i in 1..=perm.len() as u8 {
                                    if f.depends_on(i) {
                                        deps |= 1 << (old_to_new[i as usize] - 1);
                                    }
                                }
                                Atom::Func(crate::expr::BaseFunc::new(
                                    &f.name,
                                    map_idx(&f.deriv),
                                    deps,
                                ))
                            }
                            Atom::Param(_) => a.clone(),
                        };
                        factors.push((a2, *e));
                    }
                    let mono = factors
                        .into_iter()
                        .fold(crate::expr::Monomial::one(), |acc, (a, e)| {
                            let mut m = acc;
                            for _ in 0..e {
                                m = m.mul(&crate::expr::Monomial::var(a.clone()));
                            }
                            m
                        });
                    (mono, c.clone())
                })
                .collect();
            Expr::from_terms(terms)
        })
        .collect();
    PdeSystem::new(
        sys.bundle.clone(),
        eqs,
        Some(sys.order()),
        format!("{} (base order {:?})", sys.provenance, perm),
    )
    .expect("permutation preserves validity")
}

fn quasi_regular_once(
    sys: &PdeSystem,
    strat: &EvalStrategy,
) -> Result<QuasiRegularReport, SymbolError> {
    let m = sys.bundle.m();
    let e = sys.bundle.e();
    let k = sys.order();
    let g_k = g_dimension(sys, 0, strat)?;
    let g_k1 = g_dimension(sys, 1, strat)?;
    let mut per_j = Vec::new();
    let mut rhs = g_k;
    for j in 1..m {
        let mat = restricted_symbol_matrix(sys, 0, j);
        let r = rank(&mat, strat)?.rank;
        let dim = e * dim_sym_restricted(m, k, j) - r;
        per_j.push((j, r, dim));
        rhs += dim;
    }
    Ok(QuasiRegularReport {
        lhs: g_k1,
        rhs,
        holds: g_k1 == rhs,
        g_k,
        g_k1,
        per_j,
        succeeding_order: None,
    })
}

/// Tests dim g^{k+1} = dim g^k + sum_{j=1}^{m-1} dim g^{k,j} in the current
/// base order; on failure retries all base permutations (m <= 6).
pub fn quasi_regular_check(
    sys: &PdeSystem,
    strat: &EvalStrategy,
) -> Result<QuasiRegularReport, SymbolError> {
    let report = quasi_regular_once(sys, strat)?;
    if report.holds {
        return Ok(report);
    }
    let m = sys.bundle.m();
    if m <= 6 {
        let mut perm: Vec<u8> = (1..=m as u8).collect();
        let mut found: Option<(Vec<u8>, QuasiRegularReport)> = None;
        permutohedron_heap(&mut perm, &mut |p: &[u8]| {
            if found.is_some() {
                return;
            }
            let permuted = permute_base(sys, p);
            if let Ok(rep) = quasi_regular_once(&permuted, strat) {
                if rep.holds {
                    found = Some((p.to_vec(), rep));
                }
            }
        });
        if let Some((p, mut rep)) = found {
            rep.succeeding_order = Some(p);
            return Ok(rep);
        }
    }
    Ok(report)
}

/// Heap's algorithm, calling `f` on every permutation.
fn permutohedron_heap(items: &mut [u8], f: &mut impl FnMut(&[u8])) {
    let n = items.len();
    let mut c = vec![0usize; n];
    f(items);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            f(items);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

#[derive(Clone, Debug)]
pub struct VectorBundleReport {
    pub constant_rank: bool,
    pub generic_rank: usize,
    /// Probes whose prolonged-symbol rank or restricted ranks differ from the
    /// generic values, as printable assignments.
    pub witnesses: Vec<String>,
}

/// Samples on-shell points through the solved form (random parametric
/// coordinates, leaders computed through the rules) plus the all-zero
/// assignment, and compares symbol ranks against the generic ones.
pub fn vector_bundle_check(
    sys: &PdeSystem,
    ranking: &Ranking,
    strat: &EvalStrategy,
    samples: usize,
) -> Result<VectorBundleReport, SymbolError> {
    let ortho = solved_form_opts(sys, ranking, &Substitution::new(), false)?;
    let mat = prolonged_symbol_matrix(sys, 1);
    let generic = rank(&mat, strat)?.rank;
    let m = sys.bundle.m();
    let gen_restricted: Vec<usize> = (1..m)
        .map(|j| rank(&restricted_symbol_matrix(sys, 0, j), strat).map(|r| r.rank))
        .collect::<Result<_, _>>()?;
    let symbols = mat.symbols();
    let mut witnesses = Vec::new();
    let mut constant = true;

    let mut probe = |label: String,
                     assignment: &BTreeMap<Atom, Rat>|
     -> Result<(), SymbolError> {
        let strat_pt = EvalStrategy::AtPoint {
            assignment: assignment.clone(),
            seed: strat.seed(),
            trials: strat.trials(),
            strict: false,
        };
        let r = rank(&mat, &strat_pt)?.rank;
        let mut drop = r != generic;
        if drop {
            constant = false;
        }
        for (j, gr) in gen_restricted.iter().enumerate() {
            let rj = rank(&restricted_symbol_matrix(sys, 0, j + 1), &strat_pt)?.rank;
            if rj != *gr {
                drop = true;
            }
        }
        if drop {
            witnesses.push(label);
        }
        Ok(())
    };

    // The all-zero jet assignment: the degenerate candidate the examples use.
    let zero_assignment: BTreeMap<Atom, Rat> = symbols
        .iter()
        .filter(|a| matches!(a, Atom::Jet(_)))
        .map(|a| (a.clone(), Rat::zero()))
        .collect();
    if !zero_assignment.is_empty() {
        probe("zero jet section (u = 0)".to_string(), &zero_assignment)?;
    }

    // Random on-shell samples: free (non-leader) coordinates drawn, leaders
    // evaluated through the rules.
    for s in 0..samples {
        let mut rng = ChaCha8Rng::seed_from_u64(strat.seed().wrapping_add(1000 + s as u64));
        let mut assignment: BTreeMap<Atom, Rat> = BTreeMap::new();
        let mut point_sub = Substitution::new();
        // Draw everything that is not a leader.
        let leaders: Vec<JetVar> = ortho.rules.iter().map(|r| r.leader.clone()).collect();
        for a in &symbols {
            let is_leader = matches!(a, Atom::Jet(v) if leaders.contains(v));
            if !is_leader {
                let v = draw_nonzero(&mut rng);
                assignment.insert(a.clone(), v.clone());
                point_sub.insert(a.clone(), Expr::constant(v));
            }
        }
        // Leaders from the rules where possible (rule rhs may involve symbols
        // outside the matrix; those draw fresh values).
        for r in &ortho.rules {
            let a = Atom::Jet(r.leader.clone());
            if !symbols.contains(&a) {
                continue;
            }
            let mut val = ortho.reduce_algebraic(&r.rhs);
            val = val
                .substitute(&point_sub)
                .map_err(|e| SysError::Invalid(e.to_string()))?;
            let num = match val.as_constant() {
                Some(c) => {
                    let coeff = r
                        .coeff
                        .substitute(&point_sub)
                        .map_err(|e| SysError::Invalid(e.to_string()))?
                        .as_constant()
                        .unwrap_or_else(Rat::one);
                    c / coeff
                }
                None => draw_nonzero(&mut rng),
            };
            assignment.insert(a, num);
        }
        probe(format!("on-shell sample {}", s), &assignment)?;
    }

    Ok(VectorBundleReport {
        constant_rank: constant,
        generic_rank: generic,
        witnesses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::rat_int;
    use crate::jetgeom::BundleSpec;
    use std::sync::Arc;

    fn jv(dep: u8, idx: &[u8]) -> JetVar {
        JetVar::new(dep, MultiIndex::new(idx.to_vec()))
    }

    fn u(idx: &[u8]) -> Expr {
        Expr::jet(jv(1, idx))
    }

    fn ode() -> PdeSystem {
        let b = Arc::new(BundleSpec::new(vec!["x".into()], vec!["u".into()]));
        PdeSystem::new(b, vec![u(&[1]).sub(&u(&[]))], None, "ode").unwrap()
    }

    #[test]
    fn ode_symbol_is_one_by_one_identity() {
        let mat = symbol_matrix(&ode());
        assert_eq!(mat.n_rows(), 1);
        assert_eq!(mat.n_cols(), 1);
        assert_eq!(mat.entries[0][0], Expr::one());
        let r = rank(&mat, &EvalStrategy::default()).unwrap();
        assert_eq!(r.rank, 1);
    }

    #[test]
    fn ode_g_dimensions_vanish() {
        let s = ode();
        let strat = EvalStrategy::default();
        assert_eq!(g_dimension(&s, 0, &strat).unwrap(), 0);
        assert_eq!(g_dimension(&s, 1, &strat).unwrap(), 0);
    }

    #[test]
    fn ode_quasi_regular_trivially_holds() {
        let rep = quasi_regular_check(&ode(), &EvalStrategy::default()).unwrap();
        assert!(rep.holds);
        assert!(rep.per_j.is_empty());
    }

    #[test]
    fn prolonged_level_zero_matches_symbol() {
        let s = ode();
        let a = symbol_matrix(&s);
        let b = prolonged_symbol_matrix(&s, 0);
        assert_eq!(a.entries, b.entries);
        assert_eq!(a.columns, b.columns);
    }

    #[test]
    fn zero_operator_has_rank_zero() {
        let b = Arc::new(BundleSpec::new(vec!["x".into()], vec!["u".into()]));
        let s = PdeSystem::new(b, vec![u(&[]).sub(&u(&[]))], None, "zero").unwrap();
        // no equations survive dedup of the zero expression
        assert!(s.is_empty());
        let mat = symbol_matrix(&s);
        assert_eq!(rank(&mat, &EvalStrategy::default()).unwrap().rank, 0);
    }

    #[test]
    fn strict_at_point_errors_on_unbound() {
        // nonlinear system: entries contain u
        let b = Arc::new(BundleSpec::new(vec!["x".into()], vec!["u".into()]));
        let s = PdeSystem::new(b, vec![u(&[]).mul(&u(&[1]))], None, "nl").unwrap();
        let mat = symbol_matrix(&s);
        let strat = EvalStrategy::AtPoint {
            assignment: BTreeMap::new(),
            seed: 1,
            trials: 1,
            strict: true,
        };
        assert!(matches!(
            rank(&mat, &strat),
            Err(SymbolError::UnboundSymbol(_))
        ));
    }

    #[test]
    fn at_point_rank_bounded_by_generic() {
        let b = Arc::new(BundleSpec::new(vec!["x".into()], vec!["u".into()]));
        let s = PdeSystem::new(b, vec![u(&[]).mul(&u(&[1]))], None, "nl").unwrap();
        let mat = symbol_matrix(&s);
        let generic = rank(&mat, &EvalStrategy::default()).unwrap().rank;
        let mut at = BTreeMap::new();
        at.insert(Atom::Jet(jv(1, &[])), rat_int(0));
        let pt = rank(&mat, &EvalStrategy::at_point(at)).unwrap().rank;
        assert!(pt <= generic);
        assert_eq!(generic, 1);
        assert_eq!(pt, 0);
    }

    #[test]
    fn generic_rank_monotone_in_trials() {
        let b = Arc::new(BundleSpec::new(
            vec!["x".into(), "y".into()],
            vec!["u".into()],
        ));
        let s = PdeSystem::new(
            b,
            vec![u(&[1]).mul(&u(&[])), u(&[2]).mul(&u(&[]))],
            None,
            "nl",
        )
        .unwrap();
        let mat = symbol_matrix(&s);
        let mut prev = 0;
        for t in 1..=4 {
            let r = rank(
                &mat,
                &EvalStrategy::Generic {
                    seed: 7,
                    trials: t,
                },
            )
            .unwrap();
            assert!(r.rank >= prev);
            prev = r.rank;
        }
    }
}
