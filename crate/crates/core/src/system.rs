//! PDE systems as zero loci of polynomial jet expressions: prolongation,
//! solved (orthonomic) form under a configurable ranking, reduction,
//! integrability-condition extraction, and iterative completion.

use crate::expr::{Atom, Expr, JetVar, MultiIndex, Substitution};
use crate::jetgeom::BundleSpec;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SysError {
    #[error("equation not solvable for a leader: {0}")]
    NotSolvable(String),
    #[error("system is inconsistent: reduction yields nonzero constant {0}")]
    Inconsistent(String),
    #[error("residual contains unbound base function {0}")]
    MissingBaseFunc(String),
    #[error("{0}")]
    Invalid(String),
}

/// An ordered system of equations Phi^h = 0 on the jets of a bundle.
#[derive(Clone, PartialEq, Eq)]
pub struct PdeSystem {
    pub bundle: Arc<BundleSpec>,
    order: usize,
    equations: Vec<Expr>,
    pub provenance: String,
}

impl PdeSystem {
    /// Order is the maximum jet order present unless overridden upward.
    pub fn new(
        bundle: Arc<BundleSpec>,
        equations: Vec<Expr>,
        order_override: Option<usize>,
        provenance: impl Into<String>,
    ) -> Result<Self, SysError> {
        let mut max_order = 0;
        for eq in &equations {
            for v in eq.jet_vars() {
                if v.dep as usize > bundle.e() {
                    return Err(SysError::Invalid(format!(
                        "dependent index {} out of range",
                        v.dep
                    )));
                }
                if v.idx.entries().iter().any(|&i| i as usize > bundle.m()) {
                    return Err(SysError::Invalid("base index out of range".into()));
                }
                max_order = max_order.max(v.order());
            }
        }
        let order = match order_override {
            Some(k) => {
                if k < max_order {
                    return Err(SysError::Invalid(format!(
                        "declared order {k} below present jet order {max_order}"
                    )));
                }
                k
            }
            None => max_order,
        };
        // Canonical dedup, preserving first occurrence.
        let mut seen = BTreeSet::new();
        let mut eqs = Vec::new();
        for eq in equations {
            if eq.is_zero() {
                continue;
            }
            let canon = eq.canonical_equation();
            if seen.insert(canon) {
                eqs.push(eq);
            }
        }
        Ok(PdeSystem {
            bundle,
            order,
            equations: eqs,
            provenance: provenance.into(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn equations(&self) -> &[Expr] {
        &self.equations
    }

    pub fn len(&self) -> usize {
        self.equations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equations.is_empty()
    }

    /// Canonical forms of all equations, as a set.
    pub fn canonical_set(&self) -> BTreeSet<Expr> {
        self.equations
            .iter()
            .map(|e| e.canonical_equation())
            .collect()
    }

    /// Prolongation: adjoins D_alpha Phi^h for all |alpha| <= l.
    pub fn prolong(&self, l: usize) -> PdeSystem {
        let m = self.bundle.m() as u8;
        let mut eqs = self.equations.clone();
        for eq in &self.equations {
            let mut level: Vec<(Expr, u8)> = vec![(eq.clone(), 1)];
            for _ in 0..l {
                let mut next = Vec::new();
                for (f, start) in &level {
                    for i in *start..=m {
                        let df = f.total_derivative(i);
                        if !df.is_zero() {
                            next.push((df, i));
                        }
                    }
                }
                eqs.extend(next.iter().map(|(f, _)| f.clone()));
                level = next;
            }
        }
        PdeSystem::new(
            self.bundle.clone(),
            eqs,
            Some(self.order + l),
            format!("{} (prolonged by {})", self.provenance, l),
        )
        .expect("prolongation preserves validity")
    }

    /// Order-saturation: adjoins every total-derivative image of a member that
    /// stays within the system order. The completed systems of the examples
    /// are presented in this form.
    pub fn saturate(&self) -> PdeSystem {
        let m = self.bundle.m() as u8;
        let k = self.order;
        let mut seen: BTreeSet<Expr> = self.canonical_set();
        let mut eqs = self.equations.clone();
        let mut queue: VecDeque<Expr> = self.equations.iter().cloned().collect();
        while let Some(f) = queue.pop_front() {
            for i in 1..=m {
                let df = f.total_derivative(i);
                if df.is_zero() {
                    continue;
                }
                if df.max_jet_order().unwrap_or(0) > k {
                    continue;
                }
                if seen.insert(df.canonical_equation()) {
                    eqs.push(df.clone());
                    queue.push_back(df);
                }
            }
        }
        PdeSystem::new(self.bundle.clone(), eqs, Some(k), self.provenance.clone())
            .expect("saturation preserves validity")
    }

    pub fn with_extra_equations(&self, extra: Vec<Expr>, provenance: String) -> PdeSystem {
        let mut eqs = self.equations.clone();
        eqs.extend(extra);
        let order = self.order.max(
            eqs.iter()
                .filter_map(|e| e.max_jet_order())
                .max()
                .unwrap_or(0),
        );
        PdeSystem::new(self.bundle.clone(), eqs, Some(order), provenance)
            .expect("extensions preserve validity")
    }
}

impl fmt::Debug for PdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "PdeSystem[{}] order {}:", self.provenance, self.order)?;
        for eq in &self.equations {
            writeln!(f, "  {:?} = 0", eq)?;
        }
        Ok(())
    }
}

/// Leader-selection ranking: graded lexicographic on (|sigma|, base-variable
/// priority, dependent index). `priority[0]` is the highest-priority base
/// direction; derivatives in it lead.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ranking {
    priority: Vec<u8>,
}

impl Ranking {
    /// Declaration order: base variable 1 has the highest priority.
    pub fn declaration_order(m: usize) -> Ranking {
        Ranking {
            priority: (1..=m as u8).collect(),
        }
    }

    pub fn from_priority(priority: Vec<u8>) -> Result<Ranking, SysError> {
        let m = priority.len();
        let mut seen = vec![false; m + 1];
        for &p in &priority {
            if p == 0 || p as usize > m || seen[p as usize] {
                return Err(SysError::Invalid("priority must be a permutation".into()));
            }
            seen[p as usize] = true;
        }
        Ok(Ranking { priority })
    }

    pub fn priority(&self) -> &[u8] {
        &self.priority
    }

    fn positions(&self, idx: &MultiIndex) -> Vec<usize> {
        let mut v: Vec<usize> = idx
            .entries()
            .iter()
            .map(|&i| self.priority.iter().position(|&p| p == i).unwrap_or(usize::MAX))
            .collect();
        v.sort_unstable();
        v
    }

    /// Greater means "ranks above" (is a better leader).
    pub fn cmp_jet(&self, a: &JetVar, b: &JetVar) -> std::cmp::Ordering {
        use std::cmp::Ordering::*;
        match a.order().cmp(&b.order()) {
            Less => return Less,
            Greater => return Greater,
            Equal => {}
        }
        // Smaller position vector = more high-priority directions = higher.
        match self.positions(&a.idx).cmp(&self.positions(&b.idx)) {
            Less => return Greater,
            Greater => return Less,
            Equal => {}
        }
        // Smaller dependent index ranks above.
        b.dep.cmp(&a.dep)
    }

    pub fn max_jet_var(&self, f: &Expr) -> Option<JetVar> {
        f.jet_vars()
            .into_iter()
            .max_by(|a, b| self.cmp_jet(a, b))
    }
}

/// A triangular rewrite rule coeff * leader = rhs with a parameter-only
/// nonzero initial coefficient.
#[derive(Clone, Debug)]
pub struct Rule {
    pub leader: JetVar,
    pub coeff: Expr,
    pub rhs: Expr,
}

impl Rule {
    pub fn as_equation(&self) -> Expr {
        Expr::jet(self.leader.clone()).mul(&self.coeff).sub(&self.rhs)
    }
}

/// Solved (orthonomic) form of a system: a triangular rewrite system plus the
/// residue classes that cannot form rules (inert nonlinear dependencies and
/// base-function-only relations).
#[derive(Clone, Debug)]
pub struct OrthonomicSystem {
    pub order: usize,
    pub ranking: Ranking,
    pub rules: Vec<Rule>,
    /// Elimination residues that are nonlinear in their leader (kept as member
    /// equations, never used for rewriting).
    pub inert: Vec<Expr>,
    /// Base-function-only residues: assumption candidates, not contradictions.
    pub assumptions: Vec<Expr>,
    /// Accepted base-function relations, applied before everything else.
    pub accepted: Substitution,
}

impl OrthonomicSystem {
    fn empty(order: usize, ranking: Ranking, accepted: Substitution) -> Self {
        OrthonomicSystem {
            order,
            ranking,
            rules: Vec::new(),
            inert: Vec::new(),
            assumptions: Vec::new(),
            accepted,
        }
    }

    fn find_rule_exact(&self, v: &JetVar) -> Option<usize> {
        self.rules.iter().position(|r| &r.leader == v)
    }

    /// Candidate rules rewriting `v` through a derivative image; only
    /// variables beyond the system order may be rewritten through images.
    fn find_rule_image(&self, v: &JetVar) -> Option<(usize, MultiIndex)> {
        let mut best: Option<(usize, MultiIndex)> = None;
        for (i, r) in self.rules.iter().enumerate() {
            if r.leader.dep != v.dep {
                continue;
            }
            let Some(tau) = v.idx.try_sub(&r.leader.idx) else {
                continue;
            };
            if tau.order() == 0 {
                return Some((i, tau));
            }
            if v.order() <= self.order {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bi, btau)) => {
                    use std::cmp::Ordering::*;
                    match tau.order().cmp(&btau.order()) {
                        Less => true,
                        Greater => false,
                        Equal => {
                            // Lower-ranked leader preferred, then rule index.
                            match self
                                .ranking
                                .cmp_jet(&self.rules[*bi].leader, &r.leader)
                            {
                                Greater => true,
                                Less => false,
                                Equal => i < *bi,
                            }
                        }
                    }
                }
            };
            if better {
                best = Some((i, tau));
            }
        }
        best
    }

    fn pseudo_reduce_once(&self, f: &Expr, v: &JetVar, coeff: &Expr, rhs: &Expr) -> Expr {
        let a = Atom::Jet(v.clone());
        let (_, deg) = f.coeff_and_degree(v);
        let mut out = Expr::zero();
        // f = sum_d c_d v^d  ->  sum_d c_d rhs^d coeff^(deg-d)
        let mut by_degree: BTreeMap<u32, Vec<(crate::expr::Monomial, crate::expr::Rat)>> =
            BTreeMap::new();
        for (m, c) in f.terms() {
            let d = m.degree_of(&a);
            by_degree
                .entry(d)
                .or_default()
                .push((m.without(&a, d), c.clone()));
        }
        for (d, terms) in by_degree {
            let part = Expr::from_terms(terms)
                .mul(&rhs.pow(d))
                .mul(&coeff.pow(deg - d));
            out = out.add(&part);
        }
        out
    }

    /// Algebraic normal form: rewrites only exact leader occurrences.
    pub fn reduce_algebraic(&self, f: &Expr) -> Expr {
        let mut cur = if self.accepted.is_empty() {
            f.clone()
        } else {
            f.substitute(&self.accepted).expect("accepted relations are acyclic")
        };
        loop {
            let mut target: Option<(JetVar, usize)> = None;
            for v in cur.jet_vars() {
                if let Some(i) = self.find_rule_exact(&v) {
                    let better = match &target {
                        None => true,
                        Some((tv, _)) => {
                            self.ranking.cmp_jet(&v, tv) == std::cmp::Ordering::Greater
                        }
                    };
                    if better {
                        target = Some((v, i));
                    }
                }
            }
            let Some((v, i)) = target else { break };
            let r = &self.rules[i];
            cur = self.pseudo_reduce_once(&cur, &v, &r.coeff, &r.rhs);
        }
        cur
    }

    /// Differential normal form: additionally rewrites derivative images of
    /// leaders, for variables of order beyond the system order.
    pub fn reduce(&self, f: &Expr) -> Expr {
        let mut cur = if self.accepted.is_empty() {
            f.clone()
        } else {
            f.substitute(&self.accepted).expect("accepted relations are acyclic")
        };
        loop {
            let mut target: Option<(JetVar, usize, MultiIndex)> = None;
            for v in cur.jet_vars() {
                if let Some((i, tau)) = self.find_rule_image(&v) {
                    let better = match &target {
                        None => true,
                        Some((tv, _, _)) => {
                            self.ranking.cmp_jet(&v, tv) == std::cmp::Ordering::Greater
                        }
                    };
                    if better {
                        target = Some((v, i, tau));
                    }
                }
            }
            let Some((v, i, tau)) = target else { break };
            let r = &self.rules[i];
            let rhs = r.rhs.total_derivative_multi(&tau);
            cur = self.pseudo_reduce_once(&cur, &v, &r.coeff, &rhs);
            if !self.accepted.is_empty() {
                cur = cur
                    .substitute(&self.accepted)
                    .expect("accepted relations are acyclic");
            }
        }
        cur
    }

    /// All member equations represented by this solved form.
    pub fn member_equations(&self) -> Vec<Expr> {
        self.rules
            .iter()
            .map(|r| r.as_equation())
            .chain(self.inert.iter().cloned())
            .collect()
    }
}

/// Nonzero jet-free residue classification.
fn classify_jet_free(nf: &Expr) -> JetFreeKind {
    use num_traits::Zero;
    if let Some(c) = nf.as_constant() {
        if !c.is_zero() {
            return JetFreeKind::Contradiction;
        }
        return JetFreeKind::Zero;
    }
    if nf.has_func() {
        return JetFreeKind::FuncRelation;
    }
    if nf.num_terms() == 1 && nf.params_only() {
        // A single parameter monomial: parameters are nonzero by convention.
        return JetFreeKind::Contradiction;
    }
    // Mixed parameter/base-variable relation; treated as assumption candidate.
    JetFreeKind::FuncRelation
}

enum JetFreeKind {
    Zero,
    Contradiction,
    FuncRelation,
}

/// Accepted assumption relations, turned into base-function rewrite rules.
///
/// Each relation must be jet-free and linearly solvable for its leading
/// base-function term with a parameter-only coefficient.
pub fn accepted_substitution(relations: &[Expr]) -> Result<Substitution, SysError> {
    let mut sub = Substitution::new();
    for rel in relations {
        if !rel.jet_free() {
            return Err(SysError::Invalid(format!(
                "accepted assumption must be jet-free: {:?}",
                rel
            )));
        }
        // Solve for a base-function term that appears alone, to the first
        // power, with a rational coefficient. Candidates are tried from the
        // largest atom down.
        let mut candidates: Vec<Atom> = Vec::new();
        for (m, _) in rel.terms() {
            if m.factors().len() == 1 && m.factors()[0].1 == 1 {
                if let (a @ Atom::Func(_), _) = &m.factors()[0] {
                    if !candidates.contains(a) {
                        candidates.push(a.clone());
                    }
                }
            }
        }
        candidates.sort();
        candidates.reverse();
        let mut solved = false;
        for target in candidates {
            let (coeff, deg) = match &target {
                Atom::Func(f) => {
                    let v = rel.clone();
                    let mut coeff = Expr::zero();
                    let mut max_deg = 0;
                    for (m, c) in v.terms() {
                        let d = m.degree_of(&target);
                        max_deg = max_deg.max(d);
                        if d == 1 && m.factors().len() == 1 {
                            coeff = coeff.add(&Expr::constant(c.clone()));
                        } else if d >= 1 {
                            // target multiplied by other symbols: not isolable
                            max_deg = max_deg.max(2);
                        }
                    }
                    let _ = f;
                    (coeff, max_deg)
                }
                _ => unreachable!(),
            };
            if deg != 1 {
                continue;
            }
            let Some(coeff_const) = coeff.as_constant() else {
                continue;
            };
            use num_traits::Zero;
            if coeff_const.is_zero() {
                continue;
            }
            // rel = coeff*target + rest = 0  =>  target = -rest/coeff
            let rest = rel.sub(&Expr::atom(target.clone()).scale(&coeff_const));
            let value = rest.scale(&(-coeff_const.recip()));
            sub.insert(target, value);
            solved = true;
            break;
        }
        if !solved {
            return Err(SysError::Invalid(format!(
                "accepted assumption has no isolable base-function term: {:?}",
                rel
            )));
        }
    }
    // Cycle check happens on first use; do it now for better errors.
    Expr::zero()
        .substitute(&sub)
        .map_err(|e| SysError::Invalid(e.to_string()))?;
    Ok(sub)
}

/// Triangularizes a system algebraically. In strict mode an equation that is
/// nonlinear in its leader (or has a non-parameter initial) is an error; in
/// lenient mode it is stashed as an inert member.
pub fn solved_form_opts(
    sys: &PdeSystem,
    ranking: &Ranking,
    accepted: &Substitution,
    strict: bool,
) -> Result<OrthonomicSystem, SysError> {
    let mut ortho = OrthonomicSystem::empty(sys.order(), ranking.clone(), accepted.clone());
    let mut queue: VecDeque<Expr> = sys.equations().iter().cloned().collect();
    let mut seen_assumptions: BTreeSet<Expr> = BTreeSet::new();
    let mut seen_inert: BTreeSet<Expr> = BTreeSet::new();
    while let Some(eq) = queue.pop_front() {
        let nf = ortho.reduce_algebraic(&eq);
        if nf.is_zero() {
            continue;
        }
        if nf.jet_free() {
            match classify_jet_free(&nf) {
                JetFreeKind::Zero => {}
                JetFreeKind::Contradiction => {
                    return Err(SysError::Inconsistent(format!("{:?}", nf)));
                }
                JetFreeKind::FuncRelation => {
                    let canon = nf.canonical_equation();
                    if seen_assumptions.insert(canon.clone()) {
                        ortho.assumptions.push(canon);
                    }
                }
            }
            continue;
        }
        let leader = ranking.max_jet_var(&nf).expect("jet-carrying");
        let (coeff, deg) = nf.coeff_and_degree(&leader);
        if deg != 1 || !coeff.params_only() || coeff.is_zero() {
            if strict {
                return Err(SysError::NotSolvable(format!("{:?}", nf)));
            }
            let canon = nf.canonical_equation();
            if seen_inert.insert(canon.clone()) {
                ortho.inert.push(canon);
            }
            continue;
        }
        // nf = coeff*leader + tail  =>  coeff*leader = -tail
        let tail = nf.sub(&Expr::jet(leader.clone()).mul(&coeff));
        let rule = Rule {
            leader,
            coeff,
            rhs: tail.neg(),
        };
        // Re-queue any existing rule or inert whose content the new rule touches.
        let mut kept = Vec::new();
        let mut requeue = Vec::new();
        for r in ortho.rules.drain(..) {
            let touches = r.rhs.jet_vars().contains(&rule.leader) || r.leader == rule.leader;
            if touches {
                requeue.push(r.as_equation());
            } else {
                kept.push(r);
            }
        }
        ortho.rules = kept;
        ortho.rules.push(rule);
        let mut kept_inert = Vec::new();
        for e in ortho.inert.drain(..) {
            if e.jet_vars().contains(&ortho.rules.last().unwrap().leader) {
                seen_inert.remove(&e);
                requeue.push(e);
            } else {
                kept_inert.push(e);
            }
        }
        ortho.inert = kept_inert;
        for e in requeue {
            queue.push_back(e);
        }
    }
    // Deterministic presentation: rules sorted by leader rank ascending.
    ortho
        .rules
        .sort_by(|a, b| ranking.cmp_jet(&a.leader, &b.leader));
    Ok(ortho)
}

/// Spec-strict solved form with the default accepted set.
pub fn solved_form(sys: &PdeSystem, ranking: &Ranking) -> Result<OrthonomicSystem, SysError> {
    solved_form_opts(sys, ranking, &Substitution::new(), true)
}

/// One integrability step: the new constraints of order <= k exposed by a
/// single prolongation, split into jet-carrying conditions and base-function
/// assumption candidates.
#[derive(Clone, Debug, Default)]
pub struct IntegrabilityStep {
    pub conditions: Vec<Expr>,
    pub candidates: Vec<Expr>,
}

pub fn integrability_step(
    sys: &PdeSystem,
    ranking: &Ranking,
    accepted: &Substitution,
) -> Result<IntegrabilityStep, SysError> {
    let k = sys.order();
    let ortho_k = solved_form_opts(sys, ranking, accepted, false)?;
    let prolonged = sys.prolong(1);
    let ortho_k1 = solved_form_opts(&prolonged, ranking, accepted, false)?;
    let members = sys.canonical_set();
    let mut step = IntegrabilityStep::default();
    let mut seen: BTreeSet<Expr> = BTreeSet::new();
    let mut harvest: Vec<Expr> = Vec::new();
    for r in &ortho_k1.rules {
        if r.leader.order() <= k {
            harvest.push(r.as_equation());
        }
    }
    for e in &ortho_k1.inert {
        if e.max_jet_order().unwrap_or(0) <= k {
            harvest.push(e.clone());
        }
    }
    for cand in harvest {
        let nf = ortho_k.reduce_algebraic(&cand);
        if nf.is_zero() {
            continue;
        }
        let canon = nf.canonical_equation();
        if members.contains(&canon) || !seen.insert(canon.clone()) {
            continue;
        }
        if nf.jet_free() {
            match classify_jet_free(&nf) {
                JetFreeKind::Zero => {}
                JetFreeKind::Contradiction => {
                    return Err(SysError::Inconsistent(format!("{:?}", nf)));
                }
                JetFreeKind::FuncRelation => step.candidates.push(canon),
            }
            continue;
        }
        // The base-function part of a mixed condition is an assumption
        // candidate in its own right.
        let (_, rest) = nf.split_jet();
        if !rest.is_zero() && rest.has_func() {
            let rc = rest.canonical_equation();
            if !step.candidates.contains(&rc) {
                step.candidates.push(rc);
            }
        }
        step.conditions.push(canon);
    }
    // Function-only residues found while solving either system are candidates
    // too (they are constraints on the given data, not contradictions).
    for a in ortho_k.assumptions.iter().chain(ortho_k1.assumptions.iter()) {
        if !step.candidates.contains(a) {
            step.candidates.push(a.clone());
        }
    }
    Ok(step)
}

/// Spec operation: the jet-carrying integrability conditions.
pub fn integrability_conditions(sys: &PdeSystem, ranking: &Ranking) -> Result<Vec<Expr>, SysError> {
    // Honors the strict solvability precondition.
    solved_form(sys, ranking)?;
    Ok(integrability_step(sys, ranking, &Substitution::new())?.conditions)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CompletionStatus {
    Completed,
    Inconsistent,
    IterationCap,
}

#[derive(Clone, Debug)]
pub struct CompletionResult {
    pub system: PdeSystem,
    pub trail: Vec<Vec<Expr>>,
    pub candidates: Vec<Expr>,
    pub status: CompletionStatus,
}

/// Repeatedly adjoins integrability conditions (order-saturating each round)
/// until none arise, a contradiction appears, or the iteration cap is hit.
pub fn complete(
    sys: &PdeSystem,
    ranking: &Ranking,
    accepted: &Substitution,
    max_iter: usize,
) -> Result<CompletionResult, SysError> {
    assert!(max_iter >= 1);
    // The input is NOT pre-saturated: adjoining derivative images silently
    // would swallow exactly the conditions the trail is meant to expose.
    let mut current = sys.clone();
    let mut trail: Vec<Vec<Expr>> = Vec::new();
    let mut candidates: Vec<Expr> = Vec::new();
    for _ in 0..max_iter {
        let step = match integrability_step(&current, ranking, accepted) {
            Ok(s) => s,
            Err(SysError::Inconsistent(_)) => {
                return Ok(CompletionResult {
                    system: current,
                    trail,
                    candidates,
                    status: CompletionStatus::Inconsistent,
                })
            }
            Err(e) => return Err(e),
        };
        for c in step.candidates {
            if !candidates.contains(&c) {
                candidates.push(c);
            }
        }
        if step.conditions.is_empty() {
            // Present the completed system in order-saturated form: that is
            // the presentation the symbol/rank analysis expects.
            return Ok(CompletionResult {
                system: current.saturate(),
                trail,
                candidates,
                status: CompletionStatus::Completed,
            });
        }
        trail.push(step.conditions.clone());
        current = current
            .with_extra_equations(
                step.conditions,
                format!("{} (completed)", sys.provenance),
            )
            .saturate();
    }
    Ok(CompletionResult {
        system: current,
        trail,
        candidates,
        status: CompletionStatus::IterationCap,
    })
}

/// A candidate solution: one polynomial in the base variables per fiber
/// variable (1-based index).
pub type Section = BTreeMap<u8, Expr>;

/// Substitutes the l-th prolongation of the section into prolong(sys, l) and
/// reports the residuals. Residuals still containing an unbound base function
/// are an error; otherwise the verdict is "all residuals identically zero".
pub fn verify_solution(
    sys: &PdeSystem,
    section: &Section,
    l: usize,
    func_bindings: &BTreeMap<String, Expr>,
) -> Result<(bool, Vec<Expr>), SysError> {
    for (dep, e) in section {
        if *dep == 0 || *dep as usize > sys.bundle.e() {
            return Err(SysError::Invalid("section fiber index out of range".into()));
        }
        let ok = e.atoms().iter().all(|a| matches!(a, Atom::Base(_) | Atom::Param(_)));
        if !ok {
            return Err(SysError::Invalid(
                "section components must be polynomials in base variables".into(),
            ));
        }
    }
    let prolonged = sys.prolong(l);
    let mut sub = Substitution::new();
    let mut jet_vars: BTreeSet<JetVar> = BTreeSet::new();
    for eq in prolonged.equations() {
        jet_vars.extend(eq.jet_vars());
    }
    for v in jet_vars {
        let comp = section.get(&v.dep).cloned().unwrap_or_else(Expr::zero);
        let mut d = comp;
        for &i in v.idx.entries() {
            d = d.partial(&Atom::Base(i));
        }
        sub.insert(Atom::Jet(v), d);
    }
    for (name, poly) in func_bindings {
        let deps = sys.bundle.full_deps();
        sub.insert(
            Atom::Func(crate::expr::BaseFunc::new(name, MultiIndex::empty(), deps)),
            poly.clone(),
        );
    }
    let mut residuals = Vec::new();
    let mut all_zero = true;
    for eq in prolonged.equations() {
        let r = eq
            .substitute(&sub)
            .map_err(|e| SysError::Invalid(e.to_string()))?;
        if r.has_func() {
            for a in r.atoms() {
                if let Atom::Func(f) = a {
                    if !func_bindings.contains_key(f.name.as_ref()) {
                        return Err(SysError::MissingBaseFunc(f.name.to_string()));
                    }
                }
            }
        }
        if !r.is_zero() {
            all_zero = false;
            residuals.push(r);
        }
    }
    Ok((all_zero, residuals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{rat_int, BaseFunc};

    fn bundle_xt() -> Arc<BundleSpec> {
        Arc::new(BundleSpec::new(
            vec!["x".into(), "t".into()],
            vec!["u".into()],
        ))
    }

    fn bundle_x() -> Arc<BundleSpec> {
        Arc::new(BundleSpec::new(vec!["x".into()], vec!["u".into()]))
    }

    fn jv(dep: u8, idx: &[u8]) -> JetVar {
        JetVar::new(dep, MultiIndex::new(idx.to_vec()))
    }

    fn u(idx: &[u8]) -> Expr {
        Expr::jet(jv(1, idx))
    }

    #[test]
    fn prolong_ode_once() {
        // prolong(ker(u_x - u), 1) = {u_x - u, u_xx - u_x}
        let sys = PdeSystem::new(bundle_x(), vec![u(&[1]).sub(&u(&[]))], None, "ode").unwrap();
        let p = sys.prolong(1);
        assert_eq!(p.order(), 2);
        let set = p.canonical_set();
        assert!(set.contains(&u(&[1]).sub(&u(&[])).canonical_equation()));
        assert!(set.contains(&u(&[1, 1]).sub(&u(&[1])).canonical_equation()));
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn prolong_zero_is_identity() {
        let sys = PdeSystem::new(bundle_x(), vec![u(&[1]).sub(&u(&[]))], None, "ode").unwrap();
        assert_eq!(sys.prolong(0).canonical_set(), sys.canonical_set());
    }

    #[test]
    fn prolong_nonfi_example() {
        // prolong(ker(u_1 - u, u_2), 1) = {u_1-u, u_2, u_2-u_1, u_3}
        let sys = PdeSystem::new(
            bundle_x(),
            vec![u(&[1]).sub(&u(&[])), u(&[1, 1])],
            None,
            "nonfi",
        )
        .unwrap();
        let p = sys.prolong(1);
        assert_eq!(p.canonical_set().len(), 4);
        assert!(p
            .canonical_set()
            .contains(&u(&[1, 1]).sub(&u(&[1])).canonical_equation()));
        assert!(p.canonical_set().contains(&u(&[1, 1, 1]).canonical_equation()));
    }

    #[test]
    fn prolong_composes_additively() {
        let sys = PdeSystem::new(
            bundle_xt(),
            vec![u(&[1]).mul(&u(&[])).sub(&u(&[2]))],
            None,
            "q",
        )
        .unwrap();
        let a = sys.prolong(1).prolong(2);
        let b = sys.prolong(3);
        assert_eq!(a.canonical_set(), b.canonical_set());
    }

    #[test]
    fn solved_form_single_rule() {
        let sys = PdeSystem::new(bundle_x(), vec![u(&[1]).sub(&u(&[]))], None, "ode").unwrap();
        let r = Ranking::declaration_order(1);
        let ortho = solved_form(&sys, &r).unwrap();
        assert_eq!(ortho.rules.len(), 1);
        assert_eq!(ortho.rules[0].leader, jv(1, &[1]));
        assert_eq!(ortho.rules[0].rhs, u(&[]));
    }

    #[test]
    fn solved_form_two_rules() {
        // {u_x, u_tt} -> u_x -> 0, u_tt -> 0
        let sys = PdeSystem::new(bundle_xt(), vec![u(&[1]), u(&[2, 2])], None, "c").unwrap();
        let r = Ranking::declaration_order(2);
        let ortho = solved_form(&sys, &r).unwrap();
        assert_eq!(ortho.rules.len(), 2);
        assert!(ortho.rules.iter().all(|r| r.rhs.is_zero()));
    }

    #[test]
    fn reduce_with_derivative_rule() {
        // reduce(u_tt - u_t, {u_t -> u}) -> 0 (t is only base var)
        let b = Arc::new(BundleSpec::new(vec!["t".into()], vec!["u".into()]));
        let sys = PdeSystem::new(b, vec![u(&[1]).sub(&u(&[]))], None, "ode").unwrap();
        let r = Ranking::declaration_order(1);
        let ortho = solved_form(&sys, &r).unwrap();
        let nf = ortho.reduce(&u(&[1, 1]).sub(&u(&[1])));
        assert!(nf.is_zero());
    }

    #[test]
    fn reduce_empty_is_identity() {
        let b = bundle_x();
        let sys = PdeSystem::new(b, vec![], None, "empty").unwrap();
        let r = Ranking::declaration_order(1);
        let ortho = solved_form(&sys, &r).unwrap();
        let f = u(&[1]).mul(&u(&[]));
        assert_eq!(ortho.reduce(&f), f);
    }

    #[test]
    fn reduce_forces_fiber_to_zero() {
        // reduce(u_2 - u_1, {u_1 -> u, u_2 -> 0}) = -u
        let sys = PdeSystem::new(
            bundle_x(),
            vec![u(&[1]).sub(&u(&[])), u(&[1, 1])],
            None,
            "nonfi",
        )
        .unwrap();
        let r = Ranking::declaration_order(1);
        let ortho = solved_form(&sys, &r).unwrap();
        let nf = ortho.reduce(&u(&[1, 1]).sub(&u(&[1])));
        assert_eq!(nf, u(&[]).neg());
    }

    #[test]
    fn conditions_of_intcond_example() {
        // ker(u_x, u_tt) -> {u_xt, u_xx}
        let sys = PdeSystem::new(bundle_xt(), vec![u(&[1]), u(&[2, 2])], None, "c").unwrap();
        let r = Ranking::declaration_order(2);
        let conds = integrability_conditions(&sys, &r).unwrap();
        let set: BTreeSet<Expr> = conds.into_iter().collect();
        assert_eq!(set.len(), 2);
        assert!(set.contains(&u(&[1, 1]).canonical_equation()));
        assert!(set.contains(&u(&[1, 2]).canonical_equation()));
    }

    #[test]
    fn conditions_of_fi_ode_are_empty() {
        let sys = PdeSystem::new(bundle_x(), vec![u(&[1]).sub(&u(&[]))], None, "ode").unwrap();
        let r = Ranking::declaration_order(1);
        assert!(integrability_conditions(&sys, &r).unwrap().is_empty());
    }

    #[test]
    fn completion_of_intcond_example() {
        let sys = PdeSystem::new(bundle_xt(), vec![u(&[1]), u(&[2, 2])], None, "c").unwrap();
        let r = Ranking::declaration_order(2);
        let res = complete(&sys, &r, &Substitution::new(), 10).unwrap();
        assert_eq!(res.status, CompletionStatus::Completed);
        assert_eq!(res.trail.len(), 1);
        assert_eq!(res.trail[0].len(), 2);
        assert_eq!(res.system.canonical_set().len(), 4);
    }

    #[test]
    fn completion_detects_nonfi_degeneration() {
        let sys = PdeSystem::new(
            bundle_x(),
            vec![u(&[1]).sub(&u(&[])), u(&[1, 1])],
            None,
            "nonfi",
        )
        .unwrap();
        let r = Ranking::declaration_order(1);
        let res = complete(&sys, &r, &Substitution::new(), 10).unwrap();
        assert_eq!(res.status, CompletionStatus::Completed);
        // u = u_1 = u_2 = 0 forced
        assert!(res.trail.iter().flatten().any(|c| *c == u(&[]).canonical_equation()));
        let ortho = solved_form_opts(
            &res.system,
            &r,
            &Substitution::new(),
            false,
        )
        .unwrap();
        assert!(ortho.reduce(&u(&[])).is_zero());
        assert!(ortho.reduce(&u(&[1])).is_zero());
    }

    #[test]
    fn completion_finds_contradiction() {
        // joint of u_tt - u (prolonged once) and u_ttt - 4: inconsistent in 2 rounds
        let b = Arc::new(BundleSpec::new(vec!["t".into()], vec!["u".into()]));
        let e1 = u(&[1, 1]).sub(&u(&[]));
        let e2 = u(&[1, 1, 1]).sub(&u(&[1]));
        let e3 = u(&[1, 1, 1]).sub(&Expr::int(4));
        let sys = PdeSystem::new(b, vec![e1, e2, e3], None, "joint").unwrap();
        let r = Ranking::declaration_order(1);
        let res = complete(&sys, &r, &Substitution::new(), 10).unwrap();
        assert_eq!(res.status, CompletionStatus::Inconsistent);
        assert!(res.trail.len() <= 2);
    }

    #[test]
    fn verify_solution_linear() {
        // completed ker(u_x,u_tt): u = 3t + 5 is a solution
        let sys = PdeSystem::new(
            bundle_xt(),
            vec![u(&[1]), u(&[2, 2]), u(&[1, 2]), u(&[1, 1])],
            None,
            "c",
        )
        .unwrap();
        let mut section = Section::new();
        section.insert(1, Expr::base(2).scale(&rat_int(3)).add(&Expr::int(5)));
        let (ok, res) = verify_solution(&sys, &section, 1, &BTreeMap::new()).unwrap();
        assert!(ok, "residuals: {:?}", res);
    }

    #[test]
    fn verify_solution_rejects_wrong_section() {
        // ker(u_t - u) with u = t: residual 1 - t
        let b = Arc::new(BundleSpec::new(vec!["t".into()], vec!["u".into()]));
        let sys = PdeSystem::new(b, vec![u(&[1]).sub(&u(&[]))], None, "ode").unwrap();
        let mut section = Section::new();
        section.insert(1, Expr::base(1));
        let (ok, res) = verify_solution(&sys, &section, 0, &BTreeMap::new()).unwrap();
        assert!(!ok);
        assert_eq!(res.len(), 1);
        assert_eq!(res[0], Expr::one().sub(&Expr::base(1)));
    }

    #[test]
    fn verify_solution_truncated_exponential() {
        // ker(u_tt - u), u = sum_{n<=6} t^n/n!, holds up to checked order 4
        let b = Arc::new(BundleSpec::new(vec!["t".into()], vec!["u".into()]));
        let sys = PdeSystem::new(b, vec![u(&[1, 1]).sub(&u(&[]))], None, "exp").unwrap();
        let mut series = Expr::zero();
        let mut fact = 1i64;
        for n in 0..=6u32 {
            if n > 0 {
                fact *= n as i64;
            }
            series = series.add(&Expr::base(1).pow(n).scale(&crate::expr::rat(1, fact)));
        }
        let mut section = Section::new();
        section.insert(1, series);
        // The truncation solves the equation as a formal jet at the origin:
        // all residuals of prolongations up to l = 4 vanish at t = 0, and the
        // l = 5 residual picks up the truncation error.
        let at_origin = |l: usize| -> bool {
            let (ok, residuals) = verify_solution(&sys, &section, l, &BTreeMap::new()).unwrap();
            ok || residuals.iter().all(|r| {
                let mut s = Substitution::new();
                s.insert(crate::expr::Atom::Base(1), Expr::zero());
                r.substitute(&s).unwrap().is_zero()
            })
        };
        assert!(at_origin(4));
        assert!(!at_origin(5));
    }

    #[test]
    fn verify_solution_missing_func_errors() {
        let b = bundle_x();
        let f = Expr::func(BaseFunc::new("rho", MultiIndex::empty(), 0b1));
        let sys = PdeSystem::new(b, vec![u(&[1]).sub(&f)], None, "src").unwrap();
        let mut section = Section::new();
        section.insert(1, Expr::base(1));
        let err = verify_solution(&sys, &section, 0, &BTreeMap::new());
        assert!(matches!(err, Err(SysError::MissingBaseFunc(_))));
    }

    #[test]
    fn reduce_idempotent_and_kills_members() {
        let sys = PdeSystem::new(
            bundle_xt(),
            vec![u(&[1]).sub(&u(&[])), u(&[2]).mul(&Expr::int(3))],
            None,
            "s",
        )
        .unwrap();
        let r = Ranking::declaration_order(2);
        let ortho = solved_form(&sys, &r).unwrap();
        for eq in sys.equations() {
            assert!(ortho.reduce(eq).is_zero());
        }
        let f = u(&[1, 2]).mul(&u(&[1])).add(&Expr::int(7));
        let nf = ortho.reduce(&f);
        assert_eq!(ortho.reduce(&nf), nf);
    }

    #[test]
    fn accepted_assumption_rewrites_functions() {
        // relation: nu*I + p' = 0 with constant-coefficient leading term p'
        let i0 = Expr::func(BaseFunc::new("I", MultiIndex::empty(), 0b1));
        let p1 = Expr::func(BaseFunc::new("p", MultiIndex::new(vec![1]), 0b1));
        let rel = i0.mul(&Expr::param("nu")).add(&p1);
        let sub = accepted_substitution(&[rel]).unwrap();
        let got = Expr::func(BaseFunc::new("p", MultiIndex::new(vec![1, 1]), 0b1))
            .substitute(&sub)
            .unwrap();
        let expect = Expr::func(BaseFunc::new("I", MultiIndex::new(vec![1]), 0b1))
            .mul(&Expr::param("nu"))
            .neg();
        assert_eq!(got, expect);
    }
}
