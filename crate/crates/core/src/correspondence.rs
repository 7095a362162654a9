//! Correspondences between theories on different bundles: equation pullback,
//! intersection, shared-structure verdicts, embedding checks, and solution
//! transfer.

use crate::expr::{Atom, BaseFunc, Expr, JetVar, Monomial, MultiIndex, Rat, Substitution};
use crate::integrability::{check_formal_integrability, FiOptions, FiReport, Verdict};
use crate::jetgeom::BundleSpec;
use crate::linalg::RatMatrix;
use crate::symbol::SymbolError;
use crate::system::{
    complete, solved_form_opts, PdeSystem, Ranking, Section, SysError,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::Arc;

/// How a target base variable relates to the source base.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TargetDir {
    /// Reads the source base variable with this 1-based index.
    Source(u8),
    /// Fixed at a rational value (section-type base correspondence).
    Fixed(Rat),
}

/// Base correspondences restricted to adapted-coordinate projections and
/// constant sections: per target base variable, either a source direction or
/// a pinned value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaseCorrespondence {
    pub dirs: Vec<TargetDir>,
}

impl BaseCorrespondence {
    pub fn identity(m: usize) -> Self {
        BaseCorrespondence {
            dirs: (1..=m as u8).map(TargetDir::Source).collect(),
        }
    }

    /// Projection by name: each target base variable must exist in the source.
    pub fn projection(source: &BundleSpec, target: &BundleSpec) -> Result<Self, SysError> {
        let mut dirs = Vec::new();
        for name in target.base_names() {
            let i = source.base_index(name).ok_or_else(|| {
                SysError::Invalid(format!("projection target variable {name} not in source"))
            })?;
            dirs.push(TargetDir::Source(i));
        }
        Ok(BaseCorrespondence { dirs })
    }

    /// Section: source variables map by name; the extra target variables take
    /// the fixed assignments.
    pub fn section(
        source: &BundleSpec,
        target: &BundleSpec,
        fixed: &BTreeMap<String, Rat>,
    ) -> Result<Self, SysError> {
        let mut dirs = Vec::new();
        let mut used = 0;
        for name in target.base_names() {
            if let Some(i) = source.base_index(name) {
                dirs.push(TargetDir::Source(i));
            } else if let Some(v) = fixed.get(name) {
                dirs.push(TargetDir::Fixed(v.clone()));
                used += 1;
            } else {
                return Err(SysError::Invalid(format!(
                    "section base correspondence leaves target variable {name} unassigned"
                )));
            }
        }
        if used != fixed.len() {
            return Err(SysError::Invalid(
                "section assignments must cover exactly the extra target base variables".into(),
            ));
        }
        Ok(BaseCorrespondence { dirs })
    }
}

/// A correspondence: a base correspondence plus one source-jet expression per
/// target fiber variable, of order at most `order`.
#[derive(Clone, Debug)]
pub struct Correspondence {
    pub name: String,
    pub source: Arc<BundleSpec>,
    pub target: Arc<BundleSpec>,
    pub base: BaseCorrespondence,
    pub order: usize,
    pub components: Vec<Expr>,
}

impl Correspondence {
    pub fn new(
        name: impl Into<String>,
        source: Arc<BundleSpec>,
        target: Arc<BundleSpec>,
        base: BaseCorrespondence,
        components: Vec<Expr>,
    ) -> Result<Self, SysError> {
        if components.len() != target.e() {
            return Err(SysError::Invalid(
                "one component per target fiber variable required".into(),
            ));
        }
        if base.dirs.len() != target.m() {
            return Err(SysError::Invalid(
                "one base direction per target base variable required".into(),
            ));
        }
        let order = components
            .iter()
            .filter_map(|c| c.max_jet_order())
            .max()
            .unwrap_or(0);
        Ok(Correspondence {
            name: name.into(),
            source,
            target,
            base,
            order,
            components,
        })
    }

    /// The identity correspondence on a bundle.
    pub fn identity(bundle: Arc<BundleSpec>) -> Self {
        let components = (1..=bundle.e() as u8)
            .map(|j| Expr::jet(JetVar::base(j)))
            .collect();
        Correspondence {
            name: "identity".into(),
            source: bundle.clone(),
            target: bundle.clone(),
            base: BaseCorrespondence::identity(bundle.m()),
            order: 0,
            components,
        }
    }

    fn map_deriv(&self, beta: &MultiIndex) -> Option<MultiIndex> {
        let mut mapped = Vec::with_capacity(beta.order());
        for &b in beta.entries() {
            match &self.base.dirs[(b - 1) as usize] {
                TargetDir::Source(i) => mapped.push(*i),
                TargetDir::Fixed(_) => return None,
            }
        }
        Some(MultiIndex::new(mapped))
    }

    fn map_func(&self, f: &BaseFunc) -> Expr {
        // Derivative tags along fixed directions have no source counterpart;
        // they stay opaque under a tagged name.
        let mut source_deriv = Vec::new();
        let mut fixed_tags = Vec::new();
        for &b in f.deriv.entries() {
            match &self.base.dirs[(b - 1) as usize] {
                TargetDir::Source(i) => source_deriv.push(*i),
                TargetDir::Fixed(_) => fixed_tags.push(b),
            }
        }
        let mut deps = 0u16;
        for i in 1..=self.target.m() as u8 {
            if f.depends_on(i) {
                if let TargetDir::Source(s) = &self.base.dirs[(i - 1) as usize] {
                    deps |= 1 << (s - 1);
                }
            }
        }
        let name = if fixed_tags.is_empty() {
            f.name.to_string()
        } else {
            format!("{}#d{:?}", f.name, fixed_tags)
        };
        Expr::func(BaseFunc::new(&name, MultiIndex::new(source_deriv), deps))
    }

    /// Pulls one target-side expression back to the source jets: target jet
    /// variables w^h_beta become D_beta of the h-th component (zero when beta
    /// involves a transverse direction), base variables and functions remap.
    pub fn pull_expr(&self, e: &Expr) -> Expr {
        let mut out = Expr::zero();
        for (m, c) in e.terms() {
            let mut term = Expr::constant(c.clone());
            for (a, exp) in m.factors() {
                let factor = match a {
                    Atom::Jet(v) => match self.map_deriv(&v.idx) {
                        Some(alpha) => self.components[(v.dep - 1) as usize]
                            .total_derivative_multi(&alpha),
                        None => Expr::zero(),
                    },
                    Atom::Base(i) => match &self.base.dirs[(i - 1) as usize] {
                        TargetDir::Source(s) => Expr::base(*s),
                        TargetDir::Fixed(v) => Expr::constant(v.clone()),
                    },
                    Atom::Func(f) => self.map_func(f),
                    Atom::Param(_) => Expr::atom(a.clone()),
                };
                term = term.mul(&factor.pow(*exp));
            }
            out = out.add(&term);
        }
        out
    }
}

/// Pullback of a target-side system through the correspondence, after
/// prolonging it by `ell`: equations on the source jets.
pub fn pullback_equation(
    corr: &Correspondence,
    sys_f: &PdeSystem,
    ell: usize,
) -> Result<PdeSystem, SysError> {
    if sys_f.bundle.as_ref() != corr.target.as_ref() {
        return Err(SysError::Invalid(
            "pullback: system does not live on the correspondence target".into(),
        ));
    }
    let prolonged = sys_f.prolong(ell);
    let eqs: Vec<Expr> = prolonged
        .equations()
        .iter()
        .map(|e| corr.pull_expr(e))
        .collect();
    PdeSystem::new(
        corr.source.clone(),
        eqs,
        Some(corr.order + sys_f.order() + ell),
        format!("{} pulled back via {}", sys_f.provenance, corr.name),
    )
}

/// The joint system on J^N(E) plus the (N, K, L, ell) bookkeeping.
#[derive(Clone, Debug)]
pub struct IntersectionResult {
    pub n_total: usize,
    pub k_prolong: usize,
    pub l_prolong: usize,
    pub ell: usize,
    pub joint: PdeSystem,
    pub pulled_back: PdeSystem,
    pub prolonged_e: PdeSystem,
    pub corr_name: String,
}

/// Assembles the intersection: N = max(k, n+l), K = N-k, L = N-n, ell = L-l;
/// the joint system is prolong(E, K) together with the pullback of
/// prolong(F, ell).
pub fn intersect(
    sys_e: &PdeSystem,
    corr: &Correspondence,
    sys_f: &PdeSystem,
) -> Result<IntersectionResult, SysError> {
    if sys_e.bundle.as_ref() != corr.source.as_ref() {
        return Err(SysError::Invalid(
            "intersection: left system does not live on the correspondence source".into(),
        ));
    }
    let k = sys_e.order();
    let l = sys_f.order();
    let n = corr.order;
    let n_total = k.max(n + l);
    let k_prolong = n_total - k;
    let l_prolong = n_total - n;
    let ell = l_prolong - l;
    let prolonged_e = sys_e.prolong(k_prolong);
    let pulled_back = pullback_equation(corr, sys_f, ell)?;
    let mut eqs = prolonged_e.equations().to_vec();
    eqs.extend(pulled_back.equations().iter().cloned());
    let joint = PdeSystem::new(
        sys_e.bundle.clone(),
        eqs,
        Some(n_total),
        format!(
            "{} ∩ {} via {}",
            sys_e.provenance, sys_f.provenance, corr.name
        ),
    )?;
    Ok(IntersectionResult {
        n_total,
        k_prolong,
        l_prolong,
        ell,
        joint,
        pulled_back,
        prolonged_e,
        corr_name: corr.name.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SharedVerdict {
    ShareStructure,
    ShareStructureUnderAssumptions(Vec<String>),
    NoSharedStructure(String),
}

impl SharedVerdict {
    pub fn positive(&self) -> bool {
        !matches!(self, SharedVerdict::NoSharedStructure(_))
    }

    pub fn as_str(&self) -> String {
        match self {
            SharedVerdict::ShareStructure => "share_structure".into(),
            SharedVerdict::ShareStructureUnderAssumptions(a) => {
                format!("share_structure_under_assumptions({})", a.join(", "))
            }
            SharedVerdict::NoSharedStructure(r) => format!("no_shared_structure({r})"),
        }
    }
}

/// Practical transversality surrogate: the rank of the joint system's
/// Jacobian with respect to all jet coordinates, at generic and sampled
/// evaluations.
#[derive(Clone, Debug)]
pub struct JacobianReport {
    pub equations: usize,
    pub rank: usize,
    pub locally_maximal: bool,
    pub locally_constant: bool,
}

pub fn jacobian_report(sys: &PdeSystem, seed: u64) -> JacobianReport {
    let mut cols: Vec<JetVar> = Vec::new();
    for eq in sys.equations() {
        for v in eq.jet_vars() {
            if !cols.contains(&v) {
                cols.push(v);
            }
        }
    }
    cols.sort();
    let jac: Vec<Vec<Expr>> = sys
        .equations()
        .iter()
        .map(|eq| {
            cols.iter()
                .map(|v| eq.partial(&Atom::Jet(v.clone())))
                .collect()
        })
        .collect();
    let mut symbols: Vec<Atom> = Vec::new();
    for row in &jac {
        for e in row {
            for a in e.atoms() {
                if !symbols.contains(&a) {
                    symbols.push(a);
                }
            }
        }
    }
    symbols.sort();
    let eval = |trial: u64| -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial));
        let mut sub = Substitution::new();
        for s in &symbols {
            let n = rng.gen_range(1..=997i64);
            let d = rng.gen_range(1..=997i64);
            let sign: i64 = if rng.gen_bool(0.5) { 1 } else { -1 };
            sub.insert(s.clone(), Expr::constant(Rat::new((sign * n).into(), d.into())));
        }
        let rows: Vec<Vec<Rat>> = jac
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| {
                        e.substitute(&sub)
                            .expect("constant substitution")
                            .as_constant()
                            .expect("fully evaluated")
                    })
                    .collect()
            })
            .collect();
        RatMatrix::from_rows(rows).rank()
    };
    let ranks: Vec<usize> = (0..3).map(eval).collect();
    let rank = *ranks.iter().max().unwrap_or(&0);
    JacobianReport {
        equations: sys.len(),
        rank,
        locally_maximal: rank == sys.len(),
        locally_constant: ranks.iter().all(|r| *r == rank),
    }
}

#[derive(Clone, Debug)]
pub struct SharedReport {
    pub intersection: IntersectionResult,
    pub fi: FiReport,
    pub jacobian: JacobianReport,
    pub verdict: SharedVerdict,
}

/// Runs intersect, then completion and the formal-integrability check on the
/// joint system; assumption candidates surface for user acceptance.
pub fn shared_structure(
    sys_e: &PdeSystem,
    corr: &Correspondence,
    sys_f: &PdeSystem,
    opts: &FiOptions,
    accepted_labels: &[String],
) -> Result<SharedReport, SymbolError> {
    let intersection = intersect(sys_e, corr, sys_f).map_err(SymbolError::Sys)?;
    let fi = check_formal_integrability(&intersection.joint, opts)?;
    let jacobian = jacobian_report(&intersection.joint, opts.strat.seed());
    let verdict = match &fi.verdict {
        Verdict::FormallyIntegrable | Verdict::FiAfterCompletion => {
            if accepted_labels.is_empty() {
                SharedVerdict::ShareStructure
            } else {
                SharedVerdict::ShareStructureUnderAssumptions(accepted_labels.to_vec())
            }
        }
        Verdict::Inconsistent => SharedVerdict::NoSharedStructure("inconsistent".into()),
        Verdict::NotFi(r) => SharedVerdict::NoSharedStructure(r.clone()),
        Verdict::Inconclusive => SharedVerdict::NoSharedStructure("iteration_cap".into()),
    };
    Ok(SharedReport {
        intersection,
        fi,
        jacobian,
        verdict,
    })
}

/// Transfers a source-side solution through the correspondence:
/// s' = components evaluated on j^n(s), base-composed per the base
/// correspondence. Dropped source directions are evaluated through the origin
/// section.
pub fn transfer_solution(corr: &Correspondence, s: &Section) -> Result<Section, SysError> {
    // Evaluate components on the prolonged section.
    let mut sub = Substitution::new();
    let mut jet_vars: Vec<JetVar> = Vec::new();
    for comp in &corr.components {
        jet_vars.extend(comp.jet_vars());
    }
    jet_vars.sort();
    jet_vars.dedup();
    for v in jet_vars {
        let p = s.get(&v.dep).cloned().unwrap_or_else(Expr::zero);
        let mut d = p;
        for &i in v.idx.entries() {
            d = d.partial(&Atom::Base(i));
        }
        sub.insert(Atom::Jet(v), d);
    }
    // Source base variables that survive into the target keep their role; the
    // rest evaluate at zero (the section through the origin).
    let mut kept: BTreeMap<u8, u8> = BTreeMap::new();
    for (t0, dir) in corr.base.dirs.iter().enumerate() {
        if let TargetDir::Source(i) = dir {
            kept.insert(*i, t0 as u8 + 1);
        }
    }
    let mut out = Section::new();
    for (h0, comp) in corr.components.iter().enumerate() {
        let mut val = comp
            .substitute(&sub)
            .map_err(|e| SysError::Invalid(e.to_string()))?;
        // Rename surviving base vars to target indices, zero the dropped ones.
        let mut base_sub = Substitution::new();
        for a in val.atoms() {
            if let Atom::Base(i) = a {
                match kept.get(&i) {
                    Some(&t) => {
                        // Temporary offset names avoid index collisions.
                        base_sub.insert(Atom::Base(i), Expr::base(t + 100));
                    }
                    None => base_sub.insert(Atom::Base(i), Expr::zero()),
                }
            }
        }
        val = val
            .substitute(&base_sub)
            .map_err(|e| SysError::Invalid(e.to_string()))?;
        let mut unshift = Substitution::new();
        for a in val.atoms() {
            if let Atom::Base(i) = a {
                if i > 100 {
                    unshift.insert(Atom::Base(i), Expr::base(i - 100));
                }
            }
        }
        val = val
            .substitute(&unshift)
            .map_err(|e| SysError::Invalid(e.to_string()))?;
        out.insert(h0 as u8 + 1, val);
    }
    Ok(out)
}

/// True iff every equation of `a` reduces to zero modulo the completion of
/// `b`, prolonged up to the given order. Both systems must share one bundle.
pub fn equations_subsume(
    a: &PdeSystem,
    b: &PdeSystem,
    order: usize,
    ranking: &Ranking,
) -> Result<bool, SysError> {
    if a.bundle.as_ref() != b.bundle.as_ref() {
        return Err(SysError::Invalid(
            "equations_subsume: systems on different bundles".into(),
        ));
    }
    let lift = order.saturating_sub(b.order());
    let base = b.prolong(lift);
    let completed = complete(&base, ranking, &Substitution::new(), 8)?;
    let ortho = solved_form_opts(&completed.system, ranking, &Substitution::new(), false)?;
    for eq in a.equations() {
        if !ortho.reduce(eq).is_zero() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Deterministic low-degree polynomial section sampler used by fixtures.
pub fn monomial(atoms: &[(Atom, u32)], c: Rat) -> Expr {
    let mut m = Monomial::one();
    for (a, e) in atoms {
        for _ in 0..*e {
            m = m.mul(&Monomial::var(a.clone()));
        }
    }
    Expr::from_terms([(m, c)])
}
