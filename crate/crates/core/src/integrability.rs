//! The full formal-integrability verdict: surjectivity via integrability
//! conditions (with completion), the vector-bundle test on g^{k+1}, and the
//! quasi-regular-basis test.

use crate::expr::{Expr, Substitution};
use crate::symbol::{
    quasi_regular_check, vector_bundle_check, EvalStrategy, QuasiRegularReport, SymbolError,
    VectorBundleReport,
};
use crate::system::{complete, CompletionStatus, PdeSystem, Ranking, SysError};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    FormallyIntegrable,
    /// Formally integrable after adjoining the discovered conditions; the
    /// paper's hydro result is of this kind.
    FiAfterCompletion,
    NotFi(String),
    Inconsistent,
    /// The iteration cap was hit before completion stabilized.
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> String {
        match self {
            Verdict::FormallyIntegrable => "formally_integrable".into(),
            Verdict::FiAfterCompletion => "fi_after_completion".into(),
            Verdict::NotFi(reason) => format!("not_fi({reason})"),
            Verdict::Inconsistent => "inconsistent".into(),
            Verdict::Inconclusive => "inconclusive(iteration_cap)".into(),
        }
    }

    pub fn positive(&self) -> bool {
        matches!(self, Verdict::FormallyIntegrable | Verdict::FiAfterCompletion)
    }
}

#[derive(Clone, Debug)]
pub struct FiOptions {
    pub max_iter: usize,
    pub strat: EvalStrategy,
    pub samples: usize,
    pub ranking: Option<Ranking>,
    pub accepted: Substitution,
}

impl Default for FiOptions {
    fn default() -> Self {
        FiOptions {
            max_iter: 8,
            strat: EvalStrategy::default(),
            samples: 3,
            ranking: None,
            accepted: Substitution::new(),
        }
    }
}

/// Machine-readable verdict of the formal-integrability check.
#[derive(Clone, Debug)]
pub struct FiReport {
    pub surjective: bool,
    pub conditions_trail: Vec<Vec<Expr>>,
    pub assumption_candidates: Vec<Expr>,
    pub completed_system: Option<PdeSystem>,
    /// l -> dim g^{k+l} for l = 0, 1 on the (completed) system.
    pub g_dims: BTreeMap<usize, usize>,
    pub vector_bundle: Option<VectorBundleReport>,
    pub quasi_regular: Option<QuasiRegularReport>,
    pub verdict: Verdict,
    pub exceptional_points: Vec<String>,
}

/// Checks the three finite conditions: surjectivity of pi^{k+1}_k (through
/// integrability conditions and completion), g^{k+1} a vector bundle (rank
/// constancy over sampled points), and existence of a quasi-regular basis.
pub fn check_formal_integrability(
    sys: &PdeSystem,
    opts: &FiOptions,
) -> Result<FiReport, SymbolError> {
    let ranking = opts
        .ranking
        .clone()
        .unwrap_or_else(|| Ranking::declaration_order(sys.bundle.m()));
    let completion = match complete(sys, &ranking, &opts.accepted, opts.max_iter) {
        Ok(c) => c,
        Err(SysError::Inconsistent(_)) => {
            return Ok(FiReport {
                surjective: false,
                conditions_trail: Vec::new(),
                assumption_candidates: Vec::new(),
                completed_system: None,
                g_dims: BTreeMap::new(),
                vector_bundle: None,
                quasi_regular: None,
                verdict: Verdict::Inconsistent,
                exceptional_points: Vec::new(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let surjective = completion.trail.is_empty();
    match completion.status {
        CompletionStatus::Inconsistent => {
            return Ok(FiReport {
                surjective: false,
                conditions_trail: completion.trail,
                assumption_candidates: completion.candidates,
                completed_system: Some(completion.system),
                g_dims: BTreeMap::new(),
                vector_bundle: None,
                quasi_regular: None,
                verdict: Verdict::Inconsistent,
                exceptional_points: Vec::new(),
            })
        }
        CompletionStatus::IterationCap => {
            return Ok(FiReport {
                surjective: false,
                conditions_trail: completion.trail,
                assumption_candidates: completion.candidates,
                completed_system: Some(completion.system),
                g_dims: BTreeMap::new(),
                vector_bundle: None,
                quasi_regular: None,
                verdict: Verdict::Inconclusive,
                exceptional_points: Vec::new(),
            })
        }
        CompletionStatus::Completed => {}
    }
    let work = &completion.system;
    let mut g_dims = BTreeMap::new();
    g_dims.insert(0, crate::symbol::g_dimension(work, 0, &opts.strat)?);
    g_dims.insert(1, crate::symbol::g_dimension(work, 1, &opts.strat)?);
    let vb = vector_bundle_check(work, &ranking, &opts.strat, opts.samples)?;
    let qr = quasi_regular_check(work, &opts.strat)?;
    // An order-0 condition pins a fiber variable: the original equation
    // degenerates and the projection cannot be made surjective by refinement.
    let degenerate = completion
        .trail
        .iter()
        .flatten()
        .any(|c| c.max_jet_order() == Some(0) || (!c.is_zero() && c.max_jet_order().is_none()));
    let verdict = if degenerate {
        Verdict::NotFi("surjectivity".into())
    } else if !qr.holds {
        Verdict::NotFi("quasi_regular".into())
    } else if surjective {
        Verdict::FormallyIntegrable
    } else {
        Verdict::FiAfterCompletion
    };
    let exceptional = vb.witnesses.clone();
    Ok(FiReport {
        surjective,
        conditions_trail: completion.trail,
        assumption_candidates: completion.candidates,
        completed_system: Some(completion.system.clone()),
        g_dims,
        vector_bundle: Some(vb),
        quasi_regular: Some(qr),
        verdict,
        exceptional_points: exceptional,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{JetVar, MultiIndex};
    use crate::jetgeom::BundleSpec;
    use std::sync::Arc;

    fn jv(dep: u8, idx: &[u8]) -> JetVar {
        JetVar::new(dep, MultiIndex::new(idx.to_vec()))
    }

    fn u(idx: &[u8]) -> Expr {
        Expr::jet(jv(1, idx))
    }

    #[test]
    fn ode_is_formally_integrable() {
        let b = Arc::new(BundleSpec::new(vec!["x".into()], vec!["u".into()]));
        let sys = PdeSystem::new(b, vec![u(&[1]).sub(&u(&[]))], None, "ode").unwrap();
        let rep = check_formal_integrability(&sys, &FiOptions::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::FormallyIntegrable);
        assert!(rep.surjective);
        assert_eq!(rep.g_dims[&0], 0);
        assert_eq!(rep.g_dims[&1], 0);
    }

    #[test]
    fn nonfi_system_fails_surjectivity() {
        let b = Arc::new(BundleSpec::new(vec!["x".into()], vec!["u".into()]));
        let sys = PdeSystem::new(
            b,
            vec![u(&[1]).sub(&u(&[])), u(&[1, 1])],
            None,
            "nonfi",
        )
        .unwrap();
        let rep = check_formal_integrability(&sys, &FiOptions::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::NotFi("surjectivity".into()));
    }

    #[test]
    fn intcond_system_completes() {
        let b = Arc::new(BundleSpec::new(
            vec!["x".into(), "t".into()],
            vec!["u".into()],
        ));
        let sys = PdeSystem::new(b, vec![u(&[1]), u(&[2, 2])], None, "c").unwrap();
        let rep = check_formal_integrability(&sys, &FiOptions::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::FiAfterCompletion);
        assert_eq!(rep.conditions_trail.len(), 1);
    }
}
