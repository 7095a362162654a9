//! Invariants of linear symmetry actions on jet coordinates: invariant-form
//! bases, candidate verification, and rewriting a system in invariant
//! variables (the quotient equation).

use crate::expr::{Atom, Expr, JetVar, MultiIndex, Rat};
use crate::jetgeom::{enumerate_jet_coords, BundleSpec};
use crate::linalg::RatMatrix;
use crate::system::{PdeSystem, SysError};
use num_traits::Zero;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SymmetryError {
    #[error("equation not expressible in the invariants; jet residual {0}")]
    NotExpressible(String),
    #[error("invariant discovery needs constant-coefficient generators")]
    NonConstantGenerator,
    #[error(transparent)]
    Sys(#[from] SysError),
}

/// A vector field sum c_v d/dv on jet coordinates. Coefficients are Exprs so
/// verification can handle fields like u d/du + u_t d/du_t; discovery requires
/// them constant.
#[derive(Clone, Debug)]
pub struct LinearGenerator {
    pub terms: Vec<(JetVar, Expr)>,
}

impl LinearGenerator {
    pub fn new(terms: Vec<(JetVar, Expr)>) -> Self {
        let terms = terms
            .into_iter()
            .filter(|(_, c)| !c.is_zero())
            .collect();
        LinearGenerator { terms }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|(_, c)| c.as_constant().is_some())
    }

    /// Applies the field to an expression: X(f) = sum c_v df/dv.
    pub fn apply(&self, f: &Expr) -> Expr {
        let mut out = Expr::zero();
        for (v, c) in &self.terms {
            out = out.add(&f.partial(&Atom::Jet(v.clone())).mul(c));
        }
        out
    }

    pub fn max_order(&self) -> usize {
        self.terms.iter().map(|(v, _)| v.order()).max().unwrap_or(0)
    }
}

/// Basis of all linear invariant forms in jet coordinates up to `order`:
/// the null space of the generator coefficient matrix. The basis dimension is
/// #coords - rank.
pub fn invariant_basis(
    gens: &[LinearGenerator],
    bundle: &BundleSpec,
    order: usize,
) -> Result<Vec<Expr>, SymmetryError> {
    let mut coords: Vec<JetVar> = Vec::new();
    for k in 0..=order {
        coords.extend(enumerate_jet_coords(bundle, k, None));
    }
    if gens.is_empty() {
        return Ok(coords.into_iter().map(Expr::jet).collect());
    }
    let mut rows = Vec::with_capacity(gens.len());
    for g in gens {
        if !g.is_constant() {
            return Err(SymmetryError::NonConstantGenerator);
        }
        let mut row = vec![Rat::zero(); coords.len()];
        for (v, c) in &g.terms {
            if let Some(pos) = coords.iter().position(|w| w == v) {
                row[pos] = c.as_constant().unwrap();
            }
        }
        rows.push(row);
    }
    let mat = RatMatrix::from_rows(rows);
    let kernel = mat.kernel_basis();
    let mut out = Vec::with_capacity(kernel.len());
    for vec in kernel {
        let mut form = Expr::zero();
        for (pos, c) in vec.iter().enumerate() {
            if !c.is_zero() {
                form = form.add(&Expr::jet(coords[pos].clone()).scale(c));
            }
        }
        out.push(form);
    }
    Ok(out)
}

/// True iff X(candidate) = 0 for every generator.
pub fn check_invariant(candidate: &Expr, gens: &[LinearGenerator]) -> bool {
    gens.iter().all(|g| g.apply(candidate).is_zero())
}

/// Rewrites a system as equations on the invariant variables: each equation
/// must be a rational-linear combination of the invariants' total-derivative
/// images (decided by exact linear elimination); the jet-free remainder is
/// carried over verbatim.
pub fn quotient_rewrite(
    sys: &PdeSystem,
    invariants: &[(String, Expr)],
    target: Arc<BundleSpec>,
) -> Result<PdeSystem, SymmetryError> {
    if target.m() != sys.bundle.m() {
        return Err(SymmetryError::Sys(SysError::Invalid(
            "quotient target must share the base".into(),
        )));
    }
    if target.e() != invariants.len() {
        return Err(SymmetryError::Sys(SysError::Invalid(
            "one target fiber variable per invariant required".into(),
        )));
    }
    // Library: D_alpha(I_q) for all alpha keeping the order within bounds,
    // ordered by (q, |alpha|, alpha) so elimination prefers low derivatives.
    let k = sys.order();
    let m = sys.bundle.m() as u8;
    let mut library: Vec<(usize, MultiIndex, Expr)> = Vec::new();
    for (q, (_, def)) in invariants.iter().enumerate() {
        let base_order = def.max_jet_order().unwrap_or(0);
        let budget = k.saturating_sub(base_order);
        let mut alphas: Vec<MultiIndex> = vec![MultiIndex::empty()];
        let mut level = vec![MultiIndex::empty()];
        for _ in 0..budget {
            let mut next = Vec::new();
            for a in &level {
                let start = a.entries().last().copied().unwrap_or(1);
                for i in start..=m {
                    next.push(a.push(i));
                }
            }
            alphas.extend(next.iter().cloned());
            level = next;
        }
        for a in alphas {
            library.push((q, a.clone(), def.total_derivative_multi(&a)));
        }
    }
    // Monomial index over all jet-carrying monomials.
    let mut monos: Vec<crate::expr::Monomial> = Vec::new();
    let mut note = |e: &Expr| {
        for (mono, _) in e.terms() {
            if mono.has_jet() && !monos.contains(mono) {
                monos.push(mono.clone());
            }
        }
    };
    for (_, _, e) in &library {
        note(e);
    }
    for eq in sys.equations() {
        note(eq);
    }
    monos.sort();
    let col_of = |e: &Expr| -> Option<Vec<Rat>> {
        let mut col = vec![Rat::zero(); monos.len()];
        for (mono, c) in e.terms() {
            if mono.has_jet() {
                let pos = monos.iter().position(|m| m == mono)?;
                col[pos] = c.clone();
            }
        }
        Some(col)
    };
    let lib_cols: Vec<Vec<Rat>> = library
        .iter()
        .map(|(_, _, e)| col_of(e).expect("library monomials are indexed"))
        .collect();
    let mat = RatMatrix::from_rows(
        (0..monos.len())
            .map(|r| lib_cols.iter().map(|c| c[r].clone()).collect())
            .collect(),
    );
    let mut out_eqs = Vec::new();
    for eq in sys.equations() {
        let (jet_part, rest) = eq.split_jet();
        // Coefficients of the jet part must be rational for the elimination.
        let b = match col_of(&jet_part) {
            Some(b) => b,
            None => {
                return Err(SymmetryError::NotExpressible(format!("{:?}", jet_part)));
            }
        };
        let Some(sol) = mat.solve_particular(&b) else {
            return Err(SymmetryError::NotExpressible(format!("{:?}", jet_part)));
        };
        let mut target_eq = rest.clone();
        for (i, c) in sol.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let (q, alpha, _) = &library[i];
            let var = JetVar::new(*q as u8 + 1, alpha.clone());
            target_eq = target_eq.add(&Expr::jet(var).scale(c));
        }
        out_eqs.push(target_eq);
    }
    Ok(PdeSystem::new(
        target,
        out_eqs,
        None,
        format!("{} (quotient)", sys.provenance),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jv(dep: u8, idx: &[u8]) -> JetVar {
        JetVar::new(dep, MultiIndex::new(idx.to_vec()))
    }

    fn u(dep: u8, idx: &[u8]) -> Expr {
        Expr::jet(jv(dep, idx))
    }

    fn bundle(base: &[&str], fiber: &[&str]) -> Arc<BundleSpec> {
        Arc::new(BundleSpec::new(
            base.iter().map(|s| s.to_string()).collect(),
            fiber.iter().map(|s| s.to_string()).collect(),
        ))
    }

    #[test]
    fn empty_generator_set_leaves_all_coordinates() {
        let b = bundle(&["x"], &["u"]);
        let basis = invariant_basis(&[], &b, 1).unwrap();
        assert_eq!(basis.len(), 2); // u, u_x
    }

    #[test]
    fn translation_generator_kills_fiber_coordinate() {
        // X = d/du on J^1 of (x; u): invariants spanned by u_x.
        let b = bundle(&["x"], &["u"]);
        let g = LinearGenerator::new(vec![(jv(1, &[]), Expr::one())]);
        let basis = invariant_basis(&[g], &b, 1).unwrap();
        assert_eq!(basis.len(), 1);
        assert_eq!(basis[0], u(1, &[1]));
    }

    #[test]
    fn dilatation_check_invariant() {
        // X = u d/du + u_t d/du_t; u_t - u is not invariant, constants are.
        let g = LinearGenerator::new(vec![
            (jv(1, &[]), u(1, &[])),
            (jv(1, &[1]), u(1, &[1])),
        ]);
        let cand = u(1, &[1]).sub(&u(1, &[]));
        assert!(!check_invariant(&cand, &[g.clone()]));
        assert!(check_invariant(&Expr::int(5), &[g]));
    }

    #[test]
    fn invariant_basis_passes_check() {
        let b = bundle(&["x", "y"], &["u", "v"]);
        // X = d/du + d/dv
        let g = LinearGenerator::new(vec![
            (jv(1, &[]), Expr::one()),
            (jv(2, &[]), Expr::one()),
        ]);
        let basis = invariant_basis(&[g.clone()], &b, 1).unwrap();
        assert!(!basis.is_empty());
        for f in &basis {
            assert!(check_invariant(f, &[g.clone()]));
        }
    }

    #[test]
    fn quotient_of_system_already_invariant() {
        // system u_x = 0 with invariant I = u: quotient is q_x = 0.
        let b = bundle(&["x"], &["u"]);
        let t = bundle(&["x"], &["q"]);
        let sys = PdeSystem::new(b, vec![u(1, &[1])], None, "s").unwrap();
        let q = quotient_rewrite(&sys, &[("q".into(), u(1, &[]))], t).unwrap();
        assert_eq!(q.len(), 1);
        assert_eq!(q.equations()[0], u(1, &[1]));
    }

    #[test]
    fn quotient_rejects_inexpressible() {
        // system u = 0 cannot be written in terms of I = u_x alone.
        let b = bundle(&["x"], &["u"]);
        let t = bundle(&["x"], &["q"]);
        let sys = PdeSystem::new(b, vec![u(1, &[])], Some(1), "s").unwrap();
        let r = quotient_rewrite(&sys, &[("q".into(), u(1, &[1]))], t);
        assert!(matches!(r, Err(SymmetryError::NotExpressible(_))));
    }
}
