//! Jet-space combinatorics: coordinate enumeration and the closed-form
//! dimension formulas.

use crate::expr::{JetVar, MultiIndex};

/// A fibered bundle chart: ordered base-variable names and fiber-variable
/// names. Indices into both lists are 1-based everywhere in this crate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BundleSpec {
    base: Vec<String>,
    fiber: Vec<String>,
}

impl BundleSpec {
    /// Panics if a name repeats or either list is empty.
    pub fn new(base: Vec<String>, fiber: Vec<String>) -> Self {
        assert!(!base.is_empty() && !fiber.is_empty());
        let mut all: Vec<&String> = base.iter().chain(fiber.iter()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), base.len() + fiber.len(), "names must be distinct");
        BundleSpec { base, fiber }
    }

    pub fn m(&self) -> usize {
        self.base.len()
    }

    pub fn e(&self) -> usize {
        self.fiber.len()
    }

    pub fn base_names(&self) -> &[String] {
        &self.base
    }

    pub fn fiber_names(&self) -> &[String] {
        &self.fiber
    }

    pub fn base_index(&self, name: &str) -> Option<u8> {
        self.base.iter().position(|n| n == name).map(|i| (i + 1) as u8)
    }

    pub fn fiber_index(&self, name: &str) -> Option<u8> {
        self.fiber.iter().position(|n| n == name).map(|i| (i + 1) as u8)
    }

    pub fn base_name(&self, i: u8) -> &str {
        &self.base[(i - 1) as usize]
    }

    pub fn fiber_name(&self, j: u8) -> &str {
        &self.fiber[(j - 1) as usize]
    }

    /// Bitmask covering all base variables (for base functions of everything).
    pub fn full_deps(&self) -> u16 {
        (1u16 << self.m()) - 1
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// dim J^k(E) = m + e*C(m+k, k).
pub fn dim_jet(m: usize, e: usize, k: usize) -> usize {
    m + e * binomial(m + k, k)
}

/// Fiber dimension of pi^k_{k-1}: e*C(m-1+k, k).
pub fn dim_jet_fiber_increment(m: usize, e: usize, k: usize) -> usize {
    e * binomial(m - 1 + k, k)
}

/// dim S^k T* = C(m-1+k, k).
pub fn dim_sym(m: usize, k: usize) -> usize {
    binomial(m - 1 + k, k)
}

/// dim S^{k,j} T* = C(m-j-1+k, k): symmetric powers on directions > j.
pub fn dim_sym_restricted(m: usize, k: usize, j: usize) -> usize {
    assert!(j < m, "restriction index must satisfy 0 <= j <= m-1");
    if m - j == 0 {
        return 0;
    }
    binomial(m - j - 1 + k, k)
}

/// Canonical ordered enumeration of all jet coordinates u^j_sigma with
/// |sigma| = k (and min(sigma) >= j_restriction+1 when restricted). The order
/// is the crate-wide canonical jet order restricted to fixed |sigma|.
pub fn enumerate_jet_coords(
    bundle: &BundleSpec,
    k: usize,
    j_restriction: Option<usize>,
) -> Vec<JetVar> {
    let m = bundle.m() as u8;
    let lo = j_restriction.map_or(1, |j| j as u8 + 1);
    let mut sigmas: Vec<Vec<u8>> = Vec::new();
    let mut cur = Vec::new();
    fn rec(sigmas: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, next: u8, m: u8, left: usize) {
        if left == 0 {
            sigmas.push(cur.clone());
            return;
        }
        for i in next..=m {
            cur.push(i);
            rec(sigmas, cur, i, m, left - 1);
            cur.pop();
        }
    }
    rec(&mut sigmas, &mut cur, lo, m, k);
    let mut out: Vec<JetVar> = Vec::new();
    for dep in 1..=bundle.e() as u8 {
        for s in &sigmas {
            out.push(JetVar::new(dep, MultiIndex::new(s.clone())));
        }
    }
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(m: usize, e: usize) -> BundleSpec {
        BundleSpec::new(
            (1..=m).map(|i| format!("x{i}")).collect(),
            (1..=e).map(|j| format!("u{j}")).collect(),
        )
    }

    #[test]
    fn dim_jet_examples() {
        assert_eq!(dim_jet(1, 1, 1), 3); // (t, u, u_t)
        assert_eq!(dim_jet(4, 4, 2), 64);
        assert_eq!(dim_jet(3, 2, 0), 5); // J^0(E) = E
    }

    #[test]
    fn dim_sym_examples() {
        assert_eq!(dim_sym(4, 2), 10);
        assert_eq!(dim_sym_restricted(4, 2, 1), 6);
        assert_eq!(dim_sym_restricted(4, 2, 2), 3);
        assert_eq!(dim_sym_restricted(4, 2, 3), 1);
        assert_eq!(dim_sym_restricted(5, 3, 0), dim_sym(5, 3));
    }

    #[test]
    fn enumerate_matches_hand_list() {
        // (m=2, e=1, k=2) -> u_{11}, u_{12}, u_{22}
        let b = bundle(2, 1);
        let coords = enumerate_jet_coords(&b, 2, None);
        assert_eq!(coords.len(), 3);
        assert_eq!(coords[0].idx.entries(), &[1, 1]);
        assert_eq!(coords[1].idx.entries(), &[1, 2]);
        assert_eq!(coords[2].idx.entries(), &[2, 2]);
    }

    #[test]
    fn enumerate_restricted_counts() {
        // (m=4, e=3, k=2, j=3) -> the 3 coordinates u^j_{44}
        let b = bundle(4, 3);
        let coords = enumerate_jet_coords(&b, 2, Some(3));
        assert_eq!(coords.len(), 3);
        assert!(coords.iter().all(|v| v.idx.entries() == [4, 4]));
    }

    #[test]
    fn enumerate_order_zero_is_fiber() {
        let b = bundle(3, 2);
        let coords = enumerate_jet_coords(&b, 0, None);
        assert_eq!(coords.len(), 2);
        assert!(coords.iter().all(|v| v.order() == 0));
    }

    #[test]
    fn closed_forms_match_enumeration() {
        for m in 1..=5 {
            for e in 1..=5 {
                let b = bundle(m, e);
                for k in 0..=4 {
                    for j in 0..m {
                        let n = enumerate_jet_coords(&b, k, Some(j)).len();
                        assert_eq!(n, e * dim_sym_restricted(m, k, j), "m={m} e={e} k={k} j={j}");
                    }
                    assert_eq!(enumerate_jet_coords(&b, k, None).len(), e * dim_sym(m, k));
                }
            }
        }
    }

    #[test]
    fn jet_dimension_increment_identity() {
        for m in 1..=5 {
            for e in 1..=5 {
                for k in 1..=4 {
                    assert_eq!(
                        dim_jet(m, e, k) - dim_jet(m, e, k - 1),
                        e * dim_sym(m, k)
                    );
                }
            }
        }
    }
}
