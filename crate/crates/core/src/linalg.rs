//! Exact linear algebra over the rationals: fraction-free (Bareiss) rank and
//! rational kernel bases.

use crate::expr::{bigint_gcd, Rat};
use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

/// Dense rational matrix, row major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<Rat>,
}

impl RatMatrix {
    pub fn zero(rows: usize, cols: usize) -> Self {
        RatMatrix {
            rows,
            cols,
            data: vec![Rat::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<Rat>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c));
        RatMatrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = RatMatrix::zero(n, n);
        for i in 0..n {
            m[(i, i)] = Rat::one();
        }
        m
    }

    pub fn row(&self, i: usize) -> &[Rat] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Rank by fraction-free Bareiss elimination on the integer matrix
    /// obtained by clearing row denominators.
    pub fn rank(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        // Clear denominators per row; rank is invariant under row scaling.
        let mut a: Vec<Vec<BigInt>> = (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                let mut lcm = BigInt::one();
                for x in row {
                    lcm = bigint_gcd::lcm(lcm, x.denom().clone());
                }
                row.iter()
                    .map(|x| x.numer() * (&lcm / x.denom()))
                    .collect()
            })
            .collect();
        let (n, m) = (self.rows, self.cols);
        let mut rank = 0;
        let mut prev = BigInt::one();
        let mut row = 0;
        for col in 0..m {
            // Find pivot in this column (smallest nonzero magnitude keeps
            // the integers small).
            let mut pivot: Option<usize> = None;
            for r in row..n {
                if !a[r][col].is_zero() {
                    match pivot {
                        None => pivot = Some(r),
                        Some(p) => {
                            if a[r][col].abs() < a[p][col].abs() {
                                pivot = Some(r);
                            }
                        }
                    }
                }
            }
            let Some(p) = pivot else { continue };
            a.swap(row, p);
            for r in row + 1..n {
                for c in col + 1..m {
                    let num = &a[row][col] * &a[r][c] - &a[r][col] * &a[row][c];
                    a[r][c] = num / &prev;
                }
                a[r][col] = BigInt::zero();
            }
            prev = a[row][col].clone();
            row += 1;
            rank += 1;
            if row == n {
                break;
            }
        }
        rank
    }

    /// Particular solution of A x = b with free variables set to zero, or
    /// None when inconsistent. Pivots are chosen left to right, so the
    /// solution support prefers the earliest columns.
    pub fn solve_particular(&self, b: &[Rat]) -> Option<Vec<Rat>> {
        assert_eq!(b.len(), self.rows);
        let (n, m) = (self.rows, self.cols);
        let mut a: Vec<Vec<Rat>> = (0..n)
            .map(|i| {
                let mut row = self.row(i).to_vec();
                row.push(b[i].clone());
                row
            })
            .collect();
        let mut pivots: Vec<usize> = Vec::new();
        let mut row = 0;
        for col in 0..m {
            let mut pivot = None;
            for r in row..n {
                if !a[r][col].is_zero() {
                    pivot = Some(r);
                    break;
                }
            }
            let Some(p) = pivot else { continue };
            a.swap(row, p);
            let inv = a[row][col].recip();
            for c in col..=m {
                let v = &a[row][c] * &inv;
                a[row][c] = v;
            }
            for r in 0..n {
                if r != row && !a[r][col].is_zero() {
                    let factor = a[r][col].clone();
                    for c in col..=m {
                        let v = &a[r][c] - &factor * &a[row][c];
                        a[r][c] = v;
                    }
                }
            }
            pivots.push(col);
            row += 1;
            if row == n {
                break;
            }
        }
        // Inconsistent if a zero row has nonzero rhs.
        for r in row..n {
            if !a[r][m].is_zero() {
                return None;
            }
        }
        let mut x = vec![Rat::zero(); m];
        for (r, &pc) in pivots.iter().enumerate() {
            x[pc] = a[r][m].clone();
        }
        Some(x)
    }

    /// Basis of the right kernel (null space), via reduced row echelon form.
    /// Vectors are scaled to integer entries with positive leading entry.
    pub fn kernel_basis(&self) -> Vec<Vec<Rat>> {
        let (n, m) = (self.rows, self.cols);
        let mut a: Vec<Vec<Rat>> = (0..n).map(|i| self.row(i).to_vec()).collect();
        let mut pivots: Vec<usize> = Vec::new();
        let mut row = 0;
        for col in 0..m {
            let mut pivot = None;
            for r in row..n {
                if !a[r][col].is_zero() {
                    pivot = Some(r);
                    break;
                }
            }
            let Some(p) = pivot else { continue };
            a.swap(row, p);
            let inv = a[row][col].recip();
            for c in col..m {
                let v = &a[row][c] * &inv;
                a[row][c] = v;
            }
            for r in 0..n {
                if r != row && !a[r][col].is_zero() {
                    let factor = a[r][col].clone();
                    for c in col..m {
                        let v = &a[r][c] - &factor * &a[row][c];
                        a[r][c] = v;
                    }
                }
            }
            pivots.push(col);
            row += 1;
            if row == n {
                break;
            }
        }
        let free: Vec<usize> = (0..m).filter(|c| !pivots.contains(c)).collect();
        let mut basis = Vec::new();
        for &f in &free {
            let mut v = vec![Rat::zero(); m];
            v[f] = Rat::one();
            for (r, &pc) in pivots.iter().enumerate() {
                v[pc] = -a[r][f].clone();
            }
            // Integer scaling with positive first nonzero entry.
            let mut lcm = BigInt::one();
            for x in &v {
                lcm = bigint_gcd::lcm(lcm, x.denom().clone());
            }
            let mut gcd = BigInt::zero();
            for x in &v {
                gcd = bigint_gcd::gcd(gcd, (x.numer() * (&lcm / x.denom())).abs());
            }
            if gcd.is_zero() {
                gcd = BigInt::one();
            }
            let scale = Rat::new(lcm, gcd);
            let mut v: Vec<Rat> = v.iter().map(|x| x * &scale).collect();
            if let Some(first) = v.iter().find(|x| !x.is_zero()) {
                if first.is_negative() {
                    v = v.iter().map(|x| -x).collect();
                }
            }
            basis.push(v);
        }
        basis
    }
}

impl std::ops::Index<(usize, usize)> for RatMatrix {
    type Output = Rat;
    fn index(&self, (r, c): (usize, usize)) -> &Rat {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for RatMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Rat {
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::rat_int;

    #[test]
    fn identity_rank() {
        assert_eq!(RatMatrix::identity(3).rank(), 3);
    }

    #[test]
    fn rank_with_dependent_rows() {
        let m = RatMatrix::from_rows(vec![
            vec![rat_int(1), rat_int(2), rat_int(3)],
            vec![rat_int(2), rat_int(4), rat_int(6)],
            vec![rat_int(0), rat_int(1), rat_int(1)],
        ]);
        assert_eq!(m.rank(), 2);
    }

    #[test]
    fn kernel_of_dependent_rows() {
        let m = RatMatrix::from_rows(vec![
            vec![rat_int(1), rat_int(1), rat_int(0)],
            vec![rat_int(0), rat_int(1), rat_int(1)],
        ]);
        let k = m.kernel_basis();
        assert_eq!(k.len(), 1);
        // v = (1, -1, 1)
        assert_eq!(k[0], vec![rat_int(1), rat_int(-1), rat_int(1)]);
    }

    #[test]
    fn kernel_dimension_plus_rank_is_cols() {
        let m = RatMatrix::from_rows(vec![
            vec![rat_int(1), rat_int(2), rat_int(3), rat_int(4)],
            vec![rat_int(2), rat_int(4), rat_int(6), rat_int(8)],
        ]);
        assert_eq!(m.rank() + m.kernel_basis().len(), 4);
    }
}
