//! Sparse storage, a banded LU factorization and the Rayleigh-Ritz step
//! shared by the eigenvalue estimators.
//!
//! Structured P1 meshes numbered row by row have bandwidth `nx + 1`, so a
//! band LU with partial pivoting is both simple and fast here. It also covers
//! the indefinite matrices `A - J` that arise at unstable equilibria.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Square matrix in compressed sparse row format with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix, summing duplicate entries.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            assert!(i < n && j < n, "triplet ({i}, {j}) out of range for n = {n}");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `x^T M y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.mul_vec(y))
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert_eq!(self.n, other.n);
        let t = self
            .triplets()
            .map(|(i, j, v)| (i, j, alpha * v))
            .chain(other.triplets().map(|(i, j, v)| (i, j, beta * v)))
            .collect();
        CsrMatrix::from_triplets(self.n, t)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |m_ij - m_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    /// Lower and upper bandwidths of the stored pattern.
    pub fn bandwidths(&self) -> (usize, usize) {
        self.triplets().fold((0, 0), |(kl, ku), (i, j, _)| {
            if i > j {
                (kl.max(i - j), ku)
            } else {
                (kl, ku.max(j - i))
            }
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            d[(i, j)] += v;
        }
        d
    }

    /// Matrix Market coordinate format, 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n, self.n, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Relative pivot threshold below which a matrix is reported singular.
const PIVOT_TOLERANCE: f64 = 1e-11;

/// LU factorization with partial pivoting in band storage.
///
/// Row `i` stores columns `i - kl ..= i + ku + kl`; pivoting can push fill up
/// to `kl` positions beyond the original upper bandwidth.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    upper: Vec<f64>,
    multipliers: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(m: &CsrMatrix) -> Result<Self> {
        let n = m.dim();
        let (kl, ku) = m.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            width,
            upper: vec![0.0; n * width],
            multipliers: vec![0.0; n * kl],
            pivots: vec![0; n],
        };
        for (i, j, v) in m.triplets() {
            let k = lu.index(i, j);
            lu.upper[k] += v;
        }
        let threshold = PIVOT_TOLERANCE * m.max_abs();
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = lu.upper[lu.index(k, k)].abs();
            for i in k + 1..=last_row {
                let v = lu.upper[lu.index(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > threshold) {
                return Err(Error::Singular { row: k, pivot: best });
            }
            lu.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (lu.index(k, j), lu.index(p, j));
                    lu.upper.swap(a, b);
                }
            }
            let pivot = lu.upper[lu.index(k, k)];
            for i in k + 1..=last_row {
                let l = lu.upper[lu.index(i, k)] / pivot;
                lu.multipliers[k * kl + (i - k - 1)] = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let src = lu.upper[lu.index(k, j)];
                        let dst = lu.index(i, j);
                        lu.upper[dst] -= l * src;
                    }
                }
            }
        }
        Ok(lu)
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl);
        i * self.width + (j + self.kl - i)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut y = b.to_vec();
        for k in 0..n {
            y.swap(k, self.pivots[k]);
            let yk = y[k];
            if yk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    y[i] -= self.multipliers[k * self.kl + (i - k - 1)] * yk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = y[k];
            for j in k + 1..=(k + self.kl + self.ku).min(n - 1) {
                s -= self.upper[self.index(k, j)] * y[j];
            }
            y[k] = s / self.upper[self.index(k, k)];
        }
        y
    }
}

/// Orthonormalizes `basis` in the inner product `<x, y> = x^T B y` by modified
/// Gram-Schmidt. Vectors that collapse are dropped.
pub fn b_orthonormalize(basis: &mut Vec<Vec<f64>>, b_apply: &dyn Fn(&[f64]) -> Vec<f64>) {
    let mut out: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(basis.len());
    for v in basis.drain(..) {
        let mut v = v;
        let original = dot(&v, &b_apply(&v)).max(0.0).sqrt();
        for _ in 0..2 {
            for (q, bq) in &out {
                let c = dot(&v, bq);
                axpy(-c, q, &mut v);
            }
        }
        let bv = b_apply(&v);
        let norm = dot(&v, &bv).max(0.0).sqrt();
        if norm > 1e-10 * original && norm > 0.0 {
            let inv = 1.0 / norm;
            out.push((
                v.iter().map(|x| x * inv).collect(),
                bv.iter().map(|x| x * inv).collect(),
            ));
        }
    }
    basis.extend(out.into_iter().map(|(q, _)| q));
}

/// Ritz pairs of the pencil `(K, B)` on the span of `basis`, where `basis` is
/// `B`-orthonormal. Values are returned unsorted with their vectors.
pub fn rayleigh_ritz(
    basis: &[Vec<f64>],
    k_apply: &dyn Fn(&[f64]) -> Vec<f64>,
    b_apply: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let p = basis.len();
    let kv: Vec<Vec<f64>> = basis.iter().map(|v| k_apply(v)).collect();
    let bv: Vec<Vec<f64>> = basis.iter().map(|v| b_apply(v)).collect();
    let mut kp = DMatrix::zeros(p, p);
    let mut bp = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            kp[(i, j)] = dot(&basis[i], &kv[j]);
            bp[(i, j)] = dot(&basis[i], &bv[j]);
        }
    }
    let kp = (&kp + kp.transpose()) * 0.5;
    let bp = (&bp + bp.transpose()) * 0.5;
    let chol = bp
        .cholesky()
        .ok_or_else(|| Error::Domain("projected mass matrix is not positive definite".into()))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::Domain("projected mass factor is singular".into()))?;
    let c = &l_inv * kp * l_inv.transpose();
    let eig = SymmetricEigen::new((&c + c.transpose()) * 0.5);
    let coeffs = l_inv.transpose() * eig.eigenvectors;
    let n = basis[0].len();
    let vectors = (0..p)
        .map(|k| {
            let mut v = vec![0.0; n];
            for (i, b) in basis.iter().enumerate() {
                axpy(coeffs[(i, k)], b, &mut v);
            }
            v
        })
        .collect();
    Ok((eig.eigenvalues.iter().copied().collect(), vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn laplacian_like(n: usize, shift: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn triplets_are_summed_and_sorted() {
        let m = CsrMatrix::from_triplets(3, vec![(2, 1, 1.0), (0, 0, 1.0), (2, 1, 2.5), (1, 2, -1.0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(2, 1), 3.5);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![1.0, -1.0, 3.5]);
        assert_eq!(m.bandwidths(), (1, 1));
    }

    #[test]
    fn matrix_market_header() {
        let m = laplacian_like(3, 0.0);
        let mut out = Vec::new();
        m.write_matrix_market(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("%%MatrixMarket matrix coordinate real general"));
        assert_eq!(lines.next(), Some("3 3 7"));
        assert_eq!(lines.next(), Some("1 1 2e0"));
    }

    #[test]
    fn lu_detects_singular() {
        // Neumann Laplacian annihilates constants.
        let mut m = laplacian_like(6, 0.0);
        m = m.combine(1.0, &CsrMatrix::from_triplets(6, vec![(0, 0, -1.0), (5, 5, -1.0)]), 1.0);
        assert!(matches!(BandedLu::factor(&m), Err(Error::Singular { .. })));
    }

    #[test]
    fn lu_handles_indefinite_systems() {
        let m = laplacian_like(9, -2.5);
        let lu = BandedLu::factor(&m).unwrap();
        let x: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
        let b = m.mul_vec(&x);
        let y = lu.solve(&b);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ritz_recovers_diagonal_spectrum() {
        let n = 5;
        let k = CsrMatrix::from_triplets(n, (0..n).map(|i| (i, i, (i + 1) as f64)).collect());
        let id = |v: &[f64]| v.to_vec();
        let mut basis: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.1 }).collect())
            .collect();
        b_orthonormalize(&mut basis, &id);
        let (mut vals, _) = rayleigh_ritz(&basis, &|v| k.mul_vec(v), &id).unwrap();
        vals.sort_by(f64::total_cmp);
        for (i, v) in vals.iter().enumerate() {
            assert!((v - (i + 1) as f64).abs() < 1e-12);
        }
    }

    fn banded_system() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
        (3usize..20, 0usize..4).prop_flat_map(|(n, bw)| {
            let count = n * (2 * bw + 1);
            (
                Just(n),
                Just(bw),
                proptest::collection::vec(-1.0f64..1.0, count),
                proptest::collection::vec(-1.0f64..1.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn lu_solves_diagonally_dominant_band((n, bw, entries, x) in banded_system()) {
            let mut t = Vec::new();
            let mut it = entries.into_iter();
            for i in 0..n {
                for d in 0..=2 * bw {
                    let v = it.next().unwrap();
                    let j = i as isize + d as isize - bw as isize;
                    if j >= 0 && (j as usize) < n {
                        let diag = if j as usize == i { 4.0 * (bw as f64 + 1.0) } else { 0.0 };
                        t.push((i, j as usize, v + diag));
                    }
                }
            }
            let m = CsrMatrix::from_triplets(n, t);
            let lu = BandedLu::factor(&m).unwrap();
            let y = lu.solve(&m.mul_vec(&x));
            for (a, b) in x.iter().zip(&y) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
