//! Low-lying spectrum of the linearization `A - DF(u*)` against the L2 mass
//! matrix, and the hyperbolicity verdict built on it.
//!
//! `A - DF(u*)` is assembled from symmetric multiplication operators, so the
//! pencil is symmetric and every eigenvalue is real. Staying off the
//! imaginary axis then means `0` is not an eigenvalue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{DiscreteProblem, Field};
use crate::linalg::{b_orthonormalize, rayleigh_ritz, BandedLu, CsrMatrix};

/// Declared bound on the relative eigenpair residuals.
pub const EIGEN_TOLERANCE: f64 = 1e-8;
/// Default number of eigenvalues used by [`is_hyperbolic`].
pub const DEFAULT_COUNT: usize = 6;

const TARGET_RESIDUAL: f64 = 1e-12;
const MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Sorted by increasing magnitude.
    pub eigenvalues: Vec<f64>,
    /// `||(A - J) v - lambda M v|| / ((||A - J|| + |lambda| ||M||) ||v||)`.
    pub residuals: Vec<f64>,
    pub hyperbolic: bool,
    /// Smallest `|lambda|`; zero when `A - J` is singular.
    pub margin: f64,
    /// Threshold the margin was compared against.
    pub tolerance: f64,
    pub singular: bool,
    #[serde(skip)]
    pub eigenvectors: Vec<Vec<f64>>,
}

fn inf_norm(m: &CsrMatrix) -> f64 {
    (0..m.dim())
        .map(|i| m.row(i).map(|(_, v)| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// The `m` eigenvalues of smallest magnitude of `(A - J) v = lambda M v`,
/// by block inverse iteration at shift zero with Rayleigh-Ritz on the pencil.
///
/// A singular `A - J` is not an error: the iteration moves to a tiny negative
/// shift, the report carries `margin = 0` and `hyperbolic = false`.
pub fn linearized_spectrum(problem: &DiscreteProblem, ustar: &Field, m: usize) -> Result<SpectrumReport> {
    let n = problem.mesh().node_count();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("cannot compute {m} eigenvalues of a size-{n} problem")));
    }
    let lin = problem.linearization(ustar)?;
    let mass = &problem.mass().matrix;
    let (lu, singular) = match BandedLu::factor(&lin) {
        Ok(lu) => (lu, false),
        Err(Error::Singular { .. }) => {
            let shift = -1e-8 * lin.max_abs() / mass.max_abs();
            (BandedLu::factor(&lin.combine(1.0, mass, -shift))?, true)
        }
        Err(e) => return Err(e),
    };
    let (lin_norm, mass_norm) = (inf_norm(&lin), inf_norm(mass));

    let block = (m + 4).max(2 * m).min(n);
    let m_apply = |v: &[f64]| mass.mul_vec(v);
    let k_apply = |v: &[f64]| lin.mul_vec(v);
    let mut rng = ChaCha8Rng::seed_from_u64(0xe16e);
    let mut basis: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    b_orthonormalize(&mut basis, &m_apply);

    let mut best: Vec<f64> = Vec::new();
    for _ in 0..MAX_ITER {
        let mut next: Vec<Vec<f64>> = basis.iter().map(|v| lu.solve(&mass.mul_vec(v))).collect();
        b_orthonormalize(&mut next, &m_apply);
        while next.len() < block {
            next.push((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
            b_orthonormalize(&mut next, &m_apply);
        }
        let (values, vectors) = rayleigh_ritz(&next, &k_apply, &m_apply)?;
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()));
        let values: Vec<f64> = order.iter().map(|&k| values[k]).collect();
        let vectors: Vec<Vec<f64>> = order.iter().map(|&k| vectors[k].clone()).collect();

        let residuals: Vec<f64> = (0..m)
            .map(|k| {
                let v = &vectors[k];
                let lv = lin.mul_vec(v);
                let mv = mass.mul_vec(v);
                let r: f64 = lv.iter().zip(&mv).map(|(a, b)| (a - values[k] * b).powi(2)).sum::<f64>().sqrt();
                let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                r / ((lin_norm + values[k].abs() * mass_norm) * vn)
            })
            .collect();
        best = values[..m].to_vec();
        if residuals.iter().all(|&r| r <= TARGET_RESIDUAL) {
            return Ok(build_report(values[..m].to_vec(), residuals, vectors[..m].to_vec(), singular));
        }
        if residuals.iter().all(|&r| r <= EIGEN_TOLERANCE) && residuals.iter().all(|r| r.is_finite()) {
            // Accept once no further progress is possible at this precision.
            let stalled = next_is_stalled(&basis, &vectors, &m_apply, m);
            if stalled {
                return Ok(build_report(values[..m].to_vec(), residuals, vectors[..m].to_vec(), singular));
            }
        }
        basis = vectors;
    }
    Err(Error::EigenStagnation {
        iterations: MAX_ITER,
        partial: best,
    })
}

/// True when the leading `m` Ritz vectors no longer move between sweeps.
fn next_is_stalled(old: &[Vec<f64>], new: &[Vec<f64>], m_apply: &dyn Fn(&[f64]) -> Vec<f64>, m: usize) -> bool {
    (0..m).all(|k| {
        let mo = m_apply(&old[k]);
        let c: f64 = new[k].iter().zip(&mo).map(|(a, b)| a * b).sum();
        (1.0 - c.abs()) < 1e-14
    })
}

fn build_report(eigenvalues: Vec<f64>, residuals: Vec<f64>, eigenvectors: Vec<Vec<f64>>, singular: bool) -> SpectrumReport {
    let largest = eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tolerance = 1e-6 * largest;
    let margin = if singular { 0.0 } else { eigenvalues[0].abs() };
    SpectrumReport {
        hyperbolic: !singular && margin > tolerance,
        eigenvalues,
        residuals,
        margin,
        tolerance,
        singular,
        eigenvectors,
    }
}

/// Hyperbolicity verdict from the [`DEFAULT_COUNT`] smallest eigenvalues.
/// `tol` defaults to `1e-6` times the largest computed magnitude.
pub fn is_hyperbolic(problem: &DiscreteProblem, ustar: &Field, tol: Option<f64>) -> Result<(bool, SpectrumReport)> {
    let m = DEFAULT_COUNT.min(problem.mesh().node_count());
    let mut report = linearized_spectrum(problem, ustar, m)?;
    if let Some(t) = tol {
        report.tolerance = t;
        report.hyperbolic = !report.singular && report.margin > t;
    }
    Ok((report.hyperbolic, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{Catalog, Mode};
    use crate::geometry::build_interval_mesh;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn limit(n: usize, c: Catalog) -> DiscreteProblem {
        DiscreteProblem::new(Arc::new(build_interval_mesh(n).unwrap()), c.spec(Mode::Limit)).unwrap()
    }

    #[test]
    fn neumann_spectrum() {
        let p = limit(128, Catalog::Zero);
        let r = linearized_spectrum(&p, &Field::zeros(p.mesh()), 3).unwrap();
        assert!((r.eigenvalues[0] - 1.0).abs() < 1e-10);
        assert!((r.eigenvalues[1] - (1.0 + PI * PI)).abs() < 2e-3);
        assert!((r.eigenvalues[2] - (1.0 + 4.0 * PI * PI)).abs() < 3e-2);
        assert!(r.residuals.iter().all(|&x| x <= EIGEN_TOLERANCE));
        assert!(r.hyperbolic);
    }

    #[test]
    fn unstable_equilibrium_is_still_hyperbolic() {
        let p = limit(64, Catalog::TanhInterior);
        let (ok, r) = is_hyperbolic(&p, &Field::zeros(p.mesh()), Some(0.1)).unwrap();
        assert!(ok);
        assert!((r.eigenvalues[0] + 1.0).abs() < 1e-10);
        assert!((r.eigenvalues[1] - (PI * PI - 1.0)).abs() < 1e-2);
    }

    #[test]
    fn degenerate_linearization_is_not_hyperbolic() {
        let p = limit(32, Catalog::LinearDegenerate);
        let (ok, r) = is_hyperbolic(&p, &Field::constant(p.mesh(), 0.4), None).unwrap();
        assert!(!ok);
        assert_eq!(r.margin, 0.0);
        assert!(r.singular);
        assert!(r.eigenvalues[0].abs() < 1e-8);
    }

    #[test]
    fn second_eigenvalue_converges_at_second_order() {
        let mut values = Vec::new();
        for n in [16, 32, 64] {
            let p = limit(n, Catalog::Zero);
            values.push(linearized_spectrum(&p, &Field::zeros(p.mesh()), 2).unwrap().eigenvalues[1]);
        }
        let ratio = (values[0] - values[1]) / (values[1] - values[2]);
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rejects_bad_counts() {
        let p = limit(4, Catalog::Zero);
        assert!(linearized_spectrum(&p, &Field::zeros(p.mesh()), 0).is_err());
        assert!(linearized_spectrum(&p, &Field::zeros(p.mesh()), 6).is_err());
    }
}
