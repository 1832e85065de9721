//! Brute-force references for the main code path.
//!
//! Nothing here calls into the quadrature or assembly code of
//! [`crate::geometry`] and [`crate::forms`]: the dense system is rebuilt from
//! the serialized mesh document with its own rules, closed-form element
//! matrices and its own strip integration. The only coupling is the
//! discrepancy report of [`dense_check`].

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{DiscreteProblem, Field, Mode, ProblemSpec};
use crate::geometry::{Mesh, MeshDocument};

/// Largest node count accepted by the dense routines.
pub const MAX_DENSE_NODES: usize = 64;

const G3_X: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const G3_W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

const G5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const G5_W: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

const SUBDIVISION_DEPTH: usize = 6;

/// Dense `A`, `M`, `J` and `F(u)` at small `n`.
#[derive(Debug, Clone)]
pub struct DenseSystem {
    pub lambda: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    pub jacobian: DMatrix<f64>,
    pub nonlinear: DVector<f64>,
}

/// Max relative entry discrepancies between the dense and sparse systems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub nodes: usize,
    pub mode: Mode,
    pub lambda: f64,
    pub mass: f64,
    pub jacobian: f64,
    pub nonlinear: f64,
    pub max: f64,
}

impl DiscrepancyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A weighted point together with the P1 basis values of its element.
struct Sample {
    nodes: Vec<usize>,
    basis: Vec<f64>,
    weight: f64,
}

struct DenseMesh {
    dim: usize,
    nodes: Vec<[f64; 2]>,
    elements: Vec<Vec<usize>>,
}

impl DenseMesh {
    fn from_document(doc: &MeshDocument) -> Result<Self> {
        let nodes = doc
            .nodes
            .iter()
            .map(|p| [p[0], p.get(1).copied().unwrap_or(0.0)])
            .collect();
        let dim = doc.dimension;
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidMesh(format!("unsupported dimension {dim}")));
        }
        Ok(DenseMesh {
            dim,
            nodes,
            elements: doc.elements.clone(),
        })
    }

    fn vertices(&self, e: usize) -> Vec<[f64; 2]> {
        self.elements[e].iter().map(|&i| self.nodes[i]).collect()
    }

    /// Affine map of the reference simplex onto element `e`, as a matrix of
    /// edge vectors; its inverse gives the basis gradients.
    fn jacobian_2d(&self, e: usize) -> DMatrix<f64> {
        let v = self.vertices(e);
        DMatrix::from_row_slice(2, 2, &[v[1][0] - v[0][0], v[2][0] - v[0][0], v[1][1] - v[0][1], v[2][1] - v[0][1]])
    }

    fn size(&self, e: usize) -> f64 {
        match self.dim {
            1 => {
                let v = self.vertices(e);
                (v[1][0] - v[0][0]).abs()
            }
            _ => 0.5 * self.jacobian_2d(e).determinant().abs(),
        }
    }

    fn gradients(&self, e: usize) -> Vec<[f64; 2]> {
        match self.dim {
            1 => {
                let v = self.vertices(e);
                let d = v[1][0] - v[0][0];
                vec![[-1.0 / d, 0.0], [1.0 / d, 0.0]]
            }
            _ => {
                let inv = self.jacobian_2d(e).try_inverse().expect("nondegenerate triangle");
                // Reference gradients (-1,-1), (1,0), (0,1) pulled back by inv^T.
                let reference = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
                reference
                    .iter()
                    .map(|r| {
                        [
                            inv[(0, 0)] * r[0] + inv[(1, 0)] * r[1],
                            inv[(0, 1)] * r[0] + inv[(1, 1)] * r[1],
                        ]
                    })
                    .collect()
            }
        }
    }

    /// Basis values of element `e` at `x`.
    fn basis_at(&self, e: usize, x: [f64; 2]) -> Vec<f64> {
        let v = self.vertices(e);
        match self.dim {
            1 => {
                let t = (x[0] - v[0][0]) / (v[1][0] - v[0][0]);
                vec![1.0 - t, t]
            }
            _ => {
                let inv = self.jacobian_2d(e).try_inverse().expect("nondegenerate triangle");
                let r = [x[0] - v[0][0], x[1] - v[0][1]];
                let s = inv[(0, 0)] * r[0] + inv[(0, 1)] * r[1];
                let t = inv[(1, 0)] * r[0] + inv[(1, 1)] * r[1];
                vec![1.0 - s - t, s, t]
            }
        }
    }

    fn sample(&self, e: usize, x: [f64; 2], weight: f64) -> Sample {
        Sample {
            nodes: self.elements[e].clone(),
            basis: self.basis_at(e, x),
            weight,
        }
    }

    /// Gauss points on `[a, b]` inside 1-D element `e`.
    fn segment_samples(&self, e: usize, a: f64, b: f64, out: &mut Vec<Sample>) {
        for (xi, w) in G3_X.iter().zip(G3_W) {
            let x = 0.5 * (a + b) + 0.5 * (b - a) * xi;
            out.push(self.sample(e, [x, 0.0], 0.5 * (b - a) * w));
        }
    }

    /// Degree-2 rule on the sub-triangle `t` of element `e`.
    fn triangle_samples(&self, e: usize, t: &[[f64; 2]; 3], out: &mut Vec<Sample>) {
        let area = 0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1])).abs();
        for k in 0..3 {
            let (a, b, c) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
            let x = [
                (4.0 * a[0] + b[0] + c[0]) / 6.0,
                (4.0 * a[1] + b[1] + c[1]) / 6.0,
            ];
            out.push(self.sample(e, x, area / 3.0));
        }
    }

    fn interior_samples(&self) -> Vec<Sample> {
        let mut out = Vec::new();
        for e in 0..self.elements.len() {
            let v = self.vertices(e);
            match self.dim {
                1 => self.segment_samples(e, v[0][0], v[1][0], &mut out),
                _ => self.triangle_samples(e, &[v[0], v[1], v[2]], &mut out),
            }
        }
        out
    }

    /// Boundary points (1-D) or Gauss points on edges owned by exactly one
    /// triangle (2-D).
    fn boundary_samples(&self) -> Vec<Sample> {
        let mut out = Vec::new();
        if self.dim == 1 {
            for (e, el) in self.elements.iter().enumerate() {
                for &i in el {
                    let x = self.nodes[i][0];
                    if x == 0.0 || x == 1.0 {
                        out.push(self.sample(e, self.nodes[i], 1.0));
                    }
                }
            }
            return out;
        }
        let mut owners: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (e, el) in self.elements.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (el[k], el[(k + 1) % 3]);
                owners.entry((a.min(b), a.max(b))).or_default().push(e);
            }
        }
        let mut edges: Vec<_> = owners.into_iter().filter(|(_, o)| o.len() == 1).collect();
        edges.sort();
        for ((a, b), owner) in edges {
            let (pa, pb) = (self.nodes[a], self.nodes[b]);
            let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
            for (xi, w) in G3_X.iter().zip(G3_W) {
                let t = 0.5 * (1.0 + xi);
                let x = [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
                out.push(self.sample(owner[0], x, 0.5 * len * w));
            }
        }
        out
    }

    fn strip_samples(&self, eps: f64) -> Vec<Sample> {
        let mut out = Vec::new();
        for e in 0..self.elements.len() {
            let v = self.vertices(e);
            if self.dim == 1 {
                let (a, b) = (v[0][0].min(v[1][0]), v[0][0].max(v[1][0]));
                for (lo, hi) in [(0.0, eps), (1.0 - eps, 1.0)] {
                    let (c, d) = (a.max(lo), b.min(hi));
                    if d > c {
                        self.segment_samples(e, c, d, &mut out);
                    }
                }
            } else {
                self.refine_strip(e, [v[0], v[1], v[2]], eps, 0, &mut out);
            }
        }
        out
    }

    /// Recursive four-way refinement: sub-triangles inside the inner square
    /// are dropped, those inside one of the four bands are kept whole, mixed
    /// ones are split. At the depth limit the centroid decides.
    fn refine_strip(&self, e: usize, t: [[f64; 2]; 3], eps: f64, depth: usize, out: &mut Vec<Sample>) {
        // Vertices within rounding distance of a band edge count as on it.
        const SLACK: f64 = 1e-12;
        let hi = 1.0 - eps;
        let inner = |p: &[f64; 2]| {
            p[0] >= eps - SLACK && p[0] <= hi + SLACK && p[1] >= eps - SLACK && p[1] <= hi + SLACK
        };
        if t.iter().all(inner) {
            return;
        }
        let in_band = |p: &[f64; 2], band: usize| match band {
            0 => p[0] <= eps + SLACK,
            1 => p[0] >= hi - SLACK,
            2 => p[1] <= eps + SLACK,
            _ => p[1] >= hi - SLACK,
        };
        if (0..4).any(|band| t.iter().all(|p| in_band(p, band))) {
            self.triangle_samples(e, &t, out);
            return;
        }
        if depth == SUBDIVISION_DEPTH {
            let c = [(t[0][0] + t[1][0] + t[2][0]) / 3.0, (t[0][1] + t[1][1] + t[2][1]) / 3.0];
            if !inner(&c) {
                self.triangle_samples(e, &t, out);
            }
            return;
        }
        let mid = |a: [f64; 2], b: [f64; 2]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let (m01, m12, m20) = (mid(t[0], t[1]), mid(t[1], t[2]), mid(t[2], t[0]));
        for sub in [[t[0], m01, m20], [m01, t[1], m12], [m20, m12, t[2]], [m01, m12, m20]] {
            self.refine_strip(e, sub, eps, depth + 1, out);
        }
    }
}

fn u_at(s: &Sample, u: &[f64]) -> f64 {
    s.nodes.iter().zip(&s.basis).map(|(&i, b)| u[i] * b).sum()
}

fn add_weighted_mass(out: &mut DMatrix<f64>, samples: &[Sample], scale: f64, weight: impl Fn(&Sample) -> f64) {
    for s in samples {
        let c = scale * s.weight * weight(s);
        for (k, &i) in s.nodes.iter().enumerate() {
            for (l, &j) in s.nodes.iter().enumerate() {
                out[(i, j)] += c * s.basis[k] * s.basis[l];
            }
        }
    }
}

fn add_load(out: &mut DVector<f64>, samples: &[Sample], scale: f64, value: impl Fn(&Sample) -> f64) {
    for s in samples {
        let c = scale * s.weight * value(s);
        for (k, &i) in s.nodes.iter().enumerate() {
            out[i] += c * s.basis[k];
        }
    }
}

/// Assembles the dense system from the mesh document.
pub fn assemble_dense(doc: &MeshDocument, spec: &ProblemSpec, u: &[f64]) -> Result<DenseSystem> {
    let mesh = DenseMesh::from_document(doc)?;
    let n = mesh.nodes.len();
    if n > MAX_DENSE_NODES {
        return Err(Error::InvalidArgument(format!(
            "dense oracle accepts at most {MAX_DENSE_NODES} nodes, got {n}"
        )));
    }
    if u.len() != n {
        return Err(Error::MeshMismatch);
    }
    let mut lambda = DMatrix::zeros(n, n);
    let mut mass = DMatrix::zeros(n, n);
    for (e, el) in mesh.elements.iter().enumerate() {
        let size = mesh.size(e);
        let v = mesh.vertices(e);
        let centroid = [
            v.iter().map(|p| p[0]).sum::<f64>() / v.len() as f64,
            v.iter().map(|p| p[1]).sum::<f64>() / v.len() as f64,
        ];
        let a = spec.coefficient.at(centroid);
        let grads = mesh.gradients(e);
        let k = el.len();
        let denom = if k == 2 { 6.0 } else { 12.0 };
        for (p, &i) in el.iter().enumerate() {
            for (q, &j) in el.iter().enumerate() {
                let m = size * if p == q { 2.0 } else { 1.0 } / denom;
                let s = size * a * (grads[p][0] * grads[q][0] + grads[p][1] * grads[q][1]);
                mass[(i, j)] += m;
                lambda[(i, j)] += s + m;
            }
        }
    }

    let interior = mesh.interior_samples();
    let mut jacobian = DMatrix::zeros(n, n);
    let mut nonlinear = DVector::zeros(n);
    add_weighted_mass(&mut jacobian, &interior, 1.0, |s| spec.f.d1(u_at(s, u)));
    add_load(&mut nonlinear, &interior, 1.0, |s| spec.f.value(u_at(s, u)));
    let (g_samples, scale) = match spec.mode {
        Mode::Concentrated { epsilon } => (mesh.strip_samples(epsilon), 1.0 / epsilon),
        Mode::Limit => (mesh.boundary_samples(), 1.0),
    };
    add_weighted_mass(&mut jacobian, &g_samples, scale, |s| spec.g.d1(u_at(s, u)));
    add_load(&mut nonlinear, &g_samples, scale, |s| spec.g.value(u_at(s, u)));
    Ok(DenseSystem {
        lambda,
        mass,
        jacobian,
        nonlinear,
    })
}

fn relative_gap(dense: &DMatrix<f64>, sparse: &DMatrix<f64>) -> f64 {
    let diff = (dense - sparse).abs().max();
    let scale = dense.abs().max();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Rebuilds `A`, `M`, `J(u)` and `F(u)` densely and compares them with the
/// sparse assembly.
pub fn dense_check(mesh: &Mesh, spec: &ProblemSpec, u: &Field) -> Result<DiscrepancyReport> {
    let dense = assemble_dense(&mesh.to_document(), spec, u.values())?;
    let problem = DiscreteProblem::new(u.mesh().clone(), spec.clone())?;
    let lambda = relative_gap(&dense.lambda, &problem.lambda().matrix.to_dense());
    let mass = relative_gap(&dense.mass, &problem.mass().matrix.to_dense());
    let jacobian = relative_gap(&dense.jacobian, &problem.assemble_jacobian(u)?.matrix.to_dense());
    let f = DVector::from_vec(problem.nonlinear(u)?.into_values());
    let fd = &dense.nonlinear;
    let nonlinear = {
        let diff = (fd - &f).abs().max();
        let scale = fd.abs().max();
        if scale > 0.0 {
            diff / scale
        } else {
            diff
        }
    };
    Ok(DiscrepancyReport {
        nodes: mesh.node_count(),
        mode: spec.mode,
        lambda,
        mass,
        jacobian,
        nonlinear,
        max: lambda.max(mass).max(jacobian).max(nonlinear),
    })
}

/// `sqrt(r^T A^{-1} r)` by dense Cholesky.
pub fn dense_dual_norm(a: &DMatrix<f64>, r: &[f64]) -> Result<f64> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("matrix is not positive definite".into()))?;
    let r = DVector::from_column_slice(r);
    Ok(r.dot(&chol.solve(&r)).sqrt())
}

/// All eigenvalues of `K v = mu B v` with `B` positive definite, ascending.
pub fn dense_generalized_eigenvalues(k: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    let l = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("matrix is not positive definite".into()))?
        .l();
    let l_inv = l
        .try_inverse()
        .ok_or_else(|| Error::Domain("singular Cholesky factor".into()))?;
    let c = &l_inv * k * l_inv.transpose();
    let c = 0.5 * (&c + c.transpose());
    let mut values: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Largest `|mu|` with `G w = mu A w`.
pub fn dense_operator_norm(g: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<f64> {
    Ok(dense_generalized_eigenvalues(g, a)?
        .into_iter()
        .fold(0.0, |m, v| m.max(v.abs())))
}

/// Root of `f` in `[lo, hi]` to within `tol`.
pub fn bisect_root(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let (mut fa, fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if !(fa * fb < 0.0) {
        return Err(Error::Domain(format!("no sign change on [{lo}, {hi}]")));
    }
    while b - a > tol {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    Ok(0.5 * (a + b))
}

/// Closed-form solutions of the 1-D problems with `a = 1`, `f = 0` and
/// constant `g = c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticSolution {
    /// `-u'' + u = 0`, `u'(0) = -c`, `u'(1) = c`.
    Limit { c: f64 },
    /// `-u'' + u = (c/eps) chi`, homogeneous Neumann conditions.
    Concentrated { c: f64, epsilon: f64 },
}

pub fn analytic_1d_limit_solution(c: f64) -> AnalyticSolution {
    AnalyticSolution::Limit { c }
}

pub fn analytic_1d_concentrated_solution(c: f64, epsilon: f64) -> Result<AnalyticSolution> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside (0, 1/2)")));
    }
    Ok(AnalyticSolution::Concentrated { c, epsilon })
}

impl AnalyticSolution {
    /// Points where the solution is only C^1.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            AnalyticSolution::Limit { .. } => Vec::new(),
            AnalyticSolution::Concentrated { epsilon, .. } => vec![epsilon, 1.0 - epsilon],
        }
    }

    /// `(u, u', u'')` at `x`.
    fn jet(&self, x: f64) -> [f64; 3] {
        let s = 0.5f64.sinh();
        match *self {
            AnalyticSolution::Limit { c } => {
                let y = x - 0.5;
                [c * y.cosh() / s, c * y.sinh() / s, c * y.cosh() / s]
            }
            AnalyticSolution::Concentrated { c, epsilon } => {
                let q = c / epsilon;
                // Mirror symmetry about 1/2.
                let (y, sign) = if x > 0.5 { (1.0 - x, -1.0) } else { (x, 1.0) };
                if y < epsilon {
                    let a = q * (epsilon - 0.5).sinh() / s;
                    [q + a * y.cosh(), sign * a * y.sinh(), a * y.cosh()]
                } else {
                    let b = q * epsilon.sinh() / s;
                    let z = y - 0.5;
                    [b * z.cosh(), sign * b * z.sinh(), b * z.cosh()]
                }
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.jet(x)[0]
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.jet(x)[1]
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        self.jet(x)[2]
    }

    /// Right-hand side of `-u'' + u = rhs` in the interior.
    pub fn rhs(&self, x: f64) -> f64 {
        match *self {
            AnalyticSolution::Limit { .. } => 0.0,
            AnalyticSolution::Concentrated { c, epsilon } => {
                if x < epsilon || x > 1.0 - epsilon {
                    c / epsilon
                } else {
                    0.0
                }
            }
        }
    }
}

/// Five-point Gauss on `pieces` equal parts of each interval between sorted
/// cut points of `[0, 1]`.
fn fine_integral(f: impl Fn(f64) -> f64, cuts: &[f64], pieces: usize) -> f64 {
    let mut points: Vec<f64> = cuts.iter().copied().filter(|&c| c > 0.0 && c < 1.0).collect();
    points.push(0.0);
    points.push(1.0);
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut total = 0.0;
    for w in points.windows(2) {
        let h = (w[1] - w[0]) / pieces as f64;
        for k in 0..pieces {
            let a = w[0] + k as f64 * h;
            for (xi, wt) in G5_X.iter().zip(G5_W) {
                total += 0.5 * h * wt * f(a + 0.5 * h * (1.0 + xi));
            }
        }
    }
    total
}

/// `||v - w||_{H^1(0,1)}` for two smooth-by-parts functions given with
/// derivatives.
pub fn h1_distance_1d(
    v: impl Fn(f64) -> f64,
    dv: impl Fn(f64) -> f64,
    w: impl Fn(f64) -> f64,
    dw: impl Fn(f64) -> f64,
    breakpoints: &[f64],
) -> f64 {
    fine_integral(|x| (v(x) - w(x)).powi(2) + (dv(x) - dw(x)).powi(2), breakpoints, 64)
        .max(0.0)
        .sqrt()
}

/// `||u_h - u||_{H^1}` for a P1 field on a 1-D mesh, integrating element by
/// element with the breakpoints of `u` respected.
pub fn h1_error_1d(field: &Field, u: impl Fn(f64) -> f64, du: impl Fn(f64) -> f64, breakpoints: &[f64]) -> f64 {
    let mesh = field.mesh();
    let values = field.values();
    let mut total = 0.0;
    for el in mesh.elements() {
        let (xa, xb) = (mesh.nodes()[el[0]][0], mesh.nodes()[el[1]][0]);
        let (va, vb) = (values[el[0]], values[el[1]]);
        let slope = (vb - va) / (xb - xa);
        let mut cuts = vec![xa];
        cuts.extend(breakpoints.iter().copied().filter(|&b| b > xa && b < xb));
        cuts.push(xb);
        for w in cuts.windows(2) {
            let h = (w[1] - w[0]) / 4.0;
            for k in 0..4 {
                let a = w[0] + k as f64 * h;
                for (xi, wt) in G5_X.iter().zip(G5_W) {
                    let x = a + 0.5 * h * (1.0 + xi);
                    let uh = va + slope * (x - xa);
                    total += 0.5 * h * wt * ((uh - u(x)).powi(2) + (slope - du(x)).powi(2));
                }
            }
        }
    }
    total.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{Catalog, Coefficient, Nonlinearity};
    use crate::geometry::{build_interval_mesh, build_rectangle_mesh};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn wavy(mesh: &Arc<Mesh>) -> Field {
        Field::interpolate(mesh, |x| 0.7 * (3.0 * x[0]).sin() + 0.4 * (2.0 * x[1]).cos() - 0.2)
    }

    #[test]
    fn bisection_examples() {
        let c = bisect_root(|c| c - 2.0 * c.tanh(), 1.5, 2.5, 1e-10).unwrap();
        assert!((c - 1.91501).abs() < 1e-5);
        assert!((bisect_root(|x| x - 1.0, 0.0, 2.0, 1e-12).unwrap() - 1.0).abs() < 1e-12);
        assert!(bisect_root(|x: f64| x.tanh(), -1.0, 1.0, 1e-12).unwrap().abs() < 1e-12);
        assert!(matches!(bisect_root(|x| x * x + 1.0, -1.0, 1.0, 1e-12), Err(Error::Domain(_))));
    }

    #[test]
    fn limit_solution_closed_form() {
        let u = analytic_1d_limit_solution(1.0);
        assert!((u.value(0.5) - 1.0 / 0.5f64.sinh()).abs() < 1e-14);
        assert!((u.value(0.5) - 1.9190).abs() < 1e-4);
        assert!((u.derivative(1.0) - 1.0).abs() < 1e-14);
        assert!((u.derivative(0.0) + 1.0).abs() < 1e-14);
        for k in 0..=20 {
            let x = k as f64 / 20.0;
            assert!((-u.second_derivative(x) + u.value(x)).abs() < 1e-13);
            assert_eq!(analytic_1d_limit_solution(0.0).value(x), 0.0);
            assert!((analytic_1d_limit_solution(2.0).value(x) - 2.0 * u.value(x)).abs() < 1e-13);
        }
    }

    #[test]
    fn concentrated_solution_satisfies_its_equation() {
        let u = analytic_1d_concentrated_solution(1.0, 0.1).unwrap();
        for k in 0..1000 {
            let x = (k as f64 + 0.5) / 1000.0;
            assert!((-u.second_derivative(x) + u.value(x) - u.rhs(x)).abs() < 1e-10);
        }
        assert!(u.derivative(0.0).abs() < 1e-14);
        assert!(u.derivative(1.0).abs() < 1e-14);
        for b in u.breakpoints() {
            let d = 1e-9;
            assert!((u.value(b - d) - u.value(b + d)).abs() < 1e-7);
            assert!((u.derivative(b - d) - u.derivative(b + d)).abs() < 1e-7);
        }
        assert!(analytic_1d_concentrated_solution(1.0, 0.5).is_err());
    }

    #[test]
    fn concentrated_midpoint_approaches_limit() {
        let target = analytic_1d_limit_solution(1.0).value(0.5);
        let gaps: Vec<f64> = [0.1, 0.01, 0.001]
            .iter()
            .map(|&e| (analytic_1d_concentrated_solution(1.0, e).unwrap().value(0.5) - target).abs())
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2]);
        assert!(gaps[2] < 1e-3);
    }

    #[test]
    fn analytic_distance_decreases() {
        let u0 = analytic_1d_limit_solution(1.0);
        let d: Vec<f64> = [0.2, 0.1, 0.05, 0.025]
            .iter()
            .map(|&e| {
                let ue = analytic_1d_concentrated_solution(1.0, e).unwrap();
                h1_distance_1d(|x| ue.value(x), |x| ue.derivative(x), |x| u0.value(x), |x| u0.derivative(x), &ue.breakpoints())
            })
            .collect();
        assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
        // The boundary layer costs O(sqrt(eps)) in H^1.
        let slope = (d[0] / d[3]).ln() / 8f64.ln();
        assert!((slope - 0.5).abs() < 0.02, "slope {slope}");
    }

    #[test]
    fn h1_error_of_interpolant_is_first_order() {
        let u = analytic_1d_limit_solution(1.0);
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| {
                let m = Arc::new(build_interval_mesh(n).unwrap());
                let f = Field::interpolate(&m, |x| u.value(x[0]));
                h1_error_1d(&f, |x| u.value(x), |x| u.derivative(x), &[])
            })
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1] - 2.0).abs() < 0.05);
        }
    }

    #[test]
    fn dense_check_on_catalog() {
        let meshes = [
            Arc::new(build_interval_mesh(8).unwrap()),
            Arc::new(build_interval_mesh(63).unwrap()),
            Arc::new(build_rectangle_mesh(4, 4).unwrap()),
        ];
        for mesh in &meshes {
            let u = wavy(mesh);
            for c in Catalog::ALL {
                for mode in [Mode::Limit, Mode::Concentrated { epsilon: 0.25 }] {
                    let r = dense_check(mesh, &c.spec(mode), &u).unwrap();
                    assert!(r.max <= 1e-12, "{c:?} {mode:?}: {r:?}");
                }
            }
        }
    }

    #[test]
    fn dense_check_with_cut_cells_and_affine_coefficient() {
        let mesh = Arc::new(build_interval_mesh(10).unwrap());
        let spec = Catalog::TanhCoupled
            .spec(Mode::Concentrated { epsilon: 0.137 })
            .with_coefficient(Coefficient::Affine { base: 1.0, gradient: [0.5, 0.0] }, [0.5, 2.0]);
        let r = dense_check(&mesh, &spec, &wavy(&mesh)).unwrap();
        assert!(r.max <= 1e-12, "{r:?}");
        let json = r.to_json().unwrap();
        assert!(json.contains("\"jacobian\""));
    }

    #[test]
    fn dense_check_rejects_large_meshes() {
        let mesh = Arc::new(build_interval_mesh(64).unwrap());
        assert!(dense_check(&mesh, &Catalog::Zero.spec(Mode::Limit), &Field::zeros(&mesh)).is_err());
    }

    #[test]
    fn boundary_rows_match_trace_integrals() {
        // Limit mode, g(u) = u on n = 8: J carries a 1 at each end node.
        let mesh = Arc::new(build_interval_mesh(8).unwrap());
        let spec = ProblemSpec::new(Nonlinearity::Zero, Nonlinearity::Linear { slope: 1.0 }, Mode::Limit);
        let d = assemble_dense(&mesh.to_document(), &spec, &[0.0; 9]).unwrap();
        assert_eq!(d.jacobian[(0, 0)], 1.0);
        assert_eq!(d.jacobian[(8, 8)], 1.0);
        assert_eq!(d.jacobian.abs().sum(), 2.0);
    }

    #[test]
    fn strip_refinement_handles_unaligned_widths() {
        // Frame area through the mass of the constant function.
        let mesh = build_rectangle_mesh(5, 5).unwrap();
        let eps = 0.13;
        let dm = DenseMesh::from_document(&mesh.to_document()).unwrap();
        let area: f64 = dm.strip_samples(eps).iter().map(|s| s.weight).sum();
        let exact = 1.0 - (1.0 - 2.0 * eps).powi(2);
        assert!((area - exact).abs() < 1e-2 * exact);
    }

    #[test]
    fn dense_spectra() {
        let mesh = build_interval_mesh(32).unwrap();
        let d = assemble_dense(&mesh.to_document(), &Catalog::Zero.spec(Mode::Limit), &vec![0.0; 33]).unwrap();
        let ev = dense_generalized_eigenvalues(&d.lambda, &d.mass).unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-10);
        assert!((ev[1] - (1.0 + PI * PI)).abs() < 0.05);
        let norm = dense_operator_norm(&d.mass, &d.lambda).unwrap();
        assert!((norm - 1.0).abs() < 1e-10);
        let r = vec![1.0; 33];
        let ones = d.mass.column_sum();
        assert!((dense_dual_norm(&d.lambda, ones.as_slice()).unwrap() - 1.0).abs() < 1e-10);
        assert!(dense_dual_norm(&d.lambda, &r).unwrap() > 0.0);
    }
}
