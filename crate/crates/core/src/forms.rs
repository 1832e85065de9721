//! Weak forms of the elliptic problems.
//!
//! With `A` the matrix of `<Lu, v> = int a grad u . grad v + int u v`, the
//! discrete equilibria solve `A u = F(u)` where
//!
//! * concentrated mode: `F(u)_i = int f(u) phi_i + (1/eps) int_strip g(u) phi_i`
//! * limit mode:        `F(u)_i = int f(u) phi_i + int_boundary g(u) phi_i`
//!
//! Residuals live in the dual space and are measured by
//! `||r||_* = sqrt(r^T A^{-1} r)`, the discrete `(H^1)'` norm induced by `A`.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    boundary_quadrature, interior_quadrature, strip_quadrature, Dimension, Mesh, Point, QuadPoint,
    Quadrature, StripQuadrature,
};
use crate::linalg::{b_orthonormalize, dot, rayleigh_ritz, BandedLu, CsrMatrix};

/// Scalar nonlinearity `j` with its first two derivatives.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    Zero,
    Constant { value: f64 },
    /// `scale * tanh(u)`
    Tanh { scale: f64 },
    /// `slope * u`; not globally bounded, used for degenerate examples.
    Linear { slope: f64 },
    #[serde(skip)]
    Custom(CustomNonlinearity),
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied nonlinearity given as three callables.
#[derive(Clone)]
pub struct CustomNonlinearity {
    pub name: String,
    pub value: ScalarFn,
    pub first: ScalarFn,
    pub second: ScalarFn,
    /// Declared bound for `|j| + |j'| + |j''|`, if known.
    pub bound: Option<f64>,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nonlinearity::Zero => write!(f, "Zero"),
            Nonlinearity::Constant { value } => write!(f, "Constant({value})"),
            Nonlinearity::Tanh { scale } => write!(f, "Tanh({scale})"),
            Nonlinearity::Linear { slope } => write!(f, "Linear({slope})"),
            Nonlinearity::Custom(c) => write!(f, "Custom({})", c.name),
        }
    }
}

impl Nonlinearity {
    pub fn custom(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        first: impl Fn(f64) -> f64 + Send + Sync + 'static,
        second: impl Fn(f64) -> f64 + Send + Sync + 'static,
        bound: Option<f64>,
    ) -> Self {
        Nonlinearity::Custom(CustomNonlinearity {
            name: name.into(),
            value: Arc::new(value),
            first: Arc::new(first),
            second: Arc::new(second),
            bound,
        })
    }

    pub fn value(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Constant { value } => *value,
            Nonlinearity::Tanh { scale } => scale * u.tanh(),
            Nonlinearity::Linear { slope } => slope * u,
            Nonlinearity::Custom(c) => (c.value)(u),
        }
    }

    pub fn d1(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Zero | Nonlinearity::Constant { .. } => 0.0,
            Nonlinearity::Tanh { scale } => {
                let t = u.tanh();
                scale * (1.0 - t * t)
            }
            Nonlinearity::Linear { slope } => *slope,
            Nonlinearity::Custom(c) => (c.first)(u),
        }
    }

    pub fn d2(&self, u: f64) -> f64 {
        match self {
            Nonlinearity::Zero | Nonlinearity::Constant { .. } | Nonlinearity::Linear { .. } => 0.0,
            Nonlinearity::Tanh { scale } => {
                let t = u.tanh();
                -2.0 * scale * t * (1.0 - t * t)
            }
            Nonlinearity::Custom(c) => (c.second)(u),
        }
    }

    /// A constant `K` with `|j| + |j'| + |j''| <= K` on all of R, when one exists.
    pub fn bound_constant(&self) -> Option<f64> {
        match self {
            Nonlinearity::Zero => Some(0.0),
            Nonlinearity::Constant { value } => Some(value.abs()),
            // sup tanh = 1, sup sech^2 = 1, sup 2 sech^2 |tanh| = 4 / (3 sqrt 3)
            Nonlinearity::Tanh { scale } => Some(scale.abs() * (2.0 + 4.0 / (3.0 * 3f64.sqrt()))),
            Nonlinearity::Linear { slope } => (*slope == 0.0).then_some(0.0),
            Nonlinearity::Custom(c) => c.bound,
        }
    }

    /// Whether `j''` vanishes identically.
    pub fn is_affine(&self) -> bool {
        matches!(
            self,
            Nonlinearity::Zero | Nonlinearity::Constant { .. } | Nonlinearity::Linear { .. }
        )
    }
}

/// Diffusion coefficient `a(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coefficient {
    Constant { value: f64 },
    Affine { base: f64, gradient: Point },
}

impl Coefficient {
    pub fn at(&self, x: Point) -> f64 {
        match *self {
            Coefficient::Constant { value } => value,
            Coefficient::Affine { base, gradient } => base + gradient[0] * x[0] + gradient[1] * x[1],
        }
    }
}

/// Which problem is being discretized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    /// Reaction `(1/eps) chi_strip g(u)` inside the domain.
    Concentrated { epsilon: f64 },
    /// Nonlinear flux `a du/dn = g(u)` on the boundary.
    Limit,
}

impl Mode {
    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            Mode::Concentrated { epsilon } => Some(epsilon),
            Mode::Limit => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub coefficient: Coefficient,
    /// Declared bounds `[a0, a1]` with `0 < a0 <= a(x) <= a1`.
    pub coefficient_bounds: [f64; 2],
    pub f: Nonlinearity,
    pub g: Nonlinearity,
    /// Bound constant `K`; derived from the nonlinearities when absent.
    #[serde(default)]
    pub bound: Option<f64>,
    pub mode: Mode,
}

/// Outcome of sampling `|j| + |j'| + |j''|` for both nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub bound: Option<f64>,
    pub observed: f64,
    pub satisfied: bool,
}

impl ProblemSpec {
    /// Unit coefficient `a = 1`.
    pub fn new(f: Nonlinearity, g: Nonlinearity, mode: Mode) -> Self {
        ProblemSpec {
            coefficient: Coefficient::Constant { value: 1.0 },
            coefficient_bounds: [1.0, 1.0],
            f,
            g,
            bound: None,
            mode,
        }
    }

    pub fn with_coefficient(mut self, coefficient: Coefficient, bounds: [f64; 2]) -> Self {
        self.coefficient = coefficient;
        self.coefficient_bounds = bounds;
        self
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        let mut s = self.clone();
        s.mode = mode;
        s
    }

    pub fn bound_constant(&self) -> Option<f64> {
        self.bound.or_else(|| {
            let f = self.f.bound_constant()?;
            let g = self.g.bound_constant()?;
            Some(f.max(g))
        })
    }

    /// Advisory check of the boundedness hypothesis on a grid of arguments.
    pub fn check_hypothesis(&self, grid: &[f64]) -> HypothesisReport {
        let sample = |j: &Nonlinearity, u: f64| j.value(u).abs() + j.d1(u).abs() + j.d2(u).abs();
        let observed = grid
            .iter()
            .map(|&u| sample(&self.f, u).max(sample(&self.g, u)))
            .fold(0.0, f64::max);
        let bound = self.bound_constant();
        HypothesisReport {
            bound,
            observed,
            satisfied: bound.is_some_and(|k| observed <= k * (1.0 + 1e-12)),
        }
    }

    fn check_coefficient(&self, a: f64, x: Point) -> Result<()> {
        let [a0, a1] = self.coefficient_bounds;
        let slack = 1e-12 * a1.abs().max(1.0);
        if !(a0 > 0.0) || !(a >= a0 - slack && a <= a1 + slack) {
            return Err(Error::SpecViolation(format!(
                "a({:?}) = {a} outside declared bounds [{a0}, {a1}]",
                x
            )));
        }
        Ok(())
    }
}

/// Named, hypothesis-compliant test problems (plus one deliberate non-example).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Catalog {
    /// f = 0, g = 0
    Zero,
    /// f = 1, g = 0
    UnitSource,
    /// f = 0, g = 1; closed-form solutions in 1-D
    AnalyticFlux,
    /// f = 2 tanh u, g = 0
    TanhInterior,
    /// f = 2 tanh u, g = 0.1 tanh u
    TanhCoupled,
    /// f = 0, g = u
    LinearFlux,
    /// f = u, g = 0; the linearization annihilates constants
    LinearDegenerate,
}

impl Catalog {
    pub const ALL: [Catalog; 7] = [
        Catalog::Zero,
        Catalog::UnitSource,
        Catalog::AnalyticFlux,
        Catalog::TanhInterior,
        Catalog::TanhCoupled,
        Catalog::LinearFlux,
        Catalog::LinearDegenerate,
    ];

    pub fn spec(self, mode: Mode) -> ProblemSpec {
        use Nonlinearity as N;
        let (f, g) = match self {
            Catalog::Zero => (N::Zero, N::Zero),
            Catalog::UnitSource => (N::Constant { value: 1.0 }, N::Zero),
            Catalog::AnalyticFlux => (N::Zero, N::Constant { value: 1.0 }),
            Catalog::TanhInterior => (N::Tanh { scale: 2.0 }, N::Zero),
            Catalog::TanhCoupled => (N::Tanh { scale: 2.0 }, N::Tanh { scale: 0.1 }),
            Catalog::LinearFlux => (N::Zero, N::Linear { slope: 1.0 }),
            Catalog::LinearDegenerate => (N::Linear { slope: 1.0 }, N::Zero),
        };
        ProblemSpec::new(f, g, mode)
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidArgument(format!("non-finite value at node {i}"))),
        None => Ok(()),
    }
}

fn write_nodal_csv<W: Write>(mesh: &Mesh, values: &[f64], mut w: W) -> Result<()> {
    match mesh.dimension() {
        Dimension::One => writeln!(w, "node,x,value")?,
        Dimension::Two => writeln!(w, "node,x,y,value")?,
    }
    for (i, (p, v)) in mesh.nodes().iter().zip(values).enumerate() {
        match mesh.dimension() {
            Dimension::One => writeln!(w, "{i},{},{v}", p[0])?,
            Dimension::Two => writeln!(w, "{i},{},{},{v}", p[0], p[1])?,
        }
    }
    Ok(())
}

fn read_nodal_csv<R: BufRead>(mesh: &Mesh, r: R) -> Result<Vec<f64>> {
    let mut values = vec![f64::NAN; mesh.node_count()];
    for (k, line) in r.lines().enumerate().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || Error::InvalidArgument(format!("malformed CSV line {}", k + 1));
        let node: usize = cols.first().and_then(|c| c.trim().parse().ok()).ok_or_else(bad)?;
        let value: f64 = cols.last().and_then(|c| c.trim().parse().ok()).ok_or_else(bad)?;
        *values.get_mut(node).ok_or_else(bad)? = value;
    }
    check_finite(&values)?;
    Ok(values)
}

/// Nodal coefficients of a P1 function.
#[derive(Debug, Clone)]
pub struct Field {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.node_count() {
            return Err(Error::MeshMismatch);
        }
        check_finite(&values)?;
        Ok(Field { mesh, values })
    }

    pub fn constant(mesh: &Arc<Mesh>, c: f64) -> Self {
        Field {
            values: vec![c; mesh.node_count()],
            mesh: mesh.clone(),
        }
    }

    pub fn zeros(mesh: &Arc<Mesh>) -> Self {
        Field::constant(mesh, 0.0)
    }

    /// Nodal interpolant of `u`.
    pub fn interpolate(mesh: &Arc<Mesh>, u: impl Fn(Point) -> f64) -> Self {
        Field {
            values: mesh.nodes().iter().map(|&p| u(p)).collect(),
            mesh: mesh.clone(),
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Field::new(self.mesh.clone(), values)
    }

    /// Value of the interpolant at a quadrature point.
    pub fn eval(&self, p: &QuadPoint) -> f64 {
        self.mesh.elements()[p.element]
            .iter()
            .enumerate()
            .map(|(k, &n)| p.bary[k] * self.values[n])
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_nodal_csv(&self.mesh, &self.values, w)
    }

    pub fn read_csv<R: BufRead>(mesh: &Arc<Mesh>, r: R) -> Result<Self> {
        Ok(Field {
            values: read_nodal_csv(mesh, r)?,
            mesh: mesh.clone(),
        })
    }
}

/// A functional acting on the nodal basis: entry `i` is its value on `phi_i`.
#[derive(Debug, Clone)]
pub struct DualVector {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl DualVector {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.node_count() {
            return Err(Error::MeshMismatch);
        }
        check_finite(&values)?;
        Ok(DualVector { mesh, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_nodal_csv(&self.mesh, &self.values, w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    Lambda,
    Mass,
    Jacobian,
    Gap,
}

#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub kind: OperatorKind,
    pub matrix: CsrMatrix,
}

impl OperatorMatrix {
    /// `max |A - A^T| <= 1e-12 max |A|`.
    pub fn is_symmetric(&self) -> bool {
        self.matrix.symmetry_defect() <= 1e-12 * self.matrix.max_abs()
    }
}

/// Triplets of `scale * int weight(x) phi_i phi_j` over `rule`.
fn weighted_mass(
    mesh: &Mesh,
    rule: &Quadrature,
    scale: f64,
    mut weight: impl FnMut(&QuadPoint) -> Result<f64>,
    out: &mut Vec<(usize, usize, f64)>,
) -> Result<()> {
    for p in &rule.points {
        let wt = weight(p)?;
        if wt == 0.0 {
            continue;
        }
        let c = scale * p.weight * wt;
        let el = &mesh.elements()[p.element];
        for (k, &i) in el.iter().enumerate() {
            for (l, &j) in el.iter().enumerate() {
                out.push((i, j, c * p.bary[k] * p.bary[l]));
            }
        }
    }
    Ok(())
}

/// `scale * int value(x) phi_i` over `rule`, accumulated into `out`.
fn load(
    mesh: &Mesh,
    rule: &Quadrature,
    scale: f64,
    mut value: impl FnMut(&QuadPoint) -> Result<f64>,
    out: &mut [f64],
) -> Result<()> {
    for p in &rule.points {
        let v = value(p)?;
        for (k, &i) in mesh.elements()[p.element].iter().enumerate() {
            out[i] += scale * p.weight * v * p.bary[k];
        }
    }
    Ok(())
}

fn eval_checked(j: &Nonlinearity, which: u8, u: f64) -> Result<f64> {
    let v = match which {
        0 => j.value(u),
        1 => j.d1(u),
        _ => j.d2(u),
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation(u))
    }
}

fn assemble_lambda_with(mesh: &Mesh, spec: &ProblemSpec, rule: &Quadrature) -> Result<OperatorMatrix> {
    let mut t = Vec::with_capacity(rule.points.len() * 9);
    let mut cached: Option<(usize, Vec<Point>)> = None;
    for p in &rule.points {
        let a = spec.coefficient.at(p.x);
        spec.check_coefficient(a, p.x)?;
        if cached.as_ref().map(|c| c.0) != Some(p.element) {
            cached = Some((p.element, mesh.basis_gradients(p.element)));
        }
        let grads = &cached.as_ref().unwrap().1;
        let el = &mesh.elements()[p.element];
        for (k, &i) in el.iter().enumerate() {
            for (l, &j) in el.iter().enumerate() {
                let stiff = grads[k][0] * grads[l][0] + grads[k][1] * grads[l][1];
                t.push((i, j, p.weight * (a * stiff + p.bary[k] * p.bary[l])));
            }
        }
    }
    Ok(OperatorMatrix {
        kind: OperatorKind::Lambda,
        matrix: CsrMatrix::from_triplets(mesh.node_count(), t),
    })
}

/// `A_ij = int a grad phi_i . grad phi_j + int phi_i phi_j`.
pub fn assemble_lambda(mesh: &Mesh, spec: &ProblemSpec) -> Result<OperatorMatrix> {
    assemble_lambda_with(mesh, spec, &interior_quadrature(mesh))
}

/// L2 mass matrix.
pub fn assemble_mass(mesh: &Mesh) -> OperatorMatrix {
    let mut t = Vec::new();
    weighted_mass(mesh, &interior_quadrature(mesh), 1.0, |_| Ok(1.0), &mut t).expect("infallible");
    OperatorMatrix {
        kind: OperatorKind::Mass,
        matrix: CsrMatrix::from_triplets(mesh.node_count(), t),
    }
}

/// `sqrt(r^T A^{-1} r)` with a fresh factorization of `lambda`.
pub fn dual_norm(r: &DualVector, lambda: &OperatorMatrix) -> Result<f64> {
    let lu = BandedLu::factor(&lambda.matrix)?;
    Ok(dot(r.values(), &lu.solve(r.values())).max(0.0).sqrt())
}

/// Discretized problem on a fixed mesh: quadrature rules, `A`, the mass matrix
/// and a factorization of `A`. Cloning is cheap; heavy parts are shared.
#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    mesh: Arc<Mesh>,
    spec: ProblemSpec,
    interior: Arc<Quadrature>,
    boundary: Arc<Quadrature>,
    strip: Option<Arc<StripQuadrature>>,
    lambda: Arc<OperatorMatrix>,
    mass: Arc<OperatorMatrix>,
    lambda_lu: Arc<BandedLu>,
}

impl DiscreteProblem {
    pub fn new(mesh: Arc<Mesh>, spec: ProblemSpec) -> Result<Self> {
        let interior = interior_quadrature(&mesh);
        let lambda = assemble_lambda_with(&mesh, &spec, &interior)?;
        let lambda_lu = BandedLu::factor(&lambda.matrix)?;
        let mut mass = Vec::new();
        weighted_mass(&mesh, &interior, 1.0, |_| Ok(1.0), &mut mass)?;
        let mass = OperatorMatrix {
            kind: OperatorKind::Mass,
            matrix: CsrMatrix::from_triplets(mesh.node_count(), mass),
        };
        let strip = match spec.mode {
            Mode::Concentrated { epsilon } => Some(Arc::new(strip_quadrature(&mesh, epsilon)?)),
            Mode::Limit => None,
        };
        Ok(DiscreteProblem {
            boundary: Arc::new(boundary_quadrature(&mesh)),
            interior: Arc::new(interior),
            mesh,
            spec,
            strip,
            lambda: Arc::new(lambda),
            mass: Arc::new(mass),
            lambda_lu: Arc::new(lambda_lu),
        })
    }

    /// Same mesh and operator, different mode.
    pub fn with_mode(&self, mode: Mode) -> Result<Self> {
        let strip = match mode {
            Mode::Concentrated { epsilon } => Some(Arc::new(strip_quadrature(&self.mesh, epsilon)?)),
            Mode::Limit => None,
        };
        Ok(DiscreteProblem {
            spec: self.spec.with_mode(mode),
            strip,
            ..self.clone()
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.spec.mode
    }

    pub fn lambda(&self) -> &OperatorMatrix {
        &self.lambda
    }

    pub fn mass(&self) -> &OperatorMatrix {
        &self.mass
    }

    pub fn strip(&self) -> Option<&StripQuadrature> {
        self.strip.as_deref()
    }

    pub fn interior_rule(&self) -> &Quadrature {
        &self.interior
    }

    pub fn boundary_rule(&self) -> &Quadrature {
        &self.boundary
    }

    /// Solves `A x = b`.
    pub fn solve_lambda(&self, b: &[f64]) -> Vec<f64> {
        self.lambda_lu.solve(b)
    }

    fn check(&self, u: &Field) -> Result<()> {
        if Arc::ptr_eq(u.mesh(), &self.mesh) || **u.mesh() == *self.mesh {
            Ok(())
        } else {
            Err(Error::MeshMismatch)
        }
    }

    fn dual(&self, values: Vec<f64>) -> DualVector {
        DualVector {
            mesh: self.mesh.clone(),
            values,
        }
    }

    /// `int f(u) phi_i`.
    pub fn apply_f_interior(&self, u: &Field) -> Result<DualVector> {
        self.check(u)?;
        let mut out = vec![0.0; self.mesh.node_count()];
        load(&self.mesh, &self.interior, 1.0, |p| eval_checked(&self.spec.f, 0, u.eval(p)), &mut out)?;
        Ok(self.dual(out))
    }

    /// `(1/eps) int_strip g(u) phi_i`.
    pub fn apply_g_concentrated(&self, u: &Field) -> Result<DualVector> {
        self.check(u)?;
        let strip = self
            .strip
            .as_ref()
            .ok_or(Error::ModeMismatch("concentrated term requested in limit mode"))?;
        let mut out = vec![0.0; self.mesh.node_count()];
        load(
            &self.mesh,
            &strip.rule,
            1.0 / strip.epsilon,
            |p| eval_checked(&self.spec.g, 0, u.eval(p)),
            &mut out,
        )?;
        Ok(self.dual(out))
    }

    /// `int_boundary g(u) phi_i dS`.
    pub fn apply_g_boundary(&self, u: &Field) -> Result<DualVector> {
        self.check(u)?;
        if self.spec.mode != Mode::Limit {
            return Err(Error::ModeMismatch("boundary flux requested in concentrated mode"));
        }
        let mut out = vec![0.0; self.mesh.node_count()];
        load(&self.mesh, &self.boundary, 1.0, |p| eval_checked(&self.spec.g, 0, u.eval(p)), &mut out)?;
        Ok(self.dual(out))
    }

    /// The full nonlinearity `F(u)` for the current mode.
    pub fn nonlinear(&self, u: &Field) -> Result<DualVector> {
        let mut out = self.apply_f_interior(u)?;
        let g = match self.spec.mode {
            Mode::Concentrated { .. } => self.apply_g_concentrated(u)?,
            Mode::Limit => self.apply_g_boundary(u)?,
        };
        for (o, v) in out.values.iter_mut().zip(g.values) {
            *o += v;
        }
        Ok(out)
    }

    /// `A u - F(u)`.
    pub fn residual(&self, u: &Field) -> Result<DualVector> {
        self.check(u)?;
        let mut r = self.lambda.matrix.mul_vec(u.values());
        for (ri, fi) in r.iter_mut().zip(self.nonlinear(u)?.values) {
            *ri -= fi;
        }
        Ok(self.dual(r))
    }

    pub fn residual_norm(&self, u: &Field) -> Result<f64> {
        Ok(self.dual_norm(&self.residual(u)?))
    }

    /// Triplets of the `g'` part of the derivative for a given mode.
    fn g_derivative_triplets(&self, u: &Field, mode: Mode, out: &mut Vec<(usize, usize, f64)>) -> Result<()> {
        let g = &self.spec.g;
        match mode {
            Mode::Concentrated { epsilon } => {
                let owned;
                let rule = match &self.strip {
                    Some(s) if s.epsilon == epsilon => &s.rule,
                    _ => {
                        owned = strip_quadrature(&self.mesh, epsilon)?;
                        &owned.rule
                    }
                };
                weighted_mass(&self.mesh, rule, 1.0 / epsilon, |p| eval_checked(g, 1, u.eval(p)), out)
            }
            Mode::Limit => weighted_mass(&self.mesh, &self.boundary, 1.0, |p| eval_checked(g, 1, u.eval(p)), out),
        }
    }

    /// Derivative of `F` at `u` for an arbitrary mode.
    pub fn jacobian_for_mode(&self, u: &Field, mode: Mode) -> Result<OperatorMatrix> {
        self.check(u)?;
        let mut t = Vec::new();
        weighted_mass(&self.mesh, &self.interior, 1.0, |p| eval_checked(&self.spec.f, 1, u.eval(p)), &mut t)?;
        self.g_derivative_triplets(u, mode, &mut t)?;
        Ok(OperatorMatrix {
            kind: OperatorKind::Jacobian,
            matrix: CsrMatrix::from_triplets(self.mesh.node_count(), t),
        })
    }

    /// `J_ij = int f'(u) phi_j phi_i + (strip or boundary) g'(u) phi_j phi_i`.
    pub fn assemble_jacobian(&self, u: &Field) -> Result<OperatorMatrix> {
        self.jacobian_for_mode(u, self.spec.mode)
    }

    /// `A - J(u)`, the linearization of the residual.
    pub fn linearization(&self, u: &Field) -> Result<CsrMatrix> {
        let j = self.assemble_jacobian(u)?;
        Ok(self.lambda.matrix.combine(1.0, &j.matrix, -1.0))
    }

    pub fn dual_norm(&self, r: &DualVector) -> f64 {
        dot(r.values(), &self.lambda_lu.solve(r.values())).max(0.0).sqrt()
    }

    pub fn h1_norm(&self, u: &Field) -> f64 {
        self.lambda.matrix.bilinear(u.values(), u.values()).max(0.0).sqrt()
    }

    pub fn h1_distance(&self, u: &Field, v: &Field) -> f64 {
        let d: Vec<f64> = u.values().iter().zip(v.values()).map(|(a, b)| a - b).collect();
        self.lambda.matrix.bilinear(&d, &d).max(0.0).sqrt()
    }

    /// `|| (1/eps) chi_strip Dg(u*) - Dg_boundary(u*) ||` from `H^1` to the
    /// discrete dual.
    pub fn operator_gap(&self, ustar: &Field, epsilon: f64) -> Result<f64> {
        self.check(ustar)?;
        let mut t = Vec::new();
        self.g_derivative_triplets(ustar, Mode::Concentrated { epsilon }, &mut t)?;
        let mut limit = Vec::new();
        self.g_derivative_triplets(ustar, Mode::Limit, &mut limit)?;
        t.extend(limit.into_iter().map(|(i, j, v)| (i, j, -v)));
        let gap = CsrMatrix::from_triplets(self.mesh.node_count(), t);
        self.dual_operator_norm(&gap)
    }

    /// `|| DF(u*) ||` from `H^1` to the discrete dual, for the current mode.
    pub fn derivative_norm(&self, ustar: &Field) -> Result<f64> {
        let j = self.assemble_jacobian(ustar)?;
        self.dual_operator_norm(&j.matrix)
    }

    /// Norm of the symmetric operator `G` from `(R^n, A)` to `(R^n, A^{-1})`,
    /// i.e. the largest `|mu|` with `G w = mu A w`.
    ///
    /// Block power iteration on `A^{-1} G A^{-1} G` with Rayleigh-Ritz in the
    /// `A` inner product.
    pub fn dual_operator_norm(&self, g: &CsrMatrix) -> Result<f64> {
        const BLOCK: usize = 4;
        const MAX_ITER: usize = 1000;
        const TOL: f64 = 1e-10;
        if g.max_abs() == 0.0 {
            return Ok(0.0);
        }
        let n = self.mesh.node_count();
        let a = &self.lambda.matrix;
        let a_apply = |v: &[f64]| a.mul_vec(v);
        let k_apply = |v: &[f64]| g.mul_vec(&self.lambda_lu.solve(&g.mul_vec(v)));
        let step = |v: &[f64]| self.lambda_lu.solve(&k_apply(v));

        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut basis: Vec<Vec<f64>> = (0..BLOCK.min(n))
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        b_orthonormalize(&mut basis, &a_apply);
        let mut previous = f64::NAN;
        for _ in 0..MAX_ITER {
            let mut next: Vec<Vec<f64>> = basis.iter().map(|v| step(v)).collect();
            b_orthonormalize(&mut next, &a_apply);
            if next.is_empty() {
                return Ok(0.0);
            }
            let (values, vectors) = rayleigh_ritz(&next, &k_apply, &a_apply)?;
            let top = values.iter().fold(0.0f64, |m, v| m.max(*v)).max(0.0);
            if (top - previous).abs() <= TOL * top.max(f64::MIN_POSITIVE) {
                return Ok(top.sqrt());
            }
            previous = top;
            basis = vectors;
            b_orthonormalize(&mut basis, &a_apply);
        }
        Err(Error::ConvergenceFailure {
            iterations: MAX_ITER,
            best_estimate: previous.max(0.0).sqrt(),
        })
    }
}
