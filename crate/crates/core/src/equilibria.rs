//! Solvers for `A u = F(u)`.
//!
//! * [`picard_solve`] iterates `u <- A^{-1} F(u)`, the constructive version of
//!   the existence argument. It is allowed to fail.
//! * [`chord_newton_solve`] iterates the frozen-Jacobian map
//!   `u <- (A - DF(anchor))^{-1} (F(u) - DF(anchor) u)`, a contraction on a ball
//!   around a hyperbolic anchor.
//! * [`newton_solve`] is plain Newton with a backtracking safeguard.
//!
//! Residuals are always measured in the discrete dual norm, distances in the
//! `H^1` norm induced by `A`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::forms::{DiscreteProblem, Field, Mode};
use crate::geometry::Mesh;
use crate::linalg::BandedLu;
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Residual tolerance in the discrete dual norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Radius of the chord-Newton ball (H^1 units).
    pub delta: f64,
    /// Distance below which two equilibria are identified; `10 * tol` if unset.
    pub cluster_radius: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-9,
            max_iter: 100,
            delta: 0.5,
            cluster_radius: None,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.delta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "solver options need tol > 0, max_iter >= 1, delta > 0; got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn cluster_radius(&self) -> f64 {
        self.cluster_radius.unwrap_or(10.0 * self.tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Picard,
    ChordNewton,
    Newton,
}

#[derive(Debug, Clone)]
pub struct EquilibriumRecord {
    pub u: Field,
    pub mode: Mode,
    /// Final residual in the discrete dual norm.
    pub residual: f64,
    pub iterations: usize,
    pub method: Method,
    /// `||u_{k+1} - u_k|| / ||u_k - u_{k-1}||` for each step after the first.
    pub contraction_estimates: Vec<f64>,
    pub converged: bool,
}

/// JSON view of an [`EquilibriumRecord`]; the field itself goes to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub epsilon: Option<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub method: Method,
    pub contraction_estimates: Vec<f64>,
    pub converged: bool,
    pub mean: f64,
    pub field_csv: Option<String>,
}

impl EquilibriumRecord {
    pub fn epsilon(&self) -> Option<f64> {
        self.mode.epsilon()
    }

    pub fn summary(&self, field_csv: Option<String>) -> RecordSummary {
        RecordSummary {
            epsilon: self.epsilon(),
            residual: self.residual,
            iterations: self.iterations,
            method: self.method,
            contraction_estimates: self.contraction_estimates.clone(),
            converged: self.converged,
            mean: self.u.mean(),
            field_csv,
        }
    }
}

/// Tracks step lengths and the ratios between consecutive ones.
struct StepLog {
    last: Option<f64>,
    ratios: Vec<f64>,
}

impl StepLog {
    fn new() -> Self {
        StepLog {
            last: None,
            ratios: Vec::new(),
        }
    }

    fn push(&mut self, step: f64) {
        if let Some(prev) = self.last {
            if prev > 0.0 {
                self.ratios.push(step / prev);
            }
        }
        self.last = Some(step);
    }
}

/// Picard iteration `u_{k+1} = A^{-1} F(u_k)`.
///
/// Non-convergence is not an error: the best iterate is returned with
/// `converged = false`.
pub fn picard_solve(problem: &DiscreteProblem, u0: &Field, opts: &SolveOptions) -> Result<EquilibriumRecord> {
    opts.validate()?;
    let mut u = u0.clone();
    let mut log = StepLog::new();
    let mut best: Option<(f64, Field, usize)> = None;
    for k in 0..=opts.max_iter {
        let r = problem.residual_norm(&u)?;
        if best.as_ref().is_none_or(|b| r < b.0) {
            best = Some((r, u.clone(), k));
        }
        if r <= opts.tol {
            return Ok(EquilibriumRecord {
                u,
                mode: problem.mode(),
                residual: r,
                iterations: k,
                method: Method::Picard,
                contraction_estimates: log.ratios,
                converged: true,
            });
        }
        if k == opts.max_iter || !r.is_finite() {
            break;
        }
        let next = u.with_values(problem.solve_lambda(problem.nonlinear(&u)?.values()))?;
        log.push(problem.h1_distance(&next, &u));
        u = next;
    }
    let (residual, u, iterations) = best.expect("at least one iterate");
    Ok(EquilibriumRecord {
        u,
        mode: problem.mode(),
        residual,
        iterations,
        method: Method::Picard,
        contraction_estimates: log.ratios,
        converged: false,
    })
}

/// Frozen-Jacobian iteration anchored at `anchor`, started from `u0`.
///
/// Requires `||u0 - anchor|| <= delta`. Fails with
/// [`Error::HyperbolicityFailure`] when `A - DF(anchor)` is singular and with
/// [`Error::Divergence`] when an iterate leaves the ball of radius `2 delta`.
pub fn chord_newton_solve(
    problem: &DiscreteProblem,
    anchor: &Field,
    u0: &Field,
    opts: &SolveOptions,
) -> Result<EquilibriumRecord> {
    opts.validate()?;
    let start_distance = problem.h1_distance(u0, anchor);
    if start_distance > opts.delta * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "start is {start_distance} from the anchor, outside delta = {}",
            opts.delta
        )));
    }
    let jac = problem.assemble_jacobian(anchor)?;
    let chord = problem.lambda().matrix.combine(1.0, &jac.matrix, -1.0);
    let lu = BandedLu::factor(&chord).map_err(|e| match e {
        Error::Singular { .. } => Error::HyperbolicityFailure,
        other => other,
    })?;

    let mut u = u0.clone();
    let mut log = StepLog::new();
    for k in 0..=opts.max_iter {
        let r = problem.residual_norm(&u)?;
        if r <= opts.tol || k == opts.max_iter {
            return Ok(EquilibriumRecord {
                u,
                mode: problem.mode(),
                residual: r,
                iterations: k,
                method: Method::ChordNewton,
                contraction_estimates: log.ratios,
                converged: r <= opts.tol,
            });
        }
        let mut rhs = problem.nonlinear(&u)?.into_values();
        for (ri, ju) in rhs.iter_mut().zip(jac.matrix.mul_vec(u.values())) {
            *ri -= ju;
        }
        let next = u.with_values(lu.solve(&rhs))?;
        log.push(problem.h1_distance(&next, &u));
        let distance = problem.h1_distance(&next, anchor);
        if distance > 2.0 * opts.delta {
            return Err(Error::Divergence {
                distance,
                limit: 2.0 * opts.delta,
            });
        }
        u = next;
    }
    unreachable!("loop returns on the last iteration")
}

/// Newton's method with the Jacobian reassembled every step. A step that does
/// not reduce the residual is halved up to ten times.
pub fn newton_solve(problem: &DiscreteProblem, u0: &Field, opts: &SolveOptions) -> Result<EquilibriumRecord> {
    opts.validate()?;
    let mut u = u0.clone();
    let mut log = StepLog::new();
    let mut r = problem.residual_norm(&u)?;
    for k in 0..=opts.max_iter {
        if r <= opts.tol || k == opts.max_iter || !r.is_finite() {
            return Ok(EquilibriumRecord {
                u,
                mode: problem.mode(),
                residual: r,
                iterations: k,
                method: Method::Newton,
                contraction_estimates: log.ratios,
                converged: r <= opts.tol,
            });
        }
        let residual = problem.residual(&u)?;
        let lu = BandedLu::factor(&problem.linearization(&u)?)?;
        let du = lu.solve(residual.values());
        let mut t = 1.0;
        let (next, rn) = loop {
            let cand = u.with_values(u.values().iter().zip(&du).map(|(a, d)| a - t * d).collect())?;
            let rc = problem.residual_norm(&cand)?;
            if rc < r || t < 1e-3 {
                break (cand, rc);
            }
            t *= 0.5;
        };
        log.push(problem.h1_distance(&next, &u));
        u = next;
        r = rn;
    }
    unreachable!("loop returns on the last iteration")
}

/// Constant start fields over `values`, each followed by `perturbations`
/// randomly perturbed copies (uniform nodal noise of size `amplitude`).
pub fn constant_starts(mesh: &Arc<Mesh>, values: &[f64], perturbations: usize, amplitude: f64, seed: u64) -> Vec<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(values.len() * (1 + perturbations));
    for &c in values {
        out.push(Field::constant(mesh, c));
        for _ in 0..perturbations {
            let v = (0..mesh.node_count())
                .map(|_| c + amplitude * rng.random_range(-1.0..1.0))
                .collect();
            out.push(Field::new(mesh.clone(), v).expect("finite values"));
        }
    }
    out
}

/// Runs Newton from every start and returns one representative per cluster of
/// converged solutions, sorted by mean value.
pub fn find_all_equilibria(
    problem: &DiscreteProblem,
    starts: &[Field],
    opts: &SolveOptions,
    exec: Exec,
) -> Result<Vec<EquilibriumRecord>> {
    if starts.is_empty() {
        return Err(Error::InvalidArgument("start list is empty".into()));
    }
    opts.validate()?;
    let radius = opts.cluster_radius();
    let runs = exec.map(starts, |u0| newton_solve(problem, u0, opts));
    let mut reps: Vec<EquilibriumRecord> = Vec::new();
    for rec in runs.into_iter().flatten().filter(|r| r.converged) {
        if reps.iter().all(|e| problem.h1_distance(&e.u, &rec.u) >= radius) {
            reps.push(rec);
        }
    }
    reps.sort_by(|a, b| a.u.mean().total_cmp(&b.u.mean()));
    Ok(reps)
}

/// Where the chord map is anchored along a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchoring {
    /// Always at the limit equilibrium.
    Limit,
    /// At the previously computed branch point.
    #[default]
    Previous,
}

#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub epsilon: f64,
    pub record: EquilibriumRecord,
    /// `||u_eps - u_0||` in H^1.
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub limit: EquilibriumRecord,
    pub points: Vec<BranchPoint>,
    /// Diagnostic when the branch stops before the end of the schedule.
    pub truncated: Option<String>,
}

pub fn validate_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("empty epsilon schedule".into()));
    }
    if schedule.iter().any(|&e| !(e > 0.0 && e < 0.5)) {
        return Err(Error::InvalidArgument("epsilon values must lie in (0, 1/2)".into()));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("epsilon schedule must be strictly decreasing".into()));
    }
    Ok(())
}

/// Follows a hyperbolic limit equilibrium through the concentrated problems
/// of `schedule`.
///
/// Each point is found by [`chord_newton_solve`] started at its anchor. If
/// the iterate escapes, the step from the previous parameter is bisected (up
/// to four times) and the intermediate solutions are used as anchors.
pub fn continue_in_epsilon(
    limit_problem: &DiscreteProblem,
    branch_start: &EquilibriumRecord,
    schedule: &[f64],
    opts: &SolveOptions,
    anchoring: Anchoring,
) -> Result<Branch> {
    validate_schedule(schedule)?;
    if branch_start.mode != Mode::Limit || limit_problem.mode() != Mode::Limit {
        return Err(Error::ModeMismatch("branch must start from a limit equilibrium"));
    }
    if !branch_start.converged {
        return Err(Error::InvalidArgument("branch start did not converge".into()));
    }
    let (hyperbolic, report) = spectral::is_hyperbolic(limit_problem, &branch_start.u, None)?;
    if !hyperbolic {
        return Err(Error::NotHyperbolic { margin: report.margin });
    }

    let u0 = &branch_start.u;
    let mut points: Vec<BranchPoint> = Vec::new();
    let mut truncated = None;
    let mut prev: (f64, Field) = (0.0, u0.clone());
    for &eps in schedule {
        match advance(limit_problem, &prev, eps, u0, opts, anchoring) {
            Ok(record) => {
                let distance = limit_problem.h1_distance(&record.u, u0);
                prev = (eps, record.u.clone());
                points.push(BranchPoint {
                    epsilon: eps,
                    record,
                    distance,
                });
            }
            Err(e) => {
                truncated = Some(format!("branch stopped at epsilon = {eps}: {e}"));
                break;
            }
        }
    }
    Ok(Branch {
        limit: branch_start.clone(),
        points,
        truncated,
    })
}

fn advance(
    limit_problem: &DiscreteProblem,
    prev: &(f64, Field),
    target: f64,
    u0: &Field,
    opts: &SolveOptions,
    anchoring: Anchoring,
) -> Result<EquilibriumRecord> {
    const MAX_BISECTIONS: usize = 4;
    let mut from = prev.clone();
    let mut step_target = target;
    let mut bisections = 0;
    loop {
        let problem = limit_problem.with_mode(Mode::Concentrated { epsilon: step_target })?;
        let anchor = match anchoring {
            Anchoring::Limit => u0,
            Anchoring::Previous => &from.1,
        };
        match chord_newton_solve(&problem, anchor, anchor, opts) {
            Ok(rec) if rec.converged => {
                if step_target == target {
                    return Ok(rec);
                }
                from = (step_target, rec.u);
                step_target = target;
            }
            Ok(rec) => {
                return Err(Error::ConvergenceFailure {
                    iterations: rec.iterations,
                    best_estimate: rec.residual,
                })
            }
            Err(Error::Divergence { .. }) if anchoring == Anchoring::Previous && bisections < MAX_BISECTIONS => {
                bisections += 1;
                step_target = 0.5 * (from.0.max(0.0) + step_target);
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::Catalog;
    use crate::geometry::build_interval_mesh;
    use crate::oracle;

    fn limit(n: usize, c: Catalog) -> DiscreteProblem {
        DiscreteProblem::new(Arc::new(build_interval_mesh(n).unwrap()), c.spec(Mode::Limit)).unwrap()
    }

    fn c_star() -> f64 {
        oracle::bisect_root(|c| c - 2.0 * c.tanh(), 1.5, 2.5, 1e-14).unwrap()
    }

    fn max_dev(u: &Field, c: f64) -> f64 {
        u.values().iter().map(|v| (v - c).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn picard_trivial_cases() {
        let p = limit(8, Catalog::Zero);
        let rec = picard_solve(&p, &Field::constant(p.mesh(), 3.0), &SolveOptions::default()).unwrap();
        assert!(rec.converged);
        assert_eq!(rec.iterations, 1);
        assert!(max_dev(&rec.u, 0.0) < 1e-12);

        let p = limit(8, Catalog::UnitSource);
        let rec = picard_solve(&p, &Field::zeros(p.mesh()), &SolveOptions::default()).unwrap();
        assert!(rec.converged);
        assert!(max_dev(&rec.u, 1.0) < 1e-10);
    }

    #[test]
    fn picard_reports_nonconvergence() {
        // Zero is a repelling fixed point of u -> A^{-1} F(u) for f = 2 tanh,
        // and one iteration from a generic start cannot reach tolerance.
        let p = limit(8, Catalog::TanhInterior);
        let opts = SolveOptions {
            max_iter: 1,
            ..Default::default()
        };
        let rec = picard_solve(&p, &Field::constant(p.mesh(), 0.5), &opts).unwrap();
        assert!(!rec.converged);
        assert!(rec.residual > opts.tol);
    }

    #[test]
    fn picard_analytic_flux_is_first_order() {
        let exact = oracle::analytic_1d_limit_solution(1.0);
        let mut errs = Vec::new();
        for n in [32, 64, 128] {
            let p = limit(n, Catalog::AnalyticFlux);
            let rec = picard_solve(&p, &Field::zeros(p.mesh()), &SolveOptions::default()).unwrap();
            assert!(rec.converged);
            errs.push(oracle::h1_error_1d(&rec.u, |x| exact.value(x), |x| exact.derivative(x), &[]));
        }
        assert!(errs[0] / errs[1] > 1.7 && errs[1] / errs[2] > 1.7, "{errs:?}");
    }

    #[test]
    fn newton_examples() {
        let opts = SolveOptions::default();
        let p = limit(16, Catalog::UnitSource);
        let rec = newton_solve(&p, &Field::zeros(p.mesh()), &opts).unwrap();
        assert!(rec.converged && rec.iterations <= 2);
        assert!(max_dev(&rec.u, 1.0) < 1e-10);

        let c = c_star();
        let p = limit(16, Catalog::TanhInterior);
        let rec = newton_solve(&p, &Field::constant(p.mesh(), 2.0), &opts).unwrap();
        assert!(rec.converged);
        assert!(max_dev(&rec.u, c) < 1e-8);
        let rec = newton_solve(&p, &Field::constant(p.mesh(), -2.0), &opts).unwrap();
        assert!(max_dev(&rec.u, -c) < 1e-8);
    }

    #[test]
    fn newton_singular_jacobian_is_an_error() {
        let p = limit(8, Catalog::LinearDegenerate);
        let u = Field::interpolate(p.mesh(), |x| x[0]);
        assert!(matches!(newton_solve(&p, &u, &SolveOptions::default()), Err(Error::Singular { .. })));
    }

    #[test]
    fn picard_and_newton_agree() {
        let opts = SolveOptions::default();
        let p = limit(32, Catalog::TanhCoupled);
        let start = Field::constant(p.mesh(), 1.5);
        let a = picard_solve(&p, &start, &opts).unwrap();
        let b = newton_solve(&p, &start, &opts).unwrap();
        assert!(a.converged && b.converged);
        assert!(p.h1_distance(&a.u, &b.u) <= 10.0 * opts.tol);
    }

    #[test]
    fn chord_examples() {
        let opts = SolveOptions::default();
        let p = limit(32, Catalog::TanhInterior);
        let zero = Field::zeros(p.mesh());
        let rec = chord_newton_solve(&p, &zero, &zero, &opts).unwrap();
        assert_eq!(rec.iterations, 0);

        let mut bump = Field::interpolate(p.mesh(), |x| (3.0 * x[0]).cos());
        let scale = 0.01 / p.h1_norm(&bump);
        bump = bump.with_values(bump.values().iter().map(|v| v * scale).collect()).unwrap();
        let rec = chord_newton_solve(&p, &zero, &bump, &opts).unwrap();
        assert!(rec.converged);
        assert!(p.h1_norm(&rec.u) < 1e-8);
        assert!(rec.contraction_estimates.iter().all(|&r| r < 1.0));
    }

    #[test]
    fn chord_rejects_bad_inputs() {
        let opts = SolveOptions::default();
        let p = limit(8, Catalog::LinearDegenerate);
        let zero = Field::zeros(p.mesh());
        assert!(matches!(chord_newton_solve(&p, &zero, &zero, &opts), Err(Error::HyperbolicityFailure)));

        let p = limit(8, Catalog::TanhInterior);
        let far = Field::constant(p.mesh(), 1.0);
        assert!(matches!(
            chord_newton_solve(&p, &Field::zeros(p.mesh()), &far, &opts),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn chord_divergence_is_reported() {
        // Anchored at u = 0, constants follow c -> 2 (c - tanh c), which runs
        // away once c exceeds the stable equilibrium.
        let p = limit(16, Catalog::TanhInterior);
        let opts = SolveOptions {
            delta: 2.5,
            ..Default::default()
        };
        let start = Field::constant(p.mesh(), 2.0);
        let res = chord_newton_solve(&p, &Field::zeros(p.mesh()), &start, &opts);
        assert!(matches!(res, Err(Error::Divergence { .. })), "{res:?}");
    }

    #[test]
    fn enumeration_of_tanh_equilibria() {
        let p = limit(32, Catalog::TanhInterior);
        let starts = constant_starts(p.mesh(), &[-3.0, -1.0, 0.0, 1.0, 3.0], 0, 0.0, 0);
        let opts = SolveOptions::default();
        let eq = find_all_equilibria(&p, &starts, &opts, Exec::Sequential).unwrap();
        assert_eq!(eq.len(), 3);
        let c = c_star();
        assert!(max_dev(&eq[0].u, -c) < 1e-8);
        assert!(max_dev(&eq[1].u, 0.0) < 1e-8);
        assert!(max_dev(&eq[2].u, c) < 1e-8);

        let par = find_all_equilibria(&p, &starts, &opts, Exec::Parallel).unwrap();
        for (a, b) in eq.iter().zip(&par) {
            assert_eq!(a.u.values(), b.u.values());
        }

        let p = limit(16, Catalog::Zero);
        assert!(matches!(newton_solve(&p, &starts[0], &opts), Err(Error::MeshMismatch)));
        let starts = constant_starts(p.mesh(), &[-3.0, 0.0, 3.0], 0, 0.0, 0);
        let eq = find_all_equilibria(&p, &starts, &opts, Exec::Sequential).unwrap();
        assert_eq!(eq.len(), 1);
        assert!(find_all_equilibria(&p, &[], &opts, Exec::Sequential).is_err());
    }

    #[test]
    fn continuation_without_flux_is_constant() {
        let p = limit(32, Catalog::TanhInterior);
        let opts = SolveOptions::default();
        let start = newton_solve(&p, &Field::constant(p.mesh(), 2.0), &opts).unwrap();
        let branch = continue_in_epsilon(&p, &start, &[0.2, 0.1, 0.05], &opts, Anchoring::Previous).unwrap();
        assert!(branch.truncated.is_none());
        assert_eq!(branch.points.len(), 3);
        for pt in &branch.points {
            assert!(pt.distance < 1e-9);
        }
    }

    #[test]
    fn continuation_rejects_bad_schedules_and_starts() {
        let p = limit(16, Catalog::TanhInterior);
        let opts = SolveOptions::default();
        let start = newton_solve(&p, &Field::constant(p.mesh(), 2.0), &opts).unwrap();
        for bad in [&[][..], &[0.1, 0.2], &[0.6, 0.1], &[0.1, 0.1]] {
            assert!(continue_in_epsilon(&p, &start, bad, &opts, Anchoring::Limit).is_err());
        }
        let p = limit(16, Catalog::LinearDegenerate);
        let rec = newton_solve(&p, &Field::zeros(p.mesh()), &opts).unwrap();
        assert!(matches!(
            continue_in_epsilon(&p, &rec, &[0.1], &opts, Anchoring::Limit),
            Err(Error::NotHyperbolic { .. })
        ));
    }

    #[test]
    fn perturbed_starts_are_deterministic() {
        let mesh = Arc::new(build_interval_mesh(8).unwrap());
        let a = constant_starts(&mesh, &[0.0, 1.0], 2, 0.1, 7);
        let b = constant_starts(&mesh, &[0.0, 1.0], 2, 0.1, 7);
        assert_eq!(a.len(), 6);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.values(), y.values());
        }
        assert!(max_dev(&a[1], 0.0) <= 0.1 && max_dev(&a[1], 0.0) > 0.0);
    }
}
