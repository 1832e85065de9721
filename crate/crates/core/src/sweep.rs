//! Experiment harness: epsilon sweeps along solution branches, counting and
//! matching of equilibria sets, set semidistances, rate fits and report files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::equilibria::{
    constant_starts, continue_in_epsilon, find_all_equilibria, validate_schedule, Anchoring, EquilibriumRecord,
    RecordSummary, SolveOptions,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::forms::{Catalog, Coefficient, DiscreteProblem, Field, Mode, Nonlinearity, ProblemSpec};
use crate::geometry::MeshSpec;
use crate::spectral::{self, SpectrumReport};

/// Problem selection: a catalog entry by name or explicit nonlinearities.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemChoice {
    Catalog {
        catalog: Catalog,
    },
    Custom {
        f: Nonlinearity,
        g: Nonlinearity,
        #[serde(default)]
        coefficient: Option<Coefficient>,
        #[serde(default)]
        coefficient_bounds: Option<[f64; 2]>,
    },
}

impl ProblemChoice {
    pub fn spec(&self, mode: Mode) -> ProblemSpec {
        match self {
            ProblemChoice::Catalog { catalog } => catalog.spec(mode),
            ProblemChoice::Custom {
                f,
                g,
                coefficient,
                coefficient_bounds,
            } => {
                let spec = ProblemSpec::new(f.clone(), g.clone(), mode);
                match coefficient {
                    Some(c) => {
                        let bounds = coefficient_bounds.unwrap_or([f64::MIN_POSITIVE, f64::MAX]);
                        spec.with_coefficient(*c, bounds)
                    }
                    None => spec,
                }
            }
        }
    }
}

/// Start fields for the multi-start enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StartSpec {
    /// Constant start values.
    pub values: Vec<f64>,
    /// Random perturbations added per constant start.
    pub perturbations: usize,
    pub amplitude: f64,
}

impl Default for StartSpec {
    fn default() -> Self {
        StartSpec {
            values: vec![0.0],
            perturbations: 0,
            amplitude: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub mesh: MeshSpec,
    pub problem: ProblemChoice,
    #[serde(default)]
    pub eps_schedule: Vec<f64>,
    /// Strip width for `solve` and `spectrum`; the limit problem when absent.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub starts: StartSpec,
    #[serde(default)]
    pub anchoring: Anchoring,
    #[serde(default = "default_spectrum_count")]
    pub spectrum_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_spectrum_count() -> usize {
    spectral::DEFAULT_COUNT
}

impl SweepConfig {
    pub fn new(mesh: MeshSpec, problem: ProblemChoice) -> Self {
        SweepConfig {
            mesh,
            problem,
            eps_schedule: Vec::new(),
            epsilon: None,
            solver: SolveOptions::default(),
            starts: StartSpec::default(),
            anchoring: Anchoring::default(),
            spectrum_count: default_spectrum_count(),
            seed: 0,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.eps_schedule.is_empty() {
            validate_schedule(&self.eps_schedule)?;
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e < 0.5) {
                return Err(Error::InvalidArgument(format!("epsilon {e} outside (0, 1/2)")));
            }
        }
        if self.starts.values.is_empty() {
            return Err(Error::InvalidArgument("at least one start value is required".into()));
        }
        if self.spectrum_count == 0 {
            return Err(Error::InvalidArgument("spectrum_count must be positive".into()));
        }
        self.solver.validate()
    }

    fn require_schedule(&self) -> Result<()> {
        if self.eps_schedule.is_empty() {
            return Err(Error::InvalidArgument("this experiment needs an eps_schedule".into()));
        }
        Ok(())
    }

    fn limit_problem(&self) -> Result<DiscreteProblem> {
        let mesh = Arc::new(self.mesh.build()?);
        DiscreteProblem::new(mesh, self.problem.spec(Mode::Limit))
    }

    fn starts_for(&self, problem: &DiscreteProblem) -> Vec<Field> {
        constant_starts(
            problem.mesh(),
            &self.starts.values,
            self.starts.perturbations,
            self.starts.amplitude,
            self.seed,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Sweep,
    Count,
    Solve,
    Spectrum,
}

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Strip width; `0` stands for the limit problem.
    pub eps: f64,
    pub dist_h1: Option<f64>,
    pub op_gap: Option<f64>,
    pub margin: Option<f64>,
    pub iters: usize,
}

/// One continued branch of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    pub limit_index: usize,
    pub limit_mean: f64,
    pub epsilons: Vec<f64>,
    pub distances: Vec<f64>,
    pub op_gaps: Vec<f64>,
    pub margins: Vec<f64>,
    pub hyperbolic: Vec<bool>,
    pub truncated: Option<String>,
}

/// Outcome of the enumeration at one strip width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub eps: f64,
    pub count: usize,
    /// Index of the matched limit equilibrium for each equilibrium found.
    pub matching: Vec<Option<usize>>,
    /// H^1 distance to the matched limit equilibrium, by limit index.
    pub matched_distances: Vec<Option<f64>>,
    pub hyperbolic: Vec<bool>,
    /// `semidistance(E_eps, E_0)`.
    pub upper_semidistance: f64,
    /// `semidistance(E_0, E_eps)`.
    pub lower_semidistance: f64,
    pub perfect_matching: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub distance: Option<f64>,
    pub op_gap: Option<f64>,
    pub upper_semidistance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub experiment: Experiment,
    pub rows: Vec<SweepRow>,
    pub branches: Vec<BranchReport>,
    pub counts: Vec<CountRow>,
    pub limit_count: usize,
    pub rates: Rates,
    pub records: Vec<RecordSummary>,
    pub spectra: Vec<SpectrumReport>,
    /// Set when rows are missing relative to the schedule.
    pub truncated: Option<String>,
    pub failures: Vec<String>,
    pub success: bool,
    #[serde(skip)]
    pub fields: Vec<(String, Field)>,
}

impl SweepReport {
    fn new(experiment: Experiment) -> Self {
        SweepReport {
            experiment,
            rows: Vec::new(),
            branches: Vec::new(),
            counts: Vec::new(),
            limit_count: 0,
            rates: Rates::default(),
            records: Vec::new(),
            spectra: Vec::new(),
            truncated: None,
            failures: Vec::new(),
            success: true,
            fields: Vec::new(),
        }
    }

    fn archive(&mut self, name: String, record: &EquilibriumRecord) {
        self.records.push(record.summary(Some(name.clone())));
        self.fields.push((name, record.u.clone()));
    }

    fn finish(mut self) -> Self {
        self.success = self.failures.is_empty();
        self
    }

    /// The `report.csv` contents.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("eps,dist_h1,op_gap,margin,iters\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.eps,
                cell(r.dist_h1),
                cell(r.op_gap),
                cell(r.margin),
                r.iters
            ));
        }
        out
    }
}

/// `max_{a in A} min_{b in B} ||a - b||_{H^1}`.
pub fn semidistance(problem: &DiscreteProblem, a: &[Field], b: &[Field]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("semidistance of an empty set".into()));
    }
    Ok(a.iter()
        .map(|x| b.iter().map(|y| problem.h1_distance(x, y)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max))
}

/// Least-squares slope of `log(value)` against `log(eps)`.
pub fn estimate_rate(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::Domain(format!("rate fit needs at least 3 pairs, got {}", pairs.len())));
    }
    if let Some((e, v)) = pairs.iter().find(|(e, v)| !(*e > 0.0 && *v > 0.0)) {
        return Err(Error::Domain(format!("nonpositive pair ({e}, {v})")));
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|(e, v)| (e.ln(), v.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("rate fit needs distinct epsilon values".into()));
    }
    Ok(sxy / sxx)
}

fn optional_rate(pairs: Vec<(f64, f64)>) -> Option<f64> {
    estimate_rate(&pairs).ok()
}

/// Limit equilibria from the configured starts, with their spectra.
fn limit_equilibria(
    config: &SweepConfig,
    problem: &DiscreteProblem,
    exec: Exec,
) -> Result<(Vec<EquilibriumRecord>, Vec<SpectrumReport>)> {
    let records = find_all_equilibria(problem, &config.starts_for(problem), &config.solver, exec)?;
    let spectra = exec
        .map(&records, |r| spectral::is_hyperbolic(problem, &r.u, None).map(|(_, s)| s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok((records, spectra))
}

/// Follows every hyperbolic limit equilibrium through the schedule and
/// records distances, operator gaps and spectral margins.
pub fn run_lower_semicontinuity_sweep(config: &SweepConfig, exec: Exec) -> Result<SweepReport> {
    config.validate()?;
    config.require_schedule()?;
    let limit = config.limit_problem()?;
    let mut report = SweepReport::new(Experiment::Sweep);
    let (records, spectra) = limit_equilibria(config, &limit, exec)?;
    if records.is_empty() {
        return Err(Error::ConvergenceFailure {
            iterations: config.solver.max_iter,
            best_estimate: f64::NAN,
        });
    }
    report.limit_count = records.len();
    for (k, r) in records.iter().enumerate() {
        report.archive(format!("limit_{k}.csv"), r);
    }

    let hyperbolic: Vec<usize> = (0..records.len()).filter(|&k| spectra[k].hyperbolic).collect();
    for (k, s) in spectra.iter().enumerate() {
        if !s.hyperbolic {
            report
                .failures
                .push(format!("limit equilibrium {k} is not hyperbolic (margin {:e})", s.margin));
        }
    }
    report.spectra = spectra;

    let work: Vec<usize> = hyperbolic.clone();
    let branches = exec.map(&work, |&k| follow_branch(config, &limit, &records[k], k));
    for b in branches {
        let (branch_report, branch_records) = b?;
        if let Some(t) = &branch_report.truncated {
            report.failures.push(format!("branch {}: {t}", branch_report.limit_index));
        }
        for (i, r) in branch_records.iter().enumerate() {
            report.archive(format!("eps_{i}_{}.csv", branch_report.limit_index), r);
        }
        report.branches.push(branch_report);
    }

    let reached = report.branches.iter().map(|b| b.epsilons.len()).min().unwrap_or(0);
    if reached < config.eps_schedule.len() {
        report.truncated = Some(format!(
            "{} of {} scheduled widths completed on every branch",
            reached,
            config.eps_schedule.len()
        ));
    }
    for i in 0..reached {
        let eps = config.eps_schedule[i];
        let fold = |vals: Vec<f64>, max: bool| {
            vals.into_iter()
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| if max { a.max(v) } else { a.min(v) })))
        };
        let bs = &report.branches;
        report.rows.push(SweepRow {
            eps,
            dist_h1: fold(bs.iter().map(|b| b.distances[i]).collect(), true),
            op_gap: fold(bs.iter().map(|b| b.op_gaps[i]).collect(), true),
            margin: fold(bs.iter().map(|b| b.margins[i]).collect(), false),
            iters: 0,
        });
    }
    // Iterations per row: the largest count across branches.
    let iters: Vec<usize> = (0..reached)
        .map(|i| {
            report
                .records
                .iter()
                .filter(|r| r.epsilon == Some(config.eps_schedule[i]))
                .map(|r| r.iterations)
                .max()
                .unwrap_or(0)
        })
        .collect();
    for (row, it) in report.rows.iter_mut().zip(iters) {
        row.iters = it;
    }
    report.rates = Rates {
        distance: optional_rate(report.rows.iter().filter_map(|r| r.dist_h1.map(|d| (r.eps, d))).collect()),
        op_gap: optional_rate(report.rows.iter().filter_map(|r| r.op_gap.map(|d| (r.eps, d))).collect()),
        upper_semidistance: None,
    };
    Ok(report.finish())
}

fn follow_branch(
    config: &SweepConfig,
    limit: &DiscreteProblem,
    start: &EquilibriumRecord,
    index: usize,
) -> Result<(BranchReport, Vec<EquilibriumRecord>)> {
    let branch = continue_in_epsilon(limit, start, &config.eps_schedule, &config.solver, config.anchoring)?;
    let mut out = BranchReport {
        limit_index: index,
        limit_mean: start.u.mean(),
        epsilons: Vec::new(),
        distances: Vec::new(),
        op_gaps: Vec::new(),
        margins: Vec::new(),
        hyperbolic: Vec::new(),
        truncated: branch.truncated.clone(),
    };
    let mut records = Vec::new();
    for p in branch.points {
        let problem = limit.with_mode(Mode::Concentrated { epsilon: p.epsilon })?;
        let (ok, spec) = spectral::is_hyperbolic(&problem, &p.record.u, None)?;
        out.epsilons.push(p.epsilon);
        out.distances.push(p.distance);
        out.op_gaps.push(limit.operator_gap(&start.u, p.epsilon)?);
        out.margins.push(spec.margin);
        out.hyperbolic.push(ok);
        if !ok {
            out.truncated.get_or_insert_with(|| format!("equilibrium at epsilon = {} is not hyperbolic", p.epsilon));
        }
        records.push(p.record);
    }
    Ok((out, records))
}

/// Enumerates equilibria at every scheduled width and matches them one to
/// one with the limit equilibria.
pub fn run_counting_experiment(config: &SweepConfig, exec: Exec) -> Result<SweepReport> {
    config.validate()?;
    config.require_schedule()?;
    let limit = config.limit_problem()?;
    let mut report = SweepReport::new(Experiment::Count);
    let (limit_records, spectra) = limit_equilibria(config, &limit, exec)?;
    if limit_records.is_empty() {
        return Err(Error::ConvergenceFailure {
            iterations: config.solver.max_iter,
            best_estimate: f64::NAN,
        });
    }
    let k = limit_records.len();
    report.limit_count = k;
    for (j, s) in spectra.iter().enumerate() {
        if !s.hyperbolic {
            report
                .failures
                .push(format!("limit equilibrium {j} is not hyperbolic (margin {:e})", s.margin));
        }
    }
    report.spectra = spectra;
    for (j, r) in limit_records.iter().enumerate() {
        report.archive(format!("limit_{j}.csv"), r);
    }
    let limit_fields: Vec<Field> = limit_records.iter().map(|r| r.u.clone()).collect();

    let delta = config.solver.delta;
    let per_eps = exec.map(&config.eps_schedule, |&eps| -> Result<_> {
        let problem = limit.with_mode(Mode::Concentrated { epsilon: eps })?;
        let found = find_all_equilibria(&problem, &config.starts_for(&problem), &config.solver, Exec::Sequential)?;
        let verdicts = found
            .iter()
            .map(|r| spectral::is_hyperbolic(&problem, &r.u, None))
            .collect::<Result<Vec<_>>>()?;
        let gaps = limit_fields
            .iter()
            .map(|u| limit.operator_gap(u, eps))
            .collect::<Result<Vec<_>>>()?;
        Ok((problem, found, verdicts, gaps))
    });

    for (i, item) in per_eps.into_iter().enumerate() {
        let eps = config.eps_schedule[i];
        let (problem, found, verdicts, gaps) = match item {
            Ok(v) => v,
            Err(e) => {
                report.truncated = Some(format!("stopped at epsilon = {eps}: {e}"));
                report.failures.push(format!("enumeration failed at epsilon = {eps}: {e}"));
                break;
            }
        };
        let fields: Vec<Field> = found.iter().map(|r| r.u.clone()).collect();
        let (matching, matched_distances) = match_sets(&problem, &fields, &limit_fields);
        let perfect = fields.len() == k
            && matching.iter().all(Option::is_some)
            && matched_distances.iter().all(|d| d.is_some_and(|d| d <= delta));
        if fields.len() != k {
            report
                .failures
                .push(format!("epsilon = {eps}: found {} equilibria, expected {k}", fields.len()));
        } else if !perfect {
            report
                .failures
                .push(format!("epsilon = {eps}: no perfect matching within delta = {delta}"));
        }
        let hyperbolic: Vec<bool> = verdicts.iter().map(|v| v.0).collect();
        if hyperbolic.iter().any(|h| !h) {
            report.failures.push(format!("epsilon = {eps}: non-hyperbolic equilibrium"));
        }
        let (upper, lower) = if fields.is_empty() {
            (f64::INFINITY, f64::INFINITY)
        } else {
            (
                semidistance(&problem, &fields, &limit_fields)?,
                semidistance(&problem, &limit_fields, &fields)?,
            )
        };
        report.rows.push(SweepRow {
            eps,
            dist_h1: matched_distances.iter().flatten().copied().reduce(f64::max),
            op_gap: gaps.iter().copied().reduce(f64::max),
            margin: verdicts.iter().map(|v| v.1.margin).reduce(f64::min),
            iters: found.iter().map(|r| r.iterations).max().unwrap_or(0),
        });
        report.counts.push(CountRow {
            eps,
            count: fields.len(),
            matching,
            matched_distances,
            hyperbolic,
            upper_semidistance: upper,
            lower_semidistance: lower,
            perfect_matching: perfect,
        });
        for (j, r) in found.iter().enumerate() {
            report.archive(format!("eps_{i}_{j}.csv"), r);
        }
    }
    report.rates = Rates {
        distance: optional_rate(report.rows.iter().filter_map(|r| r.dist_h1.map(|d| (r.eps, d))).collect()),
        op_gap: optional_rate(report.rows.iter().filter_map(|r| r.op_gap.map(|d| (r.eps, d))).collect()),
        upper_semidistance: optional_rate(report.counts.iter().map(|c| (c.eps, c.upper_semidistance)).collect()),
    };
    Ok(report.finish())
}

/// Nearest-neighbour matching of `found` onto `limit`. An entry is left
/// unmatched when two found fields claim the same limit field.
fn match_sets(problem: &DiscreteProblem, found: &[Field], limit: &[Field]) -> (Vec<Option<usize>>, Vec<Option<f64>>) {
    let nearest: Vec<(usize, f64)> = found
        .iter()
        .map(|u| {
            limit
                .iter()
                .enumerate()
                .map(|(j, v)| (j, problem.h1_distance(u, v)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("limit set is nonempty")
        })
        .collect();
    let mut matching = vec![None; found.len()];
    let mut distances = vec![None; limit.len()];
    for (i, &(j, d)) in nearest.iter().enumerate() {
        let claims = nearest.iter().filter(|(jj, _)| *jj == j).count();
        if claims == 1 {
            matching[i] = Some(j);
            distances[j] = Some(d);
        }
    }
    (matching, distances)
}

/// Equilibria of the configured problem, with spectra.
pub fn run_solve(config: &SweepConfig, exec: Exec, experiment: Experiment) -> Result<SweepReport> {
    config.validate()?;
    let limit = config.limit_problem()?;
    let mode = match config.epsilon {
        Some(epsilon) => Mode::Concentrated { epsilon },
        None => Mode::Limit,
    };
    let problem = limit.with_mode(mode)?;
    let mut report = SweepReport::new(experiment);
    let found = find_all_equilibria(&problem, &config.starts_for(&problem), &config.solver, exec)?;
    if found.is_empty() {
        report.failures.push("no start converged".into());
    }
    let m = config.spectrum_count.min(problem.mesh().node_count());
    let spectra = exec
        .map(&found, |r| spectral::linearized_spectrum(&problem, &r.u, m))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let tag = match mode {
        Mode::Limit => "limit".to_string(),
        Mode::Concentrated { .. } => "eps_0".to_string(),
    };
    for (k, (r, s)) in found.iter().zip(&spectra).enumerate() {
        report.archive(format!("{tag}_{k}.csv"), r);
        report.rows.push(SweepRow {
            eps: mode.epsilon().unwrap_or(0.0),
            dist_h1: None,
            op_gap: None,
            margin: Some(s.margin),
            iters: r.iterations,
        });
    }
    report.limit_count = if mode == Mode::Limit { found.len() } else { 0 };
    report.spectra = spectra;
    Ok(report.finish())
}

/// Writes `report.json`, `report.csv` and one CSV per archived field.
pub fn write_outputs(report: &SweepReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join("report.csv"), report.to_csv())?;
    for (name, field) in &report.fields {
        let mut w = BufWriter::new(fs::File::create(dir.join(name))?);
        field.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_interval_mesh;

    fn problem(n: usize) -> DiscreteProblem {
        DiscreteProblem::new(Arc::new(build_interval_mesh(n).unwrap()), Catalog::Zero.spec(Mode::Limit)).unwrap()
    }

    fn config(catalog: Catalog, n: usize, schedule: &[f64]) -> SweepConfig {
        let mut c = SweepConfig::new(MeshSpec::Interval { n }, ProblemChoice::Catalog { catalog });
        c.eps_schedule = schedule.to_vec();
        c
    }

    #[test]
    fn semidistance_examples() {
        let p = problem(16);
        let zero = Field::zeros(p.mesh());
        let one = Field::constant(p.mesh(), 1.0);
        assert_eq!(semidistance(&p, std::slice::from_ref(&zero), std::slice::from_ref(&zero)).unwrap(), 0.0);
        assert!((semidistance(&p, std::slice::from_ref(&zero), std::slice::from_ref(&one)).unwrap() - 1.0).abs() < 1e-12);
        // One-sided: {0} is covered by {0, 1} but not conversely.
        let both = [zero.clone(), one.clone()];
        assert_eq!(semidistance(&p, std::slice::from_ref(&zero), &both).unwrap(), 0.0);
        assert!(semidistance(&p, &both, std::slice::from_ref(&zero)).unwrap() > 0.5);
        assert!(matches!(semidistance(&p, &[], &[zero]), Err(Error::Domain(_))));
    }

    #[test]
    fn rate_examples() {
        let eps = [0.2, 0.1, 0.05, 0.025];
        let lin: Vec<_> = eps.iter().map(|&e| (e, e)).collect();
        let quad: Vec<_> = eps.iter().map(|&e| (e, e * e)).collect();
        assert!((estimate_rate(&lin).unwrap() - 1.0).abs() < 1e-12);
        assert!((estimate_rate(&quad).unwrap() - 2.0).abs() < 1e-12);
        assert!(estimate_rate(&lin[..2]).is_err());
        assert!(matches!(estimate_rate(&[(0.2, 1.0), (0.1, 0.0), (0.05, 1.0)]), Err(Error::Domain(_))));
    }

    #[test]
    fn sweep_without_boundary_term_has_zero_distances() {
        let mut c = config(Catalog::TanhInterior, 32, &[0.2, 0.1, 0.05]);
        c.starts.values = vec![2.0];
        let r = run_lower_semicontinuity_sweep(&c, Exec::Sequential).unwrap();
        assert!(r.success, "{:?}", r.failures);
        assert_eq!(r.rows.len(), 3);
        for row in &r.rows {
            assert!(row.dist_h1.unwrap() < 10.0 * c.solver.tol);
            assert_eq!(row.op_gap, Some(0.0));
        }
    }

    #[test]
    fn counting_without_nonlinearity_finds_one() {
        let mut c = config(Catalog::Zero, 16, &[0.2, 0.1]);
        c.starts.values = vec![-1.0, 0.0, 1.0];
        let r = run_counting_experiment(&c, Exec::default()).unwrap();
        assert!(r.success, "{:?}", r.failures);
        assert_eq!(r.limit_count, 1);
        assert!(r.counts.iter().all(|c| c.count == 1 && c.perfect_matching));
    }

    #[test]
    fn counting_three_tanh_equilibria() {
        let mut c = config(Catalog::TanhInterior, 32, &[0.2, 0.1, 0.05]);
        c.starts.values = vec![-2.0, 0.0, 2.0];
        let r = run_counting_experiment(&c, Exec::default()).unwrap();
        assert!(r.success, "{:?}", r.failures);
        assert_eq!(r.limit_count, 3);
        assert!(r.counts.iter().all(|c| c.count == 3 && c.perfect_matching));
    }

    #[test]
    fn reports_are_deterministic() {
        let mut c = config(Catalog::TanhCoupled, 24, &[0.2, 0.1]);
        c.starts = StartSpec {
            values: vec![-2.0, 0.0, 2.0],
            perturbations: 2,
            amplitude: 0.3,
        };
        c.seed = 7;
        let a = run_counting_experiment(&c, Exec::Sequential).unwrap();
        let b = run_counting_experiment(&c, Exec::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn config_parsing_and_validation() {
        let text = r#"{
            "mesh": {"interval": {"n": 32}},
            "problem": {"catalog": "analytic_flux"},
            "eps_schedule": [0.2, 0.1],
            "solver": {"tol": 1e-10}
        }"#;
        let c = SweepConfig::from_json(text).unwrap();
        assert_eq!(c.solver.tol, 1e-10);
        assert_eq!(c.solver.max_iter, SolveOptions::default().max_iter);
        assert_eq!(c.starts, StartSpec::default());
        c.validate().unwrap();

        let custom = r#"{
            "mesh": {"rectangle": {"nx": 4, "ny": 4}},
            "problem": {"f": {"kind": "tanh", "scale": 2.0}, "g": {"kind": "zero"}},
            "eps_schedule": [0.1, 0.2]
        }"#;
        let c = SweepConfig::from_json(custom).unwrap();
        assert!(matches!(c.problem, ProblemChoice::Custom { .. }));
        assert!(c.validate().is_err());
    }

    #[test]
    fn csv_has_expected_columns() {
        let mut r = SweepReport::new(Experiment::Sweep);
        r.rows.push(SweepRow {
            eps: 0.1,
            dist_h1: Some(0.5),
            op_gap: None,
            margin: Some(1.0),
            iters: 3,
        });
        assert_eq!(r.to_csv(), "eps,dist_h1,op_gap,margin,iters\n0.1,0.5,,1,3\n");
    }
}
