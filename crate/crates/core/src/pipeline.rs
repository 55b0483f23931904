//! Scenario execution: stages, assertions, report files and suites.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::closing::{build_flowbox, hermite_close, ClosedOrbit, FlowBox, FlowBoxSummary};
use crate::field::{unit_field_family, Region, VectorField};
use crate::flow::{check_return_jets, find_returns, first_return, integrate, integrate_with, refine_periodic};
use crate::flow::{ReturnEvent, ReturnJetReport, Section};
use crate::geometry::ChartedManifold;
use crate::hyperbolicity::{
    check_hyperbolic_margin, eigenvalue_adjuster, section_monodromy, AdjustReport, Eigenvalue, MonodromyReport,
};
use crate::ode::Dopri5;
use crate::perturbation::{
    cr_distance, make_bump, perturb_autonomous, perturb_homoclinic, perturb_nonautonomous, slowest_parameter,
    verify_closure, ClosureReport, CrDistanceReport, Mode, PerturbedField,
};
use crate::scenario::{Overrides, Pipeline, Scenario};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub value: f64,
    /// `"<="` or `">="`.
    pub relation: String,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosingSummary {
    pub x0: Vec<f64>,
    pub period: f64,
    pub alpha: f64,
    pub window: f64,
    pub endpoint_mismatch: Vec<f64>,
    pub rc_min: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    pub mode: Mode,
    pub samples: usize,
    /// Outside samples where `Y` and `X` differ in any bit.
    pub mismatches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeClosure {
    pub mode: Mode,
    #[serde(flatten)]
    pub closure: ClosureReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustSummary {
    pub adjust: AdjustReport,
    pub moduli_before: Vec<f64>,
    pub moduli_after: Vec<f64>,
    pub return_time_before: f64,
    pub return_time_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomoclinicSummary {
    pub y_slow: Vec<f64>,
    pub sigma0: f64,
    pub tau: f64,
    pub speed_at_y: f64,
    pub threshold: f64,
    pub time_change_bounds: Vec<f64>,
    pub field_at_y: Vec<f64>,
    pub forward_distance: f64,
    pub backward_distance: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Stages {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub returns: Option<Vec<ReturnJetReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closing: Option<ClosingSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flowbox: Option<FlowBoxSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<SupportReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distances: Option<Vec<CrDistanceReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closure: Option<Vec<ModeClosure>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monodromy: Option<MonodromyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjust: Option<AdjustSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub homoclinic: Option<HomoclinicSummary>,
}

/// Everything a run produces except timings, so that it serializes
/// byte-identically for a fixed scenario and seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    /// SHA-256 of the scenario text followed by the applied overrides.
    pub digest: String,
    pub pipeline: Pipeline,
    pub seed: u64,
    pub stages: Stages,
    pub assertions: Vec<Assertion>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

pub struct RunOutput {
    pub report: RunReport,
    pub timings: Vec<Timing>,
    /// Data files (CSV) by file name.
    pub files: Vec<(String, String)>,
}

/// A module error with the stage it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct StageError {
    pub stage: String,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.error {
            Error::Schema(_) => write!(f, "{}", self.error),
            e => write!(f, "{}: {e}", self.stage),
        }
    }
}

impl std::error::Error for StageError {}

impl StageError {
    /// 2 for unreadable or invalid scenarios, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match (&self.error, self.stage.as_str()) {
            (Error::Schema(_), _) | (_, "load") => 2,
            _ => 3,
        }
    }
}

/// Exit status of a finished run: 0 all pass, 1 assertion failure, else the error's code.
pub fn exit_code(result: std::result::Result<&RunReport, &StageError>) -> i32 {
    match result {
        Ok(report) if report.pass => 0,
        Ok(_) => 1,
        Err(e) => e.exit_code(),
    }
}

type StageResult<T> = std::result::Result<T, StageError>;

struct Run<'a> {
    scenario: &'a Scenario,
    field: Arc<dyn VectorField>,
    man: ChartedManifold,
    stages: Stages,
    assertions: Vec<Assertion>,
    timings: Vec<Timing>,
    files: Vec<(String, String)>,
}

impl Run<'_> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> StageResult<T> {
        let start = Instant::now();
        let out = f(self).map_err(|error| StageError { stage: name.to_string(), error });
        self.timings.push(Timing { stage: name.to_string(), seconds: start.elapsed().as_secs_f64() });
        out
    }

    fn check(&mut self, name: impl Into<String>, value: f64, limit: f64) {
        let pass = value <= limit;
        self.assertions.push(Assertion { name: name.into(), value, relation: "<=".into(), limit, pass });
    }

    fn check_at_least(&mut self, name: impl Into<String>, value: f64, limit: f64, pass: bool) {
        self.assertions.push(Assertion { name: name.into(), value, relation: ">=".into(), limit, pass });
    }

    fn family(&self) -> Vec<Vec<f64>> {
        let random = self.scenario.perturb.as_ref().map_or(8, |p| p.random_fields);
        unit_field_family(self.man.dimension, random, self.scenario.seed)
    }

    fn r(&self) -> usize {
        self.scenario.orbit.as_ref().map_or(1, |o| o.r)
    }

    /// Return search, jet comparison at every return, closing and flow box.
    /// `None` when no return is found (recorded as a failed assertion).
    fn close(&mut self) -> StageResult<Option<Arc<FlowBox>>> {
        let o = self.scenario.orbit.clone().expect("validated");
        let events = self.stage("returns", |run| {
            let field = &*run.field;
            let events = find_returns(field, &run.man, &o.x0, o.t_anchor, o.alpha_max, o.horizon, o.t_min)?;
            let traj = integrate(field, &run.man, &o.x0, (o.t_anchor, o.t_anchor + o.horizon))?;
            let nodes: Vec<Vec<f64>> = traj.solution.nodes().iter().map(|&t| traj.eval(t)).collect();
            let region = Region::bounding(&nodes, 0.0);
            let family = run.family();
            let reports = events
                .iter()
                .map(|ev| check_return_jets(field, &run.man, ev, o.r, &family, &region))
                .collect::<Result<Vec<_>>>()?;
            for (k, rep) in reports.iter().enumerate() {
                let worst = rep.deviations.iter().copied().fold(0.0, f64::max);
                run.check(format!("return_jets[{k}]"), worst, rep.bound);
            }
            run.stages.returns = Some(reports);
            Ok(events)
        })?;
        self.check("returns_found", if events.is_empty() { 1.0 } else { 0.0 }, 0.0);
        let Some(best) = events.into_iter().min_by(|a, b| a.alpha.total_cmp(&b.alpha)) else {
            return Ok(None);
        };
        let orbit = self.stage("closing", |run| {
            let event = if o.return_offset > 0.0 {
                let period = best.period - o.return_offset;
                let t0 = best.t_anchor;
                let x_ret = integrate(&*run.field, &run.man, &best.x0, (t0, t0 + period))?.end().to_vec();
                ReturnEvent { alpha: run.man.distance(&best.x0, &x_ret), period, x_ret, ..best }
            } else {
                best
            };
            let orbit = hermite_close(run.field.clone(), &run.man, &event, o.r, o.window)?;
            let worst = orbit.endpoint_mismatch.iter().copied().fold(0.0, f64::max);
            run.check("endpoint_matching", worst, run.scenario.tolerances.endpoint);
            run.stages.closing = Some(summarize(&orbit));
            let mut csv = Vec::new();
            orbit.write_csv(&mut csv)?;
            run.files.push(("orbit.csv".into(), String::from_utf8_lossy(&csv).into_owned()));
            Ok(orbit)
        })?;
        let fb = self.stage("flowbox", |run| {
            let fb = build_flowbox(Arc::new(orbit), o.epsilon)?;
            run.stages.flowbox = Some(fb.summary());
            Ok(Arc::new(fb))
        })?;
        Ok(Some(fb))
    }

    fn perturbed(&self, fb: &Arc<FlowBox>, mode: Mode) -> Result<PerturbedField> {
        let amplitude = self.scenario.perturb.as_ref().map_or(1.0, |p| p.amplitude);
        let bump = make_bump(fb.epsilon, amplitude, self.r())?;
        match mode {
            Mode::Nonautonomous => perturb_nonautonomous(self.field.clone(), fb.clone(), bump),
            Mode::Autonomous => perturb_autonomous(self.field.clone(), fb.clone(), bump),
            Mode::Homoclinic => Err(Error::Domain("homoclinic mode has its own pipeline".into())),
        }
    }

    fn perturb(&mut self, fb: &Arc<FlowBox>) -> StageResult<Vec<PerturbedField>> {
        let params = self.scenario.perturb.clone().unwrap_or_default();
        let fields = self.stage("perturb", |run| params.modes.iter().map(|m| run.perturbed(fb, *m)).collect())?;
        self.stage("support", |run| {
            let mut reports = Vec::new();
            for y in &fields {
                let mismatches = outside_mismatches(&*run.field, y, params.support_samples, run.scenario.seed)?;
                run.check(format!("support.{}", y.mode.name()), mismatches as f64, 0.0);
                reports.push(SupportReport { mode: y.mode, samples: params.support_samples, mismatches });
            }
            run.stages.support = Some(reports);
            Ok(())
        })?;
        self.stage("distance", |run| {
            let family = run.family();
            let mut reports = Vec::new();
            for y in &fields {
                let rep = cr_distance(&*run.field, y, run.r(), &family, params.samples, run.scenario.seed)?;
                for v in &rep.per_order {
                    run.check(format!("distance.{}.q{}", y.mode.name(), v.q), v.measured, v.bound);
                }
                reports.push(rep);
            }
            run.stages.distances = Some(reports);
            Ok(())
        })?;
        Ok(fields)
    }

    fn verify(&mut self, fields: &[PerturbedField]) -> StageResult<()> {
        self.stage("closure", |run| {
            let tol = run.scenario.tolerances.clone();
            let mut reports = Vec::new();
            for y in fields {
                let c = verify_closure(y, run.r())?;
                run.check(format!("closure.{}.position", y.mode.name()), c.position_mismatch, tol.closure_position);
                run.check(format!("closure.{}.derivative", y.mode.name()), c.derivative_mismatch[0], tol.closure_derivative);
                reports.push(ModeClosure { mode: y.mode, closure: c });
            }
            run.stages.closure = Some(reports);
            Ok(())
        })
    }

    fn monodromy(&mut self) -> StageResult<(Vec<f64>, f64, MonodromyReport)> {
        let m = self.scenario.monodromy.clone().expect("validated");
        let (p, period) = self.stage("refine", |run| {
            if m.refine {
                refine_periodic(&*run.field, &run.man, &m.point, m.period, 1e-10)
            } else {
                Ok((m.point.clone(), m.period))
            }
        })?;
        let report = self.stage("monodromy", |run| {
            let report = section_monodromy(&*run.field, &run.man, &p, m.t0, m.t0 + period)?;
            run.check("splitting_invariance", report.invariance_residual, 1e-7);
            if let Some(expect) = &m.expect_moduli {
                let got: Vec<f64> = report.eigenvalues.iter().map(Eigenvalue::modulus).collect();
                let worst = if got.len() == expect.len() {
                    got.iter().zip(expect).map(|(g, e)| (g - e).abs() / e.abs()).fold(0.0, f64::max)
                } else {
                    f64::INFINITY
                };
                run.check("expected_moduli", worst, run.scenario.tolerances.multiplier);
            }
            if let Some(delta) = m.delta_req {
                let c = check_hyperbolic_margin(&report, delta);
                // a center multiplier fails even when the margin is large enough
                run.check_at_least("hyperbolic_margin", c.margin, delta, c.pass);
            }
            if let Some(tol) = m.liouville_tol {
                run.check("liouville_defect", report.liouville.defect, tol);
            }
            run.stages.monodromy = Some(report.clone());
            Ok(report)
        })?;
        Ok((p, period, report))
    }

    fn adjust(&mut self, p: &[f64], period: f64, report: &MonodromyReport) -> StageResult<()> {
        let a = self.scenario.adjust.clone().expect("validated");
        let fb = self.stage("adjust_flowbox", |run| {
            let x_ret = integrate(&*run.field, &run.man, p, (0.0, period))?.end().to_vec();
            let event = ReturnEvent { x0: p.to_vec(), t_anchor: 0.0, period, alpha: run.man.distance(p, &x_ret), x_ret };
            let orbit = hermite_close(run.field.clone(), &run.man, &event, 1, None)?;
            Ok(Arc::new(build_flowbox(Arc::new(orbit), a.epsilon)?))
        })?;
        self.stage("adjust", |run| {
            let tol = run.scenario.tolerances.clone();
            let z = eigenvalue_adjuster(run.field.clone(), fb.clone(), report, &a.target, a.window)?;
            let after = section_monodromy(&z, &run.man, p, 0.0, period)?;
            let before: Vec<f64> = report.eigenvalues.iter().map(Eigenvalue::modulus).collect();
            let moduli: Vec<f64> = after.eigenvalues.iter().map(Eigenvalue::modulus).collect();
            let (k_after, hit) = nearest(&moduli, 1.0);
            run.check("adjusted_multiplier", hit, tol.multiplier);
            let (k_before, _) = nearest(&before, z.report.mu.abs());
            let rest = |v: &[f64], skip: usize| -> Vec<f64> {
                v.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, m)| *m).collect()
            };
            let (rb, ra) = (rest(&before, k_before), rest(&moduli, k_after));
            let off = rb.iter().zip(&ra).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            run.check("off_target_multipliers", off, tol.multiplier);
            let sec = Section::new(p.to_vec(), run.field.eval(p, 0.0)?, fb.epsilon);
            let horizon = 1.5 * period;
            let (ty, _) = first_return(&*run.field, &run.man, &sec, p, 0.0, horizon)?;
            let (tz, _) = first_return(&z, &run.man, &sec, p, 0.0, horizon)?;
            run.check("return_time", (ty - tz).abs(), tol.return_time);
            run.stages.adjust = Some(AdjustSummary {
                adjust: z.report.clone(),
                moduli_before: before,
                moduli_after: moduli,
                return_time_before: ty,
                return_time_after: tz,
            });
            Ok(())
        })
    }

    fn homoclinic(&mut self, fb: &Arc<FlowBox>) -> StageResult<()> {
        let h = self.scenario.homoclinic.clone().expect("validated");
        self.stage("homoclinic", |run| {
            let s0 = slowest_parameter(fb, Some((&h.hint, h.hint_radius)))?;
            let y_slow = fb.orbit.point(s0);
            let bump = make_bump(fb.epsilon, 1.0, run.r())?;
            let y = perturb_homoclinic(run.field.clone(), fb.clone(), &y_slow, h.tau, bump, h.slow_fraction)?;
            let data = y.homoclinic.clone().expect("homoclinic mode");
            let t_y = fb.orbit.field_time(data.sigma0);
            let at_y = y.eval(&y_slow, t_y)?;
            let norm = at_y.iter().map(|c| c * c).sum::<f64>().sqrt();
            run.check("equilibrium", norm, 0.0);
            let worst_p = data.time_change_bounds.iter().copied().fold(0.0, f64::max);
            run.check("time_change_bound", worst_p, 1.0 + data.tau);
            let solver = Dopri5 { rtol: 1e-12, atol: 1e-12, ..run.man.solver };
            let tc = h.convergence_time;
            let mut dist = Vec::new();
            for (name, sign) in [("forward", 1.0), ("backward", -1.0)] {
                let start = fb.orbit.point(data.sigma0 - sign * data.tau);
                let traj = integrate_with(&y, &run.man, &start, (0.0, sign * tc), &solver)?;
                let d = run.man.distance(traj.end(), &y_slow);
                run.check(format!("{name}_convergence"), d, run.scenario.tolerances.convergence);
                let times: Vec<f64> = (0..=500).map(|k| sign * tc * k as f64 / 500.0).collect();
                let mut csv = Vec::new();
                traj.write_csv(&mut csv, &times)?;
                run.files.push((format!("homoclinic_{name}.csv"), String::from_utf8_lossy(&csv).into_owned()));
                dist.push(d);
            }
            run.stages.homoclinic = Some(HomoclinicSummary {
                y_slow: y_slow.clone(),
                sigma0: data.sigma0,
                tau: data.tau,
                speed_at_y: data.speed,
                threshold: data.threshold,
                time_change_bounds: data.time_change_bounds.clone(),
                field_at_y: at_y,
                forward_distance: dist[0],
                backward_distance: dist[1],
            });
            Ok(())
        })
    }
}

fn summarize(orbit: &ClosedOrbit) -> ClosingSummary {
    ClosingSummary {
        x0: orbit.x0.clone(),
        period: orbit.period,
        alpha: orbit.alpha,
        window: orbit.window,
        endpoint_mismatch: orbit.endpoint_mismatch.clone(),
        rc_min: orbit.rc_min,
        v_min: orbit.v_min,
        v_max: orbit.v_max,
    }
}

/// Index and distance of the entry closest to `target`.
fn nearest(v: &[f64], target: f64) -> (usize, f64) {
    v.iter()
        .enumerate()
        .map(|(i, m)| (i, (m - target).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, f64::INFINITY))
}

/// Samples points outside the tube (in a box around it, times in one period)
/// and counts those where `Y` differs from `X` in any bit.
pub fn outside_mismatches(x: &dyn VectorField, y: &PerturbedField, samples: usize, seed: u64) -> Result<usize> {
    let fb = &y.flowbox;
    let orbit = &fb.orbit;
    let pts: Vec<Vec<f64>> = orbit.table.t.iter().map(|&t| orbit.point(t)).collect();
    let region = Region::bounding(&pts, 3.0 * fb.epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut found, mut mismatches, mut tries) = (0, 0, 0usize);
    while found < samples {
        tries += 1;
        if tries > 1000 * samples.max(1) {
            return Err(Error::Domain("could not sample points outside the flow box".into()));
        }
        let p: Vec<f64> = region.lo.iter().zip(&region.hi).map(|(a, b)| rng.gen_range(*a..=*b)).collect();
        let p = orbit.manifold.wrap(&p);
        if !fb.project(&p).is_outside() {
            continue;
        }
        found += 1;
        let t = orbit.t_anchor + rng.gen_range(0.0..orbit.period);
        if y.eval(&p, t)? != x.eval(&p, t)? {
            mismatches += 1;
        }
    }
    Ok(mismatches)
}

fn digest(text: &str, o: &Overrides) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    h.update(format!("\nseed={:?} tol={:?} r={:?}", o.seed, o.tol, o.r).as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses, validates and runs scenario text.
pub fn run_text(text: &str, overrides: &Overrides) -> StageResult<(Scenario, RunOutput)> {
    let schema = |error| StageError { stage: "schema".into(), error };
    let mut scenario = Scenario::parse(text).map_err(schema)?;
    scenario.apply(overrides).map_err(schema)?;
    let out = run(&scenario, digest(text, overrides))?;
    Ok((scenario, out))
}

pub fn run_file(path: &Path, overrides: &Overrides) -> StageResult<(Scenario, RunOutput)> {
    let text = std::fs::read_to_string(path).map_err(|e| StageError { stage: "load".into(), error: e.into() })?;
    run_text(&text, overrides)
}

pub fn run(scenario: &Scenario, digest: String) -> StageResult<RunOutput> {
    let schema = |error| StageError { stage: "schema".into(), error };
    let man = scenario.manifold().map_err(schema)?;
    let field: Arc<dyn VectorField> = Arc::new(scenario.field().map_err(schema)?);
    let mut run = Run {
        scenario,
        field,
        man,
        stages: Stages::default(),
        assertions: Vec::new(),
        timings: Vec::new(),
        files: Vec::new(),
    };
    match scenario.pipeline {
        Pipeline::Close | Pipeline::Perturb | Pipeline::Verify | Pipeline::Homoclinic => {
            if let Some(fb) = run.close()? {
                match scenario.pipeline {
                    Pipeline::Perturb => {
                        run.perturb(&fb)?;
                    }
                    Pipeline::Verify => {
                        let fields = run.perturb(&fb)?;
                        run.verify(&fields)?;
                    }
                    Pipeline::Homoclinic => run.homoclinic(&fb)?,
                    _ => {}
                }
            }
        }
        Pipeline::Monodromy => {
            run.monodromy()?;
        }
        Pipeline::Adjust => {
            let (p, period, report) = run.monodromy()?;
            run.adjust(&p, period, &report)?;
        }
    }
    let pass = run.assertions.iter().all(|a| a.pass);
    let report = RunReport {
        scenario: scenario.name.clone(),
        digest,
        pipeline: scenario.pipeline,
        seed: scenario.seed,
        stages: run.stages,
        assertions: run.assertions,
        pass,
    };
    Ok(RunOutput { report, timings: run.timings, files: run.files })
}

/// Writes `report.json`, `timings.json` and the data files into `dir`.
pub fn write_output(dir: &Path, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), pretty(&out.report)?)?;
    std::fs::write(dir.join("timings.json"), pretty(&out.timings)?)?;
    if let Some(m) = &out.report.stages.monodromy {
        let mut buf = Vec::new();
        m.write_json(&mut buf)?;
        std::fs::write(dir.join("monodromy.json"), buf)?;
    }
    for (name, body) in &out.files {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}

pub fn pretty<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub file: String,
    pub scenario: Option<String>,
    pub digest: Option<String>,
    pub exit_code: i32,
    pub pass: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
    pub pass: bool,
}

impl SuiteReport {
    /// The most severe entry code.
    pub fn exit_code(&self) -> i32 {
        self.entries.iter().map(|e| e.exit_code).max().unwrap_or(0)
    }
}

/// Scenario files (`*.toml`) directly inside `dir`, sorted by name.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

/// Runs every scenario of `dir` in parallel, each into `out/<file stem>/`,
/// and writes `out/suite.json` in file-name order.
pub fn run_suite(dir: &Path, out: &Path, overrides: &Overrides) -> Result<SuiteReport> {
    let files = scenario_files(dir)?;
    let entries: Vec<SuiteEntry> = std::thread::scope(|s| {
        let handles: Vec<_> = files
            .iter()
            .map(|path| {
                s.spawn(move || {
                    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    let result = run_file(path, overrides);
                    let code = exit_code(result.as_ref().map(|(_, o)| &o.report));
                    match &result {
                        Ok((_, o)) => {
                            let written = write_output(&out.join(&stem), o);
                            SuiteEntry {
                                file: format!("{stem}.toml"),
                                scenario: Some(o.report.scenario.clone()),
                                digest: Some(o.report.digest.clone()),
                                exit_code: if written.is_ok() { code } else { 3 },
                                pass: o.report.pass && written.is_ok(),
                                error: written.err().map(|e| e.to_string()),
                            }
                        }
                        Err(e) => SuiteEntry {
                            file: format!("{stem}.toml"),
                            scenario: None,
                            digest: None,
                            exit_code: code,
                            pass: false,
                            error: Some(e.to_string()),
                        },
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("scenario thread panicked")).collect()
    });
    let report = SuiteReport { pass: entries.iter().all(|e| e.pass), entries };
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("suite.json"), pretty(&report)?)?;
    Ok(report)
}
