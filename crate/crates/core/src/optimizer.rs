//! Stochastic gradient method on the shape manifold.
//!
//! Iteration `n` draws one scenario from stream `n`, computes the
//! elasticity representative `V_n` of the (restricted) shape derivative and
//! moves every node by `-t_n V_n`.  Invalid candidates are retried with
//! half the step.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elasticity::{self, ElasticityOperator, MuField};
use crate::error::{Error, Result};
use crate::fem::{QuadSample, ReferenceField, Scenario};
use crate::field::VectorField;
use crate::mesh::{mesh_quality, write_msh, write_vtk, Mesh, VtkField};
use crate::shape_calculus::{apply_restriction, evaluate_with_sample, Restriction, ShapeDerivative};
use crate::stochastic::{RngState, ScenarioSpec};

/// Step sizes `t_n`, `n ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// `t_0 / n`.
    RobbinsMonro { t0: f64 },
    Constant { t: f64 },
    /// `t_0 / n^α` with `α ∈ (1/2, 1]`.
    Power { t0: f64, alpha: f64 },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::RobbinsMonro { t0 } => t0 >= 0.0 && t0.is_finite(),
            StepSchedule::Constant { t } => t >= 0.0 && t.is_finite(),
            StepSchedule::Power { t0, alpha } => t0 >= 0.0 && t0.is_finite() && alpha > 0.5 && alpha <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid step schedule {self:?}")))
        }
    }

    pub fn step(&self, n: usize) -> f64 {
        assert!(n >= 1, "iterations are counted from 1");
        let n = n as f64;
        match *self {
            StepSchedule::RobbinsMonro { t0 } => t0 / n,
            StepSchedule::Constant { t } => t,
            StepSchedule::Power { t0, alpha } => t0 / n.powf(alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub schedule: StepSchedule,
    pub iterations: usize,
    pub seed: u64,
    #[serde(default)]
    pub nu: f64,
    #[serde(default = "default_mu_min")]
    pub mu_min: f64,
    #[serde(default = "default_mu_max")]
    pub mu_max: f64,
    #[serde(default)]
    pub restriction: Restriction,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_step_floor")]
    pub step_floor: f64,
    /// Smallest acceptable triangle angle in degrees.
    #[serde(default = "default_min_angle")]
    pub min_angle_deg: f64,
    /// Scenarios averaged per iteration.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_stride")]
    pub checkpoint_every: usize,
}

fn default_mu_min() -> f64 {
    5.0
}
fn default_mu_max() -> f64 {
    17.0
}
fn default_retries() -> usize {
    10
}
fn default_step_floor() -> f64 {
    1e-12
}
fn default_min_angle() -> f64 {
    1.0
}
fn default_batch() -> usize {
    1
}
fn default_stride() -> usize {
    50
}

impl OptimizerConfig {
    pub fn new(schedule: StepSchedule, iterations: usize, seed: u64) -> Self {
        OptimizerConfig {
            schedule,
            iterations,
            seed,
            nu: 0.0,
            mu_min: default_mu_min(),
            mu_max: default_mu_max(),
            restriction: Restriction::default(),
            max_retries: default_retries(),
            step_floor: default_step_floor(),
            min_angle_deg: default_min_angle(),
            batch_size: default_batch(),
            checkpoint_every: default_stride(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return bad("nu must be finite and nonnegative");
        }
        if !(self.mu_min > 0.0 && self.mu_min <= self.mu_max && self.mu_max.is_finite()) {
            return bad("need 0 < mu_min <= mu_max");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be at least 1");
        }
        if !(self.step_floor >= 0.0) || !(0.0..60.0).contains(&self.min_angle_deg) {
            return bad("step_floor must be >= 0 and min_angle_deg in [0, 60)");
        }
        Ok(())
    }
}

/// The fixed data of an identification problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub target: ReferenceField,
    pub scenarios: ScenarioSpec,
}

/// One accepted iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub n: usize,
    pub t_used: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "Jobj")]
    pub jobj: f64,
    #[serde(rename = "Jreg")]
    pub jreg: f64,
    #[serde(rename = "V_h1")]
    pub v_h1: f64,
    #[serde(rename = "V_gnorm")]
    pub v_gnorm: f64,
    /// Degrees, of the accepted mesh.
    pub min_angle: f64,
    pub retries: usize,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    /// Accepted iterations so far; the next one is `n + 1`.
    pub n: usize,
    pub mesh: Mesh,
    pub seed: u64,
    pub log: Vec<LogRow>,
}

impl OptimizerState {
    pub fn new(mesh: Mesh, seed: u64) -> Self {
        OptimizerState {
            n: 0,
            mesh,
            seed,
            log: Vec::new(),
        }
    }

    /// Generator state the next iteration will use.
    pub fn rng_state(&self) -> RngState {
        RngState::iteration(self.seed, (self.n + 1) as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIters,
    StepFloor,
    MeshFailure,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub mesh: Mesh,
    pub log: Vec<LogRow>,
    pub wall_time: Duration,
    /// Per accepted iteration, milliseconds.
    pub iteration_ms: Vec<f64>,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Accepted(LogRow),
    Terminated(Termination),
}

/// Gradient information of one iteration before the mesh update.
#[derive(Debug, Clone)]
pub struct Direction {
    pub j: f64,
    pub jobj: f64,
    pub jreg: f64,
    pub derivative: ShapeDerivative,
    pub mu: MuField,
    pub v: VectorField,
}

/// Scenario-averaged derivative and its deformation field at `mesh`.
pub fn descent_direction(mesh: &Mesh, problem: &Problem, cfg: &OptimizerConfig, scenarios: &[Scenario]) -> Result<Direction> {
    let sample = problem.target.sample(mesh)?;
    direction_with_sample(mesh, &sample, cfg, scenarios)
}

pub(crate) fn direction_with_sample(
    mesh: &Mesh,
    sample: &QuadSample,
    cfg: &OptimizerConfig,
    scenarios: &[Scenario],
) -> Result<Direction> {
    assert!(!scenarios.is_empty());
    let evals = scenarios
        .par_iter()
        .map(|sc| evaluate_with_sample(mesh, sc, sample, cfg.nu))
        .collect::<Result<Vec<_>>>()?;
    let w = 1.0 / evals.len() as f64;
    let mut derivative = ShapeDerivative::zeros(mesh.num_nodes());
    let (mut j, mut jobj) = (0.0, 0.0);
    for e in &evals {
        derivative.add_scaled(&e.derivative, w);
        j += w * e.objective.j;
        jobj += w * e.objective.jobj;
    }
    let jreg = evals[0].objective.jreg;
    let derivative = apply_restriction(mesh, &derivative, cfg.restriction);
    let mu = elasticity::compute_mu(mesh, cfg.mu_min, cfg.mu_max)?;
    let v = ElasticityOperator::new(mesh, &mu).solve(&derivative)?;
    Ok(Direction {
        j,
        jobj,
        jreg,
        derivative,
        mu,
        v,
    })
}

/// Whether an updated mesh may be accepted.
pub fn acceptable(mesh: &Mesh, min_angle_deg: f64) -> bool {
    mesh_quality(mesh).is_valid_with(min_angle_deg.to_radians()) && mesh.loops_are_simple()
}

/// One iteration of the method.
pub fn sgd_step(state: &mut OptimizerState, problem: &Problem, cfg: &OptimizerConfig) -> Result<StepOutcome> {
    let n = state.n + 1;
    let t_nominal = cfg.schedule.step(n);
    if t_nominal < cfg.step_floor {
        return Ok(StepOutcome::Terminated(Termination::StepFloor));
    }
    let mut rng = state.rng_state().rng();
    let scenarios = (0..cfg.batch_size)
        .map(|_| problem.scenarios.draw_scenario(&mut rng))
        .collect::<Result<Vec<_>>>()?;
    let dir = descent_direction(&state.mesh, problem, cfg, &scenarios)?;
    let norms = elasticity::g_norm(&state.mesh, &dir.mu, &dir.v);

    let mut t = t_nominal;
    for retries in 0..=cfg.max_retries {
        if t < cfg.step_floor {
            return Ok(StepOutcome::Terminated(Termination::StepFloor));
        }
        let candidate = state.mesh.apply_displacement(&dir.v, -t);
        if acceptable(&candidate, cfg.min_angle_deg) {
            if retries > 0 {
                log::info!("iteration {n}: accepted after {retries} step halvings (t = {t:e})");
            }
            let row = LogRow {
                n,
                t_used: t,
                j: dir.j,
                jobj: dir.jobj,
                jreg: dir.jreg,
                v_h1: norms.h1,
                v_gnorm: norms.energy,
                min_angle: mesh_quality(&candidate).min_angle.to_degrees(),
                retries,
            };
            state.mesh = candidate;
            state.n = n;
            state.log.push(row);
            return Ok(StepOutcome::Accepted(row));
        }
        log::debug!("iteration {n}: candidate with t = {t:e} rejected");
        t *= 0.5;
    }
    log::warn!("iteration {n}: no valid mesh after {} halvings", cfg.max_retries);
    Ok(StepOutcome::Terminated(Termination::MeshFailure))
}

/// Checkpoint metadata written next to each checkpoint mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    /// The stored mesh is the iterate `u_n`; iteration `n` starts from it.
    pub iteration: usize,
    pub seed: u64,
    /// Stream index iteration `n` draws from.
    pub stream: u64,
}

pub fn checkpoint_stem(n: usize) -> String {
    format!("ckpt_{n:05}")
}

/// Output directory of a run.
pub struct RunWriter {
    dir: PathBuf,
    log: csv::Writer<BufWriter<File>>,
    timing: csv::Writer<BufWriter<File>>,
}

impl RunWriter {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let open = |name: &str| -> Result<csv::Writer<BufWriter<File>>> {
            let p = dir.join(name);
            let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
            Ok(csv::Writer::from_writer(BufWriter::new(f)))
        };
        let log = open("log.csv")?;
        let mut timing = open("timing.csv")?;
        timing
            .write_record(["n", "wall_ms"])
            .map_err(|e| csv_error(&dir.join("timing.csv"), e))?;
        Ok(RunWriter { dir, log, timing })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn row(&mut self, row: &LogRow, wall_ms: f64) -> Result<()> {
        self.log.serialize(row).map_err(|e| csv_error(&self.dir.join("log.csv"), e))?;
        self.log.flush().map_err(|e| Error::io(self.dir.join("log.csv"), e))?;
        self.timing
            .write_record([row.n.to_string(), format!("{wall_ms:.3}")])
            .map_err(|e| csv_error(&self.dir.join("timing.csv"), e))?;
        self.timing.flush().map_err(|e| Error::io(self.dir.join("timing.csv"), e))
    }

    pub fn checkpoint(&self, iteration: usize, seed: u64, mesh: &Mesh) -> Result<()> {
        let stem = self.dir.join(checkpoint_stem(iteration));
        write_msh(stem.with_extension("msh"), mesh, &[])?;
        write_vtk(stem.with_extension("vtk"), mesh, &[] as &[VtkField<'_>])?;
        let info = CheckpointInfo {
            iteration,
            seed,
            stream: iteration as u64,
        };
        let p = stem.with_extension("json");
        let text = serde_json::to_string_pretty(&info).map_err(|e| Error::Numerical(e.to_string()))?;
        std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Runs `cfg.iterations` steps from `mesh`, optionally writing logs and
/// checkpoints.  Checkpoint `n` holds the iterate `u_n`, with `u_1` the
/// initial mesh.
pub fn run(mesh: Mesh, problem: &Problem, cfg: &OptimizerConfig, mut out: Option<&mut RunWriter>) -> Result<RunReport> {
    cfg.validate()?;
    problem.scenarios.validate()?;
    problem.scenarios.check_regions(&mesh)?;
    let start = Instant::now();
    let mut state = OptimizerState::new(mesh, cfg.seed);
    let mut iteration_ms = Vec::new();
    if let Some(w) = out.as_deref_mut() {
        w.checkpoint(1, cfg.seed, &state.mesh)?;
    }
    let mut termination = Termination::MaxIters;
    while state.n < cfg.iterations {
        let t0 = Instant::now();
        match sgd_step(&mut state, problem, cfg)? {
            StepOutcome::Accepted(row) => {
                let ms = t0.elapsed().as_secs_f64() * 1e3;
                iteration_ms.push(ms);
                log::info!(
                    "n = {:4}  t = {:.3e}  J = {:.6e}  |V|_H1 = {:.3e}  min angle = {:.2}",
                    row.n,
                    row.t_used,
                    row.j,
                    row.v_h1,
                    row.min_angle
                );
                if let Some(w) = out.as_deref_mut() {
                    w.row(&row, ms)?;
                    let next = state.n + 1;
                    if next.is_multiple_of(cfg.checkpoint_every) || state.n == cfg.iterations {
                        w.checkpoint(next, cfg.seed, &state.mesh)?;
                    }
                }
            }
            StepOutcome::Terminated(reason) => {
                termination = reason;
                if let Some(w) = out.as_deref_mut() {
                    w.checkpoint(state.n + 1, cfg.seed, &state.mesh)?;
                }
                break;
            }
        }
    }
    Ok(RunReport {
        mesh: state.mesh,
        log: state.log,
        wall_time: start.elapsed(),
        iteration_ms,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{solve_state, BoundaryData};
    use crate::mesh::{generate_fitted_mesh, LoopShape, LoopSpec, MeshSpec, Outer};
    use crate::stochastic::{CoefficientSpec, GSpec, TruncatedNormalSpec};

    fn disk(r: f64, h: f64) -> Mesh {
        generate_fitted_mesh(&MeshSpec::new(
            Outer::Rectangle {
                x0: -1.0,
                x1: 0.0,
                y0: -0.5,
                y1: 0.5,
            },
            vec![LoopSpec {
                region: "in".into(),
                shape: LoopShape::circle([-0.5, 0.0], r, 48),
            }],
            h,
        ))
        .unwrap()
    }

    fn problem(truth: &Mesh, random: bool) -> Problem {
        let kin = if random {
            CoefficientSpec::TruncatedNormal(TruncatedNormalSpec {
                rho: 0.2,
                sigma: 0.02,
                a: 0.15,
                b: 0.25,
            })
        } else {
            CoefficientSpec::Deterministic(0.2)
        };
        let scenarios = ScenarioSpec {
            kappa: [("out".to_string(), CoefficientSpec::Deterministic(1.0)), ("in".to_string(), kin)]
                .into_iter()
                .collect(),
            g: GSpec::Constant(CoefficientSpec::Deterministic(1.0)),
        };
        let y = solve_state(truth, &scenarios.mean_scenario()).unwrap().y;
        Problem {
            target: ReferenceField::new(truth.clone(), y),
            scenarios,
        }
    }

    #[test]
    fn robbins_monro_sums() {
        let s = StepSchedule::RobbinsMonro { t0: 0.016 };
        assert_eq!(s.step(1), 0.016);
        assert_eq!(s.step(4), 0.004);
        let partial = |n: usize| (1..=n).map(|k| s.step(k)).sum::<f64>();
        // harmonic growth
        let ratio = (partial(100_000) - partial(1000)) / (0.016 * 100f64.ln());
        assert!((ratio - 1.0).abs() < 1e-3);
        let sq_tail: f64 = (1001..=100_000).map(|k| s.step(k).powi(2)).sum();
        assert!(sq_tail < 0.016f64.powi(2) / 1000.0);
        assert!(StepSchedule::Power { t0: 1.0, alpha: 0.5 }.validate().is_err());
        assert!(StepSchedule::Power { t0: 1.0, alpha: 0.75 }.validate().is_ok());
    }

    #[test]
    fn exact_shape_gives_zero_step() {
        let m = disk(0.2, 0.08);
        let p = problem(&m, false);
        let mut cfg = OptimizerConfig::new(StepSchedule::Constant { t: 1.0 }, 1, 0);
        cfg.restriction = Restriction::None;
        let mut st = OptimizerState::new(m.clone(), 0);
        let StepOutcome::Accepted(row) = sgd_step(&mut st, &p, &cfg).unwrap() else {
            panic!("step rejected")
        };
        assert!(row.j < 1e-20 && row.v_h1 < 1e-8, "{row:?}");
        let moved = st.mesh.nodes().iter().zip(m.nodes()).map(|(a, b)| crate::mesh::geometry::dist(*a, *b)).fold(0.0, f64::max);
        assert!(moved < 1e-8);
    }

    #[test]
    fn first_step_moves_within_bound_and_keeps_boundary() {
        let truth = disk(0.22, 0.06);
        let m = disk(0.17, 0.06);
        let p = problem(&truth, true);
        let cfg = OptimizerConfig::new(StepSchedule::RobbinsMonro { t0: 0.5 }, 1, 3);
        let mut st = OptimizerState::new(m.clone(), 3);
        let mut rng = st.rng_state().rng();
        let sc = p.scenarios.draw_scenario(&mut rng).unwrap();
        let dir = descent_direction(&m, &p, &cfg, &[sc]).unwrap();
        // descent identity dJ[-V] = -a(V,V)
        let avv = ElasticityOperator::new(&m, &dir.mu).energy(&dir.v);
        assert!((dir.derivative.apply(&dir.v) - avv).abs() <= 1e-6 * avv.abs(), "{avv}");
        let vmax = dir.v.max_norm();
        let StepOutcome::Accepted(row) = sgd_step(&mut st, &p, &cfg).unwrap() else {
            panic!("step rejected")
        };
        for (i, (a, b)) in st.mesh.nodes().iter().zip(m.nodes()).enumerate() {
            let d = crate::mesh::geometry::dist(*a, *b);
            assert!(d <= row.t_used * vmax * (1.0 + 1e-12));
            if m.is_boundary_node(i) {
                assert_eq!(a, b);
            }
        }
        assert!(st.mesh.nodes() != m.nodes());
    }

    #[test]
    fn tiny_schedule_hits_step_floor() {
        let m = disk(0.2, 0.1);
        let p = problem(&m, false);
        let cfg = OptimizerConfig::new(StepSchedule::Constant { t: 1e-13 }, 5, 0);
        let r = run(m, &p, &cfg, None).unwrap();
        assert_eq!(r.termination, Termination::StepFloor);
        assert!(r.log.is_empty());
    }

    #[test]
    fn zero_iterations() {
        let m = disk(0.2, 0.1);
        let p = problem(&m, false);
        let cfg = OptimizerConfig::new(StepSchedule::Constant { t: 1.0 }, 0, 0);
        let r = run(m.clone(), &p, &cfg, None).unwrap();
        assert!(r.log.is_empty() && r.mesh == m && r.termination == Termination::MaxIters);
    }

    #[test]
    fn huge_step_is_halved() {
        let truth = disk(0.24, 0.07);
        let m = disk(0.15, 0.07);
        let p = problem(&truth, false);
        let mut cfg = OptimizerConfig::new(StepSchedule::Constant { t: 1e6 }, 1, 0);
        cfg.max_retries = 60;
        let mut st = OptimizerState::new(m, 0);
        let StepOutcome::Accepted(row) = sgd_step(&mut st, &p, &cfg).unwrap() else {
            panic!("no acceptable step")
        };
        assert!(row.retries > 0 && row.t_used < 1e6);
        assert!(acceptable(&st.mesh, 1.0));
    }

    #[test]
    fn deterministic_problem_decreases_objective() {
        let truth = disk(0.22, 0.06);
        let m = disk(0.16, 0.06);
        let p = problem(&truth, false);
        let mut cfg = OptimizerConfig::new(StepSchedule::Constant { t: 200.0 }, 15, 0);
        cfg.nu = 0.0;
        let r = run(m, &p, &cfg, None).unwrap();
        assert_eq!(r.log.len(), 15);
        assert!(r.log[14].j < 0.5 * r.log[0].j, "{:?}", r.log.iter().map(|r| r.j).collect::<Vec<_>>());
    }

    #[test]
    fn sectors_scenario_runs() {
        let m = disk(0.2, 0.1);
        let mut p = problem(&m, false);
        p.scenarios.g = GSpec::Sectors {
            sectors: vec![CoefficientSpec::Deterministic(1.0), CoefficientSpec::Deterministic(-1.0)],
        };
        let sc = p.scenarios.mean_scenario();
        assert!(matches!(sc.g, BoundaryData::Sectors(_)));
        let cfg = OptimizerConfig::new(StepSchedule::Constant { t: 0.1 }, 2, 0);
        assert_eq!(run(m, &p, &cfg, None).unwrap().log.len(), 2);
    }
}
