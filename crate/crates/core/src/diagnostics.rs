//! Verification studies on a finished run: approximate shape distance,
//! sample averages of `√dJ[V]`, the Lipschitz quotient series and the
//! second moment of the stochastic gradient.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elasticity::{self, ElasticityOperator};
use crate::error::{Error, Result};
use crate::fem::QuadSample;
use crate::field::VectorField;
use crate::mesh::geometry::{dist, Point};
use crate::mesh::{read_msh, Mesh};
use crate::optimizer::{checkpoint_stem, direction_with_sample, OptimizerConfig, Problem};
use crate::shape_calculus::{apply_restriction, evaluate_with_sample};
use crate::stochastic::{RngState, StreamPurpose};

/// `∫_a max_{y ∈ b} |x - y| ds`, midpoint rule on the segments of `a`
/// with the maximum taken over the vertices of `b`.
pub fn approx_distance(a: &[Vec<Point>], b: &[Vec<Point>]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "loop sets must be nonempty");
    let far = |x: Point| b.iter().flatten().map(|&y| dist(x, y)).fold(0.0, f64::max);
    a.iter()
        .flat_map(|pts| (0..pts.len()).map(move |k| (pts[k], pts[(k + 1) % pts.len()])))
        .map(|(p, q)| dist(p, q) * far([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SqrtMean {
    pub mean: f64,
    /// Standard error of the mean.
    pub stderr: f64,
    /// Samples with `dJ[V] < 0`, counted as zero.
    pub clamped: usize,
    pub samples: Vec<f64>,
}

/// `(1/m) Σ_j √dJ(mesh, ξ_j)[V]` with fresh scenarios from the tagged
/// streams `(purpose, n, j)`.  `V` stays fixed.
pub fn mean_sqrt_dj(
    mesh: &Mesh,
    problem: &Problem,
    cfg: &OptimizerConfig,
    v: &VectorField,
    m: usize,
    purpose: StreamPurpose,
    n: usize,
) -> Result<SqrtMean> {
    assert!(m >= 1);
    let sample = problem.target.sample(mesh)?;
    mean_sqrt_with_sample(mesh, &sample, problem, cfg, v, m, purpose, n)
}

#[allow(clippy::too_many_arguments)]
fn mean_sqrt_with_sample(
    mesh: &Mesh,
    sample: &QuadSample,
    problem: &Problem,
    cfg: &OptimizerConfig,
    v: &VectorField,
    m: usize,
    purpose: StreamPurpose,
    n: usize,
) -> Result<SqrtMean> {
    let dj = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut rng = RngState::tagged(cfg.seed, purpose, n as u64, j as u64).rng();
            let sc = problem.scenarios.draw_scenario(&mut rng)?;
            let e = evaluate_with_sample(mesh, &sc, sample, cfg.nu)?;
            Ok(apply_restriction(mesh, &e.derivative, cfg.restriction).apply(v))
        })
        .collect::<Result<Vec<f64>>>()?;
    let clamped = dj.iter().filter(|&&d| d < 0.0).count();
    if clamped == m {
        log::warn!("all {m} samples of dJ[V] are negative at n = {n}");
    } else if clamped > 0 {
        log::info!("{clamped} of {m} samples of dJ[V] clamped to zero at n = {n}");
    }
    let samples: Vec<f64> = dj.iter().map(|d| d.max(0.0).sqrt()).collect();
    let (mean, stderr) = mean_stderr(&samples);
    Ok(SqrtMean {
        mean,
        stderr,
        clamped,
        samples,
    })
}

fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Deformation field at `mesh` for the single scenario of stream
/// `(Recompute, n, 0)`.
pub fn recompute_direction(mesh: &Mesh, sample: &QuadSample, problem: &Problem, cfg: &OptimizerConfig, n: usize) -> Result<VectorField> {
    let mut rng = RngState::tagged(cfg.seed, StreamPurpose::Recompute, n as u64, 0).rng();
    let sc = problem.scenarios.draw_scenario(&mut rng)?;
    Ok(direction_with_sample(mesh, sample, cfg, &[sc])?.v)
}

/// Checkpoint meshes `(n, path)` of a run directory, sorted by `n`.
pub fn list_checkpoints(dir: impl AsRef<Path>) -> Result<Vec<(usize, PathBuf)>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|s| s.to_str()) else { continue };
        let Some(n) = name.strip_prefix("ckpt_").and_then(|s| s.strip_suffix(".msh")) else { continue };
        if let Ok(n) = n.parse::<usize>() {
            out.push((n, path));
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzStudyRow {
    pub n: usize,
    pub d_approx: f64,
    pub mean_sqrt_dj_n: f64,
    pub mean_sqrt_dj_1: f64,
    #[serde(rename = "L_n")]
    pub l_n: f64,
    pub clamped: usize,
}

/// Quotients `L_n` of every checkpoint `n > 1` against the initial
/// iterate `n = 1`.
pub fn lipschitz_study(
    checkpoints: &[(usize, Mesh)],
    problem: &Problem,
    cfg: &OptimizerConfig,
    m: usize,
) -> Result<Vec<LipschitzStudyRow>> {
    let Some((_, u1)) = checkpoints.iter().find(|(n, _)| *n == 1) else {
        return Err(Error::Config("no checkpoint of the initial iterate (n = 1)".into()));
    };
    let s1 = problem.target.sample(u1)?;
    let v1 = recompute_direction(u1, &s1, problem, cfg, 1)?;
    let base = mean_sqrt_with_sample(u1, &s1, problem, cfg, &v1, m, StreamPurpose::Lipschitz, 1)?;
    let loops1 = u1.loop_points();
    let mut rows = Vec::new();
    for (n, mesh) in checkpoints.iter().filter(|(n, _)| *n > 1) {
        let loops = mesh.loop_points();
        if loops == loops1 {
            log::warn!("checkpoint {n} coincides with the initial shape, skipped");
            continue;
        }
        let sample = problem.target.sample(mesh)?;
        let v = recompute_direction(mesh, &sample, problem, cfg, *n)?;
        let cur = mean_sqrt_with_sample(mesh, &sample, problem, cfg, &v, m, StreamPurpose::Lipschitz, *n)?;
        let d = approx_distance(&loops, &loops1);
        let row = LipschitzStudyRow {
            n: *n,
            d_approx: d,
            mean_sqrt_dj_n: cur.mean,
            mean_sqrt_dj_1: base.mean,
            l_n: (cur.mean + base.mean) / d,
            clamped: cur.clamped + base.clamped,
        };
        log::info!("n = {:4}  d = {:.4e}  L_n = {:.4e}", row.n, row.d_approx, row.l_n);
        rows.push(row);
    }
    Ok(rows)
}

/// Reads checkpoint meshes, warning about unreadable ones.
pub fn load_checkpoints(dir: impl AsRef<Path>, stride: usize) -> Result<Vec<(usize, Mesh)>> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for (n, path) in list_checkpoints(&dir)? {
        if n != 1 && n % stride != 0 {
            continue;
        }
        match read_msh(&path) {
            Ok(c) => out.push((n, c.mesh)),
            Err(e) => log::warn!("skipping checkpoint {}: {e}", path.display()),
        }
    }
    Ok(out)
}

pub fn checkpoint_path(dir: impl AsRef<Path>, n: usize) -> PathBuf {
    dir.as_ref().join(checkpoint_stem(n)).with_extension("msh")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondMomentRow {
    pub n: usize,
    /// Sample mean of `a(V, V)` over fresh scenarios.
    pub mean_sq: f64,
    pub stderr: f64,
}

/// `(1/m) Σ_j ‖V(mesh, ξ_j)‖²` in the elasticity metric, one full
/// deformation solve per sample.
pub fn second_moment(mesh: &Mesh, problem: &Problem, cfg: &OptimizerConfig, m: usize, n: usize) -> Result<SecondMomentRow> {
    assert!(m >= 1);
    let sample = problem.target.sample(mesh)?;
    let mu = elasticity::compute_mu(mesh, cfg.mu_min, cfg.mu_max)?;
    let op = ElasticityOperator::new(mesh, &mu);
    let sq = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut rng = RngState::tagged(cfg.seed, StreamPurpose::SecondMoment, n as u64, j as u64).rng();
            let sc = problem.scenarios.draw_scenario(&mut rng)?;
            let e = evaluate_with_sample(mesh, &sc, &sample, cfg.nu)?;
            let v = op.solve(&apply_restriction(mesh, &e.derivative, cfg.restriction))?;
            Ok(op.energy(&v))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean_sq, stderr) = mean_stderr(&sq);
    Ok(SecondMomentRow { n, mean_sq, stderr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{solve_state, ReferenceField};
    use crate::mesh::{generate_fitted_mesh, LoopShape, LoopSpec, MeshSpec, Outer};
    use crate::optimizer::StepSchedule;
    use crate::stochastic::{CoefficientSpec, GSpec, ScenarioSpec, TruncatedNormalSpec};
    use std::f64::consts::PI;

    fn circle(c: Point, r: f64, n: usize) -> Vec<Point> {
        (0..n)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / n as f64;
                [c[0] + r * a.cos(), c[1] + r * a.sin()]
            })
            .collect()
    }

    #[test]
    fn distance_of_circle_to_itself() {
        let r = 0.3;
        for n in [64, 256] {
            let c = vec![circle([0.0, 0.0], r, n)];
            let d = approx_distance(&c, &c);
            let exact = 2.0 * PI * r * 2.0 * r;
            assert!((d - exact).abs() < 4.0 * PI * r * r * (PI / n as f64).powi(2) * 4.0, "{n}: {d} vs {exact}");
        }
    }

    #[test]
    fn far_translate_dominated_by_offset() {
        let a = vec![circle([0.0, 0.0], 0.1, 64)];
        let b = vec![circle([1000.0, 0.0], 0.1, 64)];
        let per: f64 = (0..64).map(|k| dist(a[0][k], a[0][(k + 1) % 64])).sum();
        assert!((approx_distance(&a, &b) / (per * 1000.0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn orientation_of_b_is_irrelevant() {
        let a = vec![circle([0.0, 0.0], 0.2, 50)];
        let b = vec![circle([0.1, 0.05], 0.15, 37)];
        let mut rb = b.clone();
        rb[0].reverse();
        assert_eq!(approx_distance(&a, &b), approx_distance(&a, &rb));
    }

    fn setup(random: bool) -> (Mesh, Problem, OptimizerConfig) {
        let mk = |r: f64| {
            generate_fitted_mesh(&MeshSpec::new(
                Outer::Rectangle {
                    x0: -1.0,
                    x1: 0.0,
                    y0: -0.5,
                    y1: 0.5,
                },
                vec![LoopSpec {
                    region: "in".into(),
                    shape: LoopShape::circle([-0.5, 0.0], r, 40),
                }],
                0.08,
            ))
            .unwrap()
        };
        let truth = mk(0.22);
        let kin = if random {
            CoefficientSpec::TruncatedNormal(TruncatedNormalSpec {
                rho: 0.1,
                sigma: 0.03,
                a: 0.05,
                b: 0.15,
            })
        } else {
            CoefficientSpec::Deterministic(0.1)
        };
        let scenarios = ScenarioSpec {
            kappa: [("out".into(), CoefficientSpec::Deterministic(1.0)), ("in".into(), kin)].into_iter().collect(),
            g: GSpec::Constant(CoefficientSpec::Deterministic(1.0)),
        };
        let y = solve_state(&truth, &scenarios.mean_scenario()).unwrap().y;
        let problem = Problem {
            target: ReferenceField::new(truth, y),
            scenarios,
        };
        let cfg = OptimizerConfig::new(StepSchedule::Constant { t: 1.0 }, 0, 9);
        (mk(0.17), problem, cfg)
    }

    #[test]
    fn zero_field_gives_zero() {
        let (m, p, cfg) = setup(true);
        let r = mean_sqrt_dj(&m, &p, &cfg, &VectorField::zeros(m.num_nodes()), 5, StreamPurpose::Study, 0).unwrap();
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn deterministic_spec_gives_exact_root() {
        let (m, p, cfg) = setup(false);
        let sample = p.target.sample(&m).unwrap();
        let v = recompute_direction(&m, &sample, &p, &cfg, 1).unwrap();
        let avv = ElasticityOperator::new(&m, &elasticity::compute_mu(&m, 5.0, 17.0).unwrap()).energy(&v);
        for k in [1, 7] {
            let r = mean_sqrt_dj(&m, &p, &cfg, &v, k, StreamPurpose::Study, 0).unwrap();
            assert!((r.mean - avv.sqrt()).abs() < 1e-6 * avv.sqrt(), "{} vs {}", r.mean, avv.sqrt());
        }
    }

    #[test]
    fn study_is_reproducible() {
        let (m, p, cfg) = setup(true);
        let sample = p.target.sample(&m).unwrap();
        let v = recompute_direction(&m, &sample, &p, &cfg, 1).unwrap();
        let moved = m.apply_displacement(&v, -0.5 / v.max_norm().max(1e-300) * 0.01);
        let ck = vec![(1, m.clone()), (2, m.clone()), (3, moved)];
        let a = lipschitz_study(&ck, &p, &cfg, 6).unwrap();
        let b = lipschitz_study(&ck, &p, &cfg, 6).unwrap();
        assert_eq!(a, b);
        // n = 2 coincides with the initial shape
        assert_eq!(a.len(), 1);
        assert!(a[0].l_n.is_finite() && a[0].l_n >= 0.0 && a[0].d_approx > 0.0);
    }
}
