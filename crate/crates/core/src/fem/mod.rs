//! P1 finite elements for the two-material Neumann problem
//! `−∇·(κ∇y) = f` in `D`, `κ ∂y/∂n = g` on `∂D`, with zero mean.

pub mod assembly;
mod interp;
mod solve;

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::linalg::SparseOperator;
use crate::mesh::geometry::Point;
use crate::mesh::Mesh;

pub use interp::{evaluate_on_mesh, QuadSample, ReferenceField, CLAMP_TOL};
pub use solve::{ConstrainedSolution, NeumannSolver};

pub type SpatialFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

/// Neumann data `g`.
#[derive(Clone)]
pub enum BoundaryData {
    Constant(f64),
    /// Piecewise constant over equal angular sectors measured from the
    /// centre of the domain's bounding box, sector 0 starting at angle 0.
    Sectors(Vec<f64>),
    Function(SpatialFn),
}

impl std::fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryData::Constant(c) => write!(f, "Constant({c})"),
            BoundaryData::Sectors(v) => write!(f, "Sectors({v:?})"),
            BoundaryData::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl PartialEq for BoundaryData {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (BoundaryData::Constant(a), BoundaryData::Constant(b)) => a == b,
            (BoundaryData::Sectors(a), BoundaryData::Sectors(b)) => a == b,
            (BoundaryData::Function(a), BoundaryData::Function(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl BoundaryData {
    pub fn evaluator(&self, mesh: &Mesh) -> impl Fn(Point) -> f64 + '_ {
        let (lo, hi) = mesh.bounding_box();
        let c = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        move |p: Point| match self {
            BoundaryData::Constant(v) => *v,
            BoundaryData::Sectors(v) => {
                let th = (p[1] - c[1]).atan2(p[0] - c[0]).rem_euclid(std::f64::consts::TAU);
                let k = ((th / std::f64::consts::TAU * v.len() as f64) as usize).min(v.len() - 1);
                v[k]
            }
            BoundaryData::Function(f) => f(p),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            BoundaryData::Constant(v) => *v == 0.0,
            BoundaryData::Sectors(v) => v.iter().all(|x| *x == 0.0),
            BoundaryData::Function(_) => false,
        }
    }
}

/// One realization of the random inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub kappa: BTreeMap<String, f64>,
    pub g: BoundaryData,
    /// Optional volume source, used for manufactured solutions.
    pub source: Option<VolumeSource>,
}

#[derive(Clone)]
pub struct VolumeSource(pub SpatialFn);

impl std::fmt::Debug for VolumeSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("VolumeSource(..)")
    }
}

impl PartialEq for VolumeSource {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl Scenario {
    pub fn new(kappa: impl IntoIterator<Item = (String, f64)>, g: BoundaryData) -> Self {
        Scenario {
            kappa: kappa.into_iter().collect(),
            g,
            source: None,
        }
    }

    /// Same κ in every listed region.
    pub fn uniform(regions: &[&str], kappa: f64, g: BoundaryData) -> Self {
        Self::new(regions.iter().map(|r| (r.to_string(), kappa)), g)
    }

    pub fn with_source(mut self, f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        self.source = Some(VolumeSource(Arc::new(f)));
        self
    }

    /// κ on every triangle of `mesh`.
    pub fn kappa_per_triangle(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        let per_region = mesh
            .region_names()
            .iter()
            .map(|name| match self.kappa.get(name) {
                Some(&k) if k > 0.0 && k.is_finite() => Ok(k),
                Some(&k) => Err(Error::Config(format!("kappa for region '{name}' must be positive, got {k}"))),
                None => Err(Error::Config(format!("scenario has no kappa for region '{name}'"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(mesh.tri_region().iter().map(|&r| per_region[r]).collect())
    }
}

/// Stiffness matrix and load vector of the state equation.
pub fn assemble_state_system(mesh: &Mesh, scenario: &Scenario) -> Result<(SparseOperator, Vec<f64>)> {
    let kappa = scenario.kappa_per_triangle(mesh)?;
    let k = assembly::stiffness(mesh, &kappa);
    Ok((k, state_load(mesh, scenario)))
}

fn state_load(mesh: &Mesh, scenario: &Scenario) -> Vec<f64> {
    let mut b = if scenario.g.is_zero() {
        vec![0.0; mesh.num_nodes()]
    } else {
        assembly::boundary_load(mesh, scenario.g.evaluator(mesh))
    };
    if let Some(VolumeSource(f)) = &scenario.source {
        let vals: Vec<[f64; 3]> = (0..mesh.num_triangles())
            .map(|t| assembly::quad_points(mesh.triangle_points(t)).map(|p| f(p)))
            .collect();
        for (bi, si) in b.iter_mut().zip(assembly::quadrature_load(mesh, &vals)) {
            *bi += si;
        }
    }
    b
}

/// Zero-mean state `y` with the multiplier of its mean constraint.
#[derive(Debug, Clone)]
pub struct State {
    pub y: ScalarField,
    pub multiplier: f64,
}

/// Zero-mean adjoint `p` with the multiplier of its mean constraint.
#[derive(Debug, Clone)]
pub struct Adjoint {
    pub p: ScalarField,
    pub multiplier: f64,
}

/// Factored state operator for one mesh and one scenario; the state and
/// adjoint solves share it.
#[derive(Debug)]
pub struct StateProblem {
    pub kappa: Vec<f64>,
    solver: NeumannSolver,
    load: Vec<f64>,
}

impl StateProblem {
    pub fn new(mesh: &Mesh, scenario: &Scenario) -> Result<Self> {
        let kappa = scenario.kappa_per_triangle(mesh)?;
        let k = assembly::stiffness(mesh, &kappa);
        let solver = NeumannSolver::new(k, assembly::node_weights(mesh))?;
        Ok(StateProblem {
            kappa,
            solver,
            load: state_load(mesh, scenario),
        })
    }

    pub fn operator(&self) -> &SparseOperator {
        self.solver.operator()
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    pub fn solve_state(&self) -> Result<State> {
        let s = self.solver.solve(&self.load)?;
        Ok(State {
            y: ScalarField(s.x),
            multiplier: s.multiplier,
        })
    }

    /// Adjoint for the misfit `e = y − ȳ` given at quadrature nodes:
    /// `K p + η m = −∫ e φ`, `mᵀp = 0`.
    pub fn solve_adjoint(&self, mesh: &Mesh, misfit: &[[f64; 3]]) -> Result<Adjoint> {
        let mut rhs = assembly::quadrature_load(mesh, misfit);
        rhs.iter_mut().for_each(|v| *v = -*v);
        let s = self.solver.solve(&rhs)?;
        Ok(Adjoint {
            p: ScalarField(s.x),
            multiplier: s.multiplier,
        })
    }
}

/// State solve; logs `‖y‖_{H¹} / ‖g‖_{L²(∂D)}` at debug level.
pub fn solve_state(mesh: &Mesh, scenario: &Scenario) -> Result<State> {
    let st = StateProblem::new(mesh, scenario)?.solve_state()?;
    if log::log_enabled!(log::Level::Debug) {
        let g = scenario.g.evaluator(mesh);
        let gl2: f64 = mesh
            .boundary_edges()
            .iter()
            .map(|e| {
                let (a, b) = (mesh.nodes()[e[0]], mesh.nodes()[e[1]]);
                let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                g(mid).powi(2) * crate::mesh::geometry::dist(a, b)
            })
            .sum::<f64>()
            .sqrt();
        log::debug!(
            "state: |y|_H1 = {:.4e}, |g|_L2 = {:.4e}",
            assembly::h1_norm(mesh, st.y.values()),
            gl2
        );
    }
    Ok(st)
}

/// Adjoint for a nodal target `ȳ` on the same mesh.
pub fn solve_adjoint(mesh: &Mesh, scenario: &Scenario, y: &ScalarField, ybar: &ScalarField) -> Result<Adjoint> {
    let misfit = assembly::at_quadrature(mesh, y.sub(ybar).values());
    StateProblem::new(mesh, scenario)?.solve_adjoint(mesh, &misfit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::mesh::{generate_fitted_mesh, LoopShape, LoopSpec, MeshSpec, Outer};

    fn mesh(h: f64) -> Mesh {
        generate_fitted_mesh(&MeshSpec::new(
            Outer::Rectangle {
                x0: -1.0,
                x1: 0.0,
                y0: -0.5,
                y1: 0.5,
            },
            vec![LoopSpec {
                region: "in".into(),
                shape: LoopShape::circle([-0.5, 0.0], 0.2, 32),
            }],
            h,
        ))
        .unwrap()
    }

    fn scenario(kin: f64, g: f64) -> Scenario {
        Scenario::new([("out".to_string(), 1.0), ("in".to_string(), kin)], BoundaryData::Constant(g))
    }

    #[test]
    fn load_sums_to_perimeter_times_g() {
        let m = mesh(0.1);
        let (k, b) = assemble_state_system(&m, &scenario(0.005, 10.0)).unwrap();
        assert!((b.iter().sum::<f64>() - 40.0).abs() < 1e-10);
        assert!(k.is_symmetric(1e-12));
        assert!(k.row_sums().iter().all(|r| r.abs() < 1e-10));
    }

    #[test]
    fn missing_region_is_a_config_error() {
        let m = mesh(0.1);
        let s = Scenario::uniform(&["out"], 1.0, BoundaryData::Constant(1.0));
        assert!(matches!(solve_state(&m, &s), Err(Error::Config(_))));
    }

    #[test]
    fn zero_data_gives_zero_state() {
        let m = mesh(0.1);
        let st = solve_state(&m, &scenario(0.005, 0.0)).unwrap();
        assert!(st.y.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn solution_is_zero_mean_and_galerkin_orthogonal() {
        let m = mesh(0.08);
        let prob = StateProblem::new(&m, &scenario(0.005, 10.0)).unwrap();
        let st = prob.solve_state().unwrap();
        let w = assembly::node_weights(&m);
        let y = st.y.values();
        assert!(linalg::dot(&w, y).abs() <= 1e-10 * linalg::norm2(y));
        let by = linalg::dot(prob.load(), y);
        let yky = prob.operator().form(y, y);
        assert!((by - yky).abs() <= 1e-9 * yky.abs());
        assert!((st.multiplier - 40.0 / m.total_area()).abs() < 1e-10);
    }

    #[test]
    fn uniform_kappa_scales_solution() {
        let m = mesh(0.1);
        let s1 = Scenario::uniform(&["out", "in"], 1.0, BoundaryData::Constant(10.0));
        let s3 = Scenario::uniform(&["out", "in"], 3.0, BoundaryData::Constant(10.0));
        let y1 = solve_state(&m, &s1).unwrap().y;
        let y3 = solve_state(&m, &s3).unwrap().y;
        for (a, b) in y1.values().iter().zip(y3.values()) {
            assert!((a / 3.0 - b).abs() < 1e-11 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn adjoint_vanishes_at_target_and_is_linear() {
        let m = mesh(0.1);
        let sc = scenario(0.005, 10.0);
        let y = solve_state(&m, &sc).unwrap().y;
        let p0 = solve_adjoint(&m, &sc, &y, &y).unwrap();
        assert!(p0.p.values().iter().all(|&v| v == 0.0));
        let bump = ScalarField::from_fn(m.nodes(), |p| p[0] * p[1]);
        let ybar_plus = y.sub(&bump);
        let ybar_minus = ScalarField(y.values().iter().zip(bump.values()).map(|(a, b)| a + b).collect());
        let pp = solve_adjoint(&m, &sc, &y, &ybar_plus).unwrap().p;
        let pm = solve_adjoint(&m, &sc, &y, &ybar_minus).unwrap().p;
        for (a, b) in pp.values().iter().zip(pm.values()) {
            assert!((a + b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn sector_data_are_piecewise_constant() {
        let m = mesh(0.1);
        let g = BoundaryData::Sectors(vec![1.0, 2.0, 3.0, 4.0]);
        let ev = g.evaluator(&m);
        assert_eq!(ev([0.0, 0.1]), 1.0);
        assert_eq!(ev([-0.6, 0.5]), 2.0);
        assert_eq!(ev([-1.0, -0.1]), 3.0);
        assert_eq!(ev([-0.4, -0.5]), 4.0);
    }
}
