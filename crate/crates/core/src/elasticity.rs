//! Gradient extension by linear elasticity with `λ = 0`:
//! find `V ∈ H¹₀` with `∫ 2μ ε(V):ε(W) = dJ[W]` for all `W`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::assembly;
use crate::field::{ScalarField, VectorField};
use crate::linalg::{self, SparseOperator};
use crate::mesh::Mesh;
use crate::shape_calculus::ShapeDerivative;

const CG_TOL: f64 = 1e-9;
const MU_EPS: f64 = 1e-10;
const MU_OVERSHOOT: f64 = 0.05;

/// Nodal Lamé parameter μ with its bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct MuField {
    pub values: ScalarField,
    pub mu_min: f64,
    pub mu_max: f64,
}

impl MuField {
    pub fn constant(n: usize, mu: f64) -> Self {
        MuField {
            values: ScalarField(vec![mu; n]),
            mu_min: mu,
            mu_max: mu,
        }
    }

    /// Mean of the vertex values on each triangle.
    pub fn per_triangle(&self, mesh: &Mesh) -> Vec<f64> {
        let v = self.values.values();
        mesh.triangles().iter().map(|t| (v[t[0]] + v[t[1]] + v[t[2]]) / 3.0).collect()
    }
}

/// Harmonic μ: `μ_max` on interface nodes, `μ_min` on the outer boundary.
pub fn compute_mu(mesh: &Mesh, mu_min: f64, mu_max: f64) -> Result<MuField> {
    if !(mu_min > 0.0 && mu_min <= mu_max && mu_max.is_finite()) {
        return Err(Error::Config(format!("need 0 < mu_min <= mu_max, got {mu_min}, {mu_max}")));
    }
    let n = mesh.num_nodes();
    let mut fixed = vec![false; n];
    let mut val = vec![0.0; n];
    for i in 0..n {
        if mesh.is_boundary_node(i) {
            fixed[i] = true;
            val[i] = mu_min;
        } else if mesh.is_interface_node(i) {
            fixed[i] = true;
            val[i] = mu_max;
        }
    }
    if mu_min == mu_max || fixed.iter().all(|&f| f) {
        let values = (0..n).map(|i| if fixed[i] { val[i] } else { mu_min }).collect();
        return Ok(MuField {
            values: ScalarField(values),
            mu_min,
            mu_max,
        });
    }
    let k = assembly::stiffness(mesh, &vec![1.0; mesh.num_triangles()]);
    let kv = k.apply(&val);
    let b: Vec<f64> = (0..n).map(|i| if fixed[i] { 0.0 } else { -kv[i] }).collect();
    let kr = k.eliminate(&fixed);
    let sol = linalg::cg(|x, y| kr.apply_into(x, y), &kr.diag(), &b, 1e-13, 10 * n)?;
    let mut values: Vec<f64> = (0..n).map(|i| if fixed[i] { val[i] } else { sol.x[i] }).collect();
    // Obtuse triangles break the discrete maximum principle slightly; clamp
    // small overshoots, refuse large ones.
    let eps = MU_EPS * mu_max;
    let gross = MU_OVERSHOOT * (mu_max - mu_min);
    let mut clamped = 0;
    for (i, v) in values.iter_mut().enumerate() {
        let over = (mu_min - *v).max(*v - mu_max);
        if over > gross {
            return Err(Error::Numerical(format!(
                "mu violates the maximum principle at node {i}: {v} outside [{mu_min}, {mu_max}]"
            )));
        }
        if over > eps {
            clamped += 1;
        }
        *v = v.clamp(mu_min, mu_max);
    }
    if clamped > 0 {
        log::debug!("mu: clamped {clamped} nodal values into [{mu_min}, {mu_max}]");
    }
    Ok(MuField {
        values: ScalarField(values),
        mu_min,
        mu_max,
    })
}

/// Full (unconstrained) operator `a(V, W) = ∫ 2μ ε(V):ε(W)` on the
/// interleaved vector P1 space.
pub fn assemble_elasticity(mesh: &Mesh, mu: &MuField) -> SparseOperator {
    let mu_t = mu.per_triangle(mesh);
    let nt = mesh.num_triangles();
    let (mut r, mut c, mut v) = (Vec::with_capacity(36 * nt), Vec::with_capacity(36 * nt), Vec::with_capacity(36 * nt));
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let el = assembly::p1_element(mesh.triangle_points(t));
        // rows of B: ε_xx, ε_yy, γ_xy
        let mut b = [[0.0; 6]; 3];
        for k in 0..3 {
            let [gx, gy] = el.grads[k];
            b[0][2 * k] = gx;
            b[1][2 * k + 1] = gy;
            b[2][2 * k] = gy;
            b[2][2 * k + 1] = gx;
        }
        let d = [2.0 * mu_t[t], 2.0 * mu_t[t], mu_t[t]];
        for i in 0..6 {
            for j in 0..6 {
                let kij: f64 = (0..3).map(|s| b[s][i] * d[s] * b[s][j]).sum::<f64>() * el.area;
                r.push(2 * tri[i / 2] + i % 2);
                c.push(2 * tri[j / 2] + j % 2);
                v.push(kij);
            }
        }
    }
    SparseOperator::from_triplets(2 * mesh.num_nodes(), r, c, v)
}

fn boundary_dofs(mesh: &Mesh) -> Vec<bool> {
    mesh.boundary_mask().iter().flat_map(|&b| [b, b]).collect()
}

/// Elasticity operator of one mesh, with boundary DOFs eliminated.
#[derive(Debug, Clone)]
pub struct ElasticityOperator {
    pub full: SparseOperator,
    pub reduced: SparseOperator,
    diag: Vec<f64>,
    fixed: Vec<bool>,
}

impl ElasticityOperator {
    pub fn new(mesh: &Mesh, mu: &MuField) -> Self {
        let full = assemble_elasticity(mesh, mu);
        let fixed = boundary_dofs(mesh);
        let reduced = full.eliminate(&fixed);
        let diag = reduced.diag();
        ElasticityOperator {
            full,
            reduced,
            diag,
            fixed,
        }
    }

    pub fn energy(&self, v: &VectorField) -> f64 {
        let x = v.to_flat();
        self.full.form(&x, &x)
    }

    /// `V` solving `a(V, W) = rhs[W]`, zero on the boundary.
    pub fn solve(&self, rhs: &ShapeDerivative) -> Result<VectorField> {
        let mut b = rhs.rhs.clone();
        for (bi, &f) in b.iter_mut().zip(&self.fixed) {
            if f {
                *bi = 0.0;
            }
        }
        let n = b.len();
        let sol = linalg::cg(|x, y| self.reduced.apply_into(x, y), &self.diag, &b, CG_TOL, 10 * n)
            .map_err(|e| match e {
                Error::Convergence { iterations, residual, .. } => Error::Convergence {
                    what: "deformation solve",
                    iterations,
                    residual,
                },
                other => other,
            })?;
        let v = VectorField::from_flat(&sol.x);
        if log::log_enabled!(log::Level::Debug) {
            let avv = self.energy(&v);
            log::debug!(
                "deformation: {} CG iterations, dJ[-V] = {:.6e}, -a(V,V) = {:.6e}",
                sol.iterations,
                -rhs.apply(&v),
                -avv
            );
        }
        Ok(v)
    }

    /// Smallest Ritz value of the reduced operator on the interior DOFs
    /// after `steps` Lanczos iterations (full reorthogonalization).
    pub fn min_ritz(&self, steps: usize) -> f64 {
        let n = self.fixed.len();
        let mut q: Vec<f64> = (0..n)
            .map(|i| if self.fixed[i] { 0.0 } else { 1.0 + ((i * 7919) % 13) as f64 / 13.0 })
            .collect();
        let qn = linalg::norm2(&q);
        if qn == 0.0 {
            return f64::NAN;
        }
        q.iter_mut().for_each(|v| *v /= qn);
        let mut basis: Vec<Vec<f64>> = vec![q];
        let (mut alpha, mut beta) = (Vec::new(), Vec::new());
        for j in 0..steps {
            let mut w = self.reduced.apply(&basis[j]);
            let a = linalg::dot(&w, &basis[j]);
            alpha.push(a);
            for qb in &basis {
                let c = linalg::dot(&w, qb);
                w.iter_mut().zip(qb).for_each(|(x, y)| *x -= c * y);
            }
            let b = linalg::norm2(&w);
            if b < 1e-14 * a.abs().max(1.0) || j + 1 == steps {
                break;
            }
            beta.push(b);
            basis.push(w.into_iter().map(|x| x / b).collect());
        }
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        t.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

pub fn solve_deformation(mesh: &Mesh, mu: &MuField, rhs: &ShapeDerivative) -> Result<VectorField> {
    ElasticityOperator::new(mesh, mu).solve(rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GNorm {
    /// `√a(V,V)`.
    pub energy: f64,
    /// `‖V‖_{H¹(D)}`.
    pub h1: f64,
}

pub fn h1_norm_vector(mesh: &Mesh, v: &VectorField) -> f64 {
    let vx: Vec<f64> = v.0.iter().map(|x| x[0]).collect();
    let vy: Vec<f64> = v.0.iter().map(|x| x[1]).collect();
    let l2 = assembly::l2_norm_sq(mesh, &vx) + assembly::l2_norm_sq(mesh, &vy);
    let semi = assembly::h1_seminorm_sq(mesh, &vx) + assembly::h1_seminorm_sq(mesh, &vy);
    (l2 + semi).sqrt()
}

pub fn g_norm(mesh: &Mesh, mu: &MuField, v: &VectorField) -> GNorm {
    let op = assemble_elasticity(mesh, mu);
    let x = v.to_flat();
    GNorm {
        energy: op.form(&x, &x).max(0.0).sqrt(),
        h1: h1_norm_vector(mesh, v),
    }
}
