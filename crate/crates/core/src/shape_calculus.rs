//! Tracking objective and its shape derivative.
//!
//! The derivative is assembled against every vector P1 basis function
//! `W = φ_i e_c` in volume form.  Besides the usual three volume terms it
//! carries the contribution of the two zero-mean multipliers, so the
//! assembled vector is the exact derivative of the discrete objective with
//! respect to node positions.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fem::assembly::{self, QUAD_BARY};
use crate::fem::{Adjoint, QuadSample, ReferenceField, Scenario, State, StateProblem};
use crate::field::VectorField;
use crate::linalg;
use crate::mesh::geometry;
use crate::mesh::{mesh_quality, Mesh};

/// Coefficients of `dJ[W]` against the interleaved vector P1 basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDerivative {
    pub rhs: Vec<f64>,
    /// Nodes whose rows may be nonzero; `None` means no restriction.
    pub active: Option<Vec<bool>>,
}

impl ShapeDerivative {
    pub fn zeros(num_nodes: usize) -> Self {
        ShapeDerivative {
            rhs: vec![0.0; 2 * num_nodes],
            active: None,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.rhs.len() / 2
    }

    /// `dJ[W]`.
    pub fn apply(&self, w: &VectorField) -> f64 {
        assert_eq!(w.len(), self.num_nodes());
        w.0.iter()
            .enumerate()
            .map(|(i, v)| self.rhs[2 * i] * v[0] + self.rhs[2 * i + 1] * v[1])
            .sum()
    }

    pub fn add_scaled(&mut self, other: &ShapeDerivative, c: f64) {
        for (a, b) in self.rhs.iter_mut().zip(&other.rhs) {
            *a += c * b;
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        ShapeDerivative {
            rhs: self.rhs.iter().map(|v| c * v).collect(),
            active: self.active.clone(),
        }
    }

    pub fn norm(&self) -> f64 {
        linalg::norm2(&self.rhs)
    }

    pub fn active_count(&self) -> usize {
        match &self.active {
            Some(a) => a.iter().filter(|&&x| x).count(),
            None => self.num_nodes(),
        }
    }

    fn zero_boundary(&mut self, mesh: &Mesh) {
        for (i, &b) in mesh.boundary_mask().iter().enumerate() {
            if b {
                self.rhs[2 * i] = 0.0;
                self.rhs[2 * i + 1] = 0.0;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub j: f64,
    pub jobj: f64,
    pub jreg: f64,
}

/// `½ Σ_T Σ_q (A_T/3) e_q²`.
pub fn misfit_integral(mesh: &Mesh, misfit: &[[f64; 3]]) -> f64 {
    misfit
        .iter()
        .enumerate()
        .map(|(t, e)| mesh.triangle_area(t) / 6.0 * e.iter().map(|v| v * v).sum::<f64>())
        .sum()
}

fn misfit_at_quadrature(mesh: &Mesh, state: &State, target: &QuadSample) -> Vec<[f64; 3]> {
    assembly::at_quadrature(mesh, state.y.values())
        .iter()
        .zip(&target.values)
        .map(|(y, yb)| [y[0] - yb[0], y[1] - yb[1], y[2] - yb[2]])
        .collect()
}

pub fn objective_value(mesh: &Mesh, scenario: &Scenario, target: &ReferenceField, nu: f64) -> Result<ObjectiveValue> {
    let sample = target.sample(mesh)?;
    let state = StateProblem::new(mesh, scenario)?.solve_state()?;
    let jobj = misfit_integral(mesh, &misfit_at_quadrature(mesh, &state, &sample));
    let jreg = mesh.interface_length();
    Ok(ObjectiveValue {
        j: jobj + nu * jreg,
        jobj,
        jreg,
    })
}

/// Volume-form derivative of the tracking term.  `kappa` is per triangle,
/// `target` holds `ȳ` and `∇ȳ` at the quadrature nodes.
pub fn assemble_volume_derivative(
    mesh: &Mesh,
    kappa: &[f64],
    state: &State,
    adjoint: &Adjoint,
    target: &QuadSample,
) -> ShapeDerivative {
    let y = state.y.values();
    let p = adjoint.p.values();
    let (lambda, eta) = (state.multiplier, adjoint.multiplier);
    let misfit = misfit_at_quadrature(mesh, state, target);
    let mut d = ShapeDerivative::zeros(mesh.num_nodes());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let el = assembly::p1_element(mesh.triangle_points(t));
        let a = el.area;
        let gy = assembly::gradient_on(mesh, &el, t, y);
        let gp = assembly::gradient_on(mesh, &el, t, p);
        let e = misfit[t];
        let e2: f64 = a / 3.0 * e.iter().map(|v| v * v).sum::<f64>();
        let ypgrad = geometry::dot(gy, gp);
        let mult: f64 = tri.iter().map(|&j| lambda * p[j] + eta * y[j]).sum::<f64>() * a / 3.0;
        for i in 0..3 {
            let g = el.grads[i];
            let gdy = geometry::dot(g, gy);
            let gdp = geometry::dot(g, gp);
            for c in 0..2 {
                let div = g[c];
                let mut v = 0.5 * div * e2;
                for q in 0..3 {
                    v -= a / 3.0 * e[q] * target.grads[t][q][c] * QUAD_BARY[q][i];
                }
                v += kappa[t] * a * (div * ypgrad - gdy * gp[c] - gdp * gy[c]);
                v += div * mult;
                d.rhs[2 * tri[i] + c] += v;
            }
        }
    }
    d.zero_boundary(mesh);
    d
}

/// `ν Σ_segments (W(b) − W(a))·τ̂`.
pub fn assemble_perimeter_derivative(mesh: &Mesh, nu: f64) -> ShapeDerivative {
    let mut d = ShapeDerivative::zeros(mesh.num_nodes());
    for lp in mesh.loops() {
        for (a, b) in lp.segments() {
            let t = geometry::sub(mesh.nodes()[b], mesh.nodes()[a]);
            let l = geometry::norm(t);
            for c in 0..2 {
                let v = nu * t[c] / l;
                d.rhs[2 * b + c] += v;
                d.rhs[2 * a + c] -= v;
            }
        }
    }
    d.zero_boundary(mesh);
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Restriction {
    None,
    /// Keep nodes within `k` mesh edges of an interface node.
    InterfaceBand { k: usize },
}

impl Default for Restriction {
    fn default() -> Self {
        Restriction::InterfaceBand { k: 0 }
    }
}

impl Restriction {
    pub fn band(k: usize) -> Self {
        Restriction::InterfaceBand { k }
    }

    fn depth(self) -> Option<usize> {
        match self {
            Restriction::None => None,
            Restriction::InterfaceBand { k } => Some(k),
        }
    }
}

/// Nodes within `k` edges of an interface node.
pub fn interface_band(mesh: &Mesh, k: usize) -> Vec<bool> {
    let mut depth = vec![usize::MAX; mesh.num_nodes()];
    let mut queue = VecDeque::new();
    for (i, &f) in mesh.interface_mask().iter().enumerate() {
        if f {
            depth[i] = 0;
            queue.push_back(i);
        }
    }
    if k > 0 {
        let adj = mesh.node_neighbors();
        while let Some(v) = queue.pop_front() {
            if depth[v] >= k {
                continue;
            }
            for &w in &adj[v] {
                if depth[w] == usize::MAX {
                    depth[w] = depth[v] + 1;
                    queue.push_back(w);
                }
            }
        }
    }
    depth.iter().map(|&d| d <= k).collect()
}

pub fn apply_restriction(mesh: &Mesh, d: &ShapeDerivative, mode: Restriction) -> ShapeDerivative {
    let Some(k) = mode.depth() else {
        return d.clone();
    };
    let mask = interface_band(mesh, k);
    let mut out = d.clone();
    for (i, &keep) in mask.iter().enumerate() {
        if !keep {
            out.rhs[2 * i] = 0.0;
            out.rhs[2 * i + 1] = 0.0;
        }
    }
    out.active = Some(mask);
    out
}

/// Everything one scenario evaluation produces.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: ObjectiveValue,
    pub state: State,
    pub adjoint: Adjoint,
    /// Unrestricted derivative of `J = J^obj + ν J^reg`.
    pub derivative: ShapeDerivative,
}

pub fn evaluate(mesh: &Mesh, scenario: &Scenario, target: &ReferenceField, nu: f64) -> Result<Evaluation> {
    let sample = target.sample(mesh)?;
    evaluate_with_sample(mesh, scenario, &sample, nu)
}

pub fn evaluate_with_sample(mesh: &Mesh, scenario: &Scenario, sample: &QuadSample, nu: f64) -> Result<Evaluation> {
    let prob = StateProblem::new(mesh, scenario)?;
    let state = prob.solve_state()?;
    let misfit = misfit_at_quadrature(mesh, &state, sample);
    let jobj = misfit_integral(mesh, &misfit);
    let adjoint = prob.solve_adjoint(mesh, &misfit)?;
    let mut derivative = assemble_volume_derivative(mesh, &prob.kappa, &state, &adjoint, sample);
    let jreg = mesh.interface_length();
    if nu != 0.0 {
        derivative.add_scaled(&assemble_perimeter_derivative(mesh, nu), 1.0);
    }
    Ok(Evaluation {
        objective: ObjectiveValue {
            j: jobj + nu * jreg,
            jobj,
            jreg,
        },
        state,
        adjoint,
        derivative,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdRow {
    pub t: f64,
    pub quotient: f64,
    pub central: f64,
    pub assembled: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub valid: bool,
}

/// Finite-difference check of `dJ[V]` along `x ↦ x + tV`.
pub fn fd_check(
    mesh: &Mesh,
    scenario: &Scenario,
    target: &ReferenceField,
    nu: f64,
    v: &VectorField,
    t_values: &[f64],
) -> Result<Vec<FdRow>> {
    let base = evaluate(mesh, scenario, target, nu)?;
    let assembled = base.derivative.apply(v);
    let j0 = base.objective.j;
    let j_at = |t: f64| -> Result<Option<f64>> {
        let moved = mesh.apply_displacement(v, t);
        if !mesh_quality(&moved).is_valid() {
            return Ok(None);
        }
        Ok(Some(objective_value(&moved, scenario, target, nu)?.j))
    };
    let mut rows = Vec::with_capacity(t_values.len());
    for &t in t_values {
        let row = match (j_at(t)?, j_at(-t)?) {
            (Some(jp), jm) => {
                let quotient = (jp - j0) / t;
                let central = jm.map_or(f64::NAN, |jm| (jp - jm) / (2.0 * t));
                let abs_err = (quotient - assembled).abs();
                FdRow {
                    t,
                    quotient,
                    central,
                    assembled,
                    abs_err,
                    rel_err: if assembled != 0.0 { abs_err / assembled.abs() } else { abs_err },
                    valid: true,
                }
            }
            (None, _) => {
                log::warn!("fd_check: mesh invalid at t = {t:e}");
                FdRow {
                    t,
                    quotient: f64::NAN,
                    central: f64::NAN,
                    assembled,
                    abs_err: f64::NAN,
                    rel_err: f64::NAN,
                    valid: false,
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}
