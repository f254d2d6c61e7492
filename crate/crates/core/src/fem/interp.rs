//! Point location and P1 interpolation of fields living on another mesh.

use std::sync::Arc;

use super::assembly::{self, QUAD_BARY};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::mesh::geometry::{self, Point};
use crate::mesh::Mesh;

/// Default clamp distance for points that fall just outside the source mesh.
pub const CLAMP_TOL: f64 = 1e-10;

const INSIDE_EPS: f64 = 1e-12;

/// A P1 field together with the mesh it lives on; cheap to clone.
#[derive(Debug, Clone)]
pub struct ReferenceField {
    inner: Arc<Inner>,
    tol: f64,
}

#[derive(Debug)]
struct Inner {
    mesh: Mesh,
    values: ScalarField,
    grads: Vec<Point>,
}

/// Values and gradients of a reference field at the 3-point quadrature
/// nodes of every triangle of some target mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadSample {
    pub values: Vec<[f64; 3]>,
    pub grads: Vec<[Point; 3]>,
}

impl QuadSample {
    /// Sample of a field given on the same mesh (no point location needed).
    pub fn from_nodal(mesh: &Mesh, u: &ScalarField) -> Self {
        let values = assembly::at_quadrature(mesh, u.values());
        let grads = (0..mesh.num_triangles())
            .map(|t| {
                let el = assembly::p1_element(mesh.triangle_points(t));
                [assembly::gradient_on(mesh, &el, t, u.values()); 3]
            })
            .collect();
        QuadSample { values, grads }
    }
}

impl ReferenceField {
    pub fn new(mesh: Mesh, values: ScalarField) -> Self {
        assert_eq!(values.len(), mesh.num_nodes(), "field length must match mesh");
        let grads = (0..mesh.num_triangles())
            .map(|t| {
                let el = assembly::p1_element(mesh.triangle_points(t));
                assembly::gradient_on(&mesh, &el, t, values.values())
            })
            .collect();
        ReferenceField {
            inner: Arc::new(Inner { mesh, values, grads }),
            tol: CLAMP_TOL,
        }
    }

    /// Same field with a different clamp distance.
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn mesh(&self) -> &Mesh {
        &self.inner.mesh
    }

    pub fn values(&self) -> &ScalarField {
        &self.inner.values
    }

    fn walk(&self, p: Point, start: usize) -> Option<(usize, [f64; 3])> {
        let m = &self.inner.mesh;
        let mut t = start.min(m.num_triangles() - 1);
        for _ in 0..m.num_triangles() {
            let [a, b, c] = m.triangle_points(t);
            let l = geometry::barycentric(p, a, b, c);
            let (k, lmin) = l
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
            if lmin >= -INSIDE_EPS {
                return Some((t, l));
            }
            t = m.neighbor(t, (k + 1) % 3)?;
        }
        None
    }

    /// Containing triangle and barycentric coordinates of `p`.  `hint` is
    /// the starting triangle for the walk and is updated on success.
    pub fn locate(&self, p: Point, hint: &mut usize) -> Result<(usize, [f64; 3])> {
        if let Some(found) = self.walk(p, *hint) {
            *hint = found.0;
            return Ok(found);
        }
        let m = &self.inner.mesh;
        let mut best = (usize::MAX, f64::INFINITY);
        for t in 0..m.num_triangles() {
            let [a, b, c] = m.triangle_points(t);
            let l = geometry::barycentric(p, a, b, c);
            if l.iter().all(|&v| v >= -INSIDE_EPS) {
                *hint = t;
                return Ok((t, l));
            }
            let d = geometry::dist_to_segment(p, a, b)
                .min(geometry::dist_to_segment(p, b, c))
                .min(geometry::dist_to_segment(p, c, a));
            if d < best.1 {
                best = (t, d);
            }
        }
        let (t, d) = best;
        if d > self.tol {
            return Err(Error::Evaluation {
                x: p[0],
                y: p[1],
                distance: d,
            });
        }
        let [a, b, c] = m.triangle_points(t);
        let q = [
            geometry::closest_on_segment(p, a, b),
            geometry::closest_on_segment(p, b, c),
            geometry::closest_on_segment(p, c, a),
        ]
        .into_iter()
        .min_by(|x, y| geometry::dist(p, *x).total_cmp(&geometry::dist(p, *y)))
        .unwrap_or(a);
        let l = geometry::barycentric(q, a, b, c).map(|v| v.max(0.0));
        let s: f64 = l.iter().sum();
        *hint = t;
        Ok((t, l.map(|v| v / s)))
    }

    /// Value and (piecewise constant) gradient at `p`.
    pub fn value_grad(&self, p: Point, hint: &mut usize) -> Result<(f64, Point)> {
        let (t, l) = self.locate(p, hint)?;
        let tri = self.inner.mesh.triangles()[t];
        let v = &self.inner.values;
        Ok((l[0] * v[tri[0]] + l[1] * v[tri[1]] + l[2] * v[tri[2]], self.inner.grads[t]))
    }

    pub fn value(&self, p: Point, hint: &mut usize) -> Result<f64> {
        Ok(self.value_grad(p, hint)?.0)
    }

    /// Nodal P1 interpolant on `target`.
    pub fn on_mesh(&self, target: &Mesh) -> Result<ScalarField> {
        if std::ptr::eq(target.nodes().as_ptr(), self.inner.mesh.nodes().as_ptr()) || *target == self.inner.mesh {
            return Ok(self.inner.values.clone());
        }
        let mut hint = 0;
        target
            .nodes()
            .iter()
            .map(|&p| self.value(p, &mut hint))
            .collect::<Result<Vec<_>>>()
            .map(ScalarField)
    }

    /// Values and gradients at the quadrature nodes of `target`.
    pub fn sample(&self, target: &Mesh) -> Result<QuadSample> {
        let n = target.num_triangles();
        let mut values = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        // start each triangle's walk where its first vertex was found
        let mut node_hint = vec![usize::MAX; target.num_nodes()];
        let mut hint = 0;
        for t in 0..n {
            let tri = target.triangles()[t];
            let pts = target.triangle_points(t);
            if node_hint[tri[0]] == usize::MAX {
                let (s, _) = self.locate(pts[0], &mut hint)?;
                node_hint[tri[0]] = s;
            }
            let mut h = node_hint[tri[0]];
            let mut vq = [0.0; 3];
            let mut gq = [[0.0; 2]; 3];
            for (q, l) in QUAD_BARY.iter().enumerate() {
                let x = assembly::interpolate_bary(pts, *l);
                let (v, g) = self.value_grad(x, &mut h)?;
                vq[q] = v;
                gq[q] = g;
            }
            hint = h;
            values.push(vq);
            grads.push(gq);
        }
        Ok(QuadSample { values, grads })
    }
}

/// Nodal interpolation of `source` onto `target`.
pub fn evaluate_on_mesh(source: &ReferenceField, target: &Mesh) -> Result<ScalarField> {
    source.on_mesh(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_fitted_mesh, LoopShape, LoopSpec, MeshSpec, Outer};

    fn disk_mesh(h: f64, r: f64) -> Mesh {
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
            h,
        ))
        .unwrap()
    }

    #[test]
    fn identical_mesh_is_identity() {
        let m = disk_mesh(0.1, 0.2);
        let f = ScalarField::from_fn(m.nodes(), |p| (3.0 * p[0]).sin() * p[1]);
        let r = ReferenceField::new(m.clone(), f.clone());
        assert_eq!(r.on_mesh(&m).unwrap(), f);
    }

    #[test]
    fn affine_fields_are_reproduced() {
        let src = disk_mesh(0.07, 0.2);
        let dst = disk_mesh(0.05, 0.25);
        let aff = |p: Point| p[0] + 2.0 * p[1];
        let r = ReferenceField::new(src.clone(), ScalarField::from_fn(src.nodes(), aff));
        let out = r.on_mesh(&dst).unwrap();
        for (p, v) in dst.nodes().iter().zip(out.values()) {
            assert!((aff(*p) - v).abs() < 1e-13);
        }
        let s = r.sample(&dst).unwrap();
        for g in s.grads.iter().flatten() {
            assert!((g[0] - 1.0).abs() < 1e-12 && (g[1] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_point_is_an_evaluation_error() {
        let m = disk_mesh(0.1, 0.2);
        let r = ReferenceField::new(m.clone(), ScalarField::zeros(m.num_nodes()));
        let mut hint = 0;
        assert!(matches!(r.value([0.5, 0.0], &mut hint), Err(Error::Evaluation { .. })));
        // roundoff outside is clamped
        assert!(r.value([1e-12, 0.1], &mut hint).is_ok());
    }

    #[test]
    fn smooth_field_error_is_second_order() {
        let f = |p: Point| (2.0 * p[0]).sin() * (3.0 * p[1]).cos();
        let probe = disk_mesh(0.03, 0.2);
        let mut errs = Vec::new();
        for h in [0.08, 0.04] {
            let m = disk_mesh(h, 0.2);
            let r = ReferenceField::new(m.clone(), ScalarField::from_fn(m.nodes(), f));
            let out = r.on_mesh(&probe).unwrap();
            let e = probe
                .nodes()
                .iter()
                .zip(out.values())
                .map(|(p, v)| (f(*p) - v).abs())
                .fold(0.0, f64::max);
            errs.push(e);
        }
        assert!(errs[0] / errs[1] > 2.5, "{errs:?}");
    }
}
