//! P1 element geometry, quadrature and global assembly.

use crate::linalg::SparseOperator;
use crate::mesh::geometry::{self, Point};
use crate::mesh::Mesh;

/// Barycentric coordinates of the symmetric 3-point rule (exact for
/// quadratics); each point carries weight `area / 3`.
pub const QUAD_BARY: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];

const GAUSS2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Signed area and constant basis gradients of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct P1Element {
    pub area: f64,
    pub grads: [Point; 3],
}

pub fn p1_element(p: [Point; 3]) -> P1Element {
    let a2 = geometry::cross(geometry::sub(p[1], p[0]), geometry::sub(p[2], p[0]));
    let mut grads = [[0.0; 2]; 3];
    for k in 0..3 {
        let e = geometry::sub(p[(k + 2) % 3], p[(k + 1) % 3]);
        grads[k] = [-e[1] / a2, e[0] / a2];
    }
    P1Element { area: 0.5 * a2, grads }
}

pub fn elements(mesh: &Mesh) -> Vec<P1Element> {
    (0..mesh.num_triangles()).map(|t| p1_element(mesh.triangle_points(t))).collect()
}

pub fn interpolate_bary(p: [Point; 3], l: [f64; 3]) -> Point {
    [
        l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
        l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
    ]
}

pub fn quad_points(p: [Point; 3]) -> [Point; 3] {
    QUAD_BARY.map(|l| interpolate_bary(p, l))
}

/// Constant gradient of a P1 field on triangle `t`.
pub fn gradient_on(mesh: &Mesh, el: &P1Element, t: usize, u: &[f64]) -> Point {
    let tri = mesh.triangles()[t];
    let mut g = [0.0; 2];
    for k in 0..3 {
        g[0] += u[tri[k]] * el.grads[k][0];
        g[1] += u[tri[k]] * el.grads[k][1];
    }
    g
}

/// `K_ij = Σ_T c_T ∫_T ∇φ_i·∇φ_j`.
pub fn stiffness(mesh: &Mesh, coeff: &[f64]) -> SparseOperator {
    assert_eq!(coeff.len(), mesh.num_triangles());
    let nt = mesh.num_triangles();
    let (mut r, mut c, mut v) = (Vec::with_capacity(9 * nt), Vec::with_capacity(9 * nt), Vec::with_capacity(9 * nt));
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let el = p1_element(mesh.triangle_points(t));
        for i in 0..3 {
            for j in 0..3 {
                r.push(tri[i]);
                c.push(tri[j]);
                v.push(coeff[t] * el.area * geometry::dot(el.grads[i], el.grads[j]));
            }
        }
    }
    SparseOperator::from_triplets(mesh.num_nodes(), r, c, v)
}

/// `m_i = ∫_D φ_i dx`.
pub fn node_weights(mesh: &Mesh) -> Vec<f64> {
    let mut m = vec![0.0; mesh.num_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = mesh.triangle_area(t) / 3.0;
        for &v in tri {
            m[v] += a;
        }
    }
    m
}

/// `b_i = ∫_{∂D} g φ_i ds` with two-point Gauss per boundary edge.
pub fn boundary_load(mesh: &Mesh, g: impl Fn(Point) -> f64) -> Vec<f64> {
    let mut b = vec![0.0; mesh.num_nodes()];
    for e in mesh.boundary_edges() {
        let (pa, pb) = (mesh.nodes()[e[0]], mesh.nodes()[e[1]]);
        let half = 0.5 * geometry::dist(pa, pb);
        for s in GAUSS2 {
            let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
            let gx = g(x) * half;
            b[e[0]] += gx * (1.0 - s);
            b[e[1]] += gx * s;
        }
    }
    b
}

/// `b_i = Σ_T Σ_q (A_T/3) f_{T,q} φ_i(x_q)` for values given at the
/// quadrature points of every triangle.
pub fn quadrature_load(mesh: &Mesh, values: &[[f64; 3]]) -> Vec<f64> {
    assert_eq!(values.len(), mesh.num_triangles());
    let mut b = vec![0.0; mesh.num_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let w = mesh.triangle_area(t) / 3.0;
        for (q, l) in QUAD_BARY.iter().enumerate() {
            let f = w * values[t][q];
            for k in 0..3 {
                b[tri[k]] += f * l[k];
            }
        }
    }
    b
}

/// Values of a P1 field at the quadrature points of every triangle.
pub fn at_quadrature(mesh: &Mesh, u: &[f64]) -> Vec<[f64; 3]> {
    mesh.triangles()
        .iter()
        .map(|tri| QUAD_BARY.map(|l| l[0] * u[tri[0]] + l[1] * u[tri[1]] + l[2] * u[tri[2]]))
        .collect()
}

/// `∫_D u² dx` by the 3-point rule.
pub fn l2_norm_sq(mesh: &Mesh, u: &[f64]) -> f64 {
    at_quadrature(mesh, u)
        .iter()
        .enumerate()
        .map(|(t, q)| mesh.triangle_area(t) / 3.0 * q.iter().map(|v| v * v).sum::<f64>())
        .sum()
}

/// `∫_D |∇u|² dx`.
pub fn h1_seminorm_sq(mesh: &Mesh, u: &[f64]) -> f64 {
    (0..mesh.num_triangles())
        .map(|t| {
            let el = p1_element(mesh.triangle_points(t));
            let g = gradient_on(mesh, &el, t, u);
            el.area * geometry::dot(g, g)
        })
        .sum()
}

pub fn h1_norm(mesh: &Mesh, u: &[f64]) -> f64 {
    (l2_norm_sq(mesh, u) + h1_seminorm_sq(mesh, u)).sqrt()
}
