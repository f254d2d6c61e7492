//! Interface-fitted mesh generation.
//!
//! Outer boundary and interface polygons are inserted as constraint edges
//! of a constrained Delaunay triangulation, the interior is filled with an
//! equilateral lattice of spacing `h` (points too close to a constraint are
//! dropped), triangles are labelled by centroid point-in-polygon and free
//! nodes get a few passes of guarded Laplacian smoothing.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

use super::geometry::{self, Point};
use super::Mesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outer {
    Rectangle { x0: f64, x1: f64, y0: f64, y1: f64 },
    /// Axis-aligned ellipse centred at the origin.
    Ellipse { a: f64, b: f64 },
}

impl Outer {
    /// Polygonal approximation with edges no longer than `h`.
    pub fn polygon(&self, h: f64) -> Vec<Point> {
        match *self {
            Outer::Rectangle { x0, x1, y0, y1 } => {
                let corners = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
                subdivide(&corners, h)
            }
            Outer::Ellipse { a, b } => {
                // Ramanujan's perimeter approximation is plenty for a count
                let hh = ((a - b) / (a + b)).powi(2);
                let perim = PI * (a + b) * (1.0 + 3.0 * hh / (10.0 + (4.0 - 3.0 * hh).sqrt()));
                let n = ((perim / h).ceil() as usize).max(8);
                (0..n)
                    .map(|k| {
                        let th = 2.0 * PI * k as f64 / n as f64;
                        [a * th.cos(), b * th.sin()]
                    })
                    .collect()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Outer::Rectangle { x0, x1, y0, y1 } => x1 > x0 && y1 > y0,
            Outer::Ellipse { a, b } => a > 0.0 && b > 0.0,
        };
        if ok && self.is_finite() {
            Ok(())
        } else {
            Err(Error::Geometry(format!("degenerate outer domain {self:?}")))
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            Outer::Rectangle { x0, x1, y0, y1 } => [x0, x1, y0, y1].iter().all(|v| v.is_finite()),
            Outer::Ellipse { a, b } => a.is_finite() && b.is_finite(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoopShape {
    /// Inscribed regular polygon; `segments` defaults to about `2πr/h`.
    Circle {
        center: Point,
        radius: f64,
        #[serde(default)]
        segments: Option<usize>,
    },
    /// Closed polyline; edges longer than `h` are subdivided.
    Polyline { points: Vec<Point> },
}

impl LoopShape {
    pub fn circle(center: Point, radius: f64, segments: usize) -> Self {
        LoopShape::Circle {
            center,
            radius,
            segments: Some(segments),
        }
    }

    /// Vertices of the polygon that the mesh loop will follow, CCW.
    pub fn polygon(&self, h: f64) -> Vec<Point> {
        let mut poly = match self {
            LoopShape::Circle {
                center,
                radius,
                segments,
            } => {
                let n = segments.unwrap_or_else(|| ((2.0 * PI * radius / h).ceil() as usize).max(8));
                (0..n)
                    .map(|k| {
                        let th = 2.0 * PI * k as f64 / n as f64;
                        [center[0] + radius * th.cos(), center[1] + radius * th.sin()]
                    })
                    .collect()
            }
            LoopShape::Polyline { points } => subdivide(points, h),
        };
        if geometry::polygon_area(&poly) < 0.0 {
            poly.reverse();
        }
        poly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSpec {
    pub region: String,
    #[serde(flatten)]
    pub shape: LoopShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub outer: Outer,
    #[serde(default = "default_outer_region")]
    pub outer_region: String,
    #[serde(default)]
    pub loops: Vec<LoopSpec>,
    /// Target edge length.
    pub h: f64,
    #[serde(default = "default_smoothing")]
    pub smoothing_passes: usize,
}

fn default_outer_region() -> String {
    "out".into()
}

fn default_smoothing() -> usize {
    5
}

impl MeshSpec {
    pub fn new(outer: Outer, loops: Vec<LoopSpec>, h: f64) -> Self {
        MeshSpec {
            outer,
            outer_region: default_outer_region(),
            loops,
            h,
            smoothing_passes: default_smoothing(),
        }
    }
}

fn subdivide(poly: &[Point], h: f64) -> Vec<Point> {
    let n = poly.len();
    let mut out = Vec::new();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let k = ((geometry::dist(a, b) / h).ceil() as usize).max(1);
        for j in 0..k {
            let s = j as f64 / k as f64;
            out.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
        }
    }
    out
}

fn check_geometry(outer: &[Point], loops: &[Vec<Point>], h: f64) -> Result<()> {
    for (i, lp) in loops.iter().enumerate() {
        if lp.len() < 3 || !geometry::polygon_is_simple(lp) {
            return Err(Error::Geometry(format!("loop {i} is not a simple polygon")));
        }
        if lp.iter().any(|&p| !geometry::point_in_polygon(p, outer)) {
            return Err(Error::Geometry(format!("loop {i} is not inside the outer boundary")));
        }
        let d = geometry::polygon_distance(lp, outer);
        if d <= 2.0 * h {
            return Err(Error::Geometry(format!(
                "loop {i} is {d:.4} from the outer boundary; must exceed 2h = {:.4}",
                2.0 * h
            )));
        }
        for (j, other) in loops.iter().enumerate().skip(i + 1) {
            let d = geometry::polygon_distance(lp, other);
            if d <= 2.0 * h {
                return Err(Error::Geometry(format!(
                    "loops {i} and {j} are {d:.4} apart; must exceed 2h = {:.4}",
                    2.0 * h
                )));
            }
            if geometry::point_in_polygon(other[0], lp) || geometry::point_in_polygon(lp[0], other) {
                return Err(Error::Geometry(format!("loops {i} and {j} are nested")));
            }
        }
    }
    Ok(())
}

fn min_dist_to_polygons(p: Point, polys: &[&[Point]]) -> f64 {
    polys
        .iter()
        .map(|poly| geometry::dist_to_polygon(p, poly))
        .fold(f64::INFINITY, f64::min)
}

/// Builds an interface-fitted mesh.  Every requested loop becomes one
/// interface loop whose nodes are exactly the vertices of
/// [`LoopShape::polygon`].
pub fn generate_fitted_mesh(spec: &MeshSpec) -> Result<Mesh> {
    let h = spec.h;
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Geometry(format!("mesh size h must be positive, got {h}")));
    }
    spec.outer.validate()?;
    let outer = spec.outer.polygon(h);
    let loops: Vec<Vec<Point>> = spec.loops.iter().map(|l| l.shape.polygon(h)).collect();
    check_geometry(&outer, &loops, h)?;

    let (lo, hi) = outer.iter().fold(
        ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]),
        |(lo, hi), p| ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])]),
    );
    let approx_nodes = (hi[0] - lo[0]) * (hi[1] - lo[1]) / (h * h * 0.75f64.sqrt());
    if approx_nodes > 5e6 {
        return Err(Error::Generation(format!(
            "h = {h} would produce about {approx_nodes:.0} nodes"
        )));
    }

    let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> = ConstrainedDelaunayTriangulation::new();
    let insert = |cdt: &mut ConstrainedDelaunayTriangulation<Point2<f64>>, p: Point| {
        cdt.insert(Point2::new(p[0], p[1]))
            .map_err(|e| Error::Generation(format!("cannot insert point {p:?}: {e:?}")))
    };
    for poly in std::iter::once(&outer).chain(&loops) {
        let handles = poly
            .iter()
            .map(|&p| insert(&mut cdt, p))
            .collect::<Result<Vec<_>>>()?;
        for k in 0..handles.len() {
            let (a, b) = (handles[k], handles[(k + 1) % handles.len()]);
            if !cdt.can_add_constraint(a, b) {
                return Err(Error::Geometry("constraint edges intersect".into()));
            }
            cdt.add_constraint(a, b);
        }
    }

    // equilateral lattice fill
    let dy = h * 0.75f64.sqrt();
    let keep_off = 0.55 * h;
    let all_polys: Vec<&[Point]> = std::iter::once(outer.as_slice())
        .chain(loops.iter().map(|l| l.as_slice()))
        .collect();
    let rows = ((hi[1] - lo[1]) / dy).ceil() as usize;
    let cols = ((hi[0] - lo[0]) / h).ceil() as usize + 1;
    for j in 0..=rows {
        let y = lo[1] + j as f64 * dy;
        let shift = if j % 2 == 1 { 0.5 * h } else { 0.0 };
        for i in 0..=cols {
            let p = [lo[0] + shift + i as f64 * h, y];
            if geometry::point_in_polygon(p, &outer) && min_dist_to_polygons(p, &all_polys) >= keep_off {
                insert(&mut cdt, p)?;
            }
        }
    }

    let mut nodes: Vec<Point> = vec![[0.0; 2]; cdt.num_vertices()];
    for v in cdt.vertices() {
        let p = v.position();
        nodes[v.fix().index()] = [p.x, p.y];
    }
    let mut triangles = Vec::with_capacity(cdt.num_inner_faces());
    for f in cdt.inner_faces() {
        let v = f.vertices();
        triangles.push([v[0].fix().index(), v[1].fix().index(), v[2].fix().index()]);
    }

    // region labels
    let mut regions = vec![spec.outer_region.clone()];
    let loop_region: Vec<usize> = spec
        .loops
        .iter()
        .map(|l| match regions.iter().position(|r| *r == l.region) {
            Some(i) => i,
            None => {
                regions.push(l.region.clone());
                regions.len() - 1
            }
        })
        .collect();
    if loop_region.contains(&0) {
        return Err(Error::Geometry(format!(
            "loop region must differ from the outer region '{}'",
            spec.outer_region
        )));
    }
    let tri_region: Vec<usize> = triangles
        .iter()
        .map(|t| {
            let c = geometry::centroid(nodes[t[0]], nodes[t[1]], nodes[t[2]]);
            loops
                .iter()
                .position(|lp| geometry::point_in_polygon(c, lp))
                .map_or(0, |k| loop_region[k])
        })
        .collect();

    let mut mesh = Mesh::new(nodes, triangles, tri_region, regions)?;
    if mesh.loops().len() != loops.len() {
        return Err(Error::Generation(format!(
            "expected {} interface loops, found {}; try a smaller h",
            loops.len(),
            mesh.loops().len()
        )));
    }
    for _ in 0..spec.smoothing_passes {
        mesh = smooth_pass(&mesh);
    }
    let q = super::mesh_quality(&mesh);
    if q.inverted > 0 || q.min_angle < super::DEFAULT_MIN_ANGLE {
        return Err(Error::Generation(format!(
            "generated mesh is degenerate (min angle {:.2} deg); try a smaller h",
            q.min_angle.to_degrees()
        )));
    }
    Ok(mesh)
}

/// One Jacobi sweep of Laplacian smoothing on nodes that are neither on the
/// outer boundary nor on an interface.  A move is dropped when it would
/// lower the minimum angle of the node's star.
fn smooth_pass(mesh: &Mesh) -> Mesh {
    let adj = mesh.node_neighbors();
    let mut star: Vec<Vec<usize>> = vec![Vec::new(); mesh.num_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for &v in tri {
            star[v].push(t);
        }
    }
    let old = mesh.nodes();
    let mut nodes = old.to_vec();
    for v in 0..mesh.num_nodes() {
        if mesh.is_boundary_node(v) || mesh.is_interface_node(v) {
            continue;
        }
        let n = adj[v].len() as f64;
        let c = adj[v].iter().fold([0.0, 0.0], |s, &w| [s[0] + old[w][0] / n, s[1] + old[w][1] / n]);
        let star_min = |p: Point| {
            star[v]
                .iter()
                .map(|&t| {
                    let tri = mesh.triangles()[t];
                    let pts = tri.map(|w| if w == v { p } else { old[w] });
                    if geometry::signed_area(pts[0], pts[1], pts[2]) <= 0.0 {
                        -1.0
                    } else {
                        super::quality::min_angle_of(pts)
                    }
                })
                .fold(f64::INFINITY, f64::min)
        };
        if star_min(c) >= star_min(old[v]) {
            nodes[v] = c;
        }
    }
    mesh.with_nodes(nodes)
}
