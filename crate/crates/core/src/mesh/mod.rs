//! Interface-fitted triangular meshes.
//!
//! A [`Mesh`] is immutable: node coordinates live in the mesh itself while
//! the connectivity (triangles, region labels, boundary edges and interface
//! loops) is shared behind an `Arc`, so deformed copies produced by
//! [`Mesh::apply_displacement`] are cheap.
//!
//! Region 0 is always the background region that touches the outer
//! boundary; every interface loop encloses one component of a different
//! region and is oriented counter-clockwise, so the outward unit normal of
//! a segment `a -> b` is the tangent rotated clockwise.

pub mod generate;
pub mod geometry;
mod gmsh;
mod quality;
mod vtk;

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::VectorField;

pub use generate::{generate_fitted_mesh, LoopShape, LoopSpec, MeshSpec, Outer};
pub use geometry::Point;
pub use gmsh::{msh_string, parse_msh, read_msh, write_msh, MshContents};
pub use quality::{mesh_quality, MeshQualityReport, DEFAULT_MIN_ANGLE};
pub use vtk::{write_vtk, VtkField};

/// Closed interface polyline, counter-clockwise, with the enclosed region
/// on its left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterfaceLoop {
    pub nodes: Vec<usize>,
    /// Region index of the enclosed component.
    pub region: usize,
}

impl InterfaceLoop {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Segments as node pairs `(a, b)` in loop order, closing segment last.
    pub fn segments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.nodes.len();
        (0..n).map(move |i| (self.nodes[i], self.nodes[(i + 1) % n]))
    }

    pub fn points(&self, mesh: &Mesh) -> Vec<Point> {
        self.nodes.iter().map(|&i| mesh.nodes[i]).collect()
    }

    pub fn segment_lengths(&self, mesh: &Mesh) -> Vec<f64> {
        self.segments()
            .map(|(a, b)| geometry::dist(mesh.nodes[a], mesh.nodes[b]))
            .collect()
    }

    /// Outward (pointing out of the enclosed region) unit normal per segment.
    pub fn outward_normals(&self, mesh: &Mesh) -> Vec<Point> {
        self.segments()
            .map(|(a, b)| {
                let t = geometry::sub(mesh.nodes[b], mesh.nodes[a]);
                let l = geometry::norm(t);
                [t[1] / l, -t[0] / l]
            })
            .collect()
    }

    pub fn perimeter(&self, mesh: &Mesh) -> f64 {
        self.segment_lengths(mesh).iter().sum()
    }
}

#[derive(Debug, PartialEq)]
struct Topology {
    triangles: Vec<[usize; 3]>,
    tri_region: Vec<usize>,
    regions: Vec<String>,
    boundary_edges: Vec<[usize; 2]>,
    loops: Vec<InterfaceLoop>,
    is_boundary: Vec<bool>,
    is_interface: Vec<bool>,
    /// Triangle across each local edge `(k, k+1)`, if any.
    neighbors: Vec<[Option<usize>; 3]>,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<Point>,
    topo: Arc<Topology>,
}

impl PartialEq for Mesh {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && (Arc::ptr_eq(&self.topo, &other.topo) || self.topo == other.topo)
    }
}

#[inline]
fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Chains unordered edges into closed node cycles.  Fails when a node has
/// an odd or larger-than-two edge count (open or branching chain).
pub(crate) fn chain_closed_loops(edges: &[[usize; 2]]) -> Result<Vec<Vec<usize>>> {
    let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
    for e in edges {
        if e[0] == e[1] {
            return Err(Error::Topology(format!("degenerate interface edge at node {}", e[0])));
        }
        adj.entry(e[0]).or_default().push(e[1]);
        adj.entry(e[1]).or_default().push(e[0]);
    }
    let mut keys: Vec<usize> = adj.keys().copied().collect();
    keys.sort_unstable();
    for &k in &keys {
        let d = adj[&k].len();
        if d == 1 {
            return Err(Error::Topology(format!(
                "interface chain is not closed: node {k} ends an open chain"
            )));
        }
        if d != 2 {
            return Err(Error::Topology(format!(
                "interface is not a simple curve: node {k} has {d} interface edges"
            )));
        }
    }
    let mut visited: HashMap<usize, bool> = keys.iter().map(|&k| (k, false)).collect();
    let mut loops = Vec::new();
    for &start in &keys {
        if visited[&start] {
            continue;
        }
        let mut lp = vec![start];
        visited.insert(start, true);
        let mut prev = start;
        let mut cur = adj[&start][0];
        while cur != start {
            if visited[&cur] {
                return Err(Error::Topology(format!("interface chain revisits node {cur}")));
            }
            visited.insert(cur, true);
            lp.push(cur);
            let nb = &adj[&cur];
            let next = if nb[0] == prev { nb[1] } else { nb[0] };
            prev = cur;
            cur = next;
        }
        loops.push(lp);
    }
    Ok(loops)
}

impl Mesh {
    /// Builds a mesh from raw connectivity, fixing clockwise triangles and
    /// deriving boundary edges and interface loops from the region labels.
    /// Region indices refer into `regions`; the region touching the outer
    /// boundary is moved to index 0.
    pub fn new(
        nodes: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
        tri_region: Vec<usize>,
        regions: Vec<String>,
    ) -> Result<Self> {
        let nv = nodes.len();
        if triangles.is_empty() {
            return Err(Error::Topology("mesh has no triangles".into()));
        }
        if tri_region.len() != triangles.len() {
            return Err(Error::Topology("one region label per triangle required".into()));
        }
        if let Some(&r) = tri_region.iter().find(|&&r| r >= regions.len()) {
            return Err(Error::Topology(format!("region index {r} has no name")));
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &nodes {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::Topology("non-finite node coordinate".into()));
            }
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let scale2 = (hi[0] - lo[0]).max(hi[1] - lo[1]).powi(2);
        let mut referenced = vec![false; nv];
        for (t, tri) in triangles.iter_mut().enumerate() {
            for &v in tri.iter() {
                if v >= nv {
                    return Err(Error::Topology(format!("triangle {t} references missing node {v}")));
                }
                referenced[v] = true;
            }
            let a = geometry::signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if a.abs() <= 1e-14 * scale2 {
                return Err(Error::Topology(format!(
                    "triangle {t} is degenerate (area {a:.3e}); orientation cannot be fixed"
                )));
            }
            if a < 0.0 {
                tri.swap(1, 2);
            }
        }
        if let Some(v) = referenced.iter().position(|r| !r) {
            return Err(Error::Topology(format!("node {v} is not referenced by any triangle")));
        }

        let mut edges: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::with_capacity(triangles.len() * 2);
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                edges
                    .entry(edge_key(tri[k], tri[(k + 1) % 3]))
                    .or_default()
                    .push((t, k));
            }
        }
        let mut neighbors = vec![[None; 3]; triangles.len()];
        let mut boundary_edges = Vec::new();
        let mut interface_edges = Vec::new();
        let mut edge_list: Vec<_> = edges.into_iter().collect();
        edge_list.sort_unstable_by_key(|(k, _)| *k);
        for (key, owners) in &edge_list {
            match owners.as_slice() {
                [(t, k)] => {
                    let tri = triangles[*t];
                    boundary_edges.push([tri[*k], tri[(*k + 1) % 3]]);
                }
                [(t1, k1), (t2, k2)] => {
                    neighbors[*t1][*k1] = Some(*t2);
                    neighbors[*t2][*k2] = Some(*t1);
                    if tri_region[*t1] != tri_region[*t2] {
                        interface_edges.push((*key, *t1, *t2));
                    }
                }
                _ => {
                    return Err(Error::Topology(format!(
                        "edge ({}, {}) is shared by {} triangles",
                        key.0,
                        key.1,
                        owners.len()
                    )))
                }
            }
        }
        if boundary_edges.is_empty() {
            return Err(Error::Topology("mesh has no boundary".into()));
        }

        // region touching the outer boundary becomes region 0
        let mut is_boundary = vec![false; nv];
        for e in &boundary_edges {
            is_boundary[e[0]] = true;
            is_boundary[e[1]] = true;
        }
        let mut outer_region = None;
        for (key, owners) in &edge_list {
            if owners.len() == 1 {
                let r = tri_region[owners[0].0];
                match outer_region {
                    None => outer_region = Some(r),
                    Some(o) if o != r => {
                        return Err(Error::Topology(format!(
                            "regions '{}' and '{}' both touch the outer boundary (edge {:?})",
                            regions[o], regions[r], key
                        )))
                    }
                    _ => {}
                }
            }
        }
        let outer = outer_region.expect("boundary edges exist");
        let (regions, tri_region) = if outer == 0 {
            (regions, tri_region)
        } else {
            let mut perm: Vec<usize> = (0..regions.len()).collect();
            perm.swap(0, outer);
            let inv = {
                let mut inv = vec![0; perm.len()];
                for (new, &old) in perm.iter().enumerate() {
                    inv[old] = new;
                }
                inv
            };
            let names = perm.iter().map(|&old| regions[old].clone()).collect();
            (names, tri_region.iter().map(|&r| inv[r]).collect())
        };

        // interface loops
        let mut is_interface = vec![false; nv];
        let mut inside_tri: HashMap<(usize, usize), usize> = HashMap::new();
        let mut raw_edges = Vec::with_capacity(interface_edges.len());
        for &(key, t1, t2) in &interface_edges {
            let (r1, r2) = (tri_region[t1], tri_region[t2]);
            let inner = match (r1 == 0, r2 == 0) {
                (true, false) => t2,
                (false, true) => t1,
                _ => {
                    return Err(Error::Topology(format!(
                        "edge ({}, {}) separates two inner regions '{}' and '{}'",
                        key.0, key.1, regions[r1], regions[r2]
                    )))
                }
            };
            inside_tri.insert(key, inner);
            raw_edges.push([key.0, key.1]);
            is_interface[key.0] = true;
            is_interface[key.1] = true;
        }
        if let Some(v) = (0..nv).find(|&v| is_interface[v] && is_boundary[v]) {
            return Err(Error::Topology(format!("interface touches the outer boundary at node {v}")));
        }
        let mut loops = Vec::new();
        for chain in chain_closed_loops(&raw_edges)? {
            // orient so that the enclosed triangle sees (a, b) counter-clockwise
            let (a, b) = (chain[0], chain[1]);
            let t = inside_tri[&edge_key(a, b)];
            let tri = triangles[t];
            let forward = (0..3).any(|k| tri[k] == a && tri[(k + 1) % 3] == b);
            let mut nodes_ord = chain;
            if !forward {
                nodes_ord.reverse();
                nodes_ord.rotate_right(1);
            }
            let region = tri_region[inside_tri[&edge_key(nodes_ord[0], nodes_ord[1])]];
            let n = nodes_ord.len();
            for i in 0..n {
                let (a, b) = (nodes_ord[i], nodes_ord[(i + 1) % n]);
                let t = inside_tri[&edge_key(a, b)];
                let tri = triangles[t];
                if !(0..3).any(|k| tri[k] == a && tri[(k + 1) % 3] == b) {
                    return Err(Error::Topology(format!(
                        "inconsistent orientation along interface at edge ({a}, {b})"
                    )));
                }
                if tri_region[t] != region {
                    return Err(Error::Topology(format!(
                        "interface loop through node {a} encloses more than one region"
                    )));
                }
            }
            loops.push(InterfaceLoop {
                nodes: nodes_ord,
                region,
            });
        }
        loops.sort_by_key(|l| l.nodes[0]);

        let mesh = Mesh {
            nodes,
            topo: Arc::new(Topology {
                triangles,
                tri_region,
                regions,
                boundary_edges,
                loops,
                is_boundary,
                is_interface,
                neighbors,
            }),
        };
        for (i, lp) in mesh.loops().iter().enumerate() {
            if !geometry::polygon_is_simple(&lp.points(&mesh)) {
                return Err(Error::Topology(format!("interface loop {i} self-intersects")));
            }
        }
        Ok(mesh)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.topo.triangles.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.topo.triangles
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let tri = self.topo.triangles[t];
        [self.nodes[tri[0]], self.nodes[tri[1]], self.nodes[tri[2]]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        geometry::signed_area(a, b, c)
    }

    pub fn tri_region(&self) -> &[usize] {
        &self.topo.tri_region
    }

    pub fn region_names(&self) -> &[String] {
        &self.topo.regions
    }

    pub fn region_of(&self, t: usize) -> &str {
        &self.topo.regions[self.topo.tri_region[t]]
    }

    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.topo.boundary_edges
    }

    pub fn loops(&self) -> &[InterfaceLoop] {
        &self.topo.loops
    }

    pub fn loop_points(&self) -> Vec<Vec<Point>> {
        self.loops().iter().map(|l| l.points(self)).collect()
    }

    pub fn is_boundary_node(&self, v: usize) -> bool {
        self.topo.is_boundary[v]
    }

    pub fn is_interface_node(&self, v: usize) -> bool {
        self.topo.is_interface[v]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.topo.is_boundary
    }

    pub fn interface_mask(&self) -> &[bool] {
        &self.topo.is_interface
    }

    pub fn interface_edges(&self) -> Vec<[usize; 2]> {
        self.loops()
            .iter()
            .flat_map(|l| l.segments().map(|(a, b)| [a, b]).collect::<Vec<_>>())
            .collect()
    }

    /// Triangle adjacent across local edge `k` (between local vertices k and k+1).
    pub fn neighbor(&self, t: usize, k: usize) -> Option<usize> {
        self.topo.neighbors[t][k]
    }

    /// Node-to-node adjacency lists (sorted).
    pub fn node_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for tri in self.triangles() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for l in &mut adj {
            l.sort_unstable();
            l.dedup();
        }
        adj
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    /// Sum of all interface segment lengths.
    pub fn interface_length(&self) -> f64 {
        self.loops().iter().map(|l| l.perimeter(self)).sum()
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.nodes {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Same connectivity with new node coordinates.
    pub fn with_nodes(&self, nodes: Vec<Point>) -> Mesh {
        assert_eq!(nodes.len(), self.nodes.len());
        Mesh {
            nodes,
            topo: Arc::clone(&self.topo),
        }
    }

    /// Perturbation of identity `x -> x + t V(x)` applied node-wise.  The
    /// result is not validated; use [`mesh_quality`] for that.
    pub fn apply_displacement(&self, v: &VectorField, t: f64) -> Mesh {
        assert_eq!(v.len(), self.num_nodes(), "displacement field length");
        let nodes = self
            .nodes
            .iter()
            .zip(&v.0)
            .map(|(p, d)| [p[0] + t * d[0], p[1] + t * d[1]])
            .collect();
        self.with_nodes(nodes)
    }

    /// True when all interface loops are simple and pairwise disjoint.
    pub fn loops_are_simple(&self) -> bool {
        let pts = self.loop_points();
        for (i, a) in pts.iter().enumerate() {
            if !geometry::polygon_is_simple(a) {
                return false;
            }
            for b in &pts[i + 1..] {
                if !geometry::polygons_disjoint_edges(a, b) {
                    return false;
                }
            }
        }
        true
    }
}

/// Convenience re-export of the free-function form used throughout the docs.
pub fn apply_displacement(mesh: &Mesh, v: &VectorField, t: f64) -> Mesh {
    mesh.apply_displacement(v, t)
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    /// 4x4 grid on [0,4]^2 whose central 2x2 block is labelled "in".
    pub fn grid_with_block() -> Mesh {
        let n = 4;
        let mut nodes = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                nodes.push([i as f64, j as f64]);
            }
        }
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let mut tris = Vec::new();
        let mut reg = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let inside = (1..3).contains(&i) && (1..3).contains(&j);
                tris.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                tris.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
                reg.push(inside as usize);
                reg.push(inside as usize);
            }
        }
        Mesh::new(nodes, tris, reg, vec!["out".into(), "in".into()]).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::tests_support::grid_with_block;
    use super::*;

    fn two_triangle_square() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![0, 0],
            vec!["out".into()],
        )
        .unwrap()
    }

    #[test]
    fn smallest_valid_mesh() {
        let m = two_triangle_square();
        assert_eq!(m.num_nodes(), 4);
        assert_eq!(m.num_triangles(), 2);
        assert!(m.loops().is_empty());
        assert_eq!(m.boundary_edges().len(), 4);
        assert!((0..4).all(|v| m.is_boundary_node(v)));
    }

    #[test]
    fn clockwise_triangle_is_reoriented() {
        let m = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 2, 1], [0, 2, 3]],
            vec![0, 0],
            vec!["out".into()],
        )
        .unwrap();
        assert!((0..2).all(|t| m.triangle_area(t) > 0.0));
    }

    #[test]
    fn degenerate_triangle_is_rejected() {
        let err = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            vec![[0, 1, 2]],
            vec![0],
            vec!["out".into()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Topology(_)));
    }

    #[test]
    fn block_interface_loop() {
        let m = grid_with_block();
        assert_eq!(m.loops().len(), 1);
        let lp = &m.loops()[0];
        assert_eq!(lp.len(), 8);
        assert_eq!(m.region_names()[lp.region], "in");
        let pts = lp.points(&m);
        assert!(geometry::polygon_area(&pts) > 0.0);
        assert_eq!(geometry::winding_number([2.0, 2.0], &pts), 1);
        assert!((m.interface_length() - 8.0).abs() < 1e-14);
        // normals point away from the block centre
        for ((a, _), n) in lp.segments().zip(lp.outward_normals(&m)) {
            let p = m.nodes()[a];
            assert!(geometry::dot(n, geometry::sub(p, [2.0, 2.0])) > 0.0);
        }
        assert!((m.total_area() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn outer_region_is_renumbered_to_zero() {
        let base = grid_with_block();
        let swapped: Vec<usize> = base.tri_region().iter().map(|r| 1 - r).collect();
        let m = Mesh::new(
            base.nodes().to_vec(),
            base.triangles().to_vec(),
            swapped,
            vec!["in".into(), "out".into()],
        )
        .unwrap();
        assert_eq!(m.region_names()[0], "out");
        assert_eq!(m.loops()[0].region, 1);
    }

    #[test]
    fn displacement_roundtrip_and_identity() {
        let m = grid_with_block();
        let v = VectorField::from_fn(m.nodes(), |p| [0.1 * p[1], -0.05 * p[0] * p[0]]);
        assert_eq!(m.apply_displacement(&v, 0.0), m);
        assert_eq!(m.apply_displacement(&VectorField::zeros(m.num_nodes()), 0.7), m);
        let back = m.apply_displacement(&v, 0.3).apply_displacement(&v, -0.3);
        for (p, q) in back.nodes().iter().zip(m.nodes()) {
            assert!((p[0] - q[0]).abs() <= 1e-14 && (p[1] - q[1]).abs() <= 1e-14);
        }
    }

    #[test]
    fn boundary_stays_fixed_under_interior_translation() {
        let m = grid_with_block();
        let v = VectorField(
            (0..m.num_nodes())
                .map(|i| if m.is_boundary_node(i) { [0.0, 0.0] } else { [0.2, 0.1] })
                .collect(),
        );
        let moved = m.apply_displacement(&v, 1.0);
        for i in 0..m.num_nodes() {
            let (p, q) = (m.nodes()[i], moved.nodes()[i]);
            if m.is_boundary_node(i) {
                assert_eq!(p, q);
            } else {
                assert_eq!(q, [p[0] + 0.2, p[1] + 0.1]);
            }
        }
    }

    #[test]
    fn open_chain_is_a_topology_error() {
        let err = chain_closed_loops(&[[0, 1], [1, 2], [2, 3]]).unwrap_err();
        assert!(err.to_string().contains("not closed"));
        let ok = chain_closed_loops(&[[0, 1], [1, 2], [2, 0], [5, 6], [6, 7], [7, 5]]).unwrap();
        assert_eq!(ok.len(), 2);
    }
}
