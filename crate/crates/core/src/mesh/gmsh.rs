//! Gmsh 2.2 ASCII reader and writer (triangles, lines, physical names,
//! scalar node data).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{chain_closed_loops, Mesh};
use crate::error::{Error, Result};
use crate::field::ScalarField;

/// Parsed file: the mesh plus any `$NodeData` scalar fields, in file order.
#[derive(Debug, Clone)]
pub struct MshContents {
    pub mesh: Mesh,
    pub node_data: Vec<(String, ScalarField)>,
}

impl MshContents {
    pub fn field(&self, name: &str) -> Option<&ScalarField> {
        self.node_data.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            msg: msg.into(),
        }
    }

    /// Next non-empty line, trimmed.
    fn next(&mut self) -> Option<&'a str> {
        for (i, l) in self.it.by_ref() {
            self.line = i + 1;
            let t = l.trim();
            if !t.is_empty() {
                return Some(t);
            }
        }
        None
    }

    fn expect_line(&mut self, what: &str) -> Result<&'a str> {
        self.next().ok_or_else(|| self.err(format!("unexpected end of file, expected {what}")))
    }

    fn expect_exact(&mut self, tag: &str) -> Result<()> {
        let l = self.expect_line(tag)?;
        if l == tag {
            Ok(())
        } else {
            Err(self.err(format!("expected '{tag}', found '{l}'")))
        }
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let l = self.expect_line(what)?;
        l.parse()
            .map_err(|_| self.err(format!("expected {what} count, found '{l}'")))
    }

    fn fields<T: std::str::FromStr>(&self, l: &str, what: &str) -> Result<Vec<T>> {
        l.split_whitespace()
            .map(|s| s.parse::<T>().map_err(|_| self.err(format!("bad {what} entry '{s}'"))))
            .collect()
    }
}

fn unquote(s: &str) -> String {
    s.trim().trim_matches('"').to_string()
}

pub fn parse_msh(text: &str, origin: &Path) -> Result<MshContents> {
    let mut r = Lines {
        it: text.lines().enumerate(),
        path: origin,
        line: 0,
    };
    let mut names: HashMap<(usize, i64), String> = HashMap::new();
    let mut node_ids: HashMap<i64, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut tri: Vec<([i64; 3], i64)> = Vec::new();
    let mut lines: Vec<([i64; 2], i64, usize)> = Vec::new();
    let mut raw_data: Vec<(String, Vec<(i64, f64)>, usize)> = Vec::new();
    let mut seen_format = false;
    let mut seen_nodes = false;
    let mut seen_elements = false;

    while let Some(l) = r.next() {
        match l {
            "$MeshFormat" => {
                let v = r.expect_line("format line")?;
                let parts: Vec<&str> = v.split_whitespace().collect();
                if parts.len() < 3 || !parts[0].starts_with("2.") {
                    return Err(r.err(format!("unsupported mesh format '{v}' (need 2.2 ASCII)")));
                }
                if parts[1] != "0" {
                    return Err(r.err("binary files are not supported"));
                }
                r.expect_exact("$EndMeshFormat")?;
                seen_format = true;
            }
            "$PhysicalNames" => {
                let n = r.count("physical name")?;
                for _ in 0..n {
                    let l = r.expect_line("physical name")?;
                    let mut it = l.splitn(3, char::is_whitespace);
                    let dim = it.next().and_then(|s| s.parse::<usize>().ok());
                    let tag = it.next().and_then(|s| s.trim().parse::<i64>().ok());
                    let name = it.next().map(unquote);
                    match (dim, tag, name) {
                        (Some(d), Some(t), Some(nm)) if !nm.is_empty() => {
                            names.insert((d, t), nm);
                        }
                        _ => return Err(r.err(format!("malformed physical name '{l}'"))),
                    }
                }
                r.expect_exact("$EndPhysicalNames")?;
            }
            "$Nodes" => {
                let n = r.count("node")?;
                for _ in 0..n {
                    let l = r.expect_line("node")?;
                    let f: Vec<&str> = l.split_whitespace().collect();
                    if f.len() < 3 {
                        return Err(r.err(format!("node line needs id x y [z], found '{l}'")));
                    }
                    let id: i64 = f[0].parse().map_err(|_| r.err(format!("bad node id '{}'", f[0])))?;
                    let xy: Vec<f64> = r.fields(&f[1..3].join(" "), "coordinate")?;
                    if !(xy[0].is_finite() && xy[1].is_finite()) {
                        return Err(r.err("non-finite coordinate"));
                    }
                    if node_ids.insert(id, nodes.len()).is_some() {
                        return Err(r.err(format!("duplicate node id {id}")));
                    }
                    nodes.push([xy[0], xy[1]]);
                }
                r.expect_exact("$EndNodes")?;
                seen_nodes = true;
            }
            "$Elements" => {
                let n = r.count("element")?;
                for _ in 0..n {
                    let l = r.expect_line("element")?;
                    let f: Vec<i64> = r.fields(l, "element")?;
                    if f.len() < 3 {
                        return Err(r.err(format!("short element line '{l}'")));
                    }
                    let (ty, ntags) = (f[1], f[2]);
                    if ntags < 0 || f.len() < 3 + ntags as usize {
                        return Err(r.err("bad element tag count"));
                    }
                    let phys = if ntags > 0 { f[3] } else { 0 };
                    let vs = &f[3 + ntags as usize..];
                    let need = match ty {
                        1 => 2,
                        2 => 3,
                        15 => 1,
                        _ => return Err(r.err(format!("unsupported element type {ty}"))),
                    };
                    if vs.len() != need {
                        return Err(r.err(format!("element type {ty} needs {need} nodes, found {}", vs.len())));
                    }
                    match ty {
                        1 => lines.push(([vs[0], vs[1]], phys, r.line)),
                        2 => tri.push(([vs[0], vs[1], vs[2]], phys)),
                        _ => {}
                    }
                }
                r.expect_exact("$EndElements")?;
                seen_elements = true;
            }
            "$NodeData" => {
                let start = r.line;
                let ns = r.count("string tag")?;
                let mut name = String::new();
                for k in 0..ns {
                    let s = unquote(r.expect_line("string tag")?);
                    if k == 0 {
                        name = s;
                    }
                }
                let nr = r.count("real tag")?;
                for _ in 0..nr {
                    r.expect_line("real tag")?;
                }
                let ni = r.count("integer tag")?;
                let mut ints = Vec::new();
                for _ in 0..ni {
                    let l = r.expect_line("integer tag")?;
                    ints.push(l.parse::<i64>().map_err(|_| r.err(format!("bad integer tag '{l}'")))?);
                }
                if ni < 3 {
                    return Err(r.err("node data needs time step, component and count tags"));
                }
                if ints[1] != 1 {
                    return Err(r.err(format!("only scalar node data is supported, found {} components", ints[1])));
                }
                let mut vals = Vec::new();
                for _ in 0..ints[2].max(0) {
                    let l = r.expect_line("node value")?;
                    let mut it = l.split_whitespace();
                    let id = it.next().and_then(|s| s.parse::<i64>().ok());
                    let v = it.next().and_then(|s| s.parse::<f64>().ok());
                    match (id, v) {
                        (Some(id), Some(v)) => vals.push((id, v)),
                        _ => return Err(r.err(format!("malformed node value '{l}'"))),
                    }
                }
                r.expect_exact("$EndNodeData")?;
                raw_data.push((name, vals, start));
            }
            s if s.starts_with('$') && !s.starts_with("$End") => {
                let end = format!("$End{}", &s[1..]);
                loop {
                    match r.next() {
                        Some(l) if l == end => break,
                        Some(_) => {}
                        None => return Err(r.err(format!("section {s} is not terminated"))),
                    }
                }
            }
            other => return Err(r.err(format!("unexpected line '{other}'"))),
        }
    }
    if !seen_format {
        return Err(r.err("missing $MeshFormat section"));
    }
    if !(seen_nodes && seen_elements) {
        return Err(r.err("missing $Nodes or $Elements section"));
    }

    let node = |id: i64, line: usize| {
        node_ids.get(&id).copied().ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg: format!("element references unknown node {id}"),
        })
    };

    // region names, in order of first appearance
    let mut region_index: BTreeMap<i64, usize> = BTreeMap::new();
    let mut regions = Vec::new();
    let mut triangles = Vec::with_capacity(tri.len());
    let mut tri_region = Vec::with_capacity(tri.len());
    for (vs, phys) in &tri {
        let idx = *region_index.entry(*phys).or_insert_with(|| {
            regions.push(names.get(&(2, *phys)).cloned().unwrap_or_else(|| format!("region{phys}")));
            regions.len() - 1
        });
        triangles.push([node(vs[0], r.line)?, node(vs[1], r.line)?, node(vs[2], r.line)?]);
        tri_region.push(idx);
    }

    let mut interface_lines = Vec::new();
    for (vs, phys, line) in &lines {
        let name = names.get(&(1, *phys)).map(String::as_str).unwrap_or("");
        if name.starts_with("interface") {
            interface_lines.push([node(vs[0], *line)?, node(vs[1], *line)?]);
        }
    }
    // open chains are reported before the label-derived check
    chain_closed_loops(&interface_lines)?;

    let mesh = Mesh::new(nodes, triangles, tri_region, regions)?;
    if !interface_lines.is_empty() {
        let key = |e: &[usize; 2]| (e[0].min(e[1]), e[0].max(e[1]));
        let tagged: HashSet<_> = interface_lines.iter().map(key).collect();
        let derived: HashSet<_> = mesh.interface_edges().iter().map(key).collect();
        if tagged != derived {
            return Err(Error::Topology(format!(
                "{}: tagged interface lines do not match the region labels",
                origin.display()
            )));
        }
    }

    let mut node_data = Vec::new();
    for (name, vals, line) in raw_data {
        let mut f = vec![f64::NAN; mesh.num_nodes()];
        for (id, v) in vals {
            f[node(id, line)?] = v;
        }
        if f.iter().any(|v| v.is_nan()) {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line,
                msg: format!("node data '{name}' does not cover every node"),
            });
        }
        node_data.push((name, ScalarField(f)));
    }
    Ok(MshContents { mesh, node_data })
}

pub fn read_msh(path: impl AsRef<Path>) -> Result<MshContents> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_msh(&text, path)
}

pub fn msh_string(mesh: &Mesh, node_data: &[(&str, &ScalarField)]) -> String {
    let nr = mesh.region_names().len();
    let (boundary_tag, interface_tag) = (nr + 1, nr + 2);
    let mut s = String::new();
    s.push_str("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n");
    let _ = writeln!(s, "$PhysicalNames\n{}", nr + 2);
    let _ = writeln!(s, "1 {boundary_tag} \"boundary\"");
    let _ = writeln!(s, "1 {interface_tag} \"interface\"");
    for (i, name) in mesh.region_names().iter().enumerate() {
        let _ = writeln!(s, "2 {} \"{}\"", i + 1, name);
    }
    s.push_str("$EndPhysicalNames\n");
    let _ = writeln!(s, "$Nodes\n{}", mesh.num_nodes());
    for (i, p) in mesh.nodes().iter().enumerate() {
        let _ = writeln!(s, "{} {} {} 0", i + 1, p[0], p[1]);
    }
    s.push_str("$EndNodes\n");
    let iface = mesh.interface_edges();
    let total = mesh.boundary_edges().len() + iface.len() + mesh.num_triangles();
    let _ = writeln!(s, "$Elements\n{total}");
    let mut id = 1;
    for e in mesh.boundary_edges() {
        let _ = writeln!(s, "{id} 1 2 {boundary_tag} 1 {} {}", e[0] + 1, e[1] + 1);
        id += 1;
    }
    for e in &iface {
        let _ = writeln!(s, "{id} 1 2 {interface_tag} 2 {} {}", e[0] + 1, e[1] + 1);
        id += 1;
    }
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let r = mesh.tri_region()[t] + 1;
        let _ = writeln!(s, "{id} 2 2 {r} {r} {} {} {}", tri[0] + 1, tri[1] + 1, tri[2] + 1);
        id += 1;
    }
    s.push_str("$EndElements\n");
    for (name, f) in node_data {
        assert_eq!(f.len(), mesh.num_nodes(), "node data length");
        let _ = writeln!(s, "$NodeData\n1\n\"{name}\"\n1\n0.0\n3\n0\n1\n{}", f.len());
        for (i, v) in f.values().iter().enumerate() {
            let _ = writeln!(s, "{} {}", i + 1, v);
        }
        s.push_str("$EndNodeData\n");
    }
    s
}

pub fn write_msh(path: impl AsRef<Path>, mesh: &Mesh, node_data: &[(&str, &ScalarField)]) -> Result<()> {
    let path: PathBuf = path.as_ref().to_path_buf();
    std::fs::write(&path, msh_string(mesh, node_data)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE: &str = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n\
$PhysicalNames\n1\n2 1 \"out\"\n$EndPhysicalNames\n\
$Nodes\n4\n1 0 0 0\n2 1 0 0\n3 1 1 0\n4 0 1 0\n$EndNodes\n\
$Elements\n2\n1 2 2 1 1 1 2 3\n2 2 2 1 1 1 3 4\n$EndElements\n";

    #[test]
    fn minimal_square() {
        let c = parse_msh(SQUARE, Path::new("sq.msh")).unwrap();
        assert_eq!(c.mesh.num_nodes(), 4);
        assert_eq!(c.mesh.num_triangles(), 2);
        assert!(c.mesh.loops().is_empty());
        assert_eq!(c.mesh.region_names(), ["out"]);
    }

    #[test]
    fn malformed_section_reports_line() {
        let bad = SQUARE.replace("3 1 1 0", "3 1 one 0");
        match parse_msh(&bad, Path::new("bad.msh")).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 12),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unsupported_format_version() {
        let bad = SQUARE.replace("2.2 0 8", "4.1 0 8");
        assert!(matches!(parse_msh(&bad, Path::new("v4.msh")), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn unclosed_interface_chain() {
        let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n\
$PhysicalNames\n2\n1 9 \"interface\"\n2 1 \"out\"\n$EndPhysicalNames\n\
$Nodes\n4\n1 0 0 0\n2 1 0 0\n3 1 1 0\n4 0 1 0\n$EndNodes\n\
$Elements\n4\n1 1 2 9 9 1 3\n2 1 2 9 9 3 4\n3 2 2 1 1 1 2 3\n4 2 2 1 1 1 3 4\n$EndElements\n";
        let err = parse_msh(text, Path::new("open.msh")).unwrap_err();
        assert!(matches!(err, Error::Topology(_)), "{err}");
    }

    #[test]
    fn node_data_roundtrip() {
        let m = parse_msh(SQUARE, Path::new("sq.msh")).unwrap().mesh;
        let f = ScalarField(vec![0.1, -2.5, 1e-300, 3.0]);
        let text = msh_string(&m, &[("ybar", &f)]);
        let back = parse_msh(&text, Path::new("rt.msh")).unwrap();
        assert_eq!(back.mesh, m);
        assert_eq!(back.field("ybar"), Some(&f));
    }
}
