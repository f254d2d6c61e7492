//! Planar geometry primitives shared by the mesh code and the diagnostics.

pub type Point = [f64; 2];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

/// Signed area of the triangle (a, b, c); positive when counter-clockwise.
#[inline]
pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * cross(sub(b, a), sub(c, a))
}

pub fn centroid(a: Point, b: Point, c: Point) -> Point {
    [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
}

/// Signed area of a closed polygon (shoelace formula).
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| cross(poly[i], poly[(i + 1) % n]))
        .sum::<f64>()
        * 0.5
}

pub fn polygon_perimeter(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| dist(poly[i], poly[(i + 1) % n])).sum()
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi[1] > p[1]) != (pj[1] > p[1]) {
            let x = pj[0] + (p[1] - pj[1]) * (pi[0] - pj[0]) / (pi[1] - pj[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Winding number of a closed polygon around `p`.
pub fn winding_number(p: Point, poly: &[Point]) -> i32 {
    let n = poly.len();
    let mut wn = 0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if a[1] <= p[1] {
            if b[1] > p[1] && cross(sub(b, a), sub(p, a)) > 0.0 {
                wn += 1;
            }
        } else if b[1] <= p[1] && cross(sub(b, a), sub(p, a)) < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// Closest point to `p` on the segment [a, b].
pub fn closest_on_segment(p: Point, a: Point, b: Point) -> Point {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return a;
    }
    let s = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    [a[0] + s * ab[0], a[1] + s * ab[1]]
}

pub fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    dist(p, closest_on_segment(p, a, b))
}

/// Closest point to `p` on the closed polygon `poly`.
pub fn closest_on_polygon(p: Point, poly: &[Point]) -> Point {
    let n = poly.len();
    let mut best = poly[0];
    let mut best_d = f64::INFINITY;
    for i in 0..n {
        let q = closest_on_segment(p, poly[i], poly[(i + 1) % n]);
        let d = dist(p, q);
        if d < best_d {
            best_d = d;
            best = q;
        }
    }
    best
}

pub fn dist_to_polygon(p: Point, poly: &[Point]) -> f64 {
    dist(p, closest_on_polygon(p, poly))
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    cross(sub(b, a), sub(c, a))
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection test, collinear overlaps included.
pub fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True when the closed polygon has no repeated vertices and no two
/// non-adjacent edges intersect.
pub fn polygon_is_simple(poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        if poly[i] == poly[(i + 1) % n] {
            return false;
        }
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in (i + 1)..n {
            // skip edges sharing a vertex
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// True when two closed polygons share no point (edges do not cross).
pub fn polygons_disjoint_edges(a: &[Point], b: &[Point]) -> bool {
    let (na, nb) = (a.len(), b.len());
    for i in 0..na {
        for j in 0..nb {
            if segments_intersect(a[i], a[(i + 1) % na], b[j], b[(j + 1) % nb]) {
                return false;
            }
        }
    }
    true
}

/// Minimum distance between the boundaries of two closed polygons.
pub fn polygon_distance(a: &[Point], b: &[Point]) -> f64 {
    if !polygons_disjoint_edges(a, b) {
        return 0.0;
    }
    let (na, nb) = (a.len(), b.len());
    let mut d = f64::INFINITY;
    for &p in a {
        for j in 0..nb {
            d = d.min(dist_to_segment(p, b[j], b[(j + 1) % nb]));
        }
    }
    for &p in b {
        for i in 0..na {
            d = d.min(dist_to_segment(p, a[i], a[(i + 1) % na]));
        }
    }
    d
}

/// Barycentric coordinates of `p` with respect to triangle (a, b, c).
pub fn barycentric(p: Point, a: Point, b: Point, c: Point) -> [f64; 3] {
    let det = cross(sub(b, a), sub(c, a));
    let l1 = cross(sub(p, a), sub(c, a)) / det;
    let l2 = cross(sub(b, a), sub(p, a)) / det;
    [1.0 - l1 - l2, l1, l2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_area_and_orientation() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert_eq!(polygon_area(&sq), 1.0);
        assert_eq!(winding_number([0.5, 0.5], &sq), 1);
        let rev: Vec<Point> = sq.iter().rev().copied().collect();
        assert_eq!(winding_number([0.5, 0.5], &rev), -1);
        assert_eq!(winding_number([2.0, 0.5], &sq), 0);
        assert!(point_in_polygon([0.25, 0.75], &sq));
        assert!(!point_in_polygon([1.25, 0.75], &sq));
    }

    #[test]
    fn bowtie_is_not_simple() {
        let bowtie = [[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(!polygon_is_simple(&bowtie));
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert!(polygon_is_simple(&sq));
    }

    #[test]
    fn barycentric_reproduces_vertices() {
        let (a, b, c) = ([0.0, 0.0], [2.0, 0.0], [0.0, 1.0]);
        let l = barycentric([0.5, 0.25], a, b, c);
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let x = l[0] * a[0] + l[1] * b[0] + l[2] * c[0];
        let y = l[0] * a[1] + l[1] * b[1] + l[2] * c[1];
        assert!((x - 0.5).abs() < 1e-15 && (y - 0.25).abs() < 1e-15);
    }

    #[test]
    fn closest_point_on_polygon() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert_eq!(closest_on_polygon([0.5, -2.0], &sq), [0.5, 0.0]);
        assert_eq!(closest_on_polygon([3.0, 3.0], &sq), [1.0, 1.0]);
        assert!((dist_to_polygon([0.5, 0.4], &sq) - 0.4).abs() < 1e-15);
    }
}
