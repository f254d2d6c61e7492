use serde::{Deserialize, Serialize};

use super::geometry::{self, Point};
use super::Mesh;

/// Default minimum-angle floor: one degree.
pub const DEFAULT_MIN_ANGLE: f64 = std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshQualityReport {
    pub min_area: f64,
    /// Radians.
    pub min_angle: f64,
    pub max_aspect: f64,
    pub inverted: usize,
    pub min_interface_segment: f64,
}

impl MeshQualityReport {
    pub fn is_valid(&self) -> bool {
        self.is_valid_with(DEFAULT_MIN_ANGLE)
    }

    pub fn is_valid_with(&self, min_angle_floor: f64) -> bool {
        self.inverted == 0 && self.min_angle > min_angle_floor
    }
}

impl std::fmt::Display for MeshQualityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "min area {:.3e}, min angle {:.2} deg, max aspect {:.3}, inverted {}, min interface segment {:.3e}",
            self.min_area,
            self.min_angle.to_degrees(),
            self.max_aspect,
            self.inverted,
            self.min_interface_segment
        )
    }
}

pub(crate) fn min_angle_of(p: [Point; 3]) -> f64 {
    (0..3)
        .map(|k| {
            let a = geometry::sub(p[(k + 1) % 3], p[k]);
            let b = geometry::sub(p[(k + 2) % 3], p[k]);
            geometry::cross(a, b).abs().atan2(geometry::dot(a, b))
        })
        .fold(f64::INFINITY, f64::min)
}

/// Longest edge times perimeter over `4√3·area`; 1 for an equilateral triangle.
pub(crate) fn aspect_of(p: [Point; 3]) -> f64 {
    let l: Vec<f64> = (0..3).map(|k| geometry::dist(p[k], p[(k + 1) % 3])).collect();
    let lmax = l.iter().cloned().fold(0.0, f64::max);
    let area = geometry::signed_area(p[0], p[1], p[2]).abs();
    if area == 0.0 {
        return f64::INFINITY;
    }
    lmax * l.iter().sum::<f64>() / (4.0 * 3f64.sqrt() * area)
}

pub fn mesh_quality(mesh: &Mesh) -> MeshQualityReport {
    let mut r = MeshQualityReport {
        min_area: f64::INFINITY,
        min_angle: f64::INFINITY,
        max_aspect: 0.0,
        inverted: 0,
        min_interface_segment: f64::INFINITY,
    };
    for t in 0..mesh.num_triangles() {
        let p = mesh.triangle_points(t);
        let a = geometry::signed_area(p[0], p[1], p[2]);
        r.min_area = r.min_area.min(a);
        if a <= 0.0 {
            r.inverted += 1;
        }
        r.min_angle = r.min_angle.min(min_angle_of(p));
        r.max_aspect = r.max_aspect.max(aspect_of(p));
    }
    for lp in mesh.loops() {
        for l in lp.segment_lengths(mesh) {
            r.min_interface_segment = r.min_interface_segment.min(l);
        }
    }
    r
}
