//! Geometric error metrics between a fitted surface and a reference mesh.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::image::ImageBuffer;
use crate::mesh::Mesh;
use crate::render::rasterize;

type V3 = Vector3<f64>;

fn v3(p: [f64; 3]) -> V3 {
    V3::new(p[0], p[1], p[2])
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk over the
/// vertex, edge and face cases).
pub fn closest_point_on_triangle(p: [f64; 3], a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    let (p, a, b, c) = (v3(p), v3(a), v3(b), v3(c));
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    let out = |v: V3| [v.x, v.y, v.z];
    if d1 <= 0.0 && d2 <= 0.0 {
        return out(a);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return out(b);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return out(a + ab * (d1 / (d1 - d3)));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return out(c);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return out(a + ac * (d2 / (d2 - d6)));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return out(b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6))));
    }
    let denom = 1.0 / (va + vb + vc);
    out(a + ab * (vb * denom) + ac * (vc * denom))
}

pub fn point_triangle_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    (v3(closest_point_on_triangle(p, a, b, c)) - v3(p)).norm()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshDistances {
    pub distances: Vec<f64>,
    /// Zero-area triangles ignored during the search.
    pub degenerate_skipped: usize,
}

/// Exact Euclidean distance from each point to the nearest triangle.
pub fn point_to_mesh_distances(points: &[[f64; 3]], mesh: &Mesh) -> Result<MeshDistances> {
    let scale = mesh
        .positions
        .iter()
        .map(|&p| v3(p).norm_squared())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let tris: Vec<[[f64; 3]; 3]> = mesh
        .triangles
        .iter()
        .map(|t| t.map(|i| mesh.positions[i as usize]))
        .filter(|[a, b, c]| (v3(*b) - v3(*a)).cross(&(v3(*c) - v3(*a))).norm() > 1e-14 * scale)
        .collect();
    let degenerate_skipped = mesh.triangles.len() - tris.len();
    if degenerate_skipped > 0 {
        log::warn!("skipped {degenerate_skipped} degenerate triangles");
    }
    if tris.is_empty() {
        return Err(Error::InvalidInput("mesh has no non-degenerate triangles".into()));
    }
    let distances = points
        .par_iter()
        .map(|&p| {
            tris.iter()
                .map(|[a, b, c]| point_triangle_distance(p, *a, *b, *c))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(MeshDistances { distances, degenerate_skipped })
}

/// Summary of a distance distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub q: f64,
    /// Nearest-rank percentile: the sorted value at 1-based rank `ceil(q * M)`.
    pub percentile: f64,
    /// Mean of the largest `ceil((1 - q) * M)` values (at least one).
    pub top_mean: f64,
    pub mean: f64,
    pub max: f64,
}

fn nearest_rank(q: f64, m: usize) -> usize {
    // Guard against q * m landing a hair above an integer.
    ((q * m as f64 - 1e-9).ceil() as usize).clamp(1, m)
}

pub fn percentile_error(distances: &[f64], q: f64) -> Result<ErrorSummary> {
    if distances.is_empty() {
        return Err(Error::InvalidInput("no distances to summarize".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidInput(format!("quantile {q} outside [0, 1]")));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidInput("non-finite distance".into()));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let top = nearest_rank(1.0 - q, m);
    Ok(ErrorSummary {
        q,
        percentile: sorted[nearest_rank(q, m) - 1],
        top_mean: sorted[m - top..].iter().sum::<f64>() / top as f64,
        mean: sorted.iter().sum::<f64>() / m as f64,
        max: sorted[m - 1],
    })
}

/// Linear blue-to-red map of `error / scale_max`, clamped to [0, 1].
pub fn heat_color(error: f64, scale_max: f64) -> [f64; 3] {
    let t = if scale_max > 0.0 { (error / scale_max).clamp(0.0, 1.0) } else { 1.0 };
    [t, 0.0, 1.0 - t]
}

/// Renders the mesh from the front (model x right, y down), scaled to fill
/// 90% of the frame, colored by per-vertex error.
pub fn error_heatmap(
    mesh: &Mesh,
    per_vertex_errors: &[f64],
    scale_max: f64,
    width: usize,
    height: usize,
) -> Result<ImageBuffer> {
    Error::check_len("per-vertex errors", mesh.positions.len(), per_vertex_errors.len())?;
    if mesh.positions.is_empty() {
        return Err(Error::InvalidInput("empty mesh".into()));
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in &mesh.positions {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let extent = [(hi[0] - lo[0]).max(1e-12), (hi[1] - lo[1]).max(1e-12)];
    let f = 0.9 * (width as f64 / extent[0]).min(height as f64 / extent[1]);
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let pose = Pose {
        pitch: 0.0,
        yaw: 0.0,
        roll: 0.0,
        f,
        t2d: [
            (width as f64 - 1.0) / 2.0 - f * center[0],
            (height as f64 - 1.0) / 2.0 - f * center[1],
        ],
    };
    let points: Vec<[f64; 2]> = mesh
        .positions
        .iter()
        .map(|p| [pose.f * p[0] + pose.t2d[0], pose.f * p[1] + pose.t2d[1]])
        .collect();
    let depths: Vec<f64> = mesh.positions.iter().map(|p| p[2]).collect();
    let colors: Vec<f64> = per_vertex_errors
        .iter()
        .flat_map(|&e| heat_color(e, scale_max))
        .collect();
    let (img, _) = rasterize(&points, &depths, &colors, &mesh.triangles, width, height)?;
    Ok(img)
}

/// Rotation followed by translation: `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotation * v3(p) + v3(self.translation);
        [q.x, q.y, q.z]
    }
}

/// Least-squares rigid alignment of `source` onto `target` (Kabsch, with
/// reflection correction).
pub fn procrustes_rigid(source: &[[f64; 3]], target: &[[f64; 3]]) -> Result<RigidTransform> {
    Error::check_len("correspondences", source.len(), target.len())?;
    if source.len() < 3 {
        return Err(Error::InvalidInput("rigid alignment needs at least 3 correspondences".into()));
    }
    let n = source.len() as f64;
    let cs = source.iter().fold(V3::zeros(), |a, &p| a + v3(p)) / n;
    let ct = target.iter().fold(V3::zeros(), |a, &p| a + v3(p)) / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (v3(*s) - cs) * (v3(*t) - ct).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (
        svd.u.ok_or_else(|| Error::Numerical("SVD failed".into()))?,
        svd.v_t.ok_or_else(|| Error::Numerical("SVD failed".into()))?,
    );
    let mut d = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = vt.transpose() * d * u.transpose();
    let t = ct - rotation * cs;
    Ok(RigidTransform { rotation, translation: [t.x, t.y, t.z] })
}
