//! Pose, rotation, weak-perspective projection, vertex normals and landmark
//! gathering.
//!
//! Rotation convention: `R = Rz(roll) * Ry(yaw) * Rx(pitch)`, rotations about
//! the fixed axes. Projection is scaled orthographic:
//! `p = f * (R v)_xy + t2d`, with the rotated z kept as depth. The image
//! frame has x to the right, y down, and the top-left pixel center at the
//! origin.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::NUM_LANDMARKS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
    /// Pixels per model unit.
    pub f: f64,
    pub t2d: [f64; 2],
}

impl Pose {
    pub fn validate(&self) -> Result<()> {
        let all = [self.pitch, self.yaw, self.roll, self.f, self.t2d[0], self.t2d[1]];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite pose {self:?}")));
        }
        if self.f <= 0.0 {
            return Err(Error::InvalidInput(format!("pose scale must be positive, got {}", self.f)));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        euler_matrix(self.pitch, self.yaw, self.roll)
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

fn euler_matrix(pitch: f64, yaw: f64, roll: f64) -> Matrix3<f64> {
    rot_z(roll) * rot_y(yaw) * rot_x(pitch)
}

pub fn rotation_from_euler(pitch: f64, yaw: f64, roll: f64) -> Result<Matrix3<f64>> {
    if ![pitch, yaw, roll].iter().all(|a| a.is_finite()) {
        return Err(Error::InvalidInput("non-finite Euler angle".into()));
    }
    Ok(euler_matrix(pitch, yaw, roll))
}

/// Partial derivatives of the rotation with respect to (pitch, yaw, roll).
pub(crate) fn rotation_partials(pitch: f64, yaw: f64, roll: f64) -> [Matrix3<f64>; 3] {
    let (rx, ry, rz) = (rot_x(pitch), rot_y(yaw), rot_z(roll));
    [
        rz * ry * d_rot_x(pitch),
        rz * d_rot_y(yaw) * rx,
        d_rot_z(roll) * ry * rx,
    ]
}

/// Projected 2D points (pixels) plus the rotated depth of each vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: Vec<[f64; 2]>,
    pub depths: Vec<f64>,
}

/// Rotates interleaved positions into the camera frame.
pub(crate) fn rotate_positions(positions: &[f64], rotation: &Matrix3<f64>) -> Vec<[f64; 3]> {
    positions
        .chunks_exact(3)
        .map(|v| {
            let p = rotation * Vector3::new(v[0], v[1], v[2]);
            [p.x, p.y, p.z]
        })
        .collect()
}

pub(crate) fn project_rotated(rotated: &[[f64; 3]], pose: &Pose) -> Projection {
    let points = rotated
        .iter()
        .map(|p| [pose.f * p[0] + pose.t2d[0], pose.f * p[1] + pose.t2d[1]])
        .collect();
    let depths = rotated.iter().map(|p| p[2]).collect();
    Projection { points, depths }
}

pub fn project_vertices(positions: &[f64], pose: &Pose) -> Result<Projection> {
    if positions.len() % 3 != 0 {
        return Err(Error::InvalidInput(format!(
            "position array length {} is not divisible by 3",
            positions.len()
        )));
    }
    pose.validate()?;
    let rotated = rotate_positions(positions, &pose.rotation());
    Ok(project_rotated(&rotated, pose))
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Area-weighted sum of incident face normals at each vertex, before
/// normalization.
pub(crate) fn accumulated_normals(points: &[[f64; 3]], triangles: &[[u32; 3]]) -> Vec<[f64; 3]> {
    let mut acc = vec![[0.0; 3]; points.len()];
    for t in triangles {
        let [a, b, c] = t.map(|i| points[i as usize]);
        let n = cross(sub(b, a), sub(c, a));
        for &i in t {
            let s = &mut acc[i as usize];
            s[0] += n[0];
            s[1] += n[1];
            s[2] += n[2];
        }
    }
    acc
}

pub(crate) const NORMAL_SENTINEL: [f64; 3] = [0.0, 0.0, 1.0];

pub(crate) fn normalize_or_sentinel(v: [f64; 3]) -> [f64; 3] {
    let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if len > 0.0 && len.is_finite() {
        [v[0] / len, v[1] / len, v[2] / len]
    } else {
        NORMAL_SENTINEL
    }
}

pub(crate) fn normals_of_points(points: &[[f64; 3]], triangles: &[[u32; 3]]) -> Vec<[f64; 3]> {
    accumulated_normals(points, triangles)
        .into_iter()
        .map(normalize_or_sentinel)
        .collect()
}

/// Unit vertex normals from interleaved positions. Vertices with no incident
/// area get `(0, 0, 1)`.
pub fn vertex_normals(positions: &[f64], triangles: &[[u32; 3]]) -> Result<Vec<[f64; 3]>> {
    if positions.len() % 3 != 0 {
        return Err(Error::InvalidInput("position array length not divisible by 3".into()));
    }
    let points: Vec<[f64; 3]> = positions.chunks_exact(3).map(|v| [v[0], v[1], v[2]]).collect();
    if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= points.len())) {
        return Err(Error::InvalidInput(format!("triangle {t:?} out of range")));
    }
    Ok(normals_of_points(&points, triangles))
}

/// 68 ordered 2D landmarks in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet(Vec<[f64; 2]>);

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        Error::check_len("landmark set", NUM_LANDMARKS, points.len())?;
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite landmark coordinate".into()));
        }
        Ok(LandmarkSet(points))
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.0
    }

    pub fn translated(&self, dx: f64, dy: f64) -> LandmarkSet {
        LandmarkSet(self.0.iter().map(|p| [p[0] + dx, p[1] + dy]).collect())
    }

    /// Root-mean-square point-to-point distance.
    pub fn rmse(&self, other: &LandmarkSet) -> f64 {
        let sum: f64 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
            .sum();
        (sum / self.0.len() as f64).sqrt()
    }

    /// Parses 68 lines of `x y`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut points = Vec::with_capacity(NUM_LANDMARKS);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace().map(str::parse::<f64>);
            match (fields.next(), fields.next(), fields.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => points.push([x, y]),
                _ => {
                    return Err(Error::format(
                        format!("landmarks line {}", lineno + 1),
                        format!("expected two decimal numbers, got {line:?}"),
                    ))
                }
            }
        }
        if points.len() != NUM_LANDMARKS {
            return Err(Error::format(
                "landmarks",
                format!("expected {NUM_LANDMARKS} points, got {}", points.len()),
            ));
        }
        LandmarkSet::new(points)
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|p| format!("{} {}\n", p[0], p[1])).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn select_landmarks(projected: &[[f64; 2]], indices: &[u32]) -> Result<LandmarkSet> {
    let points = indices
        .iter()
        .map(|&i| {
            projected.get(i as usize).copied().ok_or_else(|| {
                Error::InvalidInput(format!(
                    "landmark index {i} out of range for {} vertices",
                    projected.len()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LandmarkSet::new(points)
}
