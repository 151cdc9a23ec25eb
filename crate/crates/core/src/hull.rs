//! Incremental convex hull for points in strictly convex position.
//!
//! Only used to triangulate the synthetic head, whose vertices all lie on a
//! sphere before radial displacement. The hull of such a point set is a
//! closed, consistently oriented triangulation that touches every point.

use std::collections::HashSet;

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

struct Face {
    v: [u32; 3],
    normal: [f64; 3],
    offset: f64,
}

impl Face {
    fn new(points: &[[f64; 3]], v: [u32; 3]) -> Self {
        let a = points[v[0] as usize];
        let normal = cross(sub(points[v[1] as usize], a), sub(points[v[2] as usize], a));
        Face {
            v,
            normal,
            offset: dot(normal, a),
        }
    }

    fn signed_distance(&self, p: [f64; 3]) -> f64 {
        dot(self.normal, p) - self.offset
    }
}

/// Triangulates the convex hull of `points`, returning outward-oriented
/// triangles. Returns `None` if fewer than four points are affinely
/// independent.
pub(crate) fn convex_hull(points: &[[f64; 3]]) -> Option<Vec<[u32; 3]>> {
    let n = points.len();
    if n < 4 {
        return None;
    }
    let norm2 = |a: [f64; 3]| dot(a, a);

    let i0 = 0usize;
    let i1 = (0..n).max_by(|&a, &b| {
        norm2(sub(points[a], points[i0])).total_cmp(&norm2(sub(points[b], points[i0])))
    })?;
    let axis = sub(points[i1], points[i0]);
    let i2 = (0..n).max_by(|&a, &b| {
        let da = norm2(cross(axis, sub(points[a], points[i0])));
        let db = norm2(cross(axis, sub(points[b], points[i0])));
        da.total_cmp(&db)
    })?;
    let plane = cross(axis, sub(points[i2], points[i0]));
    let i3 = (0..n).max_by(|&a, &b| {
        dot(plane, sub(points[a], points[i0]))
            .abs()
            .total_cmp(&dot(plane, sub(points[b], points[i0])).abs())
    })?;
    if dot(plane, sub(points[i3], points[i0])).abs() < 1e-14 {
        return None;
    }

    let seed = [i0 as u32, i1 as u32, i2 as u32, i3 as u32];
    let centroid = seed.iter().fold([0.0; 3], |acc, &i| {
        let p = points[i as usize];
        [acc[0] + p[0] / 4.0, acc[1] + p[1] / 4.0, acc[2] + p[2] / 4.0]
    });
    let mut faces: Vec<Face> = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]]
        .iter()
        .map(|t| {
            let mut v = [seed[t[0]], seed[t[1]], seed[t[2]]];
            let f = Face::new(points, v);
            if f.signed_distance(centroid) > 0.0 {
                v.swap(1, 2);
            }
            Face::new(points, v)
        })
        .collect();

    let scale = points.iter().map(|&p| norm2(p)).fold(0.0, f64::max).max(1.0);
    let eps = 1e-12 * scale;

    for (pi, &p) in points.iter().enumerate() {
        if seed.contains(&(pi as u32)) {
            continue;
        }
        let visible: Vec<bool> = faces.iter().map(|f| f.signed_distance(p) > eps).collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let mut edges = HashSet::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
            for k in 0..3 {
                edges.insert((f.v[k], f.v[(k + 1) % 3]));
            }
        }
        let mut horizon: Vec<(u32, u32)> = edges
            .iter()
            .copied()
            .filter(|&(a, b)| !edges.contains(&(b, a)))
            .collect();
        horizon.sort_unstable();

        let mut kept: Vec<Face> = faces
            .into_iter()
            .zip(visible)
            .filter_map(|(f, v)| (!v).then_some(f))
            .collect();
        for (a, b) in horizon {
            kept.push(Face::new(points, [a, b, pi as u32]));
        }
        faces = kept;
    }

    Some(faces.into_iter().map(|f| f.v).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn octahedron_hull_is_closed_and_outward() {
        let pts = [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ];
        let tris = convex_hull(&pts).unwrap();
        assert_eq!(tris.len(), 8);
        let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &tris {
            for k in 0..3 {
                *edges.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
            let f = Face::new(&pts, *t);
            assert!(f.offset > 0.0, "face {t:?} points inward");
        }
        for (&(a, b), &c) in &edges {
            assert_eq!(c, 1);
            assert_eq!(edges.get(&(b, a)), Some(&1));
        }
    }

    #[test]
    fn coplanar_input_is_rejected() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        assert!(convex_hull(&pts).is_none());
    }
}
