//! Deterministic z-buffered triangle rasterizer and the full scene renderer.
//!
//! Pixel `(x, y)` is sampled at its center, which sits at coordinate
//! `(x, y)`. Shared edges follow the top-left rule so each pixel center on
//! an edge belongs to exactly one triangle. After rotation the camera looks
//! along +z: the smallest depth wins, and equal depths keep the
//! earlier triangle.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    accumulated_normals, normalize_or_sentinel, project_rotated, rotate_positions, Projection,
};
use crate::image::{ImageBuffer, Mask};
use crate::model::{assemble_shape, assemble_texture, MorphableModel};
use crate::scene::SceneParams;
use crate::shading::radiance;

pub const NO_TRIANGLE: u32 = u32::MAX;

#[inline]
fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Edge weights `w_i` (twice the signed area of the sub-triangle opposite
/// vertex `i`) and twice the signed triangle area.
#[inline]
pub(crate) fn edge_weights(q: &[[f64; 2]; 3], x: [f64; 2]) -> ([f64; 3], f64) {
    let d = |p: [f64; 2]| [p[0] - x[0], p[1] - x[1]];
    let (d0, d1, d2) = (d(q[0]), d(q[1]), d(q[2]));
    let w = [cross2(d1, d2), cross2(d2, d0), cross2(d0, d1)];
    let area = cross2(
        [q[1][0] - q[0][0], q[1][1] - q[0][1]],
        [q[2][0] - q[0][0], q[2][1] - q[0][1]],
    );
    (w, area)
}

/// Barycentric coordinates of `x`; may be negative outside the triangle.
#[inline]
pub(crate) fn barycentric(q: &[[f64; 2]; 3], x: [f64; 2]) -> [f64; 3] {
    let (w, area) = edge_weights(q, x);
    [w[0] / area, w[1] / area, w[2] / area]
}

/// Affine form `c0 + b1 (c1 - c0) + b2 (c2 - c0)`: exact when all three
/// attributes are equal. `b[0]` is implied.
#[inline]
pub(crate) fn interpolate(b: &[f64; 3], c: [&[f64]; 3]) -> [f64; 3] {
    std::array::from_fn(|k| c[0][k] + b[1] * (c[1][k] - c[0][k]) + b[2] * (c[2][k] - c[0][k]))
}

fn is_top_left(from: [f64; 2], to: [f64; 2]) -> bool {
    let d = [to[0] - from[0], to[1] - from[1]];
    d[1] < 0.0 || (d[1] == 0.0 && d[0] > 0.0)
}

struct Setup {
    index: u32,
    q: [[f64; 2]; 3],
    sign: f64,
    top_left: [bool; 3],
    x_range: (usize, usize),
}

impl Setup {
    fn covers(&self, x: [f64; 2]) -> Option<[f64; 3]> {
        let (w, area) = edge_weights(&self.q, x);
        for k in 0..3 {
            let e = self.sign * w[k];
            if e < 0.0 || (e == 0.0 && !self.top_left[k]) {
                return None;
            }
        }
        Some([w[0] / area, w[1] / area, w[2] / area])
    }
}

/// Full rasterizer output. `triangle_ids` holds the winning triangle per
/// pixel or [`NO_TRIANGLE`].
#[derive(Debug, Clone)]
pub struct Raster {
    pub image: ImageBuffer,
    pub coverage: Mask,
    pub triangle_ids: Vec<u32>,
    pub depth: Vec<f64>,
}

pub fn rasterize_full(
    points: &[[f64; 2]],
    depths: &[f64],
    colors: &[f64],
    triangles: &[[u32; 3]],
    width: usize,
    height: usize,
) -> Result<Raster> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput(format!("image size {width}x{height} is empty")));
    }
    Error::check_len("depths", points.len(), depths.len())?;
    Error::check_len("colors", 3 * points.len(), colors.len())?;
    if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= points.len())) {
        return Err(Error::InvalidInput(format!("triangle {t:?} out of range")));
    }

    let mut rows: Vec<Vec<Setup>> = (0..height).map(|_| Vec::new()).collect();
    for (ti, t) in triangles.iter().enumerate() {
        let q = t.map(|i| points[i as usize]);
        if q.iter().flatten().any(|v| !v.is_finite()) {
            continue;
        }
        let (_, area) = edge_weights(&q, [0.0, 0.0]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let sign = area.signum();
        let top_left = std::array::from_fn(|k| {
            let (a, b) = (q[(k + 1) % 3], q[(k + 2) % 3]);
            if sign > 0.0 {
                is_top_left(a, b)
            } else {
                is_top_left(b, a)
            }
        });
        let lo = |k: usize| q.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = |k: usize| q.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        let (x0, x1, y0, y1) = (lo(0).ceil(), hi(0).floor(), lo(1).ceil(), hi(1).floor());
        if x1 < 0.0 || y1 < 0.0 || x0 > (width - 1) as f64 || y0 > (height - 1) as f64 {
            continue;
        }
        let x_range = (x0.max(0.0) as usize, x1.min((width - 1) as f64) as usize);
        let (ya, yb) = (y0.max(0.0) as usize, y1.min((height - 1) as f64) as usize);
        for row in &mut rows[ya..=yb] {
            row.push(Setup { index: ti as u32, q, sign, top_left, x_range });
        }
    }

    let mut image = vec![0.0; width * height * 3];
    let mut coverage = vec![false; width * height];
    let mut ids = vec![NO_TRIANGLE; width * height];
    let mut zbuf = vec![f64::INFINITY; width * height];

    image
        .par_chunks_mut(3 * width)
        .zip(coverage.par_chunks_mut(width))
        .zip(ids.par_chunks_mut(width))
        .zip(zbuf.par_chunks_mut(width))
        .enumerate()
        .for_each(|(y, (((img_row, cov_row), id_row), z_row))| {
            for s in &rows[y] {
                let t = triangles[s.index as usize];
                for x in s.x_range.0..=s.x_range.1 {
                    let Some(b) = s.covers([x as f64, y as f64]) else {
                        continue;
                    };
                    let z = b[0] * depths[t[0] as usize]
                        + b[1] * depths[t[1] as usize]
                        + b[2] * depths[t[2] as usize];
                    if !(z < z_row[x]) {
                        continue;
                    }
                    z_row[x] = z;
                    id_row[x] = s.index;
                    cov_row[x] = true;
                    let c = interpolate(&b, t.map(|i| &colors[3 * i as usize..3 * i as usize + 3]));
                    for k in 0..3 {
                        img_row[3 * x + k] = c[k].clamp(0.0, 1.0);
                    }
                }
            }
        });

    Ok(Raster {
        image: ImageBuffer::from_vec(width, height, image)?,
        coverage: Mask::from_vec(width, height, coverage)?,
        triangle_ids: ids,
        depth: zbuf,
    })
}

/// Rasterizes per-vertex colors, returning the image and its coverage mask.
pub fn rasterize(
    points: &[[f64; 2]],
    depths: &[f64],
    colors: &[f64],
    triangles: &[[u32; 3]],
    width: usize,
    height: usize,
) -> Result<(ImageBuffer, Mask)> {
    let r = rasterize_full(points, depths, colors, triangles, width, height)?;
    Ok((r.image, r.coverage))
}

/// Intermediate quantities of the forward model, kept for gradients.
pub(crate) struct SceneEval {
    pub shape: Vec<f64>,
    pub rotation: Matrix3<f64>,
    pub rotated: Vec<[f64; 3]>,
    pub accumulated: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
    pub albedo: Vec<f64>,
    pub radiance: Vec<f64>,
    pub colors: Vec<f64>,
    pub projection: Projection,
}

pub(crate) fn evaluate_scene(model: &MorphableModel, params: &SceneParams) -> Result<SceneEval> {
    params.validate()?;
    let shape = assemble_shape(model, &params.shape)?;
    let rotation = params.pose.rotation();
    let rotated = rotate_positions(&shape, &rotation);
    let accumulated = accumulated_normals(&rotated, model.triangles());
    let normals: Vec<[f64; 3]> = accumulated.iter().map(|&m| normalize_or_sentinel(m)).collect();
    let albedo = assemble_texture(model, &params.texture)?;
    let radiance: Vec<f64> = normals.iter().map(|&n| radiance(n, &params.gamma.0)).collect();
    let colors = albedo
        .chunks_exact(3)
        .zip(&radiance)
        .flat_map(|(a, &r)| a.iter().map(move |c| c * r))
        .collect();
    let projection = project_rotated(&rotated, &params.pose);
    Ok(SceneEval {
        shape,
        rotation,
        rotated,
        accumulated,
        normals,
        albedo,
        radiance,
        colors,
        projection,
    })
}

/// Assembles, shades (normals in the camera frame), projects and rasterizes
/// the model under `params`.
pub fn render_scene_full(
    model: &MorphableModel,
    params: &SceneParams,
    width: usize,
    height: usize,
) -> Result<Raster> {
    let eval = evaluate_scene(model, params)?;
    rasterize_full(
        &eval.projection.points,
        &eval.projection.depths,
        &eval.colors,
        model.triangles(),
        width,
        height,
    )
}

pub fn render_scene(
    model: &MorphableModel,
    params: &SceneParams,
    width: usize,
    height: usize,
) -> Result<(ImageBuffer, Mask)> {
    let r = render_scene_full(model, params, width, height)?;
    Ok((r.image, r.coverage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use crate::model::synth_model;
    use crate::shading::LightingCoeffs;

    fn flat(points: &[[f64; 2]], color: [f64; 3]) -> Vec<f64> {
        points.iter().flat_map(|_| color).collect()
    }

    #[test]
    fn single_triangle_fills_exactly_the_enclosed_centers() {
        let pts = [[0.5, 0.5], [6.5, 0.5], [0.5, 6.5]];
        let c = [0.2, 0.4, 0.6];
        let (img, cov) = rasterize(&pts, &[1.0; 3], &flat(&pts, c), &[[0, 1, 2]], 8, 8).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let inside = x >= 1 && y >= 1 && x + y <= 6;
                assert_eq!(cov.get(x, y), inside, "pixel ({x},{y})");
                let want = if inside { c } else { [0.0; 3] };
                assert_eq!(img.get(x, y), want);
            }
        }
    }

    #[test]
    fn nearer_triangle_wins() {
        let pts = [[0.5, 0.5], [9.5, 0.5], [0.5, 9.5], [0.5, 0.5], [9.5, 0.5], [0.5, 9.5]];
        let depths = [2.0, 2.0, 2.0, 1.0, 1.0, 1.0];
        let mut colors = flat(&pts[..3], [1.0, 0.0, 0.0]);
        colors.extend(flat(&pts[3..], [0.0, 1.0, 0.0]));
        for tris in [[[0, 1, 2], [3, 4, 5]], [[3, 4, 5], [0, 1, 2]]] {
            let (img, _) = rasterize(&pts, &depths, &colors, &tris, 10, 10).unwrap();
            assert_eq!(img.get(2, 2), [0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn barycenter_color_is_average() {
        let pts = [[1.0, 1.0], [61.0, 1.0], [31.0, 61.0]];
        let colors = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let (img, _) = rasterize(&pts, &[1.0; 3], &colors, &[[0, 1, 2]], 64, 64).unwrap();
        let c = img.get(31, 21);
        for v in c {
            assert!((v - 1.0 / 3.0).abs() < 0.01, "{c:?}");
        }
    }

    #[test]
    fn shared_edge_pixels_belong_to_one_triangle() {
        // Square split along the diagonal, with integer (pixel-center) vertices
        // so many centers fall exactly on edges.
        let pts = [[1.0, 1.0], [7.0, 1.0], [7.0, 7.0], [1.0, 7.0]];
        let tris = [[0, 1, 2], [0, 2, 3]];
        let r = rasterize_full(&pts, &[1.0; 4], &[0.5; 12], &tris, 9, 9).unwrap();
        for y in 0..9 {
            for x in 0..9 {
                let inside_diag = (1..7).contains(&x) && (1..7).contains(&y);
                assert_eq!(r.coverage.get(x, y), inside_diag, "({x},{y})");
            }
        }
        // Diagonal centers go to exactly one of the two.
        let on_diag: Vec<u32> = (1..7).map(|i| r.triangle_ids[i * 9 + i]).collect();
        assert!(on_diag.iter().all(|&t| t == on_diag[0]));
    }

    #[test]
    fn winding_does_not_change_coverage() {
        let pts = [[0.3, 0.2], [7.7, 2.1], [2.2, 6.9]];
        let a = rasterize(&pts, &[0.0; 3], &[1.0; 9], &[[0, 1, 2]], 8, 8).unwrap().1;
        let b = rasterize(&pts, &[0.0; 3], &[1.0; 9], &[[0, 2, 1]], 8, 8).unwrap().1;
        assert_eq!(a, b);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let pts = [[0.0, 0.0]; 3];
        assert!(rasterize(&pts, &[0.0; 3], &[0.0; 9], &[[0, 1, 2]], 0, 4).is_err());
        assert!(rasterize(&pts, &[0.0; 2], &[0.0; 9], &[[0, 1, 2]], 4, 4).is_err());
        assert!(rasterize(&pts, &[0.0; 3], &[0.0; 9], &[[0, 1, 3]], 4, 4).is_err());
    }

    fn frontal(f: f64, size: usize) -> SceneParams {
        let c = (size as f64 - 1.0) / 2.0;
        SceneParams::neutral(Pose { pitch: 0.0, yaw: 0.0, roll: 0.0, f, t2d: [c, c] })
    }

    #[test]
    fn frontal_render_is_roughly_symmetric() {
        let m = synth_model(7, 300).unwrap();
        let (_, cov) = render_scene(&m, &frontal(20.0, 64), 64, 64).unwrap();
        let mut left = 0usize;
        let mut right = 0usize;
        for y in 0..64 {
            for x in 0..64 {
                if cov.get(x, y) {
                    if x < 32 {
                        left += 1;
                    } else {
                        right += 1;
                    }
                }
            }
        }
        assert!(left > 0);
        let diff = (left as f64 - right as f64).abs() / (left + right) as f64;
        assert!(diff < 0.02, "left {left} right {right}");
    }

    #[test]
    fn doubling_scale_quadruples_area() {
        let m = synth_model(7, 300).unwrap();
        let (_, a) = render_scene(&m, &frontal(12.0, 96), 96, 96).unwrap();
        let (_, b) = render_scene(&m, &frontal(24.0, 96), 96, 96).unwrap();
        let ratio = b.count() as f64 / a.count() as f64;
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn zero_light_renders_black() {
        let m = synth_model(7, 300).unwrap();
        let mut p = frontal(20.0, 64);
        p.gamma = LightingCoeffs([0.0; 9]);
        let (img, cov) = render_scene(&m, &p, 64, 64).unwrap();
        assert!(cov.count() > 0);
        assert!(img.data().iter().all(|&v| v == 0.0));
    }
}
