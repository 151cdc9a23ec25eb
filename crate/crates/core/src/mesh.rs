//! Triangle meshes with per-vertex colors, and OBJ text I/O using the
//! extended `v x y z r g b` vertex lines.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::normals_of_points;
use crate::model::{assemble_shape, assemble_texture, MorphableModel};
use crate::scene::SceneParams;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub positions: Vec<[f64; 3]>,
    /// Albedo, unclamped.
    pub colors: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

fn triples(v: &[f64]) -> Vec<[f64; 3]> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

impl Mesh {
    pub fn new(positions: Vec<[f64; 3]>, colors: Vec<[f64; 3]>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        Error::check_len("mesh colors", positions.len(), colors.len())?;
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= positions.len())) {
            return Err(Error::InvalidInput(format!("triangle {t:?} out of range")));
        }
        let normals = normals_of_points(&positions, &triangles);
        Ok(Mesh { positions, colors, normals, triangles })
    }

    /// Model-frame mesh assembled from the coefficients in `params`
    /// (pose and lighting are not applied).
    pub fn from_model(model: &MorphableModel, params: &SceneParams) -> Result<Self> {
        let shape = assemble_shape(model, &params.shape)?;
        let albedo = assemble_texture(model, &params.texture)?;
        Mesh::new(triples(&shape), triples(&albedo), model.triangles().to_vec())
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for (p, c) in self.positions.iter().zip(&self.colors) {
            let _ = writeln!(s, "v {} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    /// Parses `v` and `f` records; other records are ignored. Vertices without
    /// colors get mid gray. Polygons are fan-triangulated.
    pub fn parse_obj(text: &str) -> Result<Self> {
        let mut positions = Vec::new();
        let mut colors = Vec::new();
        let mut faces = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let field = || format!("obj line {}", lineno + 1);
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let vals = it
                        .map(str::parse::<f64>)
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::format(field(), e.to_string()))?;
                    match vals.len() {
                        3 => colors.push([0.5; 3]),
                        6 => colors.push([vals[3], vals[4], vals[5]]),
                        n => return Err(Error::format(field(), format!("vertex has {n} values"))),
                    }
                    positions.push([vals[0], vals[1], vals[2]]);
                }
                Some("f") => {
                    let idx = it
                        .map(|tok| {
                            let head = tok.split('/').next().unwrap_or("");
                            let i: i64 = head.parse().map_err(|_| {
                                Error::format(field(), format!("bad face index {tok:?}"))
                            })?;
                            let resolved = if i < 0 { positions.len() as i64 + i } else { i - 1 };
                            if resolved < 0 {
                                return Err(Error::format(field(), format!("bad face index {tok:?}")));
                            }
                            Ok(resolved as u32)
                        })
                        .collect::<Result<Vec<u32>>>()?;
                    if idx.len() < 3 {
                        return Err(Error::format(field(), "face with fewer than 3 vertices"));
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Mesh::new(positions, colors, faces).map_err(|e| Error::format("obj", e.to_string()))
    }

    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }

    pub fn load_obj(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text)
    }
}
