//! Linear morphable face model: storage, coefficient assembly, binary file
//! format and a deterministic synthetic generator.
//!
//! Shape and albedo are affine in their coefficients:
//!
//! ```text
//! shape   = mean_shape   + basis_id * alpha_id + basis_exp * beta_exp
//! texture = mean_texture + basis_tex * beta_tex
//! ```
//!
//! Vertex data is stored interleaved (`x0 y0 z0 x1 y1 z1 ...`), so every basis
//! has `3 * n_vertices` rows. The model frame is image aligned: x right,
//! y down, z pointing away from the camera.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hull::convex_hull;
use crate::{NUM_EXP, NUM_ID, NUM_LANDMARKS, NUM_TEX};

const MAGIC: &[u8; 4] = b"MM3D";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 7;

/// Smallest vertex count that can carry 68 distinct landmark vertices.
pub const MIN_SYNTH_VERTICES: usize = NUM_LANDMARKS;

#[derive(Debug, Clone, PartialEq)]
pub struct MorphableModel {
    mean_shape: Vec<f64>,
    mean_texture: Vec<f64>,
    basis_id: DMatrix<f64>,
    basis_exp: DMatrix<f64>,
    basis_tex: DMatrix<f64>,
    triangles: Vec<[u32; 3]>,
    landmark_indices: Vec<u32>,
}

/// Identity and expression coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCoeffs {
    pub alpha_id: Vec<f64>,
    pub beta_exp: Vec<f64>,
}

impl ShapeCoeffs {
    pub fn zeros() -> Self {
        ShapeCoeffs {
            alpha_id: vec![0.0; NUM_ID],
            beta_exp: vec![0.0; NUM_EXP],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureCoeffs {
    pub beta_tex: Vec<f64>,
}

impl TextureCoeffs {
    pub fn zeros() -> Self {
        TextureCoeffs {
            beta_tex: vec![0.0; NUM_TEX],
        }
    }
}

impl MorphableModel {
    /// Builds a model after checking every structural invariant.
    pub fn new(
        mean_shape: Vec<f64>,
        mean_texture: Vec<f64>,
        basis_id: DMatrix<f64>,
        basis_exp: DMatrix<f64>,
        basis_tex: DMatrix<f64>,
        triangles: Vec<[u32; 3]>,
        landmark_indices: Vec<u32>,
    ) -> Result<Self> {
        let rows = mean_shape.len();
        if rows == 0 || rows % 3 != 0 {
            return Err(Error::InvalidInput(format!(
                "mean_shape length {rows} is not a positive multiple of 3"
            )));
        }
        let n = rows / 3;
        Error::check_len("mean_texture", rows, mean_texture.len())?;
        for (name, basis, cols) in [
            ("basis_id", &basis_id, NUM_ID),
            ("basis_exp", &basis_exp, NUM_EXP),
            ("basis_tex", &basis_tex, NUM_TEX),
        ] {
            Error::check_len(name, rows, basis.nrows())?;
            if basis.ncols() != cols {
                return Err(Error::Dimension {
                    context: name,
                    expected: cols,
                    actual: basis.ncols(),
                });
            }
        }
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::InvalidInput(format!(
                "triangle {t:?} references a vertex beyond {n}"
            )));
        }
        Error::check_len("landmark_indices", NUM_LANDMARKS, landmark_indices.len())?;
        let mut seen = vec![false; n];
        for &i in &landmark_indices {
            let slot = seen.get_mut(i as usize).ok_or_else(|| {
                Error::InvalidInput(format!("landmark index {i} out of range for {n} vertices"))
            })?;
            if *slot {
                return Err(Error::InvalidInput(format!("landmark index {i} repeated")));
            }
            *slot = true;
        }
        Ok(MorphableModel {
            mean_shape,
            mean_texture,
            basis_id,
            basis_exp,
            basis_tex,
            triangles,
            landmark_indices,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.mean_shape.len() / 3
    }

    pub fn mean_shape(&self) -> &[f64] {
        &self.mean_shape
    }

    pub fn mean_texture(&self) -> &[f64] {
        &self.mean_texture
    }

    pub fn basis_id(&self) -> &DMatrix<f64> {
        &self.basis_id
    }

    pub fn basis_exp(&self) -> &DMatrix<f64> {
        &self.basis_exp
    }

    pub fn basis_tex(&self) -> &DMatrix<f64> {
        &self.basis_tex
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn landmark_indices(&self) -> &[u32] {
        &self.landmark_indices
    }

    /// Axis-aligned bounding-box diagonal of the mean shape.
    pub fn mean_shape_diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in self.mean_shape.chunks_exact(3) {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt()
    }
}

/// Adds `basis * coeffs` to `out`, skipping zero coefficients so that an
/// all-zero coefficient vector leaves `out` untouched bit for bit.
fn accumulate_columns(out: &mut [f64], basis: &DMatrix<f64>, coeffs: &[f64]) {
    for (j, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for (o, &b) in out.iter_mut().zip(basis.column(j).iter()) {
            *o += b * c;
        }
    }
}

/// `basis^T v`: projects a per-vertex gradient onto the coefficient space.
pub(crate) fn project_columns(basis: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..basis.ncols())
        .map(|j| basis.column(j).iter().zip(v).map(|(b, x)| b * x).sum())
        .collect()
}

pub fn assemble_shape(model: &MorphableModel, coeffs: &ShapeCoeffs) -> Result<Vec<f64>> {
    Error::check_len("alpha_id", NUM_ID, coeffs.alpha_id.len())?;
    Error::check_len("beta_exp", NUM_EXP, coeffs.beta_exp.len())?;
    let mut out = model.mean_shape.clone();
    accumulate_columns(&mut out, &model.basis_id, &coeffs.alpha_id);
    accumulate_columns(&mut out, &model.basis_exp, &coeffs.beta_exp);
    Ok(out)
}

/// Per-vertex albedo. Values are not clamped here.
pub fn assemble_texture(model: &MorphableModel, coeffs: &TextureCoeffs) -> Result<Vec<f64>> {
    Error::check_len("beta_tex", NUM_TEX, coeffs.beta_tex.len())?;
    let mut out = model.mean_texture.clone();
    accumulate_columns(&mut out, &model.basis_tex, &coeffs.beta_tex);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Binary format
//
//   "MM3D" | version u32 | n_vertices u32 | n_triangles u32
//   | k_id u32 | k_exp u32 | k_tex u32 | n_landmarks u32
//   | mean_shape f64[3N] | mean_texture f64[3N]
//   | basis_id f64[3N*k_id] | basis_exp f64[3N*k_exp] | basis_tex f64[3N*k_tex]
//   | triangles u32[3T] | landmark_indices u32[n_landmarks]
//
// Everything little-endian; bases are column-major.
// ---------------------------------------------------------------------------

pub fn save_model(model: &MorphableModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(model);
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MorphableModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

pub fn encode_model(model: &MorphableModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        FORMAT_VERSION,
        model.n_vertices() as u32,
        model.triangles.len() as u32,
        model.basis_id.ncols() as u32,
        model.basis_exp.ncols() as u32,
        model.basis_tex.ncols() as u32,
        model.landmark_indices.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let floats = [
        model.mean_shape.as_slice(),
        model.mean_texture.as_slice(),
        model.basis_id.as_slice(),
        model.basis_exp.as_slice(),
        model.basis_tex.as_slice(),
    ];
    for arr in floats {
        for x in arr {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    for t in &model.triangles {
        for i in t {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    for i in &model.landmark_indices {
        out.extend_from_slice(&i.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self, field: &str) -> Result<u32> {
        let chunk = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| Error::format(field, "file ends inside the header"))?;
        self.pos += 4;
        Ok(u32::from_le_bytes(chunk.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize) -> Vec<f64> {
        let out = self.bytes[self.pos..self.pos + 8 * count]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos += 8 * count;
        out
    }

    fn u32s(&mut self, count: usize) -> Vec<u32> {
        let out = self.bytes[self.pos..self.pos + 4 * count]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos += 4 * count;
        out
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<MorphableModel> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::format("magic", "expected \"MM3D\""));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            "header",
            format!("expected {HEADER_LEN} bytes, got {}", bytes.len()),
        ));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let n = r.u32("n_vertices")? as usize;
    let n_tri = r.u32("n_triangles")? as usize;
    let k_id = r.u32("k_id")? as usize;
    let k_exp = r.u32("k_exp")? as usize;
    let k_tex = r.u32("k_tex")? as usize;
    let n_lmk = r.u32("n_landmarks")? as usize;
    if n == 0 {
        return Err(Error::format("n_vertices", "must be positive"));
    }
    for (field, got, want) in [
        ("k_id", k_id, NUM_ID),
        ("k_exp", k_exp, NUM_EXP),
        ("k_tex", k_tex, NUM_TEX),
        ("n_landmarks", n_lmk, NUM_LANDMARKS),
    ] {
        if got != want {
            return Err(Error::format(field, format!("expected {want}, got {got}")));
        }
    }

    let rows = 3 * n;
    let expected = HEADER_LEN + 8 * rows * (2 + k_id + k_exp + k_tex) + 4 * (3 * n_tri + n_lmk);
    if bytes.len() != expected {
        return Err(Error::format(
            "length",
            format!("expected {expected} bytes, got {}", bytes.len()),
        ));
    }

    let mean_shape = r.f64s(rows);
    let mean_texture = r.f64s(rows);
    let basis_id = DMatrix::from_vec(rows, k_id, r.f64s(rows * k_id));
    let basis_exp = DMatrix::from_vec(rows, k_exp, r.f64s(rows * k_exp));
    let basis_tex = DMatrix::from_vec(rows, k_tex, r.f64s(rows * k_tex));
    let triangles = r
        .u32s(3 * n_tri)
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let landmarks = r.u32s(n_lmk);

    MorphableModel::new(
        mean_shape,
        mean_texture,
        basis_id,
        basis_exp,
        basis_tex,
        triangles,
        landmarks,
    )
    .map_err(|e| Error::format("contents", e.to_string()))
}

// ---------------------------------------------------------------------------
// Synthetic model
// ---------------------------------------------------------------------------

const SEMI_AXES: [f64; 3] = [0.8, 1.0, 0.85];

fn fibonacci_sphere(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), y, r * phi.sin()]
        })
        .collect()
}

fn bump(d: [f64; 3], center: [f64; 3], width2: f64) -> f64 {
    let dist2: f64 = (0..3).map(|k| (d[k] - center[k]).powi(2)).sum();
    (-dist2 / width2).exp()
}

/// Bump pair mirrored across the x = 0 plane.
fn mirrored_bump(d: [f64; 3], center: [f64; 3], width2: f64) -> f64 {
    bump(d, center, width2) + bump(d, [-center[0], center[1], center[2]], width2)
}

/// Random polynomial vector field of total degree `degree` in the sphere
/// direction, one independent polynomial per coordinate.
fn polynomial_field(rng: &mut ChaCha8Rng, dirs: &[[f64; 3]], degree: u32) -> Vec<f64> {
    let mut exps = Vec::new();
    for a in 0..=degree {
        for b in 0..=degree - a {
            for c in 0..=degree - a - b {
                exps.push([a as i32, b as i32, c as i32]);
            }
        }
    }
    let weights: Vec<[f64; 3]> = exps
        .iter()
        .map(|_| std::array::from_fn(|_| rng.sample(StandardNormal)))
        .collect();
    let mut out = Vec::with_capacity(3 * dirs.len());
    for &d in dirs {
        let mut v = [0.0; 3];
        for (e, w) in exps.iter().zip(&weights) {
            let m = d[0].powi(e[0]) * d[1].powi(e[1]) * d[2].powi(e[2]);
            (0..3).for_each(|k| v[k] += w[k] * m);
        }
        out.extend(v);
    }
    out
}

/// Orthonormal columns drawn from polynomial fields whose degree grows with
/// the column index, so early columns are the smoothest. Rigid translations
/// are projected out.
fn smooth_basis(rng: &mut ChaCha8Rng, dirs: &[[f64; 3]], cols: usize) -> DMatrix<f64> {
    let rows = 3 * dirs.len();
    let mut span = DMatrix::<f64>::zeros(rows, cols + 3);
    for k in 0..3 {
        let mut t = nalgebra::DVector::<f64>::zeros(rows);
        for i in 0..dirs.len() {
            t[3 * i + k] = 1.0;
        }
        span.set_column(k, &t.normalize());
    }
    let mut filled = 3;
    let mut extra = 0;
    while filled < cols + 3 {
        let mut degree = 1;
        while 3 * (degree + 1) * (degree + 1) < filled + 1 {
            degree += 1;
        }
        let mut v = nalgebra::DVector::from_vec(polynomial_field(rng, dirs, (degree + extra) as u32));
        let before = v.norm();
        for _ in 0..2 {
            for k in 0..filled {
                let col = span.column(k);
                let proj = col.dot(&v);
                v.axpy(-proj, &col, 1.0);
            }
        }
        let norm = v.norm();
        if !(norm > 1e-6 * before) {
            extra += 1;
            continue;
        }
        span.set_column(filled, &(v / norm));
        filled += 1;
    }
    span.columns(3, cols).into_owned()
}

/// Deterministic pseudo-random head: a displaced ellipsoid that is mirror
/// symmetric in x, with smooth orthonormal bases and landmarks on the
/// camera-facing side (negative z).
pub fn synth_model(seed: u64, n_vertices: usize) -> Result<MorphableModel> {
    if n_vertices < MIN_SYNTH_VERTICES {
        return Err(Error::InvalidInput(format!(
            "synthetic model needs at least {MIN_SYNTH_VERTICES} vertices, got {n_vertices}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs = fibonacci_sphere(n_vertices);
    let triangles = convex_hull(&dirs)
        .ok_or_else(|| Error::Numerical("degenerate synthetic point set".into()))?;

    let cheek: f64 = rng.random_range(-0.08..0.08);
    let crown: f64 = rng.random_range(-0.05..0.05);
    let nose: f64 = rng.random_range(0.08..0.16);
    let chin: f64 = rng.random_range(-0.05..0.05);
    let brow: f64 = rng.random_range(0.0..0.05);

    let mut mean_shape = Vec::with_capacity(3 * n_vertices);
    for &d in &dirs {
        let r = 1.0
            + cheek * d[0] * d[0]
            + crown * d[1].powi(3)
            + nose * bump(d, [0.0, 0.05, -1.0], 0.06)
            + chin * bump(d, [0.0, 0.7, -0.7], 0.1)
            + brow * mirrored_bump(d, [0.3, -0.35, -0.88], 0.04);
        for k in 0..3 {
            mean_shape.push(SEMI_AXES[k] * r * d[k]);
        }
    }

    let base: [f64; 3] = [
        0.78 + rng.random_range(-0.05..0.05),
        0.60 + rng.random_range(-0.05..0.05),
        0.50 + rng.random_range(-0.05..0.05),
    ];
    let mut mean_texture = Vec::with_capacity(3 * n_vertices);
    for &d in &dirs {
        let eyes = mirrored_bump(d, [0.35, -0.25, -0.9], 0.03);
        let brows = mirrored_bump(d, [0.35, -0.45, -0.83], 0.02);
        let mouth = bump(d, [0.0, 0.45, -0.89], 0.03);
        let back = 0.15 * (d[2].max(0.0));
        let c = [
            base[0] - 0.45 * eyes - 0.35 * brows + 0.05 * mouth - back,
            base[1] - 0.40 * eyes - 0.30 * brows - 0.25 * mouth - back,
            base[2] - 0.30 * eyes - 0.25 * brows - 0.20 * mouth - back,
        ];
        mean_texture.extend(c.iter().map(|x| x.clamp(0.05, 0.95)));
    }

    let shape_basis = smooth_basis(&mut rng, &dirs, NUM_ID + NUM_EXP);
    let basis_id = shape_basis.columns(0, NUM_ID).into_owned();
    let basis_exp = shape_basis.columns(NUM_ID, NUM_EXP).into_owned();
    let basis_tex = smooth_basis(&mut rng, &dirs, NUM_TEX);

    let mut order: Vec<usize> = (0..n_vertices).collect();
    order.sort_by(|&a, &b| mean_shape[3 * a + 2].total_cmp(&mean_shape[3 * b + 2]).then(a.cmp(&b)));
    let landmark_indices = order[..NUM_LANDMARKS].iter().map(|&i| i as u32).collect();

    MorphableModel::new(
        mean_shape,
        mean_texture,
        basis_id,
        basis_exp,
        basis_tex,
        triangles,
        landmark_indices,
    )
}
