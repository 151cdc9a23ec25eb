//! Two-stage parameter estimation.
//!
//! Stage 1 fits pose, identity and expression to 2D landmarks with
//! Levenberg-Marquardt. Stage 2 refines all 239 parameters against the photo
//! with L-BFGS, holding the pixel-to-triangle assignment fixed between
//! refreshes (no gradient flows through visibility changes).

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{rotation_partials, LandmarkSet, Pose};
use crate::image::{ImageBuffer, Mask};
use crate::losses::{
    feature_cosine_grad, feature_cosine_loss, pixel_l2, pixel_l2_grad, DownsampleEmbedder, Embedder,
    LossWeights,
};
use crate::geometry::project_vertices;
use crate::model::{assemble_shape, project_columns, MorphableModel};
use crate::render::{barycentric, evaluate_scene, interpolate, rasterize_full, NO_TRIANGLE};
use crate::scene::{SceneParams, OFFSET_EXP, OFFSET_ID, OFFSET_POSE, OFFSET_SH, OFFSET_TEX};
use crate::shading::{sh_basis_unit, sh_radiance_gradient};
use crate::{NUM_EXP, NUM_ID, NUM_PARAMS, NUM_SH};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub landmark_iters: usize,
    /// Relative cost decrease below which stage 1 stops.
    pub landmark_tol: f64,
    /// Initial Levenberg-Marquardt damping.
    pub lm_damping: f64,
    pub photo_iters: usize,
    /// Leading stage-2 iterations that move only texture and lighting.
    pub appearance_iters: usize,
    /// Relative objective decrease per segment below which stage 2 stops.
    pub photo_tol: f64,
    /// L-BFGS iterations between pixel-assignment refreshes.
    pub refresh_every: usize,
    /// Largest projected vertex displacement (pixels) allowed between
    /// refreshes, keeping the frozen assignment a valid approximation.
    pub max_shift_px: f64,
    pub lbfgs_memory: usize,
    pub reg_id: f64,
    pub reg_exp: f64,
    pub reg_tex: f64,
    pub weights: LossWeights,
    /// Grid size of the feature embedder.
    pub embed_size: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            landmark_iters: 100,
            landmark_tol: 1e-12,
            lm_damping: 1e-3,
            photo_iters: 300,
            appearance_iters: 30,
            photo_tol: 1e-10,
            refresh_every: 1,
            max_shift_px: 1.0,
            lbfgs_memory: 10,
            reg_id: 1e-3,
            reg_exp: 1e-3,
            reg_tex: 1e-3,
            weights: LossWeights::default(),
            embed_size: 32,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("landmark_iters", self.landmark_iters),
            ("photo_iters", self.photo_iters),
            ("refresh_every", self.refresh_every),
            ("lbfgs_memory", self.lbfgs_memory),
            ("embed_size", self.embed_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        let nonneg = [
            ("landmark_tol", self.landmark_tol),
            ("photo_tol", self.photo_tol),
            ("reg_id", self.reg_id),
            ("reg_exp", self.reg_exp),
            ("reg_tex", self.reg_tex),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !(self.max_shift_px.is_finite() && self.max_shift_px > 0.0) {
            return Err(Error::InvalidInput(format!(
                "max_shift_px must be positive, got {}",
                self.max_shift_px
            )));
        }
        if !(self.lm_damping.is_finite() && self.lm_damping > 0.0) {
            return Err(Error::InvalidInput(format!(
                "lm_damping must be positive, got {}",
                self.lm_damping
            )));
        }
        self.weights.validate()
    }
}

// ---------------------------------------------------------------------------
// Stage 1: landmarks
// ---------------------------------------------------------------------------

/// Similarity alignment of the mean-shape landmarks (x, y) onto `gt`:
/// scale, in-plane rotation (roll) and translation. Pitch and yaw are zero.
pub fn initial_pose(model: &MorphableModel, gt: &LandmarkSet) -> Result<Pose> {
    let src: Vec<[f64; 2]> = model
        .landmark_indices()
        .iter()
        .map(|&i| {
            let s = &model.mean_shape()[3 * i as usize..];
            [s[0], s[1]]
        })
        .collect();
    let dst = gt.points();
    Error::check_len("landmarks", src.len(), dst.len())?;
    let n = src.len() as f64;
    let mean = |p: &[[f64; 2]]| {
        let s = p.iter().fold([0.0; 2], |a, q| [a[0] + q[0], a[1] + q[1]]);
        [s[0] / n, s[1] / n]
    };
    let (ms, md) = (mean(&src), mean(dst));
    // Complex least squares: dst - md ~ c (src - ms).
    let (mut re, mut im, mut norm) = (0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (zx, zy) = (s[0] - ms[0], s[1] - ms[1]);
        let (wx, wy) = (d[0] - md[0], d[1] - md[1]);
        re += zx * wx + zy * wy;
        im += zx * wy - zy * wx;
        norm += zx * zx + zy * zy;
    }
    if norm == 0.0 {
        return Err(Error::Numerical("mean-shape landmarks are coincident".into()));
    }
    let (re, im) = (re / norm, im / norm);
    let f = re.hypot(im);
    if !(f > 0.0 && f.is_finite()) {
        return Err(Error::Numerical(format!("degenerate landmark alignment (scale {f})")));
    }
    let roll = im.atan2(re);
    let (s, c) = roll.sin_cos();
    let t2d = [
        md[0] - f * (c * ms[0] - s * ms[1]),
        md[1] - f * (s * ms[0] + c * ms[1]),
    ];
    Ok(Pose { pitch: 0.0, yaw: 0.0, roll, f, t2d })
}

#[derive(Debug, Clone)]
pub struct LandmarkFit {
    pub params: SceneParams,
    /// Damped cost after initialization and after each accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const LM_POSE: usize = 6;
const LM_DIM: usize = LM_POSE + NUM_ID + NUM_EXP;

struct LandmarkProblem<'a> {
    gt: &'a [[f64; 2]],
    mean: Vec<f64>,
    /// Rows of the identity and expression bases at the landmark vertices.
    basis: DMatrix<f64>,
    reg: Vec<f64>,
}

impl LandmarkProblem<'_> {
    /// Residual vector (landmark offsets, then the square-rooted Tikhonov
    /// terms) and optionally its Jacobian.
    fn residuals(&self, u: &DVector<f64>, want_jacobian: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let l = self.gt.len();
        let rows = 2 * l + NUM_ID + NUM_EXP;
        let (pitch, yaw, roll, f) = (u[0], u[1], u[2], u[3]);
        let rot = crate::geometry::rotation_from_euler(pitch, yaw, roll).unwrap_or_else(|_| Matrix3::from_element(f64::NAN));
        let coeffs = u.rows(LM_POSE, NUM_ID + NUM_EXP);
        let shape = DVector::from_column_slice(&self.mean) + &self.basis * coeffs;
        let mut r = DVector::zeros(rows);
        let mut jac = want_jacobian.then(|| DMatrix::zeros(rows, LM_DIM));
        let partials = want_jacobian.then(|| rotation_partials(pitch, yaw, roll));
        for i in 0..l {
            let s = Vector3::new(shape[3 * i], shape[3 * i + 1], shape[3 * i + 2]);
            let p = rot * s;
            r[2 * i] = f * p.x + u[4] - self.gt[i][0];
            r[2 * i + 1] = f * p.y + u[5] - self.gt[i][1];
            if let (Some(j), Some(dr)) = (jac.as_mut(), partials.as_ref()) {
                for (k, d) in dr.iter().enumerate() {
                    let dp = d * s;
                    j[(2 * i, k)] = f * dp.x;
                    j[(2 * i + 1, k)] = f * dp.y;
                }
                j[(2 * i, 3)] = p.x;
                j[(2 * i + 1, 3)] = p.y;
                j[(2 * i, 4)] = 1.0;
                j[(2 * i + 1, 5)] = 1.0;
                let rb = rot * self.basis.rows(3 * i, 3);
                for c in 0..NUM_ID + NUM_EXP {
                    j[(2 * i, LM_POSE + c)] = f * rb[(0, c)];
                    j[(2 * i + 1, LM_POSE + c)] = f * rb[(1, c)];
                }
            }
        }
        for (c, w) in self.reg.iter().enumerate() {
            let sw = w.sqrt();
            r[2 * l + c] = sw * coeffs[c];
            if let Some(j) = jac.as_mut() {
                j[(2 * l + c, LM_POSE + c)] = sw;
            }
        }
        (r, jac)
    }
}

fn lm_vector(params: &SceneParams) -> DVector<f64> {
    let p = &params.pose;
    let mut u = DVector::zeros(LM_DIM);
    u.as_mut_slice()[..LM_POSE].copy_from_slice(&[p.pitch, p.yaw, p.roll, p.f, p.t2d[0], p.t2d[1]]);
    u.as_mut_slice()[LM_POSE..LM_POSE + NUM_ID].copy_from_slice(&params.shape.alpha_id);
    u.as_mut_slice()[LM_POSE + NUM_ID..].copy_from_slice(&params.shape.beta_exp);
    u
}

fn lm_apply(base: &SceneParams, u: &DVector<f64>) -> SceneParams {
    let mut p = base.clone();
    p.pose = Pose { pitch: u[0], yaw: u[1], roll: u[2], f: u[3], t2d: [u[4], u[5]] };
    p.shape.alpha_id.copy_from_slice(&u.as_slice()[LM_POSE..LM_POSE + NUM_ID]);
    p.shape.beta_exp.copy_from_slice(&u.as_slice()[LM_POSE + NUM_ID..]);
    p
}

/// Minimizes `|project(landmarks) - gt|^2 + reg_id |alpha|^2 + reg_exp |beta|^2`
/// over pose, identity and expression. Texture and lighting pass through.
pub fn landmark_fit(
    gt: &LandmarkSet,
    model: &MorphableModel,
    init: &SceneParams,
    cfg: &FitConfig,
) -> Result<LandmarkFit> {
    cfg.validate()?;
    init.validate()?;
    let idx = model.landmark_indices();
    Error::check_len("landmarks", idx.len(), gt.points().len())?;
    let mut basis = DMatrix::zeros(3 * idx.len(), NUM_ID + NUM_EXP);
    let mut mean = Vec::with_capacity(3 * idx.len());
    for (r, &v) in idx.iter().enumerate() {
        for k in 0..3 {
            let row = 3 * v as usize + k;
            mean.push(model.mean_shape()[row]);
            for c in 0..NUM_ID {
                basis[(3 * r + k, c)] = model.basis_id()[(row, c)];
            }
            for c in 0..NUM_EXP {
                basis[(3 * r + k, NUM_ID + c)] = model.basis_exp()[(row, c)];
            }
        }
    }
    let mut reg = vec![cfg.reg_id; NUM_ID];
    reg.extend(std::iter::repeat_n(cfg.reg_exp, NUM_EXP));
    let problem = LandmarkProblem { gt: gt.points(), mean, basis, reg };

    let mut u = lm_vector(init);
    let (mut r, mut jac) = problem.residuals(&u, true);
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::Numerical("non-finite landmark residuals at iteration 0".into()));
    }
    let mut trace = vec![cost];
    let mut mu = cfg.lm_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.landmark_iters {
        if cost <= 1e-24 {
            converged = true;
            break;
        }
        iterations += 1;
        let j = jac.take().expect("jacobian computed for the current point");
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let floor = 1e-12 * jtj.diagonal().max().max(1e-300);
        let mut accepted = None;
        while mu < 1e16 {
            let mut a = jtj.clone();
            for d in 0..LM_DIM {
                a[(d, d)] += mu * jtj[(d, d)].max(floor);
            }
            let Some(chol) = a.cholesky() else {
                mu *= 4.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let cand = &u + &step;
            if !(cand[3] > 0.0) {
                mu *= 4.0;
                continue;
            }
            let (rc, _) = problem.residuals(&cand, false);
            let cc = rc.norm_squared();
            if !cc.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite landmark residuals at iteration {iterations}"
                )));
            }
            if cc <= cost {
                accepted = Some((cand, cc, step.norm()));
                mu = (mu / 3.0).max(1e-15);
                break;
            }
            mu *= 4.0;
        }
        let Some((cand, cc, step_norm)) = accepted else {
            // No damping level decreases the cost: a local minimum.
            converged = true;
            break;
        };
        let decrease = cost - cc;
        u = cand;
        let (rn, jn) = problem.residuals(&u, true);
        r = rn;
        jac = jn;
        cost = cc;
        trace.push(cost);
        if decrease <= cfg.landmark_tol * cost.max(1e-300) || step_norm <= 1e-14 * (1.0 + u.norm()) {
            converged = true;
            break;
        }
    }
    log::debug!("landmark fit: {iterations} iterations, cost {cost:.6e}");
    Ok(LandmarkFit { params: lm_apply(init, &u), trace, iterations, converged })
}

// ---------------------------------------------------------------------------
// Stage 2: photometric
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    /// Unweighted masked RMS color error.
    pub pixel: f64,
    /// Unweighted cosine distance of the embeddings (0 when its weight is 0).
    pub feature: f64,
    /// Weighted coefficient penalty.
    pub regularization: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub terms: ObjectiveTerms,
    /// Gradient of `terms.total`, in [`SceneParams::to_vec`] order.
    pub gradient: Vec<f64>,
}

/// Objective weights of the photometric stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub reg_id: f64,
    pub reg_exp: f64,
    pub reg_tex: f64,
}

impl From<&FitConfig> for ObjectiveWeights {
    fn from(cfg: &FitConfig) -> Self {
        ObjectiveWeights {
            lambda_1: cfg.weights.lambda_1,
            lambda_2: cfg.weights.lambda_2,
            reg_id: cfg.reg_id,
            reg_exp: cfg.reg_exp,
            reg_tex: cfg.reg_tex,
        }
    }
}

/// The photometric objective with a frozen pixel-to-triangle assignment.
///
/// Valid pixels are those covered when the assignment was taken and set in
/// the photo mask. Each valid pixel is re-evaluated at new parameters by
/// barycentric interpolation inside its assigned triangle, then clamped to
/// [0, 1] like the rasterizer.
pub struct PhotometricProblem<'a> {
    model: &'a MorphableModel,
    photo: &'a ImageBuffer,
    photo_mask: &'a Mask,
    weights: ObjectiveWeights,
    embedder: &'a dyn Embedder,
    assignment: Vec<(u32, u32)>,
    valid: Mask,
    photo_valid: ImageBuffer,
}

impl<'a> PhotometricProblem<'a> {
    /// Takes the assignment by rasterizing at `at`.
    pub fn new(
        model: &'a MorphableModel,
        photo: &'a ImageBuffer,
        photo_mask: &'a Mask,
        weights: ObjectiveWeights,
        embedder: &'a dyn Embedder,
        at: &SceneParams,
    ) -> Result<Self> {
        photo_mask.check_size(photo.width(), photo.height())?;
        let mut p = PhotometricProblem {
            model,
            photo,
            photo_mask,
            weights,
            embedder,
            assignment: Vec::new(),
            valid: Mask::new(photo.width(), photo.height(), false),
            photo_valid: photo.clone(),
        };
        p.refresh(at)?;
        Ok(p)
    }

    /// Re-rasterizes at `at` and replaces the frozen assignment.
    pub fn refresh(&mut self, at: &SceneParams) -> Result<()> {
        let (w, h) = (self.photo.width(), self.photo.height());
        let eval = evaluate_scene(self.model, at)?;
        let raster = rasterize_full(
            &eval.projection.points,
            &eval.projection.depths,
            &eval.colors,
            self.model.triangles(),
            w,
            h,
        )?;
        let mut assignment = Vec::new();
        let mut valid = Mask::new(w, h, false);
        for (p, &t) in raster.triangle_ids.iter().enumerate() {
            if t != NO_TRIANGLE && self.photo_mask.data()[p] {
                assignment.push((p as u32, t));
                valid.set(p % w, p / w, true);
            }
        }
        if assignment.is_empty() {
            return Err(Error::InvalidInput(
                "no rendered pixel falls inside the photo mask".into(),
            ));
        }
        self.photo_valid = self.photo.masked(&valid)?;
        self.assignment = assignment;
        self.valid = valid;
        Ok(())
    }

    /// Projected vertex positions under `params`.
    pub fn projected(&self, params: &SceneParams) -> Result<Vec<[f64; 2]>> {
        let shape = assemble_shape(self.model, &params.shape)?;
        Ok(project_vertices(&shape, &params.pose)?.points)
    }

    pub fn valid_mask(&self) -> &Mask {
        &self.valid
    }

    pub fn objective(&self, params: &SceneParams) -> Result<f64> {
        Ok(self.evaluate(params)?.terms.total)
    }

    /// Objective value and its analytic gradient under the frozen assignment.
    pub fn evaluate(&self, params: &SceneParams) -> Result<Evaluation> {
        let model = self.model;
        let wts = &self.weights;
        let scene = evaluate_scene(model, params)?;
        let (w, h) = (self.photo.width(), self.photo.height());
        let tris = model.triangles();
        let pts = &scene.projection.points;
        let color = |i: u32| &scene.colors[3 * i as usize..3 * i as usize + 3];

        let mut rendered = vec![0.0; 3 * w * h];
        let mut samples = Vec::with_capacity(self.assignment.len());
        for &(p, t) in &self.assignment {
            let tri = tris[t as usize];
            let x = [(p as usize % w) as f64, (p as usize / w) as f64];
            let b = barycentric(&tri.map(|i| pts[i as usize]), x);
            let raw = interpolate(&b, tri.map(color));
            for k in 0..3 {
                rendered[3 * p as usize + k] = raw[k].clamp(0.0, 1.0);
            }
            samples.push((b, raw));
        }
        if let Some(i) = rendered.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite rendered value at pixel {}", i / 3)));
        }
        let rendered = ImageBuffer::from_vec(w, h, rendered)?;

        let pixel = pixel_l2(self.photo, &rendered, &self.valid)?.value;
        let mut gimg = pixel_l2_grad(self.photo, &rendered, &self.valid)?;
        gimg.iter_mut().for_each(|g| *g *= wts.lambda_1);
        let mut feature = 0.0;
        if wts.lambda_2 != 0.0 {
            feature = feature_cosine_loss(&self.photo_valid, &rendered, self.embedder)?;
            let gf = feature_cosine_grad(&self.photo_valid, &rendered, self.embedder)?;
            for (g, f) in gimg.iter_mut().zip(gf) {
                *g += wts.lambda_2 * f;
            }
        }
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let regularization = wts.reg_id * sq(&params.shape.alpha_id)
            + wts.reg_exp * sq(&params.shape.beta_exp)
            + wts.reg_tex * sq(&params.texture.beta_tex);
        let total = wts.lambda_1 * pixel + wts.lambda_2 * feature + regularization;

        // Pixels -> projected points and vertex colors.
        let n = model.n_vertices();
        let mut gq = vec![[0.0f64; 2]; n];
        let mut gc = vec![0.0f64; 3 * n];
        for (&(p, t), (b, raw)) in self.assignment.iter().zip(&samples) {
            let g = &gimg[3 * p as usize..3 * p as usize + 3];
            let gk: [f64; 3] = std::array::from_fn(|k| if (0.0..=1.0).contains(&raw[k]) { g[k] } else { 0.0 });
            if gk == [0.0; 3] {
                continue;
            }
            let tri = tris[t as usize];
            let [i0, i1, i2] = tri.map(|i| i as usize);
            let (c0, c1, c2) = (color(tri[0]), color(tri[1]), color(tri[2]));
            let b0 = 1.0 - b[1] - b[2];
            for k in 0..3 {
                gc[3 * i0 + k] += gk[k] * b0;
                gc[3 * i1 + k] += gk[k] * b[1];
                gc[3 * i2 + k] += gk[k] * b[2];
            }
            let gb1: f64 = (0..3).map(|k| gk[k] * (c1[k] - c0[k])).sum();
            let gb2: f64 = (0..3).map(|k| gk[k] * (c2[k] - c0[k])).sum();
            if gb1 == 0.0 && gb2 == 0.0 {
                continue;
            }
            let q = tri.map(|i| pts[i as usize]);
            let x = [(p as usize % w) as f64, (p as usize / w) as f64];
            let d = q.map(|v| [v[0] - x[0], v[1] - x[1]]);
            let e1 = [q[1][0] - q[0][0], q[1][1] - q[0][1]];
            let e2 = [q[2][0] - q[0][0], q[2][1] - q[0][1]];
            let area = e1[0] * e2[1] - e1[1] * e2[0];
            let da1 = [e2[1], -e2[0]];
            let da2 = [-e1[1], e1[0]];
            let da = [[-da1[0] - da2[0], -da1[1] - da2[1]], da1, da2];
            // w1 = d2 x d0, w2 = d0 x d1.
            let dw1 = [[-d[2][1], d[2][0]], [0.0, 0.0], [d[0][1], -d[0][0]]];
            let dw2 = [[d[1][1], -d[1][0]], [-d[0][1], d[0][0]], [0.0, 0.0]];
            for j in 0..3 {
                for a in 0..2 {
                    gq[tri[j] as usize][a] += (gb1 * (dw1[j][a] - b[1] * da[j][a])
                        + gb2 * (dw2[j][a] - b[2] * da[j][a]))
                        / area;
                }
            }
        }

        // Vertex colors -> albedo, lighting and unnormalized normals.
        let gamma = &params.gamma.0;
        let mut g_gamma = [0.0; NUM_SH];
        let mut g_albedo = vec![0.0; 3 * n];
        let mut gm = vec![[0.0f64; 3]; n];
        for i in 0..n {
            let r = scene.radiance[i];
            let a = &scene.albedo[3 * i..3 * i + 3];
            let g = &gc[3 * i..3 * i + 3];
            for k in 0..3 {
                g_albedo[3 * i + k] = g[k] * r;
            }
            let gr = g[0] * a[0] + g[1] * a[1] + g[2] * a[2];
            if gr == 0.0 {
                continue;
            }
            let nrm = scene.normals[i];
            for (acc, y) in g_gamma.iter_mut().zip(sh_basis_unit(nrm)) {
                *acc += gr * y;
            }
            let m = scene.accumulated[i];
            let len = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
            if !(len > 0.0 && len.is_finite()) {
                continue;
            }
            let gn = sh_radiance_gradient(nrm, gamma).map(|v| v * gr);
            let dot = nrm[0] * gn[0] + nrm[1] * gn[1] + nrm[2] * gn[2];
            gm[i] = std::array::from_fn(|k| (gn[k] - nrm[k] * dot) / len);
        }

        // Normals -> rotated positions.
        let rp = &scene.rotated;
        let mut gp = vec![[0.0f64; 3]; n];
        for t in tris {
            let [a, b, c] = t.map(|i| i as usize);
            let gf: [f64; 3] = std::array::from_fn(|k| gm[a][k] + gm[b][k] + gm[c][k]);
            if gf == [0.0; 3] {
                continue;
            }
            let e1 = Vector3::from(rp[b]) - Vector3::from(rp[a]);
            let e2 = Vector3::from(rp[c]) - Vector3::from(rp[a]);
            let gfv = Vector3::from(gf);
            let ub = e2.cross(&gfv);
            let uc = gfv.cross(&e1);
            for k in 0..3 {
                gp[b][k] += ub[k];
                gp[c][k] += uc[k];
                gp[a][k] -= ub[k] + uc[k];
            }
        }

        // Projection -> scale, translation, rotated positions.
        let f = params.pose.f;
        let (mut g_f, mut g_t) = (0.0, [0.0; 2]);
        for i in 0..n {
            g_f += gq[i][0] * rp[i][0] + gq[i][1] * rp[i][1];
            g_t[0] += gq[i][0];
            g_t[1] += gq[i][1];
            gp[i][0] += f * gq[i][0];
            gp[i][1] += f * gq[i][1];
        }

        // Rotated positions -> rotation and model-frame shape.
        let rot_t = scene.rotation.transpose();
        let mut g_rot = Matrix3::zeros();
        let mut g_shape = vec![0.0; 3 * n];
        for i in 0..n {
            let g = Vector3::from(gp[i]);
            let s = Vector3::new(scene.shape[3 * i], scene.shape[3 * i + 1], scene.shape[3 * i + 2]);
            g_rot += g * s.transpose();
            let gs = rot_t * g;
            g_shape[3 * i..3 * i + 3].copy_from_slice(gs.as_slice());
        }
        let partials = rotation_partials(params.pose.pitch, params.pose.yaw, params.pose.roll);

        let mut grad = vec![0.0; NUM_PARAMS];
        let gid = project_columns(model.basis_id(), &g_shape);
        let gexp = project_columns(model.basis_exp(), &g_shape);
        let gtex = project_columns(model.basis_tex(), &g_albedo);
        for (j, g) in gid.into_iter().enumerate() {
            grad[OFFSET_ID + j] = g + 2.0 * wts.reg_id * params.shape.alpha_id[j];
        }
        for (j, g) in gexp.into_iter().enumerate() {
            grad[OFFSET_EXP + j] = g + 2.0 * wts.reg_exp * params.shape.beta_exp[j];
        }
        for (j, g) in gtex.into_iter().enumerate() {
            grad[OFFSET_TEX + j] = g + 2.0 * wts.reg_tex * params.texture.beta_tex[j];
        }
        grad[OFFSET_SH..OFFSET_POSE].copy_from_slice(&g_gamma);
        for (k, d) in partials.iter().enumerate() {
            grad[OFFSET_POSE + k] = g_rot.component_mul(d).sum();
        }
        grad[OFFSET_POSE + 3] = g_f;
        grad[OFFSET_POSE + 4] = g_t[0];
        grad[OFFSET_POSE + 5] = g_t[1];

        if !total.is_finite() {
            return Err(Error::Numerical("non-finite photometric objective".into()));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient component {i}")));
        }
        Ok(Evaluation {
            terms: ObjectiveTerms { pixel, feature, regularization, total },
            gradient: grad,
        })
    }
}

/// Limited-memory BFGS history.
struct Lbfgs {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Lbfgs {
    fn new(memory: usize) -> Self {
        Lbfgs { memory, pairs: VecDeque::new() }
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if !(sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt()) {
            return;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion for `-H g`. Without history, a steepest-descent
    /// step of max-norm `first_step`.
    fn direction(&self, g: &[f64], first_step: f64) -> Vec<f64> {
        let Some((s_last, y_last, _)) = self.pairs.back() else {
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            return g.iter().map(|v| -v * first_step / gmax).collect();
        };
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let scale = dot(s_last, y_last) / dot(y_last, y_last);
        q.iter_mut().for_each(|v| *v *= scale);
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

/// Per-parameter scales: the optimizer works in `x = theta / scale`, with
/// units chosen so a unit step moves the image by roughly a pixel or a
/// comparable color change.
fn parameter_scales(f: f64) -> Vec<f64> {
    let mut s = vec![1.0; NUM_PARAMS];
    s[OFFSET_SH..OFFSET_POSE].fill(0.2);
    let angle = 1.0 / f.max(1e-6);
    s[OFFSET_POSE..OFFSET_POSE + 3].fill(angle);
    s
}

const ARMIJO_C1: f64 = 1e-4;
const ESCAPE_ITERS: usize = 10;
const MAX_BACKTRACKS: usize = 40;
const FIRST_STEP: f64 = 0.1;

/// Up to `steps` L-BFGS iterations of `evaluate`, moving only the
/// parameters flagged in `free`. `admissible` can veto trial points. Returns
/// the final point and the objective before and after each accepted
/// iteration.
fn lbfgs_segment(
    evaluate: &dyn Fn(&SceneParams) -> Result<Evaluation>,
    admissible: &dyn Fn(&SceneParams) -> bool,
    theta: &[f64],
    scales: &[f64],
    free: &[bool],
    mem: &mut Lbfgs,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let scaled_grad = |g: &[f64]| -> Vec<f64> {
        g.iter()
            .zip(scales)
            .zip(free)
            .map(|((g, s), &on)| if on { g * s } else { 0.0 })
            .collect()
    };
    let eval_at = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        let th: Vec<f64> = x.iter().zip(scales).map(|(a, s)| a * s).collect();
        let p = SceneParams::from_slice(&th).ok()?;
        p.validate().ok()?;
        if !admissible(&p) {
            return None;
        }
        let e = evaluate(&p).ok()?;
        Some((e.terms.total, scaled_grad(&e.gradient)))
    };
    let mut x: Vec<f64> = theta.iter().zip(scales).map(|(a, s)| a / s).collect();
    let e0 = evaluate(&SceneParams::from_slice(theta)?)?;
    let mut fx = e0.terms.total;
    let mut gx = scaled_grad(&e0.gradient);
    let mut values = vec![fx];
    while values.len() <= steps {
        if gx.iter().all(|g| *g == 0.0) {
            break;
        }
        let mut dir = mem.direction(&gx, FIRST_STEP);
        let mut slope = dot(&gx, &dir);
        if !(slope < 0.0) {
            mem.pairs.clear();
            dir = mem.direction(&gx, FIRST_STEP);
            slope = dot(&gx, &dir);
        }
        let mut step = 1.0;
        let mut found = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            if let Some((fc, gc)) = eval_at(&cand) {
                if fc <= fx + ARMIJO_C1 * step * slope {
                    found = Some((cand, fc, gc));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = found else {
            if mem.pairs.is_empty() {
                break;
            }
            mem.pairs.clear();
            continue;
        };
        let s: Vec<f64> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gc.iter().zip(&gx).map(|(a, b)| a - b).collect();
        mem.push(s, y);
        x = cand;
        fx = fc;
        gx = gc;
        values.push(fx);
    }
    let theta_out = x.iter().zip(scales).map(|(a, s)| a * s).collect();
    Ok((theta_out, values))
}

#[derive(Debug, Clone)]
pub struct PhotometricFit {
    /// Parameters with the lowest objective seen at any refresh.
    pub params: SceneParams,
    /// Objective with a fresh assignment, at the start and after every
    /// segment.
    pub trace: Vec<f64>,
    /// Objective along each segment as seen by the line search: the start
    /// value, then one value per accepted iteration. Non-increasing.
    pub segments: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub final_terms: ObjectiveTerms,
}

/// Refines all parameters against `photo` over pixels that are both rendered
/// and set in `photo_mask`.
///
/// With `refresh_every == 1` every point the line search tries is
/// re-rasterized, so accepted iterations decrease the true objective and the
/// gradient is exact away from silhouette changes. With `refresh_every = k > 1`
/// the assignment is frozen for segments of `k` iterations, each limited to
/// `max_shift_px` of projected vertex motion, and the best refreshed point
/// is returned. The first `appearance_iters` iterations move only texture
/// and lighting, so that early geometry updates are not driven by wrong
/// colors.
pub fn photometric_fit(
    photo: &ImageBuffer,
    photo_mask: &Mask,
    model: &MorphableModel,
    init: &SceneParams,
    cfg: &FitConfig,
) -> Result<PhotometricFit> {
    cfg.validate()?;
    init.validate()?;
    let embedder = DownsampleEmbedder { size: cfg.embed_size };
    let weights = ObjectiveWeights::from(cfg);
    let fresh_eval = |p: &SceneParams| -> Result<Evaluation> {
        PhotometricProblem::new(model, photo, photo_mask, weights, &embedder, p)?.evaluate(p)
    };
    let fresh = cfg.refresh_every == 1;
    let mut theta = init.to_vec();
    let first = fresh_eval(init)?.terms;
    let mut best = (first, theta.clone());
    let mut trace = vec![first.total];
    let mut segments = Vec::new();
    let scales = parameter_scales(init.pose.f);
    let appearance: Vec<bool> = (0..NUM_PARAMS).map(|i| (OFFSET_TEX..OFFSET_POSE).contains(&i)).collect();
    let all = vec![true; NUM_PARAMS];
    let warmup = cfg.appearance_iters.min(cfg.photo_iters);
    let mut mem = Lbfgs::new(cfg.lbfgs_memory);
    let mut iterations = 0;
    let mut converged = false;

    let frozen_segment = |theta: &[f64], free: &[bool], mem: &mut Lbfgs, steps: usize| {
        let start = SceneParams::from_slice(theta)?;
        let problem = PhotometricProblem::new(model, photo, photo_mask, weights, &embedder, &start)?;
        let origin = problem.projected(&start)?;
        let within = |p: &SceneParams| {
            problem.projected(p).is_ok_and(|moved| {
                moved
                    .iter()
                    .zip(&origin)
                    .all(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]) <= cfg.max_shift_px)
            })
        };
        lbfgs_segment(&|p| problem.evaluate(p), &within, theta, &scales, free, mem, steps)
    };

    while iterations < cfg.photo_iters {
        let in_warmup = iterations < warmup;
        let (free, limit) = if in_warmup { (&appearance, warmup) } else { (&all, cfg.photo_iters) };
        let (cand, values) = if fresh {
            lbfgs_segment(&fresh_eval, &|_| true, &theta, &scales, free, &mut mem, limit - iterations)?
        } else {
            frozen_segment(&theta, free, &mut mem, cfg.refresh_every.min(limit - iterations))?
        };
        let taken = values.len() - 1;
        let decrease = values[0] - values[taken];
        let scale = values[0].abs().max(1e-300);
        segments.push(values);
        iterations += taken;
        if taken > 0 {
            let params = SceneParams::from_slice(&cand)?;
            let terms = match fresh_eval(&params) {
                Ok(e) => e.terms,
                Err(e) => {
                    log::warn!("stopping photometric fit: {e}");
                    break;
                }
            };
            theta = cand;
            trace.push(terms.total);
            if terms.total <= best.0.total {
                best = (terms, theta.clone());
            }
        }
        let stalled = taken == 0 || decrease <= cfg.photo_tol * scale;
        if in_warmup && (stalled || iterations >= warmup) {
            iterations = iterations.max(warmup);
            mem.pairs.clear();
            continue;
        }
        if fresh && stalled && iterations < cfg.photo_iters {
            // The line search can pin itself on a pixel whose winning
            // surface flips under any geometry step. Texture and light never
            // change the assignment, so try those alone first, then a short
            // frozen segment; either is kept only if the true objective drops.
            let before = *trace.last().unwrap();
            let mut escaped = false;
            for appearance_only in [true, false] {
                let mut side_mem = Lbfgs::new(cfg.lbfgs_memory);
                let steps = ESCAPE_ITERS.min(cfg.photo_iters - iterations);
                let (cand, values) = if appearance_only {
                    lbfgs_segment(&fresh_eval, &|_| true, &theta, &scales, &appearance, &mut side_mem, steps)?
                } else {
                    frozen_segment(&theta, &all, &mut side_mem, steps)?
                };
                let taken = values.len() - 1;
                if taken == 0 {
                    continue;
                }
                let Ok(e) = fresh_eval(&SceneParams::from_slice(&cand)?) else {
                    continue;
                };
                if e.terms.total < before - cfg.photo_tol * before.abs() {
                    segments.push(values);
                    iterations += taken;
                    theta = cand;
                    trace.push(e.terms.total);
                    if e.terms.total <= best.0.total {
                        best = (e.terms, theta.clone());
                    }
                    escaped = true;
                    break;
                }
            }
            if escaped {
                mem.pairs.clear();
                continue;
            }
        }
        if stalled || fresh {
            converged = stalled;
            if fresh && !stalled && iterations < cfg.photo_iters {
                continue;
            }
            break;
        }
    }
    log::debug!("photometric fit: {iterations} iterations, objective {:.6e}", best.0.total);
    Ok(PhotometricFit {
        params: SceneParams::from_slice(&best.1)?,
        trace,
        segments,
        iterations,
        converged,
        final_terms: best.0,
    })
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub landmark: LandmarkFit,
    pub photometric: PhotometricFit,
    pub landmark_time: Duration,
    pub photometric_time: Duration,
}

impl FitResult {
    pub fn params(&self) -> &SceneParams {
        &self.photometric.params
    }
}

/// Both stages from the default initialization: zero coefficients, uniform
/// unit light and the similarity-aligned pose.
pub fn fit_image(
    photo: &ImageBuffer,
    photo_mask: &Mask,
    gt: &LandmarkSet,
    model: &MorphableModel,
    cfg: &FitConfig,
) -> Result<FitResult> {
    let init = SceneParams::neutral(initial_pose(model, gt)?);
    let t0 = Instant::now();
    let landmark = landmark_fit(gt, model, &init, cfg)?;
    let landmark_time = t0.elapsed();
    let t1 = Instant::now();
    let photometric = photometric_fit(photo, photo_mask, model, &landmark.params, cfg)?;
    Ok(FitResult { landmark, photometric, landmark_time, photometric_time: t1.elapsed() })
}
