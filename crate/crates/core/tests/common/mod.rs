#![allow(dead_code)]

use morphfit_core::geometry::{project_vertices, select_landmarks};
use morphfit_core::{
    assemble_shape, LandmarkSet, LightingCoeffs, MorphableModel, Pose, SceneParams, NUM_EXP, NUM_ID,
    NUM_SH, NUM_TEX,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-amp..amp)).collect()
}

/// Random coefficients, mildly directional light and a near-frontal pose
/// centered in a `size x size` frame.
/// Random pose and light, shape coefficients in `±shape_amp` and texture
/// coefficients in `±0.5`.
pub fn random_scene(rng: &mut ChaCha8Rng, size: usize, shape_amp: f64) -> SceneParams {
    let mut gamma = LightingCoeffs::uniform();
    for g in gamma.0.iter_mut().skip(1) {
        *g = rng.random_range(-0.3..0.3);
    }
    let c = (size as f64 - 1.0) / 2.0;
    let f = size as f64 * rng.random_range(0.36..0.40);
    let mut p = SceneParams::neutral(Pose {
        pitch: rng.random_range(-0.15..0.15),
        yaw: rng.random_range(-0.2..0.2),
        roll: rng.random_range(-0.1..0.1),
        f,
        t2d: [c + rng.random_range(-2.0..2.0), c + rng.random_range(-2.0..2.0)],
    });
    p.shape.alpha_id = uniform(rng, NUM_ID, shape_amp);
    p.shape.beta_exp = uniform(rng, NUM_EXP, shape_amp);
    p.texture.beta_tex = uniform(rng, NUM_TEX, 0.5);
    p.gamma = gamma;
    p
}

pub fn landmarks_of(model: &MorphableModel, p: &SceneParams) -> LandmarkSet {
    let shape = assemble_shape(model, &p.shape).unwrap();
    let proj = project_vertices(&shape, &p.pose).unwrap();
    select_landmarks(&proj.points, model.landmark_indices()).unwrap()
}

/// Mean Euclidean vertex distance between two shapes in the model frame.
pub fn shape_error(model: &MorphableModel, a: &SceneParams, b: &SceneParams) -> f64 {
    let sa = assemble_shape(model, &a.shape).unwrap();
    let sb = assemble_shape(model, &b.shape).unwrap();
    let n = model.n_vertices();
    (0..n)
        .map(|i| (0..3).map(|k| (sa[3 * i + k] - sb[3 * i + k]).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / n as f64
}

/// Euclidean distance of the identity and expression coefficient vectors.
pub fn shape_param_error(a: &SceneParams, b: &SceneParams) -> f64 {
    let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
    (d(&a.shape.alpha_id, &b.shape.alpha_id) + d(&a.shape.beta_exp, &b.shape.beta_exp)).sqrt()
}

pub fn cosine_similarity(a: &[f64; NUM_SH], b: &[f64; NUM_SH]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// `truth` with its pose angles, scale, translation and shape coefficients
/// perturbed, texture zeroed and light reset to uniform.
pub fn perturbed_init(rng: &mut ChaCha8Rng, truth: &SceneParams) -> SceneParams {
    let mut p = truth.clone();
    p.pose.pitch += rng.random_range(-0.1..0.1);
    p.pose.yaw += rng.random_range(-0.1..0.1);
    p.pose.roll += rng.random_range(-0.1..0.1);
    p.pose.f *= 1.0 + rng.random_range(-0.05..0.05);
    p.pose.t2d[0] += rng.random_range(-3.0..3.0);
    p.pose.t2d[1] += rng.random_range(-3.0..3.0);
    for v in p.shape.alpha_id.iter_mut().chain(p.shape.beta_exp.iter_mut()) {
        *v += rng.random_range(-0.5..0.5);
    }
    p.texture.beta_tex.fill(0.0);
    p.gamma = LightingCoeffs::uniform();
    p
}
