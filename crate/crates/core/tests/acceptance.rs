//! Acceptance gate: one PASS/FAIL line per criterion.

mod common;

use std::time::Instant;

use common::*;
use morphfit_core::eval::{percentile_error, point_to_mesh_distances, procrustes_rigid, RigidTransform};
use morphfit_core::fit::ObjectiveWeights;
use morphfit_core::losses::{
    feature_cosine_loss, fsm_total, gram_matrix, l3d_total, landmark_loss, pixel_l1, pixel_l2,
    style_loss, tv_loss,
};
use morphfit_core::model::{decode_model, encode_model};
use morphfit_core::occlusion::{smoothed_tv_energy, tv_inpaint, InpaintConfig};
use morphfit_core::render::{rasterize_full, render_scene, NO_TRIANGLE};
use morphfit_core::{
    landmark_fit, photometric_fit, rotation_from_euler, synth_model, DownsampleEmbedder, Embedder,
    FitConfig, ImageBuffer, LandmarkSet, LossWeights, Mask, Mesh, PhotometricProblem,
    PyramidExtractor, SceneParams, StyleExtractor, NUM_LANDMARKS, NUM_PARAMS,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------

fn ac1_gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut checked = 0;
    for seed in 0..5u64 {
        let model = synth_model(100 + seed, 300).unwrap();
        let mut rng = rng(seed);
        let truth = random_scene(&mut rng, 64, 0.5);
        let (photo, _) = render_scene(&model, &truth, 64, 64).unwrap();
        let mut theta = truth.to_vec();
        for (i, v) in theta.iter_mut().enumerate() {
            let amp = match i {
                0..224 => 0.3,
                224..233 => 0.05,
                233..236 => 0.03,
                _ => 1.0,
            };
            *v += rng.random_range(-amp..amp);
        }
        let at = SceneParams::from_slice(&theta).unwrap();
        let mask = Mask::new(64, 64, true);
        let emb = DownsampleEmbedder::default();
        let cfg = FitConfig::default();
        let prob = PhotometricProblem::new(&model, &photo, &mask, ObjectiveWeights::from(&cfg), &emb, &at).unwrap();
        let analytic = prob.evaluate(&at).unwrap().gradient;
        for i in 0..NUM_PARAMS {
            let h = 1e-5 * theta[i].abs().max(1.0);
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fp = prob.objective(&SceneParams::from_slice(&tp).unwrap()).unwrap();
            let fm = prob.objective(&SceneParams::from_slice(&tm).unwrap()).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let mag = analytic[i].abs().max(fd.abs());
            if mag < 1e-8 {
                continue;
            }
            checked += 1;
            let rel = (analytic[i] - fd).abs() / mag;
            worst = worst.max(rel);
            if rel >= 1e-4 {
                failures.push(format!("seed {seed} idx {i}: analytic {:.6e} fd {fd:.6e}", analytic[i]));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let mut detail = format!("5 scenes, {checked} components, max rel err {worst:.2e}, {secs:.1} s");
    if let Some(f) = failures.first() {
        detail += &format!("; {} over tolerance, first: {f}", failures.len());
    }
    outcome(failures.is_empty() && secs < 30.0, detail)
}

// ---------------------------------------------------------------------------

struct RecoveryRun {
    rmse: f64,
    shape_err: f64,
    diag: f64,
    gamma_cos: f64,
    secs: f64,
}

/// Shape coefficient range of the rendered ground truth; the initial guess
/// is still perturbed by ±0.5 per coefficient.
const TRUTH_SHAPE_AMP: f64 = 0.15;

fn recovery_scene(seed: u64) -> RecoveryRun {
    let model = synth_model(200 + seed, 500).unwrap();
    let mut rng = rng(1000 + seed);
    let truth = random_scene(&mut rng, 256, TRUTH_SHAPE_AMP);
    // The face region stands in for a parser's face mask.
    let (photo, face) = render_scene(&model, &truth, 256, 256).unwrap();
    let gt = landmarks_of(&model, &truth);
    let init = perturbed_init(&mut rng, &truth);
    let cfg = FitConfig::default();
    let start = Instant::now();
    let lmk = landmark_fit(&gt, &model, &init, &cfg).unwrap();
    let photo_fit = photometric_fit(&photo, &face, &model, &lmk.params, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let fitted = &photo_fit.params;
    RecoveryRun {
        rmse: landmarks_of(&model, fitted).rmse(&gt),
        shape_err: shape_error(&model, fitted, &truth),
        diag: model.mean_shape_diagonal(),
        gamma_cos: cosine_similarity(&fitted.gamma.0, &truth.gamma.0),
        secs,
    }
}

fn ac2_synthetic_recovery() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 0..3 {
        let r = recovery_scene(seed);
        let ok = r.rmse < 0.5 && r.shape_err < 0.05 * r.diag && r.gamma_cos > 0.99 && r.secs < 60.0;
        pass &= ok;
        parts.push(format!(
            "seed {seed}: rmse {:.3} px, shape {:.2}% diag, gamma cos {:.5}, {:.1} s",
            r.rmse,
            100.0 * r.shape_err / r.diag,
            r.gamma_cos,
            r.secs
        ));
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------------------

/// Horizontal band around the eye line holding 20% of the covered pixels.
fn eyeglass_band(coverage: &Mask, eye_row: f64) -> Mask {
    let (w, h) = (coverage.width(), coverage.height());
    let target = (0.2 * coverage.count() as f64).ceil() as usize;
    let row_count = |y: usize| (0..w).filter(|&x| coverage.get(x, y)).count();
    let center = (eye_row.round().max(0.0) as usize).min(h - 1);
    let (mut lo, mut hi) = (center, center);
    let mut covered = row_count(center);
    while covered < target {
        let up = lo.checked_sub(1).map(row_count).unwrap_or(0);
        let down = if hi + 1 < h { row_count(hi + 1) } else { 0 };
        if (up >= down && lo > 0) || hi + 1 >= h {
            lo -= 1;
            covered += up;
        } else {
            hi += 1;
            covered += down;
        }
    }
    Mask::from_fn(w, h, |_, y| y >= lo && y <= hi)
}

fn ac3_occlusion_robustness() -> Outcome {
    let size = 128;
    let mut worst = 0.0f64;
    let mut pass = true;
    let mut fractions = Vec::new();
    for seed in 0..10u64 {
        let model = synth_model(300 + seed, 400).unwrap();
        let mut rng = rng(2000 + seed);
        let truth = random_scene(&mut rng, size, TRUTH_SHAPE_AMP);
        let (photo, coverage) = render_scene(&model, &truth, size, size).unwrap();
        let gt = landmarks_of(&model, &truth);
        let eye_row = truth.pose.t2d[1] - 0.3 * truth.pose.f;
        let band = eyeglass_band(&coverage, eye_row);
        fractions.push(band.and(&coverage).unwrap().count() as f64 / coverage.count() as f64);
        let init = perturbed_init(&mut rng, &truth);
        let cfg = FitConfig::default();
        let lmk = landmark_fit(&gt, &model, &init, &cfg).unwrap();
        let clean = photometric_fit(&photo, &coverage, &model, &lmk.params, &cfg).unwrap();
        let visible = coverage.and(&band.not()).unwrap();
        let occluded = photometric_fit(&photo, &visible, &model, &lmk.params, &cfg).unwrap();
        let e0 = shape_param_error(&clean.params, &truth);
        let e1 = shape_param_error(&occluded.params, &truth);
        let ratio = e1 / e0;
        worst = worst.max(ratio);
        pass &= e1 <= 2.0 * e0;
    }
    let fmin = fractions.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        pass,
        format!("10 seeds, band covers >= {:.1}% of face pixels, worst masked/unmasked error ratio {worst:.3}", 100.0 * fmin),
    )
}

// ---------------------------------------------------------------------------

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageBuffer {
    ImageBuffer::from_vec(w, h, (0..3 * w * h).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn random_landmarks(rng: &mut ChaCha8Rng) -> LandmarkSet {
    LandmarkSet::new((0..NUM_LANDMARKS).map(|_| [rng.random_range(0.0..256.0), rng.random_range(0.0..256.0)]).collect())
        .unwrap()
}

fn ac4_loss_identities() -> Outcome {
    let mut rng = rng(4);
    let mut zeros = true;
    for _ in 0..20 {
        let a = random_image(&mut rng, 8, 8);
        let l = random_landmarks(&mut rng);
        let mask = Mask::from_fn(8, 8, |x, y| (x + y) % 3 != 0);
        let constant = ImageBuffer::filled(8, 8, [rng.random(), rng.random(), rng.random()]);
        let vals = [
            landmark_loss(&l, &l),
            pixel_l1(&a, &a, 64).unwrap(),
            style_loss(&a, &a, &mask, &PyramidExtractor).unwrap(),
            tv_loss(&constant),
            pixel_l2(&a, &a, &mask).unwrap().value,
            feature_cosine_loss(&a, &a, &DownsampleEmbedder::default()).unwrap(),
        ];
        zeros &= vals.iter().all(|v| *v == 0.0);
    }
    let w = LossWeights::default();
    let defaults = (w.lambda_pixe, w.lambda_style, w.lambda_var, w.lambda_1, w.lambda_2) == (1.0, 250.0, 0.1, 1.4, 0.25);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (p, s, v, l1, l2): (f64, f64, f64, f64, f64) = (rng.random(), rng.random(), rng.random(), rng.random(), rng.random());
        worst = worst.max((fsm_total(p, s, v, &w) - (p + 250.0 * s + 0.1 * v)).abs());
        worst = worst.max((l3d_total(l1, l2, &w) - (1.4 * l1 + 0.25 * l2)).abs());
    }
    outcome(
        zeros && defaults && worst <= 1e-12,
        format!("identical-input losses all exactly 0: {zeros}; default weights (1, 250, 0.1, 1.4, 0.25): {defaults}; max weighted-sum deviation {worst:.1e}"),
    )
}

// ---------------------------------------------------------------------------

fn naive_pixel_l1(a: &ImageBuffer, b: &ImageBuffer, s: usize) -> f64 {
    let mut sum = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (p, q) = (a.get(x, y), b.get(x, y));
            for c in 0..3 {
                sum += (p[c] - q[c]).abs();
            }
        }
    }
    sum / s as f64
}

fn naive_tv(a: &ImageBuffer) -> f64 {
    let (w, h) = (a.width(), a.height());
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let p = a.get(x, y);
            let right = a.get((x + 1).min(w - 1), y);
            let down = a.get(x, (y + 1).min(h - 1));
            for c in 0..3 {
                sum += (right[c] - p[c]).abs() + (down[c] - p[c]).abs();
            }
        }
    }
    sum / (w * h) as f64
}

fn naive_pixel_l2(a: &ImageBuffer, b: &ImageBuffer, m: &Mask) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..a.height() {
        for x in 0..a.width() {
            if m.get(x, y) {
                n += 1;
                let (p, q) = (a.get(x, y), b.get(x, y));
                sum += (0..3).map(|c| (p[c] - q[c]) * (p[c] - q[c])).sum::<f64>();
            }
        }
    }
    (sum / n as f64).sqrt()
}

fn naive_style(a: &ImageBuffer, b: &ImageBuffer, m: &Mask) -> f64 {
    let fa = PyramidExtractor.extract(&a.masked(m).unwrap());
    let fb = PyramidExtractor.extract(&b.masked(m).unwrap());
    let mut total = 0.0;
    for (la, lb) in fa.levels.iter().zip(&fb.levels) {
        let (o, hw) = (la.channels, la.height * la.width);
        let mut l1 = 0.0;
        for i in 0..o {
            for j in 0..o {
                let mut ga = 0.0;
                let mut gb = 0.0;
                for k in 0..hw {
                    ga += la.data[i * hw + k] * la.data[j * hw + k];
                    gb += lb.data[i * hw + k] * lb.data[j * hw + k];
                }
                l1 += ((ga - gb) / (o * hw) as f64).abs();
            }
        }
        total += l1 / (o * o) as f64;
    }
    total
}

fn naive_cosine(a: &ImageBuffer, b: &ImageBuffer, size: usize) -> f64 {
    let embed = |img: &ImageBuffer| {
        let (w, h) = (img.width(), img.height());
        let mut sums = vec![0.0; size * size];
        let mut counts = vec![0.0; size * size];
        for y in 0..h {
            for x in 0..w {
                let cell = (y * size / h) * size + x * size / w;
                let p = img.get(x, y);
                sums[cell] += (p[0] + p[1] + p[2]) / 3.0;
                counts[cell] += 1.0;
            }
        }
        sums.iter().zip(&counts).map(|(s, c)| if *c > 0.0 { s / c } else { 0.0 }).collect::<Vec<_>>()
    };
    let (u, v) = (embed(a), embed(b));
    let dot: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
    let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (nu * nv)
}

fn ac5_loss_oracles() -> Outcome {
    let mut rng = rng(5);
    let mut worst = [0.0f64; 6];
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
    for _ in 0..100 {
        let a = random_image(&mut rng, 8, 8);
        let b = random_image(&mut rng, 8, 8);
        let m = Mask::from_vec(8, 8, (0..64).map(|_| rng.random_bool(0.7)).collect()).unwrap();
        let m = if m.count() == 0 { Mask::new(8, 8, true) } else { m };
        let (la, lb) = (random_landmarks(&mut rng), random_landmarks(&mut rng));
        let lm_naive: f64 = la.points().iter().zip(lb.points()).map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sum();
        let emb = DownsampleEmbedder { size: 4 };
        let got = [
            (landmark_loss(&la, &lb), lm_naive),
            (pixel_l1(&a, &b, m.count()).unwrap(), naive_pixel_l1(&a, &b, m.count())),
            (style_loss(&a, &b, &m, &PyramidExtractor).unwrap(), naive_style(&a, &b, &m)),
            (tv_loss(&a), naive_tv(&a)),
            (pixel_l2(&a, &b, &m).unwrap().value, naive_pixel_l2(&a, &b, &m)),
            (feature_cosine_loss(&a, &b, &emb).unwrap(), naive_cosine(&a, &b, 4)),
        ];
        for (k, (x, y)) in got.into_iter().enumerate() {
            worst[k] = worst[k].max(rel(x, y));
        }
        // Keep the embedder trait object path exercised too.
        let _ = (&emb as &dyn Embedder).embed(&a);
        let _ = gram_matrix(&PyramidExtractor.extract(&a).levels[0]);
    }
    let names = ["landmark", "pixel_l1", "style", "tv", "pixel_l2", "cosine"];
    let max = worst.iter().cloned().fold(0.0, f64::max);
    let detail = names.iter().zip(&worst).map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ");
    outcome(max < 1e-10, format!("100 random 8x8 inputs, max rel err: {detail}"))
}

// ---------------------------------------------------------------------------

fn ac6_tv_inpainting() -> Outcome {
    let cfg = InpaintConfig::default();
    let mask = Mask::from_fn(24, 20, |x, y| (6..15).contains(&x) && (5..12).contains(&y));
    let constant = ImageBuffer::filled(24, 20, [0.25, 0.5, 0.75]);
    let filled = tv_inpaint(&morphfit_core::delete_region(&constant, &mask).unwrap(), &mask, &cfg).unwrap();
    let fill_err = filled
        .image
        .data()
        .iter()
        .zip(constant.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut rng = rng(6);
    let mut monotone = true;
    let mut identical = true;
    for _ in 0..5 {
        let img = random_image(&mut rng, 24, 20);
        let mask = Mask::from_vec(24, 20, (0..480).map(|_| rng.random_bool(0.3)).collect()).unwrap();
        let r = tv_inpaint(&img, &mask, &cfg).unwrap();
        monotone &= r.energies.windows(2).all(|w| w[1] <= w[0]);
        monotone &= (smoothed_tv_energy(&r.image) - r.energies.last().unwrap()).abs() < 1e-12;
        for (i, &m) in mask.data().iter().enumerate() {
            if !m {
                identical &= (0..3).all(|c| r.image.data()[3 * i + c].to_bits() == img.data()[3 * i + c].to_bits());
            }
        }
    }
    outcome(
        fill_err < 1e-6 && monotone && identical,
        format!("constant fill error {fill_err:.1e}; energy traces monotone: {monotone}; unmasked pixels bit-identical: {identical}"),
    )
}

// ---------------------------------------------------------------------------

struct Tri2 {
    q: [[f64; 2]; 3],
    z: [f64; 3],
}

/// Per-pixel brute force: every triangle tested at every pixel center, the
/// strictly nearest interpolated depth wins (first index on exact ties).
fn brute_force_ids(tris: &[Tri2], w: usize, h: usize) -> Vec<u32> {
    let mut ids = vec![NO_TRIANGLE; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = [x as f64, y as f64];
            let mut best = f64::INFINITY;
            for (t, tri) in tris.iter().enumerate() {
                let [a, b, c] = tri.q;
                let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
                if det == 0.0 {
                    continue;
                }
                let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
                let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
                let l0 = 1.0 - l1 - l2;
                if l0 <= 0.0 || l1 <= 0.0 || l2 <= 0.0 {
                    continue;
                }
                let z = l0 * tri.z[0] + l1 * tri.z[1] + l2 * tri.z[2];
                if z < best {
                    best = z;
                    ids[y * w + x] = t as u32;
                }
            }
        }
    }
    ids
}

fn ac7_renderer() -> Outcome {
    // Thread-count determinism on a full synthetic render.
    let model = synth_model(7, 300).unwrap();
    let params = random_scene(&mut rng(7), 96, 0.5);
    let render_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| render_scene(&model, &params, 96, 96).unwrap())
    };
    let (ref_img, ref_cov) = render_with(1);
    let deterministic = [2, 3, 8].iter().all(|&t| {
        let (img, cov) = render_with(t);
        cov == ref_cov && img.data().iter().zip(ref_img.data()).all(|(a, b)| a.to_bits() == b.to_bits())
    });

    // Z-buffer against brute force.
    let mut rng = rng(77);
    let mut mismatches = 0;
    let mut pixels = 0;
    for _ in 0..50 {
        let tris: Vec<Tri2> = (0..12)
            .map(|_| Tri2 {
                q: std::array::from_fn(|_| [rng.random_range(-4.0..36.0), rng.random_range(-4.0..36.0)]),
                z: std::array::from_fn(|_| rng.random_range(0.0..10.0)),
            })
            .collect();
        let points: Vec<[f64; 2]> = tris.iter().flat_map(|t| t.q).collect();
        let depths: Vec<f64> = tris.iter().flat_map(|t| t.z).collect();
        let colors: Vec<f64> = (0..points.len() * 3).map(|_| rng.random()).collect();
        let triangles: Vec<[u32; 3]> = (0..tris.len() as u32).map(|t| [3 * t, 3 * t + 1, 3 * t + 2]).collect();
        let r = rasterize_full(&points, &depths, &colors, &triangles, 32, 32).unwrap();
        let oracle = brute_force_ids(&tris, 32, 32);
        mismatches += r.triangle_ids.iter().zip(&oracle).filter(|(a, b)| a != b).count();
        pixels += oracle.iter().filter(|&&t| t != NO_TRIANGLE).count();
    }

    // Barycenter color.
    let points = [[1.0, 1.0], [13.0, 1.0], [1.0, 13.0]];
    let colors = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let r = rasterize_full(&points, &[1.0; 3], &colors, &[[0, 1, 2]], 16, 16).unwrap();
    let c = r.image.get(5, 5);
    let bary_err = c.iter().map(|v| (v - 1.0 / 3.0).abs()).fold(0.0, f64::max);

    outcome(
        deterministic && mismatches == 0 && bary_err <= 0.01,
        format!(
            "bit-identical across 1/2/3/8 threads: {deterministic}; z-buffer mismatches {mismatches} over {pixels} covered pixels (50 scenes); barycenter color error {bary_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------------------

fn naive_percentile(d: &[f64], q: f64) -> f64 {
    let mut s = d.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = s.len();
    let mut rank = 1;
    while (rank as f64) < q * m as f64 - 1e-9 {
        rank += 1;
    }
    s[rank.min(m) - 1]
}

fn ac8_metrics() -> Outcome {
    let mut rng = rng(8);
    let mut exact = true;
    for _ in 0..200 {
        let m = rng.random_range(1..60);
        let d: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..5.0)).collect();
        for q in [0.0, 0.1, 0.5, 0.9, 0.95, 1.0, rng.random()] {
            exact &= percentile_error(&d, q).unwrap().percentile == naive_percentile(&d, q);
        }
    }

    let model = synth_model(8, 200).unwrap();
    let mesh = Mesh::from_model(&model, &random_scene(&mut rng, 64, 0.5)).unwrap();
    let points: Vec<[f64; 3]> = (0..200)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.5..1.5)))
        .collect();
    let motion = RigidTransform {
        rotation: rotation_from_euler(0.7, -1.2, 2.3).unwrap(),
        translation: [3.0, -1.0, 2.5],
    };
    let moved_mesh = Mesh::new(
        mesh.positions.iter().map(|&p| motion.apply(p)).collect(),
        mesh.colors.clone(),
        mesh.triangles.clone(),
    )
    .unwrap();
    let moved_points: Vec<[f64; 3]> = points.iter().map(|&p| motion.apply(p)).collect();
    let d0 = point_to_mesh_distances(&points, &mesh).unwrap().distances;
    let d1 = point_to_mesh_distances(&moved_points, &moved_mesh).unwrap().distances;
    let rigid = d0.iter().zip(&d1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let recovered = procrustes_rigid(&mesh.positions, &moved_mesh.positions).unwrap();
    let align_err = (recovered.rotation - motion.rotation).amax();

    let model_rt = decode_model(&encode_model(&model)).unwrap() == model;
    let obj_rt = Mesh::parse_obj(&mesh.to_obj()).unwrap() == mesh;
    outcome(
        exact && rigid <= 1e-9 && model_rt && obj_rt && align_err < 1e-9,
        format!(
            "percentile exact vs sort oracle: {exact}; rigid-motion distance change {rigid:.1e}; model round trip lossless: {model_rt}; OBJ round trip lossless: {obj_rt}"
        ),
    )
}

fn main() {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC")).collect();
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("AC1", ac1_gradient_oracle),
        ("AC2", ac2_synthetic_recovery),
        ("AC3", ac3_occlusion_robustness),
        ("AC4", ac4_loss_identities),
        ("AC5", ac5_loss_oracles),
        ("AC6", ac6_tv_inpainting),
        ("AC7", ac7_renderer),
        ("AC8", ac8_metrics),
    ];
    let mut failed = 0;
    for (id, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let r = run();
        println!("{id} {} {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
        failed += usize::from(!r.pass);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
