//! `morphfit`: occluder masks, inpainting, model fitting, rendering and mesh
//! evaluation from the command line.
//!
//! Exit codes: 0 success, 2 I/O failure, 3 bad format or invalid input,
//! 4 numerical failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use morphfit_core::render::render_scene_full;
use morphfit_core::{
    assemble_shape, delete_region, error_heatmap, extract_class_mask, fit_image, load_model, percentile_error,
    point_to_mesh_distances, procrustes_rigid, project_vertices, save_model, select_landmarks, synth_model, tv_inpaint,
    Error, ImageBuffer, InpaintConfig, LandmarkSet, Mask, Mesh, MorphableModel, ParsingMap, RunConfig, SceneParams,
};

#[derive(Parser)]
#[command(name = "morphfit", version, about = "Morphable face model fitting with occluder removal")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract one class of a parsing map as a dilated mask PNG.
    Mask(MaskArgs),
    /// Fill the masked region of an image by TV inpainting.
    Inpaint(InpaintArgs),
    /// Fit the model to a photo: landmarks first, then photometric refinement.
    Fit(FitArgs),
    /// Render a parameter file to a PNG and a coverage mask.
    Render(RenderArgs),
    /// Distances from a fitted mesh to a reference mesh, with a heatmap.
    Eval(EvalArgs),
    /// Write a deterministic synthetic model.
    Synth(SynthArgs),
    /// Print the dimensions of a model file.
    ModelInfo(ModelInfoArgs),
}

#[derive(Args)]
struct MaskArgs {
    /// 8-bit grayscale PNG of class ids.
    #[arg(long)]
    parsing: PathBuf,
    #[arg(long, default_value_t = morphfit_core::occlusion::DEFAULT_EYEGLASS_CLASS)]
    class: u8,
    #[arg(long, default_value_t = morphfit_core::occlusion::DEFAULT_DILATE_PX)]
    dilate: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InpaintArgs {
    #[arg(long)]
    image: PathBuf,
    /// White pixels are deleted and refilled.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = InpaintConfig::default().iters)]
    iters: usize,
    #[arg(long, default_value_t = InpaintConfig::default().tol)]
    tol: f64,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    image: PathBuf,
    /// 68 lines of "x y".
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Pixels eligible for the photometric comparison (white). Defaults to
    /// the whole image.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// key = value file; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Writes PREFIX.params, PREFIX_report.txt, PREFIX_overlay.png and
    /// PREFIX.obj.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    out: PathBuf,
    /// Coverage mask PNG; defaults to OUT with a `_coverage` suffix.
    #[arg(long)]
    coverage: Option<PathBuf>,
    /// Also write the projected landmarks.
    #[arg(long)]
    landmarks: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Mesh whose vertices are measured.
    #[arg(long)]
    fit: PathBuf,
    /// Reference surface.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    heatmap: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    q: f64,
    /// Rigidly align the fitted vertices to the reference vertices first
    /// (same vertex order required).
    #[arg(long)]
    procrustes: bool,
    #[arg(long, default_value_t = 256)]
    size: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    vertices: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelInfoArgs {
    #[arg(long)]
    model: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 2,
        Error::Format { .. } | Error::InvalidInput(_) | Error::Dimension { .. } => 3,
        Error::Numerical(_) => 4,
    }
}

fn with_suffix(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn prefixed(prefix: &Path, tail: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(tail);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_owned(), source })
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn projected_landmarks(model: &MorphableModel, params: &SceneParams) -> Result<LandmarkSet, Error> {
    let shape = assemble_shape(model, &params.shape)?;
    let proj = project_vertices(&shape, &params.pose)?;
    select_landmarks(&proj.points, model.landmark_indices())
}

fn cmd_mask(a: &MaskArgs) -> Result<(), Error> {
    let parsing = ParsingMap::load_png(&a.parsing)?;
    let mask = extract_class_mask(&parsing, a.class, a.dilate);
    if mask.count() == 0 {
        warn!("class {} does not occur in {}; writing an empty mask", a.class, a.parsing.display());
    }
    mask.save_png(&a.out)?;
    info!("mask {}: {} pixels", a.out.display(), mask.count());
    println!("pixels = {}", mask.count());
    Ok(())
}

fn cmd_inpaint(a: &InpaintArgs) -> Result<(), Error> {
    let image = ImageBuffer::load_png(&a.image)?;
    let mask = Mask::load_png(&a.mask)?;
    mask.check_size(image.width(), image.height())?;
    let corrupted = delete_region(&image, &mask)?;
    let cfg = InpaintConfig { iters: a.iters, tol: a.tol, ..InpaintConfig::default() };
    let result = tv_inpaint(&corrupted, &mask, &cfg)?;
    for (i, e) in result.energies.iter().enumerate() {
        log::debug!("sweep {i}: energy {e:.9e}");
    }
    result.image.save_png(&a.out)?;
    let first = result.energies.first().copied().unwrap_or(0.0);
    let last = result.energies.last().copied().unwrap_or(0.0);
    println!("initial_energy = {first:.9e}");
    println!("final_energy = {last:.9e}");
    println!("iterations = {}", result.iterations);
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<(), Error> {
    let cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let photo = ImageBuffer::load_png(&a.image)?;
    let gt = LandmarkSet::load(&a.landmarks)?;
    let model = load_model(&a.model)?;
    let mask = match &a.mask {
        Some(path) => {
            let m = Mask::load_png(path)?;
            m.check_size(photo.width(), photo.height())?;
            m
        }
        None => Mask::new(photo.width(), photo.height(), true),
    };
    let result = fit_image(&photo, &mask, &gt, &model, &cfg.fit)?;
    let params = result.params();

    let raster = render_scene_full(&model, params, photo.width(), photo.height())?;
    let mut overlay = photo.clone();
    for y in 0..photo.height() {
        for x in 0..photo.width() {
            if raster.coverage.get(x, y) {
                overlay.set(x, y, raster.image.get(x, y));
            }
        }
    }
    let rmse = projected_landmarks(&model, params)?.rmse(&gt);

    let lm = &result.landmark;
    let ph = &result.photometric;
    let t = &ph.final_terms;
    let mut report = String::new();
    let _ = writeln!(report, "landmark_rmse_px = {rmse}");
    let _ = writeln!(report, "landmark_iterations = {}", lm.iterations);
    let _ = writeln!(report, "landmark_converged = {}", lm.converged);
    let _ = writeln!(report, "landmark_time_s = {}", result.landmark_time.as_secs_f64());
    let _ = writeln!(report, "landmark_trace = {}", join(&lm.trace));
    let _ = writeln!(report, "photometric_iterations = {}", ph.iterations);
    let _ = writeln!(report, "photometric_converged = {}", ph.converged);
    let _ = writeln!(report, "photometric_time_s = {}", result.photometric_time.as_secs_f64());
    let _ = writeln!(report, "photometric_trace = {}", join(&ph.trace));
    let _ = writeln!(report, "objective_pixel = {}", t.pixel);
    let _ = writeln!(report, "objective_feature = {}", t.feature);
    let _ = writeln!(report, "objective_regularization = {}", t.regularization);
    let _ = writeln!(report, "objective_total = {}", t.total);
    report.push_str(&params.to_text());

    let params_path = prefixed(&a.out_prefix, ".params");
    let report_path = prefixed(&a.out_prefix, "_report.txt");
    let overlay_path = prefixed(&a.out_prefix, "_overlay.png");
    let obj_path = prefixed(&a.out_prefix, ".obj");
    params.save(&params_path)?;
    write_text(&report_path, &report)?;
    overlay.save_png(&overlay_path)?;
    Mesh::from_model(&model, params)?.save_obj(&obj_path)?;
    info!(
        "fit: landmark rmse {rmse:.4} px, objective {:.6e}, outputs {}*",
        t.total,
        a.out_prefix.display()
    );
    println!("landmark_rmse_px = {rmse}");
    println!("objective_total = {}", t.total);
    Ok(())
}

fn cmd_render(a: &RenderArgs) -> Result<(), Error> {
    let model = load_model(&a.model)?;
    let params = SceneParams::load(&a.params)?;
    let raster = render_scene_full(&model, &params, a.width, a.height)?;
    raster.image.save_png(&a.out)?;
    let coverage_path = a.coverage.clone().unwrap_or_else(|| with_suffix(&a.out, "_coverage", "png"));
    raster.coverage.save_png(&coverage_path)?;
    if let Some(path) = &a.landmarks {
        projected_landmarks(&model, &params)?.save(path)?;
    }
    println!("covered_pixels = {}", raster.coverage.count());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), Error> {
    if !(a.q > 0.0 && a.q < 1.0) {
        return Err(Error::InvalidInput(format!("q must lie in (0, 1), got {}", a.q)));
    }
    let mut fit = Mesh::load_obj(&a.fit)?;
    let gt = Mesh::load_obj(&a.gt)?;
    if a.procrustes {
        let t = procrustes_rigid(&fit.positions, &gt.positions)?;
        let moved = fit.positions.iter().map(|p| t.apply(*p)).collect();
        fit = Mesh::new(moved, fit.colors.clone(), fit.triangles.clone())?;
    }
    let d = point_to_mesh_distances(&fit.positions, &gt)?;
    if d.degenerate_skipped > 0 {
        warn!("{} degenerate reference triangles skipped", d.degenerate_skipped);
    }
    let s = percentile_error(&d.distances, a.q)?;
    let heat = error_heatmap(&fit, &d.distances, s.max, a.size, a.size)?;
    heat.save_png(&a.heatmap)?;
    println!("mean = {}", s.mean);
    println!("percentile_{} = {}", a.q, s.percentile);
    println!("top_mean = {}", s.top_mean);
    println!("max = {}", s.max);
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<(), Error> {
    let model = synth_model(a.seed, a.vertices)?;
    save_model(&model, &a.out)?;
    info!("synthetic model seed {} with {} vertices written to {}", a.seed, a.vertices, a.out.display());
    Ok(())
}

fn cmd_model_info(a: &ModelInfoArgs) -> Result<(), Error> {
    let model = load_model(&a.model)?;
    println!("vertices = {}", model.n_vertices());
    println!("triangles = {}", model.triangles().len());
    println!("identity_components = {}", model.basis_id().ncols());
    println!("expression_components = {}", model.basis_exp().ncols());
    println!("texture_components = {}", model.basis_tex().ncols());
    println!("landmarks = {}", model.landmark_indices().len());
    println!("mean_shape_diagonal = {}", model.mean_shape_diagonal());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Mask(a) => cmd_mask(a),
        Command::Inpaint(a) => cmd_inpaint(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::ModelInfo(a) => cmd_model_info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
