//! Linear morphable face model fitting with eyeglass removal.
//!
//! Images are linear RGB in row-major order, x right and y down, with the
//! top-left pixel center at (0, 0).

pub mod config;
pub mod error;
pub mod eval;
pub mod fit;
pub mod geometry;
mod hull;
pub mod image;
pub mod losses;
pub mod mesh;
pub mod model;
pub mod occlusion;
pub mod render;
pub mod scene;
pub mod shading;

pub const NUM_ID: usize = 80;
pub const NUM_EXP: usize = 64;
pub const NUM_TEX: usize = 80;
pub const NUM_SH: usize = 9;
pub const NUM_POSE: usize = 6;
pub const NUM_PARAMS: usize = NUM_ID + NUM_EXP + NUM_TEX + NUM_SH + NUM_POSE;
pub const NUM_LANDMARKS: usize = 68;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use eval::{
    error_heatmap, percentile_error, point_to_mesh_distances, procrustes_rigid, ErrorSummary,
    MeshDistances, RigidTransform,
};
pub use fit::{
    fit_image, initial_pose, landmark_fit, photometric_fit, FitConfig, FitResult, LandmarkFit,
    ObjectiveWeights, PhotometricFit, PhotometricProblem,
};
pub use geometry::{project_vertices, rotation_from_euler, select_landmarks, vertex_normals, LandmarkSet, Pose, Projection};
pub use image::{ImageBuffer, Mask};
pub use losses::{DownsampleEmbedder, Embedder, LossWeights, PyramidExtractor, StyleExtractor};
pub use mesh::Mesh;
pub use model::{
    assemble_shape, assemble_texture, load_model, save_model, synth_model, MorphableModel, ShapeCoeffs,
    TextureCoeffs,
};
pub use occlusion::{delete_region, extract_class_mask, tv_inpaint, InpaintConfig, InpaintResult, ParsingMap};
pub use render::{rasterize, render_scene, Raster};
pub use scene::SceneParams;
pub use shading::{sh_basis, shade, LightingCoeffs};
