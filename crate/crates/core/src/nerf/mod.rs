//! Positional encoding, the shape-deformed conditional field, cameras and the volume renderer.

pub mod camera;
pub mod encoding;
pub mod field;
pub mod render;

pub use camera::{
    camera_rays, camera_rays_var, pose_grid, sample_camera, CameraConfig, CameraPose, PatchSpec, PixelSet, RayBatch, RayVars,
};
pub use encoding::{deformed_encode, positional_encode, EncodingConfig, PositionalEncoder};
pub use field::{AppearanceCode, Code, Codes, ConditionedField, FieldSample, Generator, GeneratorConfig, RadianceField, ShapeCode};
pub use render::{composite, render_image, render_pixels, render_rays, sample_depths, RenderConfig, Rendered};
