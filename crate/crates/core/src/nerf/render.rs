use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::{camera_rays, CameraConfig, CameraPose, PixelSet, RayVars};
use super::field::{Codes, Generator, RadianceField};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::raster::Image;

/// Renderer settings stored with every checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub camera: CameraConfig,
    pub samples_per_ray: usize,
    pub background: [f64; 3],
    /// Rays evaluated together when rendering whole images.
    pub chunk_rays: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { camera: CameraConfig::default(), samples_per_ray: 32, background: [1.0; 3], chunk_rays: 1024 }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.samples_per_ray == 0 {
            return Err(Error::config("render.samples_per_ray", "must be at least 1"));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::config("render.background", "components must lie in [0, 1]"));
        }
        if self.chunk_rays == 0 {
            return Err(Error::config("render.chunk_rays", "must be at least 1"));
        }
        Ok(())
    }
}

/// Output of [`render_rays`].
#[derive(Debug, Clone)]
pub struct Rendered {
    /// `[rays, 3]` composited colour.
    pub rgb: Var,
    /// `[rays, 1]` accumulated opacity.
    pub opacity: Var,
    /// `[rays, samples]` compositing weights.
    pub weights: Var,
    /// `[rays, samples]` transmittance before each sample.
    pub transmittance: Var,
}

/// Stratified sample depths `[rays * samples, 1]`; `jitter = None` takes bin midpoints.
pub fn sample_depths(rays: usize, samples: usize, near: f64, far: f64, jitter: Option<&mut dyn rand::RngCore>) -> Tensor {
    let delta = (far - near) / samples as f64;
    let mut t = Tensor::zeros(rays * samples, 1);
    match jitter {
        None => {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v = near + ((i % samples) as f64 + 0.5) * delta;
            }
        }
        Some(rng) => {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                let u: f64 = rng.gen_range(0.0..1.0);
                *v = near + ((i % samples) as f64 + u) * delta;
            }
        }
    }
    t
}

/// Emission-absorption quadrature over stratified samples, composited over `background`.
pub fn render_rays(
    field: &dyn RadianceField,
    rays: &RayVars,
    samples: usize,
    background: [f64; 3],
    jitter: Option<&mut dyn rand::RngCore>,
) -> Result<Rendered> {
    if samples == 0 {
        return Err(Error::invalid("samples_per_ray must be at least 1"));
    }
    if !(rays.near > 0.0 && rays.far > rays.near) {
        return Err(Error::invalid(format!("empty ray interval [{}, {}]", rays.near, rays.far)));
    }
    let n = rays.len();
    if rays.origins.rows() != 1 && rays.origins.rows() != n {
        return Err(Error::shape("ray origins must have one row or one row per ray"));
    }
    let g = rays.directions.graph().clone();
    let delta = (rays.far - rays.near) / samples as f64;
    let t = g.constant(sample_depths(n, samples, rays.near, rays.far, jitter));
    let dirs = rays.directions.repeat_rows(samples);
    let origins = if rays.origins.rows() == 1 { rays.origins.clone() } else { rays.origins.repeat_rows(samples) };
    let points = origins.add(&t.mul(&dirs));
    let (sigma, rgb) = field.eval(&points, &rays.directions, samples);
    composite(&sigma, &rgb, n, samples, delta, background)
}

/// Composite per-sample density `[n*s, 1]` and colour `[n*s, 3]` with spacing `delta`.
pub fn composite(sigma: &Var, rgb: &Var, rays: usize, samples: usize, delta: f64, background: [f64; 3]) -> Result<Rendered> {
    if sigma.shape() != (rays * samples, 1) || rgb.shape() != (rays * samples, 3) {
        return Err(Error::shape(format!(
            "field returned {:?} / {:?} for {rays} rays x {samples} samples",
            sigma.shape(),
            rgb.shape()
        )));
    }
    let g = sigma.graph().clone();
    let tau = sigma.scale(delta).reshape(rays, samples);
    let alpha = tau.neg().exp().neg().add_scalar(1.0);
    let transmittance = tau.cumsum_cols(true, false).neg().exp();
    let weights = transmittance.mul(&alpha);
    let color = weights.reshape(rays * samples, 1).mul(rgb).sum_row_groups(samples);
    let opacity = tau.sum_cols().neg().exp().neg().add_scalar(1.0);
    let bg = g.constant(Tensor::row(&background));
    let rgb = color.add(&opacity.neg().add_scalar(1.0).mul(&bg));
    Ok(Rendered { rgb, opacity, weights, transmittance })
}

/// Render `pixels` of `codes` seen from `pose` without recording gradients.
pub fn render_pixels(generator: &Generator, codes: &Codes, pose: &CameraPose, pixels: &PixelSet, config: &RenderConfig) -> Result<Tensor> {
    generator.check_codes(codes)?;
    let rays = camera_rays(pose, pixels, &config.camera)?;
    let g = Graph::inference();
    let bound = generator.params().bind_frozen(&g);
    let z_s = g.constant(codes.shape.to_row());
    let z_a = g.constant(codes.appearance.to_row());
    let field = generator.field(&bound, &z_s, &z_a);
    let mut out = Tensor::zeros(rays.len(), 3);
    let chunk = config.chunk_rays.max(1);
    let origins = g.constant(rays.origins.clone());
    for start in (0..rays.len()).step_by(chunk) {
        let end = (start + chunk).min(rays.len());
        let sub = RayVars {
            origins: origins.clone(),
            directions: g.constant(rays.directions.slice_rows(start, end)),
            near: rays.near,
            far: rays.far,
        };
        let r = render_rays(&field, &sub, config.samples_per_ray, config.background, None)?;
        out.data_mut()[start * 3..end * 3].copy_from_slice(r.rgb.value().data());
    }
    Ok(out)
}

/// Render a full square image.
pub fn render_image(generator: &Generator, codes: &Codes, pose: &CameraPose, resolution: usize, config: &RenderConfig) -> Result<Image> {
    if resolution == 0 {
        return Err(Error::invalid("resolution must be positive"));
    }
    let px = render_pixels(generator, codes, pose, &PixelSet::full(resolution), config)?;
    Image::from_tensor(resolution, resolution, px)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant {
        sigma: f64,
        rgb: [f64; 3],
    }

    impl RadianceField for Constant {
        fn eval(&self, points: &Var, _directions: &Var, _samples: usize) -> (Var, Var) {
            let g = points.graph();
            let n = points.rows();
            (g.constant(Tensor::full(n, 1, self.sigma)), g.constant(Tensor::from_fn(n, 3, |_, c| self.rgb[c])))
        }
    }

    fn rays(g: &Graph, n: usize, near: f64, far: f64) -> RayVars {
        RayVars {
            origins: g.constant(Tensor::row(&[0.0, 0.0, 2.0])),
            directions: g.constant(Tensor::from_fn(n, 3, |_, c| if c == 2 { -1.0 } else { 0.0 })),
            near,
            far,
        }
    }

    #[test]
    fn empty_volume_shows_background() {
        let g = Graph::inference();
        let bg = [0.2, 0.7, 1.0];
        let r = render_rays(&Constant { sigma: 0.0, rgb: [1.0, 0.0, 0.0] }, &rays(&g, 4, 0.5, 2.5), 16, bg, None).unwrap();
        for i in 0..4 {
            for c in 0..3 {
                assert_eq!(r.rgb.value().get(i, c), bg[c]);
            }
            assert_eq!(r.opacity.value().get(i, 0), 0.0);
        }
    }

    #[test]
    fn single_sample_half_alpha() {
        let g = Graph::inference();
        let ln2 = std::f64::consts::LN_2;
        let r = render_rays(&Constant { sigma: ln2 / 2.0, rgb: [1.0, 0.0, 0.0] }, &rays(&g, 1, 0.5, 2.5), 1, [1.0; 3], None).unwrap();
        let px = r.rgb.value().row_slice(0);
        assert!((px[0] - 1.0).abs() < 1e-12);
        assert!((px[1] - 0.5).abs() < 1e-12);
        assert!((px[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_length_interval_rejected() {
        let g = Graph::inference();
        assert!(render_rays(&Constant { sigma: 1.0, rgb: [0.0; 3] }, &rays(&g, 1, 1.0, 1.0), 4, [1.0; 3], None).is_err());
    }

    #[test]
    fn weights_sum_to_opacity() {
        let g = Graph::inference();
        let r = render_rays(&Constant { sigma: 0.8, rgb: [0.3; 3] }, &rays(&g, 2, 0.5, 2.5), 10, [1.0; 3], None).unwrap();
        let total: f64 = r.weights.value().row_slice(0).iter().sum();
        assert!((total - r.opacity.value().get(0, 0)).abs() < 1e-12);
        let t = r.transmittance.value().row_slice(0);
        assert!(t.windows(2).all(|w| w[1] <= w[0]));
    }
}
