use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Camera on a sphere around the origin, looking at the origin, z up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
}

impl CameraPose {
    /// Validated pose; azimuth is wrapped into `[0, 2pi)`.
    pub fn new(azimuth: f64, elevation: f64, radius: f64) -> Result<Self> {
        if !azimuth.is_finite() || !elevation.is_finite() || !radius.is_finite() {
            return Err(Error::invalid("camera pose must be finite"));
        }
        if !(0.0..=FRAC_PI_2 + 1e-12).contains(&elevation) {
            return Err(Error::invalid(format!("elevation {elevation} is outside the upper hemisphere [0, pi/2]")));
        }
        if radius <= 0.0 {
            return Err(Error::invalid("camera radius must be positive"));
        }
        Ok(CameraPose { azimuth: azimuth.rem_euclid(TAU), elevation: elevation.min(FRAC_PI_2), radius })
    }

    pub fn position(&self) -> [f64; 3] {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        [self.radius * ce * ca, self.radius * ce * sa, self.radius * se]
    }

    /// Angle between the viewing directions of two poses, in radians.
    pub fn angle_to(&self, other: &CameraPose) -> f64 {
        let a = self.position();
        let b = other.position();
        let dot: f64 = (0..3).map(|i| a[i] * b[i]).sum::<f64>() / (self.radius * other.radius);
        dot.clamp(-1.0, 1.0).acos()
    }
}

/// Camera intrinsics and the ray interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub radius: f64,
    pub near: f64,
    pub far: f64,
    pub fov_degrees: f64,
    pub min_elevation: f64,
    pub max_elevation: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig { radius: 1.5, near: 0.5, far: 2.5, fov_degrees: 50.0, min_elevation: 0.0, max_elevation: FRAC_PI_2 }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::config("camera.radius", "must be positive"));
        }
        if !(self.near > 0.0) {
            return Err(Error::config("camera.near", "must be positive"));
        }
        if !(self.far > self.near) {
            return Err(Error::config("camera.far", "must be greater than camera.near"));
        }
        if !(self.fov_degrees > 0.0 && self.fov_degrees < 180.0) {
            return Err(Error::config("camera.fov_degrees", "must be in (0, 180)"));
        }
        if !(0.0..=FRAC_PI_2).contains(&self.min_elevation) || !(0.0..=FRAC_PI_2).contains(&self.max_elevation) {
            return Err(Error::config("camera.min_elevation", "elevations must lie in [0, pi/2]"));
        }
        if self.min_elevation > self.max_elevation {
            return Err(Error::config("camera.max_elevation", "must not be below camera.min_elevation"));
        }
        Ok(())
    }

    fn half_extent(&self) -> f64 {
        (self.fov_degrees.to_radians() * 0.5).tan()
    }

    pub fn pose(&self, azimuth: f64, elevation: f64) -> Result<CameraPose> {
        CameraPose::new(azimuth, elevation, self.radius)
    }
}

/// Uniform azimuth, elevation uniform in angle over the configured band.
pub fn sample_camera(rng: &mut impl Rng, config: &CameraConfig) -> CameraPose {
    let azimuth = rng.gen_range(0.0..TAU);
    let elevation = if config.max_elevation > config.min_elevation {
        rng.gen_range(config.min_elevation..=config.max_elevation)
    } else {
        config.min_elevation
    };
    CameraPose { azimuth, elevation, radius: config.radius }
}

/// Continuous pixel coordinates (`u` right, `v` down, pixel centres at `i + 0.5`)
/// inside a square viewport of side `resolution`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSet {
    pub resolution: usize,
    pub coords: Vec<(f64, f64)>,
    /// Side of the square patch the coordinates form, row-major.
    pub side: usize,
}

impl PixelSet {
    pub fn full(resolution: usize) -> Self {
        let coords = (0..resolution)
            .flat_map(|v| (0..resolution).map(move |u| (u as f64 + 0.5, v as f64 + 0.5)))
            .collect();
        PixelSet { resolution, coords, side: resolution }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Placement of a `size x size` patch: sample spacing `stride` (pixels) and
/// the top-left corner of the covered region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSpec {
    pub size: usize,
    pub stride: f64,
    pub offset_u: f64,
    pub offset_v: f64,
}

impl PatchSpec {
    pub fn full(resolution: usize) -> Self {
        PatchSpec { size: resolution, stride: 1.0, offset_u: 0.0, offset_v: 0.0 }
    }

    /// Random scale in `[size/resolution, max_scale]` and random offset.
    pub fn random(rng: &mut impl Rng, size: usize, resolution: usize, max_scale: f64) -> Result<Self> {
        if size == 0 || size > resolution {
            return Err(Error::invalid(format!("patch size {size} does not fit a {resolution}px viewport")));
        }
        let min_scale = size as f64 / resolution as f64;
        let max_scale = max_scale.clamp(min_scale, 1.0);
        let scale = if max_scale > min_scale { rng.gen_range(min_scale..=max_scale) } else { min_scale };
        let stride = scale * resolution as f64 / size as f64;
        let room = (resolution as f64 - stride * size as f64).max(0.0);
        let offset_u = if room > 0.0 { rng.gen_range(0.0..=room) } else { 0.0 };
        let offset_v = if room > 0.0 { rng.gen_range(0.0..=room) } else { 0.0 };
        Ok(PatchSpec { size, stride, offset_u, offset_v })
    }

    pub fn pixels(&self, resolution: usize) -> Result<PixelSet> {
        let extent = self.stride * self.size as f64;
        let slack = 1e-9 * resolution as f64;
        if self.size == 0
            || self.offset_u < 0.0
            || self.offset_v < 0.0
            || self.offset_u + extent > resolution as f64 + slack
            || self.offset_v + extent > resolution as f64 + slack
        {
            return Err(Error::invalid(format!("patch {self:?} lies outside the {resolution}px viewport")));
        }
        let coords = (0..self.size)
            .flat_map(|j| {
                (0..self.size).map(move |i| {
                    (self.offset_u + (i as f64 + 0.5) * self.stride, self.offset_v + (j as f64 + 0.5) * self.stride)
                })
            })
            .collect();
        Ok(PixelSet { resolution, coords, side: self.size })
    }
}

/// Rays for a set of pixels of one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBatch {
    pub origins: Tensor,
    pub directions: Tensor,
    pub near: f64,
    pub far: f64,
    pub pixels: PixelSet,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.directions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vars(&self, graph: &Graph) -> RayVars {
        RayVars {
            origins: graph.constant(self.origins.clone()),
            directions: graph.constant(self.directions.clone()),
            near: self.near,
            far: self.far,
        }
    }
}

/// Rays on a graph; `origins` has one row (shared) or one row per ray.
#[derive(Debug, Clone)]
pub struct RayVars {
    pub origins: Var,
    pub directions: Var,
    pub near: f64,
    pub far: f64,
}

impl RayVars {
    pub fn len(&self) -> usize {
        self.directions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn normalized_offsets(pixels: &PixelSet, config: &CameraConfig) -> (Tensor, Tensor, Tensor) {
    let ext = config.half_extent();
    let res = pixels.resolution as f64;
    let n = pixels.len();
    let mut a = Tensor::zeros(n, 1);
    let mut b = Tensor::zeros(n, 1);
    let mut inv_norm = Tensor::zeros(n, 1);
    for (i, &(u, v)) in pixels.coords.iter().enumerate() {
        let x = (2.0 * u / res - 1.0) * ext;
        let y = (1.0 - 2.0 * v / res) * ext;
        a.data_mut()[i] = x;
        b.data_mut()[i] = y;
        inv_norm.data_mut()[i] = 1.0 / (1.0 + x * x + y * y).sqrt();
    }
    (a, b, inv_norm)
}

fn check_pixels(pixels: &PixelSet) -> Result<()> {
    let res = pixels.resolution as f64;
    if pixels.resolution == 0 {
        return Err(Error::invalid("viewport resolution must be positive"));
    }
    if pixels.coords.iter().any(|&(u, v)| !(0.0..=res).contains(&u) || !(0.0..=res).contains(&v)) {
        return Err(Error::invalid("pixel coordinate outside the viewport"));
    }
    Ok(())
}

/// Rays through `pixels` for `pose`.
pub fn camera_rays(pose: &CameraPose, pixels: &PixelSet, config: &CameraConfig) -> Result<RayBatch> {
    check_pixels(pixels)?;
    if !(config.near > 0.0 && config.far > config.near) {
        return Err(Error::invalid("ray interval must satisfy 0 < near < far"));
    }
    let (se, ce) = pose.elevation.sin_cos();
    let (sa, ca) = pose.azimuth.sin_cos();
    let forward = [-ce * ca, -ce * sa, -se];
    let right = [-sa, ca, 0.0];
    let up = [-se * ca, -se * sa, ce];
    let (a, b, inv) = normalized_offsets(pixels, config);
    let n = pixels.len();
    let mut dirs = Tensor::zeros(n, 3);
    for i in 0..n {
        let (ai, bi, s) = (a.data()[i], b.data()[i], inv.data()[i]);
        for c in 0..3 {
            dirs.set(i, c, (forward[c] + ai * right[c] + bi * up[c]) * s);
        }
    }
    let pos = pose.position();
    Ok(RayBatch {
        origins: Tensor::row(&pos),
        directions: dirs,
        near: config.near,
        far: config.far,
        pixels: pixels.clone(),
    })
}

/// Rays whose origin and directions are differentiable functions of the
/// `[1, 1]` azimuth and elevation values.
pub fn camera_rays_var(azimuth: &Var, elevation: &Var, pixels: &PixelSet, config: &CameraConfig) -> Result<RayVars> {
    check_pixels(pixels)?;
    let g = azimuth.graph();
    let (sa, ca) = (azimuth.sin(), azimuth.cos());
    let (se, ce) = (elevation.sin(), elevation.cos());
    let zero = g.scalar(0.0);
    let cece = ce.mul(&ca);
    let cesa = ce.mul(&sa);
    let forward = Var::concat_cols(&[&cece, &cesa, &se]).neg();
    let right = Var::concat_cols(&[&sa.neg(), &ca, &zero]);
    let up = Var::concat_cols(&[&se.mul(&ca).neg(), &se.mul(&sa).neg(), &ce]);
    let (a, b, inv) = normalized_offsets(pixels, config);
    let a = g.constant(a);
    let b = g.constant(b);
    let inv = g.constant(inv);
    let directions = forward.add(&a.mul(&right)).add(&b.mul(&up)).mul(&inv);
    let origins = forward.scale(-config.radius);
    Ok(RayVars { origins, directions, near: config.near, far: config.far })
}

/// Hemisphere grid of `n_az x n_el` poses; elevations are bin centres.
pub fn pose_grid(config: &CameraConfig, n_az: usize, n_el: usize) -> Vec<CameraPose> {
    let mut out = Vec::with_capacity(n_az * n_el);
    let span = config.max_elevation - config.min_elevation;
    for j in 0..n_el {
        let el = config.min_elevation + span * (j as f64 + 0.5) / n_el as f64;
        for i in 0..n_az {
            let az = TAU * i as f64 / n_az as f64;
            out.push(CameraPose { azimuth: az, elevation: el, radius: config.radius });
        }
    }
    out
}

/// Wrap an angle difference into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}
