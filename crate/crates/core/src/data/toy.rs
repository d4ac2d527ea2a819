use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nerf::{camera_rays, sample_camera, CameraConfig, CameraPose, PixelSet};
use crate::raster::Image;

/// Procedural chair-like objects: a body primitive plus a backrest slab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyDatasetConfig {
    pub archetypes: Vec<Archetype>,
    pub colors: Vec<String>,
    pub instances_per_combination: usize,
    pub resolution: usize,
    pub seed: u64,
    pub camera: CameraConfig,
    /// Maximum per-channel colour jitter.
    pub color_jitter: f64,
    /// Samples per pixel along each axis.
    pub supersample: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    Cube,
    Sphere,
    Cone,
}

impl Archetype {
    pub fn name(&self) -> &'static str {
        match self {
            Archetype::Cube => "cube",
            Archetype::Sphere => "sphere",
            Archetype::Cone => "cone",
        }
    }
}

impl Default for ToyDatasetConfig {
    fn default() -> Self {
        ToyDatasetConfig {
            archetypes: vec![Archetype::Cube, Archetype::Sphere, Archetype::Cone],
            colors: ["red", "green", "blue", "yellow"].iter().map(|s| s.to_string()).collect(),
            instances_per_combination: 100,
            resolution: 64,
            seed: 0,
            camera: CameraConfig { min_elevation: 0.1, max_elevation: 1.2, ..CameraConfig::default() },
            color_jitter: 0.05,
            supersample: 2,
        }
    }
}

/// Base RGB of a palette colour name.
pub fn palette_rgb(name: &str) -> Option<[f64; 3]> {
    Some(match name {
        "red" => [0.85, 0.12, 0.10],
        "green" => [0.15, 0.70, 0.20],
        "blue" => [0.12, 0.25, 0.85],
        "yellow" => [0.92, 0.85, 0.15],
        "orange" => [0.95, 0.55, 0.10],
        "purple" => [0.55, 0.20, 0.70],
        "pink" => [0.95, 0.55, 0.70],
        "cyan" => [0.15, 0.80, 0.85],
        "gray" | "grey" => [0.50, 0.50, 0.50],
        _ => return None,
    })
}

impl ToyDatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.archetypes.is_empty() {
            return Err(Error::config("toy.archetypes", "must not be empty"));
        }
        if self.colors.is_empty() {
            return Err(Error::config("toy.colors", "must not be empty"));
        }
        if let Some(bad) = self.colors.iter().find(|c| palette_rgb(c).is_none()) {
            return Err(Error::config("toy.colors", format!("unknown colour `{bad}`")));
        }
        if self.instances_per_combination == 0 {
            return Err(Error::config("toy.instances_per_combination", "must be at least 1"));
        }
        if self.resolution == 0 {
            return Err(Error::config("toy.resolution", "must be at least 1"));
        }
        if self.supersample == 0 {
            return Err(Error::config("toy.supersample", "must be at least 1"));
        }
        if !(0.0..=0.5).contains(&self.color_jitter) {
            return Err(Error::config("toy.color_jitter", "must lie in [0, 0.5]"));
        }
        self.camera.validate()
    }

    pub fn instance_count(&self) -> usize {
        self.archetypes.len() * self.colors.len() * self.instances_per_combination
    }
}

/// Ground truth for one generated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub archetype: Archetype,
    pub color: String,
    pub azimuth: f64,
    pub elevation: f64,
    pub rgb: [f64; 3],
    pub size: f64,
}

/// One procedural object.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyObject {
    pub archetype: Archetype,
    pub rgb: [f64; 3],
    /// Body half-extent.
    pub size: f64,
}

const LIGHT: [f64; 3] = [0.408_248_290_463_863, 0.408_248_290_463_863, 0.816_496_580_927_726];
const AMBIENT: f64 = 0.35;

fn length(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn sd_box(p: [f64; 3], c: [f64; 3], b: [f64; 3]) -> f64 {
    let q = [(p[0] - c[0]).abs() - b[0], (p[1] - c[1]).abs() - b[1], (p[2] - c[2]).abs() - b[2]];
    let outside = length([q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)]);
    outside + q[0].max(q[1]).max(q[2]).min(0.0)
}

/// Capped cone along z centred at `cz`, half height `h`, bottom radius `r1`, top radius `r2`.
fn sd_capped_cone(p: [f64; 3], cz: f64, h: f64, r1: f64, r2: f64) -> f64 {
    let qx = (p[0] * p[0] + p[1] * p[1]).sqrt();
    let qy = p[2] - cz;
    let (k1x, k1y) = (r2, h);
    let (k2x, k2y) = (r2 - r1, 2.0 * h);
    let cax = qx - qx.min(if qy < 0.0 { r1 } else { r2 });
    let cay = qy.abs() - h;
    let t = (((k1x - qx) * k2x + (k1y - qy) * k2y) / (k2x * k2x + k2y * k2y)).clamp(0.0, 1.0);
    let cbx = qx - k1x + k2x * t;
    let cby = qy - k1y + k2y * t;
    let s = if cbx < 0.0 && cay < 0.0 { -1.0 } else { 1.0 };
    s * (cax * cax + cay * cay).min(cbx * cbx + cby * cby).sqrt()
}

impl ToyObject {
    /// Signed distance to the body union backrest.
    pub fn sdf(&self, p: [f64; 3]) -> f64 {
        let s = self.size;
        let body_z = -0.15;
        let body = match self.archetype {
            Archetype::Cube => sd_box(p, [0.0, 0.0, body_z], [s, s, s * 0.8]),
            Archetype::Sphere => length([p[0], p[1], p[2] - body_z]) - s,
            Archetype::Cone => sd_capped_cone(p, body_z, s * 0.9, s * 1.1, 0.03),
        };
        let back = sd_box(p, [-s - 0.04, 0.0, body_z + 0.3], [0.05, s * 0.9, 0.32]);
        body.min(back)
    }

    fn normal(&self, p: [f64; 3]) -> [f64; 3] {
        let e = 1e-4;
        let mut n = [0.0; 3];
        for (i, ni) in n.iter_mut().enumerate() {
            let mut a = p;
            let mut b = p;
            a[i] += e;
            b[i] -= e;
            *ni = self.sdf(a) - self.sdf(b);
        }
        let l = length(n).max(1e-12);
        n.map(|v| v / l)
    }

    /// Shaded colour seen along a ray, or `None` on a miss.
    pub fn trace(&self, origin: [f64; 3], dir: [f64; 3], near: f64, far: f64) -> Option<[f64; 3]> {
        let mut t = near;
        for _ in 0..256 {
            let p = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
            let d = self.sdf(p);
            if d < 1e-5 {
                let n = self.normal(p);
                let lambert = (n[0] * LIGHT[0] + n[1] * LIGHT[1] + n[2] * LIGHT[2]).max(0.0);
                let shade = AMBIENT + (1.0 - AMBIENT) * lambert;
                return Some(self.rgb.map(|c| (c * shade).clamp(0.0, 1.0)));
            }
            t += d;
            if t > far {
                return None;
            }
        }
        None
    }

    pub fn render(&self, pose: &CameraPose, resolution: usize, supersample: usize, camera: &CameraConfig) -> Result<Image> {
        let ss = supersample.max(1);
        let coords: Vec<(f64, f64)> = (0..resolution)
            .flat_map(|y| (0..resolution).map(move |x| (x, y)))
            .flat_map(|(x, y)| {
                (0..ss * ss).map(move |k| {
                    let (i, j) = (k % ss, k / ss);
                    (x as f64 + (i as f64 + 0.5) / ss as f64, y as f64 + (j as f64 + 0.5) / ss as f64)
                })
            })
            .collect();
        let pixels = PixelSet { resolution, coords, side: resolution };
        let rays = camera_rays(pose, &pixels, camera)?;
        let o = rays.origins.row_slice(0);
        let origin = [o[0], o[1], o[2]];
        let mut out = Tensor::zeros(resolution * resolution, 3);
        let weight = 1.0 / (ss * ss) as f64;
        for r in 0..rays.len() {
            let d = rays.directions.row_slice(r);
            let rgb = self.trace(origin, [d[0], d[1], d[2]], rays.near, rays.far).unwrap_or([1.0; 3]);
            let px = r / (ss * ss);
            for c in 0..3 {
                out.data_mut()[px * 3 + c] += rgb[c] * weight;
            }
        }
        Image::from_tensor(resolution, resolution, out)
    }
}

/// Instances in generation order: archetype-major, then colour, then index.
fn instances(config: &ToyDatasetConfig) -> Vec<(Archetype, String)> {
    let mut out = Vec::with_capacity(config.instance_count());
    for a in &config.archetypes {
        for c in &config.colors {
            for _ in 0..config.instances_per_combination {
                out.push((*a, c.clone()));
            }
        }
    }
    out
}

/// Deterministically draw every object and its pose.
pub fn toy_scene_list(config: &ToyDatasetConfig) -> Result<Vec<(ManifestRecord, ToyObject, CameraPose)>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.instance_count());
    for (i, (archetype, color)) in instances(config).into_iter().enumerate() {
        let base = palette_rgb(&color).expect("validated");
        let rgb = base.map(|c| (c + rng.gen_range(-config.color_jitter..=config.color_jitter)).clamp(0.0, 1.0));
        let size = rng.gen_range(0.22..0.30);
        let pose = sample_camera(&mut rng, &config.camera);
        let record = ManifestRecord {
            id: format!("{i:05}"),
            archetype,
            color,
            azimuth: pose.azimuth,
            elevation: pose.elevation,
            rgb,
            size,
        };
        out.push((record, ToyObject { archetype, rgb, size }, pose));
    }
    Ok(out)
}

/// Write `root/<id>.png` plus `root/manifest.jsonl`.
pub fn generate_toy_dataset(config: &ToyDatasetConfig, root: &Path) -> Result<Vec<ManifestRecord>> {
    let scenes = toy_scene_list(config)?;
    std::fs::create_dir_all(root)?;
    let mut manifest = BufWriter::new(File::create(root.join("manifest.jsonl"))?);
    let mut records = Vec::with_capacity(scenes.len());
    for (record, object, pose) in scenes {
        let img = object.render(&pose, config.resolution, config.supersample, &config.camera)?;
        img.save_png(&root.join(format!("{}.png", record.id)))?;
        serde_json::to_writer(&mut manifest, &record)?;
        manifest.write_all(b"\n")?;
        records.push(record);
    }
    manifest.flush()?;
    Ok(records)
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(root.join("manifest.jsonl"))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
