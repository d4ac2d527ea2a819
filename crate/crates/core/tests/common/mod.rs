#![allow(dead_code)]

pub mod criteria;
pub mod oracle;

use std::path::Path;

use nerfedit::autodiff::{Graph, Tensor, Var};
use nerfedit::data::{generate_toy_dataset, RunConfig, ToyDatasetConfig};
use nerfedit::mappers::{MapperConfig, Mappers};
use nerfedit::nerf::{camera_rays, render_rays, CameraPose, Codes, EncodingConfig, Generator, GeneratorConfig, PixelSet, RenderConfig};
use nerfedit::nn::ParamSet;
use nerfedit::train::{Critic, CriticConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two-layer, width-8 generator.
pub fn tiny_generator_config() -> GeneratorConfig {
    GeneratorConfig {
        encoding: EncodingConfig { m_pos: 2, m_view: 1 },
        code_dim: 6,
        trunk_layers: 2,
        trunk_width: 8,
        deform_layers: 2,
        deform_width: 8,
        color_width: 8,
        deform_init_std: 0.3,
        ..GeneratorConfig::default()
    }
}

pub fn tiny_generator(seed: u64) -> Generator {
    Generator::new(tiny_generator_config(), &mut rng(seed)).unwrap()
}

pub fn tiny_run_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.generator = tiny_generator_config();
    c.render.samples_per_ray = 8;
    c.train.batch_size = 2;
    c.train.patch_size = 8;
    c.train.critic = CriticConfig { channels: vec![4], slope: 0.2 };
    c.train.log_every = 1;
    c.train.mapper.batch_size = 2;
    c.train.mapper.render_resolution = 8;
    c.train.finetune.render_resolution = 8;
    c.mapper = MapperConfig { projection: 8, hidden: 8 };
    c.toy.instances_per_combination = 1;
    c.toy.resolution = 16;
    c.toy.supersample = 1;
    c.inversion.rounds = 1;
    c.inversion.pose_steps = 2;
    c.inversion.shape_steps = 2;
    c.inversion.appearance_steps = 2;
    c.inversion.grid_azimuths = 2;
    c.inversion.grid_elevations = 1;
    c
}

pub fn tiny_critic(seed: u64) -> Critic {
    Critic::new(CriticConfig { channels: vec![4], slope: 0.2 }, 8, &mut rng(seed)).unwrap()
}

pub fn tiny_mappers(embed_dim: usize, code_dim: usize, seed: u64) -> Mappers {
    Mappers::new(&MapperConfig { projection: 8, hidden: 8 }, embed_dim, code_dim, &mut rng(seed)).unwrap()
}

pub fn write_toy(dir: &Path, config: &ToyDatasetConfig) {
    generate_toy_dataset(config, dir).unwrap();
}

/// Overwrite every parameter with `N(0, std^2)` draws.
pub fn randomize(params: &mut ParamSet, seed: u64, std: f64) {
    let mut r = rng(seed);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = r.gen_range(-1.0..1.0) * std * 1.7;
        }
    }
}

/// Pixel set of a `side x side` block in the middle of a `res` viewport.
pub fn centre_pixels(res: usize, side: usize) -> PixelSet {
    let start = (res - side) / 2;
    let coords = (0..side)
        .flat_map(|j| (0..side).map(move |i| ((start + i) as f64 + 0.5, (start + j) as f64 + 0.5)))
        .collect();
    PixelSet { resolution: res, coords, side }
}

/// Rendered colours of `pixels` on `g`, with codes supplied as graph nodes.
pub fn render_on(g: &Graph, generator: &Generator, bound: &nerfedit::nn::Bound, z_s: &Var, z_a: &Var, pose: &CameraPose, pixels: &PixelSet, render: &RenderConfig) -> Var {
    let rays = camera_rays(pose, pixels, &render.camera).unwrap().to_vars(g);
    let field = generator.field(bound, z_s, z_a);
    render_rays(&field, &rays, render.samples_per_ray, render.background, None).unwrap().rgb
}

/// Fixed random weights for a scalar pixel loss `sum(w * rgb)`.
pub fn pixel_weights(rows: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(rows, 3, |_, _| r.gen_range(-1.0..1.0))
}

pub fn sample_codes(dim: usize, seed: u64) -> Codes {
    Codes::sample(&mut rng(seed), dim)
}

/// `||a - n|| / max(||a||, ||n||)` over paired analytic and numeric gradients.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale < 1e-14 {
        diff
    } else {
        diff / scale
    }
}

/// Central difference of `f` at `x` along coordinate `i`.
pub fn central_difference(x: &mut [f64], i: usize, h: f64, f: &mut impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let plus = f(x);
    x[i] = orig - h;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * h)
}

/// Tiny checkpoint with randomised mappers trained against the stub backend.
pub fn tiny_model(seed: u64) -> nerfedit::edit::Model {
    use nerfedit::embed::{load_backend, EmbedderConfig};
    let backend = load_backend(&EmbedderConfig::default()).unwrap();
    let config = tiny_run_config();
    let mut ck = nerfedit::checkpoint::Checkpoint::new(config, tiny_generator(seed));
    let mut mappers = tiny_mappers(backend.dim(), 6, seed + 1);
    randomize(mappers.shape.params_mut(), seed + 2, 0.5);
    randomize(mappers.appearance.params_mut(), seed + 3, 0.5);
    ck.mappers = Some(mappers);
    ck.mapper_backend = Some(backend.name().to_string());
    nerfedit::edit::Model::new(ck, backend)
}
