//! Measurements shared by the property suites and the acceptance target.

use nerfedit::autodiff::{Graph, Tensor, Var};
use nerfedit::mappers::{apply_edit_direction, interpolate_codes};
use nerfedit::nerf::{
    camera_rays, render_image, render_rays, CameraPose, Code, Codes, Generator, PixelSet, PositionalEncoder, RadianceField, RayBatch,
    RenderConfig,
};
use rand::Rng;

use super::rng;

/// Field with the same density and colour everywhere.
pub struct Uniform {
    pub sigma: f64,
    pub rgb: [f64; 3],
}

impl RadianceField for Uniform {
    fn eval(&self, points: &Var, _directions: &Var, _samples: usize) -> (Var, Var) {
        let g = points.graph();
        let n = points.shape().0;
        (g.constant(Tensor::from_fn(n, 1, |_, _| self.sigma)), g.constant(Tensor::from_fn(n, 3, |_, c| self.rgb[c])))
    }
}

fn unit(r: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn random_code(r: &mut impl Rng, dim: usize, std: f64) -> Code {
    Code::new((0..dim).map(|_| r.gen_range(-1.7..1.7) * std).collect()).unwrap()
}

/// Largest density change over `pairs` random `(x, z_s)` when `(z_a, v)`
/// takes `variants` random values.
pub fn density_spread(generator: &Generator, pairs: usize, variants: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let dim = generator.code_dim();
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let x = [r.gen_range(-1.2..1.2), r.gen_range(-1.2..1.2), r.gen_range(-1.2..1.2)];
        let z_s = random_code(&mut r, dim, 1.0);
        let mut reference = None;
        for _ in 0..variants {
            let codes = Codes { shape: z_s.clone(), appearance: random_code(&mut r, dim, 3.0) };
            let d = generator.field_eval(&[x], unit(&mut r), &codes).unwrap()[0].density;
            let base = *reference.get_or_insert(d);
            worst = worst.max((d - base).abs());
        }
    }
    worst
}

/// Largest `|gamma*(x) - gamma(x)|` over `batches * per_batch` fuzzed positions,
/// each batch with its own shape code.
pub fn deformation_excess(generator: &Generator, batches: usize, per_batch: usize, seed: u64) -> (f64, usize) {
    let mut r = rng(seed);
    let encoder = PositionalEncoder::new(3, generator.config().encoding.m_pos);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..batches {
        let spread = 10f64.powf(r.gen_range(-1.0..3.0));
        let points: Vec<f64> = (0..per_batch * 3).map(|_| r.gen_range(-spread..spread)).collect();
        let code_scale = 10f64.powf(r.gen_range(-1.0..1.5));
        let z_s = random_code(&mut r, generator.code_dim(), code_scale);
        let g = Graph::inference();
        let bound = generator.params().bind_frozen(&g);
        let x = g.constant(Tensor::from_vec(per_batch, 3, points.clone()));
        let deformed = generator.deformed_encoding(&bound, &x, &g.constant(z_s.to_row()));
        let base = encoder.encode(&g, &x);
        for (a, b) in deformed.value().data().iter().zip(base.value().data()) {
            worst = worst.max((a - b).abs());
        }
        checked += per_batch;
    }
    (worst, checked)
}

/// Outcome of the three renderer checks.
pub struct RendererAnalytics {
    pub empty_max_deviation: f64,
    pub slab_error: f64,
    pub opacity_range: (f64, f64),
    pub rays: usize,
}

pub fn renderer_analytics(generator: &Generator, rays: usize, seed: u64) -> RendererAnalytics {
    let g = Graph::inference();
    let bg = [0.25, 0.5, 1.0];
    let mut r = rng(seed);
    let probe = |n: usize, r: &mut rand_chacha::ChaCha8Rng| -> RayBatch {
        let pose = CameraPose::new(r.gen_range(-3.0..3.0), r.gen_range(0.0..1.5), 1.5).unwrap();
        let coords = (0..n).map(|_| (r.gen_range(0.0..32.0), r.gen_range(0.0..32.0))).collect();
        camera_rays(&pose, &PixelSet { resolution: 32, coords, side: n }, &RenderConfig::default().camera).unwrap()
    };

    let empty = render_rays(&Uniform { sigma: 0.0, rgb: [0.9, 0.1, 0.3] }, &probe(64, &mut r).to_vars(&g), 32, bg, None).unwrap();
    let empty_max_deviation = empty
        .rgb
        .value()
        .data()
        .chunks(3)
        .flat_map(|px| px.iter().zip(bg).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);

    let batch = probe(8, &mut r);
    let delta = batch.far - batch.near;
    let colour = [0.8, 0.2, 0.4];
    let slab = render_rays(&Uniform { sigma: std::f64::consts::LN_2 / delta, rgb: colour }, &batch.to_vars(&g), 1, bg, None).unwrap();
    let slab_error = slab
        .rgb
        .value()
        .data()
        .chunks(3)
        .flat_map(|px| (0..3).map(move |c| (px[c] - (0.5 * colour[c] + 0.5 * bg[c])).abs()))
        .fold(0.0, f64::max);

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let dim = generator.code_dim();
    let per = 500;
    for _ in 0..rays.div_ceil(per) {
        let codes = Codes { shape: random_code(&mut r, dim, 2.0), appearance: random_code(&mut r, dim, 2.0) };
        let gb = Graph::inference();
        let bound = generator.params().bind_frozen(&gb);
        let (z_s, z_a) = (gb.constant(codes.shape.to_row()), gb.constant(codes.appearance.to_row()));
        let out = render_rays(&generator.field(&bound, &z_s, &z_a), &probe(per, &mut r).to_vars(&gb), 16, [1.0; 3], None).unwrap();
        for &o in out.opacity.value().data() {
            lo = lo.min(o);
            hi = hi.max(o);
        }
    }
    RendererAnalytics { empty_max_deviation, slab_error, opacity_range: (lo, hi), rays: rays.div_ceil(per) * per }
}

/// Outcome of the edit arithmetic checks.
pub struct EditArithmetic {
    pub identity_render_exact: bool,
    pub composition_error: f64,
    pub endpoints_exact: bool,
}

pub fn edit_arithmetic(generator: &Generator, render: &RenderConfig, trials: usize, seed: u64) -> EditArithmetic {
    let mut r = rng(seed);
    let dim = generator.code_dim();
    let mut identity_render_exact = true;
    let mut composition_error: f64 = 0.0;
    let mut endpoints_exact = true;
    for t in 0..trials {
        let codes = Codes { shape: random_code(&mut r, dim, 1.0), appearance: random_code(&mut r, dim, 1.0) };
        let other = Codes { shape: random_code(&mut r, dim, 1.0), appearance: random_code(&mut r, dim, 1.0) };
        let delta = random_code(&mut r, dim, 1.0);
        let (a, b) = (r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0));

        let same = Codes { shape: codes.shape.clone(), appearance: apply_edit_direction(&codes.appearance, &delta, 0.0).unwrap() };
        if t < 2 {
            let pose = CameraPose::new(r.gen_range(-3.0..3.0), 0.5, 1.5).unwrap();
            let before = render_image(generator, &codes, &pose, 16, render).unwrap();
            let after = render_image(generator, &same, &pose, 16, render).unwrap();
            identity_render_exact &= before.pixels().data() == after.pixels().data();
        }
        identity_render_exact &= same == codes;

        let twice = apply_edit_direction(&apply_edit_direction(&codes.shape, &delta, a).unwrap(), &delta, b).unwrap();
        let once = apply_edit_direction(&codes.shape, &delta, a + b).unwrap();
        let err = twice.values().iter().zip(once.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        composition_error = composition_error.max(err);

        endpoints_exact &= interpolate_codes(&codes, &other, 0.0).unwrap() == codes;
        endpoints_exact &= interpolate_codes(&codes, &other, 1.0).unwrap() == other;
    }
    EditArithmetic { identity_render_exact, composition_error, endpoints_exact }
}
