use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::encoding::{EncodingConfig, PositionalEncoder};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Init, Linear, ParamSet, SplitLinear};

/// A latent code vector (shape or appearance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Code(Vec<f64>);

pub type ShapeCode = Code;
pub type AppearanceCode = Code;

impl Code {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("latent code must not be empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent code has non-finite entries"));
        }
        Ok(Code(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Code(vec![0.0; dim])
    }

    /// Standard normal draw.
    pub fn sample(rng: &mut impl Rng, dim: usize) -> Self {
        Code((0..dim).map(|_| StandardNormal.sample(rng)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn to_row(&self) -> Tensor {
        Tensor::row(&self.0)
    }

    pub fn from_row(t: &Tensor) -> Result<Self> {
        if t.rows() != 1 {
            return Err(Error::shape(format!("a code must be a single row, got {:?}", t.shape())));
        }
        Code::new(t.data().to_vec())
    }

    pub fn check_dim(&self, dim: usize, what: &str) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::shape(format!("{what} has dimension {}, checkpoint expects {dim}", self.dim())));
        }
        Ok(())
    }
}

/// Shape and appearance code of one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codes {
    pub shape: ShapeCode,
    pub appearance: AppearanceCode,
}

impl Codes {
    pub fn sample(rng: &mut impl Rng, dim: usize) -> Self {
        let shape = Code::sample(rng, dim);
        let appearance = Code::sample(rng, dim);
        Codes { shape, appearance }
    }

    pub fn zeros(dim: usize) -> Self {
        Codes { shape: Code::zeros(dim), appearance: Code::zeros(dim) }
    }
}

/// Layer sizes of the conditional field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub encoding: EncodingConfig,
    pub code_dim: usize,
    pub trunk_layers: usize,
    pub trunk_width: usize,
    pub deform_layers: usize,
    pub deform_width: usize,
    pub color_width: usize,
    /// Initial bias of the pre-activation density.
    pub density_bias: f64,
    /// Standard deviation of the initial deformation output weights.
    pub deform_init_std: f64,
    /// Density is zero outside this radius around the origin.
    pub scene_radius: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            encoding: EncodingConfig::default(),
            code_dim: 128,
            trunk_layers: 8,
            trunk_width: 256,
            deform_layers: 4,
            deform_width: 256,
            color_width: 128,
            density_bias: -1.0,
            deform_init_std: 0.01,
            scene_radius: 1.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoding.validate()?;
        let positive = [
            ("generator.code_dim", self.code_dim),
            ("generator.trunk_width", self.trunk_width),
            ("generator.deform_width", self.deform_width),
            ("generator.color_width", self.color_width),
            ("generator.trunk_layers", self.trunk_layers),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if self.deform_layers < 2 {
            return Err(Error::config("generator.deform_layers", "must be at least 2"));
        }
        if !self.density_bias.is_finite() {
            return Err(Error::config("generator.density_bias", "must be finite"));
        }
        if !(self.scene_radius > 0.0 && self.scene_radius.is_finite()) {
            return Err(Error::config("generator.scene_radius", "must be a positive number"));
        }
        if !(self.deform_init_std >= 0.0) {
            return Err(Error::config("generator.deform_init_std", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Layers {
    deform_in: SplitLinear,
    deform_hidden: Vec<Linear>,
    deform_out: Linear,
    trunk: Vec<Linear>,
    density: Linear,
    feature: Linear,
    color_in: SplitLinear,
    color_out: Linear,
}

impl Layers {
    fn build(config: &GeneratorConfig, params: &mut ParamSet, rng: &mut impl Rng) -> Self {
        let c = config;
        let deform_in = SplitLinear::new(params, "deform.0", &[("pos", 3), ("code", c.code_dim)], c.deform_width, Init::He, rng);
        let deform_hidden = (1..c.deform_layers - 1)
            .map(|i| Linear::new(params, &format!("deform.{i}"), c.deform_width, c.deform_width, Init::He, rng))
            .collect();
        let deform_out = Linear::new(
            params,
            "deform.out",
            c.deform_width,
            c.encoding.pos_width(),
            Init::Normal(c.deform_init_std),
            rng,
        );
        let mut trunk = Vec::with_capacity(c.trunk_layers);
        for i in 0..c.trunk_layers {
            let fan_in = if i == 0 { c.encoding.pos_width() } else { c.trunk_width };
            trunk.push(Linear::new(params, &format!("trunk.{i}"), fan_in, c.trunk_width, Init::He, rng));
        }
        let density = Linear::new(params, "density", c.trunk_width, 1, Init::Normal((1.0 / c.trunk_width as f64).sqrt()), rng);
        params.get_mut(density.bias).data_mut()[0] = c.density_bias;
        let feature =
            Linear::new(params, "feature", c.trunk_width, c.trunk_width, Init::Normal((1.0 / c.trunk_width as f64).sqrt()), rng);
        let color_in = SplitLinear::new(
            params,
            "color.0",
            &[("feature", c.trunk_width), ("view", c.encoding.view_width()), ("code", c.code_dim)],
            c.color_width,
            Init::He,
            rng,
        );
        let color_out = Linear::new(params, "color.out", c.color_width, 3, Init::Normal((1.0 / c.color_width as f64).sqrt()), rng);
        Layers { deform_in, deform_hidden, deform_out, trunk, density, feature, color_in, color_out }
    }

    fn find(config: &GeneratorConfig, params: &ParamSet) -> Option<Self> {
        let deform_in = SplitLinear::find(params, "deform.0", &["pos", "code"])?;
        let deform_hidden: Option<Vec<Linear>> =
            (1..config.deform_layers - 1).map(|i| Linear::find(params, &format!("deform.{i}"))).collect();
        let trunk: Option<Vec<Linear>> = (0..config.trunk_layers).map(|i| Linear::find(params, &format!("trunk.{i}"))).collect();
        Some(Layers {
            deform_in,
            deform_hidden: deform_hidden?,
            deform_out: Linear::find(params, "deform.out")?,
            trunk: trunk?,
            density: Linear::find(params, "density")?,
            feature: Linear::find(params, "feature")?,
            color_in: SplitLinear::find(params, "color.0", &["feature", "view", "code"])?,
            color_out: Linear::find(params, "color.out")?,
        })
    }

    fn expected_shapes(config: &GeneratorConfig) -> Vec<(String, (usize, usize))> {
        let mut ps = ParamSet::new();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let _ = Layers::build(config, &mut ps, &mut rng);
        ps.iter().map(|(n, t)| (n.to_string(), t.shape())).collect()
    }
}

/// The disentangled conditional radiance field.
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamSet,
    layers: Layers,
    pos_encoder: PositionalEncoder,
    view_encoder: PositionalEncoder,
}

/// Anything the volume renderer can query.
pub trait RadianceField {
    /// Density `[n, 1]` and radiance `[n, 3]` for `points` (`[rays * samples, 3]`,
    /// ray-major) seen along `directions` (`[rays, 3]`).
    fn eval(&self, points: &Var, directions: &Var, samples_per_ray: usize) -> (Var, Var);
}

/// Sample of the field at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub density: f64,
    pub radiance: [f64; 3],
}

impl Generator {
    pub fn new(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let layers = Layers::build(&config, &mut params, rng);
        Ok(Self::assemble(config, params, layers))
    }

    /// Rebuild from stored parameters, checking every name and shape.
    pub fn from_params(config: GeneratorConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let expected = Layers::expected_shapes(&config);
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "generator has {} tensors, configuration expects {}",
                params.len(),
                expected.len()
            )));
        }
        for (name, shape) in &expected {
            match params.index_of(name) {
                Some(id) if params.get(id).shape() == *shape => {}
                Some(id) => {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name} has shape {:?}, expected {shape:?}",
                        params.get(id).shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing tensor {name}"))),
            }
        }
        let layers = Layers::find(&config, &params).ok_or_else(|| Error::Checkpoint("inconsistent generator layers".into()))?;
        Ok(Self::assemble(config, params, layers))
    }

    fn assemble(config: GeneratorConfig, params: ParamSet, layers: Layers) -> Self {
        let pos_encoder = PositionalEncoder::new(3, config.encoding.m_pos);
        let view_encoder = PositionalEncoder::new(3, config.encoding.m_view);
        Generator { config, params, layers, pos_encoder, view_encoder }
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn code_dim(&self) -> usize {
        self.config.code_dim
    }

    /// Names of tensors that influence density (deformation, trunk, density head).
    pub fn is_density_param(name: &str) -> bool {
        name.starts_with("deform.") || name.starts_with("trunk.") || name.starts_with("density.")
    }

    pub fn check_codes(&self, codes: &Codes) -> Result<()> {
        codes.shape.check_dim(self.code_dim(), "shape code")?;
        codes.appearance.check_dim(self.code_dim(), "appearance code")
    }

    /// Raw (pre-tanh) displacements `[n, 3 * 2 m_pos]` for positions `x` and a `[1, code_dim]` shape code.
    pub fn deform(&self, bound: &Bound, x: &Var, z_s: &Var) -> Var {
        let l = &self.layers;
        let mut h = l.deform_in.forward(bound, &[x, z_s]).relu();
        for layer in &l.deform_hidden {
            h = layer.forward(bound, &h).relu();
        }
        l.deform_out.forward(bound, &h)
    }

    /// Deformed positional encoding `gamma(x) + tanh(deform(x, z_s))`.
    pub fn deformed_encoding(&self, bound: &Bound, x: &Var, z_s: &Var) -> Var {
        let base = self.pos_encoder.encode(x.graph(), x);
        base.add(&self.deform(bound, x, z_s).tanh())
    }

    /// Density `[n, 1]` and trunk features.
    pub fn density(&self, bound: &Bound, x: &Var, z_s: &Var) -> (Var, Var) {
        let mut h = self.deformed_encoding(bound, x, z_s);
        for layer in &self.layers.trunk {
            h = layer.forward(bound, &h).relu();
        }
        let r2 = self.config.scene_radius * self.config.scene_radius;
        let points = x.value();
        let inside = Tensor::from_fn(points.rows(), 1, |i, _| {
            let p = points.row_slice(i);
            if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= r2 {
                1.0
            } else {
                0.0
            }
        });
        let sigma = self.layers.density.forward(bound, &h).softplus().mul(&x.graph().constant(inside));
        (sigma, h)
    }

    /// Radiance `[n, 3]` from trunk features, per-ray directions and the appearance code.
    pub fn radiance(&self, bound: &Bound, trunk: &Var, directions: &Var, samples_per_ray: usize, z_a: &Var) -> Var {
        let l = &self.layers;
        let feature = l.feature.forward(bound, trunk);
        let view = self.view_encoder.encode(directions.graph(), directions);
        let view_term = l.color_in_term(bound, 1, &view).repeat_rows(samples_per_ray);
        let code_term = l.color_in_term(bound, 2, z_a).add(&bound[l.color_in.bias]);
        let h = l.color_in_term(bound, 0, &feature).add(&view_term).add(&code_term).relu();
        l.color_out.forward(bound, &h).sigmoid()
    }

    pub fn field<'a>(&'a self, bound: &'a Bound, z_s: &'a Var, z_a: &'a Var) -> ConditionedField<'a> {
        ConditionedField { generator: self, bound, z_s, z_a }
    }

    /// Evaluate at single points without a training graph.
    pub fn field_eval(&self, points: &[[f64; 3]], direction: [f64; 3], codes: &Codes) -> Result<Vec<FieldSample>> {
        self.check_codes(codes)?;
        let g = Graph::inference();
        let bound = self.params.bind_frozen(&g);
        let x = g.constant(Tensor::from_vec(points.len(), 3, points.iter().flatten().copied().collect()));
        let dirs = g.constant(Tensor::from_vec(points.len(), 3, (0..points.len()).flat_map(|_| direction).collect()));
        let z_s = g.constant(codes.shape.to_row());
        let z_a = g.constant(codes.appearance.to_row());
        let (sigma, rgb) = self.field(&bound, &z_s, &z_a).eval(&x, &dirs, 1);
        Ok((0..points.len())
            .map(|i| FieldSample {
                density: sigma.value().get(i, 0),
                radiance: [rgb.value().get(i, 0), rgb.value().get(i, 1), rgb.value().get(i, 2)],
            })
            .collect())
    }
}

impl Layers {
    fn color_in_term(&self, bound: &Bound, block: usize, x: &Var) -> Var {
        x.matmul(&bound[self.color_in.blocks[block]])
    }
}

/// A generator bound to a graph together with one object's codes.
pub struct ConditionedField<'a> {
    pub generator: &'a Generator,
    pub bound: &'a Bound,
    pub z_s: &'a Var,
    pub z_a: &'a Var,
}

impl RadianceField for ConditionedField<'_> {
    fn eval(&self, points: &Var, directions: &Var, samples_per_ray: usize) -> (Var, Var) {
        let (sigma, trunk) = self.generator.density(self.bound, points, self.z_s);
        let rgb = self.generator.radiance(self.bound, &trunk, directions, samples_per_ray, self.z_a);
        (sigma, rgb)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            encoding: EncodingConfig { m_pos: 3, m_view: 2 },
            code_dim: 6,
            trunk_layers: 2,
            trunk_width: 8,
            deform_layers: 2,
            deform_width: 8,
            color_width: 8,
            density_bias: 0.0,
            deform_init_std: 0.5,
            scene_radius: 1.0,
        }
    }

    #[test]
    fn density_vanishes_outside_scene_radius() {
        let g = Generator::new(tiny(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let codes = Codes::zeros(6);
        let out = g.field_eval(&[[0.2, 0.1, -0.3], [1.2, 0.0, 0.0], [0.0, -0.8, 0.8]], [0.0, 0.0, 1.0], &codes).unwrap();
        assert!(out[0].density > 0.0);
        assert_eq!(out[1].density, 0.0);
        assert_eq!(out[2].density, 0.0);
    }

    #[test]
    fn zero_deformation_weights_give_zero_displacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut gen = Generator::new(tiny(), &mut rng).unwrap();
        for t in gen.params_mut().tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let g = Graph::inference();
        let b = gen.params().bind_frozen(&g);
        let x = g.constant(Tensor::from_fn(5, 3, |r, c| (r * 3 + c) as f64 * 0.1));
        let z = g.constant(Code::sample(&mut rng, 6).to_row());
        let d = gen.deform(&b, &x, &z);
        assert_eq!(d.shape(), (5, 18));
        assert!(d.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_code_changes_displacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gen = Generator::new(tiny(), &mut rng).unwrap();
        let g = Graph::inference();
        let b = gen.params().bind_frozen(&g);
        let x = g.constant(Tensor::row(&[0.1, 0.2, 0.3]));
        let d1 = gen.deform(&b, &x, &g.constant(Code::sample(&mut rng, 6).to_row()));
        let d2 = gen.deform(&b, &x, &g.constant(Code::sample(&mut rng, 6).to_row()));
        assert_ne!(d1.value(), d2.value());
    }

    #[test]
    fn density_ignores_appearance_and_view() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gen = Generator::new(tiny(), &mut rng).unwrap();
        let z_s = Code::sample(&mut rng, 6);
        let pts = [[0.1, -0.2, 0.3], [0.5, 0.5, -0.4]];
        let a = Codes { shape: z_s.clone(), appearance: Code::sample(&mut rng, 6) };
        let b = Codes { shape: z_s, appearance: Code::sample(&mut rng, 6) };
        let sa = gen.field_eval(&pts, [1.0, 0.0, 0.0], &a).unwrap();
        let sb = gen.field_eval(&pts, [0.0, 0.6, 0.8], &b).unwrap();
        for (x, y) in sa.iter().zip(&sb) {
            assert_eq!(x.density.to_bits(), y.density.to_bits());
            assert_ne!(x.radiance, y.radiance);
            assert!(x.density >= 0.0);
        }
    }

    #[test]
    fn from_params_round_trip_and_rejects_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gen = Generator::new(tiny(), &mut rng).unwrap();
        let again = Generator::from_params(tiny(), gen.params().clone()).unwrap();
        assert_eq!(again.params().fingerprint(), gen.params().fingerprint());
        let mut other = tiny();
        other.trunk_width = 9;
        assert!(Generator::from_params(other, gen.params().clone()).is_err());
    }

    #[test]
    fn wrong_code_dimension_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gen = Generator::new(tiny(), &mut rng).unwrap();
        let codes = Codes::zeros(7);
        assert!(gen.field_eval(&[[0.0; 3]], [0.0, 0.0, 1.0], &codes).is_err());
    }
}
