//! Embedding-to-code mappers and latent edit arithmetic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::embed::Embedding;
use crate::error::{Error, Result};
use crate::nerf::{Code, Codes};
use crate::nn::{Bound, Init, Linear, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapperConfig {
    /// Width of the projected embedding.
    pub projection: usize,
    pub hidden: usize,
}

impl Default for MapperConfig {
    fn default() -> Self {
        MapperConfig { projection: 128, hidden: 256 }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<()> {
        if self.projection == 0 {
            return Err(Error::config("mapper.projection", "must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::config("mapper.hidden", "must be at least 1"));
        }
        Ok(())
    }
}

/// `embedding -> projection -> hidden -> code` MLP with ReLU between layers
/// and a zero-initialised output layer.
#[derive(Debug, Clone)]
pub struct Mapper {
    params: ParamSet,
    layers: [Linear; 3],
    embed_dim: usize,
    code_dim: usize,
}

impl Mapper {
    pub fn new(config: &MapperConfig, embed_dim: usize, code_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let layers = [
            Linear::new(&mut params, "proj", embed_dim, config.projection, Init::He, rng),
            Linear::new(&mut params, "hidden", config.projection, config.hidden, Init::He, rng),
            Linear::new(&mut params, "out", config.hidden, code_dim, Init::Zero, rng),
        ];
        Ok(Mapper { params, layers, embed_dim, code_dim })
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let find = |n: &str| Linear::find(&params, n).ok_or_else(|| Error::Checkpoint(format!("mapper is missing layer {n}")));
        let layers = [find("proj")?, find("hidden")?, find("out")?];
        if layers[0].fan_out != layers[1].fan_in || layers[1].fan_out != layers[2].fan_in || params.len() != 6 {
            return Err(Error::Checkpoint("mapper layer shapes are inconsistent".into()));
        }
        Ok(Mapper { embed_dim: layers[0].fan_in, code_dim: layers[2].fan_out, params, layers })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    /// `[n, embed_dim] -> [n, code_dim]`.
    pub fn forward(&self, bound: &Bound, e: &Var) -> Var {
        let h = self.layers[0].forward(bound, e).relu();
        let h = self.layers[1].forward(bound, &h).relu();
        self.layers[2].forward(bound, &h)
    }

    /// Code displacement for one embedding.
    pub fn map(&self, e: &Embedding) -> Result<Code> {
        if e.dim() != self.embed_dim {
            return Err(Error::shape(format!("embedding has dimension {}, mapper expects {}", e.dim(), self.embed_dim)));
        }
        let g = Graph::inference();
        let bound = self.params.bind_frozen(&g);
        let out = self.forward(&bound, &g.constant(e.to_row()));
        Code::new(out.value().data().to_vec())
    }
}

/// The shape and appearance mappers of one checkpoint.
#[derive(Debug, Clone)]
pub struct Mappers {
    pub shape: Mapper,
    pub appearance: Mapper,
}

impl Mappers {
    pub fn new(config: &MapperConfig, embed_dim: usize, code_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Mappers { shape: Mapper::new(config, embed_dim, code_dim, rng)?, appearance: Mapper::new(config, embed_dim, code_dim, rng)? })
    }
}

/// Which codes an edit touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Shape,
    Appearance,
    Both,
}

/// `z = s * delta + z_prev`.
pub fn apply_edit_direction(z_prev: &Code, delta: &Code, s: f64) -> Result<Code> {
    if z_prev.dim() != delta.dim() {
        return Err(Error::shape(format!("code has dimension {}, direction has {}", z_prev.dim(), delta.dim())));
    }
    if !s.is_finite() {
        return Err(Error::invalid("edit scale must be finite"));
    }
    Code::new(z_prev.values().iter().zip(delta.values()).map(|(z, d)| s * d + z).collect())
}

/// `z2 * r + z1 * (1 - r)` for both codes.
pub fn interpolate_codes(z1: &Codes, z2: &Codes, r: f64) -> Result<Codes> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::invalid(format!("interpolation ratio {r} is outside [0, 1]")));
    }
    let lerp = |a: &Code, b: &Code| -> Result<Code> {
        if a.dim() != b.dim() {
            return Err(Error::shape("interpolated codes differ in dimension"));
        }
        Code::new(a.values().iter().zip(b.values()).map(|(x, y)| y * r + x * (1.0 - r)).collect())
    };
    Ok(Codes { shape: lerp(&z1.shape, &z2.shape)?, appearance: lerp(&z1.appearance, &z2.appearance)? })
}

/// Directions produced by the mappers for one target embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditDirections {
    pub shape: Option<Code>,
    pub appearance: Option<Code>,
}

impl Mappers {
    pub fn directions(&self, target: &Embedding, channel: Channel) -> Result<EditDirections> {
        let shape = matches!(channel, Channel::Shape | Channel::Both).then(|| self.shape.map(target)).transpose()?;
        let appearance = matches!(channel, Channel::Appearance | Channel::Both).then(|| self.appearance.map(target)).transpose()?;
        Ok(EditDirections { shape, appearance })
    }
}

impl EditDirections {
    /// Shape first, then appearance.
    pub fn apply(&self, codes: &Codes, s: f64) -> Result<Codes> {
        let mut out = codes.clone();
        if let Some(d) = &self.shape {
            out.shape = apply_edit_direction(&out.shape, d, s)?;
        }
        if let Some(d) = &self.appearance {
            out.appearance = apply_edit_direction(&out.appearance, d, s)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::embed::Modality;

    #[test]
    fn zero_head_gives_zero_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mapper::new(&MapperConfig::default(), 16, 128, &mut rng).unwrap();
        let e = Embedding::normalized(vec![1.0; 16], Modality::Text, "t").unwrap();
        let d = m.map(&e).unwrap();
        assert_eq!(d.dim(), 128);
        assert!(d.values().iter().all(|&v| v == 0.0));
        let wrong = Embedding::normalized(vec![1.0; 8], Modality::Text, "t").unwrap();
        assert!(m.map(&wrong).is_err());
    }

    #[test]
    fn edit_scale_endpoints_and_linearity() {
        let z = Code::new(vec![0.3, -1.2, 2.0]).unwrap();
        let d = Code::new(vec![0.7, 0.1, -0.4]).unwrap();
        assert_eq!(apply_edit_direction(&z, &d, 0.0).unwrap(), z);
        let two_step = apply_edit_direction(&apply_edit_direction(&z, &d, 0.4).unwrap(), &d, 0.8).unwrap();
        let one_step = apply_edit_direction(&z, &d, 1.2).unwrap();
        for (a, b) in two_step.values().iter().zip(one_step.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_endpoints_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Codes::sample(&mut rng, 5);
        let b = Codes::sample(&mut rng, 5);
        assert_eq!(interpolate_codes(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate_codes(&a, &b, 1.0).unwrap(), b);
        assert!(interpolate_codes(&a, &b, 1.1).is_err());
        let mid = interpolate_codes(&a, &b, 0.5).unwrap();
        for i in 0..5 {
            assert!((mid.shape.values()[i] - 0.5 * (a.shape.values()[i] + b.shape.values()[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn from_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Mapper::new(&MapperConfig { projection: 4, hidden: 6 }, 8, 3, &mut rng).unwrap();
        let back = Mapper::from_params(m.params().clone()).unwrap();
        assert_eq!(back.embed_dim(), 8);
        assert_eq!(back.code_dim(), 3);
    }
}
