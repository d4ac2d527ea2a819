use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{SparseMap, Var};
use crate::error::{Error, Result};
use crate::nn::{normal_tensor, Bound, ParamId, ParamSet};
use crate::autodiff::Tensor;

/// Convolutional patch critic: strided 4x4 convolutions with leaky ReLU,
/// then a 3x3 convolution to a map of per-location logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    pub channels: Vec<usize>,
    pub slope: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig { channels: vec![32, 64], slope: 0.2 }
    }
}

impl CriticConfig {
    pub fn validate(&self, patch_size: usize) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::config("train.critic.channels", "must be a non-empty list of positive widths"));
        }
        if !(0.0..1.0).contains(&self.slope) {
            return Err(Error::config("train.critic.slope", "must lie in [0, 1)"));
        }
        let shrink = 1usize << self.channels.len();
        if patch_size < shrink || !patch_size.is_multiple_of(shrink) {
            return Err(Error::config(
                "train.patch_size",
                format!("must be a positive multiple of {shrink} for {} strided critic layers", self.channels.len()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
    kernel: usize,
    stride: usize,
    pad: usize,
    c_in: usize,
    c_out: usize,
}

impl Conv {
    fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Gather map from a `[batch * size * size, c_in]` input to im2col rows.
    fn im2col(&self, batch: usize, size: usize) -> SparseMap {
        let out = self.out_size(size);
        let k = self.kernel;
        let mut idx = Vec::with_capacity(batch * out * out * k * k * self.c_in);
        for b in 0..batch {
            for oy in 0..out {
                for ox in 0..out {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            let inside = iy >= 0 && ix >= 0 && (iy as usize) < size && (ix as usize) < size;
                            for c in 0..self.c_in {
                                idx.push(inside.then(|| ((b * size + iy as usize) * size + ix as usize) * self.c_in + c));
                            }
                        }
                    }
                }
            }
        }
        SparseMap::gather(batch * size * size * self.c_in, &idx)
    }
}

/// Patch critic with cached convolution gather maps.
#[derive(Debug)]
pub struct Critic {
    config: CriticConfig,
    patch_size: usize,
    params: ParamSet,
    convs: Vec<Conv>,
    maps: Mutex<HashMap<(usize, usize), Arc<SparseMap>>>,
}

impl Clone for Critic {
    fn clone(&self) -> Self {
        Critic {
            config: self.config.clone(),
            patch_size: self.patch_size,
            params: self.params.clone(),
            convs: self.convs.clone(),
            maps: Mutex::new(HashMap::new()),
        }
    }
}

fn layout(config: &CriticConfig) -> Vec<(usize, usize, usize, usize, usize)> {
    let mut out = Vec::new();
    let mut c_in = 3;
    for &c in &config.channels {
        out.push((4, 2, 1, c_in, c));
        c_in = c;
    }
    out.push((3, 1, 1, c_in, 1));
    out
}

impl Critic {
    pub fn new(config: CriticConfig, patch_size: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate(patch_size)?;
        let mut params = ParamSet::new();
        let spec = layout(&config);
        let last = spec.len() - 1;
        let mut convs = Vec::with_capacity(spec.len());
        for (i, &(kernel, stride, pad, c_in, c_out)) in spec.iter().enumerate() {
            let fan_in = kernel * kernel * c_in;
            let std = if i == last { (1.0 / fan_in as f64).sqrt() } else { (2.0 / fan_in as f64).sqrt() };
            let weight = params.push(format!("conv{i}.weight"), normal_tensor(rng, fan_in, c_out, std));
            let bias = params.push(format!("conv{i}.bias"), Tensor::zeros(1, c_out));
            convs.push(Conv { weight, bias, kernel, stride, pad, c_in, c_out });
        }
        Ok(Critic { config, patch_size, params, convs, maps: Mutex::new(HashMap::new()) })
    }

    pub fn from_params(config: CriticConfig, patch_size: usize, params: ParamSet) -> Result<Self> {
        config.validate(patch_size)?;
        let mut convs = Vec::new();
        for (i, &(kernel, stride, pad, c_in, c_out)) in layout(&config).iter().enumerate() {
            let find = |n: String| params.index_of(&n).ok_or_else(|| Error::Checkpoint(format!("critic is missing {n}")));
            let weight = find(format!("conv{i}.weight"))?;
            let bias = find(format!("conv{i}.bias"))?;
            if params.get(weight).shape() != (kernel * kernel * c_in, c_out) || params.get(bias).shape() != (1, c_out) {
                return Err(Error::Checkpoint(format!("critic layer {i} has the wrong shape")));
            }
            convs.push(Conv { weight, bias, kernel, stride, pad, c_in, c_out });
        }
        if params.len() != 2 * convs.len() {
            return Err(Error::Checkpoint("critic has unexpected tensors".into()));
        }
        Ok(Critic { config, patch_size, params, convs, maps: Mutex::new(HashMap::new()) })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Logit locations per patch.
    pub fn locations(&self) -> usize {
        let mut size = self.patch_size;
        for c in &self.convs {
            size = c.out_size(size);
        }
        size * size
    }

    fn map(&self, layer: usize, batch: usize, size: usize) -> Arc<SparseMap> {
        let mut maps = self.maps.lock().expect("critic map cache");
        maps.entry((layer, batch)).or_insert_with(|| Arc::new(self.convs[layer].im2col(batch, size))).clone()
    }

    /// Per-location logits `[batch * locations, 1]` for patches `[batch * p * p, 3]`
    /// (row-major pixels, patch after patch).
    pub fn logits(&self, bound: &Bound, patches: &Var, batch: usize) -> Result<Var> {
        let p = self.patch_size;
        if patches.shape() != (batch * p * p, 3) {
            return Err(Error::shape(format!("critic expects [{}, 3] patch pixels, got {:?}", batch * p * p, patches.shape())));
        }
        let mut h = patches.clone();
        let mut size = p;
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            let out = conv.out_size(size);
            let cols = h.sparse(&self.map(i, batch, size), false, batch * out * out, conv.kernel * conv.kernel * conv.c_in);
            h = cols.matmul(&bound[conv.weight]).add(&bound[conv.bias]);
            if i != last {
                h = h.leaky_relu(self.config.slope);
            }
            debug_assert_eq!(h.cols(), conv.c_out);
            size = out;
        }
        Ok(h)
    }

    /// One score per patch: the mean of its logit map, `[batch, 1]`.
    pub fn score(&self, bound: &Bound, patches: &Var, batch: usize) -> Result<Var> {
        let l = self.locations();
        let logits = self.logits(bound, patches, batch)?;
        Ok(logits.reshape(batch, l).sum_cols().scale(1.0 / l as f64))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn logit_map_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Critic::new(CriticConfig::default(), 16, &mut rng).unwrap();
        assert_eq!(c.locations(), 16);
        let g = Graph::inference();
        let b = c.params().bind_frozen(&g);
        let x = g.constant(Tensor::from_fn(2 * 256, 3, |r, k| ((r * 7 + k) % 11) as f64 / 11.0));
        assert_eq!(c.logits(&b, &x, 2).unwrap().shape(), (32, 1));
        assert!(Critic::new(CriticConfig::default(), 18, &mut rng).is_err());
    }

    #[test]
    fn patches_are_scored_independently() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Critic::new(CriticConfig { channels: vec![4, 8], slope: 0.2 }, 8, &mut rng).unwrap();
        let g = Graph::inference();
        let b = c.params().bind_frozen(&g);
        let a = Tensor::from_fn(64, 3, |r, k| ((r * 5 + k) % 7) as f64 / 7.0);
        let z = Tensor::from_fn(64, 3, |r, k| ((r * 3 + k * 2) % 5) as f64 / 5.0);
        let both = c.score(&b, &g.constant(Tensor::concat_rows(&[&a, &z])), 2).unwrap();
        let only = c.score(&b, &g.constant(a), 1).unwrap();
        assert!((both.value().get(0, 0) - only.item()).abs() < 1e-12);
    }
}
