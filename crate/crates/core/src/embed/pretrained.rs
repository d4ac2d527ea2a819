//! Pretrained CLIP ViT-B/32 backend running on candle.
//!
//! Image features are computed by candle and spliced into the autodiff graph
//! as a custom node whose backward pass asks candle for the input gradient.
//! That gradient is recorded as a constant, so the node is differentiable once.

use std::path::Path;
use std::rc::Rc;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor as CTensor, Var as CVar};
use candle_nn::VarBuilder;
use candle_transformers::models::clip::{ClipConfig, ClipModel};
use sha2::{Digest, Sha256};
use tokenizers::Tokenizer;

use super::{EmbedderBackend, Embedding, Modality};
use crate::autodiff::{CustomBackward, Tensor, Var};
use crate::error::{Error, Result};
use crate::raster::resize_map;

const NAME: &str = "clip-vit-b32/openai";
const DIM: usize = 512;
const SIDE: usize = 224;
const MEAN: [f64; 3] = [0.48145466, 0.4578275, 0.40821073];
const STD: [f64; 3] = [0.26862954, 0.26130258, 0.27577711];
const WEIGHTS: &str = "model.safetensors";
const TOKENIZER: &str = "tokenizer.json";

pub struct PretrainedEmbedder {
    model: Arc<Mutex<ClipModel>>,
    tokenizer: Tokenizer,
    config: ClipConfig,
    device: Device,
}

impl std::fmt::Debug for PretrainedEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PretrainedEmbedder").field("name", &NAME).finish()
    }
}

fn candle_err(e: candle_core::Error) -> Error {
    Error::Unavailable(format!("pretrained embedder: {e}"))
}

fn file_sha256(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let mut f = std::fs::File::open(path)?;
    std::io::copy(&mut f, &mut h)?;
    Ok(format!("{:x}", h.finalize()))
}

impl PretrainedEmbedder {
    /// Load `model.safetensors` and `tokenizer.json` from `dir`, verifying the
    /// weights against `sha256` when given.
    pub fn load(dir: &Path, sha256: Option<&str>) -> Result<Self> {
        let weights = dir.join(WEIGHTS);
        if !weights.exists() {
            return Err(Error::Unavailable(format!("pretrained weights not found at {}", weights.display())));
        }
        if let Some(expected) = sha256 {
            let actual = file_sha256(&weights)?;
            if !actual.eq_ignore_ascii_case(expected) {
                return Err(Error::Checkpoint(format!("{}: sha256 {actual} does not match pinned {expected}", weights.display())));
            }
        }
        let tokenizer = Tokenizer::from_file(dir.join(TOKENIZER))
            .map_err(|e| Error::Unavailable(format!("pretrained tokenizer: {e}")))?;
        let device = Device::Cpu;
        let config = ClipConfig::vit_base_patch32();
        let vb = unsafe { VarBuilder::from_mmaped_safetensors(&[weights], DType::F32, &device).map_err(candle_err)? };
        let model = ClipModel::new(vb, &config).map_err(candle_err)?;
        Ok(PretrainedEmbedder { model: Arc::new(Mutex::new(model)), tokenizer, config, device })
    }

    fn tokens(&self, prompt: &str) -> Result<CTensor> {
        let enc = self.tokenizer.encode(prompt, true).map_err(|e| Error::invalid(format!("tokenizer: {e}")))?;
        let len = self.config.text_config.max_position_embeddings;
        let pad = self.tokenizer.token_to_id("<|endoftext|>").unwrap_or(0);
        let mut ids: Vec<u32> = enc.get_ids().to_vec();
        ids.truncate(len);
        ids.resize(len, pad);
        CTensor::new(ids.as_slice(), &self.device).and_then(|t| t.unsqueeze(0)).map_err(candle_err)
    }

    fn image_features(&self, input: &CTensor) -> Result<CTensor> {
        let model = self.model.lock().expect("clip model");
        model.get_image_features(input).map_err(candle_err)
    }
}

/// `[224*224, 3]` normalised pixels to a `[1, 3, 224, 224]` f32 tensor.
fn to_nchw(t: &Tensor, device: &Device) -> Result<CTensor> {
    let mut planar = vec![0f32; 3 * SIDE * SIDE];
    for (i, px) in t.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            planar[c * SIDE * SIDE + i] = px[c] as f32;
        }
    }
    CTensor::from_vec(planar, (1, 3, SIDE, SIDE), device).map_err(candle_err)
}

fn from_nchw(t: &CTensor) -> Result<Tensor> {
    let planar: Vec<f32> = t.flatten_all().and_then(|f| f.to_vec1()).map_err(candle_err)?;
    let mut out = vec![0.0; SIDE * SIDE * 3];
    for i in 0..SIDE * SIDE {
        for c in 0..3 {
            out[i * 3 + c] = planar[c * SIDE * SIDE + i] as f64;
        }
    }
    Ok(Tensor::from_vec(SIDE * SIDE, 3, out))
}

struct ImageFeatures {
    model: Arc<Mutex<ClipModel>>,
    device: Device,
}

impl CustomBackward for ImageFeatures {
    fn name(&self) -> &str {
        "clip_image_features"
    }

    fn backward(&self, parents: &[Var], needs: &[bool], _output: &Var, grad: &Var) -> Vec<Option<Var>> {
        if !needs[0] {
            return vec![None];
        }
        let input = &parents[0];
        let run = || -> candle_core::Result<Tensor> {
            let x = CVar::from_tensor(&to_nchw(input.value(), &self.device).map_err(|e| candle_core::Error::Msg(e.to_string()))?)?;
            let upstream: Vec<f32> = grad.value().data().iter().map(|v| *v as f32).collect();
            let upstream = CTensor::from_vec(upstream, (1, DIM), &self.device)?;
            let feats = self.model.lock().expect("clip model").get_image_features(x.as_tensor())?;
            let loss = feats.mul(&upstream)?.sum_all()?;
            let grads = loss.backward()?;
            let g = grads.get(x.as_tensor()).ok_or_else(|| candle_core::Error::Msg("no input gradient".into()))?;
            from_nchw(g).map_err(|e| candle_core::Error::Msg(e.to_string()))
        };
        let g = run().expect("clip backward");
        vec![Some(input.graph().constant(g))]
    }
}

impl EmbedderBackend for PretrainedEmbedder {
    fn name(&self) -> &str {
        NAME
    }

    fn dim(&self) -> usize {
        DIM
    }

    fn embed_text(&self, prompt: &str) -> Result<Embedding> {
        if prompt.trim().is_empty() {
            return Err(Error::invalid("prompt must not be empty"));
        }
        let ids = self.tokens(prompt)?;
        let feats = self.model.lock().expect("clip model").get_text_features(&ids).map_err(candle_err)?;
        let values: Vec<f32> = feats.flatten_all().and_then(|f| f.to_vec1()).map_err(candle_err)?;
        Embedding::normalized(values.into_iter().map(f64::from).collect(), Modality::Text, NAME)
    }

    fn embed_image_var(&self, pixels: &Var, width: usize, height: usize) -> Result<Var> {
        if pixels.shape() != (width * height, 3) || width == 0 || height == 0 {
            return Err(Error::shape(format!("expected [{}, 3] RGB pixels, got {:?}", width * height, pixels.shape())));
        }
        let g = pixels.graph();
        let resized = pixels.sparse(&resize_map(width, height, SIDE, SIDE), false, SIDE * SIDE, 3);
        let mean = g.constant(Tensor::row(&MEAN)).broadcast_to(SIDE * SIDE, 3);
        let inv_std = g.constant(Tensor::row(&STD.map(|s| 1.0 / s))).broadcast_to(SIDE * SIDE, 3);
        let normalized = resized.sub(&mean).mul(&inv_std);
        let feats = self.image_features(&to_nchw(normalized.value(), &self.device)?)?;
        let values: Vec<f32> = feats.flatten_all().and_then(|f| f.to_vec1()).map_err(candle_err)?;
        let value = Tensor::from_vec(1, DIM, values.into_iter().map(f64::from).collect());
        let node = Rc::new(ImageFeatures { model: self.model.clone(), device: self.device.clone() });
        Ok(g.custom(node, &[&normalized], value).normalize_rows(1e-12))
    }
}
