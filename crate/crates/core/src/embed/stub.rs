use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{EmbedderBackend, Embedding, Modality};
use crate::autodiff::{Graph, SparseMap, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::normal_tensor;
use crate::raster::{resize_map, Image};

pub(super) const DEFAULT_SEED: u64 = 0x5eed_c11f;

const GRID: usize = 16;
const DIM: usize = 512;
const TEXT_BUCKETS: usize = 2048;
const TEXT_WEIGHT: f64 = 0.3;
const BIAS_NORM: f64 = 0.1;

const CALIBRATION: &str = include_str!("../../assets/calibration.json");

#[derive(Debug, Deserialize)]
struct Calibration {
    colors: BTreeMap<String, [f64; 3]>,
    shapes: BTreeMap<String, String>,
}

/// Offline, seeded embedder.
///
/// Images are resized to 16x16, offset so that white maps to zero, and
/// projected by a fixed Gaussian matrix. Text combines the image embeddings
/// of calibration templates for colour and shape words found in the prompt
/// with a hashed character-trigram feature vector.
pub struct StubEmbedder {
    name: String,
    image_proj: Tensor,
    image_bias: Tensor,
    text_proj: Tensor,
    calibration: Calibration,
    resize_cache: std::sync::Mutex<BTreeMap<(usize, usize), Arc<SparseMap>>>,
}

impl std::fmt::Debug for StubEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StubEmbedder").field("name", &self.name).finish()
    }
}

impl StubEmbedder {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_len = GRID * GRID * 3;
        let image_proj = normal_tensor(&mut rng, in_len, DIM, (1.0 / in_len as f64).sqrt());
        let mut image_bias = normal_tensor(&mut rng, 1, DIM, 1.0);
        let n = image_bias.norm();
        image_bias.data_mut().iter_mut().for_each(|v| *v *= BIAS_NORM / n);
        let text_proj = normal_tensor(&mut rng, TEXT_BUCKETS, DIM, (1.0 / DIM as f64).sqrt());
        let calibration: Calibration = serde_json::from_str(CALIBRATION).expect("shipped calibration table parses");
        StubEmbedder {
            name: format!("stub-v1-{seed:x}"),
            image_proj,
            image_bias,
            text_proj,
            calibration,
            resize_cache: std::sync::Mutex::new(BTreeMap::new()),
        }
    }

    /// Colour words known to the calibration table.
    pub fn color_words(&self) -> Vec<&str> {
        self.calibration.colors.keys().map(String::as_str).collect()
    }

    pub fn shape_words(&self) -> Vec<&str> {
        self.calibration.shapes.keys().map(String::as_str).collect()
    }

    fn resize(&self, width: usize, height: usize) -> Arc<SparseMap> {
        let mut cache = self.resize_cache.lock().expect("resize cache lock");
        cache.entry((width, height)).or_insert_with(|| resize_map(width, height, GRID, GRID)).clone()
    }

    fn template(&self, word: &str) -> Option<Image> {
        if let Some(rgb) = self.calibration.colors.get(word) {
            return Some(Image::filled(GRID, GRID, *rgb));
        }
        let kind = self.calibration.shapes.get(word)?;
        let mut img = Image::filled(GRID, GRID, [1.0; 3]);
        let c = GRID as f64 / 2.0;
        for y in 0..GRID {
            for x in 0..GRID {
                let (px, py) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
                let inside = match kind.as_str() {
                    "disc" => px * px + py * py <= 30.0,
                    "square" => px.abs() <= 5.0 && py.abs() <= 5.0,
                    "triangle" => (-6.0..=5.0).contains(&py) && px.abs() <= (py + 6.0) * 0.5,
                    "tall" => px.abs() <= 3.0 && py.abs() <= 7.0,
                    "wide" => px.abs() <= 7.0 && py.abs() <= 3.0,
                    _ => false,
                };
                if inside {
                    img.set(x, y, [0.5; 3]);
                }
            }
        }
        Some(img)
    }

    fn trigram_features(prompt: &str) -> Tensor {
        let text = format!("  {}  ", prompt.to_lowercase());
        let chars: Vec<char> = text.chars().collect();
        let mut feats = Tensor::zeros(1, TEXT_BUCKETS);
        for w in chars.windows(3) {
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for ch in w {
                for b in ch.to_string().bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
            let bucket = (h % TEXT_BUCKETS as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            feats.data_mut()[bucket] += sign;
        }
        feats
    }
}

impl EmbedderBackend for StubEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        DIM
    }

    fn embed_text(&self, prompt: &str) -> Result<Embedding> {
        if prompt.trim().is_empty() {
            return Err(Error::invalid("prompt must not be empty"));
        }
        let mut anchor = vec![0.0; DIM];
        let mut anchors = 0usize;
        for word in prompt.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            if let Some(t) = self.template(word) {
                let e = self.embed_image(&t)?;
                anchor.iter_mut().zip(&e.values).for_each(|(a, v)| *a += v);
                anchors += 1;
            }
        }
        let trig = Tensor::matmul(&Self::trigram_features(prompt), &self.text_proj, false, false);
        let tn = trig.norm();
        let mut values = vec![0.0; DIM];
        for (i, v) in values.iter_mut().enumerate() {
            let a = if anchors > 0 { anchor[i] / anchors as f64 } else { 0.0 };
            let t = if tn > 0.0 { trig.data()[i] / tn } else { 0.0 };
            *v = a + if anchors > 0 { TEXT_WEIGHT * t } else { t };
        }
        Embedding::normalized(values, Modality::Text, &self.name)
    }

    fn embed_image_var(&self, pixels: &Var, width: usize, height: usize) -> Result<Var> {
        if pixels.shape() != (width * height, 3) || width == 0 || height == 0 {
            return Err(Error::shape(format!("expected [{}, 3] RGB pixels, got {:?}", width * height, pixels.shape())));
        }
        let g: &Graph = pixels.graph();
        let small = if (width, height) == (GRID, GRID) {
            pixels.clone()
        } else {
            pixels.sparse(&self.resize(width, height), false, GRID * GRID, 3)
        };
        let centered = small.add_scalar(-1.0).reshape(1, GRID * GRID * 3);
        let proj = centered.matmul(&g.constant(self.image_proj.clone())).add(&g.constant(self.image_bias.clone()));
        Ok(proj.normalize_rows(1e-12))
    }
}
