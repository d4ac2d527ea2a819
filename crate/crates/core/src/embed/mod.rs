//! Joint text/image embedding backends, the cosine distance between
//! embeddings, and the cross-view consistency probe.

mod stub;

#[cfg(feature = "pretrained")]
pub mod pretrained;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nerf::{render_image, CameraPose, Codes, Generator, RenderConfig};
use crate::raster::Image;

pub use stub::StubEmbedder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

/// Unit-norm vector in a backend's joint space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub modality: Modality,
    pub backend: String,
}

impl Embedding {
    /// Normalise `values` into an embedding.
    pub fn normalized(values: Vec<f64>, modality: Modality, backend: &str) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::NonFinite("embedding has zero or non-finite norm".into()));
        }
        Ok(Embedding { values: values.iter().map(|v| v / norm).collect(), modality, backend: backend.to_string() })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn to_row(&self) -> Tensor {
        Tensor::row(&self.values)
    }
}

/// A joint language-image encoder.
pub trait EmbedderBackend: Send + Sync {
    /// Backend identifier including its version; embeddings from different
    /// identifiers are not comparable.
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed_text(&self, prompt: &str) -> Result<Embedding>;

    /// Differentiable image embedding: `pixels` is `[height * width, 3]` in
    /// `[0, 1]`; the result is a `[1, dim]` unit row.
    fn embed_image_var(&self, pixels: &Var, width: usize, height: usize) -> Result<Var>;

    fn embed_image(&self, image: &Image) -> Result<Embedding> {
        let g = Graph::inference();
        let e = self.embed_image_var(&g.constant(image.pixels().clone()), image.width(), image.height())?;
        Embedding::normalized(e.value().data().to_vec(), Modality::Image, self.name())
    }
}

pub type SharedEmbedder = Arc<dyn EmbedderBackend>;

/// Which backend a run uses. Accepts either a bare kind (`stub`) or a full map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "EmbedderSetting")]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub stub_seed: u64,
    /// Directory holding the pretrained weights and tokenizer.
    pub weights_dir: Option<String>,
    /// Expected SHA-256 of the weights file.
    pub weights_sha256: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Stub,
    Pretrained,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbedderSetting {
    Kind(EmbedderKind),
    Full(EmbedderFields),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EmbedderFields {
    kind: EmbedderKind,
    stub_seed: u64,
    weights_dir: Option<String>,
    weights_sha256: Option<String>,
}

impl Default for EmbedderFields {
    fn default() -> Self {
        let d = EmbedderConfig::default();
        EmbedderFields { kind: d.kind, stub_seed: d.stub_seed, weights_dir: d.weights_dir, weights_sha256: d.weights_sha256 }
    }
}

impl From<EmbedderSetting> for EmbedderConfig {
    fn from(s: EmbedderSetting) -> Self {
        match s {
            EmbedderSetting::Kind(kind) => EmbedderConfig { kind, ..EmbedderConfig::default() },
            EmbedderSetting::Full(f) => {
                EmbedderConfig { kind: f.kind, stub_seed: f.stub_seed, weights_dir: f.weights_dir, weights_sha256: f.weights_sha256 }
            }
        }
    }
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig { kind: EmbedderKind::Stub, stub_seed: stub::DEFAULT_SEED, weights_dir: None, weights_sha256: None }
    }
}

/// Build the configured backend.
pub fn load_backend(config: &EmbedderConfig) -> Result<SharedEmbedder> {
    match config.kind {
        EmbedderKind::Stub => Ok(Arc::new(StubEmbedder::new(config.stub_seed))),
        EmbedderKind::Pretrained => load_pretrained(config),
    }
}

#[cfg(feature = "pretrained")]
fn load_pretrained(config: &EmbedderConfig) -> Result<SharedEmbedder> {
    let dir = config
        .weights_dir
        .as_deref()
        .ok_or_else(|| Error::config("embedder.weights_dir", "required for the pretrained backend"))?;
    Ok(Arc::new(pretrained::PretrainedEmbedder::load(std::path::Path::new(dir), config.weights_sha256.as_deref())?))
}

#[cfg(not(feature = "pretrained"))]
fn load_pretrained(_config: &EmbedderConfig) -> Result<SharedEmbedder> {
    Err(Error::Unavailable("this build does not include the pretrained embedder (enable the `pretrained` feature)".into()))
}

/// `1 - <a, b>` for two embeddings of the same backend.
pub fn clip_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.backend != b.backend {
        return Err(Error::invalid(format!("embeddings come from different backends: {} vs {}", a.backend, b.backend)));
    }
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("embedding dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot).clamp(0.0, 2.0))
}

/// Differentiable `1 - <e, target>` for a `[1, dim]` embedding row.
pub fn clip_distance_var(embedding: &Var, target: &Embedding) -> Result<Var> {
    if embedding.shape() != (1, target.dim()) {
        return Err(Error::shape(format!("embedding row {:?} vs target dimension {}", embedding.shape(), target.dim())));
    }
    let t = embedding.graph().constant(target.to_row());
    Ok(embedding.mul(&t).sum().neg().add_scalar(1.0))
}

/// Either side of a distance query.
pub enum Operand<'a> {
    Text(&'a str),
    Image(&'a Image),
    Embedding(&'a Embedding),
}

pub fn embed_operand(backend: &dyn EmbedderBackend, op: &Operand<'_>) -> Result<Embedding> {
    match op {
        Operand::Text(t) => backend.embed_text(t),
        Operand::Image(i) => backend.embed_image(i),
        Operand::Embedding(e) => Ok((*e).clone()),
    }
}

/// Distance between any combination of text, images and embeddings.
pub fn distance(backend: &dyn EmbedderBackend, a: Operand<'_>, b: Operand<'_>) -> Result<f64> {
    clip_distance(&embed_operand(backend, &a)?, &embed_operand(backend, &b)?)
}

/// Pairwise distances from the cross-view consistency probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub objects: usize,
    pub views: usize,
    /// Mean distance between different views of the same object.
    pub same_object_cross_view: f64,
    /// Mean distance between different objects in the same view.
    pub cross_object_same_view: f64,
    /// `cross_object_same_view - same_object_cross_view`.
    pub gap: f64,
    /// Per object, the `views x views` distance matrix.
    pub view_matrices: Vec<Vec<Vec<f64>>>,
    /// Per view, the `objects x objects` distance matrix.
    pub object_matrices: Vec<Vec<Vec<f64>>>,
}

/// Render every object from every pose and compare embeddings.
pub fn cross_view_consistency(
    objects: &[Codes],
    poses: &[CameraPose],
    generator: &Generator,
    render: &RenderConfig,
    resolution: usize,
    backend: &dyn EmbedderBackend,
) -> Result<ConsistencyReport> {
    if objects.len() < 2 {
        return Err(Error::invalid("the consistency probe needs at least two objects"));
    }
    if poses.len() < 2 {
        return Err(Error::invalid("the consistency probe needs at least two poses"));
    }
    let mut emb: Vec<Vec<Embedding>> = Vec::with_capacity(objects.len());
    for codes in objects {
        let mut row = Vec::with_capacity(poses.len());
        for pose in poses {
            row.push(backend.embed_image(&render_image(generator, codes, pose, resolution, render)?)?);
        }
        emb.push(row);
    }
    let (no, nv) = (objects.len(), poses.len());
    let mut view_matrices = vec![vec![vec![0.0; nv]; nv]; no];
    let mut same_sum = 0.0;
    for (o, m) in view_matrices.iter_mut().enumerate() {
        for a in 0..nv {
            for b in (a + 1)..nv {
                let d = clip_distance(&emb[o][a], &emb[o][b])?;
                m[a][b] = d;
                m[b][a] = d;
                same_sum += 2.0 * d;
            }
        }
    }
    let mut object_matrices = vec![vec![vec![0.0; no]; no]; nv];
    let mut cross_sum = 0.0;
    for (v, m) in object_matrices.iter_mut().enumerate() {
        for a in 0..no {
            for b in (a + 1)..no {
                let d = clip_distance(&emb[a][v], &emb[b][v])?;
                m[a][b] = d;
                m[b][a] = d;
                cross_sum += 2.0 * d;
            }
        }
    }
    let same = same_sum / (no * nv * (nv - 1)) as f64;
    let cross = cross_sum / (nv * no * (no - 1)) as f64;
    Ok(ConsistencyReport {
        objects: no,
        views: nv,
        same_object_cross_view: same,
        cross_object_same_view: cross,
        gap: cross - same,
        view_matrices,
        object_matrices,
    })
}
