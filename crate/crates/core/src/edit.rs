//! A loaded checkpoint plus embedder: the feed-forward edit path shared by the
//! command line and the service.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::embed::{Embedding, SharedEmbedder};
use crate::error::{Error, Result};
use crate::mappers::{Channel, EditDirections};
use crate::nerf::{render_image, CameraPose, Codes};
use crate::raster::Image;

/// What an edit moves the object toward.
#[derive(Debug, Clone)]
pub enum EditTarget {
    Text(String),
    Exemplar(Image),
}

/// Serializable record of an edit target; exemplars are kept by content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetRecord {
    Text(String),
    Exemplar { sha256: String },
}

impl EditTarget {
    pub fn record(&self) -> TargetRecord {
        match self {
            EditTarget::Text(t) => TargetRecord::Text(t.clone()),
            EditTarget::Exemplar(img) => {
                use sha2::{Digest, Sha256};
                let mut h = Sha256::new();
                for v in img.pixels().data() {
                    h.update(v.to_le_bytes());
                }
                TargetRecord::Exemplar { sha256: format!("{:x}", h.finalize()) }
            }
        }
    }
}

pub struct Model {
    pub checkpoint: Checkpoint,
    pub backend: SharedEmbedder,
}

impl Model {
    pub fn new(checkpoint: Checkpoint, backend: SharedEmbedder) -> Self {
        Model { checkpoint, backend }
    }

    pub fn code_dim(&self) -> usize {
        self.checkpoint.generator.code_dim()
    }

    pub fn embed(&self, target: &EditTarget) -> Result<Embedding> {
        match target {
            EditTarget::Text(t) => self.backend.embed_text(t),
            EditTarget::Exemplar(img) => self.backend.embed_image(img),
        }
    }

    /// Mapper displacements for `target` on `channel`.
    pub fn directions(&self, target: &EditTarget, channel: Channel) -> Result<EditDirections> {
        let mappers = self.checkpoint.require_mappers()?;
        if let Some(trained) = &self.checkpoint.mapper_backend {
            if trained != self.backend.name() {
                return Err(Error::Unavailable(format!(
                    "mappers were trained with embedder `{trained}` but `{}` is loaded",
                    self.backend.name()
                )));
            }
        }
        mappers.directions(&self.embed(target)?, channel)
    }

    /// `z = s * M(E(target)) + z'` on the requested channels, shape first.
    pub fn edit(&self, codes: &Codes, target: &EditTarget, channel: Channel, scale: f64) -> Result<(Codes, EditDirections)> {
        self.checkpoint.generator.check_codes(codes)?;
        let dirs = self.directions(target, channel)?;
        Ok((dirs.apply(codes, scale)?, dirs))
    }

    pub fn render(&self, codes: &Codes, pose: &CameraPose, resolution: usize) -> Result<Image> {
        render_image(&self.checkpoint.generator, codes, pose, resolution, &self.checkpoint.config.render)
    }
}
