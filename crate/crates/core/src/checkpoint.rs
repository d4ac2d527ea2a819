//! Self-describing checkpoint container: run configuration plus every parameter array.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::autodiff::Tensor;
use crate::data::RunConfig;
use crate::error::{Error, Result};
use crate::mappers::{Mapper, Mappers};
use crate::nerf::{Codes, Generator};
use crate::nn::ParamSet;
use crate::train::Critic;

pub const FORMAT_TAG: &str = "nerfedit-checkpoint/1";

const GENERATOR: &str = "generator.";
const CRITIC: &str = "critic.";
const SHAPE_MAPPER: &str = "mapper.shape.";
const APPEARANCE_MAPPER: &str = "mapper.appearance.";

/// A trained generator with its optional critic and mappers.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub generator: Generator,
    pub critic: Option<Critic>,
    pub mappers: Option<Mappers>,
    /// Name of the embedder backend the mappers were trained against.
    pub mapper_backend: Option<String>,
    /// Generator training steps completed.
    pub step: u64,
    /// Fixed codes when the checkpoint holds a single finetuned scene.
    pub scene: Option<Codes>,
}

fn collect<'a>(prefix: &str, params: &'a ParamSet, out: &mut Vec<(String, &'a Tensor)>) {
    out.extend(params.iter().map(|(name, t)| (format!("{prefix}{name}"), t)));
}

fn extract(st: &SafeTensors<'_>, prefix: &str) -> Result<Option<ParamSet>> {
    let mut names: Vec<&str> = st.names().into_iter().filter(|n| n.starts_with(prefix)).collect();
    if names.is_empty() {
        return Ok(None);
    }
    names.sort();
    let mut params = ParamSet::new();
    for name in names {
        let view = st.tensor(name).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        if view.dtype() != Dtype::F64 {
            return Err(Error::Checkpoint(format!("{name}: expected f64, found {:?}", view.dtype())));
        }
        let (rows, cols) = match *view.shape() {
            [r, c] => (r, c),
            ref s => return Err(Error::Checkpoint(format!("{name}: expected a 2-d array, found shape {s:?}"))),
        };
        let values: Vec<f64> =
            view.data().chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        params.push(&name[prefix.len()..], Tensor::from_vec(rows, cols, values));
    }
    Ok(Some(params))
}

impl Checkpoint {
    pub fn new(config: RunConfig, generator: Generator) -> Self {
        Checkpoint { config, generator, critic: None, mappers: None, mapper_backend: None, step: 0, scene: None }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        collect(GENERATOR, self.generator.params(), &mut entries);
        if let Some(c) = &self.critic {
            collect(CRITIC, c.params(), &mut entries);
        }
        if let Some(m) = &self.mappers {
            collect(SHAPE_MAPPER, m.shape.params(), &mut entries);
            collect(APPEARANCE_MAPPER, m.appearance.params(), &mut entries);
        }
        let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = entries
            .into_iter()
            .map(|(name, t)| (name, t.data().iter().flat_map(|v| v.to_le_bytes()).collect(), vec![t.rows(), t.cols()]))
            .collect();
        let mut views = Vec::with_capacity(bytes.len());
        for (name, data, shape) in &bytes {
            let view = TensorView::new(Dtype::F64, shape.clone(), data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            views.push((name.clone(), view));
        }
        let mut meta = HashMap::new();
        meta.insert("format".to_string(), FORMAT_TAG.to_string());
        meta.insert("config".to_string(), serde_json::to_string(&self.config)?);
        meta.insert("step".to_string(), self.step.to_string());
        if let Some(b) = &self.mapper_backend {
            meta.insert("mapper_backend".to_string(), b.clone());
        }
        if let Some(c) = &self.scene {
            meta.insert("scene".to_string(), serde_json::to_string(c)?);
        }
        safetensors::serialize(views, Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let meta = header.metadata().clone().unwrap_or_default();
        match meta.get("format") {
            Some(tag) if tag == FORMAT_TAG => {}
            Some(tag) => return Err(Error::Checkpoint(format!("unsupported format `{tag}`, expected `{FORMAT_TAG}`"))),
            None => return Err(Error::Checkpoint("missing format tag".into())),
        }
        let config: RunConfig = serde_json::from_str(meta.get("config").ok_or_else(|| Error::Checkpoint("missing config".into()))?)?;
        config.validate()?;
        let step = meta.get("step").and_then(|s| s.parse().ok()).unwrap_or(0);
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let gen_params = extract(&st, GENERATOR)?.ok_or_else(|| Error::Checkpoint("no generator parameters".into()))?;
        let generator = Generator::from_params(config.generator, gen_params)?;
        let critic = extract(&st, CRITIC)?
            .map(|p| Critic::from_params(config.train.critic.clone(), config.train.patch_size, p))
            .transpose()?;
        let mappers = match (extract(&st, SHAPE_MAPPER)?, extract(&st, APPEARANCE_MAPPER)?) {
            (Some(s), Some(a)) => Some(Mappers { shape: Mapper::from_params(s)?, appearance: Mapper::from_params(a)? }),
            (None, None) => None,
            _ => return Err(Error::Checkpoint("only one of the two mappers is present".into())),
        };
        let scene: Option<Codes> = meta.get("scene").map(|t| serde_json::from_str(t)).transpose()?;
        if let Some(c) = &scene {
            generator.check_codes(c)?;
        }
        Ok(Checkpoint { config, generator, critic, mappers, mapper_backend: meta.get("mapper_backend").cloned(), step, scene })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_bytes()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn require_mappers(&self) -> Result<&Mappers> {
        self.mappers.as_ref().ok_or_else(|| Error::NotFound("checkpoint has no trained mappers".into()))
    }
}
