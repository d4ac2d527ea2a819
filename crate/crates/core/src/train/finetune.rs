use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::FinetuneConfig;
use super::stage1::check_finite;
use crate::autodiff::{Graph, Tensor, Var};
use crate::embed::{clip_distance_var, EmbedderBackend, Embedding};
use crate::error::{Error, Result};
use crate::nerf::{camera_rays, render_rays, sample_camera, CameraPose, Codes, Generator, PixelSet, RenderConfig};
use crate::nn::{Adam, Bound};

/// A single scene: a generator with its codes fixed.
#[derive(Debug, Clone)]
pub struct SceneField {
    pub generator: Generator,
    pub codes: Codes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub prompt: String,
    pub steps: u64,
    /// Mean distance to the prompt over the evaluation poses before finetuning.
    pub initial_distance: f64,
    pub final_distance: f64,
    pub trace: Vec<f64>,
    pub trained_params: Vec<String>,
}

impl SceneField {
    pub fn new(generator: Generator, codes: Codes) -> Result<Self> {
        generator.check_codes(&codes)?;
        Ok(SceneField { generator, codes })
    }

    /// Every parameter that only affects radiance.
    pub fn radiance_params(&self) -> Vec<String> {
        self.generator.params().iter().map(|(n, _)| n.to_string()).filter(|n| !Generator::is_density_param(n)).collect()
    }

    fn render_var(&self, g: &Graph, bound: &Bound, pose: &CameraPose, res: usize, render: &RenderConfig) -> Result<Var> {
        let rays = camera_rays(pose, &PixelSet::full(res), &render.camera)?.to_vars(g);
        let z_s = g.constant(self.codes.shape.to_row());
        let z_a = g.constant(self.codes.appearance.to_row());
        let field = self.generator.field(bound, &z_s, &z_a);
        Ok(render_rays(&field, &rays, render.samples_per_ray, render.background, None)?.rgb)
    }

    /// Mean distance between renders at `poses` and `target`.
    pub fn distance(&self, poses: &[CameraPose], res: usize, render: &RenderConfig, backend: &dyn EmbedderBackend, target: &Embedding) -> Result<f64> {
        let g = Graph::inference();
        let bound = self.generator.params().bind_frozen(&g);
        let mut total = 0.0;
        for pose in poses {
            let img = self.render_var(&g, &bound, pose, res, render)?;
            total += clip_distance_var(&backend.embed_image_var(&img, res, res)?, target)?.item();
        }
        Ok(total / poses.len().max(1) as f64)
    }
}

/// Fixed poses on which finetuning progress is measured.
pub fn evaluation_poses(render: &RenderConfig) -> Vec<CameraPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0e7a1);
    (0..4).map(|_| sample_camera(&mut rng, &render.camera)).collect()
}

/// Update radiance parameters of `scene` so its renders move toward `prompt`.
///
/// `trainable` defaults to every radiance parameter; naming any parameter the
/// density depends on is rejected.
pub fn finetune_appearance(
    scene: &mut SceneField,
    prompt: &str,
    backend: &dyn EmbedderBackend,
    config: &FinetuneConfig,
    render: &RenderConfig,
    trainable: Option<&[String]>,
    seed: u64,
) -> Result<FinetuneReport> {
    let names: Vec<String> = match trainable {
        Some(list) => {
            if let Some(bad) = list.iter().find(|n| Generator::is_density_param(n)) {
                return Err(Error::invalid(format!("`{bad}` feeds the density and cannot be finetuned")));
            }
            if let Some(bad) = list.iter().find(|n| scene.generator.params().index_of(n).is_none()) {
                return Err(Error::NotFound(format!("no parameter named `{bad}`")));
            }
            list.to_vec()
        }
        None => scene.radiance_params(),
    };
    let target = backend.embed_text(prompt)?;
    let res = config.render_resolution;
    let eval_poses = evaluation_poses(render);
    let initial_distance = scene.distance(&eval_poses, res, render, backend, &target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(config.adam, scene.generator.params().tensors());
    let mut trace = Vec::with_capacity(config.steps as usize);
    for step in 0..config.steps {
        let g = Graph::new();
        let bound = scene.generator.params().bind(&g, |n| names.iter().any(|t| t == n));
        let pose = sample_camera(&mut rng, &render.camera);
        let img = scene.render_var(&g, &bound, &pose, res, render)?;
        let loss = clip_distance_var(&backend.embed_image_var(&img, res, res)?, &target)?;
        check_finite(step, &[("clip_distance", loss.item())])?;
        trace.push(loss.item());
        let grads = bound.grads(&loss);
        let gs: Vec<Option<&Tensor>> = scene
            .generator
            .params()
            .iter()
            .zip(&grads)
            .map(|((n, _), gr)| names.iter().any(|t| t == n).then_some(gr))
            .collect();
        opt.step(scene.generator.params_mut().tensors_mut(), &gs, config.lr);
    }
    let final_distance = scene.distance(&eval_poses, res, render, backend, &target)?;
    Ok(FinetuneReport { prompt: prompt.to_string(), steps: config.steps, initial_distance, final_distance, trace, trained_params: names })
}
