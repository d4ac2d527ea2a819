use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::critic::Critic;
use super::gan::lr_schedule;
use super::prompts::{Prompt, PromptLibrary};
use super::stage1::{check_finite, render_patches, sample_codes};
use crate::autodiff::{Graph, Tensor, Var};
use crate::embed::{clip_distance_var, EmbedderBackend, Embedding};
use crate::error::{Error, Result};
use crate::mappers::{Mapper, Mappers};
use crate::nerf::{sample_camera, Generator, PatchSpec, RenderConfig};
use crate::nn::{Adam, Bound};
use crate::raster::resize_map;

/// One logged mapper-training step. Channel losses are absent when the
/// library has no prompts for that channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Record {
    pub step: u64,
    pub loss_shape: Option<f64>,
    pub loss_appearance: Option<f64>,
    pub clip_shape: Option<f64>,
    pub clip_appearance: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

struct ChannelLoss {
    total: Var,
    clip: f64,
}

/// Trains the shape and appearance mappers against a frozen generator and critic.
pub struct Stage2Trainer<'a> {
    pub mappers: Mappers,
    generator: &'a Generator,
    critic: &'a Critic,
    backend: &'a dyn EmbedderBackend,
    prompts: PromptLibrary,
    config: TrainConfig,
    render: RenderConfig,
    shape_opt: Adam,
    appearance_opt: Adam,
    text_cache: HashMap<String, Embedding>,
    rng: ChaCha8Rng,
    step: u64,
}

impl<'a> Stage2Trainer<'a> {
    pub fn new(
        mappers: Mappers,
        generator: &'a Generator,
        critic: &'a Critic,
        backend: &'a dyn EmbedderBackend,
        prompts: PromptLibrary,
        config: TrainConfig,
        render: RenderConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        prompts.check()?;
        if mappers.shape.embed_dim() != backend.dim() || mappers.appearance.embed_dim() != backend.dim() {
            return Err(Error::shape(format!("mappers expect {}-d embeddings, backend produces {}", mappers.shape.embed_dim(), backend.dim())));
        }
        if mappers.shape.code_dim() != generator.code_dim() || mappers.appearance.code_dim() != generator.code_dim() {
            return Err(Error::shape("mapper output dimension differs from the generator code dimension"));
        }
        let shape_opt = Adam::new(config.mapper.adam, mappers.shape.params().tensors());
        let appearance_opt = Adam::new(config.mapper.adam, mappers.appearance.params().tensors());
        Ok(Stage2Trainer {
            mappers,
            generator,
            critic,
            backend,
            prompts,
            config,
            render,
            shape_opt,
            appearance_opt,
            text_cache: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            step: 0,
        })
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    fn text(&mut self, prompt: &str) -> Result<Embedding> {
        if let Some(e) = self.text_cache.get(prompt) {
            return Ok(e.clone());
        }
        let e = self.backend.embed_text(prompt)?;
        self.text_cache.insert(prompt.to_string(), e.clone());
        Ok(e)
    }

    /// `mean_b softplus(-D(render_b)) + lambda_c * mean_b D_CLIP(render_b, t_b)`
    /// for one channel, with the mapper displacement added to that channel's code.
    fn channel_loss(&mut self, g: &Graph, mapper: &Mapper, bound: &Bound, prompts: &[Prompt], shape_channel: bool) -> Result<ChannelLoss> {
        let b = prompts.len();
        let res = self.config.mapper.render_resolution;
        let k = self.config.patch_size;
        let gen_bound = self.generator.params().bind_frozen(g);
        let critic_bound = self.critic.params().bind_frozen(g);
        let mut objects = Vec::with_capacity(b);
        let mut code_vars = Vec::with_capacity(b);
        let mut targets = Vec::with_capacity(b);
        for prompt in prompts {
            let codes = sample_codes(&mut self.rng, self.generator.code_dim(), self.config.code_std);
            let pose = sample_camera(&mut self.rng, &self.render.camera);
            let target = self.text(&prompt.text)?;
            let delta = mapper.forward(bound, &g.constant(target.to_row()));
            let z_s = g.constant(codes.shape.to_row());
            let z_a = g.constant(codes.appearance.to_row());
            code_vars.push(if shape_channel { (z_s.add(&delta), z_a) } else { (z_s, z_a.add(&delta)) });
            objects.push((codes, PatchSpec::full(res), pose));
            targets.push(target);
        }
        let rgb = render_patches(g, self.generator, &gen_bound, &objects, res, &self.render, Some(&mut self.rng), Some(&code_vars))?;
        let per = res * res;
        let mut clip_terms = Vec::with_capacity(b);
        let mut critic_inputs = Vec::with_capacity(b);
        for (i, target) in targets.iter().enumerate() {
            let img = rgb.slice_rows(i * per, (i + 1) * per);
            let e = self.backend.embed_image_var(&img, res, res)?;
            clip_terms.push(clip_distance_var(&e, target)?);
            critic_inputs.push(if res == k { img } else { img.sparse(&resize_map(res, res, k, k), false, k * k, 3) });
        }
        let refs: Vec<&Var> = critic_inputs.iter().collect();
        let logits = self.critic.logits(&critic_bound, &Var::concat_rows(&refs), b)?;
        let adversarial = logits.neg().softplus().mean();
        let clip_refs: Vec<&Var> = clip_terms.iter().collect();
        let clip = Var::concat_rows(&clip_refs).mean();
        let clip_value = clip.item();
        Ok(ChannelLoss { total: adversarial.add(&clip.scale(self.config.lambda_c)), clip: clip_value })
    }

    pub fn step(&mut self) -> Result<Stage2Record> {
        let started = Instant::now();
        let b = self.config.mapper.batch_size;
        let lr = lr_schedule(self.step, self.config.mapper.lr, self.config.mapper.lr_decay, self.config.mapper.lr_decay_every);
        let mut record =
            Stage2Record { step: self.step, loss_shape: None, loss_appearance: None, clip_shape: None, clip_appearance: None, lr, seconds: 0.0 };

        if !self.prompts.shape.is_empty() {
            let prompts: Vec<Prompt> = (0..b).map(|_| self.prompts.shape[self.rng.gen_range(0..self.prompts.shape.len())].clone()).collect();
            let g = Graph::new();
            let mapper = self.mappers.shape.clone();
            let bound = mapper.params().bind_all(&g);
            let loss = self.channel_loss(&g, &mapper, &bound, &prompts, true)?;
            check_finite(self.step, &[("loss_shape", loss.total.item()), ("clip_shape", loss.clip)])?;
            let grads = bound.grads(&loss.total);
            let gs: Vec<Option<&Tensor>> = grads.iter().map(Some).collect();
            self.shape_opt.step(self.mappers.shape.params_mut().tensors_mut(), &gs, lr);
            record.loss_shape = Some(loss.total.item());
            record.clip_shape = Some(loss.clip);
        }
        if !self.prompts.appearance.is_empty() {
            let n = self.prompts.appearance.len();
            let prompts: Vec<Prompt> = (0..b).map(|_| self.prompts.appearance[self.rng.gen_range(0..n)].clone()).collect();
            let g = Graph::new();
            let mapper = self.mappers.appearance.clone();
            let bound = mapper.params().bind_all(&g);
            let loss = self.channel_loss(&g, &mapper, &bound, &prompts, false)?;
            check_finite(self.step, &[("loss_appearance", loss.total.item()), ("clip_appearance", loss.clip)])?;
            let grads = bound.grads(&loss.total);
            let gs: Vec<Option<&Tensor>> = grads.iter().map(Some).collect();
            self.appearance_opt.step(self.mappers.appearance.params_mut().tensors_mut(), &gs, lr);
            record.loss_appearance = Some(loss.total.item());
            record.clip_appearance = Some(loss.clip);
        }
        record.seconds = started.elapsed().as_secs_f64();
        self.step += 1;
        Ok(record)
    }

    pub fn into_mappers(self) -> Mappers {
        self.mappers
    }
}
