use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::critic::Critic;
use super::gan::{gan_objective, lr_schedule};
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::{Dataset, EpochSampler};
use crate::error::{Error, Result};
use crate::nerf::{camera_rays, render_rays, sample_camera, Code, Codes, Generator, PatchSpec, RenderConfig};
use crate::nn::{Adam, Bound};

/// One logged training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Record {
    pub step: u64,
    pub loss_generator: f64,
    pub loss_critic: f64,
    pub r1: f64,
    pub real_logit: f64,
    pub fake_logit: f64,
    pub lr_generator: f64,
    pub lr_critic: f64,
    pub seconds: f64,
}

/// Adversarial trainer owning the generator, critic and their optimisers.
pub struct Stage1Trainer {
    pub generator: Generator,
    pub critic: Critic,
    config: TrainConfig,
    render: RenderConfig,
    gen_opt: Adam,
    critic_opt: Adam,
    rng: ChaCha8Rng,
    sampler: Option<EpochSampler>,
    seed: u64,
    step: u64,
}

pub(crate) fn sample_codes(rng: &mut impl Rng, dim: usize, std: f64) -> Codes {
    let scale = |c: Code| Code::new(c.values().iter().map(|v| v * std).collect()).expect("finite");
    let c = Codes::sample(rng, dim);
    Codes { shape: scale(c.shape), appearance: scale(c.appearance) }
}

/// Render one `size x size` patch of `codes` per object and stack them.
pub(crate) fn render_patches(
    g: &Graph,
    generator: &Generator,
    bound: &Bound,
    objects: &[(Codes, PatchSpec, crate::nerf::CameraPose)],
    resolution: usize,
    render: &RenderConfig,
    rng: Option<&mut ChaCha8Rng>,
    code_vars: Option<&[(Var, Var)]>,
) -> Result<Var> {
    let mut rng = rng;
    let mut parts = Vec::with_capacity(objects.len());
    for (i, (codes, patch, pose)) in objects.iter().enumerate() {
        let rays = camera_rays(pose, &patch.pixels(resolution)?, &render.camera)?.to_vars(g);
        let (z_s, z_a) = match code_vars {
            Some(v) => v[i].clone(),
            None => (g.constant(codes.shape.to_row()), g.constant(codes.appearance.to_row())),
        };
        let field = generator.field(bound, &z_s, &z_a);
        let jitter = rng.as_deref_mut().map(|r| r as &mut dyn rand::RngCore);
        parts.push(render_rays(&field, &rays, render.samples_per_ray, render.background, jitter)?.rgb);
    }
    let refs: Vec<&Var> = parts.iter().collect();
    Ok(Var::concat_rows(&refs))
}

pub(crate) fn check_finite(step: u64, values: &[(&str, f64)]) -> Result<()> {
    if let Some((name, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
        let dump: Vec<String> = values.iter().map(|(n, v)| format!("{n}={v}")).collect();
        return Err(Error::NonFinite(format!("{name} = {v} at step {step} ({})", dump.join(", "))));
    }
    Ok(())
}

impl Stage1Trainer {
    pub fn new(generator: Generator, critic: Critic, config: TrainConfig, render: RenderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        render.validate()?;
        if critic.patch_size() != config.patch_size {
            return Err(Error::config("train.patch_size", "does not match the critic"));
        }
        let gen_opt = Adam::new(config.adam, generator.params().tensors());
        let critic_opt = Adam::new(config.adam, critic.params().tensors());
        Ok(Stage1Trainer {
            generator,
            critic,
            config,
            render,
            gen_opt,
            critic_opt,
            rng: ChaCha8Rng::seed_from_u64(seed),
            sampler: None,
            seed,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn render_config(&self) -> &RenderConfig {
        &self.render
    }

    /// One critic update and one generator update on the same fake batch.
    pub fn step(&mut self, data: &Dataset) -> Result<Stage1Record> {
        if data.is_empty() {
            return Err(Error::Dataset("dataset is empty".into()));
        }
        let started = Instant::now();
        let cfg = &self.config;
        let (b, k, res) = (cfg.batch_size, cfg.patch_size, data.resolution());
        if k > res {
            return Err(Error::config("train.patch_size", format!("exceeds the {res}px dataset resolution")));
        }
        let sampler = self.sampler.get_or_insert_with(|| data.sampler(self.seed));

        let mut objects = Vec::with_capacity(b);
        for _ in 0..b {
            let codes = sample_codes(&mut self.rng, self.generator.code_dim(), cfg.code_std);
            let pose = sample_camera(&mut self.rng, &self.render.camera);
            let patch = PatchSpec::random(&mut self.rng, k, res, cfg.max_patch_scale)?;
            objects.push((codes, patch, pose));
        }
        let mut reals = Vec::with_capacity(b);
        for _ in 0..b {
            let idx = sampler.next().expect("non-empty dataset");
            let patch = PatchSpec::random(&mut self.rng, k, res, cfg.max_patch_scale)?;
            reals.push(data.image(idx).sample(&patch.pixels(res)?.coords));
        }

        let g = Graph::new();
        let gen_bound = self.generator.params().bind_all(&g);
        let critic_train = self.critic.params().bind_all(&g);
        let critic_frozen = self.critic.params().bind_frozen(&g);
        let fake = render_patches(&g, &self.generator, &gen_bound, &objects, res, &self.render, Some(&mut self.rng), None)?;
        let real_refs: Vec<&Tensor> = reals.iter().collect();
        let real = g.leaf(Tensor::concat_rows(&real_refs));

        let fake_g = self.critic.logits(&critic_frozen, &fake, b)?;
        let fake_d = self.critic.logits(&critic_train, &fake.detach(), b)?;
        let real_d = self.critic.logits(&critic_train, &real, b)?;
        let locations = self.critic.locations() as f64;
        let score_sum = real_d.sum().scale(1.0 / locations);
        let r1_grad = g.grad(&score_sum, &[&real], true).remove(0);
        let r1 = r1_grad.square().sum().scale(1.0 / b as f64);
        let losses = gan_objective(&fake_g, &fake_d, &real_d, r1, cfg.lambda_r);

        let record_values = [
            ("loss_generator", losses.generator.item()),
            ("loss_critic", losses.critic.item()),
            ("r1", losses.r1.item()),
        ];
        check_finite(self.step, &record_values)?;

        let gen_vars: Vec<&Var> = gen_bound.vars().iter().collect();
        let gen_grads: Vec<Tensor> = g.grad(&losses.generator, &gen_vars, false).iter().map(Var::to_tensor).collect();
        let critic_vars: Vec<&Var> = critic_train.vars().iter().collect();
        let critic_grads: Vec<Tensor> = g.grad(&losses.critic, &critic_vars, false).iter().map(Var::to_tensor).collect();
        if gen_grads.iter().chain(&critic_grads).any(|t| !t.all_finite()) {
            return Err(Error::NonFinite(format!("gradient at step {}", self.step)));
        }

        let lr_g = lr_schedule(self.step, cfg.lr_generator, cfg.lr_decay, cfg.lr_decay_every);
        let lr_d = lr_schedule(self.step, cfg.lr_critic, cfg.lr_decay, cfg.lr_decay_every);
        let gg: Vec<Option<&Tensor>> = gen_grads.iter().map(Some).collect();
        self.gen_opt.step(self.generator.params_mut().tensors_mut(), &gg, lr_g);
        let cg: Vec<Option<&Tensor>> = critic_grads.iter().map(Some).collect();
        self.critic_opt.step(self.critic.params_mut().tensors_mut(), &cg, lr_d);

        let record = Stage1Record {
            step: self.step,
            loss_generator: losses.generator.item(),
            loss_critic: losses.critic.item(),
            r1: losses.r1.item(),
            real_logit: real_d.value().mean(),
            fake_logit: fake_d.value().mean(),
            lr_generator: lr_g,
            lr_critic: lr_d,
            seconds: started.elapsed().as_secs_f64(),
        };
        self.step += 1;
        Ok(record)
    }

    /// Fraction of held-out real and fake patches the critic classifies correctly.
    pub fn critic_accuracy(&self, data: &Dataset, patches: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, res) = (self.config.patch_size, data.resolution());
        let g = Graph::inference();
        let gen_bound = self.generator.params().bind_frozen(&g);
        let critic_bound = self.critic.params().bind_frozen(&g);
        let mut objects = Vec::with_capacity(patches);
        let mut reals = Vec::with_capacity(patches);
        for _ in 0..patches {
            let codes = sample_codes(&mut rng, self.generator.code_dim(), self.config.code_std);
            let pose = sample_camera(&mut rng, &self.render.camera);
            objects.push((codes, PatchSpec::random(&mut rng, k, res, self.config.max_patch_scale)?, pose));
            let idx = rng.gen_range(0..data.len());
            let patch = PatchSpec::random(&mut rng, k, res, self.config.max_patch_scale)?;
            reals.push(data.image(idx).sample(&patch.pixels(res)?.coords));
        }
        let fake = render_patches(&g, &self.generator, &gen_bound, &objects, res, &self.render, None, None)?;
        let refs: Vec<&Tensor> = reals.iter().collect();
        let real = g.constant(Tensor::concat_rows(&refs));
        let sf = self.critic.score(&critic_bound, &fake, patches)?;
        let sr = self.critic.score(&critic_bound, &real, patches)?;
        let correct = sr.value().data().iter().filter(|&&v| v > 0.0).count() + sf.value().data().iter().filter(|&&v| v <= 0.0).count();
        Ok(correct as f64 / (2 * patches) as f64)
    }

    pub fn into_parts(self) -> (Generator, Critic) {
        (self.generator, self.critic)
    }
}
