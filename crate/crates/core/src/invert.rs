//! Alternating pose, shape and appearance optimisation of latent codes against a target image.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::embed::{clip_distance_var, EmbedderBackend, Embedding};
use crate::error::{Error, Result};
use crate::nerf::{camera_rays_var, pose_grid, render_image, render_rays, CameraPose, Code, Codes, Generator, PixelSet, RenderConfig};
use crate::nn::{Adam, AdamConfig};
use crate::raster::Image;
use crate::train::config::validate_adam;
use crate::train::lr_schedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub lambda_v: f64,
    pub lambda_s: f64,
    pub lambda_a: f64,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub rounds: usize,
    pub pose_steps: usize,
    pub shape_steps: usize,
    pub appearance_steps: usize,
    /// Azimuth count of the initial pose grid search.
    pub grid_azimuths: usize,
    /// Elevation count of the initial pose grid search.
    pub grid_elevations: usize,
    /// Abort once the loss exceeds this multiple of the initial loss ...
    pub divergence_factor: f64,
    /// ... for this many consecutive steps.
    pub divergence_patience: usize,
    /// Optimise on every `pixel_stride`-th pixel along each axis.
    pub pixel_stride: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            lambda_v: 0.1,
            lambda_s: 0.2,
            lambda_a: 0.2,
            lr: 1e-3,
            lr_decay: 0.75,
            lr_decay_every: 100,
            rounds: 5,
            pose_steps: 50,
            shape_steps: 100,
            appearance_steps: 100,
            grid_azimuths: 8,
            grid_elevations: 4,
            divergence_factor: 10.0,
            divergence_patience: 100,
            pixel_stride: 1,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("inversion.lambda_v", self.lambda_v), ("inversion.lambda_s", self.lambda_s), ("inversion.lambda_a", self.lambda_a)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be non-negative"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("inversion.lr", "must be a positive number"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(Error::config("inversion.lr_decay", "must lie in (0, 1)"));
        }
        if self.rounds == 0 {
            return Err(Error::config("inversion.rounds", "must be at least 1"));
        }
        if self.grid_azimuths == 0 || self.grid_elevations == 0 {
            return Err(Error::config("inversion.grid_azimuths", "pose grid needs at least one azimuth and one elevation"));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::config("inversion.divergence_factor", "must exceed 1"));
        }
        if self.pixel_stride == 0 {
            return Err(Error::config("inversion.pixel_stride", "must be at least 1"));
        }
        validate_adam("inversion.adam", &self.adam)
    }

    pub fn total_steps(&self) -> usize {
        self.rounds * (self.pose_steps + self.shape_steps + self.appearance_steps)
    }
}

/// Which variable an inversion phase optimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pose,
    Shape,
    Appearance,
}

/// Current and best-so-far iterate of one inversion job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionState {
    pub codes: Codes,
    pub pose: CameraPose,
    pub iteration: usize,
    /// Noise-free RMS reconstruction error of the best iterate.
    pub best_error: f64,
    pub best_codes: Codes,
    pub best_pose: CameraPose,
}

/// Losses at the end of one optimisation phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub round: usize,
    pub phase: Phase,
    pub first_loss: f64,
    pub last_loss: f64,
    pub best_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InversionReport {
    pub codes: Codes,
    pub pose: CameraPose,
    /// RMS error of the best iterate on the optimised pixels.
    pub error: f64,
    /// PSNR of the full-resolution reconstruction against the target.
    pub psnr: f64,
    pub trace: Vec<PhaseTrace>,
    pub steps: usize,
    #[serde(skip)]
    pub reconstruction: Image,
}

/// `lambda_n` at `iteration` of `total`: exactly 1 at the first and 0 at the last.
pub fn noise_weight(iteration: usize, total: usize) -> f64 {
    if total <= 1 {
        return 0.0;
    }
    1.0 - iteration.min(total - 1) as f64 / (total - 1) as f64
}

/// Target image, pixel subset and embedding for one inversion.
pub struct InversionProblem<'a> {
    pub generator: &'a Generator,
    pub render: &'a RenderConfig,
    pub backend: &'a dyn EmbedderBackend,
    pixels: PixelSet,
    side: usize,
    target: Tensor,
    target_embedding: Embedding,
}

/// Value of an inversion loss and its gradient with respect to the optimised variable.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub photometric: f64,
    pub clip: f64,
    pub gradient: Vec<f64>,
}

impl<'a> InversionProblem<'a> {
    pub fn new(generator: &'a Generator, render: &'a RenderConfig, backend: &'a dyn EmbedderBackend, target: &Image, stride: usize) -> Result<Self> {
        if target.width() != target.height() {
            return Err(Error::invalid(format!("target must be square, got {}x{}", target.width(), target.height())));
        }
        let res = target.width();
        if stride == 0 || res < stride {
            return Err(Error::invalid(format!("pixel stride {stride} does not fit a {res}px target")));
        }
        let side = res / stride;
        let coords: Vec<(f64, f64)> =
            (0..side).flat_map(|j| (0..side).map(move |i| ((i * stride) as f64 + 0.5, (j * stride) as f64 + 0.5))).collect();
        let target_px = target.sample(&coords);
        let pixels = PixelSet { resolution: res, coords, side };
        let target_embedding = backend.embed_image(target)?;
        Ok(InversionProblem { generator, render, backend, pixels, side, target: target_px, target_embedding })
    }

    pub fn resolution(&self) -> usize {
        self.pixels.resolution
    }

    /// Noise-free render of the optimised pixels and its RMS error and embedding distance.
    fn terms(&self, g: &Graph, az: &Var, el: &Var, z_s: &Var, z_a: &Var) -> Result<(Var, Var)> {
        let bound = self.generator.params().bind_frozen(g);
        let rays = camera_rays_var(az, el, &self.pixels, &self.render.camera)?;
        let field = self.generator.field(&bound, z_s, z_a);
        let rgb = render_rays(&field, &rays, self.render.samples_per_ray, self.render.background, None)?.rgb;
        let n = (self.pixels.len() * 3) as f64;
        let diff = rgb.sub(&g.constant(self.target.clone()));
        let photometric = diff.square().sum().scale(1.0 / n).add_scalar(1e-12).sqrt();
        let e = self.backend.embed_image_var(&rgb, self.side, self.side)?;
        let clip = clip_distance_var(&e, &self.target_embedding)?;
        Ok((photometric, clip))
    }

    /// `||F(v, z_s + lambda_n z_n, z_a) - I|| + weight * D_CLIP` (and the
    /// analogous appearance and pose objectives) with its gradient with respect
    /// to the variable `phase` optimises. Pose gradients are `[d azimuth, d elevation]`.
    pub fn evaluate(&self, phase: Phase, pose: &CameraPose, codes: &Codes, noise: Option<(&Code, f64)>, weight: f64) -> Result<LossEval> {
        self.generator.check_codes(codes)?;
        let g = Graph::new();
        let pose_vars = (Tensor::scalar(pose.azimuth), Tensor::scalar(pose.elevation));
        let (az, el) = match phase {
            Phase::Pose => (g.leaf(pose_vars.0), g.leaf(pose_vars.1)),
            _ => (g.constant(pose_vars.0), g.constant(pose_vars.1)),
        };
        let leaf_or_const = |c: &Code, trainable: bool| if trainable { g.leaf(c.to_row()) } else { g.constant(c.to_row()) };
        let z_s = leaf_or_const(&codes.shape, phase == Phase::Shape);
        let z_a = leaf_or_const(&codes.appearance, phase == Phase::Appearance);
        let perturb = |z: &Var| -> Result<Var> {
            match noise {
                Some((n, lambda_n)) => {
                    n.check_dim(self.generator.code_dim(), "noise")?;
                    Ok(z.add(&g.constant(n.to_row()).scale(lambda_n)))
                }
                None => Ok(z.clone()),
            }
        };
        let (zs_in, za_in) = match phase {
            Phase::Pose => (z_s.clone(), z_a.clone()),
            Phase::Shape => (perturb(&z_s)?, z_a.clone()),
            Phase::Appearance => (z_s.clone(), perturb(&z_a)?),
        };
        let (photometric, clip) = self.terms(&g, &az, &el, &zs_in, &za_in)?;
        let loss = photometric.add(&clip.scale(weight));
        let gradient = match phase {
            Phase::Pose => {
                let gr = g.grad(&loss, &[&az, &el], false);
                vec![gr[0].item(), gr[1].item()]
            }
            Phase::Shape => g.grad(&loss, &[&z_s], false)[0].value().data().to_vec(),
            Phase::Appearance => g.grad(&loss, &[&z_a], false)[0].value().data().to_vec(),
        };
        Ok(LossEval { value: loss.item(), photometric: photometric.item(), clip: clip.item(), gradient })
    }

    /// Noise-free RMS error on the optimised pixels.
    pub fn reconstruction_error(&self, pose: &CameraPose, codes: &Codes) -> Result<f64> {
        let g = Graph::inference();
        let (az, el) = (g.constant(Tensor::scalar(pose.azimuth)), g.constant(Tensor::scalar(pose.elevation)));
        let (p, _) = self.terms(&g, &az, &el, &g.constant(codes.shape.to_row()), &g.constant(codes.appearance.to_row()))?;
        Ok(p.item())
    }
}

/// Eq. 9 objective: photometric error plus `lambda_v` times the image-image distance.
pub fn loss_pose(problem: &InversionProblem<'_>, pose: &CameraPose, codes: &Codes, lambda_v: f64) -> Result<LossEval> {
    problem.evaluate(Phase::Pose, pose, codes, None, lambda_v)
}

/// Shape objective with the shape code perturbed by `lambda_n * z_n`.
pub fn loss_shape(problem: &InversionProblem<'_>, pose: &CameraPose, codes: &Codes, z_n: &Code, lambda_n: f64, lambda_s: f64) -> Result<LossEval> {
    problem.evaluate(Phase::Shape, pose, codes, Some((z_n, lambda_n)), lambda_s)
}

/// Appearance objective with the appearance code perturbed by `lambda_n * z_n`.
pub fn loss_appearance(problem: &InversionProblem<'_>, pose: &CameraPose, codes: &Codes, z_n: &Code, lambda_n: f64, lambda_a: f64) -> Result<LossEval> {
    problem.evaluate(Phase::Appearance, pose, codes, Some((z_n, lambda_n)), lambda_a)
}

struct Divergence {
    factor: f64,
    patience: usize,
    initial: Option<f64>,
    run: usize,
}

impl Divergence {
    fn observe(&mut self, loss: f64, iteration: usize, phase: Phase) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite {phase:?} loss at iteration {iteration}")));
        }
        let initial = *self.initial.get_or_insert(loss);
        if loss > self.factor * initial {
            self.run += 1;
            if self.run >= self.patience {
                return Err(Error::Diverged(format!(
                    "{phase:?} loss {loss:.4e} exceeded {}x the initial {initial:.4e} for {} consecutive steps (iteration {iteration})",
                    self.factor, self.run
                )));
            }
        } else {
            self.run = 0;
        }
        Ok(())
    }
}

/// Pose with the lowest photometric error over the configured grid, for `codes`.
pub fn grid_pose(problem: &InversionProblem<'_>, codes: &Codes, config: &InversionConfig) -> Result<CameraPose> {
    let mut best: Option<(f64, CameraPose)> = None;
    for pose in pose_grid(&problem.render.camera, config.grid_azimuths, config.grid_elevations) {
        let err = problem.reconstruction_error(&pose, codes)?;
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, pose));
        }
    }
    Ok(best.expect("non-empty grid").1)
}

/// Recover codes and pose for `target` by alternating pose, shape and
/// appearance optimisation with annealed code noise.
pub fn invert(generator: &Generator, render: &RenderConfig, backend: &dyn EmbedderBackend, target: &Image, config: &InversionConfig) -> Result<InversionReport> {
    invert_with(generator, render, backend, target, config, |_| {})
}

/// [`invert`] reporting the state after every phase.
pub fn invert_with(
    generator: &Generator,
    render: &RenderConfig,
    backend: &dyn EmbedderBackend,
    target: &Image,
    config: &InversionConfig,
    mut progress: impl FnMut(&InversionState),
) -> Result<InversionReport> {
    config.validate()?;
    render.validate()?;
    let problem = InversionProblem::new(generator, render, backend, target, config.pixel_stride)?;
    let dim = generator.code_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let codes = Codes::zeros(dim);
    let pose = grid_pose(&problem, &codes, config)?;
    let initial_error = problem.reconstruction_error(&pose, &codes)?;
    let mut state = InversionState {
        codes: codes.clone(),
        pose,
        iteration: 0,
        best_error: initial_error,
        best_codes: codes,
        best_pose: pose,
    };
    let total = config.total_steps();
    let mut pose_opt = Adam::new(config.adam, &[Tensor::zeros(1, 2)]);
    let mut shape_opt = Adam::new(config.adam, &[Tensor::zeros(1, dim)]);
    let mut appearance_opt = Adam::new(config.adam, &[Tensor::zeros(1, dim)]);
    let mut divergence = Divergence { factor: config.divergence_factor, patience: config.divergence_patience, initial: None, run: 0 };
    let mut trace = Vec::new();
    let (min_el, max_el) = (render.camera.min_elevation, render.camera.max_elevation);
    for round in 0..config.rounds {
        for (phase, steps) in [(Phase::Pose, config.pose_steps), (Phase::Shape, config.shape_steps), (Phase::Appearance, config.appearance_steps)] {
            let mut first = None;
            let mut last = f64::NAN;
            for _ in 0..steps {
                let lambda_n = noise_weight(state.iteration, total);
                let noise = Code::sample(&mut rng, dim);
                let (opt, eval) = match phase {
                    Phase::Pose => (&mut pose_opt, loss_pose(&problem, &state.pose, &state.codes, config.lambda_v)?),
                    Phase::Shape => (&mut shape_opt, loss_shape(&problem, &state.pose, &state.codes, &noise, lambda_n, config.lambda_s)?),
                    Phase::Appearance => {
                        (&mut appearance_opt, loss_appearance(&problem, &state.pose, &state.codes, &noise, lambda_n, config.lambda_a)?)
                    }
                };
                divergence.observe(eval.value, state.iteration, phase)?;
                first.get_or_insert(eval.value);
                last = eval.value;
                let lr = lr_schedule(opt.steps(), config.lr, config.lr_decay, config.lr_decay_every);
                let grad = Tensor::row(&eval.gradient);
                match phase {
                    Phase::Pose => {
                        let mut p = [Tensor::row(&[state.pose.azimuth, state.pose.elevation])];
                        opt.step(&mut p, &[Some(&grad)], lr);
                        let el = p[0].get(0, 1).clamp(min_el, max_el);
                        state.pose = CameraPose::new(p[0].get(0, 0), el, state.pose.radius)?;
                    }
                    Phase::Shape => {
                        let mut p = [state.codes.shape.to_row()];
                        opt.step(&mut p, &[Some(&grad)], lr);
                        state.codes.shape = Code::from_row(&p[0])?;
                    }
                    Phase::Appearance => {
                        let mut p = [state.codes.appearance.to_row()];
                        opt.step(&mut p, &[Some(&grad)], lr);
                        state.codes.appearance = Code::from_row(&p[0])?;
                    }
                }
                state.iteration += 1;
            }
            let err = problem.reconstruction_error(&state.pose, &state.codes)?;
            if err < state.best_error {
                state.best_error = err;
                state.best_codes = state.codes.clone();
                state.best_pose = state.pose;
            }
            trace.push(PhaseTrace { round, phase, first_loss: first.unwrap_or(f64::NAN), last_loss: last, best_error: state.best_error });
            progress(&state);
        }
    }
    let reconstruction = render_image(generator, &state.best_codes, &state.best_pose, target.width(), render)?;
    let psnr = reconstruction.psnr(target)?;
    Ok(InversionReport {
        codes: state.best_codes,
        pose: state.best_pose,
        error: state.best_error,
        psnr,
        trace,
        steps: state.iteration,
        reconstruction,
    })
}
