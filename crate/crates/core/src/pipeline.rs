//! End-to-end stage drivers shared by the command line and the service.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::data::{generate_toy_dataset, load_dataset, DatasetSpec, RunConfig, ToyDatasetConfig};
use crate::edit::{EditTarget, Model};
use crate::embed::{clip_distance, cross_view_consistency, load_backend, ConsistencyReport};
use crate::error::{Error, Result};
use crate::invert::{invert, InversionConfig};
use crate::mappers::{Channel, Mappers};
use crate::nerf::{pose_grid, render_image, CameraPose, Codes, Generator};
use crate::raster::Image;
use crate::train::{
    finetune_appearance, Critic, FinetuneConfig, FinetuneReport, MetricsLog, PromptLibrary, SceneField, Stage1Trainer, Stage2Trainer,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Clone, Serialize)]
pub struct ToyDataSummary {
    pub root: PathBuf,
    pub images: usize,
    pub manifest: PathBuf,
}

pub fn make_toy_data(config: &ToyDatasetConfig, root: &Path) -> Result<ToyDataSummary> {
    let records = generate_toy_dataset(config, root)?;
    Ok(ToyDataSummary { root: root.to_path_buf(), images: records.len(), manifest: root.join("manifest.jsonl") })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub steps: u64,
    pub final_loss_generator: f64,
    pub final_loss_critic: f64,
    pub seconds: f64,
}

/// Stage-1 training from scratch or from `resume`, checkpointing into `out`.
pub fn train_generator(config: &RunConfig, data_root: &Path, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    config.validate()?;
    let data = load_dataset(&DatasetSpec::new(data_root))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (generator, critic, start) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let critic = match ck.critic {
                Some(c) => c,
                None => Critic::new(config.train.critic.clone(), config.train.patch_size, &mut rng)?,
            };
            (ck.generator, critic, ck.step)
        }
        None => (
            Generator::new(config.generator, &mut rng)?,
            Critic::new(config.train.critic.clone(), config.train.patch_size, &mut rng)?,
            0,
        ),
    };
    let mut trainer = Stage1Trainer::new(generator, critic, config.train.clone(), config.render, config.seed.wrapping_add(start))?;
    let metrics_path = out.join(METRICS_FILE);
    let ck_path = out.join(CHECKPOINT_FILE);
    let mut metrics = MetricsLog::append(&metrics_path)?;
    let started = std::time::Instant::now();
    let mut last = None;
    let save = |trainer: &Stage1Trainer| -> Result<()> {
        let mut ck = Checkpoint::new(config.clone(), trainer.generator.clone());
        ck.critic = Some(trainer.critic.clone());
        ck.step = start + trainer.steps_done();
        ck.save(&ck_path)
    };
    for i in 0..config.train.steps {
        let mut record = trainer.step(&data)?;
        record.step += start;
        if i % config.train.log_every.max(1) == 0 || i + 1 == config.train.steps {
            log::info!(
                "step {} loss_g {:.4} loss_d {:.4} r1 {:.4} ({:.2}s)",
                record.step,
                record.loss_generator,
                record.loss_critic,
                record.r1,
                record.seconds
            );
            metrics.write(&record)?;
        }
        if config.train.checkpoint_every > 0 && (i + 1) % config.train.checkpoint_every == 0 {
            save(&trainer)?;
        }
        last = Some(record);
    }
    save(&trainer)?;
    Ok(TrainSummary {
        checkpoint: ck_path,
        metrics: metrics_path,
        steps: start + trainer.steps_done(),
        final_loss_generator: last.as_ref().map_or(f64::NAN, |r| r.loss_generator),
        final_loss_critic: last.as_ref().map_or(f64::NAN, |r| r.loss_critic),
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MapperSummary {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub steps: u64,
    pub backend: String,
    pub final_clip_shape: Option<f64>,
    pub final_clip_appearance: Option<f64>,
    pub seconds: f64,
}

/// Stage-2 mapper training on top of a stage-1 checkpoint; writes a new
/// checkpoint with the mappers attached.
pub fn train_mappers(config: &RunConfig, checkpoint: &Path, out: &Path) -> Result<MapperSummary> {
    config.validate()?;
    let ck = Checkpoint::load(checkpoint)?;
    let critic = ck.critic.clone().ok_or_else(|| Error::Checkpoint("checkpoint has no critic; mapper training needs one".into()))?;
    let backend = load_backend(&config.embedder)?;
    let prompts = PromptLibrary::load(config.train.mapper.prompts.as_deref().map(Path::new))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5747_4532);
    let mappers = Mappers::new(&config.mapper, backend.dim(), ck.generator.code_dim(), &mut rng)?;
    let gen_before = ck.generator.params().fingerprint();
    let critic_before = critic.params().fingerprint();
    let mut train_cfg = ck.config.train.clone();
    train_cfg.mapper = config.train.mapper.clone();
    train_cfg.lambda_c = config.train.lambda_c;
    let mut trainer = Stage2Trainer::new(mappers, &ck.generator, &critic, backend.as_ref(), prompts, train_cfg, ck.config.render, config.seed)?;
    let metrics_path = out.join("mapper_metrics.jsonl");
    let mut metrics = MetricsLog::append(&metrics_path)?;
    let started = std::time::Instant::now();
    let mut last = None;
    let steps = config.train.mapper.steps;
    for i in 0..steps {
        let record = trainer.step()?;
        if i % config.train.log_every.max(1) == 0 || i + 1 == steps {
            log::info!(
                "mapper step {} clip_shape {:?} clip_appearance {:?} ({:.2}s)",
                record.step,
                record.clip_shape,
                record.clip_appearance,
                record.seconds
            );
            metrics.write(&record)?;
        }
        last = Some(record);
    }
    let mappers = trainer.into_mappers();
    if ck.generator.params().fingerprint() != gen_before || critic.params().fingerprint() != critic_before {
        return Err(Error::InvalidInput("frozen networks changed during mapper training".into()));
    }
    let mut out_ck = ck.clone();
    out_ck.config.mapper = config.mapper;
    out_ck.config.embedder = config.embedder.clone();
    out_ck.config.train.mapper = config.train.mapper.clone();
    out_ck.mappers = Some(mappers);
    out_ck.mapper_backend = Some(backend.name().to_string());
    let ck_path = out.join(CHECKPOINT_FILE);
    out_ck.save(&ck_path)?;
    Ok(MapperSummary {
        checkpoint: ck_path,
        metrics: metrics_path,
        steps,
        backend: backend.name().to_string(),
        final_clip_shape: last.as_ref().and_then(|r| r.clip_shape),
        final_clip_appearance: last.as_ref().and_then(|r| r.clip_appearance),
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RenderSummary {
    pub frames: Vec<PathBuf>,
    pub codes: Codes,
}

/// Orbit sweep of `codes` at fixed elevation, one PNG per frame.
pub fn render_orbit(ck: &Checkpoint, codes: &Codes, frames: usize, elevation: f64, resolution: usize, out: &Path) -> Result<RenderSummary> {
    if frames == 0 {
        return Err(Error::invalid("frame count must be at least 1"));
    }
    std::fs::create_dir_all(out)?;
    let mut paths = Vec::with_capacity(frames);
    for i in 0..frames {
        let az = std::f64::consts::TAU * i as f64 / frames as f64;
        let pose = CameraPose::new(az, elevation, ck.config.render.camera.radius)?;
        let img = render_image(&ck.generator, codes, &pose, resolution, &ck.config.render)?;
        let path = out.join(format!("frame_{i:03}.png"));
        img.save_png(&path)?;
        paths.push(path);
    }
    Ok(RenderSummary { frames: paths, codes: codes.clone() })
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct EditSummary {
    pub before: PathBuf,
    pub after: PathBuf,
    pub codes_before: Codes,
    pub codes_after: Codes,
    pub distance_before: f64,
    pub distance_after: f64,
}

/// Apply one edit to `codes`, rendering the object before and after at `pose`.
pub fn edit_object(
    model: &Model,
    codes: &Codes,
    target: &EditTarget,
    channel: Channel,
    scale: f64,
    pose: &CameraPose,
    resolution: usize,
    out: &Path,
) -> Result<EditSummary> {
    let (edited, _) = model.edit(codes, target, channel, scale)?;
    let before_img = model.render(codes, pose, resolution)?;
    let after_img = model.render(&edited, pose, resolution)?;
    let target_emb = model.embed(target)?;
    let distance_before = clip_distance(&model.backend.embed_image(&before_img)?, &target_emb)?;
    let distance_after = clip_distance(&model.backend.embed_image(&after_img)?, &target_emb)?;
    std::fs::create_dir_all(out)?;
    let (before, after) = (out.join("before.png"), out.join("after.png"));
    before_img.save_png(&before)?;
    after_img.save_png(&after)?;
    write_json(&out.join("codes_before.json"), codes)?;
    write_json(&out.join("codes_after.json"), &edited)?;
    Ok(EditSummary { before, after, codes_before: codes.clone(), codes_after: edited, distance_before, distance_after })
}

#[derive(Debug, Clone, Serialize)]
pub struct InvertSummary {
    pub codes: PathBuf,
    pub reconstruction: PathBuf,
    pub report: PathBuf,
    pub psnr: f64,
    pub pose: CameraPose,
    pub steps: usize,
    pub seconds: f64,
}

pub fn invert_image(model: &Model, image: &Image, config: &InversionConfig, out: &Path) -> Result<InvertSummary> {
    let started = std::time::Instant::now();
    let ck = &model.checkpoint;
    let report = invert(&ck.generator, &ck.config.render, model.backend.as_ref(), image, config)?;
    std::fs::create_dir_all(out)?;
    let codes = out.join("codes.json");
    write_json(&codes, &report.codes)?;
    let reconstruction = out.join("reconstruction.png");
    report.reconstruction.save_png(&reconstruction)?;
    let report_path = out.join("report.json");
    write_json(&report_path, &report)?;
    Ok(InvertSummary {
        codes,
        reconstruction,
        report: report_path,
        psnr: report.psnr,
        pose: report.pose,
        steps: report.steps,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Azimuth and elevation counts of a near-square grid with `views` poses.
pub fn grid_shape(views: usize) -> Result<(usize, usize)> {
    if views < 2 {
        return Err(Error::invalid("the consistency probe needs at least two views"));
    }
    let n_az = (views as f64).sqrt().ceil() as usize;
    if !views.is_multiple_of(n_az) {
        return Err(Error::invalid(format!("{views} views do not form an azimuth x elevation grid; use e.g. 144")));
    }
    Ok((n_az, views / n_az))
}

pub fn probe_consistency(model: &Model, objects: usize, views: usize, resolution: usize, seed: u64) -> Result<ConsistencyReport> {
    let (n_az, n_el) = grid_shape(views)?;
    let ck = &model.checkpoint;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes: Vec<Codes> = (0..objects).map(|_| Codes::sample(&mut rng, ck.generator.code_dim())).collect();
    let poses = pose_grid(&ck.config.render.camera, n_az, n_el);
    cross_view_consistency(&codes, &poses, &ck.generator, &ck.config.render, resolution, model.backend.as_ref())
}

#[derive(Debug, Clone, Serialize)]
pub struct FinetuneSummary {
    pub checkpoint: PathBuf,
    pub report: FinetuneReport,
    /// Largest density change on the probe grid; zero when the density is untouched.
    pub density_change: f64,
}

/// Density of `generator` with `codes` on a fixed `n^3` grid in the unit cube.
pub fn density_probe(generator: &Generator, codes: &Codes, n: usize) -> Result<Vec<f64>> {
    let axis = |i: usize| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
    let points: Vec<[f64; 3]> = (0..n * n * n).map(|i| [axis(i % n), axis((i / n) % n), axis(i / (n * n))]).collect();
    let samples = generator.field_eval(&points, [0.0, 0.0, 1.0], codes)?;
    Ok(samples.iter().map(|s| s.density).collect())
}

/// Finetune the radiance branch of one scene toward `prompt`.
pub fn finetune_scene(model: &Model, codes: &Codes, prompt: &str, config: &FinetuneConfig, seed: u64, out: &Path) -> Result<FinetuneSummary> {
    let ck = &model.checkpoint;
    let mut scene = SceneField::new(ck.generator.clone(), codes.clone())?;
    let before = density_probe(&scene.generator, codes, 8)?;
    let report = finetune_appearance(&mut scene, prompt, model.backend.as_ref(), config, &ck.config.render, None, seed)?;
    let after = density_probe(&scene.generator, codes, 8)?;
    let density_change = before.iter().zip(&after).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut out_ck = Checkpoint::new(ck.config.clone(), scene.generator);
    out_ck.step = ck.step;
    out_ck.scene = Some(codes.clone());
    let path = out.join(CHECKPOINT_FILE);
    out_ck.save(&path)?;
    write_json(&out.join("finetune_report.json"), &report)?;
    Ok(FinetuneSummary { checkpoint: path, report, density_change })
}
