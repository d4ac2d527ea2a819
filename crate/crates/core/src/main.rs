use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use nerfedit::checkpoint::Checkpoint;
use nerfedit::data::{load_config, RunConfig};
use nerfedit::edit::{EditTarget, Model};
use nerfedit::embed::load_backend;
use nerfedit::mappers::Channel;
use nerfedit::nerf::{CameraPose, Codes};
use nerfedit::raster::Image;
use nerfedit::service::{serve, ServiceState, DEFAULT_CHECKPOINT};
use nerfedit::pipeline;
use nerfedit::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "nerfedit", version, about = "Edit conditional radiance fields with text and exemplar images")]
struct Cli {
    /// YAML run configuration; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print a machine-readable summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the procedural toy dataset.
    MakeToyData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Adversarially train the generator.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the shape and appearance mappers against a frozen generator.
    TrainMappers {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Render orbit sweeps of sampled or given codes.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON file holding `{"shape": [...], "appearance": [...]}`; codes are sampled when absent.
        #[arg(long)]
        codes: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        objects: usize,
        #[arg(long, default_value_t = 12)]
        frames: usize,
        #[arg(long, default_value_t = 0.5)]
        elevation: f64,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
    },
    /// Edit an object toward a text prompt or an exemplar image.
    Edit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "exemplar", required_unless_present = "exemplar")]
        prompt: Option<String>,
        #[arg(long)]
        exemplar: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ChannelArg::Both)]
        channel: ChannelArg,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Source codes as JSON; sampled from the seed when absent.
        #[arg(long)]
        codes: Option<PathBuf>,
        #[arg(long, default_value_t = 0.8)]
        azimuth: f64,
        #[arg(long, default_value_t = 0.5)]
        elevation: f64,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover codes and pose for an image.
    Invert {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Compare same-object/cross-view and cross-object/same-view embedding distances.
    ProbeConsistency {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 2)]
        objects: usize,
        #[arg(long, default_value_t = 144)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finetune the radiance branch of one scene toward a prompt.
    FinetuneAppearance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        codes: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP editing service.
    Serve {
        /// `path` or `name=path`; the first unnamed checkpoint is served as `default`.
        #[arg(long, required = true)]
        checkpoint: Vec<String>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        sessions_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ChannelArg {
    Shape,
    Appearance,
    Both,
}

impl From<ChannelArg> for Channel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Shape => Channel::Shape,
            ChannelArg::Appearance => Channel::Appearance,
            ChannelArg::Both => Channel::Both,
        }
    }
}

fn emit(json: bool, value: &impl Serialize, text: String) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string(value)?);
    } else {
        println!("{text}");
    }
    Ok(())
}

fn read_codes(path: &std::path::Path) -> Result<Codes> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn source_codes(path: Option<&std::path::Path>, seed: u64, dim: usize) -> Result<Codes> {
    match path {
        Some(p) => read_codes(p),
        None => Ok(Codes::sample(&mut ChaCha8Rng::seed_from_u64(seed), dim)),
    }
}

fn load_model(path: &std::path::Path, config: &RunConfig) -> Result<Model> {
    let ck = Checkpoint::load(path)?;
    let embedder = if ck.mappers.is_some() { ck.config.embedder.clone() } else { config.embedder.clone() };
    Ok(Model::new(ck, load_backend(&embedder)?))
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.toy.seed = seed;
    }
    match cli.command {
        Command::MakeToyData { out, instances, resolution } => {
            if let Some(n) = instances {
                config.toy.instances_per_combination = n;
            }
            if let Some(r) = resolution {
                config.toy.resolution = r;
            }
            let s = pipeline::make_toy_data(&config.toy, &out)?;
            emit(cli.json, &s, format!("wrote {} images to {}", s.images, s.root.display()))
        }
        Command::Train { data, out, steps, resume } => {
            if let Some(n) = steps {
                config.train.steps = n;
            }
            let s = pipeline::train_generator(&config, &data, &out, resume.as_deref())?;
            emit(cli.json, &s, format!("trained {} steps in {:.1}s, checkpoint {}", s.steps, s.seconds, s.checkpoint.display()))
        }
        Command::TrainMappers { checkpoint, out, steps } => {
            if let Some(n) = steps {
                config.train.mapper.steps = n;
            }
            let s = pipeline::train_mappers(&config, &checkpoint, &out)?;
            emit(cli.json, &s, format!("trained mappers for {} steps in {:.1}s, checkpoint {}", s.steps, s.seconds, s.checkpoint.display()))
        }
        Command::Render { checkpoint, out, codes, objects, frames, elevation, resolution } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let list = match codes {
                Some(p) => vec![read_codes(&p)?],
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    (0..objects).map(|_| Codes::sample(&mut rng, ck.generator.code_dim())).collect()
                }
            };
            let mut all = Vec::new();
            for (i, c) in list.iter().enumerate() {
                let dir = if list.len() == 1 { out.clone() } else { out.join(format!("object_{i:03}")) };
                all.push(pipeline::render_orbit(&ck, c, frames, elevation, resolution, &dir)?);
            }
            let n: usize = all.iter().map(|s| s.frames.len()).sum();
            emit(cli.json, &all, format!("wrote {n} frames to {}", out.display()))
        }
        Command::Edit { checkpoint, prompt, exemplar, channel, scale, codes, azimuth, elevation, resolution, out } => {
            let model = load_model(&checkpoint, &config)?;
            let codes = source_codes(codes.as_deref(), config.seed, model.code_dim())?;
            let target = match (prompt, exemplar) {
                (Some(p), _) => EditTarget::Text(p),
                (None, Some(path)) => EditTarget::Exemplar(Image::load(&path)?),
                (None, None) => return Err(Error::InvalidInput("give --prompt or --exemplar".into())),
            };
            let pose = CameraPose::new(azimuth, elevation, model.checkpoint.config.render.camera.radius)?;
            let s = pipeline::edit_object(&model, &codes, &target, channel.into(), scale, &pose, resolution, &out)?;
            let text = format!("distance to target {:.4} -> {:.4}; wrote {}", s.distance_before, s.distance_after, s.after.display());
            emit(cli.json, &s, text)
        }
        Command::Invert { checkpoint, image, out, rounds } => {
            let model = load_model(&checkpoint, &config)?;
            let mut inv = config.inversion.clone();
            if let Some(r) = rounds {
                inv.rounds = r;
            }
            let s = pipeline::invert_image(&model, &Image::load(&image)?, &inv, &out)?;
            emit(cli.json, &s, format!("psnr {:.2} dB after {} steps ({:.1}s); codes in {}", s.psnr, s.steps, s.seconds, s.codes.display()))
        }
        Command::ProbeConsistency { checkpoint, objects, views, resolution, out } => {
            let model = load_model(&checkpoint, &config)?;
            let r = pipeline::probe_consistency(&model, objects, views, resolution, config.seed)?;
            if let Some(path) = out {
                pipeline::write_json(&path, &r)?;
            }
            let text = format!(
                "same object, cross view: {:.4}\ncross object, same view: {:.4}\ngap: {:.4}",
                r.same_object_cross_view, r.cross_object_same_view, r.gap
            );
            let summary = serde_json::json!({
                "objects": r.objects,
                "views": r.views,
                "same_object_cross_view": r.same_object_cross_view,
                "cross_object_same_view": r.cross_object_same_view,
                "gap": r.gap,
            });
            emit(cli.json, &summary, text)
        }
        Command::FinetuneAppearance { checkpoint, prompt, codes, steps, out } => {
            let model = load_model(&checkpoint, &config)?;
            let codes = match (&codes, &model.checkpoint.scene) {
                (None, Some(scene)) => scene.clone(),
                _ => source_codes(codes.as_deref(), config.seed, model.code_dim())?,
            };
            let mut ft = config.train.finetune.clone();
            if let Some(n) = steps {
                ft.steps = n;
            }
            let s = pipeline::finetune_scene(&model, &codes, &prompt, &ft, config.seed, &out)?;
            let text = format!(
                "distance to prompt {:.4} -> {:.4}; density change {:e}; wrote {}",
                s.report.initial_distance,
                s.report.final_distance,
                s.density_change,
                s.checkpoint.display()
            );
            emit(cli.json, &s, text)
        }
        Command::Serve { checkpoint, bind, sessions_dir } => {
            let mut models = Vec::new();
            for spec in &checkpoint {
                let (name, path) = match spec.split_once('=') {
                    Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                    None if models.iter().all(|(n, _): &(String, Model)| n != DEFAULT_CHECKPOINT) => {
                        (DEFAULT_CHECKPOINT.to_string(), PathBuf::from(spec))
                    }
                    None => return Err(Error::InvalidInput(format!("name the checkpoint `{spec}` as name=path"))),
                };
                models.push((name, load_model(&path, &config)?));
            }
            let mut service = config.service.clone();
            if let Some(d) = sessions_dir {
                service.sessions_dir = Some(d.display().to_string());
            }
            let bind = bind.unwrap_or_else(|| service.bind.clone());
            let state = ServiceState::new(models, config.inversion.clone(), service)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(state, &bind))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
