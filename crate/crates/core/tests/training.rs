mod common;

use common::*;
use nerfedit::checkpoint::Checkpoint;
use nerfedit::data::{load_dataset, Dataset, DatasetSpec};
use nerfedit::embed::{EmbedderBackend, StubEmbedder};
use nerfedit::nerf::{Generator, RenderConfig};
use nerfedit::pipeline::{density_probe, train_generator, train_mappers, CHECKPOINT_FILE};
use nerfedit::raster::Image;
use nerfedit::train::{finetune_appearance, FinetuneConfig, PromptLibrary, SceneField, Stage1Trainer, Stage2Trainer};
use nerfedit::Error;

fn toy_dataset(dir: &std::path::Path) -> Dataset {
    write_toy(dir, &tiny_run_config().toy);
    load_dataset(&DatasetSpec::new(dir)).unwrap()
}

fn trainer(seed: u64) -> Stage1Trainer {
    let c = tiny_run_config();
    Stage1Trainer::new(tiny_generator(seed), tiny_critic(seed + 1), c.train, c.render, seed).unwrap()
}

#[test]
fn adversarial_steps_update_both_networks_with_finite_losses() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(dir.path());
    let mut t = trainer(1);
    let (g0, d0) = (t.generator.params().fingerprint(), t.critic.params().fingerprint());
    for _ in 0..3 {
        let r = t.step(&data).unwrap();
        assert!(r.loss_generator.is_finite() && r.loss_critic.is_finite() && r.r1 >= 0.0);
    }
    assert_eq!(t.steps_done(), 3);
    assert_ne!(t.generator.params().fingerprint(), g0);
    assert_ne!(t.critic.params().fingerprint(), d0);
    let acc = t.critic_accuracy(&data, 4, 9).unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_dataset(dir.path());
    let (mut a, mut b) = (trainer(5), trainer(5));
    for _ in 0..2 {
        assert_eq!(a.step(&data).unwrap().loss_generator, b.step(&data).unwrap().loss_generator);
    }
    assert_eq!(a.generator.params().fingerprint(), b.generator.params().fingerprint());
    assert_eq!(a.critic.params().fingerprint(), b.critic.params().fingerprint());
}

#[test]
fn empty_dataset_and_oversized_patches_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(&DatasetSpec::new(dir.path())), Err(Error::Dataset(_))));
    assert!(Dataset::from_images(vec![]).is_err());

    let small = Dataset::from_images(vec![Image::filled(4, 4, [1.0; 3])]).unwrap();
    let mut t = trainer(2);
    assert!(matches!(t.step(&small), Err(Error::Config { .. })));
}

#[test]
fn mismatched_critic_patch_size_is_rejected() {
    let mut c = tiny_run_config();
    c.train.patch_size = 16;
    assert!(Stage1Trainer::new(tiny_generator(1), tiny_critic(2), c.train, c.render, 0).is_err());
}

fn stage2<'a>(generator: &'a Generator, critic: &'a nerfedit::train::Critic, backend: &'a StubEmbedder, prompts: PromptLibrary) -> nerfedit::Result<Stage2Trainer<'a>> {
    let c = tiny_run_config();
    let mappers = tiny_mappers(backend.dim(), generator.code_dim(), 4);
    Stage2Trainer::new(mappers, generator, critic, backend, prompts, c.train, c.render, 3)
}

#[test]
fn mapper_training_only_moves_mapper_weights() {
    let generator = tiny_generator(1);
    let critic = tiny_critic(2);
    let backend = StubEmbedder::new(0);
    let (g0, d0) = (generator.params().fingerprint(), critic.params().fingerprint());
    let mut t = stage2(&generator, &critic, &backend, PromptLibrary::shipped()).unwrap();
    let m0 = (t.mappers.shape.params().fingerprint(), t.mappers.appearance.params().fingerprint());
    for _ in 0..2 {
        let r = t.step().unwrap();
        let (cs, ca) = (r.clip_shape.unwrap(), r.clip_appearance.unwrap());
        assert!((0.0..=2.0).contains(&cs) && (0.0..=2.0).contains(&ca));
    }
    let mappers = t.into_mappers();
    assert_ne!(mappers.shape.params().fingerprint(), m0.0);
    assert_ne!(mappers.appearance.params().fingerprint(), m0.1);
    assert_eq!(generator.params().fingerprint(), g0);
    assert_eq!(critic.params().fingerprint(), d0);
}

#[test]
fn mapper_training_rejects_empty_prompts_and_wrong_dimensions() {
    let generator = tiny_generator(1);
    let critic = tiny_critic(2);
    let backend = StubEmbedder::new(0);
    let empty = PromptLibrary { appearance: vec![], shape: vec![] };
    assert!(stage2(&generator, &critic, &backend, empty).is_err());

    let c = tiny_run_config();
    let wrong = tiny_mappers(backend.dim() + 1, generator.code_dim(), 4);
    assert!(Stage2Trainer::new(wrong, &generator, &critic, &backend, PromptLibrary::shipped(), c.train, c.render, 0).is_err());
}

fn finetune_config(steps: u64) -> FinetuneConfig {
    FinetuneConfig { steps, lr: 1e-2, render_resolution: 8, ..FinetuneConfig::default() }
}

#[test]
fn appearance_finetune_leaves_density_bit_identical() {
    let codes = sample_codes(6, 3);
    let mut scene = SceneField::new(tiny_generator(7), codes.clone()).unwrap();
    let before = density_probe(&scene.generator, &codes, 6).unwrap();
    let density_before: Vec<String> =
        scene.generator.params().iter().filter(|(n, _)| Generator::is_density_param(n)).map(|(n, t)| format!("{n}{:?}", t.data())).collect();
    let render = RenderConfig { samples_per_ray: 8, ..RenderConfig::default() };
    let report = finetune_appearance(&mut scene, "a blue chair", &StubEmbedder::new(0), &finetune_config(5), &render, None, 1).unwrap();
    assert_eq!(report.trace.len(), 5);
    assert!(report.trained_params.iter().all(|n| !Generator::is_density_param(n)));
    let after = density_probe(&scene.generator, &codes, 6).unwrap();
    assert_eq!(before, after);
    let density_after: Vec<String> =
        scene.generator.params().iter().filter(|(n, _)| Generator::is_density_param(n)).map(|(n, t)| format!("{n}{:?}", t.data())).collect();
    assert_eq!(density_before, density_after);
}

#[test]
fn finetune_rejects_density_parameters_and_unknown_names() {
    let mut scene = SceneField::new(tiny_generator(7), sample_codes(6, 3)).unwrap();
    let render = RenderConfig::default();
    let backend = StubEmbedder::new(0);
    let density = vec!["trunk.0.weight".to_string()];
    let err = finetune_appearance(&mut scene, "a red chair", &backend, &finetune_config(1), &render, Some(&density), 0).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)), "{err}");
    let unknown = vec!["color.9.weight".to_string()];
    let err = finetune_appearance(&mut scene, "a red chair", &backend, &finetune_config(1), &render, Some(&unknown), 0).unwrap_err();
    assert!(matches!(err, Error::NotFound(_)), "{err}");
}

#[test]
fn zero_step_finetune_changes_nothing() {
    let mut scene = SceneField::new(tiny_generator(7), sample_codes(6, 3)).unwrap();
    let fp = scene.generator.params().fingerprint();
    let render = RenderConfig { samples_per_ray: 8, ..RenderConfig::default() };
    let report = finetune_appearance(&mut scene, "a red chair", &StubEmbedder::new(0), &finetune_config(0), &render, None, 0).unwrap();
    assert_eq!(scene.generator.params().fingerprint(), fp);
    assert_eq!(report.initial_distance, report.final_distance);
    assert!(report.trace.is_empty());
}

#[test]
fn pipeline_trains_resumes_and_attaches_mappers() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_toy(data.path(), &tiny_run_config().toy);
    let mut config = tiny_run_config();
    config.train.steps = 2;
    config.train.checkpoint_every = 1;
    let first = train_generator(&config, data.path(), out.path(), None).unwrap();
    assert_eq!(first.steps, 2);
    let resumed = train_generator(&config, data.path(), out.path(), Some(&first.checkpoint)).unwrap();
    assert_eq!(resumed.steps, 4);
    let ck = Checkpoint::load(&out.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.step, 4);
    assert!(ck.critic.is_some() && ck.mappers.is_none());
    let metrics = std::fs::read_to_string(&first.metrics).unwrap();
    assert_eq!(metrics.lines().count(), 4);

    config.train.mapper.steps = 1;
    let mapped_dir = tempfile::tempdir().unwrap();
    let summary = train_mappers(&config, &first.checkpoint, mapped_dir.path()).unwrap();
    let with_mappers = Checkpoint::load(&summary.checkpoint).unwrap();
    assert!(with_mappers.require_mappers().is_ok());
    assert_eq!(with_mappers.mapper_backend.as_deref(), Some(summary.backend.as_str()));
    assert_eq!(with_mappers.generator.params().fingerprint(), ck.generator.params().fingerprint());
}
