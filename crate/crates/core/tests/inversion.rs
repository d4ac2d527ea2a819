mod common;

use common::*;
use nerfedit::embed::StubEmbedder;
use nerfedit::invert::{invert, invert_with, loss_appearance, loss_pose, loss_shape, InversionConfig, InversionProblem, Phase};
use nerfedit::nerf::{pose_grid, render_image, CameraPose, Code, Codes, RenderConfig};
use nerfedit::Error;

fn render() -> RenderConfig {
    RenderConfig { samples_per_ray: 8, ..RenderConfig::default() }
}

fn small_codes(seed: u64, scale: f64) -> Codes {
    let c = sample_codes(6, seed);
    let s = |c: &Code| Code::new(c.values().iter().map(|v| v * scale).collect()).unwrap();
    Codes { shape: s(&c.shape), appearance: s(&c.appearance) }
}

fn quick_config() -> InversionConfig {
    InversionConfig {
        lr: 0.05,
        lr_decay_every: 1000,
        rounds: 2,
        pose_steps: 3,
        shape_steps: 6,
        appearance_steps: 6,
        grid_azimuths: 4,
        grid_elevations: 2,
        ..InversionConfig::default()
    }
}

/// Finite-difference check of one loss, skipping stencils that straddle a kink.
fn check_gradient(mut eval: impl FnMut(&[f64]) -> (f64, Vec<f64>), x0: &[f64]) -> f64 {
    let h = 1e-6;
    let (_, analytic) = eval(x0);
    let mut a = Vec::new();
    let mut n = Vec::new();
    for i in 0..x0.len() {
        let mut x = x0.to_vec();
        let centre = eval(&x).0;
        x[i] = x0[i] + h;
        let plus = eval(&x).0;
        x[i] = x0[i] - h;
        let minus = eval(&x).0;
        let (fwd, bwd) = ((plus - centre) / h, (centre - minus) / h);
        if (fwd - bwd).abs() > 1e-4 * fwd.abs().max(bwd.abs()).max(1e-6) {
            continue;
        }
        a.push(analytic[i]);
        n.push((plus - minus) / (2.0 * h));
    }
    assert!(a.len() * 2 >= x0.len(), "too many kinks");
    relative_error(&a, &n)
}

#[test]
fn phase_losses_have_correct_gradients() {
    let g = tiny_generator(11);
    let r = render();
    let backend = StubEmbedder::new(0);
    let target = render_image(&g, &small_codes(1, 0.8), &CameraPose::new(0.3, 0.4, 1.5).unwrap(), 8, &r).unwrap();
    let p = InversionProblem::new(&g, &r, &backend, &target, 1).unwrap();
    let codes = small_codes(2, 0.5);
    let pose = CameraPose::new(0.5, 0.6, 1.5).unwrap();
    let noise = sample_codes(6, 3).shape;

    let err = check_gradient(
        |x| {
            let e = loss_pose(&p, &CameraPose::new(x[0], x[1], 1.5).unwrap(), &codes, 0.1).unwrap();
            (e.value, e.gradient)
        },
        &[pose.azimuth, pose.elevation],
    );
    assert!(err < 1e-3, "pose {err}");

    let err = check_gradient(
        |x| {
            let c = Codes { shape: Code::new(x.to_vec()).unwrap(), appearance: codes.appearance.clone() };
            let e = loss_shape(&p, &pose, &c, &noise, 0.4, 0.2).unwrap();
            (e.value, e.gradient)
        },
        codes.shape.values(),
    );
    assert!(err < 1e-3, "shape {err}");

    let err = check_gradient(
        |x| {
            let c = Codes { shape: codes.shape.clone(), appearance: Code::new(x.to_vec()).unwrap() };
            let e = loss_appearance(&p, &pose, &c, &noise, 0.4, 0.2).unwrap();
            (e.value, e.gradient)
        },
        codes.appearance.values(),
    );
    assert!(err < 1e-3, "appearance {err}");
}

#[test]
fn noise_with_zero_weight_matches_the_noiseless_objective() {
    let g = tiny_generator(11);
    let r = render();
    let backend = StubEmbedder::new(0);
    let target = render_image(&g, &small_codes(1, 0.8), &CameraPose::new(0.3, 0.4, 1.5).unwrap(), 8, &r).unwrap();
    let p = InversionProblem::new(&g, &r, &backend, &target, 1).unwrap();
    let codes = small_codes(2, 0.5);
    let pose = CameraPose::new(0.5, 0.6, 1.5).unwrap();
    let noise = sample_codes(6, 3).shape;
    let noiseless = p.evaluate(Phase::Shape, &pose, &codes, None, 0.2).unwrap();
    assert_eq!(loss_shape(&p, &pose, &codes, &noise, 0.0, 0.2).unwrap(), noiseless);
    assert_eq!(loss_shape(&p, &pose, &codes, &Code::zeros(6), 1.0, 0.2).unwrap(), noiseless);
    assert_ne!(loss_shape(&p, &pose, &codes, &noise, 1.0, 0.2).unwrap().value, noiseless.value);
}

#[test]
fn inversion_reduces_error_and_best_is_monotone() {
    let g = tiny_generator(12);
    let r = render();
    let backend = StubEmbedder::new(0);
    let truth = small_codes(4, 0.3);
    let target = render_image(&g, &truth, &CameraPose::new(0.9, 0.5, 1.5).unwrap(), 8, &r).unwrap();
    let cfg = quick_config();
    let mut states = Vec::new();
    let report = invert_with(&g, &r, &backend, &target, &cfg, |s| states.push(s.clone())).unwrap();
    assert_eq!(report.steps, cfg.total_steps());
    assert_eq!(states.len(), cfg.rounds * 3);
    assert!(states.windows(2).all(|w| w[1].best_error <= w[0].best_error));
    assert!(report.trace.windows(2).all(|w| w[1].best_error <= w[0].best_error));

    let problem = InversionProblem::new(&g, &r, &backend, &target, 1).unwrap();
    let start = Codes::zeros(6);
    let grid_best = pose_grid(&r.camera, cfg.grid_azimuths, cfg.grid_elevations)
        .iter()
        .map(|p| problem.reconstruction_error(p, &start).unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!(report.error < grid_best, "{} vs initial {grid_best}", report.error);
    assert_eq!(report.error, problem.reconstruction_error(&report.pose, &report.codes).unwrap());
    let psnr = report.reconstruction.psnr(&target).unwrap();
    assert_eq!(psnr, report.psnr);
    assert!(report.pose.elevation >= r.camera.min_elevation && report.pose.elevation <= r.camera.max_elevation);
}

#[test]
fn inversion_is_deterministic_for_a_seed() {
    let g = tiny_generator(12);
    let r = render();
    let backend = StubEmbedder::new(0);
    let target = render_image(&g, &small_codes(4, 0.3), &CameraPose::new(0.9, 0.5, 1.5).unwrap(), 8, &r).unwrap();
    let a = invert(&g, &r, &backend, &target, &quick_config()).unwrap();
    let b = invert(&g, &r, &backend, &target, &quick_config()).unwrap();
    assert_eq!(a.codes, b.codes);
    assert_eq!(a.pose, b.pose);
}

#[test]
fn runaway_loss_is_reported_as_divergence() {
    let g = tiny_generator(12);
    let r = render();
    let backend = StubEmbedder::new(0);
    let pose = pose_grid(&r.camera, 1, 1)[0];
    // The target is reproduced exactly by the starting point, so any step raises the loss.
    let target = render_image(&g, &Codes::zeros(6), &pose, 8, &r).unwrap();
    let cfg = InversionConfig {
        lr: 0.5,
        grid_azimuths: 1,
        grid_elevations: 1,
        lambda_v: 0.0,
        lambda_s: 0.0,
        lambda_a: 0.0,
        divergence_patience: 3,
        rounds: 1,
        pose_steps: 5,
        shape_steps: 5,
        appearance_steps: 5,
        ..InversionConfig::default()
    };
    let err = invert(&g, &r, &backend, &target, &cfg).unwrap_err();
    assert!(matches!(err, Error::Diverged(_)), "{err}");
}

#[test]
fn invalid_targets_and_configs_are_rejected() {
    let g = tiny_generator(12);
    let r = render();
    let backend = StubEmbedder::new(0);
    let wide = nerfedit::raster::Image::filled(8, 4, [1.0; 3]);
    assert!(invert(&g, &r, &backend, &wide, &quick_config()).is_err());
    let square = nerfedit::raster::Image::filled(8, 8, [1.0; 3]);
    let bad = InversionConfig { divergence_factor: 1.0, ..quick_config() };
    assert!(matches!(invert(&g, &r, &backend, &square, &bad), Err(Error::Config { .. })));
    let bad = InversionConfig { pixel_stride: 9, ..quick_config() };
    assert!(invert(&g, &r, &backend, &square, &bad).is_err());
}
