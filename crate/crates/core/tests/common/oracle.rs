//! Finite-difference oracles for the analytic gradients.

use nerfedit::autodiff::{Graph, Tensor, Var};
use nerfedit::embed::Embedding;
use nerfedit::nerf::{CameraPose, Generator, RenderConfig};
use nerfedit::train::r1_penalty;
use rand::Rng;

use super::*;

const H: f64 = 1e-6;

struct Scene {
    generator: Generator,
    codes: Codes,
    pose: CameraPose,
    pixels: PixelSet,
    render: RenderConfig,
    weights: Tensor,
}

fn scene(seed: u64) -> Scene {
    let generator = tiny_generator(seed);
    let render = RenderConfig { samples_per_ray: 8, ..RenderConfig::default() };
    let pixels = centre_pixels(16, 3);
    let weights = pixel_weights(pixels.len(), seed + 1);
    Scene { codes: sample_codes(generator.code_dim(), seed + 2), generator, pose: CameraPose::new(0.7, 0.4, 1.5).unwrap(), pixels, render, weights }
}

fn pixel_loss(g: &Graph, rgb: &Var, weights: &Tensor) -> Var {
    rgb.mul(&g.constant(weights.clone())).sum()
}

/// Relative errors of the pixel-loss gradients with respect to `z_s` and `z_a`.
pub fn code_gradients(seed: u64) -> (f64, f64) {
    let s = scene(seed);
    let g = Graph::new();
    let bound = s.generator.params().bind_frozen(&g);
    let z_s = g.leaf(s.codes.shape.to_row());
    let z_a = g.leaf(s.codes.appearance.to_row());
    let rgb = render_on(&g, &s.generator, &bound, &z_s, &z_a, &s.pose, &s.pixels, &s.render);
    let loss = pixel_loss(&g, &rgb, &s.weights);
    let grads = g.grad(&loss, &[&z_s, &z_a], false);
    let eval = |zs: &[f64], za: &[f64]| -> f64 {
        let g = Graph::inference();
        let bound = s.generator.params().bind_frozen(&g);
        let rgb = render_on(&g, &s.generator, &bound, &g.constant(Tensor::row(zs)), &g.constant(Tensor::row(za)), &s.pose, &s.pixels, &s.render);
        pixel_loss(&g, &rgb, &s.weights).item()
    };
    let za0 = s.codes.appearance.values().to_vec();
    let zs0 = s.codes.shape.values().to_vec();
    let mut x = zs0.clone();
    let num_s: Vec<f64> = (0..x.len()).map(|i| central_difference(&mut x, i, H, &mut |v| eval(v, &za0))).collect();
    let mut x = za0.clone();
    let num_a: Vec<f64> = (0..x.len()).map(|i| central_difference(&mut x, i, H, &mut |v| eval(&zs0, v))).collect();
    (relative_error(grads[0].value().data(), &num_s), relative_error(grads[1].value().data(), &num_a))
}

/// Relative error of the pixel-loss gradient with respect to three entries of
/// every generator parameter tensor.
pub fn generator_weight_gradients(seed: u64) -> f64 {
    let mut s = scene(seed);
    let g = Graph::new();
    let bound = s.generator.params().bind_all(&g);
    let z_s = g.constant(s.codes.shape.to_row());
    let z_a = g.constant(s.codes.appearance.to_row());
    let rgb = render_on(&g, &s.generator, &bound, &z_s, &z_a, &s.pose, &s.pixels, &s.render);
    let grads = bound.grads(&pixel_loss(&g, &rgb, &s.weights));
    let mut r = rng(seed + 9);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (t, grad) in grads.iter().enumerate() {
        for _ in 0..3 {
            let i = r.gen_range(0..grad.len());
            analytic.push(grad.data()[i]);
            let orig = s.generator.params().tensors()[t].data()[i];
            let eval = |v: f64, gen: &mut Generator| -> f64 {
                gen.params_mut().tensors_mut()[t].data_mut()[i] = v;
                let g = Graph::inference();
                let bound = gen.params().bind_frozen(&g);
                let rgb = render_on(&g, gen, &bound, &g.constant(s.codes.shape.to_row()), &g.constant(s.codes.appearance.to_row()), &s.pose, &s.pixels, &s.render);
                pixel_loss(&g, &rgb, &s.weights).item()
            };
            let plus = eval(orig + H, &mut s.generator);
            let minus = eval(orig - H, &mut s.generator);
            let centre = eval(orig, &mut s.generator);
            let (fwd, bwd) = ((plus - centre) / H, (centre - minus) / H);
            if (fwd - bwd).abs() > 1e-4 * fwd.abs().max(bwd.abs()).max(1e-6) {
                // A ReLU kink lies inside the stencil.
                analytic.pop();
                continue;
            }
            numeric.push((plus - minus) / (2.0 * H));
        }
    }
    relative_error(&analytic, &numeric)
}

/// Relative error of the gradient of the pixel loss of an appearance edit with
/// respect to the appearance mapper's weights.
pub fn mapper_weight_gradients(seed: u64) -> f64 {
    let s = scene(seed);
    let mut mappers = tiny_mappers(5, s.generator.code_dim(), seed + 3);
    randomize(mappers.appearance.params_mut(), seed + 4, 0.5);
    let mut r = rng(seed + 5);
    let e = Embedding::normalized((0..5).map(|_| r.gen_range(-1.0..1.0)).collect(), nerfedit::embed::Modality::Text, "test").unwrap();
    let loss_with = |mapper: &nerfedit::mappers::Mapper, g: &Graph, bound: &nerfedit::nn::Bound| -> Var {
        let gen_bound = s.generator.params().bind_frozen(g);
        let delta = mapper.forward(bound, &g.constant(e.to_row()));
        let z_a = g.constant(s.codes.appearance.to_row()).add(&delta);
        let rgb = render_on(g, &s.generator, &gen_bound, &g.constant(s.codes.shape.to_row()), &z_a, &s.pose, &s.pixels, &s.render);
        pixel_loss(g, &rgb, &s.weights)
    };
    let g = Graph::new();
    let bound = mappers.appearance.params().bind_all(&g);
    let grads = bound.grads(&loss_with(&mappers.appearance, &g, &bound));
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (t, grad) in grads.iter().enumerate() {
        for _ in 0..4 {
            let i = r.gen_range(0..grad.len());
            analytic.push(grad.data()[i]);
            let orig = mappers.appearance.params().tensors()[t].data()[i];
            let mut eval = |v: f64| -> f64 {
                mappers.appearance.params_mut().tensors_mut()[t].data_mut()[i] = v;
                let g = Graph::inference();
                let bound = mappers.appearance.params().bind_frozen(&g);
                loss_with(&mappers.appearance, &g, &bound).item()
            };
            let plus = eval(orig + H);
            let minus = eval(orig - H);
            eval(orig);
            numeric.push((plus - minus) / (2.0 * H));
        }
    }
    relative_error(&analytic, &numeric)
}

/// Relative errors of (a) the R1 value against a finite-difference input
/// gradient and (b) its weight gradient, obtained by double backpropagation,
/// against finite differences of the penalty.
pub fn r1_gradients(seed: u64) -> (f64, f64) {
    let mut critic = tiny_critic(seed);
    randomize(critic.params_mut(), seed + 1, 0.4);
    let batch = 2;
    let mut r = rng(seed + 2);
    let real = Tensor::from_fn(batch * 64, 3, |_, _| r.gen_range(0.0..1.0));

    let g = Graph::new();
    let bound = critic.params().bind_all(&g);
    let input = g.leaf(real.clone());
    let penalty = r1_penalty(&critic, &bound, &input, batch).unwrap();
    let weight_grads = bound.grads(&penalty);

    let score_sum = |x: &[f64]| -> f64 {
        let g = Graph::inference();
        let bound = critic.params().bind_frozen(&g);
        critic.score(&bound, &g.constant(Tensor::from_vec(batch * 64, 3, x.to_vec())), batch).unwrap().sum().item()
    };
    let mut x = real.data().to_vec();
    let input_grad: Vec<f64> = (0..x.len()).map(|i| central_difference(&mut x, i, 1e-5, &mut |v| score_sum(v))).collect();
    let numeric_penalty = input_grad.iter().map(|v| v * v).sum::<f64>() / batch as f64;
    let value_err = (penalty.item() - numeric_penalty).abs() / numeric_penalty.abs().max(1e-14);

    let penalty_at = |critic: &Critic| -> f64 {
        let g = Graph::new();
        let bound = critic.params().bind_frozen(&g);
        r1_penalty(critic, &bound, &g.leaf(real.clone()), batch).unwrap().item()
    };
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (t, grad) in weight_grads.iter().enumerate() {
        for _ in 0..4 {
            let i = r.gen_range(0..grad.len());
            analytic.push(grad.data()[i]);
            let orig = critic.params().tensors()[t].data()[i];
            critic.params_mut().tensors_mut()[t].data_mut()[i] = orig + H;
            let plus = penalty_at(&critic);
            critic.params_mut().tensors_mut()[t].data_mut()[i] = orig - H;
            let minus = penalty_at(&critic);
            critic.params_mut().tensors_mut()[t].data_mut()[i] = orig;
            numeric.push((plus - minus) / (2.0 * H));
        }
    }
    (value_err, relative_error(&analytic, &numeric))
}
