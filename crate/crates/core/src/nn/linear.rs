use rand::Rng;

use super::params::{normal_tensor, Bound, ParamId, ParamSet};
use crate::autodiff::{Tensor, Var};

/// Weight initialisation for a dense layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// He-normal, for layers followed by a rectifier.
    He,
    /// Normal with the given standard deviation.
    Normal(f64),
    Zero,
}

/// `y = x W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, init: Init, rng: &mut impl Rng) -> Self {
        let weight = match init {
            Init::He => normal_tensor(rng, fan_in, fan_out, (2.0 / fan_in as f64).sqrt()),
            Init::Normal(std) => normal_tensor(rng, fan_in, fan_out, std),
            Init::Zero => Tensor::zeros(fan_in, fan_out),
        };
        let weight = params.push(format!("{name}.weight"), weight);
        let bias = params.push(format!("{name}.bias"), Tensor::zeros(1, fan_out));
        Linear { weight, bias, fan_in, fan_out }
    }

    /// Look up an existing layer by name (used when loading checkpoints).
    pub fn find(params: &ParamSet, name: &str) -> Option<Self> {
        let weight = params.index_of(&format!("{name}.weight"))?;
        let bias = params.index_of(&format!("{name}.bias"))?;
        let w = params.get(weight);
        let b = params.get(bias);
        if b.shape() != (1, w.cols()) {
            return None;
        }
        Some(Linear { weight, bias, fan_in: w.rows(), fan_out: w.cols() })
    }

    pub fn forward(&self, bound: &Bound, x: &Var) -> Var {
        x.matmul(&bound[self.weight]).add(&bound[self.bias])
    }

    /// `x W` without the bias.
    pub fn project(&self, bound: &Bound, x: &Var) -> Var {
        x.matmul(&bound[self.weight])
    }
}

/// A dense layer whose input is split into named blocks, each with its own
/// weight matrix. Equivalent to a single layer over the concatenated input,
/// but lets per-object blocks (latent codes) be projected once and broadcast.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitLinear {
    pub blocks: Vec<ParamId>,
    pub bias: ParamId,
    pub fan_out: usize,
}

impl SplitLinear {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        blocks: &[(&str, usize)],
        fan_out: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in: usize = blocks.iter().map(|b| b.1).sum();
        let ids = blocks
            .iter()
            .map(|(block, width)| {
                let w = match init {
                    Init::He => normal_tensor(rng, *width, fan_out, (2.0 / fan_in as f64).sqrt()),
                    Init::Normal(std) => normal_tensor(rng, *width, fan_out, std),
                    Init::Zero => Tensor::zeros(*width, fan_out),
                };
                params.push(format!("{name}.weight_{block}"), w)
            })
            .collect();
        let bias = params.push(format!("{name}.bias"), Tensor::zeros(1, fan_out));
        SplitLinear { blocks: ids, bias, fan_out }
    }

    pub fn find(params: &ParamSet, name: &str, blocks: &[&str]) -> Option<Self> {
        let ids: Option<Vec<ParamId>> = blocks.iter().map(|b| params.index_of(&format!("{name}.weight_{b}"))).collect();
        let ids = ids?;
        let bias = params.index_of(&format!("{name}.bias"))?;
        let fan_out = params.get(bias).cols();
        if ids.iter().any(|&id| params.get(id).cols() != fan_out) {
            return None;
        }
        Some(SplitLinear { blocks: ids, bias, fan_out })
    }

    pub fn block_width(&self, params: &ParamSet, block: usize) -> usize {
        params.get(self.blocks[block]).rows()
    }

    /// Sum of `input_i W_i` plus bias; inputs broadcast along rows.
    pub fn forward(&self, bound: &Bound, inputs: &[&Var]) -> Var {
        assert_eq!(inputs.len(), self.blocks.len(), "split linear block count");
        let mut acc: Option<Var> = None;
        // Project narrow (per-object) blocks first so broadcasting happens once.
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.sort_by_key(|&i| inputs[i].rows());
        for i in order {
            let term = inputs[i].matmul(&bound[self.blocks[i]]);
            acc = Some(match acc {
                None => term.add(&bound[self.bias]),
                Some(a) => term.add(&a),
            });
        }
        acc.expect("at least one block")
    }
}
