use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Number of frequency bands for positions and view directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodingConfig {
    pub m_pos: usize,
    pub m_view: usize,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig { m_pos: 8, m_view: 4 }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, m) in [("encoding.m_pos", self.m_pos), ("encoding.m_view", self.m_view)] {
            if m == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
            if m > 26 {
                return Err(Error::config(key, "must be at most 26"));
            }
        }
        Ok(())
    }

    /// Width of the encoded 3-D position.
    pub fn pos_width(&self) -> usize {
        3 * 2 * self.m_pos
    }

    /// Width of the encoded 3-D view direction.
    pub fn view_width(&self) -> usize {
        3 * 2 * self.m_view
    }
}

/// Angular frequency of entry `k`: `2^k * pi`.
pub fn band_frequency(k: usize) -> f64 {
    (1u64 << k) as f64 * PI
}

/// Encode every coordinate of `p` into `2m` values; entry `k` is
/// `sin(2^k pi p)` for even `k` and `cos(2^k pi p)` for odd `k`.
/// Output layout is coordinate-major: index `c * 2m + k`.
pub fn positional_encode(p: &[f64], m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::invalid("band count must be at least 1"));
    }
    if let Some(bad) = p.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite coordinate {bad}")));
    }
    let mut out = Vec::with_capacity(p.len() * 2 * m);
    for &x in p {
        for k in 0..2 * m {
            let a = band_frequency(k) * x;
            out.push(if k % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Ok(out)
}

/// `gamma*_k = gamma_k + tanh(delta_k)`.
pub fn deformed_encode(base: &[f64], delta: &[f64]) -> Result<Vec<f64>> {
    if base.len() != delta.len() {
        return Err(Error::shape(format!("encoding has {} entries, displacement has {}", base.len(), delta.len())));
    }
    Ok(base.iter().zip(delta).map(|(g, d)| g + d.tanh()).collect())
}

/// Differentiable positional encoding of a `[n, dims]` input.
///
/// Computed as `sin(p F + phase)` with a block-diagonal frequency matrix and a
/// quarter-period phase on the odd (cosine) entries.
#[derive(Debug, Clone)]
pub struct PositionalEncoder {
    m: usize,
    dims: usize,
    freq: Tensor,
    phase: Tensor,
}

impl PositionalEncoder {
    pub fn new(dims: usize, m: usize) -> Self {
        let width = dims * 2 * m;
        let mut freq = Tensor::zeros(dims, width);
        let mut phase = Tensor::zeros(1, width);
        for c in 0..dims {
            for k in 0..2 * m {
                freq.set(c, c * 2 * m + k, band_frequency(k));
                if k % 2 == 1 {
                    phase.set(0, c * 2 * m + k, FRAC_PI_2);
                }
            }
        }
        PositionalEncoder { m, dims, freq, phase }
    }

    pub fn bands(&self) -> usize {
        self.m
    }

    pub fn width(&self) -> usize {
        self.dims * 2 * self.m
    }

    pub fn encode(&self, graph: &Graph, p: &Var) -> Var {
        assert_eq!(p.cols(), self.dims, "encoder input width");
        p.matmul(&graph.constant(self.freq.clone())).add(&graph.constant(self.phase.clone())).sin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_gives_alternating_zero_one() {
        assert_eq!(positional_encode(&[0.0], 2).unwrap(), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn half_input_with_one_band() {
        let e = positional_encode(&[0.5], 1).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-15);
        assert!((e[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn length_is_two_m_per_coordinate() {
        assert_eq!(positional_encode(&[0.3], 8).unwrap().len(), 16);
        assert_eq!(positional_encode(&[0.3, 0.1, -0.2], 8).unwrap().len(), 48);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(positional_encode(&[f64::NAN], 2).is_err());
        assert!(positional_encode(&[f64::INFINITY], 2).is_err());
    }

    #[test]
    fn deformed_encode_identity_and_saturation() {
        let base = positional_encode(&[0.2, -0.7], 3).unwrap();
        assert_eq!(deformed_encode(&base, &vec![0.0; base.len()]).unwrap(), base);
        let sat = deformed_encode(&base, &vec![1e6; base.len()]).unwrap();
        for (s, b) in sat.iter().zip(&base) {
            assert_eq!(*s, b + 1.0);
        }
        assert!(deformed_encode(&base, &[0.0]).is_err());
    }

    #[test]
    fn graph_encoder_matches_direct_formula() {
        let enc = PositionalEncoder::new(3, 4);
        let pts = [0.1, -0.4, 0.77, 0.0, 0.5, -1.0];
        let g = Graph::inference();
        let out = enc.encode(&g, &g.constant(Tensor::from_vec(2, 3, pts.to_vec())));
        for r in 0..2 {
            let direct = positional_encode(&pts[r * 3..r * 3 + 3], 4).unwrap();
            for (a, b) in out.value().row_slice(r).iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}
