//! Timestep/layer conditioner emitting the six modulation scalars.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModulationParams, ToyBlockConfig};
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, silu, silu_grad, softplus, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiWeights {
    /// `hidden × 2F`.
    pub w_t: Tensor,
    pub b_t: Tensor,
    /// Per-layer embedding, `L × hidden`.
    pub embed: Tensor,
    /// `6 × hidden`.
    pub w_head: Tensor,
    pub b_head: Tensor,
}

impl PsiWeights {
    pub fn zeros(cfg: &ToyBlockConfig) -> Self {
        let m = cfg.psi_hidden;
        Self {
            w_t: Tensor::zeros(&[m, 2 * cfg.psi_freqs]),
            b_t: Tensor::zeros(&[m]),
            embed: Tensor::zeros(&[cfg.layers, m]),
            w_head: Tensor::zeros(&[6, m]),
            b_head: Tensor::zeros(&[6]),
        }
    }

    pub fn seeded(cfg: &ToyBlockConfig, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |shape: &[usize]| {
            let bound = scale / (*shape.last().unwrap() as f64).sqrt();
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()).expect("finite")
        };
        let m = cfg.psi_hidden;
        Self {
            w_t: u(&[m, 2 * cfg.psi_freqs]),
            b_t: u(&[m]),
            embed: u(&[cfg.layers, m]),
            w_head: u(&[6, m]),
            b_head: u(&[6]),
        }
    }

    fn layers(&self) -> usize {
        self.embed.shape()[0]
    }

    fn hidden(&self) -> usize {
        self.b_t.len()
    }
}

/// `[sin(π 2^k t)]_k ∥ [cos(π 2^k t)]_k`.
pub fn sinusoid(t: f64, freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * freqs);
    for k in 0..freqs {
        out.push((std::f64::consts::PI * (1u64 << k) as f64 * t).sin());
    }
    for k in 0..freqs {
        out.push((std::f64::consts::PI * (1u64 << k) as f64 * t).cos());
    }
    out
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct PsiCache {
    pub feats: Vec<f64>,
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub heads: [f64; 6],
    pub layer: usize,
}

pub(crate) fn psi_forward(t: f64, layer: usize, w: &PsiWeights) -> Result<(ModulationParams, PsiCache)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain {
            what: "timestep",
            index: 0,
            value: t,
        });
    }
    if layer >= w.layers() {
        return Err(Error::Index {
            what: "layer",
            index: layer,
            len: w.layers(),
        });
    }
    let m = w.hidden();
    let feats = sinusoid(t, w.w_t.shape()[1] / 2);
    let pre: Vec<f64> = (0..m)
        .map(|i| {
            let row = w.w_t.row(i);
            row.iter().zip(&feats).map(|(a, b)| a * b).sum::<f64>() + w.b_t.data()[i] + w.embed.at2(layer, i)
        })
        .collect();
    let hidden: Vec<f64> = pre.iter().map(|&v| silu(v)).collect();
    let mut heads = [0.0; 6];
    for (j, h) in heads.iter_mut().enumerate() {
        *h = w.w_head.row(j).iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>() + w.b_head.data()[j];
    }
    let params = ModulationParams {
        alpha_pga: heads[0],
        beta_pga: heads[1],
        alpha_pcm: heads[2],
        beta_pcm: heads[3],
        n_spec: softplus(heads[4]),
        lambda: softplus(heads[5]),
    };
    Ok((
        params,
        PsiCache {
            feats,
            pre,
            hidden,
            heads,
            layer,
        },
    ))
}

/// Modulation scalars for timestep `t ∈ [0, 1]` and block `layer`.
pub fn psi(t: f64, layer: usize, weights: &PsiWeights) -> Result<ModulationParams> {
    psi_forward(t, layer, weights).map(|(p, _)| p)
}

/// Accumulates gradients of the conditioner weights given the gradient with
/// respect to the six output scalars.
pub(crate) fn psi_backward(cache: &PsiCache, w: &PsiWeights, d_out: [f64; 6], grads: &mut PsiWeights) {
    let mut d_heads = d_out;
    d_heads[4] *= sigmoid(cache.heads[4]);
    d_heads[5] *= sigmoid(cache.heads[5]);
    let m = cache.hidden.len();
    let mut d_hidden = vec![0.0; m];
    for (j, &dh) in d_heads.iter().enumerate() {
        grads.b_head.data_mut()[j] += dh;
        for i in 0..m {
            grads.w_head.data_mut()[j * m + i] += dh * cache.hidden[i];
            d_hidden[i] += dh * w.w_head.at2(j, i);
        }
    }
    let nf = cache.feats.len();
    for i in 0..m {
        let dp = d_hidden[i] * silu_grad(cache.pre[i]);
        grads.b_t.data_mut()[i] += dp;
        grads.embed.data_mut()[cache.layer * m + i] += dp;
        for k in 0..nf {
            grads.w_t.data_mut()[i * nf + k] += dp * cache.feats[k];
        }
    }
}
