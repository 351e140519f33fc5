//! Forward and reverse-mode passes of the adapted transformer block.
//!
//! One block computes
//!
//! ```text
//! X     = LN(z)
//! MSA   = Attn(X W_Q, X W_K, X (W_V + R)) W_O
//! U     = γ ⊙ X + ζ
//! z_res = z + MSA + MLP(U)
//! z_out = z_res + λ (T_phys W_pᵀ + C_perc W_cᵀ)
//! ```
//!
//! where `R` is the gated low-rank value update and `(γ, ζ)` come from the
//! perceptual tokens. With a null [`AdapterState`] every adapter term
//! vanishes and the result equals [`vanilla_block_forward`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::psi::{psi_backward, psi_forward, PsiCache};
use super::{AdapterState, Backbone, ModulationParams, ToyBlockConfig, LN_EPS};
use crate::error::{dim, Error, Result};
use crate::features::{PhysFeatures, SpectralDescriptor};
use crate::tensor::{matmul, matmul_nt, matmul_tn, mean_var, sigmoid, silu, silu_grad, softmax_rows, softplus, Tensor};

/// Conditioning inputs shared by every block of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockInputs {
    /// Pooled physical descriptor per token, `N × C`.
    pub phys_tokens: Tensor,
    /// `[mean-pooled t_phys ∥ g]`, length `C + d_g`.
    pub phys_feat: Vec<f64>,
    pub r_spec: Vec<f64>,
    /// Perceptual tokens, `N_p × d_p`.
    pub t_perc: Tensor,
}

impl BlockInputs {
    pub fn new(cfg: &ToyBlockConfig, features: &PhysFeatures, spec: &SpectralDescriptor, t_perc: Tensor) -> Result<Self> {
        let shape = features.t_phys.shape();
        if shape.len() != 3 || shape[2] != cfg.conv_channels {
            return Err(dim("BlockInputs", format!("t_phys {shape:?} vs {} channels", cfg.conv_channels)));
        }
        let (h, w, c) = (shape[0], shape[1], shape[2]);
        let phys_tokens = pool_tokens(features.t_phys.data(), h, w, c, cfg.token_grid());
        let mut phys_feat = vec![0.0; c];
        for px in features.t_phys.data().chunks_exact(c) {
            for (a, v) in phys_feat.iter_mut().zip(px) {
                *a += v;
            }
        }
        for a in &mut phys_feat {
            *a /= (h * w) as f64;
        }
        phys_feat.extend_from_slice(&features.g);
        let inputs = Self {
            phys_tokens,
            phys_feat,
            r_spec: spec.r.clone(),
            t_perc,
        };
        inputs.validate(cfg)?;
        Ok(inputs)
    }

    pub fn validate(&self, cfg: &ToyBlockConfig) -> Result<()> {
        if self.phys_tokens.shape() != [cfg.n_tokens, cfg.conv_channels] {
            return Err(dim("BlockInputs", format!("phys tokens {:?}", self.phys_tokens.shape())));
        }
        if self.phys_feat.len() != cfg.conv_channels + cfg.d_g {
            return Err(dim(
                "BlockInputs",
                format!("phys feature length {} vs {}", self.phys_feat.len(), cfg.conv_channels + cfg.d_g),
            ));
        }
        if self.r_spec.len() != cfg.bands {
            return Err(dim("BlockInputs", format!("{} bands vs {}", self.r_spec.len(), cfg.bands)));
        }
        let s = self.t_perc.shape();
        if s.len() != 2 || s[1] != cfg.d_p || s[0] == 0 {
            return Err(dim("BlockInputs", format!("perceptual tokens {s:?} vs width {}", cfg.d_p)));
        }
        Ok(())
    }
}

/// Adaptive average pooling of an `h × w × c` map onto a token grid.
fn pool_tokens(data: &[f64], h: usize, w: usize, c: usize, (gh, gw): (usize, usize)) -> Tensor {
    let mut out = Tensor::zeros(&[gh * gw, c]);
    for gi in 0..gh {
        let (y0, y1) = (gi * h / gh, ((gi + 1) * h).div_ceil(gh).max(gi * h / gh + 1));
        for gj in 0..gw {
            let (x0, x1) = (gj * w / gw, ((gj + 1) * w).div_ceil(gw).max(gj * w / gw + 1));
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            let dst = &mut out.data_mut()[(gi * gw + gj) * c..(gi * gw + gj + 1) * c];
            for y in y0..y1.min(h) {
                for x in x0..x1.min(w) {
                    for (o, v) in dst.iter_mut().zip(&data[(y * w + x) * c..(y * w + x + 1) * c]) {
                        *o += v;
                    }
                }
            }
            for o in dst.iter_mut() {
                *o /= count;
            }
        }
    }
    out
}

fn add_row_bias(t: &mut Tensor, b: &Tensor) {
    let n = b.len();
    for row in t.data_mut().chunks_mut(n) {
        for (v, bb) in row.iter_mut().zip(b.data()) {
            *v += bb;
        }
    }
}

fn col_sums(t: &Tensor) -> Vec<f64> {
    let (_, c) = t.dims2().expect("matrix");
    let mut s = vec![0.0; c];
    for row in t.data().chunks(c) {
        for (a, v) in s.iter_mut().zip(row) {
            *a += v;
        }
    }
    s
}

fn add_into(dst: &mut Tensor, src: &[f64]) {
    for (a, b) in dst.data_mut().iter_mut().zip(src) {
        *a += b;
    }
}

/// Row-wise layer norm returning normalized rows and `1/σ` per row.
fn ln_forward(x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let (n, d) = x.dims2()?;
    let mut out = x.data().to_vec();
    let mut inv = Vec::with_capacity(n);
    for row in out.chunks_mut(d) {
        let (mean, var) = mean_var(row);
        let s = 1.0 / (var + LN_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * s;
        }
        inv.push(s);
    }
    Ok((Tensor::new(vec![n, d], out)?, inv))
}

fn ln_backward(xhat: &Tensor, inv: &[f64], dxhat: &Tensor) -> Tensor {
    let (_, d) = xhat.dims2().expect("matrix");
    let mut out = Tensor::zeros(xhat.shape());
    for (r, ((o, xh), dh)) in out
        .data_mut()
        .chunks_mut(d)
        .zip(xhat.data().chunks(d))
        .zip(dxhat.data().chunks(d))
        .enumerate()
    {
        let m1 = dh.iter().sum::<f64>() / d as f64;
        let m2 = dh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for i in 0..d {
            o[i] = inv[r] * (dh[i] - m1 - xh[i] * m2);
        }
    }
    out
}

fn head_slice(t: &Tensor, head: usize, dh: usize) -> Tensor {
    let (n, d) = t.dims2().expect("matrix");
    let mut out = Vec::with_capacity(n * dh);
    for row in t.data().chunks(d) {
        out.extend_from_slice(&row[head * dh..(head + 1) * dh]);
    }
    Tensor::new(vec![n, dh], out).expect("finite slice")
}

fn write_head_slice(dst: &mut Tensor, src: &Tensor, head: usize, dh: usize) {
    let d = dst.shape()[1];
    for (row, s) in dst.data_mut().chunks_mut(d).zip(src.data().chunks(dh)) {
        row[head * dh..(head + 1) * dh].copy_from_slice(s);
    }
}

struct AttnOut {
    out: Tensor,
    probs: Vec<Tensor>,
}

fn attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<AttnOut> {
    let (n, d) = q.dims2()?;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Tensor::zeros(&[n, d]);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (head_slice(q, h, dh), head_slice(k, h, dh), head_slice(v, h, dh));
        let p = softmax_rows(&matmul_nt(&qh, &kh)?.scale(scale))?;
        write_head_slice(&mut out, &matmul(&p, &vh)?, h, dh);
        probs.push(p);
    }
    Ok(AttnOut { out, probs })
}

/// The unadapted block `z + MSA(LN z) + MLP(LN z)`.
pub fn vanilla_block_forward(cfg: &ToyBlockConfig, z: &Tensor, bb: &Backbone) -> Result<Tensor> {
    cfg.validate()?;
    check_tokens(cfg, z)?;
    let (x, _) = ln_forward(z)?;
    let att = attention(&matmul(&x, &bb.w_q)?, &matmul(&x, &bb.w_k)?, &matmul(&x, &bb.w_v)?, cfg.heads)?;
    let msa = matmul(&att.out, &bb.w_o)?;
    let mut pre = matmul(&x, &bb.w1)?;
    add_row_bias(&mut pre, &bb.b1);
    let mut mlp = matmul(&pre.map(silu), &bb.w2)?;
    add_row_bias(&mut mlp, &bb.b2);
    z.add(&msa)?.add(&mlp)
}

fn check_tokens(cfg: &ToyBlockConfig, z: &Tensor) -> Result<()> {
    if z.shape() != [cfg.n_tokens, cfg.d] {
        return Err(dim("toy block", format!("tokens {:?}, expected [{}, {}]", z.shape(), cfg.n_tokens, cfg.d)));
    }
    Ok(())
}

struct PgaCache {
    gate: Vec<f64>,
    gf_pre: Vec<f64>,
    gf: Vec<f64>,
    ab: Tensor,
    m: Tensor,
    colscale: Vec<f64>,
}

fn pga_forward(cfg: &ToyBlockConfig, s: &AdapterState, inp: &BlockInputs, md: &ModulationParams) -> Result<(Tensor, PgaCache)> {
    let d = cfg.d;
    let feat = &inp.phys_feat;
    if s.p_v.shape() != [d, feat.len()] || s.w_r.shape() != [cfg.heads, inp.r_spec.len()] {
        return Err(dim("pga_residual", "gate or spectral projection does not match inputs"));
    }
    let gate: Vec<f64> = (0..d)
        .map(|i| sigmoid(s.p_v.row(i).iter().zip(feat).map(|(a, b)| a * b).sum::<f64>() + s.p_bias.data()[i]))
        .collect();
    let gf_pre: Vec<f64> = (0..cfg.heads)
        .map(|h| s.w_r.row(h).iter().zip(&inp.r_spec).map(|(a, b)| a * b).sum::<f64>() + s.r_bias.data()[h])
        .collect();
    let gf: Vec<f64> = gf_pre.iter().map(|&v| softplus(v)).collect();
    let ab = matmul(&s.a_v, &s.b_v)?;
    let mut m = ab.scale(md.alpha_pga);
    for i in 0..d {
        m.data_mut()[i * d + i] += md.beta_pga;
    }
    let dh = cfg.head_dim();
    let colscale: Vec<f64> = (0..d).map(|j| gate[j] * (1.0 + md.n_spec * gf[j / dh])).collect();
    let mut r = m.clone();
    for row in r.data_mut().chunks_mut(d) {
        for (v, c) in row.iter_mut().zip(&colscale) {
            *v *= c;
        }
    }
    Ok((
        r,
        PgaCache {
            gate,
            gf_pre,
            gf,
            ab,
            m,
            colscale,
        },
    ))
}

/// Gated low-rank value-projection update `R` (`d × d`).
pub fn pga_residual(cfg: &ToyBlockConfig, state: &AdapterState, inputs: &BlockInputs, md: &ModulationParams) -> Result<Tensor> {
    cfg.validate()?;
    inputs.validate(cfg)?;
    pga_forward(cfg, state, inputs, md).map(|(r, _)| r)
}

/// Connector output resampled to `n` tokens, plus the source row of each.
fn connector(s: &AdapterState, t_perc: &Tensor, n: usize) -> Result<(Tensor, Vec<usize>)> {
    let mut raw = matmul_nt(t_perc, &s.conn_w)?;
    add_row_bias(&mut raw, &s.conn_b);
    let (np, d) = raw.dims2()?;
    let idx: Vec<usize> = (0..n).map(|i| i * np / n).collect();
    let mut out = Vec::with_capacity(n * d);
    for &k in &idx {
        out.extend_from_slice(raw.row(k));
    }
    Ok((Tensor::new(vec![n, d], out)?, idx))
}

struct PcmCache {
    f_pre: Tensor,
    f_h: Tensor,
    m_gamma: Tensor,
    m_zeta: Tensor,
    gamma: Tensor,
}

fn pcm_forward(s: &AdapterState, x: &Tensor, cp: &Tensor, md: &ModulationParams) -> Result<(Tensor, PcmCache)> {
    let (n, d) = x.dims2()?;
    if cp.shape() != [n, d] || s.film_w2.shape()[0] != 2 * d {
        return Err(dim("pcm_film", format!("connector {:?} vs tokens {:?}", cp.shape(), x.shape())));
    }
    let mut f_pre = matmul_nt(cp, &s.film_w1)?;
    add_row_bias(&mut f_pre, &s.film_b1);
    let f_h = f_pre.map(silu);
    let mut f_out = matmul_nt(&f_h, &s.film_w2)?;
    add_row_bias(&mut f_out, &s.film_b2);
    let mut m_gamma = Vec::with_capacity(n * d);
    let mut m_zeta = Vec::with_capacity(n * d);
    for row in f_out.data().chunks(2 * d) {
        m_gamma.extend_from_slice(&row[..d]);
        m_zeta.extend_from_slice(&row[d..]);
    }
    let m_gamma = Tensor::new(vec![n, d], m_gamma)?;
    let m_zeta = Tensor::new(vec![n, d], m_zeta)?;
    let gamma = m_gamma.map(|v| 1.0 + md.alpha_pcm * v + md.beta_pcm);
    let zeta = m_zeta.map(|v| md.alpha_pcm * v + md.beta_pcm);
    let u = x.mul(&gamma)?.add(&zeta)?;
    Ok((
        u,
        PcmCache {
            f_pre,
            f_h,
            m_gamma,
            m_zeta,
            gamma,
        },
    ))
}

/// FiLM on normalized activations: `γ ⊙ LN(h) + ζ` with
/// `γ = 1 + α·m_γ + β` and `ζ = α·m_ζ + β`.
pub fn pcm_film(
    cfg: &ToyBlockConfig,
    h: &Tensor,
    t_perc: &Tensor,
    state: &AdapterState,
    md: &ModulationParams,
) -> Result<Tensor> {
    let (n, d) = h.dims2()?;
    if d != cfg.d {
        return Err(dim("pcm_film", format!("width {d} vs {}", cfg.d)));
    }
    let (x, _) = ln_forward(h)?;
    let (cp, _) = connector(state, t_perc, n)?;
    pcm_forward(state, &x, &cp, md).map(|(u, _)| u)
}

fn coupling_term(s: &AdapterState, phys_tokens: &Tensor, cp: &Tensor) -> Result<Tensor> {
    matmul_nt(phys_tokens, &s.w_p)?.add(&matmul_nt(cp, &s.w_c)?)
}

/// `z_res + λ (T_phys W_pᵀ + C_perc(T_perc) W_cᵀ)`.
pub fn coupler(
    cfg: &ToyBlockConfig,
    z_res: &Tensor,
    inputs: &BlockInputs,
    state: &AdapterState,
    md: &ModulationParams,
) -> Result<Tensor> {
    check_tokens(cfg, z_res)?;
    inputs.validate(cfg)?;
    let (cp, _) = connector(state, &inputs.t_perc, cfg.n_tokens)?;
    let term = coupling_term(state, &inputs.phys_tokens, &cp)?;
    z_res.add(&term.scale(md.lambda))
}

struct BlockCache {
    psi: Option<PsiCache>,
    md: ModulationParams,
    pga: PgaCache,
    x: Tensor,
    ln_inv: Vec<f64>,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    w_v: Tensor,
    probs: Vec<Tensor>,
    att: Tensor,
    cp: Tensor,
    idx: Vec<usize>,
    pcm: PcmCache,
    u: Tensor,
    mlp_pre: Tensor,
    coup: Tensor,
    out: Tensor,
}

#[allow(clippy::too_many_arguments)]
fn forward_cached(
    cfg: &ToyBlockConfig,
    z: &Tensor,
    inputs: &BlockInputs,
    state: &AdapterState,
    bb: &Backbone,
    modulation: Modulation,
) -> Result<BlockCache> {
    cfg.validate()?;
    check_tokens(cfg, z)?;
    inputs.validate(cfg)?;
    state.check_shapes(cfg)?;
    let (md, psi_cache) = match modulation {
        Modulation::Psi { t, layer } => {
            let (md, c) = psi_forward(t, layer, &state.psi)?;
            (md, Some(c))
        }
        Modulation::Fixed(md) => (md, None),
    };
    let (r, pga) = pga_forward(cfg, state, inputs, &md)?;
    let w_v = bb.w_v.add(&r)?;
    let (x, ln_inv) = ln_forward(z)?;
    let (q, k, v) = (matmul(&x, &bb.w_q)?, matmul(&x, &bb.w_k)?, matmul(&x, &w_v)?);
    let AttnOut { out: att, probs } = attention(&q, &k, &v, cfg.heads)?;
    let msa = matmul(&att, &bb.w_o)?;
    let (cp, idx) = connector(state, &inputs.t_perc, cfg.n_tokens)?;
    let (u, pcm) = pcm_forward(state, &x, &cp, &md)?;
    let mut mlp_pre = matmul(&u, &bb.w1)?;
    add_row_bias(&mut mlp_pre, &bb.b1);
    let mut mlp = matmul(&mlp_pre.map(silu), &bb.w2)?;
    add_row_bias(&mut mlp, &bb.b2);
    let z_res = z.add(&msa)?.add(&mlp)?;
    let coup = coupling_term(state, &inputs.phys_tokens, &cp)?;
    let out = z_res.add(&coup.scale(md.lambda))?;
    if !out.all_finite() {
        return Err(Error::Numerical("non-finite block output".into()));
    }
    Ok(BlockCache {
        psi: psi_cache,
        md,
        pga,
        x,
        ln_inv,
        q,
        k,
        v,
        w_v,
        probs,
        att,
        cp,
        idx,
        pcm,
        u,
        mlp_pre,
        coup,
        out,
    })
}

/// Where the modulation scalars come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Modulation {
    Psi { t: f64, layer: usize },
    Fixed(ModulationParams),
}

/// One adapted block at timestep `t` for block index `layer`.
pub fn toy_block_forward(
    cfg: &ToyBlockConfig,
    z: &Tensor,
    inputs: &BlockInputs,
    state: &AdapterState,
    bb: &Backbone,
    t: f64,
    layer: usize,
) -> Result<Tensor> {
    forward_cached(cfg, z, inputs, state, bb, Modulation::Psi { t, layer }).map(|c| c.out)
}

pub(crate) fn block_output(
    cfg: &ToyBlockConfig,
    z: &Tensor,
    inputs: &BlockInputs,
    state: &AdapterState,
    bb: &Backbone,
    modulation: Modulation,
) -> Result<Tensor> {
    forward_cached(cfg, z, inputs, state, bb, modulation).map(|c| c.out)
}

/// Same as [`toy_block_forward`] with explicit modulation scalars.
pub fn toy_block_forward_modulated(
    cfg: &ToyBlockConfig,
    z: &Tensor,
    inputs: &BlockInputs,
    state: &AdapterState,
    bb: &Backbone,
    md: ModulationParams,
) -> Result<Tensor> {
    forward_cached(cfg, z, inputs, state, bb, Modulation::Fixed(md)).map(|c| c.out)
}

/// Scalar probe `Σ ½·c·z² + e·z` over the block output.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProbe {
    pub c: Tensor,
    pub e: Tensor,
}

impl QuadraticProbe {
    pub fn seeded(cfg: &ToyBlockConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.n_tokens * cfg.d;
        let shape = vec![cfg.n_tokens, cfg.d];
        let c = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        let e = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self {
            c: Tensor::new(shape.clone(), c).expect("finite"),
            e: Tensor::new(shape, e).expect("finite"),
        }
    }

    /// Compensated sum, so central differences at small steps are not
    /// swamped by accumulation error.
    pub fn value(&self, out: &Tensor) -> f64 {
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for ((z, c), e) in out.data().iter().zip(self.c.data()).zip(self.e.data()) {
            let term = 0.5 * c * z * z + e * z;
            let t = sum + term;
            comp += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
            sum = t;
        }
        sum + comp
    }

    fn grad(&self, out: &Tensor) -> Tensor {
        let g = out
            .data()
            .iter()
            .zip(self.c.data())
            .zip(self.e.data())
            .map(|((z, c), e)| c * z + e)
            .collect();
        Tensor::new(out.shape().to_vec(), g).expect("finite")
    }
}

/// Probe value, adapter-parameter gradients and input-token gradient of a
/// probe on the block output.
#[allow(clippy::too_many_arguments)]
pub fn toy_block_gradients(
    cfg: &ToyBlockConfig,
    z: &Tensor,
    inputs: &BlockInputs,
    state: &AdapterState,
    bb: &Backbone,
    modulation: Modulation,
    probe: &QuadraticProbe,
) -> Result<(f64, AdapterState, Tensor)> {
    let c = forward_cached(cfg, z, inputs, state, bb, modulation)?;
    let loss = probe.value(&c.out);
    let g_out = probe.grad(&c.out);
    let mut gr = state.zeros_like();
    let (n, d) = (cfg.n_tokens, cfg.d);
    let md = c.md;

    // coupler
    let d_lambda: f64 = g_out.data().iter().zip(c.coup.data()).map(|(a, b)| a * b).sum();
    let d_coup = g_out.scale(md.lambda);
    add_into(&mut gr.w_p, matmul_tn(&d_coup, &inputs.phys_tokens)?.data());
    add_into(&mut gr.w_c, matmul_tn(&d_coup, &c.cp)?.data());
    let mut d_cp = matmul(&d_coup, &state.w_c)?;

    // residual sums: z_res = z + msa + mlp
    let d_res = &g_out;
    let mut d_z = d_res.clone();

    // MLP branch
    let d_hidden = matmul_nt(d_res, &bb.w2)?;
    let d_pre = Tensor::new(
        vec![n, cfg.d_ff],
        d_hidden.data().iter().zip(c.mlp_pre.data()).map(|(a, p)| a * silu_grad(*p)).collect(),
    )?;
    let d_u = matmul_nt(&d_pre, &bb.w1)?;

    // PCM
    let d_gamma = d_u.mul(&c.x)?;
    let d_zeta = &d_u;
    let mut d_x = d_u.mul(&c.pcm.gamma)?;
    let d_alpha_pcm = d_gamma.mul(&c.pcm.m_gamma)?.sum() + d_zeta.mul(&c.pcm.m_zeta)?.sum();
    let d_beta_pcm = d_gamma.sum() + d_zeta.sum();
    let mut d_fout = Vec::with_capacity(n * 2 * d);
    for (rg, rz) in d_gamma.data().chunks(d).zip(d_zeta.data().chunks(d)) {
        d_fout.extend(rg.iter().map(|v| md.alpha_pcm * v));
        d_fout.extend(rz.iter().map(|v| md.alpha_pcm * v));
    }
    let d_fout = Tensor::new(vec![n, 2 * d], d_fout)?;
    add_into(&mut gr.film_w2, matmul_tn(&d_fout, &c.pcm.f_h)?.data());
    add_into(&mut gr.film_b2, &col_sums(&d_fout));
    let d_fh = matmul(&d_fout, &state.film_w2)?;
    let d_fpre = Tensor::new(
        d_fh.shape().to_vec(),
        d_fh.data().iter().zip(c.pcm.f_pre.data()).map(|(a, p)| a * silu_grad(*p)).collect(),
    )?;
    add_into(&mut gr.film_w1, matmul_tn(&d_fpre, &c.cp)?.data());
    add_into(&mut gr.film_b1, &col_sums(&d_fpre));
    d_cp.add_assign(&matmul(&d_fpre, &state.film_w1)?)?;

    // connector: scatter resampled rows back to source tokens
    let np = inputs.t_perc.shape()[0];
    let mut d_raw = Tensor::zeros(&[np, d]);
    for (i, &k) in c.idx.iter().enumerate() {
        for j in 0..d {
            d_raw.data_mut()[k * d + j] += d_cp.data()[i * d + j];
        }
    }
    add_into(&mut gr.conn_w, matmul_tn(&d_raw, &inputs.t_perc)?.data());
    add_into(&mut gr.conn_b, &col_sums(&d_raw));

    // attention
    let d_att = matmul_nt(d_res, &bb.w_o)?;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut d_q = Tensor::zeros(&[n, d]);
    let mut d_k = Tensor::zeros(&[n, d]);
    let mut d_v = Tensor::zeros(&[n, d]);
    for h in 0..cfg.heads {
        let p = &c.probs[h];
        let d_oh = head_slice(&d_att, h, dh);
        let (qh, kh, vh) = (head_slice(&c.q, h, dh), head_slice(&c.k, h, dh), head_slice(&c.v, h, dh));
        let d_p = matmul_nt(&d_oh, &vh)?;
        write_head_slice(&mut d_v, &matmul_tn(p, &d_oh)?, h, dh);
        let mut d_s = Tensor::zeros(&[n, n]);
        for i in 0..n {
            let (pr, dpr) = (p.row(i), d_p.row(i));
            let dot: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
            for j in 0..n {
                d_s.data_mut()[i * n + j] = pr[j] * (dpr[j] - dot) * scale;
            }
        }
        write_head_slice(&mut d_q, &matmul(&d_s, &kh)?, h, dh);
        write_head_slice(&mut d_k, &matmul_tn(&d_s, &qh)?, h, dh);
    }
    d_x.add_assign(&matmul_nt(&d_q, &bb.w_q)?)?;
    d_x.add_assign(&matmul_nt(&d_k, &bb.w_k)?)?;
    d_x.add_assign(&matmul_nt(&d_v, &c.w_v)?)?;
    let d_r = matmul_tn(&c.x, &d_v)?;

    // PGA: R = M ⊙ colscale
    let pg = &c.pga;
    let mut d_m = d_r.clone();
    let mut d_col = vec![0.0; d];
    for i in 0..d {
        for j in 0..d {
            d_m.data_mut()[i * d + j] *= pg.colscale[j];
            d_col[j] += d_r.data()[i * d + j] * pg.m.data()[i * d + j];
        }
    }
    let mut d_n = 0.0;
    let mut d_gf = vec![0.0; cfg.heads];
    let mut d_gate_pre = vec![0.0; d];
    for j in 0..d {
        let h = j / dh;
        let d_gate = d_col[j] * (1.0 + md.n_spec * pg.gf[h]);
        d_n += d_col[j] * pg.gate[j] * pg.gf[h];
        d_gf[h] += d_col[j] * pg.gate[j] * md.n_spec;
        d_gate_pre[j] = d_gate * pg.gate[j] * (1.0 - pg.gate[j]);
    }
    let nf = inputs.phys_feat.len();
    for j in 0..d {
        gr.p_bias.data_mut()[j] += d_gate_pre[j];
        for k in 0..nf {
            gr.p_v.data_mut()[j * nf + k] += d_gate_pre[j] * inputs.phys_feat[k];
        }
    }
    let nb = inputs.r_spec.len();
    for h in 0..cfg.heads {
        let dp = d_gf[h] * sigmoid(pg.gf_pre[h]);
        gr.r_bias.data_mut()[h] += dp;
        for k in 0..nb {
            gr.w_r.data_mut()[h * nb + k] += dp * inputs.r_spec[k];
        }
    }
    let d_alpha_pga = d_m.mul(&pg.ab)?.sum();
    let d_beta_pga: f64 = (0..d).map(|i| d_m.data()[i * d + i]).sum();
    let d_ab = d_m.scale(md.alpha_pga);
    add_into(&mut gr.a_v, matmul_nt(&d_ab, &state.b_v)?.data());
    add_into(&mut gr.b_v, matmul_tn(&state.a_v, &d_ab)?.data());

    // layer norm into the input tokens
    d_z.add_assign(&ln_backward(&c.x, &c.ln_inv, &d_x))?;

    if let Some(pc) = &c.psi {
        psi_backward(
            pc,
            &state.psi,
            [d_alpha_pga, d_beta_pga, d_alpha_pcm, d_beta_pcm, d_n, d_lambda],
            &mut gr.psi,
        );
    }
    let _ = (&c.att, &c.u);
    Ok((loss, gr, d_z))
}
