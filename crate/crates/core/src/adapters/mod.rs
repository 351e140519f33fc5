//! Toy-scale adapter machinery around a single transformer block: the
//! timestep/layer conditioner, the physically gated low-rank value update,
//! FiLM modulation from perceptual tokens, and the residual coupler.
//!
//! Backbone weights ([`Backbone`]) are frozen; everything in
//! [`AdapterState`] is trainable and has hand-written gradients in
//! [`block`].

pub mod block;
pub mod gradcheck;
pub mod psi;
pub mod stub;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use block::{
    coupler, pcm_film, pga_residual, toy_block_forward, toy_block_forward_modulated, toy_block_gradients,
    vanilla_block_forward, BlockInputs, Modulation, QuadraticProbe,
};
pub use gradcheck::{grad_check_adapters, GradReport, GroupError};
pub use psi::{psi, PsiWeights};
pub use stub::perceptual_stub;

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyBlockConfig {
    /// Token width.
    pub d: usize,
    /// Token count.
    pub n_tokens: usize,
    pub heads: usize,
    pub layers: usize,
    pub rank: usize,
    /// Perceptual embedding width.
    pub d_p: usize,
    /// Channels of the physical convolution.
    pub conv_channels: usize,
    /// Width of the global-statistics embedding.
    pub d_g: usize,
    pub bands: usize,
    pub d_ff: usize,
    pub film_hidden: usize,
    /// Number of sinusoid frequencies fed to the conditioner.
    pub psi_freqs: usize,
    pub psi_hidden: usize,
}

impl Default for ToyBlockConfig {
    fn default() -> Self {
        Self {
            d: 64,
            n_tokens: 64,
            heads: 4,
            layers: 2,
            rank: 8,
            d_p: 32,
            conv_channels: 4,
            d_g: 8,
            bands: 8,
            d_ff: 128,
            film_hidden: 32,
            psi_freqs: 4,
            psi_hidden: 16,
        }
    }
}

impl ToyBlockConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("d", self.d),
            ("n_tokens", self.n_tokens),
            ("heads", self.heads),
            ("layers", self.layers),
            ("rank", self.rank),
            ("d_p", self.d_p),
            ("conv_channels", self.conv_channels),
            ("d_g", self.d_g),
            ("bands", self.bands),
            ("d_ff", self.d_ff),
            ("film_hidden", self.film_hidden),
            ("psi_freqs", self.psi_freqs),
            ("psi_hidden", self.psi_hidden),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.d % self.heads != 0 {
            return Err(Error::Config(format!("d = {} not divisible by {} heads", self.d, self.heads)));
        }
        if self.d < 2 {
            return Err(Error::Config("d must be at least 2 for layer norm".into()));
        }
        if self.rank > self.d {
            return Err(Error::Config(format!("rank {} exceeds width {}", self.rank, self.d)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Token grid `(rows, cols)` with `rows · cols = n_tokens`, as square as
    /// possible.
    pub fn token_grid(&self) -> (usize, usize) {
        let rows = (1..=self.n_tokens)
            .filter(|r| self.n_tokens % r == 0 && r * r <= self.n_tokens)
            .max()
            .unwrap_or(1);
        (rows, self.n_tokens / rows)
    }
}

/// The six block-wise modulation scalars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationParams {
    pub alpha_pga: f64,
    pub beta_pga: f64,
    pub alpha_pcm: f64,
    pub beta_pcm: f64,
    pub n_spec: f64,
    pub lambda: f64,
}

impl ModulationParams {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.alpha_pga,
            self.beta_pga,
            self.alpha_pcm,
            self.beta_pcm,
            self.n_spec,
            self.lambda,
        ]
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let fan_in = *shape.last().unwrap_or(&1) as f64;
    let bound = scale / fan_in.sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite weights")
}

/// Frozen block weights. Projections multiply tokens from the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    /// `d × d_ff`.
    pub w1: Tensor,
    pub b1: Tensor,
    /// `d_ff × d`.
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Backbone {
    pub fn seeded(cfg: &ToyBlockConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d;
        Self {
            w_q: uniform(&mut rng, &[d, d], 1.0),
            w_k: uniform(&mut rng, &[d, d], 1.0),
            w_v: uniform(&mut rng, &[d, d], 1.0),
            w_o: uniform(&mut rng, &[d, d], 1.0),
            w1: uniform(&mut rng, &[d, cfg.d_ff], 1.0),
            b1: uniform(&mut rng, &[cfg.d_ff], 0.1),
            w2: uniform(&mut rng, &[cfg.d_ff, d], 1.0),
            b2: uniform(&mut rng, &[d], 0.1),
        }
    }
}

/// Trainable adapter parameters. Matrices act on column vectors
/// (`y = W x`) unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterState {
    /// `d × r`.
    pub a_v: Tensor,
    /// `r × d`.
    pub b_v: Tensor,
    /// `d × (C + d_g)`.
    pub p_v: Tensor,
    pub p_bias: Tensor,
    /// `H × K_bands`.
    pub w_r: Tensor,
    pub r_bias: Tensor,
    /// `film_hidden × d`.
    pub film_w1: Tensor,
    pub film_b1: Tensor,
    /// `2d × film_hidden`.
    pub film_w2: Tensor,
    pub film_b2: Tensor,
    /// Perceptual connector, `d × d_p`.
    pub conn_w: Tensor,
    pub conn_b: Tensor,
    /// `d × C`.
    pub w_p: Tensor,
    /// `d × d`.
    pub w_c: Tensor,
    pub psi: PsiWeights,
}

/// Names of the trainable parameter groups, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    AV,
    BV,
    PV,
    WR,
    Film,
    Connector,
    WP,
    WC,
    Psi,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 9] = [
        ParamGroup::AV,
        ParamGroup::BV,
        ParamGroup::PV,
        ParamGroup::WR,
        ParamGroup::Film,
        ParamGroup::Connector,
        ParamGroup::WP,
        ParamGroup::WC,
        ParamGroup::Psi,
    ];
}

impl AdapterState {
    /// All-zero state: the adapted block reduces to the backbone block.
    pub fn null(cfg: &ToyBlockConfig) -> Self {
        let (d, c, g) = (cfg.d, cfg.conv_channels, cfg.d_g);
        Self {
            a_v: Tensor::zeros(&[d, cfg.rank]),
            b_v: Tensor::zeros(&[cfg.rank, d]),
            p_v: Tensor::zeros(&[d, c + g]),
            p_bias: Tensor::zeros(&[d]),
            w_r: Tensor::zeros(&[cfg.heads, cfg.bands]),
            r_bias: Tensor::zeros(&[cfg.heads]),
            film_w1: Tensor::zeros(&[cfg.film_hidden, d]),
            film_b1: Tensor::zeros(&[cfg.film_hidden]),
            film_w2: Tensor::zeros(&[2 * d, cfg.film_hidden]),
            film_b2: Tensor::zeros(&[2 * d]),
            conn_w: Tensor::zeros(&[d, cfg.d_p]),
            conn_b: Tensor::zeros(&[d]),
            w_p: Tensor::zeros(&[d, c]),
            w_c: Tensor::zeros(&[d, d]),
            psi: PsiWeights::zeros(cfg),
        }
    }

    /// Uniform random state; `scale` multiplies the `1/√fan_in` bound.
    pub fn seeded(cfg: &ToyBlockConfig, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, c, g) = (cfg.d, cfg.conv_channels, cfg.d_g);
        let mut u = |shape: &[usize]| uniform(&mut rng, shape, scale);
        Self {
            a_v: u(&[d, cfg.rank]),
            b_v: u(&[cfg.rank, d]),
            p_v: u(&[d, c + g]),
            p_bias: u(&[d]),
            w_r: u(&[cfg.heads, cfg.bands]),
            r_bias: u(&[cfg.heads]),
            film_w1: u(&[cfg.film_hidden, d]),
            film_b1: u(&[cfg.film_hidden]),
            film_w2: u(&[2 * d, cfg.film_hidden]),
            film_b2: u(&[2 * d]),
            conn_w: u(&[d, cfg.d_p]),
            conn_b: u(&[d]),
            w_p: u(&[d, c]),
            w_c: u(&[d, d]),
            psi: PsiWeights::seeded(cfg, seed ^ 0x5053_4900, scale),
        }
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(t.shape());
        Self {
            a_v: z(&self.a_v),
            b_v: z(&self.b_v),
            p_v: z(&self.p_v),
            p_bias: z(&self.p_bias),
            w_r: z(&self.w_r),
            r_bias: z(&self.r_bias),
            film_w1: z(&self.film_w1),
            film_b1: z(&self.film_b1),
            film_w2: z(&self.film_w2),
            film_b2: z(&self.film_b2),
            conn_w: z(&self.conn_w),
            conn_b: z(&self.conn_b),
            w_p: z(&self.w_p),
            w_c: z(&self.w_c),
            psi: PsiWeights {
                w_t: z(&self.psi.w_t),
                b_t: z(&self.psi.b_t),
                embed: z(&self.psi.embed),
                w_head: z(&self.psi.w_head),
                b_head: z(&self.psi.b_head),
            },
        }
    }

    fn group_tensors(&self, g: ParamGroup) -> Vec<&Tensor> {
        match g {
            ParamGroup::AV => vec![&self.a_v],
            ParamGroup::BV => vec![&self.b_v],
            ParamGroup::PV => vec![&self.p_v, &self.p_bias],
            ParamGroup::WR => vec![&self.w_r, &self.r_bias],
            ParamGroup::Film => vec![&self.film_w1, &self.film_b1, &self.film_w2, &self.film_b2],
            ParamGroup::Connector => vec![&self.conn_w, &self.conn_b],
            ParamGroup::WP => vec![&self.w_p],
            ParamGroup::WC => vec![&self.w_c],
            ParamGroup::Psi => vec![
                &self.psi.w_t,
                &self.psi.b_t,
                &self.psi.embed,
                &self.psi.w_head,
                &self.psi.b_head,
            ],
        }
    }

    fn group_tensors_mut(&mut self, g: ParamGroup) -> Vec<&mut Tensor> {
        match g {
            ParamGroup::AV => vec![&mut self.a_v],
            ParamGroup::BV => vec![&mut self.b_v],
            ParamGroup::PV => vec![&mut self.p_v, &mut self.p_bias],
            ParamGroup::WR => vec![&mut self.w_r, &mut self.r_bias],
            ParamGroup::Film => vec![
                &mut self.film_w1,
                &mut self.film_b1,
                &mut self.film_w2,
                &mut self.film_b2,
            ],
            ParamGroup::Connector => vec![&mut self.conn_w, &mut self.conn_b],
            ParamGroup::WP => vec![&mut self.w_p],
            ParamGroup::WC => vec![&mut self.w_c],
            ParamGroup::Psi => vec![
                &mut self.psi.w_t,
                &mut self.psi.b_t,
                &mut self.psi.embed,
                &mut self.psi.w_head,
                &mut self.psi.b_head,
            ],
        }
    }

    /// Concatenated values of one parameter group.
    pub fn group(&self, g: ParamGroup) -> Vec<f64> {
        self.group_tensors(g).iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn group_len(&self, g: ParamGroup) -> usize {
        self.group_tensors(g).iter().map(|t| t.len()).sum()
    }

    /// Overwrites entry `index` of the concatenated group.
    pub fn set_group_entry(&mut self, g: ParamGroup, mut index: usize, value: f64) -> Result<()> {
        let len = self.group_len(g);
        for t in self.group_tensors_mut(g) {
            if index < t.len() {
                t.data_mut()[index] = value;
                return Ok(());
            }
            index -= t.len();
        }
        Err(Error::Index {
            what: "parameter group",
            index,
            len,
        })
    }

    pub fn check_shapes(&self, cfg: &ToyBlockConfig) -> Result<()> {
        let want = Self::null(cfg);
        for g in ParamGroup::ALL {
            for (a, b) in self.group_tensors(g).iter().zip(want.group_tensors(g)) {
                if a.shape() != b.shape() {
                    return Err(crate::error::dim(
                        "AdapterState",
                        format!("{g:?} has shape {:?}, expected {:?}", a.shape(), b.shape()),
                    ));
                }
            }
        }
        Ok(())
    }
}
