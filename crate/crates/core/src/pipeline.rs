//! Frame-level commands: SDR synthesis over an operator × CRF grid, spline
//! expansion against a reference, feature dumps and the adapter demo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapters::block::{vanilla_block_forward, BlockInputs, Modulation};
use crate::adapters::{
    grad_check_adapters, pga_residual, toy_block_forward, AdapterState, Backbone, GradReport, ModulationParams,
    QuadraticProbe, ToyBlockConfig,
};
use crate::colorimetry::{
    apply_transfer, gamut_matrix, luma, to_linear_bt2020, ColorSpaceTag, Direction, Matrix3, Primaries, TaggedImage,
    Transfer, PQ_PEAK_NITS,
};
use crate::error::{dim, Error, Result};
use crate::features::{extract_phys, PhysFeatures, seeded_conv_weights, spectral_descriptor, GlobalMlp, MapSummary};
use crate::rqs::{fit_rqs, FitConfig, FitResult};
use crate::tensor::Tensor;
use crate::tonemap::{default_operators, degrade, Crf, DegradationSpec, ToneOperator};

pub const THREADS_ENV: &str = "LUMAFLUX_THREADS";

/// Seeds for the fixed feature networks.
const CONV_SEED: u64 = 0x4c46_0001;
const MLP_SEED: u64 = 0x4c46_0002;
const MLP_HIDDEN: usize = 16;

fn default_crfs() -> Vec<Option<Crf>> {
    Crf::all().into_iter().map(Some).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub tmos: Vec<ToneOperator>,
    /// `null` entries bypass the codec proxy.
    pub crfs: Vec<Option<Crf>>,
    pub seed: u64,
    /// Spline fit settings; `bins` is K, `lambda_l1` and `lambda_smooth` are
    /// the luma and slope-smoothness weights.
    pub fit: FitConfig,
    /// Weight of the full-RGB L1 term in the reported expansion objective.
    pub lambda_rgb: f64,
    pub bands: usize,
    pub toy: ToyBlockConfig,
    pub output_dir: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tmos: default_operators(),
            crfs: default_crfs(),
            seed: 0,
            fit: FitConfig::default(),
            lambda_rgb: 0.0,
            bands: crate::features::DEFAULT_BANDS,
            toy: ToyBlockConfig::default(),
            output_dir: "out".into(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tmos.is_empty() {
            return Err(Error::Config("tmo list is empty".into()));
        }
        if self.crfs.is_empty() {
            return Err(Error::Config("crf list is empty (use null to bypass the codec)".into()));
        }
        for op in &self.tmos {
            op.validate()?;
        }
        if self.fit.bins < 2 {
            return Err(Error::Config(format!("spline needs at least 2 bins, got {}", self.fit.bins)));
        }
        for (name, v) in [
            ("lambda_l1", self.fit.lambda_l1),
            ("lambda_smooth", self.fit.lambda_smooth),
            ("lambda_rgb", self.lambda_rgb),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.bands < 2 {
            return Err(Error::Config(format!("need at least 2 spectral bands, got {}", self.bands)));
        }
        self.toy.validate()
    }
}

/// Seeded synthetic PQ BT.2020 frame: a luminance ramp with a highlight, a
/// dark corner and sinusoidal texture, colors kept inside BT.709.
pub fn synthetic_hdr(height: usize, width: usize, peak_nits: f64, seed: u64) -> Result<TaggedImage> {
    let tag = ColorSpaceTag::new(Primaries::Bt2020, Transfer::Linear, peak_nits)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: [f64; 5] = std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU));
    let to2020 = gamut_matrix(Primaries::Bt709, Primaries::Bt2020);
    let linear = TaggedImage::from_fn(height, width, tag, |y, x| {
        let u = (x as f64 + 0.5) / width as f64;
        let v = (y as f64 + 0.5) / height as f64;
        let ramp = 0.002 + 0.35 * u.powf(2.2) * (0.6 + 0.4 * v);
        let blob = 0.6 * (-((u - 0.72).powi(2) + (v - 0.3).powi(2)) / 0.012).exp();
        let texture = 1.0 + 0.15 * (40.0 * u + phase[0]).sin() * (33.0 * v + phase[1]).cos();
        let lum = peak_nits * (ramp + blob) * texture;
        let tint = [
            0.65 + 0.35 * (std::f64::consts::TAU * u + phase[2]).sin(),
            0.65 + 0.35 * (std::f64::consts::TAU * v + phase[3]).sin(),
            0.65 + 0.35 * (std::f64::consts::TAU * (u + v) + phase[4]).sin(),
        ];
        let rgb = to2020.apply(tint.map(|c| c * lum / luma(to2020.apply(tint))));
        let top = rgb.iter().fold(0.0f64, |m, &c| m.max(c));
        let s = if top > peak_nits { peak_nits / top } else { 1.0 };
        rgb.map(|c| (c * s).clamp(0.0, peak_nits))
    })?;
    let encoded = apply_transfer(&linear, Transfer::Pq, Direction::Encode)?;
    Ok(encoded)
}

/// Worker count from `LUMAFLUX_THREADS`, or rayon's default.
pub fn worker_threads() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {s:?}"))),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub index: usize,
    pub spec: DegradationSpec,
    pub image: TaggedImage,
}

impl SynthFrame {
    pub fn file_stem(&self) -> String {
        let crf = self.spec.crf.map_or("nocodec".to_string(), |c| format!("crf{}", c.value()));
        format!("{:02}_{}_{crf}", self.index, self.spec.tmo.label())
    }
}

/// Every operator × CRF degradation of `hdr`, in grid order (operator
/// major). Frame `i` records seed `cfg.seed ^ i`. Results do not depend on
/// the worker count.
pub fn synthesize(hdr: &TaggedImage, cfg: &PipelineConfig, threads: Option<usize>) -> Result<Vec<SynthFrame>> {
    cfg.validate()?;
    let specs: Vec<DegradationSpec> = cfg
        .tmos
        .iter()
        .flat_map(|op| cfg.crfs.iter().map(move |crf| (op, *crf)))
        .enumerate()
        .map(|(i, (op, crf))| DegradationSpec {
            tmo: op.clone(),
            crf,
            seed: cfg.seed ^ i as u64,
        })
        .collect();
    let run = || -> Result<Vec<SynthFrame>> {
        specs
            .into_par_iter()
            .enumerate()
            .map(|(index, spec)| {
                let image = degrade(hdr, &spec)?;
                Ok(SynthFrame { index, spec, image })
            })
            .collect()
    };
    match threads {
        None => run(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandResult {
    /// PQ BT.2020 at the reference's peak.
    pub hdr: TaggedImage,
    pub fit: FitResult,
    /// Maps luminance-normalized SDR chroma onto the reference's.
    pub chroma_mix: [[f64; 3]; 3],
    /// Mean |Ŷ − Y| over pixels, relative to the reference peak.
    pub luma_l1: f64,
    /// Mean per-channel |x̂ − x|, relative to the reference peak.
    pub rgb_l1: f64,
    /// `λ₁·luma_l1 + λ_rgb·rgb_l1 + λ₃·smooth_penalty`.
    pub objective: f64,
}

/// Relative linear BT.2020 luminance pairs `(SDR, reference)` per pixel.
pub fn luma_pairs(sdr_lin: &TaggedImage, ref_lin: &TaggedImage) -> Vec<(f64, f64)> {
    let (ps, pr) = (sdr_lin.tag().peak_nits, ref_lin.tag().peak_nits);
    sdr_lin
        .pixels()
        .chunks_exact(3)
        .zip(ref_lin.pixels().chunks_exact(3))
        .map(|(s, r)| {
            (
                (luma([s[0], s[1], s[2]]) / ps).clamp(0.0, 1.0),
                (luma([r[0], r[1], r[2]]) / pr).clamp(0.0, 1.0),
            )
        })
        .collect()
}

const CHROMA_FLOOR: f64 = 1e-4;
/// Larger frames are subsampled with a fixed stride before the spline fit.
pub const FIT_PAIR_LIMIT: usize = 16_384;

/// Least-squares 3×3 mix from SDR to reference luminance-normalized RGB,
/// weighted by reference luminance since quantization makes dark chroma
/// ratios noisy. Ridge-regularized towards the identity so flat or gray
/// frames give I.
fn chroma_mix(pairs: &[(f64, f64)], sdr: &[f64], reference: &[f64]) -> Result<Matrix3> {
    let mut a = [[0.0; 3]; 3];
    let mut b = [[0.0; 3]; 3];
    for (i, &(ys, yr)) in pairs.iter().enumerate() {
        if ys <= CHROMA_FLOOR || yr <= CHROMA_FLOOR {
            continue;
        }
        let s = &sdr[3 * i..3 * i + 3];
        let r = &reference[3 * i..3 * i + 3];
        let ns = [s[0], s[1], s[2]].map(|c| c / luma([s[0], s[1], s[2]]));
        let nr = [r[0], r[1], r[2]].map(|c| c / luma([r[0], r[1], r[2]]));
        for j in 0..3 {
            for k in 0..3 {
                a[j][k] += yr * ns[j] * ns[k];
                b[j][k] += yr * nr[j] * ns[k];
            }
        }
    }
    let mu = 1e-6 * (a[0][0] + a[1][1] + a[2][2]) + 1e-12;
    for j in 0..3 {
        a[j][j] += mu;
        b[j][j] += mu;
    }
    // M·A = B with A symmetric, so Mᵀ = A⁻¹·Bᵀ
    let a = nalgebra::Matrix3::from_fn(|i, j| a[i][j]);
    let bt = nalgebra::Matrix3::from_fn(|i, j| b[j][i]);
    let mt = a
        .cholesky()
        .ok_or_else(|| Error::Numerical("chroma normal equations are not positive definite".into()))?
        .solve(&bt);
    Ok(Matrix3(std::array::from_fn(|i| std::array::from_fn(|j| mt[(j, i)]))))
}

/// Fits a luminance spline from `sdr` onto `hdr_ref`, expands `sdr` with it
/// and re-applies chroma through a least-squares 3×3 mix.
pub fn fit_expand(sdr: &TaggedImage, hdr_ref: &TaggedImage, cfg: &PipelineConfig) -> Result<ExpandResult> {
    if !sdr.same_extent(hdr_ref) {
        return Err(dim(
            "fit_expand",
            format!("{}x{} vs {}x{}", sdr.height(), sdr.width(), hdr_ref.height(), hdr_ref.width()),
        ));
    }
    let (s_lin, _) = to_linear_bt2020(sdr)?;
    let (r_lin, _) = to_linear_bt2020(hdr_ref)?;
    let pairs = luma_pairs(&s_lin, &r_lin);
    let stride = pairs.len().div_ceil(FIT_PAIR_LIMIT).max(1);
    let fit_pairs: Vec<(f64, f64)> = pairs.iter().step_by(stride).copied().collect();
    let fit = fit_rqs(&fit_pairs, &cfg.fit)?;
    let mix = chroma_mix(&pairs, s_lin.pixels(), r_lin.pixels())?;
    let peak = hdr_ref.tag().peak_nits;
    let mut out = Vec::with_capacity(s_lin.pixels().len());
    let (mut luma_err, mut rgb_err) = (0.0, 0.0);
    for ((&(x, y), s), r) in pairs.iter().zip(s_lin.pixels().chunks_exact(3)).zip(r_lin.pixels().chunks_exact(3)) {
        let y_hat = fit.params.eval(x) * peak;
        let s = [s[0], s[1], s[2]];
        let px = if x <= 0.0 || y_hat <= 0.0 {
            [0.0; 3]
        } else {
            let mixed = mix.apply(s.map(|c| c / luma(s)));
            let l = luma(mixed);
            let norm = if l > 0.0 && mixed.iter().all(|&c| c >= 0.0) { mixed.map(|c| c / l) } else { s.map(|c| c / luma(s)) };
            norm.map(|c| (c * y_hat).clamp(0.0, PQ_PEAK_NITS))
        };
        luma_err += (luma(px) / peak - y).abs();
        rgb_err += (0..3).map(|c| (px[c] - r[c]).abs() / peak).sum::<f64>() / 3.0;
        out.extend_from_slice(&px);
    }
    let n = pairs.len().max(1) as f64;
    let (luma_l1, rgb_l1) = (luma_err / n, rgb_err / n);
    let tag = ColorSpaceTag::new(Primaries::Bt2020, Transfer::Linear, peak)?;
    let linear = TaggedImage::new(sdr.height(), sdr.width(), out, tag)?;
    let hdr = apply_transfer(&linear, Transfer::Pq, Direction::Encode)?;
    let objective = cfg.fit.lambda_l1 * luma_l1
        + cfg.lambda_rgb * rgb_l1
        + cfg.fit.lambda_smooth * crate::rqs::smooth_penalty(&fit.params);
    Ok(ExpandResult {
        hdr,
        fit,
        chroma_mix: mix.0,
        luma_l1,
        rgb_l1,
        objective,
    })
}

/// JSON view of a frame's physical and spectral features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDump {
    pub height: usize,
    pub width: usize,
    pub s_g: [f64; 4],
    pub g: Vec<f64>,
    pub r_spec: Vec<f64>,
    pub y: MapSummary,
    pub loggrad: MapSummary,
    pub sat: MapSummary,
    pub t_phys_channel_means: Vec<f64>,
}

/// Physical features with the fixed seeded networks used by [`feature_dump`].
pub fn phys_features(img: &TaggedImage, cfg: &PipelineConfig) -> Result<PhysFeatures> {
    extract_phys(
        img,
        &seeded_conv_weights(cfg.toy.conv_channels, CONV_SEED),
        &GlobalMlp::seeded(MLP_HIDDEN, cfg.toy.d_g, MLP_SEED),
    )
}

pub fn feature_dump(img: &TaggedImage, cfg: &PipelineConfig) -> Result<FeatureDump> {
    summarize_features(img, &phys_features(img, cfg)?, cfg)
}

pub fn summarize_features(img: &TaggedImage, feats: &PhysFeatures, cfg: &PipelineConfig) -> Result<FeatureDump> {
    let spec = spectral_descriptor(&feats.y_map, cfg.bands)?;
    let c = cfg.toy.conv_channels;
    let mut means = vec![0.0; c];
    for px in feats.t_phys.data().chunks_exact(c) {
        for (m, v) in means.iter_mut().zip(px) {
            *m += v;
        }
    }
    let n = (img.height() * img.width()).max(1) as f64;
    means.iter_mut().for_each(|m| *m /= n);
    Ok(FeatureDump {
        height: img.height(),
        width: img.width(),
        s_g: feats.s_g,
        g: feats.g.clone(),
        r_spec: spec.r,
        y: MapSummary::of(&feats.y_map),
        loggrad: MapSummary::of(&feats.loggrad_map),
        sat: MapSummary::of(&feats.sat_map),
        t_phys_channel_means: means,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreservationCheck {
    pub max_abs_diff: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCheck {
    pub rank: usize,
    /// Largest singular value past index `rank`.
    pub tail_max: f64,
    /// Smallest of the leading `rank` singular values.
    pub head_min: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterDemoReport {
    pub config: ToyBlockConfig,
    pub seed: u64,
    pub preservation: PreservationCheck,
    pub rank: RankCheck,
    pub gradients: GradReport,
    pub passed: bool,
}

pub const RANK_TAIL_TOLERANCE: f64 = 1e-9;

/// Seeded block fixture: tokens, conditioning inputs and frozen weights.
pub fn adapter_fixture(cfg: &ToyBlockConfig, seed: u64) -> Result<(Tensor, BlockInputs, Backbone)> {
    cfg.validate()?;
    let side = 64;
    let hdr = synthetic_hdr(side, side, 1000.0, seed)?;
    let sdr = degrade(
        &hdr,
        &DegradationSpec {
            tmo: ToneOperator::new(crate::tonemap::ToneKind::Reinhard),
            crf: None,
            seed,
        },
    )?;
    let feats = extract_phys(
        &sdr,
        &seeded_conv_weights(cfg.conv_channels, seed ^ CONV_SEED),
        &GlobalMlp::seeded(MLP_HIDDEN, cfg.d_g, seed ^ MLP_SEED),
    )?;
    let spec = spectral_descriptor(&feats.y_map, cfg.bands)?;
    let t_perc = crate::adapters::perceptual_stub(&sdr, cfg.d_p, seed ^ 0x5354_5542)?;
    let inputs = BlockInputs::new(cfg, &feats, &spec, t_perc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x544f_4b45);
    let z = Tensor::new(
        vec![cfg.n_tokens, cfg.d],
        (0..cfg.n_tokens * cfg.d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    Ok((z, inputs, Backbone::seeded(cfg, seed ^ 0x4242)))
}

/// Backbone preservation, low-rank and gradient checks on a seeded block.
pub fn adapter_demo(cfg: &ToyBlockConfig, seed: u64) -> Result<AdapterDemoReport> {
    let (z, inputs, bb) = adapter_fixture(cfg, seed)?;
    let base = vanilla_block_forward(cfg, &z, &bb)?;
    let null = AdapterState::null(cfg);
    let mut diff = 0.0f64;
    for layer in 0..cfg.layers {
        for t in [0.0, 0.5, 1.0] {
            let out = toy_block_forward(cfg, &z, &inputs, &null, &bb, t, layer)?;
            diff = diff.max(out.sub(&base)?.max_abs());
        }
    }
    let preservation = PreservationCheck {
        max_abs_diff: diff,
        passed: diff == 0.0,
    };

    let mut gated = AdapterState::seeded(cfg, seed, 1.0);
    gated.p_v = Tensor::zeros(gated.p_v.shape());
    gated.p_bias = Tensor::new(vec![cfg.d], vec![40.0; cfg.d])?;
    let md = ModulationParams {
        alpha_pga: 1.0,
        beta_pga: 0.0,
        alpha_pcm: 0.0,
        beta_pcm: 0.0,
        n_spec: 0.0,
        lambda: 0.0,
    };
    let r = pga_residual(cfg, &gated, &inputs, &md)?;
    let mut sv: Vec<f64> = nalgebra::DMatrix::from_row_slice(cfg.d, cfg.d, r.data())
        .singular_values()
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let tail_max = sv[cfg.rank..].iter().fold(0.0f64, |m, &v| m.max(v));
    let head_min = sv[..cfg.rank].iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let rank = RankCheck {
        rank: cfg.rank,
        tail_max,
        head_min,
        passed: tail_max <= RANK_TAIL_TOLERANCE,
    };

    let state = AdapterState::seeded(cfg, seed ^ 0x4752_4144, 1.0);
    let probe = QuadraticProbe::seeded(cfg, seed ^ 0x5052_4f42);
    let gradients = grad_check_adapters(
        cfg,
        &z,
        &inputs,
        &state,
        &bb,
        Modulation::Psi {
            t: 0.37,
            layer: cfg.layers - 1,
        },
        &probe,
    )?;
    let passed = preservation.passed && rank.passed && gradients.passed;
    Ok(AdapterDemoReport {
        config: cfg.clone(),
        seed,
        preservation,
        rank,
        gradients,
        passed,
    })
}
