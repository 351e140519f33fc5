//! Deterministic stand-in for a pretrained image encoder: one token per
//! 16×16 patch built from mean color and patch band energies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::colorimetry::{luma, TaggedImage, Transfer};
use crate::error::{Error, Result};
use crate::features::spectral_descriptor;
use crate::tensor::Tensor;

pub const PATCH: usize = 16;
pub const STUB_BANDS: usize = 4;
const RAW_DIM: usize = 3 + STUB_BANDS;

/// Fixed `d_p × 7` projection of the raw patch features
/// `[mean R, mean G, mean B, band energies]`.
pub fn stub_projection(d_p: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (RAW_DIM as f64).sqrt();
    let proj = (0..d_p * RAW_DIM).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(vec![d_p, RAW_DIM], proj).expect("finite projection")
}

/// `N_p × d_p` perceptual tokens, patches in raster order. Partial patches
/// at the right and bottom edges are dropped. Linear inputs are scaled by
/// their tag peak so every input lands in roughly `[0, 1]`.
pub fn perceptual_stub(img: &TaggedImage, d_p: usize, seed: u64) -> Result<Tensor> {
    if d_p < 4 {
        return Err(Error::Config(format!("perceptual width must be at least 4, got {d_p}")));
    }
    let (h, w) = (img.height(), img.width());
    if h < PATCH || w < PATCH {
        return Err(Error::Config(format!("image {h}x{w} is smaller than one {PATCH}x{PATCH} patch")));
    }
    let tag = img.tag();
    let norm = if tag.transfer == Transfer::Linear { 1.0 / tag.peak_nits } else { 1.0 };
    let proj = stub_projection(d_p, seed);
    let proj = proj.data();
    let (ph, pw) = (h / PATCH, w / PATCH);
    let mut out = Vec::with_capacity(ph * pw * d_p);
    for py in 0..ph {
        for px in 0..pw {
            let mut raw = [0.0; RAW_DIM];
            let mut y = Vec::with_capacity(PATCH * PATCH);
            for yy in 0..PATCH {
                for xx in 0..PATCH {
                    let p = img.pixel(py * PATCH + yy, px * PATCH + xx).map(|v| v * norm);
                    for c in 0..3 {
                        raw[c] += p[c] / (PATCH * PATCH) as f64;
                    }
                    y.push(luma(p));
                }
            }
            let bands = spectral_descriptor(&Tensor::new(vec![PATCH, PATCH], y)?, STUB_BANDS)?;
            raw[3..].copy_from_slice(&bands.r);
            for k in 0..d_p {
                out.push(proj[k * RAW_DIM..(k + 1) * RAW_DIM].iter().zip(&raw).map(|(a, b)| a * b).sum());
            }
        }
    }
    Tensor::new(vec![ph * pw, d_p], out)
}
