//! Physical conditioning features: per-pixel luminance, log-gradient and
//! saturation maps, their 3×3 convolution, global statistics with a small
//! embedding perceptron, and radial FFT band energies.
//!
//! All maps work on relative luminance: linear BT.2020 cd/m² divided by the
//! frame's tag peak. SDR input is decoded with the inverse BT.709 OETF and
//! converted to BT.2020 before anything else.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorimetry::{luma, to_linear_bt2020, TaggedImage};
use crate::error::{dim, Error, Result};
use crate::tensor::{rfft2, silu, Tensor};

pub const DEFAULT_BANDS: usize = 8;
const SAT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PhysFeatures {
    pub y_map: Tensor,
    pub loggrad_map: Tensor,
    pub sat_map: Tensor,
    /// `H × W × C`.
    pub t_phys: Tensor,
    /// `[mean, std, p95, p99]` of `y_map`.
    pub s_g: [f64; 4],
    pub g: Vec<f64>,
}

/// Two-layer SiLU perceptron embedding the global statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMlp {
    /// `hidden × 4`.
    pub w1: Tensor,
    pub b1: Vec<f64>,
    /// `d_g × hidden`.
    pub w2: Tensor,
    pub b2: Vec<f64>,
}

impl GlobalMlp {
    /// Uniform weights in `±1/√fan_in`, zero biases.
    pub fn seeded(hidden: usize, d_g: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::new(vec![rows, cols], data).expect("finite weights")
        };
        Self {
            w1: uniform(hidden, 4),
            b1: vec![0.0; hidden],
            w2: uniform(d_g, hidden),
            b2: vec![0.0; d_g],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.b2.len()
    }

    pub fn forward(&self, s_g: &[f64; 4]) -> Result<Vec<f64>> {
        let (h, k) = self.w1.dims2()?;
        let (o, h2) = self.w2.dims2()?;
        if k != 4 || h2 != h || self.b1.len() != h || self.b2.len() != o {
            return Err(dim("GlobalMlp::forward", format!("w1 {h}x{k}, w2 {o}x{h2}")));
        }
        let hidden: Vec<f64> = (0..h)
            .map(|i| silu((0..4).map(|j| self.w1.at2(i, j) * s_g[j]).sum::<f64>() + self.b1[i]))
            .collect();
        Ok((0..o)
            .map(|i| (0..h).map(|j| self.w2.at2(i, j) * hidden[j]).sum::<f64>() + self.b2[i])
            .collect())
    }
}

/// Seeded `C × 3 × 3 × 3` convolution weights.
pub fn seeded_conv_weights(channels: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / 27f64.sqrt();
    let data = (0..channels * 27).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(vec![channels, 3, 3, 3], data).expect("finite weights")
}

/// Relative BT.2020 luminance and saturation of any tagged frame.
pub fn luminance_and_saturation(img: &TaggedImage) -> Result<(Tensor, Tensor)> {
    let (lin, _) = to_linear_bt2020(img)?;
    let peak = lin.tag().peak_nits;
    let (h, w) = (lin.height(), lin.width());
    let mut y = Vec::with_capacity(h * w);
    let mut sat = Vec::with_capacity(h * w);
    for px in lin.pixels().chunks_exact(3) {
        let rgb = [px[0] / peak, px[1] / peak, px[2] / peak];
        y.push(luma(rgb));
        let max = rgb.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = rgb.iter().copied().fold(f64::INFINITY, f64::min);
        sat.push((max - min) / (max + SAT_EPS));
    }
    Ok((Tensor::new(vec![h, w], y)?, Tensor::new(vec![h, w], sat)?))
}

/// `log(1 + |∇Y|)` with central differences and replicated borders.
pub fn log_gradient(y: &Tensor) -> Result<Tensor> {
    let (h, w) = y.dims2()?;
    let at = |i: isize, j: isize| {
        let i = i.clamp(0, h as isize - 1) as usize;
        let j = j.clamp(0, w as isize - 1) as usize;
        y.at2(i, j)
    };
    let mut out = Tensor::zeros(&[h, w]);
    for i in 0..h as isize {
        for j in 0..w as isize {
            let gx = 0.5 * (at(i, j + 1) - at(i, j - 1));
            let gy = 0.5 * (at(i + 1, j) - at(i - 1, j));
            out.set2(i as usize, j as usize, gx.hypot(gy).ln_1p());
        }
    }
    Ok(out)
}

/// 3×3 convolution with replicate padding. `maps` are `H × W` inputs;
/// `weights` is `C × maps.len() × 3 × 3`; the result is `H × W × C`.
pub fn conv3x3(maps: &[&Tensor], weights: &Tensor) -> Result<Tensor> {
    let shape = weights.shape();
    if shape.len() != 4 || shape[1] != maps.len() || shape[2] != 3 || shape[3] != 3 {
        return Err(dim("conv3x3", format!("weights {shape:?} for {} input maps", maps.len())));
    }
    let c = shape[0];
    let (h, w) = maps.first().ok_or_else(|| dim("conv3x3", "no input maps"))?.dims2()?;
    for m in maps {
        if m.dims2()? != (h, w) {
            return Err(dim("conv3x3", "input maps differ in size"));
        }
    }
    let wd = weights.data();
    let mut out = vec![0.0; h * w * c];
    for i in 0..h {
        for j in 0..w {
            for (ci, o) in out[(i * w + j) * c..(i * w + j + 1) * c].iter_mut().enumerate() {
                let mut acc = 0.0;
                for (mi, m) in maps.iter().enumerate() {
                    for di in 0..3 {
                        let y = (i + di).saturating_sub(1).min(h - 1);
                        for dj in 0..3 {
                            let x = (j + dj).saturating_sub(1).min(w - 1);
                            acc += wd[((ci * maps.len() + mi) * 3 + di) * 3 + dj] * m.at2(y, x);
                        }
                    }
                }
                *o = acc;
            }
        }
    }
    Tensor::new(vec![h, w, c], out)
}

pub fn extract_phys(img: &TaggedImage, conv_weights: &Tensor, mlp: &GlobalMlp) -> Result<PhysFeatures> {
    let (y_map, sat_map) = luminance_and_saturation(img)?;
    let loggrad_map = log_gradient(&y_map)?;
    let t_phys = conv3x3(&[&y_map, &loggrad_map, &sat_map], conv_weights)?;
    let s_g = global_stats(&y_map)?;
    let g = mlp.forward(&s_g)?;
    Ok(PhysFeatures {
        y_map,
        loggrad_map,
        sat_map,
        t_phys,
        s_g,
        g,
    })
}

/// Linear-interpolated percentile of sorted data, `q` in `[0, 100]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// `[mean, population std, p95, p99]`.
pub fn global_stats(map: &Tensor) -> Result<[f64; 4]> {
    if map.is_empty() {
        return Err(dim("global_stats", "empty map"));
    }
    let n = map.len() as f64;
    let mut sorted = map.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    // Shifting by the minimum keeps constant maps exact.
    let lo = sorted[0];
    let mean = lo + map.data().iter().map(|v| v - lo).sum::<f64>() / n;
    let var = map.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok([mean, var.sqrt(), percentile_sorted(&sorted, 95.0), percentile_sorted(&sorted, 99.0)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDescriptor {
    /// Band energies, DC first. They sum to the mean of the squared field.
    pub r: Vec<f64>,
}

/// Radial band index for normalized frequency `rho`; frequencies beyond
/// 0.5 (the diagonal corner) fall into the last band.
fn band_of(rho: f64, bands: usize) -> usize {
    ((rho / 0.5 * bands as f64).floor() as usize).min(bands - 1)
}

pub fn spectral_descriptor(y_map: &Tensor, bands: usize) -> Result<SpectralDescriptor> {
    if bands < 2 {
        return Err(Error::Config(format!("need at least 2 bands, got {bands}")));
    }
    let spec = rfft2(y_map)?;
    let (rows, cols) = (spec.rows, spec.cols);
    let p2 = ((rows * cols) as f64).powi(2);
    let mut r = vec![0.0; bands];
    for ky in 0..rows {
        let fy = ky.min(rows - ky) as f64 / rows as f64;
        for kx in 0..spec.half_cols() {
            let fx = kx as f64 / cols as f64;
            let band = band_of(fx.hypot(fy), bands);
            r[band] += spec.column_multiplicity(kx) * spec.bin(ky, kx).norm_sqr() / p2;
        }
    }
    Ok(SpectralDescriptor { r })
}

/// Summary of one feature map for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl MapSummary {
    pub fn of(t: &Tensor) -> Self {
        let d = t.data();
        Self {
            min: d.iter().copied().fold(f64::INFINITY, f64::min),
            max: d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: t.sum() / d.len().max(1) as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorimetry::{ColorSpaceTag, Primaries, Transfer};
    use proptest::prelude::{prop_assert, proptest};

    fn linear_gray(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> TaggedImage {
        TaggedImage::from_fn(h, w, ColorSpaceTag::linear2020(100.0), |y, x| [100.0 * f(y, x); 3]).unwrap()
    }

    fn delta_weights() -> Tensor {
        let mut w = Tensor::zeros(&[3, 3, 3, 3]);
        for c in 0..3 {
            w.data_mut()[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
        }
        w
    }

    #[test]
    fn flat_field() {
        let img = linear_gray(6, 7, |_, _| 0.4);
        let f = extract_phys(&img, &seeded_conv_weights(4, 1), &GlobalMlp::seeded(8, 8, 2)).unwrap();
        assert!(f.loggrad_map.data().iter().all(|&v| v == 0.0));
        assert!(f.sat_map.data().iter().all(|&v| v.abs() < 1e-12));
        assert!(f.s_g[1].abs() < 1e-12);
        assert_eq!(f.t_phys.shape(), &[6, 7, 4]);
        assert_eq!(f.g.len(), 8);
    }

    #[test]
    fn delta_kernel_restacks_inputs() {
        let img = TaggedImage::from_fn(5, 6, ColorSpaceTag::linear2020(100.0), |y, x| {
            [10.0 * x as f64, 5.0 * y as f64, 20.0]
        })
        .unwrap();
        let f = extract_phys(&img, &delta_weights(), &GlobalMlp::seeded(4, 3, 0)).unwrap();
        for i in 0..5 {
            for j in 0..6 {
                let k = (i * 6 + j) * 3;
                assert_eq!(f.t_phys.data()[k], f.y_map.at2(i, j));
                assert_eq!(f.t_phys.data()[k + 1], f.loggrad_map.at2(i, j));
                assert_eq!(f.t_phys.data()[k + 2], f.sat_map.at2(i, j));
            }
        }
    }

    #[test]
    fn ramp_gradient() {
        let w = 16;
        let img = linear_gray(4, w, |_, x| x as f64 / w as f64);
        let (y, _) = luminance_and_saturation(&img).unwrap();
        let lg = log_gradient(&y).unwrap();
        for i in 0..4 {
            for j in 1..w - 1 {
                assert!((lg.at2(i, j) - (1.0 / w as f64).ln_1p()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sdr_input_is_linearized() {
        let sdr = TaggedImage::new(1, 1, vec![1.0, 1.0, 1.0], ColorSpaceTag::sdr709(100.0)).unwrap();
        let (y, sat) = luminance_and_saturation(&sdr).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(sat.data()[0] < 1e-9);
        let tag = ColorSpaceTag::new(Primaries::Bt709, Transfer::Gamma709, 100.0).unwrap();
        let half = TaggedImage::new(1, 1, vec![0.5; 3], tag).unwrap();
        let (y, _) = luminance_and_saturation(&half).unwrap();
        assert!((y.data()[0] - crate::colorimetry::rec709_inverse_oetf(0.5)).abs() < 1e-12);
    }

    #[test]
    fn percentile_cases() {
        let grid = Tensor::from_vec((0..100).map(|v| v as f64).collect());
        let s = global_stats(&grid).unwrap();
        assert!((s[2] - 94.05).abs() < 1e-12);
        assert!((s[3] - 98.01).abs() < 1e-12);
        let c = global_stats(&Tensor::from_vec(vec![0.3; 17])).unwrap();
        assert_eq!(c, [0.3, 0.0, 0.3, 0.3]);
        assert!(global_stats(&Tensor::from_vec(vec![])).is_err());
    }

    #[test]
    fn flat_spectrum_is_dc_only() {
        let d = spectral_descriptor(&Tensor::new(vec![8, 8], vec![0.7; 64]).unwrap(), 8).unwrap();
        assert!((d.r[0] - 0.49).abs() < 1e-12);
        assert!(d.r[1..].iter().all(|&v| v <= 1e-12));
    }

    #[test]
    fn checkerboard_is_last_band() {
        let data = (0..64).map(|k| if (k / 8 + k % 8) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let d = spectral_descriptor(&Tensor::new(vec![8, 8], data).unwrap(), 6).unwrap();
        assert!((d.r[5] - 1.0).abs() < 1e-12);
        assert!(d.r[..5].iter().all(|&v| v <= 1e-12));
        assert!(spectral_descriptor(&Tensor::new(vec![8, 8], vec![0.0; 64]).unwrap(), 1).is_err());
    }

    #[test]
    fn translation_equivariance_of_maps() {
        let f = |y: usize, x: usize| ((x * 7 + y * 3) % 11) as f64 / 11.0;
        let a = linear_gray(12, 12, f);
        let b = linear_gray(12, 12, |y, x| f(y, x + 2));
        let (ya, sa) = luminance_and_saturation(&a).unwrap();
        let (yb, sb) = luminance_and_saturation(&b).unwrap();
        let (ga, gb) = (log_gradient(&ya).unwrap(), log_gradient(&yb).unwrap());
        for i in 1..11 {
            for j in 1..8 {
                assert_eq!(ga.at2(i, j + 2), gb.at2(i, j));
                assert_eq!(ya.at2(i, j + 2), yb.at2(i, j));
                assert_eq!(sa.at2(i, j + 2), sb.at2(i, j));
            }
        }
    }

    proptest! {
        #[test]
        fn periodic_shift_keeps_band_energies(dy in 0usize..8, dx in 0usize..8, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let shifted: Vec<f64> = (0..64).map(|k| base[((k / 8 + dy) % 8) * 8 + (k % 8 + dx) % 8]).collect();
            let a = spectral_descriptor(&Tensor::new(vec![8, 8], base).unwrap(), 5).unwrap();
            let b = spectral_descriptor(&Tensor::new(vec![8, 8], shifted).unwrap(), 5).unwrap();
            for (x, y) in a.r.iter().zip(&b.r) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn stats_shift_with_constant(values in proptest::collection::vec(-5.0f64..5.0, 1..60), c in -3.0f64..3.0) {
            let a = global_stats(&Tensor::from_vec(values.clone())).unwrap();
            let b = global_stats(&Tensor::from_vec(values.iter().map(|v| v + c).collect())).unwrap();
            prop_assert!((b[0] - a[0] - c).abs() < 1e-9);
            prop_assert!((b[1] - a[1]).abs() < 1e-9);
            prop_assert!((b[2] - a[2] - c).abs() < 1e-9);
            prop_assert!((b[3] - a[3] - c).abs() < 1e-9);
            prop_assert!(a[2] <= a[3]);
        }

        #[test]
        fn stats_are_permutation_invariant(mut values in proptest::collection::vec(-5.0f64..5.0, 1..60)) {
            let a = global_stats(&Tensor::from_vec(values.clone())).unwrap();
            values.reverse();
            let b = global_stats(&Tensor::from_vec(values)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn parseval_on_noise(seed in 0u64..10_000, h in 3usize..12, w in 3usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let mean_sq = data.iter().map(|v| v * v).sum::<f64>() / (h * w) as f64;
            let d = spectral_descriptor(&Tensor::new(vec![h, w], data).unwrap(), 8).unwrap();
            let total: f64 = d.r.iter().sum();
            prop_assert!((total - mean_sq).abs() <= 1e-9 * mean_sq);
            prop_assert!(d.r.iter().all(|&v| v >= 0.0));
        }
    }
}
