//! Forward tone-mapping operators and the SDR degradation chain used to
//! manufacture paired training data from HDR frames.
//!
//! [`tone_map`] takes linear BT.2020 in cd/m² (tag peak = mastering peak) and
//! returns linear BT.2020 in cd/m² tagged with the operator's target peak, so
//! `value / target_peak` is the relative SDR signal. [`degrade`] chains PQ
//! decode, tone mapping, BT.709 gamut clamp, BT.709 encoding, 8-bit
//! quantization and an optional block-DCT codec proxy.

use serde::{Deserialize, Serialize};

use crate::colorimetry::{
    apply_transfer, convert_primaries, gamut_matrix, luma, pq_decode, pq_encode, rec709_inverse_oetf,
    ColorSpaceTag, Direction, Matrix3, Primaries, TaggedImage, Transfer, PQ_PEAK_NITS,
};
use crate::error::{Error, Result};
use crate::rqs::RqsParams;

pub const DEFAULT_TARGET_PEAK: f64 = 100.0;

/// BT.2446 method C parameters.
const C_CROSSTALK: f64 = 0.05;
const C_K1: f64 = 0.83802;
const C_K3: f64 = 0.74204;
const C_INFLECTION_SDR: f64 = 58.5;

/// ARRI LogC3 (EI 800) curve.
const LOGC_CUT: f64 = 0.010591;
const LOGC_A: f64 = 5.555556;
const LOGC_B: f64 = 0.052272;
const LOGC_C: f64 = 0.247190;
const LOGC_D: f64 = 0.385537;
const LOGC_E: f64 = 5.367655;
const LOGC_F: f64 = 0.092809;
pub const DEFAULT_LOGC_EXPOSURE: f64 = 0.18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToneKind {
    Reinhard,
    Bt2446A,
    Bt2446CGm,
    HardClipGm,
    Bt2390EetfGm,
    LogC,
    /// Spline look for pipeline tests; passthrough without a look.
    ExpertStub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneOperator {
    pub kind: ToneKind,
    /// Display peak of the SDR output in cd/m².
    #[serde(default = "default_target_peak")]
    pub target_peak_nits: f64,
    /// Scene-linear gain applied before the LogC curve (100 cd/m² ↦ 1.0).
    #[serde(default = "default_exposure")]
    pub exposure: f64,
    /// Luminance look for `ExpertStub`, from `[0, source peak]` onto
    /// `[0, target peak]`.
    #[serde(default)]
    pub look: Option<RqsParams>,
}

fn default_target_peak() -> f64 {
    DEFAULT_TARGET_PEAK
}

fn default_exposure() -> f64 {
    DEFAULT_LOGC_EXPOSURE
}

impl ToneOperator {
    pub fn new(kind: ToneKind) -> Self {
        Self {
            kind,
            target_peak_nits: DEFAULT_TARGET_PEAK,
            exposure: DEFAULT_LOGC_EXPOSURE,
            look: None,
        }
    }

    pub fn expert(look: Option<RqsParams>) -> Self {
        Self {
            look,
            ..Self::new(ToneKind::ExpertStub)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("target_peak_nits", self.target_peak_nits), ("exposure", self.exposure)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.target_peak_nits > PQ_PEAK_NITS {
            return Err(Error::Config(format!("target peak {} exceeds {PQ_PEAK_NITS}", self.target_peak_nits)));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let base = serde_json::to_value(self.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        match (&self.kind, &self.look) {
            (ToneKind::ExpertStub, Some(look)) => {
                let mid = look.eval(0.5);
                format!("{base}_{:03}", (mid * 1000.0).round() as i64)
            }
            _ => base,
        }
    }

    /// Maps one linear BT.2020 pixel in cd/m² to cd/m² at the target peak.
    pub fn map_pixel(&self, rgb: [f64; 3], source_peak: f64) -> [f64; 3] {
        let target = self.target_peak_nits;
        let out = match self.kind {
            ToneKind::Reinhard => {
                let y = luma(rgb) / source_peak;
                scale_rgb(rgb, if y > 0.0 { target * (y / (1.0 + y)) / (y * source_peak) } else { 0.0 })
            }
            ToneKind::Bt2446A => bt2446a(rgb, source_peak, target),
            ToneKind::Bt2446CGm => gamut_map_709(bt2446c(rgb, target)),
            ToneKind::HardClipGm => gamut_map_709(rgb.map(|c| c.min(target))),
            ToneKind::Bt2390EetfGm => {
                let y = luma(rgb);
                let mapped = bt2390_eetf(y, source_peak, target);
                gamut_map_709(scale_rgb(rgb, if y > 0.0 { mapped / y } else { 0.0 }))
            }
            ToneKind::LogC => rgb.map(|c| {
                let code = logc3(self.exposure * c / 100.0).min(1.0);
                rec709_inverse_oetf(code) * target
            }),
            ToneKind::ExpertStub => match &self.look {
                None => rgb,
                Some(look) => {
                    let y = luma(rgb);
                    let rel = (y / source_peak).clamp(0.0, 1.0);
                    scale_rgb(rgb, if y > 0.0 { look.eval(rel) * target / y } else { 0.0 })
                }
            },
        };
        out.map(|c| c.clamp(0.0, PQ_PEAK_NITS))
    }
}

/// The eight-operator grid used for synthesis.
pub fn default_operators() -> Vec<ToneOperator> {
    let mut ops: Vec<ToneOperator> = [
        ToneKind::Reinhard,
        ToneKind::Bt2446A,
        ToneKind::Bt2446CGm,
        ToneKind::HardClipGm,
        ToneKind::Bt2390EetfGm,
        ToneKind::LogC,
    ]
    .into_iter()
    .map(ToneOperator::new)
    .collect();
    ops.push(ToneOperator::expert(Some(expert_look(0.62, 1.6))));
    ops.push(ToneOperator::expert(Some(expert_look(0.48, 0.9))));
    ops
}

/// A two-bin look that puts mid-scale luminance at `mid` with slope
/// `mid_slope` there.
pub fn expert_look(mid: f64, mid_slope: f64) -> RqsParams {
    RqsParams::new(vec![0.0, 0.5, 1.0], vec![0.0, mid, 1.0], vec![2.0 * mid, mid_slope, 0.4])
        .expect("fixed look parameters are valid")
}

fn scale_rgb(rgb: [f64; 3], s: f64) -> [f64; 3] {
    rgb.map(|c| c * s)
}

/// Desaturates toward luminance until the pixel fits inside BT.709, and
/// returns it in BT.2020.
fn gamut_map_709(rgb2020: [f64; 3]) -> [f64; 3] {
    let to709 = gamut_matrix(Primaries::Bt2020, Primaries::Bt709);
    let v = to709.apply(rgb2020);
    let y = luma(rgb2020);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        return rgb2020;
    }
    if y <= 0.0 {
        return [0.0; 3];
    }
    let s = y / (y - min);
    let mapped = v.map(|c| (y + s * (c - y)).max(0.0));
    gamut_matrix(Primaries::Bt709, Primaries::Bt2020).apply(mapped).map(|c| c.max(0.0))
}

fn bt2446a(rgb: [f64; 3], source_peak: f64, target: f64) -> [f64; 3] {
    let e = rgb.map(|c| (c / source_peak).clamp(0.0, 1.0).powf(1.0 / 2.4));
    let y = luma(e);
    let rho_hdr = 1.0 + 32.0 * (source_peak / PQ_PEAK_NITS).powf(1.0 / 2.4);
    let yp = (1.0 + (rho_hdr - 1.0) * y).ln() / rho_hdr.ln();
    let yc = if yp <= 0.7399 {
        1.0770 * yp
    } else if yp < 0.9909 {
        -1.1510 * yp * yp + 2.7811 * yp - 0.6302
    } else {
        0.5 * yp + 0.5
    };
    let rho_sdr = 1.0 + 32.0 * (target / PQ_PEAK_NITS).powf(1.0 / 2.4);
    let y_sdr = (rho_sdr.powf(yc) - 1.0) / (rho_sdr - 1.0);
    let (cb, cr) = ((e[2] - y) / 1.8814, (e[0] - y) / 1.4746);
    let f = if y > 0.0 { y_sdr / (1.1 * y) } else { 0.0 };
    let (cb, cr) = (f * cb, f * cr);
    let y_tmo = y_sdr - (0.1 * cr).max(0.0);
    let r = y_tmo + 1.4746 * cr;
    let b = y_tmo + 1.8814 * cb;
    let g = (y_tmo - 0.2627 * r - 0.0593 * b) / 0.6780;
    [r, g, b].map(|c| c.clamp(0.0, 1.0).powf(2.4) * target)
}

fn bt2446c(rgb: [f64; 3], target: f64) -> [f64; 3] {
    let a = C_CROSSTALK;
    let crosstalk = Matrix3([[1.0 - 2.0 * a, a, a], [a, 1.0 - 2.0 * a, a], [a, a, 1.0 - 2.0 * a]]);
    let mixed = crosstalk.apply(rgb);
    let y = luma(mixed);
    let yip = C_INFLECTION_SDR / C_K1;
    let k2 = C_K1 * (1.0 - C_K3) * yip;
    let k4 = C_K1 * yip - k2 * (1.0 - C_K3).ln();
    let y_sdr = if y < yip { C_K1 * y } else { k2 * (y / yip - C_K3).ln() + k4 };
    let scaled = scale_rgb(mixed, if y > 0.0 { y_sdr * (target / 100.0) / y } else { 0.0 });
    let inv = crosstalk.inverse().expect("crosstalk matrix is invertible");
    inv.apply(scaled).map(|c| c.max(0.0))
}

/// PQ-domain Hermite roll-off of luminance `y` (cd/m²) from `source_peak`
/// onto `target_peak`.
pub fn bt2390_eetf(y: f64, source_peak: f64, target_peak: f64) -> f64 {
    let pw = pq_encode(source_peak);
    let e1 = pq_encode(y) / pw;
    let max_lum = pq_encode(target_peak) / pw;
    let ks = 1.5 * max_lum - 0.5;
    if ks >= 1.0 || e1 < ks {
        return y;
    }
    let t = (e1 - ks) / (1.0 - ks);
    let (t2, t3) = (t * t, t * t * t);
    let e2 = (2.0 * t3 - 3.0 * t2 + 1.0) * ks + (t3 - 2.0 * t2 + t) * (1.0 - ks) + (-2.0 * t3 + 3.0 * t2) * max_lum;
    pq_decode(e2 * pw)
}

pub fn logc3(x: f64) -> f64 {
    if x > LOGC_CUT {
        LOGC_C * (LOGC_A * x + LOGC_B).log10() + LOGC_D
    } else {
        LOGC_E * x + LOGC_F
    }
}

/// Applies `op` to a linear BT.2020 frame in cd/m².
pub fn tone_map(op: &ToneOperator, hdr: &TaggedImage) -> Result<TaggedImage> {
    op.validate()?;
    hdr.require("tone_map", Transfer::Linear, Some(Primaries::Bt2020))?;
    let source_peak = hdr.tag().peak_nits;
    let mut out = Vec::with_capacity(hdr.pixels().len());
    for px in hdr.pixels().chunks_exact(3) {
        out.extend_from_slice(&op.map_pixel([px[0], px[1], px[2]], source_peak));
    }
    TaggedImage::new(hdr.height(), hdr.width(), out, ColorSpaceTag::linear2020(op.target_peak_nits))
}

/// Codec quality level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Crf(u32);

impl Crf {
    pub const LEVELS: [u32; 3] = [23, 31, 39];

    pub fn new(value: u32) -> Result<Self> {
        if Self::LEVELS.contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::Config(format!("crf must be one of 23, 31, 39, got {value}")))
        }
    }

    pub fn all() -> [Crf; 3] {
        Self::LEVELS.map(Crf)
    }

    pub fn value(self) -> u32 {
        self.0
    }

    /// Quality-matrix scale `2^((crf − 23) / 6)`.
    pub fn scale(self) -> f64 {
        ((self.0 as f64 - 23.0) / 6.0).exp2()
    }
}

impl TryFrom<u32> for Crf {
    type Error = Error;

    fn try_from(v: u32) -> Result<Self> {
        Crf::new(v)
    }
}

impl From<Crf> for u32 {
    fn from(c: Crf) -> u32 {
        c.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub tmo: ToneOperator,
    /// `None` bypasses the codec proxy.
    pub crf: Option<Crf>,
    /// Recorded with every output. The chain itself draws no random numbers.
    pub seed: u64,
}

/// Rounds encoded samples to a `bits`-bit grid (half away from zero).
pub fn quantize(img: &TaggedImage, bits: u32) -> Result<TaggedImage> {
    if bits != 8 && bits != 10 {
        return Err(Error::Config(format!("unsupported bit depth {bits}")));
    }
    if img.tag().transfer == Transfer::Linear {
        return Err(Error::Tag {
            op: "quantize",
            expected: "encoded signal".into(),
            found: img.tag().describe(),
        });
    }
    let levels = ((1u32 << bits) - 1) as f64;
    let pixels = img.pixels().iter().map(|&v| (v * levels).round() / levels).collect();
    TaggedImage::new(img.height(), img.width(), pixels, img.tag())
}

/// JPEG Annex K luminance table.
const JPEG_LUMA: [[f64; 8]; 8] = [
    [16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0],
    [12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0],
    [14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0],
    [14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0],
    [18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0],
    [24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0],
    [49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0],
    [72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0],
];

fn dct_basis() -> [[f64; 8]; 8] {
    let mut c = [[0.0; 8]; 8];
    for (k, row) in c.iter_mut().enumerate() {
        let norm = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = norm * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
        }
    }
    c
}

/// Quantization step for DCT coefficient `(u, v)` of `[0, 1]` signals.
pub fn codec_step(crf: Crf, u: usize, v: usize) -> f64 {
    JPEG_LUMA[u][v] / (2.0 * 255.0) * crf.scale()
}

/// Block-DCT compression stand-in. DC coefficients round to the nearest
/// step; AC coefficients truncate toward zero so no block gains AC energy.
/// Edge blocks are padded by replication.
pub fn codec_proxy(img: &TaggedImage, crf: Option<Crf>) -> Result<TaggedImage> {
    if img.tag().transfer == Transfer::Linear {
        return Err(Error::Tag {
            op: "codec_proxy",
            expected: "encoded signal".into(),
            found: img.tag().describe(),
        });
    }
    let Some(crf) = crf else {
        return Ok(img.clone());
    };
    let (h, w) = (img.height(), img.width());
    let basis = dct_basis();
    let src = img.pixels();
    let mut out = src.to_vec();
    let mut block = [[0.0f64; 8]; 8];
    let mut tmp = [[0.0f64; 8]; 8];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for ch in 0..3 {
                for (i, row) in block.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        let (y, x) = ((by + i).min(h - 1), (bx + j).min(w - 1));
                        *v = src[(y * w + x) * 3 + ch];
                    }
                }
                // forward: C · B · Cᵀ
                for u in 0..8 {
                    for j in 0..8 {
                        tmp[u][j] = (0..8).map(|i| basis[u][i] * block[i][j]).sum();
                    }
                }
                for u in 0..8 {
                    for v in 0..8 {
                        let coef: f64 = (0..8).map(|j| tmp[u][j] * basis[v][j]).sum();
                        let step = codec_step(crf, u, v);
                        block[u][v] = if u == 0 && v == 0 {
                            (coef / step).round() * step
                        } else {
                            (coef / step).trunc() * step
                        };
                    }
                }
                // inverse: Cᵀ · Q · C
                for i in 0..8 {
                    for v in 0..8 {
                        tmp[i][v] = (0..8).map(|u| basis[u][i] * block[u][v]).sum();
                    }
                }
                for i in 0..8 {
                    for j in 0..8 {
                        let (y, x) = (by + i, bx + j);
                        if y < h && x < w {
                            let v: f64 = (0..8).map(|v| tmp[i][v] * basis[v][j]).sum();
                            out[(y * w + x) * 3 + ch] = v.clamp(0.0, 1.0);
                        }
                    }
                }
            }
        }
    }
    TaggedImage::new(h, w, out, img.tag())
}

/// Synthesizes an 8-bit BT.709 SDR frame from a PQ BT.2020 HDR frame.
pub fn degrade(hdr_pq: &TaggedImage, spec: &DegradationSpec) -> Result<TaggedImage> {
    hdr_pq.require("degrade", Transfer::Pq, Some(Primaries::Bt2020))?;
    let linear = apply_transfer(hdr_pq, Transfer::Pq, Direction::Decode)?;
    let sdr_linear = tone_map(&spec.tmo, &linear)?;
    let (sdr709, _) = convert_primaries(&sdr_linear, Primaries::Bt709)?;
    let encoded = apply_transfer(&sdr709, Transfer::Gamma709, Direction::Encode)?;
    let q = quantize(&encoded, 8)?;
    codec_proxy(&q, spec.crf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorimetry::rec709_oetf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gray(nits: f64) -> [f64; 3] {
        [nits; 3]
    }

    fn all_operators() -> Vec<ToneOperator> {
        let mut ops = default_operators();
        ops.push(ToneOperator::expert(None));
        ops
    }

    #[test]
    fn reinhard_closed_form() {
        let op = ToneOperator::new(ToneKind::Reinhard);
        assert_eq!(op.map_pixel(gray(0.0), 1000.0), [0.0; 3]);
        let at_peak = op.map_pixel(gray(1000.0), 1000.0);
        for c in at_peak {
            assert!((c / op.target_peak_nits - 0.5).abs() < 1e-12);
        }
        let px = op.map_pixel([300.0, 150.0, 60.0], 1000.0);
        let ratio = px[0] / px[1];
        assert!((ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn eetf_is_identity_when_peaks_match() {
        for y in [0.0, 0.01, 1.0, 57.3, 99.9, 100.0] {
            assert!((bt2390_eetf(y, 100.0, 100.0) - y).abs() <= 1e-9);
        }
        assert!(bt2390_eetf(1000.0, 1000.0, 100.0) <= 100.0 + 1e-9);
        assert!((bt2390_eetf(1000.0, 1000.0, 100.0) - 100.0).abs() < 1e-6);
    }

    #[test]
    fn bt2446c_is_continuous_at_inflection() {
        let yip = C_INFLECTION_SDR / C_K1;
        let below = bt2446c(gray(yip - 1e-9), 100.0);
        let above = bt2446c(gray(yip + 1e-9), 100.0);
        assert!((below[1] - above[1]).abs() < 1e-6);
    }

    #[test]
    fn bt2446a_maps_peak_white_near_target() {
        let out = bt2446a(gray(1000.0), 1000.0, 100.0);
        assert!(out[1] > 80.0 && out[1] <= 100.0, "{out:?}");
        assert_eq!(bt2446a(gray(0.0), 1000.0, 100.0), [0.0; 3]);
    }

    #[test]
    fn every_operator_is_monotone_in_luminance() {
        for op in all_operators() {
            for peak in [1000.0, 4000.0] {
                let mut prev = -1.0;
                for i in 0..4096 {
                    let nits = peak * i as f64 / 4095.0;
                    let y = luma(op.map_pixel(gray(nits), peak));
                    assert!(y >= prev - 1e-9, "{:?} drops at {nits}", op.kind);
                    prev = y;
                }
            }
        }
    }

    #[test]
    fn gamut_mapped_operators_stay_inside_709() {
        let to709 = gamut_matrix(Primaries::Bt2020, Primaries::Bt709);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let rgb = [rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0)];
            for kind in [ToneKind::Bt2446CGm, ToneKind::HardClipGm, ToneKind::Bt2390EetfGm] {
                let v = to709.apply(ToneOperator::new(kind).map_pixel(rgb, 1000.0));
                assert!(v.iter().all(|&c| c >= -1e-9), "{kind:?} {v:?}");
            }
        }
    }

    #[test]
    fn grid_has_eight_distinct_operators() {
        let ops = default_operators();
        assert_eq!(ops.len(), 8);
        let labels: std::collections::BTreeSet<String> = ops.iter().map(|o| o.label()).collect();
        assert_eq!(labels.len(), 8);
    }

    #[test]
    fn quantize_rules() {
        let tag = ColorSpaceTag::sdr709(100.0);
        let img = TaggedImage::new(1, 2, vec![0.5, 128.0 / 255.0, 0.0, 1.0, 0.25, 3.0 / 255.0], tag).unwrap();
        let q = quantize(&img, 8).unwrap();
        assert_eq!(q.pixels()[0], 128.0 / 255.0);
        assert_eq!(q.pixels()[1], 128.0 / 255.0);
        assert_eq!(q.pixels()[5], 3.0 / 255.0);
        let dense: Vec<f64> = (0..30_000).map(|i| i as f64 / 29_999.0).collect();
        let img = TaggedImage::new(1, 10_000, dense.clone(), tag).unwrap();
        let q = quantize(&img, 8).unwrap();
        let worst = q.pixels().iter().zip(&dense).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1.0 / 510.0 + 1e-15);
        assert!(matches!(quantize(&img, 12), Err(Error::Config(_))));
        let lin = TaggedImage::new(1, 1, vec![1.0; 3], ColorSpaceTag::linear2020(100.0)).unwrap();
        assert!(quantize(&lin, 8).is_err());
    }

    fn textured(h: usize, w: usize, seed: u64) -> TaggedImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TaggedImage::from_fn(h, w, ColorSpaceTag::sdr709(100.0), |y, x| {
            let base = 0.5 + 0.3 * ((x as f64 * 0.7).sin() * (y as f64 * 0.45).cos());
            let n: f64 = rng.gen_range(-0.15..0.15);
            [(base + n).clamp(0.0, 1.0), (base * 0.8).clamp(0.0, 1.0), (0.4 + n).clamp(0.0, 1.0)]
        })
        .unwrap()
    }

    #[test]
    fn codec_bypass_and_flat_blocks() {
        let img = textured(16, 16, 2);
        assert_eq!(codec_proxy(&img, None).unwrap(), img);
        let flat = TaggedImage::new(8, 8, vec![0.37; 192], ColorSpaceTag::sdr709(100.0)).unwrap();
        let crf = Crf::new(23).unwrap();
        let out = codec_proxy(&flat, Some(crf)).unwrap();
        let tol = codec_step(crf, 0, 0) / 16.0 + 1e-12;
        let first = out.pixels()[0];
        for v in out.pixels() {
            assert!((v - first).abs() < 1e-12);
            assert!((v - 0.37).abs() <= tol);
        }
    }

    #[test]
    fn codec_error_grows_with_crf() {
        let img = textured(64, 64, 3);
        let mae: Vec<f64> = Crf::all()
            .iter()
            .map(|&c| {
                let out = codec_proxy(&img, Some(c)).unwrap();
                out.pixels().iter().zip(img.pixels()).map(|(a, b)| (a - b).abs()).sum::<f64>() / img.pixels().len() as f64
            })
            .collect();
        assert!(mae[0] > 0.0 && mae[0] < mae[1] && mae[1] < mae[2], "{mae:?}");
    }

    #[test]
    fn codec_never_adds_block_energy() {
        let img = textured(32, 40, 4);
        for c in Crf::all() {
            let out = codec_proxy(&img, Some(c)).unwrap();
            for by in (0..32).step_by(8) {
                for bx in (0..40).step_by(8) {
                    for ch in 0..3 {
                        let energy = |im: &TaggedImage| {
                            let vals: Vec<f64> = (0..64).map(|k| im.pixel(by + k / 8, bx + k % 8)[ch]).collect();
                            let m = vals.iter().sum::<f64>() / 64.0;
                            vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                        };
                        assert!(energy(&out) <= energy(&img) + 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn crf_levels() {
        assert!(Crf::new(30).is_err());
        let s: Vec<f64> = Crf::all().iter().map(|c| c.scale()).collect();
        assert!(s[0] < s[1] && s[1] < s[2]);
        assert_eq!(serde_json::to_string(&Crf::new(31).unwrap()).unwrap(), "31");
        assert!(serde_json::from_str::<Crf>("24").is_err());
    }

    #[test]
    fn passthrough_chain_is_quantization_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nits: Vec<f64> = (0..48).map(|_| rng.gen_range(0.0..100.0)).collect();
        // Gray pixels are inside every gamut.
        let rgb: Vec<f64> = nits.iter().flat_map(|&n| [n, n, n]).collect();
        let pq = TaggedImage::new(4, 12, rgb.iter().map(|&v| pq_encode(v)).collect(), ColorSpaceTag::pq2020(1000.0)).unwrap();
        let spec = DegradationSpec {
            tmo: ToneOperator::expert(None),
            crf: None,
            seed: 0,
        };
        let out = degrade(&pq, &spec).unwrap();
        assert_eq!(out.tag(), ColorSpaceTag::sdr709(100.0));
        for (o, n) in out.pixels().iter().zip(&rgb) {
            let ideal = rec709_oetf(pq_decode(pq_encode(*n)) / 100.0);
            assert!((o - ideal).abs() <= 1.0 / 510.0 + 1e-9);
        }
    }

    #[test]
    fn degrade_is_deterministic_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pix: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.gen_range(0.0..0.75)).collect();
        let pq = TaggedImage::new(16, 16, pix, ColorSpaceTag::pq2020(1000.0)).unwrap();
        for tmo in default_operators() {
            let spec = DegradationSpec {
                tmo,
                crf: Some(Crf::new(31).unwrap()),
                seed: 9,
            };
            let a = degrade(&pq, &spec).unwrap();
            let b = degrade(&pq, &spec).unwrap();
            assert_eq!(a, b);
            assert!(a.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = DegradationSpec {
            tmo: default_operators().pop().unwrap(),
            crf: Some(Crf::new(39).unwrap()),
            seed: u64::MAX,
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<DegradationSpec>(&json).unwrap(), spec);
    }

    #[test]
    fn tone_map_checks_tags() {
        let pq = TaggedImage::new(1, 1, vec![0.5; 3], ColorSpaceTag::pq2020(1000.0)).unwrap();
        assert!(matches!(tone_map(&ToneOperator::new(ToneKind::Reinhard), &pq), Err(Error::Tag { .. })));
        assert!(matches!(
            TaggedImage::new(1, 1, vec![-1.0, 0.0, 0.0], ColorSpaceTag::linear2020(1000.0)),
            Err(Error::Domain { .. })
        ));
    }
}
