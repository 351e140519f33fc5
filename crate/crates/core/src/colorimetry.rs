//! Transfer functions, gamut matrices, BT.2020 luma, ICtCp / ΔE_ITP and the
//! PU21 perceptual encoding.
//!
//! Linear images always carry absolute luminance in cd/m². Encoded images
//! carry signal values in `[0, 1]`; for BT.709 the tag's `peak_nits` is the
//! luminance of code value 1.0.

use serde::{Deserialize, Serialize};

use crate::error::{dim, Error, Result};
use crate::tensor::Tensor;

/// Absolute peak of the PQ signal range.
pub const PQ_PEAK_NITS: f64 = 10_000.0;

const PQ_M1: f64 = 2610.0 / 16384.0;
const PQ_M2: f64 = 2523.0 * 128.0 / 4096.0;
const PQ_C1: f64 = 3424.0 / 4096.0;
const PQ_C2: f64 = 2413.0 * 32.0 / 4096.0;
const PQ_C3: f64 = 2392.0 * 32.0 / 4096.0;

// BT.2020 high-precision form of the BT.709 OETF constants; keeps the two
// segments continuous.
const REC709_ALPHA: f64 = 1.099_296_826_809_44;
const REC709_BETA: f64 = 0.018_053_968_510_807;

/// BT.2020 luma weights.
pub const LUMA_2020: [f64; 3] = [0.2627, 0.6780, 0.0593];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primaries {
    Bt709,
    Bt2020,
    P3,
}

impl Primaries {
    /// CIE xy chromaticities of R, G, B.
    pub fn chromaticities(self) -> [[f64; 2]; 3] {
        match self {
            Primaries::Bt709 => [[0.64, 0.33], [0.30, 0.60], [0.15, 0.06]],
            Primaries::Bt2020 => [[0.708, 0.292], [0.170, 0.797], [0.131, 0.046]],
            Primaries::P3 => [[0.680, 0.320], [0.265, 0.690], [0.150, 0.060]],
        }
    }
}

pub const D65_WHITE: [f64; 2] = [0.3127, 0.3290];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transfer {
    Linear,
    Pq,
    Gamma709,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorSpaceTag {
    pub primaries: Primaries,
    pub transfer: Transfer,
    pub peak_nits: f64,
}

impl ColorSpaceTag {
    pub fn new(primaries: Primaries, transfer: Transfer, peak_nits: f64) -> Result<Self> {
        let tag = Self {
            primaries,
            transfer,
            peak_nits,
        };
        tag.validate()?;
        Ok(tag)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_nits > 0.0) || !self.peak_nits.is_finite() {
            return Err(Error::Config(format!("peak_nits must be > 0, got {}", self.peak_nits)));
        }
        if self.transfer == Transfer::Pq && self.peak_nits > PQ_PEAK_NITS {
            return Err(Error::Config(format!(
                "PQ peak {} exceeds {PQ_PEAK_NITS} cd/m²",
                self.peak_nits
            )));
        }
        Ok(())
    }

    pub fn pq2020(peak_nits: f64) -> Self {
        Self {
            primaries: Primaries::Bt2020,
            transfer: Transfer::Pq,
            peak_nits,
        }
    }

    pub fn linear2020(peak_nits: f64) -> Self {
        Self {
            primaries: Primaries::Bt2020,
            transfer: Transfer::Linear,
            peak_nits,
        }
    }

    pub fn sdr709(peak_nits: f64) -> Self {
        Self {
            primaries: Primaries::Bt709,
            transfer: Transfer::Gamma709,
            peak_nits,
        }
    }

    pub fn describe(&self) -> String {
        format!("{:?}/{:?}/{}nits", self.primaries, self.transfer, self.peak_nits)
    }
}

/// An `H × W × 3` interleaved RGB frame with its color space.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    tag: ColorSpaceTag,
}

impl TaggedImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, tag: ColorSpaceTag) -> Result<Self> {
        tag.validate()?;
        if pixels.len() != height * width * 3 {
            return Err(dim(
                "TaggedImage::new",
                format!("{height}x{width}x3 needs {} samples, got {}", height * width * 3, pixels.len()),
            ));
        }
        let img = Self {
            height,
            width,
            pixels,
            tag,
        };
        img.check_range()?;
        Ok(img)
    }

    /// Builds an image by evaluating `f(y, x)` for each pixel.
    pub fn from_fn(
        height: usize,
        width: usize,
        tag: ColorSpaceTag,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, pixels, tag)
    }

    pub(crate) fn from_parts(height: usize, width: usize, pixels: Vec<f64>, tag: ColorSpaceTag) -> Self {
        debug_assert_eq!(pixels.len(), height * width * 3);
        Self {
            height,
            width,
            pixels,
            tag,
        }
    }

    fn check_range(&self) -> Result<()> {
        let (lo, hi, what) = match self.tag.transfer {
            Transfer::Linear => (0.0, PQ_PEAK_NITS, "linear sample"),
            _ => (0.0, 1.0, "encoded sample"),
        };
        for (i, &v) in self.pixels.iter().enumerate() {
            if !(v >= lo && v <= hi) {
                return Err(Error::Domain {
                    what,
                    index: i / 3,
                    value: v,
                });
            }
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn tag(&self) -> ColorSpaceTag {
        self.tag
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn same_extent(&self, other: &TaggedImage) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn require(&self, op: &'static str, transfer: Transfer, primaries: Option<Primaries>) -> Result<()> {
        let ok = self.tag.transfer == transfer && primaries.is_none_or(|p| p == self.tag.primaries);
        if ok {
            Ok(())
        } else {
            Err(Error::Tag {
                op,
                expected: match primaries {
                    Some(p) => format!("{p:?}/{transfer:?}"),
                    None => format!("{transfer:?}"),
                },
                found: self.tag.describe(),
            })
        }
    }
}

/// Signal level below which the ST 2084 closed form returns exactly zero.
fn pq_floor_signal() -> f64 {
    PQ_C1.powf(PQ_M2)
}

/// Signal where the linear toe joins the closed form. Below it both
/// directions are linear so that 0 maps to 0 and the pair stays a bijection.
fn pq_toe_signal() -> f64 {
    2.0 * pq_floor_signal()
}

fn pq_decode_closed(signal: f64) -> f64 {
    let p = signal.powf(1.0 / PQ_M2);
    let num = (p - PQ_C1).max(0.0);
    PQ_PEAK_NITS * (num / (PQ_C2 - PQ_C3 * p)).powf(1.0 / PQ_M1)
}

fn pq_encode_closed(nits: f64) -> f64 {
    let y = (nits / PQ_PEAK_NITS).powf(PQ_M1);
    ((PQ_C1 + PQ_C2 * y) / (1.0 + PQ_C3 * y)).powf(PQ_M2)
}

/// PQ inverse EOTF: absolute luminance to signal.
pub fn pq_encode(nits: f64) -> f64 {
    let nits = nits.clamp(0.0, PQ_PEAK_NITS);
    let toe_nits = pq_decode_closed(pq_toe_signal());
    if nits < toe_nits {
        nits / toe_nits * pq_toe_signal()
    } else {
        pq_encode_closed(nits)
    }
}

/// PQ EOTF: signal to absolute luminance.
pub fn pq_decode(signal: f64) -> f64 {
    let signal = signal.clamp(0.0, 1.0);
    let toe = pq_toe_signal();
    if signal < toe {
        signal / toe * pq_decode_closed(toe)
    } else {
        pq_decode_closed(signal)
    }
}

/// BT.709 OETF on relative scene light in `[0, 1]`.
pub fn rec709_oetf(l: f64) -> f64 {
    let l = l.clamp(0.0, 1.0);
    if l < REC709_BETA {
        4.5 * l
    } else {
        REC709_ALPHA * l.powf(0.45) - (REC709_ALPHA - 1.0)
    }
}

pub fn rec709_inverse_oetf(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v < 4.5 * REC709_BETA {
        v / 4.5
    } else {
        ((v + REC709_ALPHA - 1.0) / REC709_ALPHA).powf(1.0 / 0.45)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Direction {
    Encode,
    Decode,
}

/// Applies (`Encode`: Linear → `transfer`) or inverts (`Decode`:
/// `transfer` → Linear) a transfer curve.
pub fn apply_transfer(img: &TaggedImage, transfer: Transfer, direction: Direction) -> Result<TaggedImage> {
    if transfer == Transfer::Linear {
        return Err(Error::Config("Linear is not a transfer curve".into()));
    }
    let peak = img.tag.peak_nits;
    let pixels: Vec<f64> = match direction {
        Direction::Encode => {
            img.require("apply_transfer(encode)", Transfer::Linear, None)?;
            match transfer {
                Transfer::Pq => img.pixels.iter().map(|&v| pq_encode(v)).collect(),
                Transfer::Gamma709 => img.pixels.iter().map(|&v| rec709_oetf(v / peak)).collect(),
                Transfer::Linear => unreachable!(),
            }
        }
        Direction::Decode => {
            img.require("apply_transfer(decode)", transfer, None)?;
            if let Some(i) = img.pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Domain {
                    what: "encoded sample",
                    index: i / 3,
                    value: img.pixels[i],
                });
            }
            match transfer {
                Transfer::Pq => img.pixels.iter().map(|&v| pq_decode(v)).collect(),
                Transfer::Gamma709 => img
                    .pixels
                    .iter()
                    .map(|&v| (rec709_inverse_oetf(v) * peak).min(PQ_PEAK_NITS))
                    .collect(),
                Transfer::Linear => unreachable!(),
            }
        }
    };
    let tag = ColorSpaceTag {
        transfer: match direction {
            Direction::Encode => transfer,
            Direction::Decode => Transfer::Linear,
        },
        ..img.tag
    };
    Ok(TaggedImage::from_parts(img.height, img.width, pixels, tag))
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Matrix3(pub [[f64; 3]; 3]);

impl Matrix3 {
    pub const IDENTITY: Matrix3 = Matrix3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn mul(&self, other: &Matrix3) -> Matrix3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        Matrix3(out)
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Result<Matrix3> {
        let det = self.det();
        if det.abs() <= 1e-9 {
            return Err(Error::Numerical(format!("singular 3x3 matrix (det {det:e})")));
        }
        let m = &self.0;
        let inv = 1.0 / det;
        Ok(Matrix3([
            [
                (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv,
                (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv,
                (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv,
            ],
            [
                (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv,
                (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv,
                (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv,
            ],
            [
                (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv,
                (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv,
                (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv,
            ],
        ]))
    }
}

fn xy_to_xyz(xy: [f64; 2]) -> [f64; 3] {
    [xy[0] / xy[1], 1.0, (1.0 - xy[0] - xy[1]) / xy[1]]
}

/// RGB → XYZ for the given primaries with D65 white at Y = 1.
pub fn rgb_to_xyz_matrix(p: Primaries) -> Matrix3 {
    let c = p.chromaticities();
    let cols = [xy_to_xyz(c[0]), xy_to_xyz(c[1]), xy_to_xyz(c[2])];
    let prim = Matrix3([
        [cols[0][0], cols[1][0], cols[2][0]],
        [cols[0][1], cols[1][1], cols[2][1]],
        [cols[0][2], cols[1][2], cols[2][2]],
    ]);
    let white = xy_to_xyz(D65_WHITE);
    // Primaries are never collinear, so the inverse exists.
    let s = prim.inverse().expect("primaries span XYZ").apply(white);
    let mut m = prim.0;
    for row in m.iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= s[j];
        }
    }
    Matrix3(m)
}

/// Linear-light conversion matrix between two sets of D65 primaries.
pub fn gamut_matrix(src: Primaries, dst: Primaries) -> Matrix3 {
    if src == dst {
        return Matrix3::IDENTITY;
    }
    let to_xyz = rgb_to_xyz_matrix(src);
    let from_xyz = rgb_to_xyz_matrix(dst).inverse().expect("primaries span XYZ");
    from_xyz.mul(&to_xyz)
}

/// Converts a linear image to other primaries. Negative results are clamped
/// to zero; the second value counts pixels where that happened.
pub fn convert_primaries(img: &TaggedImage, dst: Primaries) -> Result<(TaggedImage, usize)> {
    img.require("convert_primaries", Transfer::Linear, None)?;
    let m = gamut_matrix(img.tag.primaries, dst);
    let mut clamped = 0;
    let mut out = Vec::with_capacity(img.pixels.len());
    for px in img.pixels.chunks_exact(3) {
        let v = m.apply([px[0], px[1], px[2]]);
        if v.iter().any(|&c| c < 0.0) {
            clamped += 1;
        }
        out.extend(v.iter().map(|&c| c.clamp(0.0, PQ_PEAK_NITS)));
    }
    let tag = ColorSpaceTag {
        primaries: dst,
        ..img.tag
    };
    Ok((TaggedImage::from_parts(img.height, img.width, out, tag), clamped))
}

/// Decodes any tagged image to linear BT.2020 in cd/m². Returns the count of
/// pixels clamped by the gamut conversion.
pub fn to_linear_bt2020(img: &TaggedImage) -> Result<(TaggedImage, usize)> {
    let linear = match img.tag.transfer {
        Transfer::Linear => img.clone(),
        t => apply_transfer(img, t, Direction::Decode)?,
    };
    if linear.tag.primaries == Primaries::Bt2020 {
        Ok((linear, 0))
    } else {
        convert_primaries(&linear, Primaries::Bt2020)
    }
}

#[inline]
pub fn luma(rgb: [f64; 3]) -> f64 {
    LUMA_2020[0] * rgb[0] + LUMA_2020[1] * rgb[1] + LUMA_2020[2] * rgb[2]
}

/// Per-pixel BT.2020 luma of a linear BT.2020 image, as an `H × W` tensor.
pub fn luma2020(img: &TaggedImage) -> Result<Tensor> {
    img.require("luma2020", Transfer::Linear, Some(Primaries::Bt2020))?;
    let data = img.pixels.chunks_exact(3).map(|p| luma([p[0], p[1], p[2]])).collect();
    Tensor::new(vec![img.height, img.width], data)
}

const RGB2020_TO_LMS: Matrix3 = Matrix3([
    [1688.0 / 4096.0, 2146.0 / 4096.0, 262.0 / 4096.0],
    [683.0 / 4096.0, 2951.0 / 4096.0, 462.0 / 4096.0],
    [99.0 / 4096.0, 309.0 / 4096.0, 3688.0 / 4096.0],
]);

const LMS_PQ_TO_ICTCP: Matrix3 = Matrix3([
    [2048.0 / 4096.0, 2048.0 / 4096.0, 0.0],
    [6610.0 / 4096.0, -13613.0 / 4096.0, 7003.0 / 4096.0],
    [17933.0 / 4096.0, -17390.0 / 4096.0, -543.0 / 4096.0],
]);

/// ICtCp of one linear BT.2020 pixel in cd/m².
pub fn ictcp_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let lms = RGB2020_TO_LMS.apply(rgb);
    LMS_PQ_TO_ICTCP.apply([pq_encode(lms[0]), pq_encode(lms[1]), pq_encode(lms[2])])
}

pub fn rgb_to_ictcp(img: &TaggedImage) -> Result<Tensor> {
    img.require("rgb_to_ictcp", Transfer::Linear, Some(Primaries::Bt2020))?;
    let mut data = Vec::with_capacity(img.pixels.len());
    for p in img.pixels.chunks_exact(3) {
        data.extend_from_slice(&ictcp_pixel([p[0], p[1], p[2]]));
    }
    Tensor::new(vec![img.height, img.width, 3], data)
}

/// ΔE_ITP between two ICtCp triples (T = Ct/2, scale 720).
pub fn delta_e_itp_pixel(a: [f64; 3], b: [f64; 3]) -> f64 {
    let di = a[0] - b[0];
    let dt = 0.5 * (a[1] - b[1]);
    let dp = a[2] - b[2];
    720.0 * (di * di + dt * dt + dp * dp).sqrt()
}

/// Mean per-pixel ΔE_ITP of two linear BT.2020 images.
pub fn delta_e_itp(a: &TaggedImage, b: &TaggedImage) -> Result<f64> {
    a.require("delta_e_itp", Transfer::Linear, Some(Primaries::Bt2020))?;
    b.require("delta_e_itp", Transfer::Linear, Some(Primaries::Bt2020))?;
    if !a.same_extent(b) {
        return Err(dim(
            "delta_e_itp",
            format!("{}x{} vs {}x{}", a.height, a.width, b.height, b.width),
        ));
    }
    let n = a.pixel_count();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = a
        .pixels
        .chunks_exact(3)
        .zip(b.pixels.chunks_exact(3))
        .map(|(p, q)| {
            if p == q {
                0.0
            } else {
                delta_e_itp_pixel(ictcp_pixel([p[0], p[1], p[2]]), ictcp_pixel([q[0], q[1], q[2]]))
            }
        })
        .sum();
    Ok(total / n as f64)
}

/// PU21 "banding + glare" fit parameters.
pub const PU21_BANDING_GLARE: [f64; 7] = [
    0.353_487_901,
    0.373_465_862_9,
    8.277_049_286e-05,
    0.906_256_262_7,
    0.091_503_031_66,
    0.909_951_720_4,
    596.314_814_2,
];
pub const PU21_MIN_NITS: f64 = 0.005;
pub const PU21_MAX_NITS: f64 = 10_000.0;
pub const PU21_VARIANT: &str = "pu21-banding-glare";

/// PU21 code value of an absolute luminance; inputs are clamped to
/// `[0.005, 10000]` cd/m².
pub fn pu21(nits: f64) -> f64 {
    let p = &PU21_BANDING_GLARE;
    let y = nits.clamp(PU21_MIN_NITS, PU21_MAX_NITS);
    let x = y.powf(p[3]);
    p[6] * (((p[0] + p[1] * x) / (1.0 + p[2] * x)).powf(p[4]) - p[5])
}

/// Inverse of [`pu21`] on its range.
pub fn pu21_inverse(code: f64) -> f64 {
    let p = &PU21_BANDING_GLARE;
    let u = (code / p[6] + p[5]).powf(1.0 / p[4]);
    let x = (u - p[0]) / (p[1] - p[2] * u);
    x.max(0.0).powf(1.0 / p[3])
}

pub fn pu21_encode(nits: &Tensor) -> Tensor {
    nits.map(pu21)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(v: f64, tag: ColorSpaceTag) -> TaggedImage {
        TaggedImage::new(1, 1, vec![v; 3], tag).unwrap()
    }

    #[test]
    fn pq_endpoints_and_reference_value() {
        assert_eq!(pq_decode(1.0), 10_000.0);
        assert_eq!(pq_decode(0.0), 0.0);
        // 40-digit evaluation of the ST 2084 closed form.
        assert!((pq_encode(100.0) - 0.508_078_421_517_394_855).abs() < 1e-12);
        assert!((pq_encode(1000.0) - 0.751_827_096_247_041_773).abs() < 1e-12);
    }

    #[test]
    fn pq_round_trips() {
        for i in 0..=1000 {
            let v = i as f64 / 1000.0;
            assert!((pq_encode(pq_decode(v)) - v).abs() <= 1e-6 * v.max(1e-6));
            let n = 10_000.0 * v;
            assert!((pq_decode(pq_encode(n)) - n).abs() <= 1e-6 * n.max(1e-6));
        }
    }

    #[test]
    fn rec709_is_continuous_and_invertible() {
        let lo = 4.5 * REC709_BETA;
        let hi = REC709_ALPHA * REC709_BETA.powf(0.45) - (REC709_ALPHA - 1.0);
        assert!((lo - hi).abs() < 1e-9);
        for i in 0..=500 {
            let l = i as f64 / 500.0;
            assert!((rec709_inverse_oetf(rec709_oetf(l)) - l).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_transfer_flips_tag_and_checks_domain() {
        let img = gray(1.0, ColorSpaceTag::pq2020(1000.0));
        let lin = apply_transfer(&img, Transfer::Pq, Direction::Decode).unwrap();
        assert_eq!(lin.tag().transfer, Transfer::Linear);
        assert_eq!(lin.pixels()[0], 10_000.0);
        let back = apply_transfer(&lin, Transfer::Pq, Direction::Encode).unwrap();
        assert_eq!(back.tag().transfer, Transfer::Pq);

        // Wrong curve requested.
        assert!(matches!(
            apply_transfer(&img, Transfer::Gamma709, Direction::Decode),
            Err(Error::Tag { .. })
        ));
        let bad = TaggedImage::from_parts(1, 2, vec![0.1, 0.2, 0.3, 0.4, 1.5, 0.0], ColorSpaceTag::pq2020(1000.0));
        match apply_transfer(&bad, Transfer::Pq, Direction::Decode) {
            Err(Error::Domain { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn gamut_matrices() {
        assert_eq!(gamut_matrix(Primaries::P3, Primaries::P3), Matrix3::IDENTITY);
        // Extended-precision solve of the primaries/white system.
        let m = gamut_matrix(Primaries::Bt2020, Primaries::Bt709);
        let expect = [1.660_491_002_108_434_4, -0.587_641_138_788_549_5, -0.072_849_863_319_884_88];
        for (a, b) in m.0[0].iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let all = [Primaries::Bt709, Primaries::Bt2020, Primaries::P3];
        for a in all {
            for b in all {
                let round = gamut_matrix(a, b).mul(&gamut_matrix(b, a));
                for i in 0..3 {
                    for j in 0..3 {
                        let e = if i == j { 1.0 } else { 0.0 };
                        assert!((round.0[i][j] - e).abs() <= 1e-9);
                    }
                }
                let w = gamut_matrix(a, b).apply([1.0, 1.0, 1.0]);
                assert!(w.iter().all(|c| (c - 1.0).abs() <= 1e-6));
                assert!(gamut_matrix(a, b).det().abs() > 1e-9);
            }
        }
    }

    #[test]
    fn luma_weights() {
        let tag = ColorSpaceTag::linear2020(1000.0);
        let img = TaggedImage::new(1, 2, vec![5.0, 5.0, 5.0, 1.0, 0.0, 0.0], tag).unwrap();
        let y = luma2020(&img).unwrap();
        assert!((y.data()[0] - 5.0).abs() < 1e-12);
        assert_eq!(y.data()[1], 0.2627);
        let pq = gray(0.5, ColorSpaceTag::pq2020(1000.0));
        assert!(matches!(luma2020(&pq), Err(Error::Tag { .. })));
    }

    #[test]
    fn ictcp_reference_values() {
        assert_eq!(ictcp_pixel([0.0; 3])[0], pq_encode(0.0));
        let g = ictcp_pixel([80.0, 80.0, 80.0]);
        assert!(g[1].abs() < 1e-9 && g[2].abs() < 1e-9);
        // Matrix chain evaluated at 40 digits.
        let v = ictcp_pixel([100.0, 100.0, 0.0]);
        let expect = [0.498_787_875_702_398_42, -0.327_724_177_545_312_94, 0.049_470_174_880_626_967];
        for (a, b) in v.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn delta_e_reference_pair() {
        let tag = ColorSpaceTag::linear2020(1000.0);
        let a = TaggedImage::new(1, 1, vec![100.0, 100.0, 100.0], tag).unwrap();
        let b = TaggedImage::new(1, 1, vec![110.0, 100.0, 100.0], tag).unwrap();
        let d = delta_e_itp(&a, &b).unwrap();
        assert!((d - 7.982_103_359_319_111).abs() < 1e-9, "{d}");
        assert_eq!(delta_e_itp(&b, &a).unwrap(), d);
        assert_eq!(delta_e_itp(&a, &a).unwrap(), 0.0);
        let c = TaggedImage::new(1, 2, vec![0.0; 6], tag).unwrap();
        assert!(matches!(delta_e_itp(&a, &c), Err(Error::Dimension { .. })));
    }

    #[test]
    fn pu21_values_and_inverse() {
        assert!((pu21(100.0) - 256.383_897_312_703_96).abs() < 1e-9);
        assert!((pu21(10_000.0) - 595.393_920_020_094_97).abs() < 1e-9);
        assert_eq!(pu21(0.0), pu21(PU21_MIN_NITS));
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=4000 {
            let nits = 10f64.powf(-2.3 + 6.3 * i as f64 / 4000.0);
            let v = pu21(nits);
            assert!(v >= prev);
            prev = v;
            if nits >= PU21_MIN_NITS {
                assert!((pu21_inverse(v) - nits).abs() <= 1e-9 * nits.max(1.0));
            }
        }
    }
}
