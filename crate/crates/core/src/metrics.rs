//! Full-reference quality metrics in PU21 space plus ΔE_ITP.

use serde::{Deserialize, Serialize};

use crate::colorimetry::{delta_e_itp, luma, pu21, to_linear_bt2020, TaggedImage, PU21_MAX_NITS, PU21_VARIANT};
use crate::error::{dim, Result};

pub const SCHEMA_VERSION: &str = "1.0.0";
/// Reported in place of +∞ for identical inputs.
pub const PSNR_CAP_DB: f64 = 99.0;
/// The shipped JSON schema for [`MetricReport`].
pub const METRIC_REPORT_SCHEMA: &str = include_str!("../schema/metric_report.schema.json");

/// PSNR peak: the PU21 code of the brightest encodable luminance.
pub fn psnr_range() -> f64 {
    pu21(PU21_MAX_NITS)
}

/// PSNR of a mean squared error against [`psnr_range`], capped at
/// [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (20.0 * (psnr_range() / mse.sqrt()).log10()).min(PSNR_CAP_DB)
}

fn linear_pair(reference: &TaggedImage, test: &TaggedImage) -> Result<(TaggedImage, TaggedImage, usize)> {
    if !reference.same_extent(test) {
        return Err(dim(
            "metrics",
            format!(
                "{}x{} vs {}x{}",
                reference.height(),
                reference.width(),
                test.height(),
                test.width()
            ),
        ));
    }
    let (a, ca) = to_linear_bt2020(reference)?;
    let (b, cb) = to_linear_bt2020(test)?;
    Ok((a, b, ca + cb))
}

fn pu21_mse(a: &TaggedImage, b: &TaggedImage, luma_only: bool) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, q) in a.pixels().chunks_exact(3).zip(b.pixels().chunks_exact(3)) {
        if luma_only {
            let d = pu21(luma([p[0], p[1], p[2]])) - pu21(luma([q[0], q[1], q[2]]));
            sum += d * d;
            n += 1;
        } else {
            for c in 0..3 {
                let d = pu21(p[c]) - pu21(q[c]);
                sum += d * d;
            }
            n += 3;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// PSNR in PU21 space over all channels, or over BT.2020 luma only.
pub fn psnr_pu21(reference: &TaggedImage, test: &TaggedImage, luma_only: bool) -> Result<f64> {
    let (a, b, _) = linear_pair(reference, test)?;
    Ok(psnr_from_mse(pu21_mse(&a, &b, luma_only)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: String,
    pub psnr_pu21: f64,
    pub psnr_y_pu21: f64,
    pub delta_e_itp_mean: f64,
    /// Pixels clamped while converting either input to BT.2020, over both
    /// inputs' pixel counts.
    pub clamp_fraction: f64,
    pub pu21_variant: String,
    pub psnr_range: f64,
    pub peak_nits: f64,
    pub psnr_cap_db: f64,
    pub hdr_vdp3: Option<f64>,
    pub hdr_lpips: Option<f64>,
    pub fr_hidrovqa: Option<f64>,
    pub ssim: Option<f64>,
}

pub fn metric_report(reference: &TaggedImage, test: &TaggedImage) -> Result<MetricReport> {
    let (a, b, clamped) = linear_pair(reference, test)?;
    let pixels = 2 * a.pixel_count();
    Ok(MetricReport {
        schema_version: SCHEMA_VERSION.into(),
        psnr_pu21: psnr_from_mse(pu21_mse(&a, &b, false)),
        psnr_y_pu21: psnr_from_mse(pu21_mse(&a, &b, true)),
        delta_e_itp_mean: delta_e_itp(&a, &b)?,
        clamp_fraction: if pixels == 0 { 0.0 } else { clamped as f64 / pixels as f64 },
        pu21_variant: PU21_VARIANT.into(),
        psnr_range: psnr_range(),
        peak_nits: PU21_MAX_NITS,
        psnr_cap_db: PSNR_CAP_DB,
        hdr_vdp3: None,
        hdr_lpips: None,
        fr_hidrovqa: None,
        ssim: None,
    })
}
