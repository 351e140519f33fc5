//! PFM frames with JSON sidecars carrying the color tag and provenance.
//!
//! PFM layout: ASCII header `PF\n<width> <height>\n<scale>\n` followed by
//! 32-bit floats, RGB interleaved, rows stored bottom to top. A negative
//! scale marks little-endian data; frames are always written that way.
//! Grayscale (`Pf`) files are read with the value replicated to RGB.
//!
//! The sidecar for `frame.pfm` is `frame.pfm.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::colorimetry::{ColorSpaceTag, TaggedImage};
use crate::error::{Error, Result};

pub const TOOL_NAME: &str = "lumaflux";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    #[serde(default)]
    pub inputs: Vec<InputDigest>,
}

impl Provenance {
    pub fn new(command: &str, config_sha256: String, seed: u64, inputs: Vec<InputDigest>) -> Self {
        Self {
            tool: TOOL_NAME.into(),
            tool_version: TOOL_VERSION.into(),
            command: command.into(),
            config_sha256,
            seed,
            inputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub tag: ColorSpaceTag,
    pub provenance: Option<Provenance>,
    /// Command-specific description of the frame, such as the degradation
    /// applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the compact JSON serialization of a config value.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&fs::read(path)?),
    })
}

pub fn sidecar_path(frame: &Path) -> PathBuf {
    let mut s = frame.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_pfm(img: &TaggedImage) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 12);
    for y in (0..h).rev() {
        for v in &img.pixels()[y * w * 3..(y + 1) * w * 3] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

/// Single-channel `Pf` file from a row-major `height × width` map.
pub fn encode_pfm_gray(height: usize, width: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::Dimension {
            op: "encode_pfm_gray",
            detail: format!("{} values for {height}x{width}", values.len()),
        });
    }
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for y in (0..height).rev() {
        for v in &values[y * width..(y + 1) * width] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Raw PFM contents: `(height, width, rgb samples top-down)`.
pub fn decode_pfm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PFM header".into()));
        }
        let t = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        Ok(t)
    };
    let channels = match token()?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::Format(format!("not a PFM file (magic {other:?})"))),
    };
    let parse_dim = |t: String| t.parse::<usize>().map_err(|_| Error::Format(format!("bad PFM dimension {t:?}")));
    let w = parse_dim(token()?)?;
    let h = parse_dim(token()?)?;
    let scale_tok = token()?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| Error::Format(format!("bad PFM scale {scale_tok:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format(format!("bad PFM scale {scale}")));
    }
    // exactly one whitespace byte separates the header from the data
    pos += 1;
    let need = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(channels * 4))
        .ok_or_else(|| Error::Format("PFM dimensions overflow".into()))?;
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() != need {
        return Err(Error::Format(format!("PFM payload is {} bytes, expected {need}", data.len())));
    }
    let little = scale < 0.0;
    let mut out = vec![0.0; h * w * 3];
    for (i, chunk) in data.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) } as f64;
        let (row, rest) = (i / (w * channels), i % (w * channels));
        let dst_row = h - 1 - row;
        if channels == 3 {
            out[dst_row * w * 3 + rest] = v;
        } else {
            out[(dst_row * w + rest) * 3..(dst_row * w + rest) * 3 + 3].fill(v);
        }
    }
    Ok((h, w, out))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_sidecar(frame: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(sidecar_path(frame))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes the frame and its sidecar.
pub fn write_frame(path: &Path, img: &TaggedImage, provenance: Option<Provenance>, detail: Option<serde_json::Value>) -> Result<()> {
    fs::write(path, encode_pfm(img))?;
    write_json(
        &sidecar_path(path),
        &Sidecar {
            tag: img.tag(),
            provenance,
            detail,
        },
    )
}

/// Reads a frame; the color tag comes from the sidecar, which must exist.
pub fn read_frame(path: &Path) -> Result<(TaggedImage, Sidecar)> {
    let bytes = fs::read(path)?;
    let sidecar = read_sidecar(path)?;
    let (h, w, px) = decode_pfm(&bytes)?;
    Ok((TaggedImage::new(h, w, px, sidecar.tag)?, sidecar))
}
