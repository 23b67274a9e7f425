//! Portable float map (PFM) codec.
//!
//! Writer output is fixed: `Pf` (1 channel) or `PF` (3 channels), a newline,
//! `"<width> <height>"`, a newline, `-1.0` (little-endian), a newline, then
//! rows of `f32` stored bottom row first. The reader also accepts big-endian
//! files (positive scale) and arbitrary whitespace between header tokens.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FloatMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, top row first.
    pub data: Vec<f32>,
}

impl FloatMap {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::format(format!("PFM supports 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::format(format!(
                "PFM payload has {} values, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }
}

pub fn encode(map: &FloatMap) -> Vec<u8> {
    let magic = if map.channels == 3 { "PF" } else { "Pf" };
    let header = format!("{magic}\n{} {}\n-1.0\n", map.width, map.height);
    let mut out = Vec::with_capacity(header.len() + map.data.len() * 4);
    out.extend_from_slice(header.as_bytes());
    let stride = map.width * map.channels;
    for y in (0..map.height).rev() {
        for v in &map.data[y * stride..(y + 1) * stride] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<FloatMap> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => {
            return Err(Error::FormatAt {
                offset: 0,
                message: format!("bad PFM magic `{other}`"),
            })
        }
    };
    let width = parse_dim(bytes, &mut pos)?;
    let height = parse_dim(bytes, &mut pos)?;
    let scale_at = pos;
    let scale: f64 = next_token(bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::FormatAt {
            offset: scale_at,
            message: "unparseable PFM scale".into(),
        })?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::FormatAt {
            offset: scale_at,
            message: "PFM scale must be non-zero".into(),
        });
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::FormatAt {
            offset: pos,
            message: "missing separator after PFM header".into(),
        });
    }
    pos += 1;
    let little = scale < 0.0;
    let n = width * height * channels;
    let need = n * 4;
    if bytes.len() - pos != need {
        return Err(Error::FormatAt {
            offset: pos,
            message: format!("PFM payload is {} bytes, expected {need}", bytes.len() - pos),
        });
    }
    let stride = width * channels;
    let mut data = vec![0f32; n];
    for (file_row, chunk) in bytes[pos..].chunks_exact(stride * 4).enumerate() {
        let y = height - 1 - file_row;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let raw = [b[0], b[1], b[2], b[3]];
            data[y * stride + i] = if little {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
        }
    }
    Ok(FloatMap {
        width,
        height,
        channels,
        data,
    })
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
        if *pos - start > 32 {
            return Err(Error::FormatAt {
                offset: start,
                message: "PFM header token too long".into(),
            });
        }
    }
    if start == *pos {
        return Err(Error::FormatAt {
            offset: start,
            message: "truncated PFM header".into(),
        });
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_dim(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let at = *pos;
    let tok = next_token(bytes, pos)?;
    match tok.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::FormatAt {
            offset: at,
            message: format!("bad PFM dimension `{tok}`"),
        }),
    }
}
