//! Binary little-endian PLY in the common splat layout.

use crate::error::{Error, Result};
use crate::lifting::{Gaussian, GaussianSet};

/// Vertex properties, in file order.
pub const PROPERTIES: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

pub const RECORD_BYTES: usize = 4 * PROPERTIES.len();

pub fn header(count: usize) -> String {
    let mut h = format!("ply\nformat binary_little_endian 1.0\nelement vertex {count}\n");
    for p in PROPERTIES {
        h.push_str("property float ");
        h.push_str(p);
        h.push('\n');
    }
    h.push_str("end_header\n");
    h
}

fn record(g: &Gaussian) -> [f32; 17] {
    let [x, y, z] = g.mean;
    let [r, gc, b] = g.sh_dc;
    let [s0, s1, s2] = g.log_scale;
    let [q0, q1, q2, q3] = g.rotation;
    [x, y, z, 0.0, 0.0, 0.0, r, gc, b, g.opacity_logit, s0, s1, s2, q0, q1, q2, q3]
}

pub fn write(gaussians: &[Gaussian]) -> Vec<u8> {
    let h = header(gaussians.len());
    let mut out = Vec::with_capacity(h.len() + RECORD_BYTES * gaussians.len());
    out.extend_from_slice(h.as_bytes());
    for g in gaussians {
        for v in record(g) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn next_line(bytes: &[u8], pos: &mut usize) -> Result<(usize, String)> {
    let start = *pos;
    let Some(len) = bytes[start..].iter().position(|&b| b == b'\n') else {
        return Err(Error::FormatAt {
            offset: start,
            message: "unterminated PLY header".into(),
        });
    };
    *pos = start + len + 1;
    let line = std::str::from_utf8(&bytes[start..start + len]).map_err(|_| Error::FormatAt {
        offset: start,
        message: "PLY header is not UTF-8".into(),
    })?;
    Ok((start, line.trim_end_matches('\r').to_string()))
}

fn at(offset: usize, message: impl Into<String>) -> Error {
    Error::FormatAt {
        offset,
        message: message.into(),
    }
}

/// Parse a PLY written by [`write`] (or any file with the same vertex layout;
/// `comment` and `obj_info` header lines are ignored). Source provenance is
/// not stored in the PLY, so the returned set carries none.
pub fn read(bytes: &[u8]) -> Result<GaussianSet> {
    let mut pos = 0;
    let (off, magic) = next_line(bytes, &mut pos)?;
    if magic != "ply" {
        return Err(at(off, "missing 'ply' magic"));
    }
    let mut count: Option<usize> = None;
    let mut props = Vec::new();
    loop {
        let (off, line) = next_line(bytes, &mut pos)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => return Err(at(off, format!("unsupported PLY format '{other}'"))),
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(at(off, "duplicate vertex element"));
                }
                count = Some(n.parse().map_err(|_| at(off, format!("bad vertex count '{n}'")))?);
            }
            ["element", name, ..] => return Err(at(off, format!("unexpected element '{name}'"))),
            ["property", ty, name] => {
                if count.is_none() {
                    return Err(at(off, "property before vertex element"));
                }
                if *ty != "float" && *ty != "float32" {
                    return Err(at(off, format!("property '{name}' has type '{ty}', expected float")));
                }
                let i = props.len();
                if PROPERTIES.get(i) != Some(name) {
                    return Err(at(
                        off,
                        format!("property #{i} is '{name}', expected '{}'", PROPERTIES.get(i).unwrap_or(&"<none>")),
                    ));
                }
                props.push(name.to_string());
            }
            _ => return Err(at(off, format!("unrecognised header line '{line}'"))),
        }
    }
    let count = count.ok_or_else(|| at(pos, "no vertex element"))?;
    if props.len() != PROPERTIES.len() {
        return Err(at(pos, format!("{} vertex properties, expected {}", props.len(), PROPERTIES.len())));
    }
    let body = &bytes[pos..];
    let want = count
        .checked_mul(RECORD_BYTES)
        .ok_or_else(|| at(pos, format!("vertex count {count} too large")))?;
    if body.len() != want {
        return Err(at(
            pos + body.len().min(want),
            format!("vertex data is {} bytes, expected {want}", body.len()),
        ));
    }
    let mut gaussians = Vec::with_capacity(count);
    for (i, rec) in body.chunks_exact(RECORD_BYTES).enumerate() {
        let mut v = [0f32; 17];
        for (k, chunk) in rec.chunks_exact(4).enumerate() {
            let x = f32::from_le_bytes(chunk.try_into().unwrap());
            if !x.is_finite() {
                return Err(at(
                    pos + i * RECORD_BYTES + 4 * k,
                    format!("vertex {i} property '{}' is not finite", PROPERTIES[k]),
                ));
            }
            v[k] = x;
        }
        gaussians.push(Gaussian {
            mean: [v[0], v[1], v[2]],
            sh_dc: [v[6], v[7], v[8]],
            opacity_logit: v[9],
            log_scale: [v[10], v[11], v[12]],
            rotation: [v[13], v[14], v[15], v[16]],
        });
    }
    Ok(GaussianSet::new(gaussians))
}
