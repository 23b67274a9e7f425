//! Inverse-depth maps and the global/detail depth fusion.
//!
//! All interpolation happens on inverse depth. Fusion aligns a detailed but
//! scale-ambiguous map to a globally consistent one with an affine fit, then
//! swaps Laplacian pyramid levels: fine bands from the detail map, coarse
//! bands and the low-pass residual from the global map.

mod align;
mod fuse;
mod pyramid;

pub use align::{align_scale_shift, AffineAlignment, MIN_ALIGN_SAMPLES};
pub use fuse::{fuse, fuse_detailed, fuse_with_alignment, FusionOutput, FusionParams, MIN_INVERSE_DEPTH};
pub use pyramid::{build_pyramid, collapse_pyramid, LaplacianPyramid, PyramidLevel, BINOMIAL5};

use std::collections::VecDeque;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{unit_to_pixel, FaceCamera, FaceId};
use crate::pfm::{self, FloatMap};

/// Dense scalar map with a validity mask.
///
/// Holds inverse radial depth (1/m) in every pipeline stage; the same
/// container carries metric depth (m) before [`to_inverse`].
#[derive(Clone, Debug, PartialEq)]
pub struct InverseDepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl InverseDepthMap {
    /// All-valid map.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::format(format!(
                "map has {} values, expected {}x{}",
                values.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            mask: vec![true; values.len()],
            values,
        })
    }

    pub fn with_mask(width: usize, height: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != width * height {
            return Err(Error::format("mask size does not match map"));
        }
        let mut m = Self::new(width, height, values)?;
        m.mask = mask;
        Ok(m)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
            mask: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            mask: vec![true; values.len()],
            values,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn same_size(&self, other: &InverseDepthMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Check the inverse-depth invariant: every valid value finite and > 0.
    pub fn validate(&self) -> Result<()> {
        let bad = self
            .values
            .iter()
            .zip(&self.mask)
            .filter(|(v, m)| **m && !(v.is_finite() && **v > 0.0))
            .count();
        if bad > 0 {
            return Err(Error::data(format!(
                "{bad} valid pixels are non-positive or non-finite"
            )));
        }
        Ok(())
    }

    /// `(min, max)` over valid pixels.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        self.values
            .iter()
            .zip(&self.mask)
            .filter(|(_, m)| **m)
            .fold(None, |acc, (&v, _)| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    /// Bilinear lookup at a continuous position (integer = pixel center).
    /// Rows clamp; columns wrap when `wrap_x`, else clamp. `None` if any
    /// contributing pixel with non-zero weight is masked.
    #[inline]
    pub fn sample(&self, u: f64, v: f64, wrap_x: bool) -> Option<f64> {
        let x0f = u.floor();
        let y0f = v.floor();
        let fx = u - x0f;
        let fy = v - y0f;
        let (x0, y0) = (x0f as i64, y0f as i64);
        let col = |x: i64| {
            if wrap_x {
                x.rem_euclid(self.width as i64) as usize
            } else {
                x.clamp(0, self.width as i64 - 1) as usize
            }
        };
        let row = |y: i64| y.clamp(0, self.height as i64 - 1) as usize;
        let taps = [
            (col(x0), row(y0), (1.0 - fx) * (1.0 - fy)),
            (col(x0 + 1), row(y0), fx * (1.0 - fy)),
            (col(x0), row(y0 + 1), (1.0 - fx) * fy),
            (col(x0 + 1), row(y0 + 1), fx * fy),
        ];
        let mut acc = 0.0;
        for (x, y, w) in taps {
            if w == 0.0 {
                continue;
            }
            let i = y * self.width + x;
            if !self.mask[i] {
                return None;
            }
            acc += w * self.values[i];
        }
        Some(acc)
    }

    /// PFM with masked pixels written as 0.0.
    pub fn to_pfm(&self) -> FloatMap {
        let data = self
            .values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { v as f32 } else { 0.0 })
            .collect();
        FloatMap {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Read a single-channel PFM; zero and non-finite values become masked.
    pub fn from_pfm_masked(map: &FloatMap) -> Result<Self> {
        if map.channels != 1 {
            return Err(Error::format("depth PFM must be single-channel"));
        }
        let mut out = Self::new(
            map.width,
            map.height,
            map.data.iter().map(|&v| v as f64).collect(),
        )?;
        for (v, m) in out.values.iter().zip(out.mask.iter_mut()) {
            *m = v.is_finite() && *v > 0.0;
        }
        Ok(out)
    }

    /// Read a single-channel PFM that must be fully valid inverse depth.
    pub fn from_pfm_strict(map: &FloatMap) -> Result<Self> {
        if map.channels != 1 {
            return Err(Error::format("depth PFM must be single-channel"));
        }
        let out = Self::new(
            map.width,
            map.height,
            map.data.iter().map(|&v| v as f64).collect(),
        )?;
        out.validate()?;
        Ok(out)
    }

    pub fn save_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, pfm::encode(&self.to_pfm())).map_err(|e| Error::io(path, e))
    }

    pub fn load_pfm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pfm_masked(&pfm::decode(&bytes)?)
    }

    /// Round every value through `f32`, the precision of the PFM wire format.
    pub fn rounded_to_f32(&self) -> Self {
        Self {
            values: self.values.iter().map(|&v| v as f32 as f64).collect(),
            ..self.clone()
        }
    }
}

/// Pointwise reciprocal (metric depth <-> inverse depth). Masked pixels are
/// carried through untouched.
pub fn to_inverse(depth: &InverseDepthMap) -> Result<InverseDepthMap> {
    let bad = depth
        .values
        .iter()
        .zip(&depth.mask)
        .filter(|(v, m)| **m && !(v.is_finite() && **v > 0.0))
        .count();
    if bad > 0 {
        return Err(Error::data(format!(
            "{bad} valid pixels have non-positive or non-finite depth"
        )));
    }
    Ok(InverseDepthMap {
        values: depth
            .values
            .iter()
            .zip(&depth.mask)
            .map(|(&v, &m)| if m { 1.0 / v } else { v })
            .collect(),
        ..depth.clone()
    })
}

/// Bilinear resampling on inverse depth with pixel-center alignment. An
/// output pixel is valid only if every input with non-zero weight is valid.
pub fn resample_inverse_depth(x: &InverseDepthMap, new_width: usize, new_height: usize) -> InverseDepthMap {
    let sx = x.width as f64 / new_width as f64;
    let sy = x.height as f64 / new_height as f64;
    let mut values = vec![0.0; new_width * new_height];
    let mut mask = vec![false; new_width * new_height];
    values
        .par_chunks_mut(new_width)
        .zip(mask.par_chunks_mut(new_width))
        .enumerate()
        .for_each(|(j, (vrow, mrow))| {
            let v = ((j as f64 + 0.5) * sy - 0.5).clamp(0.0, x.height as f64 - 1.0);
            for i in 0..new_width {
                let u = ((i as f64 + 0.5) * sx - 0.5).clamp(0.0, x.width as f64 - 1.0);
                if let Some(s) = x.sample(u, v, false) {
                    vrow[i] = s;
                    mrow[i] = true;
                }
            }
        });
    InverseDepthMap {
        width: new_width,
        height: new_height,
        values,
        mask,
    }
}

/// Box-average downsampling by integer factors. An output pixel is valid
/// only if its whole input block is valid.
pub fn area_downsample(x: &InverseDepthMap, new_width: usize, new_height: usize) -> Result<InverseDepthMap> {
    if new_width == 0
        || new_height == 0
        || !x.width.is_multiple_of(new_width)
        || !x.height.is_multiple_of(new_height)
    {
        return Err(Error::argument(format!(
            "{}x{} does not downsample evenly to {new_width}x{new_height}",
            x.width, x.height
        )));
    }
    let (fx, fy) = (x.width / new_width, x.height / new_height);
    let norm = 1.0 / (fx * fy) as f64;
    let mut out = InverseDepthMap::filled(new_width, new_height, 0.0);
    for j in 0..new_height {
        for i in 0..new_width {
            let mut acc = 0.0;
            let mut ok = true;
            for y in j * fy..(j + 1) * fy {
                for xx in i * fx..(i + 1) * fx {
                    ok &= x.is_valid(xx, y);
                    acc += x.get(xx, y);
                }
            }
            let k = j * new_width + i;
            out.values[k] = if ok { acc * norm } else { 0.0 };
            out.mask[k] = ok;
        }
    }
    Ok(out)
}

/// Bring a map to `width x height`: exact copy, integer-factor area average
/// when shrinking evenly, bilinear otherwise.
pub fn resize_to(x: &InverseDepthMap, width: usize, height: usize) -> InverseDepthMap {
    if x.width == width && x.height == height {
        return x.clone();
    }
    if x.width >= width && x.height >= height {
        if let Ok(m) = area_downsample(x, width, height) {
            return m;
        }
    }
    resample_inverse_depth(x, width, height)
}

/// Replace masked values by the value of the nearest valid pixel (8-connected
/// breadth-first order). Errors when no pixel is valid.
pub(crate) fn fill_nearest_valid(x: &InverseDepthMap) -> Result<Vec<f64>> {
    let (w, h) = (x.width, x.height);
    let mut values = x.values.clone();
    let mut done = x.mask.clone();
    let mut queue: VecDeque<usize> = (0..w * h).filter(|&i| done[i]).collect();
    if queue.is_empty() {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    if queue.len() == w * h {
        return Ok(values);
    }
    while let Some(i) = queue.pop_front() {
        let (cx, cy) = ((i % w) as i64, (i / w) as i64);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (nx, ny) = (cx + dx, cy + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !done[j] {
                    done[j] = true;
                    values[j] = values[i];
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(values)
}

/// Project an equirectangular inverse-depth map onto one cube face by a
/// single bilinear lookup per face pixel.
pub fn project_to_face(pano: &InverseDepthMap, face: FaceId, face_size: usize) -> InverseDepthMap {
    let cam = FaceCamera::new(face, face_size, nalgebra::Vector3::zeros());
    let mut values = vec![0.0; face_size * face_size];
    let mut mask = vec![false; face_size * face_size];
    values
        .par_chunks_mut(face_size)
        .zip(mask.par_chunks_mut(face_size))
        .enumerate()
        .for_each(|(y, (vrow, mrow))| {
            for x in 0..face_size {
                let d = cam.pixel_ray(x, y);
                let (u, v) = unit_to_pixel(&d, pano.width, pano.height);
                if let Some(s) = pano.sample(u, v, true) {
                    vrow[x] = s;
                    mrow[x] = true;
                }
            }
        });
    InverseDepthMap {
        width: face_size,
        height: face_size,
        values,
        mask,
    }
}

/// [`project_to_face`] for all six faces, in [`FaceId::ALL`] order.
pub fn project_to_faces(pano: &InverseDepthMap, face_size: usize) -> Result<Vec<InverseDepthMap>> {
    if pano.width != 2 * pano.height {
        return Err(Error::format(format!(
            "panoramic depth must be 2:1, got {}x{}",
            pano.width, pano.height
        )));
    }
    Ok(FaceId::ALL
        .iter()
        .map(|&f| project_to_face(pano, f, face_size))
        .collect())
}

#[derive(Debug, serde::Deserialize)]
struct DepthScaleSidecar {
    scale_m_per_unit: f64,
}

/// Metric depth stored as a 16-bit PNG plus a `{ "scale_m_per_unit": s }`
/// JSON sidecar. Zero samples are masked. Returns metric depth in meters.
pub fn load_metric_depth_png16(png: impl AsRef<Path>, sidecar: impl AsRef<Path>) -> Result<InverseDepthMap> {
    let sidecar = sidecar.as_ref();
    let text = std::fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
    let meta: DepthScaleSidecar = serde_json::from_str(&text)?;
    if !(meta.scale_m_per_unit.is_finite() && meta.scale_m_per_unit > 0.0) {
        return Err(Error::data("scale_m_per_unit must be positive"));
    }
    let (w, h, raw) = crate::imaging::load_png_gray16(png)?;
    let values = raw.iter().map(|&u| u as f64 * meta.scale_m_per_unit).collect();
    let mask = raw.iter().map(|&u| u > 0).collect();
    InverseDepthMap::with_mask(w, h, values, mask)
}
