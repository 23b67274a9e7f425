//! Analytic textured cube room: exact panoramas and depth for closed-loop tests.

use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depthfusion::InverseDepthMap;
use crate::error::{Error, Result};
use crate::geometry::{equirect_ray, face_assignment, FaceCamera, FaceId};
use crate::imaging::{save_png8, Image};

/// Checkerboard walls of an axis-aligned cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CubeRoom {
    /// Metres.
    pub half_extent: f64,
    pub center: [f64; 3],
    /// Edge length of one checker square, metres.
    pub checker_size: f64,
    /// Two colors per wall, indexed by the wall's outward [`FaceId`].
    pub palette: [[[f32; 3]; 2]; 6],
}

impl Default for CubeRoom {
    fn default() -> Self {
        Self {
            half_extent: 2.0,
            center: [0.0; 3],
            checker_size: 0.5,
            palette: [
                [[0.70, 0.45, 0.35], [0.55, 0.35, 0.28]],
                [[0.35, 0.55, 0.70], [0.27, 0.43, 0.55]],
                [[0.80, 0.78, 0.72], [0.64, 0.62, 0.58]],
                [[0.45, 0.38, 0.30], [0.35, 0.29, 0.23]],
                [[0.50, 0.68, 0.45], [0.39, 0.53, 0.35]],
                [[0.66, 0.55, 0.72], [0.52, 0.43, 0.57]],
            ],
        }
    }
}

impl CubeRoom {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_extent > 0.0 && self.half_extent.is_finite()) {
            return Err(Error::argument(format!("half_extent {} must be > 0", self.half_extent)));
        }
        if !(self.checker_size > 0.0 && self.checker_size.is_finite()) {
            return Err(Error::argument(format!("checker_size {} must be > 0", self.checker_size)));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::argument("room center must be finite"));
        }
        if self.palette.iter().flatten().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::argument("palette colors must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }

    pub fn contains(&self, pos: &Vector3<f64>) -> bool {
        (pos - self.center()).amax() < self.half_extent
    }

    fn check_inside(&self, pos: &Vector3<f64>) -> Result<()> {
        if !self.contains(pos) {
            return Err(Error::argument(format!(
                "position ({}, {}, {}) is not strictly inside the room",
                pos.x, pos.y, pos.z
            )));
        }
        Ok(())
    }

    /// Checker color of the wall point `p` (world coordinates).
    pub fn color_at(&self, p: &Vector3<f64>) -> [f32; 3] {
        let q = p - self.center();
        let wall = face_assignment(&q);
        let (s, t) = match wall {
            FaceId::PosX | FaceId::NegX => (q.z, q.y),
            FaceId::PosY | FaceId::NegY => (q.x, q.z),
            FaceId::PosZ | FaceId::NegZ => (q.x, q.y),
        };
        let i = ((s + self.half_extent) / self.checker_size).floor() as i64;
        let j = ((t + self.half_extent) / self.checker_size).floor() as i64;
        self.palette[wall.index()][(i + j).rem_euclid(2) as usize]
    }

    fn depth_unchecked(&self, pos: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
        let c = self.center();
        let mut t = f64::INFINITY;
        for k in 0..3 {
            if d[k] != 0.0 {
                let wall = c[k] + self.half_extent * d[k].signum();
                t = t.min((wall - pos[k]) / d[k]);
            }
        }
        t
    }
}

/// Distance from `pos` along `d` to the first wall, in units of `|d|`.
pub fn analytic_depth(room: &CubeRoom, pos: &Vector3<f64>, d: &Vector3<f64>) -> Result<f64> {
    room.check_inside(pos)?;
    if !(d.iter().all(|v| v.is_finite()) && d.norm() > 0.0) {
        return Err(Error::argument("direction must be finite and non-zero"));
    }
    Ok(room.depth_unchecked(pos, d))
}

/// Point-sampled panorama and inverse depth seen from `pos`.
pub fn render_ground_truth(room: &CubeRoom, pos: &Vector3<f64>, width: usize, height: usize) -> Result<(Image, InverseDepthMap)> {
    room.validate()?;
    room.check_inside(pos)?;
    if width != 2 * height || height == 0 {
        return Err(Error::argument(format!("panorama must be 2:1, got {width}x{height}")));
    }
    let mut img = Image::new(width, height, 3);
    let mut inv = vec![0.0; width * height];
    img.data
        .par_chunks_mut(3 * width)
        .zip(inv.par_chunks_mut(width))
        .enumerate()
        .for_each(|(v, (row, irow))| {
            for u in 0..width {
                let d = equirect_ray(u as f64, v as f64, width, height);
                let t = room.depth_unchecked(pos, &d);
                row[3 * u..3 * u + 3].copy_from_slice(&room.color_at(&(pos + t * d)));
                irow[u] = 1.0 / t;
            }
        });
    Ok((img, InverseDepthMap::new(width, height, inv)?))
}

/// Exact inverse depth for one face seen from `pos`.
pub fn face_inverse_depth(room: &CubeRoom, pos: &Vector3<f64>, face: FaceId, face_size: usize) -> Result<InverseDepthMap> {
    room.check_inside(pos)?;
    let cam = FaceCamera::new(face, face_size, *pos);
    Ok(InverseDepthMap::from_fn(face_size, face_size, |x, y| {
        1.0 / room.depth_unchecked(pos, &cam.pixel_ray(x, y))
    }))
}

/// Controlled defects applied to synthetic detail depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetailCorruption {
    /// Multiplier on every face's inverse depth.
    pub global_scale: f64,
    /// Extra multiplier per face, [`FaceId::ALL`] order.
    pub face_scale: [f64; 6],
    /// Amplitude of the additive texture, 1/m.
    pub texture_amplitude: f64,
    /// Texture period in face pixels.
    pub texture_period: f64,
}

impl Default for DetailCorruption {
    fn default() -> Self {
        Self {
            global_scale: 1.0,
            face_scale: [1.0; 6],
            texture_amplitude: 0.0,
            texture_period: 4.0,
        }
    }
}

impl DetailCorruption {
    /// Per-face scales `1, s, s²` on the ±X, ±Y, ±Z pairs. Adjacent faces
    /// never share a factor, so every cube edge sees a ratio of at least `s`.
    pub fn three_coloring(s: f64) -> Self {
        Self {
            face_scale: [1.0, 1.0, s, s, s * s, s * s],
            ..Default::default()
        }
    }

    /// Zero-mean texture value before scaling, at face pixel `(x, y)`.
    pub fn texture(&self, x: usize, y: usize) -> f64 {
        let w = std::f64::consts::TAU / self.texture_period;
        self.texture_amplitude * (w * (x as f64 + 0.5)).sin() * (w * (y as f64 + 0.5)).sin()
    }
}

/// `global_scale · face_scale · (analytic + texture)`.
pub fn synthetic_detail(
    room: &CubeRoom,
    pos: &Vector3<f64>,
    face: FaceId,
    face_size: usize,
    corruption: &DetailCorruption,
) -> Result<InverseDepthMap> {
    let exact = face_inverse_depth(room, pos, face, face_size)?;
    let k = corruption.global_scale * corruption.face_scale[face.index()];
    let out = InverseDepthMap::from_fn(face_size, face_size, |x, y| {
        k * (exact.get(x, y) + corruption.texture(x, y))
    });
    out.validate()?;
    Ok(out)
}

/// JSON description written next to generated ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthDescription {
    pub room: CubeRoom,
    pub position: [f64; 3],
    pub width: usize,
    pub height: usize,
}

/// Write `panorama.png`, `inverse_depth.pfm` and `scene.json` into `dir`.
pub fn write_ground_truth(room: &CubeRoom, pos: &Vector3<f64>, width: usize, height: usize, dir: &Path) -> Result<()> {
    let (img, inv) = render_ground_truth(room, pos, width, height)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_png8(&img, dir.join("panorama.png"))?;
    inv.save_pfm(dir.join("inverse_depth.pfm"))?;
    let desc = SynthDescription {
        room: room.clone(),
        position: [pos.x, pos.y, pos.z],
        width,
        height,
    };
    let p = dir.join("scene.json");
    std::fs::write(&p, serde_json::to_vec_pretty(&desc)?).map_err(|e| Error::io(&p, e))
}
