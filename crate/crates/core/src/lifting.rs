//! Depth-constrained Gaussian initialization for one cube face.
//!
//! Every valid face pixel becomes one Gaussian centred on its ray at the
//! supplied depth. The Gaussian is flattened along the ray (`s_r = ρ·s_t`) and
//! isotropic across it, with a tangential scale equal to the pixel footprint
//! at that depth times `β`. The parameterization is a stand-in for a learned
//! initializer: every constant lives in [`LiftParams`].

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depthfusion::InverseDepthMap;
use crate::error::{Error, Result};
use crate::geometry::{FaceCamera, FaceId};
use crate::imaging::Image;

/// Y₀₀ spherical-harmonic basis value, 1/(2√π).
pub const SH_C0: f64 = 0.28209479177;

/// Range enforced on `exp(log_scale)` (metres).
pub const MIN_SCALE: f64 = 1e-6;
pub const MAX_SCALE: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    /// World position, metres.
    pub mean: [f32; 3],
    /// Natural log of the per-axis standard deviation, metres.
    pub log_scale: [f32; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f32; 4],
    pub opacity_logit: f32,
    pub sh_dc: [f32; 3],
}

impl Gaussian {
    pub fn mean_f64(&self) -> Vector3<f64> {
        Vector3::new(self.mean[0] as f64, self.mean[1] as f64, self.mean[2] as f64)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit as f64)
    }

    /// Linear RGB in `[0, 1]` decoded from the DC coefficients.
    pub fn color(&self) -> [f64; 3] {
        self.sh_dc.map(|c| (c as f64 * SH_C0 + 0.5).clamp(0.0, 1.0))
    }

    pub fn unit_rotation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation.map(|v| v as f64);
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
    }

    pub fn is_finite(&self) -> bool {
        self.mean
            .iter()
            .chain(&self.log_scale)
            .chain(&self.rotation)
            .chain(&self.sh_dc)
            .chain(std::iter::once(&self.opacity_logit))
            .all(|v| v.is_finite())
    }

    /// Checks the finite, unit-rotation and scale-range invariants.
    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::data("gaussian has non-finite parameters"));
        }
        let n = self.rotation.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::data(format!("gaussian rotation norm {n} is not 1")));
        }
        for &l in &self.log_scale {
            let s = (l as f64).exp();
            if !(s > MIN_SCALE && s < MAX_SCALE) {
                return Err(Error::data(format!("gaussian scale {s} outside (1e-6, 1e3)")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianSet {
    pub gaussians: Vec<Gaussian>,
    pub source_face: Option<FaceId>,
    /// Row-major source pixel index per Gaussian, when known.
    pub source_pixels: Option<Vec<u32>>,
}

impl GaussianSet {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        Self {
            gaussians,
            source_face: None,
            source_pixels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.source_pixels {
            if p.len() != self.gaussians.len() {
                return Err(Error::data(format!(
                    "{} source pixels for {} gaussians",
                    p.len(),
                    self.gaussians.len()
                )));
            }
        }
        self.gaussians.iter().try_for_each(Gaussian::validate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftParams {
    /// β: tangential scale gain.
    pub scale_gain: f64,
    /// α₀ ∈ (0, 1).
    pub initial_opacity: f64,
    /// ρ ∈ (0, 1]: radial over tangential scale.
    pub thin_axis_ratio: f64,
    pub stride: usize,
}

impl Default for LiftParams {
    fn default() -> Self {
        Self {
            scale_gain: 1.0,
            initial_opacity: 0.8,
            thin_axis_ratio: 0.2,
            stride: 1,
        }
    }
}

impl LiftParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_gain.is_finite() && self.scale_gain > 0.0) {
            return Err(Error::argument(format!("scale_gain {} must be > 0", self.scale_gain)));
        }
        if !(self.initial_opacity > 0.0 && self.initial_opacity < 1.0) {
            return Err(Error::argument(format!(
                "initial_opacity {} not in (0, 1)",
                self.initial_opacity
            )));
        }
        if !(self.thin_axis_ratio > 0.0 && self.thin_axis_ratio <= 1.0) {
            return Err(Error::argument(format!(
                "thin_axis_ratio {} not in (0, 1]",
                self.thin_axis_ratio
            )));
        }
        if self.stride == 0 {
            return Err(Error::argument("stride must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftStats {
    pub face: FaceId,
    pub count: usize,
    /// Sampled pixels dropped for an invalid depth.
    pub skipped: usize,
    /// Metres, over lifted pixels; `None` when nothing was lifted.
    pub depth_min: Option<f64>,
    pub depth_max: Option<f64>,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Upper bound on the Gaussians lifted from one face.
pub fn count_budget(face_size: usize, stride: usize) -> usize {
    assert!(stride >= 1, "stride must be >= 1");
    face_size.div_ceil(stride).pow(2)
}

/// Shortest-arc rotation taking `+Z` to the unit vector `r`.
///
/// `1 + r_z` is evaluated as `(r_x² + r_y²)/(1 − r_z)` on the lower
/// hemisphere so the result stays accurate near `−Z`; exactly `−Z` maps to a
/// half turn about `+X`.
pub fn rotation_from_z(r: &Vector3<f64>) -> [f64; 4] {
    let t = r.x * r.x + r.y * r.y;
    let w = if r.z >= 0.0 { 1.0 + r.z } else { t / (1.0 - r.z) };
    let n = (w * w + t).sqrt();
    if n < 1e-150 || !n.is_finite() {
        return [0.0, 1.0, 0.0, 0.0];
    }
    [w / n, -r.y / n, r.x / n, 0.0]
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Angular extent of face pixel `(x, y)` along the face's two axes.
pub fn pixel_angular_extent(face: FaceId, face_size: usize, x: usize, y: usize) -> (f64, f64) {
    let s = face_size as f64;
    let a = 2.0 * (x as f64 + 0.5) / s - 1.0;
    let b = 2.0 * (y as f64 + 0.5) / s - 1.0;
    let h = 1.0 / s;
    let da = angle_between(&face.ray(a - h, b), &face.ray(a + h, b));
    let db = angle_between(&face.ray(a, b - h), &face.ray(a, b + h));
    (da, db)
}

fn clamp_log_scale(s: f64) -> f32 {
    let lo = MIN_SCALE.ln() + 1e-4;
    let hi = MAX_SCALE.ln() - 1e-4;
    s.ln().clamp(lo, hi) as f32
}

/// Lift one face. Pixels are visited row-major at `stride`; masked depth
/// pixels are skipped and counted.
pub fn lift_face(
    rgb: &Image,
    inv_depth: &InverseDepthMap,
    cam: &FaceCamera,
    params: &LiftParams,
) -> Result<(GaussianSet, LiftStats)> {
    params.validate()?;
    let s = cam.face_size;
    if rgb.width != s || rgb.height != s || inv_depth.width != s || inv_depth.height != s {
        return Err(Error::argument(format!(
            "face {}: rgb {}x{} and depth {}x{} must both be {s}x{s}",
            cam.face_id, rgb.width, rgb.height, inv_depth.width, inv_depth.height
        )));
    }
    if rgb.channels != 3 {
        return Err(Error::argument(format!("face {}: rgb has {} channels", cam.face_id, rgb.channels)));
    }
    if rgb.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::data(format!("face {}: non-finite rgb value", cam.face_id)));
    }
    if inv_depth.values.iter().any(|v| v.is_nan()) {
        return Err(Error::data(format!("face {}: NaN inverse depth", cam.face_id)));
    }
    inv_depth.validate()?;

    let opacity_logit = logit(params.initial_opacity) as f32;
    let center = cam.center;
    let rows: Vec<usize> = (0..s).step_by(params.stride).collect();
    let per_row: Vec<(Vec<Gaussian>, Vec<u32>, usize)> = rows
        .par_iter()
        .map(|&y| {
            let mut gs = Vec::new();
            let mut px = Vec::new();
            let mut skipped = 0;
            for x in (0..s).step_by(params.stride) {
                if !inv_depth.is_valid(x, y) {
                    skipped += 1;
                    continue;
                }
                let d = 1.0 / inv_depth.get(x, y);
                let r = cam.pixel_ray(x, y);
                let mean = center + d * r;
                let (da, db) = pixel_angular_extent(cam.face_id, s, x, y);
                let s_t = params.scale_gain * d * (da * db).sqrt();
                let s_r = params.thin_axis_ratio * s_t;
                let q = rotation_from_z(&r);
                let c = rgb.pixel(x, y);
                gs.push(Gaussian {
                    mean: [mean.x as f32, mean.y as f32, mean.z as f32],
                    log_scale: [clamp_log_scale(s_t), clamp_log_scale(s_t), clamp_log_scale(s_r)],
                    rotation: q.map(|v| v as f32),
                    opacity_logit,
                    sh_dc: [0, 1, 2].map(|k| ((c[k] as f64 - 0.5) / SH_C0) as f32),
                });
                px.push((y * s + x) as u32);
            }
            (gs, px, skipped)
        })
        .collect();

    let mut gaussians = Vec::with_capacity(count_budget(s, params.stride));
    let mut pixels = Vec::with_capacity(gaussians.capacity());
    let mut skipped = 0;
    for (g, p, k) in per_row {
        gaussians.extend(g);
        pixels.extend(p);
        skipped += k;
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &p in &pixels {
        let d = 1.0 / inv_depth.values[p as usize];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let stats = LiftStats {
        face: cam.face_id,
        count: gaussians.len(),
        skipped,
        depth_min: (!pixels.is_empty()).then_some(lo),
        depth_max: (!pixels.is_empty()).then_some(hi),
    };
    let set = GaussianSet {
        gaussians,
        source_face: Some(cam.face_id),
        source_pixels: Some(pixels),
    };
    Ok((set, stats))
}
