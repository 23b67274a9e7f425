//! Coordinate conventions and equirectangular <-> cubemap projection.
//!
//! World frame is right-handed with +Y up and -Z forward at longitude 0.
//! An equirectangular pixel `(u, v)` of a `W x H` panorama has its center at
//! longitude `θ = 2π(u + 0.5)/W − π` and latitude `φ = π/2 − π(v + 0.5)/H`,
//! and looks along `(cosφ·sinθ, sinφ, −cosφ·cosθ)`.
//!
//! Cube face pixel `(x, y)` of an `S x S` face maps to face coordinates
//! `a = 2(x + 0.5)/S − 1`, `b = 2(y + 0.5)/S − 1` and to the (unnormalized)
//! ray given by the face table:
//!
//! | face | ray          |
//! |------|--------------|
//! | +X   | (1, −b, −a)  |
//! | −X   | (−1, −b, a)  |
//! | +Y   | (a, 1, b)    |
//! | −Y   | (a, −1, −b)  |
//! | +Z   | (a, −b, 1)   |
//! | −Z   | (−a, −b, −1) |
//!
//! The table lays faces out like cubemap textures: seen from the optical
//! center, every face image is mirrored left-to-right relative to a
//! right-handed pinhole camera looking down the face normal. [`FaceCamera`]
//! carries that proper camera and documents the mirror.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Cube face identifier, in tie-break priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[derive(serde::Serialize, serde::Deserialize)]
pub enum FaceId {
    #[serde(rename = "px")]
    PosX = 0,
    #[serde(rename = "nx")]
    NegX = 1,
    #[serde(rename = "py")]
    PosY = 2,
    #[serde(rename = "ny")]
    NegY = 3,
    #[serde(rename = "pz")]
    PosZ = 4,
    #[serde(rename = "nz")]
    NegZ = 5,
}

impl FaceId {
    pub const ALL: [FaceId; 6] = [
        FaceId::PosX,
        FaceId::NegX,
        FaceId::PosY,
        FaceId::NegY,
        FaceId::PosZ,
        FaceId::NegZ,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    /// Short file-name tag: `px`, `nx`, `py`, `ny`, `pz`, `nz`.
    pub fn tag(self) -> &'static str {
        match self {
            FaceId::PosX => "px",
            FaceId::NegX => "nx",
            FaceId::PosY => "py",
            FaceId::NegY => "ny",
            FaceId::PosZ => "pz",
            FaceId::NegZ => "nz",
        }
    }

    pub fn from_tag(tag: &str) -> Option<FaceId> {
        FaceId::ALL.into_iter().find(|f| f.tag() == tag)
    }

    /// Outward normal: the ray through the face center.
    pub fn forward(self) -> Vector3<f64> {
        self.ray(0.0, 0.0)
    }

    /// Direction of increasing `a` (face column).
    pub fn a_axis(self) -> Vector3<f64> {
        self.ray(1.0, 0.0) - self.forward()
    }

    /// Direction of increasing `b` (face row).
    pub fn b_axis(self) -> Vector3<f64> {
        self.ray(0.0, 1.0) - self.forward()
    }

    /// Unnormalized ray for face coordinates `(a, b)` per the face table.
    #[inline]
    pub fn ray(self, a: f64, b: f64) -> Vector3<f64> {
        match self {
            FaceId::PosX => Vector3::new(1.0, -b, -a),
            FaceId::NegX => Vector3::new(-1.0, -b, a),
            FaceId::PosY => Vector3::new(a, 1.0, b),
            FaceId::NegY => Vector3::new(a, -1.0, -b),
            FaceId::PosZ => Vector3::new(a, -b, 1.0),
            FaceId::NegZ => Vector3::new(-a, -b, -1.0),
        }
    }

    /// Face coordinates `(a, b)` of a vector; `None` when it points away
    /// from (or parallel to) the face.
    #[inline]
    pub fn coords(self, v: &Vector3<f64>) -> Option<(f64, f64)> {
        let (m, a, b) = match self {
            FaceId::PosX => (v.x, -v.z, -v.y),
            FaceId::NegX => (-v.x, v.z, -v.y),
            FaceId::PosY => (v.y, v.x, v.z),
            FaceId::NegY => (-v.y, v.x, -v.z),
            FaceId::PosZ => (v.z, v.x, -v.y),
            FaceId::NegZ => (-v.z, -v.x, -v.y),
        };
        (m > 0.0).then(|| (a / m, b / m))
    }
}

impl std::fmt::Display for FaceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Unit-norm world direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction(Vector3<f64>);

impl Direction {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        Self::from_vector(Vector3::new(x, y, z))
    }

    pub fn from_vector(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n <= 0.0 {
            return Err(Error::argument("direction must be finite and non-zero"));
        }
        Ok(Direction(v / n))
    }

    #[inline]
    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }
    pub fn y(&self) -> f64 {
        self.0.y
    }
    pub fn z(&self) -> f64 {
        self.0.z
    }
}

/// Direction through a continuous equirectangular position, where integer
/// coordinates are pixel centers.
#[inline]
pub fn equirect_ray(u: f64, v: f64, width: usize, height: usize) -> Vector3<f64> {
    let theta = 2.0 * PI * (u + 0.5) / width as f64 - PI;
    let phi = PI / 2.0 - PI * (v + 0.5) / height as f64;
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(cp * st, sp, -cp * ct)
}

/// Direction through the center of panorama pixel `(u, v)`.
pub fn pixel_to_direction(u: usize, v: usize, width: usize, height: usize) -> Result<Direction> {
    if u >= width || v >= height {
        return Err(Error::argument(format!(
            "pixel ({u}, {v}) outside {width}x{height} panorama"
        )));
    }
    Ok(Direction(equirect_ray(u as f64, v as f64, width, height)))
}

/// Continuous panorama position of a direction (inverse of [`equirect_ray`]).
///
/// `u` wraps into `[0, width)`. At the poles the longitude is undefined and
/// `u = width / 2` is returned.
pub fn direction_to_pixel(d: &Vector3<f64>, width: usize, height: usize) -> Result<(f64, f64)> {
    let n = d.norm();
    if !n.is_finite() || n <= 0.0 {
        return Err(Error::argument("cannot project a zero-length direction"));
    }
    Ok(unit_to_pixel(&(d / n), width, height))
}

#[inline]
pub(crate) fn unit_to_pixel(d: &Vector3<f64>, width: usize, height: usize) -> (f64, f64) {
    let w = width as f64;
    let phi = d.y.clamp(-1.0, 1.0).asin();
    let v = (PI / 2.0 - phi) * height as f64 / PI - 0.5;
    let horiz = d.x * d.x + d.z * d.z;
    if horiz <= 1e-24 {
        return (w / 2.0, v);
    }
    let theta = d.x.atan2(-d.z);
    let u = ((theta + PI) * w / (2.0 * PI) - 0.5).rem_euclid(w);
    // rem_euclid can round up to exactly w for tiny negative inputs
    (if u >= w { 0.0 } else { u }, v)
}

/// Face owning a direction: the axis of largest magnitude, signed. Ties go
/// to the earlier face in `+X, −X, +Y, −Y, +Z, −Z` order; the zero vector
/// lands on +X.
#[inline]
pub fn face_assignment(d: &Vector3<f64>) -> FaceId {
    let (ax, ay, az) = (d.x.abs(), d.y.abs(), d.z.abs());
    if ax >= ay && ax >= az {
        if d.x >= 0.0 {
            FaceId::PosX
        } else {
            FaceId::NegX
        }
    } else if ay >= az {
        if d.y >= 0.0 {
            FaceId::PosY
        } else {
            FaceId::NegY
        }
    } else if d.z >= 0.0 {
        FaceId::PosZ
    } else {
        FaceId::NegZ
    }
}

/// 90° pinhole view for one cube face.
///
/// Intrinsics are `fx = fy = S/2`, `cx = cy = S/2` with pixel `i` centered at
/// `i + 0.5`. `rotation` maps the camera frame (x right, y down, z forward)
/// to the world and is a proper rotation. A face image in table layout is
/// this camera's image mirrored left-to-right, so face column `x`
/// corresponds to camera column `S − 1 − x`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceCamera {
    pub face_id: FaceId,
    pub face_size: usize,
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
}

impl FaceCamera {
    pub fn new(face_id: FaceId, face_size: usize, center: Vector3<f64>) -> Self {
        let right = -face_id.a_axis();
        let down = face_id.b_axis();
        let forward = face_id.forward();
        Self {
            face_id,
            face_size,
            rotation: Matrix3::from_columns(&[right, down, forward]),
            center,
        }
    }

    #[inline]
    pub fn focal(&self) -> f64 {
        self.face_size as f64 / 2.0
    }

    #[inline]
    pub fn principal_point(&self) -> f64 {
        self.face_size as f64 / 2.0
    }

    /// Face coordinates `(a, b)` of a continuous face position.
    #[inline]
    pub fn face_coords(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.face_size as f64;
        (2.0 * (x + 0.5) / s - 1.0, 2.0 * (y + 0.5) / s - 1.0)
    }

    /// Unit world ray through the center of face pixel `(x, y)`.
    #[inline]
    pub fn pixel_ray(&self, x: usize, y: usize) -> Vector3<f64> {
        let (a, b) = self.face_coords(x as f64, y as f64);
        self.face_id.ray(a, b).normalize()
    }
}

/// Six faces sharing one optical center, indexed by [`FaceId::index`].
#[derive(Clone, Debug, PartialEq)]
pub struct CubemapFaceSet {
    pub face_size: usize,
    pub faces: Vec<Image>,
    pub center: Vector3<f64>,
}

impl CubemapFaceSet {
    pub fn new(face_size: usize, faces: Vec<Image>, center: Vector3<f64>) -> Result<Self> {
        let set = Self {
            face_size,
            faces,
            center,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let (faces, face_size) = (&self.faces, self.face_size);
        if faces.len() != 6 {
            return Err(Error::format(format!(
                "cubemap needs 6 faces, got {}",
                faces.len()
            )));
        }
        for (i, f) in faces.iter().enumerate() {
            if f.width != face_size || f.height != face_size {
                return Err(Error::format(format!(
                    "face {} is {}x{}, expected {face_size}x{face_size}",
                    FaceId::ALL[i],
                    f.width,
                    f.height
                )));
            }
        }
        Ok(())
    }

    pub fn face(&self, id: FaceId) -> &Image {
        &self.faces[id.index()]
    }

    pub fn camera(&self, id: FaceId) -> FaceCamera {
        FaceCamera::new(id, self.face_size, self.center)
    }
}

/// Default face resolution: half the panorama height, rounded to a multiple of 16.
pub fn default_face_size(pano_height: usize) -> usize {
    let half = pano_height as f64 / 2.0;
    (((half / 16.0).round() as usize) * 16).max(16)
}

pub(crate) fn check_equirect(img: &Image) -> Result<()> {
    if img.width != 2 * img.height || img.height == 0 {
        return Err(Error::format(format!(
            "panorama must be 2:1, got {}x{}",
            img.width, img.height
        )));
    }
    Ok(())
}

/// Project a panorama to six faces, averaging `ss x ss` bilinear samples per
/// face pixel on a regular sub-pixel grid.
pub fn equirect_to_cubemap(img: &Image, face_size: usize, ss: usize) -> Result<CubemapFaceSet> {
    check_equirect(img)?;
    if face_size < 8 {
        return Err(Error::argument(format!("face_size {face_size} < 8")));
    }
    if !(1..=4).contains(&ss) {
        return Err(Error::argument(format!("supersampling factor {ss} not in 1..=4")));
    }
    let offsets: Vec<(f64, f64)> = (0..ss)
        .flat_map(|j| {
            (0..ss).map(move |i| {
                (
                    (i as f64 + 0.5) / ss as f64 - 0.5,
                    (j as f64 + 0.5) / ss as f64 - 0.5,
                )
            })
        })
        .collect();
    Ok(project_with_offsets(img, face_size, &offsets))
}

/// Faces whose pixels average samples taken at the given sub-pixel offsets
/// from each pixel center.
pub(crate) fn project_with_offsets(
    img: &Image,
    face_size: usize,
    offsets: &[(f64, f64)],
) -> CubemapFaceSet {
    let c = img.channels;
    let s = face_size as f64;
    let inv = 1.0 / offsets.len() as f64;
    let faces = FaceId::ALL
        .par_iter()
        .map(|&face| {
            let mut out = Image::new(face_size, face_size, c);
            out.data
                .par_chunks_mut(face_size * c)
                .enumerate()
                .for_each(|(y, row)| {
                    let mut acc = vec![0f64; c];
                    let mut sample = vec![0f32; c];
                    for x in 0..face_size {
                        acc.iter_mut().for_each(|v| *v = 0.0);
                        for &(dx, dy) in offsets {
                            let a = 2.0 * (x as f64 + 0.5 + dx) / s - 1.0;
                            let b = 2.0 * (y as f64 + 0.5 + dy) / s - 1.0;
                            let d = face.ray(a, b).normalize();
                            let (u, v) = unit_to_pixel(&d, img.width, img.height);
                            img.sample_wrap_x(u, v, &mut sample);
                            for k in 0..c {
                                acc[k] += sample[k] as f64;
                            }
                        }
                        for k in 0..c {
                            row[x * c + k] = (acc[k] * inv) as f32;
                        }
                    }
                });
            out
        })
        .collect();
    CubemapFaceSet {
        face_size,
        faces,
        center: Vector3::zeros(),
    }
}

/// Continuous face position `(x, y)` and owning face for a direction.
#[inline]
pub fn direction_to_face_pixel(d: &Vector3<f64>, face_size: usize) -> (FaceId, f64, f64) {
    let face = face_assignment(d);
    let (a, b) = face.coords(d).unwrap_or((0.0, 0.0));
    let s = face_size as f64;
    (face, (a + 1.0) * s / 2.0 - 0.5, (b + 1.0) * s / 2.0 - 0.5)
}

/// Reassemble a panorama by bilinear lookup in the face owning each pixel's
/// direction.
pub fn cubemap_to_equirect(faces: &CubemapFaceSet, width: usize, height: usize) -> Result<Image> {
    if width != 2 * height || height == 0 {
        return Err(Error::argument(format!(
            "panorama must be 2:1, got {width}x{height}"
        )));
    }
    faces.validate()?;
    let c = faces.faces[0].channels;
    if faces.faces.iter().any(|f| f.channels != c) {
        return Err(Error::format("faces have differing channel counts"));
    }
    let mut out = Image::new(width, height, c);
    out.data
        .par_chunks_mut(width * c)
        .enumerate()
        .for_each(|(v, row)| {
            for u in 0..width {
                let d = equirect_ray(u as f64, v as f64, width, height);
                let (face, x, y) = direction_to_face_pixel(&d, faces.face_size);
                faces.faces[face.index()].sample_clamped(x, y, &mut row[u * c..(u + 1) * c]);
            }
        });
    Ok(out)
}
