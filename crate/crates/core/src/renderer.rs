//! Tile-based software rasterizer for Gaussian scenes.
//!
//! Splats are projected with the EWA approximation, sorted once by camera
//! depth (ties by index) and binned into square tiles by the bounding box of
//! their cutoff ellipse. Each pixel composites the splats of its tile front
//! to back. Binning only prunes splats whose ellipse misses the pixel, so the
//! image does not depend on the tile size or the thread count.

use std::path::Path;

use nalgebra::{Isometry3, Matrix2, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depthfusion::InverseDepthMap;
use crate::error::{Error, Result};
use crate::geometry::{cubemap_to_equirect, direction_to_face_pixel, equirect_ray, CubemapFaceSet, FaceCamera, FaceId};
use crate::imaging::Image;
use crate::lifting::Gaussian;
use crate::pfm::FloatMap;

/// Screen-space dilation added to every projected covariance, pixel².
pub const COV2D_DILATION: f64 = 0.3;
/// Splats whose 2D covariance determinant is at or below this are skipped.
pub const MIN_COV2D_DET: f64 = 1e-12;
/// Max `|x/z|`, `|y/z|` (in units of the half field of view) at which the
/// projection Jacobian is evaluated.
pub const JACOBIAN_CLAMP: f64 = 1.3;
/// Upper bound on a single splat's alpha.
pub const MAX_SPLAT_ALPHA: f64 = 0.999;

/// Pinhole camera, x right, y down, z forward. Pixel `i` spans `[i, i+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PinholeCamera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World to camera.
    pub pose: Isometry3<f64>,
    /// Metres.
    pub near: f64,
}

impl PinholeCamera {
    pub fn new(width: usize, height: usize, fx: f64, fy: f64, cx: f64, cy: f64, pose: Isometry3<f64>) -> Result<Self> {
        let cam = Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            pose,
            near: 0.01,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::argument("camera image must be non-empty"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::argument(format!("focal lengths {} {} must be > 0", self.fx, self.fy)));
        }
        if !(self.cx.is_finite() && self.cy.is_finite() && self.near > 0.0) {
            return Err(Error::argument("camera principal point and near plane must be finite, near > 0"));
        }
        Ok(())
    }

    /// Camera at `position` looking at `target`; `fov_deg` is horizontal.
    pub fn look_at(
        position: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_deg: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::argument(format!("fov_deg {fov_deg} not in (0, 180)")));
        }
        let f = target - position;
        if f.norm() < 1e-12 {
            return Err(Error::argument("look_at target coincides with position"));
        }
        let f = f.normalize();
        let right = f.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::argument("up vector is parallel to the viewing direction"));
        }
        let right = right.normalize();
        let down = f.cross(&right);
        let fx = width as f64 / 2.0 / (fov_deg.to_radians() / 2.0).tan();
        Self::new(
            width,
            height,
            fx,
            fx,
            width as f64 / 2.0,
            height as f64 / 2.0,
            pose_from_camera_to_world(Matrix3::from_columns(&[right, down, f]), position),
        )
    }

    /// The perspective view of one cube face. Its image is the face image
    /// mirrored left to right.
    pub fn from_face(face: &FaceCamera) -> Self {
        let s = face.face_size as f64;
        Self {
            width: face.face_size,
            height: face.face_size,
            fx: face.focal(),
            fy: face.focal(),
            cx: s / 2.0,
            cy: s / 2.0,
            pose: pose_from_camera_to_world(face.rotation, face.center),
            near: 0.01,
        }
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vector3<f64> {
        self.pose.inverse().translation.vector
    }

    /// Ratio of radial distance to z-depth for the ray through pixel `(x, y)`.
    pub fn radial_factor(&self, x: usize, y: usize) -> f64 {
        let u = (x as f64 + 0.5 - self.cx) / self.fx;
        let v = (y as f64 + 0.5 - self.cy) / self.fy;
        (1.0 + u * u + v * v).sqrt()
    }
}

fn pose_from_camera_to_world(r: Matrix3<f64>, position: Vector3<f64>) -> Isometry3<f64> {
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r.transpose()));
    let t = -(rot * position);
    Isometry3::from_parts(Translation3::from(t), rot)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    /// 8, 16 or 32.
    pub tile_size: usize,
    pub alpha_threshold: f64,
    pub transmittance_floor: f64,
    pub background: [f64; 3],
    /// Mahalanobis radius beyond which a splat contributes nothing.
    pub gaussian_cutoff: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            tile_size: 16,
            alpha_threshold: 1.0 / 255.0,
            transmittance_floor: 1e-4,
            background: [0.0; 3],
            gaussian_cutoff: 3.0,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if ![8, 16, 32].contains(&self.tile_size) {
            return Err(Error::argument(format!("tile_size {} not in {{8, 16, 32}}", self.tile_size)));
        }
        for (name, v) in [
            ("alpha_threshold", self.alpha_threshold),
            ("transmittance_floor", self.transmittance_floor),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::argument(format!("{name} {v} not in (0, 1)")));
            }
        }
        if !(self.gaussian_cutoff > 0.0 && self.gaussian_cutoff.is_finite()) {
            return Err(Error::argument(format!("gaussian_cutoff {} must be > 0", self.gaussian_cutoff)));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::argument("background must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// A Gaussian projected to the image plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Pixels.
    pub mean2d: Vector2<f64>,
    /// Pixel².
    pub cov2d: Matrix2<f64>,
    /// Camera z, metres.
    pub depth: f64,
}

/// EWA projection, or `None` when the mean is not beyond the near plane.
pub fn project_gaussian(g: &Gaussian, cam: &PinholeCamera) -> Option<Projection> {
    let t = cam.pose * nalgebra::Point3::from(g.mean_f64());
    if !(t.z > cam.near) {
        return None;
    }
    let w = cam.pose.rotation.to_rotation_matrix().into_inner();
    let r = g.unit_rotation().to_rotation_matrix().into_inner();
    let s = Vector3::from(g.log_scale.map(|l| (2.0 * l as f64).exp()));
    let sigma = r * Matrix3::from_diagonal(&s) * r.transpose();

    let lim_x = JACOBIAN_CLAMP * (cam.width as f64 / 2.0) / cam.fx;
    let lim_y = JACOBIAN_CLAMP * (cam.height as f64 / 2.0) / cam.fy;
    let tx = (t.x / t.z).clamp(-lim_x, lim_x) * t.z;
    let ty = (t.y / t.z).clamp(-lim_y, lim_y) * t.z;
    let j = nalgebra::Matrix2x3::new(
        cam.fx / t.z,
        0.0,
        -cam.fx * tx / (t.z * t.z),
        0.0,
        cam.fy / t.z,
        -cam.fy * ty / (t.z * t.z),
    );
    let m = j * w;
    let cov = m * sigma * m.transpose() + Matrix2::identity() * COV2D_DILATION;
    Some(Projection {
        mean2d: Vector2::new(cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy),
        cov2d: (cov + cov.transpose()) * 0.5,
        depth: t.z,
    })
}

#[derive(Clone, Copy)]
struct Splat {
    mx: f64,
    my: f64,
    /// Inverse covariance `[a, b, c]` for `a dx² + 2b dx dy + c dy²`.
    conic: [f64; 3],
    depth: f64,
    opacity: f64,
    color: [f64; 3],
    /// Inclusive pixel bounds.
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

enum Prepared {
    Culled,
    Singular,
    Ready(Splat),
}

fn prepare(g: &Gaussian, cam: &PinholeCamera, cutoff: f64) -> Prepared {
    let Some(p) = project_gaussian(g, cam) else {
        return Prepared::Culled;
    };
    let c = p.cov2d;
    let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)];
    if !(det > MIN_COV2D_DET) || !det.is_finite() || !p.mean2d.iter().all(|v| v.is_finite()) {
        return Prepared::Singular;
    }
    let conic = [c[(1, 1)] / det, -c[(0, 1)] / det, c[(0, 0)] / det];
    // Pixel centers with Mahalanobis distance ≤ cutoff lie inside this box.
    let rx = cutoff * c[(0, 0)].sqrt();
    let ry = cutoff * c[(1, 1)].sqrt();
    let (mx, my) = (p.mean2d.x, p.mean2d.y);
    let lo_x = (mx - rx - 0.5).floor() - 1.0;
    let hi_x = (mx + rx - 0.5).ceil() + 1.0;
    let lo_y = (my - ry - 0.5).floor() - 1.0;
    let hi_y = (my + ry - 0.5).ceil() + 1.0;
    if hi_x < 0.0 || hi_y < 0.0 || lo_x > (cam.width - 1) as f64 || lo_y > (cam.height - 1) as f64 {
        return Prepared::Culled;
    }
    Prepared::Ready(Splat {
        mx,
        my,
        conic,
        depth: p.depth,
        opacity: g.opacity(),
        color: g.color(),
        x0: lo_x.max(0.0) as usize,
        x1: hi_x.min((cam.width - 1) as f64) as usize,
        y0: lo_y.max(0.0) as usize,
        y1: hi_y.min((cam.height - 1) as f64) as usize,
    })
}

/// Color, coverage and expected depth of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    /// `1 − T_final` per pixel.
    pub alpha: Image,
    /// Camera z-depth, alpha-normalized; zero where alpha is zero.
    pub depth: Vec<f64>,
    /// Splats dropped for a degenerate 2D covariance.
    pub skipped: usize,
}

/// Expected depth with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthRender {
    pub width: usize,
    pub height: usize,
    /// Metres.
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Pixels with alpha below this are masked in depth renders.
pub const DEPTH_MIN_ALPHA: f64 = 0.5;

impl DepthRender {
    fn from_output(out: &RenderOutput) -> Self {
        let mask: Vec<bool> = out.alpha.data.iter().map(|&a| a as f64 >= DEPTH_MIN_ALPHA).collect();
        Self {
            width: out.image.width,
            height: out.image.height,
            depth: out.depth.iter().zip(&mask).map(|(&d, &m)| if m { d } else { 0.0 }).collect(),
            mask,
        }
    }

    /// Convert z-depth rendered by `cam` to distance along each pixel ray.
    pub fn to_radial(&self, cam: &PinholeCamera) -> DepthRender {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.depth[y * self.width + x] *= cam.radial_factor(x, y);
            }
        }
        out
    }

    pub fn to_inverse(&self) -> InverseDepthMap {
        InverseDepthMap {
            width: self.width,
            height: self.height,
            values: self
                .depth
                .iter()
                .zip(&self.mask)
                .map(|(&d, &m)| if m && d > 0.0 { 1.0 / d } else { 0.0 })
                .collect(),
            mask: self.mask.iter().zip(&self.depth).map(|(&m, &d)| m && d > 0.0).collect(),
        }
    }

    /// PFM of metric depth, masked pixels as 0.
    pub fn to_pfm(&self) -> FloatMap {
        FloatMap {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.depth.iter().map(|&d| d as f32).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> DepthRender {
        let w = self.width;
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..w {
                out.depth[y * w + x] = self.depth[y * w + w - 1 - x];
                out.mask[y * w + x] = self.mask[y * w + w - 1 - x];
            }
        }
        out
    }
}

pub fn render_perspective(gaussians: &[Gaussian], cam: &PinholeCamera, settings: &RenderSettings) -> Result<RenderOutput> {
    settings.validate()?;
    cam.validate()?;
    let cutoff = settings.gaussian_cutoff;
    let prepared: Vec<Prepared> = gaussians.par_iter().map(|g| prepare(g, cam, cutoff)).collect();
    let skipped = prepared.iter().filter(|p| matches!(p, Prepared::Singular)).count();
    let mut splats: Vec<(u32, Splat)> = prepared
        .into_iter()
        .enumerate()
        .filter_map(|(i, p)| match p {
            Prepared::Ready(s) => Some((i as u32, s)),
            _ => None,
        })
        .collect();
    splats.par_sort_unstable_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)));

    let ts = settings.tile_size;
    let (w, h) = (cam.width, cam.height);
    let (tiles_x, tiles_y) = (w.div_ceil(ts), h.div_ceil(ts));
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, (_, s)) in splats.iter().enumerate() {
        for ty in s.y0 / ts..=s.y1 / ts {
            for tx in s.x0 / ts..=s.x1 / ts {
                bins[ty * tiles_x + tx].push(k as u32);
            }
        }
    }

    let shaded: Vec<Vec<[f64; 5]>> = bins
        .par_iter()
        .enumerate()
        .map(|(t, bin)| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            let xs = tx * ts..((tx + 1) * ts).min(w);
            let ys = ty * ts..((ty + 1) * ts).min(h);
            let mut px = Vec::with_capacity(xs.len() * ys.len());
            for y in ys {
                for x in xs.clone() {
                    px.push(shade_pixel(x, y, bin, &splats, settings));
                }
            }
            px
        })
        .collect();

    let mut image = Image::new(w, h, 3);
    let mut alpha = Image::new(w, h, 1);
    let mut depth = vec![0.0; w * h];
    for (t, px) in shaded.into_iter().enumerate() {
        let (tx, ty) = (t % tiles_x, t / tiles_x);
        let x0 = tx * ts;
        let tw = ((tx + 1) * ts).min(w) - x0;
        for (k, v) in px.into_iter().enumerate() {
            let (x, y) = (x0 + k % tw, ty * ts + k / tw);
            let i = y * w + x;
            image.data[3 * i..3 * i + 3].copy_from_slice(&[v[0] as f32, v[1] as f32, v[2] as f32]);
            alpha.data[i] = v[3] as f32;
            depth[i] = v[4];
        }
    }
    Ok(RenderOutput {
        image,
        alpha,
        depth,
        skipped,
    })
}

#[inline]
fn shade_pixel(x: usize, y: usize, bin: &[u32], splats: &[(u32, Splat)], st: &RenderSettings) -> [f64; 5] {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let cut2 = st.gaussian_cutoff * st.gaussian_cutoff;
    let mut t = 1.0f64;
    let mut c = [0.0f64; 3];
    let mut d = 0.0f64;
    for &k in bin {
        let s = &splats[k as usize].1;
        if x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1 {
            continue;
        }
        let (dx, dy) = (px - s.mx, py - s.my);
        let p = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
        if p > cut2 {
            continue;
        }
        let a = (s.opacity * (-0.5 * p).exp()).min(MAX_SPLAT_ALPHA);
        if a < st.alpha_threshold {
            continue;
        }
        let wgt = a * t;
        for ch in 0..3 {
            c[ch] += s.color[ch] * wgt;
        }
        d += s.depth * wgt;
        t *= 1.0 - a;
        if t < st.transmittance_floor {
            break;
        }
    }
    let alpha = 1.0 - t;
    let depth = if alpha > 0.0 { d / alpha } else { 0.0 };
    [
        (c[0] + st.background[0] * t).clamp(0.0, 1.0),
        (c[1] + st.background[1] * t).clamp(0.0, 1.0),
        (c[2] + st.background[2] * t).clamp(0.0, 1.0),
        alpha,
        depth,
    ]
}

/// Expected camera z-depth; pixels with alpha < 0.5 are masked.
pub fn depth_render(gaussians: &[Gaussian], cam: &PinholeCamera, settings: &RenderSettings) -> Result<DepthRender> {
    Ok(DepthRender::from_output(&render_perspective(gaussians, cam, settings)?))
}

/// Per-face renders from one center, in face-image layout.
#[derive(Clone, Debug)]
pub struct FaceRenders {
    pub faces: CubemapFaceSet,
    pub alpha: CubemapFaceSet,
    /// Radial depth per face, [`FaceId::ALL`] order.
    pub depth: Vec<DepthRender>,
    pub skipped: usize,
}

/// Render the six 90° cube views at `center` with `face_size` pixels.
pub fn render_faces(
    gaussians: &[Gaussian],
    center: Vector3<f64>,
    face_size: usize,
    settings: &RenderSettings,
) -> Result<FaceRenders> {
    if face_size == 0 {
        return Err(Error::argument("face_size must be > 0"));
    }
    let mut faces = Vec::with_capacity(6);
    let mut alpha = Vec::with_capacity(6);
    let mut depth = Vec::with_capacity(6);
    let mut skipped = 0;
    for id in FaceId::ALL {
        let cam = PinholeCamera::from_face(&FaceCamera::new(id, face_size, center));
        let out = render_perspective(gaussians, &cam, settings)?;
        skipped += out.skipped;
        depth.push(DepthRender::from_output(&out).to_radial(&cam).flip_horizontal());
        faces.push(out.image.flip_horizontal());
        alpha.push(out.alpha.flip_horizontal());
    }
    Ok(FaceRenders {
        faces: CubemapFaceSet::new(face_size, faces, center)?,
        alpha: CubemapFaceSet::new(face_size, alpha, center)?,
        depth,
        skipped,
    })
}

/// An equirectangular render with its coverage.
#[derive(Clone, Debug)]
pub struct EquirectRender {
    pub image: Image,
    pub alpha: Image,
    pub skipped: usize,
}

/// Panorama at `center` via six face renders of size `height / 2`.
pub fn render_equirect(
    gaussians: &[Gaussian],
    center: Vector3<f64>,
    width: usize,
    height: usize,
    settings: &RenderSettings,
) -> Result<EquirectRender> {
    if width != 2 * height || height < 2 {
        return Err(Error::argument(format!("panorama must be 2:1, got {width}x{height}")));
    }
    let f = render_faces(gaussians, center, height / 2, settings)?;
    Ok(EquirectRender {
        image: cubemap_to_equirect(&f.faces, width, height)?,
        alpha: cubemap_to_equirect(&f.alpha, width, height)?,
        skipped: f.skipped,
    })
}

/// Equirectangular inverse depth from six face-layout radial depth maps.
/// A pixel is masked when its bilinear footprint touches a masked sample.
pub fn faces_to_equirect_inverse_depth(depth: &[DepthRender], width: usize, height: usize) -> Result<InverseDepthMap> {
    if depth.len() != 6 {
        return Err(Error::argument(format!("{} face depth maps, expected 6", depth.len())));
    }
    let s = depth[0].width;
    let inv: Vec<InverseDepthMap> = depth.iter().map(DepthRender::to_inverse).collect();
    let mut values = vec![0.0; width * height];
    let mut mask = vec![false; width * height];
    for v in 0..height {
        for u in 0..width {
            let d = equirect_ray(u as f64, v as f64, width, height);
            let (face, x, y) = direction_to_face_pixel(&d, s);
            if let Some(val) = inv[face.index()].sample(x, y, false) {
                values[v * width + u] = val;
                mask[v * width + u] = true;
            }
        }
    }
    InverseDepthMap::with_mask(width, height, values, mask)
}

/// One entry of a camera-path JSON list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPathEntry {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    /// Horizontal.
    pub fov_deg: f64,
}

impl CameraPathEntry {
    pub fn camera(&self, width: usize, height: usize) -> Result<PinholeCamera> {
        PinholeCamera::look_at(
            Vector3::from(self.position),
            Vector3::from(self.look_at),
            Vector3::from(self.up),
            self.fov_deg,
            width,
            height,
        )
    }
}

pub fn load_camera_path(path: impl AsRef<Path>) -> Result<Vec<CameraPathEntry>> {
    let path = path.as_ref();
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&text)?)
}
