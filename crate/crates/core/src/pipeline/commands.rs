//! Single-step commands over documented files.
//!
//! | command      | reads                                        | writes                          |
//! |--------------|----------------------------------------------|---------------------------------|
//! | `project`    | panorama PNG                                 | `face_<tag>.png`                |
//! | `fuse_depth` | panorama PNG, `face_<tag>.png`, providers    | `fused_<tag>.pfm`               |
//! | `lift`       | `face_<tag>.png`, `fused_<tag>.pfm`          | `face_<tag>.ply` + `.meta.json` |
//! | `merge`      | six per-face PLYs with sidecars              | scene PLY + `.meta.json`        |
//! | `render_*`   | scene PLY, camera path JSON                  | PNGs, inverse-depth PFMs        |
//! | `synth`      | nothing                                      | ground truth, provider files    |

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{
    face_image_name, face_scene_name, fetch_details, fetch_global, fuse_faces, fused_depth_name, lift_faces,
    project_rgb, PipelineConfig,
};
use crate::depthfusion::{project_to_faces, AffineAlignment, InverseDepthMap};
use crate::depthprovider::{fetch_depth, DepthRequest, ProviderConfig, SyntheticSource};
use crate::error::{Error, Result};
use crate::evalmetrics::{psnr, seam_consistency, SeamReport};
use crate::geometry::{CubemapFaceSet, FaceId};
use crate::imaging::{load_png_rgb, save_png8, Image};
use crate::lifting::LiftStats;
use crate::renderer::{depth_render, load_camera_path, render_equirect, render_perspective, RenderSettings};
use crate::scene::{load_gaussians, merge_detailed, CullStats, Frustum, Scene};
use crate::synthscene::{write_ground_truth, CubeRoom, DetailCorruption};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Project a panorama to six 8-bit face PNGs.
pub fn project(input: &Path, out_dir: &Path, face_size: Option<usize>, ss: usize) -> Result<Vec<PathBuf>> {
    let pano = load_png_rgb(input)?;
    let s = face_size.unwrap_or_else(|| crate::geometry::default_face_size(pano.height));
    let faces = project_rgb(&pano, s, ss)?;
    ensure_dir(out_dir)?;
    FaceId::ALL
        .iter()
        .map(|&f| {
            let p = out_dir.join(face_image_name(f));
            save_png8(faces.face(f), &p)?;
            Ok(p)
        })
        .collect()
}

/// Reads the six `face_<tag>.png` files from `dir`.
pub fn load_faces(dir: &Path) -> Result<CubemapFaceSet> {
    let faces: Vec<Image> = FaceId::ALL
        .iter()
        .map(|&f| load_png_rgb(dir.join(face_image_name(f))))
        .collect::<Result<_>>()?;
    let s = faces[0].width;
    CubemapFaceSet::new(s, faces, Vector3::zeros())
}

/// Reads the six `fused_<tag>.pfm` files from `dir`.
pub fn load_fused(dir: &Path) -> Result<Vec<InverseDepthMap>> {
    FaceId::ALL
        .iter()
        .map(|&f| InverseDepthMap::load_pfm(dir.join(fused_depth_name(f))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuseSummary {
    pub outputs: Vec<PathBuf>,
    /// Per face, [`FaceId::ALL`] order; `None` when unfused.
    pub alignments: Vec<Option<AffineAlignment>>,
    pub seam: SeamReport,
}

/// Fetch global and detail depth through the configured providers and
/// write fused per-face inverse depth.
pub fn fuse_depth(cfg: &PipelineConfig, faces_dir: &Path, out_dir: &Path) -> Result<FuseSummary> {
    let pano = load_png_rgb(&cfg.input)?;
    let faces = load_faces(faces_dir)?;
    let mut global = fetch_global(&pano, &cfg.provider, &cfg.request_id)?;
    if (global.width, global.height) != (pano.width, pano.height) {
        global = crate::depthfusion::resize_to(&global, pano.width, pano.height);
    }
    let global_faces = project_to_faces(&global, faces.face_size)?;
    let detail = fetch_details(&faces, &cfg.provider, &cfg.request_id)?;
    let (fused, alignments) = fuse_faces(&global_faces, &detail, &cfg.fusion)?;
    let seam = seam_consistency(&fused, cfg.eval.seam_samples)?;
    ensure_dir(out_dir)?;
    let outputs = FaceId::ALL
        .iter()
        .map(|&f| {
            let p = out_dir.join(fused_depth_name(f));
            fused[f.index()].save_pfm(&p)?;
            Ok(p)
        })
        .collect::<Result<_>>()?;
    Ok(FuseSummary {
        outputs,
        alignments,
        seam,
    })
}

/// Lift each face to `face_<tag>.ply` with a sidecar naming its face.
pub fn lift(cfg: &PipelineConfig, faces_dir: &Path, depth_dir: &Path, out_dir: &Path) -> Result<Vec<(PathBuf, LiftStats)>> {
    cfg.lift.validate()?;
    let faces = load_faces(faces_dir)?;
    let depth = load_fused(depth_dir)?;
    let center = Vector3::from(cfg.center);
    let lifted = lift_faces(&faces, &depth, center, &cfg.lift)?;
    ensure_dir(out_dir)?;
    lifted
        .into_iter()
        .zip(FaceId::ALL)
        .map(|((set, stats), f)| {
            let mut scene = Scene::from_face(set, f, center);
            scene.lift_params = Some(cfg.lift);
            let p = out_dir.join(face_scene_name(f));
            scene.save(&p)?;
            Ok((p, stats))
        })
        .collect()
}

/// Cull and merge per-face scenes. Each input needs its sidecar, which
/// names the source face and capture center.
pub fn merge(inputs: &[PathBuf], out: &Path) -> Result<(Scene, Vec<CullStats>)> {
    let mut sets = Vec::with_capacity(inputs.len());
    let mut frusta = Vec::with_capacity(inputs.len());
    let mut lift_params = None;
    for p in inputs {
        let s = Scene::load(p)?;
        let face = s.gaussians.source_face.or_else(|| s.provenance.first().copied()).ok_or_else(|| {
            Error::argument(format!("{}: cannot tell which face an empty, untagged scene came from", p.display()))
        })?;
        frusta.push(Frustum::new(face, s.center));
        lift_params = lift_params.or(s.lift_params);
        let mut set = s.gaussians;
        set.source_face = Some(face);
        sets.push(set);
    }
    let (mut scene, stats) = merge_detailed(&sets, &frusta)?;
    scene.lift_params = lift_params;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    scene.save(out)?;
    Ok((scene, stats))
}

/// `view_<nnn>.png` and `view_<nnn>_inverse_depth.pfm` per camera-path entry.
pub fn render_views(
    scene: &Path,
    cameras: &Path,
    width: usize,
    height: usize,
    settings: &RenderSettings,
    out_dir: &Path,
    write_depth: bool,
) -> Result<Vec<PathBuf>> {
    let g = load_gaussians(scene)?;
    let path = load_camera_path(cameras)?;
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    for (i, entry) in path.iter().enumerate() {
        let cam = entry.camera(width, height)?;
        let img = out_dir.join(format!("view_{i:03}.png"));
        save_png8(&render_perspective(&g.gaussians, &cam, settings)?.image, &img)?;
        written.push(img);
        if write_depth {
            let d = out_dir.join(format!("view_{i:03}_inverse_depth.pfm"));
            depth_render(&g.gaussians, &cam, settings)?.to_inverse().save_pfm(&d)?;
            written.push(d);
        }
    }
    Ok(written)
}

/// Equirectangular render of a scene file from `center`.
pub fn render_panorama(
    scene: &Path,
    center: Vector3<f64>,
    width: usize,
    height: usize,
    settings: &RenderSettings,
    out: &Path,
) -> Result<()> {
    let g = load_gaussians(scene)?;
    let r = render_equirect(&g.gaussians, center, width, height, settings)?;
    save_png8(&r.image, out)
}

/// Seam report over the six `fused_<tag>.pfm` files in `dir`.
pub fn seam_report(dir: &Path, samples_per_edge: usize) -> Result<SeamReport> {
    seam_consistency(&load_fused(dir)?, samples_per_edge)
}

/// PSNR between two PNGs, uncapped.
pub fn psnr_files(a: &Path, b: &Path, exclude_polar_fraction: f64) -> Result<f64> {
    psnr(&load_png_rgb(a)?, &load_png_rgb(b)?, exclude_polar_fraction)
}

/// What `synth` additionally writes for a file provider.
#[derive(Clone, Debug, PartialEq)]
pub struct ProviderFiles {
    pub request_id: String,
    pub face_size: usize,
    pub corruption: DetailCorruption,
}

/// Ground truth for the analytic room, and optionally the depth files a
/// file provider would serve for it.
pub fn synth(
    room: &CubeRoom,
    position: Vector3<f64>,
    width: usize,
    height: usize,
    out_dir: &Path,
    provider_files: Option<&ProviderFiles>,
) -> Result<Vec<PathBuf>> {
    write_ground_truth(room, &position, width, height, out_dir)?;
    let mut written: Vec<PathBuf> = ["panorama.png", "inverse_depth.pfm", "scene.json"]
        .iter()
        .map(|n| out_dir.join(n))
        .collect();
    if let Some(pf) = provider_files {
        let cfg = ProviderConfig::synthetic(SyntheticSource {
            room: room.clone(),
            position: [position.x, position.y, position.z],
            corruption: pf.corruption.clone(),
        });
        let blank_pano = Image::new(width, height, 3);
        let blank_face = Image::new(pf.face_size, pf.face_size, 3);
        let mut reqs = vec![DepthRequest::global(blank_pano, &pf.request_id)];
        reqs.extend(
            FaceId::ALL
                .iter()
                .map(|&f| DepthRequest::detail(blank_face.clone(), f, &pf.request_id)),
        );
        for r in reqs {
            let p = out_dir.join(r.file_name());
            fetch_depth(&r, &cfg)?.save_pfm(&p)?;
            written.push(p);
        }
    }
    Ok(written)
}
