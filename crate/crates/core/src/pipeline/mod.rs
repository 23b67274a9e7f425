//! End-to-end orchestration: panorama in, Gaussian scene and manifest out.
//!
//! The stages run sequentially in the order of [`STAGES`]. Each stage is
//! built from the same helpers the single-step commands in [`commands`] use,
//! so chaining those commands by hand reproduces the pipeline's PLY exactly.

pub mod commands;
mod config;

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use config::{AlignmentMode, EvalConfig, FusionConfig, FusionMode, PipelineConfig, ProvidersConfig};

use crate::depthfusion::{
    align_scale_shift, fuse_with_alignment, project_to_faces, resize_to, AffineAlignment, InverseDepthMap,
};
use crate::depthprovider::{fetch_depth, DepthRequest};
use crate::error::{Error, Result};
use crate::evalmetrics::{capped_psnr, psnr, seam_consistency, SeamReport, StageTimer, StageTiming};
use crate::geometry::{equirect_to_cubemap, CubemapFaceSet, FaceCamera, FaceId};
use crate::imaging::{load_png_rgb, save_png8, Image};
use crate::lifting::{lift_face, GaussianSet, LiftParams, LiftStats};
use crate::renderer::{render_equirect, RenderSettings};
use crate::scene::{cube_frusta, merge_detailed, CullStats, Scene};

/// Stage names in execution order. `render_eval` runs only when enabled.
pub const STAGES: [&str; 9] = [
    "load_panorama",
    "fetch_global_depth",
    "project_cubemap",
    "fetch_detail_depth",
    "fuse_depth",
    "lift",
    "cull_merge",
    "save_scene",
    "render_eval",
];

pub const SCENE_FILE: &str = "scene.ply";
pub const SCENE_META_FILE: &str = "scene.meta.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RENDER_FILE: &str = "render.png";

/// `face_<tag>.png`
pub fn face_image_name(face: FaceId) -> String {
    format!("face_{}.png", face.tag())
}

/// `fused_<tag>.pfm`
pub fn fused_depth_name(face: FaceId) -> String {
    format!("fused_{}.pfm", face.tag())
}

/// `face_<tag>.ply`
pub fn face_scene_name(face: FaceId) -> String {
    format!("face_{}.ply", face.tag())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceReport {
    pub face: FaceId,
    /// Alignment applied to this face's detail depth; `None` when unfused.
    pub alignment: Option<AffineAlignment>,
    pub lift: LiftStats,
    pub cull: CullStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderEval {
    /// Re-rendered panorama vs the input, capped at 99 dB.
    pub psnr_db: f64,
    pub exclude_polar_fraction: f64,
    /// Mean rendered alpha.
    pub mean_alpha: f64,
}

/// Contents of `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub run_id: String,
    pub config_hash: String,
    pub config: PipelineConfig,
    /// Width, height.
    pub panorama_size: [usize; 2],
    pub face_size: usize,
    pub stages: Vec<StageTiming>,
    pub faces: Vec<FaceReport>,
    pub seam: SeamReport,
    pub gaussian_count: usize,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub eval: Option<RenderEval>,
}

impl SceneManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// `run-` followed by the first 16 hex digits of the config hash.
pub fn run_id(config_hash: &str) -> String {
    format!("run-{}", &config_hash[..16.min(config_hash.len())])
}

/// Six faces of `pano`, anti-aliased and quantized to 8 bits so they equal
/// what a PNG round trip would give.
pub fn project_rgb(pano: &Image, face_size: usize, ss: usize) -> Result<CubemapFaceSet> {
    let mut set = equirect_to_cubemap(pano, face_size, ss)?;
    for f in &mut set.faces {
        *f = f.quantized_u8();
    }
    Ok(set)
}

/// Provider output at the resolution the pipeline works in.
fn at_size(map: InverseDepthMap, w: usize, h: usize) -> InverseDepthMap {
    if (map.width, map.height) == (w, h) {
        map
    } else {
        resize_to(&map, w, h)
    }
}

pub fn fetch_global(pano: &Image, providers: &ProvidersConfig, request_id: &str) -> Result<InverseDepthMap> {
    fetch_depth(&DepthRequest::global(pano.clone(), request_id), &providers.global)
}

/// Detail depth per face, resized to the face resolution.
pub fn fetch_details(faces: &CubemapFaceSet, providers: &ProvidersConfig, request_id: &str) -> Result<Vec<InverseDepthMap>> {
    let s = faces.face_size;
    FaceId::ALL
        .iter()
        .map(|&f| {
            let req = DepthRequest::detail(faces.face(f).clone(), f, request_id);
            let map = fetch_depth(&req, &providers.detail)?;
            Ok(at_size(map, s, s))
        })
        .collect()
}

/// Per-face depth handed to lifting, with the alignment applied to each face.
/// Values are rounded to `f32` so they match a PFM round trip.
pub fn fuse_faces(
    global: &[InverseDepthMap],
    detail: &[InverseDepthMap],
    fusion: &FusionConfig,
) -> Result<(Vec<InverseDepthMap>, Vec<Option<AffineAlignment>>)> {
    if global.len() != 6 || detail.len() != 6 {
        return Err(Error::argument("fusion needs six global and six detail faces"));
    }
    let params = fusion.params();
    params.validate()?;
    if fusion.mode == FusionMode::Unfused {
        return Ok((detail.iter().map(|d| d.rounded_to_f32()).collect(), vec![None; 6]));
    }
    let alignments: Vec<AffineAlignment> = match fusion.alignment {
        AlignmentMode::Joint => vec![align_scale_shift(&stack(detail)?, &stack(global)?, params.trim)?; 6],
        AlignmentMode::PerFace => detail
            .iter()
            .zip(global)
            .map(|(d, g)| align_scale_shift(d, g, params.trim))
            .collect::<Result<_>>()?,
    };
    let fused = global
        .iter()
        .zip(detail)
        .zip(&alignments)
        .map(|((g, d), a)| Ok(fuse_with_alignment(g, d, *a, &params)?.fused.rounded_to_f32()))
        .collect::<Result<Vec<_>>>()?;
    Ok((fused, alignments.into_iter().map(Some).collect()))
}

/// Faces stacked vertically, for one fit pooled over all of them.
fn stack(faces: &[InverseDepthMap]) -> Result<InverseDepthMap> {
    let w = faces[0].width;
    if faces.iter().any(|f| f.width != w) {
        return Err(Error::argument("faces differ in width"));
    }
    let h = faces.iter().map(|f| f.height).sum();
    let values = faces.iter().flat_map(|f| f.values.iter().copied()).collect();
    let mask = faces.iter().flat_map(|f| f.mask.iter().copied()).collect();
    InverseDepthMap::with_mask(w, h, values, mask)
}

/// Lift all six faces, in face order.
pub fn lift_faces(
    faces: &CubemapFaceSet,
    depth: &[InverseDepthMap],
    center: Vector3<f64>,
    params: &LiftParams,
) -> Result<Vec<(GaussianSet, LiftStats)>> {
    FaceId::ALL
        .iter()
        .map(|&f| {
            let cam = FaceCamera::new(f, faces.face_size, center);
            let (mut set, stats) = lift_face(faces.face(f), &depth[f.index()], &cam, params)?;
            set.source_face = Some(f);
            Ok((set, stats))
        })
        .collect()
}

/// Tracks files written by a run so a failed run can remove them.
struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn remove_all(&self) {
        for f in &self.files {
            let _ = std::fs::remove_file(self.dir.join(f));
        }
        if self.created_dir {
            let _ = std::fs::remove_dir(&self.dir);
        }
    }
}

fn stage<T>(timer: &mut StageTimer, name: &str, dims: String, f: impl FnOnce() -> Result<T>) -> Result<T> {
    timer.run(name, dims, f).map_err(|e| Error::Stage {
        stage: name.to_string(),
        source: Box::new(e),
    })
}

/// Validate `cfg`, run every stage and write the scene, its sidecar and
/// `manifest.json` into the output directory.
///
/// On failure the error names the stage, and files written so far are
/// removed unless `keep_partial` is set.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<SceneManifest> {
    cfg.validate()?;
    let config_hash = cfg.config_hash()?;
    let mut outputs = Outputs::new(&cfg.output_dir)?;
    let result = run_stages(cfg, config_hash, &mut outputs);
    if result.is_err() && !cfg.keep_partial {
        outputs.remove_all();
    }
    result
}

fn run_stages(cfg: &PipelineConfig, config_hash: String, out: &mut Outputs) -> Result<SceneManifest> {
    let mut timer = StageTimer::default();
    let id = cfg.request_id.as_str();
    let center = Vector3::from(cfg.center);

    let pano = stage(&mut timer, STAGES[0], cfg.input.display().to_string(), || load_png_rgb(&cfg.input))?;
    let (w, h) = (pano.width, pano.height);
    let face_size = cfg.resolved_face_size(h);
    let pano_dims = format!("{w}x{h}");
    let face_dims = format!("6x{face_size}x{face_size}");

    let global = stage(&mut timer, STAGES[1], pano_dims.clone(), || {
        let g = fetch_global(&pano, &cfg.provider, id)?;
        Ok(at_size(g, w, h))
    })?;

    let (faces, global_faces) = stage(&mut timer, STAGES[2], pano_dims.clone(), || {
        let mut faces = project_rgb(&pano, face_size, cfg.ss)?;
        faces.center = center;
        Ok((faces, project_to_faces(&global, face_size)?))
    })?;

    let detail = stage(&mut timer, STAGES[3], face_dims.clone(), || fetch_details(&faces, &cfg.provider, id))?;

    let (fused, alignments, seam) = stage(&mut timer, STAGES[4], face_dims.clone(), || {
        let (fused, alignments) = fuse_faces(&global_faces, &detail, &cfg.fusion)?;
        let seam = seam_consistency(&fused, cfg.eval.seam_samples)?;
        Ok((fused, alignments, seam))
    })?;

    let lifted = stage(&mut timer, STAGES[5], face_dims.clone(), || {
        lift_faces(&faces, &fused, center, &cfg.lift)
    })?;

    let (sets, lift_stats): (Vec<GaussianSet>, Vec<LiftStats>) = lifted.into_iter().unzip();
    let lifted_total: usize = sets.iter().map(GaussianSet::len).sum();
    let (mut scene, cull_stats) = stage(&mut timer, STAGES[6], format!("{lifted_total} gaussians"), || {
        merge_detailed(&sets, &cube_frusta(center))
    })?;
    drop(sets);
    scene.manifest_ref = run_id(&config_hash);
    scene.lift_params = Some(cfg.lift);
    scene.config_hash = Some(config_hash.clone());

    stage(&mut timer, STAGES[7], format!("{} gaussians", scene.len()), || {
        let ply = out.path(SCENE_FILE);
        out.path(SCENE_META_FILE);
        scene.save(&ply)?;
        if cfg.save_intermediates {
            for f in FaceId::ALL {
                save_png8(faces.face(f), out.path(&face_image_name(f)))?;
                fused[f.index()].save_pfm(out.path(&fused_depth_name(f)))?;
            }
        }
        Ok(())
    })?;

    let eval = if cfg.eval.render {
        Some(stage(&mut timer, STAGES[8], pano_dims, || {
            evaluate_render(&scene, &pano, center, &cfg.render, &cfg.eval, out)
        })?)
    } else {
        None
    };

    let faces_report = FaceId::ALL
        .iter()
        .map(|&f| FaceReport {
            face: f,
            alignment: alignments[f.index()],
            lift: lift_stats[f.index()].clone(),
            cull: cull_stats[f.index()].clone(),
        })
        .collect();
    let manifest_path = out.path(MANIFEST_FILE);
    let manifest = SceneManifest {
        run_id: run_id(&config_hash),
        config_hash,
        config: cfg.clone(),
        panorama_size: [w, h],
        face_size,
        stages: timer.stages,
        faces: faces_report,
        seam,
        gaussian_count: scene.len(),
        outputs: out.files.clone(),
        eval,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

fn evaluate_render(
    scene: &Scene,
    pano: &Image,
    center: Vector3<f64>,
    settings: &RenderSettings,
    eval: &EvalConfig,
    out: &mut Outputs,
) -> Result<RenderEval> {
    let r = render_equirect(&scene.gaussians.gaussians, center, pano.width, pano.height, settings)?;
    save_png8(&r.image, out.path(RENDER_FILE))?;
    let db = psnr(&r.image.quantized_u8(), pano, eval.exclude_polar_fraction)?;
    let mean_alpha = r.alpha.data.iter().map(|&a| a as f64).sum::<f64>() / r.alpha.data.len() as f64;
    Ok(RenderEval {
        psnr_db: capped_psnr(db),
        exclude_polar_fraction: eval.exclude_polar_fraction,
        mean_alpha,
    })
}
