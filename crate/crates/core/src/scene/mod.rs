//! Frustum culling, per-face merge and scene persistence.

pub mod ply;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{face_assignment, FaceId};
use crate::lifting::{GaussianSet, LiftParams};

/// The direction sector owned by one cube face, seen from `center`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frustum {
    pub face_id: FaceId,
    pub center: Vector3<f64>,
    /// Dilation in face-plane units: a direction is also kept when its face
    /// coordinates satisfy `max(|a|, |b|) ≤ 1 + margin_eps`. Zero gives the
    /// exact partition.
    pub margin_eps: f64,
}

impl Frustum {
    pub fn new(face_id: FaceId, center: Vector3<f64>) -> Self {
        Self {
            face_id,
            center,
            margin_eps: 0.0,
        }
    }

    pub fn contains(&self, point: &Vector3<f64>) -> bool {
        let d = point - self.center;
        if face_assignment(&d) == self.face_id {
            return true;
        }
        if self.margin_eps > 0.0 {
            if let Some((a, b)) = self.face_id.coords(&d) {
                return a.abs().max(b.abs()) <= 1.0 + self.margin_eps;
            }
        }
        false
    }
}

/// Keep the Gaussians whose mean lies in `f`. Provenance fields follow the kept
/// Gaussians.
pub fn cull(set: &GaussianSet, f: &Frustum) -> GaussianSet {
    let keep: Vec<bool> = set.gaussians.par_iter().map(|g| f.contains(&g.mean_f64())).collect();
    GaussianSet {
        gaussians: set.gaussians.iter().zip(&keep).filter(|(_, k)| **k).map(|(g, _)| *g).collect(),
        source_face: set.source_face,
        source_pixels: set
            .source_pixels
            .as_ref()
            .map(|p| p.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| *p).collect()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CullStats {
    pub face: FaceId,
    pub input: usize,
    pub kept: usize,
}

impl CullStats {
    pub fn culled_fraction(&self) -> f64 {
        if self.input == 0 {
            0.0
        } else {
            (self.input - self.kept) as f64 / self.input as f64
        }
    }
}

/// A merged panoramic scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub gaussians: GaussianSet,
    /// Source face of each Gaussian.
    pub provenance: Vec<FaceId>,
    /// Identifier of the run that produced the scene.
    pub manifest_ref: String,
    /// Shared capture center, metres.
    pub center: Vector3<f64>,
    pub lift_params: Option<LiftParams>,
    pub config_hash: Option<String>,
}

/// One run of consecutive Gaussians with the same source face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceRun {
    pub face: FaceId,
    pub count: usize,
}

/// Contents of `<scene>.meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub manifest_ref: String,
    pub center: [f64; 3],
    pub gaussian_count: usize,
    pub face_runs: Vec<FaceRun>,
    pub lift_params: Option<LiftParams>,
    pub config_hash: Option<String>,
}

/// `scene.ply` → `scene.meta.json`.
pub fn sidecar_path(ply_path: &Path) -> PathBuf {
    ply_path.with_extension("meta.json")
}

impl Scene {
    /// Wraps one lifted face as a single-provenance scene.
    pub fn from_face(set: GaussianSet, face: FaceId, center: Vector3<f64>) -> Self {
        Self {
            provenance: vec![face; set.len()],
            gaussians: GaussianSet {
                source_face: Some(face),
                ..set
            },
            manifest_ref: String::new(),
            center,
            lift_params: None,
            config_hash: None,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.provenance.len() != self.gaussians.len() {
            return Err(Error::data(format!(
                "{} provenance tags for {} gaussians",
                self.provenance.len(),
                self.gaussians.len()
            )));
        }
        self.gaussians.validate()?;
        if let Some(px) = &self.gaussians.source_pixels {
            let mut seen = HashSet::with_capacity(px.len());
            for (f, p) in self.provenance.iter().zip(px) {
                if !seen.insert((*f, *p)) {
                    return Err(Error::data(format!("duplicate gaussian for face {f} pixel {p}")));
                }
            }
        }
        Ok(())
    }

    pub fn face_runs(&self) -> Vec<FaceRun> {
        let mut runs: Vec<FaceRun> = Vec::new();
        for &f in &self.provenance {
            match runs.last_mut() {
                Some(r) if r.face == f => r.count += 1,
                _ => runs.push(FaceRun { face: f, count: 1 }),
            }
        }
        runs
    }

    pub fn meta(&self) -> SceneMeta {
        SceneMeta {
            manifest_ref: self.manifest_ref.clone(),
            center: [self.center.x, self.center.y, self.center.z],
            gaussian_count: self.len(),
            face_runs: self.face_runs(),
            lift_params: self.lift_params,
            config_hash: self.config_hash.clone(),
        }
    }

    pub fn to_ply(&self) -> Vec<u8> {
        ply::write(&self.gaussians.gaussians)
    }

    /// Rebuild from PLY bytes and the matching sidecar.
    pub fn from_parts(ply_bytes: &[u8], meta: &SceneMeta) -> Result<Self> {
        let set = ply::read(ply_bytes)?;
        if meta.gaussian_count != set.len() {
            return Err(Error::format(format!(
                "sidecar lists {} gaussians, PLY has {}",
                meta.gaussian_count,
                set.len()
            )));
        }
        let mut provenance = Vec::with_capacity(set.len());
        for r in &meta.face_runs {
            provenance.extend(std::iter::repeat_n(r.face, r.count));
        }
        if provenance.len() != set.len() {
            return Err(Error::format(format!(
                "sidecar face runs cover {} gaussians, PLY has {}",
                provenance.len(),
                set.len()
            )));
        }
        let faces: HashSet<FaceId> = provenance.iter().copied().collect();
        let source_face = if faces.len() == 1 { faces.into_iter().next() } else { None };
        Ok(Self {
            gaussians: GaussianSet {
                source_face,
                ..set
            },
            provenance,
            manifest_ref: meta.manifest_ref.clone(),
            center: Vector3::from(meta.center),
            lift_params: meta.lift_params,
            config_hash: meta.config_hash.clone(),
        })
    }

    /// Write `path` and its `.meta.json` sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_ply()).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let json = serde_json::to_vec_pretty(&self.meta())?;
        std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let meta_bytes = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
        let meta: SceneMeta = serde_json::from_slice(&meta_bytes)?;
        Self::from_parts(&bytes, &meta)
    }
}

/// Reads only the PLY, for consumers that need no provenance (rendering).
pub fn load_gaussians(path: impl AsRef<Path>) -> Result<GaussianSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ply::read(&bytes)
}

/// Cull each face's set with its frustum and concatenate in face order.
pub fn merge(sets: &[GaussianSet], frusta: &[Frustum]) -> Result<Scene> {
    Ok(merge_detailed(sets, frusta)?.0)
}

pub fn merge_detailed(sets: &[GaussianSet], frusta: &[Frustum]) -> Result<(Scene, Vec<CullStats>)> {
    if sets.len() != frusta.len() {
        return Err(Error::argument(format!(
            "{} gaussian sets for {} frusta",
            sets.len(),
            frusta.len()
        )));
    }
    let mut slot: [Option<usize>; 6] = [None; 6];
    for (i, f) in frusta.iter().enumerate() {
        if slot[f.face_id.index()].replace(i).is_some() {
            return Err(Error::argument(format!("duplicate face id {}", f.face_id)));
        }
        if let Some(sf) = sets[i].source_face {
            if sf != f.face_id {
                return Err(Error::argument(format!(
                    "set tagged {sf} paired with frustum {}",
                    f.face_id
                )));
            }
        }
    }
    let missing: Vec<String> = FaceId::ALL
        .iter()
        .filter(|f| slot[f.index()].is_none())
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::argument(format!("missing face(s): {}", missing.join(", "))));
    }
    let center = frusta[0].center;
    if frusta.iter().any(|f| f.center != center) {
        return Err(Error::argument("frusta do not share one center"));
    }

    let order: Vec<usize> = FaceId::ALL.iter().map(|f| slot[f.index()].unwrap()).collect();
    let culled: Vec<GaussianSet> = order.par_iter().map(|&i| cull(&sets[i], &frusta[i])).collect();

    let total = culled.iter().map(GaussianSet::len).sum();
    let keep_pixels = culled.iter().all(|s| s.source_pixels.is_some());
    let mut gaussians = Vec::with_capacity(total);
    let mut provenance = Vec::with_capacity(total);
    let mut pixels = Vec::with_capacity(if keep_pixels { total } else { 0 });
    let mut stats = Vec::with_capacity(6);
    for (&i, c) in order.iter().zip(&culled) {
        let face = frusta[i].face_id;
        gaussians.extend_from_slice(&c.gaussians);
        provenance.extend(std::iter::repeat_n(face, c.len()));
        if keep_pixels {
            pixels.extend_from_slice(c.source_pixels.as_ref().unwrap());
        }
        let s = CullStats {
            face,
            input: sets[i].len(),
            kept: c.len(),
        };
        log::info!("face {face}: culled {:.4} of {} gaussians", s.culled_fraction(), s.input);
        stats.push(s);
    }
    let scene = Scene {
        gaussians: GaussianSet {
            gaussians,
            source_face: None,
            source_pixels: keep_pixels.then_some(pixels),
        },
        provenance,
        manifest_ref: String::new(),
        center,
        lift_params: None,
        config_hash: None,
    };
    Ok((scene, stats))
}

/// Six frusta at `center` in face order.
pub fn cube_frusta(center: Vector3<f64>) -> Vec<Frustum> {
    FaceId::ALL.iter().map(|&f| Frustum::new(f, center)).collect()
}
