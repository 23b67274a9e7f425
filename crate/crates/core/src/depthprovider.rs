//! Sources of global (panoramic) and detail (per-face) inverse depth.
//!
//! Every provider returns fully valid inverse depth at `f32` precision, the
//! precision of the PFM wire format, so the choice of provider cannot change
//! what downstream stages see.

use std::path::{Path, PathBuf};
use std::time::Duration;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::depthfusion::InverseDepthMap;
use crate::error::{Error, Result};
use crate::geometry::FaceId;
use crate::imaging::{encode_png8, Image};
use crate::pfm;
use crate::synthscene::{render_ground_truth, synthetic_detail, CubeRoom, DetailCorruption};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthRole {
    GlobalPano,
    DetailFace,
}

impl DepthRole {
    pub fn as_str(self) -> &'static str {
        match self {
            DepthRole::GlobalPano => "global_pano",
            DepthRole::DetailFace => "detail_face",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthRequest {
    pub role: DepthRole,
    /// RGB in `[0, 1]`; sent as an 8-bit PNG.
    pub image: Image,
    pub face: Option<FaceId>,
    pub request_id: String,
}

impl DepthRequest {
    pub fn global(image: Image, request_id: impl Into<String>) -> Self {
        Self {
            role: DepthRole::GlobalPano,
            image,
            face: None,
            request_id: request_id.into(),
        }
    }

    pub fn detail(image: Image, face: FaceId, request_id: impl Into<String>) -> Self {
        Self {
            role: DepthRole::DetailFace,
            image,
            face: Some(face),
            request_id: request_id.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.role, self.face) {
            (DepthRole::DetailFace, None) => {
                return Err(Error::argument("detail_face request needs a face id"));
            }
            (DepthRole::GlobalPano, Some(_)) => {
                return Err(Error::argument("global_pano request must not carry a face id"));
            }
            (DepthRole::GlobalPano, None) if self.image.width != 2 * self.image.height => {
                return Err(Error::argument(format!(
                    "global_pano image must be 2:1, got {}x{}",
                    self.image.width, self.image.height
                )));
            }
            _ => {}
        }
        if self.request_id.is_empty() || self.request_id.contains(['/', '\\']) {
            return Err(Error::argument(format!("invalid request id '{}'", self.request_id)));
        }
        Ok(())
    }

    /// `<request_id>_<role>[_<face>].pfm`
    pub fn file_name(&self) -> String {
        match self.face {
            Some(f) => format!("{}_{}_{}.pfm", self.request_id, self.role.as_str(), f.tag()),
            None => format!("{}_{}.pfm", self.request_id, self.role.as_str()),
        }
    }

    fn provider_error(&self, message: impl Into<String>) -> Error {
        Error::Provider {
            request_id: self.request_id.clone(),
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    File,
    Http,
    #[default]
    Synthetic,
}

/// Analytic room the synthetic provider renders from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSource {
    pub room: CubeRoom,
    /// Capture position, metres.
    pub position: [f64; 3],
    /// Applied to detail requests only.
    pub corruption: DetailCorruption,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub base_path: Option<PathBuf>,
    pub base_url: Option<String>,
    pub timeout_ms: u64,
    /// When set, responses of another size are rejected.
    pub expected_width: Option<usize>,
    pub expected_height: Option<usize>,
    pub synthetic: SyntheticSource,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Synthetic,
            base_path: None,
            base_url: None,
            timeout_ms: 30_000,
            expected_width: None,
            expected_height: None,
            synthetic: SyntheticSource::default(),
        }
    }
}

impl ProviderConfig {
    pub fn file(base_path: impl Into<PathBuf>) -> Self {
        Self {
            kind: ProviderKind::File,
            base_path: Some(base_path.into()),
            ..Default::default()
        }
    }

    pub fn http(base_url: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Http,
            base_url: Some(base_url.into()),
            ..Default::default()
        }
    }

    pub fn synthetic(source: SyntheticSource) -> Self {
        Self {
            kind: ProviderKind::Synthetic,
            synthetic: source,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ProviderKind::File if self.base_path.is_none() => {
                Err(Error::Config("file provider needs base_path".into()))
            }
            ProviderKind::Http if self.base_url.is_none() => {
                Err(Error::Config("http provider needs base_url".into()))
            }
            ProviderKind::Http if self.timeout_ms == 0 => Err(Error::Config("timeout_ms must be > 0".into())),
            ProviderKind::Synthetic => self.synthetic.room.validate(),
            _ => Ok(()),
        }
    }
}

pub fn fetch_depth(req: &DepthRequest, cfg: &ProviderConfig) -> Result<InverseDepthMap> {
    req.validate()?;
    cfg.validate()?;
    let map = match cfg.kind {
        ProviderKind::File => fetch_file(req, cfg.base_path.as_deref().unwrap())?,
        ProviderKind::Http => fetch_http(req, cfg.base_url.as_deref().unwrap(), cfg.timeout_ms)?,
        ProviderKind::Synthetic => fetch_synthetic(req, &cfg.synthetic)?,
    };
    if let Some(w) = cfg.expected_width {
        if map.width != w {
            return Err(req.provider_error(format!("returned width {} != expected {w}", map.width)));
        }
    }
    if let Some(h) = cfg.expected_height {
        if map.height != h {
            return Err(req.provider_error(format!("returned height {} != expected {h}", map.height)));
        }
    }
    Ok(map)
}

fn decode_response(req: &DepthRequest, bytes: &[u8]) -> Result<InverseDepthMap> {
    let map = pfm::decode(bytes).map_err(|e| req.provider_error(format!("malformed PFM: {e}")))?;
    InverseDepthMap::from_pfm_strict(&map).map_err(|e| req.provider_error(e.to_string()))
}

fn fetch_file(req: &DepthRequest, base: &Path) -> Result<InverseDepthMap> {
    let path = base.join(req.file_name());
    let bytes = std::fs::read(&path).map_err(|e| req.provider_error(format!("{}: {e}", path.display())))?;
    decode_response(req, &bytes)
}

/// URL for a request: `<base>/depth/<role>[?face=<tag>]`.
pub fn request_url(base_url: &str, req: &DepthRequest) -> String {
    let base = base_url.trim_end_matches('/');
    match req.face {
        Some(f) => format!("{base}/depth/{}?face={}", req.role.as_str(), f.tag()),
        None => format!("{base}/depth/{}", req.role.as_str()),
    }
}

fn fetch_http(req: &DepthRequest, base_url: &str, timeout_ms: u64) -> Result<InverseDepthMap> {
    let body = encode_png8(&req.image)?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into();
    let url = request_url(base_url, req);
    let mut resp = agent
        .post(&url)
        .header("Content-Type", "image/png")
        .header("X-Request-Id", &req.request_id)
        .send(&body[..])
        .map_err(|e| req.provider_error(format!("POST {url}: {e}")))?;
    let status = resp.status().as_u16();
    let echoed = resp
        .headers()
        .get("x-request-id")
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned);
    let bytes = resp
        .body_mut()
        .with_config()
        .limit(u64::MAX)
        .read_to_vec()
        .map_err(|e| req.provider_error(format!("reading response: {e}")))?;
    if status != 200 {
        let text = String::from_utf8_lossy(&bytes[..bytes.len().min(512)]).into_owned();
        return Err(req.provider_error(format!("HTTP {status}: {text}")));
    }
    if let Some(id) = echoed {
        if id != req.request_id {
            return Err(req.provider_error(format!("response answers request '{id}'")));
        }
    }
    decode_response(req, &bytes)
}

fn fetch_synthetic(req: &DepthRequest, src: &SyntheticSource) -> Result<InverseDepthMap> {
    let pos = Vector3::from(src.position);
    let map = match req.face {
        None => render_ground_truth(&src.room, &pos, req.image.width, req.image.height)?.1,
        Some(face) => {
            if req.image.width != req.image.height {
                return Err(req.provider_error("detail face image must be square"));
            }
            synthetic_detail(&src.room, &pos, face, req.image.width, &src.corruption)?
        }
    };
    let map = map.rounded_to_f32();
    map.validate().map_err(|e| req.provider_error(e.to_string()))?;
    Ok(map)
}

/// Inverse depth served by the adapter's mock mode:
/// `0.5 · (1 + 0.5 · sin(2π u / W))` with `u` the column index.
pub fn mock_inverse_depth(width: usize, height: usize) -> InverseDepthMap {
    InverseDepthMap::from_fn(width, height, |u, _| {
        0.5 * (1.0 + 0.5 * (std::f64::consts::TAU * u as f64 / width as f64).sin())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_naming_and_urls() {
        let img = Image::new(8, 4, 3);
        let g = DepthRequest::global(img.clone(), "run1");
        assert_eq!(g.file_name(), "run1_global_pano.pfm");
        assert_eq!(request_url("http://h:1/", &g), "http://h:1/depth/global_pano");
        let d = DepthRequest::detail(Image::new(4, 4, 3), FaceId::NegY, "run1");
        assert_eq!(d.file_name(), "run1_detail_face_ny.pfm");
        assert_eq!(request_url("http://h:1", &d), "http://h:1/depth/detail_face?face=ny");
        let bad = DepthRequest { face: None, ..d.clone() };
        assert!(bad.validate().is_err());
        assert!(DepthRequest::global(Image::new(4, 4, 3), "x").validate().is_err());
        assert!(DepthRequest::global(img, "a/b").validate().is_err());
    }

    #[test]
    fn synthetic_global_nearest_wall() {
        let cfg = ProviderConfig::default();
        let req = DepthRequest::global(Image::new(64, 32, 3), "s");
        let m = fetch_depth(&req, &cfg).unwrap();
        let (_, hi) = m.valid_range().unwrap();
        assert!(hi <= 0.5 && hi > 0.49, "{hi}");
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = InverseDepthMap::from_fn(7, 5, |x, y| 0.1 + 0.37 * x as f64 + 0.011 * y as f64).rounded_to_f32();
        let req = DepthRequest::detail(Image::new(7, 7, 3), FaceId::PosZ, "r9");
        m.save_pfm(dir.path().join(req.file_name())).unwrap();
        let got = fetch_depth(&req, &ProviderConfig::file(dir.path())).unwrap();
        assert_eq!(got, m);
    }

    #[test]
    fn file_errors_are_provider_errors() {
        let dir = tempfile::tempdir().unwrap();
        let req = DepthRequest::detail(Image::new(4, 4, 3), FaceId::PosZ, "r1");
        let cfg = ProviderConfig::file(dir.path());
        assert!(matches!(fetch_depth(&req, &cfg), Err(Error::Provider { request_id, .. }) if request_id == "r1"));
        std::fs::write(dir.path().join(req.file_name()), b"Pf\n2 2\n-1.0\n").unwrap();
        assert!(matches!(fetch_depth(&req, &cfg), Err(Error::Provider { .. })));
        let neg = InverseDepthMap::filled(2, 2, -1.0);
        std::fs::write(dir.path().join(req.file_name()), pfm::encode(&neg.to_pfm())).unwrap();
        assert!(matches!(fetch_depth(&req, &cfg), Err(Error::Provider { .. })));
    }

    #[test]
    fn expected_resolution_is_enforced() {
        let cfg = ProviderConfig {
            expected_width: Some(32),
            ..Default::default()
        };
        let req = DepthRequest::global(Image::new(64, 32, 3), "s");
        assert!(matches!(fetch_depth(&req, &cfg), Err(Error::Provider { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(ProviderConfig { kind: ProviderKind::File, ..Default::default() }.validate().is_err());
        assert!(ProviderConfig { kind: ProviderKind::Http, ..Default::default() }.validate().is_err());
        assert!(ProviderConfig::http("http://localhost:1").validate().is_ok());
    }
}
