use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::depthfusion::FusionParams;
use crate::depthprovider::{ProviderConfig, ProviderKind};
use crate::error::{Error, Result};
use crate::geometry::default_face_size;
use crate::lifting::LiftParams;
use crate::renderer::RenderSettings;

/// How detail depth is mapped onto the global depth's scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    /// One fit pooled over all six faces.
    #[default]
    Joint,
    /// An independent fit per face.
    PerFace,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Fused,
    /// Raw detail depth per face; a baseline for seam evaluation.
    Unfused,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub levels: usize,
    pub crossover: usize,
    pub trim: f64,
    pub alignment: AlignmentMode,
    pub mode: FusionMode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        let p = FusionParams::default();
        Self {
            levels: p.levels,
            crossover: p.crossover,
            trim: p.trim,
            alignment: AlignmentMode::default(),
            mode: FusionMode::default(),
        }
    }
}

impl FusionConfig {
    pub fn params(&self) -> FusionParams {
        FusionParams {
            levels: self.levels,
            crossover: self.crossover,
            trim: self.trim,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub global: ProviderConfig,
    pub detail: ProviderConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Re-render the panorama from the capture center and report PSNR.
    pub render: bool,
    pub seam_samples: usize,
    /// Fraction of panorama rows excluded from PSNR, split between the poles.
    pub exclude_polar_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            render: false,
            seam_samples: crate::evalmetrics::DEFAULT_SEAM_SAMPLES,
            exclude_polar_fraction: 0.05,
        }
    }
}

/// Everything a run depends on. Loaded from TOML; every key can be
/// overridden with a dotted path such as `fusion.crossover = 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Equirectangular RGB panorama (PNG, 2:1).
    pub input: PathBuf,
    pub output_dir: PathBuf,
    /// Names provider requests and provider files.
    pub request_id: String,
    /// Capture position in world coordinates, metres.
    pub center: [f64; 3],
    /// Defaults to half the panorama height, rounded to a multiple of 16.
    pub face_size: Option<usize>,
    /// Supersampling factor per axis for the RGB projection.
    pub ss: usize,
    pub fusion: FusionConfig,
    pub lift: LiftParams,
    pub render: RenderSettings,
    pub provider: ProvidersConfig,
    pub eval: EvalConfig,
    /// Emit per-stage timing records.
    pub timing: bool,
    /// Keep files written by a failed run.
    pub keep_partial: bool,
    /// Also write the face images and fused depth maps.
    pub save_intermediates: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            output_dir: PathBuf::from("out"),
            request_id: "scene".into(),
            center: [0.0; 3],
            face_size: None,
            ss: 2,
            fusion: FusionConfig::default(),
            lift: LiftParams::default(),
            render: RenderSettings::default(),
            provider: ProvidersConfig::default(),
            eval: EvalConfig::default(),
            timing: true,
            keep_partial: false,
            save_intermediates: false,
        }
    }
}

/// The fields that change what a run computes.
#[derive(Serialize)]
struct Semantic<'a> {
    input: &'a Path,
    request_id: &'a str,
    center: [f64; 3],
    face_size: Option<usize>,
    ss: usize,
    fusion: &'a FusionConfig,
    lift: &'a LiftParams,
    render: &'a RenderSettings,
    provider: &'a ProvidersConfig,
    eval: &'a EvalConfig,
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Parse a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key '{key}'")));
    }
    let mut t = table;
    for p in &parts[..parts.len() - 1] {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{p}' in '{key}' is not a table")))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parse `text`, then apply `key=value` overrides. Values are TOML
    /// literals; anything that does not parse as one is taken as a string.
    pub fn from_toml_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(config_error)?;
        for (k, v) in overrides {
            set_dotted(&mut table, k, parse_value(v))?;
        }
        toml::Value::Table(table).try_into().map_err(config_error)
    }

    /// Read a TOML file (or start from defaults when `path` is `None`) and
    /// apply overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn resolved_face_size(&self, pano_height: usize) -> usize {
        self.face_size.unwrap_or_else(|| default_face_size(pano_height))
    }

    /// SHA-256 over the fields that affect results, hex encoded. Output
    /// location and reporting switches are excluded.
    pub fn config_hash(&self) -> Result<String> {
        let sem = Semantic {
            input: &self.input,
            request_id: &self.request_id,
            center: self.center,
            face_size: self.face_size,
            ss: self.ss,
            fusion: &self.fusion,
            lift: &self.lift,
            render: &self.render,
            provider: &self.provider,
            eval: &self.eval,
        };
        let bytes = serde_json::to_vec(&sem)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// Checks ranges and referenced paths without running anything.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.input.as_os_str().is_empty() {
            return fail("input panorama path is required".into());
        }
        if !self.input.is_file() {
            return fail(format!("input panorama {} not found", self.input.display()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return fail("output_dir must not be empty".into());
        }
        if self.request_id.is_empty() || self.request_id.contains(['/', '\\']) {
            return fail(format!("invalid request_id '{}'", self.request_id));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return fail("center must be finite".into());
        }
        let min_face = 8.max(1 << (self.fusion.levels.clamp(1, 16) - 1));
        if let Some(s) = self.face_size {
            if s < min_face {
                return fail(format!("face_size {s} must be >= {min_face}"));
            }
        }
        if !(1..=4).contains(&self.ss) {
            return fail(format!("ss {} not in 1..=4", self.ss));
        }
        self.fusion.params().validate().map_err(config_error)?;
        self.lift.validate().map_err(config_error)?;
        self.render.validate().map_err(config_error)?;
        for (role, p) in [("global", &self.provider.global), ("detail", &self.provider.detail)] {
            p.validate().map_err(|e| Error::Config(format!("provider.{role}: {e}")))?;
            if p.kind == ProviderKind::File {
                let base = p.base_path.as_deref().unwrap();
                if !base.is_dir() {
                    return fail(format!("provider.{role}.base_path {} is not a directory", base.display()));
                }
            }
        }
        if self.eval.seam_samples == 0 {
            return fail("eval.seam_samples must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.eval.exclude_polar_fraction) {
            return fail(format!(
                "eval.exclude_polar_fraction {} not in [0, 1)",
                self.eval.exclude_polar_fraction
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml_str("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn dotted_keys_and_overrides() {
        let text = "input = \"p.png\"\nfusion.crossover = 2\n[lift]\nstride = 3\n";
        let over = [
            ("fusion.levels".to_string(), "5".to_string()),
            ("provider.detail.synthetic.corruption.face_scale".to_string(), "[1, 1, 1.05, 1.05, 1.1, 1.1]".to_string()),
            ("output_dir".to_string(), "some/dir".to_string()),
        ];
        let c = PipelineConfig::from_toml_with_overrides(text, &over).unwrap();
        assert_eq!(c.fusion.crossover, 2);
        assert_eq!(c.fusion.levels, 5);
        assert_eq!(c.lift.stride, 3);
        assert_eq!(c.output_dir, PathBuf::from("some/dir"));
        assert_eq!(c.provider.detail.synthetic.corruption.face_scale[4], 1.1);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        for text in ["fusion.levles = 3", "bogus = 1", "[lift]\nstrid = 2"] {
            let e = PipelineConfig::from_toml_str(text).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{text}: {e:?}");
            assert_eq!(e.exit_code(), 2);
        }
    }

    #[test]
    fn toml_round_trip() {
        let mut c = PipelineConfig::default();
        c.face_size = Some(64);
        c.fusion.alignment = AlignmentMode::PerFace;
        let back = PipelineConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn hash_tracks_semantic_fields_only() {
        let base = PipelineConfig::default();
        let h = base.config_hash().unwrap();
        assert_eq!(h.len(), 64);
        assert_eq!(h, base.clone().config_hash().unwrap());

        let mut c = base.clone();
        c.output_dir = "elsewhere".into();
        c.timing = false;
        c.keep_partial = true;
        c.save_intermediates = true;
        assert_eq!(c.config_hash().unwrap(), h);

        let variants: Vec<Box<dyn Fn(&mut PipelineConfig)>> = vec![
            Box::new(|c| c.input = "other.png".into()),
            Box::new(|c| c.face_size = Some(128)),
            Box::new(|c| c.ss = 3),
            Box::new(|c| c.fusion.trim = 0.1),
            Box::new(|c| c.fusion.alignment = AlignmentMode::PerFace),
            Box::new(|c| c.lift.scale_gain = 1.5),
            Box::new(|c| c.render.tile_size = 8),
            Box::new(|c| c.provider.detail.synthetic.corruption.global_scale = 0.7),
            Box::new(|c| c.center[1] = 0.25),
            Box::new(|c| c.request_id = "other".into()),
        ];
        for (i, v) in variants.iter().enumerate() {
            let mut c = base.clone();
            v(&mut c);
            assert_ne!(c.config_hash().unwrap(), h, "variant {i}");
        }
    }

    #[test]
    fn validation_rejects_before_running() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("p.png");
        std::fs::write(&input, b"not checked here").unwrap();
        let ok = PipelineConfig {
            input: input.clone(),
            ..Default::default()
        };
        ok.validate().unwrap();

        let bad: Vec<PipelineConfig> = vec![
            PipelineConfig::default(),
            PipelineConfig {
                face_size: Some(0),
                ..ok.clone()
            },
            PipelineConfig {
                ss: 0,
                ..ok.clone()
            },
            PipelineConfig {
                input: dir.path().join("missing.png"),
                ..ok.clone()
            },
            PipelineConfig {
                provider: ProvidersConfig {
                    global: ProviderConfig::file(dir.path().join("nope")),
                    ..Default::default()
                },
                ..ok.clone()
            },
        ];
        for c in bad {
            let e = c.validate().unwrap_err();
            assert_eq!(e.exit_code(), 2, "{e}");
        }
    }
}
