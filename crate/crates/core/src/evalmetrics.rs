//! Seam consistency, PSNR and per-stage timing.

use std::fmt;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::depthfusion::InverseDepthMap;
use crate::error::{Error, Result};
use crate::geometry::FaceId;
use crate::imaging::Image;

pub const DEFAULT_SEAM_SAMPLES: usize = 64;
/// Edges with fewer valid samples are flagged and left out of the aggregates.
pub const MIN_SEAM_SAMPLES: usize = 8;
/// Value written to JSON in place of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 99.0;

/// The 12 pairs of adjacent faces, in face order.
pub fn cube_edges() -> Vec<(FaceId, FaceId)> {
    let mut out = Vec::with_capacity(12);
    for (i, &a) in FaceId::ALL.iter().enumerate() {
        for &b in &FaceId::ALL[i + 1..] {
            if a.index() / 2 != b.index() / 2 {
                out.push((a, b));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSeam {
    pub faces: (FaceId, FaceId),
    /// Mean and max of `|d₁ − d₂| / ((d₁ + d₂)/2)` over valid samples.
    pub mean: Option<f64>,
    pub max: Option<f64>,
    pub valid_samples: usize,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeamReport {
    pub edges: Vec<EdgeSeam>,
    /// Mean of the unflagged edge means.
    pub mean: Option<f64>,
    /// Max over unflagged edges.
    pub max: Option<f64>,
    pub samples_per_edge: usize,
}

impl SeamReport {
    pub fn edge(&self, a: FaceId, b: FaceId) -> Option<&EdgeSeam> {
        self.edges
            .iter()
            .find(|e| e.faces == (a, b) || e.faces == (b, a))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.5}"))
}

impl fmt::Display for SeamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "edge     mean      max       samples")?;
        for e in &self.edges {
            writeln!(
                f,
                "{}-{}    {:<9} {:<9} {}{}",
                e.faces.0,
                e.faces.1,
                opt(e.mean),
                opt(e.max),
                e.valid_samples,
                if e.flagged { "  (flagged)" } else { "" }
            )?;
        }
        write!(f, "all      {:<9} {}", opt(self.mean), opt(self.max))
    }
}

/// Face-plane continuous pixel position of direction `d` on `face`.
fn face_position(face: FaceId, d: &Vector3<f64>, s: usize) -> Option<(f64, f64)> {
    let (a, b) = face.coords(d)?;
    let s = s as f64;
    Some(((a + 1.0) * s / 2.0 - 0.5, (b + 1.0) * s / 2.0 - 0.5))
}

/// Bilinear read that continues linearly past the outermost pixel centers,
/// so a point on the face border is not biased by half a pixel.
fn read_extrapolated(map: &InverseDepthMap, x: f64, y: f64) -> Option<f64> {
    let (xc, yc) = (x.clamp(0.0, map.width as f64 - 1.0), y.clamp(0.0, map.height as f64 - 1.0));
    let (dx, dy) = (x - xc, y - yc);
    let v = map.sample(xc, yc, false)?;
    let mut out = v;
    if dx != 0.0 {
        out += dx.abs() * (v - map.sample(xc - dx.signum(), yc, false)?);
    }
    if dy != 0.0 {
        out += dy.abs() * (v - map.sample(xc, yc - dy.signum(), false)?);
    }
    Some(out)
}

/// Relative inverse-depth discontinuity along the 12 shared cube edges.
///
/// Edge `(n₁, n₂)` is sampled at directions `n₁ + n₂ + t(n₁ × n₂)` with
/// `t_k = −1 + (2k+1)/N`; each face is read bilinearly, extrapolating
/// linearly from the last two pixels where the edge lies outside the
/// outermost pixel centers.
pub fn seam_consistency(faces: &[InverseDepthMap], samples_per_edge: usize) -> Result<SeamReport> {
    if faces.len() != 6 {
        return Err(Error::argument(format!("{} face maps, expected 6", faces.len())));
    }
    let s = faces[0].width;
    if faces.iter().any(|f| f.width != s || f.height != s) {
        return Err(Error::argument("face maps must be square and equally sized"));
    }
    if samples_per_edge == 0 {
        return Err(Error::argument("samples_per_edge must be > 0"));
    }
    let n = samples_per_edge;
    let mut edges = Vec::with_capacity(12);
    for (fa, fb) in cube_edges() {
        let (na, nb) = (fa.forward(), fb.forward());
        let t = na.cross(&nb);
        let mut rs = Vec::with_capacity(n);
        for k in 0..n {
            let tk = -1.0 + (2 * k + 1) as f64 / n as f64;
            let d = na + nb + tk * t;
            let read = |face: FaceId| {
                let (x, y) = face_position(face, &d, s)?;
                read_extrapolated(&faces[face.index()], x, y)
            };
            if let (Some(d1), Some(d2)) = (read(fa), read(fb)) {
                if d1 > 0.0 && d2 > 0.0 {
                    rs.push((d1 - d2).abs() / ((d1 + d2) / 2.0));
                }
            }
        }
        let valid = rs.len();
        let mean = (valid > 0).then(|| rs.iter().sum::<f64>() / valid as f64);
        let max = rs.iter().copied().reduce(f64::max);
        edges.push(EdgeSeam {
            faces: (fa, fb),
            mean,
            max,
            valid_samples: valid,
            flagged: valid < MIN_SEAM_SAMPLES,
        });
    }
    let good: Vec<&EdgeSeam> = edges.iter().filter(|e| !e.flagged).collect();
    let mean = (!good.is_empty()).then(|| good.iter().filter_map(|e| e.mean).sum::<f64>() / good.len() as f64);
    let max = good.iter().filter_map(|e| e.max).reduce(f64::max);
    Ok(SeamReport {
        edges,
        mean,
        max,
        samples_per_edge: n,
    })
}

/// Rows skipped at each pole: half of `fraction · height`, rounded down.
pub fn polar_rows(height: usize, fraction: f64) -> usize {
    ((fraction * height as f64) / 2.0).floor() as usize
}

/// PSNR in dB over all channels of the rows kept after polar exclusion
/// (`exclude_polar_fraction` of all rows, split between the two poles).
/// Identical inputs give `+∞`.
pub fn psnr(a: &Image, b: &Image, exclude_polar_fraction: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::argument(format!(
            "psnr needs equal shapes, got {}x{}x{} and {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    if !(0.0..1.0).contains(&exclude_polar_fraction) {
        return Err(Error::argument(format!(
            "exclude_polar_fraction {exclude_polar_fraction} not in [0, 1)"
        )));
    }
    let k = polar_rows(a.height, exclude_polar_fraction);
    let rows = k..a.height - k;
    if rows.is_empty() {
        return Err(Error::argument("no rows left after polar exclusion"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in rows {
        for (p, q) in a.row(y).iter().zip(b.row(y)) {
            let d = *p as f64 - *q as f64;
            sum += d * d;
            n += 1;
        }
    }
    let mse = sum / n as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

/// PSNR as written to reports.
pub fn capped_psnr(db: f64) -> f64 {
    db.min(PSNR_CAP_DB)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub wall_ms: f64,
    /// Peak resident set size of the process so far; 0 if unknown.
    pub peak_rss_bytes: u64,
    pub input_dims: String,
}

/// `VmHWM` from `/proc/self/status`, in bytes.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Collects [`StageTiming`]s in call order.
#[derive(Clone, Debug, Default)]
pub struct StageTimer {
    pub stages: Vec<StageTiming>,
}

impl StageTimer {
    pub fn run<T>(&mut self, stage: &str, input_dims: impl Into<String>, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push(StageTiming {
            stage: stage.to_string(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            peak_rss_bytes: peak_rss_bytes().unwrap_or(0),
            input_dims: input_dims.into(),
        });
        out
    }
}

/// One JSON line per stage and a final `total` line.
pub fn timing_report(stages: &[StageTiming]) -> Result<Vec<String>> {
    let total = StageTiming {
        stage: "total".into(),
        wall_ms: stages.iter().map(|s| s.wall_ms).sum(),
        peak_rss_bytes: stages.iter().map(|s| s.peak_rss_bytes).max().unwrap_or(0),
        input_dims: String::new(),
    };
    stages
        .iter()
        .chain(std::iter::once(&total))
        .map(|s| serde_json::to_string(s).map_err(Error::from))
        .collect()
}
