//! Trimmed least-squares scale/shift alignment on inverse depth.

use super::InverseDepthMap;
use crate::error::{Error, Result};

pub const MIN_ALIGN_SAMPLES: usize = 16;

/// `reference ≈ scale · detail + shift` over jointly valid pixels.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AffineAlignment {
    pub scale: f64,
    /// 1/m
    pub shift: f64,
    /// Fraction of jointly valid pixels kept by the final fit.
    pub inlier_ratio: f64,
    /// Set when the detail map had no variance and the fit fell back to
    /// `scale = 1`, `shift = mean difference`.
    pub degenerate: bool,
}

impl AffineAlignment {
    pub const IDENTITY: AffineAlignment = AffineAlignment {
        scale: 1.0,
        shift: 0.0,
        inlier_ratio: 1.0,
        degenerate: false,
    };

    /// Apply to a map; masked pixels keep their (ignored) values.
    pub fn apply(&self, map: &InverseDepthMap) -> InverseDepthMap {
        InverseDepthMap {
            values: map
                .values
                .iter()
                .zip(&map.mask)
                .map(|(&v, &m)| if m { self.scale * v + self.shift } else { v })
                .collect(),
            ..map.clone()
        }
    }
}

struct Fit {
    scale: f64,
    shift: f64,
    degenerate: bool,
}

fn fit(pairs: &[(f64, f64)]) -> Fit {
    let n = pairs.len() as f64;
    let (sx, sy) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (sxx, sxy) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| {
        let dx = x - mx;
        (a + dx * dx, b + dx * (y - my))
    });
    let var = sxx / n;
    if var <= (1e-12 * mx.abs()).powi(2) + f64::MIN_POSITIVE {
        return Fit {
            scale: 1.0,
            shift: my - mx,
            degenerate: true,
        };
    }
    let scale = (sxy / sxx).max(1e-6);
    Fit {
        scale,
        shift: my - scale * mx,
        degenerate: false,
    }
}

/// Fit `(scale, shift)` mapping `detail` onto `reference`.
///
/// With `trim > 0`, one re-fit follows after dropping the `trim` fraction of
/// pixels with the largest absolute residuals. Pixels already fitting to
/// numerical precision are never dropped.
pub fn align_scale_shift(
    detail: &InverseDepthMap,
    reference: &InverseDepthMap,
    trim: f64,
) -> Result<AffineAlignment> {
    if !detail.same_size(reference) {
        return Err(Error::argument(format!(
            "alignment needs equal sizes, got {}x{} and {}x{}",
            detail.width, detail.height, reference.width, reference.height
        )));
    }
    if !(0.0..0.5).contains(&trim) {
        return Err(Error::argument(format!("trim {trim} not in [0, 0.5)")));
    }
    let pairs: Vec<(f64, f64)> = detail
        .values
        .iter()
        .zip(&reference.values)
        .zip(detail.mask.iter().zip(&reference.mask))
        .filter(|(_, (a, b))| **a && **b)
        .map(|((&x, &y), _)| (x, y))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if pairs.len() < MIN_ALIGN_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_ALIGN_SAMPLES,
            found: pairs.len(),
        });
    }

    let first = fit(&pairs);
    if first.degenerate || trim == 0.0 {
        return Ok(AffineAlignment {
            scale: first.scale,
            shift: first.shift,
            inlier_ratio: 1.0,
            degenerate: first.degenerate,
        });
    }

    let mean_abs = pairs.iter().map(|(_, y)| y.abs()).sum::<f64>() / pairs.len() as f64;
    let tol = 1e-12 * (mean_abs + 1.0);
    let mut ranked: Vec<(f64, usize)> = pairs
        .iter()
        .enumerate()
        .map(|(i, (x, y))| ((first.scale * x + first.shift - y).abs(), i))
        .filter(|(r, _)| *r > tol)
        .collect();
    let drop = ((trim * pairs.len() as f64).floor() as usize).min(ranked.len());
    if drop == 0 {
        return Ok(AffineAlignment {
            scale: first.scale,
            shift: first.shift,
            inlier_ratio: 1.0,
            degenerate: false,
        });
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut keep = vec![true; pairs.len()];
    for &(_, i) in &ranked[..drop] {
        keep[i] = false;
    }
    let kept: Vec<(f64, f64)> = pairs
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(p, _)| *p)
        .collect();
    if kept.len() < MIN_ALIGN_SAMPLES {
        return Ok(AffineAlignment {
            scale: first.scale,
            shift: first.shift,
            inlier_ratio: 1.0,
            degenerate: false,
        });
    }
    let second = fit(&kept);
    Ok(AffineAlignment {
        scale: second.scale,
        shift: second.shift,
        inlier_ratio: kept.len() as f64 / pairs.len() as f64,
        degenerate: second.degenerate,
    })
}
