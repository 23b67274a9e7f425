//! Level-swap fusion of a global and a detail inverse-depth map.

use super::{align_scale_shift, build_pyramid, collapse_pyramid, AffineAlignment, InverseDepthMap, LaplacianPyramid};
use crate::error::{Error, Result};

/// Lower bound applied to fused inverse depth (1/m).
pub const MIN_INVERSE_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    /// Pyramid levels including the residual.
    pub levels: usize,
    /// Levels `[0, crossover)` come from the aligned detail map, the rest
    /// (including the residual) from the global map.
    pub crossover: usize,
    /// Fraction of largest-residual pixels dropped before the alignment re-fit.
    pub trim: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            levels: 4,
            crossover: 3,
            trim: 0.2,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::argument(format!("pyramid levels {} < 2", self.levels)));
        }
        if self.crossover < 1 || self.crossover > self.levels - 1 {
            return Err(Error::argument(format!(
                "crossover {} not in [1, {}]",
                self.crossover,
                self.levels - 1
            )));
        }
        if !(0.0..0.5).contains(&self.trim) {
            return Err(Error::argument(format!("trim {} not in [0, 0.5)", self.trim)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FusionOutput {
    /// Collapsed, clamped result. Valid where both inputs are valid.
    pub fused: InverseDepthMap,
    /// The level-swapped pyramid before collapse and clamping.
    pub pyramid: LaplacianPyramid,
    pub alignment: AffineAlignment,
}

/// Align `detail` to `global`, then fuse. See [`fuse_with_alignment`].
pub fn fuse(global: &InverseDepthMap, detail: &InverseDepthMap, params: &FusionParams) -> Result<InverseDepthMap> {
    Ok(fuse_detailed(global, detail, params)?.fused)
}

pub fn fuse_detailed(
    global: &InverseDepthMap,
    detail: &InverseDepthMap,
    params: &FusionParams,
) -> Result<FusionOutput> {
    params.validate()?;
    check_sizes(global, detail)?;
    let alignment = align_scale_shift(detail, global, params.trim)?;
    fuse_with_alignment(global, detail, alignment, params)
}

/// Fuse with a precomputed alignment (e.g. one fit pooled over all faces).
pub fn fuse_with_alignment(
    global: &InverseDepthMap,
    detail: &InverseDepthMap,
    alignment: AffineAlignment,
    params: &FusionParams,
) -> Result<FusionOutput> {
    params.validate()?;
    check_sizes(global, detail)?;
    let aligned = alignment.apply(detail);
    let detail_pyr = build_pyramid(&aligned, params.levels)?;
    let global_pyr = build_pyramid(global, params.levels)?;

    let mask: Vec<bool> = global.mask.iter().zip(&detail.mask).map(|(a, b)| *a && *b).collect();
    let levels = detail_pyr
        .levels
        .into_iter()
        .zip(global_pyr.levels)
        .enumerate()
        .map(|(k, (d, g))| if k < params.crossover { d } else { g })
        .collect();
    let pyramid = LaplacianPyramid {
        levels,
        filled: mask.iter().map(|m| !m).collect(),
        mask,
    };
    let mut fused = collapse_pyramid(&pyramid)?;
    for v in &mut fused.values {
        *v = v.max(MIN_INVERSE_DEPTH);
    }
    Ok(FusionOutput {
        fused,
        pyramid,
        alignment,
    })
}

fn check_sizes(global: &InverseDepthMap, detail: &InverseDepthMap) -> Result<()> {
    if !global.same_size(detail) {
        return Err(Error::argument(format!(
            "fusion inputs differ in size: global {}x{}, detail {}x{}",
            global.width, global.height, detail.width, detail.height
        )));
    }
    Ok(())
}
