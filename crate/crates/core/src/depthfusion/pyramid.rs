//! Laplacian pyramid with the 5-tap binomial kernel and edge clamping.
//!
//! Filters are evaluated as `center + Σ wₖ (neighborₖ − center)` so a
//! constant signal passes through reduce/expand bit-exactly and its band
//! levels are exactly zero.

use super::{fill_nearest_valid, InverseDepthMap};
use crate::error::{Error, Result};

/// (1, 4, 6, 4, 1) / 16
pub const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidLevel {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl PyramidLevel {
    #[cfg(test)]
    fn at(&self, x: i64, y: i64) -> f64 {
        let x = x.clamp(0, self.width as i64 - 1) as usize;
        let y = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[y * self.width + x]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// `levels[0..L-1]` are band-pass images, `levels[L-1]` the low-pass residual.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianPyramid {
    pub levels: Vec<PyramidLevel>,
    /// Validity mask of the source map, re-applied on collapse.
    pub mask: Vec<bool>,
    /// Pixels whose values were synthesized by nearest-valid fill.
    pub filled: Vec<bool>,
}

impl LaplacianPyramid {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn residual(&self) -> &PyramidLevel {
        self.levels.last().expect("pyramid has at least one level")
    }
}

#[inline]
fn half(n: usize) -> usize {
    n.div_ceil(2)
}

/// Blur with the binomial kernel and keep even samples on both axes.
fn reduce(src: &PyramidLevel) -> PyramidLevel {
    let (w, h) = (src.width, src.height);
    let (ow, oh) = (half(w), half(h));
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        let at = |x: i64| row[x.clamp(0, w as i64 - 1) as usize];
        for i in 0..ow {
            let c = 2 * i as i64;
            let mid = at(c);
            horiz[y * ow + i] = mid
                + BINOMIAL5[0] * (at(c - 2) - mid)
                + BINOMIAL5[1] * (at(c - 1) - mid)
                + BINOMIAL5[3] * (at(c + 1) - mid)
                + BINOMIAL5[4] * (at(c + 2) - mid);
        }
    }
    let mut out = vec![0.0; ow * oh];
    let at = |x: usize, y: i64| horiz[y.clamp(0, h as i64 - 1) as usize * ow + x];
    for j in 0..oh {
        let c = 2 * j as i64;
        for i in 0..ow {
            let mid = at(i, c);
            out[j * ow + i] = mid
                + BINOMIAL5[0] * (at(i, c - 2) - mid)
                + BINOMIAL5[1] * (at(i, c - 1) - mid)
                + BINOMIAL5[3] * (at(i, c + 1) - mid)
                + BINOMIAL5[4] * (at(i, c + 2) - mid);
        }
    }
    PyramidLevel {
        width: ow,
        height: oh,
        data: out,
    }
}

/// One output sample of the 1-D expand: zero insertion followed by the
/// binomial kernel scaled by 2, with edge-clamped coarse samples.
#[inline]
fn expand_1d(at: impl Fn(i64) -> f64, i: usize) -> f64 {
    let k = (i / 2) as i64;
    let mid = at(k);
    if i.is_multiple_of(2) {
        // 2·(1/16, 6/16, 1/16)
        mid + 2.0 * BINOMIAL5[0] * (at(k - 1) - mid) + 2.0 * BINOMIAL5[4] * (at(k + 1) - mid)
    } else {
        // 2·(4/16, 4/16)
        mid + 2.0 * BINOMIAL5[1] * (at(k + 1) - mid)
    }
}

fn expand(src: &PyramidLevel, width: usize, height: usize) -> PyramidLevel {
    let (sw, sh) = (src.width, src.height);
    let mut horiz = vec![0.0; width * sh];
    for y in 0..sh {
        let row = &src.data[y * sw..(y + 1) * sw];
        for x in 0..width {
            horiz[y * width + x] = expand_1d(|k| row[k.clamp(0, sw as i64 - 1) as usize], x);
        }
    }
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] =
                expand_1d(|k| horiz[k.clamp(0, sh as i64 - 1) as usize * width + x], y);
        }
    }
    PyramidLevel {
        width,
        height,
        data: out,
    }
}

/// Decompose a map into `levels` pyramid levels (the last is the residual).
/// Masked pixels are filled from their nearest valid neighbor first.
pub fn build_pyramid(x: &InverseDepthMap, levels: usize) -> Result<LaplacianPyramid> {
    if levels == 0 {
        return Err(Error::argument("pyramid needs at least one level"));
    }
    let min = 1usize << (levels - 1);
    if x.width < min || x.height < min {
        return Err(Error::argument(format!(
            "{}x{} image too small for a {levels}-level pyramid (need >= {min})",
            x.width, x.height
        )));
    }
    let filled_values = fill_nearest_valid(x)?;
    let mut gauss = PyramidLevel {
        width: x.width,
        height: x.height,
        data: filled_values,
    };
    let mut out = Vec::with_capacity(levels);
    for _ in 0..levels - 1 {
        let down = reduce(&gauss);
        let up = expand(&down, gauss.width, gauss.height);
        let band = gauss
            .data
            .iter()
            .zip(&up.data)
            .map(|(g, u)| g - u)
            .collect();
        out.push(PyramidLevel {
            width: gauss.width,
            height: gauss.height,
            data: band,
        });
        gauss = down;
    }
    out.push(gauss);
    Ok(LaplacianPyramid {
        levels: out,
        mask: x.mask.clone(),
        filled: x.mask.iter().map(|m| !m).collect(),
    })
}

/// Expand the residual and add band levels back, finest last.
pub fn collapse_pyramid(p: &LaplacianPyramid) -> Result<InverseDepthMap> {
    let n = p.levels.len();
    if n == 0 {
        return Err(Error::format("empty pyramid"));
    }
    for k in 0..n - 1 {
        let (fine, coarse) = (&p.levels[k], &p.levels[k + 1]);
        if coarse.width != half(fine.width) || coarse.height != half(fine.height) {
            return Err(Error::format(format!(
                "level {} is {}x{}, expected {}x{}",
                k + 1,
                coarse.width,
                coarse.height,
                half(fine.width),
                half(fine.height)
            )));
        }
        if fine.data.len() != fine.width * fine.height {
            return Err(Error::format(format!("level {k} has a short buffer")));
        }
    }
    let base = &p.levels[0];
    if p.mask.len() != base.width * base.height {
        return Err(Error::format("pyramid mask does not match level 0"));
    }
    let mut acc = p.levels[n - 1].clone();
    for k in (0..n - 1).rev() {
        let band = &p.levels[k];
        let mut up = expand(&acc, band.width, band.height);
        for (u, b) in up.data.iter_mut().zip(&band.data) {
            *u += b;
        }
        acc = up;
    }
    Ok(InverseDepthMap {
        width: acc.width,
        height: acc.height,
        values: acc.data,
        mask: p.mask.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn level_dimensions_are_ceil_halves() {
        let m = InverseDepthMap::filled(37, 21, 1.0);
        let p = build_pyramid(&m, 4).unwrap();
        let dims: Vec<_> = p.levels.iter().map(|l| (l.width, l.height)).collect();
        assert_eq!(dims, vec![(37, 21), (19, 11), (10, 6), (5, 3)]);
    }

    #[test]
    fn constant_image_has_zero_bands() {
        let m = InverseDepthMap::filled(40, 24, 0.123456789);
        let p = build_pyramid(&m, 4).unwrap();
        for band in &p.levels[..3] {
            assert!(band.data.iter().all(|&v| v == 0.0));
        }
        assert!(p.residual().data.iter().all(|&v| v == 0.123456789));
    }

    #[test]
    fn too_small_or_inconsistent() {
        let m = InverseDepthMap::filled(7, 20, 1.0);
        assert!(matches!(build_pyramid(&m, 4), Err(Error::Argument(_))));
        let mut p = build_pyramid(&InverseDepthMap::filled(16, 16, 1.0), 3).unwrap();
        p.levels[1].width = 7;
        assert!(matches!(collapse_pyramid(&p), Err(Error::Format(_))));
    }

    #[test]
    fn masked_pixels_are_filled_and_remasked() {
        let mut m = InverseDepthMap::from_fn(16, 16, |x, y| 0.2 + 0.01 * (x + y) as f64);
        m.mask[3 * 16 + 4] = false;
        m.values[3 * 16 + 4] = f64::NAN;
        let p = build_pyramid(&m, 4).unwrap();
        assert!(p.levels.iter().all(|l| l.data.iter().all(|v| v.is_finite())));
        assert!(p.filled[3 * 16 + 4]);
        let back = collapse_pyramid(&p).unwrap();
        assert!(!back.mask[3 * 16 + 4]);
        assert_eq!(back.valid_count(), 255);
    }

    // Independent reference: direct 2-D 5x5 convolution for reduce and a
    // direct 2-D zero-insertion sum for expand, both with clamped indices.
    fn oracle_reduce(src: &PyramidLevel) -> PyramidLevel {
        let w = [1.0, 4.0, 6.0, 4.0, 1.0];
        let (ow, oh) = (src.width.div_ceil(2), src.height.div_ceil(2));
        let mut data = vec![0.0; ow * oh];
        for j in 0..oh {
            for i in 0..ow {
                let mut acc = 0.0;
                for (dy, wy) in w.iter().enumerate() {
                    for (dx, wx) in w.iter().enumerate() {
                        acc += wx * wy
                            * src.at(2 * i as i64 + dx as i64 - 2, 2 * j as i64 + dy as i64 - 2);
                    }
                }
                data[j * ow + i] = acc / 256.0;
            }
        }
        PyramidLevel { width: ow, height: oh, data }
    }

    fn oracle_expand(src: &PyramidLevel, width: usize, height: usize) -> PyramidLevel {
        let w = [1.0, 4.0, 6.0, 4.0, 1.0];
        let mut data = vec![0.0; width * height];
        for y in 0..height as i64 {
            for x in 0..width as i64 {
                let mut acc = 0.0;
                for m in 0..5i64 {
                    for n in 0..5i64 {
                        let (sx, sy) = (x + 2 - n, y + 2 - m);
                        if sx % 2 == 0 && sy % 2 == 0 {
                            acc += w[n as usize] * w[m as usize] * src.at(sx / 2, sy / 2);
                        }
                    }
                }
                data[y as usize * width + x as usize] = 4.0 * acc / 256.0;
            }
        }
        PyramidLevel { width, height, data }
    }

    #[test]
    fn impulse_bands_match_scalar_reference() {
        let n = 64;
        let mut m = InverseDepthMap::filled(n, n, 0.0);
        m.values[30 * n + 33] = 1.0;
        let p = build_pyramid(&m, 4).unwrap();

        let mut gauss = PyramidLevel { width: n, height: n, data: m.values.clone() };
        let mut reference = Vec::new();
        for _ in 0..3 {
            let down = oracle_reduce(&gauss);
            let up = oracle_expand(&down, gauss.width, gauss.height);
            let band: Vec<f64> = gauss.data.iter().zip(&up.data).map(|(g, u)| g - u).collect();
            reference.push(PyramidLevel { width: gauss.width, height: gauss.height, data: band });
            gauss = down;
        }
        reference.push(gauss);

        let mut last = f64::INFINITY;
        for (k, (ours, theirs)) in p.levels.iter().zip(&reference).enumerate() {
            for (a, b) in ours.data.iter().zip(&theirs.data) {
                assert!((a - b).abs() < 1e-6, "level {k} value mismatch");
            }
            assert!((ours.energy() - theirs.energy()).abs() < 1e-6, "level {k} energy");
            if k < 3 {
                assert!(ours.energy() < last, "band energy must decrease at level {k}");
                last = ours.energy();
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn collapse_inverts_build(w in 8usize..70, h in 8usize..70, seed in any::<u64>()) {
            let mut state = seed | 1;
            let m = InverseDepthMap::from_fn(w, h, |_, _| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 * 10.0 - 5.0
            });
            let back = collapse_pyramid(&build_pyramid(&m, 4).unwrap()).unwrap();
            let err = back.values.iter().zip(&m.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-5, "max abs error {}", err);
        }
    }
}
