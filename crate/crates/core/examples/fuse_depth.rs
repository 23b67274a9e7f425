//! Fusing a coarse metric global depth with per-face detail that has the
//! texture but the wrong scale.
//!
//! `cargo run --release --example fuse_depth`

use nalgebra::Vector3;
use panorecon::depthfusion::{area_downsample, fuse_detailed, resize_to, FusionParams, InverseDepthMap};
use panorecon::geometry::FaceId;
use panorecon::synthscene::{face_inverse_depth, synthetic_detail, CubeRoom, DetailCorruption};

fn mean_rel_err(m: &InverseDepthMap, truth: &InverseDepthMap) -> f64 {
    let sum: f64 = m.values.iter().zip(&truth.values).map(|(a, t)| ((a - t) / t).abs()).sum();
    sum / truth.values.len() as f64
}

fn main() -> panorecon::Result<()> {
    let room = CubeRoom::default();
    let pos = Vector3::new(0.3, -0.2, 0.15);
    let s = 256;
    let corruption = DetailCorruption {
        global_scale: 0.7,
        texture_amplitude: 0.01,
        ..DetailCorruption::three_coloring(1.05)
    };
    let params = FusionParams::default();

    println!("face    scale     shift  inliers   rel err: global  detail  fused");
    for f in FaceId::ALL {
        let truth = face_inverse_depth(&room, &pos, f, s)?;
        // What a low-resolution metric model sees: an 8x coarser field.
        let global = resize_to(&area_downsample(&truth, s / 8, s / 8)?, s, s);
        let detail = synthetic_detail(&room, &pos, f, s, &corruption)?;
        let out = fuse_detailed(&global, &detail, &params)?;
        let a = &out.alignment;
        println!(
            "{:<4} {:>8.4} {:>9.5} {:>8.3} {:>16.4} {:>7.4} {:>6.4}",
            f.tag(),
            a.scale,
            a.shift,
            a.inlier_ratio,
            mean_rel_err(&global, &truth),
            mean_rel_err(&detail, &truth),
            mean_rel_err(&out.fused, &truth),
        );
    }
    Ok(())
}
