//! Seam consistency of per-face depth: raw detail faces with a different
//! scale on each face, against the same faces after fusion.
//!
//! `cargo run --release --example seam_eval`

use nalgebra::Vector3;
use panorecon::depthfusion::{project_to_faces, InverseDepthMap};
use panorecon::evalmetrics::{seam_consistency, SeamReport};
use panorecon::geometry::FaceId;
use panorecon::pipeline::{fuse_faces, AlignmentMode, FusionConfig};
use panorecon::synthscene::{render_ground_truth, synthetic_detail, CubeRoom, DetailCorruption};

fn print(label: &str, r: &SeamReport) {
    println!("{label}: mean {:.5}", r.mean.unwrap_or(f64::NAN));
    for e in &r.edges {
        print!("  {}|{} {:.4}", e.faces.0.tag(), e.faces.1.tag(), e.mean.unwrap_or(f64::NAN));
    }
    println!();
}

fn main() -> panorecon::Result<()> {
    let room = CubeRoom::default();
    let pos = Vector3::new(0.3, -0.2, 0.15);
    let s = 256;
    let (_, global) = render_ground_truth(&room, &pos, 4 * s, 2 * s)?;
    let global_faces = project_to_faces(&global, s)?;
    let corruption = DetailCorruption::three_coloring(1.05);
    let detail: Vec<InverseDepthMap> = FaceId::ALL
        .iter()
        .map(|&f| synthetic_detail(&room, &pos, f, s, &corruption))
        .collect::<panorecon::Result<_>>()?;

    print("unfused", &seam_consistency(&detail, 64)?);
    for mode in [AlignmentMode::Joint, AlignmentMode::PerFace] {
        let cfg = FusionConfig {
            alignment: mode,
            ..Default::default()
        };
        let (fused, _) = fuse_faces(&global_faces, &detail, &cfg)?;
        print(&format!("fused ({mode:?})"), &seam_consistency(&fused, 64)?);
    }
    Ok(())
}
