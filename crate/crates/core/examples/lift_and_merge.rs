//! Lifting six faces with exact depth to Gaussians, then culling each face
//! to its own frustum and merging.
//!
//! `cargo run --release --example lift_and_merge [OUT_DIR]`

use nalgebra::Vector3;
use panorecon::geometry::FaceId;
use panorecon::lifting::{lift_face, LiftParams};
use panorecon::pipeline::project_rgb;
use panorecon::scene::{cube_frusta, merge_detailed};
use panorecon::synthscene::{face_inverse_depth, render_ground_truth, CubeRoom};

fn main() -> panorecon::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/examples/lift".into()));
    let room = CubeRoom::default();
    let pos = Vector3::new(0.3, -0.2, 0.15);
    let s = 128;

    let (pano, _) = render_ground_truth(&room, &pos, 4 * s, 2 * s)?;
    let mut faces = project_rgb(&pano, s, 2)?;
    faces.center = pos;
    let params = LiftParams::default();

    let mut sets = Vec::new();
    for f in FaceId::ALL {
        let depth = face_inverse_depth(&room, &pos, f, s)?;
        let (mut set, stats) = lift_face(faces.face(f), &depth, &faces.camera(f), &params)?;
        set.source_face = Some(f);
        println!("{}: lifted {}, skipped {}", f.tag(), stats.count, stats.skipped);
        sets.push(set);
    }
    let (mut scene, culls) = merge_detailed(&sets, &cube_frusta(pos))?;
    for c in &culls {
        println!("{}: kept {} / {}", c.face.tag(), c.kept, c.input);
    }
    scene.lift_params = Some(params);
    std::fs::create_dir_all(&out).map_err(|e| panorecon::Error::io(&out, e))?;
    let ply = out.join("scene.ply");
    scene.save(&ply)?;
    println!("{} Gaussians -> {}", scene.len(), ply.display());
    Ok(())
}
