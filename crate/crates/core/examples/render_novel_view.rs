//! Rendering a lifted room from a camera 10 cm off the capture center, and
//! the equirect panorama back from the center.
//!
//! `cargo run --release --example render_novel_view [OUT_DIR]`

use nalgebra::Vector3;
use panorecon::geometry::FaceId;
use panorecon::imaging::save_png8;
use panorecon::lifting::{lift_face, LiftParams};
use panorecon::pipeline::project_rgb;
use panorecon::renderer::{render_equirect, render_perspective, PinholeCamera, RenderSettings};
use panorecon::scene::{cube_frusta, merge};
use panorecon::synthscene::{face_inverse_depth, render_ground_truth, CubeRoom};

fn main() -> panorecon::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/examples/render".into()));
    std::fs::create_dir_all(&out).map_err(|e| panorecon::Error::io(&out, e))?;
    let room = CubeRoom::default();
    let pos = Vector3::new(0.0, 0.0, 0.0);
    let s = 128;

    let (pano, _) = render_ground_truth(&room, &pos, 4 * s, 2 * s)?;
    let faces = project_rgb(&pano, s, 2)?;
    let mut sets = Vec::new();
    for f in FaceId::ALL {
        let depth = face_inverse_depth(&room, &pos, f, s)?;
        let (mut set, _) = lift_face(faces.face(f), &depth, &faces.camera(f), &LiftParams::default())?;
        set.source_face = Some(f);
        sets.push(set);
    }
    let scene = merge(&sets, &cube_frusta(pos))?;
    let settings = RenderSettings::default();

    let eye = pos + Vector3::new(0.1, 0.0, 0.0);
    let cam = PinholeCamera::look_at(eye, eye + Vector3::new(1.0, 0.0, -1.0), Vector3::y(), 75.0, 320, 240)?;
    let view = render_perspective(&scene.gaussians.gaussians, &cam, &settings)?;
    let covered = view.alpha.data.iter().filter(|&&a| a >= 0.99).count() as f64 / view.alpha.data.len() as f64;
    save_png8(&view.image, out.join("novel_view.png"))?;
    println!("novel view: {:.1}% of pixels with alpha >= 0.99", 100.0 * covered);

    let eq = render_equirect(&scene.gaussians.gaussians, pos, 4 * s, 2 * s, &settings)?;
    save_png8(&eq.image, out.join("equirect.png"))?;
    println!(
        "equirect vs input: {:.2} dB",
        panorecon::evalmetrics::psnr(&eq.image.quantized_u8(), &pano, 0.05)?
    );
    println!("wrote {}", out.display());
    Ok(())
}
