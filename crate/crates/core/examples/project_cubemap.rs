//! Equirect panorama to six cube faces and back, with the round-trip PSNR.
//!
//! `cargo run --release --example project_cubemap [OUT_DIR]`

use nalgebra::Vector3;
use panorecon::evalmetrics::psnr;
use panorecon::geometry::{cubemap_to_equirect, default_face_size, equirect_to_cubemap, FaceId};
use panorecon::imaging::save_png8;
use panorecon::synthscene::{render_ground_truth, CubeRoom};

fn main() -> panorecon::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/examples/project".into()));
    std::fs::create_dir_all(&out).map_err(|e| panorecon::Error::io(&out, e))?;

    let (pano, _) = render_ground_truth(&CubeRoom::default(), &Vector3::new(0.3, -0.2, 0.15), 1024, 512)?;
    let s = default_face_size(pano.height);
    let faces = equirect_to_cubemap(&pano, s, 2)?;
    for f in FaceId::ALL {
        save_png8(faces.face(f), out.join(format!("face_{}.png", f.tag())))?;
    }
    let back = cubemap_to_equirect(&faces, pano.width, pano.height)?;
    save_png8(&back, out.join("roundtrip.png"))?;

    println!("face size {s}, round trip {:.2} dB (5% polar rows excluded)", psnr(&pano, &back, 0.05)?);
    println!("wrote {}", out.display());
    Ok(())
}
