//! Ground truth for the analytic room, plus the depth files a file-backed
//! provider would serve for it.
//!
//! `cargo run --release --example synth_room [OUT_DIR]`

use nalgebra::Vector3;
use panorecon::pipeline::commands::{synth, ProviderFiles};
use panorecon::synthscene::{analytic_depth, CubeRoom, DetailCorruption};

fn main() -> panorecon::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/examples/synth".into()));
    let room = CubeRoom::default();
    let pos = Vector3::new(0.3, -0.2, 0.15);

    let files = ProviderFiles {
        request_id: "scene".into(),
        face_size: 128,
        corruption: DetailCorruption::three_coloring(1.05),
    };
    for p in synth(&room, pos, 512, 256, &out, Some(&files))? {
        println!("{}", p.display());
    }
    for (name, d) in [("+x", Vector3::x()), ("-y", -Vector3::y()), ("+z", Vector3::z())] {
        println!("depth toward {name}: {:.3} m", analytic_depth(&room, &pos, &d)?);
    }
    Ok(())
}
