use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde_json::{json, Value};

use panorecon::evalmetrics::{capped_psnr, timing_report};
use panorecon::pipeline::{commands, run_pipeline, PipelineConfig};
use panorecon::synthscene::{CubeRoom, DetailCorruption};
use panorecon::{Error, Result};

/// Panorama to 3D Gaussian scene reconstruction.
#[derive(Parser)]
#[command(name = "panorecon", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set fusion.crossover=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true, value_parser = parse_key_value)]
    set: Vec<(String, String)>,
    /// Write JSON-lines records here instead of stdout.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Panorama PNG to six face PNGs.
    Project {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        face_size: Option<usize>,
        #[arg(long)]
        ss: Option<usize>,
    },
    /// Fetch global and detail depth, write fused per-face PFMs.
    FuseDepth {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Directory holding face_<tag>.png.
        #[arg(long)]
        faces: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        fusion: FusionFlags,
    },
    /// Face PNGs and fused depth to per-face PLYs.
    Lift {
        #[arg(long)]
        faces: PathBuf,
        /// Directory holding fused_<tag>.pfm.
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        lift: LiftFlags,
    },
    /// Cull and merge six per-face PLYs into one scene.
    Merge {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a scene along a camera path, or as a panorama.
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// JSON list of {position, look_at, up, fov_deg}.
        #[arg(long, required_unless_present = "equirect", conflicts_with = "equirect")]
        cameras: Option<PathBuf>,
        #[arg(long, default_value_t = 640)]
        width: usize,
        #[arg(long, default_value_t = 480)]
        height: usize,
        /// Render a 2:1 panorama of this height instead.
        #[arg(long, value_name = "HEIGHT")]
        equirect: Option<usize>,
        /// Panorama center; defaults to the config center.
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        center: Option<[f64; 3]>,
        /// Output directory for camera paths, output file for panoramas.
        #[arg(long)]
        out: PathBuf,
        /// Also write inverse-depth PFMs per view.
        #[arg(long)]
        depth: bool,
    },
    /// Seam report over fused faces and/or PSNR between two PNGs.
    Eval {
        /// Directory holding fused_<tag>.pfm.
        #[arg(long, required_unless_present = "psnr")]
        seam: Option<PathBuf>,
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        psnr: Option<Vec<PathBuf>>,
        #[arg(long)]
        polar_fraction: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Write the analytic room's panorama, depth and description.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1024)]
        width: usize,
        #[arg(long, default_value_t = 512)]
        height: usize,
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true, default_value = "0,0,0")]
        position: [f64; 3],
        /// Also write file-provider depth for this face size.
        #[arg(long, value_name = "FACE_SIZE")]
        provider_files: Option<usize>,
        /// Per-face scale ratio for the provider detail files (1, s, s² on
        /// the ±X, ±Y, ±Z pairs).
        #[arg(long, default_value_t = 1.0)]
        face_scale: f64,
        #[arg(long, default_value = "scene")]
        request_id: String,
    },
    /// Run every stage end to end.
    Pipeline {
        /// Equirect panorama PNG, 2:1.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Cube face size in pixels; defaults to about half the panorama height.
        #[arg(long)]
        face_size: Option<usize>,
        /// Supersampling factor per axis, 1 to 4.
        #[arg(long)]
        ss: Option<usize>,
        /// Echoed by depth providers and used in provider file names.
        #[arg(long)]
        request_id: Option<String>,
        /// Leave outputs of a failed run in place.
        #[arg(long)]
        keep_partial: bool,
        /// Re-render from the capture center and report PSNR.
        #[arg(long)]
        render_eval: bool,
        #[command(flatten)]
        fusion: FusionFlags,
        #[command(flatten)]
        lift: LiftFlags,
    },
}

#[derive(Args)]
struct FusionFlags {
    /// Pyramid levels, residual included.
    #[arg(long)]
    levels: Option<usize>,
    /// Bands below this index come from the detail depth.
    #[arg(long)]
    crossover: Option<usize>,
    /// Fraction of worst residuals dropped before the alignment re-fit.
    #[arg(long)]
    trim: Option<f64>,
    /// joint | per_face
    #[arg(long)]
    alignment: Option<String>,
    /// fused | unfused
    #[arg(long)]
    fusion_mode: Option<String>,
}

#[derive(Args)]
struct LiftFlags {
    /// One Gaussian per `stride x stride` pixel block.
    #[arg(long)]
    stride: Option<usize>,
    /// Tangential footprint relative to the pixel's angular size at its depth.
    #[arg(long)]
    scale_gain: Option<f64>,
    #[arg(long)]
    initial_opacity: Option<f64>,
    /// Ray-axis scale as a fraction of the tangential scale.
    #[arg(long)]
    thin_axis_ratio: Option<f64>,
}

fn parse_key_value(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse_vec3(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected x,y,z, got '{s}'"))
}

/// Flag overrides, as config keys.
#[derive(Default)]
struct Overrides(Vec<(String, String)>);

impl Overrides {
    fn raw(&mut self, key: &str, v: Option<impl ToString>) {
        if let Some(v) = v {
            self.0.push((key.to_string(), v.to_string()));
        }
    }

    fn string(&mut self, key: &str, v: Option<impl AsRef<str>>) {
        if let Some(v) = v {
            self.0.push((key.to_string(), toml_string(v.as_ref())));
        }
    }

    fn path(&mut self, key: &str, v: &Option<PathBuf>) {
        self.string(key, v.as_ref().map(|p| p.to_string_lossy().into_owned()));
    }

    fn fusion(&mut self, f: &FusionFlags) {
        self.raw("fusion.levels", f.levels);
        self.raw("fusion.crossover", f.crossover);
        self.raw("fusion.trim", f.trim);
        self.string("fusion.alignment", f.alignment.as_ref());
        self.string("fusion.mode", f.fusion_mode.as_ref());
    }

    fn lift(&mut self, l: &LiftFlags) {
        self.raw("lift.stride", l.stride);
        self.raw("lift.scale_gain", l.scale_gain);
        self.raw("lift.initial_opacity", l.initial_opacity);
        self.raw("lift.thin_axis_ratio", l.thin_axis_ratio);
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

struct Reporter {
    out: Box<dyn Write>,
}

impl Reporter {
    fn new(path: Option<&Path>) -> Result<Self> {
        let out: Box<dyn Write> = match path {
            Some(p) => Box::new(std::fs::File::create(p).map_err(|e| Error::Config(format!("report {}: {e}", p.display())))?),
            None => Box::new(std::io::stdout()),
        };
        Ok(Self { out })
    }

    fn line(&mut self, v: &impl serde::Serialize) -> Result<()> {
        let s = serde_json::to_string(v)?;
        writeln!(self.out, "{s}").map_err(|e| Error::Internal(e.to_string()))
    }

    fn raw(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Error::Internal(e.to_string()))
    }
}

fn outputs(rep: &mut Reporter, command: &str, paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        rep.line(&json!({ "command": command, "output": p }))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Internal(e.to_string()))?;
    }
    let mut ov = Overrides::default();
    match &cli.command {
        Command::Project { input, face_size, ss, .. } => {
            ov.path("input", input);
            ov.raw("face_size", *face_size);
            ov.raw("ss", *ss);
        }
        Command::FuseDepth { input, fusion, .. } => {
            ov.path("input", input);
            ov.fusion(fusion);
        }
        Command::Lift { lift, .. } => ov.lift(lift),
        Command::Pipeline {
            input,
            output_dir,
            face_size,
            ss,
            request_id,
            keep_partial,
            render_eval,
            fusion,
            lift,
        } => {
            ov.path("input", input);
            ov.path("output_dir", output_dir);
            ov.raw("face_size", *face_size);
            ov.raw("ss", *ss);
            ov.string("request_id", request_id.as_ref());
            ov.raw("keep_partial", keep_partial.then_some(true));
            ov.raw("eval.render", render_eval.then_some(true));
            ov.fusion(fusion);
            ov.lift(lift);
        }
        Command::Eval {
            polar_fraction, samples, ..
        } => {
            ov.raw("eval.exclude_polar_fraction", *polar_fraction);
            ov.raw("eval.seam_samples", *samples);
        }
        _ => {}
    }
    ov.0.extend(cli.set.iter().cloned());
    let cfg = PipelineConfig::load(cli.config.as_deref(), &ov.0)?;
    let mut rep = Reporter::new(cli.report.as_deref())?;

    match cli.command {
        Command::Project { out, .. } => {
            if cfg.input.as_os_str().is_empty() {
                return Err(Error::Config("no input panorama (use --input or the config)".into()));
            }
            let paths = commands::project(&cfg.input, &out, cfg.face_size, cfg.ss)?;
            outputs(&mut rep, "project", &paths)
        }
        Command::FuseDepth { faces, out, .. } => {
            let s = commands::fuse_depth(&cfg, &faces, &out)?;
            for (p, a) in s.outputs.iter().zip(&s.alignments) {
                rep.line(&json!({ "command": "fuse-depth", "output": p, "alignment": a }))?;
            }
            rep.line(&json!({ "command": "fuse-depth", "seam_mean": s.seam.mean, "seam_max": s.seam.max }))
        }
        Command::Lift { faces, depth, out, .. } => {
            for (p, stats) in commands::lift(&cfg, &faces, &depth, &out)? {
                rep.line(&json!({ "command": "lift", "output": p, "stats": stats }))?;
            }
            Ok(())
        }
        Command::Merge { inputs, out } => {
            let (scene, stats) = commands::merge(&inputs, &out)?;
            for s in &stats {
                rep.line(&json!({ "command": "merge", "cull": s, "culled_fraction": s.culled_fraction() }))?;
            }
            rep.line(&json!({ "command": "merge", "output": out, "gaussian_count": scene.len() }))
        }
        Command::Render {
            scene,
            cameras,
            width,
            height,
            equirect,
            center,
            out,
            depth,
        } => match (cameras, equirect) {
            (Some(cams), None) => {
                let paths = commands::render_views(&scene, &cams, width, height, &cfg.render, &out, depth)?;
                outputs(&mut rep, "render", &paths)
            }
            (None, Some(h)) => {
                let c = Vector3::from(center.unwrap_or(cfg.center));
                commands::render_panorama(&scene, c, 2 * h, h, &cfg.render, &out)?;
                outputs(&mut rep, "render", &[out])
            }
            _ => Err(Error::Config("give exactly one of --cameras or --equirect".into())),
        },
        Command::Eval { seam, psnr, .. } => {
            if let Some(dir) = seam {
                let r = commands::seam_report(&dir, cfg.eval.seam_samples)?;
                eprintln!("{r}");
                rep.line(&json!({ "command": "eval", "seam": r }))?;
            }
            if let Some(pair) = psnr {
                let db = commands::psnr_files(&pair[0], &pair[1], cfg.eval.exclude_polar_fraction)?;
                rep.line(&json!({
                    "command": "eval",
                    "psnr_db": capped_psnr(db),
                    "exclude_polar_fraction": cfg.eval.exclude_polar_fraction,
                }))?;
            }
            Ok(())
        }
        Command::Synth {
            out,
            width,
            height,
            position,
            provider_files,
            face_scale,
            request_id,
        } => {
            let pf = provider_files.map(|s| commands::ProviderFiles {
                request_id,
                face_size: s,
                corruption: DetailCorruption::three_coloring(face_scale),
            });
            let paths = commands::synth(&CubeRoom::default(), Vector3::from(position), width, height, &out, pf.as_ref())?;
            outputs(&mut rep, "synth", &paths)
        }
        Command::Pipeline { .. } => {
            let m = run_pipeline(&cfg)?;
            if cfg.timing {
                for l in timing_report(&m.stages)? {
                    rep.raw(&l)?;
                }
            }
            let summary: Value = json!({
                "command": "pipeline",
                "run_id": m.run_id,
                "config_hash": m.config_hash,
                "output_dir": cfg.output_dir,
                "gaussian_count": m.gaussian_count,
                "seam_mean": m.seam.mean,
                "psnr_db": m.eval.as_ref().map(|e| e.psnr_db),
            });
            rep.line(&summary)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
