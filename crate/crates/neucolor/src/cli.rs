//! Command-line surface. Each command prints one `key=value` report line on
//! stdout; failures print one `error kind=... message="..."` line on stderr.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use neucolor_core::dataset::quantize;
use neucolor_core::eval::{mesh_chamfer, psnr, ssim, ChamferOptions};
use neucolor_core::fields::Variant;
use neucolor_core::geometry::CameraPose;
use neucolor_core::mesher::{extract_colored_mesh, Aabb, ColorMode};
use neucolor_core::renderer::render_image;
use neucolor_core::synth::SceneSpec;
use neucolor_core::trainer::eval_render_config;
use serde::Deserialize;

use crate::checkpoint::load_checkpoint;
use crate::config::RunConfig;
use crate::dataset::{list_pngs, pose_from_world, read_png, write_png, Similarity, IDENTITY4};
use crate::error::{Error, Result};
use crate::fsutil::read_string;
use crate::ply::{read_ply, write_ply};
use crate::run::{train_run, TrainOptions};
use crate::synth_io::{emit_dataset, load_spec};

/// Overrides the output directory of `train` when `--out` is absent.
pub const OUT_DIR_ENV: &str = "NEUCOLOR_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "neucolor", version, about = "Neural SDF reconstruction with view-independent vertex colors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// color_neus, naive or neus_baseline.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iters: Option<u64>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Checkpoint and exit once this iteration is reached.
        #[arg(long)]
        stop_after: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Extract a vertex-colored mesh from a checkpoint.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        /// global, intermediate or naive; defaults to the variant's own mode.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        bound: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one view of a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Index of a training camera stored in the checkpoint.
        #[arg(long, conflicts_with = "pose", required_unless_present = "pose")]
        view: Option<usize>,
        /// JSON camera: intrinsics, world_to_camera, width, height, optional scale_mat.
        #[arg(long)]
        pose: Option<PathBuf>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Chamfer distance (cm²) between two PLY meshes after normalization and ICP.
    EvalCd {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long)]
        vertices_only: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// PSNR and SSIM between same-named PNGs in two directories.
    EvalRender {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Generate a synthetic dataset.
    Synth {
        /// TOML scene description; the default toy scene when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    intrinsics: [f64; 9],
    world_to_camera: [f64; 16],
    width: usize,
    height: usize,
    #[serde(default)]
    scale_mat: Option<[f64; 16]>,
}

fn parse_mode(s: &str) -> Result<ColorMode> {
    ColorMode::from_name(s).ok_or_else(|| Error::Config(format!("unknown mode {s} (global, intermediate, naive)")))
}

fn default_mode(v: Variant) -> ColorMode {
    match v {
        Variant::NeusBaseline => ColorMode::Intermediate,
        Variant::Naive => ColorMode::Naive,
        Variant::ColorNeus => ColorMode::Global,
    }
}

/// Runs a parsed command and returns the report line.
pub fn execute(cmd: Command) -> Result<String> {
    match cmd {
        Command::Train {
            config,
            data,
            out,
            variant,
            seed,
            iters,
            resume,
            stop_after,
            quiet,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(v) = variant {
                cfg.model.variant = Variant::from_name(&v).ok_or_else(|| Error::Config(format!("unknown variant {v}")))?;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(n) = iters {
                cfg.train.total_iters = n;
                cfg.train.warmup_iters = cfg.train.warmup_iters.min(n.saturating_sub(1));
            }
            let base = config.parent().unwrap_or(Path::new("."));
            let data = data
                .or_else(|| cfg.data.as_ref().map(|d| base.join(d)))
                .ok_or_else(|| Error::Config("no dataset: pass --data or set `data`".into()))?;
            let out = out
                .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
                .or_else(|| cfg.out.as_ref().map(|d| base.join(d)))
                .ok_or_else(|| Error::Config("no output directory: pass --out or set `out`".into()))?;
            let opts = TrainOptions {
                resume,
                stop_after,
                verbose: !quiet,
            };
            let s = train_run(&cfg, &data, &out, &opts)?;
            let mut line = format!(
                "iter={} finished={} checkpoint={}",
                s.iter,
                s.finished,
                s.checkpoint.display()
            );
            if let Some(r) = s.last {
                line += &format!(
                    " color={} eikonal={} relight={} mask={} total={} alpha={}",
                    r.loss.color, r.loss.eikonal, r.loss.relight, r.loss.mask, r.loss.total, r.alpha
                );
            }
            Ok(line)
        }
        Command::Extract {
            checkpoint,
            resolution,
            mode,
            bound,
            out,
        } => {
            if resolution < 2 || !(bound > 0.0) {
                return Err(Error::Config("need resolution >= 2 and bound > 0".into()));
            }
            let ck = load_checkpoint(&checkpoint)?;
            let params = &ck.state.params;
            let mode = match mode {
                Some(m) => parse_mode(&m)?,
                None => default_mode(params.config().variant),
            };
            let bounds = Aabb {
                min: [-bound; 3],
                max: [bound; 3],
            };
            let mesh = extract_colored_mesh(params, resolution, bounds, mode)?;
            write_ply(&mesh, &out)?;
            Ok(format!(
                "vertices={} faces={} mode={} out={}",
                mesh.vertices.len(),
                mesh.triangles.len(),
                mode.name(),
                out.display()
            ))
        }
        Command::Render {
            checkpoint,
            view,
            pose,
            width,
            height,
            out,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let (cam, w0, h0): (CameraPose, usize, usize) = match (view, pose) {
                (Some(i), _) => {
                    let cam = *ck
                        .state
                        .poses
                        .poses
                        .get(i)
                        .ok_or_else(|| Error::Config(format!("view {i} out of range")))?;
                    let k = cam.intrinsics;
                    (cam, (2.0 * k[(0, 2)]).round() as usize, (2.0 * k[(1, 2)]).round() as usize)
                }
                (None, Some(p)) => {
                    let pf: PoseFile =
                        serde_json::from_str(&read_string(&p)?).map_err(|e| Error::format(&p, e.to_string()))?;
                    let scale = Similarity::from_rows(&pf.scale_mat.unwrap_or(IDENTITY4))
                        .map_err(|e| Error::format(&p, format!("scale_mat: {e}")))?;
                    let cam = pose_from_world(&pf.world_to_camera, &pf.intrinsics, &scale).map_err(|e| Error::format(&p, e))?;
                    (cam, pf.width, pf.height)
                }
                (None, None) => return Err(Error::Config("pass --view or --pose".into())),
            };
            let (w, h) = (width.unwrap_or(w0), height.unwrap_or(h0));
            if w == 0 || h == 0 {
                return Err(Error::Config("image size must be positive".into()));
            }
            let rc = eval_render_config(&ck.train.render);
            let params = &ck.state.params;
            let img = render_image(&params.field, &params.values, &cam, w, h, &rc)?;
            let pixels: Vec<[u8; 3]> = img.color.iter().map(|c| c.map(quantize)).collect();
            write_png(&out, w, h, &pixels)?;
            Ok(format!("width={w} height={h} out={}", out.display()))
        }
        Command::EvalCd {
            pred,
            gt,
            samples,
            vertices_only,
            seed,
        } => {
            let opts = ChamferOptions {
                samples,
                vertices_only,
                seed,
                ..ChamferOptions::default()
            };
            let a = read_ply(&pred)?.mesh();
            let b = read_ply(&gt)?.mesh();
            let r = mesh_chamfer(&a, &b, &opts)?;
            Ok(format!(
                "chamfer_cm2={} icp_iterations={} icp_rmse={}",
                r.chamfer_cm2, r.icp_iterations, r.icp_rmse
            ))
        }
        Command::EvalRender { pred, gt } => {
            let gts = list_pngs(&gt)?;
            if gts.is_empty() {
                return Err(Error::Dataset(format!("no PNG images in {}", gt.display())));
            }
            let (mut p_sum, mut s_sum) = (0.0, 0.0);
            for g in &gts {
                let name = g.file_name().expect("listed files have names");
                let p = pred.join(name);
                let (gw, gh, gpx) = read_png(g)?;
                let (pw, ph, ppx) = read_png(&p)?;
                if (gw, gh) != (pw, ph) {
                    return Err(Error::format(&p, format!("image is {pw}x{ph} but ground truth is {gw}x{gh}")));
                }
                let to_f = |px: &[[u8; 3]]| -> Vec<[f64; 3]> { px.iter().map(|c| c.map(|v| v as f64 / 255.0)).collect() };
                let (a, b) = (to_f(&ppx), to_f(&gpx));
                p_sum += psnr(&a, &b)?;
                s_sum += ssim(&a, &b, gw, gh)?;
            }
            let n = gts.len() as f64;
            Ok(format!("images={} psnr_db={} ssim={}", gts.len(), p_sum / n, s_sum / n))
        }
        Command::Synth { spec, out } => {
            let spec = match spec {
                Some(p) => load_spec(&p)?,
                None => SceneSpec::default(),
            };
            let ds = emit_dataset(&spec, &out)?;
            Ok(format!(
                "train_images={} test_images={} gt_vertices={} out={}",
                ds.train.len(),
                ds.test.len(),
                ds.gt_mesh.vertices.len(),
                out.display()
            ))
        }
    }
}

/// One-line error report.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    format!("error kind={} message=\"{}\"", e.kind(), msg)
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}
