use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use ssc_core::crp::{build_relation_ground_truth, expected_relations};
use ssc_core::flosp::{flosp_forward, project_centroids};
use ssc_core::grid::{Dims, LogitGrid, SemanticGrid};
use ssc_core::losses::{total_loss, LossConfig, LossToggles, RelationInput};
use ssc_core::metrics::{evaluate, Scope};
use ssc_core::optimize::{optimize_logits, OptimizeConfig};
use ssc_core::synth::{
    generate_scene, mask_unknown, raycast_visibility, render_feature_pyramid, SceneSpec,
};
use ssc_core::{gradcheck, io, Error, Result};

#[derive(Parser)]
#[command(
    name = "ssc",
    version,
    about = "Semantic scene completion kernels on voxel grids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth scene and its camera.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long, value_parser = parse_dims, default_value = "8,8,4")]
        dims: Dims,
        #[arg(long, default_value_t = 4)]
        classes: u8,
        #[arg(long, default_value_t = 2)]
        boxes: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        camera: PathBuf,
    },
    /// Mark occupied voxels that no camera ray reaches as UNKNOWN.
    MaskOccluded {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lift a feature pyramid onto the grid's voxel centroids.
    Flosp {
        #[arg(long)]
        pyramid: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the camera's semantic view as a one-hot feature pyramid.
    Render {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        scales: Vec<u32>,
        /// Feature channels; defaults to the class count.
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the voxel-to-supervoxel relation ground truth.
    Relations {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 2)]
        supervoxel: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the training losses of a probability grid against ground truth.
    Loss {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, default_value_t = 2)]
        ell: usize,
        #[arg(long, default_value_t = 2)]
        supervoxel: usize,
        #[command(flatten)]
        toggles: ToggleArgs,
    },
    /// Score a predicted label grid against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, default_value = "whole")]
        scope: Scope,
    },
    /// Fit free per-voxel logits to a ground-truth grid by gradient descent.
    Optimize {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, default_value_t = OptimizeConfig::default().steps)]
        steps: usize,
        #[arg(long, default_value_t = OptimizeConfig::default().step_size)]
        lr: f64,
        #[arg(long, default_value_t = 2)]
        ell: usize,
        #[arg(long, default_value_t = 2)]
        supervoxel: usize,
        #[command(flatten)]
        toggles: ToggleArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Check every loss gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

#[derive(clap::Args)]
struct ToggleArgs {
    #[arg(long)]
    no_ce: bool,
    #[arg(long)]
    no_rel: bool,
    #[arg(long)]
    no_scal_sem: bool,
    #[arg(long)]
    no_scal_geo: bool,
    #[arg(long)]
    no_fp: bool,
}

impl ToggleArgs {
    fn toggles(&self) -> LossToggles {
        LossToggles {
            ce: !self.no_ce,
            rel: !self.no_rel,
            scal_sem: !self.no_scal_sem,
            scal_geo: !self.no_scal_geo,
            fp: !self.no_fp,
        }
    }
}

fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        &[x, y, z] => Ok(Dims::new(x, y, z)),
        _ => Err(format!("expected DX,DY,DZ, got {s:?}")),
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Gen {
            seed,
            dims,
            classes,
            boxes,
            out,
            camera,
        } => {
            let (grid, cam) = generate_scene(&SceneSpec::new(seed, dims, classes, boxes))?;
            io::save_grid(&grid, out)?;
            io::save_camera(&cam, camera)?;
        }
        Command::MaskOccluded { grid, camera, out } => {
            let grid = io::load_grid(grid)?;
            let cam = io::load_camera(camera)?;
            let masked = mask_unknown(&grid, &raycast_visibility(&grid, &cam))?;
            io::save_grid(&masked, out)?;
        }
        Command::Flosp {
            pyramid,
            grid,
            camera,
            out,
        } => {
            let pyramid = io::load_pyramid(pyramid)?;
            let grid = io::load_grid(grid)?;
            let cam = io::load_camera(camera)?;
            let features = flosp_forward(&pyramid, &project_centroids(&cam, &grid))?;
            io::save_features(&features, out)?;
        }
        Command::Render {
            grid,
            camera,
            scales,
            channels,
            out,
        } => {
            let grid = io::load_grid(grid)?;
            let cam = io::load_camera(camera)?;
            let vis = raycast_visibility(&grid, &cam);
            let pyramid = render_feature_pyramid(
                &vis.image,
                &scales,
                channels.unwrap_or(grid.class_count()),
            )?;
            io::save_pyramid(&pyramid, out)?;
        }
        Command::Relations {
            grid,
            supervoxel,
            out,
        } => {
            let grid = io::load_grid(grid)?;
            io::save_relations(&build_relation_ground_truth(&grid, supervoxel)?, out)?;
        }
        Command::Loss {
            grid,
            probs,
            camera,
            ell,
            supervoxel,
            toggles,
        } => {
            let labels = io::load_grid(grid)?;
            let probs = io::load_probs(probs)?;
            let cam = io::load_camera(camera)?;
            let config = LossConfig {
                ell,
                supervoxel,
                toggles: toggles.toggles(),
                ..Default::default()
            };
            if probs.dims() != labels.dims() || probs.class_count() != labels.class_count() {
                return Err(Error::Shape(
                    "probabilities do not match the ground-truth grid".into(),
                ));
            }
            // softmax(ln p) reproduces p; zero probabilities map to a very negative logit.
            let logits = LogitGrid::new(
                probs.dims(),
                probs.class_count(),
                probs
                    .values()
                    .iter()
                    .map(|&p| p.max(f64::MIN_POSITIVE).ln())
                    .collect(),
            )?;
            let relations = if config.toggles.rel {
                Some(expected_relations(&probs, &labels, supervoxel)?)
            } else {
                None
            };
            let report = total_loss(
                &logits,
                &labels,
                &cam,
                config,
                relations.as_ref().map(RelationInput::Probabilities),
            )?;
            print_json(&report)?;
        }
        Command::Eval {
            pred,
            gt,
            camera,
            scope,
        } => {
            let pred = io::load_grid(pred)?;
            let gt = io::load_grid(gt)?;
            let cam = io::load_camera(camera)?;
            print_json(&evaluate(&pred, &gt, &cam, scope)?)?;
        }
        Command::Optimize {
            gt,
            camera,
            steps,
            lr,
            ell,
            supervoxel,
            toggles,
            out,
            trace,
        } => {
            let gt = io::load_grid(gt)?;
            let cam = io::load_camera(camera)?;
            let config = OptimizeConfig {
                steps,
                step_size: lr,
                loss: LossConfig {
                    ell,
                    supervoxel,
                    toggles: toggles.toggles(),
                    ..Default::default()
                },
            };
            let result = optimize_logits(&gt, &cam, &config)?;
            io::save_probs(&result.probs, out)?;
            if let Some(path) = trace {
                std::fs::write(path, serde_json::to_vec_pretty(&result.trace)?)?;
            }
            let pred = SemanticGrid::new(
                gt.dims(),
                gt.origin(),
                gt.voxel_size(),
                gt.class_count() as u8,
                result.probs.argmax(),
            )?;
            let report = evaluate(&pred, &gt, &cam, Scope::Whole)?;
            eprintln!(
                "final loss {:.6}, whole-scene mIoU {:.4}, SC IoU {:.4}",
                result.trace.last().map_or(f64::NAN, |e| e.total),
                report.iou.miou,
                report.iou.sc_iou
            );
        }
        Command::Gradcheck { seed, instances } => {
            let rows = gradcheck::run(seed, instances)?;
            println!(
                "{:<10} {:>9} {:>14}  result",
                "loss", "instances", "max rel err"
            );
            for row in &rows {
                println!(
                    "{:<10} {:>9} {:>14.3e}  {}",
                    row.loss,
                    row.instances,
                    row.max_relative_error,
                    if row.passed { "PASS" } else { "FAIL" }
                );
            }
            return Ok(rows.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Format(_) | Error::Json(_) => 2,
        Error::Degenerate(_) => 3,
        Error::Numerical { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
