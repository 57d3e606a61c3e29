//! Batch subcommands: fit, animate, simulate and eval.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use sandsim_core::fitting::{fit_with, write_trace_csv, FitConfig};
use sandsim_core::metrics::{self, FrameDistance};
use sandsim_core::planner::classify_strokes;
use sandsim_core::sequencer::{build_script, emit_frames, load_frames};
use sandsim_core::{Error as CoreError, Image, Painting, ProcessScript, RegionPlan};
use sandsim_physics::snapshot::save_snapshot;
use sandsim_physics::{DepositMode, Simulator};
use serde::Serialize;
use serde_json::json;

use crate::{Settings, UsageError};

/// Reads a PNG or `.npy` image.
pub fn load_target(path: &Path) -> Result<Image> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let img = match ext.as_str() {
        "npy" => Image::load_npy(path),
        "png" => Image::load_png(path),
        _ => return Err(UsageError(format!("{}: expected a .png or .npy image", path.display())).into()),
    };
    img.with_context(|| format!("loading {}", path.display()))
}

/// The plan at `manifest`, or a single full-canvas region.
pub fn load_plan(manifest: Option<&Path>, width: usize, height: usize) -> Result<RegionPlan> {
    match manifest {
        Some(p) => RegionPlan::load_for_canvas(p, width, height).with_context(|| format!("loading plan {}", p.display())),
        None => Ok(RegionPlan::fallback(width, height)),
    }
}

pub fn load_painting(path: &Path) -> Result<Painting> {
    Painting::load(path).with_context(|| format!("loading painting {}", path.display()))
}

/// Assigns regions when the painting lacks them or an explicit plan is given.
pub fn ensure_classified(painting: Painting, plan: &RegionPlan, explicit_plan: bool) -> Painting {
    let complete = painting
        .strokes
        .iter()
        .all(|s| s.region_id.is_some_and(|r| plan.region(r).is_some()));
    if explicit_plan || !complete {
        classify_strokes(&painting, plan)
    } else {
        painting
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("painting");
    path.with_file_name(format!("{stem}{suffix}"))
}

pub struct FitArgs {
    pub target: PathBuf,
    pub plan: Option<PathBuf>,
    pub seed: u64,
    pub output: PathBuf,
    /// Iterations between checkpoint writes. Zero disables them.
    pub checkpoint_every: usize,
}

#[derive(Debug, Serialize)]
pub struct FitSummary {
    pub output: PathBuf,
    pub trace: PathBuf,
    pub iterations: usize,
    pub strokes: usize,
    pub kernels: usize,
    pub psnr: f64,
    pub skipped_steps: usize,
}

pub fn fit(args: &FitArgs, settings: &Settings) -> Result<FitSummary> {
    let target = load_target(&args.target)?;
    let (w, h) = target.dims();
    let plan = load_plan(args.plan.as_deref(), w, h)?;
    let cfg: &FitConfig = &settings.fit;
    let trace_path = with_suffix(&args.output, ".trace.csv");
    let ckpt_path = with_suffix(&args.output, ".checkpoint.json");
    let mut ckpt_err = None;
    let outcome = fit_with(&target, &plan, cfg, args.seed, |r, p| {
        if r.iteration % 500 == 0 {
            info!("iteration {} loss {:.4} psnr {:.2} strokes {}", r.iteration, r.total, r.psnr, r.strokes);
        }
        if args.checkpoint_every > 0 && r.iteration > 0 && r.iteration % args.checkpoint_every == 0 {
            if let Err(e) = p.save(&ckpt_path) {
                ckpt_err.get_or_insert(e);
            }
        }
    });
    if let Some(e) = ckpt_err {
        warn!("checkpoint write failed: {e}");
    }
    let result = match outcome {
        Ok(r) => r,
        Err(CoreError::NonFiniteLoss { iteration, checkpoint }) => {
            checkpoint.save(&ckpt_path)?;
            bail!(
                "loss became non-finite at iteration {iteration}; last finite painting saved to {}",
                ckpt_path.display()
            );
        }
        Err(e) => return Err(e.into()),
    };
    result.painting.save(&args.output)?;
    write_trace_csv(&result.trace, BufWriter::new(File::create(&trace_path)?))?;
    let last = result.trace.last();
    Ok(FitSummary {
        output: args.output.clone(),
        trace: trace_path,
        iterations: cfg.iterations,
        strokes: result.painting.strokes.len(),
        kernels: result.painting.kernel_count(),
        psnr: last.map_or(f64::NAN, |r| r.psnr),
        skipped_steps: result.skipped_steps,
    })
}

pub struct AnimateArgs {
    pub painting: PathBuf,
    pub plan: Option<PathBuf>,
    pub kernels_per_frame: usize,
    pub fps: u32,
    pub output: PathBuf,
}

pub fn script_for(painting: &Painting, plan: &RegionPlan, fps: u32, kernels_per_frame: usize) -> Result<ProcessScript> {
    if kernels_per_frame == 0 || fps == 0 {
        return Err(UsageError("kernels per frame and fps must be positive".into()).into());
    }
    Ok(build_script(painting, plan, fps, kernels_per_frame)?)
}

pub fn animate(args: &AnimateArgs, settings: &Settings) -> Result<serde_json::Value> {
    let painting = load_painting(&args.painting)?;
    let plan = load_plan(args.plan.as_deref(), painting.width, painting.height)?;
    let painting = ensure_classified(painting, &plan, args.plan.is_some());
    let script = script_for(&painting, &plan, args.fps, args.kernels_per_frame)?;
    let manifest = emit_frames(&painting, &script, &args.output, &settings.fit.raster_options())?;
    std::fs::write(args.output.join("script.json"), serde_json::to_string_pretty(&script)?)?;
    Ok(json!({
        "output": args.output,
        "frames": manifest.frame_count,
        "events": script.events.len(),
        "fps": manifest.fps,
    }))
}

pub struct SimulateArgs {
    pub painting: PathBuf,
    pub plan: Option<PathBuf>,
    pub progressive: bool,
    pub steps: usize,
    pub snapshot_every: usize,
    pub output: PathBuf,
}

/// Builds a simulator session from settings.
pub fn simulator_for(painting: &Painting, plan: &RegionPlan, progressive: bool, settings: &Settings) -> Result<Simulator> {
    let (mode, events) = if progressive {
        let script = build_script(painting, plan, 1, settings.serve.kernels_per_frame)?;
        (DepositMode::Progressive, script.events)
    } else {
        (DepositMode::AllAtOnce, Vec::new())
    };
    Ok(Simulator::new(
        painting,
        &events,
        mode,
        settings.sim,
        settings.lift,
        settings.serve.settle_steps,
        settings.serve.seed,
    )?)
}

pub fn simulate(args: &SimulateArgs, settings: &Settings) -> Result<serde_json::Value> {
    if args.snapshot_every == 0 {
        return Err(UsageError("snapshot interval must be positive".into()).into());
    }
    let painting = load_painting(&args.painting)?;
    let plan = load_plan(args.plan.as_deref(), painting.width, painting.height)?;
    let painting = ensure_classified(painting, &plan, args.plan.is_some());
    let mut sim = simulator_for(&painting, &plan, args.progressive, settings)?;
    std::fs::create_dir_all(&args.output)?;
    let mut snapshots = 0;
    let mut escaped = 0;
    let mut write = |sim: &Simulator, step: usize| -> Result<()> {
        let stem = format!("snapshot_{step:06}");
        save_snapshot(&sim.state, &args.output, &stem)?;
        sim.render().save_png(args.output.join(format!("render_{step:06}.png")))?;
        snapshots += 1;
        Ok(())
    };
    write(&sim, 0)?;
    for step in 1..=args.steps {
        let r = sim.step()?;
        escaped += r.escaped;
        if step % args.snapshot_every == 0 || step == args.steps {
            write(&sim, step)?;
        }
    }
    Ok(json!({
        "output": args.output,
        "steps": args.steps,
        "snapshots": snapshots,
        "particles": sim.particle_count(),
        "escaped": escaped,
        "time": sim.state.time,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    L2,
    OneMinusSsim,
    External,
}

pub struct EvalArgs {
    pub generated: PathBuf,
    pub reference: PathBuf,
    pub target: PathBuf,
    pub distance: DistanceKind,
    pub generated_distances: Option<PathBuf>,
    pub reference_distances: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub frames_generated: usize,
    pub frames_reference: usize,
    /// Final generated frame against the target.
    pub psnr: f64,
    pub ssim: f64,
    /// Mean SSIM over generated frames paired proportionally with reference frames.
    pub ssim_reference: f64,
    pub gtc: Option<f64>,
    pub ddc: f64,
    pub frame_distance: &'static str,
    pub warnings: Vec<String>,
}

/// Index of the reference frame paired with generated frame `i`.
pub fn paired_index(i: usize, n_gen: usize, n_ref: usize) -> usize {
    if n_gen <= 1 {
        return n_ref - 1;
    }
    ((i as f64 * (n_ref - 1) as f64 / (n_gen - 1) as f64).round() as usize).min(n_ref - 1)
}

pub fn evaluate(gen: &[Image], reference: &[Image], target: &Image, distance: &FrameDistance) -> Result<EvalReport> {
    let (Some(g_last), Some(r_last)) = (gen.last(), reference.last()) else {
        bail!(CoreError::EmptySequence);
    };
    let mut warnings = Vec::new();
    let gtc = match metrics::gtc(g_last, r_last) {
        Ok(v) => Some(v),
        Err(e @ CoreError::DegenerateReference { .. }) => {
            warnings.push(e.to_string());
            None
        }
        Err(e) => return Err(e.into()),
    };
    let ssim_sum = gen
        .iter()
        .enumerate()
        .map(|(i, g)| metrics::ssim(g, &reference[paired_index(i, gen.len(), reference.len())]))
        .sum::<sandsim_core::Result<f64>>()?;
    Ok(EvalReport {
        frames_generated: gen.len(),
        frames_reference: reference.len(),
        psnr: metrics::psnr(g_last, target)?,
        ssim: metrics::ssim(g_last, target)?,
        ssim_reference: ssim_sum / gen.len() as f64,
        gtc,
        ddc: metrics::ddc(gen, reference, target, distance)?,
        frame_distance: match distance {
            FrameDistance::L2 => "l2",
            FrameDistance::OneMinusSsim => "one_minus_ssim",
            FrameDistance::External { .. } => "external",
        },
        warnings,
    })
}

pub fn eval(args: &EvalArgs) -> Result<EvalReport> {
    let target = load_target(&args.target)?;
    let (_, gen) = load_frames(&args.generated).with_context(|| format!("loading {}", args.generated.display()))?;
    let (_, reference) = load_frames(&args.reference).with_context(|| format!("loading {}", args.reference.display()))?;
    let distance = match args.distance {
        DistanceKind::L2 => FrameDistance::L2,
        DistanceKind::OneMinusSsim => FrameDistance::OneMinusSsim,
        DistanceKind::External => {
            let (Some(g), Some(r)) = (&args.generated_distances, &args.reference_distances) else {
                return Err(UsageError("external distances need both distance CSV files".into()).into());
            };
            FrameDistance::External {
                generated: metrics::load_distance_csv(g)?,
                reference: metrics::load_distance_csv(r)?,
            }
        }
    };
    let report = evaluate(&gen, &reference, &target, &distance)?;
    for w in &report.warnings {
        warn!("{w}");
    }
    std::fs::write(&args.output, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
