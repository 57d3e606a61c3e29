//! Training loop: vectorizes a target image into strokes.
//!
//! The objective is
//!
//! ```text
//! total = rec + λ_g (λ_spring · spring + λ_smooth · smooth)
//!             + λ_s (w_scale · scale + w_orient · orient)
//! ```
//!
//! where `rec` is the squared reconstruction error (summed or averaged over
//! pixels, see [`RecReduction`]), `spring`/`smooth` are summed over strokes,
//! and the scale/orientation terms only see background strokes.

pub mod losses;
pub mod optim;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::psnr_from_mse;
use crate::painting::{Kernel, Painting, Stroke, DEFAULT_SAND_COLOR};
use crate::planner::{classify_strokes, RegionPlan};
use crate::raster::{backward, render, GradientSet, RasterOptions, RenderOutput};
use crate::topology::{topology_pass, TopologyConfig, TopologySummary};

pub use losses::{loss_rec, loss_scale_and_orient, loss_smooth, loss_spring};
use optim::{Adam, AdamParams, GroupRates, StepDecay};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecReduction {
    /// `‖Î − I‖²`, summed over pixels and channels.
    Sum,
    /// Mean over pixels and channels.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub iterations: usize,
    pub base_lr: f64,
    /// StepLR period in iterations.
    pub lr_step: usize,
    /// StepLR decay factor.
    pub lr_gamma: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Centre learning rate is `base_lr · image diagonal · center_lr_scale`.
    pub center_lr_scale: f64,
    pub angle_lr_scale: f64,
    /// Raw scale and raw opacity learning rate factor.
    pub shape_lr_scale: f64,

    pub init_curves: usize,
    pub init_points_per_curve: usize,
    /// Initial activated scale (px) on both axes.
    pub init_scale: f64,
    pub init_opacity: f64,
    /// Initial segment length (px); 0 picks the stratification cell size.
    pub init_segment_length: f64,
    /// Per-point positional jitter (px).
    pub init_jitter: f64,

    pub lambda_spring: f64,
    pub lambda_smooth: f64,
    pub lambda_geom: f64,
    pub lambda_scale: f64,
    /// Scale geometry weights by `init_points_per_curve / K_i` per stroke.
    pub length_scaled_geometry: bool,
    pub bg_target_radius: f64,
    pub bg_scale_weight: f64,
    pub bg_orient_weight: f64,
    pub rec_reduction: RecReduction,

    pub topology_period: usize,
    pub topology_freeze_tail: usize,
    /// Fraction of `iterations` after which the late prune multiplier applies.
    pub late_prune_start: f64,
    #[serde(flatten)]
    pub topology: TopologyConfig,

    pub cutoff_sigma: f64,
    pub deterministic: bool,
    pub background: [f64; 3],
    pub sand_color: [f64; 3],
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            base_lr: 0.005,
            lr_step: 2500,
            lr_gamma: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            center_lr_scale: 0.01,
            angle_lr_scale: 1.0,
            shape_lr_scale: 0.5,
            init_curves: 700,
            init_points_per_curve: 20,
            init_scale: 4.0,
            init_opacity: 0.05,
            init_segment_length: 0.0,
            init_jitter: 0.25,
            lambda_spring: 0.01,
            lambda_smooth: 0.3,
            lambda_geom: 1.0,
            lambda_scale: 1.0,
            length_scaled_geometry: false,
            bg_target_radius: 15.0,
            bg_scale_weight: 0.1,
            bg_orient_weight: 1.0,
            rec_reduction: RecReduction::Sum,
            topology_period: 100,
            topology_freeze_tail: 1000,
            late_prune_start: 0.5,
            topology: TopologyConfig::default(),
            cutoff_sigma: crate::raster::DEFAULT_CUTOFF_SIGMA,
            deterministic: true,
            background: [1.0; 3],
            sand_color: DEFAULT_SAND_COLOR,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("init_curves", self.init_curves),
            ("init_points_per_curve", self.init_points_per_curve),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{k} must be positive")));
        }
        let non_negative = [
            ("base_lr", self.base_lr),
            ("lambda_spring", self.lambda_spring),
            ("lambda_smooth", self.lambda_smooth),
            ("lambda_geom", self.lambda_geom),
            ("lambda_scale", self.lambda_scale),
            ("bg_scale_weight", self.bg_scale_weight),
            ("bg_orient_weight", self.bg_orient_weight),
            ("weight_decay", self.weight_decay),
            ("init_jitter", self.init_jitter),
            ("init_segment_length", self.init_segment_length),
        ];
        if let Some((k, v)) = non_negative.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!("{k} must be non-negative, got {v}")));
        }
        if !(self.init_scale > 0.0 && self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return Err(Error::invalid("init_scale must be positive and init_opacity in (0,1)"));
        }
        if !(self.cutoff_sigma > 0.0) {
            return Err(Error::invalid("cutoff_sigma must be positive"));
        }
        if self.iterations > 0 && self.topology_freeze_tail >= self.iterations {
            return Err(Error::invalid(format!(
                "topology_freeze_tail ({}) must be below iterations ({})",
                self.topology_freeze_tail, self.iterations
            )));
        }
        self.topology.validate().map_err(Error::Invalid)?;
        Ok(())
    }

    pub fn raster_options(&self) -> RasterOptions {
        RasterOptions {
            cutoff_sigma: self.cutoff_sigma,
            deterministic: self.deterministic,
        }
    }
}

/// Loss components of one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub rec: f64,
    pub spring: f64,
    pub smooth: f64,
    pub scale: f64,
    pub orient: f64,
    pub total: f64,
    /// PSNR (dB) of the current render against the target.
    pub psnr: f64,
    pub strokes: usize,
    pub kernels: usize,
    /// Topology pass run right before this iteration, if any.
    pub topology: Option<TopologySummary>,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "iteration,rec,spring,smooth,scale,orient,total,psnr,strokes,kernels,\
points_merged,strokes_split,strokes_merged,strokes_pruned";

    pub fn csv_row(&self) -> String {
        let t = self.topology.unwrap_or_default();
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:.4},{},{},{},{},{},{}",
            self.iteration,
            self.rec,
            self.spring,
            self.smooth,
            self.scale,
            self.orient,
            self.total,
            self.psnr,
            self.strokes,
            self.kernels,
            t.points_merged,
            t.strokes_split,
            t.strokes_merged,
            t.strokes_pruned
        )
    }
}

pub fn write_trace_csv(trace: &[LossReport], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", LossReport::CSV_HEADER)?;
    for r in trace {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

fn geometry_weight(cfg: &FitConfig, stroke: &Stroke) -> f64 {
    if cfg.length_scaled_geometry {
        cfg.init_points_per_curve as f64 / stroke.len().max(1) as f64
    } else {
        1.0
    }
}

/// Evaluates the full objective and its gradient.
pub fn objective(
    painting: &Painting,
    target: &Image,
    plan: &RegionPlan,
    cfg: &FitConfig,
) -> Result<(LossReport, GradientSet, RenderOutput)> {
    let opts = cfg.raster_options();
    let out = render(painting, None, &opts);
    out.image.ensure_same_dims(target)?;
    let n = target.data().len().max(1) as f64;
    let sum_sq = losses::sum_sq_diff(&out.image, target);
    let (rec, rec_scale) = match cfg.rec_reduction {
        RecReduction::Sum => (sum_sq, 2.0),
        RecReduction::Mean => (sum_sq / n, 2.0 / n),
    };
    let residual: Vec<f64> = out
        .image
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| rec_scale * (a - b))
        .collect();
    let loss_grad = Image::from_raw(target.width(), target.height(), residual)?;
    let mut grads = backward(painting, &out, &loss_grad, &opts)?;

    let mut spring = 0.0;
    let mut smooth = 0.0;
    let mut geom = 0.0;
    for (s, g) in painting.strokes.iter().zip(grads.strokes.iter_mut()) {
        let w = geometry_weight(cfg, s);
        let (sp, sm) = (loss_spring(s), loss_smooth(s));
        spring += sp;
        smooth += sm;
        geom += w * (cfg.lambda_spring * sp + cfg.lambda_smooth * sm);
        losses::spring_grad(s, cfg.lambda_geom * w * cfg.lambda_spring, g);
        losses::smooth_grad(s, cfg.lambda_geom * w * cfg.lambda_smooth, g);
    }
    let (scale, orient) = loss_scale_and_orient(painting, plan, cfg.bg_target_radius);
    losses::scale_and_orient_grad(
        painting,
        plan,
        cfg.bg_target_radius,
        cfg.lambda_scale * cfg.bg_scale_weight,
        cfg.lambda_scale * cfg.bg_orient_weight,
        &mut grads.strokes,
    );
    grads.check_finite()?;

    let total = rec
        + cfg.lambda_geom * geom
        + cfg.lambda_scale * (cfg.bg_scale_weight * scale + cfg.bg_orient_weight * orient);
    let report = LossReport {
        iteration: 0,
        rec,
        spring,
        smooth,
        scale,
        orient,
        total,
        psnr: psnr_from_mse(sum_sq / n),
        strokes: painting.strokes.len(),
        kernels: painting.kernel_count(),
        topology: None,
    };
    Ok((report, grads, out))
}

/// Seeded stratified initialization: one short straight curve per grid cell
/// of a random subset of cells, each at a uniform position inside its cell.
pub fn initialize(width: usize, height: usize, cfg: &FitConfig, seed: u64) -> Painting {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.init_curves;
    let (w, h) = (width as f64, height as f64);
    let cols = ((n as f64 * w / h).sqrt().ceil() as usize).max(1);
    let rows = n.div_ceil(cols).max(1);
    let (cw, ch) = (w / cols as f64, h / rows as f64);
    let mut cells: Vec<usize> = (0..cols * rows).collect();
    // partial Fisher-Yates: the first n cells are a uniform subset
    for i in 0..n.min(cells.len()) {
        let j = rng.random_range(i..cells.len());
        cells.swap(i, j);
    }
    cells.truncate(n);
    cells.sort_unstable();

    let length = if cfg.init_segment_length > 0.0 {
        cfg.init_segment_length
    } else {
        cw.min(ch)
    };
    let k = cfg.init_points_per_curve;
    let mut painting = Painting::new(width, height);
    painting.background = cfg.background;
    painting.sand_color = cfg.sand_color;
    for (id, cell) in cells.into_iter().enumerate() {
        let (cx, cy) = ((cell % cols) as f64, (cell / cols) as f64);
        let center = [
            (cx + rng.random::<f64>()) * cw - 0.5,
            (cy + rng.random::<f64>()) * ch - 0.5,
        ];
        let theta = rng.random::<f64>() * std::f64::consts::PI;
        let dir = [theta.cos(), theta.sin()];
        let kernels = (0..k)
            .map(|i| {
                let t = if k > 1 { i as f64 / (k - 1) as f64 - 0.5 } else { 0.0 };
                let jitter = [
                    (rng.random::<f64>() - 0.5) * 2.0 * cfg.init_jitter,
                    (rng.random::<f64>() - 0.5) * 2.0 * cfg.init_jitter,
                ];
                Kernel::new(
                    [
                        center[0] + t * length * dir[0] + jitter[0],
                        center[1] + t * length * dir[1] + jitter[1],
                    ],
                    theta,
                )
            })
            .collect();
        painting.strokes.push(Stroke::new(
            id as u64,
            [cfg.init_scale; 2],
            cfg.init_opacity,
            kernels,
        ));
    }
    painting.clamp_centers();
    painting
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub painting: Painting,
    pub trace: Vec<LossReport>,
    /// Iterations whose gradient was non-finite and were skipped.
    pub skipped_steps: usize,
}

/// Fits a painting to `target`. See [`fit_with`].
pub fn fit(target: &Image, plan: &RegionPlan, cfg: &FitConfig, seed: u64) -> Result<FitResult> {
    fit_with(target, plan, cfg, seed, |_, _| {})
}

/// Fits a painting to `target`, calling `observe` after every iteration with
/// the report and the painting that produced it.
pub fn fit_with(
    target: &Image,
    plan: &RegionPlan,
    cfg: &FitConfig,
    seed: u64,
    mut observe: impl FnMut(&LossReport, &Painting),
) -> Result<FitResult> {
    cfg.validate()?;
    let (w, h) = target.dims();
    if (plan.width, plan.height) != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            actual: (plan.width, plan.height),
        });
    }
    let mut painting = classify_strokes(&initialize(w, h, cfg, seed), plan);
    let diag = (w as f64).hypot(h as f64);
    let mut adam = Adam::new(
        AdamParams {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
        },
        GroupRates {
            center: cfg.base_lr * diag * cfg.center_lr_scale,
            rotation: cfg.base_lr * cfg.angle_lr_scale,
            shape: cfg.base_lr * cfg.shape_lr_scale,
        },
        StepDecay {
            step: cfg.lr_step,
            gamma: cfg.lr_gamma,
        },
    );

    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut skipped = 0;
    let topology_until = cfg.iterations.saturating_sub(cfg.topology_freeze_tail);
    for it in 0..cfg.iterations {
        let mut summary = None;
        if cfg.topology_period > 0 && it > 0 && it % cfg.topology_period == 0 && it < topology_until {
            let mut tcfg = cfg.topology;
            if it as f64 >= cfg.late_prune_start * cfg.iterations as f64 {
                tcfg.prune_opacity *= tcfg.late_prune_multiplier;
            }
            let (next, s) = topology_pass(&painting, &tcfg);
            let next = classify_strokes(&next, plan);
            adam.retain_unchanged(&painting, &next);
            painting = next;
            summary = Some(s);
        }

        let (mut report, grads) = match objective(&painting, target, plan, cfg) {
            Ok((r, g, _)) => (r, Some(g)),
            Err(Error::NonFiniteGradient { .. }) => {
                let out = render(&painting, None, &cfg.raster_options());
                let mse = loss_rec(&out.image, target)?;
                let r = LossReport {
                    rec: mse,
                    total: f64::NAN,
                    ..Default::default()
                };
                (r, None)
            }
            Err(e) => return Err(e),
        };
        report.iteration = it;
        report.topology = summary;
        if !report.total.is_finite() && grads.is_some() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                checkpoint: Box::new(painting),
            });
        }
        observe(&report, &painting);
        trace.push(report);
        match grads {
            Some(g) => {
                adam.step(&mut painting, &g, it);
                painting.clamp_centers();
            }
            None => skipped += 1,
        }
        if painting.strokes.iter().any(|s| s.validate().is_err()) {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                checkpoint: Box::new(trace_checkpoint(&painting)),
            });
        }
    }
    Ok(FitResult {
        painting,
        trace,
        skipped_steps: skipped,
    })
}

fn trace_checkpoint(p: &Painting) -> Painting {
    let mut p = p.clone();
    p.strokes.retain(|s| s.validate().is_ok());
    p
}
