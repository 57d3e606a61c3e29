use sandsim_core::fitting::{fit, initialize, FitConfig};
use sandsim_core::planner::classify_strokes;
use sandsim_core::raster::{render, RasterOptions};
use sandsim_core::{Painting, RegionPlan, Stroke};

fn target() -> sandsim_core::Image {
    let mut p = Painting::new(32, 32);
    let centers: Vec<[f64; 2]> = (0..8).map(|i| [6.0 + 2.5 * i as f64, 10.0 + i as f64]).collect();
    p.strokes.push(Stroke::from_centers(0, [2.5, 1.5], 0.7, &centers));
    render(&p, None, &RasterOptions::default()).image
}

fn small_config(iterations: usize) -> FitConfig {
    FitConfig {
        iterations,
        init_curves: 6,
        init_points_per_curve: 5,
        topology_period: 10,
        topology_freeze_tail: iterations.saturating_sub(1).min(10),
        lr_step: 20,
        ..FitConfig::default()
    }
}

#[test]
fn zero_iterations_returns_the_initialization() {
    let plan = RegionPlan::fallback(32, 32);
    let cfg = small_config(0);
    let r = fit(&target(), &plan, &cfg, 5).unwrap();
    assert_eq!(r.painting, classify_strokes(&initialize(32, 32, &cfg, 5), &plan));
    assert!(r.trace.is_empty());
}

#[test]
fn same_seed_same_painting() {
    let plan = RegionPlan::fallback(32, 32);
    let cfg = small_config(40);
    let a = fit(&target(), &plan, &cfg, 9).unwrap();
    let b = fit(&target(), &plan, &cfg, 9).unwrap();
    assert_eq!(a.painting, b.painting);
    assert_eq!(a.trace.len(), 40);
    let c = fit(&target(), &plan, &cfg, 10).unwrap();
    assert_ne!(a.painting, c.painting);
}

#[test]
fn loss_decreases_on_a_simple_target() {
    let plan = RegionPlan::fallback(32, 32);
    let r = fit(&target(), &plan, &small_config(60), 1).unwrap();
    let first = r.trace.first().unwrap();
    let last = r.trace.last().unwrap();
    assert!(last.rec < first.rec, "rec {} -> {}", first.rec, last.rec);
    assert!(last.psnr > first.psnr);
}

#[test]
fn mismatched_plan_is_rejected() {
    let plan = RegionPlan::fallback(16, 32);
    assert!(fit(&target(), &plan, &small_config(5), 0).is_err());
}
