//! Turning fitted 2D strokes into 3D particle clusters.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sandsim_core::Stroke;

use crate::config::LiftConfig;
use crate::error::{PhysicsError, Result};
use crate::state::SandParticle;

/// Sampling density for opacity `alpha`: `(1 − e^{−α}) / (1 − e^{−1})`.
pub fn lift_density(alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(PhysicsError::Domain(alpha));
    }
    Ok((-alpha).exp_m1() / (-1.0f64).exp_m1())
}

/// Particles sampled for one kernel of opacity `alpha`.
pub fn particles_per_kernel(alpha: f64, cfg: &LiftConfig) -> Result<usize> {
    let rho = lift_density(alpha)?;
    Ok(((rho * cfg.particles_per_kernel_max as f64).ceil() as usize).max(1))
}

/// Samples the particle cluster of `stroke` in canvas-relative coordinates:
/// `x, y` in meters from the canvas corner and `z` above the canvas plane.
///
/// Each kernel carries mass `α · 2π s_x s_y · px² · areal_density`, split
/// evenly across its particles, so the projected mass matches the kernel's
/// integrated 2D density. Streams are keyed by stroke id, so lifting is
/// deterministic per `(seed, stroke)` regardless of lifting order.
pub fn lift_stroke(stroke: &Stroke, cfg: &LiftConfig, sand_density: f64, seed: u64) -> Result<Vec<SandParticle>> {
    cfg.validate()?;
    if !(sand_density > 0.0) {
        return Err(PhysicsError::Invalid("sand_density must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stroke.stroke_id);
    let alpha = stroke.opacity();
    let s = stroke.scale();
    let n = particles_per_kernel(alpha, cfg)?;
    let px = cfg.px_to_m;
    let kernel_mass = alpha * std::f64::consts::TAU * s[0] * s[1] * px * px * cfg.areal_density;
    let mass = kernel_mass / n as f64;
    let volume = mass / sand_density;

    let mut out = Vec::with_capacity(n * stroke.len());
    for k in &stroke.kernels {
        let (sin, cos) = k.rotation.sin_cos();
        for _ in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let c: f64 = StandardNormal.sample(&mut rng);
            let (u, v) = (a * s[0], b * s[1]);
            let x = k.center[0] + cos * u - sin * v;
            let y = k.center[1] + sin * u + cos * v;
            let pos = Vector3::new((x + 0.5) * px, (y + 0.5) * px, cfg.deposit_height + cfg.z_sigma * c);
            out.push(SandParticle::at_rest(pos, mass, volume, stroke.stroke_id));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use sandsim_core::Kernel;

    #[test]
    fn density_examples() {
        assert_eq!(lift_density(0.0).unwrap(), 0.0);
        assert_eq!(lift_density(1.0).unwrap(), 1.0);
        assert!((lift_density(0.5).unwrap() - 0.62246).abs() < 1e-5);
        assert!(matches!(lift_density(1.5), Err(PhysicsError::Domain(_))));
        assert!(lift_density(-0.1).is_err());
    }

    fn stroke(alpha: f64, kernels: usize) -> Stroke {
        let ks = (0..kernels).map(|i| Kernel::new([10.0 + i as f64, 20.0], 0.3)).collect();
        Stroke::new(4, [3.0, 1.5], alpha, ks)
    }

    #[test]
    fn counts_at_the_ends() {
        let cfg = LiftConfig::default();
        assert_eq!(lift_stroke(&stroke(1e-9, 3), &cfg, 1600.0, 1).unwrap().len(), 3);
        let full = Stroke { raw_opacity: 30.0, ..stroke(0.5, 2) };
        assert_eq!(lift_stroke(&full, &cfg, 1600.0, 1).unwrap().len(), 128);
    }

    #[test]
    fn mass_matches_kernel_integral() {
        let cfg = LiftConfig::default();
        let s = stroke(0.4, 5);
        let ps = lift_stroke(&s, &cfg, 1600.0, 3).unwrap();
        let total: f64 = ps.iter().map(|p| p.mass).sum();
        let sc = s.scale();
        let expected = 5.0 * s.opacity() * std::f64::consts::TAU * sc[0] * sc[1] * cfg.px_to_m.powi(2) * cfg.areal_density;
        assert_relative_eq!(total, expected, max_relative = 1e-12);
        assert!(ps.iter().all(|p| p.f_elastic == nalgebra::Matrix3::identity() && p.velocity == Vector3::zeros()));
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = LiftConfig::default();
        let s = stroke(0.7, 4);
        assert_eq!(lift_stroke(&s, &cfg, 1600.0, 9).unwrap(), lift_stroke(&s, &cfg, 1600.0, 9).unwrap());
        assert_ne!(lift_stroke(&s, &cfg, 1600.0, 9).unwrap(), lift_stroke(&s, &cfg, 1600.0, 10).unwrap());
    }

    #[test]
    fn sample_mean_is_near_the_kernel_center() {
        let cfg = LiftConfig {
            particles_per_kernel_max: 10_000,
            ..LiftConfig::default()
        };
        let s = Stroke { raw_opacity: 30.0, ..stroke(0.5, 1) };
        let ps = lift_stroke(&s, &cfg, 1600.0, 5).unwrap();
        assert_eq!(ps.len(), 10_000);
        let n = ps.len() as f64;
        let mean = ps.iter().map(|p| p.position).sum::<Vector3<f64>>() / n;
        let mu = Vector3::new(10.5 * cfg.px_to_m, 20.5 * cfg.px_to_m, cfg.deposit_height);
        let sigma_max = s.scale()[0] * cfg.px_to_m;
        assert!((mean.x - mu.x).abs() < 3.0 * sigma_max / 100.0);
        assert!((mean.y - mu.y).abs() < 3.0 * sigma_max / 100.0);
        assert!((mean.z - mu.z).abs() < 3.0 * cfg.z_sigma / 100.0);
    }
}
