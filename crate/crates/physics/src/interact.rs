//! Hand-contact tools: the smear impulse and the freeze filter.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::state::SandParticle;

/// Paraboloid pressure profile `max(1 − (r/R)², 0)`.
pub fn smear_profile(r: f64, radius: f64) -> f64 {
    (1.0 - (r / radius).powi(2)).max(0.0)
}

/// Adds `strength · p(r) · direction` to the velocity of every particle
/// within `radius` of `center`. Returns the number of particles touched.
///
/// A zero `direction` presses straight down into the sand.
pub fn smear(
    particles: &mut [SandParticle],
    center: Vector3<f64>,
    radius: f64,
    strength: f64,
    direction: Vector3<f64>,
) -> usize {
    assert!(radius > 0.0, "smear radius must be positive");
    let dir = direction.try_normalize(1e-12).unwrap_or(Vector3::new(0.0, 0.0, -1.0));
    particles
        .par_iter_mut()
        .map(|p| {
            let r = (p.position - center).norm();
            if r < radius {
                p.velocity += dir * (strength * smear_profile(r, radius));
                1
            } else {
                0
            }
        })
        .sum()
}

/// Zeroes the velocity of particles farther than `safe_radius` from
/// `center` whose speed is below `speed_threshold`. Returns how many were
/// frozen.
pub fn freeze_filter(
    particles: &mut [SandParticle],
    center: Vector3<f64>,
    safe_radius: f64,
    speed_threshold: f64,
) -> usize {
    particles
        .par_iter_mut()
        .map(|p| {
            let far = (p.position - center).norm() > safe_radius;
            if far && p.velocity.norm() < speed_threshold {
                p.velocity = Vector3::zeros();
                1
            } else {
                0
            }
        })
        .sum()
}
