use serde::{Deserialize, Serialize};

use crate::error::{PhysicsError, Result};

/// Simulation parameters. Lengths are in meters, times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Time advanced by one call to `mpm_step`.
    pub dt: f64,
    pub gravity: [f64; 3],
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// Drucker–Prager friction angle in degrees.
    pub friction_angle_deg: f64,
    /// Bulk density of sand (kg/m³); sets particle volumes.
    pub sand_density: f64,
    /// Grid resolution `[nx, ny, nz]`; `nx` spans the canvas width.
    pub grid: [usize; 3],
    /// Number of boundary node layers on every face.
    pub boundary_cells: usize,
    /// Sticky floor and separating walls. Off means a free grid with no
    /// boundary conditions at all.
    pub boundaries: bool,
    /// CFL number: sub-steps keep `dt_sub · speed ≤ cfl · dx`.
    pub cfl: f64,
    /// Linear velocity damping rate (1/s) applied on the grid.
    pub damping: f64,
    /// Freeze velocity threshold (m/s).
    pub freeze_speed: f64,
    /// Safe radius as a multiple of the smear radius.
    pub freeze_radius_factor: f64,
    /// Steps after a smear during which the freeze filter runs.
    pub freeze_steps: usize,
    /// Compute per-particle transfer terms in parallel. The grid scatter stays
    /// serial in particle order, so results are identical either way.
    pub parallel_p2g: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 2e-4,
            gravity: [0.0, 0.0, -9.81],
            youngs_modulus: 1e5,
            poisson_ratio: 0.3,
            friction_angle_deg: 40.0,
            sand_density: 1600.0,
            grid: [64, 64, 32],
            boundary_cells: 2,
            boundaries: true,
            cfl: 0.5,
            damping: 0.0,
            freeze_speed: 0.05,
            freeze_radius_factor: 3.0,
            freeze_steps: 50,
            parallel_p2g: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("youngs_modulus", self.youngs_modulus),
            ("sand_density", self.sand_density),
            ("cfl", self.cfl),
        ];
        if let Some((k, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(PhysicsError::Invalid(format!("{k} must be positive, got {v}")));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return Err(PhysicsError::Invalid("poisson_ratio must lie in [0, 0.5)".into()));
        }
        if !(0.0..90.0).contains(&self.friction_angle_deg) {
            return Err(PhysicsError::Invalid("friction_angle_deg must lie in [0, 90)".into()));
        }
        if self.grid.iter().any(|&n| n < 2 * self.boundary_cells + 3) {
            return Err(PhysicsError::Invalid("grid too small for its boundary layers".into()));
        }
        if self.boundary_cells < 1 {
            return Err(PhysicsError::Invalid("boundary_cells must be at least 1".into()));
        }
        if !(self.damping >= 0.0 && self.freeze_speed >= 0.0 && self.freeze_radius_factor >= 0.0) {
            return Err(PhysicsError::Invalid("damping and freeze parameters must be non-negative".into()));
        }
        Ok(())
    }

    /// Lamé parameters `(λ, μ)`.
    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        let mu = e / (2.0 * (1.0 + nu));
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        (lambda, mu)
    }

    /// P-wave speed `sqrt((λ + 2μ) / ρ)`.
    pub fn wave_speed(&self) -> f64 {
        let (l, m) = self.lame();
        ((l + 2.0 * m) / self.sand_density).sqrt()
    }

    pub fn friction_angle(&self) -> f64 {
        self.friction_angle_deg.to_radians()
    }
}

/// How 2D strokes become 3D particles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiftConfig {
    pub particles_per_kernel_max: usize,
    /// Mean drop height above the canvas plane (m).
    pub deposit_height: f64,
    /// Vertical standard deviation of the drop cloud (m).
    pub z_sigma: f64,
    /// Size of one canvas pixel in meters.
    pub px_to_m: f64,
    /// Sand mass per unit area (kg/m²) of a fully opaque layer.
    pub areal_density: f64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self {
            particles_per_kernel_max: 64,
            deposit_height: 0.01,
            z_sigma: 0.002,
            px_to_m: 0.5 / 128.0,
            areal_density: 3.2,
        }
    }
}

impl LiftConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.particles_per_kernel_max > 0
            && self.deposit_height > 0.0
            && self.z_sigma > 0.0
            && self.px_to_m > 0.0
            && self.areal_density > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PhysicsError::Invalid("lift parameters must all be positive".into()))
        }
    }
}
