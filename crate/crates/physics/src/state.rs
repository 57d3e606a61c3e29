use nalgebra::{Matrix3, Vector3};
use sandsim_core::StrokeId;

use crate::config::{LiftConfig, SimConfig};
use crate::error::{PhysicsError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SandParticle {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub mass: f64,
    pub volume: f64,
    pub f_elastic: Matrix3<f64>,
    pub c_affine: Matrix3<f64>,
    pub source_stroke: StrokeId,
}

impl SandParticle {
    /// A particle at rest with undeformed state.
    pub fn at_rest(position: Vector3<f64>, mass: f64, volume: f64, source_stroke: StrokeId) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            mass,
            volume,
            f_elastic: Matrix3::identity(),
            c_affine: Matrix3::zeros(),
            source_stroke,
        }
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.mass * self.velocity.norm_squared()
    }

    pub fn momentum(&self) -> Vector3<f64> {
        self.velocity * self.mass
    }
}

/// Dense background grid. Node `(i, j, k)` sits at `(i, j, k) · dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub dx: f64,
    pub mass: Vec<f64>,
    /// Momentum after transfer, velocity after the grid update.
    pub momentum: Vec<Vector3<f64>>,
}

impl Grid {
    pub fn new(dims: [usize; 3], dx: f64) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self {
            dims,
            dx,
            mass: vec![0.0; n],
            momentum: vec![Vector3::zeros(); n],
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn clear(&mut self) {
        self.mass.iter_mut().for_each(|m| *m = 0.0);
        self.momentum.iter_mut().for_each(|p| *p = Vector3::zeros());
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn total_momentum(&self) -> Vector3<f64> {
        self.momentum.iter().sum()
    }
}

/// Particles plus the grid they are simulated on.
#[derive(Debug, Clone)]
pub struct SandState {
    pub particles: Vec<SandParticle>,
    pub grid: Grid,
    pub config: SimConfig,
    pub steps: u64,
    pub time: f64,
}

impl SandState {
    pub fn new(config: SimConfig, dx: f64) -> Result<Self> {
        config.validate()?;
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(PhysicsError::Invalid(format!("grid spacing must be positive, got {dx}")));
        }
        Ok(Self {
            particles: Vec::new(),
            grid: Grid::new(config.grid, dx),
            config,
            steps: 0,
            time: 0.0,
        })
    }

    /// A state whose grid spans a `width × height` pixel canvas: the grid's
    /// x extent covers the canvas width and y is sized to the same spacing.
    pub fn for_canvas(width: usize, height: usize, config: SimConfig, lift: &LiftConfig) -> Result<Self> {
        lift.validate()?;
        let b = config.boundary_cells as f64;
        let span = width.max(1) as f64 * lift.px_to_m;
        let dx = span / (config.grid[0] as f64 - 2.0 * b);
        let mut config = config;
        let ny = (height.max(1) as f64 * lift.px_to_m / dx).ceil() as usize + 2 * config.boundary_cells;
        config.grid[1] = ny.max(2 * config.boundary_cells + 3);
        Self::new(config, dx)
    }

    pub fn dx(&self) -> f64 {
        self.grid.dx
    }

    /// Lower and upper corners of the region particles may occupy.
    pub fn interior(&self) -> (Vector3<f64>, Vector3<f64>) {
        let b = self.config.boundary_cells as f64 * self.grid.dx;
        let d = self.grid.dims;
        let hi = Vector3::new(d[0] as f64, d[1] as f64, d[2] as f64) * self.grid.dx - Vector3::repeat(b);
        (Vector3::repeat(b), hi)
    }

    /// Height of the floor the sand rests on.
    pub fn floor_z(&self) -> f64 {
        self.config.boundary_cells as f64 * self.grid.dx
    }

    /// Maps a canvas pixel coordinate to the floor plane.
    pub fn canvas_to_world(&self, px: [f64; 2], lift: &LiftConfig) -> Vector3<f64> {
        let b = self.floor_z();
        Vector3::new(b + (px[0] + 0.5) * lift.px_to_m, b + (px[1] + 0.5) * lift.px_to_m, b)
    }

    /// Inverse of [`Self::canvas_to_world`] for the horizontal coordinates.
    pub fn world_to_canvas(&self, p: &Vector3<f64>, lift: &LiftConfig) -> [f64; 2] {
        let b = self.floor_z();
        [(p.x - b) / lift.px_to_m - 0.5, (p.y - b) / lift.px_to_m - 0.5]
    }

    /// Clamps `p` into the interior; returns true if it had to move.
    pub fn clamp_to_interior(&self, p: &mut Vector3<f64>) -> bool {
        let (lo, hi) = self.interior();
        let before = *p;
        for a in 0..3 {
            p[a] = p[a].clamp(lo[a], hi[a]);
        }
        *p != before
    }

    pub fn total_mass(&self) -> f64 {
        self.particles.iter().map(|p| p.mass).sum()
    }

    pub fn total_momentum(&self) -> Vector3<f64> {
        self.particles.iter().map(SandParticle::momentum).sum()
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.particles.iter().map(SandParticle::kinetic_energy).sum()
    }

    pub fn max_speed(&self) -> f64 {
        self.particles.iter().map(|p| p.velocity.norm()).fold(0.0, f64::max)
    }
}
