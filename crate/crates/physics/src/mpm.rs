//! MLS-MPM time stepping with quadratic B-splines, APIC transfer,
//! fixed-corotated elasticity and Drucker–Prager return mapping.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{PhysicsError, Result};
use crate::state::{Grid, SandParticle, SandState};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    pub substeps: usize,
    /// Particles that left the interior and were clamped back.
    pub escaped: usize,
    /// Particles whose deformation gradient degenerated and was reset.
    pub degenerate: usize,
}

/// Cone slope `sqrt(2/3) · 2 sin φ / (3 − sin φ)`.
pub fn friction_coefficient(phi: f64) -> f64 {
    let s = phi.sin();
    (2.0f64 / 3.0).sqrt() * 2.0 * s / (3.0 - s)
}

/// Projects a trial elastic deformation gradient onto the Drucker–Prager
/// cone in Hencky strain space, keeping the singular vectors.
///
/// Expansion (`tr ε > 0`) removes all strain; strain inside the cone is
/// returned as is; otherwise the deviatoric part is shrunk onto the cone.
pub fn drucker_prager_project(f: &Matrix3<f64>, phi: f64) -> Result<Matrix3<f64>> {
    let det = f.determinant();
    if !(det > 0.0 && det.is_finite()) {
        return Err(PhysicsError::SingularDecomposition { det });
    }
    let svd = f
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(PhysicsError::SingularDecomposition { det })?;
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let sigma = svd.singular_values;
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(PhysicsError::SingularDecomposition { det });
    }
    let eps = sigma.map(f64::ln);
    let tr = eps.sum();
    let projected = if tr > 0.0 {
        Vector3::zeros()
    } else {
        let dev = eps - Vector3::repeat(tr / 3.0);
        let dn = dev.norm();
        let excess = dn + friction_coefficient(phi) * tr;
        if excess <= 0.0 {
            return Ok(*f);
        }
        eps - dev * (excess / dn)
    };
    Ok(u * Matrix3::from_diagonal(&projected.map(f64::exp)) * v_t)
}

/// Kirchhoff stress `τ = P Fᵀ` of the fixed-corotated model.
pub fn fixed_corotated_kirchhoff(f: &Matrix3<f64>, lambda: f64, mu: f64) -> Matrix3<f64> {
    let svd = f.svd(true, true);
    let r = svd.u.expect("requested") * svd.v_t.expect("requested");
    let j = f.determinant();
    (f - r) * f.transpose() * (2.0 * mu) + Matrix3::identity() * (lambda * (j - 1.0) * j)
}

/// Quadratic B-spline stencil of one particle.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    base: [isize; 3],
    /// `w[axis][node]`.
    w: [[f64; 3]; 3],
    /// Fractional position relative to `base`, in cells.
    fx: Vector3<f64>,
}

impl Stencil {
    fn new(x: &Vector3<f64>, inv_dx: f64) -> Self {
        let mut base = [0isize; 3];
        let mut w = [[0.0; 3]; 3];
        let mut fx = Vector3::zeros();
        for a in 0..3 {
            let xi = x[a] * inv_dx;
            let b = (xi - 0.5).floor();
            let f = xi - b;
            base[a] = b as isize;
            fx[a] = f;
            w[a] = [0.5 * (1.5 - f).powi(2), 0.75 - (f - 1.0).powi(2), 0.5 * (f - 0.5).powi(2)];
        }
        Self { base, w, fx }
    }

    /// Calls `visit(node_index, weight, dpos)` for every in-grid node.
    #[inline]
    fn for_each(&self, grid: &Grid, mut visit: impl FnMut(usize, f64, Vector3<f64>)) {
        let d = grid.dims;
        for i in 0..3 {
            let gi = self.base[0] + i as isize;
            if gi < 0 || gi >= d[0] as isize {
                continue;
            }
            for j in 0..3 {
                let gj = self.base[1] + j as isize;
                if gj < 0 || gj >= d[1] as isize {
                    continue;
                }
                for k in 0..3 {
                    let gk = self.base[2] + k as isize;
                    if gk < 0 || gk >= d[2] as isize {
                        continue;
                    }
                    let weight = self.w[0][i] * self.w[1][j] * self.w[2][k];
                    let dpos = (Vector3::new(i as f64, j as f64, k as f64) - self.fx) * grid.dx;
                    visit(grid.index(gi as usize, gj as usize, gk as usize), weight, dpos);
                }
            }
        }
    }
}

struct Transfer {
    stencil: Stencil,
    mass: f64,
    momentum: Vector3<f64>,
    affine: Matrix3<f64>,
}

fn transfer(p: &SandParticle, dt: f64, inv_dx: f64, lambda: f64, mu: f64) -> Transfer {
    let tau = fixed_corotated_kirchhoff(&p.f_elastic, lambda, mu);
    let stress = tau * (-dt * p.volume * 4.0 * inv_dx * inv_dx);
    Transfer {
        stencil: Stencil::new(&p.position, inv_dx),
        mass: p.mass,
        momentum: p.velocity * p.mass,
        affine: stress + p.c_affine * p.mass,
    }
}

/// Particle-to-grid transfer of mass and momentum (including the stress
/// impulse for a step of `dt`). The per-particle work runs in parallel when
/// configured; the scatter into the grid is always serial in particle order,
/// so the result is bitwise reproducible.
pub fn p2g(state: &mut SandState, dt: f64) {
    let inv_dx = 1.0 / state.grid.dx;
    let (lambda, mu) = state.config.lame();
    let transfers: Vec<Transfer> = if state.config.parallel_p2g {
        state.particles.par_iter().map(|p| transfer(p, dt, inv_dx, lambda, mu)).collect()
    } else {
        state.particles.iter().map(|p| transfer(p, dt, inv_dx, lambda, mu)).collect()
    };
    let grid = &mut state.grid;
    grid.clear();
    let mut contributions = Vec::with_capacity(27);
    for t in &transfers {
        contributions.clear();
        t.stencil.for_each(grid, |idx, w, dpos| contributions.push((idx, w, dpos)));
        for &(idx, w, dpos) in &contributions {
            grid.mass[idx] += w * t.mass;
            grid.momentum[idx] += (t.momentum + t.affine * dpos) * w;
        }
    }
}

/// Converts momentum to velocity and applies gravity, damping and boundary
/// conditions.
fn grid_update(state: &mut SandState, dt: f64) {
    let cfg = state.config;
    let g = Vector3::from(cfg.gravity);
    let damp = 1.0 / (1.0 + dt * cfg.damping);
    let grid = &mut state.grid;
    let d = grid.dims;
    let b = cfg.boundary_cells;
    let (nyz, nz) = (d[1] * d[2], d[2]);
    grid.momentum
        .par_iter_mut()
        .zip(grid.mass.par_iter())
        .enumerate()
        .for_each(|(idx, (v, &m))| {
            if m <= 0.0 {
                *v = Vector3::zeros();
                return;
            }
            *v = (*v / m + g * dt) * damp;
            if !cfg.boundaries {
                return;
            }
            let node = [idx / nyz, (idx / nz) % d[1], idx % nz];
            // Nodes on or beyond an interior face are boundary nodes.
            if node[2] <= b {
                *v = Vector3::zeros();
                return;
            }
            for a in 0..3 {
                if node[a] <= b && v[a] < 0.0 {
                    v[a] = 0.0;
                }
                if node[a] + b >= d[a] && v[a] > 0.0 {
                    v[a] = 0.0;
                }
            }
        });
}

/// Grid-to-particle transfer, advection, deformation update and plasticity.
/// Returns `(escaped, degenerate)` counts.
fn g2p(state: &mut SandState, dt: f64) -> (usize, usize) {
    let inv_dx = 1.0 / state.grid.dx;
    let phi = state.config.friction_angle();
    let (lo, hi) = state.interior();
    let clamp = state.config.boundaries;
    let grid = &state.grid;
    state
        .particles
        .par_iter_mut()
        .map(|p| {
            let st = Stencil::new(&p.position, inv_dx);
            let mut v = Vector3::zeros();
            let mut b = Matrix3::zeros();
            st.for_each(grid, |idx, w, dpos| {
                let gv = grid.momentum[idx];
                v += gv * w;
                b += gv * dpos.transpose() * w;
            });
            p.velocity = v;
            p.c_affine = b * (4.0 * inv_dx * inv_dx);
            p.position += v * dt;
            let mut escaped = 0;
            let outside = (0..3).any(|a| p.position[a] < lo[a] || p.position[a] > hi[a]);
            if outside && clamp {
                for a in 0..3 {
                    p.position[a] = p.position[a].clamp(lo[a], hi[a]);
                }
                escaped = 1;
            } else if outside {
                escaped = 1;
            }
            let trial = (Matrix3::identity() + p.c_affine * dt) * p.f_elastic;
            let degenerate = match drucker_prager_project(&trial, phi) {
                Ok(f) => {
                    p.f_elastic = f;
                    0
                }
                Err(_) => {
                    p.f_elastic = Matrix3::identity();
                    1
                }
            };
            (escaped, degenerate)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
}

/// Largest stable sub-step for the current particle velocities.
pub fn stable_dt(state: &SandState) -> f64 {
    let speed = state.max_speed() + state.config.wave_speed();
    state.config.cfl * state.grid.dx / speed
}

/// Advances the state by `config.dt`, sub-stepping to respect the CFL bound.
pub fn mpm_step(state: &mut SandState) -> StepReport {
    let mut report = StepReport::default();
    let total = state.config.dt;
    let mut done = 0.0;
    while done < total * (1.0 - 1e-12) {
        let dt = stable_dt(state).min(total - done);
        p2g(state, dt);
        grid_update(state, dt);
        let (escaped, degenerate) = g2p(state, dt);
        report.escaped += escaped;
        report.degenerate += degenerate;
        report.substeps += 1;
        done += dt;
    }
    state.steps += 1;
    state.time += total;
    report
}
