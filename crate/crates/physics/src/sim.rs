//! A stateful simulation session: lifting a painting, interactive tools,
//! progressive deposition and reset.

use std::collections::{HashMap, VecDeque};

use nalgebra::Vector3;
use sandsim_core::sequencer::ScriptEvent;
use sandsim_core::{Image, Painting, Stroke, StrokeId};
use serde::{Deserialize, Serialize};

use crate::config::{LiftConfig, SimConfig};
use crate::error::{PhysicsError, Result};
use crate::interact::{freeze_filter, smear};
use crate::lift::{lift_stroke, particles_per_kernel};
use crate::mpm::{mpm_step, StepReport};
use crate::render::{render_3d, CanvasStyle};
use crate::state::{SandParticle, SandState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepositMode {
    /// Every stroke is lifted before the first step.
    AllAtOnce,
    /// Script events are deposited one at a time, `settle_steps` apart.
    Progressive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FreezeWindow {
    center: Vector3<f64>,
    safe_radius: f64,
    remaining: usize,
}

/// Smear parameters in canvas pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanvasSmear {
    pub x: f64,
    pub y: f64,
    pub dx: f64,
    pub dy: f64,
    pub radius_px: f64,
    /// Peak velocity impulse (m/s).
    pub strength: f64,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    pub state: SandState,
    pub lift: LiftConfig,
    pub style: CanvasStyle,
    painting: Painting,
    seed: u64,
    /// Canvas-relative particle clouds per painting stroke.
    clouds: HashMap<StrokeId, Vec<SandParticle>>,
    pending: VecDeque<ScriptEvent>,
    settle_steps: usize,
    countdown: usize,
    freeze: Option<FreezeWindow>,
    initial: (Vec<SandParticle>, VecDeque<ScriptEvent>),
}

impl Simulator {
    /// Builds a session for `painting`. In progressive mode `events` is the
    /// deposition order; in all-at-once mode every stroke is placed now.
    pub fn new(
        painting: &Painting,
        events: &[ScriptEvent],
        mode: DepositMode,
        sim: SimConfig,
        lift: LiftConfig,
        settle_steps: usize,
        seed: u64,
    ) -> Result<Self> {
        painting.validate()?;
        let state = SandState::for_canvas(painting.width, painting.height, sim, &lift)?;
        let clouds = painting
            .strokes
            .iter()
            .map(|s| Ok((s.stroke_id, lift_stroke(s, &lift, sim.sand_density, seed)?)))
            .collect::<Result<HashMap<_, _>>>()?;
        let mut me = Self {
            state,
            lift,
            style: CanvasStyle::from(painting),
            painting: painting.clone(),
            seed,
            clouds,
            pending: VecDeque::new(),
            settle_steps,
            countdown: 0,
            freeze: None,
            initial: (Vec::new(), VecDeque::new()),
        };
        match mode {
            DepositMode::AllAtOnce => {
                for s in &painting.strokes {
                    let cloud = me.clouds[&s.stroke_id].clone();
                    me.place(cloud);
                }
            }
            DepositMode::Progressive => me.pending = events.iter().copied().collect(),
        }
        me.initial = (me.state.particles.clone(), me.pending.clone());
        Ok(me)
    }

    pub fn painting(&self) -> &Painting {
        &self.painting
    }

    pub fn particle_count(&self) -> usize {
        self.state.particles.len()
    }

    pub fn initial_particle_count(&self) -> usize {
        self.initial.0.len()
    }

    pub fn pending_events(&self) -> usize {
        self.pending.len()
    }

    /// Moves canvas-relative particles onto the floor frame and adds them.
    fn place(&mut self, cloud: Vec<SandParticle>) {
        let origin = Vector3::repeat(self.state.floor_z());
        for mut p in cloud {
            p.position += origin;
            let mut pos = p.position;
            self.state.clamp_to_interior(&mut pos);
            p.position = pos;
            self.state.particles.push(p);
        }
    }

    /// Adds the particles of kernels `[start, end)` of a painting stroke.
    pub fn deposit_event(&mut self, e: &ScriptEvent) -> Result<usize> {
        let stroke = self
            .painting
            .stroke(e.stroke_id)
            .ok_or_else(|| PhysicsError::Invalid(format!("unknown stroke {}", e.stroke_id)))?;
        let per_kernel = particles_per_kernel(stroke.opacity(), &self.lift)?;
        let end = e.kernel_end.min(stroke.len());
        let cloud = &self.clouds[&e.stroke_id];
        let slice = cloud[e.kernel_start.min(end) * per_kernel..end * per_kernel].to_vec();
        let n = slice.len();
        self.place(slice);
        Ok(n)
    }

    /// Lifts and deposits a whole stroke that need not belong to the painting.
    pub fn deposit_stroke(&mut self, stroke: &Stroke) -> Result<usize> {
        stroke.validate()?;
        let cloud = match self.clouds.get(&stroke.stroke_id) {
            Some(c) if self.painting.stroke(stroke.stroke_id) == Some(stroke) => c.clone(),
            _ => lift_stroke(stroke, &self.lift, self.state.config.sand_density, self.seed)?,
        };
        let n = cloud.len();
        self.place(cloud);
        Ok(n)
    }

    /// Queues events for progressive deposition.
    pub fn queue_events(&mut self, events: impl IntoIterator<Item = ScriptEvent>) {
        self.pending.extend(events);
    }

    pub fn step(&mut self) -> Result<StepReport> {
        if self.countdown == 0 {
            if let Some(e) = self.pending.pop_front() {
                self.deposit_event(&e)?;
                self.countdown = self.settle_steps;
            }
        } else {
            self.countdown -= 1;
        }
        let report = mpm_step(&mut self.state);
        if let Some(f) = &mut self.freeze {
            freeze_filter(&mut self.state.particles, f.center, f.safe_radius, self.state.config.freeze_speed);
            f.remaining -= 1;
            if f.remaining == 0 {
                self.freeze = None;
            }
        }
        Ok(report)
    }

    /// Applies a smear given in canvas pixels and arms the freeze filter
    /// around it. Returns the number of particles touched.
    pub fn smear_canvas(&mut self, s: &CanvasSmear) -> Result<usize> {
        if !(s.radius_px > 0.0 && s.strength > 0.0 && s.x.is_finite() && s.y.is_finite()) {
            return Err(PhysicsError::Invalid("smear needs a finite position and positive radius and strength".into()));
        }
        let center = self.state.canvas_to_world([s.x, s.y], &self.lift);
        let radius = s.radius_px * self.lift.px_to_m;
        let dir = Vector3::new(s.dx, s.dy, 0.0);
        let touched = smear(&mut self.state.particles, center, radius, s.strength, dir);
        let cfg = &self.state.config;
        if cfg.freeze_steps > 0 {
            self.freeze = Some(FreezeWindow {
                center,
                safe_radius: cfg.freeze_radius_factor * radius,
                remaining: cfg.freeze_steps,
            });
        }
        Ok(touched)
    }

    /// Restores the particles and deposition queue present after lifting.
    pub fn reset(&mut self) {
        self.state.particles = self.initial.0.clone();
        self.pending = self.initial.1.clone();
        self.countdown = 0;
        self.freeze = None;
        self.state.steps = 0;
        self.state.time = 0.0;
    }

    /// Sets one simulation parameter by its config key.
    pub fn set_param(&mut self, key: &str, value: f64) -> Result<()> {
        let mut doc = serde_json::to_value(self.state.config)?;
        let slot = doc
            .get_mut(key)
            .ok_or_else(|| PhysicsError::Invalid(format!("unknown parameter {key:?}")))?;
        *slot = match slot {
            serde_json::Value::Bool(_) => serde_json::Value::Bool(value != 0.0),
            serde_json::Value::Number(_) => serde_json::json!(value),
            _ => return Err(PhysicsError::Invalid(format!("parameter {key:?} is not scalar"))),
        };
        let cfg: SimConfig = serde_json::from_value(doc)
            .map_err(|e| PhysicsError::Invalid(format!("bad value for {key}: {e}")))?;
        cfg.validate()?;
        if cfg.grid != self.state.config.grid || cfg.boundary_cells != self.state.config.boundary_cells {
            return Err(PhysicsError::Invalid("grid layout cannot change during a session".into()));
        }
        self.state.config = cfg;
        Ok(())
    }

    pub fn render(&self) -> Image {
        render_3d(&self.state, self.style, &self.lift, self.painting.width, self.painting.height)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sandsim_core::Kernel;

    fn painting() -> Painting {
        let mut p = Painting::new(32, 32);
        for id in 0..2 {
            let ks = (0..6).map(|i| Kernel::new([8.0 + 3.0 * i as f64, 10.0 + 10.0 * id as f64], 0.0)).collect();
            p.strokes.push(Stroke::new(id, [2.0, 2.0], 0.5, ks));
        }
        p
    }

    fn events(p: &Painting) -> Vec<ScriptEvent> {
        let mut out = Vec::new();
        for s in &p.strokes {
            for k in (0..s.len()).step_by(3) {
                out.push(ScriptEvent {
                    stroke_id: s.stroke_id,
                    kernel_start: k,
                    kernel_end: (k + 3).min(s.len()),
                    frame_index: out.len() + 1,
                });
            }
        }
        out
    }

    #[test]
    fn progressive_matches_all_at_once_particle_count() {
        let p = painting();
        let ev = events(&p);
        let cfg = SimConfig { grid: [16, 16, 12], ..SimConfig::default() };
        let all = Simulator::new(&p, &ev, DepositMode::AllAtOnce, cfg, LiftConfig::default(), 2, 1).unwrap();
        let mut prog = Simulator::new(&p, &ev, DepositMode::Progressive, cfg, LiftConfig::default(), 2, 1).unwrap();
        assert_eq!(prog.particle_count(), 0);
        while prog.pending_events() > 0 {
            prog.step().unwrap();
        }
        assert_eq!(prog.particle_count(), all.particle_count());
        prog.reset();
        assert_eq!(prog.particle_count(), 0);
        assert_eq!(prog.pending_events(), ev.len());
    }

    #[test]
    fn set_param_validates() {
        let p = painting();
        let mut s = Simulator::new(&p, &[], DepositMode::AllAtOnce, SimConfig::default(), LiftConfig::default(), 0, 1).unwrap();
        s.set_param("damping", 2.0).unwrap();
        assert_eq!(s.state.config.damping, 2.0);
        s.set_param("boundaries", 0.0).unwrap();
        assert!(!s.state.config.boundaries);
        assert!(s.set_param("nope", 1.0).is_err());
        assert!(s.set_param("dt", -1.0).is_err());
        assert!(s.set_param("gravity", 1.0).is_err());
    }
}
