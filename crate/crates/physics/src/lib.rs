//! Granular sand simulation for fitted paintings.
//!
//! Strokes are lifted into 3D particle clusters whose sampling density
//! follows stroke opacity, then simulated with MLS-MPM using a
//! fixed-corotated elastic model and Drucker–Prager plasticity. Interactive
//! tools (smear, freeze) and a top-down subtractive renderer close the loop
//! back to the 2D painting.

pub mod config;
pub mod error;
pub mod interact;
pub mod lift;
pub mod mpm;
pub mod render;
pub mod sim;
pub mod snapshot;
pub mod state;

pub use config::{LiftConfig, SimConfig};
pub use error::{PhysicsError, Result};
pub use interact::{freeze_filter, smear, smear_profile};
pub use lift::{lift_density, lift_stroke};
pub use mpm::{drucker_prager_project, mpm_step, p2g, StepReport};
pub use render::{render_3d, CanvasStyle};
pub use sim::{CanvasSmear, DepositMode, Simulator};
pub use state::{Grid, SandParticle, SandState};
