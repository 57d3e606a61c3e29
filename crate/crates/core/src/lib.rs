//! Curve-guided Gaussian sand strokes.
//!
//! A [`Painting`] is a set of strokes, each an ordered chain of anisotropic 2D
//! Gaussian kernels that share one scale and one opacity. Strokes are rendered
//! with a subtractive model: accumulated sand density is subtracted from a
//! bright background and clamped at zero. The crate covers the whole 2D side
//! of the pipeline:
//!
//! * [`raster`]: forward rendering and analytic gradients,
//! * [`fitting`]: losses, optimizer and the training loop,
//! * [`topology`]: point/stroke merging, splitting and pruning,
//! * [`planner`]: region masks, drawing order and stroke classification,
//! * [`sequencer`]: drawing scripts and process frame sequences,
//! * [`metrics`]: PSNR, SSIM, GLCM texture, DTW and process convergence.

pub mod error;
pub mod fitting;
pub mod image;
pub mod metrics;
pub mod painting;
pub mod planner;
pub mod raster;
pub mod sequencer;
pub mod topology;

pub use error::{Error, Result};
pub use image::Image;
pub use painting::{Kernel, Painting, Stroke, StrokeId};
pub use planner::{Region, RegionPlan};
pub use raster::{ActiveSet, GradientSet, RasterOptions, RenderOutput};
pub use sequencer::{ProcessScript, ScriptEvent};
pub use fitting::{fit, FitConfig, LossReport};
