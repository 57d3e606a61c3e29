use sandsim_core::Image;

use crate::config::LiftConfig;
use crate::state::SandState;

/// Footprint truncation in standard deviations.
const FOOTPRINT_CUTOFF: f64 = 3.0;

/// Colors of the top-down view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanvasStyle {
    pub background: [f64; 3],
    pub sand_color: [f64; 3],
}

impl From<&sandsim_core::Painting> for CanvasStyle {
    fn from(p: &sandsim_core::Painting) -> Self {
        Self {
            background: p.background,
            sand_color: p.sand_color,
        }
    }
}

/// Top-down projected sand density in units of 2D kernel opacity.
///
/// Every particle splats an isotropic Gaussian of standard deviation
/// `volume^(1/3) / px_to_m` pixels whose integral equals its mass expressed
/// as opaque-layer area, so a freshly lifted stroke projects to the same
/// total density as its 2D render.
pub fn density_3d(state: &SandState, lift: &LiftConfig, width: usize, height: usize) -> Vec<f64> {
    let mut density = vec![0.0; width * height];
    let px2 = lift.px_to_m * lift.px_to_m;
    for p in &state.particles {
        let c = state.world_to_canvas(&p.position, lift);
        let sigma = (p.volume.cbrt() / lift.px_to_m).max(0.5);
        let amp = p.mass / (lift.areal_density * px2 * std::f64::consts::TAU * sigma * sigma);
        let r = FOOTPRINT_CUTOFF * sigma;
        let x0 = (c[0] - r).ceil().max(0.0) as usize;
        let y0 = (c[1] - r).ceil().max(0.0) as usize;
        let x1 = ((c[0] + r).floor() + 1.0).clamp(0.0, width as f64) as usize;
        let y1 = ((c[1] + r).floor() + 1.0).clamp(0.0, height as f64) as usize;
        let inv = -0.5 / (sigma * sigma);
        for y in y0..y1 {
            let dy = y as f64 - c[1];
            for x in x0..x1 {
                let dx = x as f64 - c[0];
                density[y * width + x] += amp * ((dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    density
}

/// `max(b − c_sand · density, 0)` per channel.
pub fn render_3d(state: &SandState, style: CanvasStyle, lift: &LiftConfig, width: usize, height: usize) -> Image {
    let density = density_3d(state, lift, width, height);
    let mut data = Vec::with_capacity(width * height * 3);
    for d in density {
        for ch in 0..3 {
            data.push((style.background[ch] - style.sand_color[ch] * d).max(0.0));
        }
    }
    Image::from_raw(width, height, data).expect("sized buffer")
}
