//! Subtractive Gaussian rasterizer with analytic gradients.
//!
//! The image is `max(b - c_sand * Σ G(x), 0)` per channel, where the sum runs
//! over every (active) kernel. There is no depth sorting: accumulation is a
//! plain sum, so the result does not depend on stroke order up to float
//! associativity. Pixel `(i, j)` is sampled at the point `(i, j)`.
//!
//! Forward rendering is parallel over 16×16 tiles; the backward pass is
//! parallel over kernels, each reading the per-pixel upstream gradient inside
//! its own truncation window.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::painting::{activate_opacity_grad, activate_scale_grad, Kernel, Painting, StrokeId};

pub const DEFAULT_CUTOFF_SIGMA: f64 = 3.0;
pub const TILE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterOptions {
    /// Truncation radius in standard deviations.
    pub cutoff_sigma: f64,
    /// Accumulate kernels in `(stroke_id, ordinal)` order instead of list
    /// order, making the density bitwise independent of stroke order.
    pub deterministic: bool,
}

impl Default for RasterOptions {
    fn default() -> Self {
        Self {
            cutoff_sigma: DEFAULT_CUTOFF_SIGMA,
            deterministic: false,
        }
    }
}

/// Restricts rendering to a kernel prefix of selected strokes. Strokes not in
/// the map are not drawn.
pub type ActiveSet = HashMap<StrokeId, usize>;

/// Inclusive-exclusive pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub const EMPTY: PixelRect = PixelRect {
        x0: 0,
        y0: 0,
        x1: 0,
        y1: 0,
    };

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    fn intersect(&self, other: &PixelRect) -> PixelRect {
        PixelRect {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        }
    }
}

/// Truncation window of one kernel: every pixel within `cutoff_sigma` along
/// each axis, i.e. half-extent `cutoff_sigma * sqrt(Σ_dd)`, clipped to the
/// canvas.
pub fn bounding_box(
    scale: [f64; 2],
    kernel: &Kernel,
    cutoff_sigma: f64,
    width: usize,
    height: usize,
) -> PixelRect {
    let cov = crate::painting::covariance(scale, kernel.rotation);
    let hx = cutoff_sigma * cov[0][0].sqrt();
    let hy = cutoff_sigma * cov[1][1].sqrt();
    let span = |c: f64, h: f64, n: usize| -> Option<(usize, usize)> {
        let lo = (c - h).ceil();
        let hi = (c + h).floor();
        if hi < 0.0 || lo > (n as f64 - 1.0) || lo > hi {
            return None;
        }
        Some((lo.max(0.0) as usize, (hi.min(n as f64 - 1.0) as usize) + 1))
    };
    match (
        span(kernel.center[0], hx, width),
        span(kernel.center[1], hy, height),
    ) {
        (Some((x0, x1)), Some((y0, y1))) => PixelRect { x0, y0, x1, y1 },
        _ => PixelRect::EMPTY,
    }
}

/// Per-kernel precomputation shared by forward and backward passes.
#[derive(Debug, Clone, Copy)]
struct Splat {
    stroke: usize,
    kernel: usize,
    center: [f64; 2],
    cos: f64,
    sin: f64,
    inv_sx2: f64,
    inv_sy2: f64,
    opacity: f64,
    rect: PixelRect,
}

impl Splat {
    /// Returns `(G, u, v)` where `(u, v)` are the pixel offset coordinates in
    /// the kernel frame.
    #[inline]
    fn eval(&self, x: usize, y: usize) -> (f64, f64, f64) {
        let dx = x as f64 - self.center[0];
        let dy = y as f64 - self.center[1];
        let u = self.cos * dx + self.sin * dy;
        let v = -self.sin * dx + self.cos * dy;
        let q = u * u * self.inv_sx2 + v * v * self.inv_sy2;
        (self.opacity * (-0.5 * q).exp(), u, v)
    }
}

fn build_splats(painting: &Painting, active: Option<&ActiveSet>, opts: &RasterOptions) -> Vec<Splat> {
    let mut splats = Vec::with_capacity(painting.kernel_count());
    for (si, stroke) in painting.strokes.iter().enumerate() {
        let limit = match active {
            Some(set) => match set.get(&stroke.stroke_id) {
                Some(&n) => n.min(stroke.len()),
                None => continue,
            },
            None => stroke.len(),
        };
        let scale = stroke.scale();
        let opacity = stroke.opacity();
        for (ki, kernel) in stroke.kernels[..limit].iter().enumerate() {
            let rect = bounding_box(scale, kernel, opts.cutoff_sigma, painting.width, painting.height);
            if rect.is_empty() {
                continue;
            }
            let (sin, cos) = kernel.rotation.sin_cos();
            splats.push(Splat {
                stroke: si,
                kernel: ki,
                center: kernel.center,
                cos,
                sin,
                inv_sx2: 1.0 / (scale[0] * scale[0]),
                inv_sy2: 1.0 / (scale[1] * scale[1]),
                opacity,
                rect,
            });
        }
    }
    if opts.deterministic {
        let ids: Vec<StrokeId> = painting.strokes.iter().map(|s| s.stroke_id).collect();
        splats.sort_by_key(|s| (ids[s.stroke], s.kernel));
    }
    splats
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// Rendered linear RGB image.
    pub image: Image,
    /// `c_sand`-weighted accumulated density before clamping.
    pub density: Image,
}

/// Accumulated scalar density `Σ G(x)` over the canvas, row-major.
pub fn accumulate_density(
    painting: &Painting,
    active: Option<&ActiveSet>,
    opts: &RasterOptions,
) -> Vec<f64> {
    let (w, h) = (painting.width, painting.height);
    let splats = build_splats(painting, active, opts);
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, s) in splats.iter().enumerate() {
        for ty in s.rect.y0 / TILE..=(s.rect.y1 - 1) / TILE {
            for tx in s.rect.x0 / TILE..=(s.rect.x1 - 1) / TILE {
                bins[ty * tiles_x + tx].push(i as u32);
            }
        }
    }

    let tiles: Vec<(PixelRect, Vec<f64>)> = bins
        .par_iter()
        .enumerate()
        .map(|(t, bin)| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            let tile = PixelRect {
                x0: tx * TILE,
                y0: ty * TILE,
                x1: ((tx + 1) * TILE).min(w),
                y1: ((ty + 1) * TILE).min(h),
            };
            let tw = tile.x1 - tile.x0;
            let mut acc = vec![0.0; tw * (tile.y1 - tile.y0)];
            for &i in bin {
                let s = &splats[i as usize];
                let r = s.rect.intersect(&tile);
                for y in r.y0..r.y1 {
                    let row = (y - tile.y0) * tw;
                    for x in r.x0..r.x1 {
                        acc[row + x - tile.x0] += s.eval(x, y).0;
                    }
                }
            }
            (tile, acc)
        })
        .collect();

    let mut density = vec![0.0; w * h];
    for (tile, acc) in tiles {
        let tw = tile.x1 - tile.x0;
        for y in tile.y0..tile.y1 {
            let src = &acc[(y - tile.y0) * tw..(y - tile.y0 + 1) * tw];
            density[y * w + tile.x0..y * w + tile.x1].copy_from_slice(src);
        }
    }
    density
}

pub fn render(painting: &Painting, active: Option<&ActiveSet>, opts: &RasterOptions) -> RenderOutput {
    let (w, h) = (painting.width, painting.height);
    let sum = accumulate_density(painting, active, opts);
    let b = painting.background;
    let c = painting.sand_color;
    let mut image = Vec::with_capacity(w * h * 3);
    let mut density = Vec::with_capacity(w * h * 3);
    for d in sum {
        for ch in 0..3 {
            let dc = c[ch] * d;
            density.push(dc);
            image.push((b[ch] - dc).max(0.0));
        }
    }
    RenderOutput {
        image: Image::from_raw(w, h, image).expect("sized buffer"),
        density: Image::from_raw(w, h, density).expect("sized buffer"),
    }
}

/// Gradient of a scalar loss with respect to one stroke's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StrokeGrad {
    pub stroke_id: StrokeId,
    pub centers: Vec<[f64; 2]>,
    pub rotations: Vec<f64>,
    pub raw_scale: [f64; 2],
    pub raw_opacity: f64,
}

impl StrokeGrad {
    pub fn zeros(stroke_id: StrokeId, kernels: usize) -> Self {
        Self {
            stroke_id,
            centers: vec![[0.0; 2]; kernels],
            rotations: vec![0.0; kernels],
            raw_scale: [0.0; 2],
            raw_opacity: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.raw_scale.iter().all(|v| v.is_finite())
            && self.raw_opacity.is_finite()
            && self.centers.iter().flatten().all(|v| v.is_finite())
            && self.rotations.iter().all(|v| v.is_finite())
    }
}

/// Per-stroke gradients, index-aligned with `Painting::strokes`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub strokes: Vec<StrokeGrad>,
}

impl GradientSet {
    pub fn zeros_like(painting: &Painting) -> Self {
        Self {
            strokes: painting
                .strokes
                .iter()
                .map(|s| StrokeGrad::zeros(s.stroke_id, s.len()))
                .collect(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.strokes.iter().find(|g| !g.is_finite()) {
            Some(g) => Err(Error::NonFiniteGradient {
                stroke_id: g.stroke_id,
            }),
            None => Ok(()),
        }
    }

    /// Adds `other` into `self`; both must come from the same painting.
    pub fn accumulate(&mut self, other: &GradientSet) {
        for (a, b) in self.strokes.iter_mut().zip(&other.strokes) {
            for (x, y) in a.centers.iter_mut().zip(&b.centers) {
                x[0] += y[0];
                x[1] += y[1];
            }
            for (x, y) in a.rotations.iter_mut().zip(&b.rotations) {
                *x += y;
            }
            a.raw_scale[0] += b.raw_scale[0];
            a.raw_scale[1] += b.raw_scale[1];
            a.raw_opacity += b.raw_opacity;
        }
    }
}

/// Partials of one kernel, before chaining into the stroke activations.
#[derive(Debug, Clone, Copy, Default)]
struct KernelPartials {
    center: [f64; 2],
    rotation: f64,
    scale: [f64; 2],
    opacity: f64,
}

/// Back-propagates `loss_grad = ∂L/∂image` through the renderer.
///
/// Pixels where the clamp is active (`b - density <= 0`) pass no gradient.
pub fn backward(
    painting: &Painting,
    output: &RenderOutput,
    loss_grad: &Image,
    opts: &RasterOptions,
) -> Result<GradientSet> {
    let (w, h) = (painting.width, painting.height);
    output.image.ensure_same_dims(loss_grad)?;
    if output.image.dims() != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            actual: output.image.dims(),
        });
    }

    let b = painting.background;
    let c = painting.sand_color;
    // ∂L/∂(Σ G) per pixel.
    let upstream: Vec<f64> = output
        .density
        .data()
        .chunks_exact(3)
        .zip(loss_grad.data().chunks_exact(3))
        .map(|(d, g)| {
            (0..3)
                .filter(|&ch| b[ch] - d[ch] > 0.0)
                .map(|ch| -c[ch] * g[ch])
                .sum()
        })
        .collect();

    let splats = build_splats(painting, None, opts);
    let partials: Vec<KernelPartials> = splats
        .par_iter()
        .map(|s| {
            let mut p = KernelPartials::default();
            let sx2 = 1.0 / s.inv_sx2;
            let sy2 = 1.0 / s.inv_sy2;
            let (sx, sy) = (sx2.sqrt(), sy2.sqrt());
            for y in s.rect.y0..s.rect.y1 {
                for x in s.rect.x0..s.rect.x1 {
                    let g = upstream[y * w + x];
                    if g == 0.0 {
                        continue;
                    }
                    let (val, u, v) = s.eval(x, y);
                    let gv = g * val;
                    // Σ⁻¹(x - μ) expressed back in image axes
                    let a = u * s.inv_sx2;
                    let bb = v * s.inv_sy2;
                    p.center[0] += gv * (s.cos * a - s.sin * bb);
                    p.center[1] += gv * (s.sin * a + s.cos * bb);
                    p.rotation -= gv * u * v * (s.inv_sx2 - s.inv_sy2);
                    p.scale[0] += gv * u * u / (sx2 * sx);
                    p.scale[1] += gv * v * v / (sy2 * sy);
                    p.opacity += g * val / s.opacity;
                }
            }
            p
        })
        .collect();

    let mut grads = GradientSet::zeros_like(painting);
    let mut scale_acc = vec![[0.0f64; 2]; painting.strokes.len()];
    let mut opacity_acc = vec![0.0f64; painting.strokes.len()];
    for (s, p) in splats.iter().zip(&partials) {
        let g = &mut grads.strokes[s.stroke];
        g.centers[s.kernel] = p.center;
        g.rotations[s.kernel] = p.rotation;
        scale_acc[s.stroke][0] += p.scale[0];
        scale_acc[s.stroke][1] += p.scale[1];
        opacity_acc[s.stroke] += p.opacity;
    }
    for (si, stroke) in painting.strokes.iter().enumerate() {
        let ds = activate_scale_grad(stroke.raw_scale);
        let g = &mut grads.strokes[si];
        g.raw_scale = [scale_acc[si][0] * ds[0], scale_acc[si][1] * ds[1]];
        g.raw_opacity = opacity_acc[si] * activate_opacity_grad(stroke.raw_opacity);
    }
    grads.check_finite()?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::painting::Stroke;

    fn single(center: [f64; 2], scale: [f64; 2], alpha: f64) -> Painting {
        let mut p = Painting::new(16, 16);
        p.strokes.push(Stroke::new(
            0,
            scale,
            alpha,
            vec![Kernel::new(center, 0.0)],
        ));
        p
    }

    #[test]
    fn empty_painting_is_background() {
        let mut p = Painting::new(20, 7);
        p.background = [0.9, 0.8, 0.7];
        let out = render(&p, None, &RasterOptions::default());
        assert_eq!(out.image, Image::filled(20, 7, [0.9, 0.8, 0.7]));
    }

    #[test]
    fn full_opacity_at_center_hits_zero() {
        let mut p = single([5.0, 5.0], [2.0, 2.0], 0.5);
        p.sand_color = [1.0; 3];
        p.strokes[0].raw_opacity = 1e9;
        let out = render(&p, None, &RasterOptions::default());
        let px = out.image.pixel(5, 5);
        for v in px {
            assert!(v < 1e-12);
        }
    }

    #[test]
    fn clamp_branch_never_goes_negative() {
        let mut p = Painting::new(8, 8);
        p.sand_color = [1.0; 3];
        for id in 0..2 {
            p.strokes
                .push(Stroke::new(id, [2.0, 2.0], 0.6, vec![Kernel::new([4.0, 4.0], 0.0)]));
        }
        let out = render(&p, None, &RasterOptions::default());
        assert_eq!(out.image.pixel(4, 4), [0.0; 3]);
        assert_relative_eq!(out.density.pixel(4, 4)[0], 1.2, epsilon = 1e-12);
    }

    #[test]
    fn full_prefix_active_set_matches_unrestricted() {
        let mut p = Painting::new(40, 30);
        p.strokes.push(Stroke::from_centers(3, [3.0, 2.0], 0.3, &[[5.0, 5.0], [8.0, 6.0], [11.0, 8.0]]));
        p.strokes.push(Stroke::from_centers(9, [4.0, 4.0], 0.5, &[[20.0, 15.0], [22.0, 17.0]]));
        let active: ActiveSet = p.strokes.iter().map(|s| (s.stroke_id, s.len())).collect();
        let opts = RasterOptions::default();
        assert_eq!(render(&p, Some(&active), &opts), render(&p, None, &opts));
        let partial: ActiveSet = [(3, 1)].into_iter().collect();
        let out = render(&p, Some(&partial), &opts);
        assert_eq!(out.image.pixel(22, 17), p.background);
    }

    #[test]
    fn bounding_box_examples() {
        let k = Kernel::new([20.0, 20.0], 0.0);
        let r = bounding_box([2.0, 2.0], &k, 3.0, 64, 64);
        assert_eq!(r, PixelRect { x0: 14, y0: 14, x1: 27, y1: 27 });
        // half extent 3 * sqrt(4) = 6 on each side of the centre
        assert_eq!(r.x1 - 1 - 20, 6);
        assert_eq!(20 - r.x0, 6);

        let off = Kernel::new([-40.0, 10.0], 0.0);
        assert!(bounding_box([2.0, 2.0], &off, 3.0, 64, 64).is_empty());

        let rotated = Kernel::new([32.0, 32.0], 0.6);
        let r = bounding_box([5.0, 1.0], &rotated, 3.0, 64, 64);
        let cov = crate::painting::covariance([5.0, 1.0], 0.6);
        assert!((r.x1 - 1 - 32) as f64 >= (3.0 * cov[0][0].sqrt()).floor());
        assert!((r.y1 - 1 - 32) as f64 >= (3.0 * cov[1][1].sqrt()).floor());
        assert!(3.0 * cov[0][0].sqrt() <= 15.0 + 1e-12);
    }

    #[test]
    fn zero_loss_grad_gives_zero_gradient() {
        let p = single([7.3, 8.1], [3.0, 2.0], 0.4);
        let opts = RasterOptions::default();
        let out = render(&p, None, &opts);
        let g = backward(&p, &out, &Image::new(16, 16), &opts).unwrap();
        assert_eq!(g, GradientSet::zeros_like(&p));
    }

    #[test]
    fn clamped_pixels_pass_no_gradient() {
        let mut p = single([8.0, 8.0], [2.0, 2.0], 0.6);
        p.sand_color = [1.0; 3];
        p.strokes
            .push(Stroke::new(1, [2.0, 2.0], 0.6, vec![Kernel::new([8.0, 8.0], 0.3)]));
        let opts = RasterOptions::default();
        let out = render(&p, None, &opts);
        assert_eq!(out.image.pixel(8, 8), [0.0; 3]);
        let mut lg = Image::new(16, 16);
        lg.set_pixel(8, 8, [1.0, -2.0, 0.5]);
        let g = backward(&p, &out, &lg, &opts).unwrap();
        assert_eq!(g, GradientSet::zeros_like(&p));
    }

    #[test]
    fn nonfinite_gradient_is_reported() {
        let p = single([8.0, 8.0], [2.0, 2.0], 0.5);
        let opts = RasterOptions::default();
        let out = render(&p, None, &opts);
        let mut lg = Image::new(16, 16);
        lg.set_pixel(8, 9, [f64::NAN, 0.0, 0.0]);
        assert!(matches!(
            backward(&p, &out, &lg, &opts),
            Err(Error::NonFiniteGradient { stroke_id: 0 })
        ));
    }
}
