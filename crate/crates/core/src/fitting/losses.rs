//! Loss terms and their gradients.

use crate::error::Result;
use crate::image::Image;
use crate::painting::{activate_scale_grad, Painting, Stroke};
use crate::planner::RegionPlan;
use crate::raster::StrokeGrad;

/// Mean squared error over every pixel and channel.
pub fn loss_rec(rendered: &Image, target: &Image) -> Result<f64> {
    rendered.ensure_same_dims(target)?;
    let n = rendered.data().len().max(1) as f64;
    Ok(sum_sq_diff(rendered, target) / n)
}

pub(crate) fn sum_sq_diff(a: &Image, b: &Image) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// `Σ_k ‖μ_{k+1} − μ_k‖²`.
pub fn loss_spring(stroke: &Stroke) -> f64 {
    stroke
        .kernels
        .windows(2)
        .map(|w| {
            let d = [w[1].center[0] - w[0].center[0], w[1].center[1] - w[0].center[1]];
            d[0] * d[0] + d[1] * d[1]
        })
        .sum()
}

/// Adds `weight · ∂L_spring/∂μ` into `grad`.
pub fn spring_grad(stroke: &Stroke, weight: f64, grad: &mut StrokeGrad) {
    for (k, w) in stroke.kernels.windows(2).enumerate() {
        for axis in 0..2 {
            let d = 2.0 * weight * (w[1].center[axis] - w[0].center[axis]);
            grad.centers[k + 1][axis] += d;
            grad.centers[k][axis] -= d;
        }
    }
}

/// `Σ_k ‖μ_{k−1} − 2μ_k + μ_{k+1}‖²` over interior kernels.
pub fn loss_smooth(stroke: &Stroke) -> f64 {
    stroke
        .kernels
        .windows(3)
        .map(|w| {
            let l = laplacian(w);
            l[0] * l[0] + l[1] * l[1]
        })
        .sum()
}

fn laplacian(w: &[crate::painting::Kernel]) -> [f64; 2] {
    [
        w[0].center[0] - 2.0 * w[1].center[0] + w[2].center[0],
        w[0].center[1] - 2.0 * w[1].center[1] + w[2].center[1],
    ]
}

pub fn smooth_grad(stroke: &Stroke, weight: f64, grad: &mut StrokeGrad) {
    for (k, w) in stroke.kernels.windows(3).enumerate() {
        let l = laplacian(w);
        for axis in 0..2 {
            let d = 2.0 * weight * l[axis];
            grad.centers[k][axis] += d;
            grad.centers[k + 1][axis] -= 2.0 * d;
            grad.centers[k + 2][axis] += d;
        }
    }
}

fn is_background(stroke: &Stroke, plan: &RegionPlan) -> bool {
    stroke.region_id.is_some_and(|r| plan.is_background(r))
}

/// Scale and orientation regularizers over background strokes.
///
/// `scale = Σ_bg ‖s_i − (r, r)‖²` and `orient` is the mean of `sin²θ` over all
/// background kernels. Foreground and unassigned strokes contribute nothing.
pub fn loss_scale_and_orient(painting: &Painting, plan: &RegionPlan, target_radius: f64) -> (f64, f64) {
    let mut scale = 0.0;
    let mut orient = 0.0;
    let mut kernels = 0usize;
    for s in painting.strokes.iter().filter(|s| is_background(s, plan)) {
        let sc = s.scale();
        scale += (sc[0] - target_radius).powi(2) + (sc[1] - target_radius).powi(2);
        orient += s.kernels.iter().map(|k| k.rotation.sin().powi(2)).sum::<f64>();
        kernels += s.len();
    }
    let orient = if kernels > 0 { orient / kernels as f64 } else { 0.0 };
    (scale, orient)
}

/// Adds `scale_weight · ∂scale + orient_weight · ∂orient` into `grads`.
pub fn scale_and_orient_grad(
    painting: &Painting,
    plan: &RegionPlan,
    target_radius: f64,
    scale_weight: f64,
    orient_weight: f64,
    grads: &mut [StrokeGrad],
) {
    let kernels: usize = painting
        .strokes
        .iter()
        .filter(|s| is_background(s, plan))
        .map(Stroke::len)
        .sum();
    for (s, g) in painting.strokes.iter().zip(grads.iter_mut()) {
        if !is_background(s, plan) {
            continue;
        }
        let sc = s.scale();
        let ds = activate_scale_grad(s.raw_scale);
        for axis in 0..2 {
            g.raw_scale[axis] += scale_weight * 2.0 * (sc[axis] - target_radius) * ds[axis];
        }
        for (k, kernel) in s.kernels.iter().enumerate() {
            g.rotations[k] += orient_weight * (2.0 * kernel.rotation).sin() / kernels as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::painting::Kernel;
    use crate::planner::{DrawMethod, Mask, Region};

    fn stroke(centers: &[[f64; 2]]) -> Stroke {
        Stroke::from_centers(0, [3.0, 3.0], 0.5, centers)
    }

    #[test]
    fn rec_examples() {
        let a = Image::filled(4, 3, [0.2, 0.5, 0.9]);
        assert_eq!(loss_rec(&a, &a).unwrap(), 0.0);
        let white = Image::filled(4, 3, [1.0; 3]);
        let black = Image::filled(4, 3, [0.0; 3]);
        assert_eq!(loss_rec(&white, &black).unwrap(), 1.0);
        let mut checker = Image::new(6, 6);
        let mut inverse = Image::new(6, 6);
        for y in 0..6 {
            for x in 0..6 {
                let v = ((x + y) % 2) as f64;
                checker.set_pixel(x, y, [v; 3]);
                inverse.set_pixel(x, y, [1.0 - v; 3]);
            }
        }
        assert_eq!(loss_rec(&checker, &inverse).unwrap(), 1.0);
        assert!(loss_rec(&white, &Image::new(3, 3)).is_err());
    }

    #[test]
    fn spring_examples() {
        assert_eq!(loss_spring(&stroke(&[[1.0, 1.0]])), 0.0);
        assert_eq!(loss_spring(&stroke(&[[0.0, 0.0], [3.0, 4.0]])), 25.0);
        assert_eq!(loss_spring(&stroke(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])), 2.0);
    }

    #[test]
    fn smooth_examples() {
        let even: Vec<[f64; 2]> = (0..6).map(|i| [1.5 * i as f64, 2.0 - 0.5 * i as f64]).collect();
        assert_eq!(loss_smooth(&stroke(&even)), 0.0);
        assert_eq!(loss_smooth(&stroke(&[[0.0, 0.0], [1.0, 0.0], [2.0, 1.0]])), 1.0);
        assert_eq!(loss_smooth(&stroke(&[[0.0, 0.0], [5.0, 3.0]])), 0.0);
    }

    fn bg_plan() -> RegionPlan {
        RegionPlan::fallback(8, 8)
    }

    #[test]
    fn scale_and_orient_examples() {
        let plan = bg_plan();
        let mut p = Painting::new(8, 8);
        let mut s = Stroke::new(0, [10.0, 10.0], 0.5, vec![Kernel::new([1.0, 1.0], 0.0)]);
        s.region_id = Some(0);
        p.strokes.push(s);
        let (scale, orient) = loss_scale_and_orient(&p, &plan, 15.0);
        assert!((scale - 50.0).abs() < 1e-9);
        assert_eq!(orient, 0.0);
        p.strokes[0].kernels[0].rotation = std::f64::consts::FRAC_PI_2;
        assert!((loss_scale_and_orient(&p, &plan, 15.0).1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn foreground_strokes_are_unconstrained() {
        let plan = RegionPlan::from_regions(
            8,
            8,
            vec![Region {
                region_id: 3,
                label: "fg".into(),
                layer: 1,
                method: DrawMethod::Line,
                background: false,
                mask: Mask::full(8, 8),
            }],
        )
        .unwrap();
        let mut p = Painting::new(8, 8);
        let mut s = Stroke::new(0, [1.0, 30.0], 0.5, vec![Kernel::new([1.0, 1.0], 1.0)]);
        s.region_id = Some(3);
        p.strokes.push(s.clone());
        s.stroke_id = 1;
        s.region_id = None;
        p.strokes.push(s);
        assert_eq!(loss_scale_and_orient(&p, &plan, 15.0), (0.0, 0.0));
    }
}
