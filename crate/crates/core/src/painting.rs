//! Stroke representation: kernels, strokes, paintings and their activations.
//!
//! Every stroke carries unconstrained raw parameters for its shared scale and
//! opacity. The rendering-side values are obtained through smooth activations:
//! `scale = softplus(raw) + SCALE_FLOOR` and `opacity = sigmoid(raw)`.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type StrokeId = u64;

pub const SCHEMA_VERSION: u32 = 1;

/// Minimum activated scale in pixels; keeps every covariance invertible.
pub const SCALE_FLOOR: f64 = 0.05;

/// Raw opacities are clamped to this magnitude before the sigmoid so the
/// activated value stays strictly inside (0, 1) in double precision.
pub const OPACITY_RAW_LIMIT: f64 = 30.0;

/// Default subtractive absorption colour (warm sand).
pub const DEFAULT_SAND_COLOR: [f64; 3] = [0.55, 0.47, 0.35];

/// Kernel centres may sit this fraction of the canvas outside each edge.
pub const CANVAS_MARGIN: f64 = 0.25;

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps a raw 2-vector to strictly positive pixel scales.
pub fn activate_scale(raw: [f64; 2]) -> [f64; 2] {
    raw.map(|r| softplus(r) + SCALE_FLOOR)
}

/// Derivative of [`activate_scale`] per component.
pub fn activate_scale_grad(raw: [f64; 2]) -> [f64; 2] {
    raw.map(sigmoid)
}

/// Inverse of [`activate_scale`]. Scales at or below the floor are nudged just
/// above it.
pub fn invert_scale(scale: [f64; 2]) -> [f64; 2] {
    scale.map(|s| {
        let y = (s - SCALE_FLOOR).max(1e-12);
        if y > 30.0 {
            y + (-(-y).exp_m1()).ln()
        } else {
            y.exp_m1().ln()
        }
    })
}

pub fn activate_opacity(raw: f64) -> f64 {
    sigmoid(raw.clamp(-OPACITY_RAW_LIMIT, OPACITY_RAW_LIMIT))
}

/// Derivative of [`activate_opacity`]; zero in the clamped tails.
pub fn activate_opacity_grad(raw: f64) -> f64 {
    if raw.abs() > OPACITY_RAW_LIMIT {
        return 0.0;
    }
    let a = sigmoid(raw);
    a * (1.0 - a)
}

pub fn invert_opacity(alpha: f64) -> f64 {
    let a = alpha.clamp(1e-13, 1.0 - 1e-13);
    (a / (1.0 - a)).ln()
}

/// Wraps an angle into `[0, π)`.
pub fn canonical_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    if t >= PI {
        0.0
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub center: [f64; 2],
    /// Angle in radians of the kernel's first principal axis.
    pub rotation: f64,
    #[serde(default)]
    pub ordinal: usize,
}

impl Kernel {
    pub fn new(center: [f64; 2], rotation: f64) -> Self {
        Self {
            center,
            rotation,
            ordinal: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub stroke_id: StrokeId,
    #[serde(default)]
    pub region_id: Option<u32>,
    pub raw_scale: [f64; 2],
    pub raw_opacity: f64,
    pub kernels: Vec<Kernel>,
}

impl Stroke {
    /// Builds a stroke from activated scale and opacity.
    pub fn new(stroke_id: StrokeId, scale: [f64; 2], opacity: f64, kernels: Vec<Kernel>) -> Self {
        let mut s = Self {
            stroke_id,
            region_id: None,
            raw_scale: invert_scale(scale),
            raw_opacity: invert_opacity(opacity),
            kernels,
        };
        s.renumber();
        s
    }

    /// Straight polyline helper: kernels at `centers`, each rotated along the
    /// local chord direction.
    pub fn from_centers(
        stroke_id: StrokeId,
        scale: [f64; 2],
        opacity: f64,
        centers: &[[f64; 2]],
    ) -> Self {
        let n = centers.len();
        let kernels = centers
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let (a, b) = match n {
                    0 | 1 => (c, [c[0] + 1.0, c[1]]),
                    _ if k + 1 < n => (c, centers[k + 1]),
                    _ => (centers[k - 1], c),
                };
                Kernel::new(c, (b[1] - a[1]).atan2(b[0] - a[0]))
            })
            .collect();
        Self::new(stroke_id, scale, opacity, kernels)
    }

    pub fn scale(&self) -> [f64; 2] {
        activate_scale(self.raw_scale)
    }

    pub fn opacity(&self) -> f64 {
        activate_opacity(self.raw_opacity)
    }

    /// Activated long-axis scale `max(s_x, s_y)`.
    pub fn long_axis(&self) -> f64 {
        let s = self.scale();
        s[0].max(s[1])
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// Restores ordinals to `0..K`.
    pub fn renumber(&mut self) {
        for (k, kernel) in self.kernels.iter_mut().enumerate() {
            kernel.ordinal = k;
        }
    }

    pub fn covariance(&self, kernel: &Kernel) -> [[f64; 2]; 2] {
        covariance(self.scale(), kernel.rotation)
    }

    pub fn eval_kernel(&self, kernel: &Kernel, point: [f64; 2]) -> f64 {
        eval_kernel(self.scale(), self.opacity(), kernel, point)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() {
            return Err(Error::invalid(format!("stroke {} has no kernels", self.stroke_id)));
        }
        let finite = self.raw_scale.iter().all(|v| v.is_finite())
            && self.raw_opacity.is_finite()
            && self
                .kernels
                .iter()
                .all(|k| k.center.iter().all(|v| v.is_finite()) && k.rotation.is_finite());
        if !finite {
            return Err(Error::invalid(format!(
                "stroke {} has non-finite parameters",
                self.stroke_id
            )));
        }
        if self.kernels.iter().enumerate().any(|(k, kn)| kn.ordinal != k) {
            return Err(Error::invalid(format!(
                "stroke {} has non-contiguous kernel ordinals",
                self.stroke_id
            )));
        }
        Ok(())
    }
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(scale)` and `R` the rotation by `theta`.
pub fn covariance(scale: [f64; 2], theta: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    let (a, b) = (scale[0] * scale[0], scale[1] * scale[1]);
    let xx = c * c * a + s * s * b;
    let yy = s * s * a + c * c * b;
    let xy = c * s * (a - b);
    [[xx, xy], [xy, yy]]
}

/// Squared Mahalanobis distance of `d` in the frame of a kernel with the given
/// scale and rotation.
#[inline]
pub fn mahalanobis_sq(scale: [f64; 2], theta: f64, d: [f64; 2]) -> f64 {
    let (s, c) = theta.sin_cos();
    let u = c * d[0] + s * d[1];
    let v = -s * d[0] + c * d[1];
    u * u / (scale[0] * scale[0]) + v * v / (scale[1] * scale[1])
}

pub fn eval_kernel(scale: [f64; 2], opacity: f64, kernel: &Kernel, point: [f64; 2]) -> f64 {
    let d = [point[0] - kernel.center[0], point[1] - kernel.center[1]];
    opacity * (-0.5 * mahalanobis_sq(scale, kernel.rotation, d)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Painting {
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    pub sand_color: [f64; 3],
    pub strokes: Vec<Stroke>,
}

#[derive(Serialize, Deserialize)]
struct PaintingDoc {
    schema_version: u32,
    #[serde(flatten)]
    painting: Painting,
}

impl Painting {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            background: [1.0; 3],
            sand_color: DEFAULT_SAND_COLOR,
            strokes: Vec::new(),
        }
    }

    pub fn kernel_count(&self) -> usize {
        self.strokes.iter().map(Stroke::len).sum()
    }

    pub fn next_stroke_id(&self) -> StrokeId {
        self.strokes.iter().map(|s| s.stroke_id + 1).max().unwrap_or(0)
    }

    pub fn stroke(&self, id: StrokeId) -> Option<&Stroke> {
        self.strokes.iter().find(|s| s.stroke_id == id)
    }

    /// Bounds of the margin-extended canvas, `([x0, x1], [y0, y1])`.
    pub fn center_bounds(&self) -> ([f64; 2], [f64; 2]) {
        let (w, h) = (self.width as f64, self.height as f64);
        (
            [-CANVAS_MARGIN * w, (1.0 + CANVAS_MARGIN) * w],
            [-CANVAS_MARGIN * h, (1.0 + CANVAS_MARGIN) * h],
        )
    }

    pub fn clamp_centers(&mut self) {
        let (bx, by) = self.center_bounds();
        for k in self.strokes.iter_mut().flat_map(|s| s.kernels.iter_mut()) {
            k.center[0] = k.center[0].clamp(bx[0], bx[1]);
            k.center[1] = k.center[1].clamp(by[0], by[1]);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("canvas must be non-empty"));
        }
        let in_unit = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !in_unit(&self.background) || !in_unit(&self.sand_color) {
            return Err(Error::invalid("background and sand colour must lie in [0,1]^3"));
        }
        let mut ids: Vec<_> = self.strokes.iter().map(|s| s.stroke_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate stroke id"));
        }
        let (bx, by) = self.center_bounds();
        for s in &self.strokes {
            s.validate()?;
            for k in &s.kernels {
                let inside = (bx[0]..=bx[1]).contains(&k.center[0])
                    && (by[0]..=by[1]).contains(&k.center[1]);
                if !inside {
                    return Err(Error::invalid(format!(
                        "stroke {} has a kernel outside the canvas margin",
                        s.stroke_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Serializes to the versioned JSON interchange document. Rotations are
    /// canonicalized to `[0, π)` here and nowhere else.
    pub fn to_json(&self) -> Result<String> {
        let mut painting = self.clone();
        for k in painting.strokes.iter_mut().flat_map(|s| s.kernels.iter_mut()) {
            k.rotation = canonical_angle(k.rotation);
        }
        Ok(serde_json::to_string_pretty(&PaintingDoc {
            schema_version: SCHEMA_VERSION,
            painting,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PaintingDoc = serde_json::from_str(text)?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion(doc.schema_version));
        }
        let mut painting = doc.painting;
        for s in &mut painting.strokes {
            s.renumber();
        }
        painting.validate()?;
        Ok(painting)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;
    use std::f64::consts::FRAC_PI_4;

    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    fn assert_mat(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) {
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(a[i][j], b[i][j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn covariance_examples() {
        assert_mat(covariance([2.0, 1.0], 0.0), [[4.0, 0.0], [0.0, 1.0]]);
        assert_mat(covariance([2.0, 1.0], FRAC_PI_2), [[1.0, 0.0], [0.0, 4.0]]);
        assert_mat(covariance([2.0, 1.0], FRAC_PI_4), [[2.5, 1.5], [1.5, 2.5]]);
    }

    #[test]
    fn kernel_examples() {
        let k = Kernel::new([3.0, 4.0], 0.7);
        assert_eq!(eval_kernel([2.0, 1.0], 0.8, &k, [3.0, 4.0]), 0.8);
        assert_eq!(eval_kernel([2.0, 1.0], 0.5, &k, [3.0, 4.0]), 0.5);
        let iso = Kernel::new([0.0, 0.0], 0.3);
        assert_relative_eq!(
            eval_kernel([1.0, 1.0], 1.0, &iso, [0.6, 0.8]),
            (-0.5f64).exp(),
            epsilon = 1e-15
        );
        assert_relative_eq!((-0.5f64).exp(), 0.6065, epsilon = 1e-4);
    }

    #[test]
    fn activation_examples() {
        assert_eq!(activate_opacity(0.0), 0.5);
        let high = activate_opacity(1e6);
        assert!(high < 1.0 && high > 1.0 - 1e-12);
        assert!(activate_opacity(-1e6) > 0.0);
        // softplus(0) + floor = ln 2 + 0.05
        assert_eq!(activate_scale([0.0, 0.0]), [0.743_147_180_559_945_3; 2]);
    }

    #[test]
    fn canonical_angle_range() {
        for t in [-7.0, -PI, -0.1, 0.0, 1.0, PI, 3.5 * PI] {
            let c = canonical_angle(t);
            assert!((0.0..PI).contains(&c), "{t} -> {c}");
            assert_relative_eq!((c - t).sin().abs(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn json_round_trip_canonicalizes_rotation() {
        let mut p = Painting::new(32, 16);
        let mut s = Stroke::from_centers(4, [3.0, 2.0], 0.4, &[[1.0, 2.0], [3.0, 2.5]]);
        s.kernels[0].rotation = -0.5;
        s.region_id = Some(2);
        p.strokes.push(s);
        let back = Painting::from_json(&p.to_json().unwrap()).unwrap();
        assert_relative_eq!(back.strokes[0].kernels[0].rotation, PI - 0.5, epsilon = 1e-12);
        assert_eq!(back.strokes[0].raw_scale, p.strokes[0].raw_scale);
        assert_eq!(back.strokes[0].region_id, Some(2));
        assert!(p.to_json().unwrap().contains("\"schema_version\": 1"));
    }

    #[test]
    fn rejects_other_schema_versions() {
        let p = Painting::new(4, 4);
        let text = p.to_json().unwrap().replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(matches!(Painting::from_json(&text), Err(Error::SchemaVersion(9))));
    }

    #[test]
    fn validate_rejects_far_kernels() {
        let mut p = Painting::new(10, 10);
        p.strokes.push(Stroke::from_centers(0, [3.0, 3.0], 0.5, &[[20.0, 5.0]]));
        assert!(p.validate().is_err());
        p.clamp_centers();
        assert!(p.validate().is_ok());
        assert_eq!(p.strokes[0].kernels[0].center, [12.5, 5.0]);
    }

    proptest! {
        #[test]
        fn covariance_spectrum_is_rotation_invariant(
            sx in 0.1f64..20.0, sy in 0.1f64..20.0, theta in -10.0f64..10.0
        ) {
            let m = covariance([sx, sy], theta);
            let tr = m[0][0] + m[1][1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let disc = ((tr * tr / 4.0) - det).max(0.0).sqrt();
            let (hi, lo) = (tr / 2.0 + disc, tr / 2.0 - disc);
            let (a, b) = (sx.max(sy).powi(2), sx.min(sy).powi(2));
            prop_assert!((hi - a).abs() <= 1e-9 * a.max(1.0));
            prop_assert!((lo - b).abs() <= 1e-9 * a.max(1.0));
            prop_assert!((m[0][1] - m[1][0]).abs() == 0.0);
        }

        #[test]
        fn kernel_peaks_at_center_and_decays_along_rays(
            sx in 0.5f64..10.0, sy in 0.5f64..10.0, theta in 0.0f64..PI,
            alpha in 0.01f64..1.0, dir in 0.0f64..(2.0 * PI)
        ) {
            let k = Kernel::new([5.0, -3.0], theta);
            let mut prev = eval_kernel([sx, sy], alpha, &k, k.center);
            prop_assert_eq!(prev, alpha);
            for step in 1..40 {
                let t = step as f64 * 0.5;
                let p = [k.center[0] + t * dir.cos(), k.center[1] + t * dir.sin()];
                let v = eval_kernel([sx, sy], alpha, &k, p);
                prop_assert!(v <= prev);
                prop_assert!(v <= alpha);
                prev = v;
            }
        }

        #[test]
        fn kernel_is_invariant_under_joint_rotation(
            sx in 0.5f64..10.0, sy in 0.5f64..10.0, theta in -4.0f64..4.0,
            phi in -4.0f64..4.0, px in -10.0f64..10.0, py in -10.0f64..10.0
        ) {
            let mu = [1.0, 2.0];
            let k = Kernel::new(mu, theta);
            let v0 = eval_kernel([sx, sy], 0.7, &k, [mu[0] + px, mu[1] + py]);
            let (s, c) = phi.sin_cos();
            let q = [mu[0] + c * px - s * py, mu[1] + s * px + c * py];
            let v1 = eval_kernel([sx, sy], 0.7, &Kernel::new(mu, theta + phi), q);
            prop_assert!((v0 - v1).abs() <= 1e-12);
        }

        #[test]
        fn activations_round_trip(rs in -20.0f64..40.0, ro in -18.0f64..18.0) {
            let back = invert_scale(activate_scale([rs, rs]));
            prop_assert!((back[0] - rs).abs() <= 1e-9 * rs.abs().max(1.0));
            let back = invert_opacity(activate_opacity(ro));
            prop_assert!((back - ro).abs() <= 1e-9 * ro.abs().max(1.0));
        }
    }
}
