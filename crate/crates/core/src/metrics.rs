//! Image and process metrics: PSNR, SSIM, GLCM texture features, the
//! granular texture score (GTC), dynamic time warping and the drawing
//! dynamics discrepancy (DDC).

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (-10.0 * mse.log10()).min(PSNR_CAP)
}

/// Peak signal-to-noise ratio with peak 1.0.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let n = a.data().len().max(1) as f64;
    let sse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(psnr_from_mse(sse / n))
}

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_taps() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut taps = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    taps
}

/// Separable Gaussian blur. Near borders the window is truncated to the
/// image and renormalized.
fn blur(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let taps = gaussian_taps();
    let r = SSIM_RADIUS as isize;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                let (mut acc, mut norm) = (0.0, 0.0);
                for k in -r..=r {
                    let (sx, sy) = if horizontal {
                        (x as isize + k, y as isize)
                    } else {
                        (x as isize, y as isize + k)
                    };
                    if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                        continue;
                    }
                    let t = taps[(k + r) as usize];
                    acc += t * src[sy as usize * w + sx as usize];
                    norm += t;
                }
                *o = acc / norm;
            }
        });
        out
    };
    pass(&pass(src, true), false)
}

/// Mean structural similarity on luma with an 11×11 Gaussian window.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let (w, h) = a.dims();
    if w == 0 || h == 0 {
        return Ok(1.0);
    }
    let x = a.luma();
    let y = b.luma();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = blur(&x, w, h);
    let my = blur(&y, w, h);
    let mxx = blur(&prod(&x, &x), w, h);
    let myy = blur(&prod(&y, &y), w, h);
    let mxy = blur(&prod(&x, &y), w, h);
    let total: f64 = (0..w * h)
        .map(|i| {
            let vx = mxx[i] - mx[i] * mx[i];
            let vy = myy[i] - my[i] * my[i];
            let cxy = mxy[i] - mx[i] * my[i];
            ((2.0 * mx[i] * my[i] + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx[i] * mx[i] + my[i] * my[i] + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / (w * h) as f64)
}

pub const GLCM_DEFAULT_LEVELS: usize = 32;
/// Offsets as `(row, column)` displacements.
pub const GLCM_DEFAULT_OFFSETS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlcmFeatures {
    pub contrast: f64,
    pub entropy: f64,
    pub levels: usize,
    pub offsets: Vec<(isize, isize)>,
}

/// Quantizes luma in `[0, 1]` into `levels` equal bins.
pub fn quantize(luma: f64, levels: usize) -> usize {
    ((luma.clamp(0.0, 1.0) * levels as f64) as usize).min(levels - 1)
}

/// Symmetrized, normalized co-occurrence matrix (row-major `levels²`).
pub fn glcm(img: &Image, levels: usize, offset: (isize, isize)) -> Vec<f64> {
    let (w, h) = img.dims();
    let q: Vec<usize> = img.luma().iter().map(|&l| quantize(l, levels)).collect();
    let mut m = vec![0.0; levels * levels];
    let (dr, dc) = offset;
    for r in 0..h as isize {
        for c in 0..w as isize {
            let (r2, c2) = (r + dr, c + dc);
            if r2 < 0 || c2 < 0 || r2 >= h as isize || c2 >= w as isize {
                continue;
            }
            let i = q[r as usize * w + c as usize];
            let j = q[r2 as usize * w + c2 as usize];
            m[i * levels + j] += 1.0;
            m[j * levels + i] += 1.0;
        }
    }
    let total: f64 = m.iter().sum();
    if total > 0.0 {
        m.iter_mut().for_each(|v| *v /= total);
    }
    m
}

pub fn glcm_features(img: &Image, levels: usize, offsets: &[(isize, isize)]) -> Result<GlcmFeatures> {
    if levels < 2 {
        return Err(Error::invalid("GLCM needs at least 2 levels"));
    }
    if offsets.is_empty() {
        return Err(Error::invalid("GLCM needs at least one offset"));
    }
    let (mut contrast, mut entropy) = (0.0, 0.0);
    for &off in offsets {
        let m = glcm(img, levels, off);
        for i in 0..levels {
            for j in 0..levels {
                let p = m[i * levels + j];
                if p > 0.0 {
                    let d = i as f64 - j as f64;
                    contrast += p * d * d;
                    entropy -= p * p.log2();
                }
            }
        }
    }
    let n = offsets.len() as f64;
    Ok(GlcmFeatures {
        contrast: contrast / n,
        entropy: entropy / n,
        levels,
        offsets: offsets.to_vec(),
    })
}

/// Granular texture score with default GLCM settings. Not symmetric: both
/// terms are relative to the reference.
pub fn gtc(generated: &Image, reference: &Image) -> Result<f64> {
    let g = glcm_features(generated, GLCM_DEFAULT_LEVELS, &GLCM_DEFAULT_OFFSETS)?;
    let r = glcm_features(reference, GLCM_DEFAULT_LEVELS, &GLCM_DEFAULT_OFFSETS)?;
    gtc_from_features(&g, &r)
}

pub fn gtc_from_features(generated: &GlcmFeatures, reference: &GlcmFeatures) -> Result<f64> {
    if !(reference.contrast > 0.0 && reference.entropy > 0.0) {
        return Err(Error::DegenerateReference {
            contrast: reference.contrast,
            entropy: reference.entropy,
        });
    }
    Ok(0.5
        * ((generated.contrast - reference.contrast).abs() / reference.contrast
            + (generated.entropy - reference.entropy).abs() / reference.entropy))
}

/// Dynamic time warping with absolute-difference cost and steps
/// `(1,0)`, `(0,1)`, `(1,1)`.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySequence);
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![0.0; m];
    for (i, &x) in a.iter().enumerate() {
        for j in 0..m {
            let cost = (x - b[j]).abs();
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = prev[j];
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let diag = if j > 0 { prev[j - 1] } else { f64::INFINITY };
                up.min(left).min(diag)
            };
            cur[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub values: Vec<f64>,
    pub frame_times: Vec<f64>,
}

impl ConvergenceCurve {
    /// Divides every value by the first one (left as is when that is zero).
    pub fn normalized(&self) -> ConvergenceCurve {
        let first = self.values.first().copied().unwrap_or(0.0);
        let values = if first > 0.0 {
            self.values.iter().map(|v| v / first).collect()
        } else {
            self.values.clone()
        };
        ConvergenceCurve {
            values,
            frame_times: self.frame_times.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrameDistance {
    /// Root mean squared difference to the target.
    L2,
    OneMinusSsim,
    /// Precomputed `frame_index,distance` CSVs for the generated and the
    /// reference sequence.
    External { generated: Vec<f64>, reference: Vec<f64> },
}

fn frame_distance(frame: &Image, target: &Image, kind: &FrameDistance) -> Result<f64> {
    match kind {
        FrameDistance::L2 => {
            frame.ensure_same_dims(target)?;
            let n = frame.data().len().max(1) as f64;
            let sse: f64 = frame.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok((sse / n).sqrt())
        }
        FrameDistance::OneMinusSsim => Ok((1.0 - ssim(frame, target)?).max(0.0)),
        FrameDistance::External { .. } => Err(Error::invalid("external distances are not computed per frame")),
    }
}

pub fn convergence_curve(frames: &[Image], target: &Image, kind: &FrameDistance, fps: f64) -> Result<ConvergenceCurve> {
    let values = frames
        .par_iter()
        .map(|f| frame_distance(f, target, kind))
        .collect::<Result<Vec<_>>>()?;
    Ok(curve_from_values(values, fps))
}

fn curve_from_values(values: Vec<f64>, fps: f64) -> ConvergenceCurve {
    let fps = if fps > 0.0 { fps } else { 1.0 };
    let frame_times = (0..values.len()).map(|i| i as f64 / fps).collect();
    ConvergenceCurve { values, frame_times }
}

/// DTW between two normalized convergence curves divided by the longer length.
pub fn ddc_from_curves(generated: &ConvergenceCurve, reference: &ConvergenceCurve) -> Result<f64> {
    let g = generated.normalized();
    let r = reference.normalized();
    let len = g.values.len().max(r.values.len());
    Ok(dtw(&g.values, &r.values)? / len.max(1) as f64)
}

pub fn ddc(gen_frames: &[Image], ref_frames: &[Image], target: &Image, kind: &FrameDistance) -> Result<f64> {
    let (g, r) = match kind {
        FrameDistance::External { generated, reference } => {
            (curve_from_values(generated.clone(), 1.0), curve_from_values(reference.clone(), 1.0))
        }
        _ => {
            if gen_frames.len() < 2 || ref_frames.len() < 2 {
                return Err(Error::invalid("DDC needs at least two frames per sequence"));
            }
            (
                convergence_curve(gen_frames, target, kind, 1.0)?,
                convergence_curve(ref_frames, target, kind, 1.0)?,
            )
        }
    };
    if g.values.len() < 2 || r.values.len() < 2 {
        return Err(Error::invalid("DDC needs at least two frames per sequence"));
    }
    ddc_from_curves(&g, &r)
}

/// Reads a `frame_index,distance` CSV (header optional) ordered by index.
pub fn load_distance_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let (Some(i), Some(d)) = (parts.next(), parts.next()) else {
            return Err(Error::invalid(format!("line {}: expected frame_index,distance", n + 1)));
        };
        match (i.parse::<usize>(), d.parse::<f64>()) {
            (Ok(i), Ok(d)) if d.is_finite() && d >= 0.0 => rows.push((i, d)),
            _ if n == 0 => continue,
            _ => return Err(Error::invalid(format!("line {}: bad row {line:?}", n + 1))),
        }
    }
    rows.sort_by_key(|r| r.0);
    Ok(rows.into_iter().map(|r| r.1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        let mut img = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set_pixel(x, y, [f(x, y); 3]);
            }
        }
        img
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(5, 4, [0.3; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        let b = Image::filled(5, 4, [0.4; 3]);
        assert_relative_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-9);
        assert!(psnr(&a, &Image::new(2, 2)).is_err());
    }

    #[test]
    fn ssim_identity_and_inverse() {
        let a = gray(24, 20, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        assert_relative_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        let inv = gray(24, 20, |x, y| 1.0 - ((x * 7 + y * 3) % 11) as f64 / 10.0);
        assert!(ssim(&a, &inv).unwrap() <= 0.0);
    }

    #[test]
    fn ssim_constant_vs_inverse_is_luminance_only() {
        // No structure in either image: only the luminance term survives.
        let a = Image::filled(16, 16, [0.2; 3]);
        let b = Image::filled(16, 16, [0.8; 3]);
        let expected = (2.0 * 0.2 * 0.8 + SSIM_C1) / (0.04 + 0.64 + SSIM_C1);
        assert_relative_eq!(ssim(&a, &b).unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn glcm_examples() {
        let c = Image::filled(8, 8, [0.4; 3]);
        let f = glcm_features(&c, 32, &[(0, 1)]).unwrap();
        assert_eq!((f.contrast, f.entropy), (0.0, 0.0));

        let stripes = gray(8, 8, |x, _| (x % 2) as f64);
        let f = glcm_features(&stripes, 32, &[(0, 1)]).unwrap();
        assert_eq!(f.contrast, 31.0 * 31.0);
        assert_eq!(f.entropy, 1.0);

        let m = glcm(&stripes, 8, (1, 1));
        assert_relative_eq!(m.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn glcm_transpose_symmetry() {
        let a = gray(9, 7, |x, y| ((x * x + 3 * y) % 5) as f64 / 4.0);
        let t = gray(7, 9, |x, y| ((y * y + 3 * x) % 5) as f64 / 4.0);
        let offs: Vec<(isize, isize)> = GLCM_DEFAULT_OFFSETS.to_vec();
        let swapped: Vec<(isize, isize)> = offs.iter().map(|&(r, c)| (c, r)).collect();
        let fa = glcm_features(&a, 8, &offs).unwrap();
        let ft = glcm_features(&t, 8, &swapped).unwrap();
        assert_relative_eq!(fa.contrast, ft.contrast, epsilon = 1e-12);
        assert_relative_eq!(fa.entropy, ft.entropy, epsilon = 1e-12);
    }

    #[test]
    fn gtc_examples() {
        let tex = gray(16, 16, |x, y| ((x * 5 + y * 3) % 7) as f64 / 6.0);
        assert_eq!(gtc(&tex, &tex).unwrap(), 0.0);
        let flat = Image::filled(16, 16, [0.5; 3]);
        assert_relative_eq!(gtc(&flat, &tex).unwrap(), 1.0, epsilon = 1e-12);
        assert!(matches!(gtc(&tex, &flat), Err(Error::DegenerateReference { .. })));
    }

    #[test]
    fn dtw_examples() {
        assert_eq!(dtw(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(dtw(&[0.0], &[5.0]).unwrap(), 5.0);
        assert_eq!(dtw(&[1.0, 2.0, 3.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert!(matches!(dtw(&[], &[1.0]), Err(Error::EmptySequence)));
    }

    #[test]
    fn ddc_identical_and_reversed() {
        let target = Image::filled(8, 8, [0.0; 3]);
        let frames: Vec<Image> = (0..5).map(|i| Image::filled(8, 8, [1.0 - 0.2 * i as f64; 3])).collect();
        assert_eq!(ddc(&frames, &frames, &target, &FrameDistance::L2).unwrap(), 0.0);
        let rev: Vec<Image> = frames.iter().rev().cloned().collect();
        assert!(ddc(&rev, &frames, &target, &FrameDistance::L2).unwrap() > 0.0);
    }

    #[test]
    fn ddc_time_shift_by_one_frame() {
        // [1, .5, .25, .25] against [1, 1, .5, .25]: the best path pays only
        // for pairing the reference's repeated 1 with something.
        let g = ConvergenceCurve { values: vec![1.0, 0.5, 0.25, 0.25], frame_times: vec![] };
        let r = ConvergenceCurve { values: vec![1.0, 1.0, 0.5, 0.25], frame_times: vec![] };
        assert_eq!(ddc_from_curves(&g, &r).unwrap(), 0.0);
        // Every reference value is at least 0.5, so both trailing 0.25s pay
        // 0.25 whatever they are matched with.
        let r = ConvergenceCurve { values: vec![1.0, 1.0, 0.5, 0.5], frame_times: vec![] };
        assert_relative_eq!(ddc_from_curves(&g, &r).unwrap(), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn distance_csv_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "frame_index,distance\n1,0.5\n0,1.0\n2,0.25\n").unwrap();
        assert_eq!(load_distance_csv(&p).unwrap(), vec![1.0, 0.5, 0.25]);
        std::fs::write(&p, "0,1.0\n1,oops\n").unwrap();
        assert!(load_distance_csv(&p).is_err());
    }
}
