//! Region plans: masked semantic regions, their drawing order, and the
//! assignment of fitted strokes to regions.
//!
//! A plan manifest is a JSON file
//!
//! ```json
//! { "regions": [
//!     { "id": 0, "label": "sky", "layer": 0, "method": "fill",
//!       "mask_path": "sky.png", "background": true } ] }
//! ```
//!
//! Mask paths are resolved relative to the manifest. Any non-zero mask pixel
//! is inside the region.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::painting::Painting;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawMethod {
    Fill,
    Line,
}

/// Boolean raster, serialized as alternating run lengths starting with an
/// "outside" run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "MaskRuns", try_from = "MaskRuns")]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct MaskRuns {
    width: usize,
    height: usize,
    runs: Vec<usize>,
}

impl From<Mask> for MaskRuns {
    fn from(m: Mask) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0;
        for &b in &m.bits {
            if b != current {
                runs.push(len);
                current = b;
                len = 0;
            }
            len += 1;
        }
        runs.push(len);
        MaskRuns {
            width: m.width,
            height: m.height,
            runs,
        }
    }
}

impl TryFrom<MaskRuns> for Mask {
    type Error = String;

    fn try_from(r: MaskRuns) -> std::result::Result<Self, Self::Error> {
        let mut bits = Vec::with_capacity(r.width * r.height);
        let mut value = false;
        for len in r.runs {
            bits.extend(std::iter::repeat_n(value, len));
            value = !value;
        }
        if bits.len() != r.width * r.height {
            return Err(format!(
                "mask runs cover {} pixels, expected {}",
                bits.len(),
                r.width * r.height
            ));
        }
        Ok(Mask {
            width: r.width,
            height: r.height,
            bits,
        })
    }
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingMask(path.to_path_buf()));
        }
        let img = ::image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            bits: img.pixels().map(|p| p.0[0] != 0).collect(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = ::image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            ::image::Luma([if self.get(x as usize, y as usize) { 255 } else { 0 }])
        });
        img.save(path)?;
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    /// Coverage at a continuous point, sampled at the nearest pixel. Points off
    /// the canvas are uncovered.
    pub fn covers(&self, p: [f64; 2]) -> bool {
        let (x, y) = (p[0].round(), p[1].round());
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return false;
        }
        self.get(x as usize, y as usize)
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Mean pixel position of the mask, `None` when empty.
    pub fn centroid(&self) -> Option<[f64; 2]> {
        let mut sum = [0.0, 0.0];
        let mut n = 0usize;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sum[0] += x as f64;
                    sum[1] += y as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| [sum[0] / n as f64, sum[1] / n as f64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub region_id: u32,
    pub label: String,
    /// 0 is furthest back.
    pub layer: u32,
    pub method: DrawMethod,
    #[serde(default)]
    pub background: bool,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPlan {
    pub width: usize,
    pub height: usize,
    pub regions: Vec<Region>,
    /// Region ids in drawing order.
    pub order: Vec<u32>,
    pub background_ids: Vec<u32>,
}

#[derive(Debug, Deserialize)]
struct ManifestRegion {
    id: u32,
    #[serde(default)]
    label: String,
    #[serde(default)]
    layer: u32,
    #[serde(default = "default_method")]
    method: DrawMethod,
    mask_path: PathBuf,
    #[serde(default)]
    background: bool,
}

fn default_method() -> DrawMethod {
    DrawMethod::Fill
}

#[derive(Debug, Deserialize)]
struct Manifest {
    regions: Vec<ManifestRegion>,
}

/// Drawing order over regions: layer ascending, mask area descending,
/// centroid y ascending, region id ascending.
pub fn infer_order(regions: &[Region]) -> Vec<u32> {
    let mut keyed: Vec<(u32, usize, f64, u32)> = regions
        .iter()
        .map(|r| {
            let cy = r.mask.centroid().map_or(f64::INFINITY, |c| c[1]);
            (r.layer, r.mask.area(), cy, r.region_id)
        })
        .collect();
    keyed.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(b.1.cmp(&a.1))
            .then(a.2.total_cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    keyed.into_iter().map(|k| k.3).collect()
}

impl RegionPlan {
    /// Validates regions and orders them: background regions first, each
    /// group in [`infer_order`] order.
    pub fn from_regions(width: usize, height: usize, regions: Vec<Region>) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::invalid("a plan needs at least one region"));
        }
        let mut seen = HashSet::new();
        for r in &regions {
            if !seen.insert(r.region_id) {
                return Err(Error::DuplicateRegionId(r.region_id));
            }
            if r.mask.dims() != (width, height) {
                return Err(Error::DimensionMismatch {
                    expected: (width, height),
                    actual: r.mask.dims(),
                });
            }
        }
        let background: HashSet<u32> = regions
            .iter()
            .filter(|r| r.background)
            .map(|r| r.region_id)
            .collect();
        let (mut order, rest): (Vec<u32>, Vec<u32>) = infer_order(&regions)
            .into_iter()
            .partition(|id| background.contains(id));
        order.extend(rest);
        let mut background_ids: Vec<u32> = background.into_iter().collect();
        background_ids.sort_unstable();
        Ok(Self {
            width,
            height,
            regions,
            order,
            background_ids,
        })
    }

    /// Single background region covering the whole canvas.
    pub fn fallback(width: usize, height: usize) -> Self {
        Self::from_regions(
            width,
            height,
            vec![Region {
                region_id: 0,
                label: "canvas".into(),
                layer: 0,
                method: DrawMethod::Fill,
                background: true,
                mask: Mask::full(width, height),
            }],
        )
        .expect("fallback plan is valid")
    }

    /// Loads a manifest; the canvas size is taken from the first mask.
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        Self::load_inner(manifest.as_ref(), None)
    }

    /// Loads a manifest and checks every mask against the given canvas size.
    pub fn load_for_canvas(manifest: impl AsRef<Path>, width: usize, height: usize) -> Result<Self> {
        Self::load_inner(manifest.as_ref(), Some((width, height)))
    }

    fn load_inner(path: &Path, canvas: Option<(usize, usize)>) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut regions = Vec::with_capacity(manifest.regions.len());
        for r in manifest.regions {
            let mask_path = if r.mask_path.is_absolute() {
                r.mask_path
            } else {
                base.join(r.mask_path)
            };
            regions.push(Region {
                region_id: r.id,
                label: r.label,
                layer: r.layer,
                method: r.method,
                background: r.background,
                mask: Mask::load_png(&mask_path)?,
            });
        }
        let (w, h) = match (canvas, regions.first()) {
            (Some(dims), _) => dims,
            (None, Some(r)) => r.mask.dims(),
            (None, None) => return Err(Error::invalid("manifest lists no regions")),
        };
        Self::from_regions(w, h, regions)
    }

    pub fn region(&self, id: u32) -> Option<&Region> {
        self.regions.iter().find(|r| r.region_id == id)
    }

    pub fn is_background(&self, id: u32) -> bool {
        self.background_ids.contains(&id)
    }

    /// Position of a region in the drawing order.
    pub fn rank(&self, id: u32) -> Option<usize> {
        self.order.iter().position(|&r| r == id)
    }

    /// Region owning a point: among covering masks the highest layer wins,
    /// then the lower id.
    pub fn region_at(&self, p: [f64; 2]) -> Option<&Region> {
        self.regions
            .iter()
            .filter(|r| r.mask.covers(p))
            .max_by(|a, b| a.layer.cmp(&b.layer).then(b.region_id.cmp(&a.region_id)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Assigns every stroke to exactly one region.
///
/// Each kernel centre votes for the region that owns it; the region with the
/// most votes wins, ties going to the higher layer and then the lower id. A
/// stroke with no covered centre takes the region whose mask centroid is
/// nearest to the mean of its centres.
pub fn classify_strokes(painting: &Painting, plan: &RegionPlan) -> Painting {
    let mut out = painting.clone();
    for stroke in &mut out.strokes {
        let mut votes: HashMap<u32, usize> = HashMap::new();
        for k in &stroke.kernels {
            if let Some(r) = plan.region_at(k.center) {
                *votes.entry(r.region_id).or_default() += 1;
            }
        }
        let winner = votes
            .iter()
            .max_by(|(ia, na), (ib, nb)| {
                let la = plan.region(**ia).map_or(0, |r| r.layer);
                let lb = plan.region(**ib).map_or(0, |r| r.layer);
                na.cmp(nb).then(la.cmp(&lb)).then(ib.cmp(ia))
            })
            .map(|(id, _)| *id);
        stroke.region_id = winner.or_else(|| nearest_centroid(stroke_mean(&stroke.kernels), plan));
    }
    out
}

fn stroke_mean(kernels: &[crate::painting::Kernel]) -> [f64; 2] {
    let n = kernels.len().max(1) as f64;
    let s = kernels
        .iter()
        .fold([0.0, 0.0], |a, k| [a[0] + k.center[0], a[1] + k.center[1]]);
    [s[0] / n, s[1] / n]
}

fn nearest_centroid(p: [f64; 2], plan: &RegionPlan) -> Option<u32> {
    plan.regions
        .iter()
        .filter_map(|r| {
            r.mask.centroid().map(|c| {
                let d = (c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2);
                (d, r.region_id)
            })
        })
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
        .or_else(|| plan.order.first().copied())
}
