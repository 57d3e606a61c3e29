//! Drawing scripts: the order and pace in which a fitted painting is laid
//! down, and the frame sequence that shows it.
//!
//! Frame 0 is the empty canvas. Each event reveals the next run of kernels of
//! one stroke and owns one frame, so a script with `E` events has `E + 1`
//! frames and its last frame is the complete painting.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::painting::{Painting, StrokeId};
use crate::planner::RegionPlan;
use crate::raster::{render, ActiveSet, RasterOptions};
use crate::Image;

pub const MANIFEST_FILE: &str = "process_manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEvent {
    pub stroke_id: StrokeId,
    /// First revealed kernel ordinal.
    pub kernel_start: usize,
    /// One past the last revealed ordinal.
    pub kernel_end: usize,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessScript {
    pub events: Vec<ScriptEvent>,
    pub total_frames: usize,
    pub fps: u32,
}

fn stroke_order(painting: &Painting, plan: &RegionPlan) -> Result<Vec<usize>> {
    let mut keys = Vec::with_capacity(painting.strokes.len());
    for (i, s) in painting.strokes.iter().enumerate() {
        let rank = s
            .region_id
            .and_then(|r| plan.rank(r))
            .ok_or(Error::UnclassifiedStroke(s.stroke_id))?;
        let sc = s.scale();
        let first_y = s.kernels.first().map_or(0.0, |k| k.center[1]);
        keys.push((rank, sc[0] * sc[1], first_y, s.stroke_id, i));
    }
    keys.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(b.1.total_cmp(&a.1))
            .then(a.2.total_cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    Ok(keys.into_iter().map(|k| k.4).collect())
}

/// Orders strokes back to front, coarse to fine and top to bottom, and
/// reveals each one `kernels_per_frame` kernels at a time.
pub fn build_script(
    painting: &Painting,
    plan: &RegionPlan,
    fps: u32,
    kernels_per_frame: usize,
) -> Result<ProcessScript> {
    if kernels_per_frame == 0 {
        return Err(Error::invalid("kernels_per_frame must be positive"));
    }
    if fps == 0 {
        return Err(Error::invalid("fps must be positive"));
    }
    let mut events = Vec::new();
    for i in stroke_order(painting, plan)? {
        let s = &painting.strokes[i];
        let mut start = 0;
        while start < s.len() {
            let end = (start + kernels_per_frame).min(s.len());
            events.push(ScriptEvent {
                stroke_id: s.stroke_id,
                kernel_start: start,
                kernel_end: end,
                frame_index: events.len() + 1,
            });
            start = end;
        }
    }
    Ok(ProcessScript {
        total_frames: events.len() + 1,
        events,
        fps,
    })
}

impl ProcessScript {
    /// Kernel prefixes visible at frame `t`.
    pub fn active_at(&self, t: usize) -> ActiveSet {
        let mut active = ActiveSet::new();
        for e in self.events.iter().take_while(|e| e.frame_index <= t) {
            let n = active.entry(e.stroke_id).or_insert(0);
            *n = (*n).max(e.kernel_end);
        }
        active
    }

    /// Checks the script against the painting it was built for.
    pub fn validate(&self, painting: &Painting) -> Result<()> {
        let mut next: std::collections::HashMap<StrokeId, usize> = Default::default();
        let mut last_frame = 0;
        for e in &self.events {
            if e.frame_index < last_frame || e.frame_index >= self.total_frames {
                return Err(Error::invalid(format!("event frame {} out of order", e.frame_index)));
            }
            last_frame = e.frame_index;
            let expected = next.entry(e.stroke_id).or_insert(0);
            if e.kernel_start != *expected || e.kernel_end <= e.kernel_start {
                return Err(Error::invalid(format!(
                    "stroke {} events are not contiguous at ordinal {}",
                    e.stroke_id, e.kernel_start
                )));
            }
            *expected = e.kernel_end;
        }
        for s in &painting.strokes {
            if next.get(&s.stroke_id).copied().unwrap_or(0) != s.len() {
                return Err(Error::invalid(format!("stroke {} is not fully revealed", s.stroke_id)));
            }
        }
        if next.len() != painting.strokes.len() {
            return Err(Error::invalid("script references unknown strokes"));
        }
        Ok(())
    }

    /// Renders frame `t` of the process.
    pub fn render_frame(&self, painting: &Painting, t: usize, opts: &RasterOptions) -> Image {
        render(painting, Some(&self.active_at(t)), opts).image
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameManifest {
    pub fps: u32,
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    pub frames: Vec<String>,
    /// Hex SHA-256 of each PNG file.
    pub checksums: Vec<String>,
}

impl FrameManifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(dir.as_ref().join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn frame_paths(&self, dir: impl AsRef<Path>) -> Vec<PathBuf> {
        self.frames.iter().map(|f| dir.as_ref().join(f)).collect()
    }
}

pub fn frame_file_name(t: usize) -> String {
    format!("frame_{t:06}.png")
}

/// Renders every frame into `out_dir` as PNG and writes the manifest.
pub fn emit_frames(
    painting: &Painting,
    script: &ProcessScript,
    out_dir: impl AsRef<Path>,
    opts: &RasterOptions,
) -> Result<FrameManifest> {
    script.validate(painting)?;
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let checksums = (0..script.total_frames)
        .into_par_iter()
        .map(|t| -> Result<String> {
            let png = script.render_frame(painting, t, opts).png_bytes()?;
            std::fs::write(dir.join(frame_file_name(t)), &png)?;
            Ok(hex::encode(Sha256::digest(&png)))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = FrameManifest {
        fps: script.fps,
        frame_count: script.total_frames,
        width: painting.width,
        height: painting.height,
        frames: (0..script.total_frames).map(frame_file_name).collect(),
        checksums,
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads the frames listed in a manifest, verifying checksums.
pub fn load_frames(dir: impl AsRef<Path>) -> Result<(FrameManifest, Vec<Image>)> {
    let manifest = FrameManifest::load(&dir)?;
    let frames = manifest
        .frame_paths(&dir)
        .par_iter()
        .zip(&manifest.checksums)
        .map(|(p, sum)| -> Result<Image> {
            let bytes = std::fs::read(p)?;
            if hex::encode(Sha256::digest(&bytes)) != *sum {
                return Err(Error::invalid(format!("checksum mismatch for {}", p.display())));
            }
            Image::load_png(p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, frames))
}

/// True when no pixel of `next` is brighter than in `prev`.
pub fn is_darkening(prev: &Image, next: &Image) -> bool {
    prev.dims() == next.dims()
        && prev
            .data()
            .iter()
            .zip(next.data())
            .all(|(a, b)| b.partial_cmp(a) != Some(Ordering::Greater))
}
