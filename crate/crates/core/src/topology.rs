//! Structural edits applied between optimizer steps: point merging, stroke
//! splitting, stroke merging and pruning.

use serde::{Deserialize, Serialize};

use crate::painting::{Kernel, Painting, Stroke, StrokeId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyConfig {
    /// Adjacent centres closer than this (px) are merged.
    pub point_merge_dist: f64,
    /// Strokes whose endpoints are within this distance (px) may be merged.
    pub stroke_merge_endpoint_dist: f64,
    /// Strokes below this activated opacity are pruned.
    pub prune_opacity: f64,
    /// Strokes whose activated long axis is below this (px) are pruned.
    pub prune_radius: f64,
    /// Maximum relative difference of scale and opacity for merging strokes.
    pub attribute_similarity: f64,
    /// Maximum angle (degrees) between endpoint tangents for merging strokes.
    pub merge_tangent_deg: f64,
    /// Multiplier on `prune_opacity` in the late stage of fitting. 1 = off.
    pub late_prune_multiplier: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            point_merge_dist: 0.1,
            stroke_merge_endpoint_dist: 5.0,
            prune_opacity: 0.01,
            prune_radius: 3.0,
            attribute_similarity: 0.2,
            merge_tangent_deg: 30.0,
            late_prune_multiplier: 1.0,
        }
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("point_merge_dist", self.point_merge_dist),
            ("stroke_merge_endpoint_dist", self.stroke_merge_endpoint_dist),
            ("prune_opacity", self.prune_opacity),
            ("prune_radius", self.prune_radius),
            ("attribute_similarity", self.attribute_similarity),
            ("merge_tangent_deg", self.merge_tangent_deg),
            ("late_prune_multiplier", self.late_prune_multiplier),
        ];
        match positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            Some((name, v)) => Err(format!("{name} must be positive, got {v}")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySummary {
    pub points_merged: usize,
    pub strokes_split: usize,
    pub strokes_merged: usize,
    pub strokes_pruned: usize,
}

impl TopologySummary {
    pub fn total(&self) -> usize {
        self.points_merged + self.strokes_split + self.strokes_merged + self.strokes_pruned
    }

    fn add(&mut self, o: &TopologySummary) {
        self.points_merged += o.points_merged;
        self.strokes_split += o.strokes_split;
        self.strokes_merged += o.strokes_merged;
        self.strokes_pruned += o.strokes_pruned;
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Mean of two ellipse orientations (π-periodic).
fn axis_mean(a: f64, b: f64) -> f64 {
    let s = (2.0 * a).sin() + (2.0 * b).sin();
    let c = (2.0 * a).cos() + (2.0 * b).cos();
    if s == 0.0 && c == 0.0 {
        return a;
    }
    0.5 * s.atan2(c)
}

/// One greedy front-to-back sweep: each adjacent pair closer than the
/// threshold collapses to its midpoint, and the sweep resumes after the pair.
/// Returns the number of merges.
pub fn merge_points(stroke: &Stroke, cfg: &TopologyConfig) -> (Stroke, usize) {
    let src = &stroke.kernels;
    let mut kernels: Vec<Kernel> = Vec::with_capacity(src.len());
    let mut merges = 0;
    let mut i = 0;
    while i < src.len() {
        if i + 1 < src.len() && dist(src[i].center, src[i + 1].center) < cfg.point_merge_dist {
            let (a, b) = (&src[i], &src[i + 1]);
            kernels.push(Kernel::new(
                [0.5 * (a.center[0] + b.center[0]), 0.5 * (a.center[1] + b.center[1])],
                axis_mean(a.rotation, b.rotation),
            ));
            merges += 1;
            i += 2;
        } else {
            kernels.push(src[i]);
            i += 1;
        }
    }
    let mut out = Stroke {
        kernels,
        ..stroke.clone()
    };
    out.renumber();
    (out, merges)
}

/// Cuts the stroke at every adjacent gap wider than its activated long axis.
/// The first fragment keeps the stroke id; later fragments take ids from
/// `next_id`.
pub fn split_stroke(stroke: &Stroke, cfg: &TopologyConfig, next_id: &mut StrokeId) -> Vec<Stroke> {
    let _ = cfg;
    let limit = stroke.long_axis();
    let mut pieces: Vec<Vec<Kernel>> = vec![Vec::new()];
    for (k, kernel) in stroke.kernels.iter().enumerate() {
        if k > 0 && dist(stroke.kernels[k - 1].center, kernel.center) > limit {
            pieces.push(Vec::new());
        }
        pieces.last_mut().expect("non-empty").push(*kernel);
    }
    pieces
        .into_iter()
        .enumerate()
        .map(|(i, kernels)| {
            let stroke_id = if i == 0 {
                stroke.stroke_id
            } else {
                let id = *next_id;
                *next_id += 1;
                id
            };
            let mut s = Stroke {
                stroke_id,
                kernels,
                ..stroke.clone()
            };
            s.renumber();
            s
        })
        .collect()
}

fn similar(a: f64, b: f64, tol: f64) -> bool {
    let m = a.abs().max(b.abs());
    m == 0.0 || (a - b).abs() / m <= tol
}

fn direction(from: [f64; 2], to: [f64; 2]) -> Option<[f64; 2]> {
    let d = [to[0] - from[0], to[1] - from[1]];
    let n = d[0].hypot(d[1]);
    (n > 0.0).then(|| [d[0] / n, d[1] / n])
}

/// Joins `a` (ending at the junction) and `b` (starting there) if every gate
/// passes. Both kernel runs are already oriented; the result keeps the
/// identity of `sa` and the kernel-count weighted mean of the raw attributes.
fn try_join(a: &[Kernel], b: &[Kernel], sa: &Stroke, sb: &Stroke, cfg: &TopologyConfig) -> Option<Stroke> {
    let (ea, sbk) = (a[a.len() - 1].center, b[0].center);
    let join = direction(ea, sbk);
    let ta = if a.len() >= 2 { direction(a[a.len() - 2].center, ea) } else { join };
    let tb = if b.len() >= 2 { direction(sbk, b[1].center) } else { join };
    if let (Some(ta), Some(tb)) = (ta, tb) {
        let cos = ta[0] * tb[0] + ta[1] * tb[1];
        if cos < cfg.merge_tangent_deg.to_radians().cos() {
            return None;
        }
    }

    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let wmean = |x: f64, y: f64| (na * x + nb * y) / (na + nb);
    let mut kernels = a.to_vec();
    kernels.extend_from_slice(b);
    let mut merged = Stroke {
        stroke_id: sa.stroke_id,
        region_id: sa.region_id,
        raw_scale: [
            wmean(sa.raw_scale[0], sb.raw_scale[0]),
            wmean(sa.raw_scale[1], sb.raw_scale[1]),
        ],
        raw_opacity: wmean(sa.raw_opacity, sb.raw_opacity),
        kernels,
    };
    merged.renumber();
    // A merge the splitter would immediately undo is not a merge.
    let limit = merged.long_axis();
    if merged
        .kernels
        .windows(2)
        .any(|w| dist(w[0].center, w[1].center) > limit)
    {
        return None;
    }
    Some(merged)
}

/// Merges pairs of strokes with nearby, aligned endpoints and similar
/// attributes. Candidate pairs are visited by ascending endpoint gap and each
/// stroke takes part in at most one merge. Returns the number of merges.
pub fn merge_strokes(painting: &Painting, cfg: &TopologyConfig) -> (Painting, usize) {
    let strokes = &painting.strokes;
    let attrs: Vec<([f64; 2], f64)> = strokes.iter().map(|s| (s.scale(), s.opacity())).collect();
    let mut candidates: Vec<(f64, usize, usize, u8)> = Vec::new();
    for i in 0..strokes.len() {
        for j in i + 1..strokes.len() {
            let (a, b) = (&strokes[i], &strokes[j]);
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let (ai, bi) = (&attrs[i], &attrs[j]);
            let tol = cfg.attribute_similarity;
            if !(similar(ai.0[0], bi.0[0], tol) && similar(ai.0[1], bi.0[1], tol) && similar(ai.1, bi.1, tol)) {
                continue;
            }
            let ends_a = [a.kernels[0].center, a.kernels[a.len() - 1].center];
            let ends_b = [b.kernels[0].center, b.kernels[b.len() - 1].center];
            // combo bit 0: which end of a, bit 1: which end of b
            for (combo, (ea, eb)) in [(1u8, (1, 0)), (3, (1, 1)), (0, (0, 0)), (2, (0, 1))] {
                let gap = dist(ends_a[ea], ends_b[eb]);
                if gap <= cfg.stroke_merge_endpoint_dist {
                    candidates.push((gap, i, j, combo));
                }
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2, x.3).cmp(&(y.1, y.2, y.3))));

    let mut used = vec![false; strokes.len()];
    let mut replaced: Vec<Option<Stroke>> = vec![None; strokes.len()];
    let mut merges = 0;
    for (_, i, j, combo) in candidates {
        if used[i] || used[j] {
            continue;
        }
        let (sa, sb) = (&strokes[i], &strokes[j]);
        let rev = |v: &[Kernel]| v.iter().rev().copied().collect::<Vec<_>>();
        let (first, second): (Vec<Kernel>, Vec<Kernel>) = match combo {
            1 => (sa.kernels.clone(), sb.kernels.clone()),
            3 => (sa.kernels.clone(), rev(&sb.kernels)),
            0 => (rev(&sa.kernels), sb.kernels.clone()),
            _ => (sb.kernels.clone(), sa.kernels.clone()),
        };
        if let Some(m) = try_join(&first, &second, sa, sb, cfg) {
            used[i] = true;
            used[j] = true;
            replaced[i] = Some(m);
            merges += 1;
        }
    }

    let mut out = painting.clone();
    out.strokes = strokes
        .iter()
        .enumerate()
        .filter_map(|(k, s)| match (&replaced[k], used[k]) {
            (Some(m), _) => Some(m.clone()),
            (None, true) => None,
            (None, false) => Some(s.clone()),
        })
        .collect();
    (out, merges)
}

/// Drops strokes that are too faint or too thin. Returns the number removed.
pub fn prune_strokes(painting: &Painting, cfg: &TopologyConfig) -> (Painting, usize) {
    let mut out = painting.clone();
    out.strokes
        .retain(|s| !s.is_empty() && s.opacity() >= cfg.prune_opacity && s.long_axis() >= cfg.prune_radius);
    let removed = painting.strokes.len() - out.strokes.len();
    (out, removed)
}

const MAX_ROUNDS: usize = 32;

/// Runs point merging, splitting, stroke merging and pruning, in that order,
/// repeating until a round makes no change. The result is a fixed point: an
/// immediate second pass reports zero changes.
pub fn topology_pass(painting: &Painting, cfg: &TopologyConfig) -> (Painting, TopologySummary) {
    let mut current = painting.clone();
    let mut total = TopologySummary::default();
    for _ in 0..MAX_ROUNDS {
        let (next, round) = topology_round(&current, cfg);
        current = next;
        total.add(&round);
        if round.total() == 0 {
            break;
        }
    }
    (current, total)
}

fn topology_round(painting: &Painting, cfg: &TopologyConfig) -> (Painting, TopologySummary) {
    let mut summary = TopologySummary::default();
    let mut next_id = painting.next_stroke_id();
    let mut strokes = Vec::with_capacity(painting.strokes.len());
    for s in &painting.strokes {
        let (merged, n) = merge_points(s, cfg);
        summary.points_merged += n;
        let parts = split_stroke(&merged, cfg, &mut next_id);
        summary.strokes_split += parts.len() - 1;
        strokes.extend(parts);
    }
    let staged = Painting {
        strokes,
        ..painting.clone()
    };
    let (merged, n) = merge_strokes(&staged, cfg);
    summary.strokes_merged = n;
    let (pruned, n) = prune_strokes(&merged, cfg);
    summary.strokes_pruned = n;
    (pruned, summary)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn line(id: StrokeId, scale: [f64; 2], alpha: f64, xs: &[f64], y: f64) -> Stroke {
        let centers: Vec<[f64; 2]> = xs.iter().map(|&x| [x, y]).collect();
        Stroke::from_centers(id, scale, alpha, &centers)
    }

    fn cfg() -> TopologyConfig {
        TopologyConfig::default()
    }

    #[test]
    fn close_pair_merges_to_midpoint() {
        let s = line(0, [4.0, 2.0], 0.5, &[0.0, 2.0, 2.05, 4.0], 1.0);
        let (m, n) = merge_points(&s, &cfg());
        assert_eq!(n, 1);
        assert_eq!(m.len(), 3);
        assert!((m.kernels[1].center[0] - 2.025).abs() < 1e-12);
        assert_eq!(m.kernels.iter().map(|k| k.ordinal).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn well_spaced_stroke_is_unchanged() {
        let s = line(0, [4.0, 2.0], 0.5, &[0.0, 0.1, 0.2, 1.0], 1.0);
        let (m, n) = merge_points(&s, &cfg());
        assert_eq!(n, 0);
        assert_eq!(m, s);
    }

    #[test]
    fn greedy_sweep_on_three_close_points() {
        let s = line(0, [4.0, 2.0], 0.5, &[0.0, 0.05, 0.10], 0.0);
        let (m, n) = merge_points(&s, &cfg());
        assert_eq!((m.len(), n), (2, 1));
        assert!((m.kernels[0].center[0] - 0.025).abs() < 1e-12);
        assert_eq!(m.kernels[1].center[0], 0.10);
    }

    #[test]
    fn rotation_uses_axis_mean() {
        let mut s = line(0, [4.0, 2.0], 0.5, &[0.0, 0.05], 0.0);
        s.kernels[0].rotation = 0.1;
        s.kernels[1].rotation = std::f64::consts::PI - 0.1;
        let (m, _) = merge_points(&s, &cfg());
        assert!(m.kernels[0].rotation.abs() < 1e-12);
    }

    #[test]
    fn merges_collinear_strokes() {
        let mut p = Painting::new(64, 64);
        p.strokes.push(line(0, [4.0, 2.0], 0.5, &[10.0, 12.0, 14.0], 20.0));
        p.strokes.push(line(1, [4.0, 2.0], 0.5, &[16.0, 18.0, 20.0], 20.0));
        let (m, n) = merge_strokes(&p, &cfg());
        assert_eq!(n, 1);
        assert_eq!(m.strokes.len(), 1);
        assert_eq!(m.strokes[0].len(), 6);
        let xs: Vec<f64> = m.strokes[0].kernels.iter().map(|k| k.center[0]).collect();
        assert_eq!(xs, vec![10.0, 12.0, 14.0, 16.0, 18.0, 20.0]);
    }

    #[test]
    fn merge_reverses_to_meet_endpoints() {
        let mut p = Painting::new(64, 64);
        p.strokes.push(line(0, [4.0, 2.0], 0.5, &[10.0, 12.0, 14.0], 20.0));
        p.strokes.push(line(1, [4.0, 2.0], 0.5, &[20.0, 18.0, 16.0], 20.0));
        let (m, n) = merge_strokes(&p, &cfg());
        assert_eq!(n, 1);
        let xs: Vec<f64> = m.strokes[0].kernels.iter().map(|k| k.center[0]).collect();
        assert_eq!(xs, vec![10.0, 12.0, 14.0, 16.0, 18.0, 20.0]);
    }

    #[test]
    fn distant_endpoints_do_not_merge() {
        let mut p = Painting::new(64, 64);
        p.strokes.push(line(0, [10.0, 2.0], 0.5, &[10.0, 12.0, 14.0], 20.0));
        p.strokes.push(line(1, [10.0, 2.0], 0.5, &[22.0, 24.0, 26.0], 20.0));
        assert_eq!(merge_strokes(&p, &cfg()).1, 0);
    }

    #[test]
    fn dissimilar_opacity_blocks_merge() {
        let mut p = Painting::new(64, 64);
        p.strokes.push(line(0, [4.0, 2.0], 0.9, &[10.0, 12.0, 14.0], 20.0));
        p.strokes.push(line(1, [4.0, 2.0], 0.1, &[16.0, 18.0, 20.0], 20.0));
        assert_eq!(merge_strokes(&p, &cfg()).1, 0);
    }

    #[test]
    fn misaligned_tangents_block_merge() {
        let mut p = Painting::new(64, 64);
        p.strokes.push(line(0, [4.0, 2.0], 0.5, &[10.0, 12.0, 14.0], 20.0));
        let s = Stroke::from_centers(1, [4.0, 2.0], 0.5, &[[16.0, 20.0], [16.0, 22.0], [16.0, 24.0]]);
        p.strokes.push(s);
        assert_eq!(merge_strokes(&p, &cfg()).1, 0);
    }

    #[test]
    fn split_examples() {
        let mut next = 100;
        let s = line(0, [4.0, 2.0], 0.5, &[0.0, 3.0, 6.0, 9.0], 0.0);
        assert_eq!(split_stroke(&s, &cfg(), &mut next), vec![s.clone()]);

        let s = line(0, [4.0, 2.0], 0.5, &[0.0, 3.0, 6.0, 16.0, 19.0, 22.0], 0.0);
        let parts = split_stroke(&s, &cfg(), &mut next);
        assert_eq!(parts.iter().map(Stroke::len).collect::<Vec<_>>(), vec![3, 3]);
        assert_eq!(parts[0].stroke_id, 0);
        assert_eq!(parts[1].stroke_id, 100);
        assert_eq!(parts[1].kernels[0].ordinal, 0);
        assert_eq!(parts[1].raw_scale, s.raw_scale);

        let s = line(0, [4.0, 2.0], 0.5, &[0.0, 10.0, 20.0, 22.0], 0.0);
        let parts = split_stroke(&s, &cfg(), &mut next);
        assert_eq!(parts.iter().map(Stroke::len).collect::<Vec<_>>(), vec![1, 1, 2]);
    }

    #[test]
    fn prune_examples() {
        let mut p = Painting::new(64, 64);
        p.strokes.push(line(0, [10.0, 4.0], 0.005, &[1.0, 2.0], 1.0));
        p.strokes.push(line(1, [2.5, 1.0], 0.5, &[1.0, 2.0], 1.0));
        p.strokes.push(line(2, [10.0, 4.0], 0.5, &[1.0, 2.0], 1.0));
        let (out, n) = prune_strokes(&p, &cfg());
        assert_eq!(n, 2);
        assert_eq!(out.strokes.len(), 1);
        assert_eq!(out.strokes[0].stroke_id, 2);
    }

    pub(crate) fn fixture_one_of_each() -> Painting {
        let mut p = Painting::new(128, 128);
        // one close pair
        p.strokes.push(line(0, [4.0, 2.0], 0.5, &[10.0, 12.0, 12.05, 14.0], 10.0));
        // one oversized gap
        p.strokes.push(line(1, [4.0, 2.0], 0.3, &[10.0, 12.0, 14.0, 30.0, 32.0, 34.0], 40.0));
        // two collinear strokes 2 px apart
        p.strokes.push(line(2, [6.0, 3.0], 0.7, &[10.0, 12.0, 14.0], 80.0));
        p.strokes.push(line(3, [6.0, 3.0], 0.7, &[16.0, 18.0, 20.0], 80.0));
        // one faint stroke
        p.strokes.push(line(4, [8.0, 8.0], 0.005, &[100.0, 102.0], 110.0));
        p
    }

    #[test]
    fn pass_reports_one_change_per_kind() {
        let (out, summary) = topology_pass(&fixture_one_of_each(), &cfg());
        assert_eq!(
            summary,
            TopologySummary {
                points_merged: 1,
                strokes_split: 1,
                strokes_merged: 1,
                strokes_pruned: 1
            }
        );
        assert_eq!(out.strokes.len(), 4);
        let (again, s2) = topology_pass(&out, &cfg());
        assert_eq!(s2.total(), 0);
        assert_eq!(again, out);
    }

    #[test]
    fn clean_painting_is_a_fixed_point() {
        let mut p = Painting::new(64, 64);
        p.strokes.push(line(0, [4.0, 2.0], 0.5, &[10.0, 12.0, 14.0], 10.0));
        p.strokes.push(line(1, [4.0, 2.0], 0.5, &[10.0, 12.0, 14.0], 40.0));
        let (out, s) = topology_pass(&p, &cfg());
        assert_eq!(s.total(), 0);
        assert_eq!(out, p);
    }

    fn arb_painting() -> impl Strategy<Value = Painting> {
        let stroke = (
            1.0f64..8.0,
            1.0f64..8.0,
            0.001f64..0.99,
            prop::collection::vec((0.0f64..64.0, 0.0f64..64.0), 1..8),
        );
        prop::collection::vec(stroke, 0..10).prop_map(|shapes| {
            let mut p = Painting::new(64, 64);
            for (i, (sx, sy, a, pts)) in shapes.into_iter().enumerate() {
                // random walk so some gaps are small and some large
                let mut c = [pts[0].0, pts[0].1];
                let mut centers = vec![c];
                for &(dx, dy) in &pts[1..] {
                    c = [c[0] + (dx - 32.0) / 8.0, c[1] + (dy - 32.0) / 8.0];
                    centers.push(c);
                }
                p.strokes.push(Stroke::from_centers(i as u64, [sx, sy], a, &centers));
            }
            p
        })
    }

    proptest! {
        #[test]
        fn pass_is_idempotent_and_leaves_no_violations(p in arb_painting()) {
            let c = cfg();
            let (out, _) = topology_pass(&p, &c);
            let (again, s) = topology_pass(&out, &c);
            prop_assert_eq!(s.total(), 0);
            prop_assert_eq!(&again, &out);
            for s in &out.strokes {
                prop_assert!(s.opacity() >= c.prune_opacity);
                prop_assert!(s.long_axis() >= c.prune_radius);
                for w in s.kernels.windows(2) {
                    let d = dist(w[0].center, w[1].center);
                    prop_assert!(d >= c.point_merge_dist);
                    prop_assert!(d <= s.long_axis());
                }
            }
        }

        #[test]
        fn split_preserves_centers(p in arb_painting()) {
            let mut next = 1000;
            for s in &p.strokes {
                let parts = split_stroke(s, &cfg(), &mut next);
                let joined: Vec<[f64; 2]> = parts.iter().flat_map(|q| q.kernels.iter().map(|k| k.center)).collect();
                let orig: Vec<[f64; 2]> = s.kernels.iter().map(|k| k.center).collect();
                prop_assert_eq!(joined, orig);
            }
        }

        #[test]
        fn merge_points_and_prune_never_grow(p in arb_painting()) {
            for s in &p.strokes {
                prop_assert!(merge_points(s, &cfg()).0.len() <= s.len());
            }
            prop_assert!(prune_strokes(&p, &cfg()).0.strokes.len() <= p.strokes.len());
        }
    }
}
