//! Dynamic-point trajectories, continuous-time sampling, and cross-view
//! correspondence filtering.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::CameraTrack;

/// Matched instance pairs supported by fewer correspondences than this are
/// dropped during instance matching.
pub const MIN_INSTANCE_CORRESPONDENCES: u64 = 100;

/// Linear interpolation is disabled across visibility gaps longer than this
/// many frames.
pub const MAX_INTERP_GAP_FRAMES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackletSample {
    pub frame: usize,
    pub u: f64,
    pub v: f64,
    pub visible: bool,
}

/// One dynamic point's 2D trajectory within one video.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tracklet {
    pub tracklet_id: String,
    pub camera_id: String,
    pub instance_id: u32,
    pub samples: Vec<TrackletSample>,
}

impl Tracklet {
    /// Trajectory position at camera-local time `t`, as a homogeneous pixel
    /// with `w = 1`. Linear interpolation between the bracketing visible
    /// samples when they are at most [`MAX_INTERP_GAP_FRAMES`] apart;
    /// `None` outside the visible span or across longer gaps.
    pub fn sample_at(&self, cam: &CameraTrack, t: f64) -> Option<Vector3<f64>> {
        // samples are ordered by frame, so frame times ascend; binary-search
        // the first sample at or after t, then step outward to the nearest
        // visible neighbors
        let idx = self.samples.partition_point(|s| {
            cam.frame_times.get(s.frame).is_some_and(|&st| st < t)
        });
        let next = self.samples[idx..].iter().find(|s| s.visible)?;
        let st = *cam.frame_times.get(next.frame)?;
        if st == t {
            return Some(Vector3::new(next.u, next.v, 1.0));
        }
        let prev = self.samples[..idx].iter().rev().find(|s| s.visible)?;
        let pt = *cam.frame_times.get(prev.frame)?;
        if next.frame - prev.frame > MAX_INTERP_GAP_FRAMES {
            return None;
        }
        let a = (t - pt) / (st - pt);
        return Some(Vector3::new(
            prev.u + a * (next.u - prev.u),
            prev.v + a * (next.v - prev.v),
            1.0,
        ));
    }

    pub fn visible_count(&self) -> usize {
        self.samples.iter().filter(|s| s.visible).count()
    }
}

/// A cross-view correspondence between two tracklets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackletPair {
    pub video_i: String,
    pub video_j: String,
    pub tracklet_i: String,
    pub tracklet_j: String,
    pub weight: f64,
    /// Keyframe index pairs that seeded this correspondence, if recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframes: Option<Vec<(usize, usize)>>,
}

/// Tracklet pairs grouped by canonically ordered video pair (`video_i < video_j`).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub groups: BTreeMap<(String, String), Vec<TrackletPair>>,
}

impl CorrespondenceSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a pair, canonicalizing video order. Duplicate (tracklet_i,
    /// tracklet_j) pairs are merged by summing weights.
    pub fn insert(&mut self, mut pair: TrackletPair) {
        assert_ne!(pair.video_i, pair.video_j, "self-pairs are not allowed");
        if pair.video_i > pair.video_j {
            std::mem::swap(&mut pair.video_i, &mut pair.video_j);
            std::mem::swap(&mut pair.tracklet_i, &mut pair.tracklet_j);
            if let Some(kfs) = pair.keyframes.as_mut() {
                for kf in kfs.iter_mut() {
                    *kf = (kf.1, kf.0);
                }
            }
        }
        let key = (pair.video_i.clone(), pair.video_j.clone());
        let group = self.groups.entry(key).or_default();
        if let Some(existing) = group
            .iter_mut()
            .find(|p| p.tracklet_i == pair.tracklet_i && p.tracklet_j == pair.tracklet_j)
        {
            existing.weight += pair.weight;
            if let Some(kfs) = pair.keyframes {
                existing.keyframes.get_or_insert_with(Vec::new).extend(kfs);
            }
        } else {
            group.push(pair);
        }
    }

    pub fn video_pairs(&self) -> impl Iterator<Item = &(String, String)> {
        self.groups.keys()
    }

    pub fn iter_pairs(&self) -> impl Iterator<Item = &TrackletPair> {
        self.groups.values().flatten()
    }

    pub fn total_pairs(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }
}

/// In-memory scene: calibrated camera tracks, tracklets, and cross-view
/// correspondences, keyed by id for deterministic iteration.
#[derive(Debug, Clone, Default)]
pub struct Scene {
    pub cameras: BTreeMap<String, CameraTrack>,
    pub tracklets: BTreeMap<String, Tracklet>,
    pub correspondences: CorrespondenceSet,
}

/// Maximum-total-count one-to-one assignment between instances of two videos,
/// dropping matched pairs supported by fewer than `min_count` correspondences.
///
/// `counts[r][c]` is the raw correspondence count between instance `r` of the
/// first video and instance `c` of the second. Exact over all assignments
/// (bitmask DP over the smaller side), so it handles off-diagonal optima that
/// greedy matching misses.
pub fn match_instances(counts: &[Vec<u64>], min_count: u64) -> BTreeMap<usize, usize> {
    let rows = counts.len();
    let cols = counts.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return BTreeMap::new();
    }
    assert!(counts.iter().all(|r| r.len() == cols), "ragged count matrix");

    // DP over the smaller dimension as the masked side.
    let transpose = cols > rows;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    let at = |r: usize, c: usize| -> u64 {
        if transpose {
            counts[c][r]
        } else {
            counts[r][c]
        }
    };
    assert!(m <= 20, "instance matching supports at most 20 instances per side");

    // best[mask] = max total over the first `popcount-compatible` rows; we
    // process rows in order and allow skipping a row.
    let full = 1usize << m;
    let neg = u64::MAX; // sentinel for unreachable
    let mut best = vec![vec![neg; full]; n + 1];
    best[0][0] = 0;
    for r in 0..n {
        for mask in 0..full {
            let cur = best[r][mask];
            if cur == neg {
                continue;
            }
            // skip row r
            if best[r + 1][mask] == neg || best[r + 1][mask] < cur {
                best[r + 1][mask] = cur;
            }
            for c in 0..m {
                if mask & (1 << c) != 0 {
                    continue;
                }
                let nm = mask | (1 << c);
                let val = cur + at(r, c);
                if best[r + 1][nm] == neg || best[r + 1][nm] < val {
                    best[r + 1][nm] = val;
                }
            }
        }
    }
    // Best final mask, then backtrack deterministically.
    let (&best_total, best_mask) = best[n]
        .iter()
        .zip(0..full)
        .filter(|(v, _)| **v != neg)
        .max_by(|a, b| a.0.cmp(b.0).then(b.1.cmp(&a.1).reverse()))
        .unwrap();
    let mut mask = best_mask;
    let mut total = best_total;
    let mut pairs = Vec::new();
    for r in (0..n).rev() {
        if best[r][mask] == total {
            continue; // row r was skipped
        }
        let mut found = false;
        for c in 0..m {
            if mask & (1 << c) == 0 {
                continue;
            }
            let pm = mask & !(1 << c);
            if best[r][pm] != neg && best[r][pm] + at(r, c) == total {
                pairs.push(if transpose { (c, r) } else { (r, c) });
                mask = pm;
                total = best[r][pm];
                found = true;
                break;
            }
        }
        debug_assert!(found, "DP backtrack failed");
    }

    pairs
        .into_iter()
        .filter(|&(r, c)| counts[r][c] >= min_count)
        .collect()
}

/// Retain only the pairs whose tracklet instance ids appear in the matched
/// assignment for their video pair. Grouping and order are preserved.
pub fn filter_correspondences(
    set: &CorrespondenceSet,
    tracklets: &BTreeMap<String, Tracklet>,
    assignments: &BTreeMap<(String, String), BTreeMap<usize, usize>>,
) -> CorrespondenceSet {
    let mut out = CorrespondenceSet::new();
    for (key, group) in &set.groups {
        let Some(assignment) = assignments.get(key) else {
            continue;
        };
        let kept: Vec<TrackletPair> = group
            .iter()
            .filter(|p| {
                let (Some(ti), Some(tj)) =
                    (tracklets.get(&p.tracklet_i), tracklets.get(&p.tracklet_j))
                else {
                    return false;
                };
                assignment.get(&(ti.instance_id as usize)) == Some(&(tj.instance_id as usize))
            })
            .cloned()
            .collect();
        if !kept.is_empty() {
            out.groups.insert(key.clone(), kept);
        }
    }
    out
}
