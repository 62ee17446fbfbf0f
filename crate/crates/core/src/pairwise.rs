//! Stage 1: exhaustive discrete offset search per camera pair, energy
//! landscape analysis, and spurious-pair rejection.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::EnergyKind;
use crate::geometry::{fundamental_between, CameraTrack, FundamentalMatrix};
use crate::tracklets::{Scene, Tracklet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PairwiseError {
    #[error("no grid point has enough support for pair ({video_i}, {video_j})")]
    NoOverlap { video_i: String, video_j: String },
    #[error("unknown video id {0}")]
    UnknownVideo(String),
    #[error("no correspondences between {video_i} and {video_j}")]
    NoCorrespondences { video_i: String, video_j: String },
    #[error("offset grid is empty")]
    EmptyGrid,
}

/// Discrete candidate offsets `min_offset + k * step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetGrid {
    pub min_offset: f64,
    pub max_offset: f64,
    pub step: f64,
}

impl OffsetGrid {
    pub fn new(min_offset: f64, max_offset: f64, step: f64) -> Self {
        assert!(step > 0.0 && min_offset <= max_offset);
        Self {
            min_offset,
            max_offset,
            step,
        }
    }

    /// Symmetric grid covering one third of the shorter video on each side,
    /// stepped at the finer of the two frame periods.
    pub fn default_for(cam_i: &CameraTrack, cam_j: &CameraTrack) -> Self {
        let dur = |c: &CameraTrack| c.frame_times.last().unwrap() - c.frame_times[0] + 1.0 / c.fps;
        let range = (dur(cam_i).min(dur(cam_j)) / 3.0).ceil();
        let step = (1.0 / cam_i.fps).min(1.0 / cam_j.fps);
        Self::new(-range, range, step)
    }

    pub fn len(&self) -> usize {
        ((self.max_offset - self.min_offset) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn offset(&self, k: usize) -> f64 {
        self.min_offset + k as f64 * self.step
    }

    /// The grid covering the negated offsets, for the (j, i) orientation.
    pub fn mirrored(&self) -> Self {
        Self::new(-self.max_offset, -self.min_offset, self.step)
    }
}

/// Mean pairwise energy per grid offset. Cells with fewer than the required
/// contributing samples are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLandscape {
    pub grid: OffsetGrid,
    pub values: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl EnergyLandscape {
    /// Moving-average smoothing over present cells; `window = 1` is identity.
    pub fn smoothed(&self, window: usize) -> Self {
        if window <= 1 {
            return self.clone();
        }
        let half = window / 2;
        let n = self.values.len();
        let mut values = vec![None; n];
        for k in 0..n {
            if self.values[k].is_none() {
                continue;
            }
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(n - 1);
            let present: Vec<f64> = (lo..=hi).filter_map(|i| self.values[i]).collect();
            values[k] = Some(present.iter().sum::<f64>() / present.len() as f64);
        }
        Self {
            grid: self.grid,
            values,
            counts: self.counts.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    TooManyMinima,
    WeakProminence,
    InsufficientSupport,
}

/// Stage-1 outcome for one camera pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub video_i: String,
    pub video_j: String,
    pub landscape: EnergyLandscape,
    /// Competing local minima (cutting nearly as deep below the landscape
    /// plateau as the best) as (offset, value), sorted ascending by value.
    pub local_minima: Vec<(f64, f64)>,
    /// Global minimum offset; `None` when no cell had enough support.
    pub best_offset: Option<f64>,
    pub reliable: bool,
    pub rejection_reason: Option<RejectionReason>,
}

#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    pub kind: EnergyKind,
    /// Minimum contributing samples for a landscape cell to be present.
    pub min_support: usize,
    /// Keep a pair only if best/second-best minimum value is at most this.
    pub theta_prominence: f64,
    /// Reject pairs with more local minima than this.
    pub max_minima: usize,
    /// Moving-average window applied before minima detection; 1 = off.
    pub smoothing_window: usize,
    /// Invert the prominence rule (keep if ratio above the threshold),
    /// matching the literal discard wording.
    pub invert_prominence: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            kind: EnergyKind::Sampson,
            min_support: 30,
            theta_prominence: 0.1,
            max_minima: 2,
            smoothing_window: 1,
            invert_prominence: false,
        }
    }
}

/// One correspondence oriented for a concrete (video_i, video_j) search call.
struct OrientedPair<'a> {
    tracklet_i: &'a Tracklet,
    tracklet_j: &'a Tracklet,
    weight: f64,
}

fn camera_is_static(cam: &CameraTrack) -> bool {
    let p0 = &cam.poses_per_frame[0];
    let k0 = &cam.intrinsics_per_frame[0];
    cam.poses_per_frame.iter().all(|p| p == p0)
        && cam.intrinsics_per_frame.iter().all(|k| k == k0)
}

/// Energy sum and sample count at one offset, accumulated pair-by-pair in
/// correspondence order so the total matches a sequential sum of
/// [`crate::energy::pair_energy`] bit for bit. The fundamental matrix is
/// cached per frame-index pair, which collapses to a single entry for
/// static rigs.
fn landscape_cell(
    pairs: &[OrientedPair<'_>],
    cam_i: &CameraTrack,
    cam_j: &CameraTrack,
    delta: f64,
    kind: EnergyKind,
) -> (f64, usize) {
    let static_pair = camera_is_static(cam_i) && camera_is_static(cam_j);
    let mut cache: HashMap<(usize, usize), Option<FundamentalMatrix>> = HashMap::new();
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in pairs {
        for &t in &cam_j.frame_times {
            let Some(xj) = p.tracklet_j.sample_at(cam_j, t) else {
                continue;
            };
            let Some(xi) = p.tracklet_i.sample_at(cam_i, t + delta) else {
                continue;
            };
            let (Ok(fi), Ok(fj)) = (cam_i.nearest_frame(t + delta), cam_j.nearest_frame(t)) else {
                continue;
            };
            let key = if static_pair { (0, 0) } else { (fi, fj) };
            let f = cache.entry(key).or_insert_with(|| {
                fundamental_between(
                    &cam_i.intrinsics_per_frame[fi],
                    &cam_i.poses_per_frame[fi],
                    &cam_j.intrinsics_per_frame[fj],
                    &cam_j.poses_per_frame[fj],
                )
                .ok()
            });
            let Some(f) = f else { continue };
            let Ok(value) = kind.evaluate(&xi, &xj, f) else {
                continue;
            };
            sum += p.weight * value;
            count += 1;
        }
    }
    (sum, count)
}

fn oriented_group<'a>(
    scene: &'a Scene,
    video_i: &str,
    video_j: &str,
) -> Result<Vec<OrientedPair<'a>>, PairwiseError> {
    let canonical = video_i < video_j;
    let key = if canonical {
        (video_i.to_string(), video_j.to_string())
    } else {
        (video_j.to_string(), video_i.to_string())
    };
    let group = scene
        .correspondences
        .groups
        .get(&key)
        .ok_or_else(|| PairwiseError::NoCorrespondences {
            video_i: video_i.to_string(),
            video_j: video_j.to_string(),
        })?;
    group
        .iter()
        .map(|p| {
            let (ti, tj) = if canonical {
                (&p.tracklet_i, &p.tracklet_j)
            } else {
                (&p.tracklet_j, &p.tracklet_i)
            };
            Ok(OrientedPair {
                tracklet_i: scene
                    .tracklets
                    .get(ti)
                    .ok_or_else(|| PairwiseError::UnknownVideo(ti.clone()))?,
                tracklet_j: scene
                    .tracklets
                    .get(tj)
                    .ok_or_else(|| PairwiseError::UnknownVideo(tj.clone()))?,
                weight: p.weight,
            })
        })
        .collect()
}

/// Exhaustive Stage-1 search for one camera pair over `grid`.
///
/// The landscape cell at offset `delta` is the mean energy over all
/// correspondences of the pair; cells with fewer than `min_support`
/// contributing samples are absent. The best offset is the argmin of present
/// values, ties broken toward smaller `|delta|` and then smaller `delta`.
pub fn search_pair(
    scene: &Scene,
    video_i: &str,
    video_j: &str,
    grid: &OffsetGrid,
    opts: &SearchOptions,
) -> Result<PairwiseResult, PairwiseError> {
    if grid.len() == 0 {
        return Err(PairwiseError::EmptyGrid);
    }
    let cam_i = scene
        .cameras
        .get(video_i)
        .ok_or_else(|| PairwiseError::UnknownVideo(video_i.to_string()))?;
    let cam_j = scene
        .cameras
        .get(video_j)
        .ok_or_else(|| PairwiseError::UnknownVideo(video_j.to_string()))?;
    let pairs = oriented_group(scene, video_i, video_j)?;

    let cells: Vec<(f64, usize)> = (0..grid.len())
        .into_par_iter()
        .map(|k| landscape_cell(&pairs, cam_i, cam_j, grid.offset(k), opts.kind))
        .collect();

    let mut values = Vec::with_capacity(cells.len());
    let mut counts = Vec::with_capacity(cells.len());
    for (sum, count) in cells {
        counts.push(count);
        values.push((count >= opts.min_support.max(1)).then(|| sum / count as f64));
    }
    let landscape = EnergyLandscape {
        grid: *grid,
        values,
        counts,
    };

    if landscape.values.iter().all(Option::is_none) {
        return Err(PairwiseError::NoOverlap {
            video_i: video_i.to_string(),
            video_j: video_j.to_string(),
        });
    }

    let analysis = landscape.smoothed(opts.smoothing_window);
    let mut present: Vec<f64> = analysis.values.iter().filter_map(|v| *v).collect();
    present.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let plateau = present[present.len() / 2];
    let local_minima =
        competing_minima(&find_local_minima(&analysis), plateau, opts.theta_prominence);
    let (reliable, rejection_reason) = assess_reliability_with(
        &local_minima,
        opts.theta_prominence,
        opts.max_minima,
        opts.invert_prominence,
    );

    // argmin over present cells; ties toward smaller |delta|, then smaller delta
    let mut best: Option<(f64, f64)> = None;
    for (k, v) in analysis.values.iter().enumerate() {
        let Some(v) = *v else { continue };
        let off = analysis.grid.offset(k);
        best = Some(match best {
            None => (off, v),
            Some((boff, bv)) => {
                if v < bv
                    || (v == bv
                        && (off.abs() < boff.abs() || (off.abs() == boff.abs() && off < boff)))
                {
                    (off, v)
                } else {
                    (boff, bv)
                }
            }
        });
    }

    Ok(PairwiseResult {
        video_i: video_i.to_string(),
        video_j: video_j.to_string(),
        landscape,
        local_minima,
        best_offset: best.map(|(off, _)| off),
        reliable,
        rejection_reason,
    })
}

/// Strict local minima of the present landscape cells, as (offset, value)
/// sorted ascending by value. A present cell is a local minimum iff it is
/// strictly below both nearest present neighbors; endpoints of the present
/// sequence compare against their single neighbor.
pub fn find_local_minima(ls: &EnergyLandscape) -> Vec<(f64, f64)> {
    let present: Vec<(usize, f64)> = ls
        .values
        .iter()
        .enumerate()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect();
    let mut minima = Vec::new();
    for (p, &(k, v)) in present.iter().enumerate() {
        let below_prev = p == 0 || v < present[p - 1].1;
        let below_next = p + 1 == present.len() || v < present[p + 1].1;
        if below_prev && below_next {
            minima.push((ls.grid.offset(k), v));
        }
    }
    minima.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap()
            .then(a.0.abs().partial_cmp(&b.0.abs()).unwrap())
            .then(a.0.partial_cmp(&b.0).unwrap())
    });
    minima
}

/// Minima that rival the best one: depth below the landscape plateau at
/// least `1 - theta` of the best minimum's depth. Two effects make raw
/// values unusable for this: sampling noise dents the high-energy plateau
/// with shallow strict minima, and pose error lifts the whole landscape so
/// every value sits within a small factor of the best even when the true
/// alignment is an unambiguous dip. A rival alignment hypothesis cuts nearly
/// as far below the plateau as the best; a dent barely scratches it,
/// whatever the floor height. `plateau` should be a robust high reference,
/// e.g. the median landscape value.
pub fn competing_minima(minima: &[(f64, f64)], plateau: f64, theta: f64) -> Vec<(f64, f64)> {
    assert!(theta > 0.0 && theta <= 1.0);
    let Some(&(_, best)) = minima.first() else {
        return Vec::new();
    };
    let need = (1.0 - theta) * (plateau - best).max(0.0);
    minima
        .iter()
        .copied()
        .filter(|&(_, v)| plateau - v >= need)
        .collect()
}

/// Reliability rule: too many local minima, or a second-best minimum nearly
/// as deep as the best, marks the pair spurious.
pub fn assess_reliability(
    minima: &[(f64, f64)],
    theta_prominence: f64,
    max_minima: usize,
) -> (bool, Option<RejectionReason>) {
    assess_reliability_with(minima, theta_prominence, max_minima, false)
}

/// As [`assess_reliability`]; `invert` flips the prominence comparison to the
/// literal discard-if-below reading.
pub fn assess_reliability_with(
    minima: &[(f64, f64)],
    theta_prominence: f64,
    max_minima: usize,
    invert: bool,
) -> (bool, Option<RejectionReason>) {
    assert!(theta_prominence > 0.0 && theta_prominence <= 1.0);
    if minima.is_empty() {
        return (false, Some(RejectionReason::InsufficientSupport));
    }
    if minima.len() > max_minima {
        return (false, Some(RejectionReason::TooManyMinima));
    }
    if minima.len() >= 2 {
        let best = minima[0].1;
        let second = minima[1].1;
        let ratio = if second > 0.0 { best / second } else { 1.0 };
        let keep = if invert {
            ratio > theta_prominence
        } else {
            ratio <= theta_prominence
        };
        if !keep {
            return (false, Some(RejectionReason::WeakProminence));
        }
    }
    (true, None)
}

/// Stage 1 over every unordered camera pair with at least one correspondence.
///
/// Per-pair grids follow `grid_override` when given, otherwise
/// [`OffsetGrid::default_for`]. Results come back in canonical pair order and
/// are bit-identical regardless of worker count.
pub fn search_all(
    scene: &Scene,
    grid_override: Option<OffsetGrid>,
    opts: &SearchOptions,
) -> Vec<PairwiseResult> {
    let keys: Vec<(String, String)> = scene.correspondences.groups.keys().cloned().collect();
    keys.par_iter()
        .map(|(vi, vj)| {
            let grid = grid_override.unwrap_or_else(|| {
                OffsetGrid::default_for(&scene.cameras[vi], &scene.cameras[vj])
            });
            match search_pair(scene, vi, vj, &grid, opts) {
                Ok(r) => r,
                Err(_) => PairwiseResult {
                    video_i: vi.clone(),
                    video_j: vj.clone(),
                    landscape: EnergyLandscape {
                        grid,
                        values: vec![None; grid.len()],
                        counts: vec![0; grid.len()],
                    },
                    local_minima: Vec::new(),
                    best_offset: None,
                    reliable: false,
                    rejection_reason: Some(RejectionReason::InsufficientSupport),
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn landscape(values: Vec<Option<f64>>) -> EnergyLandscape {
        let n = values.len();
        EnergyLandscape {
            grid: OffsetGrid::new(0.0, (n - 1) as f64, 1.0),
            counts: vec![100; n],
            values,
        }
    }

    #[test]
    fn minima_of_discrete_parabola() {
        let ls = landscape((0..9).map(|k| Some(((k as f64) - 4.0).powi(2))).collect());
        let m = find_local_minima(&ls);
        assert_eq!(m, vec![(4.0, 0.0)]);
    }

    #[test]
    fn minima_by_definition() {
        let ls = landscape(vec![5.0, 1.0, 5.0, 0.5, 5.0].into_iter().map(Some).collect());
        let m = find_local_minima(&ls);
        assert_eq!(m, vec![(3.0, 0.5), (1.0, 1.0)]);
    }

    #[test]
    fn constant_landscape_has_no_strict_minima() {
        let ls = landscape(vec![Some(2.0); 7]);
        assert!(find_local_minima(&ls).is_empty());
    }

    #[test]
    fn minima_skip_absent_cells() {
        // absent cell between 5 and 0.5: neighbors are the nearest *present* cells
        let ls = landscape(vec![Some(5.0), None, Some(0.5), Some(5.0)]);
        let m = find_local_minima(&ls);
        assert_eq!(m, vec![(2.0, 0.5)]);
    }

    #[test]
    fn competing_minima_drop_shallow_plateau_dents() {
        // a deep basin plus two noise dents just below the plateau
        let m = [(0.0, 5.0), (-3.0, 500.0), (2.0, 540.0)];
        assert_eq!(competing_minima(&m, 545.0, 0.1), vec![(0.0, 5.0)]);
        // equal-depth rival survives the filter
        let m = [(0.0, 5.0), (1.0, 5.5), (2.0, 540.0)];
        assert_eq!(
            competing_minima(&m, 545.0, 0.1),
            vec![(0.0, 5.0), (1.0, 5.5)]
        );
        assert!(competing_minima(&[], 545.0, 0.1).is_empty());
        // boundary: depth exactly (1 - theta) of the best is a competitor
        let m = [(0.0, 0.0), (1.0, 10.0)];
        assert_eq!(competing_minima(&m, 100.0, 0.1).len(), 2);
        assert_eq!(competing_minima(&m, 100.0, 0.09).len(), 1);
    }

    #[test]
    fn competing_minima_survive_lifted_floor() {
        // pose error lifts the whole landscape: the dip is unambiguous even
        // though every value is within 10% of the best
        let m = [(0.0, 5339.0), (4.3, 5832.0)];
        assert_eq!(competing_minima(&m, 6000.0, 0.1), vec![(0.0, 5339.0)]);
    }

    #[test]
    fn reliability_prominent_minimum_kept() {
        let (ok, why) = assess_reliability(&[(0.0, 0.01), (3.0, 0.5)], 0.1, 2);
        assert!(ok, "{why:?}");
    }

    #[test]
    fn reliability_weak_prominence_rejected() {
        let (ok, why) = assess_reliability(&[(0.0, 0.4), (3.0, 0.5)], 0.1, 2);
        assert!(!ok);
        assert_eq!(why, Some(RejectionReason::WeakProminence));
    }

    #[test]
    fn reliability_too_many_minima_rejected() {
        let m = [(0.0, 0.1), (1.0, 0.2), (2.0, 0.3)];
        let (ok, why) = assess_reliability(&m, 0.1, 2);
        assert!(!ok);
        assert_eq!(why, Some(RejectionReason::TooManyMinima));
    }

    #[test]
    fn reliability_single_minimum_kept_and_empty_rejected() {
        assert!(assess_reliability(&[(0.0, 0.5)], 0.1, 2).0);
        let (ok, why) = assess_reliability(&[], 0.1, 2);
        assert!(!ok);
        assert_eq!(why, Some(RejectionReason::InsufficientSupport));
    }

    #[test]
    fn smoothing_window_identity_and_average() {
        let ls = landscape(vec![Some(3.0), Some(0.0), Some(3.0)]);
        assert_eq!(ls.smoothed(1), ls);
        let s = ls.smoothed(3);
        assert_eq!(s.values[1], Some(2.0));
        assert_eq!(s.values[0], Some(1.5));
    }

    #[test]
    fn grid_len_and_points() {
        let g = OffsetGrid::new(-2.0, 2.0, 0.5);
        assert_eq!(g.len(), 9);
        assert_eq!(g.offset(0), -2.0);
        assert_eq!(g.offset(8), 2.0);
        assert_eq!(g.mirrored(), OffsetGrid::new(-2.0, 2.0, 0.5));
        let g2 = OffsetGrid::new(-1.0, 2.0, 0.5);
        assert_eq!(g2.mirrored(), OffsetGrid::new(-2.0, 1.0, 0.5));
    }
}
