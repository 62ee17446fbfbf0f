//! Stage 2: recover per-video offsets from reliable pairwise measurements by
//! Huber-robust least squares over the pair graph, solved with IRLS.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyncError {
    #[error("pinned normal equations singular for component {component}")]
    SingularSystem { component: usize },
}

/// One measured relative offset `s_j - s_i` between two videos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetMeasurement {
    pub video_i: String,
    pub video_j: String,
    /// Measured `s_j - s_i`, seconds.
    pub delta: f64,
    pub weight: f64,
}

impl OffsetMeasurement {
    pub fn new(video_i: impl Into<String>, video_j: impl Into<String>, delta: f64) -> Self {
        Self {
            video_i: video_i.into(),
            video_j: video_j.into(),
            delta,
            weight: 1.0,
        }
    }
}

/// Per-video synchronization offsets with gauge references and the solver log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalOffsets {
    /// video id -> offset seconds; the reference of each component is 0.
    pub offsets: BTreeMap<String, f64>,
    pub component_id: BTreeMap<String, usize>,
    /// Per-component reference video (smallest id).
    pub references: Vec<String>,
    pub iterations: usize,
    /// Per-component Huber objective after each IRLS iteration.
    pub objective_log: Vec<Vec<f64>>,
    /// Sum of each component's converged objective.
    pub final_objective: f64,
}

impl GlobalOffsets {
    pub fn offset_of(&self, video: &str) -> Option<f64> {
        self.offsets.get(video).copied()
    }
}

/// Huber loss: quadratic inside `|r| <= delta`, linear outside.
pub fn huber(r: f64, delta: f64) -> f64 {
    assert!(delta > 0.0);
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// IRLS weight for the Huber loss: 1 inside the knee, `delta / |r|` outside.
pub fn huber_weight(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        1.0
    } else {
        delta / a
    }
}

/// Undirected connectivity of videos linked by measurements. Videos absent
/// from every measurement form singleton components. Components are numbered
/// in order of their smallest video id.
pub fn connected_components(
    videos: &[String],
    measurements: &[OffsetMeasurement],
) -> BTreeMap<String, usize> {
    let index: BTreeMap<&str, usize> = videos.iter().map(|v| v.as_str()).zip(0..).collect();
    let mut parent: Vec<usize> = (0..videos.len()).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for m in measurements {
        let (Some(&a), Some(&b)) = (index.get(m.video_i.as_str()), index.get(m.video_j.as_str()))
        else {
            continue;
        };
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    // number components by smallest member id; videos is sorted per BTreeMap use
    let mut root_to_component = BTreeMap::new();
    let mut out = BTreeMap::new();
    for v in videos {
        let r = find(&mut parent, index[v.as_str()]);
        let next = root_to_component.len();
        let c = *root_to_component.entry(r).or_insert(next);
        out.insert(v.clone(), c);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    /// All offsets start at zero.
    Zero,
    /// Chain measurements along a BFS spanning tree from the reference.
    SpanningTree,
}

#[derive(Debug, Clone, Copy)]
pub struct IrlsOptions {
    pub huber_delta: f64,
    /// Stop when the max offset change falls below this, seconds.
    pub tol: f64,
    pub max_iter: usize,
    pub init: Initialization,
}

impl IrlsOptions {
    /// Defaults with the Huber knee at 1.5 frame periods of the slowest camera.
    pub fn for_slowest_fps(slowest_fps: f64) -> Self {
        Self {
            huber_delta: 1.5 / slowest_fps,
            tol: 1e-6,
            max_iter: 100,
            init: Initialization::Zero,
        }
    }
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self::for_slowest_fps(30.0)
    }
}

/// Solve the robust offset problem per connected component.
///
/// Each component pins its reference (smallest video id) to zero and iterates
/// weighted graph-Laplacian solves with Huber reweighting until the offsets
/// move less than `tol` or `max_iter` is hit.
pub fn solve_irls(
    videos: &[String],
    measurements: &[OffsetMeasurement],
    opts: &IrlsOptions,
) -> Result<GlobalOffsets, SyncError> {
    assert!(opts.huber_delta > 0.0);
    let mut videos: Vec<String> = videos.to_vec();
    videos.sort();
    videos.dedup();
    let component_id = connected_components(&videos, measurements);
    let n_components = component_id.values().copied().max().map_or(0, |m| m + 1);

    let mut offsets: BTreeMap<String, f64> = videos.iter().map(|v| (v.clone(), 0.0)).collect();
    let mut references = vec![String::new(); n_components];
    for v in &videos {
        let c = component_id[v];
        if references[c].is_empty() {
            references[c] = v.clone(); // first in sorted order = smallest id
        }
    }

    let mut iterations = 0;
    let mut objective_log = vec![Vec::new(); n_components];
    for c in 0..n_components {
        let members: Vec<&String> = videos.iter().filter(|v| component_id[*v] == c).collect();
        let edges: Vec<&OffsetMeasurement> = measurements
            .iter()
            .filter(|m| {
                component_id.get(&m.video_i) == Some(&c)
                    && component_id.get(&m.video_j) == Some(&c)
            })
            .collect();
        if members.len() == 1 || edges.is_empty() {
            continue;
        }
        // unknowns: members except the reference
        let unknown: BTreeMap<&str, usize> = members
            .iter()
            .filter(|v| ***v != references[c])
            .map(|v| v.as_str())
            .zip(0..)
            .collect();
        let nu = unknown.len();
        let mut s: DVector<f64> = DVector::zeros(nu);
        if opts.init == Initialization::SpanningTree {
            spanning_tree_init(&references[c], &unknown, &edges, &mut s);
        }

        let residual = |s: &DVector<f64>, m: &OffsetMeasurement| -> f64 {
            let sj = unknown.get(m.video_j.as_str()).map_or(0.0, |&k| s[k]);
            let si = unknown.get(m.video_i.as_str()).map_or(0.0, |&k| s[k]);
            sj - si - m.delta
        };

        let mut comp_iters = 0;
        loop {
            comp_iters += 1;
            // reweighted normal equations of the pinned Laplacian system
            let mut a = DMatrix::<f64>::zeros(nu, nu);
            let mut b = DVector::<f64>::zeros(nu);
            for m in &edges {
                let r = residual(&s, m);
                let w = m.weight * huber_weight(r, opts.huber_delta);
                let ki = unknown.get(m.video_i.as_str()).copied();
                let kj = unknown.get(m.video_j.as_str()).copied();
                if let Some(kj) = kj {
                    a[(kj, kj)] += w;
                    b[kj] += w * m.delta;
                }
                if let Some(ki) = ki {
                    a[(ki, ki)] += w;
                    b[ki] -= w * m.delta;
                }
                if let (Some(ki), Some(kj)) = (ki, kj) {
                    a[(ki, kj)] -= w;
                    a[(kj, ki)] -= w;
                }
            }
            let chol = a
                .clone()
                .cholesky()
                .ok_or(SyncError::SingularSystem { component: c })?;
            let s_new = chol.solve(&b);
            let max_change = (&s_new - &s).amax();
            s = s_new;
            let objective: f64 = edges
                .iter()
                .map(|m| m.weight * huber(residual(&s, m), opts.huber_delta))
                .sum();
            objective_log[c].push(objective);
            if max_change < opts.tol || comp_iters >= opts.max_iter {
                break;
            }
        }
        iterations = iterations.max(comp_iters);
        for (v, k) in &unknown {
            offsets.insert((*v).to_string(), s[*k]);
        }
    }

    let final_objective = objective_log
        .iter()
        .filter_map(|log| log.last())
        .sum::<f64>();
    Ok(GlobalOffsets {
        offsets,
        component_id,
        references,
        iterations,
        objective_log,
        final_objective,
    })
}

fn spanning_tree_init(
    reference: &str,
    unknown: &BTreeMap<&str, usize>,
    edges: &[&OffsetMeasurement],
    s: &mut DVector<f64>,
) {
    use std::collections::VecDeque;
    let mut value: BTreeMap<&str, f64> = BTreeMap::from([(reference, 0.0)]);
    let mut queue = VecDeque::from([reference]);
    while let Some(v) = queue.pop_front() {
        for m in edges {
            let (from, to, delta) = if m.video_i == v {
                (m.video_i.as_str(), m.video_j.as_str(), m.delta)
            } else if m.video_j == v {
                (m.video_j.as_str(), m.video_i.as_str(), -m.delta)
            } else {
                continue;
            };
            if !value.contains_key(to) {
                let base = value[from];
                value.insert(to, base + delta);
                queue.push_back(to);
            }
        }
    }
    for (v, &k) in unknown {
        s[k] = value.get(v).copied().unwrap_or(0.0);
    }
}
