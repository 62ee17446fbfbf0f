//! Bit-exact JSON file formats for scene bundles and results, with strict
//! validation on load.
//!
//! The bundle schema is the integration point for real upstream outputs
//! (pose estimators, trackers, cross-view matchers): export cameras,
//! tracklets and correspondences in this shape and the pipeline consumes
//! them unchanged.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraTrack, Intrinsics, Pose};
use crate::global_sync::GlobalOffsets;
use crate::pairwise::{EnergyLandscape, PairwiseResult, RejectionReason};
use crate::synth::{GroundTruth, SceneBundle};
use crate::tracklets::{CorrespondenceSet, Scene, Tracklet, TrackletPair, TrackletSample};

pub const BUNDLE_VERSION: &str = "episync-bundle/1";
pub const RESULT_VERSION: &str = "episync-result/1";

/// Rotation orthonormality / determinant tolerance accepted on load.
pub const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

// ---------------------------------------------------------------------------
// wire schema
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    t: f64,
    /// Row-major 3x3 calibration matrix.
    #[serde(rename = "K")]
    k: [f64; 9],
    /// Row-major 3x3 world-to-camera rotation.
    #[serde(rename = "R")]
    r: [f64; 9],
    t_vec: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    id: String,
    fps: f64,
    frames: Vec<FrameRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    frame: usize,
    u: f64,
    v: f64,
    visible: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackletRecord {
    id: String,
    camera_id: String,
    instance_id: u32,
    samples: Vec<SampleRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrespondenceRecord {
    video_i: String,
    video_j: String,
    tracklet_i: String,
    tracklet_j: String,
    weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keyframes: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleFile {
    version: String,
    cameras: Vec<CameraRecord>,
    tracklets: Vec<TrackletRecord>,
    correspondences: Vec<CorrespondenceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<GroundTruthRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub offsets: BTreeMap<String, f64>,
    #[serde(default)]
    pub contaminants: Vec<(String, String, String, String)>,
}

/// Per-pair entry of a result file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub video_i: String,
    pub video_j: String,
    pub best_offset_s: Option<f64>,
    pub reliable: bool,
    pub rejection_reason: Option<RejectionReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landscape_path: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub offset_s: f64,
    pub component: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverRecord {
    pub references: Vec<String>,
    pub iterations: usize,
    pub objective_log: Vec<Vec<f64>>,
    pub final_objective: f64,
}

/// Stage-1 and Stage-2 results; `videos`/`solver` are absent until the
/// global solve has run.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultFile {
    pub version: String,
    pub energy: String,
    pub pairs: Vec<PairRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub videos: Option<Vec<VideoRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverRecord>,
}

impl ResultFile {
    pub fn new(energy: String, pairs: Vec<PairRecord>) -> Self {
        Self {
            version: RESULT_VERSION.to_string(),
            energy,
            pairs,
            videos: None,
            solver: None,
        }
    }

    pub fn attach_solution(&mut self, sol: &GlobalOffsets) {
        self.videos = Some(
            sol.offsets
                .iter()
                .map(|(id, &offset_s)| VideoRecord {
                    id: id.clone(),
                    offset_s,
                    component: sol.component_id[id],
                })
                .collect(),
        );
        self.solver = Some(SolverRecord {
            references: sol.references.clone(),
            iterations: sol.iterations,
            objective_log: sol.objective_log.clone(),
            final_objective: sol.final_objective,
        });
    }
}

pub fn pair_record(r: &PairwiseResult, landscape_path: Option<String>) -> PairRecord {
    PairRecord {
        video_i: r.video_i.clone(),
        video_j: r.video_j.clone(),
        best_offset_s: r.best_offset,
        reliable: r.reliable,
        rejection_reason: r.rejection_reason,
        landscape_path,
    }
}

// ---------------------------------------------------------------------------
// save / load
// ---------------------------------------------------------------------------

fn finite(x: f64, what: &str) -> Result<(), IoError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(IoError::Invariant(format!("{what} is not finite")))
    }
}

fn scene_to_file(scene: &Scene, truth: Option<&GroundTruth>) -> BundleFile {
    let cameras = scene
        .cameras
        .values()
        .map(|c| CameraRecord {
            id: c.camera_id.clone(),
            fps: c.fps,
            frames: (0..c.len())
                .map(|k| {
                    let kk = c.intrinsics_per_frame[k].matrix();
                    let r = &c.poses_per_frame[k].rotation;
                    let t = &c.poses_per_frame[k].translation;
                    FrameRecord {
                        t: c.frame_times[k],
                        k: [
                            kk[(0, 0)],
                            kk[(0, 1)],
                            kk[(0, 2)],
                            kk[(1, 0)],
                            kk[(1, 1)],
                            kk[(1, 2)],
                            kk[(2, 0)],
                            kk[(2, 1)],
                            kk[(2, 2)],
                        ],
                        r: [
                            r[(0, 0)],
                            r[(0, 1)],
                            r[(0, 2)],
                            r[(1, 0)],
                            r[(1, 1)],
                            r[(1, 2)],
                            r[(2, 0)],
                            r[(2, 1)],
                            r[(2, 2)],
                        ],
                        t_vec: [t.x, t.y, t.z],
                    }
                })
                .collect(),
        })
        .collect();
    let tracklets = scene
        .tracklets
        .values()
        .map(|tr| TrackletRecord {
            id: tr.tracklet_id.clone(),
            camera_id: tr.camera_id.clone(),
            instance_id: tr.instance_id,
            samples: tr
                .samples
                .iter()
                .map(|s| SampleRecord {
                    frame: s.frame,
                    u: s.u,
                    v: s.v,
                    visible: s.visible,
                })
                .collect(),
        })
        .collect();
    let correspondences = scene
        .correspondences
        .iter_pairs()
        .map(|p| CorrespondenceRecord {
            video_i: p.video_i.clone(),
            video_j: p.video_j.clone(),
            tracklet_i: p.tracklet_i.clone(),
            tracklet_j: p.tracklet_j.clone(),
            weight: p.weight,
            keyframes: p.keyframes.clone(),
        })
        .collect();
    BundleFile {
        version: BUNDLE_VERSION.to_string(),
        cameras,
        tracklets,
        correspondences,
        ground_truth: truth.map(|t| GroundTruthRecord {
            offsets: t.offsets.clone(),
            contaminants: t.contaminants.clone(),
        }),
    }
}

pub fn save_scene(path: &Path, scene: &Scene, truth: Option<&GroundTruth>) -> Result<(), IoError> {
    let file = scene_to_file(scene, truth);
    write_json(path, &file)
}

pub fn save_bundle(path: &Path, bundle: &SceneBundle) -> Result<(), IoError> {
    save_scene(path, &bundle.scene, Some(&bundle.truth))
}

/// Write the ground truth alone, next to a bundle.
pub fn save_truth_sidecar(path: &Path, truth: &GroundTruth) -> Result<(), IoError> {
    let record = GroundTruthRecord {
        offsets: truth.offsets.clone(),
        contaminants: truth.contaminants.clone(),
    };
    write_json(path, &record)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut buf = serde_json::to_vec_pretty(value).map_err(|e| IoError::Parse(e.to_string()))?;
    buf.push(b'\n');
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path)?;
    // two phases so malformed JSON and schema mismatches are distinguishable
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| IoError::Parse(e.to_string()))?;
    serde_json::from_value(value).map_err(|e| IoError::Schema {
        path: field_path_of(&e.to_string()),
        message: e.to_string(),
    })
}

fn field_path_of(message: &str) -> String {
    // serde_json messages name the offending field; surface it when present
    message
        .split('`')
        .nth(1)
        .unwrap_or("<document>")
        .to_string()
}

/// Load and strictly validate a scene bundle. Every type invariant violation
/// is an error, never a warning.
pub fn load_scene(path: &Path) -> Result<(Scene, Option<GroundTruth>), IoError> {
    let file: BundleFile = read_json(path)?;
    if file.version != BUNDLE_VERSION {
        return Err(IoError::Schema {
            path: "version".into(),
            message: format!("unsupported version {:?}", file.version),
        });
    }

    let mut scene = Scene::default();
    for cam in &file.cameras {
        if scene.cameras.contains_key(&cam.id) {
            return Err(IoError::Integrity(format!("duplicate camera id {:?}", cam.id)));
        }
        if cam.fps <= 0.0 {
            return Err(IoError::Invariant(format!("camera {:?}: fps must be positive", cam.id)));
        }
        if cam.frames.is_empty() {
            return Err(IoError::Invariant(format!("camera {:?}: no frames", cam.id)));
        }
        let mut frame_times = Vec::with_capacity(cam.frames.len());
        let mut intrinsics_per_frame = Vec::with_capacity(cam.frames.len());
        let mut poses_per_frame = Vec::with_capacity(cam.frames.len());
        for (idx, fr) in cam.frames.iter().enumerate() {
            finite(fr.t, &format!("camera {:?} frame {idx} time", cam.id))?;
            for v in fr.k.iter().chain(fr.r.iter()).chain(fr.t_vec.iter()) {
                finite(*v, &format!("camera {:?} frame {idx}", cam.id))?;
            }
            if let Some(&prev) = frame_times.last() {
                if fr.t <= prev {
                    return Err(IoError::Invariant(format!(
                        "camera {:?}: frame times not strictly increasing at index {idx}",
                        cam.id
                    )));
                }
                let spacing = fr.t - prev;
                let nominal = 1.0 / cam.fps;
                if (spacing - nominal).abs() > 0.1 * nominal {
                    return Err(IoError::Invariant(format!(
                        "camera {:?}: frame spacing {spacing} deviates more than 10% from 1/fps",
                        cam.id
                    )));
                }
            }
            if fr.k[3] != 0.0 || fr.k[6] != 0.0 || fr.k[7] != 0.0 || fr.k[8] != 1.0 {
                return Err(IoError::Invariant(format!(
                    "camera {:?} frame {idx}: K is not upper-triangular with unit bottom row",
                    cam.id
                )));
            }
            if fr.k[0] <= 0.0 || fr.k[4] <= 0.0 {
                return Err(IoError::Invariant(format!(
                    "camera {:?} frame {idx}: focal lengths must be positive",
                    cam.id
                )));
            }
            let pose = Pose::new(
                Matrix3::new(
                    fr.r[0], fr.r[1], fr.r[2], fr.r[3], fr.r[4], fr.r[5], fr.r[6], fr.r[7],
                    fr.r[8],
                ),
                Vector3::new(fr.t_vec[0], fr.t_vec[1], fr.t_vec[2]),
            );
            if !pose.is_valid_rotation(ROTATION_TOL) {
                return Err(IoError::Invariant(format!(
                    "camera {:?} frame {idx}: R is not a proper rotation (orthonormal, det +1)",
                    cam.id
                )));
            }
            frame_times.push(fr.t);
            intrinsics_per_frame.push(Intrinsics {
                fx: fr.k[0],
                fy: fr.k[4],
                cx: fr.k[2],
                cy: fr.k[5],
                skew: fr.k[1],
            });
            poses_per_frame.push(pose);
        }
        scene.cameras.insert(
            cam.id.clone(),
            CameraTrack {
                camera_id: cam.id.clone(),
                fps: cam.fps,
                frame_times,
                intrinsics_per_frame,
                poses_per_frame,
            },
        );
    }

    for tr in &file.tracklets {
        if scene.tracklets.contains_key(&tr.id) {
            return Err(IoError::Integrity(format!("duplicate tracklet id {:?}", tr.id)));
        }
        let cam = scene
            .cameras
            .get(&tr.camera_id)
            .ok_or_else(|| IoError::Integrity(format!(
                "tracklet {:?} references missing camera {:?}",
                tr.id, tr.camera_id
            )))?;
        let mut last_frame: Option<usize> = None;
        let mut visible = 0usize;
        for s in &tr.samples {
            if s.frame >= cam.len() {
                return Err(IoError::Integrity(format!(
                    "tracklet {:?}: sample frame {} out of range for camera {:?}",
                    tr.id, s.frame, tr.camera_id
                )));
            }
            if let Some(prev) = last_frame {
                if s.frame <= prev {
                    return Err(IoError::Invariant(format!(
                        "tracklet {:?}: sample frames not strictly increasing",
                        tr.id
                    )));
                }
            }
            finite(s.u, &format!("tracklet {:?} u", tr.id))?;
            finite(s.v, &format!("tracklet {:?} v", tr.id))?;
            last_frame = Some(s.frame);
            visible += s.visible as usize;
        }
        if visible < 2 {
            return Err(IoError::Invariant(format!(
                "tracklet {:?}: needs at least 2 visible samples, has {visible}",
                tr.id
            )));
        }
        scene.tracklets.insert(
            tr.id.clone(),
            Tracklet {
                tracklet_id: tr.id.clone(),
                camera_id: tr.camera_id.clone(),
                instance_id: tr.instance_id,
                samples: tr
                    .samples
                    .iter()
                    .map(|s| TrackletSample {
                        frame: s.frame,
                        u: s.u,
                        v: s.v,
                        visible: s.visible,
                    })
                    .collect(),
            },
        );
    }

    let mut correspondences = CorrespondenceSet::new();
    for c in &file.correspondences {
        if c.video_i == c.video_j {
            return Err(IoError::Invariant(
                "correspondence links a video to itself".into(),
            ));
        }
        if c.weight <= 0.0 || !c.weight.is_finite() {
            return Err(IoError::Invariant("correspondence weight must be positive".into()));
        }
        for (tid, vid) in [(&c.tracklet_i, &c.video_i), (&c.tracklet_j, &c.video_j)] {
            let tr = scene.tracklets.get(tid).ok_or_else(|| {
                IoError::Integrity(format!("correspondence references missing tracklet {tid:?}"))
            })?;
            if &tr.camera_id != vid {
                return Err(IoError::Integrity(format!(
                    "tracklet {tid:?} belongs to {:?}, not {vid:?}",
                    tr.camera_id
                )));
            }
        }
        correspondences.insert(TrackletPair {
            video_i: c.video_i.clone(),
            video_j: c.video_j.clone(),
            tracklet_i: c.tracklet_i.clone(),
            tracklet_j: c.tracklet_j.clone(),
            weight: c.weight,
            keyframes: c.keyframes.clone(),
        });
    }
    scene.correspondences = correspondences;

    let truth = file.ground_truth.map(|g| {
        for v in g.offsets.values() {
            debug_assert!(v.is_finite());
        }
        GroundTruth {
            offsets: g.offsets,
            contaminants: g.contaminants,
        }
    });
    Ok((scene, truth))
}

pub fn save_result(path: &Path, result: &ResultFile) -> Result<(), IoError> {
    write_json(path, result)
}

pub fn load_result(path: &Path) -> Result<ResultFile, IoError> {
    let result: ResultFile = read_json(path)?;
    if result.version != RESULT_VERSION {
        return Err(IoError::Schema {
            path: "version".into(),
            message: format!("unsupported version {:?}", result.version),
        });
    }
    if let Some(videos) = &result.videos {
        for v in videos {
            if !v.offset_s.is_finite() {
                return Err(IoError::Invariant(format!("offset of {:?} not finite", v.id)));
            }
        }
    }
    Ok(result)
}

// ---------------------------------------------------------------------------
// landscape export
// ---------------------------------------------------------------------------

/// CSV with columns `offset_s,energy,count`; absent cells leave `energy` empty.
pub fn landscape_csv(ls: &EnergyLandscape) -> String {
    let mut out = String::from("offset_s,energy,count\n");
    for k in 0..ls.values.len() {
        let offset = ls.grid.offset(k);
        match ls.values[k] {
            Some(v) => out.push_str(&format!("{offset},{v},{}\n", ls.counts[k])),
            None => out.push_str(&format!("{offset},,{}\n", ls.counts[k])),
        }
    }
    out
}

/// Minimal standalone SVG line plot of the present landscape cells.
pub fn landscape_svg(ls: &EnergyLandscape, title: &str) -> String {
    const W: f64 = 800.0;
    const H: f64 = 400.0;
    const MARGIN: f64 = 50.0;
    let present: Vec<(f64, f64)> = ls
        .values
        .iter()
        .enumerate()
        .filter_map(|(k, v)| v.map(|v| (ls.grid.offset(k), v)))
        .collect();
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"14\">{title}</text>\n",
        W / 2.0
    ));
    if present.len() >= 2 {
        let (x0, x1) = (present[0].0, present[present.len() - 1].0);
        let ymax = present.iter().map(|p| p.1).fold(f64::MIN, f64::max);
        let ymin = present.iter().map(|p| p.1).fold(f64::MAX, f64::min);
        let yspan = (ymax - ymin).max(1e-30);
        let to_px = |x: f64, y: f64| {
            (
                MARGIN + (x - x0) / (x1 - x0).max(1e-30) * (W - 2.0 * MARGIN),
                H - MARGIN - (y - ymin) / yspan * (H - 2.0 * MARGIN),
            )
        };
        let points: Vec<String> = present
            .iter()
            .map(|&(x, y)| {
                let (px, py) = to_px(x, y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        svg.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"#1f6feb\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        // best offset marker
        if let Some(&(bx, by)) = present
            .iter()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        {
            let (px, py) = to_px(bx, by);
            svg.push_str(&format!(
                "  <circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"4\" fill=\"#d73a49\"/>\n"
            ));
            svg.push_str(&format!(
                "  <text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\" \
                 font-family=\"sans-serif\" font-size=\"12\">{bx:.4} s</text>\n",
                py - 10.0
            ));
        }
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"12\">offset (s)</text>\n",
            W / 2.0,
            H - 12.0
        ));
    } else {
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"12\">no supported offsets</text>\n",
            W / 2.0,
            H / 2.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn export_landscape(
    dir: &Path,
    stem: &str,
    ls: &EnergyLandscape,
    title: &str,
) -> Result<(String, String), IoError> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let svg_path = dir.join(format!("{stem}.svg"));
    let mut f = fs::File::create(&csv_path)?;
    f.write_all(landscape_csv(ls).as_bytes())?;
    let mut f = fs::File::create(&svg_path)?;
    f.write_all(landscape_svg(ls, title).as_bytes())?;
    Ok((
        csv_path.to_string_lossy().into_owned(),
        svg_path.to_string_lossy().into_owned(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairwise::OffsetGrid;
    use crate::synth::{generate, ScenarioSpec};

    #[test]
    fn bundle_round_trip_bit_identical() {
        let bundle = generate(&ScenarioSpec::standard(77)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.json");
        save_bundle(&path, &bundle).unwrap();
        let (scene, truth) = load_scene(&path).unwrap();
        let truth = truth.unwrap();
        assert_eq!(truth.offsets, bundle.truth.offsets);
        assert_eq!(scene.cameras.len(), bundle.scene.cameras.len());
        for (a, b) in bundle.scene.cameras.values().zip(scene.cameras.values()) {
            assert_eq!(a.frame_times, b.frame_times);
            assert_eq!(a.poses_per_frame, b.poses_per_frame);
            assert_eq!(a.intrinsics_per_frame, b.intrinsics_per_frame);
        }
        for (a, b) in bundle.scene.tracklets.values().zip(scene.tracklets.values()) {
            assert_eq!(a.samples, b.samples);
        }
        assert_eq!(
            bundle.scene.correspondences.total_pairs(),
            scene.correspondences.total_pairs()
        );
        // a second save of the loaded scene is byte-identical
        let path2 = dir.path().join("bundle2.json");
        save_scene(&path2, &scene, Some(&truth)).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn reflection_rotation_rejected() {
        let bundle = generate(&ScenarioSpec::standard(8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.json");
        save_bundle(&path, &bundle).unwrap();
        let mut doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        // negate one rotation row: det becomes -1
        let r = doc["cameras"][0]["frames"][0]["R"].as_array_mut().unwrap();
        for k in 0..3 {
            let v = r[k].as_f64().unwrap();
            r[k] = serde_json::json!(-v);
        }
        std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
        assert!(matches!(load_scene(&path), Err(IoError::Invariant(_))));
    }

    #[test]
    fn dangling_tracklet_reference_rejected() {
        let bundle = generate(&ScenarioSpec::standard(8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.json");
        save_bundle(&path, &bundle).unwrap();
        let mut doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        doc["correspondences"][0]["tracklet_i"] = serde_json::json!("no_such_tracklet");
        std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
        assert!(matches!(load_scene(&path), Err(IoError::Integrity(_))));
    }

    #[test]
    fn malformed_json_is_parse_error_and_bad_schema_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_scene(&path), Err(IoError::Parse(_))));
        std::fs::write(&path, "{\"version\": 3}").unwrap();
        assert!(matches!(load_scene(&path), Err(IoError::Schema { .. })));
    }

    #[test]
    fn landscape_csv_format() {
        let ls = EnergyLandscape {
            grid: OffsetGrid::new(-0.5, 0.5, 0.5),
            values: vec![Some(2.0), None, Some(1.25)],
            counts: vec![40, 3, 50],
        };
        let csv = landscape_csv(&ls);
        assert_eq!(csv, "offset_s,energy,count\n-0.5,2,40\n0,,3\n0.5,1.25,50\n");
        let svg = landscape_svg(&ls, "pair");
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
    }
}
