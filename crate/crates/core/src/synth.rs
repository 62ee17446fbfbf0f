//! Synthetic multi-camera dynamic-scene generator with known ground truth.
//!
//! Cameras sit on a circle looking inward at a cloud of dynamic points
//! driven by a shared global clock; each camera samples at its own frame
//! rate with its own true time offset. Everything is a deterministic
//! function of the scenario seed.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, CameraTrack, Intrinsics, Pose};
use crate::tracklets::{CorrespondenceSet, Scene, Tracklet, TrackletPair, TrackletSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("infeasible scenario: no point is co-visible in any camera pair")]
    InfeasibleSpec,
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraMotion {
    Static,
    /// Cameras orbit the scene center at `angular_speed` rad/s.
    Orbit { angular_speed: f64 },
}

/// Sum-of-sinusoids point motion, per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMotion {
    pub harmonics: usize,
    /// Total displacement amplitude bound, meters.
    pub max_amplitude: f64,
    pub min_frequency_hz: f64,
    pub max_frequency_hz: f64,
}

impl Default for PointMotion {
    fn default() -> Self {
        Self {
            harmonics: 3,
            max_amplitude: 1.0,
            min_frequency_hz: 0.2,
            max_frequency_hz: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub n_cameras: usize,
    pub camera_motion: CameraMotion,
    pub n_points: usize,
    pub points_per_instance: usize,
    pub point_motion: PointMotion,
    pub duration_s: f64,
    /// Per-camera frame rates; a single entry is broadcast to all cameras.
    pub fps: Vec<f64>,
    /// Per-camera true offsets in seconds; empty draws them uniformly from
    /// `±offset_range_s`.
    pub true_offsets: Vec<f64>,
    pub offset_range_s: f64,
    pub noise_sigma_px: f64,
    /// Per-sample random visibility dropout probability.
    pub dropout_rate: f64,
    /// Fraction of deliberately wrong (instance-mismatched) correspondences
    /// added per camera pair, relative to the clean count.
    pub contamination_rate: f64,
}

impl ScenarioSpec {
    /// The standard desk-scale rig: 6 static cameras on a circle, 15 dynamic
    /// points, 30 fps, 10 s, offsets uniform in ±2.5 s, 1 px noise.
    pub fn standard(seed: u64) -> Self {
        Self {
            seed,
            n_cameras: 6,
            camera_motion: CameraMotion::Static,
            n_points: 15,
            points_per_instance: 5,
            point_motion: PointMotion::default(),
            duration_s: 10.0,
            fps: vec![30.0],
            true_offsets: Vec::new(),
            offset_range_s: 2.5,
            noise_sigma_px: 1.0,
            dropout_rate: 0.02,
            contamination_rate: 0.0,
        }
    }

    /// Strictly periodic motion (single shared 1 Hz harmonic) so the energy
    /// landscape repeats every second: equal-depth minima that the
    /// reliability filter must reject.
    pub fn aliased(seed: u64) -> Self {
        Self {
            point_motion: PointMotion {
                harmonics: 1,
                max_amplitude: 1.0,
                min_frequency_hz: 1.0,
                max_frequency_hz: 1.0,
            },
            ..Self::standard(seed)
        }
    }

    pub fn fps_of(&self, cam: usize) -> f64 {
        if self.fps.len() == 1 {
            self.fps[0]
        } else {
            self.fps[cam]
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.n_cameras < 2 {
            return Err(SynthError::InvalidSpec("need at least 2 cameras".into()));
        }
        if self.fps.len() != 1 && self.fps.len() != self.n_cameras {
            return Err(SynthError::InvalidSpec("fps must have 1 or n_cameras entries".into()));
        }
        if self.fps.iter().any(|&f| f <= 0.0) {
            return Err(SynthError::InvalidSpec("fps must be positive".into()));
        }
        if !self.true_offsets.is_empty() && self.true_offsets.len() != self.n_cameras {
            return Err(SynthError::InvalidSpec("true_offsets must have n_cameras entries".into()));
        }
        if self
            .true_offsets
            .iter()
            .any(|s| s.abs() > self.duration_s / 2.0)
            || self.offset_range_s > self.duration_s / 2.0
        {
            return Err(SynthError::InvalidSpec("offsets must lie within ±duration/2".into()));
        }
        if self.noise_sigma_px < 0.0 {
            return Err(SynthError::InvalidSpec("noise sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// One harmonic: displacement `amplitude * sin(2π f t + phase)` per axis.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Harmonic {
    amplitude: Vector3<f64>,
    frequency_hz: Vector3<f64>,
    phase: Vector3<f64>,
}

/// Ground-truth trajectory of one simulated point on the global clock.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointTrajectory {
    pub instance_id: u32,
    base: Vector3<f64>,
    harmonics: Vec<Harmonic>,
}

impl PointTrajectory {
    pub fn position(&self, t_global: f64) -> Vector3<f64> {
        let mut x = self.base;
        for h in &self.harmonics {
            for axis in 0..3 {
                x[axis] += h.amplitude[axis]
                    * (2.0 * std::f64::consts::PI * h.frequency_hz[axis] * t_global
                        + h.phase[axis])
                        .sin();
            }
        }
        x
    }
}

/// Everything the pipeline consumes plus the truth needed to grade it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub offsets: BTreeMap<String, f64>,
    /// Correspondences that were injected as instance-mismatched contaminants,
    /// as (video_i, video_j, tracklet_i, tracklet_j) in canonical order.
    pub contaminants: Vec<(String, String, String, String)>,
}

#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub scene: Scene,
    pub truth: GroundTruth,
    /// True 3D trajectories, for oracle checks; not part of the file format.
    pub points: Vec<PointTrajectory>,
    pub spec: ScenarioSpec,
}

pub const CAMERA_RADIUS_M: f64 = 5.0;
pub const CAMERA_HEIGHT_M: f64 = 1.5;
const IMAGE_W: f64 = 1280.0;
const IMAGE_H: f64 = 960.0;

fn camera_id(k: usize) -> String {
    format!("cam{k:02}")
}

fn look_at(center: Vector3<f64>, target: Vector3<f64>) -> Pose {
    let forward = (target - center).normalize();
    let up = Vector3::new(0.0, 0.0, 1.0);
    let right = forward.cross(&up).normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[
        right.transpose(),
        down.transpose(),
        forward.transpose(),
    ]);
    let translation = -rotation * center;
    Pose::new(rotation, translation)
}

fn camera_center(index: usize, n: usize, angular_offset: f64) -> Vector3<f64> {
    let theta = 2.0 * std::f64::consts::PI * index as f64 / n as f64 + angular_offset;
    Vector3::new(
        CAMERA_RADIUS_M * theta.cos(),
        CAMERA_RADIUS_M * theta.sin(),
        CAMERA_HEIGHT_M,
    )
}

/// Generate a scene bundle. Deterministic for a given spec.
pub fn generate(spec: &ScenarioSpec) -> Result<SceneBundle, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let offsets: Vec<f64> = if spec.true_offsets.is_empty() {
        (0..spec.n_cameras)
            .map(|_| rng.gen_range(-spec.offset_range_s..=spec.offset_range_s))
            .collect()
    } else {
        spec.true_offsets.clone()
    };

    // point trajectories on the global clock
    let points: Vec<PointTrajectory> = (0..spec.n_points)
        .map(|p| {
            let base = Vector3::new(
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
                rng.gen_range(0.8..2.2),
            );
            let per_harmonic = spec.point_motion.max_amplitude / spec.point_motion.harmonics as f64;
            let harmonics = (0..spec.point_motion.harmonics)
                .map(|_| Harmonic {
                    amplitude: Vector3::new(
                        rng.gen_range(0.2..1.0) * per_harmonic,
                        rng.gen_range(0.2..1.0) * per_harmonic,
                        rng.gen_range(0.1..0.5) * per_harmonic,
                    ),
                    frequency_hz: Vector3::new(
                        rng.gen_range(spec.point_motion.min_frequency_hz..=spec.point_motion.max_frequency_hz),
                        rng.gen_range(spec.point_motion.min_frequency_hz..=spec.point_motion.max_frequency_hz),
                        rng.gen_range(spec.point_motion.min_frequency_hz..=spec.point_motion.max_frequency_hz),
                    ),
                    phase: Vector3::new(
                        rng.gen_range(0.0..std::f64::consts::TAU),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    ),
                })
                .collect();
            PointTrajectory {
                instance_id: (p / spec.points_per_instance.max(1)) as u32,
                base,
                harmonics,
            }
        })
        .collect();

    let intrinsics = Intrinsics::new(900.0, 900.0, IMAGE_W / 2.0, IMAGE_H / 2.0);
    let noise = Normal::new(0.0, spec.noise_sigma_px.max(f64::MIN_POSITIVE)).unwrap();

    let mut scene = Scene::default();
    // tracklet visibility per camera, for correspondence construction
    let mut tracklet_ids: Vec<Vec<Option<String>>> = Vec::new();

    for cam_idx in 0..spec.n_cameras {
        let fps = spec.fps_of(cam_idx);
        let n_frames = (spec.duration_s * fps).round() as usize;
        let frame_times: Vec<f64> = (0..n_frames).map(|k| k as f64 / fps).collect();
        let poses: Vec<Pose> = frame_times
            .iter()
            .map(|&t_local| {
                let t_global = t_local + offsets[cam_idx];
                let angular_offset = match spec.camera_motion {
                    CameraMotion::Static => 0.0,
                    CameraMotion::Orbit { angular_speed } => angular_speed * t_global,
                };
                look_at(
                    camera_center(cam_idx, spec.n_cameras, angular_offset),
                    Vector3::new(0.0, 0.0, CAMERA_HEIGHT_M),
                )
            })
            .collect();
        let cam = CameraTrack {
            camera_id: camera_id(cam_idx),
            fps,
            frame_times: frame_times.clone(),
            intrinsics_per_frame: vec![intrinsics; n_frames],
            poses_per_frame: poses,
        };

        let mut ids_for_cam = Vec::with_capacity(spec.n_points);
        for (p, traj) in points.iter().enumerate() {
            let mut samples = Vec::with_capacity(n_frames);
            for (k, &t_local) in frame_times.iter().enumerate() {
                let t_global = t_local + offsets[cam_idx];
                let x = traj.position(t_global);
                let visible = match project(&cam.intrinsics_per_frame[k], &cam.poses_per_frame[k], &x)
                {
                    Ok(px) => {
                        px.x >= 0.0
                            && px.x < IMAGE_W
                            && px.y >= 0.0
                            && px.y < IMAGE_H
                            && !rng.gen_bool(spec.dropout_rate)
                    }
                    Err(_) => false,
                };
                if visible {
                    let px =
                        project(&cam.intrinsics_per_frame[k], &cam.poses_per_frame[k], &x).unwrap();
                    let (du, dv) = if spec.noise_sigma_px > 0.0 {
                        (noise.sample(&mut rng), noise.sample(&mut rng))
                    } else {
                        (0.0, 0.0)
                    };
                    samples.push(TrackletSample {
                        frame: k,
                        u: px.x + du,
                        v: px.y + dv,
                        visible: true,
                    });
                }
            }
            if samples.len() >= 2 {
                let id = format!("{}_p{p:03}", cam.camera_id);
                scene.tracklets.insert(
                    id.clone(),
                    Tracklet {
                        tracklet_id: id.clone(),
                        camera_id: cam.camera_id.clone(),
                        instance_id: traj.instance_id,
                        samples,
                    },
                );
                ids_for_cam.push(Some(id));
            } else {
                ids_for_cam.push(None);
            }
        }
        tracklet_ids.push(ids_for_cam);
        scene.cameras.insert(cam.camera_id.clone(), cam);
    }

    // clean correspondences: same point seen by both cameras
    let mut correspondences = CorrespondenceSet::new();
    let mut contaminants = Vec::new();
    let mut covisible_any = false;
    for i in 0..spec.n_cameras {
        for j in (i + 1)..spec.n_cameras {
            let mut clean = 0usize;
            for p in 0..spec.n_points {
                let (Some(ti), Some(tj)) = (&tracklet_ids[i][p], &tracklet_ids[j][p]) else {
                    continue;
                };
                correspondences.insert(TrackletPair {
                    video_i: camera_id(i),
                    video_j: camera_id(j),
                    tracklet_i: ti.clone(),
                    tracklet_j: tj.clone(),
                    weight: 1.0,
                    keyframes: None,
                });
                clean += 1;
            }
            covisible_any |= clean > 0;
            let n_contaminated = (spec.contamination_rate * clean as f64).round() as usize;
            let mut added = 0usize;
            let mut attempts = 0usize;
            while added < n_contaminated && attempts < 100 * n_contaminated.max(1) {
                attempts += 1;
                let pa = rng.gen_range(0..spec.n_points);
                let pb = rng.gen_range(0..spec.n_points);
                if points[pa].instance_id == points[pb].instance_id {
                    continue;
                }
                let (Some(ti), Some(tj)) = (&tracklet_ids[i][pa], &tracklet_ids[j][pb]) else {
                    continue;
                };
                let key = (camera_id(i), camera_id(j));
                if correspondences.groups.get(&key).is_some_and(|g| {
                    g.iter().any(|p| &p.tracklet_i == ti && &p.tracklet_j == tj)
                }) {
                    continue;
                }
                correspondences.insert(TrackletPair {
                    video_i: camera_id(i),
                    video_j: camera_id(j),
                    tracklet_i: ti.clone(),
                    tracklet_j: tj.clone(),
                    weight: 1.0,
                    keyframes: None,
                });
                contaminants.push((camera_id(i), camera_id(j), ti.clone(), tj.clone()));
                added += 1;
            }
        }
    }
    if !covisible_any {
        return Err(SynthError::InfeasibleSpec);
    }
    scene.correspondences = correspondences;

    let truth = GroundTruth {
        offsets: (0..spec.n_cameras)
            .map(|k| (camera_id(k), offsets[k]))
            .collect(),
        contaminants,
    };
    Ok(SceneBundle {
        scene,
        truth,
        points,
        spec: spec.clone(),
    })
}

/// Apply bounded random rotation/translation noise to every camera's stored
/// poses (one rigid perturbation per camera); tracklets are untouched.
/// Translation noise is `trans_frac` of the mean inter-camera baseline.
pub fn perturb_poses(bundle: &SceneBundle, rot_err_deg: f64, trans_frac: f64) -> SceneBundle {
    assert!(rot_err_deg >= 0.0 && trans_frac >= 0.0);
    if rot_err_deg == 0.0 && trans_frac == 0.0 {
        return bundle.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(bundle.spec.seed.wrapping_add(0x9e3779b97f4a7c15));

    let centers: Vec<Vector3<f64>> = bundle
        .scene
        .cameras
        .values()
        .map(|c| c.poses_per_frame[0].center())
        .collect();
    let mut baseline_sum = 0.0;
    let mut baseline_n = 0usize;
    for a in 0..centers.len() {
        for b in (a + 1)..centers.len() {
            baseline_sum += (centers[a] - centers[b]).norm();
            baseline_n += 1;
        }
    }
    let mean_baseline = if baseline_n > 0 { baseline_sum / baseline_n as f64 } else { 1.0 };

    let mut out = bundle.clone();
    for cam in out.scene.cameras.values_mut() {
        let axis = loop {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if v.norm() > 1e-3 {
                break v.normalize();
            }
        };
        let angle = rot_err_deg.to_radians() * rng.gen_range(0.5..1.0);
        let r_noise = nalgebra::Rotation3::from_scaled_axis(axis * angle).into_inner();
        let dt = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize()
            * (trans_frac * mean_baseline * rng.gen_range(0.5..1.0));
        for pose in cam.poses_per_frame.iter_mut() {
            pose.rotation = r_noise * pose.rotation;
            pose.translation = r_noise * pose.translation + dt;
        }
    }
    out
}
