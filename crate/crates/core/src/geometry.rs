//! Calibrated camera models and time-indexed fundamental-matrix construction.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Camera centers closer than this are treated as a zero baseline.
pub const BASELINE_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    /// Query time outside the padded span of a camera track.
    #[error("time {t} s outside padded span [{min}, {max}] of camera {camera}")]
    OutOfRange {
        camera: String,
        t: f64,
        min: f64,
        max: f64,
    },
    /// Camera centers coincide; the fundamental matrix is undefined.
    #[error("camera centers coincide (baseline {baseline} < {BASELINE_EPS})")]
    DegenerateBaseline { baseline: f64 },
    /// Point has non-positive depth in the camera frame.
    #[error("point behind camera (depth {depth})")]
    BehindCamera { depth: f64 },
}

/// Pinhole intrinsics. Representable as an upper-triangular 3x3 matrix
/// with bottom row (0, 0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        Self {
            fx,
            fy,
            cx,
            cy,
            skew: 0.0,
        }
    }

    /// Identity calibration (normalized image coordinates).
    pub fn identity() -> Self {
        Self::new(1.0, 1.0, 0.0, 0.0)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, self.skew, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// Closed-form inverse of the upper-triangular calibration matrix.
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        let (fx, fy, cx, cy, s) = (self.fx, self.fy, self.cx, self.cy, self.skew);
        Matrix3::new(
            1.0 / fx,
            -s / (fx * fy),
            (s * cy - cx * fy) / (fx * fy),
            0.0,
            1.0 / fy,
            -cy / fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Rigid world-to-camera transform: `x_cam = rotation * x_world + translation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    /// Camera center in world coordinates: `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -self.rotation.transpose() * self.translation
    }

    /// Orthonormality and determinant check, `tol` on both.
    pub fn is_valid_rotation(&self, tol: f64) -> bool {
        let r = &self.rotation;
        let err = (r.transpose() * r - Matrix3::identity()).norm();
        err <= tol && (r.determinant() - 1.0).abs() <= tol
    }

    pub fn transform(&self, x_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x_world + self.translation
    }
}

/// One video's time-indexed calibration: per-frame timing, intrinsics and poses
/// on the camera's local (unsynchronized) clock.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraTrack {
    pub camera_id: String,
    pub fps: f64,
    pub frame_times: Vec<f64>,
    pub intrinsics_per_frame: Vec<Intrinsics>,
    pub poses_per_frame: Vec<Pose>,
}

impl CameraTrack {
    pub fn len(&self) -> usize {
        self.frame_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_times.is_empty()
    }

    /// First/last frame time padded by one frame period on each side.
    pub fn padded_span(&self) -> (f64, f64) {
        let pad = 1.0 / self.fps;
        (
            self.frame_times[0] - pad,
            *self.frame_times.last().unwrap() + pad,
        )
    }

    /// Index of the frame whose timestamp is nearest to `t`, tie broken
    /// toward the lower index.
    pub fn nearest_frame(&self, t: f64) -> Result<usize, GeometryError> {
        let (min, max) = self.padded_span();
        if t < min || t > max {
            return Err(GeometryError::OutOfRange {
                camera: self.camera_id.clone(),
                t,
                min,
                max,
            });
        }
        let k = match self
            .frame_times
            .binary_search_by(|ft| ft.partial_cmp(&t).unwrap())
        {
            Ok(k) => k,
            Err(ins) => {
                if ins == 0 {
                    0
                } else if ins == self.frame_times.len() {
                    ins - 1
                } else {
                    let lo = ins - 1;
                    // strict '<' keeps the lower index on exact midpoints
                    if t - self.frame_times[lo] <= self.frame_times[ins] - t {
                        lo
                    } else {
                        ins
                    }
                }
            }
        };
        Ok(k)
    }

    pub fn pose_at(&self, t: f64) -> Result<&Pose, GeometryError> {
        Ok(&self.poses_per_frame[self.nearest_frame(t)?])
    }

    pub fn intrinsics_at(&self, t: f64) -> Result<&Intrinsics, GeometryError> {
        Ok(&self.intrinsics_per_frame[self.nearest_frame(t)?])
    }
}

/// Rank-2 fundamental matrix, Frobenius-normalized with the sign of its
/// largest-magnitude entry fixed positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalMatrix {
    pub m: Matrix3<f64>,
}

impl FundamentalMatrix {
    /// Normalize to Frobenius norm 1; flip sign so the largest-magnitude
    /// entry (first in row-major order on ties) is positive.
    fn normalized(mut m: Matrix3<f64>) -> Self {
        m /= m.norm();
        let mut best = 0.0_f64;
        let mut best_val = 0.0_f64;
        for r in 0..3 {
            for c in 0..3 {
                let v = m[(r, c)];
                if v.abs() > best {
                    best = v.abs();
                    best_val = v;
                }
            }
        }
        if best_val < 0.0 {
            m = -m;
        }
        Self { m }
    }
}

pub fn skew_symmetric(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// Fundamental matrix mapping view-j points to epipolar lines in view i:
/// `x_i^T F x_j = 0` for any 3D point visible in both views.
///
/// Composed as `F = K_i^-T [t_rel]x R_rel K_j^-1` with `(R_rel, t_rel)`
/// taking camera-j coordinates into camera i.
pub fn fundamental_between(
    ki: &Intrinsics,
    pi: &Pose,
    kj: &Intrinsics,
    pj: &Pose,
) -> Result<FundamentalMatrix, GeometryError> {
    let baseline = (pi.center() - pj.center()).norm();
    if baseline <= BASELINE_EPS {
        return Err(GeometryError::DegenerateBaseline { baseline });
    }
    let r_rel = pi.rotation * pj.rotation.transpose();
    let t_rel = pi.translation - r_rel * pj.translation;
    let essential = skew_symmetric(&t_rel) * r_rel;
    let f = ki.inverse_matrix().transpose() * essential * kj.inverse_matrix();
    Ok(FundamentalMatrix::normalized(f))
}

/// Pinhole projection to a homogeneous pixel with `w = 1`.
pub fn project(
    k: &Intrinsics,
    p: &Pose,
    x_world: &Vector3<f64>,
) -> Result<Vector3<f64>, GeometryError> {
    let x_cam = p.transform(x_world);
    if x_cam.z <= 0.0 {
        return Err(GeometryError::BehindCamera { depth: x_cam.z });
    }
    let h = k.matrix() * x_cam;
    Ok(Vector3::new(h.x / h.z, h.y / h.z, 1.0))
}

/// Pixel coordinates of `project` without the homogeneous tail.
pub fn project_px(
    k: &Intrinsics,
    p: &Pose,
    x_world: &Vector3<f64>,
) -> Result<Vector2<f64>, GeometryError> {
    let h = project(k, p, x_world)?;
    Ok(Vector2::new(h.x, h.y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rig(rng: &mut impl Rng) -> (Intrinsics, Pose, Intrinsics, Pose) {
        let k = |rng: &mut dyn rand::RngCore| {
            Intrinsics::new(
                rng.gen_range(200.0..1200.0),
                rng.gen_range(200.0..1200.0),
                rng.gen_range(200.0..800.0),
                rng.gen_range(200.0..800.0),
            )
        };
        let pose = |rng: &mut dyn rand::RngCore| {
            let axis = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            let rot =
                Rotation3::from_scaled_axis(axis.normalize() * rng.gen_range(0.0..0.6_f64));
            let t = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(4.0..8.0),
            );
            Pose::new(rot.into_inner(), t)
        };
        (k(rng), pose(rng), k(rng), pose(rng))
    }

    #[test]
    fn project_optical_axis() {
        let p = project(&Intrinsics::identity(), &Pose::identity(), &Vector3::new(0.0, 0.0, 1.0))
            .unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn project_offaxis_with_calibration() {
        let k = Intrinsics::new(100.0, 100.0, 50.0, 50.0);
        let p = project(&k, &Pose::identity(), &Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_relative_eq!(p.x, 100.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 50.0, epsilon = 1e-12);
        assert_eq!(p.z, 1.0);
    }

    #[test]
    fn project_behind_camera() {
        let r = project(&Intrinsics::identity(), &Pose::identity(), &Vector3::new(0.0, 0.0, -1.0));
        assert!(matches!(r, Err(GeometryError::BehindCamera { .. })));
    }

    #[test]
    fn rectified_stereo_fundamental() {
        // Pure translation along x: F proportional to skew((1,0,0)).
        let ki = Intrinsics::identity();
        let pi = Pose::identity();
        let pj = Pose::new(Matrix3::identity(), Vector3::new(-1.0, 0.0, 0.0));
        let f = fundamental_between(&ki, &pi, &ki, &pj).unwrap().m;
        let expected = skew_symmetric(&Vector3::new(1.0, 0.0, 0.0));
        let expected = expected / expected.norm();
        // up to sign
        let d = (f - expected).norm().min((f + expected).norm());
        assert!(d < 1e-12, "F = {f}");
    }

    #[test]
    fn degenerate_baseline_rejected() {
        let ki = Intrinsics::identity();
        let p = Pose::identity();
        let r = fundamental_between(&ki, &p, &ki, &p.clone());
        assert!(matches!(r, Err(GeometryError::DegenerateBaseline { .. })));
    }

    #[test]
    fn epipolar_constraint_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let (ki, pi, kj, pj) = random_rig(&mut rng);
            if (pi.center() - pj.center()).norm() <= BASELINE_EPS {
                continue;
            }
            let f = fundamental_between(&ki, &pi, &kj, &pj).unwrap();
            for _ in 0..50 {
                let x = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let (Ok(xi), Ok(xj)) = (project(&ki, &pi, &x), project(&kj, &pj, &x)) else {
                    continue;
                };
                // Normalize by the epipolar line so the residual is the
                // point-to-line distance in pixels, comparable across rigs.
                let l = f.m * xj;
                let n = (l.x * l.x + l.y * l.y).sqrt();
                if n < 1e-12 {
                    continue;
                }
                let resid = xi.dot(&l).abs() / n;
                assert!(resid <= 1e-9, "residual {resid}");
            }
        }
    }

    #[test]
    fn fundamental_rank_two_and_transpose_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let (ki, pi, kj, pj) = random_rig(&mut rng);
            if (pi.center() - pj.center()).norm() <= BASELINE_EPS {
                continue;
            }
            let f = fundamental_between(&ki, &pi, &kj, &pj).unwrap().m;
            let sv = f.svd(false, false).singular_values;
            assert!(sv[2] <= 1e-6 * sv[0], "rank-2 violated: {sv:?}");

            let ft = fundamental_between(&kj, &pj, &ki, &pi).unwrap().m.transpose();
            let d = (f - ft).norm().min((f + ft).norm());
            assert!(d <= 1e-9, "transpose symmetry violated: {d}");
        }
    }

    #[test]
    fn nearest_frame_lookup() {
        let track = CameraTrack {
            camera_id: "c".into(),
            fps: 10.0,
            frame_times: vec![0.0, 0.1, 0.2, 0.3],
            intrinsics_per_frame: vec![Intrinsics::identity(); 4],
            poses_per_frame: (0..4)
                .map(|k| Pose::new(Matrix3::identity(), Vector3::new(k as f64, 0.0, 0.0)))
                .collect(),
        };
        // exact hit
        assert_eq!(track.nearest_frame(0.2).unwrap(), 2);
        // midpoint ties toward the lower index
        assert_eq!(track.nearest_frame(0.15).unwrap(), 1);
        // padded span edges
        assert_eq!(track.nearest_frame(-0.09).unwrap(), 0);
        assert_eq!(track.nearest_frame(0.39).unwrap(), 3);
        assert!(track.nearest_frame(-0.2).is_err());
        assert!(track.nearest_frame(0.45).is_err());
    }

    #[test]
    fn static_camera_pose_at_constant() {
        let pose = Pose::new(Matrix3::identity(), Vector3::new(1.0, 2.0, 3.0));
        let track = CameraTrack {
            camera_id: "s".into(),
            fps: 30.0,
            frame_times: (0..30).map(|k| k as f64 / 30.0).collect(),
            intrinsics_per_frame: vec![Intrinsics::identity(); 30],
            poses_per_frame: vec![pose.clone(); 30],
        };
        for t in [0.0, 0.013, 0.5, 0.97] {
            assert_eq!(track.pose_at(t).unwrap(), &pose);
        }
    }
}
