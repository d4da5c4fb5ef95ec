//! Rigid-body primitives and frame conventions shared by the whole pipeline.
//!
//! Rotations are stored as 3x3 matrices throughout: every formula downstream
//! (loop errors, Kronecker-structured coefficients, orthogonality
//! constraints) is matrix-native, and a quaternion layer would only add
//! conversion error. Timestamps are abstract sample indices shared by all
//! robots.

use nalgebra::{Matrix3, Vector3};

use crate::error::{CertlocError, Result};

/// Frobenius tolerance for the orthonormality invariant of stored rotations.
pub const ROTATION_TOL: f64 = 1e-9;

/// A rigid-body pose: rotation plus translation, mapping body coordinates
/// into the frame the pose is expressed in.
#[derive(Debug, Clone, PartialEq)]
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
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Checks the SO(3) invariants: `R^T R = I` within `tol` (Frobenius) and
    /// positive determinant.
    pub fn rotation_valid(&self, tol: f64) -> bool {
        let defect = self.rotation.transpose() * self.rotation - Matrix3::identity();
        defect.norm() <= tol && self.rotation.determinant() > 0.0
    }

    /// Applies the pose to a point expressed in the body frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Composition `a ∘ b`: first apply `b`, then `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

/// Two-sided inverse of a pose: `(R^T, -R^T t)`.
pub fn inverse(a: &Pose) -> Pose {
    let rt = a.rotation.transpose();
    Pose {
        rotation: rt,
        translation: -(rt * a.translation),
    }
}

/// A sequence of poses over the shared timestamp set, expressed in the
/// robot's local frame (first pose is the identity).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub robot_label: String,
    pub timestamps: Vec<usize>,
    pub poses: Vec<Pose>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Validates the local-frame convention: identity first pose, strictly
    /// increasing timestamps, matching lengths, orthonormal rotations.
    pub fn validate(&self, rot_tol: f64) -> Result<()> {
        if self.poses.is_empty() {
            return Err(CertlocError::InvalidInput(format!(
                "trajectory {}: empty",
                self.robot_label
            )));
        }
        if self.timestamps.len() != self.poses.len() {
            return Err(CertlocError::InvalidInput(format!(
                "trajectory {}: {} timestamps vs {} poses",
                self.robot_label,
                self.timestamps.len(),
                self.poses.len()
            )));
        }
        if !self.timestamps.windows(2).all(|w| w[0] < w[1]) {
            return Err(CertlocError::InvalidInput(format!(
                "trajectory {}: timestamps not strictly increasing",
                self.robot_label
            )));
        }
        let first = &self.poses[0];
        if (first.rotation - Matrix3::identity()).norm() > 1e-6
            || first.translation.norm() > 1e-6
        {
            return Err(CertlocError::InvalidInput(format!(
                "trajectory {}: first pose is not the identity",
                self.robot_label
            )));
        }
        for (k, pose) in self.poses.iter().enumerate() {
            if !pose.rotation_valid(rot_tol) {
                return Err(CertlocError::InvalidInput(format!(
                    "trajectory {}: pose {} rotation not orthonormal",
                    self.robot_label, k
                )));
            }
        }
        Ok(())
    }
}

/// One anonymous sequence of unit bearing vectors, indexed like the shared
/// timestamp set and expressed in the observer camera frame at each time.
#[derive(Debug, Clone)]
pub struct BearingSequence {
    /// Index of this sequence among the anonymous measurements (0-based).
    pub sequence_index: usize,
    pub bearings: Vec<Vector3<f64>>,
}

impl BearingSequence {
    pub fn validate(&self) -> Result<()> {
        for (j, b) in self.bearings.iter().enumerate() {
            if (b.norm() - 1.0).abs() > 1e-9 {
                return Err(CertlocError::InvalidInput(format!(
                    "bearing sequence {}: vector {} has norm {:.12}, expected 1",
                    self.sequence_index,
                    j,
                    b.norm()
                )));
            }
        }
        Ok(())
    }
}

/// Re-expresses a list of global poses in the frame of the first pose, so
/// the first output is the identity.
pub fn to_local_frame(global_poses: &[Pose], label: &str) -> Result<Trajectory> {
    if global_poses.is_empty() {
        return Err(CertlocError::InvalidInput(
            "to_local_frame: empty pose list".into(),
        ));
    }
    let anchor_inv = inverse(&global_poses[0]);
    let poses: Vec<Pose> = global_poses
        .iter()
        .map(|p| compose(&anchor_inv, p))
        .collect();
    Ok(Trajectory {
        robot_label: label.to_string(),
        timestamps: (0..poses.len()).collect(),
        poses,
    })
}

/// Geodesic distance on SO(3): `arccos((tr(R1^T R2) - 1) / 2)`, clamped to
/// `[0, pi]`.
pub fn geodesic_distance(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> f64 {
    let c = ((r1.transpose() * r2).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos()
}

/// Nearest rotation to `m` in Frobenius norm (orthogonal Procrustes), via
/// SVD with determinant-sign correction.
pub fn project_to_so3(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let u = svd
        .u
        .ok_or_else(|| CertlocError::InvalidInput("project_to_so3: SVD failed".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| CertlocError::InvalidInput("project_to_so3: SVD failed".into()))?;
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax <= 0.0 || smin <= 1e-12 * smax {
        return Err(CertlocError::InvalidInput(
            "project_to_so3: input matrix is singular".into(),
        ));
    }
    let det_uv = (u * v_t).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det_uv.signum()));
    Ok(u * fix * v_t)
}

/// Rotation about a unit axis by `angle` radians (Rodrigues form).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let u = axis.normalize();
    let k = Matrix3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0);
    Matrix3::identity() + angle.sin() * k + (1.0 - angle.cos()) * (k * k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let axis = if axis.norm() < 1e-6 {
            Vector3::x()
        } else {
            axis
        };
        axis_angle(&axis, rng.gen_range(0.01..3.1))
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        Pose::new(
            random_rotation(rng),
            Vector3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            ),
        )
    }

    fn to_homogeneous(p: &Pose) -> Matrix4<f64> {
        let mut h = Matrix4::identity();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&p.rotation);
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.translation);
        h
    }

    #[test]
    fn compose_identity_cases() {
        let id = Pose::identity();
        let c = compose(&id, &id);
        assert_relative_eq!(c.rotation, Matrix3::identity(), epsilon = 1e-15);
        assert_relative_eq!(c.translation, Vector3::zeros(), epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_pose(&mut rng);
        let c = compose(&p, &inverse(&p));
        assert!((c.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(c.translation.norm() < 1e-12);
    }

    #[test]
    fn compose_matches_homogeneous_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = random_pose(&mut rng);
            let q = random_pose(&mut rng);
            let c = compose(&p, &q);
            let oracle = to_homogeneous(&p) * to_homogeneous(&q);
            let got = to_homogeneous(&c);
            for i in 0..4 {
                for j in 0..4 {
                    assert!((got[(i, j)] - oracle[(i, j)]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn inverse_identity_and_involution() {
        let id = Pose::identity();
        let inv = inverse(&id);
        assert_relative_eq!(inv.rotation, Matrix3::identity(), epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = random_pose(&mut rng);
            let pp = inverse(&inverse(&p));
            assert!((pp.rotation - p.rotation).norm() < 1e-12);
            assert!((pp.translation - p.translation).norm() < 1e-12);
        }
    }

    #[test]
    fn compose_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (a, b, c) = (
                random_pose(&mut rng),
                random_pose(&mut rng),
                random_pose(&mut rng),
            );
            let left = compose(&compose(&a, &b), &c);
            let right = compose(&a, &compose(&b, &c));
            assert!((left.rotation - right.rotation).norm() < 1e-12);
            assert!((left.translation - right.translation).norm() < 1e-12);
        }
    }

    #[test]
    fn to_local_frame_cases() {
        // Single identity pose.
        let t = to_local_frame(&[Pose::identity()], "a").unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.poses[0].rotation_valid(1e-12));
        assert!(t.poses[0].translation.norm() < 1e-15);

        // Already-local list is unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut list = vec![Pose::identity()];
        for _ in 0..5 {
            list.push(random_pose(&mut rng));
        }
        let t = to_local_frame(&list, "a").unwrap();
        for (orig, local) in list.iter().zip(&t.poses) {
            assert!((orig.rotation - local.rotation).norm() < 1e-12);
            assert!((orig.translation - local.translation).norm() < 1e-12);
        }

        // Round trip: composing the first global pose with outputs reproduces
        // the inputs.
        let globals: Vec<Pose> = (0..6).map(|_| random_pose(&mut rng)).collect();
        let t = to_local_frame(&globals, "a").unwrap();
        for (g, l) in globals.iter().zip(&t.poses) {
            let back = compose(&globals[0], l);
            assert!((back.rotation - g.rotation).norm() < 1e-12);
            assert!((back.translation - g.translation).norm() < 1e-12);
        }
        assert!(to_local_frame(&[], "a").is_err());
    }

    #[test]
    fn to_local_frame_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let globals: Vec<Pose> = (0..6).map(|_| random_pose(&mut rng)).collect();
        let once = to_local_frame(&globals, "a").unwrap();
        let twice = to_local_frame(&once.poses, "a").unwrap();
        for (p, q) in once.poses.iter().zip(&twice.poses) {
            assert!((p.rotation - q.rotation).norm() < 1e-12);
            assert!((p.translation - q.translation).norm() < 1e-12);
        }
    }

    #[test]
    fn geodesic_distance_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = random_rotation(&mut rng);
        assert!(geodesic_distance(&r, &r).abs() < 1e-9);

        let half_turn = axis_angle(&Vector3::x(), std::f64::consts::PI);
        assert_relative_eq!(
            geodesic_distance(&Matrix3::identity(), &half_turn),
            std::f64::consts::PI,
            epsilon = 1e-9
        );

        for _ in 0..50 {
            let axis = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            let phi = rng.gen_range(0.01..3.13);
            let r = axis_angle(&axis, phi);
            assert!((geodesic_distance(&Matrix3::identity(), &r) - phi).abs() <= 1e-9);
        }
    }

    #[test]
    fn project_to_so3_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = random_rotation(&mut rng);
        let p = project_to_so3(&r).unwrap();
        assert!((p - r).norm() < 1e-12);

        // Positive-scale invariance.
        let p = project_to_so3(&(1.7 * r)).unwrap();
        assert!((p - r).norm() < 1e-12);

        assert!(project_to_so3(&Matrix3::zeros()).is_err());
    }

    #[test]
    fn project_to_so3_beats_sampled_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let best = project_to_so3(&m).unwrap();
        assert!((best.transpose() * best - Matrix3::identity()).norm() < 1e-9);
        assert!(best.determinant() > 0.0);
        let best_dist = (best - m).norm();
        for _ in 0..10_000 {
            let q = random_rotation(&mut rng);
            assert!((q - m).norm() + 1e-12 >= best_dist);
        }
    }
}
