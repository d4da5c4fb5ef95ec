//! Synthetic scene generation: circular trajectories over a sinusoidal
//! landscape, scale-perturbed shared odometry, and noisy anonymous bearings.
//!
//! All sampling is driven by a single seed with a fixed draw order, so a
//! config reproduces its scene bit-exactly.

use nalgebra::{DVector, Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CertlocError, Result};
use crate::formulation::{FullVariableLayout, ProblemInstance, RobotState};
use crate::geometry::{BearingSequence, Pose};

/// One sinusoidal component of the shared terrain: the height field is
/// `z(x, y) = amplitude * sin(wave . (x, y) + phase)`. Sampling a spatial
/// field along each robot's own circle gives every robot vertical motion
/// with its own harmonic content, which keeps the robots' data linearly
/// independent as functions of time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SinusoidTerm {
    pub amplitude: f64,
    /// Planar wave vector, radians per meter.
    pub wave: [f64; 2],
    pub phase: f64,
}

/// Circular route parameters for one robot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotPath {
    pub center: [f64; 3],
    pub radius: f64,
    /// Angular progress per sample, radians.
    pub angular_step: f64,
    /// Starting angle on the circle.
    pub phase: f64,
    /// Banking oscillation about the forward axis. Without it the
    /// orientations stay yaw-pitch only, which leaves the rotation
    /// increments rank-deficient and breaks the measurement-count condition.
    pub roll_amplitude: f64,
    pub roll_frequency: f64,
    pub roll_phase: f64,
    /// Secondary planar oscillation superimposed on the circle. Zero radius
    /// reduces the path to the plain circle.
    pub epicycle_radius: f64,
    pub epicycle_step: f64,
    pub epicycle_phase: f64,
}

/// Full description of a synthetic scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_observed: usize,
    pub n_samples: usize,
    pub observer_path: RobotPath,
    pub observed_paths: Vec<RobotPath>,
    pub landscape: Vec<SinusoidTerm>,
    /// Feature offset of each observed robot (meters, body frame).
    pub inner_biases: Vec<[f64; 3]>,
    /// Map-scale ratio of each observed robot's shared odometry.
    pub scale_ratios: Vec<f64>,
    /// Standard deviation of the multiplicative bearing noise.
    pub sigma: f64,
    pub seed: u64,
}

impl SceneConfig {
    /// Deterministic default scene for a given robot count, sample count,
    /// noise level and seed. Paths, biases and scales are drawn from the
    /// seed in a fixed order.
    pub fn standard(n_observed: usize, n_samples: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        // Fixed angular rate per sample: longer trajectories wind more
        // turns instead of slowing down, which keeps consecutive-edge
        // increments well separated at every trajectory length. Rates are
        // stratified per robot so no two robots share a tone.
        let slots = n_observed + 1;
        let stratified = |rng: &mut ChaCha8Rng, lo: f64, hi: f64, slot: usize| {
            let width = (hi - lo) / slots as f64;
            lo + width * (slot as f64 + 0.15 + rng.gen_range(0.0..0.7))
        };
        let n_terms = 4;
        let observer_path = RobotPath {
            center: [0.0, 0.0, 0.0],
            radius: 6.0 + rng.gen_range(0.0..2.0),
            angular_step: stratified(&mut rng, 0.18, 0.78, 0),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            roll_amplitude: 0.6 + rng.gen_range(0.0..0.4),
            roll_frequency: stratified(&mut rng, 0.8, 1.62, n_observed),
            roll_phase: rng.gen_range(0.0..std::f64::consts::TAU),
            epicycle_radius: 0.8 + rng.gen_range(0.0..1.0),
            epicycle_step: stratified(&mut rng, 1.0, 1.8, 0),
            epicycle_phase: rng.gen_range(0.0..std::f64::consts::TAU),
        };
        let mut observed_paths = Vec::with_capacity(n_observed);
        for k in 0..n_observed {
            let dir = std::f64::consts::TAU * (k as f64 + rng.gen_range(0.2..0.8)) / n_observed as f64;
            let dist = 10.0 + rng.gen_range(0.0..6.0);
            observed_paths.push(RobotPath {
                center: [dist * dir.cos(), dist * dir.sin(), rng.gen_range(-1.0..1.0)],
                radius: 4.0 + rng.gen_range(0.0..3.0),
                angular_step: stratified(&mut rng, 0.18, 0.78, k + 1),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
                roll_amplitude: 0.6 + rng.gen_range(0.0..0.4),
                roll_frequency: stratified(&mut rng, 0.8, 1.62, n_observed - 1 - k),
                roll_phase: rng.gen_range(0.0..std::f64::consts::TAU),
                epicycle_radius: 0.8 + rng.gen_range(0.0..1.0),
                epicycle_step: stratified(&mut rng, 1.0, 1.8, k + 1),
                epicycle_phase: rng.gen_range(0.0..std::f64::consts::TAU),
            });
        }
        let landscape = (0..n_terms)
            .map(|_| {
                let dir = rng.gen_range(0.0..std::f64::consts::TAU);
                let k = rng.gen_range(0.45..1.3);
                SinusoidTerm {
                    amplitude: rng.gen_range(0.35..0.8),
                    wave: [k * dir.cos(), k * dir.sin()],
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                }
            })
            .collect();
        let inner_biases = (0..n_observed)
            .map(|_| {
                let v = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let v = if v.norm() < 1e-3 { Vector3::x() } else { v };
                let scaled = v.normalize() * rng.gen_range(0.7..1.3);
                [scaled.x, scaled.y, scaled.z]
            })
            .collect();
        let scale_ratios = (0..n_observed).map(|_| rng.gen_range(0.5..2.5)).collect();
        Self {
            n_observed,
            n_samples,
            observer_path,
            observed_paths,
            landscape,
            inner_biases,
            scale_ratios,
            sigma,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_observed == 0 || self.n_samples < 2 {
            return Err(CertlocError::InvalidInput(
                "scene needs at least one observed robot and two samples".into(),
            ));
        }
        if self.observed_paths.len() != self.n_observed
            || self.inner_biases.len() != self.n_observed
            || self.scale_ratios.len() != self.n_observed
        {
            return Err(CertlocError::InvalidInput(
                "per-robot config lists must have n_observed entries".into(),
            ));
        }
        if self.observer_path.radius <= 0.0 || self.observed_paths.iter().any(|p| p.radius <= 0.0)
        {
            return Err(CertlocError::InvalidInput("radii must be positive".into()));
        }
        if self.scale_ratios.iter().any(|&s| s <= 0.0) {
            return Err(CertlocError::InvalidInput(
                "scale ratios must be positive".into(),
            ));
        }
        if self.sigma < 0.0 {
            return Err(CertlocError::InvalidInput("sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Global (metric, world-frame) trajectories of all robots.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    pub observer_global: Vec<Pose>,
    pub observed_global: Vec<Vec<Pose>>,
}

fn path_position(path: &RobotPath, landscape: &[SinusoidTerm], j: f64) -> Vector3<f64> {
    let a = path.angular_step * j + path.phase;
    let e = path.epicycle_step * j + path.epicycle_phase;
    let x = path.center[0] + path.radius * a.cos() + path.epicycle_radius * e.cos();
    let y = path.center[1] + path.radius * a.sin() + path.epicycle_radius * e.sin();
    let z: f64 = landscape
        .iter()
        .map(|t| t.amplitude * (t.wave[0] * x + t.wave[1] * y + t.phase).sin())
        .sum();
    Vector3::new(x, y, path.center[2] + z)
}

fn path_velocity(path: &RobotPath, landscape: &[SinusoidTerm], j: f64) -> Vector3<f64> {
    let a = path.angular_step * j + path.phase;
    let e = path.epicycle_step * j + path.epicycle_phase;
    let x = path.center[0] + path.radius * a.cos() + path.epicycle_radius * e.cos();
    let y = path.center[1] + path.radius * a.sin() + path.epicycle_radius * e.sin();
    let dx = -path.radius * path.angular_step * a.sin()
        - path.epicycle_radius * path.epicycle_step * e.sin();
    let dy = path.radius * path.angular_step * a.cos()
        + path.epicycle_radius * path.epicycle_step * e.cos();
    let dz: f64 = landscape
        .iter()
        .map(|t| {
            t.amplitude
                * (t.wave[0] * x + t.wave[1] * y + t.phase).cos()
                * (t.wave[0] * dx + t.wave[1] * dy)
        })
        .sum();
    Vector3::new(dx, dy, dz)
}

/// Orientation whose x-axis faces the velocity, completed with world-z up.
fn facing_rotation(velocity: &Vector3<f64>) -> Matrix3<f64> {
    let forward = if velocity.norm() > 1e-9 {
        velocity.normalize()
    } else {
        Vector3::x()
    };
    let up_raw = Vector3::z() - forward * forward.z;
    let up = if up_raw.norm() > 1e-9 {
        up_raw.normalize()
    } else {
        // Velocity straight up: fall back to world x for the up slot.
        Vector3::x()
    };
    let left = up.cross(&forward);
    Matrix3::from_columns(&[forward, left, up])
}

fn path_poses(path: &RobotPath, landscape: &[SinusoidTerm], n: usize) -> Vec<Pose> {
    (0..n)
        .map(|j| {
            let j = j as f64;
            let roll = path.roll_amplitude * (path.roll_frequency * j + path.roll_phase).sin();
            // Banking about the forward (x) axis keeps the heading on the
            // velocity while exciting the third rotational degree.
            let bank = crate::geometry::axis_angle(&Vector3::x(), roll);
            Pose::new(
                facing_rotation(&path_velocity(path, landscape, j)) * bank,
                path_position(path, landscape, j),
            )
        })
        .collect()
}

/// Generates metric world-frame trajectories for the observer and every
/// observed robot. All trajectories share the sample count.
pub fn generate_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let observer_global = path_poses(&config.observer_path, &config.landscape, config.n_samples);
    let observed_global = config
        .observed_paths
        .iter()
        .map(|p| path_poses(p, &config.landscape, config.n_samples))
        .collect();
    Ok(Scene {
        config: config.clone(),
        observer_global,
        observed_global,
    })
}

/// Anonymous bearing sequences plus the hidden assignment used to shuffle
/// them. `assignment[x]` is the robot index a sequence points at, and
/// `distances[x][j]` the metric camera-to-feature distance of the noiseless
/// geometry.
#[derive(Debug, Clone)]
pub struct SyntheticBearings {
    pub sequences: Vec<BearingSequence>,
    pub assignment: Vec<usize>,
    pub distances: Vec<Vec<f64>>,
}

/// Samples noisy bearings for every observed robot and shuffles their order.
///
/// The multiplicative factor `N(1, sigma)` scales the feature-offset term,
/// one independent draw per (robot, timestamp); the resulting vector is
/// normalized to unit length. Draw order: all noise factors robot-major,
/// then the shuffle permutation.
pub fn synthesize_bearings(scene: &Scene) -> Result<SyntheticBearings> {
    let config = &scene.config;
    let n = config.n_samples;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x51ed_2701));

    let mut per_robot: Vec<Vec<Vector3<f64>>> = Vec::with_capacity(config.n_observed);
    let mut per_robot_dist: Vec<Vec<f64>> = Vec::with_capacity(config.n_observed);
    for y in 0..config.n_observed {
        let bias = Vector3::from_row_slice(&config.inner_biases[y]);
        let mut seq = Vec::with_capacity(n);
        let mut dist = Vec::with_capacity(n);
        for j in 0..n {
            let kappa = 1.0 + config.sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            let obs = &scene.observer_global[j];
            let tgt = &scene.observed_global[y][j];
            let raw = obs.rotation.transpose()
                * (tgt.translation + kappa * (tgt.rotation * bias) - obs.translation);
            let len = raw.norm();
            if len < 1e-9 {
                return Err(CertlocError::DegenerateSample {
                    robot: y,
                    timestamp: j,
                });
            }
            seq.push(raw / len);
            let clean = obs.rotation.transpose()
                * (tgt.translation + tgt.rotation * bias - obs.translation);
            dist.push(clean.norm());
        }
        per_robot.push(seq);
        per_robot_dist.push(dist);
    }

    // Uniform shuffle (Fisher-Yates) of the sequence order.
    let mut assignment: Vec<usize> = (0..config.n_observed).collect();
    for i in (1..assignment.len()).rev() {
        let k = rng.gen_range(0..=i);
        assignment.swap(i, k);
    }

    let sequences = assignment
        .iter()
        .enumerate()
        .map(|(x, &y)| BearingSequence {
            sequence_index: x,
            bearings: per_robot[y].clone(),
        })
        .collect();
    let distances = assignment.iter().map(|&y| per_robot_dist[y].clone()).collect();

    Ok(SyntheticBearings {
        sequences,
        assignment,
        distances,
    })
}

/// How edges are drawn over the shared timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeStrategy {
    /// Consecutive pairs `{j, j+1}`: `n - 1` edges, the default.
    Consecutive,
    /// Every pair `{j1, j2}` with `j1 < j2`.
    AllPairs,
    /// `k` distinct pairs sampled from the seed.
    RandomK(usize),
}

pub fn build_edges(strategy: EdgeStrategy, n_samples: usize, seed: u64) -> Vec<(usize, usize)> {
    match strategy {
        EdgeStrategy::Consecutive => (0..n_samples - 1).map(|j| (j, j + 1)).collect(),
        EdgeStrategy::AllPairs => {
            let mut edges = Vec::new();
            for j1 in 0..n_samples {
                for j2 in (j1 + 1)..n_samples {
                    edges.push((j1, j2));
                }
            }
            edges
        }
        EdgeStrategy::RandomK(k) => {
            let mut all: Vec<(usize, usize)> = Vec::new();
            for j1 in 0..n_samples {
                for j2 in (j1 + 1)..n_samples {
                    all.push((j1, j2));
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x7ed0_97c1));
            for i in (1..all.len()).rev() {
                let j = rng.gen_range(0..=i);
                all.swap(i, j);
            }
            let k = k.min(all.len());
            let mut edges: Vec<(usize, usize)> = all.into_iter().take(k).collect();
            edges.sort_unstable();
            edges
        }
    }
}

/// True values attached to a synthetic instance for scoring.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// `assignment[x]` = robot index of sequence `x`.
    pub assignment: Vec<usize>,
    /// Per-robot (indexed by robot) scale, rotation, bias, and the relative
    /// translation from the observer's local frame to the robot's.
    pub scales: Vec<f64>,
    pub rotations: Vec<Matrix3<f64>>,
    pub translations: Vec<Vector3<f64>>,
    pub biases: Vec<Vector3<f64>>,
    /// `distances[x][j]`: metric camera-to-feature distance of the noiseless
    /// geometry.
    pub distances: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn robot_states(&self) -> Vec<RobotState> {
        (0..self.scales.len())
            .map(|y| RobotState {
                scale: self.scales[y],
                rotation: self.rotations[y],
                bias: self.biases[y],
            })
            .collect()
    }

    /// Binary assignment matrix with `theta[x][y] = 1` iff sequence `x`
    /// corresponds to robot `y`.
    pub fn theta(&self) -> Vec<Vec<f64>> {
        let n = self.assignment.len();
        let mut theta = vec![vec![0.0; n]; n];
        for (x, &y) in self.assignment.iter().enumerate() {
            theta[x][y] = 1.0;
        }
        theta
    }

    /// Stacks the true `x = [r, y, D]` vector for the full cost.
    pub fn stacked_x(&self, layout: &FullVariableLayout) -> DVector<f64> {
        let n = layout.n_robots;
        let mut x = DVector::zeros(layout.dim());
        for (x_seq, &y) in self.assignment.iter().enumerate() {
            let base = layout.r_offset(x_seq, y);
            let p = [
                self.scales[y],
                self.biases[y].x,
                self.biases[y].y,
                self.biases[y].z,
            ];
            for k in 0..4 {
                for c in 0..3 {
                    for r in 0..3 {
                        x[base + 9 * k + 3 * c + r] = p[k] * self.rotations[y][(r, c)];
                    }
                }
            }
        }
        debug_assert_eq!(self.assignment.len(), n);
        x[layout.y_offset()] = 1.0;
        for x_seq in 0..n {
            for j in 0..layout.n_samples {
                x[layout.d_offset(x_seq, j)] = self.distances[x_seq][j];
            }
        }
        x
    }
}

/// Converts a scene plus sampled bearings into a problem instance: observer
/// odometry in its local frame, observed odometry in local frames with
/// translations divided by each robot's scale ratio (the estimator must
/// recover the ratio), unit weights, and edges drawn per the strategy.
pub fn make_instance(
    scene: &Scene,
    bearings: &SyntheticBearings,
    strategy: EdgeStrategy,
) -> Result<(ProblemInstance, GroundTruth)> {
    let config = &scene.config;
    let observer = crate::geometry::to_local_frame(&scene.observer_global, "observer")?;

    let mut observed = Vec::with_capacity(config.n_observed);
    for (y, globals) in scene.observed_global.iter().enumerate() {
        let mut t = crate::geometry::to_local_frame(globals, &format!("robot{y}"))?;
        let s = config.scale_ratios[y];
        for pose in t.poses.iter_mut() {
            pose.translation /= s;
        }
        observed.push(t);
    }

    let edges = build_edges(strategy, config.n_samples, config.seed);
    let weights = vec![vec![1.0; edges.len()]; config.n_observed];

    let instance = ProblemInstance {
        observer,
        observed,
        bearings: bearings.sequences.clone(),
        edges,
        weights,
    };
    instance.validate()?;

    let a1 = &scene.observer_global[0];
    let rotations: Vec<Matrix3<f64>> = scene
        .observed_global
        .iter()
        .map(|g| a1.rotation.transpose() * g[0].rotation)
        .collect();
    let translations: Vec<Vector3<f64>> = scene
        .observed_global
        .iter()
        .map(|g| a1.rotation.transpose() * (g[0].translation - a1.translation))
        .collect();
    let biases = config
        .inner_biases
        .iter()
        .map(|b| Vector3::from_row_slice(b))
        .collect();

    let gt = GroundTruth {
        assignment: bearings.assignment.clone(),
        scales: config.scale_ratios.clone(),
        rotations,
        translations,
        biases,
        distances: bearings.distances.clone(),
    };
    Ok((instance, gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation;
    use crate::lifting;
    use approx::assert_relative_eq;

    #[test]
    fn quarter_turn_positions_analytic() {
        let config = SceneConfig {
            n_observed: 1,
            n_samples: 4,
            observer_path: RobotPath {
                center: [0.0; 3],
                radius: 1.0,
                angular_step: std::f64::consts::FRAC_PI_2,
                phase: 0.0,
                roll_amplitude: 0.0,
                roll_frequency: 0.0,
                roll_phase: 0.0,
                epicycle_radius: 0.0,
                epicycle_step: 0.0,
                epicycle_phase: 0.0,
            },
            observed_paths: vec![RobotPath {
                center: [5.0, 0.0, 0.0],
                radius: 1.0,
                angular_step: 0.3,
                phase: 0.0,
                roll_amplitude: 0.0,
                roll_frequency: 0.0,
                roll_phase: 0.0,
                epicycle_radius: 0.0,
                epicycle_step: 0.0,
                epicycle_phase: 0.0,
            }],
            landscape: vec![],
            inner_biases: vec![[0.0; 3]],
            scale_ratios: vec![1.0],
            sigma: 0.0,
            seed: 0,
        };
        let scene = generate_scene(&config).unwrap();
        let expect = [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
        ];
        for (pose, e) in scene.observer_global.iter().zip(expect) {
            assert_relative_eq!(pose.translation, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn orientation_faces_finite_difference_velocity() {
        // Smooth path so the two-sample central difference is a faithful
        // velocity oracle; banking is on since it must not affect heading.
        let mut config = SceneConfig::standard(1, 80, 0.0, 5);
        config.observer_path.angular_step = 0.05;
        config.observer_path.epicycle_radius = 0.0;
        config.landscape = vec![SinusoidTerm {
            amplitude: 0.5,
            wave: [0.08, -0.05],
            phase: 0.3,
        }];
        let scene = generate_scene(&config).unwrap();
        for j in 1..79 {
            let fd = (scene.observer_global[j + 1].translation
                - scene.observer_global[j - 1].translation)
                / 2.0;
            let forward = scene.observer_global[j].rotation.column(0).into_owned();
            let angle = forward.angle(&fd.normalize());
            assert!(angle < 1e-2, "angle {angle} at j={j}");
        }
    }

    #[test]
    fn scenes_are_seed_deterministic() {
        let a = generate_scene(&SceneConfig::standard(2, 10, 0.1, 77)).unwrap();
        let b = generate_scene(&SceneConfig::standard(2, 10, 0.1, 77)).unwrap();
        for (p, q) in a.observer_global.iter().zip(&b.observer_global) {
            assert_eq!(p.rotation, q.rotation);
            assert_eq!(p.translation, q.translation);
        }
        let sa = synthesize_bearings(&a).unwrap();
        let sb = synthesize_bearings(&b).unwrap();
        assert_eq!(sa.assignment, sb.assignment);
        for (x, y) in sa.sequences.iter().zip(&sb.sequences) {
            assert_eq!(x.bearings, y.bearings);
        }
    }

    #[test]
    fn bearing_points_at_target_analytic() {
        // Observer fixed at origin with identity orientation, target feature
        // straight up.
        let mut config = SceneConfig::standard(1, 2, 0.0, 1);
        config.inner_biases = vec![[0.0; 3]];
        let mut scene = generate_scene(&config).unwrap();
        scene.observer_global = vec![Pose::identity(), Pose::identity()];
        scene.observed_global = vec![vec![
            Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 5.0)),
            Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 5.0)),
        ]];
        let synth = synthesize_bearings(&scene).unwrap();
        assert_relative_eq!(
            synth.sequences[0].bearings[0],
            Vector3::new(0.0, 0.0, 1.0),
            epsilon = 1e-12
        );
        assert_relative_eq!(synth.distances[0][0], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn noiseless_magnitude_equals_distance_truth() {
        let config = SceneConfig::standard(2, 8, 0.0, 12);
        let scene = generate_scene(&config).unwrap();
        let synth = synthesize_bearings(&scene).unwrap();
        for (x, seq) in synth.sequences.iter().enumerate() {
            let y = synth.assignment[x];
            let bias = Vector3::from_row_slice(&config.inner_biases[y]);
            for j in 0..config.n_samples {
                let obs = &scene.observer_global[j];
                let tgt = &scene.observed_global[y][j];
                let raw = obs.rotation.transpose()
                    * (tgt.translation + tgt.rotation * bias - obs.translation);
                assert_relative_eq!(raw.norm(), synth.distances[x][j], epsilon = 1e-12);
                assert_relative_eq!(raw.normalize(), seq.bearings[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn noise_factor_mean_is_one() {
        // The multiplicative factor has mean 1: recover it from bearings of
        // a controlled geometry where the factor is observable.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = 0.3;
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| 1.0 + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn consecutive_edges_count() {
        let edges = build_edges(EdgeStrategy::Consecutive, 21, 0);
        assert_eq!(edges.len(), 20);
        assert!(formulation::check_corank_condition(1, edges.len()));
    }

    #[test]
    fn noise_free_instance_admits_zero_cost_point() {
        for n_robots in [1, 2, 3] {
            let config = SceneConfig::standard(n_robots, 10, 0.0, 99);
            let scene = generate_scene(&config).unwrap();
            let synth = synthesize_bearings(&scene).unwrap();
            let (instance, gt) = make_instance(&scene, &synth, EdgeStrategy::Consecutive).unwrap();
            let c = formulation::build_cost(&instance);
            let x = gt.stacked_x(&instance.layout());
            let cost = (x.transpose() * &c * &x)[(0, 0)];
            assert!(cost.abs() < 1e-9, "N={n_robots}: cost {cost:.3e}");

            // The lifted point is feasible for every emitted constraint.
            let layout = lifting::layout(n_robots).unwrap();
            let z = lifting::lift_ground_truth(&layout, &gt.theta(), &gt.robot_states()).unwrap();
            let constraints =
                lifting::build_constraints(&layout, &lifting::ConstraintOptions::default());
            for c in &constraints {
                let v = c.eval(&z);
                assert!(
                    (v - c.rhs).abs() < 1e-10,
                    "constraint {:?} violated by {:.3e}",
                    c.tag,
                    (v - c.rhs).abs()
                );
            }
        }
    }

    #[test]
    fn shuffle_is_uniform_over_permutations() {
        // Chi-square over the 6 permutations of N=3, 10k seeds.
        let mut counts = std::collections::HashMap::new();
        let trials = 10_000;
        for seed in 0..trials {
            let config = SceneConfig::standard(3, 2, 0.0, seed);
            let scene = generate_scene(&config).unwrap();
            let synth = synthesize_bearings(&scene).unwrap();
            *counts.entry(synth.assignment.clone()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        let expected = trials as f64 / 6.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 99.9th percentile of chi-square with 5 dof is 20.5.
        assert!(chi2 < 25.0, "chi2 {chi2}");
    }
}
