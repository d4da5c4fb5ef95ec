//! Instance file format: JSON, schema-versioned, human-diffable.
//!
//! Floats round-trip bit-exactly because serialization uses the shortest
//! decimal representation that parses back to the same value. Rotations are
//! stored row-major.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{CertlocError, Result};
use crate::formulation::ProblemInstance;
use crate::geometry::{BearingSequence, Pose, Trajectory};
use crate::simulation::GroundTruth;

pub const SCHEMA_VERSION: u32 = 1;

/// Orthonormality tolerance applied when validating loaded rotations.
pub const LOAD_ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub label: String,
    pub timestamps: Vec<usize>,
    /// Row-major 3x3 rotations.
    pub rotations: Vec<[f64; 9]>,
    pub translations: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BearingRecord {
    pub sequence_index: usize,
    pub bearings: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotTruthRecord {
    pub scale: f64,
    pub rotation: [f64; 9],
    pub bias: [f64; 3],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    /// `permutation[x]` = robot index of sequence `x`.
    pub permutation: Vec<usize>,
    pub robots: Vec<RobotTruthRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub schema_version: u32,
    pub observer: TrajectoryRecord,
    pub observed: Vec<TrajectoryRecord>,
    pub bearings: Vec<BearingRecord>,
    pub edges: Vec<[usize; 2]>,
    pub weights: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthRecord>,
}

fn rotation_to_row_major(r: &Matrix3<f64>) -> [f64; 9] {
    [
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
    ]
}

fn rotation_from_row_major(v: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8])
}

fn trajectory_to_record(t: &Trajectory) -> TrajectoryRecord {
    TrajectoryRecord {
        label: t.robot_label.clone(),
        timestamps: t.timestamps.clone(),
        rotations: t.poses.iter().map(|p| rotation_to_row_major(&p.rotation)).collect(),
        translations: t
            .poses
            .iter()
            .map(|p| [p.translation.x, p.translation.y, p.translation.z])
            .collect(),
    }
}

fn record_to_trajectory(r: &TrajectoryRecord, path: &str) -> Result<Trajectory> {
    if r.rotations.len() != r.timestamps.len() || r.translations.len() != r.timestamps.len() {
        return Err(CertlocError::InvalidInput(format!(
            "{path}: rotations/translations/timestamps lengths differ"
        )));
    }
    let poses: Vec<Pose> = r
        .rotations
        .iter()
        .zip(&r.translations)
        .map(|(rot, t)| {
            Pose::new(
                rotation_from_row_major(rot),
                Vector3::new(t[0], t[1], t[2]),
            )
        })
        .collect();
    for (k, p) in poses.iter().enumerate() {
        if !p.rotation_valid(LOAD_ROTATION_TOL) {
            return Err(CertlocError::InvalidInput(format!(
                "{path}.rotations[{k}]: not orthonormal within {LOAD_ROTATION_TOL:.0e}"
            )));
        }
    }
    Ok(Trajectory {
        robot_label: r.label.clone(),
        timestamps: r.timestamps.clone(),
        poses,
    })
}

impl InstanceFile {
    pub fn from_instance(instance: &ProblemInstance, gt: Option<&GroundTruth>) -> Self {
        InstanceFile {
            schema_version: SCHEMA_VERSION,
            observer: trajectory_to_record(&instance.observer),
            observed: instance.observed.iter().map(trajectory_to_record).collect(),
            bearings: instance
                .bearings
                .iter()
                .map(|b| BearingRecord {
                    sequence_index: b.sequence_index,
                    bearings: b.bearings.iter().map(|v| [v.x, v.y, v.z]).collect(),
                })
                .collect(),
            edges: instance.edges.iter().map(|&(a, b)| [a, b]).collect(),
            weights: instance.weights.clone(),
            ground_truth: gt.map(|g| GroundTruthRecord {
                permutation: g.assignment.clone(),
                robots: (0..g.scales.len())
                    .map(|y| RobotTruthRecord {
                        scale: g.scales[y],
                        rotation: rotation_to_row_major(&g.rotations[y]),
                        bias: [g.biases[y].x, g.biases[y].y, g.biases[y].z],
                        translation: [
                            g.translations[y].x,
                            g.translations[y].y,
                            g.translations[y].z,
                        ],
                    })
                    .collect(),
                distances: Some(g.distances.clone()),
            }),
        }
    }

    /// Validates and converts into an in-memory instance (plus ground truth
    /// when the file carries one).
    pub fn into_instance(&self) -> Result<(ProblemInstance, Option<GroundTruth>)> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CertlocError::InvalidInput(format!(
                "schema_version: expected {SCHEMA_VERSION}, found {}",
                self.schema_version
            )));
        }
        let observer = record_to_trajectory(&self.observer, "observer")?;
        let observed: Vec<Trajectory> = self
            .observed
            .iter()
            .enumerate()
            .map(|(k, r)| record_to_trajectory(r, &format!("observed[{k}]")))
            .collect::<Result<_>>()?;
        let bearings: Vec<BearingSequence> = self
            .bearings
            .iter()
            .map(|b| BearingSequence {
                sequence_index: b.sequence_index,
                bearings: b
                    .bearings
                    .iter()
                    .map(|v| Vector3::new(v[0], v[1], v[2]))
                    .collect(),
            })
            .collect();
        let instance = ProblemInstance {
            observer,
            observed,
            bearings,
            edges: self.edges.iter().map(|e| (e[0], e[1])).collect(),
            weights: self.weights.clone(),
        };
        instance.validate()?;

        let gt = match &self.ground_truth {
            None => None,
            Some(g) => {
                let n = instance.observed.len();
                if g.permutation.len() != n || g.robots.len() != n {
                    return Err(CertlocError::InvalidInput(
                        "ground_truth: permutation/robots sizes do not match robot count".into(),
                    ));
                }
                Some(GroundTruth {
                    assignment: g.permutation.clone(),
                    scales: g.robots.iter().map(|r| r.scale).collect(),
                    rotations: g
                        .robots
                        .iter()
                        .map(|r| rotation_from_row_major(&r.rotation))
                        .collect(),
                    translations: g
                        .robots
                        .iter()
                        .map(|r| Vector3::new(r.translation[0], r.translation[1], r.translation[2]))
                        .collect(),
                    biases: g
                        .robots
                        .iter()
                        .map(|r| Vector3::new(r.bias[0], r.bias[1], r.bias[2]))
                        .collect(),
                    distances: g.distances.clone().unwrap_or_default(),
                })
            }
        };
        Ok((instance, gt))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{self, EdgeStrategy, SceneConfig};

    fn sample_file() -> InstanceFile {
        let config = SceneConfig::standard(2, 8, 0.05, 4);
        let scene = simulation::generate_scene(&config).unwrap();
        let synth = simulation::synthesize_bearings(&scene).unwrap();
        let (instance, gt) =
            simulation::make_instance(&scene, &synth, EdgeStrategy::Consecutive).unwrap();
        InstanceFile::from_instance(&instance, Some(&gt))
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let file = sample_file();
        let text = serde_json::to_string_pretty(&file).unwrap();
        let reparsed: InstanceFile = serde_json::from_str(&text).unwrap();
        let text2 = serde_json::to_string_pretty(&reparsed).unwrap();
        assert_eq!(text, text2);

        let (a, _) = file.into_instance().unwrap();
        let (b, _) = reparsed.into_instance().unwrap();
        for (p, q) in a.observer.poses.iter().zip(&b.observer.poses) {
            assert_eq!(p.rotation, q.rotation);
            assert_eq!(p.translation, q.translation);
        }
    }

    #[test]
    fn rejects_non_orthonormal_rotation_with_field_path() {
        let mut file = sample_file();
        file.observed[1].rotations[3][0] += 0.01;
        match file.into_instance() {
            Err(CertlocError::InvalidInput(msg)) => {
                assert!(msg.contains("observed[1]"), "message: {msg}");
                assert!(msg.contains("rotations[3]"), "message: {msg}");
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_schema_version() {
        let mut file = sample_file();
        file.schema_version = 99;
        assert!(file.into_instance().is_err());
    }
}
