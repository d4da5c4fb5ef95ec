//! Batched experiment drivers: scoring against ground truth, benchmark
//! sweeps over robot counts, noise levels and seeds, and the initial-value
//! sensitivity grid for the local optimizers.
//!
//! Trials are independent and run in a work pool when the `parallel`
//! feature is on; rows are collected in deterministic scenario order either
//! way, so the emitted CSV is reproducible apart from the timing columns.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, LocalSolveSettings};
use crate::error::{CertlocError, Result};
use crate::formulation::RobotState;
use crate::geometry::{axis_angle, geodesic_distance};
use crate::recovery::{self, RecoveredSolution, SolveOptions};
use crate::sdp::Variant;
use crate::simulation::{self, EdgeStrategy, GroundTruth, SceneConfig};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Error metrics of a recovered state against the ground truth, averaged
/// over robots.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Mean geodesic rotation error, radians.
    pub rotation_error: f64,
    /// Mean Euclidean translation error, meters.
    pub translation_error: f64,
    /// Mean absolute scale-ratio error.
    pub scale_error: f64,
    pub permutation_correct: bool,
}

/// Scores per-robot estimates against ground truth. The assignment is
/// compared for exactness; pose errors are averaged over robots.
pub fn score(
    assignment: &[usize],
    robots: &[RobotState],
    translations: &[nalgebra::Vector3<f64>],
    gt: &GroundTruth,
) -> Result<ScoreReport> {
    let n = gt.scales.len();
    if robots.len() != n || translations.len() != n || assignment.len() != n {
        return Err(CertlocError::InvalidInput(
            "score: estimate and ground truth sizes differ".into(),
        ));
    }
    let mut rot = 0.0;
    let mut trans = 0.0;
    let mut scale = 0.0;
    for y in 0..n {
        rot += geodesic_distance(&robots[y].rotation, &gt.rotations[y]);
        trans += (translations[y] - gt.translations[y]).norm();
        scale += (robots[y].scale - gt.scales[y]).abs();
    }
    Ok(ScoreReport {
        rotation_error: rot / n as f64,
        translation_error: trans / n as f64,
        scale_error: scale / n as f64,
        permutation_correct: assignment == gt.assignment,
    })
}

pub fn score_solution(solution: &RecoveredSolution, gt: &GroundTruth) -> Result<ScoreReport> {
    let robots: Vec<RobotState> = solution
        .robots
        .iter()
        .map(|r| RobotState {
            scale: r.scale,
            rotation: r.rotation_matrix(),
            bias: r.bias_vector(),
        })
        .collect();
    let translations: Vec<nalgebra::Vector3<f64>> = solution
        .robots
        .iter()
        .map(|r| r.translation_vector())
        .collect();
    score(&solution.assignment, &robots, &translations, gt)
}

/// Estimation method of one benchmark row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// The certified relaxation pipeline.
    Sdp,
    /// Alternating minimization, random init, true assignment.
    Am,
    /// Alternating minimization initialized at the ground truth.
    AmGt,
    /// Damped Gauss-Newton, random init, true assignment.
    Lm,
    /// Damped Gauss-Newton initialized at the ground truth.
    LmGt,
    /// Alternating minimization with assignment enumeration.
    AmAnonymous,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Sdp => "sdp",
            Method::Am => "am",
            Method::AmGt => "am-gt",
            Method::Lm => "lm",
            Method::LmGt => "lm-gt",
            Method::AmAnonymous => "am-c",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s.to_ascii_lowercase().as_str() {
            "sdp" => Some(Method::Sdp),
            "am" => Some(Method::Am),
            "am-gt" => Some(Method::AmGt),
            "lm" => Some(Method::Lm),
            "lm-gt" => Some(Method::LmGt),
            "am-c" | "am-anonymous" => Some(Method::AmAnonymous),
            _ => None,
        }
    }
}

/// One CSV row. Columns, in order:
/// `scenario,method,variant,n_robots,n_samples,sigma,seed,cost,
/// rotation_error_rad,translation_error_m,scale_error,permutation_correct,
/// eig_ratio,duality_gap,certified,build_time_s,solve_time_s`.
/// Timing columns vary run to run; everything else is seed-deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub scenario: String,
    pub method: String,
    pub variant: String,
    pub n_robots: usize,
    pub n_samples: usize,
    pub sigma: f64,
    pub seed: u64,
    pub cost: f64,
    pub rotation_error_rad: f64,
    pub translation_error_m: f64,
    pub scale_error: f64,
    pub permutation_correct: bool,
    pub eig_ratio: f64,
    pub duality_gap: f64,
    pub certified: bool,
    pub build_time_s: f64,
    pub solve_time_s: f64,
}

pub const CSV_HEADER: &str = "scenario,method,variant,n_robots,n_samples,sigma,seed,cost,rotation_error_rad,translation_error_m,scale_error,permutation_correct,eig_ratio,duality_gap,certified,build_time_s,solve_time_s";

impl BenchmarkRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.scenario,
            self.method,
            self.variant,
            self.n_robots,
            self.n_samples,
            self.sigma,
            self.seed,
            self.cost,
            self.rotation_error_rad,
            self.translation_error_m,
            self.scale_error,
            self.permutation_correct,
            self.eig_ratio,
            self.duality_gap,
            self.certified,
            self.build_time_s,
            self.solve_time_s
        )
    }
}

pub fn to_csv(records: &[BenchmarkRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

/// Sweep definition for [`run_benchmark`].
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub robot_counts: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub trials: usize,
    /// Samples per trajectory; `None` picks `18 N + 4` per robot count,
    /// which leaves a margin over the measurement-count condition.
    pub n_samples: Option<usize>,
    pub methods: Vec<Method>,
    pub variant: Variant,
    pub edge_strategy: EdgeStrategy,
    pub base_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            robot_counts: vec![1, 2],
            sigmas: vec![0.0],
            trials: 10,
            n_samples: None,
            methods: vec![Method::Sdp],
            variant: Variant::D,
            edge_strategy: EdgeStrategy::Consecutive,
            base_seed: 1,
        }
    }
}

/// One planned trial.
#[derive(Debug, Clone)]
pub struct TrialSpec {
    pub scenario: String,
    pub n_robots: usize,
    pub n_samples: usize,
    pub sigma: f64,
    pub seed: u64,
    pub method: Method,
    pub variant: Variant,
    pub edge_strategy: EdgeStrategy,
}

pub fn default_samples(n_robots: usize) -> usize {
    18 * n_robots + 4
}

/// Expands a sweep into the ordered trial list. Each (robots, sigma, trial)
/// cell runs every method on the same instance seed, so methods are
/// directly comparable row by row.
pub fn plan(config: &SweepConfig) -> Vec<TrialSpec> {
    let mut out = Vec::new();
    for &n in &config.robot_counts {
        let n_samples = config.n_samples.unwrap_or_else(|| default_samples(n));
        for &sigma in &config.sigmas {
            for t in 0..config.trials {
                let seed = config
                    .base_seed
                    .wrapping_add(t as u64)
                    .wrapping_add(1000 * n as u64)
                    .wrapping_add((sigma * 1e4) as u64 * 100_000);
                for &method in &config.methods {
                    out.push(TrialSpec {
                        scenario: format!("n{n}-sigma{sigma}-t{t}"),
                        n_robots: n,
                        n_samples,
                        sigma,
                        seed,
                        method,
                        variant: config.variant,
                        edge_strategy: config.edge_strategy,
                    });
                }
            }
        }
    }
    out
}

/// Runs one planned trial.
pub fn run_trial(spec: &TrialSpec) -> Result<BenchmarkRecord> {
    let config = SceneConfig::standard(spec.n_robots, spec.n_samples, spec.sigma, spec.seed);
    let scene = simulation::generate_scene(&config)?;
    let synth = simulation::synthesize_bearings(&scene)?;
    let (instance, gt) = simulation::make_instance(&scene, &synth, spec.edge_strategy)?;

    let mut record = BenchmarkRecord {
        scenario: spec.scenario.clone(),
        method: spec.method.label().to_string(),
        variant: spec.variant.label().to_string(),
        n_robots: spec.n_robots,
        n_samples: spec.n_samples,
        sigma: spec.sigma,
        seed: spec.seed,
        cost: f64::NAN,
        rotation_error_rad: f64::NAN,
        translation_error_m: f64::NAN,
        scale_error: f64::NAN,
        permutation_correct: false,
        eig_ratio: f64::NAN,
        duality_gap: f64::NAN,
        certified: false,
        build_time_s: 0.0,
        solve_time_s: 0.0,
    };

    match spec.method {
        Method::Sdp => {
            let options = SolveOptions {
                variant: spec.variant,
                ..Default::default()
            };
            // A failed conic solve yields an uncertified row, not a dead
            // sweep; robustness studies need the row either way.
            match recovery::solve_mutual_localization(&instance, &options) {
                Ok(solution) => {
                    let report = score_solution(&solution, &gt)?;
                    record.cost = solution.diagnostics.recovered_cost;
                    record.rotation_error_rad = report.rotation_error;
                    record.translation_error_m = report.translation_error;
                    record.scale_error = report.scale_error;
                    record.permutation_correct = report.permutation_correct;
                    record.eig_ratio = solution.certificate.eig_ratio;
                    record.duality_gap = solution.certificate.relative_gap;
                    record.certified = solution.certificate.certified;
                    record.build_time_s = solution.diagnostics.build_time;
                    record.solve_time_s = solution.diagnostics.solve_time;
                }
                Err(crate::error::CertlocError::NumericalFailure(_)) => {
                    record.certified = false;
                }
                Err(e) => return Err(e),
            }
        }
        Method::Am | Method::Lm | Method::AmGt | Method::LmGt | Method::AmAnonymous => {
            let settings = LocalSolveSettings::default();
            let started = std::time::Instant::now();
            let result = match spec.method {
                Method::Am | Method::Lm => {
                    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(
                        spec.seed.wrapping_add(0xb41a_5e5e),
                    );
                    let init = baselines::random_rotations(spec.n_robots, &mut rng);
                    if spec.method == Method::Am {
                        baselines::am_solve(&instance, &gt.assignment, &init, &settings)
                    } else {
                        baselines::lm_solve(&instance, &gt.assignment, &init, &settings)
                    }
                }
                Method::AmGt | Method::LmGt => {
                    let states = gt.robot_states();
                    let init: Vec<Matrix3<f64>> = states.iter().map(|s| s.rotation).collect();
                    if spec.method == Method::AmGt {
                        baselines::am_solve_from(
                            &instance,
                            &gt.assignment,
                            &init,
                            Some(&states),
                            &settings,
                        )
                    } else {
                        baselines::lm_solve_from(
                            &instance,
                            &gt.assignment,
                            &init,
                            Some(&states),
                            &settings,
                        )
                    }
                }
                Method::AmAnonymous => {
                    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(
                        spec.seed.wrapping_add(0xb41a_5e5e),
                    );
                    let init = baselines::random_rotations(spec.n_robots, &mut rng);
                    baselines::am_solve_anonymous(&instance, &init, &settings)?
                }
                Method::Sdp => unreachable!(),
            };
            record.solve_time_s = started.elapsed().as_secs_f64();
            // Translations for scoring come from the averaged closed form.
            let translations: Vec<nalgebra::Vector3<f64>> = (0..spec.n_robots)
                .map(|y| {
                    let x_seq = result.assignment.iter().position(|&yy| yy == y).unwrap();
                    recovery::translation(
                        &instance,
                        x_seq,
                        y,
                        result.robots[y].scale,
                        &result.robots[y].rotation,
                        &result.robots[y].bias,
                        &result.distances[x_seq],
                    )
                })
                .collect();
            let report = score(&result.assignment, &result.robots, &translations, &gt)?;
            record.cost = result.final_cost;
            record.rotation_error_rad = report.rotation_error;
            record.translation_error_m = report.translation_error;
            record.scale_error = report.scale_error;
            record.permutation_correct = report.permutation_correct;
        }
    }
    Ok(record)
}

fn run_all<T: Send, F: Fn(&TrialSpec) -> T + Sync>(specs: &[TrialSpec], f: F) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        specs.par_iter().map(|s| f(s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        specs.iter().map(|s| f(s)).collect()
    }
}

/// Runs a sweep; rows come back in plan order regardless of scheduling.
pub fn run_benchmark(config: &SweepConfig) -> Result<Vec<BenchmarkRecord>> {
    let specs = plan(config);
    run_all(&specs, run_trial).into_iter().collect()
}

/// Sequential twin of [`run_benchmark`], always available, used by the
/// bench suite to compare scheduling modes.
pub fn run_benchmark_seq(config: &SweepConfig) -> Result<Vec<BenchmarkRecord>> {
    let specs = plan(config);
    specs.iter().map(run_trial).collect()
}

/// Grid sweep of local-optimizer sensitivity to the initial rotation: the
/// ground-truth rotation is perturbed by roll (about x) and pitch (about y)
/// over `[-pi, pi]`.
#[derive(Debug, Clone)]
pub struct HeatmapConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Grid points per axis.
    pub resolution: usize,
    pub method: Method,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapRecord {
    pub roll: f64,
    pub pitch: f64,
    pub final_cost: f64,
    pub rotation_error_rad: f64,
}

pub const HEATMAP_CSV_HEADER: &str = "roll,pitch,final_cost,rotation_error_rad";

pub fn heatmap_to_csv(records: &[HeatmapRecord]) -> String {
    let mut out = String::from(HEATMAP_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.roll, r.pitch, r.final_cost, r.rotation_error_rad
        ));
    }
    out
}

pub fn run_heatmap(config: &HeatmapConfig) -> Result<Vec<HeatmapRecord>> {
    let scene_config = SceneConfig::standard(1, config.n_samples, 0.0, config.seed);
    let scene = simulation::generate_scene(&scene_config)?;
    let synth = simulation::synthesize_bearings(&scene)?;
    let (instance, gt) = simulation::make_instance(&scene, &synth, EdgeStrategy::Consecutive)?;

    let k = config.resolution;
    let grid: Vec<(f64, f64)> = (0..k)
        .flat_map(|i| {
            (0..k).map(move |j| {
                let step = 2.0 * std::f64::consts::PI / (k.max(2) - 1) as f64;
                (
                    -std::f64::consts::PI + i as f64 * step,
                    -std::f64::consts::PI + j as f64 * step,
                )
            })
        })
        .collect();

    let settings = LocalSolveSettings::default();
    let method = config.method;
    let record_for = |&(roll, pitch): &(f64, f64)| -> HeatmapRecord {
        let perturb = axis_angle(&nalgebra::Vector3::x(), roll)
            * axis_angle(&nalgebra::Vector3::y(), pitch);
        let init = vec![gt.rotations[0] * perturb];
        let result = match method {
            Method::Lm | Method::LmGt => {
                baselines::lm_solve(&instance, &gt.assignment, &init, &settings)
            }
            _ => baselines::am_solve(&instance, &gt.assignment, &init, &settings),
        };
        HeatmapRecord {
            roll,
            pitch,
            final_cost: result.final_cost,
            rotation_error_rad: geodesic_distance(&result.robots[0].rotation, &gt.rotations[0]),
        }
    };

    #[cfg(feature = "parallel")]
    let records: Vec<HeatmapRecord> = grid.par_iter().map(record_for).collect();
    #[cfg(not(feature = "parallel"))]
    let records: Vec<HeatmapRecord> = grid.iter().map(record_for).collect();
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn toy_gt() -> GroundTruth {
        GroundTruth {
            assignment: vec![1, 0],
            scales: vec![1.0, 2.0],
            rotations: vec![Matrix3::identity(), axis_angle(&Vector3::z(), 0.5)],
            translations: vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 2.0, 0.0)],
            biases: vec![Vector3::zeros(), Vector3::zeros()],
            distances: vec![],
        }
    }

    #[test]
    fn score_perfect_recovery_is_zero() {
        let gt = toy_gt();
        let robots: Vec<RobotState> = gt.robot_states();
        let report = score(&gt.assignment, &robots, &gt.translations, &gt).unwrap();
        assert_eq!(report.rotation_error, 0.0);
        assert_eq!(report.translation_error, 0.0);
        assert_eq!(report.scale_error, 0.0);
        assert!(report.permutation_correct);
    }

    #[test]
    fn score_detects_rotation_perturbation() {
        let gt = toy_gt();
        let mut robots = gt.robot_states();
        robots[0].rotation = gt.rotations[0] * axis_angle(&Vector3::x(), 0.1);
        let report = score(&gt.assignment, &robots, &gt.translations, &gt).unwrap();
        // Mean over two robots, one perturbed by 0.1 rad.
        assert!((report.rotation_error - 0.05).abs() < 1e-9);
    }

    #[test]
    fn score_detects_swapped_permutation() {
        let gt = toy_gt();
        let robots = gt.robot_states();
        let swapped = vec![0, 1];
        let report = score(&swapped, &robots, &gt.translations, &gt).unwrap();
        assert!(!report.permutation_correct);
    }

    #[test]
    fn plan_row_count_arithmetic() {
        let config = SweepConfig {
            robot_counts: vec![1, 2, 3],
            sigmas: vec![0.0, 0.1, 0.3, 0.5],
            trials: 20,
            methods: vec![Method::Sdp],
            ..Default::default()
        };
        assert_eq!(plan(&config).len(), 240);
        let two = SweepConfig {
            robot_counts: vec![1, 2],
            sigmas: vec![0.0],
            trials: 3,
            methods: vec![Method::Sdp, Method::Am],
            ..Default::default()
        };
        assert_eq!(plan(&two).len(), 12);
    }

    #[test]
    fn benchmark_baseline_rows_are_deterministic() {
        let config = SweepConfig {
            robot_counts: vec![1],
            sigmas: vec![0.1],
            trials: 2,
            methods: vec![Method::Am, Method::AmGt],
            ..Default::default()
        };
        let a = run_benchmark(&config).unwrap();
        let b = run_benchmark_seq(&config).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.scenario, y.scenario);
            assert_eq!(x.method, y.method);
            assert!(x.cost == y.cost, "{} vs {}", x.cost, y.cost);
            assert!(x.rotation_error_rad == y.rotation_error_rad);
        }
    }

    #[test]
    fn heatmap_has_grid_rows() {
        let records = run_heatmap(&HeatmapConfig {
            n_samples: 10,
            seed: 3,
            resolution: 3,
            method: Method::Am,
        })
        .unwrap();
        assert_eq!(records.len(), 9);
        let csv = heatmap_to_csv(&records);
        assert!(csv.starts_with(HEATMAP_CSV_HEADER));
    }
}
