//! Certifiably optimal mutual localization for multi-robot teams.
//!
//! Given an observer robot's odometry, the odometry shared by `N` observed
//! robots (each in its own local frame and map scale), and `N` *anonymous*
//! bearing-measurement sequences, this crate jointly recovers
//!
//! * the measurement-to-robot correspondence (a permutation),
//! * the relative rotation, translation, map-scale ratio and feature offset
//!   of every observed robot,
//!
//! together with a certificate of global optimality. The estimation problem
//! is assembled as a quadratically constrained quadratic program over a
//! lifted variable vector, relaxed to a semidefinite program, solved with a
//! primal-dual interior-point method, and the solution is extracted by
//! rank-one decomposition. The certificate reports the relative duality gap
//! and the second-to-first eigenvalue ratio of the solution block.
//!
//! Modules mirror the pipeline stages: [`geometry`] holds pose primitives,
//! [`simulation`] generates synthetic scenes, [`formulation`] builds the
//! quadratic cost and marginalizes distances, [`lifting`] constructs the
//! lifted variable and its constraints, [`sdp`] relaxes and solves,
//! [`recovery`] extracts and certifies. [`baselines`] provides local
//! optimizers for comparison and [`bench`] drives batched experiments.

pub mod baselines;
pub mod bench;
pub mod error;
pub mod formulation;
pub mod geometry;
pub mod io;
pub mod lifting;
pub mod recovery;
pub mod sdp;
pub mod simulation;

pub use error::CertlocError;
