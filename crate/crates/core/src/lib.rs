// SPDX-License-Identifier: Apache-2.0

//! Simulation and policy library for hierarchical fog computing.
//!
//! The crate models a tree of fog servers under a cloud node, IoT
//! applications as DAGs of containerised modules, and a weighted
//! time/energy cost for running them. On top of that it provides a
//! distributed placement policy, a mobility-driven migration policy, two
//! baseline policies, an exact branch-and-bound solver for small instances
//! and a deterministic discrete-event engine that runs them.

pub mod app;
pub mod baselines;
pub mod clustering;
pub mod cost;
pub mod experiment;
pub mod migration;
pub mod oracle;
pub mod placement;
pub mod scenario;
pub mod sim;
pub mod topology;
