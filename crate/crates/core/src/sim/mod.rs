// SPDX-License-Identifier: Apache-2.0

//! Discrete-event simulation of devices, fog servers and the policies that
//! place and migrate their modules.

mod engine;
mod kernel;
pub mod metrics;
pub mod mobility;
pub mod tasks;

pub use engine::{run, RunOptions, RunOutput, SimError};
pub use kernel::EventQueue;
pub use metrics::Metrics;
