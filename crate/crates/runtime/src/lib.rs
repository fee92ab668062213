//! In-process publish/subscribe runtime for execution plans.
//!
//! A [`bus::Bus`] carries stamped messages between topics. [`node::run_node`]
//! subscribes a node to its input topics, starts one thread per plan worker,
//! and fires runs according to the node's activation pattern: on a timer,
//! on every input, on one trigger topic, or on timestamp-matched input sets
//! ([`sync`]).

pub mod bus;
pub mod clock;
pub mod node;
pub mod pin;
pub mod sync;

use blockflow_core::planner::PlanError;
use thiserror::Error;

pub use bus::{Bus, BusError, Envelope, Message, Publisher, Subscription};
pub use node::{run_node, run_node_with, stop_node, NodeHandle, NodeOptions, NodeStats, Pinning, RunResult};

#[derive(Debug, Error, PartialEq)]
pub enum RuntimeError {
    #[error("plan deadlocks; workers stuck at steps {0:?}")]
    PlanDeadlocked(Vec<usize>),
    #[error("binding missing: {0}")]
    BindingMissing(String),
    #[error("thread pinning unsupported: {0}")]
    PinUnsupported(String),
    #[error("invalid node config: {0}")]
    InvalidConfig(String),
    #[error("invalid cost profile: {0}")]
    InvalidProfile(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Bus(#[from] BusError),
}
