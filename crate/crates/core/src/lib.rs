//! Block-diagram models, core allocation and per-worker execution plans.
//!
//! The pipeline is: parse or generate a [`model::BlockGraph`], annotate block
//! costs and map blocks onto cores ([`costalloc`]), then turn the mapping into
//! an [`planner::ExecutionPlan`] of Compute/Send/Recv steps per worker.

pub mod costalloc;
pub mod model;
pub mod node;
pub mod planner;
pub mod reference;
