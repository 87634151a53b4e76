//! Desk-scale toolkit for a quadruped that can also fly: reduced-order
//! simulation, trot gaits and stability margins, a friction-aware reference
//! governor, cascaded flight control, and multi-modal roadmap planning with
//! end-to-end mission execution.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod rom;
pub mod gait;
pub mod flight;
pub mod ground;
pub mod planner;
pub mod compare;
pub mod config;
pub mod mission;
