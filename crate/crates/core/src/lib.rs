//! Query-driven collective entity resolution.

pub mod blocking;
pub mod corpus;
pub mod engine;
pub mod eval;
pub mod features;
pub mod influence;
pub mod model;
pub mod pipeline;
pub mod samplers;
pub mod scheduler;
pub mod synth;
