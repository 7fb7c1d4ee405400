pub mod cli;
pub mod eval;
pub mod llm;
pub mod metrics;
pub mod rng;
pub mod search;
pub mod skill;
pub mod voxel;
