//! Runtime and verification engine for planning-driven active perception
//! over very large images.

pub mod agent;
pub mod api;
pub mod corpus;
pub mod evidence;
pub mod geometry;
pub mod imagetool;
pub mod plan;
pub mod reward;
pub mod task;
pub mod trajectory;
