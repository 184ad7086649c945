//! Synthesis, refinement, verification and compression of tabletop manipulation
//! episodes.

pub mod assets;
pub mod correspondence;
pub mod layout_opt;
pub mod math;
pub mod providers;
pub mod scene;
pub mod seed;
pub mod topview;
pub mod subtask;
pub mod verification;
pub mod compression;
