#![no_std]
//! Neural SDF radiance field with a view-independent global color and a
//! view-dependent relight residual, plus vertex-colored mesh extraction.

extern crate alloc;

pub mod dataset;
pub mod eval;
pub mod fields;
pub mod geometry;
pub mod losses;
pub mod mesher;
pub mod nn;
pub mod optim;
pub mod renderer;
pub mod synth;
pub mod trainer;
