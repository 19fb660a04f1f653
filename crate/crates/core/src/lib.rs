//! Non-rigid structure from motion under orthographic cameras.
//!
//! Recovers a deforming 3D point sequence and per-frame camera corrections from
//! 2D tracks. The solver couples a weighted nuclear-norm prior on spatially
//! re-weighted proxy shapes with temporally smooth Procrustean alignment, and
//! is optimised with a two-phase ADMM scheme.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod init;
pub mod io;
pub mod linalg;
pub mod par;
pub mod pipeline;
pub mod proxy;
pub mod segment;
pub mod solver;
pub mod seqdata;
pub mod synth;
pub mod tpa;

pub use error::{Error, Result};
pub use geometry::{LieVec, Rotation3, RotationSequence};
pub use seqdata::{
    CameraPath, CoordinateTag, MeasurementMatrix, RearrangedShape, ShapeSequence, VisibilityMask,
};
