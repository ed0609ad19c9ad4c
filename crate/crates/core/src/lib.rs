//! Biplanar X-ray volume reconstruction with an implicit neural field that
//! jointly predicts voxel intensity and anatomical labels.

pub mod autodiff;
pub mod cli;
pub mod encoder;
pub mod eval;
pub mod field;
pub mod kv;
pub mod projector;
pub mod train;
pub mod volume;
