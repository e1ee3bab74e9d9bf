//! Analytic optical kernels: phase functions and their exact inverse-CDF
//! samplers, free-path sampling, optical depth, and voxel-grid ray traversal.

mod phase;
mod traversal;

pub use phase::{
    phase_hg, phase_rayleigh, sample_hg_cos, sample_hg_direction, sample_rayleigh_cos,
    sample_rayleigh_direction, sample_tau, ScatterSample,
};
pub use traversal::{
    march_to_tau, optical_depth, transmittance, traverse, traverse_to, GridWalker, MarchOutcome,
    Segment, Traversal,
};
