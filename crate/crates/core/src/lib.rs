//! Computational laboratory for the shifted bilinear Hilbert transform:
//! exact tri-tile combinatorics, wave-packet discretization, tree selection,
//! kernel and multiplier decompositions, variation functionals and seeded
//! experiments.

pub mod decompose;
pub mod dyadic;
pub mod forest;
pub mod harness;
pub mod signal;
pub mod variation;
pub mod wavepackets;
