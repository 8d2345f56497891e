//! Mesh-free RBF collocation with three boundary-control gradient strategies:
//! continuous adjoints, reverse-mode differentiation through the discrete
//! solver, and physics-informed neural networks.

pub mod autodiff;
pub mod linalg;
pub mod optim;
pub mod pointcloud;
pub mod rbf;
pub mod problems;
pub mod control;
pub mod io;
