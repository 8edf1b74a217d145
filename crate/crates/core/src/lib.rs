//! Nodal discontinuous Galerkin unit-cell solver for nanostructured
//! photoconductive devices: a Poisson / drift-diffusion steady-state solver
//! driven by Gummel iteration and a multirate Maxwell / drift-diffusion
//! transient co-simulation.

pub mod coupler;
pub mod dd_steady;
pub mod dd_td;
pub mod dgcore;
pub mod linalg;
pub mod materials;
pub mod maxwell_td;
pub mod mesh;
pub mod poisson;
pub mod units;
pub mod vtk;
