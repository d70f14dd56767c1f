//! Non-adiabatic transitions in PT-symmetric two-level systems driven
//! through exceptional points by polynomial sweeps.

pub mod analytic;
pub mod eps;
pub mod integrator;
pub mod lattice;
pub mod model;
pub mod ode;
pub mod poly;
pub mod quad;
pub mod specfun;
