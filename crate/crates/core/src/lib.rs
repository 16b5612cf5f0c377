//! Stochastic chemotaxis-Navier-Stokes simulator.
//!
//! Bacteria (`n`) swim up oxygen (`c`) gradients inside an incompressible,
//! buoyancy-driven fluid (`u`). Oxygen is stirred by Stratonovich transport
//! noise and the velocity carries multiplicative noise. Fields live on a
//! staggered (MAC) grid on a rectangle with no-slip walls and zero-flux
//! scalar boundaries.
//!
//! The crate is organised bottom-up:
//! [`grid`] (fields, quadrature), [`operators`] (discrete transport and
//! elliptic operators), [`noise`] (noise fields and replayable increments),
//! [`dynamics`] (the semi-implicit Euler-Maruyama stepper), [`diagnostics`]
//! (invariants, entropy, admissibility gate) and [`experiments`] (twin runs,
//! refinement studies, ensembles).

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod initial;
pub mod noise;
pub mod operators;
pub mod spectral;

pub use error::{Result, SimError};
