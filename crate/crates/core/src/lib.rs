//! Segregated minimal configurations for the half-Laplacian, computed through
//! the harmonic extension to `R^{n+1}_+`, together with the free-boundary
//! diagnostics built on top of them.

pub mod almgren;
pub mod blowup;
pub mod error;
pub mod flatness;
pub mod grid;
pub mod io;
pub mod linearized;
pub mod numerics;
pub mod profiles;
pub mod solver;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Configuration, ExtensionGrid, Mode, QuadratureConfig, ScalarField};
pub use profiles::{HalfPlaneProfile, Orientation, Sampler, SubsolutionParams};
