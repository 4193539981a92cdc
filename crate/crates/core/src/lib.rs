//! Additive average Schwarz preconditioners with spectrally enriched coarse
//! spaces for P1 mortar discretizations of `−div(α ∇u) = f` on the unit square.

pub mod assembly;
pub mod coarse_space;
pub mod coefficients;
pub mod experiments;
pub mod error;
pub mod geometry;
pub mod krylov;
pub mod linalg;
pub mod mortar;
pub mod preconditioner;

pub use error::{Error, Result};
