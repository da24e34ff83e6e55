//! Random paired tent maps: transfer operators, quarantine cones and
//! Lyapunov spectra of metastable random dynamical systems.

pub mod densities;
pub mod driving;
pub mod error;
pub mod experiments;
pub mod interval_maps;
pub mod lyapunov;
pub mod quarantine;
pub mod scalar;
pub mod ulam;

pub use densities::{BVNormReport, PCDensity};
pub use driving::{DriverKind, DriverOrbit, DriverSpec};
pub use error::{Error, Result};
pub use interval_maps::{HolePair, PairedTentMap};
pub use lyapunov::{BackendKind, CocycleRun, SpectrumReport};
pub use scalar::{Interval, Rational, Scalar};
pub use ulam::UlamMatrix;
