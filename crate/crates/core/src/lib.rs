//! Translational quantum states of a cold atom held near a solid surface,
//! and the phonon processes that shuffle population between them.
//!
//! The atom sits in a one-dimensional well formed by an exponential wall
//! close to the surface and a long attractive `-C3/x^3` tail.  Vibrations
//! of the solid couple to the atom through the gradient of that potential,
//! driving transitions between bound levels, capture of slow free atoms
//! into the well, and heating of free atoms that never bind.  This crate
//! computes the bound and free states, the coupling matrix elements, the
//! resulting rate coefficients and level shifts, and integrates the reduced
//! density matrix over level subsets.
//!
//! Unit conventions (see [`units`]): energies are stored internally as
//! angular frequencies in rad/s, lengths in meters, times in seconds.
//! Config files and reports use ordinary frequencies (Hz and friends), so
//! factors of two pi live only at the I/O boundary.

pub mod catalog;
pub mod config;
pub mod coupling;
pub mod dynamics;
pub mod grid;
pub mod numerov;
pub mod potential;
pub mod quad;
pub mod rates;
pub mod shifts;
pub mod spectrum;
pub mod units;

pub use config::Config;
pub use potential::SurfacePotential;
pub use rates::DebyeSolid;
pub use catalog::SpectrumCatalog;

/// Crate-wide error type.  The CLI maps the variants onto exit codes, so
/// keep configuration, numerical and I/O failures distinguishable.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad configuration input: unparsable file, unknown key or unit,
    /// value out of its allowed range.
    #[error("config: {0}")]
    Config(String),
    /// A numerical routine failed to converge or was asked for something
    /// outside its domain.
    #[error("numerics: {0}")]
    Numerics(String),
    /// Filesystem trouble while reading or writing artifacts.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerics(msg: impl Into<String>) -> Self {
        Error::Numerics(msg.into())
    }
}
