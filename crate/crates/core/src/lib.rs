//! Exact simulation of twisting-echo atom interferometry.
//!
//! The crate models `N` two-level atoms in the symmetric Dicke sector and the
//! echo sequence "twist, imprint a phase, untwist, read out" for two-axis
//! countertwisting (TACT) and one-axis twisting (OAT). On top of the state
//! evolution it provides
//!
//! - outcome distributions with exact phase derivatives, Gaussian detection
//!   noise, and classical/quantum Fisher information ([`metrology`]),
//! - the closed-form one-mode (quadrature) model of the TACT echo ([`one_mode`]),
//! - a three-mode spinor-condensate realization of the echo ([`spinor`]),
//! - alignment/readout optimizations of the OAT echo ([`oat_opt`]).

pub mod error;
pub mod expm;
pub mod metrology;
pub mod oat_opt;
pub mod one_mode;
pub mod optimize;
pub mod protocols;
pub mod spin;
pub mod spinor;

pub use error::{Error, Result};
pub use spin::{
    build_spin_operator, build_twisting_hamiltonian, Axis, BandedOperator, DickeState, SpinComponent,
    SpinMoments, SpinSystem, TwistingKind, TwistingParams,
};
