//! Discrete-time digital twin of a solar-harvesting power management and
//! control system for battery-powered embedded vision devices.
//!
//! The model covers a single-cell Li-ion pack with latching protection, a
//! solar CC/CV charger with constant-voltage MPPT, a USB CC/CV charger with a
//! direct power path, a 5 V boost regulator, a soft-latch power switch driven
//! by button presses and RTC wake pulses, and a duty-cycled vision load.
//! Everything advances on a fixed timestep with an exact per-step energy
//! ledger, so a run is reproducible byte for byte.

pub mod battery;
pub mod control;
pub mod csvio;
pub mod engine;
pub mod error;
pub mod events;
pub mod harvest;
pub mod load;
pub mod powerpath;
pub mod scenario;
pub mod usbcharge;

pub use error::Error;
pub use events::EventSet;

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
