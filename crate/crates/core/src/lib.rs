//! Channel models for molecular communication via diffusion.
//!
//! The crate evaluates the free-diffusion pulse response and the
//! gravity-corrected vertical channel model
//!
//! ```text
//! f(t) = a / sqrt(t) * exp(-b d^2 / t) - e t,    t > 0
//! ```
//!
//! fits `(a, b, e)` to sensor traces with a Levenberg-Marquardt solver,
//! preprocesses traces (baseline, peak normalization, windowing,
//! resampling, trial averaging) and validates the closed forms against a
//! seeded Monte Carlo random walk.
//!
//! ```
//! use mcchannel::channel::{peak_time, vertical_response, VerticalChannelParams};
//!
//! let p = VerticalChannelParams::new(1.8788, 60.4567, 0.0301, 0.1).unwrap();
//! let y = vertical_response(&p, 1.0).unwrap();
//! assert!((y - 0.99625).abs() < 1e-4);
//! let tp = peak_time(&p).unwrap();
//! assert!(tp > 1.0 && tp < 1.3);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod commands;
pub mod error;
pub mod fit;
pub mod manifest;
pub mod search;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};

/// Constants from the reference experiment (isopropyl alcohol, 10 cm link).
pub mod reference {
    /// Fitted amplitude of the vertical model.
    pub const A: f64 = 1.8788;
    /// Fitted spread of the vertical model.
    pub const B: f64 = 60.4567;
    /// Fitted gravity slope of the vertical model.
    pub const E: f64 = 0.0301;
    /// Distance at which the reference coefficients reproduce the measured
    /// peak near 1.2 s. The coefficients were fitted with the 10 cm link
    /// expressed in meters; `b` absorbs the unit.
    pub const FIT_DISTANCE: f64 = 0.1;
    /// Transmitter to receiver distance, cm.
    pub const DISTANCE_CM: f64 = 10.0;
    /// Diffusion coefficient of isopropyl alcohol in air, cm^2/s.
    pub const DIFFUSION_COEFFICIENT: f64 = 0.0993;
    /// Length of the fitting window, s.
    pub const FIT_WINDOW_S: f64 = 11.0;
    /// Trials averaged per experiment.
    pub const TRIALS: usize = 6;
}
