//! Closed-form channel responses.
//!
//! Two models are provided:
//!
//! * the free-diffusion pulse response in `n` dimensions,
//!   `M / (4 pi D t)^(n/2) * exp(-d^2 / (4 D t))`;
//! * the 1-D vertical channel with a linear gravity loss,
//!   `a / sqrt(t) * exp(-b d^2 / t) - e t`.
//!
//! For the vertical model `a` plays the role of `M / sqrt(4 pi D)` and `b`
//! of `1 / (4 D)`; the correspondence is available through
//! [`VerticalChannelParams::from_diffusion`] but is not enforced on fitted
//! coefficients. Both responses are defined for `t > 0` only.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::search::{bisect, GoldenSection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionParams {
    /// Number of released molecules `M`.
    pub molecule_count: f64,
    /// `D`, cm^2/s.
    pub diffusion_coefficient: f64,
    /// Spatial dimension, 1, 2 or 3.
    pub dimension: u32,
    /// Transmitter to receiver distance, cm.
    pub distance: f64,
}

impl DiffusionParams {
    pub fn new(
        molecule_count: f64,
        diffusion_coefficient: f64,
        dimension: u32,
        distance: f64,
    ) -> Result<Self> {
        let p = Self {
            molecule_count,
            diffusion_coefficient,
            dimension,
            distance,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.molecule_count > 0.0 && self.molecule_count.is_finite()) {
            return Err(invalid(
                "molecule_count",
                format!("must be finite and > 0, got {}", self.molecule_count),
            ));
        }
        if !(self.diffusion_coefficient > 0.0 && self.diffusion_coefficient.is_finite()) {
            return Err(invalid(
                "diffusion_coefficient",
                format!("must be finite and > 0, got {}", self.diffusion_coefficient),
            ));
        }
        if !(1..=3).contains(&self.dimension) {
            return Err(invalid(
                "dimension",
                format!("must be 1, 2 or 3, got {}", self.dimension),
            ));
        }
        if !(self.distance >= 0.0 && self.distance.is_finite()) {
            return Err(invalid(
                "distance",
                format!("must be finite and >= 0, got {}", self.distance),
            ));
        }
        Ok(())
    }
}

/// Coefficients of the vertical channel model plus the fixed link distance.
///
/// `d` is carried in whatever unit the coefficients were fitted in; `b`
/// absorbs the unit choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerticalChannelParams {
    /// Amplitude `a`.
    pub amplitude: f64,
    /// Spread `b`.
    pub spread: f64,
    /// Gravity slope `e`, signal units per second.
    pub gravity_slope: f64,
    /// Link distance `d`.
    pub distance: f64,
}

impl VerticalChannelParams {
    pub fn new(amplitude: f64, spread: f64, gravity_slope: f64, distance: f64) -> Result<Self> {
        let p = Self {
            amplitude,
            spread,
            gravity_slope,
            distance,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks `a > 0`, `b > 0`, `e >= 0` and `d >= 0`. A zero distance is
    /// allowed for evaluation; peak location and fitting require `d > 0`.
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(invalid(
                "amplitude",
                format!("must be finite and > 0, got {}", self.amplitude),
            ));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(invalid(
                "spread",
                format!("must be finite and > 0, got {}", self.spread),
            ));
        }
        if !(self.gravity_slope >= 0.0 && self.gravity_slope.is_finite()) {
            return Err(invalid(
                "gravity_slope",
                format!("must be finite and >= 0, got {}", self.gravity_slope),
            ));
        }
        if !(self.distance >= 0.0 && self.distance.is_finite()) {
            return Err(invalid(
                "distance",
                format!("must be finite and >= 0, got {}", self.distance),
            ));
        }
        Ok(())
    }

    /// The 1-D diffusion response rewritten in vertical-model coefficients,
    /// with no gravity term.
    pub fn from_diffusion(p: &DiffusionParams) -> Result<Self> {
        p.validate()?;
        if p.dimension != 1 {
            return Err(invalid(
                "dimension",
                "the vertical model is one-dimensional",
            ));
        }
        let four_d = 4.0 * p.diffusion_coefficient;
        Self::new(
            p.molecule_count / (std::f64::consts::PI * four_d).sqrt(),
            1.0 / four_d,
            0.0,
            p.distance,
        )
    }

    pub fn coefficients(&self) -> [f64; 3] {
        [self.amplitude, self.spread, self.gravity_slope]
    }

    pub fn with_coefficients(&self, c: [f64; 3]) -> Self {
        Self {
            amplitude: c[0],
            spread: c[1],
            gravity_slope: c[2],
            distance: self.distance,
        }
    }

    /// `b d^2`, the time scale of the diffusion part.
    fn delay(&self) -> f64 {
        self.spread * self.distance * self.distance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicsParams {
    /// cm/s
    pub initial_velocity: f64,
    /// cm/s^2
    pub acceleration: f64,
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { t, domain: "t > 0" })
    }
}

/// Concentration at distance `d` and time `t` after an impulsive release.
pub fn diffusion_response(p: &DiffusionParams, t: f64) -> Result<f64> {
    p.validate()?;
    check_time(t)?;
    let d = p.diffusion_coefficient;
    let x = 4.0 * std::f64::consts::PI * d * t;
    let norm = match p.dimension {
        1 => x.sqrt(),
        2 => x,
        _ => x * x.sqrt(),
    };
    Ok(p.molecule_count / norm * (-(p.distance * p.distance) / (4.0 * d * t)).exp())
}

/// Argmax over `t` of [`diffusion_response`], `d^2 / (2 n D)`.
pub fn diffusion_peak_time(p: &DiffusionParams) -> Result<f64> {
    p.validate()?;
    if p.distance <= 0.0 {
        return Err(invalid(
            "distance",
            "the response peaks at t -> 0 when d = 0",
        ));
    }
    Ok(p.distance * p.distance / (2.0 * p.dimension as f64 * p.diffusion_coefficient))
}

#[inline]
pub(crate) fn vertical_unchecked(p: &VerticalChannelParams, t: f64) -> f64 {
    p.amplitude / t.sqrt() * (-p.delay() / t).exp() - p.gravity_slope * t
}

/// `(a/sqrt(t)) exp(-b d^2/t) - e t`. The value is not clipped and goes
/// negative once the gravity term dominates.
pub fn vertical_response(p: &VerticalChannelParams, t: f64) -> Result<f64> {
    p.validate()?;
    check_time(t)?;
    Ok(vertical_unchecked(p, t))
}

/// The diffusion part of the vertical model, without the `-e t` term.
pub fn vertical_diffusion_part(p: &VerticalChannelParams, t: f64) -> Result<f64> {
    p.validate()?;
    check_time(t)?;
    Ok(p.amplitude / t.sqrt() * (-p.delay() / t).exp())
}

#[inline]
pub(crate) fn vertical_gradient_unchecked(p: &VerticalChannelParams, t: f64) -> [f64; 3] {
    let decay = (-p.delay() / t).exp();
    let inv_sqrt = 1.0 / t.sqrt();
    let d2 = p.distance * p.distance;
    [
        inv_sqrt * decay,
        -p.amplitude * d2 * inv_sqrt / t * decay,
        -t,
    ]
}

/// Partial derivatives of the vertical model with respect to `(a, b, e)`.
pub fn vertical_response_gradient(p: &VerticalChannelParams, t: f64) -> Result<[f64; 3]> {
    p.validate()?;
    check_time(t)?;
    Ok(vertical_gradient_unchecked(p, t))
}

/// d/dt of the vertical model: `a exp(-c/t) t^(-5/2) (c - t/2) - e`, `c = b d^2`.
fn vertical_time_derivative(p: &VerticalChannelParams, t: f64) -> f64 {
    let c = p.delay();
    p.amplitude * (-c / t).exp() * t.powf(-2.5) * (c - 0.5 * t) - p.gravity_slope
}

const PEAK_T_LO: f64 = 1e-6;

/// Time at which the vertical model attains its maximum.
///
/// Golden-section search on `[1e-6, max(20 b d^2, 100)]` locates the peak to
/// 1e-6 s; the estimate is then polished by bisecting the sign change of
/// the analytic time derivative, which pins the `e = 0` case to `2 b d^2`
/// at machine precision.
pub fn peak_time(p: &VerticalChannelParams) -> Result<f64> {
    p.validate()?;
    if p.distance <= 0.0 {
        return Err(invalid("distance", "peak time requires d > 0"));
    }
    let t_hi = (10.0 * 2.0 * p.delay()).max(100.0);
    let coarse =
        GoldenSection::default().maximize(|t| vertical_unchecked(p, t), PEAK_T_LO, t_hi)?;

    let slope = |t: f64| vertical_time_derivative(p, t);
    let (mut lo, mut hi) = (coarse.lo, coarse.hi);
    let mut width = hi - lo;
    for _ in 0..64 {
        if slope(lo) > 0.0 && slope(hi) < 0.0 {
            return bisect(slope, lo, hi);
        }
        lo = (lo - width).max(PEAK_T_LO);
        hi = (hi + width).min(t_hi);
        width *= 2.0;
    }
    // No interior stationary point: the maximum sits on the bracket edge.
    Ok(coarse.x)
}

/// First time after the peak at which the vertical model crosses zero.
/// Requires `e > 0`; without the gravity term the response stays positive.
pub fn vertical_zero_crossing(p: &VerticalChannelParams) -> Result<f64> {
    if p.gravity_slope <= 0.0 {
        return Err(invalid(
            "gravity_slope",
            "the response never crosses zero when e = 0",
        ));
    }
    let lo = peak_time(p)?;
    let mut hi = 2.0 * lo;
    let mut doublings = 0;
    while vertical_unchecked(p, hi) > 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > 1000 || !hi.is_finite() {
            return Err(Error::NoConvergence {
                what: "zero-crossing bracket",
                iterations: doublings,
            });
        }
    }
    bisect(|t| vertical_unchecked(p, t), lo, hi)
}

/// `v0 + acc t` for `t >= 0`.
pub fn uniform_acceleration_velocity(k: &KinematicsParams, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain {
            t,
            domain: "t >= 0",
        });
    }
    if !k.initial_velocity.is_finite() {
        return Err(invalid("initial_velocity", "must be finite"));
    }
    if !k.acceleration.is_finite() {
        return Err(invalid("acceleration", "must be finite"));
    }
    Ok(k.initial_velocity + k.acceleration * t)
}
