//! Base learning-rate schedules.
//!
//! [`phi`] is the time-varying factor TVLARS multiplies into its layer-wise
//! rate: a reciprocal sigmoid centred at `delay_epochs` that decays from
//! roughly `1/(alpha + 1)` towards the floor `gamma_min`. Time is measured in
//! (fractional) epochs.
//!
//! [`warmup_cosine`] and [`poly_decay`] are the step-indexed baselines paired
//! with LARS and LAMB.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("invalid schedule config: {0}")]
    InvalidConfig(String),
    #[error("t = {t} is past the horizon {horizon}")]
    PastHorizon { t: u64, horizon: u64 },
}

/// Parameters of the time-varying factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvConfig {
    pub alpha: f64,
    /// Soft temperature: steepness of the sigmoid transition.
    pub lambda: f64,
    pub delay_epochs: f64,
    pub gamma_min: f64,
    pub gamma_target: f64,
}

impl TvConfig {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let bad = |m: &str| Err(ScheduleError::InvalidConfig(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(self.delay_epochs >= 0.0 && self.delay_epochs.is_finite()) {
            return bad("delay_epochs must be nonnegative");
        }
        if !(self.gamma_min >= 0.0 && self.gamma_min.is_finite()) {
            return bad("gamma_min must be nonnegative");
        }
        if !(self.gamma_target > 0.0 && self.gamma_target.is_finite()) {
            return bad("gamma_target must be positive");
        }
        Ok(())
    }
}

/// Past this exponent `exp` overflows; below its negation it underflows to 0.
const EXP_SATURATION: f64 = 709.0;

/// `1 / (alpha + exp(lambda (t - delay_epochs))) + gamma_min`.
///
/// Saturates to `gamma_min` when the exponent would overflow and to
/// `1/alpha + gamma_min` when it would underflow; never NaN for a valid config.
pub fn phi(cfg: &TvConfig, t: f64) -> f64 {
    let psi = cfg.lambda * (t - cfg.delay_epochs);
    if psi > EXP_SATURATION {
        return cfg.gamma_min;
    }
    if psi < -EXP_SATURATION {
        return 1.0 / cfg.alpha + cfg.gamma_min;
    }
    1.0 / (cfg.alpha + psi.exp()) + cfg.gamma_min
}

/// Closed-form range of [`phi`] over `t >= 0`: `(gamma_min, phi(0))`.
pub fn phi_bounds(cfg: &TvConfig) -> (f64, f64) {
    (cfg.gamma_min, phi(cfg, 0.0))
}

/// Linear warm-up followed by cosine decay towards `gamma_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupConfig {
    /// Peak rate reached at the end of warm-up.
    pub gamma_scale: f64,
    /// Warm-up length in steps.
    pub d_wa: u64,
    /// Total steps.
    pub horizon: u64,
    pub gamma_min: f64,
}

impl WarmupConfig {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let bad = |m: &str| Err(ScheduleError::InvalidConfig(m.to_string()));
        if !(self.gamma_scale > 0.0 && self.gamma_scale.is_finite()) {
            return bad("gamma_scale must be positive");
        }
        if self.d_wa == 0 {
            return bad("warm-up length must be positive");
        }
        if self.d_wa >= self.horizon {
            return bad("warm-up length must be shorter than the horizon");
        }
        if !(self.gamma_min >= 0.0 && self.gamma_min.is_finite()) {
            return bad("gamma_min must be nonnegative");
        }
        Ok(())
    }
}

pub fn warmup_cosine(cfg: &WarmupConfig, t: u64) -> Result<f64, ScheduleError> {
    if t > cfg.horizon {
        return Err(ScheduleError::PastHorizon {
            t,
            horizon: cfg.horizon,
        });
    }
    if t <= cfg.d_wa {
        return Ok(cfg.gamma_scale * t as f64 / cfg.d_wa as f64);
    }
    let progress = (t - cfg.d_wa) as f64 / (cfg.horizon - cfg.d_wa) as f64;
    let q = 0.5 * (1.0 + (PI * progress).cos());
    Ok(cfg.gamma_scale * q + cfg.gamma_min * (1.0 - q))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyConfig {
    pub gamma_start: f64,
    pub gamma_end: f64,
    pub power: f64,
    pub horizon: u64,
}

impl PolyConfig {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let bad = |m: &str| Err(ScheduleError::InvalidConfig(m.to_string()));
        if !(self.gamma_start > 0.0 && self.gamma_end > 0.0 && self.gamma_start.is_finite()) {
            return bad("gamma_start and gamma_end must be positive");
        }
        if self.gamma_end > self.gamma_start {
            return bad("gamma_end must not exceed gamma_start");
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return bad("power must be positive");
        }
        if self.horizon == 0 {
            return bad("horizon must be positive");
        }
        Ok(())
    }
}

/// `gamma_end + (gamma_start - gamma_end) (1 - t/horizon)^power`.
pub fn poly_decay(cfg: &PolyConfig, t: u64) -> Result<f64, ScheduleError> {
    if t > cfg.horizon {
        return Err(ScheduleError::PastHorizon {
            t,
            horizon: cfg.horizon,
        });
    }
    let remaining = 1.0 - t as f64 / cfg.horizon as f64;
    Ok(cfg.gamma_end + (cfg.gamma_start - cfg.gamma_end) * remaining.powf(cfg.power))
}
