//! Continuous-time noise schedules mapping a timestamp `t ∈ [0, 1]` to the
//! cumulative signal coefficient `ᾱ_t`.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use super::ScoringError;

/// Upper bound on `ᾱ(1)`: the last timestamp must be almost pure noise.
pub const MAX_TERMINAL_ALPHA_BAR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSchedule {
    /// `ᾱ(t) = 1 − (1 − final_alpha_bar)·t`.
    Linear { final_alpha_bar: f64 },
    /// Squared-cosine schedule, `ᾱ(t) = f(t)/f(0)` with
    /// `f(t) = cos²(((t + offset)/(1 + offset))·π/2)`, floored at `min_alpha_bar`.
    Cosine { offset: f64, min_alpha_bar: f64 },
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::Linear {
            final_alpha_bar: MAX_TERMINAL_ALPHA_BAR,
        }
    }
}

impl NoiseSchedule {
    pub fn cosine() -> Self {
        NoiseSchedule::Cosine {
            offset: 0.008,
            min_alpha_bar: 1e-4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseSchedule::Linear { .. } => "linear",
            NoiseSchedule::Cosine { .. } => "cosine",
        }
    }

    /// Cumulative signal coefficient at `t`. `t` is clamped to `[0, 1]`.
    pub fn alpha_bar(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match *self {
            NoiseSchedule::Linear { final_alpha_bar } if t == 1.0 => final_alpha_bar,
            NoiseSchedule::Linear { final_alpha_bar } => 1.0 - (1.0 - final_alpha_bar) * t,
            NoiseSchedule::Cosine {
                offset,
                min_alpha_bar,
            } => {
                if t == 0.0 {
                    return 1.0;
                }
                let f = |t: f64| (((t + offset) / (1.0 + offset)) * FRAC_PI_2).cos().powi(2);
                (f(t) / f(0.0)).clamp(min_alpha_bar, 1.0)
            }
        }
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        let ok = match *self {
            NoiseSchedule::Linear { final_alpha_bar } => {
                final_alpha_bar > 0.0 && final_alpha_bar <= MAX_TERMINAL_ALPHA_BAR
            }
            NoiseSchedule::Cosine {
                offset,
                min_alpha_bar,
            } => {
                offset >= 0.0
                    && offset.is_finite()
                    && min_alpha_bar > 0.0
                    && min_alpha_bar <= MAX_TERMINAL_ALPHA_BAR
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ScoringError::InvalidConfig(format!(
                "{} schedule parameters out of range: {self:?}",
                self.name()
            )))
        }
    }
}
