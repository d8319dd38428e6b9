//! Step-size schedules: a fixed step with a safety flag, or the
//! decreasing sequence `α_k = c / (L_f (k+1)^ε)` with `ε ∈ (0, 1]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("step size must be positive, got {0}")]
    NonpositiveAlpha(f64),
    #[error("epsilon must lie in (0, 1], got {0}")]
    EpsilonOutOfRange(f64),
    #[error("Lipschitz constant must be positive, got {0}")]
    NonpositiveLipschitz(f64),
    #[error("numerator must be positive, got {0}")]
    NonpositiveNumerator(f64),
}

/// Whether a fixed step lies strictly below the descent-theory bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRegime {
    Safe,
    Unsafe,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepSchedule {
    Fixed {
        alpha: f64,
        bound: f64,
        regime: StepRegime,
    },
    Decreasing {
        epsilon: f64,
        numerator: f64,
        lipschitz: f64,
    },
}

impl StepSchedule {
    /// Constant schedule. Runs proceed either way; the regime flag records
    /// whether `alpha` lies strictly below `bound`.
    pub fn fixed(alpha: f64, bound: f64) -> Result<Self, ScheduleError> {
        if alpha <= 0.0 {
            return Err(ScheduleError::NonpositiveAlpha(alpha));
        }
        let regime = if alpha < bound {
            StepRegime::Safe
        } else {
            StepRegime::Unsafe
        };
        Ok(StepSchedule::Fixed {
            alpha,
            bound,
            regime,
        })
    }

    /// `α_k = numerator / (L_f (k+1)^ε)`. `ε > 1` is rejected: summable
    /// steps fall outside every convergence regime this crate checks.
    pub fn decreasing(epsilon: f64, lipschitz: f64, numerator: f64) -> Result<Self, ScheduleError> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(ScheduleError::EpsilonOutOfRange(epsilon));
        }
        if lipschitz <= 0.0 {
            return Err(ScheduleError::NonpositiveLipschitz(lipschitz));
        }
        if numerator <= 0.0 {
            return Err(ScheduleError::NonpositiveNumerator(numerator));
        }
        Ok(StepSchedule::Decreasing {
            epsilon,
            numerator,
            lipschitz,
        })
    }

    /// Step size at iteration `k`.
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Fixed { alpha, .. } => alpha,
            StepSchedule::Decreasing {
                epsilon,
                numerator,
                lipschitz,
            } => numerator / (lipschitz * ((k + 1) as f64).powf(epsilon)),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, StepSchedule::Fixed { .. })
    }

    pub fn regime(&self) -> Option<StepRegime> {
        match self {
            StepSchedule::Fixed { regime, .. } => Some(*regime),
            StepSchedule::Decreasing { .. } => None,
        }
    }

    /// Upper bound on `α_{k+1}⁻¹ − α_k⁻¹` for decreasing schedules,
    /// `2εL_f(k+1)^{ε−1}` scaled by the numerator; zero for fixed steps.
    pub fn inverse_difference_bound(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Fixed { .. } => 0.0,
            StepSchedule::Decreasing {
                epsilon,
                numerator,
                lipschitz,
            } => 2.0 * epsilon * lipschitz / numerator * ((k + 1) as f64).powf(epsilon - 1.0),
        }
    }
}
