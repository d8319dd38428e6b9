//! Proximable regularizers and their proximal operators.
//!
//! Every separable kind reduces to a scalar subproblem
//! `min_u α·r(u) + ½(u − v)²`; the implementations below return a global
//! minimizer of that subproblem with deterministic tie-breaking (prefer 0,
//! then the smaller magnitude). The brute-force grid oracle in the test
//! suite, not the formulas, is the correctness contract.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegularizerError {
    #[error("prox scale alpha must be positive, got {0}")]
    NonpositiveAlpha(f64),
    #[error("{0}")]
    InvalidParameter(String),
    #[error("expected {expected} regularizers for {expected} agents, got {found}")]
    AgentCountMismatch { expected: usize, found: usize },
}

/// A proximable per-agent regularizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regularizer {
    Zero,
    L1 { lambda: f64 },
    L0 { lambda: f64 },
    Lq { lambda: f64, q: f64 },
    Scad { lambda: f64, a: f64 },
    Mcp { lambda: f64, gamma: f64 },
    BoxIndicator { lo: f64, hi: f64 },
    BallIndicator { radius: f64 },
}

impl Regularizer {
    pub fn validate(&self) -> Result<(), RegularizerError> {
        let bad = |msg: String| Err(RegularizerError::InvalidParameter(msg));
        match *self {
            Regularizer::Zero => Ok(()),
            Regularizer::L1 { lambda } | Regularizer::L0 { lambda } if lambda <= 0.0 => {
                bad(format!("lambda must be positive, got {lambda}"))
            }
            Regularizer::L1 { .. } | Regularizer::L0 { .. } => Ok(()),
            Regularizer::Lq { lambda, q } => {
                if lambda <= 0.0 {
                    bad(format!("lambda must be positive, got {lambda}"))
                } else if !(0.0..1.0).contains(&q) {
                    bad(format!("q must lie in [0, 1), got {q}"))
                } else {
                    Ok(())
                }
            }
            Regularizer::Scad { lambda, a } => {
                if lambda <= 0.0 {
                    bad(format!("lambda must be positive, got {lambda}"))
                } else if a <= 2.0 {
                    bad(format!("scad parameter a must exceed 2, got {a}"))
                } else {
                    Ok(())
                }
            }
            Regularizer::Mcp { lambda, gamma } => {
                if lambda <= 0.0 {
                    bad(format!("lambda must be positive, got {lambda}"))
                } else if gamma <= 1.0 {
                    bad(format!("mcp parameter gamma must exceed 1, got {gamma}"))
                } else {
                    Ok(())
                }
            }
            Regularizer::BoxIndicator { lo, hi } => {
                if lo > hi {
                    bad(format!("box bounds are inverted: [{lo}, {hi}]"))
                } else {
                    Ok(())
                }
            }
            Regularizer::BallIndicator { radius } => {
                if radius < 0.0 {
                    bad(format!("ball radius must be nonnegative, got {radius}"))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn is_convex(&self) -> bool {
        matches!(
            self,
            Regularizer::Zero
                | Regularizer::L1 { .. }
                | Regularizer::BoxIndicator { .. }
                | Regularizer::BallIndicator { .. }
        )
    }

    /// Global bound on subgradient norms over a row of dimension `p`, for
    /// the kinds whose subdifferential is uniformly bounded.
    pub fn subgradient_bound(&self, dimension: usize) -> Option<f64> {
        let root_p = (dimension as f64).sqrt();
        match *self {
            Regularizer::Zero => Some(0.0),
            Regularizer::L1 { lambda } => Some(lambda * root_p),
            // SCAD and MCP penalty derivatives are bounded by λ off the
            // origin and their limiting subdifferential at 0 is [−λ, λ].
            Regularizer::Scad { lambda, .. } | Regularizer::Mcp { lambda, .. } => {
                Some(lambda * root_p)
            }
            _ => None,
        }
    }

    /// `r(v)`; `+∞` outside indicator sets.
    pub fn value(&self, v: ArrayView1<'_, f64>) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { lambda } => lambda * v.iter().map(|t| t.abs()).sum::<f64>(),
            Regularizer::L0 { lambda } => {
                lambda * v.iter().filter(|t| **t != 0.0).count() as f64
            }
            Regularizer::Lq { lambda, q } => {
                if q == 0.0 {
                    lambda * v.iter().filter(|t| **t != 0.0).count() as f64
                } else {
                    lambda * v.iter().map(|t| t.abs().powf(q)).sum::<f64>()
                }
            }
            Regularizer::Scad { lambda, a } => {
                v.iter().map(|t| scad_penalty(t.abs(), lambda, a)).sum()
            }
            Regularizer::Mcp { lambda, gamma } => {
                v.iter().map(|t| mcp_penalty(t.abs(), lambda, gamma)).sum()
            }
            Regularizer::BoxIndicator { lo, hi } => {
                if v.iter().all(|t| *t >= lo && *t <= hi) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Regularizer::BallIndicator { radius } => {
                if v.dot(&v).sqrt() <= radius {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// The proximal map `argmin_u α·r(u) + ½‖u − v‖²`.
    pub fn prox(&self, v: ArrayView1<'_, f64>, alpha: f64) -> Result<Array1<f64>, RegularizerError> {
        if alpha <= 0.0 {
            return Err(RegularizerError::NonpositiveAlpha(alpha));
        }
        Ok(match *self {
            Regularizer::BallIndicator { radius } => {
                let norm = v.dot(&v).sqrt();
                if norm <= radius {
                    v.to_owned()
                } else if norm == 0.0 {
                    Array1::zeros(v.len())
                } else {
                    v.mapv(|t| t * radius / norm)
                }
            }
            _ => v.mapv(|t| self.prox_scalar(t, alpha)),
        })
    }

    /// Scalar prox for the separable kinds (and the 1-d ball).
    pub fn prox_scalar(&self, v: f64, alpha: f64) -> f64 {
        match *self {
            Regularizer::Zero => v,
            Regularizer::L1 { lambda } => soft_threshold(v, alpha * lambda),
            Regularizer::L0 { lambda } => hard_threshold(v, alpha * lambda),
            Regularizer::Lq { lambda, q } => prox_lq_scalar(v, lambda, q, alpha),
            Regularizer::Scad { lambda, a } => prox_scad_scalar(v, lambda, a, alpha),
            Regularizer::Mcp { lambda, gamma } => prox_mcp_scalar(v, lambda, gamma, alpha),
            Regularizer::BoxIndicator { lo, hi } => v.clamp(lo, hi),
            Regularizer::BallIndicator { radius } => v.clamp(-radius, radius),
        }
    }

    /// Scalar subproblem objective `α·r(u) + ½(u − v)²`; exposed so tests
    /// and oracles evaluate exactly what `prox` minimizes.
    pub fn prox_objective_scalar(&self, u: f64, v: f64, alpha: f64) -> f64 {
        let penalty = match *self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { lambda } => lambda * u.abs(),
            Regularizer::L0 { lambda } => {
                if u != 0.0 {
                    lambda
                } else {
                    0.0
                }
            }
            Regularizer::Lq { lambda, q } => {
                if q == 0.0 {
                    if u != 0.0 {
                        lambda
                    } else {
                        0.0
                    }
                } else {
                    lambda * u.abs().powf(q)
                }
            }
            Regularizer::Scad { lambda, a } => scad_penalty(u.abs(), lambda, a),
            Regularizer::Mcp { lambda, gamma } => mcp_penalty(u.abs(), lambda, gamma),
            Regularizer::BoxIndicator { lo, hi } => {
                if u >= lo && u <= hi {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Regularizer::BallIndicator { radius } => {
                if u.abs() <= radius {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        };
        alpha * penalty + 0.5 * (u - v) * (u - v)
    }
}

/// Row i of the result is `prox(regsᵢ, x_(i), α)`.
pub fn stacked_prox(
    regs: &[Regularizer],
    x: ArrayView2<'_, f64>,
    alpha: f64,
) -> Result<Array2<f64>, RegularizerError> {
    if regs.len() != x.nrows() {
        return Err(RegularizerError::AgentCountMismatch {
            expected: x.nrows(),
            found: regs.len(),
        });
    }
    if alpha <= 0.0 {
        return Err(RegularizerError::NonpositiveAlpha(alpha));
    }
    let mut out = Array2::<f64>::zeros(x.dim());
    for (i, (reg, row)) in regs.iter().zip(x.rows()).enumerate() {
        out.row_mut(i).assign(&reg.prox(row, alpha)?);
    }
    Ok(out)
}

/// `Σᵢ rᵢ(x_(i))`, propagating `+∞` from indicators.
pub fn stacked_value(
    regs: &[Regularizer],
    x: ArrayView2<'_, f64>,
) -> Result<f64, RegularizerError> {
    if regs.len() != x.nrows() {
        return Err(RegularizerError::AgentCountMismatch {
            expected: x.nrows(),
            found: regs.len(),
        });
    }
    Ok(regs
        .iter()
        .zip(x.rows())
        .map(|(reg, row)| reg.value(row))
        .sum())
}

/// Smallest magnitude a nonzero output of the `ℓ_q` prox can take, from
/// the first-order condition: the map `u ↦ u + αλq·u^{q−1}` attains its
/// minimum at this point, so no smaller positive stationary value exists.
pub fn lq_lower_bound(lambda: f64, q: f64, alpha: f64) -> f64 {
    (2.0 * alpha * lambda * (1.0 - q)).powf(1.0 / (2.0 - q))
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Hard thresholding: keep components strictly above `√(2αλ)`, zero the
/// rest. At exact equality both candidates attain the same objective; 0 is
/// returned so the support is monotone in the scale.
fn hard_threshold(v: f64, scaled_lambda: f64) -> f64 {
    if v.abs() > (2.0 * scaled_lambda).sqrt() {
        v
    } else {
        0.0
    }
}

fn scad_penalty(t: f64, lambda: f64, a: f64) -> f64 {
    if t <= lambda {
        lambda * t
    } else if t <= a * lambda {
        (2.0 * a * lambda * t - t * t - lambda * lambda) / (2.0 * (a - 1.0))
    } else {
        lambda * lambda * (a + 1.0) / 2.0
    }
}

fn mcp_penalty(t: f64, lambda: f64, gamma: f64) -> f64 {
    if t <= gamma * lambda {
        lambda * t - t * t / (2.0 * gamma)
    } else {
        gamma * lambda * lambda / 2.0
    }
}

/// Pick the candidate with the smallest subproblem objective; ties prefer
/// zero, then the smaller magnitude.
fn best_candidate(reg: &Regularizer, candidates: &[f64], v: f64, alpha: f64) -> f64 {
    let mut best = 0.0f64;
    let mut best_obj = reg.prox_objective_scalar(0.0, v, alpha);
    for &u in candidates {
        if !u.is_finite() {
            continue;
        }
        let obj = reg.prox_objective_scalar(u, v, alpha);
        let better = obj < best_obj || (obj == best_obj && u.abs() < best.abs());
        if better {
            best = u;
            best_obj = obj;
        }
    }
    best
}

fn prox_scad_scalar(v: f64, lambda: f64, a: f64, alpha: f64) -> f64 {
    let t = v.abs();
    let reg = Regularizer::Scad { lambda, a };
    // Stationary points of each branch, clamped into the branch, plus all
    // breakpoints; objective comparison settles degenerate slopes.
    let soft = (t - alpha * lambda).clamp(0.0, lambda);
    let denom = a - 1.0 - alpha;
    let middle = if denom != 0.0 {
        (((a - 1.0) * t - a * alpha * lambda) / denom).clamp(lambda, a * lambda)
    } else {
        lambda
    };
    let outer = t.max(a * lambda);
    let candidates = [soft, middle, outer, lambda, a * lambda, t];
    v.signum() * best_candidate(&reg, &candidates, t, alpha)
}

fn prox_mcp_scalar(v: f64, lambda: f64, gamma: f64, alpha: f64) -> f64 {
    let t = v.abs();
    let reg = Regularizer::Mcp { lambda, gamma };
    let denom = gamma - alpha;
    let inner = if denom != 0.0 {
        (gamma * (t - alpha * lambda) / denom).clamp(0.0, gamma * lambda)
    } else {
        0.0
    };
    let outer = t.max(gamma * lambda);
    let candidates = [inner, outer, gamma * lambda, t];
    v.signum() * best_candidate(&reg, &candidates, t, alpha)
}

fn prox_lq_scalar(v: f64, lambda: f64, q: f64, alpha: f64) -> f64 {
    if q == 0.0 {
        return hard_threshold(v, alpha * lambda);
    }
    let t = v.abs();
    if t == 0.0 {
        return 0.0;
    }
    let reg = Regularizer::Lq { lambda, q };
    let root = if q == 0.5 {
        lq_half_stationary(t, alpha * lambda)
    } else if (q - 2.0 / 3.0).abs() < 1e-12 {
        lq_two_thirds_stationary(t, alpha * lambda)
    } else {
        lq_generic_stationary(t, alpha * lambda, q)
    };
    let candidates = [root.unwrap_or(0.0)];
    v.signum() * best_candidate(&reg, &candidates, t, alpha)
}

/// Largest positive root of `t³ − v·t + c/2 = 0` squared (u = t²), the
/// nonzero stationary point of the q = 1/2 subproblem.
fn lq_half_stationary(v: f64, c: f64) -> Option<f64> {
    // Depressed cubic t³ + pt + q0 with p = −v, q0 = c/2.
    let p = -v;
    let q0 = c / 2.0;
    let disc = 4.0 * p * p * p + 27.0 * q0 * q0;
    if disc >= 0.0 {
        // No pair of positive roots: subproblem minimizer is 0.
        return None;
    }
    let m = 2.0 * (-p / 3.0).sqrt();
    let arg = (3.0 * q0 / (2.0 * p)) * (-3.0 / p).sqrt();
    let theta = arg.clamp(-1.0, 1.0).acos();
    let t = m * (theta / 3.0).cos();
    (t > 0.0).then(|| t * t)
}

/// Largest positive root of `t⁴ − v·t + (2/3)c = 0` cubed (u = t³), the
/// nonzero stationary point of the q = 2/3 subproblem, via Ferrari's
/// factorization with a resolvent cubic.
fn lq_two_thirds_stationary(v: f64, c: f64) -> Option<f64> {
    let p = -v;
    let q0 = 2.0 * c / 3.0;
    // Resolvent: s³ − 4q0·s − p² = 0, take the largest positive root.
    let s = largest_root_depressed_cubic(-4.0 * q0, -p * p)?;
    if s <= 0.0 {
        return None;
    }
    let a = s.sqrt();
    let b = (s - p / a) / 2.0;
    let cc = (s + p / a) / 2.0;
    // Quadratic factors t² + at + b and t² − at + cc.
    let mut best: Option<f64> = None;
    for (lin, cons) in [(a, b), (-a, cc)] {
        let disc = lin * lin - 4.0 * cons;
        if disc >= 0.0 {
            let r = disc.sqrt();
            for t in [(-lin + r) / 2.0, (-lin - r) / 2.0] {
                if t > 0.0 && best.is_none_or(|b: f64| t > b) {
                    best = Some(t);
                }
            }
        }
    }
    best.map(|t| t * t * t)
}

/// Largest real root of `s³ + p·s + q = 0`.
fn largest_root_depressed_cubic(p: f64, q: f64) -> Option<f64> {
    let disc = -(4.0 * p * p * p + 27.0 * q * q);
    if disc > 0.0 {
        // Three real roots; trigonometric form.
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = ((3.0 * q) / (2.0 * p)) * (-3.0 / p).sqrt();
        let theta = arg.clamp(-1.0, 1.0).acos();
        Some(m * (theta / 3.0).cos())
    } else {
        // One real root; Cardano.
        let half_q = q / 2.0;
        let inner = (half_q * half_q + p * p * p / 27.0).sqrt();
        let u = (-half_q + inner).cbrt();
        let w = (-half_q - inner).cbrt();
        Some(u + w)
    }
}

/// Safeguarded bisection for the generic-q stationarity equation
/// `u + αλq·u^{q−1} = v` on `u ∈ (0, v]`; returns the larger root (the
/// candidate local minimizer) when one exists.
fn lq_generic_stationary(v: f64, c: f64, q: f64) -> Option<f64> {
    let g = |u: f64| u + c * q * u.powf(q - 1.0) - v;
    // The left side is minimized at u_min; no root if the minimum exceeds v.
    let u_min = (c * q * (1.0 - q)).powf(1.0 / (2.0 - q));
    if g(u_min) > 0.0 {
        return None;
    }
    let (mut lo, mut hi) = (u_min, v.max(u_min * (1.0 + 1e-12)));
    if g(hi) < 0.0 {
        // v itself should satisfy g(v) ≥ 0 since c·q·v^{q−1} ≥ 0.
        hi = v + c;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}
