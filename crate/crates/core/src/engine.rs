//! The DGD and Prox-DGD iteration engine.
//!
//! One step is `x⁺ = Wx − α∇f(x)` followed, in the composite case, by the
//! row-wise proximal map; the subgradient the prox selected is recovered
//! as `ξ = (Wx − α∇f(x) − x⁺)/α`, so `x⁺ = Wx − α(∇f(x) + ξ)` holds by
//! construction. The run loop records per-iteration scalars that the
//! diagnostics module audits against the descent and consensus bounds.

use ndarray::{Array1, Array2, ArrayView2};
use thiserror::Error;

use crate::network::MixingSpec;
use crate::objectives::{ObjectiveError, StackedObjective};
use crate::regularizers::{stacked_prox, stacked_value as stacked_reg_value, Regularizer, RegularizerError};
use crate::schedules::StepSchedule;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Regularizer(#[from] RegularizerError),
    #[error("iterate is {rows}×{cols} but the network has {nodes} nodes")]
    NetworkShapeMismatch {
        rows: usize,
        cols: usize,
        nodes: usize,
    },
    #[error("initial iterate contains a nonfinite entry")]
    NonFiniteInitial,
    #[error("step produced a nonfinite iterate")]
    NonFiniteIterate,
    #[error("trace has fewer than two records")]
    TraceTooShort,
}

/// A problem instance: stacked smooth objectives plus optional per-agent
/// regularizers (present ⇒ Prox-DGD, absent ⇒ DGD).
#[derive(Debug)]
pub struct ProblemSpec {
    objective: StackedObjective,
    regularizers: Option<Vec<Regularizer>>,
}

impl ProblemSpec {
    pub fn smooth(objective: StackedObjective) -> Self {
        ProblemSpec {
            objective,
            regularizers: None,
        }
    }

    pub fn composite(
        objective: StackedObjective,
        regularizers: Vec<Regularizer>,
    ) -> Result<Self, RegularizerError> {
        if regularizers.len() != objective.agent_count() {
            return Err(RegularizerError::AgentCountMismatch {
                expected: objective.agent_count(),
                found: regularizers.len(),
            });
        }
        for reg in &regularizers {
            reg.validate()?;
        }
        Ok(ProblemSpec {
            objective,
            regularizers: Some(regularizers),
        })
    }

    pub fn objective(&self) -> &StackedObjective {
        &self.objective
    }

    pub fn regularizers(&self) -> Option<&[Regularizer]> {
        self.regularizers.as_deref()
    }

    pub fn is_composite(&self) -> bool {
        self.regularizers.is_some()
    }

    pub fn has_nonconvex_regularizer(&self) -> bool {
        self.regularizers
            .as_ref()
            .is_some_and(|regs| regs.iter().any(|r| !r.is_convex()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Dgd,
    ProxDgd,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Dgd => write!(f, "dgd"),
            Algorithm::ProxDgd => write!(f, "prox_dgd"),
        }
    }
}

/// Which theorem regime a run falls in; serialized into the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeFlag {
    FixedSafe,
    FixedUnsafe,
    /// Fixed step with a nonconvex regularizer on a mixing matrix whose
    /// smallest eigenvalue is not positive: no descent theorem applies.
    FixedOutsideTheory,
    Decreasing,
    DecreasingOutsideTheory,
}

impl RegimeFlag {
    pub fn is_outside_theory(&self) -> bool {
        matches!(
            self,
            RegimeFlag::FixedOutsideTheory | RegimeFlag::DecreasingOutsideTheory
        )
    }
}

impl std::fmt::Display for RegimeFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let text = match self {
            RegimeFlag::FixedSafe => "fixed_safe",
            RegimeFlag::FixedUnsafe => "fixed_unsafe",
            RegimeFlag::FixedOutsideTheory => "fixed_outside_theorem_regime",
            RegimeFlag::Decreasing => "decreasing",
            RegimeFlag::DecreasingOutsideTheory => "decreasing_outside_theorem_regime",
        };
        write!(f, "{text}")
    }
}

/// Stopping rule: an iteration cap, optionally a step-norm floor (the
/// theory is asymptotic, so the floor is disabled by default).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub max_iterations: usize,
    pub step_floor: Option<f64>,
}

impl StopRule {
    pub fn max_iterations(max_iterations: usize) -> Self {
        StopRule {
            max_iterations,
            step_floor: None,
        }
    }
}

/// Scalars recorded at one iterate. Transition quantities (`step_norm`,
/// `descent_residual`, `avg_identity_gap`, `xi_norm`, `stationarity`'s ξ
/// term) describe the step that *arrived* at this row and are zero on the
/// initial record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    /// Step size the schedule assigns at this iterate (applied to leave it).
    pub alpha: f64,
    /// `Σᵢ fᵢ(x_(i)) + Σᵢ rᵢ(x_(i))`.
    pub objective: f64,
    /// Objective evaluated with every agent at the row average `x̄`.
    pub avg_objective: f64,
    /// `L̂_{α_k}(x^k)`: objective plus `‖x‖²_{I−W}/(2α_k)`.
    pub lyapunov: f64,
    /// `‖x‖²_{I−W}`.
    pub semi_norm_sq: f64,
    /// Frobenius consensus error `‖x − 𝟙x̄ᵀ‖`.
    pub consensus_error: f64,
    /// Largest per-agent deviation `maxᵢ ‖x_(i) − x̄‖`.
    pub consensus_max_node: f64,
    /// `‖x^k − x^{k−1}‖`.
    pub step_norm: f64,
    /// `‖∇f(x^k)‖` (Frobenius).
    pub grad_norm: f64,
    /// `‖(1/n)Σᵢ(∇fᵢ(x_(i)) + ξ_(i))‖`, the stationarity measure.
    pub stationarity: f64,
    /// `‖ξ^k‖` (zero for DGD and at k = 0).
    pub xi_norm: f64,
    /// `L̂_{α_k}(x^k) − L̂_{α_{k−1}}(x^{k−1})
    ///  − ½(α_k⁻¹ − α_{k−1}⁻¹)‖x^k‖²_{I−W}
    ///  + ½(κ·α_{k−1}⁻¹ − L_f)‖x^k − x^{k−1}‖²` with κ from the regime;
    /// nonpositive whenever the matching descent lemma applies.
    pub descent_residual: f64,
    /// Max-abs gap in the averaged-iterate identity
    /// `x̄^k = x̄^{k−1} − α_{k−1}·(1/n)Σᵢ(∇fᵢ + ξᵢ)`.
    pub avg_identity_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunFailure {
    /// The step leaving this iterate produced a nonfinite value.
    pub after_iteration: usize,
}

/// Full per-iteration record of one run plus the constants the
/// diagnostics need to audit it.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub regime: RegimeFlag,
    pub agents: usize,
    pub dimension: usize,
    pub zeta: f64,
    pub lambda_min: f64,
    pub lipschitz: f64,
    /// κ in the descent residual: `1 + λₙ` for smooth or convex-regularizer
    /// runs, `λₙ` when any regularizer is nonconvex.
    pub kappa: f64,
    pub x0_norm: f64,
    pub schedule_fixed: bool,
    /// `(ε, numerator)` for decreasing schedules.
    pub schedule_decreasing: Option<(f64, f64)>,
    pub rows: Vec<TraceRow>,
    pub failure: Option<RunFailure>,
    /// The last finite iterate, one row per agent.
    pub final_iterate: Array2<f64>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("trace has at least the initial row")
    }

    /// The α-weighted running average of `avg_objective` at destination
    /// iterates: entry K is `Σ_{k≤K} α_k·obj(x̄^{k+1}) / Σ_{k≤K} α_k`.
    pub fn ergodic_objective(&self) -> Result<Vec<f64>, EngineError> {
        if self.rows.len() < 2 {
            return Err(EngineError::TraceTooShort);
        }
        let mut numerator = 0.0;
        let mut denominator = 0.0;
        let mut out = Vec::with_capacity(self.rows.len() - 1);
        for k in 0..self.rows.len() - 1 {
            let alpha = self.rows[k].alpha;
            numerator += alpha * self.rows[k + 1].avg_objective;
            denominator += alpha;
            out.push(numerator / denominator);
        }
        Ok(out)
    }
}

/// `Wx` with a fixed accumulation order (ascending neighbor index), so
/// repeated runs are bit-identical.
pub fn mixing_multiply(weights: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = weights.nrows();
    let p = x.ncols();
    let mut out = Array2::<f64>::zeros((n, p));
    for i in 0..n {
        for j in 0..n {
            let w = weights[[i, j]];
            if w == 0.0 {
                continue;
            }
            for c in 0..p {
                out[[i, c]] += w * x[[j, c]];
            }
        }
    }
    out
}

/// `‖x‖²_{I−W} = ⟨x, (I−W)x⟩`, clamped at zero against roundoff.
pub fn semi_norm_sq(mix: &MixingSpec, x: ArrayView2<'_, f64>) -> f64 {
    let wx = mixing_multiply(mix.weights(), x);
    let mut acc = 0.0;
    for (xv, wv) in x.iter().zip(wx.iter()) {
        acc += xv * (xv - wv);
    }
    acc.max(0.0)
}

/// One DGD step `Wx − α∇f(x)`.
pub fn dgd_step(
    x: ArrayView2<'_, f64>,
    mix: &MixingSpec,
    objective: &StackedObjective,
    alpha: f64,
) -> Result<Array2<f64>, EngineError> {
    assert!(alpha > 0.0, "step size must be positive");
    let gradient = objective.stacked_gradient(x)?;
    let mut out = mixing_multiply(mix.weights(), x);
    out.scaled_add(-alpha, &gradient);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(EngineError::NonFiniteIterate);
    }
    Ok(out)
}

/// One Prox-DGD step; returns the new iterate and the subgradient ξ the
/// proximal map selected, satisfying `x⁺ = Wx − α(∇f(x) + ξ)`.
pub fn proxdgd_step(
    x: ArrayView2<'_, f64>,
    mix: &MixingSpec,
    objective: &StackedObjective,
    regularizers: &[Regularizer],
    alpha: f64,
) -> Result<(Array2<f64>, Array2<f64>), EngineError> {
    assert!(alpha > 0.0, "step size must be positive");
    let gradient = objective.stacked_gradient(x)?;
    let mut forward = mixing_multiply(mix.weights(), x);
    forward.scaled_add(-alpha, &gradient);
    let next = stacked_prox(regularizers, forward.view(), alpha)?;
    let xi = (&forward - &next) / alpha;
    if !next.iter().all(|v| v.is_finite()) || !xi.iter().all(|v| v.is_finite()) {
        return Err(EngineError::NonFiniteIterate);
    }
    Ok((next, xi))
}

/// `L_α(x) = Σᵢfᵢ(x_(i)) + ‖x‖²_{I−W}/(2α)`.
pub fn lyapunov(
    x: ArrayView2<'_, f64>,
    mix: &MixingSpec,
    objective: &StackedObjective,
    alpha: f64,
) -> Result<f64, EngineError> {
    assert!(alpha > 0.0, "step size must be positive");
    Ok(objective.stacked_value(x)? + semi_norm_sq(mix, x) / (2.0 * alpha))
}

/// `L̂_α(x) = L_α(x) + Σᵢrᵢ(x_(i))`; `+∞` propagates from indicators.
pub fn composite_lyapunov(
    x: ArrayView2<'_, f64>,
    mix: &MixingSpec,
    objective: &StackedObjective,
    regularizers: &[Regularizer],
    alpha: f64,
) -> Result<f64, EngineError> {
    Ok(lyapunov(x, mix, objective, alpha)? + stacked_reg_value(regularizers, x)?)
}

/// `∇L_α(x) = ∇f(x) + α⁻¹(I−W)x`; DGD is exactly a gradient step on this.
pub fn lyapunov_gradient(
    x: ArrayView2<'_, f64>,
    mix: &MixingSpec,
    objective: &StackedObjective,
    alpha: f64,
) -> Result<Array2<f64>, EngineError> {
    let mut out = objective.stacked_gradient(x)?;
    let wx = mixing_multiply(mix.weights(), x);
    for ((o, xv), wv) in out.iter_mut().zip(x.iter()).zip(wx.iter()) {
        *o += (xv - wv) / alpha;
    }
    Ok(out)
}

fn frobenius(x: &Array2<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn row_mean(x: &Array2<f64>) -> Array1<f64> {
    let n = x.nrows() as f64;
    let mut mean = Array1::<f64>::zeros(x.ncols());
    for row in x.rows() {
        mean += &row;
    }
    mean / n
}

fn classify_regime(
    problem: &ProblemSpec,
    mix: &MixingSpec,
    schedule: &StepSchedule,
) -> (RegimeFlag, f64) {
    let nonconvex = problem.has_nonconvex_regularizer();
    let kappa = if nonconvex {
        mix.lambda_min()
    } else {
        1.0 + mix.lambda_min()
    };
    let outside = nonconvex && !mix.has_positive_lambda_min();
    let flag = match (schedule.is_fixed(), outside) {
        (true, true) => RegimeFlag::FixedOutsideTheory,
        (false, true) => RegimeFlag::DecreasingOutsideTheory,
        (false, false) => RegimeFlag::Decreasing,
        (true, false) => {
            // Safety against the bound that matches the regularizer class.
            let lipschitz = problem.objective().lipschitz();
            let bound = kappa / lipschitz;
            let alpha = schedule.at(0);
            if alpha < bound {
                RegimeFlag::FixedSafe
            } else {
                RegimeFlag::FixedUnsafe
            }
        }
    };
    (flag, kappa)
}

/// Run DGD or Prox-DGD from `x0` under the given schedule and stop rule.
///
/// The trace always contains the initial record; a step that produces a
/// nonfinite iterate truncates the run and sets the failure marker rather
/// than returning an error.
pub fn run(
    problem: &ProblemSpec,
    mix: &MixingSpec,
    schedule: &StepSchedule,
    x0: ArrayView2<'_, f64>,
    stop: StopRule,
) -> Result<RunTrace, EngineError> {
    let n = problem.objective().agent_count();
    let p = problem.objective().dimension();
    if mix.node_count() != n || x0.nrows() != n || x0.ncols() != p {
        return Err(EngineError::NetworkShapeMismatch {
            rows: x0.nrows(),
            cols: x0.ncols(),
            nodes: mix.node_count(),
        });
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(EngineError::NonFiniteInitial);
    }

    let (regime, kappa) = classify_regime(problem, mix, schedule);
    let objective = problem.objective();
    let lipschitz = objective.lipschitz();

    let mut x = x0.to_owned();
    let mut xi = Array2::<f64>::zeros((n, p));
    let mut rows: Vec<TraceRow> = Vec::with_capacity(stop.max_iterations + 1);
    let mut failure = None;

    let mut pending_step_norm = 0.0;
    let mut pending_identity_gap = 0.0;
    let mut prev_lyapunov = 0.0;
    let mut prev_alpha = 0.0;

    for k in 0..=stop.max_iterations {
        let alpha = schedule.at(k);
        let gradient = objective.stacked_gradient(x.view())?;
        let smooth_value = objective.stacked_value(x.view())?;
        let reg_value = match problem.regularizers() {
            Some(regs) => stacked_reg_value(regs, x.view())?,
            None => 0.0,
        };
        let objective_value = smooth_value + reg_value;

        let mean = row_mean(&x);
        let avg_objective = {
            let smooth = objective.value_at_consensual(mean.view());
            let reg = match problem.regularizers() {
                Some(regs) => regs.iter().map(|r| r.value(mean.view())).sum::<f64>(),
                None => 0.0,
            };
            smooth + reg
        };

        let semi = semi_norm_sq(mix, x.view());
        let lyapunov_value = objective_value + semi / (2.0 * alpha);

        let mut consensus_sq = 0.0;
        let mut consensus_max_node = 0.0f64;
        for row in x.rows() {
            let mut node_sq = 0.0;
            for (v, m) in row.iter().zip(mean.iter()) {
                let d = v - m;
                node_sq += d * d;
            }
            consensus_sq += node_sq;
            consensus_max_node = consensus_max_node.max(node_sq.sqrt());
        }

        let direction = &gradient + &xi;
        let mean_direction = row_mean(&direction);
        let stationarity = mean_direction.dot(&mean_direction).sqrt();

        let descent_residual = if k == 0 {
            0.0
        } else {
            lyapunov_value - prev_lyapunov - 0.5 * (1.0 / alpha - 1.0 / prev_alpha) * semi
                + 0.5 * (kappa / prev_alpha - lipschitz) * pending_step_norm * pending_step_norm
        };

        rows.push(TraceRow {
            k,
            alpha,
            objective: objective_value,
            avg_objective,
            lyapunov: lyapunov_value,
            semi_norm_sq: semi,
            consensus_error: consensus_sq.sqrt(),
            consensus_max_node,
            step_norm: pending_step_norm,
            grad_norm: frobenius(&gradient),
            stationarity,
            xi_norm: frobenius(&xi),
            descent_residual,
            avg_identity_gap: pending_identity_gap,
        });

        if k == stop.max_iterations {
            break;
        }
        if let Some(floor) = stop.step_floor {
            if k > 0 && pending_step_norm <= floor {
                break;
            }
        }

        let mut forward = mixing_multiply(mix.weights(), x.view());
        forward.scaled_add(-alpha, &gradient);
        let (next, next_xi) = match problem.regularizers() {
            Some(regs) => {
                let next = stacked_prox(regs, forward.view(), alpha)?;
                let xi_new = (&forward - &next) / alpha;
                (next, xi_new)
            }
            None => (forward, Array2::<f64>::zeros((n, p))),
        };
        if !next.iter().all(|v| v.is_finite()) {
            failure = Some(RunFailure { after_iteration: k });
            break;
        }

        pending_step_norm = frobenius(&(&next - &x));
        let next_mean = row_mean(&next);
        let step_direction = &gradient + &next_xi;
        let mean_step_direction = row_mean(&step_direction);
        pending_identity_gap = next_mean
            .iter()
            .zip(mean.iter())
            .zip(mean_step_direction.iter())
            .map(|((nm, m), d)| (nm - (m - alpha * d)).abs())
            .fold(0.0f64, f64::max);

        prev_lyapunov = lyapunov_value;
        prev_alpha = alpha;
        x = next;
        xi = next_xi;
    }

    Ok(RunTrace {
        algorithm: if problem.is_composite() {
            Algorithm::ProxDgd
        } else {
            Algorithm::Dgd
        },
        regime,
        agents: n,
        dimension: p,
        zeta: mix.zeta(),
        lambda_min: mix.lambda_min(),
        lipschitz,
        kappa,
        x0_norm: frobenius(&x0.to_owned()),
        schedule_fixed: schedule.is_fixed(),
        schedule_decreasing: match schedule {
            StepSchedule::Decreasing {
                epsilon, numerator, ..
            } => Some((*epsilon, *numerator)),
            StepSchedule::Fixed { .. } => None,
        },
        rows,
        failure,
        final_iterate: x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{three_agent_mixing, Graph};
    use crate::objectives::{isotropic_quadratic, paper_toy_problem, zero_objective};
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn toy_state(values: [f64; 3]) -> Array2<f64> {
        Array2::from_shape_vec((3, 1), values.to_vec()).unwrap()
    }

    #[test]
    fn consensual_zero_gradient_is_fixed_point() {
        let mix = three_agent_mixing();
        let obj = zero_objective(3, 2);
        let x = array![[1.5, -0.5], [1.5, -0.5], [1.5, -0.5]];
        let next = dgd_step(x.view(), &mix, &obj, 1e-2).unwrap();
        for (a, b) in next.iter().zip(x.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn dgd_step_equals_lyapunov_gradient_step() {
        let mix = three_agent_mixing();
        let obj = paper_toy_problem();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let x = toy_state([
                rng.gen_range(-15.0..15.0),
                rng.gen_range(-15.0..15.0),
                rng.gen_range(-15.0..15.0),
            ]);
            let alpha = rng.gen_range(1e-5..1e-3);
            let direct = dgd_step(x.view(), &mix, &obj, alpha).unwrap();
            let grad = lyapunov_gradient(x.view(), &mix, &obj, alpha).unwrap();
            let mut via_lyapunov = x.clone();
            via_lyapunov.scaled_add(-alpha, &grad);
            for (a, b) in direct.iter().zip(via_lyapunov.iter()) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn lyapunov_quadratic_form_example() {
        let mix = three_agent_mixing();
        let obj = zero_objective(3, 1);
        let x = toy_state([1.0, 0.0, 0.0]);
        // ⟨x, (I−W)x⟩ = 1 − W₁₁ = 1/2.
        assert!((semi_norm_sq(&mix, x.view()) - 0.5).abs() < 1e-15);
        let alpha = 0.2;
        let value = lyapunov(x.view(), &mix, &obj, alpha).unwrap();
        assert!((value - 0.5 / (2.0 * alpha)).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_is_value_plus_half_semi_norm() {
        let mix = three_agent_mixing();
        let obj = paper_toy_problem();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = toy_state([
                rng.gen_range(-12.0..12.0),
                rng.gen_range(-12.0..12.0),
                rng.gen_range(-12.0..12.0),
            ]);
            let alpha = rng.gen_range(1e-4..1e-2);
            let lhs = lyapunov(x.view(), &mix, &obj, alpha).unwrap();
            let rhs =
                obj.stacked_value(x.view()).unwrap() + semi_norm_sq(&mix, x.view()) / (2.0 * alpha);
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn consensual_lyapunov_has_no_penalty_term() {
        let mix = three_agent_mixing();
        let obj = paper_toy_problem();
        let x = toy_state([2.5, 2.5, 2.5]);
        let value = lyapunov(x.view(), &mix, &obj, 1e-3).unwrap();
        let plain = obj.stacked_value(x.view()).unwrap();
        assert!((value - plain).abs() <= 1e-9);
    }

    #[test]
    fn composite_lyapunov_examples() {
        let mix = three_agent_mixing();
        let obj = zero_objective(3, 2);
        let zero_regs = vec![Regularizer::Zero; 3];
        let x = array![[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]];
        let alpha = 0.1;
        let plain = lyapunov(x.view(), &mix, &obj, alpha).unwrap();
        assert_eq!(
            composite_lyapunov(x.view(), &mix, &obj, &zero_regs, alpha).unwrap(),
            plain
        );

        let l0_regs = vec![Regularizer::L0 { lambda: 0.5 }; 3];
        let with_l0 = composite_lyapunov(x.view(), &mix, &obj, &l0_regs, alpha).unwrap();
        assert!((with_l0 - plain - 0.5 * 2.0).abs() < 1e-12);

        let box_regs = vec![Regularizer::BoxIndicator { lo: -3.0, hi: 3.0 }; 3];
        assert!(composite_lyapunov(x.view(), &mix, &obj, &box_regs, alpha)
            .unwrap()
            .is_finite());
        let tight = vec![Regularizer::BoxIndicator { lo: -0.5, hi: 0.5 }; 3];
        assert_eq!(
            composite_lyapunov(x.view(), &mix, &obj, &tight, alpha).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn proxdgd_with_zero_regularizers_matches_dgd() {
        let mix = three_agent_mixing();
        let obj = paper_toy_problem();
        let regs = vec![Regularizer::Zero; 3];
        let x = toy_state([1.0, -2.0, 0.5]);
        let alpha = 2e-4;
        let plain = dgd_step(x.view(), &mix, &obj, alpha).unwrap();
        let (prox, xi) = proxdgd_step(x.view(), &mix, &obj, &regs, alpha).unwrap();
        assert_eq!(plain, prox);
        assert!(xi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn proxdgd_hard_threshold_kills_small_inputs() {
        let mix = three_agent_mixing();
        let obj = zero_objective(3, 1);
        let regs = vec![Regularizer::L0 { lambda: 10.0 }; 3];
        let x = toy_state([0.1, -0.2, 0.05]);
        let (next, _) = proxdgd_step(x.view(), &mix, &obj, &regs, 1.0).unwrap();
        assert!(next.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn xi_reconstructs_the_prox_step_exactly() {
        let mix = three_agent_mixing();
        let obj = paper_toy_problem();
        let regs = vec![Regularizer::L1 { lambda: 0.3 }; 3];
        let x = toy_state([3.0, -4.0, 1.0]);
        let alpha = 5e-4;
        let gradient = obj.stacked_gradient(x.view()).unwrap();
        let (next, xi) = proxdgd_step(x.view(), &mix, &obj, &regs, alpha).unwrap();
        let mut reconstructed = mixing_multiply(mix.weights(), x.view());
        reconstructed.scaled_add(-alpha, &(&gradient + &xi));
        for (a, b) in next.iter().zip(reconstructed.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_iteration_run_has_single_record() {
        let mix = three_agent_mixing();
        let problem = ProblemSpec::smooth(paper_toy_problem());
        let schedule = StepSchedule::fixed(1e-4, 1.0).unwrap();
        let x0 = Array2::<f64>::zeros((3, 1));
        let trace = run(&problem, &mix, &schedule, x0.view(), StopRule::max_iterations(0)).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace.rows[0].k, 0);
        assert_eq!(trace.rows[0].step_norm, 0.0);
        assert!(trace.failure.is_none());
    }

    #[test]
    fn pure_averaging_contracts_at_zeta_rate() {
        let mix = three_agent_mixing();
        let problem = ProblemSpec::smooth(zero_objective(3, 2));
        let schedule = StepSchedule::fixed(0.1, 1.0).unwrap();
        let x0 = array![[4.0, -1.0], [0.0, 3.0], [-2.0, 1.0]];
        let trace =
            run(&problem, &mix, &schedule, x0.view(), StopRule::max_iterations(40)).unwrap();
        let initial_dev = trace.rows[0].consensus_error;
        for row in &trace.rows {
            let bound = mix.zeta().powi(row.k as i32) * initial_dev;
            assert!(
                row.consensus_error <= bound + 1e-12,
                "k={}: {} > {}",
                row.k,
                row.consensus_error,
                bound
            );
        }
        // Averaging preserves the mean, so the final iterate approaches it.
        let last = trace.last();
        assert!(last.consensus_error < 1e-10);
    }

    #[test]
    fn averaged_iterate_identity_holds_along_runs() {
        let mix = three_agent_mixing();
        let problem = ProblemSpec::smooth(paper_toy_problem());
        let schedule = StepSchedule::fixed(3e-4, 3.9e-4).unwrap();
        let x0 = Array2::<f64>::zeros((3, 1));
        let trace =
            run(&problem, &mix, &schedule, x0.view(), StopRule::max_iterations(500)).unwrap();
        for row in &trace.rows {
            assert!(row.avg_identity_gap <= 1e-12, "k={}", row.k);
        }

        let composite = ProblemSpec::composite(
            paper_toy_problem(),
            vec![Regularizer::L1 { lambda: 0.2 }; 3],
        )
        .unwrap();
        let trace = run(
            &composite,
            &mix,
            &schedule,
            x0.view(),
            StopRule::max_iterations(500),
        )
        .unwrap();
        for row in &trace.rows {
            assert!(row.avg_identity_gap <= 1e-12, "composite k={}", row.k);
        }
    }

    #[test]
    fn nonfinite_step_truncates_with_marker() {
        // Quadratic with an enormously unsafe step diverges to overflow.
        let mix = three_agent_mixing();
        let problem = ProblemSpec::smooth(isotropic_quadratic(3, 1, 1.0));
        let schedule = StepSchedule::fixed(1e8, 1.0).unwrap();
        let x0 = toy_state([1.0, 1.0, 1.0]);
        let trace = run(
            &problem,
            &mix,
            &schedule,
            x0.view(),
            StopRule::max_iterations(10_000),
        )
        .unwrap();
        let failure = trace.failure.expect("divergence must be marked");
        assert_eq!(trace.len(), failure.after_iteration + 1);
        assert!(trace.len() < 10_001);
        // Every recorded iterate itself stayed finite.
        assert!(trace.rows.iter().all(|r| r.consensus_error.is_finite()));
    }

    #[test]
    fn run_rejects_bad_shapes_and_nonfinite_start() {
        let mix = three_agent_mixing();
        let problem = ProblemSpec::smooth(paper_toy_problem());
        let schedule = StepSchedule::fixed(1e-4, 1.0).unwrap();
        let wide = Array2::<f64>::zeros((3, 2));
        assert!(run(&problem, &mix, &schedule, wide.view(), StopRule::max_iterations(1)).is_err());
        let mut bad = Array2::<f64>::zeros((3, 1));
        bad[[0, 0]] = f64::NAN;
        assert!(matches!(
            run(&problem, &mix, &schedule, bad.view(), StopRule::max_iterations(1)),
            Err(EngineError::NonFiniteInitial)
        ));
    }

    #[test]
    fn regime_classification() {
        let mix = three_agent_mixing();
        let toy = || paper_toy_problem();
        let bound = 0.5 / 1288.0;
        let safe = StepSchedule::fixed(3e-4, bound).unwrap();
        let unsafe_sched = StepSchedule::fixed(1e-2, bound).unwrap();
        let decreasing = StepSchedule::decreasing(0.5, 1288.0, 1.0).unwrap();

        let smooth = ProblemSpec::smooth(toy());
        assert_eq!(classify_regime(&smooth, &mix, &safe).0, RegimeFlag::FixedSafe);
        assert_eq!(
            classify_regime(&smooth, &mix, &unsafe_sched).0,
            RegimeFlag::FixedUnsafe
        );
        assert_eq!(
            classify_regime(&smooth, &mix, &decreasing).0,
            RegimeFlag::Decreasing
        );
        assert_eq!(classify_regime(&smooth, &mix, &safe).1, 0.5);

        // Nonconvex regularizer on a λₙ < 0 matrix: outside the theory.
        let l0 = ProblemSpec::composite(toy(), vec![Regularizer::L0 { lambda: 0.5 }; 3]).unwrap();
        let (flag, kappa) = classify_regime(&l0, &mix, &safe);
        assert_eq!(flag, RegimeFlag::FixedOutsideTheory);
        assert_eq!(kappa, -0.5);
        assert!(flag.is_outside_theory());

        // Same regularizer on a positive-definite matrix: in regime.
        let lazy = crate::network::build_lazy_metropolis(&Graph::path(3).unwrap()).unwrap();
        let l0 = ProblemSpec::composite(toy(), vec![Regularizer::L0 { lambda: 0.5 }; 3]).unwrap();
        let tiny = StepSchedule::fixed(1e-6, 1.0).unwrap();
        let (flag, kappa) = classify_regime(&l0, &lazy, &tiny);
        assert!(kappa > 0.0);
        assert_eq!(flag, RegimeFlag::FixedSafe);
    }

    #[test]
    fn ergodic_objective_examples() {
        let mut trace = RunTrace {
            algorithm: Algorithm::Dgd,
            regime: RegimeFlag::FixedSafe,
            agents: 3,
            dimension: 1,
            zeta: 0.5,
            lambda_min: -0.5,
            lipschitz: 1.0,
            kappa: 0.5,
            x0_norm: 0.0,
            schedule_fixed: true,
            schedule_decreasing: None,
            rows: Vec::new(),
            failure: None,
            final_iterate: Array2::zeros((3, 1)),
        };
        let blank = |k: usize, alpha: f64, avg_objective: f64| TraceRow {
            k,
            alpha,
            objective: 0.0,
            avg_objective,
            lyapunov: 0.0,
            semi_norm_sq: 0.0,
            consensus_error: 0.0,
            consensus_max_node: 0.0,
            step_norm: 0.0,
            grad_norm: 0.0,
            stationarity: 0.0,
            xi_norm: 0.0,
            descent_residual: 0.0,
            avg_identity_gap: 0.0,
        };

        trace.rows = vec![blank(0, 1.0, 9.0)];
        assert!(matches!(
            trace.ergodic_objective(),
            Err(EngineError::TraceTooShort)
        ));

        // Constant objective stays constant under weighting.
        trace.rows = (0..5).map(|k| blank(k, 0.3, 7.0)).collect();
        for value in trace.ergodic_objective().unwrap() {
            assert!((value - 7.0).abs() < 1e-12);
        }

        // Two steps with unit weights average the destination values.
        trace.rows = vec![blank(0, 1.0, 5.0), blank(1, 1.0, 0.0), blank(2, 1.0, 2.0)];
        let erg = trace.ergodic_objective().unwrap();
        assert_eq!(erg, vec![0.0, 1.0]);
    }

    #[test]
    fn ergodic_objective_dominates_running_minimum() {
        let mix = three_agent_mixing();
        let problem = ProblemSpec::smooth(paper_toy_problem());
        let schedule = StepSchedule::decreasing(0.5, 1288.0, 1.0).unwrap();
        let x0 = Array2::<f64>::zeros((3, 1));
        let trace =
            run(&problem, &mix, &schedule, x0.view(), StopRule::max_iterations(300)).unwrap();
        let ergodic = trace.ergodic_objective().unwrap();
        let mut running_min = f64::INFINITY;
        for (idx, value) in ergodic.iter().enumerate() {
            running_min = running_min.min(trace.rows[idx + 1].avg_objective);
            assert!(*value >= running_min - 1e-12);
        }
    }

    #[test]
    fn step_floor_stops_early() {
        let mix = three_agent_mixing();
        let problem = ProblemSpec::smooth(isotropic_quadratic(3, 1, 1.0));
        let schedule = StepSchedule::fixed(0.5, 2.0).unwrap();
        let x0 = toy_state([1.0, 1.0, 1.0]);
        let stop = StopRule {
            max_iterations: 100_000,
            step_floor: Some(1e-9),
        };
        let trace = run(&problem, &mix, &schedule, x0.view(), stop).unwrap();
        assert!(trace.len() < 1000);
        assert!(trace.failure.is_none());
    }
}
