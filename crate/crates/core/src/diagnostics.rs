//! Post-hoc analysis of run traces: log-log rate fits, an audit of every
//! inequality the engine records, and the convex-rate envelope check.

use std::ops::Range;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{RegimeFlag, RunTrace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("fit window {0}..{1} is empty or out of bounds for series of length {2}")]
    BadWindow(usize, usize, usize),
    #[error("series value {value} at index {index} is not positive; cannot take logs")]
    NonpositiveValue { index: usize, value: f64 },
    #[error("trace has fewer than two records")]
    TraceTooShort,
}

/// Least-squares fit of `log(series_k)` against `log(k+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub window_start: usize,
    pub window_end: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fit a power-law exponent over `window` (indices into `series`; the
/// abscissa of index k is `ln(k+1)`).
pub fn fit_rate(series: &[f64], window: Range<usize>) -> Result<RateFit, DiagnosticsError> {
    if window.is_empty() || window.end > series.len() {
        return Err(DiagnosticsError::BadWindow(
            window.start,
            window.end,
            series.len(),
        ));
    }
    for index in window.clone() {
        let value = series[index];
        if !(value > 0.0) || !value.is_finite() {
            return Err(DiagnosticsError::NonpositiveValue { index, value });
        }
    }
    let count = window.len() as f64;
    let xs = window.clone().map(|k| ((k + 1) as f64).ln());
    let ys = window.clone().map(|k| series[k].ln());
    let mean_x = xs.clone().sum::<f64>() / count;
    let mean_y = ys.clone().sum::<f64>() / count;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    // A single-point or single-abscissa window degenerates to slope 0.
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = mean_y - slope * mean_x;
    let ss_res = syy - slope * sxy;
    let r_squared = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RateFit {
        window_start: window.start,
        window_end: window.end,
        slope,
        intercept,
        r_squared,
    })
}

/// Second-half window of a series, the default for discarding transients.
pub fn tail_window(len: usize) -> Range<usize> {
    len / 2..len
}

/// One audited inequality: its worst violation over the run, the
/// tolerance it is held to, and whether the run's regime makes the
/// underlying theorem applicable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub name: &'static str,
    pub iterations_checked: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Whether the theory claims this inequality for this run. Rows can
    /// fail while out of regime (that is the point of unsafe control
    /// runs) or incidentally hold without a guarantee.
    pub in_regime: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub regime: String,
    pub rows: Vec<AuditRow>,
}

impl AuditReport {
    /// True when every in-regime row passes.
    pub fn all_in_regime_pass(&self) -> bool {
        self.rows.iter().all(|row| !row.in_regime || row.passed)
    }

    pub fn row(&self, name: &str) -> Option<&AuditRow> {
        self.rows.iter().find(|row| row.name == name)
    }
}

impl std::fmt::Display for AuditReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "audit ({})", self.regime)?;
        writeln!(
            f,
            "{:<34} {:>10} {:>14} {:>10} {:>7} {:>9}",
            "inequality", "checked", "max_violation", "tol", "pass", "in_regime"
        )?;
        for row in &self.rows {
            writeln!(
                f,
                "{:<34} {:>10} {:>14.3e} {:>10.1e} {:>7} {:>9}",
                row.name,
                row.iterations_checked,
                row.max_violation,
                row.tolerance,
                if row.passed { "ok" } else { "FAIL" },
                if row.in_regime { "yes" } else { "no" }
            )?;
        }
        Ok(())
    }
}

const DESCENT_TOL: f64 = 1e-9;
const CONSENSUS_TOL: f64 = 1e-9;
const IDENTITY_TOL: f64 = 1e-12;
const INVERSE_DIFF_TOL: f64 = 1e-9;

/// Non-finite per-iteration quantities (from partially diverged runs)
/// count as infinite violations rather than vanishing under `f64::max`.
fn sanitize(value: f64) -> f64 {
    if value.is_finite() {
        value
    } else {
        f64::INFINITY
    }
}

fn make_row(
    name: &'static str,
    checked: usize,
    max_violation: f64,
    tolerance: f64,
    in_regime: bool,
) -> AuditRow {
    AuditRow {
        name,
        iterations_checked: checked,
        max_violation,
        tolerance,
        passed: checked == 0 || max_violation <= tolerance,
        in_regime,
    }
}

/// Audit every inequality the engine recorded. Pure: identical traces
/// produce identical reports.
pub fn audit(trace: &RunTrace) -> AuditReport {
    let rows_data = &trace.rows;
    let outside = trace.regime.is_outside_theory();

    // Sufficient descent, theorem form: residual already recorded.
    let mut residual_max = f64::NEG_INFINITY;
    for row in rows_data.iter().skip(1) {
        residual_max = residual_max.max(sanitize(row.descent_residual));
    }
    let residual_checked = rows_data.len().saturating_sub(1);
    let residual_row = make_row(
        "sufficient_descent_residual",
        residual_checked,
        if residual_checked == 0 {
            0.0
        } else {
            residual_max
        },
        DESCENT_TOL,
        !outside,
    );

    // Monotone Lyapunov descent: the fixed-step consequence of the
    // descent lemma. This is the row an unsafe step size trips.
    let monotone_row = if trace.schedule_fixed {
        let mut worst = f64::NEG_INFINITY;
        for pair in rows_data.windows(2) {
            worst = worst.max(sanitize(pair[1].lyapunov - pair[0].lyapunov));
        }
        let checked = rows_data.len().saturating_sub(1);
        Some(make_row(
            "sufficient_descent_monotone",
            checked,
            if checked == 0 { 0.0 } else { worst },
            DESCENT_TOL,
            trace.regime == RegimeFlag::FixedSafe,
        ))
    } else {
        None
    };

    // Consensus recursion with C = 1 in spectral norm:
    // ‖x^k − x̄^k‖ ≤ ζ^k‖x⁰‖ + B_emp Σ_{j<k} α_j ζ^{k−1−j}.
    let mut recursion_max = f64::NEG_INFINITY;
    let mut weighted_sum = 0.0; // Σ_{j<k} α_j ζ^{k−1−j}
    let mut direction_bound = 0.0f64; // max_{j<k} ‖∇f(x^j) + ξ^{j+1}‖ surrogate
    let mut zeta_pow = 1.0;
    for (k, row) in rows_data.iter().enumerate() {
        let bound = zeta_pow * trace.x0_norm + direction_bound * weighted_sum;
        recursion_max = recursion_max.max(sanitize(row.consensus_error - bound));
        // Advance the accumulators with the step leaving iterate k.
        if k + 1 < rows_data.len() {
            let direction = row.grad_norm + rows_data[k + 1].xi_norm;
            direction_bound = direction_bound.max(direction);
            weighted_sum = trace.zeta * weighted_sum + row.alpha;
            zeta_pow *= trace.zeta;
        }
    }
    let recursion_row = make_row(
        "consensus_recursion",
        rows_data.len(),
        recursion_max,
        CONSENSUS_TOL,
        true,
    );

    // Fixed-step consensual bound per node:
    // maxᵢ ‖x_(i)^k − x̄^k‖ ≤ αD_emp/(1−ζ) + ζ^k‖x⁰‖.
    let node_bound_row = if trace.schedule_fixed && trace.zeta < 1.0 {
        let alpha = rows_data.first().map_or(0.0, |r| r.alpha);
        let geometric = 1.0 / (1.0 - trace.zeta);
        let mut worst = f64::NEG_INFINITY;
        let mut d_emp = 0.0f64;
        let mut zeta_pow = 1.0;
        for (k, row) in rows_data.iter().enumerate() {
            d_emp = d_emp.max(row.grad_norm + row.xi_norm);
            let bound = alpha * d_emp * geometric + zeta_pow * trace.x0_norm;
            worst = worst.max(sanitize(row.consensus_max_node - bound));
            if k + 1 < rows_data.len() {
                zeta_pow *= trace.zeta;
            }
        }
        Some(make_row(
            "consensual_bound",
            rows_data.len(),
            worst,
            CONSENSUS_TOL,
            true,
        ))
    } else {
        None
    };

    // Averaged-iterate identity, exact up to roundoff.
    let mut identity_max = f64::NEG_INFINITY;
    for row in rows_data.iter().skip(1) {
        identity_max = identity_max.max(sanitize(row.avg_identity_gap));
    }
    let identity_checked = rows_data.len().saturating_sub(1);
    let identity_row = make_row(
        "averaged_iterate_identity",
        identity_checked,
        if identity_checked == 0 {
            0.0
        } else {
            identity_max
        },
        IDENTITY_TOL,
        true,
    );

    // Decreasing schedules: α_{k+1}⁻¹ − α_k⁻¹ ≤ 2εL_f(k+1)^{ε−1}/c.
    let inverse_diff_row = trace.schedule_decreasing.map(|(epsilon, numerator)| {
        let mut worst = f64::NEG_INFINITY;
        for (k, pair) in rows_data.windows(2).enumerate() {
            let diff = 1.0 / pair[1].alpha - 1.0 / pair[0].alpha;
            let bound = 2.0 * epsilon * trace.lipschitz / numerator
                * ((k + 1) as f64).powf(epsilon - 1.0);
            worst = worst.max(sanitize(diff - bound));
        }
        let checked = rows_data.len().saturating_sub(1);
        make_row(
            "step_inverse_difference",
            checked,
            if checked == 0 { 0.0 } else { worst },
            INVERSE_DIFF_TOL,
            true,
        )
    });

    let mut rows = vec![residual_row];
    if let Some(row) = monotone_row {
        rows.push(row);
    }
    rows.push(recursion_row);
    if let Some(row) = node_bound_row {
        rows.push(row);
    }
    rows.push(identity_row);
    if let Some(row) = inverse_diff_row {
        rows.push(row);
    }

    AuditReport {
        regime: trace.regime.to_string(),
        rows,
    }
}

/// The ergodic-objective gap against the envelope
/// `(D₃ + D₄ Σ_{k≤K} α_k²) / Σ_{k≤K} α_k` with `C = 1` and the empirical
/// gradient bound `B = max_k (‖∇f(x^k)‖ + ‖ξ^k‖ + L_f·‖x^k − x̄^k‖)`
/// (the last term also covers gradients at the averaged iterates).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexRateCheck {
    pub ergodic_gap: Vec<f64>,
    pub envelope: Vec<f64>,
    pub gradient_bound: f64,
    pub d3: f64,
    pub d4: f64,
    pub max_violation: f64,
    pub holds: bool,
}

/// Compare the run's ergodic objective against the envelope. `f_opt` must
/// come from an independent solver of the aggregated problem and
/// `distance_to_opt` is `‖x⁰ − x_opt‖` with `x_opt` stacked consensually.
pub fn convex_rate_check(
    trace: &RunTrace,
    f_opt: f64,
    distance_to_opt: f64,
) -> Result<ConvexRateCheck, DiagnosticsError> {
    if trace.rows.len() < 2 {
        return Err(DiagnosticsError::TraceTooShort);
    }
    let ergodic = trace
        .ergodic_objective()
        .map_err(|_| DiagnosticsError::TraceTooShort)?;
    let gradient_bound = trace
        .rows
        .iter()
        .map(|row| row.grad_norm + row.xi_norm + trace.lipschitz * row.consensus_error)
        .fold(0.0f64, f64::max);

    let zeta = trace.zeta;
    let d1 = trace.x0_norm * zeta / (2.0 * (1.0 - zeta));
    let d2 = trace.x0_norm * zeta / 2.0 + gradient_bound / (1.0 - zeta);
    let d3 = 0.5 * distance_to_opt * distance_to_opt + gradient_bound * d1;
    let d4 = gradient_bound * d2;

    let mut sum_alpha = 0.0;
    let mut sum_alpha_sq = 0.0;
    let mut envelope = Vec::with_capacity(ergodic.len());
    let mut gap = Vec::with_capacity(ergodic.len());
    let mut max_violation = f64::NEG_INFINITY;
    for (k, value) in ergodic.iter().enumerate() {
        let alpha = trace.rows[k].alpha;
        sum_alpha += alpha;
        sum_alpha_sq += alpha * alpha;
        let bound = (d3 + d4 * sum_alpha_sq) / sum_alpha;
        let difference = value - f_opt;
        max_violation = max_violation.max(difference - bound);
        envelope.push(bound);
        gap.push(difference);
    }

    Ok(ConvexRateCheck {
        ergodic_gap: gap,
        envelope,
        gradient_bound,
        d3,
        d4,
        max_violation,
        holds: max_violation <= 1e-9,
    })
}
