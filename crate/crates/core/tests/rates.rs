//! Empirical rate checks: consensus and semi-norm decay under decreasing
//! steps, and the convex ergodic-rate envelope.

use dgd_core::diagnostics::{convex_rate_check, fit_rate, tail_window};
use dgd_core::engine::{run, ProblemSpec, StopRule};
use dgd_core::network::{build_lazy_metropolis, three_agent_mixing, Graph};
use dgd_core::objectives::{decentralized_least_squares, paper_toy_problem};
use dgd_core::schedules::StepSchedule;
use ndarray::Array2;

#[test]
fn consensus_and_semi_norm_slopes_match_the_step_exponent() {
    // Consensus error decays like k^{−ε} and the semi-norm like k^{−2ε};
    // the numerator 2.5 lets the trajectory settle inside the fit window.
    let mix = three_agent_mixing();
    for epsilon in [0.5, 1.0] {
        let problem = ProblemSpec::smooth(paper_toy_problem());
        let schedule =
            StepSchedule::decreasing(epsilon, problem.objective().lipschitz(), 2.5).unwrap();
        let x0 = Array2::<f64>::zeros((3, 1));
        let trace = run(
            &problem,
            &mix,
            &schedule,
            x0.view(),
            StopRule::max_iterations(10_000),
        )
        .unwrap();

        let consensus: Vec<f64> = trace.rows.iter().map(|r| r.consensus_error).collect();
        let fit = fit_rate(&consensus, tail_window(consensus.len())).unwrap();
        assert!(
            (fit.slope + epsilon).abs() <= 0.15,
            "epsilon {epsilon}: consensus slope {}",
            fit.slope
        );

        let semi: Vec<f64> = trace.rows.iter().map(|r| r.semi_norm_sq).collect();
        let fit = fit_rate(&semi, tail_window(semi.len())).unwrap();
        assert!(
            (fit.slope + 2.0 * epsilon).abs() <= 0.3,
            "epsilon {epsilon}: semi-norm slope {}",
            fit.slope
        );
    }
}

#[test]
fn convex_ergodic_gap_stays_under_envelope() {
    // Unregularized least squares on a positive-definite mixing matrix;
    // the optimum comes from the aggregated normal equations, never from
    // the decentralized run itself.
    let graph = Graph::path(6).unwrap();
    let mix = build_lazy_metropolis(&graph).unwrap();
    assert!(mix.lambda_min() > 0.0);
    let (obj, _, data) = decentralized_least_squares(11, 6, 40, 30, 5);
    let lipschitz = obj.lipschitz();
    let (x_opt, f_opt) = data.aggregate_solution().expect("aggregated Gram is PD");

    // Numerator below λₙ keeps the per-step convex inequality valid from
    // the very first iterate.
    let numerator = 0.3;
    assert!(numerator < mix.lambda_min());
    let schedule = StepSchedule::decreasing(0.5, lipschitz, numerator).unwrap();
    let problem = ProblemSpec::smooth(obj);
    let x0 = Array2::<f64>::zeros((6, 40));
    let trace = run(
        &problem,
        &mix,
        &schedule,
        x0.view(),
        StopRule::max_iterations(4_000),
    )
    .unwrap();

    let distance = (x_opt.dot(&x_opt) * 6.0).sqrt(); // ‖0 − 𝟙x_optᵀ‖
    let check = convex_rate_check(&trace, f_opt, distance).unwrap();
    assert!(
        check.holds,
        "envelope violated by {}",
        check.max_violation
    );
    assert!(check.envelope.iter().all(|b| b.is_finite() && *b > 0.0));
    assert!(check.ergodic_gap.iter().all(|g| *g >= -1e-9));

    // The gap itself decays roughly like ln K/√K: tail slope ≤ −0.35.
    let fit = fit_rate(&check.ergodic_gap, tail_window(check.ergodic_gap.len())).unwrap();
    assert!(fit.slope <= -0.35, "ergodic gap slope {}", fit.slope);
}

#[test]
fn consensual_start_at_optimum_has_zero_gap() {
    let graph = Graph::path(4).unwrap();
    let mix = build_lazy_metropolis(&graph).unwrap();
    let (obj, truth, data) = decentralized_least_squares(13, 4, 12, 16, 3);
    let (x_opt, f_opt) = data.aggregate_solution().unwrap();
    // Noiseless instance: the aggregated minimizer is the planted signal.
    for j in 0..12 {
        assert!((x_opt[j] - truth[j]).abs() < 1e-8);
    }
    let schedule = StepSchedule::decreasing(0.5, obj.lipschitz(), 0.2).unwrap();
    let problem = ProblemSpec::smooth(obj);
    let mut x0 = Array2::<f64>::zeros((4, 12));
    for mut row in x0.rows_mut() {
        row.assign(&x_opt);
    }
    let trace = run(
        &problem,
        &mix,
        &schedule,
        x0.view(),
        StopRule::max_iterations(200),
    )
    .unwrap();
    let check = convex_rate_check(&trace, f_opt, 0.0).unwrap();
    for gap in check.ergodic_gap {
        assert!(gap.abs() <= 1e-9, "gap {gap}");
    }
}
