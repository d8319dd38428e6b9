//! Batch experiment front-end: JSON run configurations, built-in presets,
//! deterministic trace CSVs, and audit reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use dgd_core::diagnostics::{audit, AuditReport};
use dgd_core::engine::{run, EngineError, ProblemSpec, RunTrace, StopRule};
use dgd_core::network::{MixingSpec, NetworkError, NetworkSpec};
use dgd_core::objectives::{decentralized_least_squares, paper_toy_problem};
use dgd_core::regularizers::{Regularizer, RegularizerError};
use dgd_core::schedules::{ScheduleError, StepSchedule};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("network rejected: {0}")]
    Network(#[from] NetworkError),
    #[error("schedule rejected: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("regularizer rejected: {0}")]
    Regularizer(#[from] RegularizerError),
    #[error("engine error: {0}")]
    Engine(#[from] EngineError),
    #[error("run diverged: nonfinite iterate after iteration {after}; partial trace persisted")]
    Numerical { after: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("unknown preset `{0}`; `list` shows the available names")]
    UnknownPreset(String),
}

impl CliError {
    /// Process exit status: 2 for configuration problems, 3 for numerical
    /// failure (after persisting the partial trace), 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_)
            | CliError::Validation(_)
            | CliError::Network(_)
            | CliError::Schedule(_)
            | CliError::Regularizer(_)
            | CliError::Engine(_)
            | CliError::UnknownPreset(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io { .. } => 1,
        }
    }
}

/// Objective selection plus an optional regularizer (uniform or per agent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub objective: ObjectiveConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reg: Option<RegularizerConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    /// The built-in three-agent piecewise benchmark.
    PaperToy,
    /// Seeded decentralized least squares with a planted sparse signal.
    LeastSquares {
        seed: u64,
        agents: usize,
        dimension: usize,
        rows_per_agent: usize,
        sparsity: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegularizerConfig {
    Uniform(Regularizer),
    PerAgent(Vec<Regularizer>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepConfig {
    Fixed { alpha: f64 },
    Decreasing {
        epsilon: f64,
        #[serde(default = "default_numerator")]
        numerator: f64,
    },
}

fn default_numerator() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    Zeros,
    Constant { value: f64 },
    Rows { rows: Vec<Vec<f64>> },
    Random { seed: u64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_json: Option<PathBuf>,
}

/// A complete experiment description; parses losslessly to and from JSON
/// and rejects unknown keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub network: NetworkSpec,
    pub step: StepConfig,
    pub init: InitConfig,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Everything assembled from a configuration, ready to run.
pub struct Experiment {
    pub problem: ProblemSpec,
    pub mixing: MixingSpec,
    pub schedule: StepSchedule,
    pub initial: Array2<f64>,
    pub stop: StopRule,
}

/// Resolve a configuration into a runnable experiment, validating every
/// cross-field constraint.
pub fn build_experiment(config: &RunConfig) -> Result<Experiment, CliError> {
    let objective = match config.problem.objective {
        ObjectiveConfig::PaperToy => paper_toy_problem(),
        ObjectiveConfig::LeastSquares {
            seed,
            agents,
            dimension,
            rows_per_agent,
            sparsity,
        } => {
            if agents == 0 || dimension == 0 || rows_per_agent == 0 {
                return Err(CliError::Validation(
                    "least_squares sizes must be positive".into(),
                ));
            }
            if sparsity > dimension {
                return Err(CliError::Validation(format!(
                    "sparsity {sparsity} exceeds dimension {dimension}"
                )));
            }
            decentralized_least_squares(seed, agents, dimension, rows_per_agent, sparsity).0
        }
    };
    let agents = objective.agent_count();
    let dimension = objective.dimension();

    let mixing = config.network.build()?;
    if mixing.node_count() != agents {
        return Err(CliError::Validation(format!(
            "network has {} nodes but the objective has {} agents",
            mixing.node_count(),
            agents
        )));
    }

    let regularizers = match &config.problem.reg {
        None => None,
        Some(RegularizerConfig::Uniform(reg)) => Some(vec![reg.clone(); agents]),
        Some(RegularizerConfig::PerAgent(list)) => {
            if list.len() != agents {
                return Err(CliError::Validation(format!(
                    "{} regularizers for {} agents",
                    list.len(),
                    agents
                )));
            }
            Some(list.clone())
        }
    };

    let lipschitz = objective.lipschitz();
    let problem = match regularizers {
        Some(regs) => ProblemSpec::composite(objective, regs)?,
        None => ProblemSpec::smooth(objective),
    };

    let schedule = match config.step {
        StepConfig::Fixed { alpha } => {
            let bound = if problem.has_nonconvex_regularizer() && mixing.has_positive_lambda_min()
            {
                mixing.lambda_min() / lipschitz
            } else {
                (1.0 + mixing.lambda_min()) / lipschitz
            };
            StepSchedule::fixed(alpha, bound)?
        }
        StepConfig::Decreasing { epsilon, numerator } => {
            StepSchedule::decreasing(epsilon, lipschitz, numerator)?
        }
    };

    let initial = match &config.init {
        InitConfig::Zeros => Array2::zeros((agents, dimension)),
        InitConfig::Constant { value } => Array2::from_elem((agents, dimension), *value),
        InitConfig::Rows { rows } => {
            if rows.len() != agents || rows.iter().any(|r| r.len() != dimension) {
                return Err(CliError::Validation(format!(
                    "init rows must be {agents}×{dimension}"
                )));
            }
            let mut x0 = Array2::zeros((agents, dimension));
            for (i, row) in rows.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    x0[[i, j]] = *v;
                }
            }
            x0
        }
        InitConfig::Random { seed, scale } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            Array2::from_shape_fn((agents, dimension), |_| {
                *scale * rng.sample::<f64, _>(StandardNormal)
            })
        }
    };

    Ok(Experiment {
        problem,
        mixing,
        schedule,
        initial,
        stop: StopRule::max_iterations(config.iterations),
    })
}

/// Run a resolved experiment and audit its trace.
pub fn execute(config: &RunConfig) -> Result<(RunTrace, AuditReport), CliError> {
    let experiment = build_experiment(config)?;
    let trace = run(
        &experiment.problem,
        &experiment.mixing,
        &experiment.schedule,
        experiment.initial.view(),
        experiment.stop,
    )?;
    let report = audit(&trace);
    Ok((trace, report))
}

/// Serialize one float with 17 significant digits so the CSV round-trips
/// bit-exactly.
fn fmt_float(value: f64) -> String {
    format!("{value:.16e}")
}

pub const TRACE_HEADER: &str = "k,alpha,objective,lyapunov,consensus_error,step_norm,\
avg_grad_norm,descent_residual,regime,avg_objective,semi_norm_sq,consensus_max_node,\
grad_norm,xi_norm,avg_identity_gap";

/// The trace as CSV text: header plus one row per recorded iteration,
/// UTF-8, LF line endings.
pub fn trace_to_csv(trace: &RunTrace) -> String {
    let regime = trace.regime.to_string();
    let mut out = String::with_capacity(64 + trace.rows.len() * 220);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for row in &trace.rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.k,
            fmt_float(row.alpha),
            fmt_float(row.objective),
            fmt_float(row.lyapunov),
            fmt_float(row.consensus_error),
            fmt_float(row.step_norm),
            fmt_float(row.stationarity),
            fmt_float(row.descent_residual),
            regime,
            fmt_float(row.avg_objective),
            fmt_float(row.semi_norm_sq),
            fmt_float(row.consensus_max_node),
            fmt_float(row.grad_norm),
            fmt_float(row.xi_norm),
            fmt_float(row.avg_identity_gap),
        );
    }
    out
}

/// Summary block persisted next to the audit rows.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub regime: String,
    pub iterations_recorded: usize,
    pub failed_after: Option<usize>,
    pub final_objective: f64,
    pub final_consensus_error: f64,
    /// `‖Σᵢ(∇fᵢ + ξᵢ)‖` at the final iterate.
    pub final_stationarity: f64,
    /// Mean of the final agent rows: where the run ended up.
    pub final_average_point: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditDocument {
    pub summary: RunSummary,
    pub audit: AuditReport,
}

pub fn audit_document(trace: &RunTrace, report: &AuditReport) -> AuditDocument {
    let last = trace.last();
    let n = trace.agents as f64;
    let mut mean = vec![0.0; trace.dimension];
    for row in trace.final_iterate.rows() {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v / n;
        }
    }
    AuditDocument {
        summary: RunSummary {
            algorithm: trace.algorithm.to_string(),
            regime: trace.regime.to_string(),
            iterations_recorded: trace.rows.len(),
            failed_after: trace.failure.map(|f| f.after_iteration),
            final_objective: last.objective,
            final_consensus_error: last.consensus_error,
            final_stationarity: last.stationarity * n,
            final_average_point: mean,
        },
        audit: report.clone(),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Execute a configuration and persist its trace CSV and audit JSON.
///
/// On a numerical failure the partial trace and audit are still written
/// before the error (exit code 3) is returned.
pub fn run_experiment(
    config: &RunConfig,
    out_dir: &Path,
    stem: &str,
) -> Result<(RunTrace, AuditReport, PathBuf, PathBuf), CliError> {
    let (trace, report) = execute(config)?;

    let default_trace = out_dir.join(format!("{stem}_trace.csv"));
    let default_audit = out_dir.join(format!("{stem}_audit.json"));
    let (trace_path, audit_path) = match &config.output {
        Some(output) => (
            output.trace_csv.clone().unwrap_or(default_trace),
            output.audit_json.clone().unwrap_or(default_audit),
        ),
        None => (default_trace, default_audit),
    };

    write_file(&trace_path, &trace_to_csv(&trace))?;
    let document = audit_document(&trace, &report);
    let json = serde_json::to_string_pretty(&document).expect("audit serializes");
    write_file(&audit_path, &json)?;

    if let Some(failure) = trace.failure {
        return Err(CliError::Numerical {
            after: failure.after_iteration,
        });
    }
    Ok((trace, report, trace_path, audit_path))
}

/// Built-in presets, in stable order.
pub fn list_presets() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "paper_toy_fixed",
            "three-agent piecewise benchmark, explicit 3x3 mixing matrix, fixed alpha = 3e-4 \
             (safe), zeros start, K = 200000",
        ),
        (
            "paper_toy_dangerous",
            "same benchmark started at (-1, -1.2, -1.1) between the stationary points, fixed \
             alpha = 3e-4, K = 200000",
        ),
        (
            "paper_l0",
            "decentralized L0 least squares: n = 10 agents, p = 256, 150 rows each, lambda = \
             0.5, ring-plus-two-chords Metropolis network (stand-in), fixed alpha = 5e-4, \
             zeros start, K = 10000",
        ),
    ]
}

/// The explicit 3×3 mixing matrix used by the toy presets.
fn toy_matrix() -> NetworkSpec {
    NetworkSpec::Matrix {
        matrix: vec![
            vec![0.5, 0.0, 0.5],
            vec![0.0, 0.5, 0.5],
            vec![0.5, 0.5, 0.0],
        ],
    }
}

/// Ten-agent ring with chords (0,5) and (2,7); a documented stand-in for
/// the network figure the L0 experiment uses.
fn ring_with_chords() -> NetworkSpec {
    let mut edges: Vec<(usize, usize)> = (0..10).map(|i| (i, (i + 1) % 10)).collect();
    edges.push((0, 5));
    edges.push((2, 7));
    NetworkSpec::Edges { nodes: 10, edges }
}

pub fn preset(name: &str) -> Result<RunConfig, CliError> {
    match name {
        "paper_toy_fixed" => Ok(RunConfig {
            problem: ProblemConfig {
                objective: ObjectiveConfig::PaperToy,
                reg: None,
            },
            network: toy_matrix(),
            step: StepConfig::Fixed { alpha: 3e-4 },
            init: InitConfig::Zeros,
            iterations: 200_000,
            output: None,
        }),
        "paper_toy_dangerous" => Ok(RunConfig {
            problem: ProblemConfig {
                objective: ObjectiveConfig::PaperToy,
                reg: None,
            },
            network: toy_matrix(),
            step: StepConfig::Fixed { alpha: 3e-4 },
            init: InitConfig::Rows {
                rows: vec![vec![-1.0], vec![-1.2], vec![-1.1]],
            },
            iterations: 200_000,
            output: None,
        }),
        "paper_l0" => Ok(RunConfig {
            problem: ProblemConfig {
                objective: ObjectiveConfig::LeastSquares {
                    seed: 7,
                    agents: 10,
                    dimension: 256,
                    rows_per_agent: 150,
                    sparsity: 20,
                },
                reg: Some(RegularizerConfig::Uniform(Regularizer::L0 { lambda: 0.5 })),
            },
            network: ring_with_chords(),
            step: StepConfig::Fixed { alpha: 5e-4 },
            init: InitConfig::Zeros,
            iterations: 10_000,
            output: None,
        }),
        other => Err(CliError::UnknownPreset(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn configs_round_trip_losslessly() {
        for (name, _) in list_presets() {
            let config = preset(name).unwrap();
            let json = config.to_json();
            let back = RunConfig::from_json(&json).unwrap();
            assert_eq!(config, back, "{name}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut value: serde_json::Value =
            serde_json::from_str(&preset("paper_toy_fixed").unwrap().to_json()).unwrap();
        value["surprise"] = serde_json::json!(1);
        let text = value.to_string();
        assert!(RunConfig::from_json(&text).is_err());
    }

    #[test]
    fn preset_listing_is_stable_and_complete() {
        let names: Vec<_> = list_presets().iter().map(|(n, _)| *n).collect();
        assert_eq!(
            names,
            vec!["paper_toy_fixed", "paper_toy_dangerous", "paper_l0"]
        );
        assert_eq!(names, list_presets().iter().map(|(n, _)| *n).collect::<Vec<_>>());
        for name in names {
            assert!(preset(name).is_ok());
        }
        assert!(matches!(
            preset("nope"),
            Err(CliError::UnknownPreset(_))
        ));
    }

    #[test]
    fn mismatched_network_rejected() {
        let mut config = preset("paper_toy_fixed").unwrap();
        config.network = NetworkSpec::Edges {
            nodes: 4,
            edges: vec![(0, 1), (1, 2), (2, 3)],
        };
        match build_experiment(&config) {
            Err(CliError::Validation(msg)) => assert!(msg.contains("4 nodes")),
            other => panic!("expected validation error, got {:?}", other.is_ok()),
        }
    }

    #[test]
    fn per_agent_regularizer_length_checked() {
        let mut config = preset("paper_toy_fixed").unwrap();
        config.problem.reg = Some(RegularizerConfig::PerAgent(vec![
            Regularizer::L1 { lambda: 0.1 },
            Regularizer::Zero,
        ]));
        assert!(matches!(
            build_experiment(&config),
            Err(CliError::Validation(_))
        ));
    }

    #[test]
    fn init_rows_shape_checked() {
        let mut config = preset("paper_toy_fixed").unwrap();
        config.init = InitConfig::Rows {
            rows: vec![vec![1.0, 2.0]; 3],
        };
        assert!(matches!(
            build_experiment(&config),
            Err(CliError::Validation(_))
        ));
    }

    #[test]
    fn csv_floats_round_trip() {
        for v in [3e-4, 1.0 / 3.0, -2.617433738719e2, f64::MIN_POSITIVE] {
            let text = fmt_float(v);
            let back: f64 = text.parse().unwrap();
            assert_eq!(v, back, "{text}");
        }
    }

    #[test]
    fn trace_csv_layout() {
        let mut config = preset("paper_toy_fixed").unwrap();
        config.iterations = 3;
        let (trace, _) = execute(&config).unwrap();
        let csv = trace_to_csv(&trace);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5, "header plus K+1 rows");
        assert!(lines[0].starts_with("k,alpha,objective,lyapunov,consensus_error"));
        assert!(lines[1].starts_with("0,"));
        assert!(lines[4].starts_with("3,"));
        assert!(lines[1].contains("fixed_safe"));
        assert!(!csv.contains('\r'));
        let columns = lines[0].split(',').count();
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), columns);
        }
    }

    #[test]
    fn random_init_is_seed_deterministic() {
        let mut config = preset("paper_toy_fixed").unwrap();
        config.init = InitConfig::Random { seed: 5, scale: 0.1 };
        let a = build_experiment(&config).unwrap().initial;
        let b = build_experiment(&config).unwrap().initial;
        assert_eq!(a, b);
        config.init = InitConfig::Random { seed: 6, scale: 0.1 };
        let c = build_experiment(&config).unwrap().initial;
        assert_ne!(a, c);
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(
            CliError::Validation("x".into()).exit_code(),
            2
        );
        assert_eq!(CliError::Numerical { after: 3 }.exit_code(), 3);
    }
}
