//! Per-agent smooth objectives with analytic gradients and Lipschitz
//! metadata, plus the built-in problem instances.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::gram_lambda_max;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObjectiveError {
    #[error("iterate has {found} rows, expected {expected} agents")]
    AgentCountMismatch { expected: usize, found: usize },
    #[error("iterate has {found} columns, expected dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

type ValueFn = dyn Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync;
type GradientFn = dyn Fn(ArrayView1<'_, f64>) -> Array1<f64> + Send + Sync;

/// A differentiable objective for one agent: analytic value and gradient,
/// a declared gradient-Lipschitz constant, and an optional global bound
/// on the gradient norm.
pub struct SmoothObjective {
    dimension: usize,
    lipschitz: f64,
    gradient_bound: Option<f64>,
    value_fn: Box<ValueFn>,
    gradient_fn: Box<GradientFn>,
}

impl std::fmt::Debug for SmoothObjective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothObjective")
            .field("dimension", &self.dimension)
            .field("lipschitz", &self.lipschitz)
            .field("gradient_bound", &self.gradient_bound)
            .finish()
    }
}

impl SmoothObjective {
    pub fn new(
        dimension: usize,
        lipschitz: f64,
        value_fn: Box<ValueFn>,
        gradient_fn: Box<GradientFn>,
    ) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        assert!(lipschitz > 0.0, "Lipschitz constant must be positive");
        SmoothObjective {
            dimension,
            lipschitz,
            gradient_bound: None,
            value_fn,
            gradient_fn,
        }
    }

    pub fn with_gradient_bound(mut self, bound: f64) -> Self {
        self.gradient_bound = Some(bound);
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn gradient_bound(&self) -> Option<f64> {
        self.gradient_bound
    }

    pub fn value(&self, x: ArrayView1<'_, f64>) -> f64 {
        (self.value_fn)(x)
    }

    pub fn gradient(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        (self.gradient_fn)(x)
    }
}

/// The per-agent objectives stacked into one map over n×p iterates.
#[derive(Debug)]
pub struct StackedObjective {
    agents: Vec<SmoothObjective>,
    lipschitz: f64,
}

impl StackedObjective {
    pub fn new(agents: Vec<SmoothObjective>) -> Self {
        assert!(!agents.is_empty(), "need at least one agent");
        let dim = agents[0].dimension();
        assert!(
            agents.iter().all(|a| a.dimension() == dim),
            "all agents must share one dimension"
        );
        let lipschitz = agents.iter().map(|a| a.lipschitz()).fold(0.0, f64::max);
        StackedObjective { agents, lipschitz }
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn dimension(&self) -> usize {
        self.agents[0].dimension()
    }

    /// `L_f = max_i L_{f_i}`, the Lipschitz constant of the stacked gradient.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn agents(&self) -> &[SmoothObjective] {
        &self.agents
    }

    /// Frobenius bound on the stacked gradient, available only when every
    /// agent declares one.
    pub fn gradient_bound(&self) -> Option<f64> {
        self.agents
            .iter()
            .map(|a| a.gradient_bound())
            .try_fold(0.0f64, |acc, b| b.map(|b| acc + b * b))
            .map(f64::sqrt)
    }

    fn check_shape(&self, x: &ArrayView2<'_, f64>) -> Result<(), ObjectiveError> {
        if x.nrows() != self.agent_count() {
            return Err(ObjectiveError::AgentCountMismatch {
                expected: self.agent_count(),
                found: x.nrows(),
            });
        }
        if x.ncols() != self.dimension() {
            return Err(ObjectiveError::DimensionMismatch {
                expected: self.dimension(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// `Σᵢ fᵢ(x_(i))` over the rows of the stacked iterate.
    pub fn stacked_value(&self, x: ArrayView2<'_, f64>) -> Result<f64, ObjectiveError> {
        self.check_shape(&x)?;
        Ok(self
            .agents
            .iter()
            .zip(x.rows())
            .map(|(agent, row)| agent.value(row))
            .sum())
    }

    /// Row i of the result is `∇fᵢ(x_(i))`.
    pub fn stacked_gradient(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, ObjectiveError> {
        self.check_shape(&x)?;
        let mut out = Array2::<f64>::zeros((x.nrows(), x.ncols()));
        for (i, (agent, row)) in self.agents.iter().zip(x.rows()).enumerate() {
            out.row_mut(i).assign(&agent.gradient(row));
        }
        Ok(out)
    }

    /// `Σᵢ fᵢ(u)` with every agent evaluated at the same point.
    pub fn value_at_consensual(&self, u: ArrayView1<'_, f64>) -> f64 {
        self.agents.iter().map(|a| a.value(u)).sum()
    }
}

/// One scalar piecewise objective: a polynomial core on `|x| ≤ 10` with
/// linear extensions outside.
struct PiecewiseCubic {
    /// Core coefficients `(c₄, c₃, c₂, c₁, c₀)`.
    core: [f64; 5],
    upper: (f64, f64),
    lower: (f64, f64),
}

impl PiecewiseCubic {
    fn value(&self, x: f64) -> f64 {
        if x.abs() <= 10.0 {
            let [c4, c3, c2, c1, c0] = self.core;
            (((c4 * x + c3) * x + c2) * x + c1) * x + c0
        } else if x > 10.0 {
            self.upper.0 * x + self.upper.1
        } else {
            self.lower.0 * x + self.lower.1
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        if x.abs() <= 10.0 {
            let [c4, c3, c2, c1, _] = self.core;
            ((4.0 * c4 * x + 3.0 * c3) * x + 2.0 * c2) * x + c1
        } else if x > 10.0 {
            self.upper.0
        } else {
            self.lower.0
        }
    }

    fn into_objective(self, lipschitz: f64, gradient_bound: f64) -> SmoothObjective {
        let piece = Arc::new(self);
        let value_piece = Arc::clone(&piece);
        SmoothObjective::new(
            1,
            lipschitz,
            Box::new(move |x| value_piece.value(x[0])),
            Box::new(move |x| Array1::from_elem(1, piece.derivative(x[0]))),
        )
        .with_gradient_bound(gradient_bound)
    }
}

/// The three-agent scalar benchmark: piecewise objectives with quartic or
/// cubic cores on `|x| ≤ 10` and linear extensions, declared smoothness
/// constants `L₁ = 1288`, `L₂ = 532`, `L₃ = 60`.
///
/// The summed objective has its global minimizer near `x = 2.62`, a local
/// minimizer near `−2.49`, and a local maximizer near `−1.12`. Gradients
/// are continuous at all four junctions; the first and third objectives
/// have value jumps at `x = −10` (their lower linear extensions do not
/// interpolate the core there), which this implementation keeps verbatim.
pub fn paper_toy_problem() -> StackedObjective {
    let f1 = PiecewiseCubic {
        // (x³ − 16x)(x + 2) = x⁴ + 2x³ − 16x² − 32x
        core: [1.0, 2.0, -16.0, -32.0, 0.0],
        upper: (4248.0, -32400.0),
        lower: (-3112.0, -25040.0),
    };
    let f2 = PiecewiseCubic {
        // (0.5x³ + x²)(x − 4) = 0.5x⁴ − x³ − 4x²
        core: [0.5, -1.0, -4.0, 0.0, 0.0],
        upper: (1620.0, -12600.0),
        lower: (-2220.0, -16600.0),
    };
    let f3 = PiecewiseCubic {
        // (x + 2)²(x − 4) = x³ − 12x − 16
        core: [0.0, 1.0, 0.0, -12.0, -16.0],
        upper: (288.0, -2016.0),
        lower: (288.0, -1984.0),
    };
    StackedObjective::new(vec![
        f1.into_objective(1288.0, 4248.0),
        f2.into_objective(532.0, 2220.0),
        f3.into_objective(60.0, 288.0),
    ])
}

/// Design matrices and responses behind a generated least-squares
/// instance; kept so tests and diagnostics can solve the aggregated
/// problem independently of any decentralized run.
#[derive(Debug, Clone)]
pub struct LeastSquaresData {
    pub design: Vec<Array2<f64>>,
    pub response: Vec<Array1<f64>>,
}

impl LeastSquaresData {
    /// Solve the aggregated normal equations `(Σ BᵢᵀBᵢ) x = Σ Bᵢᵀbᵢ` and
    /// return the minimizer with its objective value. `None` when the
    /// aggregated Gram matrix is not positive definite.
    pub fn aggregate_solution(&self) -> Option<(Array1<f64>, f64)> {
        let p = self.design[0].ncols();
        let mut gram = Array2::<f64>::zeros((p, p));
        let mut rhs = Array1::<f64>::zeros(p);
        for (b, y) in self.design.iter().zip(&self.response) {
            gram = gram + b.t().dot(b);
            rhs = rhs + b.t().dot(y);
        }
        let x = crate::linalg::solve_spd(gram.view(), rhs.view())?;
        let value = self
            .design
            .iter()
            .zip(&self.response)
            .map(|(b, y)| {
                let r = b.dot(&x) - y;
                0.5 * r.dot(&r)
            })
            .sum();
        Some((x, value))
    }
}

/// Decentralized least squares: agent i holds `fᵢ(x) = ½‖B₍ᵢ₎x − b₍ᵢ₎‖²`
/// with standard-normal `B₍ᵢ₎ ∈ R^{mᵢ×p}` and `b₍ᵢ₎ = B₍ᵢ₎x♮` for a planted
/// ground truth `x♮` with `sparsity` nonzero entries.
///
/// All randomness comes from one ChaCha8 stream seeded by `seed`: first
/// the support (a partial shuffle of indices), then the nonzero values,
/// then the design matrices row-major in agent order. The per-agent
/// Lipschitz constant is the largest eigenvalue of `B₍ᵢ₎ᵀB₍ᵢ₎`.
pub fn decentralized_least_squares(
    seed: u64,
    agents: usize,
    dimension: usize,
    rows_per_agent: usize,
    sparsity: usize,
) -> (StackedObjective, Array1<f64>, LeastSquaresData) {
    assert!(agents > 0 && dimension > 0 && rows_per_agent > 0);
    assert!(sparsity <= dimension, "sparsity cannot exceed dimension");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut indices: Vec<usize> = (0..dimension).collect();
    indices.shuffle(&mut rng);
    let mut ground_truth = Array1::<f64>::zeros(dimension);
    for &j in indices.iter().take(sparsity) {
        ground_truth[j] = rng.sample(StandardNormal);
    }

    let mut design = Vec::with_capacity(agents);
    let mut response = Vec::with_capacity(agents);
    let mut members = Vec::with_capacity(agents);
    for _ in 0..agents {
        let b = Array2::<f64>::from_shape_fn((rows_per_agent, dimension), |_| {
            rng.sample(StandardNormal)
        });
        let y = b.dot(&ground_truth);
        let lipschitz = gram_lambda_max(b.view()).max(f64::MIN_POSITIVE);
        let b = Arc::new(b);
        let y = Arc::new(y);
        design.push((*b).clone());
        response.push((*y).clone());

        let (bv, yv) = (Arc::clone(&b), Arc::clone(&y));
        let value_fn = Box::new(move |x: ArrayView1<'_, f64>| {
            let r = bv.dot(&x) - &*yv;
            0.5 * r.dot(&r)
        });
        let (bg, yg) = (Arc::clone(&b), Arc::clone(&y));
        let gradient_fn = Box::new(move |x: ArrayView1<'_, f64>| {
            let r = bg.dot(&x) - &*yg;
            bg.t().dot(&r)
        });
        members.push(SmoothObjective::new(
            dimension, lipschitz, value_fn, gradient_fn,
        ));
    }

    (
        StackedObjective::new(members),
        ground_truth,
        LeastSquaresData { design, response },
    )
}

/// The identically-zero objective (gradient 0 everywhere); the declared
/// unit Lipschitz constant is a valid bound. Used for pure-averaging runs.
pub fn zero_objective(agents: usize, dimension: usize) -> StackedObjective {
    let members = (0..agents)
        .map(|_| {
            SmoothObjective::new(
                dimension,
                1.0,
                Box::new(|_| 0.0),
                Box::new(move |x: ArrayView1<'_, f64>| Array1::zeros(x.len())),
            )
            .with_gradient_bound(0.0)
        })
        .collect();
    StackedObjective::new(members)
}

/// `½ c‖x‖²` for each agent; handy in tests.
pub fn isotropic_quadratic(agents: usize, dimension: usize, curvature: f64) -> StackedObjective {
    assert!(curvature > 0.0);
    let members = (0..agents)
        .map(|_| {
            SmoothObjective::new(
                dimension,
                curvature,
                Box::new(move |x: ArrayView1<'_, f64>| 0.5 * curvature * x.dot(&x)),
                Box::new(move |x: ArrayView1<'_, f64>| x.mapv(|v| curvature * v)),
            )
        })
        .collect();
    StackedObjective::new(members)
}

/// Central finite differences with per-coordinate step `1e-6·(1 + |xⱼ|)`;
/// the independent oracle for analytic gradients.
pub fn finite_difference_gradient<F>(f: F, x: ArrayView1<'_, f64>) -> Array1<f64>
where
    F: Fn(ArrayView1<'_, f64>) -> f64,
{
    let mut grad = Array1::<f64>::zeros(x.len());
    let mut probe = x.to_owned();
    for j in 0..x.len() {
        let h = 1e-6 * (1.0 + x[j].abs());
        probe[j] = x[j] + h;
        let plus = f(probe.view());
        probe[j] = x[j] - h;
        let minus = f(probe.view());
        probe[j] = x[j];
        grad[j] = (plus - minus) / (2.0 * h);
    }
    grad
}
