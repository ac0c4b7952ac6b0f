//! Reference dynamics in weight space.
//!
//! Nothing in here touches tokens or attention. Batch gradient descent, the
//! per-position causal recursion, closed-form stationary points and the
//! online-GD sequences are computed straight from the regression data so the
//! attention passes in [`crate::model`] can be checked against them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ScaleScheme;
use crate::numerics::{
    self, dot, left_triangular_solve, min_norm_least_squares, spectral_radius, Matrix,
    NumericsError, RowVector,
};
use crate::taskgen::RegressionTask;

/// Squared norms at or below this are treated as a zero example.
pub const ZERO_NORM_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("example {0} has (numerically) zero norm")]
    ZeroNormExample(usize),
    #[error("query set is empty")]
    EmptyQuerySet,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, OracleError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicsMode {
    Prefix,
    Causal,
    Causal2,
}

impl DynamicsMode {
    pub fn scheme(self) -> Option<ScaleScheme> {
        match self {
            DynamicsMode::Prefix => None,
            DynamicsMode::Causal => Some(ScaleScheme::OverN),
            DynamicsMode::Causal2 => Some(ScaleScheme::OverJ),
        }
    }

    pub fn from_scheme(scheme: ScaleScheme) -> Self {
        match scheme {
            ScaleScheme::OverN => DynamicsMode::Causal,
            ScaleScheme::OverJ => DynamicsMode::Causal2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DynamicsMode::Prefix => "prefix",
            DynamicsMode::Causal => "causal",
            DynamicsMode::Causal2 => "causal2",
        }
    }
}

/// Weights per layer. Prefix keeps one weight per layer; the causal modes keep
/// one per position, plus the coefficient vector `a` that generates them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTrajectory {
    pub mode: DynamicsMode,
    /// `weights[l][j]`; for prefix the inner list has a single entry.
    pub weights: Vec<Vec<RowVector>>,
    /// `coeffs[l]` for the causal modes, empty for prefix.
    pub coeffs: Vec<RowVector>,
}

impl WeightTrajectory {
    pub fn layers(&self) -> usize {
        self.weights.len() - 1
    }

    /// Weight in effect at in-context position `j` after `l` layers.
    pub fn weight(&self, l: usize, j: usize) -> &RowVector {
        match self.mode {
            DynamicsMode::Prefix => &self.weights[l][0],
            _ => &self.weights[l][j],
        }
    }

    /// Weight applied to queries: the shared weight, or the last position's.
    pub fn query_weight(&self, l: usize) -> &RowVector {
        self.weights[l].last().expect("at least one weight")
    }
}

/// Batch gradient descent on the in-context squared loss, started at `w0`.
pub fn gd_trajectory(task: &RegressionTask, eta: f64, layers: usize, w0: &RowVector) -> Result<WeightTrajectory> {
    if w0.dim() != task.d() {
        return Err(OracleError::DimensionMismatch(format!(
            "w0 has length {}, task has d = {}",
            w0.dim(),
            task.d()
        )));
    }
    let xs = task.inputs();
    let step = eta / task.n() as f64;
    let mut weights = vec![vec![w0.clone()]];
    for _ in 0..layers {
        let w = &weights.last().expect("non-empty")[0];
        let mut next = w.clone();
        for (xi, &yi) in xs.iter().zip(task.y.iter()) {
            next.axpy(step * (yi - dot(w, xi)), xi);
        }
        weights.push(vec![next]);
    }
    Ok(WeightTrajectory {
        mode: DynamicsMode::Prefix,
        weights,
        coeffs: Vec::new(),
    })
}

/// Per-position weights under causal attention, from zero.
///
/// The weights follow the direct recursion
/// `w_j ← w_j + c_j Σ_{i≤j} (y_i − w_i x_i) x_iᵀ`. The coefficient vector is
/// advanced separately as `a ← a + c (y − a M)` with `M = T` (scale `η/n`) or
/// `M = S`, `c = η` (scale `η/j`), so the two can be compared.
pub fn causal_gd_trajectory(
    task: &RegressionTask,
    eta: f64,
    layers: usize,
    scale: ScaleScheme,
) -> Result<WeightTrajectory> {
    let n = task.n();
    let xs = task.inputs();
    let mut weights = vec![vec![RowVector::zeros(task.d()); n]];
    for _ in 0..layers {
        let prev = weights.last().expect("non-empty");
        let mut next = Vec::with_capacity(n);
        let mut grad = RowVector::zeros(task.d());
        for j in 0..n {
            grad.axpy(task.y[j] - dot(&prev[j], &xs[j]), &xs[j]);
            let mut w = prev[j].clone();
            w.axpy(scale.coefficient(eta, j, n), &grad);
            next.push(w);
        }
        weights.push(next);
    }

    let (system, step) = coefficient_system(task, scale);
    let mut coeffs = vec![RowVector::zeros(n)];
    for _ in 0..layers {
        let a = coeffs.last().expect("non-empty");
        let fitted = a.mul_mat(&system)?;
        let mut next = a.clone();
        for i in 0..n {
            next[i] += eta * step * (task.y[i] - fitted[i]);
        }
        coeffs.push(next);
    }

    Ok(WeightTrajectory {
        mode: DynamicsMode::from_scheme(scale),
        weights,
        coeffs,
    })
}

/// Upper-triangular `T_ij = x_i·x_j` (i ≤ j).
pub fn causal_gram(task: &RegressionTask) -> Matrix {
    let xs = task.inputs();
    let n = xs.len();
    let mut t = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            t[(i, j)] = dot(&xs[i], &xs[j]);
        }
    }
    t
}

/// Upper-triangular `S_ij = x_i·x_j / j` (i ≤ j, 1-based j).
pub fn causal2_gram(task: &RegressionTask) -> Matrix {
    let mut s = causal_gram(task);
    let n = s.rows();
    for i in 0..n {
        for j in i..n {
            s[(i, j)] /= (j + 1) as f64;
        }
    }
    s
}

/// The triangular system of a scale scheme and the step multiplying it in the
/// coefficient recursion.
fn coefficient_system(task: &RegressionTask, scale: ScaleScheme) -> (Matrix, f64) {
    match scale {
        ScaleScheme::OverN => (causal_gram(task), 1.0 / task.n() as f64),
        ScaleScheme::OverJ => (causal2_gram(task), 1.0),
    }
}

/// `w_j = norm_j Σ_{i≤j} a_i x_iᵀ`, with `norm_j = 1` (OverN) or `1/j` (OverJ).
pub fn weights_from_coefficients(task: &RegressionTask, a: &[f64], scale: ScaleScheme) -> Vec<RowVector> {
    let xs = task.inputs();
    let mut acc = RowVector::zeros(task.d());
    let mut out = Vec::with_capacity(xs.len());
    for (j, xj) in xs.iter().enumerate() {
        acc.axpy(a[j], xj);
        out.push(match scale {
            ScaleScheme::OverN => acc.clone(),
            ScaleScheme::OverJ => acc.scaled(1.0 / (j + 1) as f64),
        });
    }
    out
}

/// A fixed point of one of the layer recursions, plus the spectral radius of
/// the map that carries errors from layer to layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryResult {
    pub mode: DynamicsMode,
    /// One weight for prefix, one per position otherwise.
    pub w_star: Vec<RowVector>,
    /// Empty for prefix.
    pub a_star: RowVector,
    /// `X Xᵀ`, `T` or `S`.
    pub system: Matrix,
    /// Layer-to-layer error map (`I − (η/n) X Xᵀ`, `I − (η/n) T` or `I − η S`).
    pub iteration: Matrix,
    pub iter_radius: f64,
    pub divergent: bool,
}

impl StationaryResult {
    /// Weight used for queries.
    pub fn final_weight(&self) -> &RowVector {
        self.w_star.last().expect("non-empty")
    }
}

/// Minimum-norm least-squares solution and the GD iteration map.
pub fn prefix_stationary(task: &RegressionTask, eta: f64) -> Result<StationaryResult> {
    let w_star = min_norm_least_squares(&task.x, &task.y)?;
    let system = task.x.gram_rows();
    let iteration = system.identity_minus(eta / task.n() as f64)?;
    let iter_radius = spectral_radius(&iteration)?;
    Ok(StationaryResult {
        mode: DynamicsMode::Prefix,
        w_star: vec![w_star],
        a_star: RowVector::zeros(0),
        system,
        iteration,
        iter_radius,
        divergent: iter_radius >= 1.0,
    })
}

fn check_norms(task: &RegressionTask) -> Result<()> {
    for (j, x) in task.inputs().iter().enumerate() {
        if dot(x, x) <= ZERO_NORM_TOL {
            return Err(OracleError::ZeroNormExample(j));
        }
    }
    Ok(())
}

/// Solves `y = a* T` (or `y = a* S`) and assembles the per-position weights.
pub fn causal_stationary(task: &RegressionTask, scale: ScaleScheme, eta: f64) -> Result<StationaryResult> {
    check_norms(task)?;
    let (system, step) = coefficient_system(task, scale);
    let a_star = left_triangular_solve(&task.y, &system).map_err(|e| match e {
        NumericsError::ZeroDiagonal { index } => OracleError::ZeroNormExample(index),
        other => other.into(),
    })?;
    let w_star = weights_from_coefficients(task, &a_star, scale);
    let iteration = system.identity_minus(eta * step)?;
    let iter_radius = spectral_radius(&iteration)?;
    Ok(StationaryResult {
        mode: DynamicsMode::from_scheme(scale),
        w_star,
        a_star,
        system,
        iteration,
        iter_radius,
        divergent: iter_radius >= 1.0,
    })
}

/// Online gradient descent with step `1/‖x_{j+1}‖²`, one example at a time.
///
/// For the 1/j scheme the previous weight is first shrunk by `j/(j+1)`.
/// Returns `w_1..w_n`.
pub fn online_gd_sequence(task: &RegressionTask, scale: ScaleScheme) -> Result<Vec<RowVector>> {
    check_norms(task)?;
    let xs = task.inputs();
    let mut w = RowVector::zeros(task.d());
    let mut out = Vec::with_capacity(xs.len());
    for (j, x) in xs.iter().enumerate() {
        // j examples have been consumed so far
        let base = match scale {
            ScaleScheme::OverN => w,
            ScaleScheme::OverJ => w.scaled(j as f64 / (j + 1) as f64),
        };
        let residual = dot(&base, x) - task.y[j];
        let mut next = base;
        next.axpy(-residual / dot(x, x), x);
        out.push(next.clone());
        w = next;
    }
    Ok(out)
}

/// Mean squared error of `w` on the given query columns.
pub fn query_mse(w: &[f64], queries: &Matrix, labels: &[f64]) -> Result<f64> {
    if queries.cols() == 0 {
        return Err(OracleError::EmptyQuerySet);
    }
    if queries.rows() != w.len() || labels.len() != queries.cols() {
        return Err(OracleError::DimensionMismatch(format!(
            "weight length {}, queries {}x{}, {} labels",
            w.len(),
            queries.rows(),
            queries.cols(),
            labels.len()
        )));
    }
    let total = (0..queries.cols()).fold(0.0, |acc, q| {
        let e = dot(w, &queries.column(q)) - labels[q];
        acc + e * e
    });
    Ok(total / queries.cols() as f64)
}

/// Euclidean distance of every iterate from a fixed point.
pub fn error_norms(iterates: &[RowVector], fixed: &[f64]) -> Vec<f64> {
    iterates.iter().map(|v| numerics::norm(&v.sub(fixed))).collect()
}
