//! Seeded synthetic linear-regression tasks.
//!
//! Every task is a pure function of `(seed, index)`: the generator is a
//! ChaCha8 stream keyed by `seed` with the stream id set to `index`, so tasks
//! can be produced in any order or in parallel and always come out the same.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{dot, Matrix, RowVector};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("task dimensions are inconsistent: {0}")]
    DimensionMismatch(String),
    #[error("task JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// One synthetic sequence: in-context pairs, query pairs and the weight that
/// produced every label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTask {
    /// In-context inputs, d×n, one example per column.
    pub x: Matrix,
    pub y: RowVector,
    /// Query inputs, d×m.
    pub xq: Matrix,
    pub yq: RowVector,
    pub w_true: RowVector,
    pub mu_x: f64,
}

impl RegressionTask {
    pub fn d(&self) -> usize {
        self.x.rows()
    }

    pub fn n(&self) -> usize {
        self.x.cols()
    }

    pub fn m(&self) -> usize {
        self.xq.cols()
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let d = self.d();
        let fail = |msg: String| Err(TaskError::DimensionMismatch(msg));
        if self.y.dim() != self.n() {
            return fail(format!("{} labels for {} examples", self.y.dim(), self.n()));
        }
        if self.xq.rows() != d && self.m() > 0 {
            return fail(format!("query inputs have {} rows, expected {d}", self.xq.rows()));
        }
        if self.yq.dim() != self.m() {
            return fail(format!("{} query labels for {} queries", self.yq.dim(), self.m()));
        }
        if self.w_true.dim() != d {
            return fail(format!("w_true has length {}, expected {d}", self.w_true.dim()));
        }
        Ok(())
    }

    /// Builds a task from explicit in-context columns and labels, with no queries.
    /// `w_true` is left at zero.
    pub fn from_examples(inputs: &[Vec<f64>], labels: &[f64]) -> Result<Self, TaskError> {
        let d = inputs.first().map_or(0, Vec::len);
        if inputs.iter().any(|c| c.len() != d) {
            return Err(TaskError::DimensionMismatch("ragged inputs".into()));
        }
        let task = Self {
            x: Matrix::from_columns(d, inputs),
            y: labels.to_vec().into(),
            xq: Matrix::zeros(d, 0),
            yq: RowVector::zeros(0),
            w_true: RowVector::zeros(d),
            mu_x: 0.0,
        };
        task.validate()?;
        Ok(task)
    }

    /// Returns a copy with the given query set.
    pub fn with_queries(mut self, queries: &[Vec<f64>], labels: &[f64]) -> Result<Self, TaskError> {
        self.xq = Matrix::from_columns(self.d(), queries);
        self.yq = labels.to_vec().into();
        self.validate()?;
        Ok(self)
    }

    /// The first `n` in-context examples, queries unchanged.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.n());
        let cols: Vec<Vec<f64>> = (0..n).map(|j| self.x.column(j)).collect();
        Self {
            x: Matrix::from_columns(self.d(), &cols),
            y: self.y[..n].to_vec().into(),
            ..self.clone()
        }
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.x.columns()
    }

    pub fn query_inputs(&self) -> Vec<Vec<f64>> {
        self.xq.columns()
    }

    pub fn to_json(&self) -> Result<String, TaskError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, TaskError> {
        let task: Self = serde_json::from_str(text)?;
        task.validate()?;
        Ok(task)
    }
}

/// Generator settings shared by every sequence of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub seed: u64,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub mu_x: f64,
    pub num_sequences: usize,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            d: 16,
            n: 40,
            m: 200,
            mu_x: 0.0,
            num_sequences: 64,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.d == 0 || self.n == 0 {
            return Err(TaskError::InvalidSpec("d and n must be at least 1".into()));
        }
        if self.num_sequences == 0 {
            return Err(TaskError::InvalidSpec("num_sequences must be at least 1".into()));
        }
        if !self.mu_x.is_finite() {
            return Err(TaskError::InvalidSpec("mu_x must be finite".into()));
        }
        Ok(())
    }

    /// Draws sequence `index`.
    ///
    /// Draw order within the stream: `w_true` (d normals), then the n in-context
    /// inputs column by column, then the m query inputs. Inputs are uniform on
    /// (-1, 1) shifted by `mu_x`, and the shift applies to queries too.
    /// Normals use the Box-Muller cosine branch, one pair of uniforms each.
    pub fn sample_task(&self, index: usize) -> Result<RegressionTask, TaskError> {
        self.validate()?;
        if index >= self.num_sequences {
            return Err(TaskError::InvalidSpec(format!(
                "sequence index {index} out of range (num_sequences = {})",
                self.num_sequences
            )));
        }
        let mut rng = task_rng(self.seed, index as u64);
        let w_true: RowVector = (0..self.d).map(|_| standard_normal(&mut rng)).collect();
        let mut draw_inputs = |count: usize| {
            let cols: Vec<Vec<f64>> = (0..count)
                .map(|_| (0..self.d).map(|_| open_uniform(&mut rng) + self.mu_x).collect())
                .collect();
            Matrix::from_columns(self.d, &cols)
        };
        let x = draw_inputs(self.n);
        let xq = draw_inputs(self.m);
        let y = labels(&w_true, &x);
        let yq = labels(&w_true, &xq);
        Ok(RegressionTask {
            x,
            y,
            xq,
            yq,
            w_true,
            mu_x: self.mu_x,
        })
    }
}

fn task_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform on the open interval (-1, 1).
fn open_uniform<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return 2.0 * u - 1.0;
        }
    }
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // u1 in (0, 1] keeps the log finite
    let u1 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// `y_j = w · x_j`, through the shared dot product.
pub fn labels(w: &[f64], x: &Matrix) -> RowVector {
    (0..x.cols()).map(|j| dot(w, &x.column(j))).collect()
}

/// Reorders the in-context examples by `perm` (new position `k` takes old column `perm[k]`).
pub fn apply_permutation(task: &RegressionTask, perm: &[usize]) -> Result<RegressionTask, TaskError> {
    let n = task.n();
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
        return Err(TaskError::DimensionMismatch(format!(
            "not a permutation of 0..{n}"
        )));
    }
    let cols: Vec<Vec<f64>> = perm.iter().map(|&p| task.x.column(p)).collect();
    Ok(RegressionTask {
        x: Matrix::from_columns(task.d(), &cols),
        y: perm.iter().map(|&p| task.y[p]).collect(),
        ..task.clone()
    })
}

/// Shuffles the in-context examples with a seeded Fisher-Yates permutation.
pub fn permute_incontext(task: &RegressionTask, seed: u64) -> RegressionTask {
    let mut perm: Vec<usize> = (0..task.n()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    apply_permutation(task, &perm).expect("shuffle yields a permutation")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64, mu_x: f64) -> GenSpec {
        GenSpec {
            seed,
            mu_x,
            ..GenSpec::default()
        }
    }

    #[test]
    fn same_seed_and_index_reproduce_the_task() {
        let s = spec(7, 0.0);
        let a = s.sample_task(3).unwrap();
        let b = s.sample_task(3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, s.sample_task(4).unwrap());
        // order of generation does not matter
        let _ = s.sample_task(10).unwrap();
        assert_eq!(a, s.sample_task(3).unwrap());
    }

    #[test]
    fn dimensions_match_the_spec() {
        let t = spec(1, 0.0).sample_task(0).unwrap();
        assert_eq!((t.d(), t.n(), t.m()), (16, 40, 200));
        t.validate().unwrap();
    }

    #[test]
    fn labels_are_exact() {
        let t = spec(11, 1.0).sample_task(5).unwrap();
        for j in 0..t.n() {
            assert_eq!(t.y[j], dot(&t.w_true, &t.x.column(j)));
        }
        for q in 0..t.m() {
            assert_eq!(t.yq[q], dot(&t.w_true, &t.xq.column(q)));
        }
    }

    #[test]
    fn centred_inputs_have_mean_near_zero() {
        let s = spec(2024, 0.0);
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..64 {
            let t = s.sample_task(i).unwrap();
            sum += t.x.entries().iter().sum::<f64>();
            count += t.x.entries().len();
        }
        assert_eq!(count, 64 * 40 * 16);
        assert!((sum / count as f64).abs() < 0.05);
    }

    #[test]
    fn shifted_inputs_stay_in_the_shifted_support() {
        let t = spec(5, 3.0).sample_task(0).unwrap();
        for &v in t.x.entries().iter().chain(t.xq.entries()) {
            assert!(v > 2.0 && v < 4.0, "{v}");
        }
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let s = GenSpec {
            num_sequences: 2,
            ..GenSpec::default()
        };
        assert!(s.sample_task(2).is_err());
        let bad = GenSpec { d: 0, ..GenSpec::default() };
        assert!(bad.sample_task(0).is_err());
    }

    #[test]
    fn identity_permutation_is_a_no_op() {
        let t = spec(3, 0.0).sample_task(0).unwrap();
        let perm: Vec<usize> = (0..t.n()).collect();
        assert_eq!(apply_permutation(&t, &perm).unwrap(), t);
        assert!(apply_permutation(&t, &[0, 0]).is_err());
    }

    #[test]
    fn permutation_moves_pairs_together() {
        let t = spec(3, 0.0).sample_task(1).unwrap();
        let p = permute_incontext(&t, 99);
        assert_eq!(p.xq, t.xq);
        assert_eq!(p.yq, t.yq);
        assert_eq!(p.w_true, t.w_true);
        for j in 0..p.n() {
            assert_eq!(p.y[j], dot(&p.w_true, &p.x.column(j)));
        }
        assert_ne!(p.x, t.x);
    }

    #[test]
    fn json_round_trip() {
        let t = GenSpec {
            d: 2,
            n: 3,
            m: 1,
            ..GenSpec::default()
        }
        .sample_task(0)
        .unwrap();
        let back = RegressionTask::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        assert!(RegressionTask::from_json(r#"{"x":{"rows":1,"cols":2,"entries":[1,2]},"y":[1],"xq":{"rows":1,"cols":0,"entries":[]},"yq":[],"w_true":[1],"mu_x":0}"#).is_err());
    }
}
