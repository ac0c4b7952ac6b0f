//! Experiment sweeps and their CSV output.
//!
//! Each sweep is computed completely in memory, in parallel across sequences
//! on a dedicated pool, and then rendered in a fixed row order. Results are
//! collected by index, so the bytes written do not depend on the worker count.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{assemble_tokens, lsa_forward_reduced, AttentionMask, LsaConstruction, ModelError, ScaleScheme};
use crate::numerics::{condition_number, NumericsError};
use crate::oracle::{self, causal_stationary, query_mse, DynamicsMode, OracleError};
use crate::taskgen::{GenSpec, RegressionTask, TaskError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("worker pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn invalid(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::InvalidConfig(msg.into())
}

/// Runs `f` on a pool of `workers` threads (0 means rayon's default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Mask and scale scheme that realise a mode on `n` in-context examples.
pub fn mode_attention(mode: DynamicsMode, n: usize) -> (AttentionMask, ScaleScheme) {
    match mode {
        DynamicsMode::Prefix => (AttentionMask::Prefix { prefix_len: n }, ScaleScheme::OverN),
        DynamicsMode::Causal => (AttentionMask::Causal, ScaleScheme::OverN),
        DynamicsMode::Causal2 => (AttentionMask::Causal, ScaleScheme::OverJ),
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, count) = values.into_iter().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    sum / count as f64
}

fn sorted_unique<T: Ord + Copy>(items: &[T]) -> Vec<T> {
    let mut v = items.to_vec();
    v.sort();
    v.dedup();
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSweepConfig {
    pub seed: u64,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub sequences: usize,
    pub eta: f64,
    pub layers: usize,
    pub modes: Vec<DynamicsMode>,
}

impl Default for LayerSweepConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d: 16,
            n: 40,
            m: 200,
            sequences: 64,
            eta: 1.6,
            layers: 30,
            modes: vec![DynamicsMode::Prefix, DynamicsMode::Causal],
        }
    }
}

impl LayerSweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 || self.sequences == 0 {
            return Err(invalid("d, n and sequences must be at least 1"));
        }
        if self.m == 0 {
            return Err(invalid("layer-sweep needs at least one query (m >= 1)"));
        }
        if !self.eta.is_finite() {
            return Err(invalid("eta must be finite"));
        }
        if self.modes.is_empty() {
            return Err(invalid("at least one mode is required"));
        }
        Ok(())
    }

    fn gen_spec(&self) -> GenSpec {
        GenSpec {
            seed: self.seed,
            d: self.d,
            n: self.n,
            m: self.m,
            mu_x: 0.0,
            num_sequences: self.sequences,
        }
    }
}

/// Context and query MSE after each layer of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCurve {
    pub context: Vec<f64>,
    pub query: Vec<f64>,
}

/// Per-layer MSE curves for one task under one mode.
pub fn layer_curve(task: &RegressionTask, mode: DynamicsMode, eta: f64, layers: usize) -> Result<LayerCurve> {
    let seq = assemble_tokens(task)?;
    let (mask, scale) = mode_attention(mode, task.n());
    let cfg = LsaConstruction::new(task.d(), eta, layers.max(1));
    let trace = lsa_forward_reduced(&seq, &cfg, mask, scale)?;
    let mut context = Vec::with_capacity(layers + 1);
    let mut query = Vec::with_capacity(layers + 1);
    for l in 0..=layers {
        // prediction error y_j − ỹ_j is the label slot itself
        context.push(mean(trace.context(l).iter().map(|d| d * d)));
        query.push(mean((0..task.m()).map(|q| {
            let e = task.yq[q] - trace.ytilde_query(l, q);
            e * e
        })));
    }
    Ok(LayerCurve { context, query })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSweep {
    pub config: LayerSweepConfig,
    /// `(mode, curves indexed by sequence)`, modes in canonical order.
    pub curves: Vec<(DynamicsMode, Vec<LayerCurve>)>,
}

impl LayerSweep {
    /// Mean over sequences at every layer, summed in sequence order.
    pub fn mean_curve(&self, mode: DynamicsMode) -> Option<LayerCurve> {
        let (_, curves) = self.curves.iter().find(|(m, _)| *m == mode)?;
        let layers = self.config.layers;
        Some(LayerCurve {
            context: (0..=layers).map(|l| mean(curves.iter().map(|c| c.context[l]))).collect(),
            query: (0..=layers).map(|l| mean(curves.iter().map(|c| c.query[l]))).collect(),
        })
    }

    /// `mode,seed_index,layer,split,mse`; each mode's per-sequence rows are
    /// followed by its `mean` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,seed_index,layer,split,mse\n");
        let mut emit = |mode: &str, seed: &str, l: usize, c: &LayerCurve| {
            writeln!(out, "{mode},{seed},{l},context,{:e}", c.context[l]).unwrap();
            writeln!(out, "{mode},{seed},{l},query,{:e}", c.query[l]).unwrap();
        };
        for (mode, curves) in &self.curves {
            for (s, curve) in curves.iter().enumerate() {
                for l in 0..=self.config.layers {
                    emit(mode.name(), &s.to_string(), l, curve);
                }
            }
            let avg = self.mean_curve(*mode).expect("mode present");
            for l in 0..=self.config.layers {
                emit(mode.name(), "mean", l, &avg);
            }
        }
        out
    }
}

pub fn layer_sweep(config: &LayerSweepConfig) -> Result<LayerSweep> {
    config.validate()?;
    let spec = config.gen_spec();
    let tasks: Vec<RegressionTask> = (0..config.sequences)
        .into_par_iter()
        .map(|i| spec.sample_task(i))
        .collect::<std::result::Result<_, _>>()?;
    let mut curves = Vec::new();
    for mode in sorted_unique(&config.modes) {
        let per_seq = tasks
            .par_iter()
            .map(|t| layer_curve(t, mode, config.eta, config.layers))
            .collect::<Result<Vec<_>>>()?;
        curves.push((mode, per_seq));
    }
    Ok(LayerSweep {
        config: config.clone(),
        curves,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarySweepConfig {
    pub seed: u64,
    pub d: usize,
    pub m: usize,
    pub sequences: usize,
    pub schemes: Vec<ScaleScheme>,
    pub mu_x: Vec<f64>,
    pub n_list: Vec<usize>,
}

impl Default for StationarySweepConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d: 16,
            m: 200,
            sequences: 64,
            schemes: vec![ScaleScheme::OverN, ScaleScheme::OverJ],
            mu_x: vec![0.0, 1.0, 2.0, 3.0],
            n_list: (1..=30).map(|k| 10 * k).collect(),
        }
    }
}

impl StationarySweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.sequences == 0 {
            return Err(invalid("d and sequences must be at least 1"));
        }
        if self.m == 0 {
            return Err(invalid("stationary-sweep needs at least one query (m >= 1)"));
        }
        if self.schemes.is_empty() || self.mu_x.is_empty() || self.n_list.is_empty() {
            return Err(invalid("scheme, mu_x and n lists must be non-empty"));
        }
        if self.n_list.contains(&0) {
            return Err(invalid("every n must be at least 1"));
        }
        if self.mu_x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("mu_x values must be finite"));
        }
        Ok(())
    }

    fn sorted_mu(&self) -> Vec<f64> {
        let mut v = self.mu_x.clone();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// Generator for one mean shift. Tasks are drawn at the largest `n` and the
    /// curve over `n` uses their leading examples.
    pub fn gen_spec(&self, mu_x: f64) -> GenSpec {
        GenSpec {
            seed: self.seed,
            d: self.d,
            n: self.n_list.iter().copied().max().unwrap_or(1),
            m: self.m,
            mu_x,
            num_sequences: self.sequences,
        }
    }
}

pub fn scheme_name(scheme: ScaleScheme) -> &'static str {
    DynamicsMode::from_scheme(scheme).name()
}

/// Query MSE of the stationary point `w_n*` for every `n` in the list.
///
/// The stationary coefficients of the first `n` examples are the leading `n`
/// entries of the full solve (the systems are upper triangular and `T`, `S`
/// do not depend on the total count), so one solve serves the whole curve.
pub fn stationary_curve(task: &RegressionTask, scheme: ScaleScheme, n_list: &[usize]) -> Result<Vec<f64>> {
    let st = causal_stationary(task, scheme, 1.0)?;
    n_list
        .iter()
        .map(|&n| {
            let w = st
                .w_star
                .get(n - 1)
                .ok_or_else(|| invalid(format!("n = {n} exceeds the task's {} examples", task.n())))?;
            Ok(query_mse(w, &task.xq, &task.yq)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarySweep {
    pub config: StationarySweepConfig,
    /// `(scheme, mu_x, per-sequence curves over n_list)` in output order.
    pub blocks: Vec<(ScaleScheme, f64, Vec<Vec<f64>>)>,
    pub n_list: Vec<usize>,
}

impl StationarySweep {
    /// Mean query MSE over sequences for each `n`.
    pub fn mean_curve(&self, scheme: ScaleScheme, mu_x: f64) -> Option<Vec<f64>> {
        let (_, _, curves) = self
            .blocks
            .iter()
            .find(|(s, m, _)| *s == scheme && *m == mu_x)?;
        Some(
            (0..self.n_list.len())
                .map(|k| mean(curves.iter().map(|c| c[k])))
                .collect(),
        )
    }

    /// `scheme,mu_x,n,seed_index,query_mse` with a `mean` row closing each
    /// `(scheme, mu_x, n)` group.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scheme,mu_x,n,seed_index,query_mse\n");
        for (scheme, mu, curves) in &self.blocks {
            let name = scheme_name(*scheme);
            for (k, n) in self.n_list.iter().enumerate() {
                for (s, c) in curves.iter().enumerate() {
                    writeln!(out, "{name},{mu},{n},{s},{:e}", c[k]).unwrap();
                }
                let avg = mean(curves.iter().map(|c| c[k]));
                writeln!(out, "{name},{mu},{n},mean,{avg:e}").unwrap();
            }
        }
        out
    }
}

pub fn stationary_sweep(config: &StationarySweepConfig) -> Result<StationarySweep> {
    config.validate()?;
    let n_list = sorted_unique(&config.n_list);
    let schemes: Vec<ScaleScheme> = {
        let mut s = config.schemes.clone();
        s.sort_by_key(|&x| DynamicsMode::from_scheme(x));
        s.dedup();
        s
    };
    let mut blocks = Vec::new();
    for scheme in schemes {
        for mu in config.sorted_mu() {
            let spec = config.gen_spec(mu);
            let curves = (0..config.sequences)
                .into_par_iter()
                .map(|i| {
                    let task = spec.sample_task(i)?;
                    stationary_curve(&task, scheme, &n_list)
                })
                .collect::<Result<Vec<_>>>()?;
            blocks.push((scheme, mu, curves));
        }
    }
    Ok(StationarySweep {
        config: config.clone(),
        blocks,
        n_list,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionConfig {
    pub seed: u64,
    pub d: usize,
    pub sequences: usize,
    pub mu_x: f64,
    pub n_list: Vec<usize>,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d: 16,
            sequences: 16,
            mu_x: 0.0,
            n_list: vec![10, 50, 100],
        }
    }
}

impl ConditionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.sequences == 0 || self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(invalid("d, sequences and every n must be at least 1"));
        }
        if !self.mu_x.is_finite() {
            return Err(invalid("mu_x must be finite"));
        }
        Ok(())
    }
}

/// One row of the condition report; `None` marks a singular matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRow {
    pub seed_index: usize,
    pub n: usize,
    pub d: usize,
    pub kappa_t: Option<f64>,
    pub kappa_s: Option<f64>,
    pub kappa_xxt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub rows: Vec<ConditionRow>,
    pub warnings: Vec<String>,
}

impl ConditionReport {
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:e}"));
        let mut out = String::from("seed_index,n,d,kappa_T,kappa_S,kappa_XXt\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.seed_index,
                r.n,
                r.d,
                fmt(r.kappa_t),
                fmt(r.kappa_s),
                fmt(r.kappa_xxt)
            )
            .unwrap();
        }
        out
    }
}

fn kappa(m: &crate::numerics::Matrix) -> std::result::Result<Option<f64>, NumericsError> {
    match condition_number(m) {
        Ok(k) => Ok(Some(k)),
        Err(NumericsError::Singular { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn condition_rows(task: &RegressionTask, seed_index: usize) -> Result<ConditionRow> {
    let wrap = |e: NumericsError| ExperimentError::Oracle(e.into());
    Ok(ConditionRow {
        seed_index,
        n: task.n(),
        d: task.d(),
        kappa_t: kappa(&oracle::causal_gram(task)).map_err(wrap)?,
        kappa_s: kappa(&oracle::causal2_gram(task)).map_err(wrap)?,
        kappa_xxt: kappa(&task.x.gram_rows()).map_err(wrap)?,
    })
}

pub fn condition_report(config: &ConditionConfig) -> Result<ConditionReport> {
    config.validate()?;
    let n_list = sorted_unique(&config.n_list);
    let spec = GenSpec {
        seed: config.seed,
        d: config.d,
        n: *n_list.last().expect("non-empty"),
        m: 0,
        mu_x: config.mu_x,
        num_sequences: config.sequences,
    };
    let tasks: Vec<RegressionTask> = (0..config.sequences)
        .into_par_iter()
        .map(|i| spec.sample_task(i))
        .collect::<std::result::Result<_, _>>()?;
    let mut rows = Vec::new();
    for &n in &n_list {
        let block = tasks
            .par_iter()
            .enumerate()
            .map(|(i, t)| condition_rows(&t.truncated(n), i))
            .collect::<Result<Vec<_>>>()?;
        rows.extend(block);
    }
    let warnings = rows
        .iter()
        .filter(|r| r.kappa_t.is_none() || r.kappa_s.is_none() || r.kappa_xxt.is_none())
        .map(|r| format!("seed_index {} n {}: singular matrix reported as NA", r.seed_index, r.n))
        .collect();
    Ok(ConditionReport { rows, warnings })
}

/// Tasks `0..num_sequences` of a generator, as a JSON array.
pub fn export_tasks(spec: &GenSpec) -> Result<String> {
    spec.validate()?;
    let tasks = (0..spec.num_sequences)
        .map(|i| spec.sample_task(i))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    serde_json::to_string_pretty(&tasks).map_err(|e| ExperimentError::Task(e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_layers_give_the_zero_prediction_baseline() {
        let task = GenSpec { d: 3, n: 5, m: 4, ..GenSpec::default() }.sample_task(0).unwrap();
        for mode in [DynamicsMode::Prefix, DynamicsMode::Causal, DynamicsMode::Causal2] {
            let c = layer_curve(&task, mode, 1.6, 0).unwrap();
            assert_eq!(c.context.len(), 1);
            assert_eq!(c.context[0], mean(task.y.iter().map(|v| v * v)));
            assert_eq!(c.query[0], mean(task.yq.iter().map(|v| v * v)));
        }
    }

    #[test]
    fn tiny_layer_sweep_row_count() {
        let cfg = LayerSweepConfig {
            d: 2,
            n: 4,
            m: 2,
            sequences: 2,
            layers: 3,
            modes: vec![DynamicsMode::Causal, DynamicsMode::Prefix],
            ..LayerSweepConfig::default()
        };
        let csv = layer_sweep(&cfg).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        let modes = 2;
        assert_eq!(lines.len() - 1, modes * 2 * (3 + 1) * 2 + modes * (3 + 1) * 2);
        assert!(lines[1].starts_with("prefix,0,0,context,"));
        assert!(lines.last().unwrap().starts_with("causal,mean,3,query,"));
    }

    #[test]
    fn layer_sweep_rejects_bad_config() {
        for cfg in [
            LayerSweepConfig { m: 0, ..LayerSweepConfig::default() },
            LayerSweepConfig { modes: vec![], ..LayerSweepConfig::default() },
            LayerSweepConfig { eta: f64::NAN, ..LayerSweepConfig::default() },
            LayerSweepConfig { sequences: 0, ..LayerSweepConfig::default() },
        ] {
            assert!(matches!(layer_sweep(&cfg), Err(ExperimentError::InvalidConfig(_))));
        }
    }

    #[test]
    fn orthogonal_interpolation_has_zero_query_error() {
        // n = d orthogonal inputs with exact labels: w_n* recovers w exactly
        let xs = vec![vec![2.0, 0.0, 0.0], vec![0.0, -1.0, 0.0], vec![0.0, 0.0, 0.5]];
        let w = [0.5, -1.5, 2.0];
        let y: Vec<f64> = xs.iter().map(|x| crate::numerics::dot(&w, x)).collect();
        let queries = vec![vec![1.0, 1.0, 1.0], vec![-0.5, 0.25, 3.0]];
        let yq: Vec<f64> = queries.iter().map(|x| crate::numerics::dot(&w, x)).collect();
        let task = RegressionTask::from_examples(&xs, &y).unwrap().with_queries(&queries, &yq).unwrap();
        let mse = stationary_curve(&task, ScaleScheme::OverN, &[3]).unwrap();
        assert!(mse[0] < 1e-28);
    }

    #[test]
    fn stationary_curve_matches_truncated_solves() {
        let task = GenSpec { d: 4, n: 12, m: 5, mu_x: 1.0, ..GenSpec::default() }.sample_task(2).unwrap();
        for scheme in [ScaleScheme::OverN, ScaleScheme::OverJ] {
            let curve = stationary_curve(&task, scheme, &[1, 5, 12]).unwrap();
            for (k, &n) in [1, 5, 12].iter().enumerate() {
                let st = causal_stationary(&task.truncated(n), scheme, 1.0).unwrap();
                let direct = query_mse(st.final_weight(), &task.xq, &task.yq).unwrap();
                assert!((curve[k] - direct).abs() <= 1e-12 * direct.max(1.0));
            }
        }
    }

    #[test]
    fn stationary_sweep_csv_layout() {
        let cfg = StationarySweepConfig {
            d: 2,
            m: 3,
            sequences: 2,
            schemes: vec![ScaleScheme::OverJ, ScaleScheme::OverN],
            mu_x: vec![1.0, 0.0],
            n_list: vec![4, 2],
            ..StationarySweepConfig::default()
        };
        let csv = stationary_sweep(&cfg).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len() - 1, 2 * 2 * 2 * (2 + 1));
        assert!(lines[1].starts_with("causal,0,2,0,"));
        assert!(lines[3].starts_with("causal,0,2,mean,"));
        assert!(lines.last().unwrap().starts_with("causal2,1,4,mean,"));
    }

    #[test]
    fn condition_rows_single_example() {
        let task = GenSpec { d: 3, n: 1, m: 0, ..GenSpec::default() }.sample_task(0).unwrap();
        let row = condition_rows(&task, 0).unwrap();
        assert_eq!(row.kappa_t, row.kappa_s);
        assert_eq!(row.kappa_xxt, None);
    }

    #[test]
    fn condition_report_marks_singular_gram_as_na() {
        let cfg = ConditionConfig {
            d: 4,
            sequences: 2,
            n_list: vec![2, 8],
            ..ConditionConfig::default()
        };
        let report = condition_report(&cfg).unwrap();
        assert_eq!(report.rows.len(), 4);
        let csv = report.to_csv();
        assert!(csv.lines().nth(1).unwrap().ends_with(",NA"));
        assert_eq!(report.warnings.len(), 2);
    }
}
