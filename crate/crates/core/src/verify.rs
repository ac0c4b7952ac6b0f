//! Numerical certification of the attention/gradient-descent correspondences.
//!
//! Each `check_*` function compares one forward pass or recursion against an
//! independent route and reports the worst discrepancy. [`run_suite`] draws
//! random instances, runs every check on them and aggregates the results into
//! a [`SuiteReport`] in a fixed check order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{assemble_tokens, constructed_layer, lsa_forward_general, lsa_forward_reduced};
use crate::model::{AttentionMask, LsaConstruction, ModelError, ScaleScheme};
use crate::numerics::{self, condition_number, dot, Matrix, NumericsError, RowVector};
use crate::oracle::{
    self, causal_gd_trajectory, causal_stationary, gd_trajectory, online_gd_sequence,
    prefix_stationary, DynamicsMode, OracleError,
};
use crate::taskgen::{GenSpec, RegressionTask, TaskError};

/// Equivalence checks (attention pass vs weight-space oracle).
pub const EQUIVALENCE_TOL: f64 = 1e-10;
/// Per-step convergence identities and online-GD equivalence, relative.
pub const IDENTITY_TOL: f64 = 1e-9;
/// Allowed excess of the observed tail contraction over the spectral radius.
pub const RATE_SLACK: f64 = 0.05;
/// Steps used by the convergence checks in the default suite.
pub const CONVERGENCE_STEPS: usize = 200;
/// Errors below this (relative to the fixed point) are rounding noise and are
/// left out of the tail-ratio check.
pub const RATE_NOISE_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unknown check id {0:?}")]
    UnknownCheck(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

pub type Result<T> = std::result::Result<T, VerifyError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check_id: String,
    pub instances: usize,
    pub max_abs_err: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub notes: String,
}

impl CheckReport {
    pub fn new(check_id: impl Into<String>, instances: usize, max_abs_err: f64, tolerance: f64, notes: impl Into<String>) -> Self {
        Self {
            check_id: check_id.into(),
            instances,
            max_abs_err,
            tolerance,
            // NaN never passes
            passed: max_abs_err <= tolerance,
            notes: notes.into(),
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self.passed = self.max_abs_err <= tolerance;
        self
    }

    /// Folds several per-instance reports of the same check into one.
    pub fn merge(check_id: &str, tolerance: f64, parts: &[CheckReport], notes: impl Into<String>) -> Self {
        let instances = parts.iter().map(|r| r.instances).sum();
        let worst = parts.iter().fold(0.0_f64, |acc, r| {
            if r.max_abs_err.is_nan() || acc.is_nan() {
                f64::NAN
            } else {
                acc.max(r.max_abs_err)
            }
        });
        Self::new(check_id, instances, worst, tolerance, notes)
    }
}

fn max_err(acc: f64, e: f64) -> f64 {
    if e.is_nan() || acc.is_nan() {
        f64::NAN
    } else {
        acc.max(e)
    }
}

fn require_zero_w0(config: &LsaConstruction) -> Result<()> {
    if config.w0.iter().any(|&v| v != 0.0) {
        return Err(VerifyError::Precondition("this check needs w0 = 0".into()));
    }
    Ok(())
}

fn require_bidirectional(mask: AttentionMask, n: usize) -> Result<()> {
    match mask {
        AttentionMask::Full => Ok(()),
        AttentionMask::Prefix { prefix_len } if prefix_len == n => Ok(()),
        _ => Err(VerifyError::Precondition(
            "needs a full mask or a prefix covering all in-context examples".into(),
        )),
    }
}

/// Compares a trace against `δ_j = y_j − (w_j − w0)·x_j` and `δ_q = −(w − w0)·x_q`.
fn trace_vs_weights(
    task: &RegressionTask,
    trace: &crate::model::LayerTrace,
    weight: impl Fn(usize, usize) -> RowVector,
    query_weight: impl Fn(usize) -> RowVector,
    w0: &[f64],
) -> f64 {
    let xs = task.inputs();
    let qs = task.query_inputs();
    let mut worst = 0.0;
    for l in 0..=trace.layers() {
        for (j, x) in xs.iter().enumerate() {
            let w = weight(l, j).sub(w0);
            let expected = task.y[j] - dot(&w, x);
            worst = max_err(worst, (trace.delta[l][j] - expected).abs());
        }
        let wq = query_weight(l).sub(w0);
        for (q, x) in qs.iter().enumerate() {
            worst = max_err(worst, (trace.queries(l)[q] + dot(&wq, x)).abs());
        }
    }
    worst
}

/// Bidirectional stack with `w0 = 0` against batch gradient descent.
pub fn check_prop1(task: &RegressionTask, config: &LsaConstruction, mask: AttentionMask) -> Result<CheckReport> {
    require_zero_w0(config)?;
    require_bidirectional(mask, task.n())?;
    let trace = lsa_forward_reduced(&assemble_tokens(task)?, config, mask, ScaleScheme::OverN)?;
    let traj = gd_trajectory(task, config.eta, config.layers, &config.w0)?;
    let err = trace_vs_weights(
        task,
        &trace,
        |l, _| traj.weight(l, 0).clone(),
        |l| traj.query_weight(l).clone(),
        &config.w0,
    );
    Ok(CheckReport::new("prop1", 1, err, EQUIVALENCE_TOL, "prefix trace vs batch GD"))
}

/// Causal stack with `w0 = 0` against the per-position causal recursion.
pub fn check_prop2(task: &RegressionTask, config: &LsaConstruction, scale: ScaleScheme) -> Result<CheckReport> {
    require_zero_w0(config)?;
    let trace = lsa_forward_reduced(&assemble_tokens(task)?, config, AttentionMask::Causal, scale)?;
    let traj = causal_gd_trajectory(task, config.eta, config.layers, scale)?;
    let err = trace_vs_weights(
        task,
        &trace,
        |l, j| traj.weight(l, j).clone(),
        |l| traj.query_weight(l).clone(),
        &config.w0,
    );
    let id = match scale {
        ScaleScheme::OverN => "prop2",
        ScaleScheme::OverJ => "prop2_causal2",
    };
    Ok(CheckReport::new(id, 1, err, EQUIVALENCE_TOL, "causal trace vs per-position GD"))
}

/// Bidirectional stack with arbitrary `w0` against batch GD started at `w0`.
pub fn check_general_w0(task: &RegressionTask, config: &LsaConstruction, mask: AttentionMask) -> Result<CheckReport> {
    require_bidirectional(mask, task.n())?;
    let trace = lsa_forward_reduced(&assemble_tokens(task)?, config, mask, ScaleScheme::OverN)?;
    let traj = gd_trajectory(task, config.eta, config.layers, &config.w0)?;
    let err = trace_vs_weights(
        task,
        &trace,
        |l, _| traj.weight(l, 0).clone(),
        |l| traj.query_weight(l).clone(),
        &config.w0,
    );
    Ok(CheckReport::new("general_w0", 1, err, EQUIVALENCE_TOL, "trace vs GD from w0"))
}

/// Full-token forward pass with the constructed layers against the reduced
/// recursion. Also checks that the input rows never change.
pub fn check_general_vs_reduced(
    task: &RegressionTask,
    config: &LsaConstruction,
    mask: AttentionMask,
    scale: ScaleScheme,
) -> Result<CheckReport> {
    let seq = assemble_tokens(task)?;
    let layers = vec![constructed_layer(config); config.layers];
    let general = lsa_forward_general(&seq, &layers, mask, scale, config.eta)?;
    let reduced = lsa_forward_reduced(&seq, config, mask, scale)?;
    let d = seq.d();
    let mut worst = 0.0;
    for (l, out) in general.iter().enumerate() {
        worst = max_err(worst, numerics::max_abs_diff(out.label_row(), &reduced.delta[l + 1]));
        for r in 0..d {
            worst = max_err(worst, numerics::max_abs_diff(out.tokens.row(r), seq.tokens.row(r)));
        }
    }
    Ok(CheckReport::new("general_vs_reduced", 1, worst, EQUIVALENCE_TOL, "token pass vs label recursion"))
}

/// Outcome of a convergence check: the per-step identity and, for contracting
/// maps, the observed tail contraction against the spectral radius.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceCheck {
    pub identity: CheckReport,
    pub rate: CheckReport,
    pub iter_radius: f64,
    pub divergent: bool,
}

/// Worst relative residual of `e_l = e_{l−1} M` along a trajectory, where
/// `e_l = iterate_l − fixed`. The scale is `max(1, ‖iterate_{l−1}‖∞, ‖e_{l−1}‖∞‖M‖∞)`.
fn step_identity_residual(iterates: &[RowVector], fixed: &[f64], map: &Matrix) -> Result<f64> {
    let map_norm = (0..map.rows())
        .map(|i| map.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let sup = |v: &[f64]| v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let mut worst = 0.0;
    for pair in iterates.windows(2) {
        let prev = pair[0].sub(fixed);
        let next = pair[1].sub(fixed);
        let predicted = prev.mul_mat(map)?;
        let scale = 1.0_f64.max(sup(&pair[0])).max(sup(&prev) * map_norm);
        worst = max_err(worst, numerics::max_abs_diff(&next, &predicted) / scale);
    }
    Ok(worst)
}

/// Largest excess of `‖e_{l+1}‖/‖e_l‖` over `radius` across the last quarter of steps.
fn tail_ratio_excess(iterates: &[RowVector], fixed: &[f64], radius: f64) -> (f64, usize) {
    let errs = oracle::error_norms(iterates, fixed);
    let floor = RATE_NOISE_FLOOR * 1.0_f64.max(numerics::norm(fixed));
    let steps = errs.len() - 1;
    let start = steps - steps / 4;
    let mut worst = 0.0_f64;
    let mut counted = 0;
    for l in start..steps {
        if errs[l] <= floor || errs[l + 1] <= floor {
            continue;
        }
        counted += 1;
        worst = worst.max(errs[l + 1] / errs[l] - radius);
    }
    (worst.max(0.0), counted)
}

/// Per-step error identity for one of the three layer recursions over `layers`
/// steps, and the tail contraction bound when the map contracts.
///
/// For the causal modes it also checks that the coefficient recursion and the
/// direct per-position weight recursion describe the same weights.
pub fn check_convergence_identity(task: &RegressionTask, eta: f64, layers: usize, mode: DynamicsMode) -> Result<ConvergenceCheck> {
    let (iterates, fixed, stationary, representation_err) = match mode.scheme() {
        None => {
            let st = prefix_stationary(task, eta)?;
            let traj = gd_trajectory(task, eta, layers, &RowVector::zeros(task.d()))?;
            let iterates: Vec<RowVector> = traj.weights.into_iter().map(|mut w| w.remove(0)).collect();
            let fixed = st.w_star[0].clone();
            (iterates, fixed, st, 0.0)
        }
        Some(scale) => {
            let st = causal_stationary(task, scale, eta)?;
            let traj = causal_gd_trajectory(task, eta, layers, scale)?;
            let mut rep = 0.0_f64;
            for (l, a) in traj.coeffs.iter().enumerate() {
                let rebuilt = oracle::weights_from_coefficients(task, a, scale);
                for (j, w) in rebuilt.iter().enumerate() {
                    let direct = traj.weight(l, j);
                    let scale = 1.0_f64.max(direct.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
                    rep = max_err(rep, numerics::max_abs_diff(w, direct) / scale);
                }
            }
            let fixed = st.a_star.clone();
            (traj.coeffs, fixed, st, rep)
        }
    };
    let identity_err = max_err(step_identity_residual(&iterates, &fixed, &stationary.iteration)?, representation_err);
    let identity = CheckReport::new(
        format!("convergence_{}", mode.name()),
        1,
        identity_err,
        IDENTITY_TOL,
        format!("rho = {:.6}", stationary.iter_radius),
    );
    let rate = if stationary.divergent {
        CheckReport::new(format!("rate_{}", mode.name()), 0, 0.0, RATE_SLACK, "divergent, skipped")
    } else {
        let (excess, counted) = tail_ratio_excess(&iterates, &fixed, stationary.iter_radius);
        CheckReport::new(
            format!("rate_{}", mode.name()),
            1,
            excess,
            RATE_SLACK,
            format!("{counted} tail ratios above the noise floor"),
        )
    };
    Ok(ConvergenceCheck {
        identity,
        rate,
        iter_radius: stationary.iter_radius,
        divergent: stationary.divergent,
    })
}

/// Online GD against the causal stationary weights, position by position.
/// Errors are relative to `max(1, ‖w_j*‖∞)`.
pub fn check_online_equivalence(task: &RegressionTask, scale: ScaleScheme) -> Result<CheckReport> {
    let st = causal_stationary(task, scale, 1.0)?;
    let online = online_gd_sequence(task, scale)?;
    let mut worst = 0.0;
    for (a, b) in online.iter().zip(&st.w_star) {
        let scale = 1.0_f64.max(b.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
        worst = max_err(worst, numerics::max_abs_diff(a, b) / scale);
    }
    let id = match scale {
        ScaleScheme::OverN => "online_causal",
        ScaleScheme::OverJ => "online_causal2",
    };
    Ok(CheckReport::new(id, 1, worst, IDENTITY_TOL, "online GD vs stationary weights"))
}

/// Condition numbers of the two causal systems for one task.
pub fn condition_pair(task: &RegressionTask) -> Result<(f64, f64)> {
    let t = condition_number(&oracle::causal_gram(task))?;
    let s = condition_number(&oracle::causal2_gram(task))?;
    Ok((t, s))
}

/// Mean `κ(S)/κ(T)` per `n`, averaged over `spec.num_sequences` tasks. Tasks are
/// drawn once at the largest `n` and truncated, so the curves are paired.
pub fn condition_ratios(spec: &GenSpec, n_list: &[usize]) -> Result<Vec<f64>> {
    let n_max = n_list.iter().copied().max().unwrap_or(0);
    let gen = GenSpec { n: n_max, ..spec.clone() };
    let mut sums = vec![0.0; n_list.len()];
    for index in 0..spec.num_sequences {
        let task = gen.sample_task(index)?;
        for (k, &n) in n_list.iter().enumerate() {
            let (kt, ks) = condition_pair(&task.truncated(n))?;
            sums[k] += ks / kt;
        }
    }
    Ok(sums.iter().map(|s| s / spec.num_sequences as f64).collect())
}

/// The averaged ratio must exceed one everywhere and strictly increase along
/// `n_list`. The reported error is the largest shortfall (0 when the claim holds).
pub fn check_condition_claim(spec: &GenSpec, n_list: &[usize]) -> Result<CheckReport> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(VerifyError::Precondition("n_list must be non-empty and strictly ascending".into()));
    }
    let ratios = condition_ratios(spec, n_list)?;
    let mut shortfall = 0.0_f64;
    for &r in &ratios {
        if r <= 1.0 {
            shortfall = shortfall.max((1.0 - r).max(f64::EPSILON));
        }
    }
    for w in ratios.windows(2) {
        if w[1] <= w[0] {
            shortfall = shortfall.max((w[0] - w[1]).max(f64::EPSILON));
        }
    }
    let notes = n_list
        .iter()
        .zip(&ratios)
        .map(|(n, r)| format!("n={n}: {r:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(CheckReport::new("condition", spec.num_sequences, shortfall, 0.0, notes))
}

/// Check ids in report order.
pub const CHECK_IDS: &[&str] = &[
    "prop1",
    "prop2",
    "prop2_causal2",
    "general_w0",
    "general_vs_reduced",
    "convergence_prefix",
    "convergence_causal",
    "convergence_causal2",
    "rate_prefix",
    "rate_causal",
    "rate_causal2",
    "online_causal",
    "online_causal2",
    "condition",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Random instances per check.
    pub instances: usize,
    /// Replaces every check's tolerance when set.
    pub tolerance: Option<f64>,
    /// Restricts the suite to these check ids.
    pub checks: Option<Vec<String>>,
    pub condition_n_list: Vec<usize>,
    pub condition_seeds: usize,
    pub condition_d: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 32,
            tolerance: None,
            checks: None,
            condition_n_list: vec![10, 50, 100],
            condition_seeds: 16,
            condition_d: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub instances: usize,
    pub tolerances: BTreeMap<String, f64>,
    pub checks: Vec<CheckReport>,
    pub passed: bool,
}

/// Shape of one random instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub task: RegressionTask,
    pub layers: usize,
    pub w0: RowVector,
    /// Uniform draw in [0, 1) used to pick step sizes.
    pub step_draw: f64,
}

/// Random instance `index`: d ≤ 8, n ≤ `max_n`, m ≤ 4, layers ≤ 12.
pub fn random_instance(seed: u64, index: usize, max_n: usize) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_d1c1_u64);
    rng.set_stream(index as u64);
    let d = rng.gen_range(1..=8);
    let n = rng.gen_range(1..=max_n);
    let m = rng.gen_range(1..=4);
    let layers = rng.gen_range(1..=12);
    let task_seed: u64 = rng.gen();
    let step_draw: f64 = rng.gen();
    let w0: RowVector = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let task = GenSpec {
        seed: task_seed,
        d,
        n,
        m,
        mu_x: 0.0,
        num_sequences: 1,
    }
    .sample_task(0)?;
    Ok(Instance {
        task,
        layers,
        w0,
        step_draw,
    })
}

/// `factor` times the smallest step at which the mode's iteration map stops
/// contracting, so `factor < 1` converges and `factor > 1` diverges.
pub fn step_for_factor(task: &RegressionTask, mode: DynamicsMode, factor: f64) -> Result<f64> {
    let n = task.n() as f64;
    let critical = match mode {
        DynamicsMode::Prefix => {
            let top = numerics::symmetric_eigen(&task.x.gram_rows())?.values[0];
            2.0 * n / top
        }
        DynamicsMode::Causal => {
            let top = oracle::causal_gram(task).diagonal().into_iter().fold(0.0, f64::max);
            2.0 * n / top
        }
        DynamicsMode::Causal2 => {
            let top = oracle::causal2_gram(task).diagonal().into_iter().fold(0.0, f64::max);
            2.0 / top
        }
    };
    Ok(factor * critical)
}

fn wanted(config: &SuiteConfig, id: &str) -> bool {
    config.checks.as_ref().is_none_or(|c| c.iter().any(|x| x == id))
}

/// Runs every selected check on `config.instances` random instances.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    if let Some(filter) = &config.checks {
        if let Some(bad) = filter.iter().find(|id| !CHECK_IDS.contains(&id.as_str())) {
            return Err(VerifyError::UnknownCheck(bad.clone()));
        }
    }
    let count = config.instances;
    let equivalence: Vec<Instance> = (0..count)
        .map(|k| random_instance(config.seed, k, 16))
        .collect::<Result<_>>()?;
    let convergence: Vec<Instance> = (0..count)
        .map(|k| random_instance(config.seed.wrapping_add(1), k, 32))
        .collect::<Result<_>>()?;

    let mut reports: Vec<CheckReport> = Vec::new();
    let mut push = |id: &str, tol: f64, parts: Vec<CheckReport>, notes: &str| {
        reports.push(CheckReport::merge(id, tol, &parts, notes));
    };

    // Steps stay below the divergence threshold for the equivalence checks so
    // values remain O(1) over 12 layers.
    let eq_step = |inst: &Instance, mode| step_for_factor(&inst.task, mode, 0.1 + 0.85 * inst.step_draw);

    if wanted(config, "prop1") {
        let parts = equivalence
            .par_iter()
            .enumerate()
            .map(|(k, inst)| {
                let eta = eq_step(inst, DynamicsMode::Prefix)?;
                let cfg = LsaConstruction::new(inst.task.d(), eta, inst.layers);
                let mask = if k % 2 == 0 {
                    AttentionMask::Full
                } else {
                    AttentionMask::Prefix { prefix_len: inst.task.n() }
                };
                check_prop1(&inst.task, &cfg, mask)
            })
            .collect::<Result<Vec<_>>>()?;
        push("prop1", EQUIVALENCE_TOL, parts, "prefix/full trace vs batch GD");
    }
    for (id, scale) in [("prop2", ScaleScheme::OverN), ("prop2_causal2", ScaleScheme::OverJ)] {
        if !wanted(config, id) {
            continue;
        }
        let mode = DynamicsMode::from_scheme(scale);
        let parts = equivalence
            .par_iter()
            .map(|inst| {
                let cfg = LsaConstruction::new(inst.task.d(), eq_step(inst, mode)?, inst.layers);
                check_prop2(&inst.task, &cfg, scale)
            })
            .collect::<Result<Vec<_>>>()?;
        push(id, EQUIVALENCE_TOL, parts, "causal trace vs per-position GD");
    }
    if wanted(config, "general_w0") {
        let parts = equivalence
            .par_iter()
            .map(|inst| {
                let eta = eq_step(inst, DynamicsMode::Prefix)?;
                let cfg = LsaConstruction::new(inst.task.d(), eta, inst.layers).with_w0(inst.w0.clone());
                check_general_w0(&inst.task, &cfg, AttentionMask::Full)
            })
            .collect::<Result<Vec<_>>>()?;
        push("general_w0", EQUIVALENCE_TOL, parts, "trace vs GD from random w0");
    }
    if wanted(config, "general_vs_reduced") {
        let parts = equivalence
            .par_iter()
            .enumerate()
            .map(|(k, inst)| {
                let (mask, scale, mode) = match k % 4 {
                    0 => (AttentionMask::Full, ScaleScheme::OverN, DynamicsMode::Prefix),
                    1 => (
                        AttentionMask::Prefix { prefix_len: 1 + k % inst.task.n() },
                        ScaleScheme::OverN,
                        DynamicsMode::Prefix,
                    ),
                    2 => (AttentionMask::Causal, ScaleScheme::OverN, DynamicsMode::Causal),
                    _ => (AttentionMask::Causal, ScaleScheme::OverJ, DynamicsMode::Causal2),
                };
                let cfg = LsaConstruction::new(inst.task.d(), eq_step(inst, mode)?, inst.layers)
                    .with_w0(inst.w0.clone());
                check_general_vs_reduced(&inst.task, &cfg, mask, scale)
            })
            .collect::<Result<Vec<_>>>()?;
        push("general_vs_reduced", EQUIVALENCE_TOL, parts, "token pass vs label recursion, all masks");
    }

    let modes = [DynamicsMode::Prefix, DynamicsMode::Causal, DynamicsMode::Causal2];
    let want_conv = modes
        .iter()
        .any(|m| wanted(config, &format!("convergence_{}", m.name())) || wanted(config, &format!("rate_{}", m.name())));
    if want_conv {
        let mut identity_parts: BTreeMap<DynamicsMode, Vec<CheckReport>> = BTreeMap::new();
        let mut rate_parts: BTreeMap<DynamicsMode, Vec<CheckReport>> = BTreeMap::new();
        for mode in modes {
            let checks = convergence
                .par_iter()
                .enumerate()
                .map(|(k, inst)| {
                    // every fourth instance gets a diverging step
                    let factor = if k % 4 == 3 {
                        1.02 + 0.2 * inst.step_draw
                    } else {
                        0.1 + 0.85 * inst.step_draw
                    };
                    let eta = step_for_factor(&inst.task, mode, factor)?;
                    check_convergence_identity(&inst.task, eta, CONVERGENCE_STEPS, mode)
                })
                .collect::<Result<Vec<_>>>()?;
            for c in checks {
                identity_parts.entry(mode).or_default().push(c.identity);
                rate_parts.entry(mode).or_default().push(c.rate);
            }
        }
        for mode in modes {
            let id = format!("convergence_{}", mode.name());
            if wanted(config, &id) {
                let parts = identity_parts.remove(&mode).unwrap_or_default();
                let divergent = (0..count).filter(|k| k % 4 == 3).count();
                push(&id, IDENTITY_TOL, parts, &format!("{CONVERGENCE_STEPS} steps, {divergent} diverging instances"));
            }
        }
        for mode in modes {
            let id = format!("rate_{}", mode.name());
            if wanted(config, &id) {
                let parts = rate_parts.remove(&mode).unwrap_or_default();
                push(&id, RATE_SLACK, parts, "tail ratio minus spectral radius, last quarter of steps");
            }
        }
    }
    for (id, scale) in [("online_causal", ScaleScheme::OverN), ("online_causal2", ScaleScheme::OverJ)] {
        if !wanted(config, id) {
            continue;
        }
        let parts = convergence
            .par_iter()
            .map(|inst| check_online_equivalence(&inst.task, scale))
            .collect::<Result<Vec<_>>>()?;
        push(id, IDENTITY_TOL, parts, "online GD vs stationary weights, n <= 32");
    }
    if wanted(config, "condition") {
        let spec = GenSpec {
            seed: config.seed,
            d: config.condition_d,
            n: 1,
            m: 0,
            mu_x: 0.0,
            num_sequences: config.condition_seeds,
        };
        reports.push(check_condition_claim(&spec, &config.condition_n_list)?);
    }

    let mut tolerances = BTreeMap::new();
    if let Some(tol) = config.tolerance {
        for r in &mut reports {
            *r = r.clone().with_tolerance(tol);
        }
    }
    for r in &reports {
        tolerances.insert(r.check_id.clone(), r.tolerance);
    }
    let passed = reports.iter().all(|r| r.passed);
    Ok(SuiteReport {
        seed: config.seed,
        instances: count,
        tolerances,
        checks: reports,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst_a() -> RegressionTask {
        RegressionTask::from_examples(&[vec![1.0], vec![2.0]], &[2.0, 2.0])
            .unwrap()
            .with_queries(&[vec![1.0]], &[1.2])
            .unwrap()
    }

    #[test]
    fn report_pass_flag_tracks_tolerance() {
        assert!(CheckReport::new("x", 1, 1e-12, 1e-10, "").passed);
        assert!(!CheckReport::new("x", 1, 1e-9, 1e-10, "").passed);
        assert!(!CheckReport::new("x", 1, f64::NAN, 1e-10, "").passed);
        let merged = CheckReport::merge(
            "x",
            1e-10,
            &[CheckReport::new("x", 1, 1e-12, 1e-10, ""), CheckReport::new("x", 2, f64::NAN, 1e-10, "")],
            "",
        );
        assert_eq!(merged.instances, 3);
        assert!(!merged.passed);
    }

    #[test]
    fn prop1_on_hand_instance() {
        let cfg = LsaConstruction::new(1, 1.0, 1);
        let r = check_prop1(&inst_a(), &cfg, AttentionMask::Full).unwrap();
        assert!(r.max_abs_err <= 1e-12, "{r:?}");
        let cfg = LsaConstruction::new(1, 0.0, 4);
        let r = check_prop1(&inst_a(), &cfg, AttentionMask::Prefix { prefix_len: 2 }).unwrap();
        assert_eq!(r.max_abs_err, 0.0);
    }

    #[test]
    fn prop1_rejects_bad_preconditions() {
        let cfg = LsaConstruction::new(1, 1.0, 1).with_w0(vec![1.0].into());
        assert!(matches!(check_prop1(&inst_a(), &cfg, AttentionMask::Full), Err(VerifyError::Precondition(_))));
        let cfg = LsaConstruction::new(1, 1.0, 1);
        assert!(check_prop1(&inst_a(), &cfg, AttentionMask::Causal).is_err());
        assert!(check_prop1(&inst_a(), &cfg, AttentionMask::Prefix { prefix_len: 1 }).is_err());
    }

    #[test]
    fn prop2_on_hand_instance() {
        let cfg = LsaConstruction::new(1, 1.0, 1);
        let r = check_prop2(&inst_a(), &cfg, ScaleScheme::OverN).unwrap();
        assert!(r.max_abs_err <= 1e-12);
        let r = check_prop2(&inst_a(), &LsaConstruction::new(1, 0.0, 3), ScaleScheme::OverN).unwrap();
        assert_eq!(r.max_abs_err, 0.0);
    }

    #[test]
    fn general_w0_on_hand_instance() {
        // w1 = w0 + (1/2)Σ(y_i − w0 x_i)x_i = 1 + 0.5(1 + 0) = 1.5; δ = y − 0.5 x
        let cfg = LsaConstruction::new(1, 1.0, 1).with_w0(vec![1.0].into());
        let seq = assemble_tokens(&inst_a()).unwrap();
        let trace = lsa_forward_reduced(&seq, &cfg, AttentionMask::Full, ScaleScheme::OverN).unwrap();
        assert_eq!(trace.delta[1], vec![1.5, 1.0, -0.5]);
        let r = check_general_w0(&inst_a(), &cfg, AttentionMask::Full).unwrap();
        assert!(r.max_abs_err <= 1e-12);

        let zero = LsaConstruction::new(1, 1.0, 3);
        let a = check_general_w0(&inst_a(), &zero, AttentionMask::Full).unwrap();
        let b = check_prop1(&inst_a(), &zero, AttentionMask::Full).unwrap();
        assert_eq!(a.max_abs_err, b.max_abs_err);
    }

    #[test]
    fn convergence_contracting_prefix() {
        let c = check_convergence_identity(&inst_a(), 0.5, 40, DynamicsMode::Prefix).unwrap();
        assert!(c.identity.max_abs_err <= 1e-12);
        assert!((c.iter_radius - 0.25).abs() < 1e-12);
        assert!(!c.divergent);
        assert!(c.rate.passed);
        let traj = gd_trajectory(&inst_a(), 0.5, 10, &RowVector::zeros(1)).unwrap();
        let errs: Vec<f64> = traj.weights.iter().map(|w| (w[0][0] - 1.2).abs()).collect();
        assert!(errs.windows(2).all(|e| e[1] <= 0.3 * e[0]));
    }

    #[test]
    fn convergence_diverging_prefix() {
        let c = check_convergence_identity(&inst_a(), 1.0, 40, DynamicsMode::Prefix).unwrap();
        assert!(c.identity.max_abs_err <= 1e-12);
        assert!(c.divergent);
        assert!((c.iter_radius - 1.5).abs() < 1e-12);
        let traj = gd_trajectory(&inst_a(), 1.0, 10, &RowVector::zeros(1)).unwrap();
        let errs: Vec<f64> = traj.weights.iter().map(|w| (w[0][0] - 1.2).abs()).collect();
        assert!(errs.windows(2).all(|e| e[1] > e[0]));
    }

    #[test]
    fn starting_at_the_fixed_point_stays_there() {
        let st = prefix_stationary(&inst_a(), 0.5).unwrap();
        let traj = gd_trajectory(&inst_a(), 0.5, 20, &st.w_star[0]).unwrap();
        assert!(traj.weights.iter().all(|w| (w[0][0] - 1.2).abs() < 1e-15));
        // y = 0 puts a* at the origin, where the coefficient recursion starts
        let zero = RegressionTask::from_examples(&[vec![1.0], vec![2.0]], &[0.0, 0.0]).unwrap();
        let traj = causal_gd_trajectory(&zero, 1.0, 20, ScaleScheme::OverN).unwrap();
        assert!(traj.coeffs.iter().all(|a| a.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn online_equivalence_hand_instance() {
        let r = check_online_equivalence(&inst_a(), ScaleScheme::OverN).unwrap();
        assert_eq!(r.max_abs_err, 0.0);
        let single = RegressionTask::from_examples(&[vec![0.5, -1.0]], &[2.0]).unwrap();
        for scale in [ScaleScheme::OverN, ScaleScheme::OverJ] {
            assert!(check_online_equivalence(&single, scale).unwrap().max_abs_err < 1e-15);
        }
    }

    #[test]
    fn condition_pair_hand_instance() {
        let (kt, ks) = condition_pair(&inst_a()).unwrap();
        let expected_t = condition_number(&Matrix::from_rows(&[[1.0, 2.0], [0.0, 4.0]])).unwrap();
        let expected_s = condition_number(&Matrix::from_rows(&[[1.0, 1.0], [0.0, 2.0]])).unwrap();
        assert_eq!((kt, ks), (expected_t, expected_s));
        let single = RegressionTask::from_examples(&[vec![0.5, -1.0]], &[2.0]).unwrap();
        let (kt, ks) = condition_pair(&single).unwrap();
        assert_eq!(kt, ks);
    }

    #[test]
    fn condition_claim_requires_sorted_list() {
        let spec = GenSpec { num_sequences: 2, ..GenSpec::default() };
        assert!(check_condition_claim(&spec, &[50, 10]).is_err());
        assert!(check_condition_claim(&spec, &[]).is_err());
    }

    #[test]
    fn unknown_check_is_rejected() {
        let cfg = SuiteConfig {
            checks: Some(vec!["nope".into()]),
            ..SuiteConfig::default()
        };
        assert!(matches!(run_suite(&cfg), Err(VerifyError::UnknownCheck(_))));
    }

    #[test]
    fn filtered_suite_contains_only_that_check() {
        let cfg = SuiteConfig {
            instances: 4,
            checks: Some(vec!["prop1".into()]),
            ..SuiteConfig::default()
        };
        let report = run_suite(&cfg).unwrap();
        assert_eq!(report.checks.len(), 1);
        assert_eq!(report.checks[0].check_id, "prop1");
        assert_eq!(report.checks[0].instances, 4);
        assert!(report.passed);
    }
}
