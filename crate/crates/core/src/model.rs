//! Linear self-attention token dynamics.
//!
//! Two forward passes live here. [`lsa_forward_general`] applies the layer
//! parameters to full (d+1)-dimensional tokens. [`lsa_forward_reduced`] runs the
//! scalar recursion on the label slot that the constructed parameters collapse
//! to. They are written independently so each can check the other.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{dot, Matrix, RowVector};
use crate::taskgen::RegressionTask;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid combination: {0}")]
    InvalidCombination(String),
    #[error("invalid construction: {0}")]
    InvalidConstruction(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Which in-context positions a token may attend to.
///
/// Queries are never attended to. Every query attends to all n in-context
/// examples regardless of the mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionMask {
    Full,
    /// Positions `j ≤ prefix_len` see the whole prefix; later ones attend causally.
    Prefix { prefix_len: usize },
    Causal,
}

/// Per-position step coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleScheme {
    /// `η / n` everywhere.
    OverN,
    /// `η / j` at in-context position j (1-based); queries keep `η / n`. Causal only.
    OverJ,
}

impl AttentionMask {
    /// Exclusive upper bound of the attended in-context range for position `j` (0-based).
    pub fn attended_len(&self, j: usize, n: usize) -> usize {
        if j >= n {
            return n;
        }
        match *self {
            AttentionMask::Full => n,
            AttentionMask::Prefix { prefix_len } => (j + 1).max(prefix_len).min(n),
            AttentionMask::Causal => j + 1,
        }
    }

    fn validate(&self, seq_len: usize) -> Result<()> {
        if let AttentionMask::Prefix { prefix_len } = *self {
            if prefix_len == 0 || prefix_len > seq_len {
                return Err(ModelError::InvalidCombination(format!(
                    "prefix length {prefix_len} outside 1..={seq_len}"
                )));
            }
        }
        Ok(())
    }
}

impl ScaleScheme {
    /// Step coefficient for position `j` (0-based); `j ≥ n` are queries.
    pub fn coefficient(&self, eta: f64, j: usize, n: usize) -> f64 {
        match self {
            ScaleScheme::OverJ if j < n => eta / (j + 1) as f64,
            _ => eta / n as f64,
        }
    }
}

fn check_combination(mask: AttentionMask, scale: ScaleScheme, seq_len: usize) -> Result<()> {
    mask.validate(seq_len)?;
    if scale == ScaleScheme::OverJ && mask != AttentionMask::Causal {
        return Err(ModelError::InvalidCombination(
            "the 1/j scale scheme needs a causal mask".into(),
        ));
    }
    Ok(())
}

/// Settings for the weight-tied constructed stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsaConstruction {
    pub d: usize,
    pub eta: f64,
    pub w0: RowVector,
    pub layers: usize,
}

impl LsaConstruction {
    pub fn new(d: usize, eta: f64, layers: usize) -> Self {
        Self {
            d,
            eta,
            w0: RowVector::zeros(d),
            layers,
        }
    }

    pub fn with_w0(mut self, w0: RowVector) -> Self {
        self.w0 = w0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.layers == 0 {
            return Err(ModelError::InvalidConstruction("d and layers must be at least 1".into()));
        }
        if !self.eta.is_finite() || !self.w0.is_finite() {
            return Err(ModelError::InvalidConstruction("eta and w0 must be finite".into()));
        }
        if self.w0.dim() != self.d {
            return Err(ModelError::InvalidConstruction(format!(
                "w0 has length {}, expected {}",
                self.w0.dim(),
                self.d
            )));
        }
        Ok(())
    }
}

/// One LSA layer: `z_j ← z_j + c_j · P V Σ_i z_i (z_iᵀ Kᵀ Q z_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralLsaLayer {
    pub p: Matrix,
    pub v: Matrix,
    pub k: Matrix,
    pub q: Matrix,
}

impl GeneralLsaLayer {
    pub fn dim(&self) -> usize {
        self.p.rows()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        for (name, m) in [("P", &self.p), ("V", &self.v), ("K", &self.k), ("Q", &self.q)] {
            if m.rows() != dim || m.cols() != dim {
                return Err(ModelError::DimensionMismatch(format!(
                    "{name} is {}x{}, tokens have dimension {dim}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(())
    }
}

/// Tokens `(x_j, y_j)` for the in-context examples followed by `(x_q, 0)` per query.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Matrix,
    pub n: usize,
    pub m: usize,
}

impl TokenSequence {
    pub fn d(&self) -> usize {
        self.tokens.rows() - 1
    }

    pub fn len(&self) -> usize {
        self.n + self.m
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Label slot of every column.
    pub fn label_row(&self) -> &[f64] {
        self.tokens.row(self.d())
    }

    pub fn input(&self, j: usize) -> Vec<f64> {
        (0..self.d()).map(|r| self.tokens[(r, j)]).collect()
    }
}

pub fn assemble_tokens(task: &RegressionTask) -> Result<TokenSequence> {
    task.validate()
        .map_err(|e| ModelError::DimensionMismatch(e.to_string()))?;
    let (d, n, m) = (task.d(), task.n(), task.m());
    let mut tokens = Matrix::zeros(d + 1, n + m);
    for j in 0..n {
        for r in 0..d {
            tokens[(r, j)] = task.x[(r, j)];
        }
        tokens[(d, j)] = task.y[j];
    }
    for q in 0..m {
        for r in 0..d {
            tokens[(r, n + q)] = task.xq[(r, q)];
        }
    }
    Ok(TokenSequence { tokens, n, m })
}

/// The gradient-descent construction: `K = Q = diag(I_d, 0)`, `V` zero except
/// the bottom row `(w0, -1)`, and `P = I`. The step size is applied by the
/// forward pass, not folded into `P`.
pub fn constructed_layer(config: &LsaConstruction) -> GeneralLsaLayer {
    let d = config.d;
    let mut kq = Matrix::identity(d + 1);
    kq[(d, d)] = 0.0;
    let mut v = Matrix::zeros(d + 1, d + 1);
    for (c, &w) in config.w0.iter().enumerate() {
        v[(d, c)] = w;
    }
    v[(d, d)] = -1.0;
    GeneralLsaLayer {
        p: Matrix::identity(d + 1),
        v,
        k: kq.clone(),
        q: kq,
    }
}

/// Runs the stack on full tokens. Returns the sequence after each layer
/// (the input itself is not included).
pub fn lsa_forward_general(
    seq: &TokenSequence,
    layers: &[GeneralLsaLayer],
    mask: AttentionMask,
    scale: ScaleScheme,
    eta: f64,
) -> Result<Vec<TokenSequence>> {
    check_combination(mask, scale, seq.len())?;
    let dim = seq.tokens.rows();
    let (n, total) = (seq.n, seq.len());
    let mut outputs = Vec::with_capacity(layers.len());
    let mut current = seq.tokens.clone();

    for layer in layers {
        layer.validate(dim)?;
        let score = layer.k.transpose().matmul(&layer.q).expect("square");
        let pv = layer.p.matmul(&layer.v).expect("square");
        let cols = current.columns();
        let mut next = current.clone();
        for j in 0..total {
            let attended = mask.attended_len(j, n);
            // s = Σ_i z_i (z_iᵀ Kᵀ Q z_j)
            let mut s = vec![0.0; dim];
            let kq_zj = score.mul_vec(&cols[j]).expect("dim");
            for zi in cols.iter().take(attended) {
                let weight = dot(zi, &kq_zj);
                for (acc, &v) in s.iter_mut().zip(zi) {
                    *acc += v * weight;
                }
            }
            let update = pv.mul_vec(&s).expect("dim");
            let c = scale.coefficient(eta, j, n);
            for (r, u) in update.iter().enumerate() {
                next[(r, j)] += c * u;
            }
        }
        outputs.push(TokenSequence {
            tokens: next.clone(),
            n,
            m: seq.m,
        });
        current = next;
    }
    Ok(outputs)
}

/// Label-slot values per layer.
///
/// `delta[l][j]` is the label slot of position `j` after `l` layers, so
/// `delta[0]` is the input label row. Columns `0..n` are in-context examples,
/// the rest are queries.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub delta: Vec<Vec<f64>>,
    pub n: usize,
    pub m: usize,
}

impl LayerTrace {
    pub fn layers(&self) -> usize {
        self.delta.len() - 1
    }

    /// Prediction at in-context position `j` after `l` layers: `y_j - δ_j`.
    pub fn ytilde_context(&self, l: usize, j: usize) -> f64 {
        self.delta[0][j] - self.delta[l][j]
    }

    /// Prediction for query `q` after `l` layers: `-δ_q`.
    pub fn ytilde_query(&self, l: usize, q: usize) -> f64 {
        -self.delta[l][self.n + q]
    }

    pub fn context(&self, l: usize) -> &[f64] {
        &self.delta[l][..self.n]
    }

    pub fn queries(&self, l: usize) -> &[f64] {
        &self.delta[l][self.n..]
    }
}

/// Scalar recursion for the constructed stack:
/// `δ_j ← δ_j - c_j Σ_{i∈A(j)} (δ_i - w0·x_i)(x_i·x_j)`.
pub fn lsa_forward_reduced(
    seq: &TokenSequence,
    config: &LsaConstruction,
    mask: AttentionMask,
    scale: ScaleScheme,
) -> Result<LayerTrace> {
    config.validate()?;
    check_combination(mask, scale, seq.len())?;
    if seq.d() != config.d {
        return Err(ModelError::DimensionMismatch(format!(
            "tokens carry d = {}, construction has d = {}",
            seq.d(),
            config.d
        )));
    }
    let (n, total) = (seq.n, seq.len());
    let inputs: Vec<Vec<f64>> = (0..total).map(|j| seq.input(j)).collect();
    // gram[j][i] = x_i · x_j for in-context i
    let gram: Vec<Vec<f64>> = inputs
        .iter()
        .map(|xj| inputs[..n].iter().map(|xi| dot(xi, xj)).collect())
        .collect();
    let offset: Vec<f64> = inputs[..n].iter().map(|xi| dot(&config.w0, xi)).collect();

    let mut delta = Vec::with_capacity(config.layers + 1);
    delta.push(seq.label_row().to_vec());
    for _ in 0..config.layers {
        let prev = delta.last().expect("non-empty");
        let residual: Vec<f64> = (0..n).map(|i| prev[i] - offset[i]).collect();
        let next: Vec<f64> = (0..total)
            .map(|j| {
                let attended = mask.attended_len(j, n);
                let s = dot(&residual[..attended], &gram[j][..attended]);
                prev[j] - scale.coefficient(config.eta, j, n) * s
            })
            .collect();
        delta.push(next);
    }
    Ok(LayerTrace { delta, n, m: seq.m })
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
    fn token_layout() {
        let seq = assemble_tokens(&inst_a()).unwrap();
        assert_eq!(seq.tokens, Matrix::from_rows(&[[1.0, 2.0, 1.0], [2.0, 2.0, 0.0]]));
        assert_eq!((seq.n, seq.m), (2, 1));

        let no_queries = RegressionTask::from_examples(&[vec![1.0], vec![2.0]], &[2.0, 2.0]).unwrap();
        let seq = assemble_tokens(&no_queries).unwrap();
        assert_eq!(seq.tokens, Matrix::from_rows(&[[1.0, 2.0], [2.0, 2.0]]));
    }

    #[test]
    fn token_layout_default_experiment_size() {
        let task = crate::taskgen::GenSpec::default().sample_task(0).unwrap();
        let seq = assemble_tokens(&task).unwrap();
        assert_eq!((seq.tokens.rows(), seq.tokens.cols()), (17, 240));
        assert!(seq.label_row()[40..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constructed_layer_shapes() {
        let layer = constructed_layer(&LsaConstruction::new(1, 1.0, 1));
        assert_eq!(layer.v, Matrix::from_rows(&[[0.0, 0.0], [0.0, -1.0]]));

        let layer = constructed_layer(&LsaConstruction::new(1, 1.0, 1).with_w0(vec![3.0].into()));
        assert_eq!(layer.v.row(1), &[3.0, -1.0]);

        let layer = constructed_layer(&LsaConstruction::new(4, 1.0, 1));
        assert_eq!(layer.k, layer.q);
        let k2 = layer.k.matmul(&layer.k).unwrap();
        assert_eq!(k2, layer.k);
        assert_eq!(layer.k.diagonal().iter().sum::<f64>(), 4.0);
    }

    fn general_delta(mask: AttentionMask, scale: ScaleScheme, eta: f64) -> Vec<f64> {
        let task = inst_a();
        let cfg = LsaConstruction::new(1, eta, 1);
        let out = lsa_forward_general(
            &assemble_tokens(&task).unwrap(),
            &[constructed_layer(&cfg)],
            mask,
            scale,
            eta,
        )
        .unwrap();
        out[0].label_row().to_vec()
    }

    #[test]
    fn general_pass_hand_values() {
        let full = general_delta(AttentionMask::Full, ScaleScheme::OverN, 1.0);
        assert_eq!(&full[..2], &[-1.0, -4.0]);
        let causal = general_delta(AttentionMask::Causal, ScaleScheme::OverN, 1.0);
        assert_eq!(&causal[..2], &[1.0, -4.0]);
    }

    #[test]
    fn zero_step_is_identity() {
        let seq = assemble_tokens(&inst_a()).unwrap();
        let cfg = LsaConstruction::new(1, 0.0, 3);
        for mask in [AttentionMask::Full, AttentionMask::Prefix { prefix_len: 2 }, AttentionMask::Causal] {
            let out =
                lsa_forward_general(&seq, &vec![constructed_layer(&cfg); 3], mask, ScaleScheme::OverN, 0.0)
                    .unwrap();
            assert!(out.iter().all(|s| s.tokens == seq.tokens));
        }
    }

    #[test]
    fn reduced_pass_hand_values() {
        let seq = assemble_tokens(&inst_a()).unwrap();
        let cfg = LsaConstruction::new(1, 1.0, 1);
        let prefix = lsa_forward_reduced(&seq, &cfg, AttentionMask::Prefix { prefix_len: 2 }, ScaleScheme::OverN)
            .unwrap();
        assert_eq!(prefix.delta[1], vec![-1.0, -4.0, -3.0]);
        assert_eq!(prefix.ytilde_query(1, 0), 3.0);
        assert_eq!(prefix.ytilde_context(1, 0), 3.0);

        let causal = lsa_forward_reduced(&seq, &cfg, AttentionMask::Causal, ScaleScheme::OverN).unwrap();
        assert_eq!(causal.context(1), &[1.0, -4.0]);
        // query sees both examples: -w_2 x_q = -3
        assert_eq!(causal.queries(1), &[-3.0]);
        assert_eq!(causal.delta[0], vec![2.0, 2.0, 0.0]);
    }

    #[test]
    fn over_j_requires_causal_mask() {
        let seq = assemble_tokens(&inst_a()).unwrap();
        let cfg = LsaConstruction::new(1, 1.0, 1);
        let err = lsa_forward_reduced(&seq, &cfg, AttentionMask::Full, ScaleScheme::OverJ).unwrap_err();
        assert!(matches!(err, ModelError::InvalidCombination(_)));
        let err = lsa_forward_general(&seq, &[constructed_layer(&cfg)], AttentionMask::Full, ScaleScheme::OverJ, 1.0)
            .unwrap_err();
        assert!(matches!(err, ModelError::InvalidCombination(_)));
    }

    #[test]
    fn prefix_length_is_validated() {
        let seq = assemble_tokens(&inst_a()).unwrap();
        let cfg = LsaConstruction::new(1, 1.0, 1);
        for bad in [0, 4] {
            let mask = AttentionMask::Prefix { prefix_len: bad };
            assert!(lsa_forward_reduced(&seq, &cfg, mask, ScaleScheme::OverN).is_err());
        }
    }

    #[test]
    fn dimension_mismatches_are_reported() {
        let seq = assemble_tokens(&inst_a()).unwrap();
        let cfg = LsaConstruction::new(2, 1.0, 1);
        assert!(matches!(
            lsa_forward_reduced(&seq, &cfg, AttentionMask::Full, ScaleScheme::OverN),
            Err(ModelError::DimensionMismatch(_))
        ));
        assert!(matches!(
            lsa_forward_general(&seq, &[constructed_layer(&cfg)], AttentionMask::Full, ScaleScheme::OverN, 1.0),
            Err(ModelError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn short_prefix_mixes_bidirectional_and_causal() {
        // n' = 1: position 1 sees {1}, position 2 sees {1, 2}, same as causal
        let seq = assemble_tokens(&inst_a()).unwrap();
        let cfg = LsaConstruction::new(1, 1.0, 2);
        let p1 = lsa_forward_reduced(&seq, &cfg, AttentionMask::Prefix { prefix_len: 1 }, ScaleScheme::OverN).unwrap();
        let c = lsa_forward_reduced(&seq, &cfg, AttentionMask::Causal, ScaleScheme::OverN).unwrap();
        assert_eq!(p1, c);
    }
}
