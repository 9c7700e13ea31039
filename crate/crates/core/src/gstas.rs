//! Graph-structured Taylor-gated scorer.
//!
//! A random walk starts at the query node. After each step the walk's
//! distribution is used to average the node embeddings, the average's
//! cosine alignment with the query is passed through the geometric gate
//! `w = (1 - αe)⁻¹ - 1`, and each candidate accumulates `w · p_i`.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::PropagationOperator;
use crate::retrieval::{rank_order, RetrievalMode};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GstasConfig {
    /// Propagation range factor in (0, 1].
    pub alpha: f64,
    /// Number of propagation steps T.
    pub steps: usize,
    pub k2: usize,
    pub epsilon_clamp: f64,
    /// Feature space used for aggregation and query alignment.
    pub space: RetrievalMode,
}

impl Default for GstasConfig {
    fn default() -> Self {
        GstasConfig {
            alpha: 0.4,
            steps: 3,
            k2: 3,
            epsilon_clamp: 1e-6,
            space: RetrievalMode::TI2TI,
        }
    }
}

impl GstasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be at least 1".into()));
        }
        if !(self.epsilon_clamp > 0.0 && self.epsilon_clamp < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon_clamp must lie in (0, 1), got {}",
                self.epsilon_clamp
            )));
        }
        Ok(())
    }
}

/// Probability distribution of the walk over graph nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationState<F = f64> {
    pub p: Array1<F>,
}

impl<F: Scalar> PropagationState<F> {
    pub fn one_hot(len: usize, at: usize) -> Self {
        let mut p = Array1::zeros(len);
        p[at] = F::one();
        PropagationState { p }
    }
}

/// One walk step, `pᵀ ← pᵀ P`.
pub fn propagate_step<F: Scalar>(
    op: &PropagationOperator<F>,
    state: &PropagationState<F>,
) -> PropagationState<F> {
    PropagationState {
        p: state.p.dot(&op.matrix),
    }
}

/// Probability-weighted sum of node embeddings (rows of `embeddings`).
pub fn aggregate<F: Scalar>(p: ArrayView1<'_, F>, embeddings: ArrayView2<'_, F>) -> Array1<F> {
    p.dot(&embeddings)
}

/// Geometric gate `(1 - x)⁻¹ - 1` with `x = α·e` clamped to
/// `[-1 + ε, 1 - ε]`; equals `Σ_{n≥1} xⁿ`.
pub fn gate<F: Scalar>(e: F, alpha: F, epsilon_clamp: F) -> F {
    let one = F::one();
    let x = (alpha * e).max(-one + epsilon_clamp).min(one - epsilon_clamp);
    (one - x).recip() - one
}

fn cosine<F: Scalar>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>) -> F {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na > F::zero() && nb > F::zero() {
        a.dot(&b) / (na * nb)
    } else {
        F::zero()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredExemplar<F = f64> {
    pub sample_id: String,
    pub score: F,
}

/// Candidates ranked by accumulated score, query node excluded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredExemplars<F = f64> {
    pub entries: Vec<ScoredExemplar<F>>,
}

/// Output of [`score`] including per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRun<F = f64> {
    pub scored: ScoredExemplars<F>,
    /// Gate weight w at each step t = 1..T.
    pub step_weights: Vec<F>,
    /// Query alignment e at each step.
    pub step_alignment: Vec<F>,
    /// True when no mass leaves the query node; scores are then all zero and
    /// the candidates keep their input order.
    pub query_isolated: bool,
}

/// Runs the propagate, aggregate, gate, accumulate loop.
///
/// `node_ids` names the candidate nodes in operator order. The query node is
/// the last row of the operator and of `embeddings`. If the query is
/// isolated, candidates are returned in `node_ids` order with zero scores.
pub fn score<F: Scalar>(
    op: &PropagationOperator<F>,
    node_ids: &[String],
    embeddings: ArrayView2<'_, F>,
    query_embedding: ArrayView1<'_, F>,
    cfg: &GstasConfig,
) -> Result<ScoreRun<F>> {
    cfg.validate()?;
    let n = op.dim();
    if op.matrix.ncols() != n || n != node_ids.len() + 1 || embeddings.nrows() != n {
        return Err(Error::InvalidParameter(format!(
            "shape mismatch: operator {:?}, {} candidate ids, {} embedding rows",
            op.matrix.dim(),
            node_ids.len(),
            embeddings.nrows()
        )));
    }
    if embeddings.ncols() != query_embedding.len() {
        return Err(Error::LengthMismatch(embeddings.ncols(), query_embedding.len()));
    }
    let q = n - 1;
    let alpha = F::lit(cfg.alpha);
    let eps = F::lit(cfg.epsilon_clamp);

    let mut state = PropagationState::one_hot(n, q);
    let mut acc = Array1::<F>::zeros(n);
    let mut step_weights = Vec::with_capacity(cfg.steps);
    let mut step_alignment = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        state = propagate_step(op, &state);
        let e = cosine(aggregate(state.p.view(), embeddings).view(), query_embedding);
        let w = gate(e, alpha, eps);
        acc.scaled_add(w, &state.p);
        step_weights.push(w);
        step_alignment.push(e);
    }

    let query_isolated = op.matrix[[q, q]] == F::one();
    let mut entries: Vec<ScoredExemplar<F>> = node_ids
        .iter()
        .zip(acc.iter())
        .map(|(id, &s)| ScoredExemplar {
            sample_id: id.clone(),
            score: if query_isolated { F::zero() } else { s },
        })
        .collect();
    if !query_isolated {
        entries.sort_by(|a, b| rank_order((&a.sample_id, a.score), (&b.sample_id, b.score)));
    }
    Ok(ScoreRun {
        scored: ScoredExemplars { entries },
        step_weights,
        step_alignment,
        query_isolated,
    })
}

/// The first `min(k2, len)` ids of an already ranked list.
pub fn select_topk2<F: Scalar>(scored: &ScoredExemplars<F>, k2: usize) -> Vec<String> {
    scored
        .entries
        .iter()
        .take(k2)
        .map(|e| e.sample_id.clone())
        .collect()
}
