//! Retrieval → graph fusion → scoring, for one query.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gstas::{score, select_topk2, GstasConfig, ScoreRun};
use crate::graph::{build_modality_graph, fuse, normalize, FusedGraph, ModalityWeights};
use crate::kb::{Entry, KnowledgeBase};
use crate::retrieval::{retrieve, CandidateSet, RetrievalMode};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: RetrievalMode,
    pub k1: usize,
    pub k_e: usize,
    pub lambda: ModalityWeights,
    pub gstas: GstasConfig,
    /// Interleave labels when picking exemplars instead of pure score order.
    pub balance_labels: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: RetrievalMode::TI2TI,
            k1: 50,
            k_e: 10,
            lambda: ModalityWeights::default(),
            gstas: GstasConfig::default(),
            balance_labels: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 {
            return Err(Error::InvalidParameter("k1 must be at least 1".into()));
        }
        if self.k_e == 0 {
            return Err(Error::InvalidParameter("k_e must be at least 1".into()));
        }
        if self.gstas.k2 == 0 {
            return Err(Error::InvalidParameter("k2 must be at least 1".into()));
        }
        self.lambda.validate()?;
        self.gstas.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Selection<F = f64> {
    pub query_id: String,
    pub candidates: CandidateSet<F>,
    /// Absent when fewer than two candidates were retrieved; the exemplars
    /// then follow similarity order.
    pub fused: Option<FusedGraph<F>>,
    pub run: Option<ScoreRun<F>>,
    pub exemplars: Vec<String>,
}

impl<F: Scalar> Selection<F> {
    /// Score of each selected exemplar (similarity when no graph was built).
    pub fn exemplar_scores(&self) -> Vec<F> {
        self.exemplars
            .iter()
            .map(|id| match &self.run {
                Some(run) => run
                    .scored
                    .entries
                    .iter()
                    .find(|e| &e.sample_id == id)
                    .map_or(F::zero(), |e| e.score),
                None => self
                    .candidates
                    .entries
                    .iter()
                    .find(|c| &c.sample_id == id)
                    .map_or(F::zero(), |c| c.similarity),
            })
            .collect()
    }
}

/// Selects up to `cfg.gstas.k2` exemplars for `query` from `kb`.
pub fn select_exemplars<F: Scalar>(
    kb: &KnowledgeBase<F>,
    query: Entry<'_, F>,
    cfg: &PipelineConfig,
) -> Result<Selection<F>> {
    cfg.validate()?;
    let k2 = cfg.gstas.k2;
    let candidates = retrieve(kb, query, cfg.mode, cfg.k1)?;
    if candidates.len() < 2 {
        let exemplars = candidates.ids().take(k2).map(str::to_string).collect();
        return Ok(Selection {
            query_id: query.id().to_string(),
            candidates,
            fused: None,
            run: None,
            exemplars,
        });
    }

    let graphs = RetrievalMode::ALL
        .iter()
        .map(|&m| build_modality_graph(&candidates, kb, m, cfg.k_e))
        .collect::<Result<Vec<_>>>()?;
    let fused = fuse(&graphs, kb, query, cfg.lambda, cfg.k_e)?;
    let op = normalize(&fused);

    let space = cfg.gstas.space;
    let dim = kb.dim(space);
    let mut embeddings = Array2::<F>::zeros((fused.node_count(), dim));
    for (row, id) in fused.nodes.iter().enumerate() {
        let entry = kb.get(id).ok_or_else(|| Error::UnknownId(id.clone()))?;
        embeddings.row_mut(row).assign(&Array1::from(entry.vector(space).to_vec()));
    }
    let query_vec = Array1::from(query.vector(space).to_vec());
    embeddings.row_mut(fused.query_index()).assign(&query_vec);

    let run = score(&op, &fused.nodes, embeddings.view(), query_vec.view(), &cfg.gstas)?;
    let exemplars = if cfg.balance_labels {
        balanced_pick(kb, &run, k2)
    } else {
        select_topk2(&run.scored, k2)
    };
    Ok(Selection {
        query_id: query.id().to_string(),
        candidates,
        fused: Some(fused),
        run: Some(run),
        exemplars,
    })
}

/// Walks the ranking and, at each pick, prefers the best remaining exemplar
/// whose label differs from the previous pick.
fn balanced_pick<F: Scalar>(kb: &KnowledgeBase<F>, run: &ScoreRun<F>, k2: usize) -> Vec<String> {
    let mut remaining: Vec<&str> = run.scored.entries.iter().map(|e| e.sample_id.as_str()).collect();
    let label_of = |id: &str| kb.get(id).map(|e| e.sample.label);
    let mut picked: Vec<String> = Vec::with_capacity(k2);
    while picked.len() < k2 && !remaining.is_empty() {
        let pos = match picked.last() {
            Some(prev) => {
                let prev_label = label_of(prev);
                remaining
                    .iter()
                    .position(|id| label_of(id) != prev_label)
                    .unwrap_or(0)
            }
            None => 0,
        };
        picked.push(remaining.remove(pos).to_string());
    }
    picked
}
