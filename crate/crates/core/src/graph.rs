//! Per-modality kNN graphs over the candidate set, their query-centric
//! fusion, and the row-stochastic propagation operator.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{Entry, KnowledgeBase};
use crate::retrieval::{check_query_dims, rank_order, similarity, CandidateSet, RetrievalMode};
use crate::scalar::Scalar;

/// Per-modality fusion coefficients λ. Must be non-negative and sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityWeights {
    pub i2i: f64,
    pub t2t: f64,
    pub ti2ti: f64,
}

impl Default for ModalityWeights {
    fn default() -> Self {
        ModalityWeights {
            i2i: 0.3,
            t2t: 0.4,
            ti2ti: 0.3,
        }
    }
}

impl ModalityWeights {
    pub fn one_hot(mode: RetrievalMode) -> Self {
        let mut w = ModalityWeights {
            i2i: 0.0,
            t2t: 0.0,
            ti2ti: 0.0,
        };
        *w.get_mut(mode) = 1.0;
        w
    }

    pub fn get(&self, mode: RetrievalMode) -> f64 {
        match mode {
            RetrievalMode::I2I => self.i2i,
            RetrievalMode::T2T => self.t2t,
            RetrievalMode::TI2TI => self.ti2ti,
        }
    }

    fn get_mut(&mut self, mode: RetrievalMode) -> &mut f64 {
        match mode {
            RetrievalMode::I2I => &mut self.i2i,
            RetrievalMode::T2T => &mut self.t2t,
            RetrievalMode::TI2TI => &mut self.ti2ti,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.i2i, self.t2t, self.ti2ti];
        if parts.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "modality weights must be non-negative, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "modality weights must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Directed kNN graph over the candidates in one feature space.
#[derive(Debug, Clone)]
pub struct ModalityGraph<F = f64> {
    pub mode: RetrievalMode,
    pub nodes: Vec<String>,
    /// Out-neighbors of each node, best first.
    pub neighbors: Vec<Vec<usize>>,
    /// Dense weights; `adjacency[[i, j]]` is the clipped similarity of edge i→j.
    pub adjacency: Array2<F>,
}

fn resolve<'a, F: Scalar>(kb: &'a KnowledgeBase<F>, id: &str) -> Result<Entry<'a, F>> {
    kb.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
}

/// The `k` best `(index, similarity)` pairs, ties broken by ascending id.
fn top_k<F: Scalar>(mut scored: Vec<(usize, F)>, ids: &[String], k: usize) -> Vec<(usize, F)> {
    scored.sort_by(|a, b| rank_order((&ids[a.0], a.1), (&ids[b.0], b.1)));
    scored.truncate(k);
    scored
}

/// Links every candidate to its `k_e` most similar other candidates in the
/// feature space of `mode`. Negative similarities become zero weights.
pub fn build_modality_graph<F: Scalar>(
    cands: &CandidateSet<F>,
    kb: &KnowledgeBase<F>,
    mode: RetrievalMode,
    k_e: usize,
) -> Result<ModalityGraph<F>> {
    if k_e == 0 {
        return Err(Error::InvalidParameter("k_e must be at least 1".into()));
    }
    let n = cands.len();
    if n < 2 {
        return Err(Error::TooFewCandidates(n));
    }
    let nodes: Vec<String> = cands.ids().map(str::to_string).collect();
    let vectors: Vec<&[F]> = nodes
        .iter()
        .map(|id| resolve(kb, id).map(|e| e.vector(mode)))
        .collect::<Result<_>>()?;

    let mut adjacency = Array2::zeros((n, n));
    let mut neighbors = Vec::with_capacity(n);
    for i in 0..n {
        let scored = (0..n)
            .filter(|&j| j != i)
            .map(|j| Ok((j, similarity(vectors[i], vectors[j])?)))
            .collect::<Result<Vec<_>>>()?;
        let best = top_k(scored, &nodes, k_e);
        for &(j, sim) in &best {
            adjacency[[i, j]] = sim.max(F::zero());
        }
        neighbors.push(best.into_iter().map(|(j, _)| j).collect());
    }
    Ok(ModalityGraph {
        mode,
        nodes,
        neighbors,
        adjacency,
    })
}

/// Fused adjacency over the candidates plus the query node, which sits at
/// index `nodes.len()`.
#[derive(Debug, Clone)]
pub struct FusedGraph<F = f64> {
    pub nodes: Vec<String>,
    pub query_id: String,
    pub adjacency: Array2<F>,
    pub lambda: ModalityWeights,
}

impl<F: Scalar> FusedGraph<F> {
    pub fn query_index(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len() + 1
    }

    pub fn dump(&self) -> GraphDump {
        let mut nodes = self.nodes.clone();
        nodes.push(self.query_id.clone());
        GraphDump {
            nodes,
            query_index: self.query_index(),
            lambda: self.lambda,
            adjacency: self
                .adjacency
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|x| x.as_f64()).collect())
                .collect(),
        }
    }
}

/// JSON shape written by `--dump-graph`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDump {
    pub nodes: Vec<String>,
    pub query_index: usize,
    pub lambda: ModalityWeights,
    pub adjacency: Vec<Vec<f64>>,
}

/// λ-weighted sum of the modality graphs, with the query attached
/// bidirectionally to its top-`k_e` candidates in every mode.
pub fn fuse<F: Scalar>(
    graphs: &[ModalityGraph<F>],
    kb: &KnowledgeBase<F>,
    query: Entry<'_, F>,
    lambda: ModalityWeights,
    k_e: usize,
) -> Result<FusedGraph<F>> {
    lambda.validate()?;
    if k_e == 0 {
        return Err(Error::InvalidParameter("k_e must be at least 1".into()));
    }
    let first = graphs.first().ok_or(Error::NodeSetMismatch)?;
    for mode in RetrievalMode::ALL {
        if graphs.iter().filter(|g| g.mode == mode).count() != 1 {
            return Err(Error::InvalidParameter(format!(
                "expected exactly one {mode} graph"
            )));
        }
    }
    if graphs.iter().any(|g| g.nodes != first.nodes) {
        return Err(Error::NodeSetMismatch);
    }
    check_query_dims(kb, query)?;

    let n = first.nodes.len();
    let q = n;
    let mut adjacency = Array2::<F>::zeros((n + 1, n + 1));
    for g in graphs {
        let w = F::lit(lambda.get(g.mode));
        if w == F::zero() {
            continue;
        }
        adjacency
            .slice_mut(ndarray::s![..n, ..n])
            .scaled_add(w, &g.adjacency);

        let qv = query.vector(g.mode);
        let scored = first
            .nodes
            .iter()
            .enumerate()
            .map(|(j, id)| Ok((j, similarity(qv, resolve(kb, id)?.vector(g.mode))?)))
            .collect::<Result<Vec<_>>>()?;
        for (j, sim) in top_k(scored, &first.nodes, k_e) {
            let edge = w * sim.max(F::zero());
            adjacency[[q, j]] = adjacency[[q, j]] + edge;
            adjacency[[j, q]] = adjacency[[j, q]] + edge;
        }
    }
    Ok(FusedGraph {
        nodes: first.nodes.clone(),
        query_id: query.id().to_string(),
        adjacency,
        lambda,
    })
}

/// Row-stochastic random-walk operator.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOperator<F = f64> {
    pub matrix: Array2<F>,
}

impl<F: Scalar> PropagationOperator<F> {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Divides each row by its sum; rows with no positive mass become self-loops.
pub fn normalize<F: Scalar>(fg: &FusedGraph<F>) -> PropagationOperator<F> {
    normalize_adjacency(&fg.adjacency)
}

pub fn normalize_adjacency<F: Scalar>(adjacency: &Array2<F>) -> PropagationOperator<F> {
    let mut matrix = adjacency.mapv(|x| x.max(F::zero()));
    for (i, mut row) in matrix.rows_mut().into_iter().enumerate() {
        let sum: F = row.iter().copied().sum();
        if sum > F::zero() && sum.is_finite() {
            row.mapv_inplace(|x| x / sum);
        } else {
            row.fill(F::zero());
            row[i] = F::one();
        }
    }
    PropagationOperator { matrix }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{retrieve, Candidate};
    use crate::test_support::kb_from_dyn;
    use ndarray::array;

    fn all_of(kb: &KnowledgeBase<f64>) -> CandidateSet<f64> {
        CandidateSet {
            mode: RetrievalMode::TI2TI,
            entries: kb
                .iter()
                .map(|e| Candidate {
                    sample_id: e.id().to_string(),
                    similarity: 0.0,
                })
                .collect(),
        }
    }

    fn line_points() -> KnowledgeBase<f64> {
        // four points on a short arc; angular order a < b < c < d with gaps
        // 0.1, 0.3, 0.2 radians
        let pts = [("a", 0.0f64), ("b", 0.1), ("c", 0.4), ("d", 0.6)];
        let rows: Vec<_> = pts
            .iter()
            .map(|(id, t)| (*id, vec![t.cos(), t.sin()], vec![1.0, 0.0]))
            .collect();
        kb_from_dyn(&rows)
    }

    #[test]
    fn nearest_neighbor_on_a_line() {
        let kb = line_points();
        let g = build_modality_graph(&all_of(&kb), &kb, RetrievalMode::I2I, 1).unwrap();
        // brute force: nearest by angle
        let angles = [0.0f64, 0.1, 0.4, 0.6];
        for i in 0..4 {
            let want = (0..4)
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    (angles[a] - angles[i])
                        .abs()
                        .partial_cmp(&(angles[b] - angles[i]).abs())
                        .unwrap()
                })
                .unwrap();
            assert_eq!(g.neighbors[i], vec![want], "node {i}");
            let w = (angles[want] - angles[i]).cos();
            assert!((g.adjacency[[i, want]] - w).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_k_e_is_complete() {
        let kb = line_points();
        let g = build_modality_graph(&all_of(&kb), &kb, RetrievalMode::I2I, 10).unwrap();
        for i in 0..4 {
            assert_eq!(g.neighbors[i].len(), 3);
            assert_eq!(g.adjacency[[i, i]], 0.0);
            for j in 0..4 {
                if i != j {
                    assert!(g.adjacency[[i, j]] > 0.0);
                }
            }
        }
    }

    #[test]
    fn duplicates_get_unit_weight() {
        let kb = kb_from_dyn(&[
            ("a", vec![0.6, 0.8], vec![1.0, 0.0]),
            ("b", vec![0.6, 0.8], vec![1.0, 0.0]),
            ("c", vec![-0.8, 0.6], vec![0.0, 1.0]),
        ]);
        let g = build_modality_graph(&all_of(&kb), &kb, RetrievalMode::I2I, 1).unwrap();
        assert!((g.adjacency[[0, 1]] - 1.0).abs() < 1e-12);
        assert!((g.adjacency[[1, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_similarity_clipped() {
        let kb = kb_from_dyn(&[
            ("a", vec![1.0, 0.0], vec![1.0, 0.0]),
            ("b", vec![-1.0, 0.0], vec![1.0, 0.0]),
        ]);
        let g = build_modality_graph(&all_of(&kb), &kb, RetrievalMode::I2I, 1).unwrap();
        assert_eq!(g.neighbors[0], vec![1]);
        assert_eq!(g.adjacency[[0, 1]], 0.0);
    }

    #[test]
    fn too_few_candidates() {
        let kb = kb_from_dyn(&[("a", vec![1.0], vec![1.0])]);
        assert!(matches!(
            build_modality_graph(&all_of(&kb), &kb, RetrievalMode::I2I, 1),
            Err(Error::TooFewCandidates(1))
        ));
    }

    fn half_similar() -> (KnowledgeBase<f64>, KnowledgeBase<f64>) {
        // cos(60°) = 0.5 between the two candidates in every space
        let s = 3f64.sqrt() / 2.0;
        let kb = kb_from_dyn(&[
            ("a", vec![1.0, 0.0], vec![1.0, 0.0]),
            ("b", vec![0.5, s], vec![0.5, s]),
        ]);
        let q = kb_from_dyn(&[("q", vec![1.0, 0.0], vec![1.0, 0.0])]);
        (kb, q)
    }

    fn graphs_for(kb: &KnowledgeBase<f64>, k_e: usize) -> Vec<ModalityGraph<f64>> {
        RetrievalMode::ALL
            .iter()
            .map(|&m| build_modality_graph(&all_of(kb), kb, m, k_e).unwrap())
            .collect()
    }

    #[test]
    fn fused_weight_is_lambda_average() {
        let (kb, q) = half_similar();
        let graphs = graphs_for(&kb, 1);
        let fg = fuse(&graphs, &kb, q.entry(0), ModalityWeights::default(), 1).unwrap();
        // 0.3*0.5 + 0.4*0.5 + 0.3*0.5
        assert!((fg.adjacency[[0, 1]] - 0.5).abs() < 1e-12);
        assert!((fg.adjacency[[1, 0]] - 0.5).abs() < 1e-12);
        // query's top-1 in each space is "a" with similarity 1
        assert!((fg.adjacency[[2, 0]] - 1.0).abs() < 1e-12);
        assert_eq!(fg.adjacency[[2, 1]], 0.0);
        assert_eq!(fg.adjacency[[0, 2]], fg.adjacency[[2, 0]]);
    }

    #[test]
    fn one_hot_lambda_reproduces_modality_graph() {
        let kb = line_points();
        let q = kb_from_dyn(&[("q", vec![1.0, 0.0], vec![1.0, 0.0])]);
        let graphs = graphs_for(&kb, 2);
        for mode in RetrievalMode::ALL {
            let fg = fuse(&graphs, &kb, q.entry(0), ModalityWeights::one_hot(mode), 2).unwrap();
            let g = graphs.iter().find(|g| g.mode == mode).unwrap();
            assert_eq!(fg.adjacency.slice(ndarray::s![..4, ..4]), g.adjacency);
        }
    }

    #[test]
    fn fuse_validates_inputs() {
        let (kb, q) = half_similar();
        let graphs = graphs_for(&kb, 1);
        let bad = ModalityWeights {
            i2i: 0.5,
            t2t: 0.5,
            ti2ti: 0.5,
        };
        assert!(fuse(&graphs, &kb, q.entry(0), bad, 1).is_err());
        assert!(fuse(&graphs[..2], &kb, q.entry(0), ModalityWeights::default(), 1).is_err());
        let mut shuffled = graphs.clone();
        shuffled[1].nodes.reverse();
        assert!(matches!(
            fuse(&shuffled, &kb, q.entry(0), ModalityWeights::default(), 1),
            Err(Error::NodeSetMismatch)
        ));
    }

    #[test]
    fn normalize_rows() {
        let a = array![[0.2, 0.2, 0.6], [1.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        let p = normalize_adjacency(&a).matrix;
        assert_eq!(p.row(0), array![0.2, 0.2, 0.6]);
        assert_eq!(p.row(1), array![0.5, 0.5, 0.0]);
        assert_eq!(p.row(2), array![0.0, 0.0, 1.0]);
    }

    #[test]
    fn retrieval_then_graph_shapes() {
        let kb = line_points();
        let q = kb_from_dyn(&[("q", vec![1.0, 0.0], vec![1.0, 0.0])]);
        let cands = retrieve(&kb, q.entry(0), RetrievalMode::TI2TI, 3).unwrap();
        let graphs: Vec<_> = RetrievalMode::ALL
            .iter()
            .map(|&m| build_modality_graph(&cands, &kb, m, 1).unwrap())
            .collect();
        let fg = fuse(&graphs, &kb, q.entry(0), ModalityWeights::default(), 1).unwrap();
        assert_eq!(fg.adjacency.dim(), (4, 4));
        let p = normalize(&fg);
        for row in p.matrix.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
