//! Exact cosine-similarity retrieval of the coarse candidate set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{Entry, KnowledgeBase};
use crate::scalar::{cmp_desc, dot, Scalar};

/// Feature space a similarity is computed in: visual, textual, or the
/// concatenated joint space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RetrievalMode {
    #[serde(rename = "i2i", alias = "I2I")]
    I2I,
    #[serde(rename = "t2t", alias = "T2T")]
    T2T,
    #[serde(rename = "ti2ti", alias = "TI2TI")]
    TI2TI,
}

impl RetrievalMode {
    pub const ALL: [RetrievalMode; 3] = [RetrievalMode::I2I, RetrievalMode::T2T, RetrievalMode::TI2TI];

    pub fn as_str(self) -> &'static str {
        match self {
            RetrievalMode::I2I => "i2i",
            RetrievalMode::T2T => "t2t",
            RetrievalMode::TI2TI => "ti2ti",
        }
    }
}

impl fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RetrievalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i2i" => Ok(RetrievalMode::I2I),
            "t2t" => Ok(RetrievalMode::T2T),
            "ti2ti" => Ok(RetrievalMode::TI2TI),
            other => Err(Error::InvalidParameter(format!("unknown retrieval mode {other:?}"))),
        }
    }
}

/// Cosine similarity of two unit vectors (their dot product).
pub fn similarity<F: Scalar>(query: &[F], candidate: &[F]) -> Result<F> {
    if query.len() != candidate.len() {
        return Err(Error::LengthMismatch(query.len(), candidate.len()));
    }
    Ok(dot(query, candidate))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate<F = f64> {
    pub sample_id: String,
    pub similarity: F,
}

/// Top-k₁ retrieval result, sorted by similarity descending with ties
/// broken by ascending sample id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSet<F = f64> {
    pub mode: RetrievalMode,
    pub entries: Vec<Candidate<F>>,
}

impl<F: Scalar> CandidateSet<F> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().map(|c| c.sample_id.as_str())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.iter().any(|c| c.sample_id == id)
    }
}

/// Orders `(id, value)` pairs by value descending, then id ascending.
pub(crate) fn rank_order<F: Scalar>(a: (&str, F), b: (&str, F)) -> std::cmp::Ordering {
    cmp_desc(a.1, b.1).then_with(|| a.0.cmp(b.0))
}

/// Scores every knowledge-base sample against the query in `mode` and keeps
/// the best `k1`. A KB sample sharing the query's id is excluded.
pub fn retrieve<F: Scalar>(
    kb: &KnowledgeBase<F>,
    query: Entry<'_, F>,
    mode: RetrievalMode,
    k1: usize,
) -> Result<CandidateSet<F>> {
    if kb.is_empty() {
        return Err(Error::EmptyKnowledgeBase);
    }
    if k1 == 0 {
        return Err(Error::InvalidParameter("k1 must be at least 1".into()));
    }
    check_query_dims(kb, query)?;
    let q = query.vector(mode);
    let mut scored: Vec<Candidate<F>> = kb
        .iter()
        .filter(|e| e.id() != query.id())
        .map(|e| {
            Ok(Candidate {
                sample_id: e.id().to_string(),
                similarity: similarity(q, e.vector(mode))?,
            })
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| {
        rank_order((&a.sample_id, a.similarity), (&b.sample_id, b.similarity))
    });
    scored.truncate(k1);
    Ok(CandidateSet {
        mode,
        entries: scored,
    })
}

pub(crate) fn check_query_dims<F: Scalar>(kb: &KnowledgeBase<F>, query: Entry<'_, F>) -> Result<()> {
    let (qv, qt) = (query.embedding.visual.len(), query.embedding.textual.len());
    if qv != kb.dim_visual() || qt != kb.dim_textual() {
        return Err(Error::QueryDimension {
            query_v: qv,
            query_t: qt,
            kb_v: kb.dim_visual(),
            kb_t: kb.dim_textual(),
        });
    }
    Ok(())
}
