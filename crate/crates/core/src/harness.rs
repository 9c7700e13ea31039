//! End-to-end evaluation: select exemplars, prompt the oracle, score the
//! verdicts per manipulation-type library and overall.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ModalityWeights;
use crate::gstas::GstasConfig;
use crate::kb::{Entry, KnowledgeBase, Label, Sample};
use crate::lvlm_client::{EndpointConfig, Oracle};
use crate::metrics::{Confusion, Scores};
use crate::pipeline::{select_exemplars, PipelineConfig};
use crate::prompt::{build_prompt, PromptTemplate};
use crate::retrieval::{retrieve, RetrievalMode};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Retrieval, graph fusion and gated propagation scoring.
    Gasp,
    ZeroShot,
    Random,
    SimilarityOnly,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
            .map_err(|_| Error::InvalidParameter(format!("unknown baseline {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub kb_path: Option<PathBuf>,
    pub query_path: Option<PathBuf>,
    pub template_path: Option<PathBuf>,
    /// Where per-query traces are written as JSON.
    pub trace_path: Option<PathBuf>,
    pub mode: RetrievalMode,
    pub k1: usize,
    pub k_e: usize,
    pub k2: usize,
    pub alpha: f64,
    pub steps: usize,
    pub epsilon_clamp: f64,
    pub lambda: ModalityWeights,
    /// Embedding space used by the scorer for aggregation.
    pub space: RetrievalMode,
    pub balance_labels: bool,
    pub baseline: Baseline,
    pub seed: u64,
    pub mock: bool,
    pub endpoint: Option<EndpointConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        EvalConfig {
            kb_path: None,
            query_path: None,
            template_path: None,
            trace_path: None,
            mode: p.mode,
            k1: p.k1,
            k_e: p.k_e,
            k2: p.gstas.k2,
            alpha: p.gstas.alpha,
            steps: p.gstas.steps,
            epsilon_clamp: p.gstas.epsilon_clamp,
            lambda: p.lambda,
            space: p.gstas.space,
            balance_labels: p.balance_labels,
            baseline: Baseline::Gasp,
            seed: 0,
            mock: false,
            endpoint: None,
        }
    }
}

impl EvalConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            mode: self.mode,
            k1: self.k1,
            k_e: self.k_e,
            lambda: self.lambda,
            gstas: GstasConfig {
                alpha: self.alpha,
                steps: self.steps,
                k2: self.k2,
                epsilon_clamp: self.epsilon_clamp,
                space: self.space,
            },
            balance_labels: self.balance_labels,
        }
    }

    /// Baseline actually run: zero shots is always the zero-shot baseline.
    pub fn effective_baseline(&self) -> Baseline {
        if self.k2 == 0 {
            Baseline::ZeroShot
        } else {
            self.baseline
        }
    }

    fn validate(&self) -> Result<()> {
        match self.effective_baseline() {
            Baseline::ZeroShot | Baseline::Random => Ok(()),
            Baseline::SimilarityOnly if self.k1 == 0 => {
                Err(Error::InvalidParameter("k1 must be at least 1".into()))
            }
            Baseline::SimilarityOnly => Ok(()),
            Baseline::Gasp => self.pipeline().validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub query_id: String,
    pub group: String,
    pub gold: Label,
    /// Coarse candidate ids (empty for baselines that skip retrieval).
    pub candidate_ids: Vec<String>,
    pub exemplar_ids: Vec<String>,
    pub scores: Vec<f64>,
    /// Gate weight per propagation step.
    pub step_weights: Vec<f64>,
    pub verdict: Option<Label>,
    pub raw_text: String,
    pub latency_secs: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub accuracy: f64,
    pub f1: f64,
    pub count: usize,
    pub confusion: Confusion,
}

impl From<Confusion> for GroupReport {
    fn from(c: Confusion) -> Self {
        let Scores { accuracy, f1, count } = c.summary();
        GroupReport {
            accuracy,
            f1,
            count,
            confusion: c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub baseline: Baseline,
    pub k2: usize,
    pub alpha: f64,
    pub per_type: BTreeMap<String, GroupReport>,
    pub overall: GroupReport,
    pub parse_failures: usize,
    #[serde(skip)]
    pub traces: Vec<QueryTrace>,
}

impl EvalReport {
    pub fn from_traces(cfg: &EvalConfig, traces: Vec<QueryTrace>) -> Self {
        let mut groups: BTreeMap<String, Confusion> = BTreeMap::new();
        let mut overall = Confusion::default();
        for t in &traces {
            let mut one = Confusion::default();
            one.record(t.verdict, t.gold);
            groups.entry(t.group.clone()).or_default().merge(&one);
            overall.merge(&one);
        }
        EvalReport {
            baseline: cfg.effective_baseline(),
            k2: cfg.k2,
            alpha: cfg.alpha,
            per_type: groups.into_iter().map(|(k, c)| (k, c.into())).collect(),
            parse_failures: overall.parse_failures,
            overall: overall.into(),
            traces,
        }
    }

    /// Fixed-width table of per-type and overall Acc/F1.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "baseline={:?} k2={} alpha={}",
            self.baseline, self.k2, self.alpha
        );
        let _ = writeln!(out, "{:<16} {:>6} {:>8} {:>8}", "type", "n", "Acc%", "F1%");
        let rows = self
            .per_type
            .iter()
            .map(|(k, g)| (k.as_str(), g))
            .chain(std::iter::once(("overall", &self.overall)));
        for (name, g) in rows {
            let _ = writeln!(
                out,
                "{:<16} {:>6} {:>8.2} {:>8.2}",
                name, g.count, g.accuracy, g.f1
            );
        }
        let _ = writeln!(out, "parse failures: {}", self.parse_failures);
        out
    }
}

pub fn write_traces(traces: &[QueryTrace], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(traces)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

struct Chosen {
    candidate_ids: Vec<String>,
    exemplar_ids: Vec<String>,
    scores: Vec<f64>,
    step_weights: Vec<f64>,
}

fn choose<F: Scalar>(
    kb: &KnowledgeBase<F>,
    query: Entry<'_, F>,
    ordinal: usize,
    cfg: &EvalConfig,
) -> Result<Chosen> {
    let empty = || Chosen {
        candidate_ids: Vec::new(),
        exemplar_ids: Vec::new(),
        scores: Vec::new(),
        step_weights: Vec::new(),
    };
    match cfg.effective_baseline() {
        Baseline::ZeroShot => Ok(empty()),
        Baseline::Random => {
            let pool: Vec<usize> = (0..kb.len()).filter(|&i| kb.entry(i).id() != query.id()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(ordinal as u64);
            let take = cfg.k2.min(pool.len());
            let picks = index::sample(&mut rng, pool.len(), take);
            Ok(Chosen {
                exemplar_ids: picks.iter().map(|i| kb.entry(pool[i]).id().to_string()).collect(),
                scores: vec![0.0; take],
                ..empty()
            })
        }
        Baseline::SimilarityOnly => {
            let cands = retrieve(kb, query, cfg.mode, cfg.k1)?;
            let top: Vec<_> = cands.entries.iter().take(cfg.k2).collect();
            Ok(Chosen {
                candidate_ids: cands.ids().map(str::to_string).collect(),
                exemplar_ids: top.iter().map(|c| c.sample_id.clone()).collect(),
                scores: top.iter().map(|c| c.similarity.as_f64()).collect(),
                step_weights: Vec::new(),
            })
        }
        Baseline::Gasp => {
            let sel = select_exemplars(kb, query, &cfg.pipeline())?;
            Ok(Chosen {
                candidate_ids: sel.candidates.ids().map(str::to_string).collect(),
                scores: sel.exemplar_scores().into_iter().map(Scalar::as_f64).collect(),
                step_weights: sel
                    .run
                    .as_ref()
                    .map(|r| r.step_weights.iter().map(|w| w.as_f64()).collect())
                    .unwrap_or_default(),
                exemplar_ids: sel.exemplars,
            })
        }
    }
}

enum Failure {
    Setup(Error),
    Oracle(String),
}

fn run_query<F: Scalar>(
    kb: &KnowledgeBase<F>,
    query: Entry<'_, F>,
    ordinal: usize,
    cfg: &EvalConfig,
    template: &PromptTemplate,
    oracle: &dyn Oracle,
) -> std::result::Result<QueryTrace, Failure> {
    let chosen = choose(kb, query, ordinal, cfg).map_err(Failure::Setup)?;
    let exemplars: Vec<&Sample> = chosen
        .exemplar_ids
        .iter()
        .map(|id| kb.get(id).map(|e| e.sample).ok_or_else(|| Error::UnknownId(id.clone())))
        .collect::<Result<_>>()
        .map_err(Failure::Setup)?;
    let bundle = build_prompt(&exemplars, query.sample, template).map_err(Failure::Setup)?;
    let verdict = oracle.infer(&bundle).map_err(|e| Failure::Oracle(e.0))?;
    let gold = query.sample.label;
    Ok(QueryTrace {
        query_id: query.id().to_string(),
        group: query.sample.group().to_string(),
        gold,
        candidate_ids: chosen.candidate_ids,
        exemplar_ids: chosen.exemplar_ids,
        scores: chosen.scores,
        step_weights: chosen.step_weights,
        correct: verdict.label == Some(gold),
        verdict: verdict.label,
        raw_text: verdict.raw_text,
        latency_secs: verdict.latency_secs,
    })
}

/// Evaluates every query in `queries` against `kb`.
///
/// Queries run on up to `oracle.max_parallel()` threads; traces are kept in
/// query order. On an oracle failure the traces completed before the first
/// failing query are written to `cfg.trace_path` (if set) and an error is
/// returned.
pub fn evaluate_with<F: Scalar>(
    kb: &KnowledgeBase<F>,
    queries: &KnowledgeBase<F>,
    cfg: &EvalConfig,
    template: &PromptTemplate,
    oracle: &dyn Oracle,
) -> Result<EvalReport> {
    cfg.validate()?;
    let kb_ids: HashSet<&str> = kb.samples().iter().map(|s| s.id.as_str()).collect();
    if let Some(dup) = queries.samples().iter().find(|s| kb_ids.contains(s.id.as_str())) {
        return Err(Error::InvalidParameter(format!(
            "query id {:?} also appears in the knowledge base",
            dup.id
        )));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(oracle.max_parallel().max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let results: Vec<_> = pool.install(|| {
        (0..queries.len())
            .into_par_iter()
            .map(|i| run_query(kb, queries.entry(i), i, cfg, template, oracle))
            .collect()
    });

    let mut traces = Vec::with_capacity(results.len());
    for result in results {
        match result {
            Ok(trace) => traces.push(trace),
            Err(Failure::Setup(e)) => return Err(e),
            Err(Failure::Oracle(reason)) => {
                let trace = match &cfg.trace_path {
                    Some(path) => {
                        write_traces(&traces, path)?;
                        path.display().to_string()
                    }
                    None => "<not saved>".to_string(),
                };
                return Err(Error::EndpointAborted {
                    completed: traces.len(),
                    trace,
                    reason,
                });
            }
        }
    }
    if let Some(path) = &cfg.trace_path {
        write_traces(&traces, path)?;
    }
    Ok(EvalReport::from_traces(cfg, traces))
}

/// Loaded inputs for a run: knowledge base, queries and template.
pub struct EvalInputs {
    pub kb: KnowledgeBase<f64>,
    pub queries: KnowledgeBase<f64>,
    pub template: PromptTemplate,
}

impl EvalInputs {
    pub fn load(cfg: &EvalConfig) -> Result<Self> {
        let kb_path = cfg
            .kb_path
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("kb_path is not set".into()))?;
        let query_path = cfg
            .query_path
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("query_path is not set".into()))?;
        let template = match &cfg.template_path {
            Some(p) => PromptTemplate::load(p)?,
            None => PromptTemplate::default(),
        };
        Ok(EvalInputs {
            kb: KnowledgeBase::load(kb_path)?,
            queries: KnowledgeBase::load(query_path)?,
            template,
        })
    }
}

/// Loads the files named in `cfg` and evaluates them.
pub fn evaluate(cfg: &EvalConfig, oracle: &dyn Oracle) -> Result<EvalReport> {
    let inputs = EvalInputs::load(cfg)?;
    evaluate_with(&inputs.kb, &inputs.queries, cfg, &inputs.template, oracle)
}

/// One report per α, everything else (including the seed) held fixed.
pub fn sweep_alpha<F: Scalar>(
    kb: &KnowledgeBase<F>,
    queries: &KnowledgeBase<F>,
    cfg: &EvalConfig,
    template: &PromptTemplate,
    oracle: &dyn Oracle,
    alphas: &[f64],
) -> Result<Vec<EvalReport>> {
    if let Some(bad) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
        return Err(Error::InvalidParameter(format!("alpha {bad} is outside (0, 1]")));
    }
    alphas
        .iter()
        .map(|&alpha| {
            let run = EvalConfig {
                alpha,
                ..cfg.clone()
            };
            evaluate_with(kb, queries, &run, template, oracle)
        })
        .collect()
}

/// One report per shot count; zero shots runs the zero-shot baseline.
pub fn sweep_shots<F: Scalar>(
    kb: &KnowledgeBase<F>,
    queries: &KnowledgeBase<F>,
    cfg: &EvalConfig,
    template: &PromptTemplate,
    oracle: &dyn Oracle,
    shots: &[usize],
) -> Result<Vec<EvalReport>> {
    shots
        .iter()
        .map(|&k2| {
            let run = EvalConfig { k2, ..cfg.clone() };
            evaluate_with(kb, queries, &run, template, oracle)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lvlm_client::{MockOracle, OracleError, Verdict};
    use crate::prompt::PromptBundle;
    use crate::synth::{generate_synthetic, SynthParams};

    struct Fixed(Option<Label>);
    impl Oracle for Fixed {
        fn infer(&self, _: &PromptBundle) -> std::result::Result<Verdict, OracleError> {
            Ok(Verdict {
                label: self.0,
                raw_text: "x".into(),
                latency_secs: 0.0,
            })
        }
    }

    /// Answers with the query's gold label (read back from its caption id).
    struct Gold<'a>(&'a KnowledgeBase<f64>, bool);
    impl Oracle for Gold<'_> {
        fn infer(&self, p: &PromptBundle) -> std::result::Result<Verdict, OracleError> {
            let gold = self.0.get(&p.query.sample_id).unwrap().sample.label;
            let label = if self.1 { gold } else { gold.flip() };
            Ok(Verdict::from_text(label.word(), 0.0))
        }
    }

    struct FailAfter(usize);
    impl Oracle for FailAfter {
        fn infer(&self, p: &PromptBundle) -> std::result::Result<Verdict, OracleError> {
            let n: usize = p.query.sample_id[2..].parse().unwrap();
            if n >= self.0 {
                Err(OracleError("connection refused".into()))
            } else {
                Ok(Verdict::from_text("real", 0.0))
            }
        }
    }

    fn small() -> (KnowledgeBase<f64>, KnowledgeBase<f64>) {
        let d = generate_synthetic(&SynthParams {
            n_samples: 40,
            n_queries: 16,
            ..SynthParams::default()
        })
        .unwrap();
        (d.kb, d.queries)
    }

    #[test]
    fn perfect_and_adversarial_predictors() {
        let (kb, q) = small();
        let cfg = EvalConfig::default();
        let t = PromptTemplate::default();
        let r = evaluate_with(&kb, &q, &cfg, &t, &Gold(&q, true)).unwrap();
        assert_eq!((r.overall.accuracy, r.overall.f1), (100.0, 100.0));
        let r = evaluate_with(&kb, &q, &cfg, &t, &Gold(&q, false)).unwrap();
        assert_eq!(r.overall.accuracy, 0.0);
        let per_type: usize = r.per_type.values().map(|g| g.count).sum();
        assert_eq!(per_type, r.overall.count);
    }

    #[test]
    fn parse_failures_reported() {
        let (kb, q) = small();
        let r = evaluate_with(&kb, &q, &EvalConfig::default(), &PromptTemplate::default(), &Fixed(None)).unwrap();
        assert_eq!(r.parse_failures, q.len());
        assert_eq!(r.overall.accuracy, 0.0);
    }

    #[test]
    fn zero_shots_is_zero_shot() {
        let (kb, q) = small();
        let cfg = EvalConfig {
            k2: 0,
            ..EvalConfig::default()
        };
        let r = evaluate_with(&kb, &q, &cfg, &PromptTemplate::default(), &MockOracle::default()).unwrap();
        assert_eq!(r.baseline, Baseline::ZeroShot);
        assert!(r.traces.iter().all(|t| t.exemplar_ids.is_empty()));
        assert_eq!(r.overall.accuracy, 50.0);
    }

    #[test]
    fn overlapping_ids_rejected() {
        let (kb, _) = small();
        assert!(evaluate_with(&kb, &kb, &EvalConfig::default(), &PromptTemplate::default(), &MockOracle::default()).is_err());
    }

    #[test]
    fn oracle_failure_saves_partial_trace() {
        let (kb, q) = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.json");
        let cfg = EvalConfig {
            trace_path: Some(path.clone()),
            ..EvalConfig::default()
        };
        let err = evaluate_with(&kb, &q, &cfg, &PromptTemplate::default(), &FailAfter(5)).unwrap_err();
        assert!(matches!(err, Error::EndpointAborted { completed: 5, .. }));
        let saved: Vec<QueryTrace> = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(saved.len(), 5);
    }

    #[test]
    fn sweep_validates_alpha() {
        let (kb, q) = small();
        let t = PromptTemplate::default();
        let m = MockOracle::default();
        assert!(sweep_alpha(&kb, &q, &EvalConfig::default(), &t, &m, &[0.0]).is_err());
        let one = sweep_alpha(&kb, &q, &EvalConfig::default(), &t, &m, &[0.4]).unwrap();
        let direct = evaluate_with(&kb, &q, &EvalConfig::default(), &t, &m).unwrap();
        assert_eq!(one, vec![direct]);
    }

    #[test]
    fn config_parses_from_json() {
        let cfg: EvalConfig = serde_json::from_str(
            r#"{"kb_path":"kb.jsonl","mode":"t2t","k2":2,"baseline":"similarity_only",
                "lambda":{"i2i":0.2,"t2t":0.5,"ti2ti":0.3},"mock":true}"#,
        )
        .unwrap();
        assert_eq!(cfg.mode, RetrievalMode::T2T);
        assert_eq!(cfg.baseline, Baseline::SimilarityOnly);
        assert_eq!(cfg.k1, 50);
        assert_eq!("zero-shot".parse::<Baseline>().unwrap(), Baseline::ZeroShot);
    }
}
