//! End-to-end preparation of one or more queries: blocking, scoring setup,
//! influence tables, and single-query resolution.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::blocking::{Canopy, QGramIndex, DEFAULT_MIN_JACCARD, DEFAULT_Q};
use crate::corpus::{attach_queries, CorpusError, CorpusStats, Mention, MentionId, QueryNode};
use crate::eval::{f1_q, EvalError, F1Report, QueryTruth};
use crate::features::{FeatureModel, Scorer};
use crate::influence::{
    build_attract, build_repel, influence_canopy_threshold, influence_scores, InfluenceError, InfluenceScores,
    InfluenceTable, DEFAULT_DECAY_P,
};
use crate::model::{EntityState, ModelError};
use crate::samplers::{run_sampler, QueryTarget, RunTrace, SamplerConfig};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Influence(#[from] InfluenceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("query {0:?} has an empty canopy")]
    EmptyCanopy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Settings {
    pub q: usize,
    pub min_jaccard: f64,
    pub decay_p: f64,
    /// Drop canopy members whose influence is below this score.
    pub influence_floor: Option<f64>,
}

impl Default for Settings {
    fn default() -> Settings {
        Settings {
            q: DEFAULT_Q,
            min_jaccard: DEFAULT_MIN_JACCARD,
            decay_p: DEFAULT_DECAY_P,
            influence_floor: None,
        }
    }
}

/// A loaded corpus with its statistics and q-gram index.
pub struct Workspace {
    pub corpus: Vec<Mention>,
    pub stats: CorpusStats,
    pub index: QGramIndex,
    pub model: FeatureModel,
    pub settings: Settings,
}

impl Workspace {
    pub fn new(corpus: Vec<Mention>, model: FeatureModel, settings: Settings) -> Result<Workspace, PipelineError> {
        if !(settings.decay_p > 0.0 && settings.decay_p < 1.0) {
            return Err(InfluenceError::BadDecay(settings.decay_p).into());
        }
        let stats = CorpusStats::compute(&corpus)?;
        let index = QGramIndex::build(&corpus, settings.q);
        Ok(Workspace {
            corpus,
            stats,
            index,
            model,
            settings,
        })
    }

    /// Attach ids, block, and build the scorer and influence tables for a
    /// set of queries. Queries with empty canopies are kept but get no
    /// tables.
    pub fn prepare(&self, mut queries: Vec<QueryNode>) -> Prepared {
        let started = Instant::now();
        attach_queries(&self.corpus, &mut queries);
        for q in queries.iter_mut() {
            q.widen_to_document(&self.corpus);
        }
        let canopies: Vec<Canopy> = queries
            .iter()
            .map(|q| self.index.canopy(q, self.settings.min_jaccard))
            .collect();
        let blocking = started.elapsed();

        let table_start = Instant::now();
        let mut working: BTreeSet<MentionId> = BTreeSet::new();
        for c in canopies.iter().filter(|c| !c.is_empty()) {
            working.extend(c.working_set());
        }
        let working_set: Vec<MentionId> = working.into_iter().collect();
        let scorer = Scorer::new(self.model.clone(), &self.stats, &self.corpus, &queries).with_pair_cache(&working_set);

        let settings = self.settings;
        let prepared: Vec<PreparedQuery> = queries
            .into_par_iter()
            .zip(canopies)
            .map(|(node, mut canopy)| {
                let t0 = Instant::now();
                let scores = influence_scores(&canopy.working_set(), node.id(), &scorer);
                if let Some(floor) = settings.influence_floor {
                    let keep = influence_canopy_threshold(&scores, floor);
                    canopy.members.retain(|m| keep.binary_search(m).is_ok());
                }
                let scores: InfluenceScores = scores
                    .into_iter()
                    .filter(|(m, _)| *m == node.id() || canopy.members.binary_search(m).is_ok())
                    .collect();
                let (attract, repel) = if canopy.is_empty() {
                    (None, None)
                } else {
                    (
                        build_attract(&scores, settings.decay_p).ok(),
                        build_repel(&scores, settings.decay_p).ok(),
                    )
                };
                PreparedQuery {
                    node,
                    canopy,
                    scores,
                    attract,
                    repel,
                    table_time: t0.elapsed(),
                }
            })
            .collect();
        Prepared {
            queries: prepared,
            working_set,
            scorer,
            blocking_time: blocking,
            table_time: table_start.elapsed(),
        }
    }

    pub fn truth_for(&self, q: &QueryNode) -> Option<QueryTruth> {
        q.mention.truth.as_deref().and_then(|g| QueryTruth::new(&self.corpus, g).ok())
    }
}

pub struct PreparedQuery {
    pub node: QueryNode,
    pub canopy: Canopy,
    pub scores: InfluenceScores,
    pub attract: Option<InfluenceTable>,
    pub repel: Option<InfluenceTable>,
    pub table_time: Duration,
}

impl PreparedQuery {
    pub fn table_for(&self, cfg: &SamplerConfig) -> Option<&InfluenceTable> {
        match cfg.algorithm.table_direction()? {
            crate::influence::Direction::Attract => self.attract.as_ref(),
            crate::influence::Direction::Repel => self.repel.as_ref(),
        }
    }

    pub fn target<'a>(&'a self, cfg: &SamplerConfig) -> QueryTarget<'a> {
        QueryTarget {
            query: self.node.id(),
            table: self.table_for(cfg),
        }
    }
}

pub struct Prepared {
    pub queries: Vec<PreparedQuery>,
    /// Union of all canopies plus the query templates, ascending.
    pub working_set: Vec<MentionId>,
    pub scorer: Scorer,
    pub blocking_time: Duration,
    pub table_time: Duration,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    pub blocking_secs: f64,
    pub table_secs: f64,
    pub inference_secs: f64,
    pub total_secs: f64,
}

pub struct QueryRun {
    pub state: EntityState,
    pub trace: RunTrace,
    /// Members of the query's final entity, template included.
    pub members: Vec<MentionId>,
    pub f1: Option<F1Report>,
    pub canopy_size: usize,
    pub timings: Timings,
}

/// Resolve the `qi`-th prepared query on its own canopy.
pub fn resolve(
    ws: &Workspace,
    prepared: &Prepared,
    qi: usize,
    cfg: &SamplerConfig,
) -> Result<QueryRun, PipelineError> {
    let pq = &prepared.queries[qi];
    if pq.canopy.is_empty() {
        return Err(PipelineError::EmptyCanopy(pq.node.mention.surface.clone()));
    }
    let truth = ws.truth_for(&pq.node);
    let state = cfg.algorithm.initial_state(&pq.canopy.working_set())?;
    let t0 = Instant::now();
    let (state, trace) = run_sampler(state, &pq.target(cfg), cfg, &prepared.scorer, truth.as_ref());
    let inference = t0.elapsed();
    let members = state.entity_of(pq.node.id()).map(|e| state.members(e).to_vec()).unwrap_or_default();
    let f1 = truth.as_ref().map(|t| f1_q(&members, t));
    let blocking_secs = prepared.blocking_time.as_secs_f64();
    let table_secs = pq.table_time.as_secs_f64();
    Ok(QueryRun {
        canopy_size: pq.canopy.members.len(),
        timings: Timings {
            blocking_secs,
            table_secs,
            inference_secs: inference.as_secs_f64(),
            total_secs: blocking_secs + table_secs + inference.as_secs_f64(),
        },
        state,
        trace,
        members,
        f1,
    })
}
