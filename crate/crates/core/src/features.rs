//! Log-linear affinity/repulsion feature model.
//!
//! A [`FeatureModel`] is a list of weighted predicates over mention pairs
//! (token-specific and context rows) and over whole entities. The
//! [`Scorer`] binds a model to prepared per-mention features and evaluates
//! pair scores, entity scores, full model scores, and Markov-blanket deltas
//! for single-mention moves.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use crate::corpus::{tokenize, ContextLevel, CorpusStats, Mention, MentionId, QueryNode, SparseVector};
use crate::model::{EntityState, ModelError, Move};

pub const DEFAULT_WEIGHTS: &str = include_str!("../weights/default.toml");
pub const WORKED_EXAMPLE_WEIGHTS: &str = include_str!("../weights/worked_example.toml");

/// Working sets up to this size get a dense pair cache.
pub const PAIR_CACHE_LIMIT: usize = 3000;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("cannot read weight file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("weight file syntax: {0}")]
    Syntax(String),
    #[error("feature {id}: {message}")]
    Invalid { id: String, message: String },
}

fn invalid(id: &str, message: impl Into<String>) -> FeatureError {
    FeatureError::Invalid {
        id: id.to_string(),
        message: message.into(),
    }
}

/// Which table section a predicate belongs to; context rows are switched off
/// for query nodes at [`ContextLevel::None`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureGroup {
    Token,
    Context,
    Entity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    /// Normalized surfaces are equal.
    EqualStrings,
    EqualFirstChar,
    EqualSecondChar,
    /// One normalized surface contains the other.
    Substring,
    EqualLength,
    MatchingFirstTerm,
    /// Context cosine in `[min, max)`, or `[min, 1]` for the top bucket.
    Similarity { min: f64, max: f64, top: bool },
    /// The two contexts share a term.
    MatchingTerms,
    /// A surface token of one mention occurs in the other's context.
    TokenInContext,
    /// Some surface token of either mention occurs in both contexts.
    MatchingTokenInContext,
    /// Keyword sets intersect. Inactive unless both sides carry keywords.
    MatchingKeyword,
    /// A keyword of one mention is a substring of the other's surface.
    /// Inactive unless some side carries keywords.
    KeywordInToken,
    /// Each surface has a token the other lacks.
    ExtraToken,
    /// Some member pair has context cosine at or above the threshold.
    SimilarNeighbor { threshold: f64 },
    /// Some member pair shares a document.
    MatchingDocument,
    /// Negation of another row in the same list; inert when that row is
    /// present in the model (`partner` is `Some`).
    Complement { of: String, partner: Option<usize>, target: Box<Predicate> },
}

impl Predicate {
    pub fn group(&self) -> FeatureGroup {
        use Predicate::*;
        match self {
            EqualStrings | EqualFirstChar | EqualSecondChar | Substring | EqualLength | MatchingFirstTerm => {
                FeatureGroup::Token
            }
            Similarity { .. }
            | MatchingTerms
            | TokenInContext
            | MatchingTokenInContext
            | MatchingKeyword
            | KeywordInToken
            | ExtraToken => FeatureGroup::Context,
            SimilarNeighbor { .. } | MatchingDocument => FeatureGroup::Entity,
            Complement { target, .. } => target.group(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub predicate: Predicate,
    pub pos: f64,
    pub neg: f64,
}

impl FeatureRow {
    /// Weight charged for a predicate outcome. Rows with a positive weight
    /// pay `pos` when the predicate holds and `neg` otherwise; rows with only
    /// a negative weight pay `neg` when their (dissimilarity) predicate holds.
    #[inline]
    pub fn contribution(&self, holds: bool) -> f64 {
        if self.pos != 0.0 {
            if holds {
                self.pos
            } else {
                self.neg
            }
        } else if holds {
            self.neg
        } else {
            0.0
        }
    }

    fn is_inert(&self) -> bool {
        match &self.predicate {
            Predicate::Complement { partner, .. } => partner.is_some(),
            _ => self.pos == 0.0 && self.neg == 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    pub pairwise: Vec<FeatureRow>,
    pub entity: Vec<FeatureRow>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightFile {
    #[serde(default)]
    pairwise: Vec<RawRow>,
    #[serde(default)]
    entity: Vec<RawRow>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRow {
    id: String,
    kind: String,
    pos: Option<f64>,
    neg: Option<f64>,
    #[serde(default)]
    params: toml::Table,
}

fn param_f64(row: &RawRow, key: &str) -> Result<f64, FeatureError> {
    match row.params.get(key) {
        Some(toml::Value::Float(f)) => Ok(*f),
        Some(toml::Value::Integer(i)) => Ok(*i as f64),
        Some(other) => Err(invalid(&row.id, format!("param {key} must be a number, got {other}"))),
        None => Err(invalid(&row.id, format!("missing param {key}"))),
    }
}

fn parse_kind(row: &RawRow, entity: bool) -> Result<Predicate, FeatureError> {
    use Predicate::*;
    let p = match (row.kind.as_str(), entity) {
        ("equal_strings", false) => EqualStrings,
        ("equal_first_char", false) => EqualFirstChar,
        ("equal_second_char", false) => EqualSecondChar,
        ("substring", false) => Substring,
        ("equal_length", false) => EqualLength,
        ("matching_first_term", false) => MatchingFirstTerm,
        ("similarity", false) => {
            let min = param_f64(row, "min")?;
            Similarity { min, max: 1.0, top: true }
        }
        ("matching_terms", false) => MatchingTerms,
        ("token_in_context", false) => TokenInContext,
        ("matching_token_in_context", false) => MatchingTokenInContext,
        ("matching_keyword", false) => MatchingKeyword,
        ("keyword_in_token", false) => KeywordInToken,
        ("extra_token", false) => ExtraToken,
        ("similar_neighbor", true) => SimilarNeighbor {
            threshold: param_f64(row, "threshold")?,
        },
        ("matching_document", true) => MatchingDocument,
        ("complement", _) => {
            let of = match row.params.get("of") {
                Some(toml::Value::String(s)) => s.clone(),
                _ => return Err(invalid(&row.id, "complement rows need params.of = \"<row id>\"")),
            };
            Complement {
                of,
                partner: None,
                target: Box::new(EqualStrings),
            }
        }
        (kind, true) => return Err(invalid(&row.id, format!("unknown entity feature kind {kind:?}"))),
        (kind, false) => return Err(invalid(&row.id, format!("unknown pairwise feature kind {kind:?}"))),
    };
    Ok(p)
}

fn build_rows(raw: &[RawRow], entity: bool) -> Result<Vec<FeatureRow>, FeatureError> {
    let mut rows = Vec::with_capacity(raw.len());
    let mut ids = HashSet::new();
    for r in raw {
        if !ids.insert(r.id.clone()) {
            return Err(invalid(&r.id, "duplicate feature id"));
        }
        let pos = r.pos.unwrap_or(0.0);
        let neg = r.neg.unwrap_or(0.0);
        if pos < 0.0 || !pos.is_finite() {
            return Err(invalid(&r.id, format!("positive weight must be >= 0, got {pos}")));
        }
        if neg > 0.0 || !neg.is_finite() {
            return Err(invalid(&r.id, format!("negative weight must be <= 0, got {neg}")));
        }
        rows.push(FeatureRow {
            id: r.id.clone(),
            predicate: parse_kind(r, entity)?,
            pos,
            neg,
        });
    }

    // Similarity buckets partition [0, 1] by their lower bounds.
    let mut prev: Option<f64> = None;
    for row in rows.iter_mut() {
        if let Predicate::Similarity { min, max, top } = &mut row.predicate {
            if !(0.0..=1.0).contains(min) {
                return Err(invalid(&row.id, format!("similarity threshold {min} outside [0, 1]")));
            }
            match prev {
                None => {
                    *max = 1.0;
                    *top = true;
                }
                Some(upper) => {
                    if *min >= upper {
                        return Err(invalid(&row.id, "similarity thresholds must be strictly decreasing"));
                    }
                    *max = upper;
                    *top = false;
                }
            }
            prev = Some(*min);
        }
    }

    // Resolve complement partners.
    let snapshot = rows.clone();
    for row in rows.iter_mut() {
        if let Predicate::Complement { of, partner, target } = &mut row.predicate {
            let idx = snapshot
                .iter()
                .position(|r| &r.id == of)
                .ok_or_else(|| invalid(&row.id, format!("complement of unknown row {of:?}")))?;
            if matches!(snapshot[idx].predicate, Predicate::Complement { .. }) {
                return Err(invalid(&row.id, "complement of a complement row"));
            }
            if row.pos != 0.0 {
                return Err(invalid(&row.id, "complement rows carry only a negative weight"));
            }
            if snapshot[idx].neg != row.neg && snapshot[idx].pos != 0.0 {
                log::warn!(
                    "complement row {} ({}) differs from the negative weight of {} ({}); it stays inert",
                    row.id,
                    row.neg,
                    of,
                    snapshot[idx].neg
                );
            }
            *partner = Some(idx);
            **target = snapshot[idx].predicate.clone();
        }
    }
    Ok(rows)
}

impl FeatureModel {
    pub fn parse(text: &str) -> Result<FeatureModel, FeatureError> {
        let file: WeightFile = toml::from_str(text).map_err(|e| FeatureError::Syntax(e.to_string()))?;
        Ok(FeatureModel {
            pairwise: build_rows(&file.pairwise, false)?,
            entity: build_rows(&file.entity, true)?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FeatureModel, FeatureError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        FeatureModel::parse(&text)
    }

    /// The default weights, one row per line of the published feature table.
    pub fn default_weights() -> FeatureModel {
        FeatureModel::parse(DEFAULT_WEIGHTS).expect("bundled weight file is valid")
    }

    /// Fixture weights for the six-mention baseball example.
    pub fn worked_example_weights() -> FeatureModel {
        FeatureModel::parse(WORKED_EXAMPLE_WEIGHTS).expect("bundled weight file is valid")
    }

    /// Keep only the named rows (complement partners are re-resolved).
    pub fn restricted_to(&self, ids: &[&str]) -> FeatureModel {
        let keep = |rows: &[FeatureRow]| -> Vec<FeatureRow> {
            let kept: Vec<FeatureRow> = rows.iter().filter(|r| ids.contains(&r.id.as_str())).cloned().collect();
            let names: Vec<String> = kept.iter().map(|r| r.id.clone()).collect();
            kept.into_iter()
                .map(|mut r| {
                    if let Predicate::Complement { of, partner, .. } = &mut r.predicate {
                        *partner = names.iter().position(|n| n == of);
                    }
                    r
                })
                .collect()
        };
        FeatureModel {
            pairwise: keep(&self.pairwise),
            entity: keep(&self.entity),
        }
    }

    fn similar_threshold(&self) -> Option<f64> {
        self.entity.iter().find_map(|r| match &r.predicate {
            Predicate::SimilarNeighbor { threshold } => Some(*threshold),
            Predicate::Complement { target, .. } => match **target {
                Predicate::SimilarNeighbor { threshold } => Some(threshold),
                _ => None,
            },
            _ => None,
        })
    }

    fn has_active_entity_rows(&self) -> bool {
        self.entity.iter().any(|r| !r.is_inert())
    }

    /// Pair score over prepared features.
    pub fn pair_score(&self, a: &MentionFeatures, b: &MentionFeatures) -> f64 {
        let context_on = a.level != ContextLevel::None && b.level != ContextLevel::None;
        let cosine = if context_on { a.tfidf.cosine(&b.tfidf) } else { 0.0 };
        let mut score = 0.0;
        for row in &self.pairwise {
            if row.is_inert() {
                continue;
            }
            let (pred, negate) = match &row.predicate {
                Predicate::Complement { target, .. } => (&**target, true),
                p => (p, false),
            };
            if pred.group() == FeatureGroup::Context && !context_on {
                continue;
            }
            let Some(holds) = eval_pair(pred, a, b, cosine) else {
                continue;
            };
            score += row.contribution(holds != negate);
        }
        score
    }

    /// Entity-wide score from the two pair facts the entity rows depend on.
    fn entity_score_from(&self, size: usize, has_similar: bool, has_same_doc: bool) -> f64 {
        if size < 2 {
            return 0.0;
        }
        let mut score = 0.0;
        for row in &self.entity {
            if row.is_inert() {
                continue;
            }
            let (pred, negate) = match &row.predicate {
                Predicate::Complement { target, .. } => (&**target, true),
                p => (p, false),
            };
            let holds = match pred {
                Predicate::SimilarNeighbor { .. } => has_similar,
                Predicate::MatchingDocument => has_same_doc,
                _ => continue,
            };
            score += row.contribution(holds != negate);
        }
        score
    }
}

/// Evaluate a non-entity predicate; `None` when the predicate is inactive
/// for this pair (keyword rows without keywords).
fn eval_pair(pred: &Predicate, a: &MentionFeatures, b: &MentionFeatures, cosine: f64) -> Option<bool> {
    use Predicate::*;
    let holds = match pred {
        EqualStrings => a.surface == b.surface,
        EqualFirstChar => a.first_char.is_some() && a.first_char == b.first_char,
        EqualSecondChar => a.second_char.is_some() && a.second_char == b.second_char,
        Substring => a.surface.contains(b.surface.as_str()) || b.surface.contains(a.surface.as_str()),
        EqualLength => a.char_len == b.char_len,
        MatchingFirstTerm => a.first_term.is_some() && a.first_term == b.first_term,
        Similarity { min, max, top } => cosine >= *min && (cosine < *max || (*top && cosine <= *max)),
        MatchingTerms => sorted_intersects(&a.context_terms, &b.context_terms),
        TokenInContext => {
            a.tokens.iter().any(|t| b.has_context_term(t)) || b.tokens.iter().any(|t| a.has_context_term(t))
        }
        MatchingTokenInContext => a
            .tokens
            .iter()
            .chain(b.tokens.iter())
            .any(|t| a.has_context_term(t) && b.has_context_term(t)),
        MatchingKeyword => {
            if a.keywords.is_empty() || b.keywords.is_empty() {
                return None;
            }
            sorted_intersects(&a.keywords, &b.keywords)
        }
        KeywordInToken => {
            if a.keywords.is_empty() && b.keywords.is_empty() {
                return None;
            }
            a.keywords.iter().any(|k| b.surface.contains(k.as_str()))
                || b.keywords.iter().any(|k| a.surface.contains(k.as_str()))
        }
        ExtraToken => {
            !a.tokens.is_empty()
                && !b.tokens.is_empty()
                && a.tokens.iter().any(|t| !b.tokens.contains(t))
                && b.tokens.iter().any(|t| !a.tokens.contains(t))
        }
        SimilarNeighbor { .. } | MatchingDocument | Complement { .. } => return None,
    };
    Some(holds)
}

fn sorted_intersects(a: &[String], b: &[String]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// Everything the predicates need from one mention, computed once.
#[derive(Debug, Clone)]
pub struct MentionFeatures {
    pub id: MentionId,
    /// Lowercase surface with whitespace collapsed.
    pub surface: String,
    first_char: Option<char>,
    second_char: Option<char>,
    char_len: usize,
    first_term: Option<String>,
    /// Distinct surface tokens, sorted.
    tokens: Vec<String>,
    /// Context terms, sorted.
    context_terms: Vec<String>,
    pub tfidf: SparseVector,
    /// Lowercase keywords, sorted and distinct.
    keywords: Vec<String>,
    pub doc_id: String,
    pub level: ContextLevel,
}

impl MentionFeatures {
    pub fn new(m: &Mention, level: ContextLevel, stats: &CorpusStats) -> MentionFeatures {
        let keywords: BTreeSet<String> = m
            .keywords
            .iter()
            .flatten()
            .map(|k| k.trim().to_lowercase())
            .filter(|k| !k.is_empty())
            .collect();
        MentionFeatures::with_keywords(m, level, stats, keywords)
    }

    pub fn for_query(q: &QueryNode, stats: &CorpusStats) -> MentionFeatures {
        MentionFeatures::with_keywords(&q.mention, q.context_level, stats, q.keywords())
    }

    fn with_keywords(
        m: &Mention,
        level: ContextLevel,
        stats: &CorpusStats,
        keywords: BTreeSet<String>,
    ) -> MentionFeatures {
        let surface = m.surface.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let mut chars = surface.chars();
        let first_char = chars.next();
        let second_char = chars.next();
        let ordered: Vec<String> = tokenize(&m.surface).collect();
        let first_term = ordered.first().cloned();
        let tokens: Vec<String> = ordered.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        MentionFeatures {
            id: m.id,
            char_len: surface.chars().count(),
            surface,
            first_char,
            second_char,
            first_term,
            tokens,
            context_terms: m.context.keys().cloned().collect(),
            tfidf: stats.tfidf_vector(&m.context),
            keywords: keywords.into_iter().collect(),
            doc_id: m.doc_id.clone(),
            level,
        }
    }

    fn has_context_term(&self, t: &str) -> bool {
        self.context_terms.binary_search_by(|c| c.as_str().cmp(t)).is_ok()
    }
}

/// Pair score of two corpus mentions at paragraph context.
pub fn pairwise_score(a: &Mention, b: &Mention, model: &FeatureModel, stats: &CorpusStats) -> f64 {
    model.pair_score(
        &MentionFeatures::new(a, ContextLevel::Paragraph, stats),
        &MentionFeatures::new(b, ContextLevel::Paragraph, stats),
    )
}

/// Entity-wide score of a member set of corpus mentions.
pub fn entity_score(members: &[&Mention], model: &FeatureModel, stats: &CorpusStats) -> f64 {
    let feats: Vec<MentionFeatures> = members
        .iter()
        .map(|m| MentionFeatures::new(m, ContextLevel::Paragraph, stats))
        .collect();
    let threshold = model.similar_threshold();
    let mut has_similar = false;
    let mut has_doc = false;
    for i in 0..feats.len() {
        for j in (i + 1)..feats.len() {
            has_doc |= feats[i].doc_id == feats[j].doc_id;
            if let Some(t) = threshold {
                has_similar |= similar(&feats[i], &feats[j], t);
            }
        }
    }
    model.entity_score_from(feats.len(), has_similar, has_doc)
}

fn similar(a: &MentionFeatures, b: &MentionFeatures, threshold: f64) -> bool {
    a.level != ContextLevel::None && b.level != ContextLevel::None && a.tfidf.cosine(&b.tfidf) >= threshold
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEval {
    pub score: f64,
    pub similar: bool,
    pub same_doc: bool,
}

struct PairCache {
    /// Dense mention index -> local index (`u32::MAX` when absent).
    local: Vec<u32>,
    n: usize,
    score: Vec<f64>,
    flags: Vec<u8>,
}

impl PairCache {
    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn local(&self, m: MentionId) -> Option<usize> {
        match self.local.get(m.index()) {
            Some(&l) if l != u32::MAX => Some(l as usize),
            _ => None,
        }
    }
}

/// Number of member pairs satisfying each entity-row predicate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairCounts {
    pub similar: u64,
    pub same_doc: u64,
}

/// Result of evaluating a move against two entities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveEval {
    pub delta: f64,
    pub source_after: PairCounts,
    pub target_after: PairCounts,
}

/// Difference in model score caused by one move, plus the entities whose
/// factors were rescored.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDelta {
    pub value: f64,
    pub touched_entities: Vec<crate::model::EntityId>,
}

/// A feature model bound to prepared mention features.
pub struct Scorer {
    model: FeatureModel,
    nodes: Vec<Option<MentionFeatures>>,
    similar_threshold: Option<f64>,
    entity_rows: bool,
    cache: Option<PairCache>,
}

impl Scorer {
    /// Prepare corpus mentions at paragraph context and query templates at
    /// their own level.
    pub fn new(model: FeatureModel, stats: &CorpusStats, corpus: &[Mention], queries: &[QueryNode]) -> Scorer {
        let max_id = corpus
            .iter()
            .map(|m| m.id)
            .chain(queries.iter().map(|q| q.id()))
            .map(|m| m.index())
            .max()
            .map_or(0, |m| m + 1);
        let mut nodes: Vec<Option<MentionFeatures>> = vec![None; max_id];
        for m in corpus {
            nodes[m.id.index()] = Some(MentionFeatures::new(m, ContextLevel::Paragraph, stats));
        }
        for q in queries {
            nodes[q.id().index()] = Some(MentionFeatures::for_query(q, stats));
        }
        Scorer::from_features(model, nodes)
    }

    pub fn from_features(model: FeatureModel, nodes: Vec<Option<MentionFeatures>>) -> Scorer {
        Scorer {
            similar_threshold: model.similar_threshold(),
            entity_rows: model.has_active_entity_rows(),
            model,
            nodes,
            cache: None,
        }
    }

    /// Precompute every pair among `ids` (skipped above [`PAIR_CACHE_LIMIT`]).
    pub fn with_pair_cache(mut self, ids: &[MentionId]) -> Scorer {
        let mut uniq: Vec<MentionId> = ids.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        let n = uniq.len();
        if !(2..=PAIR_CACHE_LIMIT).contains(&n) {
            self.cache = None;
            return self;
        }
        let rows: Vec<(Vec<f64>, Vec<u8>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut s = Vec::with_capacity(n - i - 1);
                let mut f = Vec::with_capacity(n - i - 1);
                for j in (i + 1)..n {
                    let e = self.compute_pair(uniq[i], uniq[j]);
                    s.push(e.score);
                    f.push(e.similar as u8 | (e.same_doc as u8) << 1);
                }
                (s, f)
            })
            .collect();
        let mut score = Vec::with_capacity(n * (n - 1) / 2);
        let mut flags = Vec::with_capacity(n * (n - 1) / 2);
        for (s, f) in rows {
            score.extend(s);
            flags.extend(f);
        }
        let mut local = vec![u32::MAX; uniq.last().map_or(0, |m| m.index() + 1)];
        for (i, &m) in uniq.iter().enumerate() {
            local[m.index()] = i as u32;
        }
        self.cache = Some(PairCache {
            local,
            n,
            score,
            flags,
        });
        self
    }

    pub fn model(&self) -> &FeatureModel {
        &self.model
    }

    pub fn features(&self, m: MentionId) -> &MentionFeatures {
        self.nodes
            .get(m.index())
            .and_then(Option::as_ref)
            .unwrap_or_else(|| panic!("no prepared features for {m}"))
    }

    fn compute_pair(&self, a: MentionId, b: MentionId) -> PairEval {
        let (fa, fb) = (self.features(a), self.features(b));
        PairEval {
            score: self.model.pair_score(fa, fb),
            similar: self.similar_threshold.is_some_and(|t| similar(fa, fb, t)),
            same_doc: fa.doc_id == fb.doc_id,
        }
    }

    #[inline]
    pub fn pair(&self, a: MentionId, b: MentionId) -> PairEval {
        if let Some(c) = &self.cache {
            if let (Some(i), Some(j)) = (c.local(a), c.local(b)) {
                if i != j {
                    let k = c.index(i, j);
                    let f = c.flags[k];
                    return PairEval {
                        score: c.score[k],
                        similar: f & 1 != 0,
                        same_doc: f & 2 != 0,
                    };
                }
            }
        }
        self.compute_pair(a, b)
    }

    pub fn pair_score(&self, a: MentionId, b: MentionId) -> f64 {
        self.pair(a, b).score
    }

    /// Whether any pair in `members` satisfies `pick`.
    fn any_pair(&self, members: &[MentionId], pick: fn(&PairEval) -> bool) -> bool {
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                if pick(&self.pair(a, b)) {
                    return true;
                }
            }
        }
        false
    }

    pub fn entity_score(&self, members: &[MentionId]) -> f64 {
        if !self.entity_rows || members.len() < 2 {
            return 0.0;
        }
        let has_similar = self.similar_threshold.is_some() && self.any_pair(members, |p| p.similar);
        let has_doc = self.any_pair(members, |p| p.same_doc);
        self.model.entity_score_from(members.len(), has_similar, has_doc)
    }

    /// Pairwise plus entity-wide score of one entity.
    pub fn cluster_score(&self, members: &[MentionId]) -> f64 {
        let mut s = 0.0;
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                s += self.pair(a, b).score;
            }
        }
        s + self.entity_score(members)
    }

    pub fn model_score(&self, state: &EntityState) -> f64 {
        state
            .entity_ids()
            .iter()
            .map(|&e| self.cluster_score(state.members(e)))
            .sum()
    }

    /// Count member pairs that are similar or share a document.
    pub fn pair_counts(&self, members: &[MentionId]) -> PairCounts {
        let mut c = PairCounts::default();
        if !self.entity_rows {
            return c;
        }
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                let p = self.pair(a, b);
                c.similar += p.similar as u64;
                c.same_doc += p.same_doc as u64;
            }
        }
        c
    }

    /// Score change from moving `m` out of `source` (which contains it) into
    /// `target` (empty for a fresh entity). Only the two entities are
    /// rescored.
    pub fn move_delta(&self, source: &[MentionId], target: &[MentionId], m: MentionId) -> f64 {
        self.move_eval(source, self.pair_counts(source), target, self.pair_counts(target), m)
            .delta
    }

    /// [`Scorer::move_delta`] given the current pair counts of both
    /// entities; also returns their counts after the move. Linear in the
    /// two entity sizes.
    pub fn move_eval(
        &self,
        source: &[MentionId],
        src_counts: PairCounts,
        target: &[MentionId],
        tgt_counts: PairCounts,
        m: MentionId,
    ) -> MoveEval {
        let mut delta = 0.0;
        let mut m_src = PairCounts::default();
        for &x in source {
            if x != m {
                let p = self.pair(m, x);
                delta -= p.score;
                m_src.similar += p.similar as u64;
                m_src.same_doc += p.same_doc as u64;
            }
        }
        let mut m_tgt = PairCounts::default();
        for &y in target {
            let p = self.pair(m, y);
            delta += p.score;
            m_tgt.similar += p.similar as u64;
            m_tgt.same_doc += p.same_doc as u64;
        }
        if !self.entity_rows {
            return MoveEval {
                delta,
                source_after: PairCounts::default(),
                target_after: PairCounts::default(),
            };
        }
        let source_after = PairCounts {
            similar: src_counts.similar - m_src.similar,
            same_doc: src_counts.same_doc - m_src.same_doc,
        };
        let target_after = PairCounts {
            similar: tgt_counts.similar + m_tgt.similar,
            same_doc: tgt_counts.same_doc + m_tgt.same_doc,
        };
        let score = |size: usize, c: PairCounts| self.model.entity_score_from(size, c.similar > 0, c.same_doc > 0);
        let before = score(source.len(), src_counts) + score(target.len(), tgt_counts);
        let after = score(source.len() - 1, source_after) + score(target.len() + 1, target_after);
        MoveEval {
            delta: delta + after - before,
            source_after,
            target_after,
        }
    }

    pub fn score_delta(&self, state: &EntityState, mv: &Move) -> Result<ScoreDelta, ModelError> {
        if state.entity_of(mv.mention) != Some(mv.source) {
            return Err(ModelError::NotInSource {
                mention: mv.mention,
                source_entity: mv.source,
            });
        }
        if mv.is_noop() {
            return Ok(ScoreDelta {
                value: 0.0,
                touched_entities: vec![mv.source],
            });
        }
        Ok(ScoreDelta {
            value: self.move_delta(state.members(mv.source), state.members(mv.target), mv.mention),
            touched_entities: vec![mv.source, mv.target],
        })
    }
}
