//! Mention corpora: loading, canonical serialization, and corpus-wide term
//! statistics for the context features.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

/// Dense mention identifier assigned at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MentionId(pub u32);

impl MentionId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for MentionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// Bag of lowercase tokens with strictly positive counts.
pub type ContextBag = BTreeMap<String, u32>;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate mention at doc {doc_id:?} position {start_pos} (first seen on line {first_line})")]
    Duplicate {
        line: usize,
        first_line: usize,
        doc_id: String,
        start_pos: u64,
    },
    #[error("corpus is empty")]
    Empty,
    #[error("unknown corpus format {0:?} (expected jsonl or tsv)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(CorpusFormat::Jsonl),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

impl CorpusFormat {
    /// Guess the format from a file extension, defaulting to jsonl.
    pub fn from_path(path: &Path) -> CorpusFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => CorpusFormat::Tsv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

/// One extracted surface string with its document context.
#[derive(Debug, Clone, PartialEq)]
pub struct Mention {
    pub id: MentionId,
    pub doc_id: String,
    pub start_pos: u64,
    pub surface: String,
    /// Raw context text as read; kept so the corpus re-serializes exactly.
    pub context_text: String,
    pub context: ContextBag,
    pub keywords: Option<Vec<String>>,
    pub truth: Option<String>,
}

impl Mention {
    pub fn new(
        id: MentionId,
        doc_id: impl Into<String>,
        start_pos: u64,
        surface: impl Into<String>,
        context_text: impl Into<String>,
    ) -> Mention {
        let context_text = context_text.into();
        Mention {
            id,
            doc_id: doc_id.into(),
            start_pos,
            surface: surface.into(),
            context: context_bag(&context_text),
            context_text,
            keywords: None,
            truth: None,
        }
    }

    pub fn with_truth(mut self, truth: impl Into<String>) -> Mention {
        self.truth = Some(truth.into());
        self
    }

    pub fn with_keywords<I, S>(mut self, keywords: I) -> Mention
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.keywords = Some(keywords.into_iter().map(Into::into).collect());
        self
    }

    fn to_record(&self) -> MentionRecord {
        MentionRecord {
            doc_id: self.doc_id.clone(),
            start_pos: self.start_pos,
            surface: self.surface.clone(),
            context: self.context_text.clone(),
            truth: self.truth.clone(),
            keywords: self.keywords.clone(),
        }
    }
}

/// How much context a query node carries into scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextLevel {
    /// Only token-specific features are active.
    None,
    #[default]
    Paragraph,
    /// Context widened to every mention of the same document.
    Document,
}

impl FromStr for ContextLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(ContextLevel::None),
            "paragraph" => Ok(ContextLevel::Paragraph),
            "document" => Ok(ContextLevel::Document),
            other => Err(format!("unknown context level {other:?}")),
        }
    }
}

/// A template mention whose entity is the resolution target.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryNode {
    pub mention: Mention,
    pub context_level: ContextLevel,
    pub extra_keywords: BTreeSet<String>,
    /// True when the template is itself a corpus mention rather than an
    /// appended one.
    pub in_corpus: bool,
}

impl QueryNode {
    pub fn new(mention: Mention, context_level: ContextLevel) -> QueryNode {
        QueryNode {
            mention,
            context_level,
            extra_keywords: BTreeSet::new(),
            in_corpus: false,
        }
    }

    pub fn with_keywords<I, S>(mut self, keywords: I) -> QueryNode
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.extra_keywords
            .extend(keywords.into_iter().map(|k| k.into().to_lowercase()));
        self
    }

    pub fn id(&self) -> MentionId {
        self.mention.id
    }

    /// All keywords the query carries: the template's own plus the extras.
    pub fn keywords(&self) -> BTreeSet<String> {
        let mut all = self.extra_keywords.clone();
        if let Some(kw) = &self.mention.keywords {
            all.extend(kw.iter().map(|k| k.to_lowercase()));
        }
        all
    }

    /// Widen the template context to every corpus mention sharing its
    /// document. Only meaningful at [`ContextLevel::Document`].
    pub fn widen_to_document(&mut self, corpus: &[Mention]) {
        if self.context_level != ContextLevel::Document {
            return;
        }
        for m in corpus.iter().filter(|m| m.doc_id == self.mention.doc_id) {
            if m.id == self.mention.id {
                continue;
            }
            for (term, count) in &m.context {
                *self.mention.context.entry(term.clone()).or_insert(0) += count;
            }
        }
    }
}

/// Give query templates ids after the corpus, or reuse the id of the corpus
/// mention they duplicate (same document and offset).
pub fn attach_queries(corpus: &[Mention], queries: &mut [QueryNode]) {
    let by_key: HashMap<(&str, u64), MentionId> = corpus
        .iter()
        .map(|m| ((m.doc_id.as_str(), m.start_pos), m.id))
        .collect();
    let mut next = corpus.len() as u32;
    for q in queries.iter_mut() {
        match by_key.get(&(q.mention.doc_id.as_str(), q.mention.start_pos)) {
            Some(&id) => {
                let existing = &corpus[id.index()];
                q.mention.id = id;
                q.in_corpus = true;
                if q.mention.truth.is_none() {
                    q.mention.truth = existing.truth.clone();
                }
            }
            None => {
                q.mention.id = MentionId(next);
                q.in_corpus = false;
                next += 1;
            }
        }
    }
}

/// Lowercase and split on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn context_bag(text: &str) -> ContextBag {
    let mut bag = ContextBag::new();
    for tok in tokenize(text) {
        *bag.entry(tok).or_insert(0) += 1;
    }
    bag
}

/// On-disk record shape shared by the jsonl and tsv formats. Field order is
/// the canonical serialization order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MentionRecord {
    pub doc_id: String,
    pub start_pos: u64,
    pub surface: String,
    pub context: String,
    #[serde(default)]
    pub truth: Option<String>,
    #[serde(default)]
    pub keywords: Option<Vec<String>>,
}

fn validate_record(rec: &MentionRecord, line: usize) -> Result<(), CorpusError> {
    if rec.surface.trim().is_empty() {
        return Err(CorpusError::Parse {
            line,
            message: "surface must be non-empty".into(),
        });
    }
    Ok(())
}

/// Build mentions from records, assigning dense ids in order and rejecting
/// duplicate `(doc_id, start_pos)` pairs. `lines[i]` is the source line of
/// `records[i]`.
fn assemble(records: Vec<(usize, MentionRecord)>) -> Result<Vec<Mention>, CorpusError> {
    let mut seen: HashMap<(String, u64), usize> = HashMap::new();
    let mut out = Vec::with_capacity(records.len());
    for (line, rec) in records {
        validate_record(&rec, line)?;
        if let Some(&first_line) = seen.get(&(rec.doc_id.clone(), rec.start_pos)) {
            return Err(CorpusError::Duplicate {
                line,
                first_line,
                doc_id: rec.doc_id,
                start_pos: rec.start_pos,
            });
        }
        seen.insert((rec.doc_id.clone(), rec.start_pos), line);
        let id = MentionId(out.len() as u32);
        let mut m = Mention::new(id, rec.doc_id, rec.start_pos, rec.surface, rec.context);
        m.truth = rec.truth;
        m.keywords = rec.keywords;
        out.push(m);
    }
    Ok(out)
}

pub fn parse_jsonl(text: &str) -> Result<Vec<Mention>, CorpusError> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: MentionRecord = serde_json::from_str(raw).map_err(|e| CorpusError::Parse {
            line,
            message: e.to_string(),
        })?;
        records.push((line, rec));
    }
    assemble(records)
}

pub fn parse_tsv(text: &str) -> Result<Vec<Mention>, CorpusError> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || (i == 0 && raw.starts_with("doc_id\t")) {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() < 4 || cols.len() > 6 {
            return Err(CorpusError::Parse {
                line,
                message: format!("expected 4 to 6 tab-separated columns, found {}", cols.len()),
            });
        }
        let start_pos = cols[1].trim().parse::<u64>().map_err(|e| CorpusError::Parse {
            line,
            message: format!("bad start_pos {:?}: {e}", cols[1]),
        })?;
        let opt = |idx: usize| cols.get(idx).filter(|s| !s.is_empty()).map(|s| s.to_string());
        let keywords = opt(5).map(|s| {
            s.split(',')
                .map(str::trim)
                .filter(|k| !k.is_empty())
                .map(String::from)
                .collect()
        });
        records.push((
            line,
            MentionRecord {
                doc_id: cols[0].to_string(),
                start_pos,
                surface: cols[2].to_string(),
                context: cols[3].to_string(),
                truth: opt(4),
                keywords,
            },
        ));
    }
    assemble(records)
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Mention>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        CorpusFormat::Jsonl => parse_jsonl(&text),
        CorpusFormat::Tsv => parse_tsv(&text),
    }
}

/// One watchlist entry: a query template and how to read its context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub surface: String,
    #[serde(default)]
    pub context: String,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
    /// Set together with `start_pos` to point at a corpus mention.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_pos: Option<u64>,
}

impl QueryRecord {
    /// The query node for entry `i` of a watchlist.
    pub fn to_query(&self, i: usize, level: ContextLevel) -> QueryNode {
        let doc = self.doc_id.clone().unwrap_or_else(|| format!("query{i}"));
        let mut m = Mention::new(MentionId(0), doc, self.start_pos.unwrap_or(0), self.surface.clone(), self.context.clone());
        m.truth = self.truth.clone();
        QueryNode::new(m, level).with_keywords(self.keywords.iter().cloned())
    }

    pub fn from_query(q: &QueryNode) -> QueryRecord {
        QueryRecord {
            surface: q.mention.surface.clone(),
            context: q.mention.context_text.clone(),
            keywords: q.keywords().into_iter().collect(),
            truth: q.mention.truth.clone(),
            doc_id: None,
            start_pos: None,
        }
    }
}

/// Parse a jsonl watchlist; every query gets `level`.
pub fn parse_watchlist(text: &str, level: ContextLevel) -> Result<Vec<QueryNode>, CorpusError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let rec: QueryRecord = serde_json::from_str(raw).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.surface.trim().is_empty() {
            return Err(CorpusError::Parse {
                line: i + 1,
                message: "surface must be non-empty".into(),
            });
        }
        out.push(rec.to_query(out.len(), level));
    }
    if out.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(out)
}

pub fn load_watchlist(path: &Path, level: ContextLevel) -> Result<Vec<QueryNode>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_watchlist(&text, level)
}

pub fn write_watchlist<W: Write>(mut out: W, queries: &[QueryNode]) -> std::io::Result<()> {
    for q in queries {
        serde_json::to_writer(&mut out, &QueryRecord::from_query(q))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Canonical jsonl: one record per line in load order.
pub fn write_jsonl<W: Write>(mut out: W, corpus: &[Mention]) -> std::io::Result<()> {
    for m in corpus {
        serde_json::to_writer(&mut out, &m.to_record())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl_string(corpus: &[Mention]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, corpus).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits utf-8")
}

/// Document count and per-term document frequencies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    pub doc_count: u32,
    pub doc_freq: HashMap<String, u32>,
}

static UNSEEN_TERM_LOGGED: AtomicBool = AtomicBool::new(false);

impl CorpusStats {
    pub fn compute(corpus: &[Mention]) -> Result<CorpusStats, CorpusError> {
        if corpus.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut docs: HashMap<&str, HashSet<&str>> = HashMap::new();
        for m in corpus {
            let terms = docs.entry(m.doc_id.as_str()).or_default();
            terms.extend(m.context.keys().map(String::as_str));
        }
        let mut doc_freq: HashMap<String, u32> = HashMap::new();
        for terms in docs.values() {
            for t in terms {
                *doc_freq.entry((*t).to_string()).or_insert(0) += 1;
            }
        }
        Ok(CorpusStats {
            doc_count: docs.len() as u32,
            doc_freq,
        })
    }

    /// Document frequency, clamped to 1 for terms never seen in the corpus.
    pub fn df(&self, term: &str) -> u32 {
        match self.doc_freq.get(term) {
            Some(&df) => df,
            None => {
                if !UNSEEN_TERM_LOGGED.swap(true, Ordering::Relaxed) {
                    log::info!("term {term:?} absent from corpus statistics; using df = 1");
                }
                1
            }
        }
    }

    pub fn idf(&self, term: &str) -> f64 {
        (self.doc_count as f64 / self.df(term) as f64).ln()
    }

    /// Unit-length tf-idf vector of a context bag. An all-zero raw vector is
    /// returned as the zero vector.
    pub fn tfidf_vector(&self, context: &ContextBag) -> SparseVector {
        let mut entries: Vec<(String, f64)> = context
            .iter()
            .map(|(t, &tf)| (t.clone(), tf as f64 * self.idf(t)))
            .filter(|(_, w)| *w != 0.0)
            .collect();
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut entries {
                *w /= norm;
            }
        }
        SparseVector { entries }
    }
}

/// Sparse vector over terms, sorted by term.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    entries: Vec<(String, f64)>,
}

impl SparseVector {
    pub fn from_entries(mut entries: Vec<(String, f64)>) -> SparseVector {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        SparseVector { entries }
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn get(&self, term: &str) -> f64 {
        self.entries
            .binary_search_by(|(t, _)| t.as_str().cmp(term))
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        let (a, b) = (&self.entries, &other.entries);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Cosine similarity of two unit (or zero) vectors, clamped to [0, 1].
    pub fn cosine(&self, other: &SparseVector) -> f64 {
        if self.is_zero() || other.is_zero() {
            return 0.0;
        }
        self.dot(other).clamp(0.0, 1.0)
    }
}
