//! Query-specific precision, recall and F1, trace averaging, and the
//! experiment harness.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, load_watchlist, ContextLevel, CorpusError, CorpusFormat, Mention, MentionId};
use crate::features::{FeatureError, FeatureModel};
use crate::model::AcceptanceMode;
use crate::pipeline::{resolve, PipelineError, Settings, Timings, Workspace};
use crate::samplers::{Algorithm, SamplerConfig, DEFAULT_TAU_ALPHA, DEFAULT_WINDOW};
use crate::scheduler::{run_watchlist, Policy, WatchlistConfig, DEFAULT_K_SLICE};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no corpus mention carries the gold label {0:?}")]
    NoRelevant(String),
    #[error("query has no gold label")]
    Unlabeled,
    #[error("cannot average zero traces")]
    NoTraces,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub retrieved: usize,
    pub relevant: usize,
    pub intersection: usize,
}

impl F1Report {
    pub fn from_counts(retrieved: usize, relevant: usize, intersection: usize) -> F1Report {
        let precision = if retrieved == 0 {
            0.0
        } else {
            intersection as f64 / retrieved as f64
        };
        let recall = if relevant == 0 {
            0.0
        } else {
            intersection as f64 / relevant as f64
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        F1Report {
            precision,
            recall,
            f1,
            retrieved,
            relevant,
            intersection,
        }
    }
}

/// Gold labels of a corpus specialised to one query's label.
#[derive(Debug, Clone)]
pub struct QueryTruth {
    gold: String,
    /// Indexed by corpus mention id; ids past the end are query templates.
    is_relevant: Vec<bool>,
    relevant: usize,
}

impl QueryTruth {
    pub fn new(corpus: &[Mention], gold: &str) -> Result<QueryTruth, EvalError> {
        let mut is_relevant = vec![false; corpus.iter().map(|m| m.id.index() + 1).max().unwrap_or(0)];
        for m in corpus {
            is_relevant[m.id.index()] = m.truth.as_deref() == Some(gold);
        }
        let relevant = is_relevant.iter().filter(|&&r| r).count();
        if relevant == 0 {
            return Err(EvalError::NoRelevant(gold.to_string()));
        }
        Ok(QueryTruth {
            gold: gold.to_string(),
            is_relevant,
            relevant,
        })
    }

    pub fn gold(&self) -> &str {
        &self.gold
    }

    pub fn relevant(&self) -> usize {
        self.relevant
    }

    pub fn is_corpus_mention(&self, m: MentionId) -> bool {
        m.index() < self.is_relevant.len()
    }

    pub fn is_relevant(&self, m: MentionId) -> bool {
        self.is_relevant.get(m.index()).copied().unwrap_or(false)
    }
}

/// F1 of a query entity's members. Appended query templates are not corpus
/// mentions and are left out of the retrieved count.
pub fn f1_q(members: &[MentionId], truth: &QueryTruth) -> F1Report {
    let mut retrieved = 0;
    let mut intersection = 0;
    for &m in members {
        if truth.is_corpus_mention(m) {
            retrieved += 1;
            intersection += truth.is_relevant(m) as usize;
        }
    }
    F1Report::from_counts(retrieved, truth.relevant, intersection)
}

/// Per-step mean and envelope of a set of f1 curves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanTrace {
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Average aligned f1 curves step by step, truncating to the shortest.
pub fn average_runs(curves: &[Vec<f64>]) -> Result<MeanTrace, EvalError> {
    if curves.is_empty() {
        return Err(EvalError::NoTraces);
    }
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    if curves.iter().any(|c| c.len() != len) {
        log::warn!("trace lengths differ; truncating to {len} steps");
    }
    let mut out = MeanTrace {
        mean: Vec::with_capacity(len),
        min: Vec::with_capacity(len),
        max: Vec::with_capacity(len),
    };
    for step in 0..len {
        let col = curves.iter().map(|c| c[step]);
        out.mean.push(col.clone().sum::<f64>() / curves.len() as f64);
        out.min.push(col.clone().fold(f64::INFINITY, f64::min));
        out.max.push(col.fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(out)
}

/// First index (1-based proposal count) at which the curve reaches
/// `threshold`, or `None` if it never does.
pub fn steps_to_threshold(curve: &[f64], threshold: f64) -> Option<u64> {
    curve.iter().position(|&f| f >= threshold).map(|i| i as u64 + 1)
}

/// Label histogram, handy for building fixtures and reports.
pub fn label_counts(corpus: &[Mention]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for m in corpus {
        if let Some(t) = &m.truth {
            *out.entry(t.clone()).or_insert(0) += 1;
        }
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad experiment spec: {0}")]
    Spec(String),
    #[error("bad experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("cannot write results: {0}")]
    Output(String),
}

fn default_tau() -> f64 {
    DEFAULT_TAU_ALPHA
}

fn default_k() -> u64 {
    DEFAULT_K_SLICE
}

fn default_n() -> usize {
    DEFAULT_WINDOW
}

fn default_threshold() -> f64 {
    0.95
}

/// An experiment file. Paths are relative to the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub corpus: PathBuf,
    #[serde(default)]
    pub format: Option<String>,
    /// Watchlist jsonl.
    pub queries: PathBuf,
    #[serde(default)]
    pub weights: Option<PathBuf>,
    pub algorithms: Vec<String>,
    pub seeds: Vec<u64>,
    pub budget: u64,
    #[serde(default = "default_tau")]
    pub tau_alpha: f64,
    #[serde(default)]
    pub acceptance: Option<String>,
    #[serde(default)]
    pub context_level: Option<String>,
    /// When set, queries are resolved together under this schedule.
    #[serde(default)]
    pub policy: Option<String>,
    #[serde(rename = "K", alias = "k_slice", default = "default_k")]
    pub k_slice: u64,
    #[serde(rename = "N", alias = "window", default = "default_n")]
    pub window: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub q: Option<usize>,
    #[serde(default)]
    pub min_jaccard: Option<f64>,
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<ExperimentSpec, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Spec(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<ExperimentSpec, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        ExperimentSpec::parse(&text)
    }

    pub fn algorithms(&self) -> Result<Vec<Algorithm>, ExperimentError> {
        self.algorithms
            .iter()
            .map(|a| a.parse::<Algorithm>().map_err(ExperimentError::Config))
            .collect()
    }
}

/// One sampler run of the cross product.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Watchlist index; `None` for a scheduled watchlist run.
    pub query: Option<usize>,
    pub surface: String,
    /// Canopy size (merged for watchlist runs).
    pub mentions: usize,
    pub proposals: u64,
    pub accepted: u64,
    /// Final f1 (pooled over the watchlist for scheduled runs).
    pub f1_q: Option<f64>,
    pub steps_to_threshold: Option<u64>,
    pub timings: Timings,
    pub trace: String,
}

/// Steps until the seed-averaged f1 curve first reaches the threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub algorithm: Algorithm,
    pub query: usize,
    pub seeds: usize,
    pub threshold: f64,
    pub steps: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExperimentBundle {
    pub runs: Vec<RunSummary>,
    pub thresholds: Vec<ThresholdRow>,
}

struct Task {
    algorithm: Algorithm,
    seed: u64,
    query: Option<usize>,
}

fn write_file(path: &Path, write: impl FnOnce(fs::File) -> Result<(), String>) -> Result<(), ExperimentError> {
    let f = fs::File::create(path).map_err(|e| ExperimentError::Output(format!("{}: {e}", path.display())))?;
    write(f).map_err(|e| ExperimentError::Output(format!("{}: {e}", path.display())))
}

/// Run every (algorithm, seed[, query]) combination of `spec`, writing one
/// trace csv per run under `out/traces` and `out/summary.json`.
pub fn run_experiment(spec: &ExperimentSpec, base: &Path, out: &Path) -> Result<ExperimentBundle, ExperimentError> {
    let algorithms = spec.algorithms()?;
    let policy = spec
        .policy
        .as_deref()
        .map(|p| p.parse::<Policy>().map_err(ExperimentError::Config))
        .transpose()?;
    let acceptance = spec
        .acceptance
        .as_deref()
        .map(|a| a.parse::<AcceptanceMode>().map_err(ExperimentError::Config))
        .transpose()?
        .unwrap_or_default();
    let level = spec
        .context_level
        .as_deref()
        .map(|l| l.parse::<ContextLevel>().map_err(ExperimentError::Config))
        .transpose()?
        .unwrap_or_default();
    if !(0.0..=1.0).contains(&spec.tau_alpha) {
        return Err(ExperimentError::Config(format!("tau_alpha {} is outside [0, 1]", spec.tau_alpha)));
    }
    if spec.k_slice == 0 || spec.window == 0 {
        return Err(ExperimentError::Config("K and N must be positive".into()));
    }
    let traces_dir = out.join("traces");
    fs::create_dir_all(&traces_dir).map_err(|e| ExperimentError::Output(format!("{}: {e}", traces_dir.display())))?;
    if algorithms.is_empty() || spec.seeds.is_empty() {
        let bundle = ExperimentBundle::default();
        write_summary(out, &bundle)?;
        return Ok(bundle);
    }

    let (ws, prepared) = prepare_experiment(spec, base, level)?;

    let mut tasks = Vec::new();
    for &algorithm in &algorithms {
        for &seed in &spec.seeds {
            match policy {
                Some(_) => tasks.push(Task {
                    algorithm,
                    seed,
                    query: None,
                }),
                None => tasks.extend((0..prepared.queries.len()).map(|qi| Task {
                    algorithm,
                    seed,
                    query: Some(qi),
                })),
            }
        }
    }

    let results: Vec<Result<(RunSummary, Vec<f64>), ExperimentError>> = tasks
        .par_iter()
        .map(|t| {
            let cfg = SamplerConfig::new(t.algorithm, spec.budget, t.seed)
                .with_tau(spec.tau_alpha)
                .with_acceptance(acceptance);
            match t.query {
                Some(qi) => {
                    let name = format!("{}-seed{}-q{qi}.csv", t.algorithm, t.seed);
                    let path = traces_dir.join(&name);
                    let run = resolve(&ws, &prepared, qi, &cfg)?;
                    write_file(&path, |f| run.trace.write_csv(f).map_err(|e| e.to_string()))?;
                    let curve = run.trace.f1_curve();
                    Ok((
                        RunSummary {
                            algorithm: t.algorithm,
                            seed: t.seed,
                            query: Some(qi),
                            surface: prepared.queries[qi].node.mention.surface.clone(),
                            mentions: run.canopy_size,
                            proposals: run.trace.len() as u64,
                            accepted: run.trace.accepted() as u64,
                            f1_q: run.f1.map(|r| r.f1),
                            steps_to_threshold: steps_to_threshold(&curve, spec.threshold),
                            timings: run.timings,
                            trace: format!("traces/{name}"),
                        },
                        curve,
                    ))
                }
                None => {
                    let wcfg = WatchlistConfig::new(policy.expect("watchlist tasks carry a policy"), cfg)
                        .with_k_slice(spec.k_slice)
                        .with_window(spec.window);
                    let name = format!("{}-seed{}-watchlist.csv", t.algorithm, t.seed);
                    let path = traces_dir.join(&name);
                    let t0 = Instant::now();
                    let run = run_watchlist(&ws, &prepared, &wcfg).map_err(PipelineError::from)?;
                    let inference = t0.elapsed().as_secs_f64();
                    write_file(&path, |f| run.write_aggregate_csv(f).map_err(|e| e.to_string()))?;
                    let last = run.aggregate.last().expect("aggregate holds the initial point");
                    let steps = run
                        .aggregate
                        .iter()
                        .find(|p| p.pooled_f1_q >= spec.threshold)
                        .map(|p| p.cumulative_proposals);
                    let blocking = prepared.blocking_time.as_secs_f64();
                    let table = prepared.table_time.as_secs_f64();
                    Ok((
                        RunSummary {
                            algorithm: t.algorithm,
                            seed: t.seed,
                            query: None,
                            surface: "watchlist".into(),
                            mentions: prepared.working_set.len(),
                            proposals: last.cumulative_proposals,
                            accepted: run.queries.iter().map(|q| q.trace.accepted() as u64).sum(),
                            f1_q: Some(last.pooled_f1_q),
                            steps_to_threshold: steps,
                            timings: Timings {
                                blocking_secs: blocking,
                                table_secs: table,
                                inference_secs: inference,
                                total_secs: blocking + table + inference,
                            },
                            trace: format!("traces/{name}"),
                        },
                        Vec::new(),
                    ))
                }
            }
        })
        .collect();

    let mut bundle = ExperimentBundle::default();
    let mut curves: BTreeMap<(Algorithm, usize), Vec<Vec<f64>>> = BTreeMap::new();
    for r in results {
        let (summary, curve) = r?;
        if let Some(qi) = summary.query {
            curves.entry((summary.algorithm, qi)).or_default().push(curve);
        }
        bundle.runs.push(summary);
    }
    for ((algorithm, query), cs) in curves {
        let mean = average_runs(&cs).map_err(|e| ExperimentError::Config(e.to_string()))?;
        bundle.thresholds.push(ThresholdRow {
            algorithm,
            query,
            seeds: cs.len(),
            threshold: spec.threshold,
            steps: steps_to_threshold(&mean.mean, spec.threshold),
        });
    }
    write_summary(out, &bundle)?;
    Ok(bundle)
}

/// Load the spec's corpus and watchlist and prepare every query.
pub fn prepare_experiment(
    spec: &ExperimentSpec,
    base: &Path,
    level: ContextLevel,
) -> Result<(Workspace, crate::pipeline::Prepared), ExperimentError> {
    let corpus_path = base.join(&spec.corpus);
    let format = match &spec.format {
        Some(f) => f.parse::<CorpusFormat>()?,
        None => CorpusFormat::from_path(&corpus_path),
    };
    let corpus = load_corpus(&corpus_path, format)?;
    let queries = load_watchlist(&base.join(&spec.queries), level)?;
    let model = match &spec.weights {
        Some(w) => FeatureModel::load(base.join(w))?,
        None => FeatureModel::default_weights(),
    };
    let mut settings = Settings::default();
    settings.q = spec.q.unwrap_or(settings.q);
    settings.min_jaccard = spec.min_jaccard.unwrap_or(settings.min_jaccard);
    let ws = Workspace::new(corpus, model, settings)?;
    let prepared = ws.prepare(queries);
    Ok((ws, prepared))
}

fn write_summary(out: &Path, bundle: &ExperimentBundle) -> Result<(), ExperimentError> {
    write_file(&out.join("summary.json"), |f| {
        serde_json::to_writer_pretty(f, bundle).map_err(|e| e.to_string())
    })
}

/// Load a spec file and run it with paths resolved against its directory.
pub fn run_experiment_file(path: &Path, out: &Path) -> Result<ExperimentBundle, ExperimentError> {
    let spec = ExperimentSpec::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    run_experiment(&spec, base, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn labelled(labels: &[&str]) -> Vec<Mention> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| Mention::new(MentionId(i as u32), "d", i as u64, "x", "").with_truth(*l))
            .collect()
    }

    fn ids(xs: &[u32]) -> Vec<MentionId> {
        xs.iter().map(|&x| MentionId(x)).collect()
    }

    #[test]
    fn perfect_retrieval() {
        let c = labelled(&["a", "a", "b"]);
        let t = QueryTruth::new(&c, "a").unwrap();
        let r = f1_q(&ids(&[0, 1]), &t);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn half_right() {
        let c = labelled(&["a", "a", "a", "a", "b", "b"]);
        let t = QueryTruth::new(&c, "a").unwrap();
        let r = f1_q(&ids(&[0, 1, 4, 5]), &t);
        assert_eq!((r.retrieved, r.relevant, r.intersection), (4, 4, 2));
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn empty_retrieval_and_template_exclusion() {
        let c = labelled(&["a", "b"]);
        let t = QueryTruth::new(&c, "a").unwrap();
        let r = f1_q(&[], &t);
        assert_eq!((r.precision, r.f1), (0.0, 0.0));
        // id 2 is an appended template
        let r = f1_q(&ids(&[0, 2]), &t);
        assert_eq!((r.retrieved, r.f1), (1, 1.0));
        assert!(matches!(QueryTruth::new(&c, "zzz"), Err(EvalError::NoRelevant(_))));
    }

    #[test]
    fn f1_matches_set_arithmetic() {
        let c = labelled(&["a", "b", "a", "c", "a", "b", "a"]);
        let t = QueryTruth::new(&c, "a").unwrap();
        for mask in 0u32..128 {
            let members: Vec<MentionId> = (0..7).filter(|i| mask & (1 << i) != 0).map(MentionId).collect();
            let retrieved: HashSet<u32> = members.iter().map(|m| m.0).collect();
            let relevant: HashSet<u32> = [0, 2, 4, 6].into_iter().collect();
            let inter = retrieved.intersection(&relevant).count() as f64;
            let p = if retrieved.is_empty() { 0.0 } else { inter / retrieved.len() as f64 };
            let r = inter / 4.0;
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            assert!((f1_q(&members, &t).f1 - f).abs() < 1e-12);
        }
    }

    #[test]
    fn averaging() {
        let single = vec![vec![0.1, 0.5, 0.9]];
        assert_eq!(average_runs(&single).unwrap().mean, single[0]);
        let two = vec![vec![0.8; 5], vec![1.0; 5]];
        assert!(average_runs(&two).unwrap().mean.iter().all(|&m| (m - 0.9).abs() < 1e-12));
        let uneven = vec![vec![0.0, 1.0, 1.0], vec![1.0, 1.0]];
        let avg = average_runs(&uneven).unwrap();
        assert_eq!(avg.mean, [0.5, 1.0]);
        assert_eq!(avg.min, [0.0, 1.0]);
        assert_eq!(avg.max, [1.0, 1.0]);
        assert!(average_runs(&[]).is_err());
    }

    #[test]
    fn six_trace_spot_checks() {
        let traces: Vec<Vec<f64>> = (0..6)
            .map(|k| (0..10).map(|s| ((k * 7 + s * 3) % 11) as f64 / 10.0).collect())
            .collect();
        let avg = average_runs(&traces).unwrap();
        // hand sums of ((7k + 3s) mod 11) over k = 0..5
        for (step, sum) in [(0usize, 28), (4, 23), (9, 25)] {
            assert!((avg.mean[step] - sum as f64 / 60.0).abs() < 1e-12, "step {step}");
        }
        let mut rev = traces.clone();
        rev.reverse();
        let back = average_runs(&rev).unwrap();
        assert!(back.mean.iter().zip(&avg.mean).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!((back.min, back.max), (avg.min, avg.max));
    }

    #[test]
    fn threshold_steps() {
        let curve = [0.1, 0.5, 0.96, 0.94, 1.0];
        assert_eq!(steps_to_threshold(&curve, 0.95), Some(3));
        assert_eq!(steps_to_threshold(&curve, 0.99), Some(5));
        assert_eq!(steps_to_threshold(&curve, 0.4), Some(2));
        assert_eq!(steps_to_threshold(&curve, 1.1), None);
    }

    fn experiment_dir(algorithms: &str, policy: &str) -> tempfile::TempDir {
        use crate::synth::{planted, CanopySpec};
        let dir = tempfile::tempdir().unwrap();
        let p = planted(&[CanopySpec::new("Ada", "Quill", 8, 4, 2)], 10, 3);
        fs::write(dir.path().join("corpus.jsonl"), crate::corpus::to_jsonl_string(&p.corpus)).unwrap();
        let mut wl = Vec::new();
        crate::corpus::write_watchlist(&mut wl, &p.queries).unwrap();
        fs::write(dir.path().join("queries.jsonl"), wl).unwrap();
        let spec = format!(
            "corpus = \"corpus.jsonl\"\nqueries = \"queries.jsonl\"\nalgorithms = [{algorithms}]\nseeds = [1, 2, 3]\nbudget = 300\ntau_alpha = 0.9\n{policy}K = 100\nN = 50\n"
        );
        fs::write(dir.path().join("exp.toml"), spec).unwrap();
        dir
    }

    #[test]
    fn experiment_cross_product() {
        let dir = experiment_dir("\"target-fixed\", \"query-proportional\", \"hybrid-attract\", \"hybrid-repel\"", "");
        let out = dir.path().join("results");
        let bundle = run_experiment_file(&dir.path().join("exp.toml"), &out).unwrap();
        assert_eq!(bundle.runs.len(), 12);
        assert_eq!(fs::read_dir(out.join("traces")).unwrap().count(), 12);
        assert_eq!(bundle.thresholds.len(), 4);
        assert!(bundle.thresholds.iter().all(|t| t.seeds == 3));
        let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
        let run = &summary["runs"][0];
        for key in ["blocking_secs", "table_secs", "inference_secs", "total_secs"] {
            assert!(run["timings"][key].is_number(), "{key}");
        }
        assert!(run["mentions"].as_u64().unwrap() > 0);
        for r in &bundle.runs {
            assert_eq!(r.proposals, 300);
            assert!(out.join(&r.trace).exists());
        }
    }

    #[test]
    fn experiment_is_deterministic() {
        let dir = experiment_dir("\"hybrid-attract\"", "");
        let a = run_experiment_file(&dir.path().join("exp.toml"), &dir.path().join("a")).unwrap();
        let b = run_experiment_file(&dir.path().join("exp.toml"), &dir.path().join("b")).unwrap();
        let key = |r: &RunSummary| (r.seed, r.accepted, r.f1_q.map(f64::to_bits));
        assert_eq!(a.runs.iter().map(key).collect::<Vec<_>>(), b.runs.iter().map(key).collect::<Vec<_>>());
        let t = |d: &str| fs::read(dir.path().join(d).join("traces/hybrid-attract-seed2-q0.csv")).unwrap();
        assert_eq!(t("a"), t("b"));
    }

    #[test]
    fn experiment_with_schedule() {
        let dir = experiment_dir("\"hybrid-attract\", \"target-fixed\"", "policy = \"selectivity\"\n");
        let out = dir.path().join("results");
        let bundle = run_experiment_file(&dir.path().join("exp.toml"), &out).unwrap();
        assert_eq!(bundle.runs.len(), 6);
        assert!(bundle.runs.iter().all(|r| r.query.is_none()));
        assert!(out.join("traces/target-fixed-seed3-watchlist.csv").exists());
    }

    #[test]
    fn empty_algorithm_list() {
        let dir = experiment_dir("", "");
        let out = dir.path().join("results");
        let bundle = run_experiment_file(&dir.path().join("exp.toml"), &out).unwrap();
        assert_eq!(bundle, ExperimentBundle::default());
        assert!(out.join("summary.json").exists());
    }

    #[test]
    fn unknown_algorithm_is_config_error() {
        let dir = experiment_dir("\"gibbs\"", "");
        let err = run_experiment_file(&dir.path().join("exp.toml"), &dir.path().join("r")).unwrap_err();
        assert!(matches!(err, ExperimentError::Config(_)), "{err}");
        let missing = run_experiment_file(&dir.path().join("nope.toml"), &dir.path().join("r")).unwrap_err();
        assert!(matches!(missing, ExperimentError::Io { .. }));
        assert!(matches!(ExperimentSpec::parse("corpus = 3"), Err(ExperimentError::Spec(_))));
    }
}
