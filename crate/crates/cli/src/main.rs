//! qder: query-driven entity resolution from the command line.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use qder::corpus::{load_corpus, load_watchlist, ContextLevel, CorpusFormat, Mention, MentionId, QueryRecord};
use qder::engine::{run_parallel, ContentionPolicy, ParallelConfig};
use qder::eval::{f1_q, prepare_experiment, run_experiment, ExperimentSpec};
use qder::features::{FeatureModel, Scorer};
use qder::model::{AcceptanceMode, EntityState};
use qder::pipeline::{resolve, PipelineError, Prepared, Settings, Workspace};
use qder::samplers::{run_sampler, Algorithm, QueryTarget, SamplerConfig, StopRule};
use qder::scheduler::{merged_initial_state, run_watchlist, Policy, WatchlistConfig};

const EXIT_EMPTY: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_SPEC: u8 = 65;

#[derive(Parser, Debug)]
#[command(name = "qder", version, about = "Query-driven entity resolution over a mention corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the q-gram index and report its size.
    Index(CorpusArgs),
    /// Print corpus statistics.
    Stats(CorpusArgs),
    /// Resolve the entity of one query mention.
    Query(QueryArgs),
    /// Resolve a list of queries under a shared budget.
    Watchlist(WatchlistArgs),
    /// Run an experiment file.
    Eval(EvalArgs),
    /// Run an experiment file, then the parallel engine at each worker count.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Mention corpus (jsonl or tsv).
    #[arg(long)]
    corpus: PathBuf,
    /// Corpus format: jsonl or tsv [default: from the file extension].
    #[arg(long)]
    format: Option<String>,
    /// Gram length for blocking.
    #[arg(long, default_value_t = Settings::default().q)]
    q: usize,
    /// Minimum q-gram Jaccard similarity for a canopy member.
    #[arg(long, default_value_t = Settings::default().min_jaccard)]
    min_jaccard: f64,
}

#[derive(Args, Debug)]
struct SamplerArgs {
    /// Sampler: baseline, target-fixed, query-proportional, hybrid-attract, hybrid-repel.
    #[arg(long, default_value = "hybrid-attract")]
    algorithm: Algorithm,
    /// Acceptance rule: greedy or metropolis.
    #[arg(long, default_value = "greedy")]
    acceptance: AcceptanceMode,
    /// Probability of the query-focused branch.
    #[arg(long, default_value_t = 0.9)]
    tau_alpha: f64,
    /// Proposal budget.
    #[arg(long, default_value_t = 10_000)]
    samples: u64,
    /// Stop after this many consecutive windows without an accepted move; 0 runs the whole budget.
    #[arg(long, default_value_t = 0)]
    patience: usize,
    /// Acceptance window length in proposals.
    #[arg(long, default_value_t = 100)]
    window: usize,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature weight file (toml) [default: built-in weights].
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Context used for the query: none, paragraph or document.
    #[arg(long, default_value = "paragraph")]
    context_level: ContextLevel,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Surface string of the query mention.
    #[arg(long)]
    surface: String,
    /// Context text of the query mention.
    #[arg(long, default_value = "")]
    context: String,
    /// Comma-separated keywords attached to the query.
    #[arg(long, value_delimiter = ',')]
    keywords: Vec<String>,
    /// Parallel workers; more than one runs the shared-state engine.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// What a worker does when an entity is busy: resample or baseline_fallback.
    #[arg(long, default_value = "resample")]
    contention_policy: ContentionPolicy,
    /// Resolve over the whole corpus instead of the canopy (baseline only).
    #[arg(long)]
    exhaustive: bool,
    /// Write the per-step trace csv here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WatchlistArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Query list (jsonl: surface, context, keywords, truth).
    #[arg(long)]
    watchlist: PathBuf,
    /// Scheduling policy: random, selectivity, closest or farthest.
    #[arg(long, default_value = "selectivity")]
    schedule: Policy,
    /// Proposals per scheduling slice.
    #[arg(long, default_value_t = 500)]
    k_slice: u64,
    /// Directory for the aggregate trace csv.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Experiment file (toml).
    spec: PathBuf,
    /// Results directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Experiment file (toml).
    spec: PathBuf,
    /// Results directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Comma-separated worker counts.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    workers: Vec<usize>,
    /// What a worker does when an entity is busy: resample or baseline_fallback.
    #[arg(long, default_value = "resample")]
    contention_policy: ContentionPolicy,
    /// Random seed for the engine runs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// An error carrying its exit status.
#[derive(Debug)]
struct Exit(u8, anyhow::Error);

fn usage(msg: impl Into<String>) -> Exit {
    Exit(EXIT_USAGE, anyhow::anyhow!(msg.into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Index(a) => cmd_index(&a),
        Command::Stats(a) => cmd_stats(&a),
        Command::Query(a) => cmd_query(&a),
        Command::Watchlist(a) => cmd_watchlist(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Bench(a) => cmd_bench(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn failed(e: anyhow::Error) -> Exit {
    Exit(1, e)
}

fn load(a: &CorpusArgs) -> Result<Vec<Mention>, Exit> {
    if a.q == 0 {
        return Err(usage("--q must be positive"));
    }
    if !(0.0..=1.0).contains(&a.min_jaccard) {
        return Err(usage("--min-jaccard must lie in [0, 1]"));
    }
    let format = match &a.format {
        Some(f) => f.parse::<CorpusFormat>().map_err(|e| usage(e.to_string()))?,
        None => CorpusFormat::from_path(&a.corpus),
    };
    load_corpus(&a.corpus, format)
        .with_context(|| format!("loading {}", a.corpus.display()))
        .map_err(failed)
}

fn settings(a: &CorpusArgs) -> Settings {
    Settings {
        q: a.q,
        min_jaccard: a.min_jaccard,
        ..Settings::default()
    }
}

fn check_sampler(s: &SamplerArgs) -> Result<(), Exit> {
    if !(0.0..=1.0).contains(&s.tau_alpha) {
        return Err(usage("--tau-alpha must lie in [0, 1]"));
    }
    if s.window == 0 {
        return Err(usage("--window must be positive"));
    }
    Ok(())
}

fn sampler_config(s: &SamplerArgs) -> SamplerConfig {
    let stop = if s.patience == 0 {
        StopRule::Budget
    } else {
        StopRule::Adaptive {
            window: s.window,
            patience: s.patience,
        }
    };
    SamplerConfig::new(s.algorithm, s.samples, s.seed)
        .with_tau(s.tau_alpha)
        .with_acceptance(s.acceptance)
        .with_stop(stop)
}

fn model(s: &SamplerArgs) -> Result<FeatureModel, Exit> {
    match &s.weights {
        Some(p) => FeatureModel::load(p)
            .with_context(|| format!("loading weights {}", p.display()))
            .map_err(failed),
        None => Ok(FeatureModel::default_weights()),
    }
}

/// One row per corpus member, in corpus order.
fn print_rows(out: &mut impl Write, corpus: &[Mention], members: &[MentionId]) -> io::Result<()> {
    let mut ids = members.to_vec();
    ids.sort_unstable();
    for m in ids.iter().filter_map(|id| corpus.get(id.index())) {
        writeln!(out, "{}\t{}\t{}", m.doc_id, m.start_pos, m.surface)?;
    }
    Ok(())
}

fn io_err(e: impl Into<anyhow::Error>) -> Exit {
    failed(e.into())
}

fn cmd_index(a: &CorpusArgs) -> Result<(), Exit> {
    let corpus = load(a)?;
    let t0 = Instant::now();
    let index = qder::blocking::QGramIndex::build(&corpus, a.q);
    let summary = json!({
        "mentions": corpus.len(),
        "q": index.q(),
        "grams": index.len(),
        "build_secs": t0.elapsed().as_secs_f64(),
    });
    println!("{summary}");
    Ok(())
}

fn cmd_stats(a: &CorpusArgs) -> Result<(), Exit> {
    let corpus = load(a)?;
    let ws = Workspace::new(corpus, FeatureModel::default_weights(), settings(a)).map_err(|e| failed(e.into()))?;
    let labels = qder::eval::label_counts(&ws.corpus);
    let labelled: usize = labels.values().sum();
    let summary = json!({
        "mentions": ws.corpus.len(),
        "documents": ws.stats.doc_count,
        "vocabulary": ws.stats.doc_freq.len(),
        "distinct_surfaces": ws.corpus.iter().map(|m| m.surface.as_str()).collect::<std::collections::BTreeSet<_>>().len(),
        "labelled_mentions": labelled,
        "entities": labels.len(),
        "largest_entity": labels.values().max().copied().unwrap_or(0),
    });
    println!("{summary}");
    Ok(())
}

fn query_node(a: &QueryArgs) -> qder::corpus::QueryNode {
    QueryRecord {
        surface: a.surface.clone(),
        context: a.context.clone(),
        keywords: a.keywords.iter().map(|k| k.trim().to_string()).filter(|k| !k.is_empty()).collect(),
        truth: None,
        doc_id: None,
        start_pos: None,
    }
    .to_query(0, a.sampler.context_level)
}

fn cmd_query(a: &QueryArgs) -> Result<(), Exit> {
    check_sampler(&a.sampler)?;
    if a.surface.trim().is_empty() {
        return Err(usage("--surface must not be empty"));
    }
    if a.workers == 0 {
        return Err(usage("--workers must be positive"));
    }
    if a.exhaustive && a.sampler.algorithm != Algorithm::Baseline {
        return Err(usage("--exhaustive runs the baseline sampler; pass --algorithm baseline"));
    }
    if a.exhaustive && a.workers > 1 {
        return Err(usage("--exhaustive is single-threaded"));
    }
    let corpus = load(&a.corpus)?;
    let ws = Workspace::new(corpus, model(&a.sampler)?, settings(&a.corpus)).map_err(|e| failed(e.into()))?;
    let cfg = sampler_config(&a.sampler);
    if a.exhaustive {
        return exhaustive(&ws, query_node(a), &cfg, a.out.as_deref());
    }
    let prepared = ws.prepare(vec![query_node(a)]);
    if prepared.queries[0].canopy.is_empty() {
        return Err(Exit(EXIT_EMPTY, anyhow::anyhow!("no mention matches {:?}; empty canopy", a.surface)));
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if a.workers > 1 {
        return parallel_query(&ws, &prepared, a, &mut out);
    }
    let run = match resolve(&ws, &prepared, 0, &cfg) {
        Ok(run) => run,
        Err(PipelineError::EmptyCanopy(s)) => {
            return Err(Exit(EXIT_EMPTY, anyhow::anyhow!("no mention matches {s:?}; empty canopy")))
        }
        Err(e) => return Err(failed(e.into())),
    };
    if let Some(path) = &a.out {
        write_trace(path, |f| run.trace.write_csv(f).map_err(Into::into))?;
    }
    print_rows(&mut out, &ws.corpus, &run.members).map_err(io_err)?;
    let summary = json!({
        "surface": a.surface,
        "algorithm": cfg.algorithm,
        "canopy_size": run.canopy_size,
        "entity_size": run.members.iter().filter(|m| m.index() < ws.corpus.len()).count(),
        "proposals": run.trace.len(),
        "accepted": run.trace.accepted(),
        "f1_q": run.f1.map(|r| r.f1),
        "timings": run.timings,
    });
    writeln!(out, "{summary}").map_err(io_err)?;
    Ok(())
}

fn write_trace(path: &Path, write: impl FnOnce(fs::File) -> Result<()>) -> Result<(), Exit> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let f = fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(failed)?;
    write(f).with_context(|| format!("writing {}", path.display())).map_err(failed)
}

fn parallel_query(ws: &Workspace, prepared: &Prepared, a: &QueryArgs, out: &mut impl Write) -> Result<(), Exit> {
    let s = &a.sampler;
    let pq = &prepared.queries[0];
    let sampler = sampler_config(s);
    let state = s.algorithm.initial_state(&pq.canopy.working_set()).map_err(|e| failed(e.into()))?;
    let per_worker = s.samples.div_ceil(a.workers as u64);
    let cfg = ParallelConfig::new(a.workers, per_worker, s.seed)
        .with_algorithm(s.algorithm)
        .with_tau(s.tau_alpha)
        .with_acceptance(s.acceptance)
        .with_contention(a.contention_policy);
    let run = run_parallel(&state, &[pq.target(&sampler)], &prepared.scorer, &cfg).map_err(|e| failed(e.into()))?;
    let members = run
        .state
        .entity_of(pq.node.id())
        .map(|e| run.state.members(e).to_vec())
        .unwrap_or_default();
    print_rows(out, &ws.corpus, &members).map_err(io_err)?;
    let truth = ws.truth_for(&pq.node);
    let summary = json!({
        "surface": a.surface,
        "algorithm": s.algorithm,
        "workers": a.workers,
        "canopy_size": pq.canopy.members.len(),
        "entity_size": members.iter().filter(|m| m.index() < ws.corpus.len()).count(),
        "proposals": run.stats.proposals,
        "accepted": run.stats.accepted,
        "f1_q": truth.map(|t| f1_q(&members, &t).f1),
        "contention": run.stats,
        "elapsed_secs": run.elapsed.as_secs_f64(),
    });
    writeln!(out, "{summary}").map_err(io_err)?;
    Ok(())
}

/// Baseline sampling over every corpus mention plus the query.
fn exhaustive(ws: &Workspace, mut q: qder::corpus::QueryNode, cfg: &SamplerConfig, trace: Option<&Path>) -> Result<(), Exit> {
    qder::corpus::attach_queries(&ws.corpus, std::slice::from_mut(&mut q));
    q.widen_to_document(&ws.corpus);
    let mut ids: Vec<MentionId> = ws.corpus.iter().map(|m| m.id).collect();
    if !q.in_corpus {
        ids.push(q.id());
    }
    let scorer = Scorer::new(ws.model.clone(), &ws.stats, &ws.corpus, std::slice::from_ref(&q));
    let state = EntityState::init_singletons(&ids).map_err(|e| failed(e.into()))?;
    let target = QueryTarget {
        query: q.id(),
        table: None,
    };
    let truth = ws.truth_for(&q);
    let t0 = Instant::now();
    let (state, run) = run_sampler(state, &target, cfg, &scorer, truth.as_ref());
    let inference = t0.elapsed().as_secs_f64();
    if let Some(path) = trace {
        write_trace(path, |f| run.write_csv(f).map_err(Into::into))?;
    }
    let members = state.entity_of(q.id()).map(|e| state.members(e).to_vec()).unwrap_or_default();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    print_rows(&mut out, &ws.corpus, &members).map_err(io_err)?;
    let summary = json!({
        "surface": q.mention.surface,
        "algorithm": cfg.algorithm,
        "exhaustive": true,
        "canopy_size": ws.corpus.len(),
        "entity_size": members.iter().filter(|m| m.index() < ws.corpus.len()).count(),
        "entities": state.entity_count(),
        "proposals": run.len(),
        "accepted": run.accepted(),
        "f1_q": truth.map(|t| f1_q(&members, &t).f1),
        "timings": {"inference_secs": inference, "total_secs": inference},
    });
    writeln!(out, "{summary}").map_err(io_err)?;
    Ok(())
}

fn cmd_watchlist(a: &WatchlistArgs) -> Result<(), Exit> {
    check_sampler(&a.sampler)?;
    if a.k_slice == 0 {
        return Err(usage("--k-slice must be positive"));
    }
    let corpus = load(&a.corpus)?;
    let queries = load_watchlist(&a.watchlist, a.sampler.context_level)
        .with_context(|| format!("loading {}", a.watchlist.display()))
        .map_err(failed)?;
    let ws = Workspace::new(corpus, model(&a.sampler)?, settings(&a.corpus)).map_err(|e| failed(e.into()))?;
    let prepared = ws.prepare(queries);
    if prepared.queries.iter().all(|q| q.canopy.is_empty()) {
        return Err(Exit(EXIT_EMPTY, anyhow::anyhow!("every watchlist query has an empty canopy")));
    }
    let cfg = WatchlistConfig::new(a.schedule, sampler_config(&a.sampler))
        .with_k_slice(a.k_slice)
        .with_window(a.sampler.window);
    let run = run_watchlist(&ws, &prepared, &cfg).map_err(|e| failed(e.into()))?;
    let path = a.out.join(format!("watchlist-{}-seed{}.csv", a.schedule.name(), a.sampler.seed));
    write_trace(&path, |f| run.write_aggregate_csv(f).map_err(Into::into))?;

    let stdout = io::stdout();
    let mut out = stdout.lock();
    for (i, (q, pq)) in run.queries.iter().zip(&prepared.queries).enumerate() {
        writeln!(out, "# query {i}: {}", pq.node.mention.surface).map_err(io_err)?;
        print_rows(&mut out, &ws.corpus, &q.members).map_err(io_err)?;
        let summary = json!({
            "query": i,
            "surface": pq.node.mention.surface,
            "resolved": q.resolved,
            "canopy_size": pq.canopy.members.len(),
            "entity_size": q.members.iter().filter(|m| m.index() < ws.corpus.len()).count(),
            "proposals": q.consumed,
            "slices": q.slices,
            "converged": q.converged,
            "f1_q": q.f1_q,
        });
        writeln!(out, "{summary}").map_err(io_err)?;
    }
    let last = run.aggregate.last();
    let summary = json!({
        "schedule": a.schedule.name(),
        "queries": run.queries.len(),
        "proposals": last.map(|p| p.cumulative_proposals),
        "mean_f1_q": last.map(|p| p.mean_f1_q),
        "pooled_f1_q": last.map(|p| p.pooled_f1_q),
        "aggregate": path.display().to_string(),
    });
    writeln!(out, "{summary}").map_err(io_err)?;
    Ok(())
}

fn load_spec(path: &Path) -> Result<(ExperimentSpec, PathBuf), Exit> {
    let spec = ExperimentSpec::load(path).map_err(|e| Exit(EXIT_SPEC, e.into()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((spec, base))
}

fn cmd_eval(a: &EvalArgs) -> Result<(), Exit> {
    let (spec, base) = load_spec(&a.spec)?;
    let bundle = run_experiment(&spec, &base, &a.out).map_err(|e| Exit(EXIT_SPEC, e.into()))?;
    let summary = json!({
        "runs": bundle.runs.len(),
        "summary": a.out.join("summary.json").display().to_string(),
        "thresholds": bundle.thresholds,
    });
    println!("{summary}");
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<(), Exit> {
    if a.workers.is_empty() || a.workers.contains(&0) {
        return Err(usage("--workers takes positive counts"));
    }
    let (spec, base) = load_spec(&a.spec)?;
    run_experiment(&spec, &base, &a.out).map_err(|e| Exit(EXIT_SPEC, e.into()))?;
    let spec_err = |e: qder::eval::ExperimentError| Exit(EXIT_SPEC, e.into());
    let level = match &spec.context_level {
        Some(l) => l.parse::<ContextLevel>().map_err(|e| Exit(EXIT_SPEC, anyhow::anyhow!(e)))?,
        None => ContextLevel::default(),
    };
    let acceptance = match &spec.acceptance {
        Some(m) => m.parse::<AcceptanceMode>().map_err(|e| Exit(EXIT_SPEC, anyhow::anyhow!(e)))?,
        None => AcceptanceMode::default(),
    };
    let algorithm = spec.algorithms().map_err(spec_err)?.first().copied().unwrap_or(Algorithm::HybridAttract);
    let (_ws, prepared) = prepare_experiment(&spec, &base, level).map_err(spec_err)?;
    let sampler = SamplerConfig::new(algorithm, spec.budget, a.seed);
    let targets: Vec<QueryTarget<'_>> = prepared
        .queries
        .iter()
        .filter(|q| !q.canopy.is_empty())
        .map(|q| q.target(&sampler))
        .collect();
    if targets.is_empty() {
        return Err(Exit(EXIT_EMPTY, anyhow::anyhow!("every query in the spec has an empty canopy")));
    }
    let state = merged_initial_state(&prepared, algorithm).map_err(|e| failed(e.into()))?;
    let mut records = Vec::new();
    for &workers in &a.workers {
        let cfg = ParallelConfig::new(workers, spec.budget, a.seed)
            .with_algorithm(algorithm)
            .with_tau(spec.tau_alpha)
            .with_acceptance(acceptance)
            .with_contention(a.contention_policy);
        let run = run_parallel(&state, &targets, &prepared.scorer, &cfg).map_err(|e| failed(e.into()))?;
        let secs = run.elapsed.as_secs_f64();
        records.push(json!({
            "workers": workers,
            "algorithm": algorithm,
            "contention_policy": a.contention_policy,
            "stats": run.stats,
            "elapsed_secs": secs,
            "proposals_per_sec": if secs > 0.0 { run.stats.proposals as f64 / secs } else { 0.0 },
        }));
    }
    let path = a.out.join("bench.json");
    write_trace(&path, |f| serde_json::to_writer_pretty(f, &records).map_err(Into::into))?;
    for r in &records {
        println!("{r}");
    }
    Ok(())
}
