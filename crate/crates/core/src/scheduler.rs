//! Watchlist scheduling: allocate sampling slices across several query
//! nodes that share one merged working state.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::MentionId;
use crate::eval::{f1_q, F1Report, QueryTruth};
use crate::model::{EntityState, ModelError};
use crate::pipeline::{Prepared, Workspace};
use crate::samplers::{
    AcceptanceWindow, Algorithm, Chain, QueryTarget, RunTrace, SamplerConfig, StepRecord, StopRule, DEFAULT_WINDOW,
};

pub const DEFAULT_K_SLICE: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Random,
    Selectivity,
    ClosestFirst,
    FarthestFirst,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Random, Policy::Selectivity, Policy::ClosestFirst, Policy::FarthestFirst];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::Selectivity => "selectivity",
            Policy::ClosestFirst => "closest",
            Policy::FarthestFirst => "farthest",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Policy, String> {
        match s.replace('_', "-").as_str() {
            "random" => Ok(Policy::Random),
            "selectivity" => Ok(Policy::Selectivity),
            "closest" | "closest-first" => Ok(Policy::ClosestFirst),
            "farthest" | "farthest-first" => Ok(Policy::FarthestFirst),
            other => Err(format!("unknown schedule {other:?}")),
        }
    }
}

/// Scheduling bookkeeping for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySchedule {
    pub selectivity: usize,
    pub window: AcceptanceWindow,
    pub consumed: u64,
    pub slices: u64,
    pub converged: bool,
}

impl QuerySchedule {
    pub fn new(selectivity: usize, window: usize, patience: usize) -> QuerySchedule {
        QuerySchedule {
            selectivity,
            window: AcceptanceWindow::new(window, patience),
            consumed: 0,
            slices: 0,
            converged: false,
        }
    }

    /// Record one proposal outcome.
    pub fn observe(&mut self, accepted: bool) {
        self.window.push(accepted);
        self.consumed += 1;
        self.converged = self.window.converged();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub queries: Vec<QuerySchedule>,
    /// Slices handed out so far.
    pub issued: u64,
    /// Index picked by the last round-robin decision.
    pub last: Option<usize>,
}

impl ScheduleState {
    pub fn new(selectivities: &[usize], window: usize, patience: usize) -> ScheduleState {
        ScheduleState {
            queries: selectivities.iter().map(|&s| QuerySchedule::new(s, window, patience)).collect(),
            issued: 0,
            last: None,
        }
    }

    pub fn all_converged(&self) -> bool {
        self.queries.iter().all(|q| q.converged)
    }

    /// Note that a slice went to query `i`.
    pub fn issue(&mut self, i: usize) {
        self.issued += 1;
        self.queries[i].slices += 1;
        self.last = Some(i);
    }

    pub fn consumed(&self) -> u64 {
        self.queries.iter().map(|q| q.consumed).sum()
    }
}

/// Round robin over the unconverged queries, continuing after the last pick.
pub fn next_query_random(ss: &ScheduleState) -> Option<usize> {
    let n = ss.queries.len();
    let start = ss.last.map_or(0, |l| l + 1);
    (0..n).map(|k| (start + k) % n).find(|&i| !ss.queries[i].converged)
}

/// Largest deficit between a query's selectivity share of the issued slices
/// and the slices it received; ties by index.
pub fn next_query_selectivity(ss: &ScheduleState) -> Option<usize> {
    let live = || ss.queries.iter().enumerate().filter(|(_, q)| !q.converged);
    let total: usize = live().map(|(_, q)| q.selectivity).sum();
    let deficit = |q: &QuerySchedule| {
        let share = if total == 0 {
            1.0 / live().count() as f64
        } else {
            q.selectivity as f64 / total as f64
        };
        share * ss.issued as f64 - q.slices as f64
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, q) in live() {
        let d = deficit(q);
        if best.is_none_or(|(_, b)| d > b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Lowest positive acceptance fraction; round robin when none is positive.
pub fn next_query_closest_first(ss: &ScheduleState) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, q) in ss.queries.iter().enumerate().filter(|(_, q)| !q.converged) {
        let f = q.window.fraction();
        if f > 0.0 && best.is_none_or(|(_, b)| f < b) {
            best = Some((i, f));
        }
    }
    best.map(|(i, _)| i).or_else(|| next_query_random(ss))
}

/// Highest acceptance fraction; ties by index.
pub fn next_query_farthest_first(ss: &ScheduleState) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, q) in ss.queries.iter().enumerate().filter(|(_, q)| !q.converged) {
        let f = q.window.fraction();
        if best.is_none_or(|(_, b)| f > b) {
            best = Some((i, f));
        }
    }
    best.map(|(i, _)| i)
}

pub fn next_query(policy: Policy, ss: &ScheduleState) -> Option<usize> {
    match policy {
        Policy::Random => next_query_random(ss),
        Policy::Selectivity => next_query_selectivity(ss),
        Policy::ClosestFirst => next_query_closest_first(ss),
        Policy::FarthestFirst => next_query_farthest_first(ss),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WatchlistConfig {
    pub policy: Policy,
    pub k_slice: u64,
    /// Acceptance window length N. An adaptive stop rule on the sampler
    /// overrides it and also enables the convergence flag.
    pub window: usize,
    /// Sampler settings; `samples` is the total budget across queries.
    pub sampler: SamplerConfig,
}

impl WatchlistConfig {
    pub fn new(policy: Policy, sampler: SamplerConfig) -> WatchlistConfig {
        WatchlistConfig {
            policy,
            k_slice: DEFAULT_K_SLICE,
            window: DEFAULT_WINDOW,
            sampler,
        }
    }

    pub fn with_k_slice(mut self, k: u64) -> WatchlistConfig {
        assert!(k >= 1, "slice must hold at least one proposal");
        self.k_slice = k;
        self
    }

    pub fn with_window(mut self, window: usize) -> WatchlistConfig {
        self.window = window;
        self
    }

    /// Window length and convergence patience (0 disables convergence).
    pub fn window_and_patience(&self) -> (usize, usize) {
        match self.sampler.stop {
            StopRule::Adaptive { window, patience } => (window, patience),
            StopRule::Budget => (self.window, 0),
        }
    }
}

/// One row of the aggregate trace, written after each slice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatePoint {
    pub cumulative_proposals: u64,
    /// Unweighted mean of the per-query f1 values.
    pub mean_f1_q: f64,
    /// f1 of the whole watchlist: retrieved, relevant and matched counts
    /// summed over the queries before forming precision and recall.
    pub pooled_f1_q: f64,
    /// Per query, in watchlist order; `None` for unresolved or unlabelled
    /// queries.
    pub f1_q: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct WatchlistQueryResult {
    /// False when the query's canopy was empty.
    pub resolved: bool,
    pub members: Vec<MentionId>,
    pub f1_q: Option<f64>,
    pub consumed: u64,
    pub slices: u64,
    pub converged: bool,
    pub trace: RunTrace,
}

#[derive(Debug, Clone)]
pub struct WatchlistRun {
    pub state: EntityState,
    pub queries: Vec<WatchlistQueryResult>,
    pub aggregate: Vec<AggregatePoint>,
    pub schedule: ScheduleState,
}

impl WatchlistRun {
    /// csv with cumulative_proposals, mean_f1_q and one f1 column per query.
    pub fn write_aggregate_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "cumulative_proposals".to_string(),
            "mean_f1_q".to_string(),
            "pooled_f1_q".to_string(),
        ];
        header.extend((0..self.queries.len()).map(|i| format!("f1_q_{i}")));
        w.write_record(&header)?;
        for p in &self.aggregate {
            let mut row = vec![
                p.cumulative_proposals.to_string(),
                p.mean_f1_q.to_string(),
                p.pooled_f1_q.to_string(),
            ];
            row.extend(p.f1_q.iter().map(|f| f.map(|f| f.to_string()).unwrap_or_default()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Initial state over the merged canopies. The repel family starts each
/// query's canopy as one cluster; a mention shared by several canopies goes
/// to the first query that claims it.
pub fn merged_initial_state(prepared: &Prepared, algorithm: Algorithm) -> Result<EntityState, ModelError> {
    let live: Vec<_> = prepared.queries.iter().filter(|q| !q.canopy.is_empty()).collect();
    if algorithm.table_direction() != Some(crate::influence::Direction::Repel) {
        let mut ids: Vec<MentionId> = live.iter().flat_map(|q| q.canopy.working_set()).collect();
        ids.sort_unstable();
        ids.dedup();
        return EntityState::init_singletons(&ids);
    }
    let mut claimed = std::collections::HashSet::new();
    let clusters: Vec<Vec<MentionId>> = live
        .iter()
        .map(|q| q.canopy.working_set().into_iter().filter(|m| claimed.insert(*m)).collect::<Vec<_>>())
        .filter(|c| !c.is_empty())
        .collect();
    EntityState::from_clusters(&clusters)
}

fn current_f1(state: &EntityState, query: MentionId, truth: Option<&QueryTruth>) -> Option<f64> {
    let t = truth?;
    let members = state.entity_of(query).map(|e| state.members(e)).unwrap_or(&[]);
    Some(f1_q(members, t).f1)
}

/// Summarise per-query reports; `None` entries are left out of both means.
pub fn aggregate_point(cumulative_proposals: u64, reports: &[Option<F1Report>]) -> AggregatePoint {
    let known: Vec<&F1Report> = reports.iter().flatten().collect();
    let mean_f1_q = if known.is_empty() {
        0.0
    } else {
        known.iter().map(|r| r.f1).sum::<f64>() / known.len() as f64
    };
    let sum = |f: fn(&F1Report) -> usize| known.iter().map(|r| f(r)).sum::<usize>();
    let pooled = F1Report::from_counts(sum(|r| r.retrieved), sum(|r| r.relevant), sum(|r| r.intersection));
    AggregatePoint {
        cumulative_proposals,
        mean_f1_q,
        pooled_f1_q: pooled.f1,
        f1_q: reports.iter().map(|r| r.map(|r| r.f1)).collect(),
    }
}

/// Resolve every prepared query against one shared state, handing out
/// slices of `k_slice` proposals by `cfg.policy` until the budget is spent
/// or every query has converged.
pub fn run_watchlist(ws: &Workspace, prepared: &Prepared, cfg: &WatchlistConfig) -> Result<WatchlistRun, ModelError> {
    let resolved: Vec<bool> = prepared.queries.iter().map(|q| !q.canopy.is_empty()).collect();
    for (q, ok) in prepared.queries.iter().zip(&resolved) {
        if !ok {
            log::warn!("query {:?} has an empty canopy; left unresolved", q.node.mention.surface);
        }
    }
    let live: Vec<usize> = (0..resolved.len()).filter(|&i| resolved[i]).collect();
    let truths: Vec<Option<QueryTruth>> = prepared.queries.iter().map(|q| ws.truth_for(&q.node)).collect();
    let targets: Vec<QueryTarget<'_>> = prepared.queries.iter().map(|q| q.target(&cfg.sampler)).collect();
    let selectivities: Vec<usize> = live.iter().map(|&i| prepared.queries[i].canopy.members.len()).collect();
    let (window, patience) = cfg.window_and_patience();
    let mut schedule = ScheduleState::new(&selectivities, window, patience);

    let state = merged_initial_state(prepared, cfg.sampler.algorithm)?;
    let mut chain = Chain::new(state, &prepared.scorer, &cfg.sampler);
    let mut traces: Vec<RunTrace> = vec![RunTrace::default(); resolved.len()];
    let point = |consumed: u64, chain: &Chain<'_>| {
        let reports: Vec<Option<F1Report>> = (0..resolved.len())
            .map(|i| {
                let truth = truths[i].as_ref().filter(|_| resolved[i])?;
                let state = chain.state();
                let members = state.entity_of(prepared.queries[i].node.id()).map(|e| state.members(e)).unwrap_or(&[]);
                Some(f1_q(members, truth))
            })
            .collect();
        aggregate_point(consumed, &reports)
    };
    let mut aggregate = vec![point(0, &chain)];
    let budget = cfg.sampler.samples;
    let mut consumed = 0u64;
    while consumed < budget && !live.is_empty() {
        let Some(slot) = next_query(cfg.policy, &schedule) else {
            break;
        };
        schedule.issue(slot);
        let qi = live[slot];
        let target = &targets[qi];
        let truth = truths[qi].as_ref();
        let mut f1 = current_f1(chain.state(), target.query, truth);
        let slice = cfg.k_slice.min(budget - consumed);
        for _ in 0..slice {
            let out = chain.step(target);
            consumed += 1;
            if out.accepted && truth.is_some() {
                f1 = current_f1(chain.state(), target.query, truth);
            }
            let sq = &mut schedule.queries[slot];
            sq.observe(out.accepted);
            traces[qi].records.push(StepRecord {
                step: sq.consumed,
                accepted: out.accepted,
                delta: out.delta,
                query_branch: out.query_branch,
                f1_q: f1,
            });
            if sq.converged {
                break;
            }
        }
        aggregate.push(point(consumed, &chain));
        if schedule.all_converged() {
            break;
        }
    }

    let state = chain.into_state();
    let mut slot_of = vec![None; resolved.len()];
    for (slot, &qi) in live.iter().enumerate() {
        slot_of[qi] = Some(slot);
    }
    let queries = prepared
        .queries
        .iter()
        .zip(traces)
        .enumerate()
        .map(|(i, (pq, trace))| {
            let members = if resolved[i] {
                state.entity_of(pq.node.id()).map(|e| state.members(e).to_vec()).unwrap_or_default()
            } else {
                Vec::new()
            };
            let f1 = if resolved[i] {
                truths[i].as_ref().map(|t| f1_q(&members, t).f1)
            } else {
                None
            };
            let sched = slot_of[i].map(|s| &schedule.queries[s]);
            WatchlistQueryResult {
                resolved: resolved[i],
                members,
                f1_q: f1,
                consumed: sched.map_or(0, |s| s.consumed),
                slices: sched.map_or(0, |s| s.slices),
                converged: sched.is_some_and(|s| s.converged),
                trace,
            }
        })
        .collect();
    Ok(WatchlistRun {
        state,
        queries,
        aggregate,
        schedule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureModel;
    use crate::pipeline::{resolve, Settings};
    use crate::synth;

    fn with_fractions(fracs: &[f64]) -> ScheduleState {
        let mut ss = ScheduleState::new(&vec![1; fracs.len()], 10, 5);
        for (q, &f) in ss.queries.iter_mut().zip(fracs) {
            let hits = (f * 10.0).round() as usize;
            (0..10).for_each(|k| q.window.push(k < hits));
        }
        ss
    }

    fn sequence(policy: Policy, ss: &mut ScheduleState, n: usize) -> Vec<usize> {
        (0..n)
            .map(|_| {
                let i = next_query(policy, ss).unwrap();
                ss.issue(i);
                i
            })
            .collect()
    }

    #[test]
    fn round_robin() {
        let mut ss = ScheduleState::new(&[5, 5, 5], 10, 5);
        assert_eq!(sequence(Policy::Random, &mut ss, 7), [0, 1, 2, 0, 1, 2, 0]);
        let mut ss = ScheduleState::new(&[5], 10, 5);
        assert_eq!(sequence(Policy::Random, &mut ss, 3), [0, 0, 0]);
        let mut ss = ScheduleState::new(&[5, 5, 5], 10, 5);
        ss.queries[1].converged = true;
        assert_eq!(sequence(Policy::Random, &mut ss, 4), [0, 2, 0, 2]);
        ss.queries.iter_mut().for_each(|q| q.converged = true);
        assert_eq!(next_query(Policy::Random, &ss), None);
    }

    #[test]
    fn selectivity_allocation() {
        let mut ss = ScheduleState::new(&[10, 30], 10, 5);
        let seq = sequence(Policy::Selectivity, &mut ss, 40);
        let zero = seq.iter().filter(|&&i| i == 0).count() as i64;
        assert!((zero - 10).abs() <= 1 && (40 - zero - 30).abs() <= 1, "{zero}");

        let mut ss = ScheduleState::new(&[7, 7, 7], 10, 5);
        let seq = sequence(Policy::Selectivity, &mut ss, 9);
        for i in 0..3 {
            assert_eq!(seq.iter().filter(|&&x| x == i).count(), 3);
        }

        let mut ss = ScheduleState::new(&synth::WATCHLIST_SELECTIVITIES, 10, 5);
        sequence(Policy::Selectivity, &mut ss, 200);
        let most = (0..9).max_by_key(|&i| ss.queries[i].slices).unwrap();
        assert_eq!(most, 6);
        let total: usize = synth::WATCHLIST_SELECTIVITIES.iter().sum();
        for (q, &s) in ss.queries.iter().zip(&synth::WATCHLIST_SELECTIVITIES) {
            let share = 200.0 * s as f64 / total as f64;
            assert!((q.slices as f64 - share).abs() <= 1.0, "{} vs {share}", q.slices);
        }
    }

    #[test]
    fn closest_and_farthest() {
        let ss = with_fractions(&[0.4, 0.1, 0.0]);
        assert_eq!(next_query(Policy::ClosestFirst, &ss), Some(1));
        assert_eq!(next_query(Policy::FarthestFirst, &ss), Some(0));
        let mut ss = with_fractions(&[0.0, 0.0, 0.0]);
        assert_eq!(sequence(Policy::ClosestFirst, &mut ss, 4), [0, 1, 2, 0]);
        let ss = with_fractions(&[0.3, 0.3, 0.3]);
        assert_eq!(next_query(Policy::FarthestFirst, &ss), Some(0));
        assert_eq!(next_query(Policy::ClosestFirst, &ss), Some(0));
        let ss = with_fractions(&[0.5]);
        for p in Policy::ALL {
            assert_eq!(next_query(p, &ss), Some(0));
        }
    }

    #[test]
    fn pooled_and_mean() {
        let big = F1Report::from_counts(100, 100, 50);
        let small = F1Report::from_counts(2, 2, 2);
        let p = aggregate_point(7, &[Some(big), None, Some(small)]);
        assert!((p.mean_f1_q - 0.75).abs() < 1e-12);
        assert!((p.pooled_f1_q - 52.0 / 102.0).abs() < 1e-12);
        assert_eq!(p.f1_q, [Some(0.5), None, Some(1.0)]);
        assert_eq!(aggregate_point(0, &[None]).pooled_f1_q, 0.0);
    }

    #[test]
    fn policies_are_pure() {
        let ss = with_fractions(&[0.2, 0.7, 0.1, 0.0]);
        for p in Policy::ALL {
            assert_eq!(next_query(p, &ss), next_query(p, &ss.clone()));
        }
    }

    fn watchlist(n: usize, seed: u64) -> (Workspace, Prepared) {
        let p = synth::watchlist_fixture(seed);
        let queries = p.queries.into_iter().take(n).collect();
        let ws = Workspace::new(p.corpus, FeatureModel::default_weights(), Settings::default()).unwrap();
        let prep = ws.prepare(queries);
        (ws, prep)
    }

    #[test]
    fn slice_accounting_is_exact() {
        let (ws, prep) = watchlist(9, 1);
        for policy in Policy::ALL {
            let sampler = SamplerConfig::new(Algorithm::HybridAttract, 12_345, 3);
            let cfg = WatchlistConfig::new(policy, sampler).with_k_slice(100);
            let run = run_watchlist(&ws, &prep, &cfg).unwrap();
            let per_query: u64 = run.queries.iter().map(|q| q.consumed).sum();
            assert_eq!(run.schedule.consumed(), per_query);
            assert_eq!(run.aggregate.last().unwrap().cumulative_proposals, per_query);
            assert!(per_query == 12_345 || run.schedule.all_converged(), "{policy}");
            for q in &run.queries {
                assert_eq!(q.trace.len() as u64, q.consumed);
            }
            run.state.check_invariants().unwrap();
        }
    }

    #[test]
    fn window_matches_trace_recount() {
        let (ws, prep) = watchlist(3, 2);
        let sampler = SamplerConfig::new(Algorithm::HybridAttract, 5000, 4);
        let run = run_watchlist(&ws, &prep, &WatchlistConfig::new(Policy::ClosestFirst, sampler).with_k_slice(70)).unwrap();
        for (q, s) in run.queries.iter().zip(&run.schedule.queries) {
            let tail: Vec<bool> = q.trace.records.iter().rev().take(DEFAULT_WINDOW).rev().map(|r| r.accepted).collect();
            assert_eq!(s.window.contents().collect::<Vec<_>>(), tail);
            assert_eq!(s.window.accepted(), tail.iter().filter(|&&a| a).count());
        }
    }

    #[test]
    fn single_query_watchlist_matches_single_run() {
        let (ws, prep) = watchlist(1, 5);
        for alg in [Algorithm::HybridAttract, Algorithm::HybridRepel, Algorithm::TargetFixed] {
            let sampler = SamplerConfig::new(alg, 3000, 8);
            let run = run_watchlist(&ws, &prep, &WatchlistConfig::new(Policy::Random, sampler.clone())).unwrap();
            let single = resolve(&ws, &prep, 0, &sampler).unwrap();
            assert_eq!(run.queries[0].trace, single.trace, "{alg}");
            assert_eq!(run.queries[0].members, single.members);
            assert_eq!(run.state.clusters(), single.state.clusters());
        }
    }

    #[test]
    fn converged_queries_stop_the_run() {
        let (ws, prep) = watchlist(3, 6);
        let sampler = SamplerConfig::new(Algorithm::HybridAttract, 10_000_000, 1).with_stop(StopRule::Adaptive {
            window: DEFAULT_WINDOW,
            patience: crate::samplers::DEFAULT_PATIENCE,
        });
        let run = run_watchlist(&ws, &prep, &WatchlistConfig::new(Policy::Random, sampler).with_k_slice(50)).unwrap();
        assert!(run.schedule.all_converged());
        assert!(run.schedule.consumed() < 10_000_000);
    }

    #[test]
    fn empty_canopy_is_unresolved() {
        let p = synth::watchlist_fixture(1);
        let mut queries: Vec<_> = p.queries.into_iter().take(2).collect();
        queries[1].mention.surface = "Qqqq Wwww".into();
        let ws = Workspace::new(p.corpus, FeatureModel::default_weights(), Settings::default()).unwrap();
        let prep = ws.prepare(queries);
        let sampler = SamplerConfig::new(Algorithm::HybridAttract, 2000, 1);
        let run = run_watchlist(&ws, &prep, &WatchlistConfig::new(Policy::Selectivity, sampler)).unwrap();
        assert!(run.queries[0].resolved && !run.queries[1].resolved);
        assert_eq!(run.queries[1].consumed, 0);
        assert_eq!(run.queries[0].consumed, 2000);
        let mut csv = Vec::new();
        run.write_aggregate_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("cumulative_proposals,mean_f1_q,pooled_f1_q,f1_q_0,f1_q_1\n"));
    }
}
