//! Shared-state parallel sampling.
//!
//! Workers plan proposals against a lock-free view of the partition, then
//! take non-blocking exclusive access to the source and target entities (in
//! ascending id order) before scoring and applying the move. A worker that
//! loses a race backs out and either resamples or tries a baseline move.

use std::cell::Cell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::time::{Duration, Instant};

use parking_lot::{Mutex, MutexGuard, RwLock};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::MentionId;
use crate::features::{PairCounts, Scorer};
use crate::model::{accept, AcceptanceMode, EntityId, EntityState};
use crate::samplers::{
    acceptance_input, plan_baseline, plan_with_retries, Algorithm, Plan, Proposal, QueryTarget, RunTrace, StateView,
    StepRecord, Target,
};

const ABSENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContentionPolicy {
    /// Abandon the proposal and plan a new one.
    Resample,
    /// Try one uniform baseline proposal before resampling.
    BaselineFallback,
}

impl std::str::FromStr for ContentionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<ContentionPolicy, String> {
        match s.replace('_', "-").as_str() {
            "resample" => Ok(ContentionPolicy::Resample),
            "baseline-fallback" | "baseline" => Ok(ContentionPolicy::BaselineFallback),
            other => Err(format!("unknown contention policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParallelConfig {
    pub workers: usize,
    pub algorithm: Algorithm,
    pub tau_alpha: f64,
    /// Completed proposals per worker.
    pub budget: u64,
    pub contention: ContentionPolicy,
    pub acceptance: AcceptanceMode,
    pub seed: u64,
    /// Abort when no worker completes a proposal for this long.
    pub stall_timeout: Duration,
    /// Keep a version stamp for every accepted move.
    pub record_stamps: bool,
    /// Make `worker` panic at its `step`-th proposal. Test hook.
    #[doc(hidden)]
    #[serde(skip)]
    pub inject_panic: Option<(usize, u64)>,
}

impl ParallelConfig {
    pub fn new(workers: usize, budget: u64, seed: u64) -> ParallelConfig {
        ParallelConfig {
            workers,
            algorithm: Algorithm::HybridAttract,
            tau_alpha: 1.0,
            budget,
            contention: ContentionPolicy::Resample,
            acceptance: AcceptanceMode::Greedy,
            seed,
            stall_timeout: Duration::from_secs(10),
            record_stamps: false,
            inject_panic: None,
        }
    }

    pub fn with_algorithm(mut self, algorithm: Algorithm) -> ParallelConfig {
        self.algorithm = algorithm;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> ParallelConfig {
        self.tau_alpha = tau;
        self
    }

    pub fn with_contention(mut self, policy: ContentionPolicy) -> ParallelConfig {
        self.contention = policy;
        self
    }

    pub fn with_acceptance(mut self, mode: AcceptanceMode) -> ParallelConfig {
        self.acceptance = mode;
        self
    }

    pub fn with_stamps(mut self) -> ParallelConfig {
        self.record_stamps = true;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentionStats {
    /// Attempts to take exclusive access to a proposal's entities.
    pub attempts: u64,
    /// Attempts (or plans) abandoned because an entity was busy or stale.
    pub failures: u64,
    /// Baseline proposals tried after a failure.
    pub fallbacks: u64,
    pub proposals: u64,
    pub accepted: u64,
}

impl ContentionStats {
    fn add(&mut self, o: &ContentionStats) {
        self.attempts += o.attempts;
        self.failures += o.failures;
        self.fallbacks += o.fallbacks;
        self.proposals += o.proposals;
        self.accepted += o.accepted;
    }
}

/// Versions of the two entities an accepted move was computed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MoveStamp {
    pub mention: MentionId,
    pub source: EntityId,
    pub source_version: u64,
    pub target: EntityId,
    pub target_version: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("engine needs at least one worker and one query")]
    BadConfig,
    #[error("worker {worker} panicked: {message}")]
    WorkerPanicked {
        worker: usize,
        message: String,
        partial: Box<ParallelRun>,
    },
    #[error("no proposal completed for {0:?}; run aborted")]
    Stalled(Duration, Box<ParallelRun>),
}

#[derive(Debug, Clone)]
pub struct ParallelRun {
    pub state: EntityState,
    pub traces: Vec<RunTrace>,
    pub worker_stats: Vec<ContentionStats>,
    pub stats: ContentionStats,
    pub stamps: Vec<MoveStamp>,
    pub elapsed: Duration,
}

#[derive(Debug, Default)]
struct EntityCell {
    live: bool,
    members: Vec<MentionId>,
    counts: PairCounts,
    version: u64,
}

#[derive(Debug)]
struct Registry {
    order: Vec<EntityId>,
    /// Position in `order` per entity id; ABSENT when not live.
    pos: Vec<u32>,
    free: Vec<EntityId>,
}

/// A partition shared between workers. Entity ids index `cells`; ids of
/// emptied entities are recycled.
pub struct SharedState {
    assignment: Vec<AtomicU32>,
    slot: Vec<AtomicU32>,
    cells: Vec<Mutex<EntityCell>>,
    registry: RwLock<Registry>,
    mentions: usize,
}

impl SharedState {
    pub fn new(state: &EntityState, scorer: &Scorer) -> SharedState {
        let mentions = state.mentions();
        let width = mentions.last().map_or(0, |m| m.index() + 1);
        let assignment: Vec<AtomicU32> = (0..width).map(|_| AtomicU32::new(ABSENT)).collect();
        let slot: Vec<AtomicU32> = (0..width).map(|_| AtomicU32::new(0)).collect();
        // live entities never outnumber mentions
        let capacity = mentions.len() + 1;
        let mut cells: Vec<Mutex<EntityCell>> = (0..capacity).map(|_| Mutex::new(EntityCell::default())).collect();
        let mut order = Vec::with_capacity(capacity);
        let mut pos = vec![ABSENT; capacity];
        for (i, &e) in state.entity_ids().iter().enumerate() {
            let members = state.members(e).to_vec();
            for (k, m) in members.iter().enumerate() {
                assignment[m.index()].store(i as u32, Ordering::Relaxed);
                slot[m.index()].store(k as u32, Ordering::Relaxed);
            }
            *cells[i].get_mut() = EntityCell {
                live: true,
                counts: scorer.pair_counts(&members),
                members,
                version: 0,
            };
            order.push(EntityId(i as u32));
            pos[i] = i as u32;
        }
        let free = (order.len()..capacity).rev().map(|i| EntityId(i as u32)).collect();
        SharedState {
            assignment,
            slot,
            cells,
            registry: RwLock::new(Registry { order, pos, free }),
            mentions: mentions.len(),
        }
    }

    /// Snapshot as an [`EntityState`] with the same entity order and member
    /// order; entity ids are renumbered by position.
    pub fn to_state(&self) -> EntityState {
        let reg = self.registry.read();
        let clusters: Vec<Vec<MentionId>> = reg.order.iter().map(|e| self.cells[e.0 as usize].lock().members.clone()).collect();
        EntityState::from_clusters(&clusters).expect("shared state holds every mention once")
    }

    /// Consistency of assignment, slots, cells and registry. Call only when
    /// no worker is running.
    pub fn check_invariants(&self) -> Result<(), String> {
        let reg = self.registry.read();
        let mut seen = 0;
        for (p, e) in reg.order.iter().enumerate() {
            if reg.pos[e.0 as usize] != p as u32 {
                return Err(format!("{e} has stale position"));
            }
            let cell = self.cells[e.0 as usize].lock();
            if !cell.live || cell.members.is_empty() {
                return Err(format!("{e} in order but empty or dead"));
            }
            for (k, m) in cell.members.iter().enumerate() {
                if self.assignment[m.index()].load(Ordering::Acquire) != e.0 {
                    return Err(format!("{m} listed in {e} but assigned elsewhere"));
                }
                if self.slot[m.index()].load(Ordering::Acquire) != k as u32 {
                    return Err(format!("{m} has stale slot"));
                }
            }
            seen += cell.members.len();
        }
        if seen != self.mentions {
            return Err(format!("{seen} members for {} mentions", self.mentions));
        }
        Ok(())
    }
}

/// A worker's view for planning. Any lookup that fails because another
/// worker holds or has changed an entity marks the plan as contended.
struct WorkerView<'a> {
    shared: &'a SharedState,
    contended: Cell<bool>,
}

impl WorkerView<'_> {
    fn miss<T>(&self) -> Option<T> {
        self.contended.set(true);
        None
    }
}

impl StateView for WorkerView<'_> {
    fn entity_count(&self) -> usize {
        self.shared.registry.read().order.len()
    }

    fn entity_at(&self, idx: usize) -> Option<EntityId> {
        match self.shared.registry.read().order.get(idx) {
            Some(&e) => Some(e),
            None => self.miss(),
        }
    }

    fn position_of(&self, e: EntityId) -> Option<usize> {
        match self.shared.registry.read().pos.get(e.0 as usize) {
            Some(&p) if p != ABSENT => Some(p as usize),
            _ => self.miss(),
        }
    }

    fn entity_of(&self, m: MentionId) -> Option<EntityId> {
        match self.shared.assignment.get(m.index()).map(|a| a.load(Ordering::Acquire)) {
            Some(e) if e != ABSENT => Some(EntityId(e)),
            _ => self.miss(),
        }
    }

    fn size_of(&self, e: EntityId) -> usize {
        match self.shared.cells.get(e.0 as usize).and_then(|c| c.try_lock()) {
            Some(cell) if cell.live => cell.members.len(),
            _ => {
                self.contended.set(true);
                0
            }
        }
    }

    fn member_at(&self, e: EntityId, idx: usize) -> Option<MentionId> {
        match self.shared.cells.get(e.0 as usize).and_then(|c| c.try_lock()) {
            Some(cell) if cell.live && idx < cell.members.len() => Some(cell.members[idx]),
            _ => self.miss(),
        }
    }
}

struct Worker<'a> {
    id: usize,
    shared: &'a SharedState,
    scorer: &'a Scorer,
    cfg: &'a ParallelConfig,
    rng: ChaCha8Rng,
    stats: ContentionStats,
    stamps: Vec<MoveStamp>,
}

enum Attempt {
    Busy,
    Done { accepted: bool, delta: f64 },
}

impl<'a> Worker<'a> {
    /// Take both entities (ascending id), validate, score and maybe apply.
    fn execute(&mut self, p: &Proposal) -> Attempt {
        self.stats.attempts += 1;
        let shared = self.shared;
        let cell = |e: EntityId| &shared.cells[e.0 as usize];
        let existing = match p.target {
            Target::Existing(t) if t == p.source => return Attempt::Busy,
            Target::Existing(t) => Some(t),
            Target::Fresh => None,
        };
        let (mut src, mut tgt): (MutexGuard<'_, EntityCell>, Option<MutexGuard<'_, EntityCell>>) = match existing {
            None => match cell(p.source).try_lock() {
                Some(g) => (g, None),
                None => return Attempt::Busy,
            },
            Some(t) => {
                let (lo, hi) = if p.source < t { (p.source, t) } else { (t, p.source) };
                let Some(g_lo) = cell(lo).try_lock() else { return Attempt::Busy };
                let Some(g_hi) = cell(hi).try_lock() else { return Attempt::Busy };
                if lo == p.source {
                    (g_lo, Some(g_hi))
                } else {
                    (g_hi, Some(g_lo))
                }
            }
        };
        let m = p.mention;
        if !src.live || shared.assignment[m.index()].load(Ordering::Acquire) != p.source.0 {
            return Attempt::Busy;
        }
        if tgt.as_ref().is_some_and(|t| !t.live) {
            return Attempt::Busy;
        }
        if existing.is_none() && src.members.len() == 1 {
            return Attempt::Busy;
        }
        let (tgt_members, tgt_counts) = match &tgt {
            Some(t) => (t.members.as_slice(), t.counts),
            None => (&[][..], PairCounts::default()),
        };
        let eval = self.scorer.move_eval(&src.members, src.counts, tgt_members, tgt_counts, m);
        let accepted = accept(acceptance_input(eval.delta, p, self.cfg.acceptance), self.cfg.acceptance, &mut self.rng);
        if !accepted {
            return Attempt::Done {
                accepted,
                delta: eval.delta,
            };
        }

        let mut fresh_guard;
        let (target_id, tcell): (EntityId, &mut EntityCell) = match (existing, tgt.as_mut()) {
            (Some(t), Some(g)) => (t, &mut **g),
            _ => {
                let mut reg = shared.registry.write();
                let id = reg.free.pop().expect("a free entity slot exists");
                let at = reg.order.len() as u32;
                reg.order.push(id);
                reg.pos[id.0 as usize] = at;
                drop(reg);
                fresh_guard = cell(id).lock();
                fresh_guard.live = true;
                (id, &mut *fresh_guard)
            }
        };
        if self.cfg.record_stamps {
            self.stamps.push(MoveStamp {
                mention: m,
                source: p.source,
                source_version: src.version,
                target: target_id,
                target_version: tcell.version,
            });
        }
        let at = shared.slot[m.index()].load(Ordering::Acquire) as usize;
        src.members.swap_remove(at);
        if let Some(&moved) = src.members.get(at) {
            shared.slot[moved.index()].store(at as u32, Ordering::Release);
        }
        src.version += 1;
        src.counts = eval.source_after;
        shared.slot[m.index()].store(tcell.members.len() as u32, Ordering::Release);
        tcell.members.push(m);
        tcell.version += 1;
        tcell.counts = eval.target_after;
        shared.assignment[m.index()].store(target_id.0, Ordering::Release);
        if src.members.is_empty() {
            src.live = false;
            let mut reg = shared.registry.write();
            let at = reg.pos[p.source.0 as usize] as usize;
            reg.order.swap_remove(at);
            if let Some(&moved) = reg.order.get(at) {
                reg.pos[moved.0 as usize] = at as u32;
            }
            reg.pos[p.source.0 as usize] = ABSENT;
            reg.free.push(p.source);
        }
        Attempt::Done {
            accepted: true,
            delta: eval.delta,
        }
    }

    fn run(&mut self, targets: &[QueryTarget<'_>], trace: &mut Vec<StepRecord>, progress: &AtomicU64, abort: &AtomicBool) {
        let mut next_query = self.id % targets.len();
        while self.stats.proposals < self.cfg.budget {
            if abort.load(Ordering::Relaxed) {
                return;
            }
            if self.cfg.inject_panic == Some((self.id, self.stats.proposals)) {
                panic!("injected failure in worker {}", self.id);
            }
            let target = &targets[next_query];
            let view = WorkerView {
                shared: self.shared,
                contended: Cell::new(false),
            };
            let plan = plan_with_retries(&mut self.rng, &view, self.cfg.algorithm, target, self.cfg.tau_alpha);
            let outcome = if view.contended.get() {
                None
            } else {
                match plan {
                    Plan::Degenerate => Some((false, 0.0, false)),
                    Plan::NoOp { query_branch } => Some((false, 0.0, query_branch)),
                    Plan::Move(p) => match self.execute(&p) {
                        Attempt::Done { accepted, delta } => Some((accepted, delta, p.query_branch)),
                        Attempt::Busy => None,
                    },
                }
            };
            let outcome = match outcome {
                Some(o) => Some(o),
                None => {
                    self.stats.failures += 1;
                    self.fallback()
                }
            };
            let Some((accepted, delta, query_branch)) = outcome else {
                continue;
            };
            self.stats.proposals += 1;
            self.stats.accepted += accepted as u64;
            trace.push(StepRecord {
                step: self.stats.proposals,
                accepted,
                delta,
                query_branch,
                f1_q: None,
            });
            progress.fetch_add(1, Ordering::Relaxed);
            next_query = (next_query + 1) % targets.len();
        }
    }

    /// Baseline proposal after a failed attempt, if the policy asks for one.
    fn fallback(&mut self) -> Option<(bool, f64, bool)> {
        if self.cfg.contention != ContentionPolicy::BaselineFallback {
            return None;
        }
        self.stats.fallbacks += 1;
        let view = WorkerView {
            shared: self.shared,
            contended: Cell::new(false),
        };
        let plan = plan_baseline(&mut self.rng, &view);
        if view.contended.get() {
            self.stats.failures += 1;
            return None;
        }
        match plan {
            Plan::Degenerate | Plan::NoOp { .. } => Some((false, 0.0, false)),
            Plan::Move(p) => match self.execute(&p) {
                Attempt::Done { accepted, delta } => Some((accepted, delta, false)),
                Attempt::Busy => {
                    self.stats.failures += 1;
                    None
                }
            },
        }
    }
}

fn panic_message(e: &(dyn std::any::Any + Send)) -> String {
    e.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| e.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

/// Trace, counters, stamps and panic message of one worker.
type WorkerResult = (Vec<StepRecord>, ContentionStats, Vec<MoveStamp>, Option<String>);

/// Run `cfg.workers` samplers over one shared state. Worker `k` draws from
/// stream `k` of the master seed and cycles through `targets` starting at
/// `k`. With one worker and one target the run reproduces the
/// single-threaded chain step for step.
pub fn run_parallel(
    state: &EntityState,
    targets: &[QueryTarget<'_>],
    scorer: &Scorer,
    cfg: &ParallelConfig,
) -> Result<ParallelRun, EngineError> {
    if cfg.workers == 0 || targets.is_empty() {
        return Err(EngineError::BadConfig);
    }
    let shared = SharedState::new(state, scorer);
    let progress = AtomicU64::new(0);
    let abort = AtomicBool::new(false);
    let finished = AtomicU64::new(0);
    let started = Instant::now();

    let mut results: Vec<WorkerResult> = Vec::new();
    let mut stalled = None;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.workers)
            .map(|k| {
                let (shared, progress, abort, finished) = (&shared, &progress, &abort, &finished);
                s.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(k as u64);
                    let mut worker = Worker {
                        id: k,
                        shared,
                        scorer,
                        cfg,
                        rng,
                        stats: ContentionStats::default(),
                        stamps: Vec::new(),
                    };
                    let mut trace = Vec::with_capacity(cfg.budget.min(1 << 22) as usize);
                    let res = catch_unwind(AssertUnwindSafe(|| worker.run(targets, &mut trace, progress, abort)));
                    let failure = res.err().map(|e| {
                        abort.store(true, Ordering::Relaxed);
                        panic_message(&*e)
                    });
                    finished.fetch_add(1, Ordering::Release);
                    (trace, worker.stats, worker.stamps, failure)
                })
            })
            .collect();

        let mut last = progress.load(Ordering::Relaxed);
        let mut since = Instant::now();
        while finished.load(Ordering::Acquire) < cfg.workers as u64 {
            std::thread::sleep(Duration::from_millis(5));
            let now = progress.load(Ordering::Relaxed);
            if now != last {
                last = now;
                since = Instant::now();
            } else if since.elapsed() >= cfg.stall_timeout && !abort.load(Ordering::Relaxed) {
                log::error!("no progress for {:?}; aborting", since.elapsed());
                stalled = Some(since.elapsed());
                abort.store(true, Ordering::Relaxed);
            }
        }
        results = handles
            .into_iter()
            .map(|h| h.join().expect("worker panics are caught"))
            .collect();
    });

    let mut run = ParallelRun {
        state: shared.to_state(),
        traces: Vec::with_capacity(results.len()),
        worker_stats: Vec::with_capacity(results.len()),
        stats: ContentionStats::default(),
        stamps: Vec::new(),
        elapsed: started.elapsed(),
    };
    let mut failure = None;
    for (k, (trace, stats, stamps, fail)) in results.into_iter().enumerate() {
        run.traces.push(RunTrace { records: trace });
        run.stats.add(&stats);
        run.worker_stats.push(stats);
        run.stamps.extend(stamps);
        if failure.is_none() {
            failure = fail.map(|m| (k, m));
        }
    }
    if let Some((worker, message)) = failure {
        return Err(EngineError::WorkerPanicked {
            worker,
            message,
            partial: Box::new(run),
        });
    }
    if let Some(idle) = stalled {
        return Err(EngineError::Stalled(idle, Box::new(run)));
    }
    if let Err(e) = shared.check_invariants() {
        panic!("shared state corrupted: {e}");
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureModel;
    use crate::pipeline::{Prepared, Settings, Workspace};
    use crate::samplers::{run_sampler, SamplerConfig};
    use crate::scheduler::merged_initial_state;
    use crate::synth::{self, CanopySpec};
    use std::collections::HashMap;

    fn fixture(n: usize) -> (Workspace, Prepared) {
        let p = synth::watchlist_fixture(3);
        let ws = Workspace::new(p.corpus, FeatureModel::default_weights(), Settings::default()).unwrap();
        let queries = p.queries.into_iter().take(n).collect();
        let prep = ws.prepare(queries);
        (ws, prep)
    }

    fn targets<'a>(prep: &'a Prepared, alg: Algorithm) -> Vec<QueryTarget<'a>> {
        let cfg = SamplerConfig::new(alg, 0, 0);
        prep.queries.iter().map(|q| q.target(&cfg)).collect()
    }

    #[test]
    fn one_worker_matches_chain() {
        let (_, prep) = fixture(1);
        for alg in [Algorithm::HybridAttract, Algorithm::HybridRepel, Algorithm::TargetFixed, Algorithm::Baseline] {
            for mode in [AcceptanceMode::Greedy, AcceptanceMode::Metropolis] {
                let seed = 17;
                let start = merged_initial_state(&prep, alg).unwrap();
                let cfg = ParallelConfig::new(1, 4000, seed)
                    .with_algorithm(alg)
                    .with_tau(0.9)
                    .with_acceptance(mode);
                let par = run_parallel(&start, &targets(&prep, alg), &prep.scorer, &cfg).unwrap();
                let single = SamplerConfig::new(alg, 4000, seed).with_tau(0.9).with_acceptance(mode);
                let (state, trace) = run_sampler(start, &targets(&prep, alg)[0], &single, &prep.scorer, None);
                assert_eq!(par.traces[0], trace, "{alg} {mode:?}");
                assert_eq!(par.state.clusters(), state.clusters());
                assert_eq!(par.stats.failures, 0);
            }
        }
    }

    #[test]
    fn many_workers_keep_the_partition_and_score() {
        let (_, prep) = fixture(9);
        let start = merged_initial_state(&prep, Algorithm::HybridAttract).unwrap();
        let before = prep.scorer.model_score(&start);
        for policy in [ContentionPolicy::Resample, ContentionPolicy::BaselineFallback] {
            let cfg = ParallelConfig::new(8, 5000, 2).with_contention(policy).with_stamps();
            let run = run_parallel(&start, &targets(&prep, Algorithm::HybridAttract), &prep.scorer, &cfg).unwrap();
            run.state.check_invariants().unwrap();
            assert_eq!(run.state.mention_count(), start.mention_count());
            assert_eq!(run.stats.proposals, 8 * 5000);
            assert!(run.traces.iter().all(|t| t.len() == 5000));
            // greedy: every accepted move improves, and the gains add up
            let mut gained = 0.0;
            for r in run.traces.iter().flat_map(|t| &t.records).filter(|r| r.accepted) {
                assert!(r.delta > 0.0);
                gained += r.delta;
            }
            let after = prep.scorer.model_score(&run.state);
            assert!((after - before - gained).abs() < 1e-6 * (1.0 + after.abs()), "{after} vs {before} + {gained}");
            // every accepted move saw a distinct version of each entity it touched
            let mut seen: HashMap<EntityId, Vec<u64>> = HashMap::new();
            for s in &run.stamps {
                seen.entry(s.source).or_default().push(s.source_version);
                seen.entry(s.target).or_default().push(s.target_version);
            }
            for (e, mut vs) in seen {
                vs.sort_unstable();
                assert!(vs.windows(2).all(|w| w[0] < w[1]), "{e} reused a version");
            }
            assert_eq!(run.stamps.len() as u64, run.stats.accepted);
        }
    }

    #[test]
    fn collisions_are_counted() {
        let p = synth::planted(&[CanopySpec::new("Hana", "Takahashi", 30, 30, 1)], 0, 1);
        let ws = Workspace::new(p.corpus, FeatureModel::default_weights(), Settings::default()).unwrap();
        let prep = ws.prepare(p.queries);
        let ids = prep.queries[0].canopy.working_set();
        let (a, b) = ids.split_at(ids.len() / 2);
        let start = EntityState::from_clusters(&[a.to_vec(), b.to_vec()]).unwrap();
        let cfg = ParallelConfig::new(8, 20_000, 5)
            .with_algorithm(Algorithm::TargetFixed)
            .with_acceptance(AcceptanceMode::Metropolis);
        let run = run_parallel(&start, &targets(&prep, Algorithm::TargetFixed), &prep.scorer, &cfg).unwrap();
        assert!(run.stats.failures > 0, "{:?}", run.stats);
        run.state.check_invariants().unwrap();

        let cfg = cfg.with_contention(ContentionPolicy::BaselineFallback);
        let run = run_parallel(&start, &targets(&prep, Algorithm::TargetFixed), &prep.scorer, &cfg).unwrap();
        assert!(run.stats.fallbacks > 0);
        run.state.check_invariants().unwrap();
    }

    #[test]
    fn worker_panic_returns_partial_traces() {
        let (_, prep) = fixture(2);
        let start = merged_initial_state(&prep, Algorithm::HybridAttract).unwrap();
        let mut cfg = ParallelConfig::new(4, 50_000_000, 1);
        cfg.inject_panic = Some((2, 50));
        match run_parallel(&start, &targets(&prep, Algorithm::HybridAttract), &prep.scorer, &cfg) {
            Err(EngineError::WorkerPanicked { worker, partial, .. }) => {
                assert_eq!(worker, 2);
                assert_eq!(partial.traces[2].len(), 50);
                assert!(partial.traces.iter().all(|t| t.len() < 50_000_000));
                assert!(partial.state.check_invariants().is_ok());
            }
            other => panic!("expected a worker failure, got {:?}", other.map(|r| r.stats)),
        }
    }

    #[test]
    fn bad_config() {
        let (_, prep) = fixture(1);
        let start = merged_initial_state(&prep, Algorithm::HybridAttract).unwrap();
        let cfg = ParallelConfig::new(0, 10, 1);
        assert!(matches!(
            run_parallel(&start, &targets(&prep, Algorithm::HybridAttract), &prep.scorer, &cfg),
            Err(EngineError::BadConfig)
        ));
        assert!(matches!(
            run_parallel(&start, &[], &prep.scorer, &ParallelConfig::new(1, 10, 1)),
            Err(EngineError::BadConfig)
        ));
    }

    #[test]
    fn shared_state_round_trips() {
        let (_, prep) = fixture(3);
        let start = merged_initial_state(&prep, Algorithm::HybridRepel).unwrap();
        let shared = SharedState::new(&start, &prep.scorer);
        shared.check_invariants().unwrap();
        assert_eq!(shared.to_state().clusters(), start.clusters());
    }
}
