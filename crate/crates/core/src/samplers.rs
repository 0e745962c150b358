//! Proposal strategies: the uniform baseline and the three query-driven
//! samplers (target-fixed, query-proportional, hybrid attract/repel).
//!
//! Proposals are planned against a [`StateView`] so the same code drives the
//! single-threaded [`Chain`] and the parallel engine.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::MentionId;
use crate::eval::{f1_q, QueryTruth};
use crate::features::{PairCounts, Scorer};
use crate::influence::{Direction, InfluenceTable};
use crate::model::{accept, AcceptanceMode, EntityId, EntityState, Move};

/// Attempts at a well-formed proposal before a step is recorded as rejected.
pub const RETRIES: usize = 8;
pub const DEFAULT_TAU_ALPHA: f64 = 0.9;
pub const DEFAULT_WINDOW: usize = 100;
pub const DEFAULT_PATIENCE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Baseline,
    TargetFixed,
    QueryProportional,
    HybridAttract,
    HybridRepel,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Baseline,
        Algorithm::TargetFixed,
        Algorithm::QueryProportional,
        Algorithm::HybridAttract,
        Algorithm::HybridRepel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Baseline => "baseline",
            Algorithm::TargetFixed => "target-fixed",
            Algorithm::QueryProportional => "query-proportional",
            Algorithm::HybridAttract => "hybrid-attract",
            Algorithm::HybridRepel => "hybrid-repel",
        }
    }

    /// Influence table direction the algorithm draws from, if any.
    pub fn table_direction(self) -> Option<Direction> {
        match self {
            Algorithm::QueryProportional | Algorithm::HybridAttract => Some(Direction::Attract),
            Algorithm::HybridRepel => Some(Direction::Repel),
            Algorithm::Baseline | Algorithm::TargetFixed => None,
        }
    }

    /// Repel starts from one all-in cluster; everything else from singletons.
    pub fn initial_state(self, ids: &[MentionId]) -> Result<EntityState, crate::model::ModelError> {
        match self {
            Algorithm::HybridRepel => EntityState::init_single_cluster(ids),
            _ => EntityState::init_singletons(ids),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == norm || (norm == "hybrid" && *a == Algorithm::HybridAttract))
            .ok_or_else(|| format!("unknown algorithm {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StopRule {
    /// Run the whole budget.
    Budget,
    /// Stop early once `patience` consecutive windows of `window` proposals
    /// pass without an accepted move.
    Adaptive { window: usize, patience: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    pub tau_alpha: f64,
    pub samples: u64,
    pub acceptance: AcceptanceMode,
    pub seed: u64,
    pub stop: StopRule,
}

impl SamplerConfig {
    pub fn new(algorithm: Algorithm, samples: u64, seed: u64) -> SamplerConfig {
        SamplerConfig {
            algorithm,
            tau_alpha: DEFAULT_TAU_ALPHA,
            samples,
            acceptance: AcceptanceMode::Greedy,
            seed,
            stop: StopRule::Budget,
        }
    }

    pub fn with_tau(mut self, tau_alpha: f64) -> SamplerConfig {
        assert!((0.0..=1.0).contains(&tau_alpha), "tau_alpha must lie in [0, 1]");
        self.tau_alpha = tau_alpha;
        self
    }

    pub fn with_acceptance(mut self, mode: AcceptanceMode) -> SamplerConfig {
        self.acceptance = mode;
        self
    }

    pub fn with_stop(mut self, stop: StopRule) -> SamplerConfig {
        self.stop = stop;
        self
    }
}

/// What the planner needs to know about the current partition. Lookups may
/// fail under concurrent modification; a failed lookup aborts the plan.
pub trait StateView {
    fn entity_count(&self) -> usize;
    fn entity_at(&self, idx: usize) -> Option<EntityId>;
    fn position_of(&self, e: EntityId) -> Option<usize>;
    fn entity_of(&self, m: MentionId) -> Option<EntityId>;
    fn size_of(&self, e: EntityId) -> usize;
    fn member_at(&self, e: EntityId, idx: usize) -> Option<MentionId>;
}

impl StateView for EntityState {
    fn entity_count(&self) -> usize {
        EntityState::entity_count(self)
    }

    fn entity_at(&self, idx: usize) -> Option<EntityId> {
        (idx < EntityState::entity_count(self)).then(|| EntityState::entity_at(self, idx))
    }

    fn position_of(&self, e: EntityId) -> Option<usize> {
        EntityState::position_of(self, e)
    }

    fn entity_of(&self, m: MentionId) -> Option<EntityId> {
        EntityState::entity_of(self, m)
    }

    fn size_of(&self, e: EntityId) -> usize {
        self.members(e).len()
    }

    fn member_at(&self, e: EntityId, idx: usize) -> Option<MentionId> {
        self.members(e).get(idx).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Existing(EntityId),
    /// A new, empty entity.
    Fresh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub mention: MentionId,
    pub source: EntityId,
    pub target: Target,
    pub query_branch: bool,
    /// Log proposal ratio `ln T(reverse) / T(forward)`; nonzero only for the
    /// baseline proposal.
    pub log_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Plan {
    /// No well-formed proposal exists for this draw (e.g. too few entities).
    Degenerate,
    /// A proposal that would not change the state.
    NoOp { query_branch: bool },
    Move(Proposal),
}

/// The query a step is driven by.
#[derive(Debug, Clone, Copy)]
pub struct QueryTarget<'a> {
    pub query: MentionId,
    pub table: Option<&'a InfluenceTable>,
}

macro_rules! get {
    ($e:expr) => {
        match $e {
            Some(v) => v,
            None => return Plan::Degenerate,
        }
    };
}

fn uniform_member<R: Rng + ?Sized, V: StateView + ?Sized>(rng: &mut R, view: &V, e: EntityId) -> Option<MentionId> {
    let s = view.size_of(e);
    if s == 0 {
        return None;
    }
    view.member_at(e, rng.gen_range(0..s))
}

/// Index drawn uniformly from `0..n` skipping `skip`.
fn uniform_except<R: Rng + ?Sized>(rng: &mut R, n: usize, skip: usize) -> usize {
    let r = rng.gen_range(0..n - 1);
    if r < skip {
        r
    } else {
        r + 1
    }
}

/// Baseline: uniform source entity, uniform member, uniform target among
/// the existing entities plus one fresh entity.
pub fn plan_baseline<R: Rng + ?Sized, V: StateView + ?Sized>(rng: &mut R, view: &V) -> Plan {
    let k = view.entity_count();
    if k == 0 {
        return Plan::Degenerate;
    }
    let src = get!(view.entity_at(rng.gen_range(0..k)));
    let s = view.size_of(src);
    let m = get!(uniform_member(rng, view, src));
    let j = rng.gen_range(0..=k);
    let target = if j == k {
        Target::Fresh
    } else {
        Target::Existing(get!(view.entity_at(j)))
    };
    let t = match target {
        Target::Existing(e) if e == src => return Plan::NoOp { query_branch: false },
        Target::Fresh if s == 1 => return Plan::NoOp { query_branch: false },
        Target::Existing(e) => view.size_of(e),
        Target::Fresh => 0,
    };
    let k2 = k + matches!(target, Target::Fresh) as usize - (s == 1) as usize;
    let (k, k2, s, t) = (k as f64, k2 as f64, s as f64, t as f64);
    let log_ratio = (k * (k + 1.0) * s).ln() - (k2 * (k2 + 1.0) * (t + 1.0)).ln();
    Plan::Move(Proposal {
        mention: m,
        source: src,
        target,
        query_branch: false,
        log_ratio,
    })
}

/// Back-out move of the target-fixed sampler: target uniform over the non-query entities
/// plus a fresh one, source uniform among the other entities.
fn plan_back_out<R: Rng + ?Sized, V: StateView + ?Sized>(rng: &mut R, view: &V, query_pos: usize) -> Plan {
    let k = view.entity_count();
    let r = rng.gen_range(0..k);
    let (target, src) = if r == query_pos {
        (Target::Fresh, get!(view.entity_at(rng.gen_range(0..k))))
    } else {
        let tgt = get!(view.entity_at(r));
        (Target::Existing(tgt), get!(view.entity_at(uniform_except(rng, k, r))))
    };
    let s = view.size_of(src);
    let m = get!(uniform_member(rng, view, src));
    if target == Target::Fresh && s == 1 {
        return Plan::NoOp { query_branch: false };
    }
    Plan::Move(Proposal {
        mention: m,
        source: src,
        target,
        query_branch: false,
        log_ratio: 0.0,
    })
}

/// Target-fixed: with probability tau a uniform member of a uniform
/// non-query entity joins the query entity, otherwise a back-out move.
pub fn plan_target_fixed<R: Rng + ?Sized, V: StateView + ?Sized>(
    rng: &mut R,
    view: &V,
    query: MentionId,
    tau: f64,
) -> Plan {
    let coin: f64 = rng.gen();
    let qe = get!(view.entity_of(query));
    let pq = get!(view.position_of(qe));
    let k = view.entity_count();
    if coin >= tau {
        return plan_back_out(rng, view, pq);
    }
    if k < 2 {
        return Plan::Degenerate;
    }
    let src = get!(view.entity_at(uniform_except(rng, k, pq)));
    let m = get!(uniform_member(rng, view, src));
    Plan::Move(Proposal {
        mention: m,
        source: src,
        target: Target::Existing(qe),
        query_branch: true,
        log_ratio: 0.0,
    })
}

/// Query-proportional: move one influence draw into the entity of another.
pub fn plan_query_proportional<R: Rng + ?Sized, V: StateView + ?Sized>(
    rng: &mut R,
    view: &V,
    table: &InfluenceTable,
) -> Plan {
    let m1 = table.draw(rng);
    let mut m2 = None;
    for _ in 0..RETRIES {
        let d = table.draw(rng);
        if d != m1 {
            m2 = Some(d);
            break;
        }
    }
    let Some(m2) = m2 else {
        return Plan::NoOp { query_branch: false };
    };
    let src = get!(view.entity_of(m1));
    let tgt = get!(view.entity_of(m2));
    if src == tgt {
        return Plan::NoOp { query_branch: false };
    }
    Plan::Move(Proposal {
        mention: m1,
        source: src,
        target: Target::Existing(tgt),
        query_branch: false,
        log_ratio: 0.0,
    })
}

/// Hybrid (attract): influence-drawn source, query entity as target.
pub fn plan_hybrid_attract<R: Rng + ?Sized, V: StateView + ?Sized>(
    rng: &mut R,
    view: &V,
    query: MentionId,
    table: &InfluenceTable,
    tau: f64,
) -> Plan {
    let coin: f64 = rng.gen();
    let qe = get!(view.entity_of(query));
    if coin >= tau {
        let pq = get!(view.position_of(qe));
        return plan_back_out(rng, view, pq);
    }
    let m = table.draw(rng);
    let src = get!(view.entity_of(m));
    if m == query || src == qe {
        return Plan::NoOp { query_branch: true };
    }
    Plan::Move(Proposal {
        mention: m,
        source: src,
        target: Target::Existing(qe),
        query_branch: true,
        log_ratio: 0.0,
    })
}

/// Hybrid (repel): repel-drawn mention moved to a non-query entity (or a fresh
/// one); else a uniform move between two distinct entities.
pub fn plan_hybrid_repel<R: Rng + ?Sized, V: StateView + ?Sized>(
    rng: &mut R,
    view: &V,
    query: MentionId,
    table: &InfluenceTable,
    tau: f64,
) -> Plan {
    let coin: f64 = rng.gen();
    let qe = get!(view.entity_of(query));
    let k = view.entity_count();
    if coin < tau {
        let m = table.draw(rng);
        let pq = get!(view.position_of(qe));
        let r = rng.gen_range(0..k);
        let target = if r == pq {
            Target::Fresh
        } else {
            Target::Existing(get!(view.entity_at(r)))
        };
        if m == query {
            return Plan::NoOp { query_branch: true };
        }
        let src = get!(view.entity_of(m));
        let noop = match target {
            Target::Existing(e) => e == src,
            Target::Fresh => view.size_of(src) == 1,
        };
        if noop {
            return Plan::NoOp { query_branch: true };
        }
        return Plan::Move(Proposal {
            mention: m,
            source: src,
            target,
            query_branch: true,
            log_ratio: 0.0,
        });
    }
    if k < 2 {
        return Plan::Degenerate;
    }
    let ti = rng.gen_range(0..k);
    let tgt = get!(view.entity_at(ti));
    let src = get!(view.entity_at(uniform_except(rng, k, ti)));
    let m = get!(uniform_member(rng, view, src));
    Plan::Move(Proposal {
        mention: m,
        source: src,
        target: Target::Existing(tgt),
        query_branch: false,
        log_ratio: 0.0,
    })
}

/// One planning attempt for `algorithm`.
pub fn plan<R: Rng + ?Sized, V: StateView + ?Sized>(
    rng: &mut R,
    view: &V,
    algorithm: Algorithm,
    target: &QueryTarget<'_>,
    tau: f64,
) -> Plan {
    let table = || target.table.expect("algorithm needs an influence table");
    match algorithm {
        Algorithm::Baseline => plan_baseline(rng, view),
        Algorithm::TargetFixed => plan_target_fixed(rng, view, target.query, tau),
        Algorithm::QueryProportional => plan_query_proportional(rng, view, table()),
        Algorithm::HybridAttract => plan_hybrid_attract(rng, view, target.query, table(), tau),
        Algorithm::HybridRepel => plan_hybrid_repel(rng, view, target.query, table(), tau),
    }
}

/// Plan with bounded retries over degenerate draws.
pub fn plan_with_retries<R: Rng + ?Sized, V: StateView + ?Sized>(
    rng: &mut R,
    view: &V,
    algorithm: Algorithm,
    target: &QueryTarget<'_>,
    tau: f64,
) -> Plan {
    for _ in 0..RETRIES {
        let p = plan(rng, view, algorithm, target, tau);
        if p != Plan::Degenerate {
            return p;
        }
    }
    Plan::Degenerate
}

/// Acceptance input for a proposal: the score delta, plus the proposal
/// ratio correction under Metropolis acceptance.
#[inline]
pub fn acceptance_input(delta: f64, proposal: &Proposal, mode: AcceptanceMode) -> f64 {
    match mode {
        AcceptanceMode::Greedy => delta,
        AcceptanceMode::Metropolis => delta + proposal.log_ratio,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub accepted: bool,
    pub delta: f64,
    /// Whether the proposal came from the query-focused branch.
    #[serde(skip)]
    pub query_branch: bool,
    pub f1_q: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunTrace {
    pub records: Vec<StepRecord>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn accepted(&self) -> usize {
        self.records.iter().filter(|r| r.accepted).count()
    }

    pub fn f1_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f1_q.unwrap_or(0.0)).collect()
    }

    /// csv with columns step, accepted, delta, f1_q.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "accepted", "delta", "f1_q"])?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.accepted.to_string(),
                r.delta.to_string(),
                r.f1_q.map(|f| f.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sliding window of the last `n` acceptance outcomes plus a convergence
/// flag raised after `patience` consecutive full windows with no accepts.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceWindow {
    n: usize,
    patience: usize,
    ring: VecDeque<bool>,
    accepted: usize,
    since_check: usize,
    idle_windows: usize,
}

impl AcceptanceWindow {
    pub fn new(n: usize, patience: usize) -> AcceptanceWindow {
        assert!(n >= 1, "window must hold at least one proposal");
        AcceptanceWindow {
            n,
            patience,
            ring: VecDeque::with_capacity(n),
            accepted: 0,
            since_check: 0,
            idle_windows: 0,
        }
    }

    pub fn push(&mut self, accepted: bool) {
        if self.ring.len() == self.n && self.ring.pop_front() == Some(true) {
            self.accepted -= 1;
        }
        self.ring.push_back(accepted);
        self.accepted += accepted as usize;
        self.since_check += 1;
        if self.since_check == self.n {
            self.since_check = 0;
            if self.accepted == 0 {
                self.idle_windows += 1;
            } else {
                self.idle_windows = 0;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn accepted(&self) -> usize {
        self.accepted
    }

    /// Accepted fraction over the current window contents (0 when empty).
    pub fn fraction(&self) -> f64 {
        if self.ring.is_empty() {
            0.0
        } else {
            self.accepted as f64 / self.ring.len() as f64
        }
    }

    pub fn converged(&self) -> bool {
        self.patience > 0 && self.idle_windows >= self.patience
    }

    pub fn contents(&self) -> impl Iterator<Item = bool> + '_ {
        self.ring.iter().copied()
    }
}

/// Outcome of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub accepted: bool,
    pub delta: f64,
    pub query_branch: bool,
}

/// A single-threaded Markov chain over an [`EntityState`].
pub struct Chain<'a> {
    state: EntityState,
    counts: HashMap<EntityId, PairCounts>,
    scorer: &'a Scorer,
    rng: ChaCha8Rng,
    algorithm: Algorithm,
    tau: f64,
    mode: AcceptanceMode,
}

impl<'a> Chain<'a> {
    pub fn new(state: EntityState, scorer: &'a Scorer, cfg: &SamplerConfig) -> Chain<'a> {
        let counts = state
            .entity_ids()
            .iter()
            .map(|&e| (e, scorer.pair_counts(state.members(e))))
            .collect();
        Chain {
            state,
            counts,
            scorer,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            algorithm: cfg.algorithm,
            tau: cfg.tau_alpha,
            mode: cfg.acceptance,
        }
    }

    pub fn state(&self) -> &EntityState {
        &self.state
    }

    pub fn into_state(self) -> EntityState {
        self.state
    }

    pub fn step(&mut self, target: &QueryTarget<'_>) -> Outcome {
        let plan = plan_with_retries(&mut self.rng, &self.state, self.algorithm, target, self.tau);
        let proposal = match plan {
            Plan::Degenerate => {
                return Outcome {
                    accepted: false,
                    delta: 0.0,
                    query_branch: false,
                }
            }
            Plan::NoOp { query_branch } => {
                return Outcome {
                    accepted: false,
                    delta: 0.0,
                    query_branch,
                }
            }
            Plan::Move(p) => p,
        };
        let target_id = match proposal.target {
            Target::Existing(e) => e,
            Target::Fresh => self.state.fresh_id(),
        };
        let eval = self.scorer.move_eval(
            self.state.members(proposal.source),
            self.counts[&proposal.source],
            self.state.members(target_id),
            self.counts.get(&target_id).copied().unwrap_or_default(),
            proposal.mention,
        );
        let delta = eval.delta;
        let accepted = accept(acceptance_input(delta, &proposal, self.mode), self.mode, &mut self.rng);
        if accepted {
            self.state
                .apply_move(&Move::new(proposal.mention, proposal.source, target_id))
                .expect("planned move is valid against the current state");
            if self.state.is_live(proposal.source) {
                self.counts.insert(proposal.source, eval.source_after);
            } else {
                self.counts.remove(&proposal.source);
            }
            self.counts.insert(target_id, eval.target_after);
        }
        Outcome {
            accepted,
            delta,
            query_branch: proposal.query_branch,
        }
    }

    /// Members of the entity currently holding `query`.
    pub fn query_entity(&self, query: MentionId) -> &[MentionId] {
        match self.state.entity_of(query) {
            Some(e) => self.state.members(e),
            None => &[],
        }
    }
}

/// Run a sampler to its budget (or adaptive stop). `target` may name any
/// mention for the baseline; the f1 column is filled when `truth` is given.
pub fn run_sampler(
    state: EntityState,
    target: &QueryTarget<'_>,
    cfg: &SamplerConfig,
    scorer: &Scorer,
    truth: Option<&QueryTruth>,
) -> (EntityState, RunTrace) {
    if let Some(dir) = cfg.algorithm.table_direction() {
        let table = target.table.expect("algorithm needs an influence table");
        debug_assert_eq!(table.direction, dir, "table direction does not match the algorithm");
    }
    let mut chain = Chain::new(state, scorer, cfg);
    let mut trace = RunTrace {
        records: Vec::with_capacity(cfg.samples.min(1 << 24) as usize),
    };
    let mut window = match cfg.stop {
        StopRule::Budget => None,
        StopRule::Adaptive { window, patience } => Some(AcceptanceWindow::new(window, patience)),
    };
    let mut f1 = truth.map(|t| f1_q(chain.query_entity(target.query), t).f1);
    for step in 0..cfg.samples {
        let out = chain.step(target);
        if out.accepted {
            if let Some(t) = truth {
                f1 = Some(f1_q(chain.query_entity(target.query), t).f1);
            }
        }
        trace.records.push(StepRecord {
            step: step + 1,
            accepted: out.accepted,
            delta: out.delta,
            query_branch: out.query_branch,
            f1_q: f1,
        });
        if let Some(w) = window.as_mut() {
            w.push(out.accepted);
            if w.converged() {
                break;
            }
        }
    }
    (chain.into_state(), trace)
}

pub fn baseline_er(
    state: EntityState,
    query: MentionId,
    cfg: &SamplerConfig,
    scorer: &Scorer,
    truth: Option<&QueryTruth>,
) -> (EntityState, RunTrace) {
    let cfg = SamplerConfig {
        algorithm: Algorithm::Baseline,
        ..cfg.clone()
    };
    run_sampler(state, &QueryTarget { query, table: None }, &cfg, scorer, truth)
}

pub fn target_fixed(
    state: EntityState,
    query: MentionId,
    cfg: &SamplerConfig,
    scorer: &Scorer,
    truth: Option<&QueryTruth>,
) -> (EntityState, RunTrace) {
    let cfg = SamplerConfig {
        algorithm: Algorithm::TargetFixed,
        ..cfg.clone()
    };
    run_sampler(state, &QueryTarget { query, table: None }, &cfg, scorer, truth)
}

pub fn query_proportional(
    state: EntityState,
    query: MentionId,
    table: &InfluenceTable,
    cfg: &SamplerConfig,
    scorer: &Scorer,
    truth: Option<&QueryTruth>,
) -> (EntityState, RunTrace) {
    let cfg = SamplerConfig {
        algorithm: Algorithm::QueryProportional,
        ..cfg.clone()
    };
    run_sampler(state, &QueryTarget { query, table: Some(table) }, &cfg, scorer, truth)
}

pub fn hybrid_attract(
    state: EntityState,
    query: MentionId,
    table: &InfluenceTable,
    cfg: &SamplerConfig,
    scorer: &Scorer,
    truth: Option<&QueryTruth>,
) -> (EntityState, RunTrace) {
    let cfg = SamplerConfig {
        algorithm: Algorithm::HybridAttract,
        ..cfg.clone()
    };
    run_sampler(state, &QueryTarget { query, table: Some(table) }, &cfg, scorer, truth)
}

pub fn hybrid_repel(
    state: EntityState,
    query: MentionId,
    table: &InfluenceTable,
    cfg: &SamplerConfig,
    scorer: &Scorer,
    truth: Option<&QueryTruth>,
) -> (EntityState, RunTrace) {
    let cfg = SamplerConfig {
        algorithm: Algorithm::HybridRepel,
        ..cfg.clone()
    };
    run_sampler(state, &QueryTarget { query, table: Some(table) }, &cfg, scorer, truth)
}
