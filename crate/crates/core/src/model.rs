//! The MCMC state: a partition of mentions into entities, single-mention
//! moves between entities, and the acceptance rule.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::MentionId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("cannot initialize a state over an empty mention set")]
    EmptyInit,
    #[error("mention {0} appears twice in the initial clustering")]
    DuplicateMention(MentionId),
    #[error("move precondition violated: {mention} is not in {source_entity}")]
    NotInSource {
        mention: MentionId,
        source_entity: EntityId,
    },
    #[error("move target {0} is neither live nor the next fresh entity id")]
    UnknownTarget(EntityId),
}

/// Moves `mention` out of `source` into `target`. A target equal to
/// [`EntityState::fresh_id`] creates a new entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Move {
    pub mention: MentionId,
    pub source: EntityId,
    pub target: EntityId,
}

impl Move {
    pub fn new(mention: MentionId, source: EntityId, target: EntityId) -> Move {
        Move {
            mention,
            source,
            target,
        }
    }

    pub fn is_noop(&self) -> bool {
        self.source == self.target
    }
}

#[derive(Debug, Clone)]
struct Entity {
    members: Vec<MentionId>,
    order_pos: usize,
    version: u64,
}

/// Partition of a mention set into entities.
///
/// Entities are kept in an insertion-ordered list (with swap-removal) so that
/// uniform entity draws are O(1) and reproducible; member lists use the same
/// scheme. Entity ids come from a monotone counter and are never reused.
#[derive(Debug, Clone)]
pub struct EntityState {
    assignment: Vec<Option<EntityId>>,
    slot: Vec<u32>,
    entities: HashMap<EntityId, Entity>,
    order: Vec<EntityId>,
    next_entity_id: u32,
    mention_count: usize,
}

impl EntityState {
    /// Every mention in its own entity, entity ids in input order.
    pub fn init_singletons(ids: &[MentionId]) -> Result<EntityState, ModelError> {
        let clusters: Vec<Vec<MentionId>> = ids.iter().map(|&m| vec![m]).collect();
        EntityState::from_clusters(&clusters)
    }

    /// All mentions in one entity.
    pub fn init_single_cluster(ids: &[MentionId]) -> Result<EntityState, ModelError> {
        EntityState::from_clusters(&[ids.to_vec()])
    }

    /// Build a state from explicit clusters; empty clusters are skipped.
    pub fn from_clusters(clusters: &[Vec<MentionId>]) -> Result<EntityState, ModelError> {
        let max_id = clusters
            .iter()
            .flatten()
            .map(|m| m.index())
            .max()
            .ok_or(ModelError::EmptyInit)?;
        let mut state = EntityState {
            assignment: vec![None; max_id + 1],
            slot: vec![0; max_id + 1],
            entities: HashMap::new(),
            order: Vec::new(),
            next_entity_id: 0,
            mention_count: 0,
        };
        for cluster in clusters.iter().filter(|c| !c.is_empty()) {
            let id = EntityId(state.next_entity_id);
            state.next_entity_id += 1;
            for (i, &m) in cluster.iter().enumerate() {
                if state.assignment[m.index()].is_some() {
                    return Err(ModelError::DuplicateMention(m));
                }
                state.assignment[m.index()] = Some(id);
                state.slot[m.index()] = i as u32;
            }
            state.mention_count += cluster.len();
            state.entities.insert(
                id,
                Entity {
                    members: cluster.clone(),
                    order_pos: state.order.len(),
                    version: 0,
                },
            );
            state.order.push(id);
        }
        Ok(state)
    }

    #[inline]
    pub fn entity_of(&self, m: MentionId) -> Option<EntityId> {
        self.assignment.get(m.index()).copied().flatten()
    }

    pub fn contains(&self, m: MentionId) -> bool {
        self.entity_of(m).is_some()
    }

    /// Members of a live entity; empty for unknown ids (e.g. a fresh id).
    pub fn members(&self, e: EntityId) -> &[MentionId] {
        self.entities
            .get(&e)
            .map(|ent| ent.members.as_slice())
            .unwrap_or(&[])
    }

    pub fn is_live(&self, e: EntityId) -> bool {
        self.entities.contains_key(&e)
    }

    pub fn entity_count(&self) -> usize {
        self.order.len()
    }

    pub fn mention_count(&self) -> usize {
        self.mention_count
    }

    /// Entity at a position of the internal order; used for uniform draws.
    #[inline]
    pub fn entity_at(&self, idx: usize) -> EntityId {
        self.order[idx]
    }

    pub fn position_of(&self, e: EntityId) -> Option<usize> {
        self.entities.get(&e).map(|ent| ent.order_pos)
    }

    /// Id the next created entity will receive.
    pub fn fresh_id(&self) -> EntityId {
        EntityId(self.next_entity_id)
    }

    pub fn version(&self, e: EntityId) -> u64 {
        self.entities.get(&e).map(|ent| ent.version).unwrap_or(0)
    }

    pub fn entity_ids(&self) -> &[EntityId] {
        &self.order
    }

    /// Mentions in the state, ascending.
    pub fn mentions(&self) -> Vec<MentionId> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_some())
            .map(|(i, _)| MentionId(i as u32))
            .collect()
    }

    pub fn apply_move(&mut self, mv: &Move) -> Result<(), ModelError> {
        if self.entity_of(mv.mention) != Some(mv.source) {
            return Err(ModelError::NotInSource {
                mention: mv.mention,
                source_entity: mv.source,
            });
        }
        if mv.is_noop() {
            return Ok(());
        }
        if !self.entities.contains_key(&mv.target) {
            if mv.target.0 != self.next_entity_id {
                return Err(ModelError::UnknownTarget(mv.target));
            }
            self.next_entity_id += 1;
            self.entities.insert(
                mv.target,
                Entity {
                    members: Vec::new(),
                    order_pos: self.order.len(),
                    version: 0,
                },
            );
            self.order.push(mv.target);
        }

        let m = mv.mention;
        let src = self.entities.get_mut(&mv.source).expect("source is live");
        let pos = self.slot[m.index()] as usize;
        src.members.swap_remove(pos);
        if let Some(&moved) = src.members.get(pos) {
            self.slot[moved.index()] = pos as u32;
        }
        src.version += 1;
        let src_empty = src.members.is_empty();

        let tgt = self.entities.get_mut(&mv.target).expect("target is live");
        self.slot[m.index()] = tgt.members.len() as u32;
        tgt.members.push(m);
        tgt.version += 1;
        self.assignment[m.index()] = Some(mv.target);

        if src_empty {
            self.remove_entity(mv.source);
        }
        Ok(())
    }

    fn remove_entity(&mut self, e: EntityId) {
        let ent = self.entities.remove(&e).expect("entity is live");
        let pos = ent.order_pos;
        self.order.swap_remove(pos);
        if let Some(&moved) = self.order.get(pos) {
            self.entities.get_mut(&moved).expect("moved entity is live").order_pos = pos;
        }
    }

    /// Canonical form: each cluster sorted, clusters sorted by first member.
    pub fn clusters(&self) -> Vec<Vec<MentionId>> {
        let mut out: Vec<Vec<MentionId>> = self
            .order
            .iter()
            .map(|e| {
                let mut c = self.entities[e].members.clone();
                c.sort_unstable();
                c
            })
            .collect();
        out.sort();
        out
    }

    /// Full consistency check of the partition bookkeeping.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = 0usize;
        if self.order.len() != self.entities.len() {
            return Err("entity order and map disagree".into());
        }
        for (pos, e) in self.order.iter().enumerate() {
            let ent = self.entities.get(e).ok_or_else(|| format!("{e} in order but not in map"))?;
            if ent.order_pos != pos {
                return Err(format!("{e} has stale order position"));
            }
            if ent.members.is_empty() {
                return Err(format!("{e} is empty"));
            }
            if e.0 >= self.next_entity_id {
                return Err(format!("{e} is beyond the id counter"));
            }
            for (i, m) in ent.members.iter().enumerate() {
                if self.entity_of(*m) != Some(*e) {
                    return Err(format!("{m} listed in {e} but assigned elsewhere"));
                }
                if self.slot[m.index()] as usize != i {
                    return Err(format!("{m} has stale slot"));
                }
            }
            seen += ent.members.len();
        }
        let assigned = self.assignment.iter().filter(|a| a.is_some()).count();
        if seen != assigned || seen != self.mention_count {
            return Err(format!(
                "member count {seen} vs assigned {assigned} vs expected {}",
                self.mention_count
            ));
        }
        Ok(())
    }

    /// One json object per entity: `{"entity_id": .., "members": [..]}`.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut ids: Vec<EntityId> = self.order.clone();
        ids.sort_unstable();
        for e in ids {
            let mut members = self.entities[&e].members.clone();
            members.sort_unstable();
            let rec = EntityRecord {
                entity_id: e,
                members,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: EntityId,
    pub members: Vec<MentionId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcceptanceMode {
    /// Keep a proposal only if it strictly improves the model score.
    #[default]
    Greedy,
    /// Keep with probability `min(1, exp(delta))`.
    Metropolis,
}

impl FromStr for AcceptanceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "greedy" => Ok(AcceptanceMode::Greedy),
            "metropolis" | "mh" => Ok(AcceptanceMode::Metropolis),
            other => Err(format!("unknown acceptance mode {other:?}")),
        }
    }
}

/// Acceptance decision for a log-score difference. Metropolis mode always
/// consumes exactly one uniform draw.
pub fn accept<R: Rng + ?Sized>(delta: f64, mode: AcceptanceMode, rng: &mut R) -> bool {
    match mode {
        AcceptanceMode::Greedy => delta > 0.0,
        AcceptanceMode::Metropolis => {
            let u: f64 = rng.gen();
            u < delta.exp()
        }
    }
}
