//! Influence of canopy mentions on a query node, rank-decay masses, and
//! Vose alias tables for constant-time biased draws.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::MentionId;
use crate::features::Scorer;

pub const DEFAULT_DECAY_P: f64 = 0.05;
const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum InfluenceError {
    #[error("cannot build a table over zero mentions")]
    Empty,
    #[error("mass {mass} for {id} is negative or not finite")]
    BadMass { id: MentionId, mass: f64 },
    #[error("masses sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("decay parameter p = {0} outside (0, 1)")]
    BadDecay(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Attract,
    Repel,
}

/// Pairwise influence of each mention on the query, keyed by mention id.
pub type InfluenceScores = BTreeMap<MentionId, f64>;

/// Score every id in `ids` against the query with pairwise features only.
/// Computed once; sampling never updates it.
pub fn influence_scores(ids: &[MentionId], query: MentionId, scorer: &Scorer) -> InfluenceScores {
    ids.iter().map(|&m| (m, scorer.pair_score(m, query))).collect()
}

/// Ids ordered by rank: descending score for attract, ascending for repel,
/// ties by ascending id either way.
fn ranked(scores: &InfluenceScores, direction: Direction) -> Vec<MentionId> {
    let mut ids: Vec<(MentionId, f64)> = scores.iter().map(|(&m, &s)| (m, s)).collect();
    ids.sort_by(|a, b| {
        let by_score = match direction {
            Direction::Attract => b.1.total_cmp(&a.1),
            Direction::Repel => a.1.total_cmp(&b.1),
        };
        by_score.then(a.0.cmp(&b.0))
    });
    ids.into_iter().map(|(m, _)| m).collect()
}

fn geometric(ranked: Vec<MentionId>, p: f64) -> Result<Vec<(MentionId, f64)>, InfluenceError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(InfluenceError::BadDecay(p));
    }
    let raw: Vec<f64> = (0..ranked.len()).map(|k| p * (1.0 - p).powi(k as i32)).collect();
    let total: f64 = raw.iter().sum();
    Ok(ranked.into_iter().zip(raw).map(|(m, w)| (m, w / total)).collect())
}

/// Geometric (negative binomial, r = 1) masses over the descending-score
/// ranking: `mass(rank k) ∝ p (1 - p)^k`. Returned in rank order.
pub fn decay_masses(scores: &InfluenceScores, p: f64) -> Result<Vec<(MentionId, f64)>, InfluenceError> {
    geometric(ranked(scores, Direction::Attract), p)
}

/// Alias table encoding a discrete distribution over mention ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceTable {
    pub ids: Vec<MentionId>,
    pub prob: Vec<f64>,
    pub alias: Vec<u32>,
    pub direction: Direction,
    #[serde(skip)]
    ops: u64,
}

impl InfluenceTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Worklist operations performed while building.
    pub fn construction_ops(&self) -> u64 {
        self.ops
    }

    /// Probability the table assigns to each cell, recovered from the
    /// prob/alias arrays.
    pub fn decode(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut mass: Vec<f64> = self.prob.clone();
        for (j, &a) in self.alias.iter().enumerate() {
            mass[a as usize] += 1.0 - self.prob[j];
        }
        mass.iter_mut().for_each(|m| *m /= n);
        mass
    }

    /// One uniform cell choice plus one biased coin. Both draws are always
    /// consumed so the stream position does not depend on the outcome.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> MentionId {
        let cell = rng.gen_range(0..self.ids.len());
        let coin: f64 = rng.gen();
        if coin < self.prob[cell] {
            self.ids[cell]
        } else {
            self.ids[self.alias[cell] as usize]
        }
    }
}

/// Vose's alias construction over (id, mass) pairs.
pub fn build_table(masses: &[(MentionId, f64)], direction: Direction) -> Result<InfluenceTable, InfluenceError> {
    if masses.is_empty() {
        return Err(InfluenceError::Empty);
    }
    for &(id, mass) in masses {
        if mass < 0.0 || !mass.is_finite() {
            return Err(InfluenceError::BadMass { id, mass });
        }
    }
    let total: f64 = masses.iter().map(|&(_, m)| m).sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(InfluenceError::NotNormalized(total));
    }

    let n = masses.len();
    let mut scaled: Vec<f64> = masses.iter().map(|&(_, m)| m * n as f64).collect();
    let mut prob = vec![1.0; n];
    let mut alias: Vec<u32> = (0..n as u32).collect();
    let mut small: Vec<usize> = Vec::with_capacity(n);
    let mut large: Vec<usize> = Vec::with_capacity(n);
    let mut ops = 0u64;
    for (i, &s) in scaled.iter().enumerate() {
        if s < 1.0 {
            small.push(i);
        } else {
            large.push(i);
        }
        ops += 1;
    }
    while let (Some(&l), Some(&g)) = (small.last(), large.last()) {
        small.pop();
        large.pop();
        prob[l] = scaled[l];
        alias[l] = g as u32;
        scaled[g] = (scaled[g] + scaled[l]) - 1.0;
        if scaled[g] < 1.0 {
            small.push(g);
        } else {
            large.push(g);
        }
        ops += 1;
    }
    // Leftovers are full cells up to rounding.
    for i in large.into_iter().chain(small) {
        prob[i] = 1.0;
        alias[i] = i as u32;
        ops += 1;
    }
    Ok(InfluenceTable {
        ids: masses.iter().map(|&(m, _)| m).collect(),
        prob,
        alias,
        direction,
        ops,
    })
}

pub fn build_attract(scores: &InfluenceScores, p: f64) -> Result<InfluenceTable, InfluenceError> {
    build_table(&decay_masses(scores, p)?, Direction::Attract)
}

/// As [`build_attract`] but ranked by ascending score, so the least
/// influential mentions are drawn most often.
pub fn build_repel(scores: &InfluenceScores, p: f64) -> Result<InfluenceTable, InfluenceError> {
    build_table(&geometric(ranked(scores, Direction::Repel), p)?, Direction::Repel)
}

/// Ids whose influence is at least `floor`, ascending.
pub fn influence_canopy_threshold(scores: &InfluenceScores, floor: f64) -> Vec<MentionId> {
    scores.iter().filter(|&(_, &s)| s >= floor).map(|(&m, _)| m).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixture_scores_match_direct_pair_scores() {
        use crate::corpus::{attach_queries, CorpusStats, Mention};
        use crate::features::{pairwise_score, FeatureModel};

        let (mut corpus, q) = crate::synth::worked_example();
        corpus.truncate(5);
        let twin = Mention::new(MentionId(5), "doc9", 0, q.mention.surface.clone(), q.mention.context_text.clone());
        corpus.push(twin);
        let mut queries = [q];
        attach_queries(&corpus, &mut queries);
        let stats = CorpusStats::compute(&corpus).unwrap();
        let model = FeatureModel::default_weights();
        let scorer = Scorer::new(model.clone(), &stats, &corpus, &queries);
        let ids: Vec<MentionId> = corpus.iter().map(|m| m.id).collect();
        let got = influence_scores(&ids, queries[0].id(), &scorer);
        for m in &corpus {
            let direct = pairwise_score(m, &queries[0].mention, &model, &stats);
            assert!((got[&m.id] - direct).abs() < 1e-9, "{}", m.id);
            assert!((pairwise_score(&queries[0].mention, m, &model, &stats) - direct).abs() < 1e-9);
        }
        let best = got.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert_eq!(*best.0, MentionId(5));
    }

    fn scores(pairs: &[(u32, f64)]) -> InfluenceScores {
        pairs.iter().map(|&(m, s)| (MentionId(m), s)).collect()
    }

    fn masses(ms: &[f64]) -> Vec<(MentionId, f64)> {
        ms.iter().enumerate().map(|(i, &m)| (MentionId(i as u32), m)).collect()
    }

    #[test]
    fn decay_examples() {
        assert_eq!(decay_masses(&scores(&[(4, 1.0)]), 0.05).unwrap(), [(MentionId(4), 1.0)]);

        let two = decay_masses(&scores(&[(0, 1.0), (1, 5.0)]), 0.5).unwrap();
        assert_eq!(two[0].0, MentionId(1));
        assert!((two[0].1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((two[1].1 - 1.0 / 3.0).abs() < 1e-12);

        let three = decay_masses(&scores(&[(0, 3.0), (1, 2.0), (2, 1.0)]), 0.05).unwrap();
        let raw = [0.05, 0.05 * 0.95, 0.05 * 0.95 * 0.95];
        let total: f64 = raw.iter().sum();
        for (k, &(_, m)) in three.iter().enumerate() {
            assert!((m - raw[k] / total).abs() < 1e-12);
        }
        assert!((raw[2] - 0.045125).abs() < 1e-15);
    }

    #[test]
    fn ties_rank_by_id() {
        let d = decay_masses(&scores(&[(7, 1.0), (2, 1.0), (5, 1.0)]), 0.5).unwrap();
        let order: Vec<u32> = d.iter().map(|&(m, _)| m.0).collect();
        assert_eq!(order, [2, 5, 7]);
        assert!(decay_masses(&scores(&[(0, 1.0)]), 1.0).is_err());
    }

    #[test]
    fn repel_inverts_ranking() {
        let t = build_repel(&scores(&[(0, 10.0), (1, -5.0)]), 0.5).unwrap();
        assert_eq!(t.direction, Direction::Repel);
        let got: BTreeMap<MentionId, f64> = t.ids.iter().copied().zip(t.decode()).collect();
        assert!((got[&MentionId(1)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((got[&MentionId(0)] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_scores_give_same_attract_and_repel_distribution() {
        let s = scores(&[(0, 2.0), (1, 2.0), (2, 2.0), (3, 2.0)]);
        let a = build_attract(&s, 0.3).unwrap();
        let r = build_repel(&s, 0.3).unwrap();
        assert_eq!(a.ids, r.ids);
        for (x, y) in a.decode().iter().zip(r.decode()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_table_cells_are_full() {
        for n in [1usize, 3, 7, 100] {
            let t = build_table(&masses(&vec![1.0 / n as f64; n]), Direction::Attract).unwrap();
            assert!(t.prob.iter().all(|&p| (p - 1.0).abs() < 1e-9), "n = {n}");
        }
        let one = build_table(&masses(&[1.0]), Direction::Attract).unwrap();
        assert_eq!(one.prob, [1.0]);
    }

    #[test]
    fn decode_identity() {
        let t = build_table(&masses(&[0.5, 0.25, 0.25]), Direction::Attract).unwrap();
        for (got, want) in t.decode().iter().zip([0.5, 0.25, 0.25]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_masses() {
        assert_eq!(build_table(&[], Direction::Attract), Err(InfluenceError::Empty));
        assert!(matches!(
            build_table(&masses(&[1.2, -0.2]), Direction::Attract),
            Err(InfluenceError::BadMass { .. })
        ));
        assert!(matches!(
            build_table(&masses(&[0.5, 0.4]), Direction::Attract),
            Err(InfluenceError::NotNormalized(_))
        ));
    }

    #[test]
    fn single_cell_always_draws_its_id() {
        let t = build_table(&[(MentionId(9), 1.0)], Direction::Attract).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..1000).all(|_| t.draw(&mut rng) == MentionId(9)));
    }

    #[test]
    fn draw_frequencies_match_masses() {
        let want = [0.5, 0.25, 0.25];
        let t = build_table(&masses(&want), Direction::Attract).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0u32; 3];
        let draws = 1_000_000;
        for _ in 0..draws {
            counts[t.draw(&mut rng).index()] += 1;
        }
        for k in 0..3 {
            assert!((counts[k] as f64 / draws as f64 - want[k]).abs() < 0.005);
        }
    }

    #[test]
    fn uniform_draws_pass_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let n = 100;
        let t = build_table(&masses(&vec![0.01; n]), Direction::Attract).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 1_000_000;
        let mut counts = vec![0u32; n];
        for _ in 0..draws {
            counts[t.draw(&mut rng).index()] += 1;
        }
        let expected = draws as f64 / n as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(stat);
        assert!(p > 0.001, "chi-square p = {p}");
    }

    #[test]
    fn repel_draws_match_masses() {
        let s = scores(&[(0, 10.0), (1, -5.0), (2, 3.0), (3, 0.0)]);
        let t = build_repel(&s, 0.3).unwrap();
        let want = t.decode();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0u32; 4];
        for _ in 0..1_000_000 {
            let id = t.draw(&mut rng);
            counts[t.ids.iter().position(|&m| m == id).unwrap()] += 1;
        }
        for k in 0..4 {
            assert!((counts[k] as f64 / 1e6 - want[k]).abs() < 0.01);
        }
    }

    #[test]
    fn construction_work_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut random = |n: usize| {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            masses(&raw.iter().map(|r| r / total).collect::<Vec<_>>())
        };
        for n in [100, 1000, 10_000] {
            let a = build_table(&random(n), Direction::Attract).unwrap().construction_ops();
            let b = build_table(&random(2 * n), Direction::Attract).unwrap().construction_ops();
            assert!(b as f64 <= 2.0 * a as f64 * 1.05, "{a} -> {b}");
            assert!(a as usize <= 2 * n);
        }
    }

    #[test]
    fn floor_filter() {
        let s = scores(&[(0, 3.0), (1, 1.0), (2, -2.0)]);
        assert_eq!(influence_canopy_threshold(&s, f64::NEG_INFINITY).len(), 3);
        assert!(influence_canopy_threshold(&s, 3.5).is_empty());
        assert_eq!(influence_canopy_threshold(&s, 0.0), [MentionId(0), MentionId(1)]);
    }
}
