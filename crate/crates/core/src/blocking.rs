//! q-gram blocking: an inverted index over mention surfaces and the
//! canopies (candidate sets) it produces for query nodes.

use std::collections::HashMap;

use crate::corpus::{Mention, MentionId, QueryNode};

pub const DEFAULT_Q: usize = 3;
pub const DEFAULT_MIN_JACCARD: f64 = 0.3;
const PAD: char = '#';

/// Gram multiset of a string: lowercase, pad with `q - 1` markers on each
/// side, take every length-`q` window. Returned sorted.
pub fn grams(s: &str, q: usize) -> Vec<String> {
    assert!(q >= 1, "gram length must be at least 1");
    if s.is_empty() {
        return Vec::new();
    }
    let padded: Vec<char> = std::iter::repeat_n(PAD, q - 1)
        .chain(s.to_lowercase().chars())
        .chain(std::iter::repeat_n(PAD, q - 1))
        .collect();
    let mut out: Vec<String> = padded.windows(q).map(|w| w.iter().collect()).collect();
    out.sort();
    out
}

/// Collapse a sorted gram list into (gram, count) runs.
fn counted(sorted: Vec<String>) -> Vec<(String, u32)> {
    let mut out: Vec<(String, u32)> = Vec::new();
    for g in sorted {
        match out.last_mut() {
            Some((last, n)) if *last == g => *n += 1,
            _ => out.push((g, 1)),
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct QGramIndex {
    q: usize,
    /// gram -> (mention, multiplicity), sorted by mention id.
    postings: HashMap<String, Vec<(MentionId, u32)>>,
    gram_counts: HashMap<MentionId, u32>,
}

impl QGramIndex {
    pub fn build(corpus: &[Mention], q: usize) -> QGramIndex {
        let mut postings: HashMap<String, Vec<(MentionId, u32)>> = HashMap::new();
        let mut gram_counts = HashMap::with_capacity(corpus.len());
        let mut ordered: Vec<&Mention> = corpus.iter().collect();
        ordered.sort_by_key(|m| m.id);
        for m in ordered {
            let gs = grams(&m.surface, q);
            gram_counts.insert(m.id, gs.len() as u32);
            for (g, n) in counted(gs) {
                let list = postings.entry(g).or_default();
                if list.last().map(|&(id, _)| id) != Some(m.id) {
                    list.push((m.id, n));
                }
            }
        }
        QGramIndex { q, postings, gram_counts }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.gram_counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gram_counts.is_empty()
    }

    /// Mentions posted under a gram, ascending.
    pub fn posting(&self, gram: &str) -> Vec<MentionId> {
        self.postings
            .get(gram)
            .map(|l| l.iter().map(|&(id, _)| id).collect())
            .unwrap_or_default()
    }

    pub fn gram_count(&self, m: MentionId) -> Option<u32> {
        self.gram_counts.get(&m).copied()
    }

    /// Ids whose gram-multiset Jaccard with `grams(s)` is at least
    /// `min_jaccard`, found by counting shared postings. Sorted ascending.
    pub fn approximate_match(&self, s: &str, min_jaccard: f64) -> Vec<MentionId> {
        let query = grams(s, self.q);
        let total = query.len() as u32;
        if total == 0 {
            return Vec::new();
        }
        let mut shared: HashMap<MentionId, u32> = HashMap::new();
        for (g, n) in counted(query) {
            if let Some(list) = self.postings.get(&g) {
                for &(id, k) in list {
                    *shared.entry(id).or_insert(0) += n.min(k);
                }
            }
        }
        let mut out: Vec<MentionId> = shared
            .into_iter()
            .filter(|&(id, inter)| {
                let union = total + self.gram_counts[&id] - inter;
                inter as f64 / union as f64 >= min_jaccard
            })
            .map(|(id, _)| id)
            .collect();
        out.sort_unstable();
        out
    }

    pub fn canopy(&self, qn: &QueryNode, min_jaccard: f64) -> Canopy {
        let mut members = self.approximate_match(&qn.mention.surface, min_jaccard);
        if !qn.in_corpus {
            members.retain(|&m| m != qn.id());
        }
        Canopy {
            query: qn.id(),
            members,
        }
    }

    pub fn selectivity(&self, qn: &QueryNode, min_jaccard: f64) -> usize {
        self.canopy(qn, min_jaccard).members.len()
    }
}

/// Candidate set for one query node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canopy {
    pub query: MentionId,
    /// Matching corpus mentions, ascending.
    pub members: Vec<MentionId>,
}

impl Canopy {
    /// Members plus the query template, which is appended to the canopy.
    pub fn working_set(&self) -> Vec<MentionId> {
        let mut ids = self.members.clone();
        if !ids.contains(&self.query) {
            ids.push(self.query);
        }
        ids
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ContextLevel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corpus(surfaces: &[&str]) -> Vec<Mention> {
        surfaces
            .iter()
            .enumerate()
            .map(|(i, s)| Mention::new(MentionId(i as u32), format!("d{i}"), 0, *s, "ctx"))
            .collect()
    }

    fn query(surface: &str, id: u32) -> QueryNode {
        QueryNode::new(Mention::new(MentionId(id), "q", 0, surface, ""), ContextLevel::Paragraph)
    }

    #[test]
    fn gram_windows() {
        assert_eq!(grams("a", 2), ["#a", "a#"]);
        assert!(grams("", 3).is_empty());
        let mut abc = grams("abc", 3);
        abc.sort();
        let mut want = vec!["##a", "#ab", "abc", "bc#", "c##"];
        want.sort();
        assert_eq!(abc, want);
        assert_eq!(grams("AB", 1), ["a", "b"]);
    }

    #[test]
    fn shared_gram_between_yankee_variants() {
        let c = corpus(&["Yankees", "The Yanks"]);
        let idx = QGramIndex::build(&c, 3);
        assert_eq!(idx.posting("yan"), [MentionId(0), MentionId(1)]);
    }

    #[test]
    fn empty_index() {
        let idx = QGramIndex::build(&[], 3);
        assert!(idx.is_empty());
        assert_eq!(idx.selectivity(&query("anything", 0), 0.3), 0);
    }

    #[test]
    fn identical_surfaces_share_postings() {
        let c = corpus(&["Mets", "Mets", "Jets"]);
        let idx = QGramIndex::build(&c, 3);
        for g in grams("Mets", 3) {
            let p = idx.posting(&g);
            assert!(p.contains(&MentionId(0)) && p.contains(&MentionId(1)));
        }
    }

    #[test]
    fn exact_duplicate_always_matches() {
        let c = corpus(&["Michael Jordan", "Michael B. Jordan", "Jordan"]);
        let idx = QGramIndex::build(&c, 3);
        for t in [0.01, 0.3, 0.9, 1.0] {
            assert!(idx.approximate_match("michael jordan", t).contains(&MentionId(0)));
        }
        assert_eq!(idx.approximate_match("Michael Jordan", 1.0), [MentionId(0)]);
        assert!(idx.approximate_match("Michael Jordon", 1.0).is_empty());
    }

    #[test]
    fn tiny_threshold_returns_any_shared_gram() {
        let c = corpus(&["abc", "xbc", "zzz"]);
        let idx = QGramIndex::build(&c, 3);
        assert_eq!(idx.approximate_match("abc", 1e-9), [MentionId(0), MentionId(1)]);
    }

    #[test]
    fn monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = random_corpus(&mut rng, 120);
        let idx = QGramIndex::build(&c, 3);
        let mut prev = usize::MAX;
        for k in 1..=20 {
            let n = idx.approximate_match("new york yankees", k as f64 / 20.0).len();
            assert!(n <= prev);
            prev = n;
        }
    }

    fn random_corpus(rng: &mut ChaCha8Rng, n: usize) -> Vec<Mention> {
        let alphabet: Vec<char> = "abcdeynkw ".chars().collect();
        let bases = ["new york yankees", "yankees", "the yanks", "new york mets", "jets"];
        let surfaces: Vec<String> = (0..n)
            .map(|_| {
                let mut s: Vec<char> = bases[rng.gen_range(0..bases.len())].chars().collect();
                for _ in 0..rng.gen_range(0..4) {
                    let i = rng.gen_range(0..s.len());
                    s[i] = alphabet[rng.gen_range(0..alphabet.len())];
                }
                s.into_iter().collect()
            })
            .collect();
        let refs: Vec<&str> = surfaces.iter().map(String::as_str).collect();
        corpus(&refs)
    }

    /// Multiset Jaccard straight from gram counts.
    fn brute_jaccard(a: &str, b: &str) -> f64 {
        let count = |s: &str| {
            let mut m: HashMap<String, u32> = HashMap::new();
            for g in grams(s, 3) {
                *m.entry(g).or_default() += 1;
            }
            m
        };
        let (ca, cb) = (count(a), count(b));
        let inter: u32 = ca.iter().map(|(g, n)| (*n).min(*cb.get(g).unwrap_or(&0))).sum();
        let union: u32 = ca.values().sum::<u32>() + cb.values().sum::<u32>() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    #[test]
    fn matches_brute_force_jaccard() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let c = random_corpus(&mut rng, 200);
        let idx = QGramIndex::build(&c, 3);
        for probe in ["new york yankees", "yanks", "the yankees"] {
            for t in [0.2, 0.3, 0.5, 1.0] {
                let want: Vec<MentionId> =
                    c.iter().filter(|m| brute_jaccard(probe, &m.surface) >= t).map(|m| m.id).collect();
                assert_eq!(idx.approximate_match(probe, t), want, "{probe} at {t}");
            }
        }
    }

    #[test]
    fn canopy_excludes_template_and_counts_selectivity() {
        let c = corpus(&["Yankees", "NY Yankees", "Mets"]);
        let idx = QGramIndex::build(&c, 3);
        let q = query("Yankees", 3);
        let can = idx.canopy(&q, 0.3);
        assert_eq!(can.members, [MentionId(0), MentionId(1)]);
        assert_eq!(can.working_set(), [MentionId(0), MentionId(1), MentionId(3)]);
        assert_eq!(idx.selectivity(&q, 0.3), 2);
        assert!(idx.canopy(&query("Yankee", 3), 1.0).is_empty());
    }
}
