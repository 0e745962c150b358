//! Synthetic labelled corpora with planted query entities.
//!
//! Fixtures are deterministic given their seed. Surfaces are chosen so the
//! query name and its distractors block together, and entities differ only
//! in context, mirroring ambiguous person names.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{attach_queries, ContextLevel, Mention, MentionId, QueryNode};

pub const QUERY_LABEL: &str = "query";

/// The six mentions of the running baseball example and its query.
pub fn worked_example() -> (Vec<Mention>, QueryNode) {
    let rows = [
        ("NY Giants", "giants", "giants football quarterback touchdown meadowlands nfl"),
        ("Bronx Bombers", "yankees", "bronx bombers yankees pinstripes pennant slugger stadium"),
        ("New York Giants", "giants", "football giants nfl touchdown quarterback season"),
        ("Yankees", "yankees", "yankees pinstripes bronx pennant stadium slugger"),
        ("Brooklyn Dodgers", "dodgers", "brooklyn dodgers baseball ebbets field flatbush"),
        ("The Yanks", "yankees", "yanks yankees bronx pinstripes pennant stadium"),
    ];
    let corpus: Vec<Mention> = rows
        .iter()
        .enumerate()
        .map(|(i, (surface, truth, ctx))| {
            Mention::new(MentionId(i as u32), format!("doc{}", i + 1), 0, *surface, *ctx).with_truth(*truth)
        })
        .collect();
    let template = Mention::new(
        MentionId(0),
        "query",
        0,
        "New York Yankees",
        "yankees bronx pinstripes pennant stadium slugger",
    )
    .with_truth("yankees");
    let mut q = [QueryNode::new(template, ContextLevel::Paragraph)];
    attach_queries(&corpus, &mut q);
    let [q] = q;
    (corpus, q)
}

/// Pseudo-words unique to a topic.
fn vocabulary(topic: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{topic}w{k}")).collect()
}

fn context<R: Rng>(rng: &mut R, vocab: &[String], take: usize, noise: &[String], noisy: usize) -> String {
    let mut words: Vec<&str> = vocab.choose_multiple(rng, take).map(String::as_str).collect();
    for _ in 0..noisy {
        words.push(noise.choose(rng).expect("noise pool is non-empty"));
    }
    words.shuffle(rng);
    words.join(" ")
}

/// One planted canopy: `relevant` mentions of the query's entity plus
/// `distractors` mentions spread over `distractor_entities` namesakes.
#[derive(Debug, Clone, PartialEq)]
pub struct CanopySpec {
    pub first: String,
    pub last: String,
    pub relevant: usize,
    pub distractors: usize,
    pub distractor_entities: usize,
}

impl CanopySpec {
    pub fn new(first: &str, last: &str, relevant: usize, distractors: usize, distractor_entities: usize) -> CanopySpec {
        assert!(distractor_entities <= 26, "one middle initial per distractor entity");
        assert!(distractors == 0 || distractor_entities > 0);
        CanopySpec {
            first: first.to_string(),
            last: last.to_string(),
            relevant,
            distractors,
            distractor_entities,
        }
    }

    pub fn size(&self) -> usize {
        self.relevant + self.distractors
    }

    pub fn full_name(&self) -> String {
        format!("{} {}", self.first, self.last)
    }
}

/// A corpus, its queries (ids attached) and each query's gold label.
#[derive(Debug, Clone)]
pub struct Planted {
    pub corpus: Vec<Mention>,
    pub queries: Vec<QueryNode>,
    pub labels: Vec<String>,
}

const VOCAB: usize = 8;
const CONTEXT_WORDS: usize = 5;

/// Build a corpus holding one planted canopy per spec plus `background`
/// mentions whose surfaces block with none of the queries.
pub fn planted(specs: &[CanopySpec], background: usize, seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = vocabulary("noise", 400);
    let mut rows: Vec<(String, String, String)> = Vec::new();
    let mut templates = Vec::new();
    let mut labels = Vec::new();
    for (qi, spec) in specs.iter().enumerate() {
        let gold = format!("{QUERY_LABEL}{qi}");
        let vocab = vocabulary(&format!("q{qi}t"), VOCAB);
        let full = spec.full_name();
        for _ in 0..spec.relevant {
            let surface = if rng.gen_bool(0.8) { full.clone() } else { format!("{full}'s") };
            rows.push((surface, gold.clone(), context(&mut rng, &vocab, CONTEXT_WORDS, &noise, 1)));
        }
        let distractor_vocab: Vec<Vec<String>> = (0..spec.distractor_entities)
            .map(|d| vocabulary(&format!("q{qi}d{d}t"), VOCAB))
            .collect();
        for k in 0..spec.distractors {
            let d = k % spec.distractor_entities;
            let initial = (b'A' + d as u8) as char;
            let surface = format!("{} {initial}. {}", spec.first, spec.last);
            let label = format!("{gold}-namesake{d}");
            rows.push((surface, label, context(&mut rng, &distractor_vocab[d], CONTEXT_WORDS, &noise, 1)));
        }
        templates.push((full, context(&mut rng, &vocab, 6, &noise, 0)));
        labels.push(gold);
    }
    let bg_vocab = vocabulary("background", 40);
    for b in 0..background {
        let surface = format!("Zq{b} Xv{}", b % 7);
        rows.push((surface, format!("background{}", b % 25), context(&mut rng, &bg_vocab, 5, &noise, 1)));
    }
    rows.shuffle(&mut rng);
    let corpus: Vec<Mention> = rows
        .into_iter()
        .enumerate()
        .map(|(i, (surface, label, ctx))| Mention::new(MentionId(i as u32), format!("doc{i}"), 0, surface, ctx).with_truth(label))
        .collect();
    let mut queries: Vec<QueryNode> = templates
        .into_iter()
        .zip(&labels)
        .enumerate()
        .map(|(qi, ((surface, ctx), gold))| {
            let m = Mention::new(MentionId(0), format!("query{qi}"), 0, surface, ctx).with_truth(gold.clone());
            QueryNode::new(m, ContextLevel::Paragraph)
        })
        .collect();
    attach_queries(&corpus, &mut queries);
    Planted { corpus, queries, labels }
}

/// A single 500-mention canopy whose query entity has `selectivity`
/// mentions.
pub fn convergence_fixture(selectivity: usize, seed: u64) -> Planted {
    let spec = CanopySpec::new("Michael", "Jordan", selectivity, 500 - selectivity, 12);
    planted(&[spec], 100, seed)
}

/// Nine queries with the watchlist selectivities; roughly a fifth of each
/// canopy belongs to namesakes.
pub const WATCHLIST_SELECTIVITIES: [usize; 9] = [130, 63, 68, 7, 12, 12, 301, 11, 46];

pub fn watchlist_fixture(seed: u64) -> Planted {
    let names = [
        ("Michael", "Jordan"),
        ("Aurel", "Lazarov"),
        ("Nemo", "Semretti"),
        ("Ingrid", "Vasquez"),
        ("Tobias", "Okonkwo"),
        ("Hana", "Takahashi"),
        ("Rafael", "Montenegro"),
        ("Greta", "Lindqvist"),
        ("Pavel", "Dvorakova"),
    ];
    let specs: Vec<CanopySpec> = WATCHLIST_SELECTIVITIES
        .iter()
        .zip(names)
        .map(|(&s, (first, last))| {
            let distractors = s / 5;
            CanopySpec::new(first, last, s - distractors, distractors, distractors.clamp(1, 3))
        })
        .collect();
    planted(&specs, 100, seed)
}

/// Two people sharing a surname: the query's entity (smaller, tied to
/// keyword `facebook`) and a larger namesake group. The query template
/// carries only the surname.
pub fn ambiguous_alias(seed: u64) -> (Vec<Mention>, Mention) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = vocabulary("noise", 200);
    let mark = vocabulary("tech", VOCAB);
    let other = vocabulary("press", VOCAB);
    let mut rows: Vec<(String, String, String, &str)> = Vec::new();
    for _ in 0..15 {
        rows.push(("Mark Zuckerberg".into(), "mark".into(), context(&mut rng, &mark, CONTEXT_WORDS, &noise, 1), "facebook"));
    }
    for _ in 0..30 {
        rows.push((
            "Mortimer Zuckerberg".into(),
            "mortimer".into(),
            context(&mut rng, &other, CONTEXT_WORDS, &noise, 1),
            "publisher",
        ));
    }
    rows.shuffle(&mut rng);
    let corpus = rows
        .into_iter()
        .enumerate()
        .map(|(i, (surface, label, ctx, kw))| {
            Mention::new(MentionId(i as u32), format!("doc{i}"), 0, surface, ctx)
                .with_truth(label)
                .with_keywords([kw])
        })
        .collect();
    let template = Mention::new(MentionId(0), "query", 0, "Zuckerberg", context(&mut rng, &mark, 4, &noise, 2))
        .with_truth("mark");
    (corpus, template)
}
