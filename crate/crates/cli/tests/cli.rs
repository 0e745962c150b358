use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qder::corpus::{to_jsonl_string, write_watchlist, QueryNode};
use qder::synth::{ambiguous_alias, planted, CanopySpec};

fn qder(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qder"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json_lines(o: &Output) -> Vec<serde_json::Value> {
    stdout(o).lines().filter(|l| l.starts_with('{')).map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn rows(o: &Output) -> Vec<String> {
    stdout(o)
        .lines()
        .filter(|l| !l.starts_with('{') && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

fn write_queries(path: &Path, queries: &[QueryNode]) {
    let mut buf = Vec::new();
    write_watchlist(&mut buf, queries).unwrap();
    fs::write(path, buf).unwrap();
}

/// Two planted canopies plus background.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let p = planted(
        &[CanopySpec::new("Ada", "Quill", 10, 6, 2), CanopySpec::new("Boris", "Kettle", 5, 3, 1)],
        20,
        7,
    );
    fs::write(dir.path().join("corpus.jsonl"), to_jsonl_string(&p.corpus)).unwrap();
    write_queries(&dir.path().join("watchlist.jsonl"), &p.queries);
    write_queries(&dir.path().join("single.jsonl"), &p.queries[..1]);
    fs::write(
        dir.path().join("exp.toml"),
        "corpus = \"corpus.jsonl\"\nqueries = \"watchlist.jsonl\"\nalgorithms = [\"hybrid-attract\", \"target-fixed\"]\nseeds = [1, 2]\nbudget = 400\n",
    )
    .unwrap();
    Fixture { dir }
}

#[test]
fn help_matches_golden() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for cmd in ["", "index", "stats", "query", "watchlist", "eval", "bench"] {
        let mut args: Vec<&str> = Vec::new();
        if !cmd.is_empty() {
            args.push(cmd);
        }
        args.push("--help");
        let out = qder(&args);
        assert_eq!(code(&out), 0);
        let name = if cmd.is_empty() { "help.txt".to_string() } else { format!("help-{cmd}.txt") };
        let path = golden.join(name);
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            fs::create_dir_all(&golden).unwrap();
            fs::write(&path, &out.stdout).unwrap();
        }
        let want = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
        assert_eq!(stdout(&out), want, "{cmd} --help drifted; rerun with UPDATE_GOLDEN=1");
    }
}

#[test]
fn help_documents_every_flag() {
    let text = stdout(&qder(&["query", "--help"])) + &stdout(&qder(&["watchlist", "--help"])) + &stdout(&qder(&["bench", "--help"]));
    for flag in [
        "--corpus",
        "--format",
        "--surface",
        "--context-level",
        "--keywords",
        "--algorithm",
        "--acceptance",
        "--tau-alpha",
        "--samples",
        "--q",
        "--min-jaccard",
        "--schedule",
        "--k-slice",
        "--window",
        "--seed",
        "--workers",
        "--contention-policy",
        "--out",
        "--exhaustive",
    ] {
        assert!(text.contains(flag), "{flag} undocumented");
    }
}

#[test]
fn usage_errors_exit_64() {
    let f = fixture();
    let corpus = f.arg("corpus.jsonl");
    for args in [
        vec!["query", "--corpus", &corpus],
        vec!["query", "--corpus", &corpus, "--surface", "Ada Quill", "--algorithm", "gibbs"],
        vec!["query", "--corpus", &corpus, "--surface", "Ada Quill", "--tau-alpha", "1.5"],
        vec!["query", "--corpus", &corpus, "--surface", "Ada Quill", "--context-level", "chapter"],
        vec!["query", "--corpus", &corpus, "--surface", "Ada Quill", "--exhaustive"],
        vec!["watchlist", "--corpus", &corpus, "--watchlist", "x", "--schedule", "fifo"],
        vec!["frobnicate"],
    ] {
        let out = qder(&args);
        assert_eq!(code(&out), 64, "{args:?}");
    }
}

#[test]
fn query_returns_the_query_entity() {
    let f = fixture();
    let out = qder(&[
        "query",
        "--corpus",
        &f.arg("corpus.jsonl"),
        "--surface",
        "Ada Quill",
        "--samples",
        "3000",
        "--seed",
        "4",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = &json_lines(&out)[0];
    assert_eq!(summary["proposals"], 3000);
    assert_eq!(summary["canopy_size"], 16);
    let rows = rows(&out);
    assert_eq!(rows.len() as u64, summary["entity_size"].as_u64().unwrap());
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.split('\t').count() == 3 && r.contains("Ada")));
    for key in ["blocking_secs", "table_secs", "inference_secs", "total_secs"] {
        assert!(summary["timings"][key].is_number());
    }
}

#[test]
fn zero_samples_returns_initialization() {
    let f = fixture();
    let corpus = f.arg("corpus.jsonl");
    let attract = qder(&["query", "--corpus", &corpus, "--surface", "Ada Quill", "--samples", "0"]);
    assert_eq!(code(&attract), 0);
    assert!(rows(&attract).is_empty());
    assert_eq!(json_lines(&attract)[0]["proposals"], 0);
    let repel = qder(&[
        "query",
        "--corpus",
        &corpus,
        "--surface",
        "Ada Quill",
        "--samples",
        "0",
        "--algorithm",
        "hybrid-repel",
    ]);
    assert_eq!(rows(&repel).len(), 16);
}

#[test]
fn query_is_deterministic_per_seed() {
    let f = fixture();
    let corpus = f.arg("corpus.jsonl");
    let run = |seed: &str| {
        let o = qder(&[
            "query",
            "--corpus",
            &corpus,
            "--surface",
            "Ada Quill",
            "--samples",
            "500",
            "--tau-alpha",
            "0.5",
            "--seed",
            seed,
        ]);
        let mut s = json_lines(&o).remove(0);
        s.as_object_mut().unwrap().remove("timings");
        (rows(&o), s)
    };
    assert_eq!(run("3"), run("3"));
}

#[test]
fn empty_canopy_exits_2() {
    let f = fixture();
    let out = qder(&["query", "--corpus", &f.arg("corpus.jsonl"), "--surface", "Wxyzzy Plonk"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty canopy"));
}

#[test]
fn keywords_select_the_right_namesake() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, template) = ambiguous_alias(1);
    let path = dir.path().join("alias.jsonl");
    fs::write(&path, to_jsonl_string(&corpus)).unwrap();
    let out = qder(&[
        "query",
        "--corpus",
        path.to_str().unwrap(),
        "--surface",
        "zuckerberg",
        "--context",
        &template.context_text,
        "--algorithm",
        "hybrid-repel",
        "--keywords",
        "facebook,ceo",
        "--samples",
        "5000",
    ]);
    assert_eq!(code(&out), 0);
    let rows = rows(&out);
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.ends_with("Mark Zuckerberg")), "{rows:?}");
}

#[test]
fn exhaustive_baseline_runs_over_the_corpus() {
    let f = fixture();
    let out = qder(&[
        "query",
        "--corpus",
        &f.arg("corpus.jsonl"),
        "--surface",
        "Ada Quill",
        "--algorithm",
        "baseline",
        "--exhaustive",
        "--samples",
        "2000",
    ]);
    assert_eq!(code(&out), 0);
    let s = &json_lines(&out)[0];
    assert_eq!(s["canopy_size"], 44);
    assert_eq!(s["proposals"], 2000);
}

#[test]
fn parallel_query_reports_contention() {
    let f = fixture();
    let out = qder(&[
        "query",
        "--corpus",
        &f.arg("corpus.jsonl"),
        "--surface",
        "Ada Quill",
        "--workers",
        "4",
        "--samples",
        "4000",
        "--contention-policy",
        "baseline_fallback",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let s = &json_lines(&out)[0];
    assert_eq!(s["proposals"], 4000);
    for key in ["attempts", "failures", "fallbacks"] {
        assert!(s["contention"][key].is_u64());
    }
}

#[test]
fn single_query_watchlist_matches_query() {
    let f = fixture();
    let corpus = f.arg("corpus.jsonl");
    let wl = qder(&[
        "watchlist",
        "--corpus",
        &corpus,
        "--watchlist",
        &f.arg("single.jsonl"),
        "--samples",
        "1500",
        "--seed",
        "9",
        "--out",
        &f.arg("wl"),
    ]);
    assert_eq!(code(&wl), 0, "{}", String::from_utf8_lossy(&wl.stderr));
    let line = fs::read_to_string(f.path("single.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    let context = rec["context"].as_str().unwrap();
    let q = qder(&[
        "query",
        "--corpus",
        &corpus,
        "--surface",
        "Ada Quill",
        "--context",
        context,
        "--samples",
        "1500",
        "--seed",
        "9",
    ]);
    assert_eq!(rows(&wl), rows(&q));
}

#[test]
fn watchlist_sections_and_aggregate() {
    let f = fixture();
    for schedule in ["selectivity", "random", "closest", "farthest"] {
        let out = qder(&[
            "watchlist",
            "--corpus",
            &f.arg("corpus.jsonl"),
            "--watchlist",
            &f.arg("watchlist.jsonl"),
            "--schedule",
            schedule,
            "--samples",
            "2000",
            "--k-slice",
            "250",
            "--out",
            &f.arg("wl"),
        ]);
        assert_eq!(code(&out), 0);
        let text = stdout(&out);
        assert_eq!(text.lines().filter(|l| l.starts_with("# query")).count(), 2);
        let last = json_lines(&out).pop().unwrap();
        assert_eq!(last["proposals"], 2000);
        let agg = PathBuf::from(last["aggregate"].as_str().unwrap());
        let csv = fs::read_to_string(agg).unwrap();
        assert!(csv.starts_with("cumulative_proposals,mean_f1_q,pooled_f1_q,f1_q_0,f1_q_1"));
    }
}

#[test]
fn index_and_stats() {
    let f = fixture();
    let idx = qder(&["index", "--corpus", &f.arg("corpus.jsonl")]);
    assert_eq!(code(&idx), 0);
    assert_eq!(json_lines(&idx)[0]["mentions"], 44);
    let st = qder(&["stats", "--corpus", &f.arg("corpus.jsonl")]);
    let s = &json_lines(&st)[0];
    assert_eq!(s["mentions"], 44);
    assert_eq!(s["labelled_mentions"], 44);
    let missing = qder(&["stats", "--corpus", &f.arg("nope.jsonl")]);
    assert_eq!(code(&missing), 1);
}

#[test]
fn eval_populates_results() {
    let f = fixture();
    let out = qder(&["eval", &f.arg("exp.toml"), "--out", &f.arg("res")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(f.path("res/summary.json").exists());
    assert_eq!(fs::read_dir(f.path("res/traces")).unwrap().count(), 8);
}

#[test]
fn spec_errors_exit_65() {
    let f = fixture();
    assert_eq!(code(&qder(&["eval", &f.arg("missing.toml"), "--out", &f.arg("r")])), 65);
    fs::write(f.path("bad.toml"), "corpus = \"corpus.jsonl\"\nqueries = \"watchlist.jsonl\"\nalgorithms = [\"gibbs\"]\nseeds = [1]\nbudget = 10\n").unwrap();
    assert_eq!(code(&qder(&["eval", &f.arg("bad.toml"), "--out", &f.arg("r")])), 65);
    assert_eq!(code(&qder(&["bench", &f.arg("missing.toml")])), 65);
}

#[test]
fn bench_records_one_line_per_worker_count() {
    let f = fixture();
    let out = qder(&["bench", &f.arg("exp.toml"), "--workers", "1,2,4", "--out", &f.arg("bench")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let records = json_lines(&out);
    assert_eq!(records.len(), 3);
    for (r, w) in records.iter().zip([1, 2, 4]) {
        assert_eq!(r["workers"], w);
        assert_eq!(r["stats"]["proposals"], 400 * w);
    }
    let saved: serde_json::Value = serde_json::from_slice(&fs::read(f.path("bench/bench.json")).unwrap()).unwrap();
    assert_eq!(saved.as_array().unwrap().len(), 3);
}
