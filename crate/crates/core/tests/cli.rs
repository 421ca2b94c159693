mod common;

use std::collections::HashMap;
use std::path::Path;

use common::stub::{completion, Stub};
use serde_json::Value;
use tablight::cli::{self, Prediction, RunReport};
use tablight::evidence::LabeledSample;

fn run(args: &[&str]) -> RunReport {
    run_env(args, &[])
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> RunReport {
    let mut argv = vec!["tablight"];
    argv.extend_from_slice(args);
    cli::execute(argv, env.iter().map(|(k, v)| (k.to_string(), v.to_string())))
}

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        Work {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_str().unwrap().to_string()
    }

    /// The first `n` toy samples.
    fn toy(&self, n: usize) -> String {
        let text = std::fs::read_to_string(common::toy_dataset()).unwrap();
        let lines: Vec<&str> = text.lines().take(n).collect();
        let path = self.path(&format!("toy{n}.jsonl"));
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        path
    }
}

fn lines(path: &str) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn labels(path: &str) -> Vec<LabeledSample> {
    lines(path)
        .into_iter()
        .map(|v| serde_json::from_value(v).unwrap())
        .collect()
}

fn total_rows(dataset: &str) -> usize {
    lines(dataset).iter().map(|v| v["rows"].as_array().unwrap().len()).sum()
}

#[test]
fn ingest_canonical_fetaqa_and_bad_input() {
    let w = Work::new();
    let out = w.path("canon.jsonl");
    let toy = common::toy_dataset();
    assert_eq!(
        run(&["ingest", "--input", toy.to_str().unwrap(), "--output", &out]).exit_code,
        0
    );
    assert_eq!(
        lines(&out),
        lines(toy.to_str().unwrap())
            .iter()
            .map(normalize_toy)
            .collect::<Vec<_>>()
    );

    let feta = w.path("feta.jsonl");
    std::fs::write(
        &feta,
        r#"{"feta_id": 7, "table_page_title": "Clubs", "table_section_title": "Honours", "table_array": [["Year", "Club"], ["1999", "Ajax"]], "highlighted_cell_ids": [[1, 1]], "question": "Who won?", "answer": "Ajax won."}"#,
    )
    .unwrap();
    let out = w.path("feta_out.jsonl");
    assert_eq!(
        run(&["ingest", "--input", &feta, "--format", "fetaqa", "--output", &out]).exit_code,
        0
    );
    let rec = &lines(&out)[0];
    assert_eq!(rec["id"], "7");
    assert_eq!(rec["title"], "Clubs - Honours");
    assert_eq!(rec["rows"][0][1], "Ajax");

    let bad = w.path("bad.jsonl");
    std::fs::write(&bad, "{\"id\": \"x\"}\nnot json\n").unwrap();
    let out = w.path("bad_out.jsonl");
    assert_eq!(run(&["ingest", "--input", &bad, "--output", &out]).exit_code, 2);
    assert!(!Path::new(&out).exists());
    assert_eq!(
        run(&["ingest", "--input", &bad, "--output", &out, "--lenient"]).exit_code,
        0
    );
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "");
    assert_eq!(
        run(&["ingest", "--input", &bad, "--format", "nope", "--output", &out]).exit_code,
        2
    );
}

/// Canonical output always carries `title` and `evidence`.
fn normalize_toy(v: &Value) -> Value {
    let mut v = v.clone();
    let obj = v.as_object_mut().unwrap();
    obj.entry("evidence").or_insert(Value::Null);
    obj.entry("title").or_insert(Value::String(String::new()));
    v
}

#[test]
fn search_labels_call_count_cache_and_resume() {
    let w = Work::new();
    let toy = w.toy(5);
    let out = w.path("search.jsonl");
    let trace = w.path("trace.jsonl");
    let cache = w.path("cache");
    let args = |out: &str| {
        vec![
            "search-labels".to_string(),
            "--dataset".into(),
            toy.clone(),
            "--set".into(),
            "feedbacker_backend=echo".into(),
            "--cache-dir".into(),
            cache.clone(),
            "--output".into(),
            out.to_string(),
        ]
    };
    let mut first_args = args(&out);
    first_args.extend(["--trace".to_string(), trace.clone()]);
    let first = run(&first_args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(first.exit_code, 0);
    assert_eq!(first.oracle_calls, 2 * total_rows(&toy));
    let ls = labels(&out);
    assert_eq!(ls.len(), 5);
    assert!(ls.iter().all(|l| l.e_search.as_ref().is_some_and(|e| !e.is_empty())));
    let traces = lines(&trace);
    assert_eq!(traces.len(), 5);
    assert_eq!(
        traces
            .iter()
            .map(|t| t["oracle_calls"].as_u64().unwrap() as usize)
            .sum::<usize>(),
        first.oracle_calls
    );

    let warm_out = w.path("search2.jsonl");
    let warm = run(&args(&warm_out).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(warm.exit_code, 0);
    assert_eq!(warm.generator_calls, 0);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&warm_out).unwrap());

    // Rerunning into the same file resumes: nothing new is written.
    let again = run(&args(&out).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(again.exit_code, 0);
    assert_eq!(again.job.unwrap().resumed, 5);
    assert_eq!(labels(&out).len(), 5);
}

#[test]
fn interrupted_output_is_completed_without_duplicates() {
    let w = Work::new();
    let toy = w.toy(5);
    let full = w.path("full.jsonl");
    let args = |out: &str| {
        run(&[
            "search-labels",
            "--dataset",
            &toy,
            "--set",
            "feedbacker_backend=echo",
            "--output",
            out,
        ])
    };
    assert_eq!(args(&full).exit_code, 0);

    // Keep two complete lines and half of the third.
    let text = std::fs::read_to_string(&full).unwrap();
    let cut: usize = text.lines().take(2).map(|l| l.len() + 1).sum::<usize>() + 10;
    let partial = w.path("partial.jsonl");
    std::fs::write(&partial, &text[..cut]).unwrap();
    let resumed = args(&partial);
    assert_eq!(resumed.job.unwrap().resumed, 2);
    assert_eq!(std::fs::read_to_string(&partial).unwrap(), text);
}

#[test]
fn unreachable_endpoint_exits_with_backend_code() {
    let w = Work::new();
    let toy = w.toy(2);
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let endpoint = format!("endpoint=http://127.0.0.1:{port}");
    let r = run(&[
        "search-labels",
        "--dataset",
        &toy,
        "--set",
        "feedbacker_model=m",
        "--set",
        &endpoint,
        "--set",
        "max_attempts=1",
        "--output",
        &w.path("x.jsonl"),
    ]);
    assert_eq!(r.exit_code, 3);
    let job = r.job.unwrap();
    assert_eq!(job.failures.len(), 2);
    assert!(job.failures[0].1.contains("transport"));
}

#[test]
fn missing_model_or_bad_config_is_a_validation_error() {
    let w = Work::new();
    let toy = w.toy(2);
    let out = w.path("x.jsonl");
    assert_eq!(
        run(&["search-labels", "--dataset", &toy, "--output", &out]).exit_code,
        2
    );
    assert_eq!(
        run(&[
            "search-labels",
            "--dataset",
            &toy,
            "--set",
            "nonsense=1",
            "--output",
            &out
        ])
        .exit_code,
        2
    );
    assert_eq!(
        run(&["search-labels", "--dataset", "/nonexistent.jsonl", "--output", &out]).exit_code,
        2
    );
    assert_eq!(run(&["no-such-command"]).exit_code, 2);
}

#[test]
fn merge_search_only_labels_is_free() {
    let w = Work::new();
    let toy = w.toy(10);
    let search = w.path("search.jsonl");
    assert_eq!(
        run(&[
            "search-labels",
            "--dataset",
            &toy,
            "--set",
            "feedbacker_backend=echo",
            "--output",
            &search
        ])
        .exit_code,
        0
    );
    // Drop the manual evidence so search is the only source.
    let no_manual = w.path("no_manual.jsonl");
    let stripped: Vec<String> = lines(&toy)
        .into_iter()
        .map(|mut v| {
            v["evidence"] = Value::Null;
            v.to_string()
        })
        .collect();
    std::fs::write(&no_manual, stripped.join("\n") + "\n").unwrap();
    let search_only: Vec<String> = labels(&search)
        .into_iter()
        .map(|mut l| {
            l.e_manual = None;
            serde_json::to_string(&l).unwrap()
        })
        .collect();
    std::fs::write(&search, search_only.join("\n") + "\n").unwrap();

    let merged = w.path("merged.jsonl");
    let r = run(&[
        "merge-labels",
        "--dataset",
        &no_manual,
        "--set",
        "feedbacker_backend=echo",
        "--labels",
        &search,
        "--output",
        &merged,
    ]);
    assert_eq!(r.exit_code, 0);
    assert_eq!(r.oracle_calls, 0);
    assert_eq!(r.generator_calls, 0);
    for l in labels(&merged) {
        assert_eq!(l.e_merge, l.e_search);
        assert!(l.flags.contains(&"merge:search".to_string()));
    }
}

#[test]
fn merge_two_sources_takes_argmax() {
    let w = Work::new();
    let toy = w.toy(10);
    let search = w.path("search.jsonl");
    let distill = w.path("distill.jsonl");
    let merged = w.path("merged.jsonl");
    assert_eq!(
        run(&[
            "search-labels",
            "--dataset",
            &toy,
            "--set",
            "feedbacker_backend=echo",
            "--output",
            &search
        ])
        .exit_code,
        0
    );
    assert_eq!(
        run(&[
            "distill-labels",
            "--dataset",
            &toy,
            "--set",
            "distiller_backend=static:{1}",
            "--output",
            &distill
        ])
        .exit_code,
        0
    );
    let r = run(&[
        "merge-labels",
        "--dataset",
        &toy,
        "--set",
        "feedbacker_backend=echo",
        "--labels",
        &search,
        "--labels",
        &distill,
        "--output",
        &merged,
    ]);
    assert_eq!(r.exit_code, 0);
    assert!(r.oracle_calls > 0);
    for l in labels(&merged) {
        let best = l.rewards.values().map(|r| r.value()).fold(0.0, f64::max);
        let winner = l.flags.iter().find_map(|f| f.strip_prefix("merge:")).unwrap();
        if l.rewards.is_empty() {
            assert!(l.flags.contains(&"single-candidate".to_string()));
        } else {
            assert_eq!(l.rewards[winner].value(), best, "{}", l.id);
        }
    }
}

#[test]
fn distill_stub_outputs() {
    let w = Work::new();
    let toy = w.toy(5);
    let out = w.path("d.jsonl");
    let r = run(&[
        "distill-labels",
        "--dataset",
        &toy,
        "--set",
        "distiller_backend=static:{2}",
        "--output",
        &out,
    ]);
    assert_eq!(r.exit_code, 0);
    assert!(labels(&out)
        .iter()
        .all(|l| l.e_distill.as_ref().map(|e| e.indices().to_vec()) == Some(vec![2])));

    let prose = w.path("prose.jsonl");
    let r = run(&[
        "distill-labels",
        "--dataset",
        &toy,
        "--set",
        "distiller_backend=static:I am not sure.",
        "--output",
        &prose,
    ]);
    assert_eq!(r.exit_code, 0);
    let ls = labels(&prose);
    assert_eq!(ls.len(), 5);
    assert!(ls
        .iter()
        .all(|l| l.e_distill.is_none() && l.flags.contains(&"distill-failed".to_string())));
}

fn predictions(path: &str) -> Vec<Prediction> {
    lines(path)
        .into_iter()
        .map(|v| serde_json::from_value(v).unwrap())
        .collect()
}

#[test]
fn no_highlight_prompts_have_no_stars() {
    let w = Work::new();
    let toy = w.toy(10);
    let mut stub = Stub::spawn(None, |_, _| (200, completion("A summary.")));
    let endpoint = format!("endpoint={}", stub.url);
    let out = w.path("p.jsonl");
    let r = run(&[
        "pipeline",
        "--dataset",
        &toy,
        "--mode",
        "no_highlight",
        "--set",
        &endpoint,
        "--set",
        "summarizer_model=stub",
        "--output",
        &out,
    ]);
    assert_eq!(r.exit_code, 0);
    let seen = stub.seen();
    assert_eq!(seen.len(), 10);
    for s in &seen {
        assert!(!s.prompt().contains('*'));
        assert!(s.prompt().ends_with("###Output\n"));
        assert_eq!(s.body["model"], "stub");
    }
    assert!(predictions(&out)
        .iter()
        .all(|p| p.evidence.is_empty() && p.prediction == "A summary."));
}

#[test]
fn full_and_subtab_modes_shape_the_summarizer_input() {
    let w = Work::new();
    let toy = w.toy(10);
    let mut stub = Stub::spawn(None, |_, _| (200, completion("ok")));
    let endpoint = format!("endpoint={}", stub.url);
    for mode in ["full", "subtab"] {
        let out = w.path(&format!("{mode}.jsonl"));
        let r = run(&[
            "pipeline",
            "--dataset",
            &toy,
            "--mode",
            mode,
            "--set",
            &endpoint,
            "--set",
            "summarizer_model=stub",
            "--set",
            "highlighter_backend=static:{1}",
            "--output",
            &out,
        ]);
        assert_eq!(r.exit_code, 0);
        assert!(predictions(&out).iter().all(|p| p.evidence == [1]));
    }
    let seen = stub.seen();
    assert_eq!(seen.len(), 20);
    for s in &seen[..10] {
        assert!(s.prompt().contains("row 1 : *"));
        assert!(s.prompt().contains("row 2 : ") || !s.prompt().contains("row 2"));
    }
    for s in &seen[10..] {
        assert!(!s.prompt().contains('*'));
        assert!(s.prompt().contains("row 1 : ") && !s.prompt().contains("row 2 : "));
    }
}

#[test]
fn garbage_highlighter_still_predicts() {
    let w = Work::new();
    let toy = w.toy(10);
    let out = w.path("p.jsonl");
    let r = run(&[
        "pipeline",
        "--dataset",
        &toy,
        "--set",
        "highlighter_backend=static:no idea",
        "--set",
        "summarizer_backend=echo",
        "--output",
        &out,
    ]);
    assert_eq!(r.exit_code, 0);
    let ps = predictions(&out);
    assert_eq!(ps.len(), 10);
    for p in ps {
        assert!(p.evidence.is_empty());
        assert_eq!(p.flags, ["no-evidence"]);
        assert!(!p.prediction.is_empty());
    }
}

#[test]
fn pipeline_backend_failures_follow_exit_policy() {
    let w = Work::new();
    let toy = w.toy(4);
    // One summarizer failure in four is below the default 0.95 threshold.
    let stub = Stub::spawn(None, |i, _| {
        if i == 0 {
            (401, "{}".into())
        } else {
            (200, completion("fine"))
        }
    });
    let endpoint = format!("endpoint={}", stub.url);
    let base = [
        "pipeline",
        "--dataset",
        &toy,
        "--mode",
        "no_highlight",
        "--workers",
        "1",
        "--set",
        &endpoint,
        "--set",
        "summarizer_model=stub",
    ];
    let out = w.path("p.jsonl");
    let mut args = base.to_vec();
    args.extend(["--output", &out]);
    let r = run(&args);
    assert_eq!(r.exit_code, 3);
    assert_eq!(predictions(&out).len(), 3);

    // A lower threshold accepts the partial result; resume fills the gap.
    let mut args = base.to_vec();
    args.extend(["--set", "success_threshold=0.5", "--output", &out]);
    let r = run(&args);
    assert_eq!(r.exit_code, 0);
    assert_eq!(r.job.unwrap().resumed, 3);
    assert_eq!(predictions(&out).len(), 4);
}

#[test]
fn evaluate_scores_and_unmatched_ids() {
    let w = Work::new();
    let toy = w.toy(10);
    let perfect = w.path("perfect.jsonl");
    let lines_out: Vec<String> = lines(&toy)
        .iter()
        .map(|v| {
            serde_json::to_string(&Prediction {
                id: v["id"].as_str().unwrap().into(),
                evidence: vec![],
                prediction: v["reference"].as_str().unwrap().into(),
                flags: vec![],
            })
            .unwrap()
        })
        .collect();
    std::fs::write(&perfect, lines_out.join("\n") + "\n").unwrap();
    let report = w.path("report.json");
    let r = run(&[
        "evaluate",
        "--dataset",
        &toy,
        "--predictions",
        &perfect,
        "--report",
        &report,
    ]);
    assert_eq!(r.exit_code, 0);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["bleu", "rouge1", "rouge2", "rougeL", "meteor"] {
        assert!(v[key].as_f64().unwrap() > 0.0, "{key}");
    }
    for key in ["bleu", "rouge1", "rouge2", "rougeL"] {
        assert_eq!(v[key], 100.0, "{key}");
    }
    assert_eq!(v["sample_count"], 10);
    assert!(v["notes"]
        .as_array()
        .unwrap()
        .iter()
        .any(|n| n.as_str().unwrap().contains("METEOR")));

    let stray = w.path("stray.jsonl");
    std::fs::write(&stray, r#"{"id":"ghost","evidence":[],"prediction":"x","flags":[]}"#).unwrap();
    assert_eq!(
        run(&["evaluate", "--dataset", &toy, "--predictions", &stray]).exit_code,
        2
    );
}

#[test]
fn config_file_env_and_flag_precedence() {
    let w = Work::new();
    let toy = w.toy(3);
    let config = w.path("run.toml");
    // The file asks for an http feedbacker, the environment for echo.
    std::fs::write(&config, format!("dataset = {toy:?}\nfeedbacker_backend = \"http\"\n")).unwrap();
    let out = w.path("a.jsonl");
    let r = run_env(
        &["search-labels", "--config", &config, "--output", &out],
        &[("HELM_FEEDBACKER_BACKEND", "echo")],
    );
    assert_eq!(r.exit_code, 0);

    // A flag beats the environment: a constant feedbacker ties every candidate,
    // so the lowest row wins everywhere.
    let out2 = w.path("b.jsonl");
    let r = run_env(
        &[
            "search-labels",
            "--config",
            &config,
            "--set",
            "feedbacker_backend=static:zzz",
            "--output",
            &out2,
        ],
        &[("HELM_FEEDBACKER_BACKEND", "echo")],
    );
    assert_eq!(r.exit_code, 0);
    let by_id: HashMap<String, LabeledSample> = labels(&out2).into_iter().map(|l| (l.id.clone(), l)).collect();
    assert_eq!(by_id.len(), 3);
    assert!(by_id
        .values()
        .all(|l| l.e_search.as_ref().map(|e| e.indices().to_vec()) == Some(vec![1])));
    assert_ne!(std::fs::read(&out).unwrap(), std::fs::read(&out2).unwrap());
}

#[test]
fn export_train_targets_and_sources() {
    let w = Work::new();
    let toy = w.toy(3);
    let labels_path = w.path("labels.jsonl");
    let mut recs = Vec::new();
    for (i, id) in ["toy-01", "toy-02", "toy-03"].iter().enumerate() {
        let mut l = LabeledSample::new(*id);
        l.e_merge = Some(tablight::table::Evidence::singleton(1));
        l.e_distill = Some(tablight::table::Evidence::singleton(2 + i % 2));
        recs.push(serde_json::to_string(&l).unwrap());
    }
    std::fs::write(&labels_path, recs.join("\n") + "\n").unwrap();

    let h = w.path("h.jsonl");
    let r = run(&[
        "export-train",
        "--dataset",
        &toy,
        "--labels",
        &labels_path,
        "--target",
        "highlighter",
        "--output",
        &h,
    ]);
    assert_eq!(r.exit_code, 0);
    let hs = lines(&h);
    assert_eq!(hs.len(), 3);
    assert!(hs.iter().all(|v| v["completion"] == "{1}"));

    let s = w.path("s.jsonl");
    let r = run(&[
        "export-train",
        "--dataset",
        &toy,
        "--labels",
        &labels_path,
        "--target",
        "summarizer",
        "--source",
        "distill",
        "--output",
        &s,
    ]);
    assert_eq!(r.exit_code, 0);
    let ss = lines(&s);
    assert!(ss[0]["prompt"].as_str().unwrap().contains("row 2 : *"));
    assert!(!ss[0]["prompt"].as_str().unwrap().contains("row 1 : *"));
    let refs: Vec<Value> = lines(&toy).iter().map(|v| v["reference"].clone()).collect();
    assert_eq!(ss.iter().map(|v| v["completion"].clone()).collect::<Vec<_>>(), refs);

    // A sample without a label fails strict export and is skipped otherwise.
    let partial = w.path("partial.jsonl");
    std::fs::write(&partial, &recs[0]).unwrap();
    let out = w.path("x.jsonl");
    assert_eq!(
        run(&[
            "export-train",
            "--dataset",
            &toy,
            "--labels",
            &partial,
            "--target",
            "highlighter",
            "--output",
            &out
        ])
        .exit_code,
        2
    );
    assert_eq!(
        run(&[
            "export-train",
            "--dataset",
            &toy,
            "--labels",
            &partial,
            "--target",
            "highlighter",
            "--output",
            &out,
            "--lenient",
        ])
        .exit_code,
        0
    );
    assert_eq!(lines(&out).len(), 1);
}

#[test]
fn highlight_debug_command() {
    let toy = common::toy_dataset();
    let toy = toy.to_str().unwrap();
    assert_eq!(run(&["highlight", "--dataset", toy, "--id", "toy-03"]).exit_code, 0);
    assert_eq!(
        run(&["highlight", "--dataset", toy, "--id", "toy-02", "--evidence", "2,1"]).exit_code,
        0
    );
    assert_eq!(run(&["highlight", "--dataset", toy, "--id", "toy-02"]).exit_code, 2);
    assert_eq!(
        run(&["highlight", "--dataset", toy, "--id", "toy-02", "--evidence", "9"]).exit_code,
        2
    );
    assert_eq!(
        run(&["highlight", "--dataset", toy, "--id", "missing", "--evidence", "1"]).exit_code,
        2
    );
}

#[test]
fn exhaustive_check_bounds_greedy_in_trace() {
    let w = Work::new();
    let toy = w.toy(5);
    let trace = w.path("trace.jsonl");
    let r = run(&[
        "search-labels",
        "--dataset",
        &toy,
        "--set",
        "feedbacker_backend=echo",
        "--set",
        "n_max=3",
        "--output",
        &w.path("s.jsonl"),
        "--trace",
        &trace,
        "--exhaustive-check",
    ]);
    assert_eq!(r.exit_code, 0);
    let rows: HashMap<String, usize> = lines(&toy)
        .iter()
        .map(|v| {
            (
                v["id"].as_str().unwrap().to_string(),
                v["rows"].as_array().unwrap().len(),
            )
        })
        .collect();
    for t in lines(&trace) {
        let ex = &t["exhaustive"];
        if rows[t["id"].as_str().unwrap()] > 3 {
            assert!(ex["error"].as_str().unwrap().contains("limited to 3"), "{ex}");
        } else {
            assert!(ex["reward"].as_f64().unwrap() >= t["reward"].as_f64().unwrap());
        }
    }
    assert_eq!(
        run(&[
            "search-labels",
            "--dataset",
            &toy,
            "--output",
            "x",
            "--exhaustive-check"
        ])
        .exit_code,
        2
    );
}
