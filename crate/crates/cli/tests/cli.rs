use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use ras_core::encoder::EncoderParams;

fn ras(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ras"))
        .current_dir(dir)
        .args(args)
        .env_remove("RAS_TOP_K")
        .env_remove("RAS_ENDPOINT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn first_json(path: &Path) -> Value {
    let text = fs::read_to_string(path).unwrap();
    serde_json::from_str(text.lines().next().unwrap()).unwrap()
}

const CORPUS: &str = r#"{"id":"d1","title":"Tinker Tailor","text":"Tinker Tailor Soldier Spy was directed by Tomas Alfredson."}
{"id":"d2","title":"Tomas Alfredson","text":"Tomas Alfredson is a Swedish film director."}
{"id":"d3","title":"Paris","text":"Paris is the capital of France."}
"#;

const SIDECAR: &str = "(S> Tinker Tailor Soldier Spy| P> directed by| O> Tomas Alfredson)
(S> Tomas Alfredson| P> nationality| O> Swedish)
(S> Paris| P> capital of| O> France)
";

#[test]
fn ask_no_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "s.txt", "[NO_RETRIEVAL]\nParis\n");
    let o = ras(
        dir.path(),
        &[
            "ask",
            "--question",
            "Capital of France?",
            "--backend",
            "scripted",
            "--script",
            "s.txt",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "Paris");
}

#[test]
fn unknown_subcommand_fails_without_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let o = ras(dir.path(), &["frobnicate", "--out", "x.json"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn eval_run_perfect() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "p.jsonl",
        "{\"id\":\"1\",\"text\":\"Paris\"}\n{\"id\":\"2\",\"text\":\"Tomas Alfredson\"}\n",
    );
    write(
        dir.path(),
        "r.jsonl",
        "{\"id\":\"1\",\"texts\":[\"paris\"]}\n{\"id\":\"2\",\"text\":\"Tomas Alfredson\"}\n",
    );
    let o = ras(
        dir.path(),
        &[
            "eval",
            "run",
            "--predictions",
            "p.jsonl",
            "--references",
            "r.jsonl",
            "--metric",
            "golden_match",
            "--out",
            "report.json",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["aggregate"], 100.0);
    assert_eq!(report["N"], 2);
    assert_eq!(report["N_failed"], 0);

    let o = ras(
        dir.path(),
        &[
            "eval",
            "run",
            "--predictions",
            "p.jsonl",
            "--references",
            "r.jsonl",
            "--metric",
            "mauve",
        ],
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unavailable"));
}

#[test]
fn flags_override_config_file_and_env() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "s.txt", "[NO_RETRIEVAL]\nok\n");
    write(
        dir.path(),
        "ras.toml",
        "top_k = 5\nmax_iterations = 4\nbackend = \"scripted\"\n",
    );
    let o = Command::new(env!("CARGO_BIN_EXE_ras"))
        .current_dir(dir.path())
        .env("RAS_MAX_ITERATIONS", "2")
        .args([
            "ask",
            "--config",
            "ras.toml",
            "--top-k",
            "3",
            "--question",
            "Q",
            "--script",
            "s.txt",
            "--out",
            "t.jsonl",
        ])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = first_json(&dir.path().join("t.jsonl"));
    assert_eq!(trace["settings"]["top_k"], 3);
    assert_eq!(trace["settings"]["max_iterations"], 2);
    assert_eq!(trace["settings"]["backend"], "scripted");
}

#[test]
fn invalid_env_value_is_a_startup_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "s.txt", "[NO_RETRIEVAL]\nok\n");
    let o = Command::new(env!("CARGO_BIN_EXE_ras"))
        .current_dir(dir.path())
        .env("RAS_TOP_K", "many")
        .args([
            "ask",
            "--question",
            "Q",
            "--backend",
            "scripted",
            "--script",
            "s.txt",
        ])
        .output()
        .unwrap();
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(
        err.contains("environment") && err.contains("top_k"),
        "{err}"
    );
}

#[test]
fn remote_backend_requires_limit() {
    let dir = tempfile::tempdir().unwrap();
    let o = ras(
        dir.path(),
        &[
            "ask",
            "--question",
            "Q",
            "--endpoint",
            "http://127.0.0.1:9/v1",
            "--model",
            "m",
        ],
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("max-new-tokens"));
}

#[test]
fn index_then_ask_with_sidecar_and_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "c.jsonl", CORPUS);
    write(d, "t.txt", SIDECAR);
    write(
        d,
        "s.txt",
        "[SUBQ] x\n[SUBQ] Who is Tomas Alfredson?\n[SUFFICIENT]\nSwedish\n",
    );
    EncoderParams::new(32).save(&d.join("enc.bin")).unwrap();

    let o = ras(
        d,
        &[
            "index",
            "build",
            "--corpus",
            "c.jsonl",
            "--index-dir",
            "idx",
            "--embedder",
            "hash:32",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("idx/index.json").exists());

    let o = ras(
        d,
        &[
            "ask",
            "--question",
            "What nationality is the director of Tinker Tailor Soldier Spy?",
            "--backend",
            "scripted",
            "--script",
            "s.txt",
            "--corpus",
            "c.jsonl",
            "--index-dir",
            "idx",
            "--embedder",
            "hash:32",
            "--triples",
            "t.txt",
            "--top-k",
            "1",
            "--encoder-weights",
            "enc.bin",
            "--out",
            "trace.jsonl",
            "--predictions-out",
            "pred.jsonl",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "Swedish");
    let trace = first_json(&d.join("trace.jsonl"));
    assert_eq!(trace["iterations"].as_array().unwrap().len(), 2);
    assert_eq!(
        trace["iterations"][0]["retrieved"]["entries"][0]["id"],
        "d1"
    );
    assert_eq!(trace["final_graph_stats"]["nodes"], 3);
    let token: Vec<f32> = serde_json::from_str(
        fs::read_to_string(d.join("trace.jsonl.tokens"))
            .unwrap()
            .trim(),
    )
    .unwrap();
    assert_eq!(token.len(), 32);
    assert_eq!(first_json(&d.join("pred.jsonl"))["text"], "Swedish");
}

#[test]
fn ask_bm25_batch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "c.jsonl", CORPUS);
    write(d, "t.txt", SIDECAR);
    write(
        d,
        "q.jsonl",
        "{\"id\":\"q1\",\"question\":\"Paris?\"}\n{\"id\":\"q2\",\"question\":\"France?\"}\n",
    );
    write(
        d,
        "s.txt",
        "[NO_RETRIEVAL]\nfirst\n[SUBQ] a\n[SUFFICIENT]\nsecond\n",
    );
    let o = ras(
        d,
        &[
            "ask",
            "--questions",
            "q.jsonl",
            "--backend",
            "scripted",
            "--script",
            "s.txt",
            "--corpus",
            "c.jsonl",
            "--retriever",
            "bm25",
            "--triples",
            "t.txt",
            "--predictions-out",
            "p.jsonl",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "first\nsecond\n");
    let preds = fs::read_to_string(d.join("p.jsonl")).unwrap();
    assert!(preds.contains("\"q2\""));
}

#[test]
fn static_mode_from_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "ctx.json",
        r#"[[{"text":"Alpha beta"}],[{"text":"Gamma delta"}]]"#,
    );
    write(
        d,
        "s.txt",
        "(S> Alpha| P> r| O> beta)\n(S> Gamma| P> r| O> delta)\nA long answer.\n",
    );
    let o = ras(
        d,
        &[
            "ask",
            "--question",
            "Explain.",
            "--backend",
            "scripted",
            "--script",
            "s.txt",
            "--static-contexts",
            "ctx.json",
            "--long-form",
            "--out",
            "t.jsonl",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = first_json(&d.join("t.jsonl"));
    assert_eq!(trace["mode"], "static");
    assert_eq!(trace["plan_calls"], 0);
    assert_eq!(trace["iterations"].as_array().unwrap().len(), 2);
}

#[test]
fn failed_session_exits_nonzero_with_trace() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "s.txt", "[NO_RETRIEVAL]\n");
    let o = ras(
        dir.path(),
        &[
            "ask",
            "--question",
            "Q",
            "--backend",
            "scripted",
            "--script",
            "s.txt",
            "--out",
            "t.jsonl",
        ],
    );
    assert!(!o.status.success());
    assert_eq!(first_json(&dir.path().join("t.jsonl"))["status"], "failed");
}

#[test]
fn dataset_build_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "in.jsonl",
        concat!(
            r#"{"question":"Q1?","docs":[{"topic":"A","text":"Alpha one"},{"topic":"B","text":"Bravo two"},{"topic":"C","text":"noise"}],"answer":"Gold"}"#,
            "\n",
            r#"{"question":"Q2?","docs":[{"topic":"D","text":"Delta"}],"answer":"Known"}"#,
            "\n",
        ),
    );
    write(d, "base.txt", "no idea\nIt is Known.\n");
    write(d, "gen.txt", "1,2\nWho is Alpha?\nWhat is Bravo?\n1\n");
    write(
        d,
        "ext.txt",
        "(S> Alpha| P> is| O> one)\n(S> Bravo| P> is| O> two)\n",
    );
    let o = ras(
        d,
        &[
            "dataset",
            "build",
            "--input",
            "in.jsonl",
            "--planner-out",
            "plan.jsonl",
            "--answer-out",
            "ans.jsonl",
            "--report",
            "report.json",
            "--backend",
            "scripted",
            "--script",
            "base.txt",
            "--generator-script",
            "gen.txt",
            "--extract-script",
            "ext.txt",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let plan = fs::read_to_string(d.join("plan.jsonl")).unwrap();
    let labels: Vec<String> = plan
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["label"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(
        labels,
        ["[SUBQ] What is Bravo?", "[SUFFICIENT]", "[NO_RETRIEVAL]"]
    );

    let o = ras(
        d,
        &[
            "dataset",
            "stats",
            "--planner",
            "plan.jsonl",
            "--answer",
            "ans.jsonl",
            "--out",
            "stats.json",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let stats: Value =
        serde_json::from_str(&fs::read_to_string(d.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["labels"]["[SUBQ]"], 1);
    assert_eq!(stats["answering"]["queries"], 2);
    assert_eq!(stats["answering"]["nodes"]["max"], 4.0);
}

#[test]
fn triples_extract_and_plan_step() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "p.jsonl",
        "{\"id\":\"x\",\"text\":\"A r B\"}\n{\"text\":\"nothing\"}\n",
    );
    write(
        d,
        "s.txt",
        "(S> A| P> r| O> B) and (S> broken\nno triples here\n",
    );
    let o = ras(
        d,
        &[
            "triples",
            "extract",
            "--input",
            "p.jsonl",
            "--out",
            "t.txt",
            "--backend",
            "scripted",
            "--script",
            "s.txt",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(d.join("t.txt")).unwrap(),
        "(S> A| P> r| O> B)\n\n"
    );
    assert!(stdout(&o).contains("1 malformed"));

    write(d, "plan.txt", "[SUBQ] Who is A?\n");
    let o = ras(
        d,
        &[
            "plan",
            "step",
            "--question",
            "Q",
            "--backend",
            "scripted",
            "--script",
            "plan.txt",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "[SUBQ] Who is A?");
}
