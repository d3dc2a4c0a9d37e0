use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use sql2text::config::KEYS;
use sql2text::data::template_corpus;

const FIG1: &str = "SELECT company WHERE assets > val0 AND sales > val0 AND industry <= val1 AND profits = val2";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sql2text"));
    c.env_remove("SQL2TEXT_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_pairs(path: &Path, n: usize, seed: u64) {
    let mut f = std::fs::File::create(path).unwrap();
    for p in template_corpus(n, seed) {
        writeln!(f, "{}", serde_json::json!({ "sql": p.sql, "text": p.target.join(" ") })).unwrap();
    }
}

const TINY: [&str; 12] = [
    "--set", "word_dim=8", "--set", "hidden_dim=6", "--set", "hop_size=2", "--set", "hidden_size=12",
    "--set", "epochs=2", "--set", "max_decode_len=12",
];

#[test]
fn parse_prints_ast_json() {
    let o = run(&["parse", FIG1]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["select_columns"][0], "company");
    let o = run(&["parse", "--anonymize", "SELECT a WHERE b = 'x' AND c = 'x'"]);
    assert!(stdout(&o).contains("val_0") && !stdout(&o).contains("val_1"));
}

#[test]
fn parse_errors_exit_two() {
    let o = run(&["parse", "SELECT a FROM t"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unsupported"));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--set", "nonsense=1", "template", "SELECT a"]).status.code(), Some(2));
}

#[test]
fn reads_queries_from_stdin_and_file() {
    let mut child = bin().args(["template"]).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(format!("{FIG1}\nSELECT COUNT name\n").as_bytes()).unwrap();
    let o = child.wait_with_output().unwrap();
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("which company where assets more than val_0"));

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("q.sql");
    std::fs::write(&file, format!("{FIG1}\n")).unwrap();
    let o = run(&["template", "--file", file.to_str().unwrap()]);
    assert_eq!(stdout(&o).trim(), lines[0]);
}

#[test]
fn graphify_formats() {
    let o = run(&["graphify", FIG1]);
    let g: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(g["nodes"].as_array().unwrap().len(), 10);
    assert_eq!(g["edges"].as_array().unwrap().len(), 10);
    let o = run(&["graphify", "--undirected", FIG1]);
    let g: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(g["edges"].as_array().unwrap().len(), 20);
    let o = run(&["graphify", "--format", "dot", FIG1]);
    assert!(stdout(&o).starts_with("digraph"));
}

#[test]
fn help_lists_every_key_with_default() {
    let text = stdout(&run(&["--help"]));
    for k in KEYS {
        let line = text.lines().find(|l| l.trim_start().starts_with(k.name)).unwrap_or_else(|| panic!("{}", k.name));
        let default = if k.default.is_empty() { "unset" } else { k.default };
        assert!(line.contains(&format!("[default: {default}]")), "{line}");
    }
}

#[test]
fn gradcheck_passes_in_both_precisions() {
    let o = run(&["gradcheck"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("PASS") && stdout(&o).contains("precision=f32"));
    let o = run(&["--set", "precision=f64", "gradcheck", "--samples", "150"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("precision=f64"));
}

#[test]
fn train_generate_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.jsonl");
    write_pairs(&data, 8, 3);
    let ckpt = dir.path().join("m.ckpt");
    let mut args: Vec<&str> = TINY.to_vec();
    args.extend(["--seed", "4", "train", "--train", data.to_str().unwrap(), "--dev", data.to_str().unwrap()]);
    args.extend(["-o", ckpt.to_str().unwrap()]);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("m.metrics.csv")).unwrap();
    assert!(csv.starts_with("epoch,train_loss,dev_bleu,grad_norm_mean"));
    assert_eq!(csv.lines().count(), 3);
    let run_record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.run.json")).unwrap()).unwrap();
    assert_eq!(run_record["config"]["seed"], "4");
    assert_eq!(run_record["config"]["word_dim"], "8");

    // same seed, same bytes
    let again = dir.path().join("again.ckpt");
    let pos = args.iter().position(|a| *a == "-o").unwrap();
    args[pos + 1] = again.to_str().unwrap();
    assert!(run(&args).status.success());
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(&again).unwrap());

    let c = ckpt.to_str().unwrap();
    let beam1 = run(&["generate", "-c", c, "--beam", "1", FIG1]);
    let greedy = run(&["generate", "-c", c, "--greedy", FIG1]);
    assert!(beam1.status.success());
    assert_eq!(stdout(&beam1), stdout(&greedy));
    assert_eq!(run(&["generate", "-c", c, "--beam", "0", FIG1]).status.code(), Some(2));

    let report = dir.path().join("r.json");
    let o = run(&["evaluate", "-c", c, "--test", data.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert!(o.status.success());
    let first = std::fs::read(&report).unwrap();
    let r: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(r["examples"].as_array().unwrap().len(), 8);
    assert!(r["corpus_bleu4"].as_f64().unwrap() <= 1.0);
    let o = run(&["--jobs", "3", "evaluate", "-c", c, "--test", data.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(first, std::fs::read(&report).unwrap());
}

#[test]
fn runtime_failures_exit_one() {
    let o = run(&["generate", "-c", "/nonexistent/m.ckpt", FIG1]);
    assert_eq!(o.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(run(&["generate", "-c", junk.to_str().unwrap(), FIG1]).status.code(), Some(1));
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"sql\": \"SELECT a\", \"text\": \"a\"}\n{oops\n").unwrap();
    let o = run(&["train", "--train", bad.to_str().unwrap(), "-o", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2") || String::from_utf8_lossy(&o.stderr).contains(":2"));
}

#[test]
fn config_file_and_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "undirected = true\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "graphify", FIG1]);
    let g: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(g["edges"].as_array().unwrap().len(), 20);
    let o = bin().env("SQL2TEXT_CONFIG", &cfg).args(["graphify", FIG1]).output().unwrap();
    let g: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(g["edges"].as_array().unwrap().len(), 20);
    let o = run(&["--config", cfg.to_str().unwrap(), "--set", "undirected=false", "graphify", FIG1]);
    let g: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(g["edges"].as_array().unwrap().len(), 10);
}
