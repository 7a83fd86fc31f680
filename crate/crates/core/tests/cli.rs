use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_formatbias"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_dataset(path: &Path, n: usize) {
    let lines: Vec<String> = (0..n)
        .map(|i| {
            serde_json::json!({
                "id": format!("q{i}"),
                "question": format!("Which colour is item {i}?"),
                "options": ["red", "green", "blue", "yellow"],
                "answer_index": i % 4,
            })
            .to_string()
        })
        .collect();
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn render_one_format() {
    let o = run(&["render", "--question", "Q?", "--option", "x", "--option", "y", "--format", "comma/dot/uppercase"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("Q?\nA. x, B. y\n"));
}

#[test]
fn plan_benchmark_totals() {
    let o = run(&["plan", "--benchmarks", "--models", "a,b,c,d,e,f,g"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("A-OKVQA,4580,1538880"), "{s}");
    assert!(s.contains("cells,1680"));
    assert!(s.contains("total_requests,6870192"));
}

#[test]
fn run_metrics_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.jsonl");
    write_dataset(&data, 6);
    let cache = dir.path().join("cache");
    let out = dir.path().join("out");
    let (c, d, o) = (cache.to_str().unwrap(), data.to_str().unwrap(), out.to_str().unwrap());
    let r = run(&["--cache", c, "run", "--models", "stub:oracle,stub:position:3", "--datasets", d, "--cloze"]);
    assert!(r.status.success());
    assert!(stdout(&r).contains("planned 2304"), "{}", stdout(&r));
    // Second run is a no-op.
    let r = run(&["--cache", c, "run", "--models", "stub:oracle,stub:position:3", "--datasets", d]);
    assert!(stdout(&r).contains("skipped 2304 issued 0"), "{}", stdout(&r));

    let m = run(&["--cache", c, "--out", o, "metrics"]);
    assert!(m.status.success());
    let grid = std::fs::read_to_string(out.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 96);
    assert!(out.join("deviations.csv").exists());
    assert!(out.join("answer_frequencies.csv").exists());

    let g = out.join("grid.csv");
    let rep = run(&["--out", o, "report", "--grid", g.to_str().unwrap()]);
    assert!(rep.status.success());
    assert!(out.join("ranks_toy.svg").exists());
    // Both stubs are constant across formats, so no model fit is possible.
    assert!(String::from_utf8_lossy(&rep.stderr).contains("skipping format effects"));
    assert!(!out.join("effects.svg").exists());

    let conf = run(&["--cache", c, "--out", o, "confidence", "--model", "stub:oracle", "--dataset", d, "--reference", "line_break/dot/uppercase"]);
    assert!(conf.status.success());
    assert!(stdout(&conf).contains("bins: top20 2 middle60 3 bottom20 1"), "{}", stdout(&conf));

    let mit = run(&["--cache", c, "--out", o, "mitigate", "--datasets", d, "--format", "line_break/dot/uppercase"]);
    assert!(mit.status.success());
    let card = std::fs::read_to_string(out.join("scorecard_toy.csv")).unwrap();
    assert!(card.contains("cp_ln"));
}

#[test]
fn failed_records_mark_metrics_incomplete() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    std::fs::create_dir_all(&cache).unwrap();
    let rec = serde_json::json!({
        "model": "m", "dataset": "d",
        "format": {"id_set": "uppercase", "delimiter": "dot", "separator": "comma"},
        "source_id": "q0", "rotation": 0, "prompt_digest": "00", "output": "",
        "gold_position": 0, "option_count": 2,
        "error": {"class": "transport", "message": "down"}, "attempts": 3, "timestamp": 0
    });
    std::fs::write(cache.join("records.jsonl"), format!("{rec}\n")).unwrap();
    let o = run(&["--cache", cache.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap(), "metrics"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn published_lmm_and_scorecards() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let l = run(&["--out", o, "lmm"]);
    assert!(l.status.success());
    assert!(stdout(&l).contains("rows 1680 groups 35"));
    assert!(dir.path().join("effects.svg").exists());
    let m = run(&["--out", o, "mitigate"]);
    assert!(m.status.success());
    assert!(dir.path().join("scorecard_A-OKVQA.csv").exists());
}

#[test]
fn bad_arguments_fail() {
    assert_eq!(run(&["render", "--question", "Q", "--option", "x", "--format", "nope"]).status.code(), Some(1));
    assert!(!run(&["run", "--models", "unknown", "--datasets", "/nonexistent.jsonl"]).status.success());
}
