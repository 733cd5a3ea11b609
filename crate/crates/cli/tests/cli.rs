use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 11] = [
    "synth",
    "train-pq",
    "train-rq",
    "train-cq",
    "encode",
    "decode",
    "rerank",
    "eval",
    "space-report",
    "gradcheck",
    "fidelity",
];

fn ctxquant<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_ctxquant"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn ctxquant")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn report_value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text:?}"))
        .to_string()
}

fn snapshot_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots")
}

/// Compares against the stored file; `UPDATE_SNAPSHOTS=1` rewrites it.
fn check_snapshot(name: &str, actual: &str) {
    let path = snapshot_dir().join(name);
    if std::env::var_os("UPDATE_SNAPSHOTS").is_some() {
        std::fs::create_dir_all(snapshot_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing snapshot {}; rerun with UPDATE_SNAPSHOTS=1", path.display()));
    assert_eq!(actual, expected, "help for {name} changed; rerun with UPDATE_SNAPSHOTS=1 if intended");
}

/// Option lines with nothing but a bracketed default after the flag.
fn undocumented_flags(help: &str) -> Vec<String> {
    let lines: Vec<&str> = help.lines().collect();
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let t = line.trim_start();
        if !t.starts_with("--") && !t.starts_with("-h") {
            continue;
        }
        let flag_end = t.find("  ").unwrap_or(t.len());
        let (flag, rest) = t.split_at(flag_end);
        let rest = rest.trim();
        let doc = if rest.is_empty() {
            lines.get(i + 1).map_or("", |l| l.trim())
        } else {
            rest
        };
        if doc.is_empty() || doc.starts_with('[') || doc.starts_with("--") {
            out.push(flag.to_string());
        }
    }
    out
}

#[test]
fn help_snapshots() {
    let top = ctxquant(["--help"]);
    assert_eq!(code(&top), 0);
    check_snapshot("help.txt", &stdout(&top));
    for sub in SUBCOMMANDS {
        let o = ctxquant([sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        let help = stdout(&o);
        assert!(undocumented_flags(&help).is_empty(), "{sub}: {:?}", undocumented_flags(&help));
        check_snapshot(&format!("help_{sub}.txt"), &help);
    }
}

#[test]
fn usage_errors_exit_one() {
    let cases: &[&[&str]] = &[
        &[],
        &["frobnicate"],
        &["gradcheck", "--bogus"],
        &["gradcheck", "--models", "0"],
        &["gradcheck", "--threads", "0"],
        &["gradcheck", "--M", "3", "--D", "8"],
        &["eval", "--run", "r", "--qrels", "q", "--metric", "map@10"],
        &["space-report", "--Z", "10", "--n", "5", "--D", "10", "--M", "3", "--K", "4"],
        &["train-cq", "--input", "x", "--table", "t", "--out", "o", "--M", "2", "--K", "4", "--finetune-steps", "3"],
    ];
    for args in cases {
        let o = ctxquant(*args);
        assert_eq!(code(&o), 1, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.run");
    let o = ctxquant(["eval", "--run", missing.to_str().unwrap(), "--qrels", missing.to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    let junk = dir.path().join("junk.cqst");
    std::fs::write(&junk, b"NOPE0000").unwrap();
    let junk = junk.to_str().unwrap();
    let o = ctxquant(["decode", "--store", junk, "--model", junk, "--out", "unused"]);
    assert_eq!(code(&o), 2);

    let run = dir.path().join("bad.run");
    std::fs::write(&run, "q1 Q0 d1 1 notanumber tag\n").unwrap();
    let o = ctxquant(["eval", "--run", run.to_str().unwrap(), "--qrels", run.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_rank_three_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("r.txt");
    let qrels = dir.path().join("q.txt");
    std::fs::write(&run, "q1 Q0 d1 1 3.0 t\nq1 Q0 d2 2 2.0 t\nq1 Q0 d3 3 1.0 t\n").unwrap();
    std::fs::write(&qrels, "q1 0 d3 1\n").unwrap();
    let o = ctxquant([
        "eval",
        "--run",
        run.to_str().unwrap(),
        "--qrels",
        qrels.to_str().unwrap(),
        "--metric",
        "mrr@10",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "mrr@10=0.3333\n");
}

#[test]
fn space_report_full_corpus() {
    let o = ctxquant([
        "space-report",
        "--Z",
        "8800000",
        "--n",
        "67.5",
        "--D",
        "128",
        "--M",
        "16",
        "--K",
        "256",
        "--float-bytes",
        "2",
    ]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert_eq!(report_value(&text, "codebook_bytes"), "131072");
    assert_eq!(report_value(&text, "doc_indep_bytes"), "16384000");
    assert_eq!(report_value(&text, "colbert_bytes"), "152064000000");
    let codes: f64 = report_value(&text, "codes_bytes").parse().unwrap();
    assert!((codes - 1.069e10).abs() / 1.069e10 < 1e-3, "{codes}");
    assert_eq!(report_value(&text, "compression_ratio"), "14.22");
    assert_eq!(report_value(&text, "becr_ratio"), "8.89");
}

#[test]
fn gradcheck_seed_seven_passes() {
    let o = ctxquant(["gradcheck", "--seed", "7", "--M", "2", "--K", "4", "--D", "8"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let err: f64 = report_value(&text, "max_rel_error").parse().unwrap();
    assert!(err < 1e-4);
    assert_eq!(report_value(&text, "passed"), "true");
}

/// Small synth, train-cq, encode, rerank; returns the store and run bytes.
fn small_pipeline(dir: &Path, threads: &str) -> (Vec<u8>, Vec<u8>) {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let steps: [Vec<String>; 4] = [
        vec!["synth".into(), "--out-dir".into(), p(""), "--Z".into(), "40".into(), "--V".into(), "64".into()],
        [
            "train-cq", "--input", &p("corpus.cqem"), "--table", &p("table.cqem"), "--out", &p("model.cqnn"), "--M",
            "4", "--K", "8", "--steps", "60", "--sample-size", "2000",
        ]
        .map(String::from)
        .to_vec(),
        [
            "encode", "--input", &p("corpus.cqem"), "--model", &p("model.cqnn"), "--table", &p("table.cqem"), "--out",
            &p("store.cqst"),
        ]
        .map(String::from)
        .to_vec(),
        [
            "rerank", "--store", &p("store.cqst"), "--model", &p("model.cqnn"), "--table", &p("table.cqem"),
            "--queries", &p("queries.cqem"), "--candidates", &p("candidates.txt"), "--out", &p("student.run"),
        ]
        .map(String::from)
        .to_vec(),
    ];
    for mut args in steps {
        args.extend(["--threads".to_string(), threads.to_string()]);
        let o = ctxquant(&args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    (
        std::fs::read(dir.join("store.cqst")).unwrap(),
        std::fs::read(dir.join("student.run")).unwrap(),
    )
}

#[test]
fn thread_count_does_not_change_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(small_pipeline(a.path(), "1"), small_pipeline(b.path(), "4"));
}
