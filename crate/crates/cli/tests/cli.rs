use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hypertyping"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const LABELS: &str = "person\tcoarse\nplace\tcoarse\nartist\tfine\ncity\tfine\nsinger\tultra\n";
const EMBEDDINGS: &str = "\
the 0.1 0.0 0.2
singer -0.3 0.2 0.1
in 0.0 0.1 0.0
paris 0.4 -0.1 0.2
wrote 0.2 0.3 -0.2
moved -0.1 -0.3 0.3
";

fn record(mention: &str, left: &str, right: &str, labels: &[&str]) -> String {
    serde_json::json!({ "mention_span": mention, "left_context": left, "right_context": right, "labels": labels })
        .to_string()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("labels.txt"), LABELS).unwrap();
        std::fs::write(dir.path().join("emb.txt"), EMBEDDINGS).unwrap();
        let rows = [
            record("the singer", "", "wrote", &["person", "artist", "singer"]),
            record("Paris", "moved in", "", &["place", "city"]),
            record("singer", "the", "moved", &["person", "artist"]),
            record("paris", "in", "the", &["place", "city"]),
        ];
        std::fs::write(dir.path().join("train.jsonl"), rows.join("\n")).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            "train".to_string(),
            "--labels".into(),
            self.s("labels.txt"),
            "--embeddings".into(),
            self.s("emb.txt"),
            "--train".into(),
            self.s("train.jsonl"),
            "--out".into(),
            self.s(out),
            "--set".into(),
            "d_m=4".into(),
            "--set".into(),
            "d_c=3".into(),
            "--set".into(),
            "d_s=3".into(),
            "--set".into(),
            "batch_size=2".into(),
            "--set".into(),
            "lr=0.05".into(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        bin().args(&args).output().unwrap()
    }
}

fn config_value(dir: &Path, key: &str) -> String {
    let text = std::fs::read_to_string(dir.join("config.txt")).unwrap();
    text.lines()
        .find_map(|l| l.split_once(" = ").filter(|(k, _)| *k == key).map(|(_, v)| v.to_string()))
        .unwrap()
}

#[test]
fn training_is_deterministic_and_averages_seeds() {
    let fx = Fixture::new();
    let a = fx.train("a", &["--set", "epochs=2", "--seeds", "0,1"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let b = fx.train("b", &["--set", "epochs=2", "--seeds", "0..2"]);
    assert_eq!(code(&b), 0);
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("mean over 2 seed(s)"));
    for seed in ["seed-0", "seed-1"] {
        let log = |run: &str| std::fs::read_to_string(fx.path(run).join(seed).join("log.jsonl")).unwrap();
        assert_eq!(log("a"), log("b"));
        assert_eq!(log("a").lines().count(), 2);
        for line in log("a").lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["log"]["loss"].is_number());
            assert!(v["log"]["mean_text_norm"].is_number());
            assert!(v["log"]["scores"]["fine"]["macro"]["f1"].is_number());
        }
    }
}

#[test]
fn presets_set_the_table_sizes() {
    let fx = Fixture::new();
    for (preset, dims) in [("base", ["40", "20", "20"]), ("large", ["100", "50", "50"])] {
        let out = fx.path(preset);
        let o = run(&[
            "train", "--preset", preset, "--set", "epochs=1", "--labels", &fx.s("labels.txt"), "--embeddings", &fx.s("emb.txt"),
            "--train", &fx.s("train.jsonl"), "--out", &out.display().to_string(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(config_value(&out, "preset"), preset);
        let got = ["d_m", "d_c", "d_s"].map(|k| config_value(&out, k));
        assert_eq!(got, dims);
    }
}

#[test]
fn eval_reproduces_the_best_logged_scores() {
    let fx = Fixture::new();
    assert_eq!(code(&fx.train("run", &["--set", "epochs=3"])), 0);
    let ckpt = fx.path("run/seed-0/best.ckpt").display().to_string();
    let o = run(&["eval", "--checkpoint", &ckpt, "--data", &fx.s("train.jsonl"), "--labels", &fx.s("labels.txt"), "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let got: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fx.path("run/summary.json")).unwrap()).unwrap();
    assert_eq!(got, summary["runs"][0]["scores"]);

    let table = run(&["eval", "--checkpoint", &ckpt, "--data", &fx.s("train.jsonl")]);
    assert_eq!(code(&table), 0);
    assert!(stdout(&table).contains("strict accuracy"));
}

#[test]
fn eval_rejects_empty_data_and_foreign_inventories() {
    let fx = Fixture::new();
    assert_eq!(code(&fx.train("run", &["--set", "epochs=1"])), 0);
    let ckpt = fx.path("run/seed-0/best.ckpt").display().to_string();
    std::fs::write(fx.path("empty.jsonl"), "").unwrap();
    let o = run(&["eval", "--checkpoint", &ckpt, "--data", &fx.s("empty.jsonl")]);
    assert_eq!(code(&o), 2);

    std::fs::write(fx.path("other.txt"), "person\tcoarse\nplace\tcoarse\n").unwrap();
    let o = run(&["eval", "--checkpoint", &ckpt, "--data", &fx.s("train.jsonl"), "--labels", &fx.s("other.txt")]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("inventory"));

    std::fs::write(fx.path("unknown.jsonl"), record("x", "", "", &["robot"])).unwrap();
    let o = run(&["eval", "--checkpoint", &ckpt, "--data", &fx.s("unknown.jsonl")]);
    assert_eq!(code(&o), 2);

    std::fs::write(fx.path("broken.ckpt"), b"HYPTYCKP\x01").unwrap();
    let o = run(&["eval", "--checkpoint", &fx.s("broken.ckpt"), "--data", &fx.s("train.jsonl")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn inspect_lists_nearest_labels() {
    let fx = Fixture::new();
    assert_eq!(code(&fx.train("run", &["--set", "epochs=1"])), 0);
    let ckpt = fx.path("run/seed-0/best.ckpt").display().to_string();
    let o = run(&["inspect", "--checkpoint", &ckpt, "--label", "artist", "-k", "3"]);
    assert_eq!(code(&o), 0);
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 3);
    let mut last = 0.0;
    for l in &lines {
        let (label, d) = l.split_once(' ').unwrap();
        assert_ne!(label, "artist");
        let (_, frac) = d.split_once('.').unwrap();
        assert_eq!(frac.len(), 2, "{l}");
        let d: f64 = d.parse().unwrap();
        assert!(d >= last);
        last = d;
    }
    let o = run(&["inspect", "--checkpoint", &ckpt, "--label", "artist", "-k", "0"]);
    assert_eq!((code(&o), stdout(&o)), (0, String::new()));
    let o = run(&["inspect", "--checkpoint", &ckpt, "--label", "robot"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_reports_every_layer_and_names_a_fault() {
    let o = run(&["gradcheck", "--seeds", "0", "--coords", "4"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    for c in ["ffnn", "rnn", "gru", "concat", "attention", "mlr", "end-to-end"] {
        assert!(out.lines().any(|l| l.starts_with(c) && l.ends_with("PASS")), "{c}\n{out}");
    }
    assert!(out.lines().last().unwrap().starts_with("PASS"));

    let o = run(&["gradcheck", "--seeds", "0", "--coords", "4", "--fault", "attention"]);
    assert_eq!(code(&o), 3);
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("attention") && l.ends_with("FAIL")), "{out}");
    assert!(out.lines().last().unwrap().starts_with("FAIL"));
}

#[test]
fn bench_writes_two_rows_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let o = run(&[
        "bench", "--depth", "3", "--branching", "2", "--dim", "2", "--train-size", "30", "--test-size", "10", "--epochs", "1",
        "--seeds", "0", "--out", &csv.display().to_string(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("space,level,macro_p,macro_r,macro_f1,micro_f1,seeds"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    for level in 1..=3 {
        let spaces: Vec<&str> = rows
            .iter()
            .filter(|r| r.split(',').nth(1) == Some(&level.to_string()))
            .map(|r| r.split(',').next().unwrap())
            .collect();
        assert_eq!(spaces, ["hyperbolic", "euclidean"]);
    }
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["gradcheck", "--preset", "huge"])), 1);
    assert_eq!(code(&run(&["gradcheck", "--set", "no_such_key=1"])), 1);
    assert_eq!(code(&run(&["gradcheck", "--component-space", "decoder=euclidean"])), 1);
    assert_eq!(code(&run(&["gradcheck", "--seeds", "3..1"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn config_problems_are_listed_together() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "d_m = -3\nlr = fast\ncolour = blue\n").unwrap();
    let o = run(&["gradcheck", "--config", &cfg.display().to_string()]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    for needle in ["d_m", "lr", "colour"] {
        assert!(err.contains(needle), "{needle}: {err}");
    }
}

#[test]
fn missing_data_is_a_data_error() {
    let fx = Fixture::new();
    std::fs::remove_file(fx.path("emb.txt")).unwrap();
    assert_eq!(code(&fx.train("run", &["--set", "epochs=1"])), 2);
}
