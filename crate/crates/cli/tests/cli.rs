use std::path::Path;
use std::process::{Command, Output};

fn scoreopt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scoreopt"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = scoreopt(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Last stderr line parsed as the JSON error object.
fn error_of(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not a JSON error line: {line}"))
}

const SPEC: &str = r#"
score_model = "prior.json"
classifier = "clf.json"
eval_size = 48
trials = 2
seed = 4

[dataset]
path = "eval.csv"

[purifier]
method = "score-opt-n"
lr = 0.1
steps = 3
inner_steps = 1
noise = { sigma_min = 0.25, sigma_max = 0.25 }
loss = { kind = "sr", lambda_reg = 1.0 }

[threat]
norm = "linf"
epsilon = 0.3

[attack]
mode = "classifier-only"
iterations = 10
"#;

fn small_data(dir: &Path) {
    let common = ["--kind", "gmm-classes", "--dim", "8", "--modes", "4", "--classes", "2"];
    let mut train: Vec<&str> = vec!["gen-data", "--n", "300", "--seed", "1", "--out", "train.csv"];
    train.extend(common);
    train.extend(["--prior-out", "prior.json"]);
    ok(dir, &train);
    let mut eval: Vec<&str> = vec!["gen-data", "--n", "48", "--seed", "2", "--out", "eval.csv"];
    eval.extend(common);
    ok(dir, &eval);
    ok(
        dir,
        &[
            "train-clf", "--data", "train.csv", "--arch", "mlp:16", "--out", "clf.json", "--epochs", "80", "--lr",
            "0.03", "--seed", "0",
        ],
    );
    std::fs::write(dir.join("spec.toml"), SPEC).unwrap();
}

#[test]
fn dataset_csv_has_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["gen-data", "--kind", "two-moons", "--n", "10", "--seed", "0", "--out", "m.csv"],
    );
    let text = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x1,x2,label");
    assert_eq!(text.lines().count(), 11);
}

#[test]
fn evaluate_sweep_and_bench_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_data(d);

    ok(d, &["evaluate", "--spec", "spec.toml", "--out", "eval.json"]);
    ok(d, &["evaluate", "--spec", "spec.toml", "--out", "eval.out", "--format", "csv"]);
    let csv = std::fs::read_to_string(d.join("eval.out")).unwrap();
    assert!(csv.starts_with("label,axis,value,standard_accuracy"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("eval.json")).unwrap()).unwrap();
    let row = &json["rows"][0];
    assert_eq!(row["forwards_per_sample"], 9.0);
    assert!(row["standard_accuracy"].as_f64().unwrap() >= 90.0);

    // same seeds, same bytes
    ok(d, &["evaluate", "--spec", "spec.toml", "--out", "again.csv"]);
    ok(d, &["evaluate", "--spec", "spec.toml", "--out", "again2.csv"]);
    let strip = |p: &str| {
        std::fs::read_to_string(d.join(p))
            .unwrap()
            .lines()
            .map(|l| l.split(',').collect::<Vec<_>>())
            .map(|mut f| {
                f.remove(7); // wall time
                f.join(",")
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip("again.csv"), strip("again2.csv"));

    ok(d, &["sweep", "--spec", "spec.toml", "--axis", "steps", "--values", "1,2", "--out", "sweep.csv"]);
    let sweep = std::fs::read_to_string(d.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    assert!(sweep.lines().nth(1).unwrap().contains(",steps,1"));

    let out = ok(d, &["bench", "--spec", "spec.toml", "--steps", "1,3", "--out", "bench.csv"]);
    assert!(out.contains("multi-step"));
    let bench = std::fs::read_to_string(d.join("bench.csv")).unwrap();
    assert!(bench.starts_with("method,steps,seconds_per_sample,seconds_per_step"));
    assert_eq!(bench.lines().count(), 5);
}

#[test]
fn train_score_writes_a_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "gen-data", "--kind", "gmm-classes", "--dim", "2", "--n", "200", "--seed", "0", "--out", "ring.csv",
        ],
    );
    ok(
        d,
        &[
            "train-score", "--data", "ring.csv", "--out", "score.json", "--sigma-min", "0.05", "--sigma-max", "1",
            "--iters", "50", "--lr", "0.003", "--seed", "1", "--hidden", "8,8",
        ],
    );
    let file = scoreopt_core::load_model(&d.join("score.json")).unwrap();
    assert!(matches!(file.model, scoreopt_core::StoredModel::MlpScore(_)));
    assert!(matches!(file.training, Some(scoreopt_core::TrainingRecord::Dsm { .. })));
}

#[test]
fn failures_exit_nonzero_with_a_json_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = scoreopt(d, &["evaluate", "--spec", "missing.toml", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_of(&out);
    assert_eq!(e["error"], "io");
    assert!(e["message"].as_str().unwrap().contains("missing.toml"));

    std::fs::write(d.join("spec.toml"), SPEC).unwrap();
    let e = error_of(&scoreopt(d, &["evaluate", "--spec", "spec.toml", "--out", "x.csv"]));
    assert_eq!(e["error"], "config");

    let e = error_of(&scoreopt(
        d,
        &["sweep", "--spec", "spec.toml", "--axis", "bogus", "--values", "1", "--out", "s.csv"],
    ));
    assert_eq!(e["error"], "config");

    let e = error_of(&scoreopt(
        d,
        &["gen-data", "--kind", "rings", "--n", "0", "--seed", "0", "--out", "r.csv"],
    ));
    assert!(e["error"] == "config" || e["error"] == "contract");

    let out = scoreopt(d, &["gen-data", "--n", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"], "usage");
}
