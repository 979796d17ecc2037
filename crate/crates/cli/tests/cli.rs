use std::path::Path;
use std::process::{Command, Output};

fn trajfusion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajfusion")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn count_params_prints_the_totals() {
    let full = trajfusion(&["count-params", "--variant", "full"]);
    assert!(full.status.success(), "{}", stderr(&full));
    assert_eq!(stdout(&full).trim(), "58912991");
    let small = trajfusion(&["count-params", "--variant", "small"]);
    assert_eq!(stdout(&small).trim(), "5092135");
    // scenario 3 drops one input feature of the SAM embedding (6 -> 5 rows of a 128 wide map)
    let s3 = trajfusion(&["count-params", "--variant", "full", "--scenario", "3"]);
    assert_eq!(stdout(&s3).trim(), (58_912_991 - 128).to_string());
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        vec!["count-params", "--bogus"],
        vec!["train-stage", "--stage", "nope"],
        vec!["count-params", "--scenario", "7"],
        vec!["frobnicate"],
    ] {
        let o = trajfusion(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn runtime_errors_exit_one_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = trajfusion(&["bench", "--runs", "5", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least 10"), "{}", stderr(&o));

    let missing = dir.path().join("nowhere").join("model.json");
    let o = trajfusion(&["eval", "--out", out, "--manifest", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));

    let o = trajfusion(&["count-params", "--set", "seed=1"]);
    assert!(o.status.success(), "count-params ignores training overrides");
    let o = trajfusion(&["gen-data", "--out", out, "--set", "no.such.key=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no.such.key"), "{}", stderr(&o));
}

#[test]
fn gen_data_is_byte_identical_for_a_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    for (dir, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        let o = trajfusion(&["gen-data", "--tracks", "10", "--seed", seed, "--out", dir.path().to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let fa = files(a.path());
    assert!(fa.iter().any(|(n, _)| n == "tracks.tsv"));
    assert!(fa.iter().any(|(n, _)| n.ends_with(".ppm")), "frames written");
    assert_eq!(fa, files(b.path()));
    let tracks = |d: &tempfile::TempDir| std::fs::read(d.path().join("tracks.tsv")).unwrap();
    assert_ne!(tracks(&a), tracks(&c), "seed changes the data");
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let (data_s, run_s) = (data.to_str().unwrap(), run.to_str().unwrap());
    let o = trajfusion(&["gen-data", "--tracks", "40", "--seed", "5", "--no-frames", "--out", data_s]);
    assert!(o.status.success(), "{}", stderr(&o));

    let quick = [
        "--set", "trajpred.epochs=1", "--set", "sam.epochs=1", "--set", "van1.epochs=1",
        "--set", "fusion.epochs=1", "--set", "fusion.vam_proj_delay=0",
    ];
    let mut args = vec!["train", "--data", data_s, "--seed", "5", "--out", run_s];
    args.extend(quick);
    let o = trajfusion(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("trajectory: model"), "{}", stdout(&o));
    assert!(run.join("model.json").exists());

    let o = trajfusion(&["eval", "--data", data_s, "--seed", "5", "--out", run_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(run.join("eval_predictions.csv")).unwrap();
    let row = csv.lines().nth(1).expect("at least one test sample");
    let cols: Vec<&str> = row.split(',').collect();
    let sample = format!("{}:{}", cols[0], cols[1]);

    let o = trajfusion(&["predict", "--data", data_s, "--seed", "5", "--out", run_s, "--sample", &sample]);
    assert!(o.status.success(), "{}", stderr(&o));
    let printed = stdout(&o);
    assert!(printed.contains(&format!("probability {}", cols[3])), "{printed} vs {row}");
    assert!(printed.trim_end().ends_with(&format!("label {}", cols[4])), "{printed} vs {row}");

    let o = trajfusion(&["predict", "--data", data_s, "--out", run_s, "--sample", "no-colon"]);
    assert_eq!(o.status.code(), Some(1));
    let o = trajfusion(&["predict", "--data", data_s, "--out", run_s, "--sample", &format!("{}:-99", cols[0])]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no frame -99"), "{}", stderr(&o));
}
