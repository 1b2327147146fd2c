use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn psyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psyn"))
        .args(args)
        .env("PSYN_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> PathBuf {
    let out = psyn(args);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{args:?}: {}{stdout}", String::from_utf8_lossy(&out.stderr));
    let dir = stdout
        .lines()
        .find_map(|l| l.strip_prefix("run directory: "))
        .expect("run directory line");
    PathBuf::from(dir)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_matches_golden_and_lists_every_key() {
    let out = psyn(&["--help"]);
    assert!(out.status.success());
    let help = String::from_utf8(out.stdout).unwrap();
    let golden = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/help.txt")).unwrap();
    assert_eq!(help, golden);
    let cfg = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/config.rs")).unwrap();
    let keys: Vec<&str> = cfg
        .lines()
        .filter_map(|l| l.trim().strip_prefix("(\"")?.split('"').next())
        .collect();
    assert!(keys.len() > 40);
    for k in keys {
        assert!(help.contains(&format!("  {k} ")), "--help misses {k}");
    }
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = psyn(&["--out", s(tmp.path()), "--set", "train.bogus=1", "bench"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[config]: "), "{err}");

    let cfg = tmp.path().join("bad.txt");
    fs::write(&cfg, "seed=1\nnot.a.key=2\n").unwrap();
    assert_eq!(psyn(&["--config", s(&cfg), "bench"]).status.code(), Some(2));
    assert_eq!(psyn(&["fixtures", "--n", "x"]).status.code(), Some(2));
    // nothing was written for rejected configs
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
}

#[test]
fn missing_paths_are_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = psyn(&["--out", s(tmp.path()), "train-p2n", "--data", s(&tmp.path().join("nope"))]);
    assert_eq!(out.status.code(), Some(3));
    let out = psyn(&["--out", s(tmp.path()), "eval-det", "--counts", s(&tmp.path().join("nope.csv"))]);
    assert_eq!(out.status.code(), Some(3));
    let out = psyn(&["--out", s(tmp.path()), "train-n2p"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_det_reports_published_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let counts = tmp.path().join("counts.csv");
    fs::write(&counts, "label,tp,fp,fn,tn\nbaseline,6047,1513,3978,0\nsynthetic,6555,1032,3470,0\n").unwrap();
    let run = ok(&["--out", s(tmp.path()), "eval-det", "--counts", s(&counts)]);
    let report = fs::read_to_string(run.join("report.txt")).unwrap();
    for (label, want) in [("baseline", [79.99, 60.32, 68.76]), ("synthetic", [86.39, 65.38, 74.43])] {
        let line = report.lines().find(|l| l.starts_with(label)).unwrap();
        let got: Vec<f64> = line.split_whitespace().skip(5).map(|v| v.parse().unwrap()).collect();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() <= 0.05, "{line}");
        }
        assert_eq!(got.len(), 3);
    }
    let cfg = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(cfg.contains(&format!("eval.counts={}\n", s(&counts))));
}

#[test]
fn sweep_and_segmentation_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = tmp.path().join("sweep.csv");
    fs::write(&sweep, "n_synthetic,tp,fp,fn,tn\n0,10,5,5,0\n100,14,2,1,0\n").unwrap();
    let run = ok(&["--out", s(tmp.path()), "sweep", "--input", s(&sweep)]);
    assert!(fs::read_to_string(run.join("sweep.csv")).unwrap().starts_with("n_synthetic,recall,precision,f1,saturation"));

    let fx = ok(&["--out", s(tmp.path()), "fixtures", "--n", "3", "--size", "32"]);
    let masks = fx.join("masks");
    let run = ok(&["--out", s(tmp.path()), "eval-seg", "--pred", s(&masks), "--gt", s(&masks)]);
    let report = fs::read_to_string(run.join("report.txt")).unwrap();
    assert!(report.contains("3 frames: mean Jaccard 1.0000, mean Dice 1.0000"), "{report}");
}

#[test]
fn bench_writes_latency_table() {
    let tmp = tempfile::tempdir().unwrap();
    let run = ok(&["--out", s(tmp.path()), "bench", "--sizes", "32", "--runs", "10", "--warmup", "1"]);
    let csv = fs::read_to_string(run.join("latency.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("32,1,10,"));
    assert_eq!(psyn(&["--out", s(tmp.path()), "bench", "--runs", "3"]).status.code(), Some(2));
}

#[test]
fn non_finite_loss_is_a_numeric_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = ok(&["--out", s(tmp.path()), "fixtures", "--n", "2", "--size", "32"]);
    let out = psyn(&[
        "--out",
        s(tmp.path()),
        "--set",
        "loss.lambda_reconst=1e300",
        "train-p2n",
        "--data",
        s(&fx),
        "--steps",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[numeric]: "));
}

fn checkpoint(run: &Path) -> PathBuf {
    let p = run.join("final.psyn");
    assert!(p.is_file(), "no checkpoint in {}", run.display());
    p
}

#[test]
fn fixtures_train_generate_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(tmp.path());
    let fx = ok(&["--out", out, "--seed", "3", "fixtures", "--n", "4", "--size", "32"]);
    assert!(fx.file_name().unwrap().to_str().unwrap().ends_with("_3"));
    assert_eq!(fs::read_dir(fx.join("images")).unwrap().count(), 4);

    let fast = ["--set", "train.critic_iters_per_gen=1"];
    let p2n = ok(&[&["--out", out], &fast[..], &["train-p2n", "--data", s(&fx), "--steps", "3"]].concat());
    let metrics = fs::read_to_string(p2n.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,task,critic_loss,gp,gen_adv,gen_l1,total\n"));
    assert_eq!(metrics.lines().count(), 4);
    let n2p = ok(&[&["--out", out], &fast[..], &["train-n2p", "--data", s(&fx), "--steps", "3"]].concat());

    // the archived config reproduces the run exactly
    let again = ok(&["--config", s(&p2n.join("config.txt")), "--out", out, "train-p2n"]);
    assert_eq!(fs::read(checkpoint(&again)).unwrap(), fs::read(checkpoint(&p2n)).unwrap());
    assert_eq!(fs::read(again.join("metrics.csv")).unwrap(), metrics.as_bytes());

    let gen = ok(&[
        "--out",
        out,
        "generate",
        "--data",
        s(&fx),
        "--p2n",
        s(&checkpoint(&p2n)),
        "--n2p",
        s(&checkpoint(&n2p)),
        "--count",
        "10",
        "--value",
        "131",
    ]);
    assert_eq!(fs::read_dir(gen.join("images")).unwrap().count(), 10);
    assert_eq!(fs::read_dir(gen.join("masks")).unwrap().count(), 10);
    let mut r = csv::Reader::from_path(gen.join("manifest.csv")).unwrap();
    let values: Vec<String> = r.records().map(|rec| rec.unwrap()[2].to_string()).collect();
    assert_eq!(values, vec!["131"; 10]);

    // swapped checkpoints are rejected
    let bad = psyn(&[
        "--out",
        out,
        "generate",
        "--data",
        s(&fx),
        "--p2n",
        s(&checkpoint(&n2p)),
        "--n2p",
        s(&checkpoint(&p2n)),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}
