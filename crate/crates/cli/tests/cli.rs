use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vesseldistill"));
    c.env_remove("VESSELDISTILL_DEVICE");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: &Output) {
    assert_eq!(code(o), 0, "stderr: {}", stderr(o));
    assert!(o.stderr.is_empty(), "stderr on success: {}", stderr(o));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// Small corpus: 6 parents of 128 px, cut into 64 px patches.
fn corpus(dir: &Path) -> PathBuf {
    let d = dir.join("data");
    ok(&run(&["gen-data", "--preset", "desk", "--n-images", "6", "--seed", "3", "--out", p(&d)]));
    d
}

const TINY: [&str; 8] = ["--preset", "tiny", "--epochs", "1", "--batch-size", "4", "--set", "projector_hidden=16"];

fn teacher(dir: &Path, data: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("teacher");
    let mut args = vec!["train-teacher", "--data", p(data), "--out", p(&out), "--preset", "tiny", "--epochs", "1"];
    args.extend_from_slice(extra);
    ok(&run(&args));
    out.join("ckpt").join("last.ckpt")
}

#[test]
fn gen_data_is_deterministic_and_guards_its_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = corpus(dir.path());
    let m1 = fs::read(d.join("manifest.json")).unwrap();
    let img = fs::read(d.join("images").join("img00002_r1c0.png")).unwrap();

    let again = run(&["gen-data", "--preset", "desk", "--n-images", "6", "--seed", "3", "--out", p(&d)]);
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("--force"), "{}", stderr(&again));

    ok(&run(&["gen-data", "--preset", "desk", "--n-images", "6", "--seed", "3", "--out", p(&d), "--force"]));
    assert_eq!(fs::read(d.join("manifest.json")).unwrap(), m1);
    assert_eq!(fs::read(d.join("images").join("img00002_r1c0.png")).unwrap(), img);
    let rm = manifest(&d.join("run_manifest.json"));
    assert_eq!(rm["subcommand"], "gen-data");
    assert_eq!(rm["exit_status"], 0);
    assert!(rm["resolved_config"].as_str().unwrap().contains("n_images = 6"));
    assert!(!d.join(".vesseldistill.lock").exists());
}

#[test]
fn missing_out_is_a_usage_error() {
    let o = run(&["gen-data", "--n-images", "2"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--out"));
    let o = run(&["train-scratch", "--out", "x"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--data"));
    let o = run(&["frobnicate"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn full_corpus_tiling_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("full");
    ok(&run(&["gen-data", "--n-images", "240", "--out", p(&d)]));
    let m = manifest(&d.join("manifest.json"));
    assert_eq!(m["n_parents"], 240);
    let samples = m["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 3840);
    let train = samples.iter().filter(|s| s["split"] == "train").count();
    assert_eq!(train, 3200);
}

#[test]
fn precedence_is_flags_then_file_then_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# desk run\nepochs = 3\nlr = 0.01\nseed = 4\n").unwrap();
    let o = run(&["train-scratch", "--config", p(&cfg), "--epochs", "1", "--print-config"]);
    ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("epochs = 1\n"), "{text}");
    assert!(text.contains("lr = 0.01\n"));
    assert!(text.contains("seed = 4\n"));
    assert!(text.contains("batch_size = 16\n"));
    assert!(text.contains("mode = scratch\n"));

    let o = run(&["distill", "--print-config"]);
    ok(&o);
    let defaults = String::from_utf8(o.stdout).unwrap();
    assert!(defaults.contains("mode = distill\n") && defaults.contains("lr = 0.001\n"), "{defaults}");
    let o = run(&["gen-data", "--print-config"]);
    ok(&o);
    assert!(String::from_utf8(o.stdout).unwrap().contains("n_images = 240"));
}

#[test]
fn config_errors_name_the_field_before_any_work() {
    let o = run(&["train-scratch", "--set", "lr=fast", "--data", "nowhere", "--out", "nowhere"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("field `lr`"), "{}", stderr(&o));
    assert!(!Path::new("nowhere").exists());
    let o = run(&["train-scratch", "--set", "mode=distill", "--print-config"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("field `mode`"));
    let o = run(&["train-scratch", "--set", "learning_rate=1", "--print-config"]);
    assert_eq!(code(&o), 2);
    let o = bin().env("VESSELDISTILL_DEVICE", "cuda:0").args(["distill", "--print-config"]).output().unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("VESSELDISTILL_DEVICE"));
    let o = bin().env("VESSELDISTILL_DEVICE", "cpu").args(["distill", "--print-config"]).output().unwrap();
    ok(&o);
}

#[test]
fn distill_requires_a_teacher_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = corpus(dir.path());
    let out = dir.path().join("s");
    let o = run(&["distill", "--data", p(&d), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--teacher-ckpt"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn bad_teacher_checkpoints_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = corpus(dir.path());
    let t = teacher(dir.path(), &d, &["--set", "tap_levels=1,2"]);

    let out = dir.path().join("mismatch");
    let mut args = vec!["distill", "--data", p(&d), "--out", p(&out), "--teacher-ckpt", p(&t)];
    args.extend_from_slice(&TINY);
    let o = run(&args);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("incompatible"), "{}", stderr(&o));
    let m = manifest(&out.join("run_manifest.json"));
    assert_eq!(m["exit_status"], 3);
    assert!(m["error"].as_str().unwrap().contains("taps"));

    let broken = dir.path().join("broken.ckpt");
    let bytes = fs::read(&t).unwrap();
    fs::write(&broken, &bytes[..bytes.len() / 2]).unwrap();
    let out = dir.path().join("corrupt");
    let mut args = vec!["distill", "--data", p(&d), "--out", p(&out), "--teacher-ckpt", p(&broken)];
    args.extend_from_slice(&TINY);
    let o = run(&args);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("corrupt"), "{}", stderr(&o));
    assert!(!out.join("train_log.csv").exists());
}

#[test]
fn locked_directories_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("busy");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".vesseldistill.lock"), "").unwrap();
    let o = run(&["gen-data", "--preset", "desk", "--n-images", "2", "--out", p(&out), "--force"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("locked"));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = corpus(dir.path());
    let t = teacher(dir.path(), &d, &[]);
    let run_dir = dir.path().join("student");
    let mut args = vec!["distill", "--data", p(&d), "--out", p(&run_dir), "--teacher-ckpt", p(&t)];
    args.extend_from_slice(&TINY);
    let o = run(&args);
    ok(&o);
    for f in ["config.txt", "train_log.csv", "ckpt/last.ckpt", "ckpt/best.ckpt", "run_manifest.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let m = manifest(&run_dir.join("run_manifest.json"));
    assert_eq!(m["exit_status"], 0);
    let resolved = m["resolved_config"].as_str().unwrap().to_string();
    assert_eq!(fs::read_to_string(run_dir.join("config.txt")).unwrap(), resolved);
    assert!(resolved.contains("epochs = 1\n") && resolved.contains("projector_hidden = 16\n"));
    assert!(m["started_at"].as_f64().unwrap() <= m["finished_at"].as_f64().unwrap());

    // the resolved config alone reproduces the run
    let cfg = dir.path().join("replay.cfg");
    fs::write(&cfg, &resolved).unwrap();
    let replay = dir.path().join("replay");
    ok(&run(&["distill", "--config", p(&cfg), "--data", p(&d), "--out", p(&replay), "--teacher-ckpt", p(&t)]));
    let strip = |path: &Path| -> Vec<String> {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip(&run_dir.join("train_log.csv")), strip(&replay.join("train_log.csv")));
    assert_eq!(fs::read(run_dir.join("ckpt/last.ckpt")).unwrap(), fs::read(replay.join("ckpt/last.ckpt")).unwrap());

    let best = run_dir.join("ckpt").join("best.ckpt");
    let o = run(&["eval", "--ckpt", p(&best), "--data", p(&d), "--overlays", "3"]);
    ok(&o);
    let csv = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "checkpoint,variant,mode,seed,config_hash,acc,se,auc,miou,f1,flops,params");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "student/best");
    assert_eq!(&row[1..3], ["student_mobile", "distill"]);
    for v in &row[5..] {
        assert!(v.parse::<f64>().is_ok(), "{csv}");
    }
    assert_eq!(fs::read_dir(run_dir.join("overlays")).unwrap().count(), 3);
    assert_eq!(manifest(&run_dir.join("eval_manifest.json"))["subcommand"], "eval");
    let o = run(&["eval", "--ckpt", p(&best), "--data", p(&d)]);
    assert_eq!(code(&o), 2);

    let teacher_dir = dir.path().join("teacher");
    ok(&run(&["eval", "--ckpt", p(&t), "--data", p(&d), "--overlays", "0"]));
    let report = dir.path().join("report");
    let o = run(&[
        "report",
        p(&run_dir.join("metrics.csv")),
        p(&teacher_dir.join("metrics.csv")),
        "--out",
        p(&report),
    ]);
    ok(&o);
    let md = fs::read_to_string(report.join("report.md")).unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), md);
    let teacher_row = md.find("| Teacher (teacher_sk_unet)").unwrap();
    let student_row = md.find("| student_mobile-ours").unwrap();
    assert!(teacher_row < student_row, "{md}");

    let o = run(&["report", p(&dir.path().join("missing.csv")), "--out", p(&dir.path().join("r2"))]);
    assert_eq!(code(&o), 3);
}
