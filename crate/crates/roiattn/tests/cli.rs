use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
# small enough to train in well under a second
channels = 8
reg_mid = 4
reg_out = 6
fc_hidden = 8
train_scenes = 2
val_scenes = 2
epochs = 1
warmup_steps = 1
";

fn roiattn(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roiattn"))
        .args(args)
        .env("ROIATTN_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.cfg");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_owned()
}

fn train_tiny(dir: &Path, name: &str, threads: &str) -> (Vec<u8>, Vec<u8>) {
    let cfg = tiny_config(dir);
    let out = dir.join(name);
    let o = roiattn(&["train", "--config", &cfg, "--out", out.to_str().unwrap()], threads);
    assert!(o.status.success(), "{}", text(&o.stderr));
    (fs::read(out.join("metrics.csv")).unwrap(), fs::read(out.join("checkpoint.ratn")).unwrap())
}

#[test]
fn help_lists_config_keys_with_defaults() {
    let o = roiattn(&["train", "--help"], "1");
    assert!(o.status.success());
    let help = text(&o.stdout);
    for needle in ["--config", "--lr", "--lr-decay-epochs", "--use-pos-encoding", "[default: 0.005]", "[default: 8,11]"] {
        assert!(help.contains(needle), "missing {needle} in\n{help}");
    }
    let o = roiattn(&["bench", "--help"], "1");
    assert!(text(&o.stdout).contains("[default: 2048]"));
}

#[test]
fn usage_errors_exit_2() {
    let o = roiattn(&["train", "--no-such-flag"], "1");
    assert_eq!(o.status.code(), Some(2));
    let o = roiattn(&["bench", "--smin", "4096", "--smax", "64"], "1");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_line_is_quoted_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.cfg");
    fs::write(&p, "d = 10\nlearning_rate = 0.1\n").unwrap();
    let o = roiattn(&["train", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], "1");
    assert_eq!(o.status.code(), Some(2));
    let err = text(&o.stderr);
    assert!(err.contains(":2:") && err.contains("learning_rate = 0.1"), "{err}");

    fs::write(&p, "d = ten\n").unwrap();
    let o = roiattn(&["ablate", "--config", p.to_str().unwrap()], "1");
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("d = ten"));
}

#[test]
fn missing_checkpoint_exits_3() {
    let o = roiattn(&["eval", "--checkpoint", "/nonexistent/model.ratn"], "1");
    assert_eq!(o.status.code(), Some(3));
    assert!(text(&o.stderr).contains("/nonexistent/model.ratn"));
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (metrics, ckpt) = train_tiny(dir.path(), "run", "1");
    let metrics = text(&metrics);
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch,loss,mAP,AP50,AP75");
    assert_eq!(lines.len(), 2);
    assert!(ckpt.starts_with(b"RATN1\n"));
    let cfg_text = fs::read_to_string(dir.path().join("run/config.cfg")).unwrap();
    assert!(cfg_text.contains("channels = 8"));

    let path = dir.path().join("run/checkpoint.ratn");
    let o = roiattn(&["eval", "--checkpoint", path.to_str().unwrap(), "--scenes", "3"], "2");
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows[0], "class,AP,AP50,AP75");
    assert_eq!(rows.len(), 6);
    assert!(rows[5].starts_with("mean,"));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let one = train_tiny(dir.path(), "one", "1");
    let three = train_tiny(dir.path(), "three", "3");
    assert_eq!(one, three);
}

#[test]
fn depth_ablation_covers_the_grid_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = roiattn(&["ablate", "--config", &cfg, "--kind", "depth", "--out", out.to_str().unwrap()], "0");
        assert!(o.status.success(), "{}", text(&o.stderr));
        fs::read_to_string(out.join("ablation.csv")).unwrap()
    };
    let a = run("a");
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "d,depth,AP,AP50,AP75,reference_AP");
    assert_eq!(lines.len(), 13);
    assert!(lines.iter().any(|l| l.starts_with("10,1,") && l.ends_with(",45.4")), "{a}");
    assert_eq!(a, run("b"));
}

#[test]
fn variant_ablation_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("v");
    let o = roiattn(
        &["ablate", "--config", &cfg, "--kind", "variants", "--seeds", "2", "--variants", "baseline,full", "--out", out.to_str().unwrap()],
        "0",
    );
    assert!(o.status.success(), "{}", text(&o.stderr));
    let per_seed = fs::read_to_string(out.join("variants.csv")).unwrap();
    assert_eq!(per_seed.lines().count(), 5);
    let summary = text(&o.stdout);
    assert!(summary.starts_with("variant,mean_AP,mean_AP50,mean_AP75,reference_AP"));
    assert!(summary.lines().any(|l| l.starts_with("baseline,")));

    let o = roiattn(&["ablate", "--config", &cfg, "--kind", "variants", "--variants", "nonsense"], "1");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_prints_one_row_per_size_and_mechanism() {
    let o = roiattn(&["bench", "--smin", "8", "--smax", "32", "--L", "16", "--d", "4", "--repeats", "1"], "1");
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "variant,s,L,d,median_us");
    assert_eq!(lines.len(), 1 + 2 * 3);
}

#[test]
fn dump_scenes_writes_images_and_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let o = roiattn(&["dump-scenes", "--out", dir.path().to_str().unwrap(), "--count", "2", "--seed", "4"], "1");
    assert!(o.status.success());
    let ppm = fs::read(dir.path().join("scene_0001.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n128 128\n255\n"));
    assert_eq!(ppm.len(), b"P6\n128 128\n255\n".len() + 128 * 128 * 3);
    let ann = fs::read_to_string(dir.path().join("scene_0000.txt")).unwrap();
    assert!(ann.lines().all(|l| l.split_whitespace().count() == 5));
}

#[test]
fn selftest_quick_passes() {
    let o = roiattn(&["selftest", "--quick", "--seed", "3"], "0");
    let out = text(&o.stdout);
    assert!(o.status.success(), "{out}");
    assert!(out.lines().last().unwrap().ends_with("0 failed"), "{out}");
    assert!(out.contains("gradients"));
}
